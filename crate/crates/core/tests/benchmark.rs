use deconf_core::synth::{
    generate_dataset, generate_sample, mutual_information, tv_distance, BenchConfig, CorrelationMode, Split,
    World,
};

fn bench(rho: f64, n: usize) -> BenchConfig {
    BenchConfig {
        confound_strength: rho,
        n_train: n,
        n_test: n,
        ..BenchConfig::default()
    }
}

fn labels(config: &BenchConfig) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
    let (train, test) = generate_dataset(config, 8).unwrap();
    (
        train.iter().map(|s| s.context_id).collect(),
        train.iter().map(|s| s.pose_cluster).collect(),
        test.iter().map(|s| s.context_id).collect(),
        test.iter().map(|s| s.pose_cluster).collect(),
    )
}

#[test]
fn no_confounding_means_no_dependence() {
    let (c, p, _, _) = labels(&bench(0.0, 10_000));
    assert!(mutual_information(&c, &p) < 0.01);
}

#[test]
fn dependence_grows_with_confound_strength() {
    let mi: Vec<f64> = [0.0, 0.5, 0.9]
        .iter()
        .map(|&rho| {
            let (c, p, _, _) = labels(&bench(rho, 10_000));
            mutual_information(&c, &p)
        })
        .collect();
    assert!(mi[1] > 0.0 && mi[1] > mi[0] && mi[2] > mi[1], "{mi:?}");
}

#[test]
fn decorrelated_test_split_keeps_marginals_and_breaks_coupling() {
    let (tc, tp, ec, ep) = labels(&bench(0.8, 10_000));
    assert!(tv_distance(&tc, &ec) < 0.03);
    assert!(tv_distance(&tp, &ep) < 0.03);
    let joint = |c: &[usize], p: &[usize]| c.iter().zip(p).map(|(a, b)| a * 16 + b).collect::<Vec<_>>();
    assert!(tv_distance(&joint(&tc, &tp), &joint(&ec, &ep)) > 0.3);
    assert!(mutual_information(&ec, &ep) < 0.01);
}

#[test]
fn samples_depend_only_on_seed_split_and_index() {
    let c = BenchConfig::default();
    let w = World::new(8, c.n_contexts, c.world_seed).unwrap();
    let a = generate_sample(&w, &c, Split::Test, 17);
    let b = generate_sample(&w, &c, Split::Test, 17);
    assert_eq!(a, b);
    assert_ne!(a, generate_sample(&w, &c, Split::Train, 17));
    let other = BenchConfig { seed: 1, ..c.clone() };
    assert_ne!(a, generate_sample(&w, &other, Split::Test, 17));
    assert_eq!(c.test_mode, CorrelationMode::Decorrelated);
}

#[test]
fn occluded_blocks_carry_the_context_decoy() {
    let c = BenchConfig {
        noise_sigma: 0.0,
        occlusion_rate: 0.5,
        ..BenchConfig::default()
    };
    let w = World::new(8, c.n_contexts, c.world_seed).unwrap();
    for i in 0..50 {
        let s = generate_sample(&w, &c, Split::Train, i);
        for k in 0..8 {
            let block = &s.features[4 * k..4 * k + 4];
            if s.occluded[k] {
                let decoy: Vec<f64> = w.decoys[s.context_id].iter().map(|v| v * c.decoy_strength).collect();
                assert_eq!(block, decoy.as_slice());
            } else {
                let [x, y] = s.gt_coords[k];
                assert_eq!(block, &[x, y, 1.0 - x, 1.0 - y]);
            }
        }
        assert_eq!(&s.features[32..], w.signatures[s.context_id].as_slice());
    }
}
