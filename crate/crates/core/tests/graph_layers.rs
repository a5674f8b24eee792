use deconf_core::model::{
    counterfactual_replace, inter_part_attention, intra_part_edgeconv, InterventionMask, ModelConfig,
    Params, Strategy, Topology,
};
use deconf_core::skeleton::SkeletonSpec;
use deconf_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(k: usize, d: usize) -> ModelConfig {
    ModelConfig {
        k,
        d_in: 4,
        hidden: 4,
        d_emb: d,
        bins_x: 6,
        bins_y: 6,
        strategy: Strategy::TopN(1),
    }
}

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Both graph layers applied to `[B*K, d]` rows.
fn layers(spec: &SkeletonSpec, params: &Params<Tensor>, f: &Tensor, batch: usize) -> Tensor {
    let topo = Topology::new(spec, batch);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let x = g.constant(f.clone());
    let h = intra_part_edgeconv(&mut g, x, &topo, &p).unwrap();
    let out = inter_part_attention(&mut g, h, &topo, &p).unwrap();
    g.value(out).clone()
}

#[test]
fn layers_are_equivariant_to_keypoint_relabelling() {
    let spec = SkeletonSpec::toy();
    let (k, d, batch) = (spec.k(), 6, 3);
    let params = Params::init(&config(k, d), 11);
    let f = random(batch * k, d, 5);
    let base = layers(&spec, &params, &f, batch);

    let perms: [[usize; 8]; 3] = [
        [7, 6, 5, 4, 3, 2, 1, 0],
        [1, 0, 3, 2, 5, 4, 7, 6],
        [3, 5, 0, 7, 1, 6, 2, 4],
    ];
    for perm in perms {
        let permuted = spec.permute(&perm).unwrap();
        let mut pf = Tensor::zeros(&[batch * k, d]);
        for b in 0..batch {
            for i in 0..k {
                pf.row_mut(b * k + perm[i]).copy_from_slice(f.row(b * k + i));
            }
        }
        let out = layers(&permuted, &params, &pf, batch);
        for b in 0..batch {
            for i in 0..k {
                let (x, y) = (base.row(b * k + i), out.row(b * k + perm[i]));
                for (u, v) in x.iter().zip(y) {
                    assert!((u - v).abs() < 1e-12, "perm {perm:?} row {b},{i}: {u} vs {v}");
                }
            }
        }
    }
}

#[test]
fn instances_do_not_interact() {
    let spec = SkeletonSpec::toy();
    let (k, d) = (spec.k(), 5);
    let params = Params::init(&config(k, d), 2);
    let f = random(2 * k, d, 9);
    let both = layers(&spec, &params, &f, 2);
    let mut changed = f.clone();
    for r in k..2 * k {
        changed.row_mut(r).iter_mut().for_each(|v| *v = -3.0 * *v + 0.5);
    }
    let out = layers(&spec, &params, &changed, 2);
    for r in 0..k {
        assert_eq!(both.row(r), out.row(r));
    }
}

#[test]
fn replacement_matches_loop_oracle() {
    let spec = SkeletonSpec::toy();
    let (k, d, batch) = (spec.k(), 4, 5);
    let topo = Topology::new(&spec, batch);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let f = random(batch * k, d, trial);
        let z = random(k, d, 100 + trial);
        let selected: Vec<bool> = (0..batch * k).map(|_| rng.random_bool(0.4)).collect();
        let mask = InterventionMask {
            batch,
            k,
            selected: selected.clone(),
            strategy: Strategy::Threshold(0.5),
        };
        let mut g = Graph::new();
        let fnode = g.constant(f.clone());
        let znode = g.constant(z.clone());
        let out = counterfactual_replace(&mut g, fnode, &mask, znode, &topo).unwrap();
        let out = g.value(out);
        for b in 0..batch {
            for kk in 0..k {
                let want = if selected[b * k + kk] { z.row(kk) } else { f.row(b * k + kk) };
                assert_eq!(out.row(b * k + kk), want);
            }
        }
    }
}
