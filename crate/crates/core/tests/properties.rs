use deconf_core::model::{confounder_scores, select_intervention, CoordDistributions, Strategy as Pick};
use deconf_core::objective::gaussian_target;
use deconf_core::synth::{enrichment, quantile, rank_sum, InstanceErrors};
use deconf_core::{Graph, Tensor};
use proptest::prelude::*;

fn scores(batch: usize, k: usize) -> impl Strategy<Value = Vec<f64>> {
    // a small value set forces ties
    prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.5, 0.75, 0.9]), batch * k)
}

proptest! {
    #[test]
    fn top_n_picks_exactly_n_highest(
        (batch, k, n, s) in (1usize..5, 1usize..9)
            .prop_flat_map(|(b, k)| (Just(b), Just(k), 0..=k, scores(b, k)))
    ) {
        let m = select_intervention(&s, batch, k, Pick::TopN(n)).unwrap();
        for b in 0..batch {
            prop_assert_eq!(m.count_in(b), n);
            let row = &s[b * k..(b + 1) * k];
            for i in 0..k {
                for j in 0..k {
                    if m.is_selected(b, i) && !m.is_selected(b, j) {
                        // selected beats unselected, or ties and has the lower index
                        prop_assert!(row[i] > row[j] || (row[i] == row[j] && i < j));
                    }
                }
            }
        }
    }

    #[test]
    fn threshold_is_set_comprehension(
        (batch, k, s) in (1usize..5, 1usize..9).prop_flat_map(|(b, k)| (Just(b), Just(k), scores(b, k))),
        tau in prop::sample::select(vec![0.0, 0.25, 0.5, 0.7, 0.8, 1.0]),
    ) {
        let m = select_intervention(&s, batch, k, Pick::Threshold(tau)).unwrap();
        let want: Vec<bool> = s.iter().map(|v| *v > tau).collect();
        prop_assert_eq!(m.selected, want);
    }

    #[test]
    fn scores_stay_in_range(rows in 1usize..6, bins in 2usize..12, seed in any::<u64>()) {
        let mut g = Graph::new();
        let mut t = Tensor::zeros(&[rows, bins]);
        let mut x = seed;
        for v in t.data_mut() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((x >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 40.0;
        }
        let logits = g.constant(t);
        let p = g.softmax(logits).unwrap();
        let p = g.value(p).clone();
        for r in 0..rows {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let s = confounder_scores(&CoordDistributions { px: p.clone(), py: p });
        let top = 1.0 - 1.0 / bins as f64;
        for v in s {
            prop_assert!((0.0..=top + 1e-12).contains(&v));
        }
    }

    #[test]
    fn kl_is_non_negative(a in prop::collection::vec(-5.0f64..5.0, 12), b in prop::collection::vec(-5.0f64..5.0, 12)) {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![3, 4], a).unwrap());
        let p = g.constant(Tensor::new(vec![3, 4], b).unwrap());
        let q = g.softmax(q).unwrap();
        let p = g.softmax(p).unwrap();
        let kl = g.kl_rows(q, p).unwrap();
        prop_assert!(g.value(kl).data().iter().all(|v| *v >= -1e-15));
        let same = g.kl_rows(q, q).unwrap();
        prop_assert!(g.value(same).data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gaussian_targets_are_distributions(coord in 0.0f64..=1.0, bins in 1usize..64, sigma in 0.05f64..20.0) {
        let q = gaussian_target(coord, bins, sigma);
        prop_assert_eq!(q.len(), bins);
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(q.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn rank_sum_is_antisymmetric(
        a in prop::collection::vec(0.0f64..1.0, 1..30),
        b in prop::collection::vec(0.0f64..1.0, 1..30),
    ) {
        let ab = rank_sum(&a, &b).unwrap();
        let ba = rank_sum(&b, &a).unwrap();
        prop_assert!((ab.z + ba.z).abs() < 1e-9);
        prop_assert!((ab.u + ba.u - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
    }

    #[test]
    fn quantile_is_monotone(mut v in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        v.sort_by(f64::total_cmp);
        let qs: Vec<f64> = (0..=10).map(|i| quantile(&v, i as f64 / 10.0)).collect();
        prop_assert_eq!(qs[0], v[0]);
        prop_assert_eq!(qs[10], *v.last().unwrap());
        prop_assert!(qs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn enrichment_ci_contains_mean(
        inst in prop::collection::vec(
            (prop::collection::vec(0.0f64..1.0, 6), prop::collection::vec(0.0f64..1.0, 6)),
            1..30,
        ),
        n in 1usize..4,
        p in prop::sample::select(vec![0.0, 0.1, 0.5]),
    ) {
        let instances: Vec<InstanceErrors> = inst
            .into_iter()
            .map(|(errors, scores)| InstanceErrors { errors, scores, visible: vec![true; 6] })
            .collect();
        let r = enrichment(&instances, n, p, 1);
        prop_assert!(r.ci_low <= r.mean_delta && r.mean_delta <= r.ci_high);
        prop_assert_eq!(r.kept + r.excluded <= instances.len(), true);
    }
}
