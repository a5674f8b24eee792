//! Training objective: visibility-weighted KL keypoint loss on the
//! counterfactual prediction plus the consistency loss pulling stable
//! keypoints towards the (stop-gradient) observational prediction.

use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::model::{CoordNodes, InterventionMask};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("{coords} coordinates for {flags} visibility flags")]
    Length { coords: usize, flags: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Target distributions and visibility weights, rows laid out like the
/// embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthEncoding {
    pub qx: Tensor,
    pub qy: Tensor,
    pub weights: Vec<f64>,
    /// Coordinates that fell outside `[0, 1]` and were clamped.
    pub clamped: usize,
}

/// Discretised Gaussian over `bins` centred on the continuous bin position
/// of `coord`, normalised to sum 1.
pub fn gaussian_target(coord: f64, bins: usize, sigma_bins: f64) -> Vec<f64> {
    let centre = coord * bins as f64 - 0.5;
    let logits: Vec<f64> = (0..bins)
        .map(|i| {
            let d = i as f64 - centre;
            -d * d / (2.0 * sigma_bins * sigma_bins)
        })
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| libm::exp(l - top)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

pub fn encode_targets(
    coords: &[[f64; 2]],
    visibility: &[bool],
    sigma_bins: f64,
    bins_x: usize,
    bins_y: usize,
) -> Result<GroundTruthEncoding, ObjectiveError> {
    if !(sigma_bins > 0.0) {
        return Err(ObjectiveError::BadSigma(sigma_bins));
    }
    if coords.len() != visibility.len() {
        return Err(ObjectiveError::Length {
            coords: coords.len(),
            flags: visibility.len(),
        });
    }
    let rows = coords.len();
    let mut qx = Vec::with_capacity(rows * bins_x);
    let mut qy = Vec::with_capacity(rows * bins_y);
    let mut clamped = 0;
    for c in coords {
        let mut fix = |v: f64| {
            if (0.0..=1.0).contains(&v) {
                v
            } else {
                clamped += 1;
                if v.is_nan() { 0.5 } else { v.clamp(0.0, 1.0) }
            }
        };
        let (x, y) = (fix(c[0]), fix(c[1]));
        qx.extend(gaussian_target(x, bins_x, sigma_bins));
        qy.extend(gaussian_target(y, bins_y, sigma_bins));
    }
    Ok(GroundTruthEncoding {
        qx: Tensor::new(alloc::vec![rows, bins_x], qx).expect("sized"),
        qy: Tensor::new(alloc::vec![rows, bins_y], qy).expect("sized"),
        weights: visibility.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect(),
        clamped,
    })
}

fn column(values: &[f64]) -> Tensor {
    Tensor::new(alloc::vec![values.len(), 1], values.to_vec()).expect("column")
}

/// `(1/B) Σ_b Σ_k w_{b,k} [KL(Qx‖Px) + KL(Qy‖Py)]`.
pub fn keypoint_loss(
    g: &mut Graph,
    gt: &GroundTruthEncoding,
    pred: CoordNodes,
    batch: usize,
) -> Result<NodeId, GraphError> {
    let qx = g.constant(gt.qx.clone());
    let qy = g.constant(gt.qy.clone());
    let kx = g.kl_rows(qx, pred.px)?;
    let ky = g.kl_rows(qy, pred.py)?;
    let per = g.add(kx, ky)?;
    let w = g.constant(column(&gt.weights));
    let weighted = g.mul(per, w)?;
    let total = g.sum(weighted)?;
    g.scale(total, 1.0 / batch.max(1) as f64)
}

/// `(1/|S|) Σ_{(b,k) ∈ S} KL(sg[P_obs] ‖ P_cf)` over both axes, with `S`
/// the complement of the mask across the whole batch; zero when `S` is
/// empty.
pub fn consistency_loss(
    g: &mut Graph,
    obs: CoordNodes,
    cf: CoordNodes,
    mask: &InterventionMask,
) -> Result<NodeId, GraphError> {
    let tx = g.stop_gradient(obs.px)?;
    let ty = g.stop_gradient(obs.py)?;
    let kx = g.kl_rows(tx, cf.px)?;
    let ky = g.kl_rows(ty, cf.py)?;
    let per = g.add(kx, ky)?;
    let stable: Vec<f64> = mask
        .selected
        .iter()
        .map(|s| if *s { 0.0 } else { 1.0 })
        .collect();
    let n_stable = stable.iter().sum::<f64>();
    let w = g.constant(column(&stable));
    let weighted = g.mul(per, w)?;
    let total = g.sum(weighted)?;
    let scale = if n_stable > 0.0 { 1.0 / n_stable } else { 0.0 };
    g.scale(total, scale)
}

/// `l_kpt + lambda * l_cf`.
pub fn total_loss(
    g: &mut Graph,
    l_kpt: NodeId,
    l_cf: NodeId,
    lambda: f64,
) -> Result<NodeId, ObjectiveError> {
    if !(lambda >= 0.0) {
        return Err(ObjectiveError::NegativeLambda(lambda));
    }
    let weighted = g.scale(l_cf, lambda)?;
    Ok(g.add(l_kpt, weighted)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Strategy;
    use alloc::vec;

    fn nodes(g: &mut Graph, px: Tensor, py: Tensor) -> CoordNodes {
        CoordNodes {
            px: g.leaf(px.with_grad()),
            py: g.leaf(py.with_grad()),
        }
    }

    #[test]
    fn gaussian_targets() {
        for sigma in [0.1, 1.0, 3.0, 50.0] {
            for coord in [0.0, 0.13, 0.5, 0.99, 1.0] {
                let q = gaussian_target(coord, 32, sigma);
                assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let q = gaussian_target(0.3, 32, 1e-4);
        assert_eq!(q[9], 1.0);
        let q = gaussian_target(0.5, 32, 2.0);
        for i in 0..16 {
            assert!((q[i] - q[31 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_coords_are_clamped() {
        let gt = encode_targets(&[[1.3, 0.5], [0.2, -0.1]], &[true, false], 1.0, 8, 8).unwrap();
        assert_eq!(gt.clamped, 2);
        assert_eq!(gt.weights, vec![1.0, 0.0]);
        assert!(encode_targets(&[[0.5, 0.5]], &[true], 0.0, 8, 8).is_err());
    }

    #[test]
    fn keypoint_loss_values() {
        let mut q = vec![0.0; 32];
        q[4] = 1.0;
        let gt = GroundTruthEncoding {
            qx: Tensor::new(vec![1, 32], q.clone()).unwrap(),
            qy: Tensor::new(vec![1, 32], q.clone()).unwrap(),
            weights: vec![1.0],
            clamped: 0,
        };
        let mut g = Graph::new();
        let p = nodes(&mut g, Tensor::filled(&[1, 32], 1.0 / 32.0), Tensor::filled(&[1, 32], 1.0 / 32.0));
        let l = keypoint_loss(&mut g, &gt, p, 1).unwrap();
        assert!((g.value(l).item() - 2.0 * libm::log(32.0)).abs() < 1e-12);

        let same = nodes(&mut g, gt.qx.clone(), gt.qy.clone());
        let l = keypoint_loss(&mut g, &gt, same, 1).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let hidden = GroundTruthEncoding {
            weights: vec![0.0],
            ..gt
        };
        let l = keypoint_loss(&mut g, &hidden, p, 1).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    fn rand_rows(rows: usize, bins: usize, salt: f64) -> Tensor {
        let mut t = Tensor::zeros(&[rows, bins]);
        for r in 0..rows {
            let row = t.row_mut(r);
            for (i, v) in row.iter_mut().enumerate() {
                *v = 1.0 + libm::sin(salt + (r * bins + i) as f64 * 1.7).abs();
            }
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= z);
        }
        t
    }

    fn mask(selected: Vec<bool>) -> InterventionMask {
        InterventionMask {
            batch: 1,
            k: selected.len(),
            selected,
            strategy: Strategy::TopN(1),
        }
    }

    #[test]
    fn consistency_loss_properties() {
        let mut g = Graph::new();
        let obs = nodes(&mut g, rand_rows(3, 6, 0.1), rand_rows(3, 6, 0.2));
        let cf = nodes(&mut g, rand_rows(3, 6, 0.3), rand_rows(3, 6, 0.4));
        let self_loss = consistency_loss(&mut g, obs, obs, &mask(vec![false, true, false])).unwrap();
        assert_eq!(g.value(self_loss).item(), 0.0);

        let all = consistency_loss(&mut g, obs, cf, &mask(vec![true; 3])).unwrap();
        assert_eq!(g.value(all).item(), 0.0);

        let m = mask(vec![false, true, false]);
        let l = consistency_loss(&mut g, obs, cf, &m).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(obs.px).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(grads.get(obs.py).unwrap().data().iter().all(|v| *v == 0.0));
        // intervened row gets no gradient from the consistency term
        assert!(grads.get(cf.px).unwrap().row(1).iter().all(|v| *v == 0.0));
        assert!(grads.get(cf.px).unwrap().row(0).iter().any(|v| *v != 0.0));

        // perturbing the intervened row leaves the value unchanged
        let before = g.value(l).item();
        let mut g2 = Graph::new();
        let obs2 = nodes(&mut g2, rand_rows(3, 6, 0.1), rand_rows(3, 6, 0.2));
        let mut px = rand_rows(3, 6, 0.3);
        px.row_mut(1).copy_from_slice(&[0.5, 0.1, 0.1, 0.1, 0.1, 0.1]);
        let cf2 = nodes(&mut g2, px, rand_rows(3, 6, 0.4));
        let l2 = consistency_loss(&mut g2, obs2, cf2, &m).unwrap();
        assert_eq!(g2.value(l2).item(), before);
    }

    #[test]
    fn total_loss_weighting() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1.5));
        let b = g.constant(Tensor::scalar(4.0));
        let t = total_loss(&mut g, a, b, 0.0).unwrap();
        assert_eq!(g.value(t).item(), 1.5);
        let t = total_loss(&mut g, a, b, 0.1).unwrap();
        assert!((g.value(t).item() - 1.9).abs() < 1e-15);
        assert_eq!(
            total_loss(&mut g, a, b, -1.0),
            Err(ObjectiveError::NegativeLambda(-1.0))
        );
    }
}
