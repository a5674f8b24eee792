//! Central finite-difference verification of [`Graph::backward`].

use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradCheckError {
    #[error("finite-difference step {0} outside (0, 1e-2]")]
    BadStep(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all parameter tensors.
    pub max_rel_error: f64,
    /// Relative error `|a - d| / max(|a|, |d|, 1e-8)` per parameter tensor,
    /// with `|.|` the Euclidean norm over the tensor.
    pub per_param: Vec<f64>,
    /// Coordinates whose probe crossed a relu kink, max switch or mask flip
    /// and were retried with a smaller step.
    pub refined: usize,
    /// Coordinates where no step up to 1e-3 of the original avoided a branch
    /// change.
    pub unresolved: usize,
}

const MAX_REFINE: usize = 3;

/// Compares the analytic gradient of a scalar function against central
/// differences.
///
/// `build` records the function on a fresh graph given one leaf per entry of
/// `point` and returns the scalar output node. It is re-invoked for every
/// probe so data-dependent choices (masks, max winners) are recomputed.
pub fn grad_check<F>(
    mut build: F,
    point: &[Tensor],
    step: f64,
) -> Result<GradCheckReport, GradCheckError>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId, GraphError>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(GradCheckError::BadStep(step));
    }

    let mut run = |params: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId), GraphError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params
            .iter()
            .map(|p| g.leaf(p.clone().with_grad()))
            .collect();
        let out = build(&mut g, &ids)?;
        g.check_finite()?;
        Ok((g, ids, out))
    };

    let (graph, ids, out) = run(point)?;
    let grads = graph.backward(out)?;
    let base_sig = graph.branch_signature();
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| grads.get(id).cloned().expect("leaf gradient"))
        .collect();

    let mut work: Vec<Tensor> = point.to_vec();
    let mut per_param = Vec::with_capacity(point.len());
    let (mut refined, mut unresolved) = (0, 0);

    for p in 0..point.len() {
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut d_sq = 0.0;
        for e in 0..point[p].len() {
            let orig = point[p].data()[e];
            let mut h = step;
            let mut estimate = 0.0;
            let mut smooth = false;
            for attempt in 0..=MAX_REFINE {
                work[p].data_mut()[e] = orig + h;
                let (gp, _, op) = run(&work)?;
                work[p].data_mut()[e] = orig - h;
                let (gm, _, om) = run(&work)?;
                estimate = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
                if gp.branch_signature() == base_sig && gm.branch_signature() == base_sig {
                    smooth = true;
                    break;
                }
                if attempt == 0 {
                    refined += 1;
                }
                h /= 10.0;
            }
            if !smooth {
                unresolved += 1;
            }
            work[p].data_mut()[e] = orig;

            let a = analytic[p].data()[e];
            diff_sq += (a - estimate) * (a - estimate);
            a_sq += a * a;
            d_sq += estimate * estimate;
        }
        let denom = libm::sqrt(a_sq).max(libm::sqrt(d_sq)).max(1e-8);
        per_param.push(libm::sqrt(diff_sq) / denom);
    }

    Ok(GradCheckReport {
        max_rel_error: per_param.iter().copied().fold(0.0, f64::max),
        per_param,
        refined,
        unresolved,
    })
}
