use alloc::vec::Vec;

use super::{Graph, NodeId, Tensor};
use crate::error::{bail, Result};

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic - numeric| / (|analytic| + 1e-8) over checked coordinates.
    pub max_rel_error: f64,
    /// Largest absolute discrepancy seen.
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of a scalar loss with central finite
/// differences over every coordinate of every tensor in `params`.
///
/// `build` receives a fresh graph and the parameter node ids (in the order of
/// `params`) and returns the loss node.
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    grad_check_coords(build, params, h, None)
}

/// As [`grad_check`], restricted to `coords` (pairs of tensor index and flat
/// element index) when given.
pub fn grad_check_coords<F>(
    build: F,
    params: &[Tensor],
    h: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if h <= 0.0 {
        bail!(Contract, "finite-difference step must be positive, got {}", h);
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|id| grads.get_or_zeros(*id)).collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = params
                .iter()
                .enumerate()
                .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
                .collect();
            &all
        }
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    for &(t, i) in coords {
        let orig = work[t].data()[i];
        work[t].data_mut()[i] = orig + h;
        let up = eval(&work)?;
        work[t].data_mut()[i] = orig - h;
        let down = eval(&work)?;
        work[t].data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[t][i];
        let abs = (a - numeric).abs();
        let rel = abs / (a.abs() + 1e-8);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.coordinates += 1;
    }
    Ok(report)
}
