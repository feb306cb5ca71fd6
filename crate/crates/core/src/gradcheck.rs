//! Central finite-difference checking of analytic gradients.
//!
//! The numeric side only ever evaluates forward passes, so it is independent
//! of the backward implementation it checks.

use crate::error::Result;
use crate::tensor::{Graph, NodeId, Tensor};

/// Denominator floor for relative errors; below it the comparison is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over every checked element.
    pub max_rel_err: f64,
    /// `(input, element, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn eval(build: &impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId>, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    Ok(g.value(out).item())
}

/// Compares `backward` against central differences with step `h` for every
/// element of every input. `build` must return a single-element node.
pub fn check(
    inputs: &[Tensor],
    h: f64,
    build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(id, t)| grads.get(*id).map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec()))
        .collect();
    compare(inputs, h, &analytic, |xs| eval(&build, xs))
}

/// Like [`check`] for functions that compute their own gradient: `f`
/// returns the scalar value and one gradient per input. Only the value is
/// used on the numeric side.
pub fn check_fn(
    inputs: &[Tensor],
    h: f64,
    f: impl Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
) -> Result<GradCheckReport> {
    let (_, grads) = f(inputs)?;
    let analytic: Vec<Vec<f64>> = grads.into_iter().map(Tensor::into_data).collect();
    compare(inputs, h, &analytic, |xs| f(xs).map(|(v, _)| v))
}

fn compare(
    inputs: &[Tensor],
    h: f64,
    analytic: &[Vec<f64>],
    value: impl Fn(&[Tensor]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = value(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = value(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_err(analytic[k][i], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((k, i, analytic[k][i], numeric));
            }
        }
    }
    Ok(report)
}

/// Reduces any node to a scalar through a fixed pseudo-random projection, so
/// every output element contributes a distinct weight to the gradient.
pub fn project(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let v = g.value(x);
    let weights: Vec<f64> = (0..v.len())
        .map(|i| ((i as f64 + 1.0) * 0.7548776662).fract() - 0.5 + 1e-2)
        .collect();
    let w = g.input(Tensor::new(v.shape().to_vec(), weights)?);
    let prod = g.mul(x, w)?;
    Ok(g.sum(prod))
}
