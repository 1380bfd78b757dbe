//! Finite-difference validation of analytic gradients.
//!
//! [`grad_check`] runs a scalar-valued tensor function twice per input
//! element (central differences) and compares the numeric slope against
//! the gradient produced by [`Tape::backward`]. It is the ground truth
//! the rest of the crate's backward rules are judged against, so it is
//! deliberately simple: no caching, no sampling — every element of every
//! input is perturbed.
//!
//! Runs are meaningful only in 64-bit precision; at 32 bits the
//! subtraction `f(x+h) − f(x−h)` loses most of its significant digits.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Denominator floor for the relative-error quotient.
///
/// `rel = |analytic − numeric| / max(|analytic|, |numeric|, FLOOR)`.
/// Central differences carry roundoff noise of roughly `eps·|f| / h`
/// (about 1e-10 for unit-scale losses at the default step), which would
/// dominate the quotient for near-zero gradients. The floor turns the
/// comparison into an absolute one below 1e-4 gradient magnitude: an
/// error must still shrink below `tolerance · FLOOR` there, well above
/// the noise but far below any genuinely wrong backward rule.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Default perturbation step for central differences.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Comparison outcome for one named input tensor.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub elements: usize,
}

/// Full gradient-check outcome, one entry per input in call order.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    /// True when every group is within tolerance.
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err < self.tolerance)
    }

    /// Largest relative error across all groups (0 for no groups).
    pub fn worst(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.max_rel_err))
    }
}

/// Compares analytic gradients of `f` against central finite differences
/// for every element of every input.
///
/// `f` must be deterministic and must produce a single-element tensor.
/// It is re-evaluated `2·numel + 1` times; inputs are temporarily
/// flagged `requires_grad` for the analytic pass and restored afterward.
pub fn grad_check<F>(
    f: &F,
    inputs: &[(String, Tensor<f64>)],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if step <= 0.0 {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let tensors: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let saved_flags: Vec<bool> = tensors.iter().map(|t| t.requires_grad()).collect();

    // Analytic pass.
    for t in &tensors {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    let tape = Tape::new();
    for t in &tensors {
        tape.watch(t);
    }
    let loss = f(&tape, &tensors)?;
    if loss.numel() != 1 {
        restore_flags(&tensors, &saved_flags);
        return Err(Error::contract(format!(
            "grad_check: f must return a single element, got shape {}",
            loss.shape()
        )));
    }
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = tensors
        .iter()
        .map(|t| t.grad().expect("watched leaf has a gradient"))
        .collect();
    drop(tape);

    // Numeric passes. Recording is pointless here, so drop the grad
    // flags to keep the perturbation sweep on the cheap forward path.
    for t in &tensors {
        t.set_requires_grad(false);
    }
    let mut groups = Vec::with_capacity(inputs.len());
    for (gi, (name, t)) in inputs.iter().enumerate() {
        let n = t.numel();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for j in 0..n {
            let x0 = t.map_data_mut(|d| d[j]);
            t.map_data_mut(|d| d[j] = x0 + step);
            let f_plus = eval_scalar(f, &tensors)?;
            t.map_data_mut(|d| d[j] = x0 - step);
            let f_minus = eval_scalar(f, &tensors)?;
            t.map_data_mut(|d| d[j] = x0);
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[gi][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        groups.push(GroupReport {
            name: name.clone(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            elements: n,
        });
    }
    restore_flags(&tensors, &saved_flags);
    Ok(GradCheckReport { groups, tolerance })
}

fn eval_scalar<F>(f: &F, tensors: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let tape = Tape::new();
    f(&tape, tensors)?.item()
}

fn restore_flags(tensors: &[Tensor<f64>], flags: &[bool]) {
    for (t, &flag) in tensors.iter().zip(flags) {
        t.set_requires_grad(flag);
    }
}
