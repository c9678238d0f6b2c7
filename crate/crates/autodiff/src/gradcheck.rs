//! Central finite-difference verification of tape gradients.
//!
//! The error for one entry is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
//! The floor keeps entries whose true gradient is (near) zero from reporting
//! pure round-off as a large relative error; with `floor = 0` the measure is
//! the plain relative error.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-6,
            floor: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputReport {
    pub index: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst entry.
    pub worst_entry: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

/// Relative error with a denominator floor, as used by [`grad_check`].
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    let diff = (analytic - numeric).abs();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    f(&g, &vars)?.item()
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences for every entry of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    grad_check_with(
        f,
        inputs,
        GradCheckOptions {
            step,
            tolerance,
            ..GradCheckOptions::default()
        },
    )
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    if !(opts.step > 0.0) {
        return Err(Error::Argument(format!("step must be > 0, got {}", opts.step)));
    }
    if let Some(bad) = inputs.iter().position(|t| !t.all_finite()) {
        return Err(Error::Argument(format!("input {bad} has non-finite entries")));
    }

    let analytic: Vec<Tensor> = {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&g, &vars)?;
        let grads = g.backward(out)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let first = evaluate(&f, inputs)?;
    let second = evaluate(&f, inputs)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (index, grad) in analytic.iter().enumerate() {
        let mut report = InputReport {
            index,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_entry: 0,
            passed: true,
        };
        for e in 0..grad.len() {
            let orig = work[index].data()[e];
            work[index].data_mut()[e] = orig + opts.step;
            let plus = evaluate(&f, &work)?;
            work[index].data_mut()[e] = orig - opts.step;
            let minus = evaluate(&f, &work)?;
            work[index].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.data()[e];
            let rel = relative_error(a, numeric, opts.floor);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_entry = e;
            }
        }
        report.passed = report.max_rel_error < opts.tolerance;
        reports.push(report);
    }
    Ok(GradCheckReport {
        inputs: reports,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn non_deterministic_function_is_detected() {
        let calls = Cell::new(0u32);
        let err = grad_check(
            |g, v| {
                calls.set(calls.get() + 1);
                let bump = g.constant(Tensor::scalar(f64::from(calls.get())));
                v[0].sum().add(bump)
            },
            &[Tensor::ones(&[2])],
            1e-6,
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-2) - 1e-7).abs() < 1e-20);
    }
}
