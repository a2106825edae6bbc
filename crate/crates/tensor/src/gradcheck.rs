//! Central finite-difference verification of reverse-mode gradients.
//!
//! Each coordinate of each input is perturbed by `±step` and the rebuilt
//! scalar is compared against the analytic gradient. A coordinate whose
//! central estimate disagrees is re-examined with one-sided differences:
//! if those disagree with each other the perturbation crossed a kink (relu,
//! l1, max) and the coordinate is skipped rather than failed.

use std::fmt;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Minimum denominator of the relative error, so gradients that are
    /// zero analytically are judged on an absolute scale.
    pub scale_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rel_tol: 1e-4,
            scale_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {} checked={} skipped_kinks={} max_rel_error={:.3e}",
            self.name, self.checked, self.skipped_kinks, self.max_rel_error
        )?;
        for m in &self.failures {
            write!(
                f,
                "\n  input={} index={} analytic={:.12e} numeric={:.12e} rel_error={:.3e}",
                m.input, m.index, m.analytic, m.numeric, m.rel_error
            )?;
        }
        Ok(())
    }
}

fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks d(f)/d(inputs). `f` must rebuild its graph from the current
/// values of `inputs` on every call and return a one-element tensor.
/// Inputs must be trainable leaves.
pub fn check_gradients<F>(
    name: &str,
    inputs: &[Tensor],
    f: F,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    for t in inputs {
        if !t.requires_grad() || t.op_name().is_some() {
            return Err(TensorError::invalid(
                "gradcheck",
                "inputs must be trainable leaves",
            ));
        }
        t.zero_grad();
    }
    let y = f()?;
    let f0 = y.item();
    y.backward()?;
    drop(y);
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval_at = |t: &Tensor, j: usize, value: f64| -> Result<f64> {
        t.data_mut()[j] = value;
        f().map(|y| y.item())
    };

    let h = cfg.step;
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
    };
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            let plus = eval_at(t, j, orig + h);
            let minus = eval_at(t, j, orig - h);
            t.data_mut()[j] = orig;
            let (fp, fm) = (plus?, minus?);
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i][j];
            let err = rel_error(a, numeric, cfg.scale_floor);
            if err <= cfg.rel_tol {
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max(err);
                continue;
            }
            let forward = (fp - f0) / h;
            let backward = (f0 - fm) / h;
            if rel_error(forward, backward, cfg.scale_floor) > 10.0 * cfg.rel_tol
                && (a - forward).abs().min((a - backward).abs())
                    <= cfg.rel_tol * a.abs().max(cfg.scale_floor) * 10.0
            {
                report.skipped_kinks += 1;
                continue;
            }
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
            report.failures.push(Mismatch {
                input: i,
                index: j,
                analytic: a,
                numeric,
                rel_error: err,
            });
        }
        t.zero_grad();
    }
    Ok(report)
}
