//! Central finite-difference oracle for tape gradients (64-bit only).

use crate::tensor::{Tape, Tensor, Var};
use crate::error::Result;

/// Worst disagreement between analytic and numeric gradients.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Denominator floor so near-zero gradients are judged on absolute error.
pub const FLOOR: f64 = 1e-4;

/// Compares `backward` against `(f(x+h) - f(x-h)) / 2h` for every element of
/// every input. `build` must produce a scalar from the provided leaves.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, build: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(build(&tape, &vars)?.item())
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k].data()[i];
            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = abs / scale.max(FLOOR);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
