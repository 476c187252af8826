//! Central finite-difference check of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`gradcheck`].
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// max over all elements of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst element.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub tolerance: f64,
    pub passed: bool,
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.numel() != 1 {
        return Err(Error::Contract("gradcheck: function must return a scalar".into()));
    }
    let y = v.item();
    if !y.is_finite() {
        return Err(Error::Numeric("gradcheck: non-finite function value".into()));
    }
    Ok(y)
}

/// Compares reverse-mode gradients of the scalar `f` with respect to every
/// element of every input against central differences with the given step.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = f(&tape, &vars)?;
    if !root.item().is_finite() {
        return Err(Error::Numeric("gradcheck: non-finite function value".into()));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut max_rel_error = 0.0;
    let mut worst = (0, 0);
    let mut probe = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let mut fd = Tensor::zeros(input.shape());
        for e in 0..input.numel() {
            let x0 = input.data()[e];
            probe[which].data_mut()[e] = x0 + step;
            let up = evaluate(&f, &probe)?;
            probe[which].data_mut()[e] = x0 - step;
            let down = evaluate(&f, &probe)?;
            probe[which].data_mut()[e] = x0;

            let g_fd = (up - down) / (2.0 * step);
            let g_ad = analytic[which].data()[e];
            fd.data_mut()[e] = g_fd;
            let err = (g_ad - g_fd).abs() / g_ad.abs().max(g_fd.abs()).max(1e-8);
            if err > max_rel_error {
                max_rel_error = err;
                worst = (which, e);
            }
        }
        numeric.push(fd);
    }
    Ok(GradcheckReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
        tolerance: tol,
        passed: max_rel_error < tol,
    })
}
