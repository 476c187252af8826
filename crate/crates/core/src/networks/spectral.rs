use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Result of power iteration on a weight viewed as `[rows, rest]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEstimate {
    /// `weight / sigma`, or the weight itself when degenerate.
    pub normalized: Tensor,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma: f64,
    /// Set when the matrix (or its image of `u`) is zero.
    pub degenerate: bool,
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

/// Estimates the top singular value of `weight` (first axis = rows, the rest
/// flattened into columns) by `iters` rounds of power iteration from `u`.
pub fn spectral_normalize(weight: &Tensor, u: &[f64], iters: usize) -> Result<SpectralEstimate> {
    if iters == 0 {
        return Err(Error::Contract("spectral_normalize: iters must be at least 1".into()));
    }
    if weight.rank() < 2 {
        return dim_err(format!("spectral_normalize: weight {:?} is not a matrix", weight.shape()));
    }
    let rows = weight.shape()[0];
    let cols = weight.numel() / rows;
    if u.len() != rows {
        return dim_err(format!("spectral_normalize: u has {} entries, weight has {rows} rows", u.len()));
    }
    if u.iter().all(|&x| x == 0.0) || !u.iter().all(|x| x.is_finite()) {
        return Err(Error::Contract("spectral_normalize: u must be finite and nonzero".into()));
    }
    let w = weight.data();
    let mut u = u.to_vec();
    let mut v = vec![0.0; cols];
    let degenerate = |u: Vec<f64>, v: Vec<f64>| SpectralEstimate {
        normalized: weight.clone(),
        u,
        v,
        sigma: 0.0,
        degenerate: true,
    };
    for _ in 0..iters {
        v.fill(0.0);
        for (r, row) in w.chunks(cols).enumerate() {
            for (vj, wj) in v.iter_mut().zip(row) {
                *vj += wj * u[r];
            }
        }
        if normalize(&mut v) == 0.0 {
            return Ok(degenerate(u, v));
        }
        for (r, row) in w.chunks(cols).enumerate() {
            u[r] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        if normalize(&mut u) == 0.0 {
            return Ok(degenerate(u, v));
        }
    }
    let sigma: f64 = w
        .chunks(cols)
        .zip(&u)
        .map(|(row, ur)| ur * row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    if !(sigma > 0.0) {
        return Ok(degenerate(u, v));
    }
    Ok(SpectralEstimate {
        normalized: weight.map(|x| x / sigma),
        u,
        v,
        sigma,
        degenerate: false,
    })
}
