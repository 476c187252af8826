use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !beta_ok(self.beta1)
            || !beta_ok(self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Contract(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Moments and update counts, one entry per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates applied to each tensor so far.
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            steps: vec![0; m.len()],
            m,
        }
    }
}

/// Bias-corrected Adam update. A tensor whose gradient is identically zero
/// is skipped (moments and count untouched), so zero gradients never move
/// parameters. Any non-finite gradient aborts before anything changes.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return dim_err(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
            return dim_err(format!("adam: parameter {i} shape {:?} vs grad {:?}", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("adam: gradient of parameter {i} is not finite")));
        }
    }
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if g.data().iter().all(|&x| x == 0.0) {
            continue;
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let (mh, vh) = (*mj / c1, *vj / c2);
            *pj -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
