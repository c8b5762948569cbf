use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub first_moment: Vec<F>,
    pub second_moment: Vec<F>,
    pub step_count: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![F::zero(); len],
            second_moment: vec![F::zero(); len],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place. Gradients are checked
/// for NaN/Inf before anything is modified; `block` names the parameter block
/// in the resulting error.
pub fn adam_step<F: Real>(
    params: &mut [F],
    grads: &[F],
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
    block: &str,
) -> Result<()> {
    if params.len() != grads.len() || state.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam block {block}: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) || cfg.lr <= 0.0 {
        return Err(Error::Config(format!(
            "invalid Adam hyperparameters lr={} beta1={} beta2={}",
            cfg.lr, cfg.beta1, cfg.beta2
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFault {
            block: block.to_string(),
            step: None,
        });
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = F::from_f64_lossy(cfg.beta1);
    let b2 = F::from_f64_lossy(cfg.beta2);
    let lr = F::from_f64_lossy(cfg.lr);
    let eps = F::from_f64_lossy(cfg.eps);
    let correction1 = F::one() - F::from_f64_lossy(cfg.beta1.powi(t));
    let correction2 = F::one() - F::from_f64_lossy(cfg.beta2.powi(t));

    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
