//! The generalist forward map and terminal-state sampling.

use crate::error::Result;
use crate::schedule::Schedule;
use crate::tensor::{SeededRng, TensorField};

/// `I_res = I_in - I_0`.
pub fn residual_of(clean: &TensorField, degraded: &TensorField) -> Result<TensorField> {
    degraded.sub(clean)
}

/// One-shot marginal sample
/// `I_t = I_0 + alpha_bar (I_in - I_0) + beta_bar eps - delta_bar I_in`.
pub fn diffuse(
    clean: &TensorField,
    degraded: &TensorField,
    eps: &TensorField,
    t: f64,
    schedule: &Schedule,
) -> Result<TensorField> {
    clean.ensure_same_shape(degraded)?;
    clean.ensure_same_shape(eps)?;
    let c = schedule.eval(t)?;
    let residual = residual_of(clean, degraded)?;
    TensorField::combine(&[
        (1.0, clean),
        (c.alpha_bar, &residual),
        (c.beta_bar, eps),
        (-c.delta_bar, degraded),
    ])
}

/// Draws `I_T ~ N(0, beta_bar(T)^2 I)`.
pub fn sample_terminal(schedule: &Schedule, shape: &[usize], rng: &mut SeededRng) -> Result<TensorField> {
    let std = schedule.eval(schedule.horizon())?.beta_bar;
    rng.normal_field(shape, 0.0, std)
}
