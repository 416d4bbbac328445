//! Dense fourth-order Runge-Kutta integration of the reverse ODE, used as
//! ground truth in convergence studies.

use crate::error::{Error, Result};
use crate::predictors::{Predictor, Query};
use crate::schedule::Schedule;
use crate::tensor::TensorField;

pub const MIN_DENSE_STEPS: usize = 10_000;

fn drift(
    predictor: &dyn Predictor,
    schedule: &Schedule,
    state: &TensorField,
    input: &TensorField,
    s: f64,
) -> Result<TensorField> {
    // t = T s^2, so dI/ds = 2 T s dI/dt
    let big_t = schedule.horizon();
    let t = (big_t * s * s).min(big_t);
    let q = Query::new(state, input, t, schedule)?;
    let (res, eps, _) = predictor.predict(&q)?.resolve(&q)?;
    let rates = schedule.eval_rates(t)?;
    let beta_rate = schedule.beta_bar_rate(t)?;
    let jac = 2.0 * big_t * s;
    TensorField::combine(&[
        (jac * rates.h, &res),
        (jac * rates.l, input),
        (jac * beta_rate, &eps),
    ])
}

/// Integrates `dI/dt = h res + l I_in + (g2 / (2 beta_bar)) eps` from `T`
/// to 0 without guidance.
///
/// Steps are uniform in `s = sqrt(t / T)`, which keeps every supported
/// schedule smooth (the square-root noise ramp becomes linear). The last
/// interval `[0, T / dense_steps^2]`, where `beta_bar` vanishes and derived
/// noise is undefined at the endpoint, is closed with one first-order step.
pub fn reference_solve(
    initial: &TensorField,
    input: &TensorField,
    predictor: &dyn Predictor,
    schedule: &Schedule,
    dense_steps: usize,
) -> Result<TensorField> {
    if dense_steps < MIN_DENSE_STEPS {
        return Err(Error::InvalidConfig(format!(
            "reference integration needs at least {MIN_DENSE_STEPS} steps, got {dense_steps}"
        )));
    }
    initial.ensure_same_shape(input)?;
    let n = dense_steps;
    let h = 1.0 / n as f64;
    let mut state = initial.clone();
    for i in 0..n - 1 {
        let s = 1.0 - i as f64 * h;
        let k1 = drift(predictor, schedule, &state, input, s)?;
        let y = TensorField::combine(&[(1.0, &state), (-0.5 * h, &k1)])?;
        let k2 = drift(predictor, schedule, &y, input, s - 0.5 * h)?;
        let y = TensorField::combine(&[(1.0, &state), (-0.5 * h, &k2)])?;
        let k3 = drift(predictor, schedule, &y, input, s - 0.5 * h)?;
        let y = TensorField::combine(&[(1.0, &state), (-h, &k3)])?;
        let k4 = drift(predictor, schedule, &y, input, s - h)?;
        state = TensorField::combine(&[
            (1.0, &state),
            (-h / 6.0, &k1),
            (-h / 3.0, &k2),
            (-h / 3.0, &k3),
            (-h / 6.0, &k4),
        ])?;
    }
    let t_floor = schedule.horizon() * h * h;
    let (out, _) = super::step_first(&state, input, t_floor, 0.0, predictor, schedule, None)?;
    out.check_finite("reference solution")?;
    Ok(out)
}
