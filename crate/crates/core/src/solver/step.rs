//! Single-interval solver steps of orders 1 to 3.

use super::{check_inputs, Evaluation, Evaluator};
use crate::error::{Error, Result};
use crate::posterior::GuidanceWeight;
use crate::predictors::Predictor;
use crate::schedule::{Coefficients, Schedule};
use crate::tensor::TensorField;

/// Position of `mid` inside `[from, to]` as a fraction of the interval.
/// `None` when the interval is empty or the ratio is unusable, in which case
/// the caller falls back to lower order (the interval weight is zero or the
/// stencil is degenerate).
pub(crate) fn ratio(from: f64, mid: f64, to: f64) -> Option<f64> {
    let span = to - from;
    if span == 0.0 {
        return None;
    }
    let rho = (mid - from) / span;
    (rho.is_finite() && rho > 0.0).then_some(rho)
}

/// Weights on `(f0, f_u)` reproducing `f0 + (f_u - f0) / (2 rho)`.
pub(crate) fn second_weights(rho: Option<f64>) -> [f64; 2] {
    match rho {
        Some(rho) => {
            let w = 0.5 / rho;
            [1.0 - w, w]
        }
        None => [1.0, 0.0],
    }
}

/// Weights on `(f0, f_u, f_s)` for
/// `f0 + D1 / (2 rho1) + (1/6 - rho1/4) D2`, with
/// `D1 = f_u - f0` and
/// `D2 = 2 / (rho1 rho2 (rho2 - rho1)) (rho1 f_s - rho2 f_u + (rho2 - rho1) f0)`.
///
/// The `-rho1/4` term cancels the second-derivative part of `D1 / (2 rho1)`,
/// so quadratics integrate exactly for any `rho1`.
pub(crate) fn third_weights(rho1: Option<f64>, rho2: Option<f64>) -> [f64; 3] {
    match (rho1, rho2) {
        (Some(a), Some(b)) if b > a => {
            let q = 2.0 / (a * b * (b - a));
            let kappa = 1.0 / 6.0 - a / 4.0;
            [
                1.0 - 0.5 / a + kappa * q * (b - a),
                0.5 / a - kappa * q * b,
                kappa * q * a,
            ]
        }
        (a, _) => {
            let [w0, w1] = second_weights(a);
            [w0, w1, 0.0]
        }
    }
}

/// `state - d(delta) I_in + d(alpha) sum wa_i res_i + d(beta) sum wb_i eps_i`.
pub(crate) fn advance(
    state: &TensorField,
    input: &TensorField,
    from: &Coefficients,
    to: &Coefficients,
    evals: &[&Evaluation],
    wa: &[f64],
    wb: &[f64],
) -> Result<TensorField> {
    let da = to.alpha_bar - from.alpha_bar;
    let db = to.beta_bar - from.beta_bar;
    let dd = to.delta_bar - from.delta_bar;
    let mut terms: Vec<(f64, &TensorField)> = vec![(1.0, state), (-dd, input)];
    for ((e, &a), &b) in evals.iter().zip(wa).zip(wb) {
        if a != 0.0 {
            terms.push((da * a, &e.res));
        }
        if b != 0.0 {
            terms.push((db * b, &e.eps));
        }
    }
    TensorField::combine(&terms)
}

fn intermediate_time(t_prev: f64, t_next: f64, r: f64) -> f64 {
    r * t_next + (1.0 - r) * t_prev
}

pub(crate) fn first_with(
    ev: &Evaluator<'_>,
    state: &TensorField,
    e0: &Evaluation,
    t_next: f64,
) -> Result<TensorField> {
    let to = ev.coeffs(t_next)?;
    advance(state, ev.input(), &e0.coeffs, &to, &[e0], &[1.0], &[1.0])
}

/// Second-order combination over `[e0.t, t_next]` using the evaluation `eu`
/// at an interior time.
pub(crate) fn second_with(
    ev: &Evaluator<'_>,
    state: &TensorField,
    e0: &Evaluation,
    eu: &Evaluation,
    t_next: f64,
) -> Result<TensorField> {
    let to = ev.coeffs(t_next)?;
    let (c0, cu) = (&e0.coeffs, &eu.coeffs);
    let wa = second_weights(ratio(c0.alpha_bar, cu.alpha_bar, to.alpha_bar));
    let wb = second_weights(ratio(c0.beta_bar, cu.beta_bar, to.beta_bar));
    advance(state, ev.input(), c0, &to, &[e0, eu], &wa, &wb)
}

pub(crate) fn first(ev: &mut Evaluator<'_>, state: &TensorField, t_prev: f64, t_next: f64) -> Result<TensorField> {
    let e0 = ev.eval(state, t_prev)?;
    first_with(ev, state, &e0, t_next)
}

pub(crate) fn second(
    ev: &mut Evaluator<'_>,
    state: &TensorField,
    t_prev: f64,
    t_next: f64,
    r: f64,
) -> Result<TensorField> {
    let e0 = ev.eval(state, t_prev)?;
    let t_u = intermediate_time(t_prev, t_next, r);
    let s_u = first_with(ev, state, &e0, t_u)?;
    let eu = ev.eval(&s_u, t_u)?;
    second_with(ev, state, &e0, &eu, t_next)
}

pub(crate) fn third(
    ev: &mut Evaluator<'_>,
    state: &TensorField,
    t_prev: f64,
    t_next: f64,
    r1: f64,
    r2: f64,
) -> Result<TensorField> {
    let e0 = ev.eval(state, t_prev)?;
    let t_u = intermediate_time(t_prev, t_next, r1);
    let t_s = intermediate_time(t_prev, t_next, r2);
    let s_u = first_with(ev, state, &e0, t_u)?;
    let eu = ev.eval(&s_u, t_u)?;
    let s_s = second_with(ev, state, &e0, &eu, t_s)?;
    let es = ev.eval(&s_s, t_s)?;
    let to = ev.coeffs(t_next)?;
    let c0 = &e0.coeffs;
    let wa = third_weights(
        ratio(c0.alpha_bar, eu.coeffs.alpha_bar, to.alpha_bar),
        ratio(c0.alpha_bar, es.coeffs.alpha_bar, to.alpha_bar),
    );
    let wb = third_weights(
        ratio(c0.beta_bar, eu.coeffs.beta_bar, to.beta_bar),
        ratio(c0.beta_bar, es.coeffs.beta_bar, to.beta_bar),
    );
    advance(state, ev.input(), c0, &to, &[&e0, &eu, &es], &wa, &wb)
}

fn check_interval(t_prev: f64, t_next: f64) -> Result<()> {
    if !(t_next <= t_prev) {
        return Err(Error::InvalidConfig(format!(
            "reverse step needs t_next <= t_prev, got {t_prev} -> {t_next}"
        )));
    }
    Ok(())
}

fn run_step(
    state: &TensorField,
    input: &TensorField,
    t_prev: f64,
    t_next: f64,
    predictor: &dyn Predictor,
    schedule: &Schedule,
    ups: Option<GuidanceWeight>,
    step: impl FnOnce(&mut Evaluator<'_>, &TensorField) -> Result<TensorField>,
) -> Result<(TensorField, usize)> {
    check_inputs(state, input)?;
    check_interval(t_prev, t_next)?;
    schedule.eval(t_next)?;
    let mut ev = Evaluator::new(predictor, input, schedule, ups);
    let out = step(&mut ev, state)?;
    Ok((out, ev.evals()))
}

/// One first-order step; returns the new state and the number of predictor
/// calls (always 1).
pub fn step_first(
    state: &TensorField,
    input: &TensorField,
    t_prev: f64,
    t_next: f64,
    predictor: &dyn Predictor,
    schedule: &Schedule,
    ups: Option<GuidanceWeight>,
) -> Result<(TensorField, usize)> {
    run_step(state, input, t_prev, t_next, predictor, schedule, ups, |ev, s| {
        first(ev, s, t_prev, t_next)
    })
}

/// One second-order step with the intermediate time at fraction `r`
/// of the interval (two predictor calls).
#[allow(clippy::too_many_arguments)]
pub fn step_second(
    state: &TensorField,
    input: &TensorField,
    t_prev: f64,
    t_next: f64,
    r: f64,
    predictor: &dyn Predictor,
    schedule: &Schedule,
    ups: Option<GuidanceWeight>,
) -> Result<(TensorField, usize)> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidConfig(format!("r must lie in (0, 1), got {r}")));
    }
    run_step(state, input, t_prev, t_next, predictor, schedule, ups, |ev, s| {
        second(ev, s, t_prev, t_next, r)
    })
}

/// One third-order step with intermediate times at fractions `r1 < r2`
/// (three predictor calls).
#[allow(clippy::too_many_arguments)]
pub fn step_third(
    state: &TensorField,
    input: &TensorField,
    t_prev: f64,
    t_next: f64,
    r1: f64,
    r2: f64,
    predictor: &dyn Predictor,
    schedule: &Schedule,
    ups: Option<GuidanceWeight>,
) -> Result<(TensorField, usize)> {
    if !(0.0 < r1 && r1 < r2 && r2 < 1.0) {
        return Err(Error::InvalidConfig(format!("need 0 < r1 < r2 < 1, got {r1}, {r2}")));
    }
    run_step(state, input, t_prev, t_next, predictor, schedule, ups, |ev, s| {
        third(ev, s, t_prev, t_next, r1, r2)
    })
}
