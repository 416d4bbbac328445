//! Residual/noise predictors and the algebra linking them to the forward map.
//!
//! A predictor always returns a residual estimate. It may also return an
//! independent noise estimate; otherwise the caller derives one from the
//! forward map with [`derive_eps`]. Analytic predictors here stand in for
//! trained networks so solver behaviour can be checked against closed forms.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::posterior::diagonal_guidance_gradient;
use crate::schedule::{Coefficients, Schedule};
use crate::tensor::TensorField;

/// Arguments of one predictor evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub state: &'a TensorField,
    pub input: &'a TensorField,
    pub t: f64,
    pub coeffs: Coefficients,
}

impl<'a> Query<'a> {
    pub fn new(
        state: &'a TensorField,
        input: &'a TensorField,
        t: f64,
        schedule: &Schedule,
    ) -> Result<Self> {
        state.ensure_same_shape(input)?;
        Ok(Self {
            state,
            input,
            t,
            coeffs: schedule.eval(t)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    pub res: TensorField,
    pub eps: Option<TensorField>,
    /// Set once `eps` has been filled in algebraically rather than predicted.
    pub derived_eps: bool,
}

impl PredictorOutput {
    pub fn residual_only(res: TensorField) -> Self {
        Self {
            res,
            eps: None,
            derived_eps: false,
        }
    }

    pub fn with_eps(res: TensorField, eps: TensorField) -> Self {
        Self {
            res,
            eps: Some(eps),
            derived_eps: false,
        }
    }

    /// Checks shapes against the query and fills a missing `eps` via
    /// [`derive_eps_at`]. Returns `(res, eps, derived)`.
    pub fn resolve(self, query: &Query<'_>) -> Result<(TensorField, TensorField, bool)> {
        query.state.ensure_same_shape(&self.res)?;
        self.res.check_finite("predicted residual")?;
        match self.eps {
            Some(eps) => {
                query.state.ensure_same_shape(&eps)?;
                eps.check_finite("predicted eps")?;
                Ok((self.res, eps, self.derived_eps))
            }
            None => {
                let eps = derive_eps_at(query.state, query.input, &self.res, &query.coeffs)?;
                Ok((self.res, eps, true))
            }
        }
    }
}

/// A residual estimator with an optional noise head.
pub trait Predictor: Send + Sync {
    fn predict(&self, query: &Query<'_>) -> Result<PredictorOutput>;

    /// Whether `predict` returns an independent noise estimate.
    fn has_eps_head(&self) -> bool {
        false
    }

    fn supports_gradient(&self) -> bool {
        false
    }

    /// Gradient w.r.t. the state of the guidance norm
    /// `|| I_in - (I0_hat + res(I_t)) ||`, with `I0_hat` held at its value
    /// for this query.
    fn guidance_gradient(&self, query: &Query<'_>) -> Result<TensorField> {
        let _ = query;
        Err(Error::CapabilityMissing(format!(
            "{} provides no guidance gradient",
            self.describe()
        )))
    }

    fn describe(&self) -> String;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, query: &Query<'_>) -> Result<PredictorOutput> {
        (**self).predict(query)
    }
    fn has_eps_head(&self) -> bool {
        (**self).has_eps_head()
    }
    fn supports_gradient(&self) -> bool {
        (**self).supports_gradient()
    }
    fn guidance_gradient(&self, query: &Query<'_>) -> Result<TensorField> {
        (**self).guidance_gradient(query)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<P: Predictor + ?Sized> Predictor for Arc<P> {
    fn predict(&self, query: &Query<'_>) -> Result<PredictorOutput> {
        (**self).predict(query)
    }
    fn has_eps_head(&self) -> bool {
        (**self).has_eps_head()
    }
    fn supports_gradient(&self) -> bool {
        (**self).supports_gradient()
    }
    fn guidance_gradient(&self, query: &Query<'_>) -> Result<TensorField> {
        (**self).guidance_gradient(query)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Noise implied by the forward map for a given residual:
/// `(I_t - (alpha_bar - 1) res - (1 - delta_bar) I_in) / beta_bar`.
pub fn derive_eps(
    state: &TensorField,
    input: &TensorField,
    res_hat: &TensorField,
    t: f64,
    schedule: &Schedule,
) -> Result<TensorField> {
    derive_eps_at(state, input, res_hat, &schedule.eval(t)?)
}

pub fn derive_eps_at(
    state: &TensorField,
    input: &TensorField,
    res_hat: &TensorField,
    c: &Coefficients,
) -> Result<TensorField> {
    if c.beta_bar == 0.0 {
        return Err(Error::DerivedEpsUndefined);
    }
    let inv = 1.0 / c.beta_bar;
    TensorField::combine(&[
        (inv, state),
        (-(c.alpha_bar - 1.0) * inv, res_hat),
        (-(1.0 - c.delta_bar) * inv, input),
    ])
}

/// Clean-image estimate `I_t - alpha_bar res - beta_bar eps + delta_bar I_in`.
pub fn estimate_clean(
    state: &TensorField,
    input: &TensorField,
    res_hat: &TensorField,
    eps_hat: &TensorField,
    t: f64,
    schedule: &Schedule,
) -> Result<TensorField> {
    estimate_clean_at(state, input, res_hat, eps_hat, &schedule.eval(t)?)
}

pub fn estimate_clean_at(
    state: &TensorField,
    input: &TensorField,
    res_hat: &TensorField,
    eps_hat: &TensorField,
    c: &Coefficients,
) -> Result<TensorField> {
    TensorField::combine(&[
        (1.0, state),
        (-c.alpha_bar, res_hat),
        (-c.beta_bar, eps_hat),
        (c.delta_bar, input),
    ])
}

/// Constant residual (and optionally constant noise) everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor {
    pub res: f64,
    pub eps: Option<f64>,
}

pub fn make_constant_predictor(c_res: f64, c_eps: Option<f64>) -> ConstantPredictor {
    ConstantPredictor {
        res: c_res,
        eps: c_eps,
    }
}

impl Predictor for ConstantPredictor {
    fn predict(&self, q: &Query<'_>) -> Result<PredictorOutput> {
        let res = TensorField::filled(q.state.shape(), self.res)?;
        Ok(match self.eps {
            Some(e) => PredictorOutput::with_eps(res, TensorField::filled(q.state.shape(), e)?),
            None => PredictorOutput::residual_only(res),
        })
    }

    fn has_eps_head(&self) -> bool {
        self.eps.is_some()
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn guidance_gradient(&self, q: &Query<'_>) -> Result<TensorField> {
        TensorField::zeros(q.state.shape())
    }

    fn describe(&self) -> String {
        match self.eps {
            Some(e) => format!("constant(res={}, eps={e})", self.res),
            None => format!("constant(res={})", self.res),
        }
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// State-independent polynomials: `res = sum a_j alpha_bar^j`,
/// `eps = sum b_j beta_bar^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialPredictor {
    res_coeffs: Vec<f64>,
    eps_coeffs: Vec<f64>,
}

pub fn make_polynomial_predictor(res_coeffs: Vec<f64>, eps_coeffs: Vec<f64>) -> Result<PolynomialPredictor> {
    if res_coeffs.is_empty() || eps_coeffs.is_empty() {
        return Err(Error::InvalidConfig("polynomial coefficient lists must be non-empty".into()));
    }
    if res_coeffs.iter().chain(&eps_coeffs).any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("polynomial coefficients".into()));
    }
    Ok(PolynomialPredictor {
        res_coeffs,
        eps_coeffs,
    })
}

impl PolynomialPredictor {
    pub fn res_coeffs(&self) -> &[f64] {
        &self.res_coeffs
    }

    pub fn eps_coeffs(&self) -> &[f64] {
        &self.eps_coeffs
    }

    pub fn degree(&self) -> usize {
        self.res_coeffs.len().max(self.eps_coeffs.len()) - 1
    }
}

impl Predictor for PolynomialPredictor {
    fn predict(&self, q: &Query<'_>) -> Result<PredictorOutput> {
        let res = horner(&self.res_coeffs, q.coeffs.alpha_bar);
        let eps = horner(&self.eps_coeffs, q.coeffs.beta_bar);
        Ok(PredictorOutput::with_eps(
            TensorField::filled(q.state.shape(), res)?,
            TensorField::filled(q.state.shape(), eps)?,
        ))
    }

    fn has_eps_head(&self) -> bool {
        true
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn guidance_gradient(&self, q: &Query<'_>) -> Result<TensorField> {
        TensorField::zeros(q.state.shape())
    }

    fn describe(&self) -> String {
        format!("polynomial(res={:?}, eps={:?})", self.res_coeffs, self.eps_coeffs)
    }
}

/// State-independent `res = sin(alpha_bar)`, `eps = cos(beta_bar)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TranscendentalPredictor;

impl Predictor for TranscendentalPredictor {
    fn predict(&self, q: &Query<'_>) -> Result<PredictorOutput> {
        Ok(PredictorOutput::with_eps(
            TensorField::filled(q.state.shape(), q.coeffs.alpha_bar.sin())?,
            TensorField::filled(q.state.shape(), q.coeffs.beta_bar.cos())?,
        ))
    }

    fn has_eps_head(&self) -> bool {
        true
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn guidance_gradient(&self, q: &Query<'_>) -> Result<TensorField> {
        TensorField::zeros(q.state.shape())
    }

    fn describe(&self) -> String {
        "transcendental(res=sin(alpha_bar), eps=cos(beta_bar))".into()
    }
}

/// Fixed fields regardless of the query: the true per-sample residual and,
/// optionally, the true noise. With the true residual and derived noise the
/// reverse solve lands exactly on the clean image.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPredictor {
    res: TensorField,
    eps: Option<TensorField>,
}

impl FixedPredictor {
    pub fn new(res: TensorField, eps: Option<TensorField>) -> Result<Self> {
        if let Some(e) = &eps {
            res.ensure_same_shape(e)?;
        }
        Ok(Self { res, eps })
    }

    /// Exact-residual oracle built from a clean/degraded pair.
    pub fn exact_residual(clean: &TensorField, degraded: &TensorField) -> Result<Self> {
        Self::new(crate::forward::residual_of(clean, degraded)?, None)
    }
}

impl Predictor for FixedPredictor {
    fn predict(&self, q: &Query<'_>) -> Result<PredictorOutput> {
        q.state.ensure_same_shape(&self.res)?;
        Ok(PredictorOutput {
            res: self.res.clone(),
            eps: self.eps.clone(),
            derived_eps: false,
        })
    }

    fn has_eps_head(&self) -> bool {
        self.eps.is_some()
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn guidance_gradient(&self, q: &Query<'_>) -> Result<TensorField> {
        TensorField::zeros(q.state.shape())
    }

    fn describe(&self) -> String {
        format!(
            "fixed(res shape {:?}, eps {})",
            self.res.shape(),
            if self.eps.is_some() { "given" } else { "derived" }
        )
    }
}

/// `res = I_in - I_t`; used by the protocol conformance fixtures.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EchoPredictor;

impl Predictor for EchoPredictor {
    fn predict(&self, q: &Query<'_>) -> Result<PredictorOutput> {
        Ok(PredictorOutput::residual_only(q.input.sub(q.state)?))
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn guidance_gradient(&self, q: &Query<'_>) -> Result<TensorField> {
        let out = self.predict(q)?;
        let jac = TensorField::filled(q.state.shape(), -1.0)?;
        diagonal_guidance_gradient(q, out, &jac)
    }

    fn describe(&self) -> String {
        "echo(res = I_in - I_t)".into()
    }
}

/// Exact `E[I_0 | I_t]` for the scalar Gaussian prior `I_0 ~ N(mu0, s0^2)`
/// under the forward map, elementwise.
pub fn gaussian_posterior_mean(
    state: &TensorField,
    input: &TensorField,
    t: f64,
    mu0: f64,
    s0: f64,
    schedule: &Schedule,
) -> Result<TensorField> {
    gaussian_posterior_mean_at(state, input, &schedule.eval(t)?, mu0, s0)
}

fn gaussian_gain(c: &Coefficients, s0: f64) -> Result<(f64, f64, f64)> {
    let a = 1.0 - c.alpha_bar;
    let b = c.alpha_bar - c.delta_bar;
    let denom = a * a * s0 * s0 + c.beta_bar * c.beta_bar;
    if denom == 0.0 {
        return Err(Error::Degenerate(
            "gaussian posterior mean: a = 0 and beta_bar = 0".into(),
        ));
    }
    Ok((a, b, a * s0 * s0 / denom))
}

pub fn gaussian_posterior_mean_at(
    state: &TensorField,
    input: &TensorField,
    c: &Coefficients,
    mu0: f64,
    s0: f64,
) -> Result<TensorField> {
    if !(s0 > 0.0) {
        return Err(Error::InvalidConfig(format!("prior std must be > 0, got {s0}")));
    }
    let (a, b, gain) = gaussian_gain(c, s0)?;
    state.zip_map(input, |x, y| mu0 + gain * (x - a * mu0 - b * y))
}

/// Noise-head perturbation `amplitude * sin(frequency * I_t)` added on top
/// of the derived noise, giving the oracle an independent eps head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsPerturbation {
    pub amplitude: f64,
    pub frequency: f64,
}

/// Exact predictor for the Gaussian toy model: `res = I_in - E[I_0 | I_t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianOracle {
    pub mu0: f64,
    pub s0: f64,
    pub perturbation: Option<EpsPerturbation>,
}

pub fn make_gaussian_oracle(mu0: f64, s0: f64) -> Result<GaussianOracle> {
    if !(s0 > 0.0 && s0.is_finite()) || !mu0.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "gaussian oracle needs finite mu0 and s0 > 0, got ({mu0}, {s0})"
        )));
    }
    Ok(GaussianOracle {
        mu0,
        s0,
        perturbation: None,
    })
}

impl GaussianOracle {
    pub fn with_perturbation(mut self, amplitude: f64, frequency: f64) -> Self {
        self.perturbation = Some(EpsPerturbation {
            amplitude,
            frequency,
        });
        self
    }

    /// `d res / d I_t`, a scalar multiple of the identity.
    pub fn residual_jacobian(&self, c: &Coefficients) -> Result<f64> {
        Ok(-gaussian_gain(c, self.s0)?.2)
    }
}

impl Predictor for GaussianOracle {
    fn predict(&self, q: &Query<'_>) -> Result<PredictorOutput> {
        let mean = gaussian_posterior_mean_at(q.state, q.input, &q.coeffs, self.mu0, self.s0)?;
        let res = q.input.sub(&mean)?;
        match self.perturbation {
            None => Ok(PredictorOutput::residual_only(res)),
            Some(p) => {
                let derived = derive_eps_at(q.state, q.input, &res, &q.coeffs)?;
                let eps = derived.zip_map(q.state, |e, x| e + p.amplitude * (p.frequency * x).sin())?;
                Ok(PredictorOutput::with_eps(res, eps))
            }
        }
    }

    fn has_eps_head(&self) -> bool {
        self.perturbation.is_some()
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn guidance_gradient(&self, q: &Query<'_>) -> Result<TensorField> {
        let out = self.predict(q)?;
        let jac = TensorField::filled(q.state.shape(), self.residual_jacobian(&q.coeffs)?)?;
        diagonal_guidance_gradient(q, out, &jac)
    }

    fn describe(&self) -> String {
        match self.perturbation {
            None => format!("gaussian-oracle(mu0={}, s0={})", self.mu0, self.s0),
            Some(p) => format!(
                "gaussian-oracle(mu0={}, s0={}, eps head +{}*sin({}*x))",
                self.mu0, self.s0, p.amplitude, p.frequency
            ),
        }
    }
}

fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad number {p:?} in predictor spec")))
        })
        .collect()
}

/// Parses a built-in predictor spec:
///
/// * `constant:RES` or `constant:RES,EPS`
/// * `poly:A0,A1,..;B0,B1,..`
/// * `transcendental`
/// * `echo`
/// * `gaussian:MU0,S0` or `gaussian:MU0,S0,AMP,FREQ`
pub fn builtin_predictor(spec: &str) -> Result<Box<dyn Predictor>> {
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let bad = || Error::InvalidConfig(format!("invalid predictor spec {spec:?}"));
    match kind {
        "constant" => match parse_numbers(args)?.as_slice() {
            [r] => Ok(Box::new(make_constant_predictor(*r, None))),
            [r, e] => Ok(Box::new(make_constant_predictor(*r, Some(*e)))),
            _ => Err(bad()),
        },
        "poly" | "polynomial" => {
            let (a, b) = args.split_once(';').ok_or_else(bad)?;
            Ok(Box::new(make_polynomial_predictor(parse_numbers(a)?, parse_numbers(b)?)?))
        }
        "transcendental" => Ok(Box::new(TranscendentalPredictor)),
        "echo" => Ok(Box::new(EchoPredictor)),
        "gaussian" | "gaussian-oracle" => match parse_numbers(args)?.as_slice() {
            [m, s] => Ok(Box::new(make_gaussian_oracle(*m, *s)?)),
            [m, s, amp, freq] => Ok(Box::new(make_gaussian_oracle(*m, *s)?.with_perturbation(*amp, *freq))),
            _ => Err(bad()),
        },
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::diffuse;
    use crate::schedule::{build_schedule, ScheduleConfig, ScheduleFamily};
    use crate::tensor::SeededRng;

    fn c(v: f64) -> TensorField {
        TensorField::filled(&[2, 2], v).unwrap()
    }

    // alpha=0.5, beta=0.4, delta=0.5 at t=0.5
    fn worked_schedule() -> Schedule {
        build_schedule(ScheduleConfig {
            horizon: 1.0,
            family: ScheduleFamily::Uniform,
            delta_t: 1.0,
            beta_t: 0.4 / 0.5f64.sqrt(),
        })
        .unwrap()
    }

    fn close(a: &TensorField, v: f64, tol: f64) -> bool {
        a.data().iter().all(|x| (x - v).abs() <= tol)
    }

    #[test]
    fn derive_eps_round_trip_example() {
        let s = worked_schedule();
        let it = diffuse(&c(0.5), &c(0.8), &c(1.0), 0.5, &s).unwrap();
        let eps = derive_eps(&it, &c(0.8), &c(0.3), 0.5, &s).unwrap();
        assert!(close(&eps, 1.0, 1e-12));
        let z = derive_eps(&c(0.0), &c(0.0), &c(0.0), 0.5, &s).unwrap();
        assert!(close(&z, 0.0, 0.0));
        assert!(matches!(
            derive_eps(&c(0.0), &c(0.0), &c(0.0), 0.0, &s),
            Err(Error::DerivedEpsUndefined)
        ));
    }

    #[test]
    fn estimate_clean_examples() {
        let s = worked_schedule();
        let it = diffuse(&c(0.5), &c(0.8), &c(1.0), 0.5, &s).unwrap();
        let i0 = estimate_clean(&it, &c(0.8), &c(0.3), &c(1.0), 0.5, &s).unwrap();
        assert!(close(&i0, 0.5, 1e-12));
        let x = c(0.123);
        assert_eq!(estimate_clean(&x, &c(0.8), &c(9.0), &c(-4.0), 0.0, &s).unwrap(), x);
        assert!(estimate_clean(&x, &c(0.8), &TensorField::zeros(&[4]).unwrap(), &c(1.0), 0.2, &s).is_err());
    }

    #[test]
    fn algebraic_identities_on_random_inputs() {
        let mut rng = SeededRng::new(77);
        for fam in [ScheduleFamily::Uniform, ScheduleFamily::LinearRamp] {
            let s = build_schedule(ScheduleConfig {
                family: fam,
                delta_t: 0.9,
                beta_t: 1.2,
                ..Default::default()
            })
            .unwrap();
            for _ in 0..50 {
                let sh = [3, 5];
                let i0 = rng.normal_field(&sh, 0.5, 0.3).unwrap();
                let iin = rng.normal_field(&sh, 0.5, 0.3).unwrap();
                let eps = rng.normal_field(&sh, 0.0, 1.0).unwrap();
                let t = rng.uniform(0.01, 1.0);
                let it = diffuse(&i0, &iin, &eps, t, &s).unwrap();
                let res = iin.sub(&i0).unwrap();
                let back = derive_eps(&it, &iin, &res, t, &s).unwrap();
                assert!(back.max_abs_diff(&eps).unwrap() < 1e-10);
                let clean = estimate_clean(&it, &iin, &res, &eps, t, &s).unwrap();
                assert!(clean.max_abs_diff(&i0).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn derived_eps_makes_clean_plus_residual_equal_input() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let mut rng = SeededRng::new(5);
        let it = rng.normal_field(&[8], 0.0, 1.0).unwrap();
        let iin = rng.uniform_field(&[8], 0.0, 1.0).unwrap();
        let oracle = make_gaussian_oracle(0.2, 0.3).unwrap();
        let q = Query::new(&it, &iin, 0.6, &s).unwrap();
        let (res, eps, derived) = oracle.predict(&q).unwrap().resolve(&q).unwrap();
        assert!(derived);
        let i0 = estimate_clean_at(&it, &iin, &res, &eps, &q.coeffs).unwrap();
        let expect = iin.sub(&res).unwrap();
        assert!(i0.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn constant_and_polynomial_outputs() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let x = c(0.0);
        let q = Query::new(&x, &x, 0.5, &s).unwrap();
        let out = make_constant_predictor(0.1, None).predict(&q).unwrap();
        assert!(close(&out.res, 0.1, 0.0) && out.eps.is_none());
        let out = make_constant_predictor(0.1, Some(0.2)).predict(&q).unwrap();
        assert!(close(out.eps.as_ref().unwrap(), 0.2, 0.0) && !out.derived_eps);

        let p0 = make_polynomial_predictor(vec![0.1], vec![0.2]).unwrap();
        assert_eq!(p0.predict(&q).unwrap(), out);
        let p = make_polynomial_predictor(vec![1.0, 2.0, 3.0], vec![0.0, 1.0]).unwrap();
        let o = p.predict(&q).unwrap();
        // alpha_bar = 0.25, beta_bar = 0.5 on the default ramp at t = 0.5
        assert!(close(&o.res, 1.0 + 0.5 + 3.0 * 0.0625, 1e-15));
        assert!(close(o.eps.as_ref().unwrap(), 0.5, 1e-15));
        assert!(make_polynomial_predictor(vec![], vec![1.0]).is_err());
        assert_eq!(p.degree(), 2);
    }

    #[test]
    fn gaussian_posterior_mean_cases() {
        // alpha = delta = 0.5, beta = 0.5 -> a = 0.5, b = 0
        let s = build_schedule(ScheduleConfig {
            horizon: 1.0,
            family: ScheduleFamily::Uniform,
            delta_t: 1.0,
            beta_t: 0.5 / 0.5f64.sqrt(),
        })
        .unwrap();
        let m = gaussian_posterior_mean(&c(0.3), &c(0.9), 0.5, 0.0, 1.0, &s).unwrap();
        assert!(close(&m, 0.3, 1e-12));

        // noiseless limit recovers I_t - b I_in
        let m0 = gaussian_posterior_mean(&c(0.3), &c(0.9), 0.0, 0.1, 0.7, &s).unwrap();
        assert!(close(&m0, 0.3, 1e-15));

        // huge noise: the observation carries no information
        let wide = build_schedule(ScheduleConfig {
            beta_t: 1e9,
            ..Default::default()
        })
        .unwrap();
        let m = gaussian_posterior_mean(&c(0.3), &c(0.9), 0.5, 0.42, 1.0, &wide).unwrap();
        assert!(close(&m, 0.42, 1e-9));
        assert!(gaussian_posterior_mean(&c(0.3), &c(0.9), 0.5, 0.0, 0.0, &s).is_err());
    }

    #[test]
    fn gaussian_oracle_residual_gradient_matches_finite_difference() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let o = make_gaussian_oracle(0.2, 0.3).unwrap();
        let iin = TensorField::scalar(0.7).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let x = 0.4;
            let h = 1e-5;
            let eval = |v: f64| {
                let st = TensorField::scalar(v).unwrap();
                let q = Query::new(&st, &iin, t, &s).unwrap();
                o.predict(&q).unwrap().res.data()[0]
            };
            let fd = (eval(x + h) - eval(x - h)) / (2.0 * h);
            let c = s.eval(t).unwrap();
            let a = 1.0 - c.alpha_bar;
            let expect = -a * 0.09 / (a * a * 0.09 + c.beta_bar * c.beta_bar);
            assert!((fd - expect).abs() < 1e-6);
            assert!((o.residual_jacobian(&c).unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn builtin_specs() {
        assert!(builtin_predictor("constant:0.1").unwrap().describe().contains("0.1"));
        assert!(builtin_predictor("constant:0.1,0.2").unwrap().has_eps_head());
        assert!(builtin_predictor("poly:1,2;3").is_ok());
        assert!(builtin_predictor("gaussian:0.2,0.3").is_ok());
        assert!(builtin_predictor("gaussian:0.2,0.3,0.1,2").unwrap().has_eps_head());
        assert!(builtin_predictor("echo").is_ok());
        assert!(builtin_predictor("transcendental").is_ok());
        for bad in ["constant", "constant:x", "poly:1", "gaussian:1", "gaussian:0,-1", "magic"] {
            assert!(builtin_predictor(bad).is_err(), "{bad}");
        }
    }
}
