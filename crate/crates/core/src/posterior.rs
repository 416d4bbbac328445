//! Universal posterior sampling (UPS) noise correction and the Jensen-gap
//! bound for the additive measurement model `I_in = I_0 + I_res + n`.
//!
//! The guidance norm is `rho(I_t) = || I_in - (I0_hat + res(I_t)) ||`
//! (unsquared). Its gradient is taken with `I0_hat` held at the value
//! computed for the current evaluation, so state-independent predictors
//! contribute no correction.

use std::io::Write;

use crate::error::{Error, Result};
use crate::predictors::{estimate_clean_at, Predictor, PredictorOutput, Query};
use crate::tensor::TensorField;

/// Guidance norms below this are treated as zero and leave eps untouched.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

/// `(I_in - (I0_hat + res_hat), ||.||_2)`.
pub fn guidance_residual(
    input: &TensorField,
    clean_hat: &TensorField,
    res_hat: &TensorField,
) -> Result<(TensorField, f64)> {
    input.ensure_same_shape(clean_hat)?;
    input.ensure_same_shape(res_hat)?;
    let v = TensorField::combine(&[(1.0, input), (-1.0, clean_hat), (-1.0, res_hat)])?;
    let n = v.norm_l2();
    Ok((v, n))
}

/// Choice of the measurement variance in the guidance weight `beta_bar / sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GuidanceWeight {
    /// `sigma^2` tracks the current guidance norm.
    #[default]
    Adaptive,
    /// Fixed `sigma` (not squared).
    FixedSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsOutcome {
    Applied,
    /// Guidance norm below [`DEGENERACY_THRESHOLD`]; eps returned unchanged.
    Degenerate,
    /// `beta_bar(t) = 0`; eps returned unchanged.
    Noiseless,
}

/// Applies the UPS correction
/// `eps + beta_bar / sigma^2 * grad rho` to `eps_hat`.
///
/// The predictor gradient is only requested when the guidance norm is
/// non-degenerate, so predictors without gradient support work as long as
/// their noise is derived from the residual.
pub fn ups_correct(
    eps_hat: &TensorField,
    query: &Query<'_>,
    clean_hat: &TensorField,
    res_hat: &TensorField,
    predictor: &dyn Predictor,
    weight: GuidanceWeight,
) -> Result<(TensorField, UpsOutcome)> {
    query.state.ensure_same_shape(eps_hat)?;
    let (_, rho) = guidance_residual(query.input, clean_hat, res_hat)?;
    if !(rho >= DEGENERACY_THRESHOLD) {
        if rho.is_nan() {
            return Err(Error::NonFinite("guidance norm".into()));
        }
        return Ok((eps_hat.clone(), UpsOutcome::Degenerate));
    }
    let beta = query.coeffs.beta_bar;
    if beta == 0.0 {
        return Ok((eps_hat.clone(), UpsOutcome::Noiseless));
    }
    if !predictor.supports_gradient() {
        return Err(Error::CapabilityMissing(format!(
            "guidance norm {rho:.3e} is non-zero and {} has no gradient",
            predictor.describe()
        )));
    }
    let grad = predictor.guidance_gradient(query)?;
    query.state.ensure_same_shape(&grad)?;
    let sigma2 = match weight {
        GuidanceWeight::Adaptive => rho,
        GuidanceWeight::FixedSigma(s) if s > 0.0 => s * s,
        GuidanceWeight::FixedSigma(s) => {
            return Err(Error::InvalidConfig(format!("guidance sigma must be > 0, got {s}")))
        }
    };
    let out = TensorField::combine(&[(1.0, eps_hat), (beta / sigma2, &grad)])?;
    out.check_finite("UPS-corrected eps")?;
    Ok((out, UpsOutcome::Applied))
}

/// Guidance gradient for a predictor whose residual Jacobian w.r.t. the state
/// is diagonal with entries `jacobian_diag`: `-J v / rho`.
pub fn diagonal_guidance_gradient(
    query: &Query<'_>,
    output: PredictorOutput,
    jacobian_diag: &TensorField,
) -> Result<TensorField> {
    let (res, eps, _) = output.resolve(query)?;
    let clean = estimate_clean_at(query.state, query.input, &res, &eps, &query.coeffs)?;
    let (v, rho) = guidance_residual(query.input, &clean, &res)?;
    if rho < DEGENERACY_THRESHOLD {
        return TensorField::zeros(query.state.shape());
    }
    jacobian_diag.zip_map(&v, |j, vi| -j * vi / rho)
}

/// Largest field for which [`FiniteDifferenceGradient`] will run; each
/// gradient costs two predictor calls per element.
pub const FD_GRADIENT_MAX_ELEMENTS: usize = 16;

/// Debug wrapper supplying a central-difference guidance gradient for tiny
/// problems. `I0_hat` is frozen at the unperturbed query, matching the
/// analytic gradients.
pub struct FiniteDifferenceGradient<P> {
    inner: P,
    step: f64,
}

impl<P: Predictor> FiniteDifferenceGradient<P> {
    pub fn new(inner: P, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidConfig(format!("finite-difference step must be > 0, got {step}")));
        }
        Ok(Self { inner, step })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Predictor> Predictor for FiniteDifferenceGradient<P> {
    fn predict(&self, query: &Query<'_>) -> Result<PredictorOutput> {
        self.inner.predict(query)
    }

    fn has_eps_head(&self) -> bool {
        self.inner.has_eps_head()
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn guidance_gradient(&self, query: &Query<'_>) -> Result<TensorField> {
        let n = query.state.len();
        if n > FD_GRADIENT_MAX_ELEMENTS {
            return Err(Error::CapabilityMissing(format!(
                "finite-difference gradient limited to {FD_GRADIENT_MAX_ELEMENTS} elements, field has {n}"
            )));
        }
        let (res, eps, _) = self.inner.predict(query)?.resolve(query)?;
        let clean = estimate_clean_at(query.state, query.input, &res, &eps, &query.coeffs)?;
        let norm_at = |state: &TensorField| -> Result<f64> {
            let q = Query { state, ..*query };
            let r = self.inner.predict(&q)?.res;
            Ok(guidance_residual(query.input, &clean, &r)?.1)
        };
        let mut grad = Vec::with_capacity(n);
        let mut probe = query.state.data().to_vec();
        for i in 0..n {
            let x = probe[i];
            probe[i] = x + self.step;
            let plus = norm_at(&query.state.with_data(probe.clone())?)?;
            probe[i] = x - self.step;
            let minus = norm_at(&query.state.with_data(probe.clone())?)?;
            probe[i] = x;
            grad.push((plus - minus) / (2.0 * self.step));
        }
        query.state.with_data(grad)
    }

    fn describe(&self) -> String {
        format!("{} + finite-difference gradient", self.inner.describe())
    }
}

/// Parameters of the Jensen-gap bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenParams {
    pub sigma: f64,
    pub d: u64,
    pub m1: f64,
}

impl JensenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("dimension d must be >= 1".into()));
        }
        if !(self.m1 >= 0.0 && self.m1.is_finite()) {
            return Err(Error::InvalidConfig(format!("m1 must be >= 0, got {}", self.m1)));
        }
        Ok(())
    }
}

/// Lipschitz constant of an isotropic Gaussian likelihood:
/// `d / sqrt(2 pi sigma^2) * exp(-1 / (2 sigma^2))`.
pub fn lipschitz_gaussian(sigma: f64, d: u64) -> Result<f64> {
    JensenParams { sigma, d, m1: 0.0 }.validate()?;
    let s2 = sigma * sigma;
    Ok(d as f64 / (2.0 * std::f64::consts::PI * s2).sqrt() * (-0.5 / s2).exp())
}

pub fn jensen_gap_bound(p: &JensenParams) -> Result<f64> {
    p.validate()?;
    Ok(lipschitz_gaussian(p.sigma, p.d)? * p.m1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenRow {
    pub sigma: f64,
    pub m1: f64,
    pub bound: f64,
}

/// Cartesian evaluation of the bound, sorted by `(sigma, m1)`.
pub fn jensen_sweep(sigma_grid: &[f64], m1_grid: &[f64], d: u64) -> Result<Vec<JensenRow>> {
    if sigma_grid.is_empty() || m1_grid.is_empty() {
        return Err(Error::InvalidConfig("jensen sweep grids must be non-empty".into()));
    }
    let mut sigmas = sigma_grid.to_vec();
    let mut m1s = m1_grid.to_vec();
    sigmas.sort_by(f64::total_cmp);
    m1s.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(sigmas.len() * m1s.len());
    for &sigma in &sigmas {
        for &m1 in &m1s {
            let bound = jensen_gap_bound(&JensenParams { sigma, d, m1 })?;
            rows.push(JensenRow { sigma, m1, bound });
        }
    }
    Ok(rows)
}

pub fn write_jensen_csv<W: Write>(rows: &[JensenRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sigma", "m1", "J"])?;
    for r in rows {
        w.write_record([r.sigma.to_string(), r.m1.to_string(), format!("{:e}", r.bound)])?;
    }
    w.flush()?;
    Ok(())
}

/// `count` evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, count: usize) -> Result<Vec<f64>> {
    match count {
        0 => Err(Error::InvalidConfig("grid needs at least one point".into())),
        1 => Ok(vec![start]),
        _ => {
            let h = (stop - start) / (count - 1) as f64;
            Ok((0..count)
                .map(|i| if i + 1 == count { stop } else { start + h * i as f64 })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{make_constant_predictor, make_gaussian_oracle, EchoPredictor};
    use crate::schedule::{build_schedule, ScheduleConfig};
    use crate::tensor::SeededRng;
    use approx::assert_relative_eq;

    #[test]
    fn guidance_residual_examples() {
        let f = |v| TensorField::filled(&[4], v).unwrap();
        let (v, n) = guidance_residual(&f(0.8), &f(0.5), &f(0.2)).unwrap();
        assert!(v.data().iter().all(|x| (x - 0.1).abs() < 1e-15));
        assert_relative_eq!(n, 0.2, epsilon = 1e-15);
        let (v, n) = guidance_residual(&f(0.75), &f(0.5), &f(0.25)).unwrap();
        assert_eq!((v.max_abs(), n), (0.0, 0.0));
        assert!(guidance_residual(&f(0.8), &TensorField::zeros(&[3]).unwrap(), &f(0.2)).is_err());
    }

    #[test]
    fn derived_eps_is_a_noop() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let mut rng = SeededRng::new(11);
        let oracle = make_gaussian_oracle(0.2, 0.3).unwrap();
        let preds: [&dyn Predictor; 3] = [&oracle, &EchoPredictor, &make_constant_predictor(0.3, None)];
        for p in preds {
            for _ in 0..20 {
                let it = rng.normal_field(&[6], 0.0, 1.0).unwrap();
                let iin = rng.uniform_field(&[6], 0.0, 1.0).unwrap();
                let t = rng.uniform(0.05, 1.0);
                let q = Query::new(&it, &iin, t, &s).unwrap();
                let (res, eps, derived) = p.predict(&q).unwrap().resolve(&q).unwrap();
                assert!(derived);
                let clean = estimate_clean_at(&it, &iin, &res, &eps, &q.coeffs).unwrap();
                assert!(guidance_residual(&iin, &clean, &res).unwrap().1 < DEGENERACY_THRESHOLD);
                let (out, how) = ups_correct(&eps, &q, &clean, &res, p, GuidanceWeight::Adaptive).unwrap();
                assert_eq!(how, UpsOutcome::Degenerate);
                assert_eq!(out, eps);
            }
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        struct NoGrad;
        impl Predictor for NoGrad {
            fn predict(&self, q: &Query<'_>) -> Result<PredictorOutput> {
                Ok(PredictorOutput::with_eps(
                    TensorField::filled(q.state.shape(), 0.1)?,
                    TensorField::filled(q.state.shape(), 0.5)?,
                ))
            }
            fn describe(&self) -> String {
                "nograd".into()
            }
        }
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let x = TensorField::filled(&[3], 0.2).unwrap();
        let q = Query::new(&x, &x, 0.5, &s).unwrap();
        let (res, eps, _) = NoGrad.predict(&q).unwrap().resolve(&q).unwrap();
        let clean = estimate_clean_at(&x, &x, &res, &eps, &q.coeffs).unwrap();
        let err = ups_correct(&eps, &q, &clean, &res, &NoGrad, GuidanceWeight::Adaptive).unwrap_err();
        assert!(err.to_string().contains("UPS requires predictor gradient"));
    }

    #[test]
    fn noiseless_time_leaves_eps_unchanged() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let x = TensorField::filled(&[2], 0.2).unwrap();
        let q = Query::new(&x, &x, 0.0, &s).unwrap();
        let p = make_constant_predictor(0.1, Some(0.4));
        let res = TensorField::filled(&[2], 0.1).unwrap();
        let eps = TensorField::filled(&[2], 0.4).unwrap();
        let clean = TensorField::filled(&[2], 0.0).unwrap();
        let (out, how) = ups_correct(&eps, &q, &clean, &res, &p, GuidanceWeight::Adaptive).unwrap();
        assert_eq!((out, how), (eps, UpsOutcome::Noiseless));
    }

    #[test]
    fn analytic_gradient_matches_fd_wrapper() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let oracle = make_gaussian_oracle(0.2, 0.3).unwrap().with_perturbation(0.05, 3.0);
        let fd = FiniteDifferenceGradient::new(oracle, 1e-5).unwrap();
        let mut rng = SeededRng::new(4);
        for _ in 0..10 {
            let it = rng.normal_field(&[3], 0.0, 1.0).unwrap();
            let iin = rng.uniform_field(&[3], 0.0, 1.0).unwrap();
            let q = Query::new(&it, &iin, rng.uniform(0.1, 0.95), &s).unwrap();
            let a = oracle.guidance_gradient(&q).unwrap();
            let b = fd.guidance_gradient(&q).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
        }
        let big = TensorField::zeros(&[17]).unwrap();
        let q = Query::new(&big, &big, 0.5, &s).unwrap();
        assert!(fd.guidance_gradient(&q).is_err());
    }

    #[test]
    fn fixed_sigma_weight() {
        let s = build_schedule(ScheduleConfig::default()).unwrap();
        let oracle = make_gaussian_oracle(0.2, 0.3).unwrap().with_perturbation(0.1, 2.0);
        let it = TensorField::scalar(0.4).unwrap();
        let iin = TensorField::scalar(0.7).unwrap();
        let q = Query::new(&it, &iin, 0.5, &s).unwrap();
        let (res, eps, _) = oracle.predict(&q).unwrap().resolve(&q).unwrap();
        let clean = estimate_clean_at(&it, &iin, &res, &eps, &q.coeffs).unwrap();
        let g = oracle.guidance_gradient(&q).unwrap().data()[0];
        let (out, _) = ups_correct(&eps, &q, &clean, &res, &oracle, GuidanceWeight::FixedSigma(2.0)).unwrap();
        assert_relative_eq!(out.data()[0] - eps.data()[0], q.coeffs.beta_bar / 4.0 * g, epsilon = 1e-14);
        assert!(ups_correct(&eps, &q, &clean, &res, &oracle, GuidanceWeight::FixedSigma(0.0)).is_err());
    }

    #[test]
    fn jensen_values() {
        let j = jensen_gap_bound(&JensenParams { sigma: 1.0, d: 1, m1: 1.0 }).unwrap();
        assert!((j - 0.241971).abs() < 1e-6);
        assert_eq!(jensen_gap_bound(&JensenParams { sigma: 1.0, d: 1, m1: 0.0 }).unwrap(), 0.0);
        let l1 = lipschitz_gaussian(0.7, 3).unwrap();
        assert_relative_eq!(lipschitz_gaussian(0.7, 6).unwrap(), 2.0 * l1, max_relative = 1e-15);
        assert!(lipschitz_gaussian(1e-3, 1).unwrap() == 0.0);
        assert!(lipschitz_gaussian(0.0, 1).is_err());
        assert!(lipschitz_gaussian(1.0, 0).is_err());
        assert!(jensen_gap_bound(&JensenParams { sigma: 1.0, d: 1, m1: -1.0 }).is_err());
    }

    #[test]
    fn jensen_sweep_shape() {
        let sig = linspace(0.05, 20.0, 100).unwrap();
        let rows = jensen_sweep(&sig, &[1.0], 1).unwrap();
        assert_eq!(rows.len(), 100);
        let best = rows.iter().max_by(|a, b| a.bound.total_cmp(&b.bound)).unwrap();
        assert!((best.sigma - 1.0).abs() <= 20.0 / 99.0);
        let rows = jensen_sweep(&[2.0, 0.5], &[3.0, 1.0, 2.0], 4).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[0].sigma, rows[0].m1), (0.5, 1.0));
        assert!(rows[0].bound < rows[1].bound && rows[1].bound < rows[2].bound);
        assert!(jensen_sweep(&[], &[1.0], 1).is_err());
        let mut buf = Vec::new();
        write_jensen_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }
}
