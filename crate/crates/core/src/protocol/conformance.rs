//! Fixture suite checking that a server speaks the protocol correctly and,
//! optionally, that it computes the same function as an in-process predictor.

use std::fmt;

use super::client::ExternalPredictor;
use super::wire::{Frame, MsgType, PredictRequest, PredictResponse, Status, CAP_EPS, CAP_GRADIENT};
use crate::error::Result;
use crate::predictors::{Predictor, Query};
use crate::schedule::{build_schedule, ScheduleConfig};
use crate::tensor::{SeededRng, TensorField};

/// Agreement required between wire results and the in-process oracle,
/// relative to `max(1, |expected|)`.
pub const CONFORMANCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConformanceReport {
    pub fixtures: Vec<FixtureResult>,
}

impl ConformanceReport {
    pub fn all_passed(&self) -> bool {
        !self.fixtures.is_empty() && self.fixtures.iter().all(|f| f.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FixtureResult> {
        self.fixtures.iter().filter(|f| !f.passed)
    }

    fn record(&mut self, name: impl Into<String>, outcome: std::result::Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.fixtures.push(FixtureResult {
            name: name.into(),
            passed,
            detail,
        });
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.fixtures {
            let tag = if r.passed { "PASS" } else { "FAIL" };
            if r.detail.is_empty() {
                writeln!(f, "{tag} {}", r.name)?;
            } else {
                writeln!(f, "{tag} {}: {}", r.name, r.detail)?;
            }
        }
        let passed = self.fixtures.iter().filter(|r| r.passed).count();
        write!(f, "{passed}/{} fixtures passed", self.fixtures.len())
    }
}

/// What to compare the server against.
#[derive(Clone, Copy, Default)]
pub struct ConformanceOptions<'a> {
    /// In-process predictor computing the same function as the server.
    pub expected: Option<&'a dyn Predictor>,
    /// Require results to equal the oracle rounded to f32, bit for bit.
    pub byte_exact: bool,
}

const VALUE_FIXTURES: [(&str, &[usize], f64); 5] = [
    ("scalar", &[1], 0.5),
    ("vector", &[7], 0.05),
    ("square", &[16, 16], 1.0),
    ("channels", &[3, 8, 8], 0.73),
    ("rectangular", &[5, 3], 0.31),
];

fn make_request(shape: &[usize], t: f64, seed: u64, want_eps: bool, want_gradient: bool) -> PredictRequest {
    let schedule = build_schedule(ScheduleConfig::default()).expect("default schedule is valid");
    let n: usize = shape.iter().product();
    let mut rng = SeededRng::new(seed);
    let mut draw = |lo, hi| -> Vec<f32> { (0..n).map(|_| rng.uniform(lo, hi) as f32).collect() };
    let state = draw(-1.0, 1.0);
    let input = draw(0.0, 1.0);
    PredictRequest {
        t,
        coeffs: schedule.eval(t).expect("fixture times lie in [0, 1]"),
        want_eps,
        want_gradient,
        shape: shape.to_vec(),
        state,
        input,
    }
}

fn widen(shape: &[usize], data: &[f32]) -> Result<TensorField> {
    TensorField::new(shape.to_vec(), data.iter().map(|&v| f64::from(v)).collect())
}

fn compare(what: &str, got: &[f32], want: &TensorField, byte_exact: bool) -> std::result::Result<(), String> {
    for (i, (&g, &w)) in got.iter().zip(want.data()).enumerate() {
        let ok = if byte_exact {
            g.to_bits() == (w as f32).to_bits()
        } else {
            (f64::from(g) - w).abs() <= CONFORMANCE_TOLERANCE * w.abs().max(1.0)
        };
        if !ok {
            return Err(format!("{what}[{i}] = {g:e}, expected {w:e}"));
        }
    }
    Ok(())
}

fn check_value_fixture(
    external: &ExternalPredictor,
    req: &PredictRequest,
    opts: &ConformanceOptions<'_>,
) -> std::result::Result<String, String> {
    let resp = external.request_predict(req).map_err(|e| e.to_string())?;
    let (shape, res, eps) = match resp {
        PredictResponse::Ok { shape, res, eps, .. } => (shape, res, eps),
        PredictResponse::Error { status, message } => {
            return Err(format!("status {} ({message})", status as u8))
        }
    };
    if shape != req.shape {
        return Err(format!("shape mismatch: expected {:?}, found {shape:?}", req.shape));
    }
    if res.iter().chain(eps.iter().flatten()).any(|v| !v.is_finite()) {
        return Err("non-finite values in response".into());
    }
    if req.want_eps && eps.is_none() {
        return Err("server advertises an eps head but sent no eps".into());
    }
    let Some(expected) = opts.expected else {
        return Ok(String::new());
    };
    let to_err = |e: crate::error::Error| e.to_string();
    let state = widen(&req.shape, &req.state).map_err(to_err)?;
    let input = widen(&req.shape, &req.input).map_err(to_err)?;
    let q = Query {
        state: &state,
        input: &input,
        t: req.t,
        coeffs: req.coeffs,
    };
    let want = expected.predict(&q).map_err(to_err)?;
    compare("res", &res, &want.res, opts.byte_exact)?;
    if let (Some(got), Some(want)) = (&eps, &want.eps) {
        compare("eps", got, want, opts.byte_exact)?;
    }
    Ok(String::new())
}

fn expect_status(external: &ExternalPredictor, req: &PredictRequest, status: Status) -> std::result::Result<String, String> {
    match external.request_predict(req) {
        Ok(r) if r.status() == status => Ok(String::new()),
        Ok(r) => Err(format!("expected status {}, got {}", status as u8, r.status() as u8)),
        Err(e) => Err(e.to_string()),
    }
}

/// Runs the fixture suite; failures become report entries, never errors.
pub fn conformance_check(external: &ExternalPredictor, opts: ConformanceOptions<'_>) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let caps = external.capabilities();
    let want_eps = caps & CAP_EPS != 0;
    report.record(
        "handshake",
        Ok(format!(
            "eps head: {}, gradient: {}",
            want_eps,
            caps & CAP_GRADIENT != 0
        )),
    );

    for (i, (name, shape, t)) in VALUE_FIXTURES.iter().enumerate() {
        let req = make_request(shape, *t, 100 + i as u64, want_eps, false);
        report.record(format!("predict {name} {shape:?} t={t}"), check_value_fixture(external, &req, &opts));
    }

    let repeat = make_request(&[4, 4], 0.6, 7, want_eps, false);
    let determinism = (|| {
        let a = external.request_predict(&repeat).map_err(|e| e.to_string())?;
        let b = external.request_predict(&repeat).map_err(|e| e.to_string())?;
        if a.encode() == b.encode() {
            Ok(String::new())
        } else {
            Err("identical requests produced different responses".to_string())
        }
    })();
    report.record("deterministic replies", determinism);

    let zero = make_request(&[0], 0.5, 1, want_eps, false);
    report.record("zero-length tensor", expect_status(external, &zero, Status::InvalidShape));
    let mut no_dims = make_request(&[1], 0.5, 1, want_eps, false);
    no_dims.shape.clear();
    no_dims.state.clear();
    no_dims.input.clear();
    report.record("zero-dimensional shape", expect_status(external, &no_dims, Status::InvalidShape));

    let malformed = external.with_connection(|c| -> Result<PredictResponse> {
        c.send_frame(&Frame::new(MsgType::PredictRequest, vec![0xde, 0xad, 0xbe]))?;
        PredictResponse::decode(&c.recv_frame()?.payload)
    });
    report.record(
        "malformed payload",
        match malformed {
            Ok(r) if r.status() == Status::Malformed => Ok(String::new()),
            Ok(r) => Err(format!("expected status 1, got {}", r.status() as u8)),
            Err(e) => Err(e.to_string()),
        },
    );

    let grad_req = make_request(&[6], 0.4, 9, want_eps, true);
    let gradient = if caps & CAP_GRADIENT == 0 {
        expect_status(external, &grad_req, Status::CapabilityMissing)
    } else {
        match external.request_predict(&grad_req) {
            Ok(PredictResponse::Ok { gradient: Some(g), shape, .. }) if shape == grad_req.shape && g.len() == 6 => {
                match opts.expected.filter(|p| p.supports_gradient()) {
                    Some(p) => (|| {
                        let state = widen(&shape, &grad_req.state).map_err(|e| e.to_string())?;
                        let input = widen(&shape, &grad_req.input).map_err(|e| e.to_string())?;
                        let q = Query { state: &state, input: &input, t: grad_req.t, coeffs: grad_req.coeffs };
                        let want = p.guidance_gradient(&q).map_err(|e| e.to_string())?;
                        compare("gradient", &g, &want, false).map(|_| String::new())
                    })(),
                    None => Ok(String::new()),
                }
            }
            Ok(PredictResponse::Ok { shape, .. }) if shape != grad_req.shape => {
                Err(format!("shape mismatch: expected {:?}, found {shape:?}", grad_req.shape))
            }
            Ok(PredictResponse::Ok { .. }) => Err("gradient missing from response".into()),
            Ok(PredictResponse::Error { status, message }) => Err(format!("status {} ({message})", status as u8)),
            Err(e) => Err(e.to_string()),
        }
    };
    report.record("gradient capability", gradient);

    let after = make_request(&[2, 2], 0.9, 3, want_eps, false);
    report.record("recovers after errors", check_value_fixture(external, &after, &opts));
    report
}
