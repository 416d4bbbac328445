//! Empirical convergence order of the solvers against the dense reference.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::{queue::queue_solve_grid, reference_solve, solve_grid, SolverConfig};
use crate::error::{Error, Result};
use crate::predictors::{
    make_constant_predictor, make_gaussian_oracle, make_polynomial_predictor, Predictor,
    TranscendentalPredictor,
};
use crate::schedule::Schedule;
use crate::tensor::TensorField;

/// Errors below this at every step count are reported as exact.
pub const EXACT_THRESHOLD: f64 = 1e-11;

/// A solve problem: predictor, initial state and degraded input.
pub struct StudyProblem {
    pub name: String,
    pub predictor: Box<dyn Predictor>,
    pub initial: TensorField,
    pub input: TensorField,
}

impl StudyProblem {
    pub fn new(name: impl Into<String>, predictor: Box<dyn Predictor>, initial: TensorField, input: TensorField) -> Self {
        Self {
            name: name.into(),
            predictor,
            initial,
            input,
        }
    }

    /// Scalar built-in problems: `constant`, `polynomial[:DEGREE]`,
    /// `transcendental`, `gaussian-oracle`.
    pub fn named(spec: &str) -> Result<Self> {
        let (name, arg) = spec.split_once(':').unwrap_or((spec, ""));
        let predictor: Box<dyn Predictor> = match name {
            "constant" => Box::new(make_constant_predictor(0.3, Some(-0.2))),
            "polynomial" => {
                let degree: usize = if arg.is_empty() {
                    1
                } else {
                    arg.parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad polynomial degree {arg:?}")))?
                };
                let res: Vec<f64> = (0..=degree).map(|j| 0.5 / (j + 1) as f64).collect();
                let eps: Vec<f64> = (0..=degree).map(|j| if j % 2 == 0 { 1.0 } else { -0.7 }).collect();
                Box::new(make_polynomial_predictor(res, eps)?)
            }
            "transcendental" => Box::new(TranscendentalPredictor),
            "gaussian-oracle" | "gaussian" => Box::new(make_gaussian_oracle(0.2, 0.3)?),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown study problem {other:?} (expected constant, polynomial, transcendental, gaussian-oracle)"
                )))
            }
        };
        Ok(Self::new(
            spec,
            predictor,
            TensorField::scalar(0.7)?,
            TensorField::scalar(0.4)?,
        ))
    }
}

/// Solver variant under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyMethod {
    pub order: usize,
    pub queue: bool,
}

impl StudyMethod {
    pub fn naive(order: usize) -> Self {
        Self { order, queue: false }
    }

    pub fn queued() -> Self {
        Self { order: 2, queue: true }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.queue {
            write!(f, "{}q", self.order)
        } else {
            write!(f, "{}", self.order)
        }
    }
}

impl FromStr for StudyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (digits, queue) = match s.strip_suffix('q') {
            Some(d) => (d, true),
            None => (s, false),
        };
        let order: usize = digits
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad solver order {s:?}")))?;
        Ok(Self { order, queue })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyRow {
    pub method: StudyMethod,
    pub steps: usize,
    pub error: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeFit {
    Exact,
    Slope(f64),
}

impl fmt::Display for SlopeFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlopeFit::Exact => f.write_str("exact"),
            SlopeFit::Slope(s) => write!(f, "{s:.4}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub slopes: Vec<(StudyMethod, SlopeFit)>,
}

impl StudyReport {
    pub fn slope(&self, method: StudyMethod) -> Option<SlopeFit> {
        self.slopes.iter().find(|(m, _)| *m == method).map(|(_, s)| *s)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["order", "steps", "evals", "max_error"])?;
        for r in &self.rows {
            w.write_record([
                r.method.to_string(),
                r.steps.to_string(),
                r.evals.to_string(),
                format!("{:e}", r.error),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `log(error)` against `log(1 / steps)`.
pub fn fit_slope(points: &[(usize, f64)]) -> SlopeFit {
    if points.iter().all(|&(_, e)| e < EXACT_THRESHOLD) {
        return SlopeFit::Exact;
    }
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, e)| e > 0.0)
        .map(|&(m, e)| (-(m as f64).ln(), e.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    SlopeFit::Slope(sxy / sxx)
}

/// Runs each method at each step count and measures the max-norm distance
/// of the final state from [`reference_solve`] with `dense_steps`.
/// Guidance is off so every method integrates the same ODE.
pub fn convergence_study(
    problem: &StudyProblem,
    schedule: &Schedule,
    methods: &[StudyMethod],
    steps_list: &[usize],
    dense_steps: usize,
) -> Result<StudyReport> {
    if steps_list.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "convergence study needs at least 4 step counts, got {}",
            steps_list.len()
        )));
    }
    let lo = *steps_list.iter().min().expect("non-empty");
    let hi = *steps_list.iter().max().expect("non-empty");
    if lo == 0 || hi < 8 * lo {
        return Err(Error::InvalidConfig(format!(
            "step counts must span at least 8x, got {lo}..{hi}"
        )));
    }
    let reference = reference_solve(
        &problem.initial,
        &problem.input,
        problem.predictor.as_ref(),
        schedule,
        dense_steps,
    )?;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &method in methods {
        let cfg = SolverConfig {
            order: method.order,
            ups: false,
            queue: method.queue,
            ..SolverConfig::default()
        };
        let mut points = Vec::with_capacity(steps_list.len());
        for &m in steps_list {
            let cfg = SolverConfig { steps: m, ..cfg };
            cfg.validate()?;
            let grid = schedule.time_grid(m)?;
            let p = problem.predictor.as_ref();
            let traj = if method.queue {
                queue_solve_grid(&cfg, &grid, &problem.initial, &problem.input, p, schedule)?
            } else {
                solve_grid(&cfg, &grid, &problem.initial, &problem.input, p, schedule)?
            };
            let error = traj.final_state().max_abs_diff(&reference)?;
            points.push((m, error));
            rows.push(StudyRow {
                method,
                steps: m,
                error,
                evals: traj.eval_count,
            });
        }
        slopes.push((method, fit_slope(&points)));
    }
    Ok(StudyReport { rows, slopes })
}
