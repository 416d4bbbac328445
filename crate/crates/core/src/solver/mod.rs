//! Reverse-ODE solvers.
//!
//! All solvers integrate the semi-linear reverse ODE in its integral form,
//! where the degraded input enters linearly through `delta_bar` and the
//! residual and noise predictions are integrated against `alpha_bar` and
//! `beta_bar` respectively. Order-k steps use finite differences of the
//! predictions measured in the `alpha_bar` (residual) and `beta_bar` (noise)
//! coordinates, which makes them exact for predictions that are polynomials
//! of degree `k - 1` in those coordinates.

mod queue;
mod reference;
mod step;
mod study;

use std::io::Write;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::posterior::{ups_correct, GuidanceWeight, UpsOutcome};
use crate::predictors::{estimate_clean_at, Predictor, Query};
use crate::schedule::{Coefficients, Schedule, DEFAULT_STEPS};
use crate::tensor::TensorField;

pub use queue::{queue_solve, queue_solve_grid};
pub use reference::{reference_solve, MIN_DENSE_STEPS};
pub use step::{step_first, step_second, step_third};
pub use study::{
    convergence_study, fit_slope, SlopeFit, StudyMethod, StudyProblem, StudyReport, StudyRow,
    EXACT_THRESHOLD,
};

/// How the queue sampler produces the state it evaluates at each grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueueMode {
    /// Overlapping two-interval windows: every window starts from the
    /// accurate state two grid points back and evaluates at the accurate
    /// state produced by the previous window.
    #[default]
    Window,
    /// Evaluates at a first-order extrapolation from the queued entry and
    /// queues that tuple instead of the accurate state.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub order: usize,
    pub r: f64,
    pub r1: f64,
    pub r2: f64,
    pub steps: usize,
    pub ups: bool,
    pub guidance: GuidanceWeight,
    pub queue: bool,
    pub queue_mode: QueueMode,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            order: 2,
            r: 0.5,
            r1: 1.0 / 3.0,
            r2: 2.0 / 3.0,
            steps: DEFAULT_STEPS,
            ups: true,
            guidance: GuidanceWeight::default(),
            queue: false,
            queue_mode: QueueMode::default(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_order(order: usize) -> Self {
        Self {
            order,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(1..=3).contains(&self.order) {
            return bad(format!("order must be 1, 2 or 3, got {}", self.order));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return bad(format!("r must lie in (0, 1), got {}", self.r));
        }
        if !(0.0 < self.r1 && self.r1 < self.r2 && self.r2 < 1.0) {
            return bad(format!("need 0 < r1 < r2 < 1, got r1={} r2={}", self.r1, self.r2));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.queue && self.order != 2 {
            return bad(format!("queue sampling requires order 2, got {}", self.order));
        }
        Ok(())
    }

    fn ups_weight(&self) -> Option<GuidanceWeight> {
        self.ups.then_some(self.guidance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub state: TensorField,
    /// Cumulative predictor evaluations when this state was produced.
    pub eval_count: usize,
}

/// Solver states at every grid point, from `T` down to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub eval_count: usize,
}

impl Trajectory {
    fn start(t: f64, state: TensorField) -> Self {
        Self {
            records: vec![TrajectoryRecord {
                t,
                state,
                eval_count: 0,
            }],
            eval_count: 0,
        }
    }

    fn push(&mut self, t: f64, state: TensorField, eval_count: usize) {
        self.eval_count = eval_count;
        self.records.push(TrajectoryRecord {
            t,
            state,
            eval_count,
        });
    }

    pub fn final_state(&self) -> &TensorField {
        &self.records.last().expect("trajectory is never empty").state
    }

    pub fn into_final_state(mut self) -> TensorField {
        self.records.pop().expect("trajectory is never empty").state
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// Writes `step,t,eval_count,checksum`; the checksum is the first 16 hex
    /// digits of SHA-256 over the state's little-endian f64 bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "t", "eval_count", "checksum"])?;
        for (i, r) in self.records.iter().enumerate() {
            w.write_record([
                i.to_string(),
                r.t.to_string(),
                r.eval_count.to_string(),
                state_checksum(&r.state),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn state_checksum(state: &TensorField) -> String {
    let mut h = Sha256::new();
    for v in state.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Predictor outputs at one `(t, state)`, with the noise already
/// UPS-corrected when guidance is on.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub t: f64,
    pub coeffs: Coefficients,
    pub res: TensorField,
    pub eps: TensorField,
    pub clean: TensorField,
    pub derived_eps: bool,
}

/// Counts predictor calls and applies UPS; warns once per solve when the
/// guidance norm is degenerate.
pub(crate) struct Evaluator<'a> {
    predictor: &'a dyn Predictor,
    input: &'a TensorField,
    schedule: &'a Schedule,
    ups: Option<GuidanceWeight>,
    evals: usize,
    warned: bool,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(
        predictor: &'a dyn Predictor,
        input: &'a TensorField,
        schedule: &'a Schedule,
        ups: Option<GuidanceWeight>,
    ) -> Self {
        Self {
            predictor,
            input,
            schedule,
            ups,
            evals: 0,
            warned: false,
        }
    }

    pub(crate) fn evals(&self) -> usize {
        self.evals
    }

    pub(crate) fn input(&self) -> &TensorField {
        self.input
    }

    pub(crate) fn coeffs(&self, t: f64) -> Result<Coefficients> {
        self.schedule.eval(t)
    }

    pub(crate) fn eval(&mut self, state: &TensorField, t: f64) -> Result<Evaluation> {
        let q = Query::new(state, self.input, t, self.schedule)?;
        let out = self.predictor.predict(&q)?;
        self.evals += 1;
        let (res, eps, derived_eps) = out.resolve(&q)?;
        let clean = estimate_clean_at(state, self.input, &res, &eps, &q.coeffs)?;
        let eps = match self.ups {
            None => eps,
            Some(weight) => {
                let (eps, outcome) = ups_correct(&eps, &q, &clean, &res, self.predictor, weight)?;
                if outcome == UpsOutcome::Degenerate && !self.warned {
                    self.warned = true;
                    log::warn!(
                        "UPS guidance norm is below threshold at t={t}; guidance is a no-op{}",
                        if derived_eps {
                            " (noise is derived from the residual, so this holds identically)"
                        } else {
                            ""
                        }
                    );
                }
                eps
            }
        };
        Ok(Evaluation {
            t,
            coeffs: q.coeffs,
            res,
            eps,
            clean,
            derived_eps,
        })
    }
}

fn check_inputs(state: &TensorField, input: &TensorField) -> Result<()> {
    state.ensure_same_shape(input)?;
    state.check_finite("initial state")?;
    input.check_finite("degraded input")
}

fn check_grid(grid: &[f64], schedule: &Schedule) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidConfig("time grid needs at least two points".into()));
    }
    for w in grid.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidConfig(format!(
                "time grid must be strictly decreasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    for &t in grid {
        schedule.eval(t)?;
    }
    Ok(())
}

/// Runs the configured solver over `time_grid(cfg.steps)`.
pub fn solve(
    cfg: &SolverConfig,
    initial: &TensorField,
    input: &TensorField,
    predictor: &dyn Predictor,
    schedule: &Schedule,
) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = schedule.time_grid(cfg.steps)?;
    if cfg.queue {
        queue::queue_solve_grid(cfg, &grid, initial, input, predictor, schedule)
    } else {
        solve_grid(cfg, &grid, initial, input, predictor, schedule)
    }
}

/// Naive order-k stepping over an arbitrary strictly decreasing grid.
pub fn solve_grid(
    cfg: &SolverConfig,
    grid: &[f64],
    initial: &TensorField,
    input: &TensorField,
    predictor: &dyn Predictor,
    schedule: &Schedule,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_inputs(initial, input)?;
    check_grid(grid, schedule)?;
    let mut ev = Evaluator::new(predictor, input, schedule, cfg.ups_weight());
    let mut traj = Trajectory::start(grid[0], initial.clone());
    let mut state = initial.clone();
    for w in grid.windows(2) {
        let (t_prev, t_next) = (w[0], w[1]);
        state = match cfg.order {
            1 => step::first(&mut ev, &state, t_prev, t_next)?,
            2 => step::second(&mut ev, &state, t_prev, t_next, cfg.r)?,
            _ => step::third(&mut ev, &state, t_prev, t_next, cfg.r1, cfg.r2)?,
        };
        traj.push(t_next, state.clone(), ev.evals());
    }
    Ok(traj)
}
