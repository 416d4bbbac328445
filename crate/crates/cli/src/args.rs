use anyhow::{bail, Context, Result};
use clap::Args;
use dgsolver::schedule::{build_schedule, Schedule, ScheduleConfig, ScheduleFamily, DEFAULT_STEPS};
use dgsolver::SolverConfig;

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    /// Coefficient schedule family: uniform or linear-ramp.
    #[arg(long = "schedule-family", visible_alias = "family", default_value = "linear-ramp")]
    pub family: ScheduleFamily,
    /// Fraction of the degraded input removed at the horizon.
    #[arg(long = "delta-T", default_value_t = 1.0)]
    pub delta_t: f64,
    /// Noise scale at the horizon.
    #[arg(long = "beta-T", default_value_t = 1.0)]
    pub beta_t: f64,
    /// Diffusion horizon T.
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
}

impl ScheduleArgs {
    pub fn build(&self) -> Result<Schedule> {
        Ok(build_schedule(ScheduleConfig {
            horizon: self.horizon,
            family: self.family,
            delta_t: self.delta_t,
            beta_t: self.beta_t,
        })?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Number of solver steps M.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    /// Solver order (1, 2 or 3).
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Intermediate point fraction for second-order steps.
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    /// First intermediate point fraction for third-order steps.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub r1: f64,
    /// Second intermediate point fraction for third-order steps.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub r2: f64,
    /// Enable posterior guidance (default).
    #[arg(long, overrides_with = "no_ups")]
    pub ups: bool,
    /// Disable posterior guidance.
    #[arg(long, overrides_with = "ups")]
    pub no_ups: bool,
    /// Fixed guidance sigma instead of the adaptive weight.
    #[arg(long)]
    pub guidance_sigma: Option<f64>,
    /// Queue-based second-order sampling (one predictor call per step).
    #[arg(long)]
    pub queue: bool,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SolverArgs {
    pub fn config(&self) -> Result<SolverConfig> {
        let guidance = match self.guidance_sigma {
            Some(s) => dgsolver::posterior::GuidanceWeight::FixedSigma(s),
            None => Default::default(),
        };
        let cfg = SolverConfig {
            order: self.order,
            r: self.r,
            r1: self.r1,
            r2: self.r2,
            steps: self.steps,
            ups: !self.no_ups,
            guidance,
            queue: self.queue,
            seed: self.seed,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `a,b,c` into numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow::anyhow!("bad list entry {p:?}: {e}")))
        .collect()
}

/// Parses `start:stop:count` into an inclusive evenly spaced grid.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [start, stop, count] = parts.as_slice() else {
        bail!("expected START:STOP:COUNT, got {s:?}");
    };
    let start: f64 = start.parse().with_context(|| format!("bad range start in {s:?}"))?;
    let stop: f64 = stop.parse().with_context(|| format!("bad range stop in {s:?}"))?;
    let count: usize = count.parse().with_context(|| format!("bad range count in {s:?}"))?;
    Ok(dgsolver::posterior::linspace(start, stop, count)?)
}
