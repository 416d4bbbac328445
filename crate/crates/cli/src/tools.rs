use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use dgsolver::posterior::{jensen_sweep, write_jensen_csv};
use dgsolver::solver::{convergence_study, StudyMethod, StudyProblem};

use crate::args::{parse_list, parse_range, ScheduleArgs};

/// Opens `path` for writing, or stdout when absent.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// constant, polynomial[:DEGREE], transcendental or gaussian-oracle.
    #[arg(long, default_value = "transcendental")]
    pub problem: String,
    /// Comma separated methods; `2q` is the queued second-order sampler.
    #[arg(long, default_value = "1,2,3")]
    pub orders: String,
    #[arg(long, default_value = "8,16,32,64,128")]
    pub steps_list: String,
    /// Steps of the dense reference integrator.
    #[arg(long, default_value_t = 100_000)]
    pub dense_steps: usize,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

pub fn study(args: &StudyArgs) -> Result<()> {
    let schedule = args.schedule.build()?;
    let problem = StudyProblem::named(&args.problem)?;
    let methods: Vec<StudyMethod> = parse_list(&args.orders)?;
    let steps: Vec<usize> = parse_list(&args.steps_list)?;
    let report = convergence_study(&problem, &schedule, &methods, &steps, args.dense_steps)?;
    report.write_csv(output(args.out.as_deref())?)?;
    for (method, fit) in &report.slopes {
        eprintln!("slope order {method}: {fit}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct JensenArgs {
    /// Sigma grid as START:STOP:COUNT.
    #[arg(long, default_value = "0.05:20:100")]
    pub sigma: String,
    /// Comma separated first-moment values.
    #[arg(long, default_value = "1,10,100,1000")]
    pub m1: String,
    /// Dimension of the measurement.
    #[arg(long, default_value_t = 1)]
    pub d: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn jensen(args: &JensenArgs) -> Result<()> {
    let rows = jensen_sweep(&parse_range(&args.sigma)?, &parse_list(&args.m1)?, args.d)?;
    write_jensen_csv(&rows, output(args.out.as_deref())?)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScheduleCmdArgs {
    /// Number of intervals of the printed grid.
    #[arg(long, default_value_t = dgsolver::schedule::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

pub fn schedule(args: &ScheduleCmdArgs) -> Result<()> {
    let s = args.schedule.build()?;
    let mut grid = s.time_grid(args.steps)?;
    grid.reverse();
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["t", "alpha_bar", "beta_bar", "delta_bar", "h", "l", "g2"])?;
    for t in grid {
        let c = s.eval(t)?;
        let r = s.eval_rates(t)?;
        // adding 0.0 turns -0 into 0
        let row = [t, c.alpha_bar, c.beta_bar, c.delta_bar, r.h, r.l, r.g2].map(|v| v + 0.0);
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
