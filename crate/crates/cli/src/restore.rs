use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use dgsolver::image_io::{load_image, save_image};
use dgsolver::metrics::{psnr, ssim, SSIM_WINDOW};
use dgsolver::predictors::{builtin_predictor, FixedPredictor};
use dgsolver::protocol::spawn_external_predictor;
use dgsolver::{sample_terminal, solve, Predictor, SeededRng, TensorField};

use crate::args::{ScheduleArgs, SolverArgs};

#[derive(Debug, Args)]
pub struct RestoreArgs {
    /// Degraded input image (.png or .pgm).
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Where to write the restored image.
    #[arg(long)]
    pub out: PathBuf,
    /// Predictor: a built-in spec (constant:C[,E], echo, gaussian:MU,S,
    /// poly:A..;B.., transcendental), `oracle` for the exact residual
    /// against --reference, `external:CMD` or `tcp:HOST:PORT`.
    #[arg(long)]
    pub predictor: String,
    /// Clean image for metrics (and for the `oracle` predictor).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Initial state as raw little-endian f32 values instead of sampling.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Write per-step trajectory CSV here.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn open_predictor(spec: &str, reference: Option<&TensorField>, degraded: &TensorField) -> Result<Box<dyn Predictor>> {
    if spec == "oracle" {
        let clean = reference.context("the oracle predictor needs --reference")?;
        return Ok(Box::new(FixedPredictor::exact_residual(clean, degraded)?));
    }
    if let Some(cmd) = spec.strip_prefix("external:") {
        return Ok(Box::new(spawn_external_predictor(cmd)?));
    }
    if spec.starts_with("tcp:") {
        return Ok(Box::new(spawn_external_predictor(spec)?));
    }
    Ok(builtin_predictor(spec)?)
}

fn read_raw_f32(path: &Path, like: &TensorField) -> Result<TensorField> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() != 4 * like.len() {
        bail!(
            "{}: expected {} f32 values ({} bytes), found {} bytes",
            path.display(),
            like.len(),
            4 * like.len(),
            bytes.len()
        );
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok(TensorField::new(like.shape().to_vec(), data)?)
}

pub fn run(args: &RestoreArgs) -> Result<()> {
    let schedule = args.schedule.build()?;
    let cfg = args.solver.config()?;
    let degraded = load_image(&args.input)?;
    let reference = args.reference.as_deref().map(load_image).transpose()?;
    if let Some(r) = &reference {
        r.ensure_same_shape(&degraded).context("reference and input differ in size")?;
    }
    let predictor = open_predictor(&args.predictor, reference.as_ref(), &degraded)?;
    let initial = match &args.init {
        Some(p) => read_raw_f32(p, &degraded)?,
        None => sample_terminal(&schedule, degraded.shape(), &mut SeededRng::new(cfg.seed))?,
    };
    let traj = solve(&cfg, &initial, &degraded, predictor.as_ref(), &schedule)?;
    if let Some(p) = &args.trajectory {
        let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        traj.write_csv(f)?;
    }
    println!("predictor evals: {}", traj.eval_count);
    let restored = traj.into_final_state().clamp(0.0, 1.0);
    save_image(&restored, &args.out)?;
    if let Some(clean) = &reference {
        // score what was written, not the unquantized state
        let written = load_image(&args.out)?;
        println!("PSNR: {:.4} dB", psnr(&written, clean, 1.0)?);
        let spatial = &written.shape()[written.shape().len() - 2..];
        if spatial.iter().all(|&e| e >= SSIM_WINDOW) {
            println!("SSIM: {:.6}", ssim(&written, clean)?);
        } else {
            println!("SSIM: n/a (image smaller than {SSIM_WINDOW}x{SSIM_WINDOW})");
        }
    }
    Ok(())
}
