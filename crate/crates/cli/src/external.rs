use std::io;
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use dgsolver::predictors::builtin_predictor;
use dgsolver::protocol::{conformance_check, serve as serve_stream, ConformanceOptions, ExternalPredictor};
use dgsolver::Predictor;

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Shell command that speaks the protocol on stdin/stdout.
    #[arg(long, conflicts_with = "tcp", required_unless_present = "tcp")]
    pub cmd: Option<String>,
    /// Address of a listening server.
    #[arg(long)]
    pub tcp: Option<String>,
    /// Built-in predictor the server is expected to match.
    #[arg(long)]
    pub expect: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
}

/// Returns whether every fixture passed.
pub fn check(args: &CheckArgs) -> Result<bool> {
    if !(args.timeout > 0.0 && args.timeout.is_finite()) {
        bail!("--timeout must be positive");
    }
    let target = match (&args.cmd, &args.tcp) {
        (Some(cmd), _) => cmd.clone(),
        (None, Some(addr)) => format!("tcp:{addr}"),
        (None, None) => bail!("one of --cmd or --tcp is required"),
    };
    let expected = args.expect.as_deref().map(builtin_predictor).transpose()?;
    let ext = ExternalPredictor::open(&target, Duration::from_secs_f64(args.timeout))
        .with_context(|| format!("opening {target}"))?;
    let report = conformance_check(
        &ext,
        ConformanceOptions {
            expected: expected.as_deref(),
            // echo is the identity on f32 inputs, so nothing may be lost
            byte_exact: args.expect.as_deref() == Some("echo"),
        },
    );
    println!("{report}");
    Ok(report.all_passed())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Built-in predictor to host.
    #[arg(long)]
    pub predictor: String,
    /// Listen on this address instead of stdin/stdout.
    #[arg(long)]
    pub tcp: Option<String>,
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let predictor: Arc<dyn Predictor> = Arc::from(builtin_predictor(&args.predictor)?);
    let Some(addr) = &args.tcp else {
        let stats = serve_stream(io::stdin().lock(), io::stdout().lock(), predictor.as_ref())?;
        log::info!("served {} requests, {} errors", stats.requests, stats.errors);
        return Ok(());
    };
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let p = Arc::clone(&predictor);
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            let result = stream
                .try_clone()
                .map_err(dgsolver::Error::from)
                .and_then(|reader| serve_stream(reader, stream, p.as_ref()));
            if let Err(e) = result {
                log::warn!("connection {peer:?}: {e}");
            }
        });
    }
    Ok(())
}
