//! `isinglab` — reproducible pipelines for kinetic-Ising simulation and
//! inverse inference.
//!
//! Every run resolves its arguments (filling seed-derived defaults), writes
//! a manifest next to its primary output (`<out>.manifest.json`) recording
//! the tool version and the full configuration, and then executes. Rerunning
//! from that manifest reproduces every output byte for byte: all random
//! draws are seeded, and no output embeds timestamps or machine state.
//!
//! Exit codes: 0 success; 2 the request was malformed (bad flags, sizes,
//! unreadable inputs); 3 the computation failed numerically (singular
//! matrices, divergence) — in that case a `<out>.diagnostics.json` sidecar
//! describes the failure.

mod args;
mod exec;
mod popgen_cmd;
mod sweep_cmd;

use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};

use isinglab::error::{Error, ExitClass, Result};

use args::{BinarizeCmd, Cli, Cmd, InitArg, PopgenCmd};

#[derive(Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    #[serde(flatten)]
    cmd: Cmd,
}

/// The output path that sidecar files (manifest, diagnostics) derive from.
fn primary_out(cmd: &Cmd) -> Option<&PathBuf> {
    match cmd {
        Cmd::Gen(a) => Some(&a.out),
        Cmd::Simulate(a) => Some(&a.out),
        Cmd::Infer(a) => Some(&a.out),
        Cmd::Eval(a) => Some(&a.out),
        Cmd::Popgen(PopgenCmd::Evolve(a)) => Some(&a.out),
        Cmd::Popgen(PopgenCmd::Infer(a)) => Some(&a.out),
        Cmd::Popgen(PopgenCmd::PhaseDiagram(a)) => Some(&a.out),
        Cmd::Binarize(BinarizeCmd::Events(a)) => Some(&a.out),
        Cmd::Binarize(BinarizeCmd::Volumes(a)) => Some(&a.out),
        Cmd::Sweep(a) => Some(&a.out),
        Cmd::RerunFromManifest(_) => None,
    }
}

fn sidecar(out: &Path, ext: &str) -> PathBuf {
    let mut p = out.to_path_buf();
    p.set_extension(ext);
    p
}

/// Fill seed-derived defaults so the manifest records a complete config.
fn resolve(cmd: &mut Cmd) {
    match cmd {
        Cmd::Gen(a) => {
            if a.theta_lo.is_some() && a.theta_seed.is_none() {
                a.theta_seed = Some(a.seed.wrapping_add(1));
            }
        }
        Cmd::Simulate(a) => {
            if a.init == InitArg::Random && a.init_seed.is_none() {
                a.init_seed = Some(a.seed.wrapping_add(1));
            }
        }
        _ => {}
    }
}

fn write_manifest(cmd: &Cmd) -> Result<()> {
    let Some(out) = primary_out(cmd) else {
        return Ok(());
    };
    let manifest = Manifest {
        tool: "isinglab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        cmd: cmd.clone(),
    };
    std::fs::write(
        sidecar(out, "manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

fn execute(cmd: &Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen(a) => exec::gen(a),
        Cmd::Simulate(a) => exec::simulate(a),
        Cmd::Infer(a) => exec::infer(a),
        Cmd::Eval(a) => exec::eval(a),
        Cmd::Popgen(PopgenCmd::Evolve(a)) => popgen_cmd::evolve_cmd(a),
        Cmd::Popgen(PopgenCmd::Infer(a)) => popgen_cmd::infer_cmd(a),
        Cmd::Popgen(PopgenCmd::PhaseDiagram(a)) => popgen_cmd::phase_diagram_cmd(a),
        Cmd::Binarize(BinarizeCmd::Events(a)) => exec::binarize_events(a),
        Cmd::Binarize(BinarizeCmd::Volumes(a)) => exec::binarize_volumes(a),
        Cmd::Sweep(a) => sweep_cmd::run(a),
        Cmd::RerunFromManifest(a) => {
            let text = std::fs::read_to_string(&a.manifest)?;
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("not a manifest file: {e}")))?;
            if manifest.tool != "isinglab" {
                return Err(Error::Format(format!(
                    "manifest was written by '{}', not isinglab",
                    manifest.tool
                )));
            }
            if manifest.version != env!("CARGO_PKG_VERSION") {
                log::warn!(
                    "manifest was written by version {}, this is {}",
                    manifest.version,
                    env!("CARGO_PKG_VERSION")
                );
            }
            let mut inner = manifest.cmd;
            resolve(&mut inner);
            run_one(&inner)
        }
    }
}

fn run_one(cmd: &Cmd) -> Result<()> {
    write_manifest(cmd)?;
    execute(cmd)
}

fn init_worker_pool() -> Result<()> {
    if let Ok(v) = std::env::var("ISINGLAB_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            Error::Parameter(format!(
                "ISINGLAB_THREADS must be a positive integer, got '{v}'"
            ))
        })?;
        if n == 0 {
            return Err(Error::Parameter(
                "ISINGLAB_THREADS must be at least 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Parameter(format!("could not size the worker pool: {e}")))?;
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_worker_pool() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
    let mut cmd = cli.cmd;
    resolve(&mut cmd);
    if let Err(e) = run_one(&cmd) {
        eprintln!("error: {e}");
        let code = match e.exit_class() {
            ExitClass::Parameter => 2,
            ExitClass::Numerical => 3,
        };
        if code == 3 {
            if let Some(out) = primary_out(&cmd) {
                let diag = serde_json::json!({
                    "error": e.to_string(),
                    "class": "numerical",
                    "exit_code": 3,
                });
                let text = serde_json::to_string_pretty(&diag).expect("static shape");
                let _ = std::fs::write(sidecar(out, "diagnostics.json"), text + "\n");
            }
        }
        std::process::exit(code);
    }
}
