//! `qcb-lab`: batch front end for the qcb-core laboratory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod inputs;
mod manifest;
mod output;

use commands::check::CheckArgs;
use commands::cof::CofArgs;
use commands::estimate::EstimateArgs;
use commands::generate::GenerateArgs;
use commands::qcb::QcbArgs;
use commands::relax::RelaxArgs;
use commands::wlsc::WlscArgs;
use commands::Command;
use inputs::Ctx;
use manifest::{manifest_path_for, record, relative_to, sha256_file, Manifest};

#[derive(Parser)]
#[command(name = "qcb-lab", version, about = "Quasiconvexity at the boundary and DiPerna-Majda measure experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    Relax(RelaxArgs),
    Qcb(QcbArgs),
    Generate(GenerateArgs),
    Estimate(EstimateArgs),
    Check(CheckArgs),
    Wlsc(WlscArgs),
    CofCheck(CofArgs),
    /// Re-runs a manifest and compares output hashes.
    Repro(ReproArgs),
}

#[derive(clap::Args)]
struct ReproArgs {
    manifest: PathBuf,
    /// Keep the regenerated outputs here instead of a temporary directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match configure_threads().and_then(|threads| dispatch(cli.command, threads)) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<qcb_core::Error>() {
        Some(qcb_core::Error::RecessionDivergent { .. }) => EXIT_NONCONVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

/// Caps the worker pool at QCB_LAB_THREADS.
fn configure_threads() -> Result<usize> {
    if let Ok(raw) = std::env::var("QCB_LAB_THREADS") {
        let n: usize = raw.trim().parse().context("QCB_LAB_THREADS must be a positive integer")?;
        if n == 0 {
            bail!("QCB_LAB_THREADS must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(rayon::current_num_threads())
}

fn dispatch(cmd: Cmd, threads: usize) -> Result<u8> {
    match cmd {
        Cmd::Relax(a) => execute(a, threads),
        Cmd::Qcb(a) => execute(a, threads),
        Cmd::Generate(a) => execute(a, threads),
        Cmd::Estimate(a) => execute(a, threads),
        Cmd::Check(a) => execute(a, threads),
        Cmd::Wlsc(a) => execute(a, threads),
        Cmd::CofCheck(a) => execute(a, threads),
        Cmd::Repro(a) => repro(&a),
    }
}

fn execute<C: Command>(mut cmd: C, threads: usize) -> Result<u8> {
    let ctx = Ctx { base: PathBuf::from(".") };
    cmd.resolve(&ctx)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let outcome = cmd.run(&ctx)?;
    let wall = clock.elapsed().as_secs_f64();

    let manifest_path = manifest_path_for(Path::new(cmd.out()));
    let dir = match manifest_path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut recorded = cmd.clone();
    let mut inputs = Vec::new();
    for slot in recorded.input_slots() {
        if ctx.is_file(slot) {
            let path = ctx.path(slot);
            inputs.push(record(&dir, &path)?);
            *slot = relative_to(&dir, &path);
        }
    }
    let out_rel = relative_to(&dir, &ctx.path(cmd.out()));
    recorded.set_out(out_rel);
    let outputs = outcome.outputs.iter().map(|p| record(&dir, p)).collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        command: C::NAME.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cmd.seed(),
        config: serde_json::to_value(&recorded)?,
        inputs,
        outputs,
        threads,
        started_unix: started,
        wall_clock_seconds: wall,
    };
    manifest.write(&manifest_path)?;
    for p in &outcome.outputs {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", manifest_path.display());
    if outcome.nonconverged {
        eprintln!("warning: descent did not converge");
        return Ok(EXIT_NONCONVERGENCE);
    }
    Ok(0)
}

fn rerun<C: Command>(manifest: &Manifest, base: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut cmd: C = serde_json::from_value(manifest.config.clone()).context("manifest config does not match the command")?;
    let name = Path::new(cmd.out())
        .file_name()
        .context("manifest config has no output file")?
        .to_owned();
    cmd.set_out(out_dir.join(name).to_string_lossy().into_owned());
    let ctx = Ctx { base: base.to_path_buf() };
    Ok(cmd.run(&ctx)?.outputs)
}

fn repro(args: &ReproArgs) -> Result<u8> {
    let manifest = Manifest::read(&args.manifest)?;
    let base = match args.manifest.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    for input in &manifest.inputs {
        let now = sha256_file(&base.join(&input.path))?;
        if now != input.sha256 {
            bail!("input {} changed since the manifest was written", input.path);
        }
    }
    let tmp;
    let out_dir = match &args.out_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            d.clone()
        }
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let produced = match manifest.command.as_str() {
        "relax" => rerun::<RelaxArgs>(&manifest, &base, &out_dir)?,
        "qcb" => rerun::<QcbArgs>(&manifest, &base, &out_dir)?,
        "generate" => rerun::<GenerateArgs>(&manifest, &base, &out_dir)?,
        "estimate" => rerun::<EstimateArgs>(&manifest, &base, &out_dir)?,
        "check" => rerun::<CheckArgs>(&manifest, &base, &out_dir)?,
        "wlsc" => rerun::<WlscArgs>(&manifest, &base, &out_dir)?,
        "cof-check" => rerun::<CofArgs>(&manifest, &base, &out_dir)?,
        other => bail!("unknown command `{other}` in manifest"),
    };
    let mut identical = true;
    for out in &manifest.outputs {
        let name = Path::new(&out.path).file_name().context("output without a file name")?;
        let fresh = produced.iter().find(|p| p.file_name() == Some(name));
        let status = match fresh {
            Some(p) if sha256_file(p)? == out.sha256 => "identical",
            Some(_) => "DIFFERS",
            None => "MISSING",
        };
        identical &= status == "identical";
        println!("{status} {}", out.path);
    }
    Ok(if identical { 0 } else { EXIT_VALIDATION })
}
