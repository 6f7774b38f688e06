use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uso_core::anchor::{verify_stacked, StackedProof};
use uso_core::asset::{verify_provenance, Asset, ProofOfProvenance, TrustBundle};
use uso_core::crypto::Digest;
use uso_core::trie::RootDigest;
use uso_simnet::actors::Actor;
use uso_simnet::artifact;
use uso_simnet::{Scenario, SimError, World};

/// Run protocol scenarios and check asset artifacts.
#[derive(Parser)]
#[command(name = "uso-simnet", version)]
struct Cli {
    /// Machine-readable output; errors go to stderr as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario script.
    Run {
        script: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the delivered-message transcript here as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Export every holding, its provenance and the holder's trust bundle.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Check possession of an asset against a trust bundle.
    VerifyAsset {
        asset: PathBuf,
        provenance: PathBuf,
        /// Defaults to `trust.bundle` beside the asset.
        #[arg(long)]
        roots: Option<PathBuf>,
    },
    /// Check a stacked proof against a top-level root given in hex.
    VerifyStacked { proof: PathBuf, top: String },
    /// Decode an artifact file.
    Inspect { file: PathBuf },
}

/// Outcome of a command: passed, failed a check, or could not run.
enum Outcome {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match dispatch(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            if json {
                eprintln!("{}", serde_json::json!({ "error": { "kind": e.kind, "message": e.message } }));
            } else {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(2)
        }
    }
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let kind = match e {
            SimError::Schema(_) => "schema",
            SimError::UnknownActor(_) => "unknown_actor",
            SimError::Io(_) => "io",
            SimError::StepFailure { .. } => "step_failure",
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<artifact::ArtifactError> for CliError {
    fn from(e: artifact::ArtifactError) -> Self {
        CliError { kind: "artifact", message: e.to_string() }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError { kind: "io", message: format!("{}: {e}", path.display()) }
}

fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    match cli.cmd {
        Cmd::Run { script, seed, transcript, artifacts } => run(&script, seed, transcript, artifacts, cli.json),
        Cmd::VerifyAsset { asset, provenance, roots } => {
            let roots = roots.unwrap_or_else(|| asset.with_file_name("trust.bundle"));
            let a: Asset = artifact::read(&asset)?;
            let p: ProofOfProvenance = artifact::read(&provenance)?;
            let bundle: TrustBundle = artifact::read(&roots)?;
            let policy = bundle.policy().map_err(|message| CliError { kind: "trust", message })?;
            let report = verify_provenance(&a, &p, &policy);
            if cli.json {
                println!("{}", serde_json::json!({ "valid": report.is_valid(), "findings": report.findings }));
            } else {
                for f in &report.findings {
                    let at = f.index.map(|j| format!(" [{j}]")).unwrap_or_default();
                    match f.failure {
                        None => println!("PASS {:?}{at}", f.check),
                        Some(why) => println!("FAIL {:?}{at}: {why:?}", f.check),
                    }
                }
                println!("{}", if report.is_valid() { "valid" } else { "invalid" });
            }
            Ok(if report.is_valid() { Outcome::Pass } else { Outcome::Fail })
        }
        Cmd::VerifyStacked { proof, top } => {
            let p: StackedProof = artifact::read(&proof)?;
            let top = Digest::from_hex(top.trim())
                .map_err(|e| CliError { kind: "input", message: format!("top root: {e}") })?;
            let ok = verify_stacked(&p, &RootDigest(top));
            if cli.json {
                println!("{}", serde_json::json!({ "valid": ok, "depth": p.depth() }));
            } else {
                println!("{}", if ok { "valid" } else { "invalid" });
            }
            Ok(if ok { Outcome::Pass } else { Outcome::Fail })
        }
        Cmd::Inspect { file } => {
            let bytes = std::fs::read(&file).map_err(|e| io_err(&file, e))?;
            let v = artifact::inspect(&bytes)?;
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            Ok(Outcome::Pass)
        }
    }
}

fn run(
    script: &Path,
    seed: Option<u64>,
    transcript: Option<PathBuf>,
    artifacts: Option<PathBuf>,
    json: bool,
) -> Result<Outcome, CliError> {
    let scenario = Scenario::load(script)?;
    let world = World::run(&scenario, seed)?;
    let report = world.report();
    if let Some(path) = transcript {
        std::fs::write(&path, report.transcript.to_jsonl()).map_err(|e| io_err(&path, e))?;
    }
    if let Some(dir) = artifacts {
        export(&world, &dir)?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("scenario {} (seed {})", report.scenario, report.seed);
        for e in &report.events {
            let step = e.step.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            println!("  [{step:>3} t={:<4}] {:<10} {:<16} {}", e.tick, e.actor, e.code, e.detail);
        }
        for a in &report.assertions {
            println!("{} step {} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.step, a.op, a.detail);
        }
        if let Some((i, why)) = &report.failure {
            println!("STEP_FAILURE step {i}: {why}");
        }
        println!("{} messages, {}", report.transcript.records.len(), if report.passed() { "passed" } else { "failed" });
    }
    Ok(if report.passed() { Outcome::Pass } else { Outcome::Fail })
}

/// `<dir>/<consumer>/<asset>.{asset,prov,stack}` plus `trust.bundle`.
fn export(world: &World, dir: &Path) -> Result<(), CliError> {
    for (name, actor) in &world.actors {
        let Actor::Consumer(c) = actor else { continue };
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
        artifact::write(&sub.join("trust.bundle"), &c.book.bundle(&world.dir))?;
        for (handle, h) in &c.holdings {
            artifact::write(&sub.join(format!("{handle}.asset")), &h.asset)?;
            artifact::write(&sub.join(format!("{handle}.prov")), &h.provenance)?;
        }
        for (handle, (proof, top)) in &c.stacks {
            artifact::write(&sub.join(format!("{handle}.stack")), proof)?;
            let p = sub.join(format!("{handle}.top"));
            std::fs::write(&p, top.0.to_hex()).map_err(|e| io_err(&p, e))?;
        }
    }
    Ok(())
}
