//! `otaspoof`: runs the campaign stages described by one config file.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 missing
//! resource or upstream artifact, 4 runtime failure. Errors are reported on
//! stderr as one JSON object.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otaspoof_core::campaign::{
    device_grid, load_data, load_prepared, prepare, run_attack, run_campaign, run_detect,
    run_replay, run_report, AttackMethod, CampaignConfig, CampaignSummary, Layout, RunOptions,
    Selection,
};
use otaspoof_core::detector::TrainCondition;
use otaspoof_core::Error;
use serde_json::json;

/// Environment variable that overrides `output_root` of the config.
const OUTPUT_ROOT_ENV: &str = "OTASPOOF_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(
    name = "otaspoof",
    version,
    about = "Adversarial attacks on speaker verification with simulated over-the-air replay",
    after_help = "Environment:\n  OTASPOOF_OUTPUT_ROOT  overrides output_root of the config\n  RUST_LOG              log filter (default: warn)\n\nExit codes: 0 ok, 2 config, 3 missing resource, 4 runtime"
)]
struct Cli {
    /// Campaign config file (TOML)
    #[arg(short, long, global = true, default_value = "campaign.toml")]
    config: PathBuf,

    /// Output directory; overrides the config and the environment
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every stage: prepare, attack, replay, detect, report
    Run,
    /// Subsample trials, build models and calibrate thresholds
    Prepare,
    /// Craft digital adversarial samples and score them
    Attack(AttackArgs),
    /// Replay digital samples through the device grid
    Replay(ReplayArgs),
    /// Train the one-class detectors and evaluate the detection rows
    Detect(DetectArgs),
    /// Render success matrices, the detection table and the manifest
    Report,
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// Attack method: pgd or ensemble
    #[arg(long, value_parser = parse_method)]
    method: Option<AttackMethod>,
    /// Surrogate models (comma separated). PGD runs one row per surrogate;
    /// an ensemble takes all models but one
    #[arg(long, value_delimiter = ',')]
    surrogates: Option<Vec<String>>,
    /// Victim models to score (comma separated)
    #[arg(long, value_delimiter = ',')]
    victims: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Loudspeaker preset id or tier (repeatable, comma separated)
    #[arg(long, value_delimiter = ',')]
    speaker: Option<Vec<String>>,
    /// Microphone preset id or tier (repeatable, comma separated)
    #[arg(long, value_delimiter = ',')]
    mic: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Detector training audio: digital-bonafide (rows 1-3) or
    /// ota-bonafide (rows 4a/4b); both when absent
    #[arg(long, value_parser = parse_condition)]
    train_condition: Option<TrainCondition>,
}

fn parse_method(s: &str) -> Result<AttackMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_condition(s: &str) -> Result<TrainCondition, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// An error with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::InvalidAttackConfig(_)
            | Error::InvalidPreset(_) => (2, "config"),
            Error::MissingResource(_) => (3, "missing_resource"),
            _ => (4, "runtime"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        kind: "config",
        message: message.into(),
    }
}

/// Advisory lock on the output root, removed on drop.
struct Lock(PathBuf);

impl Lock {
    fn acquire(root: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(root).map_err(Error::from)?;
        let path = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Failure {
                code: 4,
                kind: "locked",
                message: format!(
                    "{} exists: another command is using this output root",
                    path.display()
                ),
            }),
            Err(e) => Err(Error::from(e).into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn load_config(cli: &Cli) -> Result<CampaignConfig, Failure> {
    let mut cfg = CampaignConfig::load(&cli.config)?;
    if let Some(root) = &cli.output_root {
        cfg.output_root = root.clone();
    } else if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
        cfg.output_root = PathBuf::from(root);
    }
    // relative overrides are relative to the working directory
    let overridden = cli.output_root.is_some()
        || std::env::var_os(OUTPUT_ROOT_ENV).is_some_and(|v| !v.is_empty());
    if overridden && cfg.output_root.is_relative() {
        let cwd = std::env::current_dir().map_err(Error::from)?;
        cfg.output_root = cwd.join(&cfg.output_root);
    }
    Ok(cfg)
}

/// Maps `--method/--surrogates/--victims` onto a stage selection.
fn attack_selection(cfg: &CampaignConfig, args: &AttackArgs) -> Result<Selection, Failure> {
    let ids = cfg.model_ids();
    for m in args.surrogates.iter().chain(&args.victims).flatten() {
        if !ids.contains(m) {
            return Err(config_error(format!("unknown model {m:?}")));
        }
    }
    if let Some(m) = args.method {
        if !cfg.attack_methods.contains(&m) {
            return Err(config_error(format!(
                "attack method {m} is not enabled in the config"
            )));
        }
    }
    let targets = match (&args.method, &args.surrogates) {
        (_, None) => None,
        (Some(AttackMethod::Pgd), Some(s)) => Some(s.clone()),
        (Some(AttackMethod::EnsemblePgd), Some(s)) => {
            let held_out: Vec<String> = ids.iter().filter(|id| !s.contains(id)).cloned().collect();
            if held_out.len() != 1 || s.len() != ids.len() - 1 {
                return Err(config_error(format!(
                    "an ensemble takes all models but one; got {}",
                    s.join(",")
                )));
            }
            Some(held_out)
        }
        (None, Some(_)) => return Err(config_error("--surrogates needs --method")),
    };
    Ok(Selection {
        methods: args.method.map(|m| vec![m]),
        targets,
        victims: args.victims.clone(),
        ..Selection::default()
    })
}

fn summary_json(summary: &CampaignSummary) -> serde_json::Value {
    json!({ "status": "ok", "stages": summary.stages })
}

/// Item-level failures turn into exit code 3 (missing resources) or 4.
fn check_items(summary: &CampaignSummary) -> Result<(), Failure> {
    let failures: Vec<_> = summary.failures().collect();
    if failures.is_empty() {
        return Ok(());
    }
    let missing = failures.iter().any(|f| f.missing_resource);
    Err(Failure {
        code: if missing { 3 } else { 4 },
        kind: if missing {
            "missing_resource"
        } else {
            "runtime"
        },
        message: format!("{} item(s) failed; see failures.json", failures.len()),
    })
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let _lock = Lock::acquire(&cfg.output_dir())?;
    let layout = Layout::new(cfg.output_dir());
    let mut summary = CampaignSummary::default();
    match &cli.command {
        Command::Run => {
            summary = run_campaign(&cfg, &RunOptions::default())?;
            print_reports(&layout);
        }
        Command::Prepare => {
            let data = load_data(&cfg)?;
            let prep = prepare(&cfg, &data)?;
            println!(
                "{}",
                json!({
                    "status": "ok",
                    "trials": prep.trials.len(),
                    "base_count": prep.base.len(),
                    "thresholds": prep.thresholds,
                })
            );
            return Ok(());
        }
        Command::Attack(args) => {
            let sel = attack_selection(&cfg, args)?;
            let data = load_data(&cfg)?;
            let prep = load_prepared(&cfg)?;
            summary
                .stages
                .push(run_attack(&cfg, &data, &prep, &sel, &mut None)?);
        }
        Command::Replay(args) => {
            let sel = Selection {
                speakers: args.speaker.clone(),
                mics: args.mic.clone(),
                ..Selection::default()
            };
            // reject unknown device filters before touching upstream outputs
            device_grid(&cfg, &sel)?;
            let data = load_data(&cfg)?;
            let prep = load_prepared(&cfg)?;
            summary
                .stages
                .push(run_replay(&cfg, &data, &prep, &sel, &mut None)?);
        }
        Command::Detect(args) => {
            let sel = Selection {
                train_conditions: args.train_condition.map(|c| vec![c]),
                ..Selection::default()
            };
            let data = load_data(&cfg)?;
            let prep = load_prepared(&cfg)?;
            summary.stages.push(run_detect(&cfg, &data, &prep, &sel)?);
        }
        Command::Report => {
            let prep = load_prepared(&cfg)?;
            summary.stages.push(run_report(&cfg, &prep)?.1);
            print_reports(&layout);
        }
    }
    summary.write_failures(&layout.failures())?;
    println!("{}", summary_json(&summary));
    check_items(&summary)
}

fn print_reports(layout: &Layout) {
    for name in [
        "digital_success.txt",
        "ota_success.txt",
        "detection_eer.txt",
    ] {
        if let Ok(text) = std::fs::read_to_string(layout.reports().join(name)) {
            eprintln!("{name}\n{text}");
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            // clap uses 2 for usage errors and 0 for --help/--version
            return ExitCode::from(code as u8);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!(
                "{}",
                json!({ "status": "error", "exit_code": f.code, "kind": f.kind, "message": f.message })
            );
            ExitCode::from(f.code)
        }
    }
}
