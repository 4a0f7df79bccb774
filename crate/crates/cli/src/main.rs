use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use condexit::config::{parse_config, ExperimentConfig};
use condexit::costing::{compute_cost, survival_curve};
use condexit::dynamics::{simulate_ensemble, ControlSpec, ParticleEnsemble};
use condexit::experiments::{
    run_mimicking, run_truncation, run_value_comparison, ExperimentReport,
};
use condexit::io::{
    cost_rows, emit_outputs, paths_csv, read_text, survival_rows, OutputWriter, RunManifest,
};
use condexit::projection::{as_markovian_control, estimate_projection, DriftField};

/// Killed controlled diffusions: simulation, Markovian projection, costs.
#[derive(Parser)]
#[command(name = "condexit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Disables the Brownian-bridge crossing correction.
    #[arg(long)]
    no_bridge_correction: bool,
}

#[derive(Args)]
struct DriftArg {
    /// Simulate under a serialized drift field instead of the configured control.
    #[arg(long)]
    drift: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates one ensemble and writes its summary and survival curve.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        drift: DriftArg,
        /// Also dump the paths of the first N particles.
        #[arg(long, value_name = "N")]
        dump_paths: Option<usize>,
    },
    /// Simulates the configured control and writes its estimated projection.
    Project {
        #[command(flatten)]
        common: Common,
    },
    /// Simulates one ensemble and writes its conditional cost.
    Cost {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        drift: DriftArg,
    },
    /// Runs one verification pipeline.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Mimicking,
    Value,
    Truncation,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `SOURCE_DATE_EPOCH` when set, so reruns can be byte-identical.
fn timestamp() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        return epoch;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let text = read_text(&common.config)?;
    let mut config = parse_config(&text)
        .with_context(|| format!("invalid config {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.no_bridge_correction {
        config.bridge_correction = false;
    }
    if let Some(n) = common.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(config)
}

fn load_control(
    config: &ExperimentConfig,
    drift: &DriftArg,
) -> anyhow::Result<(ControlSpec, Option<String>)> {
    let Some(path) = &drift.drift else {
        return Ok((config.control.build(), None));
    };
    let text = read_text(path)?;
    let field: DriftField = serde_json::from_str(&text)
        .with_context(|| format!("invalid drift field {}", path.display()))?;
    if field.domain() != &config.domain || field.grid() != &config.grid() {
        bail!(
            "drift field {} does not match the configured domain and time grid",
            path.display()
        );
    }
    let hash = condexit::config::canonical_hash(&text);
    Ok((as_markovian_control(field), hash))
}

fn simulate(config: &ExperimentConfig, control: &ControlSpec) -> anyhow::Result<ParticleEnsemble> {
    info!("simulating {} particles", config.n_particles);
    Ok(simulate_ensemble(control, &config.simulation_params())?)
}

fn manifest(
    config: &ExperimentConfig,
    seeds: BTreeMap<String, u64>,
    started: u64,
    drift_hash: Option<String>,
) -> RunManifest {
    let mut m = RunManifest::new(config.hash(), seeds, started, timestamp());
    if let Some(h) = drift_hash {
        m.inputs.insert("drift".into(), h);
    }
    m
}

fn seed_map(config: &ExperimentConfig) -> BTreeMap<String, u64> {
    BTreeMap::from([("ensemble".to_string(), config.seed)])
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let started = timestamp();
    match cli.command {
        Command::Simulate {
            common,
            drift,
            dump_paths,
        } => {
            let config = load_config(&common)?;
            let (control, drift_hash) = load_control(&config, &drift)?;
            let ensemble = simulate(&config, &control)?;
            let mut out = OutputWriter::create(&common.out)?;
            out.write_json("ensemble.json", &ensemble.summary())?;
            out.write_csv(
                "survival.csv",
                &["source", "t", "survival", "stderr"],
                survival_rows("ensemble", &survival_curve(&ensemble)),
            )?;
            if let Some(n) = dump_paths {
                let (header, rows) = paths_csv(&ensemble, n);
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                out.write_csv("paths.csv", &header, rows)?;
            }
            finish(
                out,
                manifest(&config, seed_map(&config), started, drift_hash),
                &common.out,
            )?;
            Ok(true)
        }
        Command::Project { common } => {
            let config = load_config(&common)?;
            let ensemble = simulate(&config, &config.control.build())?;
            let field = estimate_projection(&ensemble, &config.bins)?;
            let mut out = OutputWriter::create(&common.out)?;
            out.write_json("ensemble.json", &ensemble.summary())?;
            out.write_json("drift.json", &field)?;
            finish(
                out,
                manifest(&config, seed_map(&config), started, None),
                &common.out,
            )?;
            Ok(true)
        }
        Command::Cost { common, drift } => {
            let config = load_config(&common)?;
            let (control, drift_hash) = load_control(&config, &drift)?;
            let ensemble = simulate(&config, &control)?;
            let cost = compute_cost(&ensemble, &config.cost.build())?;
            let label = if drift.drift.is_some() {
                "drift_field".to_string()
            } else {
                config.control.label()
            };
            let mut out = OutputWriter::create(&common.out)?;
            out.write_json("cost.json", &cost)?;
            out.write_csv(
                "costs.csv",
                &["term", "value", "stderr"],
                cost_rows(&label, &cost),
            )?;
            finish(
                out,
                manifest(&config, seed_map(&config), started, drift_hash),
                &common.out,
            )?;
            println!(
                "J = {} (stderr {}, survival at T {})",
                cost.total, cost.stderr_total, cost.survival_at_horizon
            );
            Ok(true)
        }
        Command::Experiment { kind, common } => {
            let config = load_config(&common)?;
            let report = match kind {
                ExperimentKind::Mimicking => run_mimicking(&config)?,
                ExperimentKind::Value => run_value_comparison(&config)?,
                ExperimentKind::Truncation => run_truncation(&config, &config.truncation_levels)?,
            };
            let files = emit_outputs(
                &report,
                manifest(&config, report.seeds.clone(), started, None),
                &common.out,
            )?;
            print_criteria(&report);
            info!("wrote {} files to {}", files.len(), common.out.display());
            Ok(report.passed())
        }
    }
}

fn finish(out: OutputWriter, manifest: RunManifest, dir: &Path) -> anyhow::Result<()> {
    let files = out.finish(manifest)?;
    info!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn print_criteria(report: &ExperimentReport) {
    for c in &report.criteria {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let rel = match c.relation {
            condexit::experiments::Relation::AtMost => "<=",
            condexit::experiments::Relation::AtLeast => ">=",
        };
        println!("{verdict} {} : {} {rel} {}", c.name, c.value, c.threshold);
    }
    for note in &report.notes {
        println!("note: {note}");
    }
}
