use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use soliton_dce_cli::config::{validate_config, ConfigError, ExperimentConfig};
use soliton_dce_cli::export::{self, FigureSet};
use soliton_dce_cli::formats::{OutputFormat, OutputWriter};
use soliton_dce_cli::pipeline::{
    self, sha256_hex, PipelineArtifacts, PipelineError, RunManifest, Stage, StageCache,
};

/// Simulator for parametric microwave photon generation driven by
/// counter-propagating Kerr solitons.
#[derive(Parser)]
#[command(name = "soliton-dce", version, about)]
struct Cli {
    /// Configuration file (TOML); omitted runs the reference defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `io.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Stage cache directory (overrides `io.cache_dir`).
    #[arg(long = "stage-cache", global = true)]
    stage_cache: Option<PathBuf>,

    /// Output file format: csv or json (overrides `io.format`).
    #[arg(long, global = true)]
    format: Option<String>,

    /// Recompute stages even when cached artifacts match.
    #[arg(long, global = true)]
    force: bool,

    /// Run the invariant suite only; no output files are written.
    #[arg(long, global = true)]
    check: bool,

    /// Report failed invariant checks without aborting.
    #[arg(long, global = true)]
    ignore_invariants: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the steady dissipative soliton.
    Soliton,
    /// Sample the perturbed index profile over one modulation period.
    Modulate,
    /// Assemble the resonant effective Hamiltonian.
    Hamiltonian,
    /// Evolve the vacuum state, closed- and open-system.
    Evolve,
    /// Concurrence traces, projections, and the persistency table.
    Analyze,
    /// Run every stage, write all interface files and the run manifest.
    Pipeline,
    /// Export figure data from cached artifacts: fig3|fig4|fig5|table1|all.
    Export { which: String },
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("configuration: {0}")]
    ConfigIo(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("invariant checks failed:\n{0}")]
    InvariantFailure(String),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) | AppError::ConfigIo(_) => 2,
            AppError::Pipeline(PipelineError::MissingDependency { .. }) => 4,
            AppError::Pipeline(_) | AppError::InvariantFailure(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, AppError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| AppError::ConfigIo(format!("cannot read {}: {e}", path.display())))?;
            validate_config(&raw)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.io.out_dir = out.display().to_string();
    }
    if let Some(cache) = &cli.stage_cache {
        cfg.io.cache_dir = cache.display().to_string();
    }
    if let Some(format) = &cli.format {
        if OutputFormat::from_name(format).is_none() {
            return Err(AppError::Config(ConfigError {
                errors: vec![format!("--format must be csv or json, got \"{format}\"")],
            }));
        }
        cfg.io.format = format.clone();
    }
    Ok(cfg)
}

fn writer_for(cfg: &ExperimentConfig) -> OutputWriter {
    let format = OutputFormat::from_name(&cfg.io.format).unwrap_or(OutputFormat::Csv);
    OutputWriter::new(&cfg.io.out_dir, format)
}

fn load_cached<P: serde::de::DeserializeOwned>(
    cache: &StageCache,
    hashes: &BTreeMap<Stage, String>,
    stage: Stage,
) -> Result<P, PipelineError> {
    cache
        .load::<P>(stage, &hashes[&stage])
        .ok_or_else(|| PipelineError::MissingDependency {
            needed: stage.name().into(),
            run: stage.name().into(),
        })
}

fn print_checks(checks: &[pipeline::CheckResult]) {
    for c in checks {
        let mark = if c.passed { "PASS" } else if c.fatal { "FAIL" } else { "WARN" };
        println!("[{mark}] {:<35} {}", c.name, c.detail);
    }
}

fn enforce_checks(checks: &[pipeline::CheckResult], ignore: bool) -> Result<(), AppError> {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed && c.fatal)
        .map(|c| format!("  {}: {}", c.name, c.detail))
        .collect();
    if failed.is_empty() || ignore {
        Ok(())
    } else {
        Err(AppError::InvariantFailure(failed.join("\n")))
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let cfg = load_config(&cli)?;
    let cache = StageCache::new(&cfg.io.cache_dir);
    let hashes = pipeline::stage_hashes(&cfg);

    match &cli.command {
        Command::Soliton => {
            let payload = if !cli.force && cfg.io.cache {
                cache.load(Stage::Soliton, &hashes[&Stage::Soliton])
            } else {
                None
            };
            let payload = match payload {
                Some(p) => p,
                None => {
                    let p = pipeline::compute_soliton(&cfg)?;
                    cache.store(Stage::Soliton, &hashes[&Stage::Soliton], &p)?;
                    p
                }
            };
            println!(
                "steady soliton: peak |psi|^2 = {:.6}, residual = {:.3e}, power balance = {:.3e}",
                payload.peak_intensity, payload.residual, payload.power_balance_residual
            );
        }
        Command::Modulate => {
            let soliton = load_cached(&cache, &hashes, Stage::Soliton)?;
            let payload = pipeline::compute_modulation(&cfg, &soliton)?;
            cache.store(Stage::Modulation, &hashes[&Stage::Modulation], &payload)?;
            if !cli.check {
                let mut writer = writer_for(&cfg);
                export::write_modulation_outputs(&mut writer, &payload)?;
            }
            println!(
                "modulation: {} samples, half-period deviation {:.3e}",
                payload.times.len(),
                payload.half_period_deviation
            );
        }
        Command::Hamiltonian => {
            let modulation = load_cached(&cache, &hashes, Stage::Modulation)?;
            let payload = pipeline::compute_hamiltonian(&cfg, &modulation)?;
            cache.store(Stage::Hamiltonian, &hashes[&Stage::Hamiltonian], &payload)?;
            if !cli.check {
                let mut writer = writer_for(&cfg);
                export::write_hamiltonian_outputs(&mut writer, &payload)?;
            }
            println!(
                "RWA Hamiltonian: {} modes, Hermiticity deviation {:.3e}",
                payload.n_modes, payload.hermiticity_deviation
            );
        }
        Command::Evolve => {
            let hamiltonian = load_cached(&cache, &hashes, Stage::Hamiltonian)?;
            let payload = pipeline::compute_evolution(&cfg, &hamiltonian)?;
            cache.store(Stage::Evolution, &hashes[&Stage::Evolution], &payload)?;
            if !cli.check {
                let mut writer = writer_for(&cfg);
                export::write_evolution_outputs(&mut writer, &payload)?;
            }
            let last = payload.zero_decay.mean_photons.last().expect("nonempty");
            println!(
                "evolution: final lossless mean photons = {:?}, max odd parity = {:.3e}",
                last, payload.zero_decay.max_odd_parity_probability
            );
        }
        Command::Analyze => {
            let evolution = load_cached(&cache, &hashes, Stage::Evolution)?;
            let payload = pipeline::compute_analysis(&cfg, &evolution)?;
            cache.store(Stage::Analysis, &hashes[&Stage::Analysis], &payload)?;
            if !cli.check {
                let mut writer = writer_for(&cfg);
                export::write_concurrence_trace(
                    &mut writer,
                    &payload,
                    evolution.n_modes,
                    "concurrence_trace",
                )?;
                export::write_persistency_table(&mut writer, &payload, "persistency_table")?;
                export::write_projections(&mut writer, &payload, "projections")?;
            }
            println!(
                "analysis: final C = {:.6}",
                payload.concurrence.full.last().expect("nonempty")
            );
        }
        Command::Pipeline => {
            let artifacts = pipeline::run_pipeline(&cfg, &cache, cli.force)?;
            let checks = pipeline::evaluate_checks(&artifacts);
            print_checks(&checks);
            if cli.check {
                return enforce_checks(&checks, cli.ignore_invariants);
            }
            let mut writer = writer_for(&cfg);
            write_all_outputs(&mut writer, &artifacts)?;
            let manifest = RunManifest::build(
                sha256_hex(cfg.content_string().as_bytes()),
                cfg.io.format.clone(),
                &artifacts,
                checks.clone(),
                writer.digests().clone(),
            );
            let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
            writer.write_bytes("manifest.json", &bytes)?;
            println!(
                "pipeline complete: {} files in {}",
                writer.digests().len(),
                writer.dir().display()
            );
            enforce_checks(&checks, cli.ignore_invariants)?;
        }
        Command::Export { which } => {
            let which = FigureSet::from_name(which).ok_or_else(|| {
                AppError::Config(ConfigError {
                    errors: vec![format!(
                        "unknown export target \"{which}\"; expected fig3|fig4|fig5|table1|all"
                    )],
                })
            })?;
            let artifacts = load_all_artifacts(&cache, &cfg, &hashes)?;
            let mut writer = writer_for(&cfg);
            export::export_figures(&mut writer, &artifacts, which)?;
            println!(
                "exported {} files to {}",
                writer.digests().len(),
                writer.dir().display()
            );
        }
    }
    Ok(())
}

fn load_all_artifacts(
    cache: &StageCache,
    _cfg: &ExperimentConfig,
    hashes: &BTreeMap<Stage, String>,
) -> Result<PipelineArtifacts, PipelineError> {
    Ok(PipelineArtifacts {
        soliton: load_cached(cache, hashes, Stage::Soliton)?,
        modulation: load_cached(cache, hashes, Stage::Modulation)?,
        hamiltonian: load_cached(cache, hashes, Stage::Hamiltonian)?,
        evolution: load_cached(cache, hashes, Stage::Evolution)?,
        analysis: load_cached(cache, hashes, Stage::Analysis)?,
        hashes: hashes.clone(),
        from_cache: Stage::ALL.iter().map(|&s| (s, true)).collect(),
    })
}

fn write_all_outputs(
    writer: &mut OutputWriter,
    artifacts: &PipelineArtifacts,
) -> Result<(), PipelineError> {
    export::write_modulation_outputs(writer, &artifacts.modulation)?;
    export::write_hamiltonian_outputs(writer, &artifacts.hamiltonian)?;
    export::write_evolution_outputs(writer, &artifacts.evolution)?;
    export::write_concurrence_trace(
        writer,
        &artifacts.analysis,
        artifacts.evolution.n_modes,
        "concurrence_trace",
    )?;
    export::write_persistency_table(writer, &artifacts.analysis, "persistency_table")?;
    export::write_projections(writer, &artifacts.analysis, "projections")?;
    Ok(())
}
