use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use popobs::pipeline::PipelineConfig;
use popobs::popsim::ErrorMetrics;
use popobs_cli::state::write_atomic;
use popobs_cli::{commands, load_config, load_model, CliError, PipelineState, Result, Stage};

#[derive(Debug, Parser)]
#[command(name = "popobs", version, about = "Robust observer pipeline for a population of models")]
struct Cli {
    /// Pipeline state file.
    #[arg(long, global = true, default_value = "popobs_state.json")]
    state: PathBuf,

    /// JSON pipeline configuration. Replaces the stored configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Reseeds the population and dataset generators.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run even when upstream stages are stale.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the model population from the configuration.
    Population,
    /// Residual envelope and uncertainty weight.
    Characterize,
    /// Performance weights and generalized plant.
    Plant,
    /// DK iteration.
    Synthesize,
    /// Robust and Kalman estimation errors on simulated records.
    Evaluate,
    /// Write the CSV and JSON report tables.
    Report {
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Check a new model against the characterized variation.
    Admit {
        /// Model file (JSON with `a`, `b`, `c`, `d` row arrays).
        model: PathBuf,
        /// Where to write the paired observer on ADMIT.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Every stage in order, then the report.
    Run {
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn config_override(cli: &Cli, base: Option<&PipelineConfig>) -> Result<Option<PipelineConfig>> {
    let cfg = match &cli.config {
        Some(path) => Some(load_config(path)?),
        None => base.cloned(),
    };
    Ok(match (cfg, cli.seed) {
        (Some(c), Some(s)) => Some(c.with_seed(s)),
        (Some(c), None) => Some(c),
        (None, Some(s)) => Some(PipelineConfig::default().with_seed(s)),
        (None, None) => None,
    })
}

fn load_state(cli: &Cli, requested: Stage) -> Result<PipelineState> {
    if !cli.state.exists() {
        return Err(CliError::StageIncomplete {
            requested,
            needed: Stage::Population,
        });
    }
    let mut state = PipelineState::load(&cli.state)?;
    if let Some(cfg) = config_override(cli, Some(&state.config))? {
        state.config = cfg;
    }
    Ok(state)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Population => {
            let prior = if cli.state.exists() {
                Some(PipelineState::load(&cli.state)?)
            } else {
                None
            };
            let cfg = config_override(cli, None)?.unwrap_or_default();
            let state = commands::cmd_population(cfg, prior)?;
            state.save(&cli.state)?;
            let pop = state.population.as_ref().expect("population recorded");
            println!("population: {} members ({})", pop.members.len(), pop.labels.join(", "));
        }
        Command::Characterize => {
            let mut state = load_state(cli, Stage::Characterize)?;
            commands::cmd_characterize(&mut state, cli.force)?;
            state.save(&cli.state)?;
            let ch = state.characterization.as_ref().expect("characterization recorded");
            let peak = ch.envelope.envelope.iter().cloned().fold(0.0, f64::max);
            let margin = ch.weight.margin_db.iter().cloned().fold(f64::INFINITY, f64::min);
            println!(
                "characterize: envelope peak {peak:.4}, weight order {}, min margin {margin:.2} dB",
                ch.weight.order
            );
        }
        Command::Plant => {
            let mut state = load_state(cli, Stage::Plant)?;
            commands::cmd_plant(&mut state, cli.force)?;
            state.save(&cli.state)?;
            let p = state.plant.as_ref().expect("plant recorded");
            println!("plant: {} states, channels {:?}", p.sys.nx(), p.dims.as_tuple());
        }
        Command::Synthesize => {
            let mut state = load_state(cli, Stage::Synthesize)?;
            commands::cmd_synthesize(&mut state, cli.force)?;
            state.save(&cli.state)?;
            print_trace(&state);
        }
        Command::Evaluate => {
            let mut state = load_state(cli, Stage::Evaluate)?;
            commands::cmd_evaluate(&mut state, cli.force)?;
            state.save(&cli.state)?;
            print_evaluation(&state);
        }
        Command::Report { out } => {
            let state = load_state(cli, Stage::Report)?;
            let files = commands::cmd_report(&state, out, cli.force)?;
            println!("report: {} files in {}", files.len(), out.display());
        }
        Command::Admit { model, out, label } => {
            let state = load_state(cli, Stage::Admit)?;
            let sys = load_model(model)?;
            let label = label.clone().unwrap_or_else(|| stem(model));
            let report = commands::cmd_admit(&state, &sys, &label, cli.force)?;
            match &report.observer {
                Some(obs) => {
                    let path = out
                        .clone()
                        .unwrap_or_else(|| model.with_file_name(format!("{}_observer.json", stem(model))));
                    let text = serde_json::to_string_pretty(&obs.sys).expect("model serializes");
                    write_atomic(&path, text.as_bytes())?;
                    println!("ADMIT {label}: observer written to {}", path.display());
                }
                None => {
                    let freqs: Vec<String> = report.violations_rad_s.iter().map(|w| format!("{w:.4}")).collect();
                    println!(
                        "REJECT {label}: residual exceeds the weight at {} grid frequencies (rad/s): {}",
                        freqs.len(),
                        freqs.join(", ")
                    );
                }
            }
        }
        Command::Run { out } => {
            let cfg = config_override(cli, None)?.unwrap_or_default();
            let state = commands::run_all(cfg)?;
            state.save(&cli.state)?;
            print_trace(&state);
            print_evaluation(&state);
            let files = commands::cmd_report(&state, out, false)?;
            println!("report: {} files in {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn print_trace(state: &PipelineState) {
    let trace = state.trace.as_ref().expect("trace recorded");
    for (i, it) in trace.iterations.iter().enumerate() {
        println!(
            "iteration {}: gamma {:.4}, peak mu {:.4} at {:.3} rad/s",
            i + 1,
            it.gamma,
            it.report.peak.1,
            it.report.peak.0
        );
    }
    println!(
        "synthesize: {} (final iteration {}, controller order {})",
        if trace.converged { "converged" } else { "not converged" },
        trace.final_index + 1,
        trace.final_controller().nx()
    );
}

fn print_evaluation(state: &PipelineState) {
    let eval = state.evaluation.as_ref().expect("evaluation recorded");
    for m in &eval.members {
        let fmt = |e: &ErrorMetrics| {
            e.per_state
                .iter()
                .map(|s| format!("{:.4}", s.rms))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("{}: rms robust [{}] kalman [{}] deg", m.label, fmt(&m.robust), fmt(&m.kalman));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
