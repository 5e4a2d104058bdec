//! One function per pipeline stage. Each takes the state, checks its
//! prerequisites, recomputes its output and records the hashes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use popobs::lti::StateSpace;
use popobs::observer::{build_observer, ObserverRealization};
use popobs::pipeline::{self, PipelineConfig};
use popobs::popsim;
use popobs::uncertainty;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StageContext};
use crate::state::{write_atomic, PipelineState, Stage};

/// Fresh state holding the population model built from `config`. A prior
/// state keeps its downstream stages so stale results are detected later.
pub fn cmd_population(config: PipelineConfig, prior: Option<PipelineState>) -> Result<PipelineState> {
    let mut state = prior.unwrap_or_else(|| PipelineState::new(config.clone()));
    state.config = config;
    let pop = popsim::make_population(&state.config.population).at(Stage::Population)?;
    state.population = Some(pop);
    state.mark(Stage::Population);
    Ok(state)
}

pub fn cmd_characterize(state: &mut PipelineState, force: bool) -> Result<()> {
    let stage = Stage::Characterize;
    state.require(stage, force)?;
    let cfg = &state.config;
    let grid = cfg.grid.build().at(stage)?;
    let pop = state.population.as_ref().expect("population recorded");
    let ch = pipeline::characterize(pop, &grid, cfg.weight_order, cfg.headroom).at(stage)?;
    state.grid = Some(grid);
    state.characterization = Some(ch);
    state.mark(stage);
    Ok(())
}

pub fn cmd_plant(state: &mut PipelineState, force: bool) -> Result<()> {
    let stage = Stage::Plant;
    state.require(stage, force)?;
    let pop = state.population.as_ref().expect("population recorded");
    let ch = state.characterization.as_ref().expect("characterization recorded");
    let (weights, plant) = pipeline::design_plant(pop, &ch.weight, &state.config.weights).at(stage)?;
    state.weights = Some(weights);
    state.plant = Some(plant);
    state.mark(stage);
    Ok(())
}

pub fn cmd_synthesize(state: &mut PipelineState, force: bool) -> Result<()> {
    let stage = Stage::Synthesize;
    state.require(stage, force)?;
    let grid = state.config.grid.build().at(stage)?;
    let plant = state.plant.as_ref().expect("plant recorded");
    let trace = pipeline::synthesize(plant, &grid, &state.config.dk).at(stage)?;
    state.trace = Some(trace);
    state.mark(stage);
    Ok(())
}

fn run_evaluation(
    state: &PipelineState,
    stage: Stage,
) -> Result<(pipeline::Evaluation, Vec<pipeline::Estimates>, popsim::PopulationDataset)> {
    let pop = state.population.as_ref().expect("population recorded");
    let weights = state.weights.as_ref().expect("weights recorded");
    let trace = state.trace.as_ref().expect("trace recorded");
    let data = popsim::make_dataset(pop, &state.config.dataset).at(stage)?;
    let (eval, est) = pipeline::evaluate(pop, &data, trace.final_controller(), weights, state.config.discard_s).at(stage)?;
    Ok((eval, est, data))
}

pub fn cmd_evaluate(state: &mut PipelineState, force: bool) -> Result<()> {
    let stage = Stage::Evaluate;
    state.require(stage, force)?;
    let (eval, _, _) = run_evaluation(state, stage)?;
    state.evaluation = Some(eval);
    state.mark(stage);
    Ok(())
}

/// Runs every stage in order on a fresh state.
pub fn run_all(config: PipelineConfig) -> Result<PipelineState> {
    let mut state = cmd_population(config, None)?;
    cmd_characterize(&mut state, false)?;
    cmd_plant(&mut state, false)?;
    cmd_synthesize(&mut state, false)?;
    cmd_evaluate(&mut state, false)?;
    Ok(state)
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn envelope_csv(state: &PipelineState, stage: Stage) -> Result<String> {
    let ch = state.characterization.as_ref().expect("characterization recorded");
    let pop = state.population.as_ref().expect("population recorded");
    let env = &ch.envelope;
    let bound = ch.weight.magnitudes(&env.grid).at(stage)?;
    let mut out = String::from("omega_rad_s,freq_hz,envelope,w_delta");
    for label in &pop.labels {
        let _ = write!(out, ",{label}");
    }
    out.push('\n');
    for (k, w) in env.grid.omegas().iter().enumerate() {
        let _ = write!(
            out,
            "{w:.12e},{:.12e},{:.12e},{:.12e}",
            w / std::f64::consts::TAU,
            env.envelope[k],
            bound[k]
        );
        for trace in &env.per_member {
            let _ = write!(out, ",{:.12e}", trace[k]);
        }
        out.push('\n');
    }
    Ok(out)
}

fn weights_csv(state: &PipelineState, stage: Stage) -> Result<String> {
    let weights = state.weights.as_ref().expect("weights recorded");
    let ch = state.characterization.as_ref().expect("characterization recorded");
    let grid = state.grid.as_ref().expect("grid recorded");
    let mut out = String::from("omega_rad_s,w_d,w_n,w_e,w_nu,w_delta\n");
    for &w in grid.omegas() {
        let _ = write!(out, "{w:.12e}");
        for sys in [&weights.w_d, &weights.w_n, &weights.w_e, &weights.w_nu, &ch.weight.w] {
            let g = sys.eval_jw(w).at(stage)?;
            let _ = write!(out, ",{:.12e}", g[(0, 0)].norm());
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DkSummary {
    peaks: Vec<f64>,
    gammas: Vec<f64>,
    peak_omega_rad_s: Vec<f64>,
    d_fit_error: Vec<Option<f64>>,
    converged: bool,
    final_iteration: usize,
    controller_order: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metrics {
    dk: DkSummary,
    evaluation: pipeline::Evaluation,
}

/// Writes the report tables into `dir` and returns the paths written.
///
/// Files: `ssv_iter_<i>.csv` (i from 1), `envelope.csv`, `weights.csv`,
/// `estimates_<cfg>.csv` per member and `metrics.json`.
pub fn cmd_report(state: &PipelineState, dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let stage = Stage::Report;
    state.require(stage, force)?;
    std::fs::create_dir_all(dir).map_err(crate::error::CliError::io(dir))?;
    let mut written = Vec::new();
    let mut emit = |name: String, body: &[u8]| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, body)?;
        written.push(path);
        Ok(())
    };

    let trace = state.trace.as_ref().expect("trace recorded");
    for (i, it) in trace.iterations.iter().enumerate() {
        emit(format!("ssv_iter_{}.csv", i + 1), it.report.to_csv().as_bytes())?;
    }
    emit("envelope.csv".into(), envelope_csv(state, stage)?.as_bytes())?;
    emit("weights.csv".into(), weights_csv(state, stage)?.as_bytes())?;

    let (_, estimates, data) = run_evaluation(state, stage)?;
    for (rec, est) in data.records.iter().zip(&estimates) {
        let body = pipeline::estimates_csv(rec, est, data.dt);
        emit(format!("estimates_{}.csv", file_safe(&rec.label)), body.as_bytes())?;
    }

    let metrics = Metrics {
        dk: DkSummary {
            peaks: trace.peaks(),
            gammas: trace.iterations.iter().map(|it| it.gamma).collect(),
            peak_omega_rad_s: trace.iterations.iter().map(|it| it.report.peak.0).collect(),
            d_fit_error: trace.iterations.iter().map(|it| it.d_fit_error).collect(),
            converged: trace.converged,
            final_iteration: trace.final_index + 1,
            controller_order: trace.final_controller().nx(),
        },
        evaluation: state.evaluation.clone().expect("evaluation recorded"),
    };
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    emit("metrics.json".into(), json.as_bytes())?;
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmitReport {
    pub admitted: bool,
    /// Grid frequencies (rad/s) where the residual exceeds the weight.
    pub violations_rad_s: Vec<f64>,
    pub residual: Vec<f64>,
    pub bound: Vec<f64>,
    /// Candidate model paired with the shared correction filter, on ADMIT.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverRealization>,
}

/// Checks a new model against the stored envelope weight and, when it is
/// covered, pairs it with the synthesized correction filter.
pub fn cmd_admit(state: &PipelineState, model: &StateSpace, label: &str, force: bool) -> Result<AdmitReport> {
    let stage = Stage::Admit;
    state.require(stage, force)?;
    let pop = state.population.as_ref().expect("population recorded");
    let ch = state.characterization.as_ref().expect("characterization recorded");
    let grid = state.grid.as_ref().expect("grid recorded");
    let adm = uncertainty::admit(&pop.nominal, &ch.weight, model, grid).at(stage)?;
    let observer = if adm.admitted {
        let k = state.trace.as_ref().expect("trace recorded").final_controller();
        Some(build_observer(model, &pop.measurement, k, label).at(stage)?)
    } else {
        None
    };
    Ok(AdmitReport {
        admitted: adm.admitted,
        violations_rad_s: adm.violations,
        residual: adm.residual,
        bound: adm.bound,
        observer,
    })
}
