//! End-to-end stages: population, characterization, plant, DK synthesis and
//! evaluation against per-member Kalman filters.

use serde::{Deserialize, Serialize};

use crate::dkiter::{dk_iterate, DKConfig, DKTrace};
use crate::error::{Error, Result};
use crate::linalg::RMat;
use crate::lti::{FrequencyGrid, StateSpace};
use crate::mu::BlockStructure;
use crate::observer::{build_generalized_plant, build_observer, default_weights, WeightParams, WeightSet};
use crate::plant::GeneralizedPlant;
use crate::popsim::{self, DatasetConfig, ErrorMetrics, PopulationDataset, PopulationSpec};
use crate::synthesis::{kalman_steady_state, HinfOptions};
use crate::uncertainty::{
    compute_residuals, envelope, fit_overbound_weight, PopulationModel, ResidualEnvelope, UncertaintyWeight,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            f_min_hz: 0.01,
            f_max_hz: 25.0,
            points: 61,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::logspace_hz(self.f_min_hz, self.f_max_hz, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkSettings {
    pub max_iters: usize,
    pub d_fit_order: usize,
    pub stop_mu: f64,
    pub d_band_share: f64,
    pub d_band_floor: f64,
    pub hinf: HinfOptions,
}

impl Default for DkSettings {
    fn default() -> Self {
        let base = DKConfig::new(FrequencyGrid::new(vec![1.0]).expect("single point grid"));
        Self {
            max_iters: base.max_iters,
            d_fit_order: base.d_fit_order,
            stop_mu: base.stop_mu,
            d_band_share: base.d_band_share,
            d_band_floor: base.d_band_floor,
            hinf: base.hinf,
        }
    }
}

impl DkSettings {
    pub fn config(&self, grid: &FrequencyGrid) -> DKConfig {
        DKConfig {
            grid: grid.clone(),
            max_iters: self.max_iters,
            d_fit_order: self.d_fit_order,
            d_band_share: self.d_band_share,
            d_band_floor: self.d_band_floor,
            stop_mu: self.stop_mu,
            hinf: self.hinf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub population: PopulationSpec,
    pub grid: GridSpec,
    pub weight_order: usize,
    pub headroom: f64,
    pub weights: WeightParams,
    pub dk: DkSettings,
    pub dataset: DatasetConfig,
    /// Initial transient excluded from the error metrics (s).
    pub discard_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            population: PopulationSpec::default(),
            grid: GridSpec::default(),
            weight_order: 8,
            headroom: 1.0,
            weights: WeightParams::default(),
            dk: DkSettings::default(),
            dataset: DatasetConfig::default(),
            discard_s: 2.0,
        }
    }
}

impl PipelineConfig {
    /// Reseeds every stochastic stage from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.population.seed = seed;
        self.dataset.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub envelope: ResidualEnvelope,
    pub weight: UncertaintyWeight,
}

pub fn characterize(pop: &PopulationModel, grid: &FrequencyGrid, order: usize, headroom: f64) -> Result<Characterization> {
    let env = envelope(&compute_residuals(pop, grid)?)?;
    let weight = fit_overbound_weight(&env, order, headroom)?;
    Ok(Characterization { envelope: env, weight })
}

pub fn design_plant(
    pop: &PopulationModel,
    weight: &UncertaintyWeight,
    params: &WeightParams,
) -> Result<(WeightSet, GeneralizedPlant)> {
    let g0 = &pop.nominal;
    let weights = default_weights(params, g0.nu(), g0.ny(), pop.measurement.nrows())?;
    let plant = build_generalized_plant(g0, &pop.measurement, weight, &weights)?;
    Ok((weights, plant))
}

pub fn synthesize(plant: &GeneralizedPlant, grid: &FrequencyGrid, dk: &DkSettings) -> Result<DKTrace> {
    dk_iterate(plant, &BlockStructure::for_plant(plant), &dk.config(grid))
}

fn dc_magnitude(w: &StateSpace) -> Result<f64> {
    Ok(w.eval_jw(0.0)?[(0, 0)].norm())
}

/// Steady-state Kalman gain for one member with input-disturbance intensity
/// `|W_d(0)|²` and measurement noise intensity `|W_n(0)|²`.
pub fn kalman_gain(model: &StateSpace, measurement: &RMat, weights: &WeightSet) -> Result<RMat> {
    let q = dc_magnitude(&weights.w_d)?.powi(2);
    let r = dc_magnitude(&weights.w_n)?.powi(2);
    let c = measurement * &model.c;
    let n_u = model.nu();
    let n_y = measurement.nrows();
    let k = kalman_steady_state(
        &model.a,
        &model.b,
        &c,
        &(RMat::identity(n_u, n_u) * q),
        &(RMat::identity(n_y, n_y) * r),
    )?;
    Ok(k.gain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEvaluation {
    pub label: String,
    pub robust: ErrorMetrics,
    pub kalman: ErrorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub members: Vec<MemberEvaluation>,
}

/// State estimates of one record from the shared robust filter and the
/// member's own Kalman filter.
#[derive(Debug, Clone)]
pub struct Estimates {
    pub robust: RMat,
    pub kalman: RMat,
}

/// Runs the shared correction filter paired with each member's own model,
/// and each member's Kalman filter, on that member's record.
pub fn evaluate(
    pop: &PopulationModel,
    data: &PopulationDataset,
    k: &StateSpace,
    weights: &WeightSet,
    discard_s: f64,
) -> Result<(Evaluation, Vec<Estimates>)> {
    if data.records.len() != pop.members.len() {
        return Err(Error::LengthMismatch(data.records.len(), pop.members.len()));
    }
    let mut members = Vec::with_capacity(pop.members.len());
    let mut estimates = Vec::with_capacity(pop.members.len());
    for ((g, label), rec) in pop.members.iter().zip(&pop.labels).zip(&data.records) {
        let obs = build_observer(g, &pop.measurement, k, label)?;
        let robust = popsim::run_observer(&obs, rec, data.dt)?;
        let gain = kalman_gain(g, &pop.measurement, weights)?;
        let kalman = popsim::run_kalman(g, &pop.measurement, &gain, rec, data.dt)?;
        members.push(MemberEvaluation {
            label: label.clone(),
            robust: popsim::metrics(&rec.x, &robust, data.dt, discard_s)?,
            kalman: popsim::metrics(&rec.x, &kalman, data.dt, discard_s)?,
        });
        estimates.push(Estimates { robust, kalman });
    }
    Ok((Evaluation { members }, estimates))
}

/// Estimates CSV: time, truth, robust and Kalman estimates (degrees).
pub fn estimates_csv(rec: &popsim::Record, est: &Estimates, dt: f64) -> String {
    use std::fmt::Write as _;
    let names = ["th1", "al1", "th2", "al2"];
    let n = rec.x.ncols();
    let mut out = String::from("t_s");
    for prefix in ["true", "robust", "kalman"] {
        for j in 0..n {
            let name = names.get(j).map(|s| s.to_string()).unwrap_or_else(|| format!("x{}", j + 1));
            let _ = write!(out, ",{name}_{prefix}_deg");
        }
    }
    out.push('\n');
    for k in 0..rec.len() {
        let _ = write!(out, "{:.6}", k as f64 * dt);
        for m in [&rec.x, &est.robust, &est.kalman] {
            for j in 0..n {
                let _ = write!(out, ",{:.9e}", m[(k, j)]);
            }
        }
        out.push('\n');
    }
    out
}

/// Everything a default run produces, in order.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub population: PopulationModel,
    pub grid: FrequencyGrid,
    pub characterization: Characterization,
    pub weights: WeightSet,
    pub plant: GeneralizedPlant,
    pub trace: DKTrace,
    pub dataset: PopulationDataset,
    pub evaluation: Evaluation,
    pub estimates: Vec<Estimates>,
}

pub fn run(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let population = popsim::make_population(&cfg.population)?;
    let grid = cfg.grid.build()?;
    let characterization = characterize(&population, &grid, cfg.weight_order, cfg.headroom)?;
    let (weights, plant) = design_plant(&population, &characterization.weight, &cfg.weights)?;
    let trace = synthesize(&plant, &grid, &cfg.dk)?;
    let dataset = popsim::make_dataset(&population, &cfg.dataset)?;
    let (evaluation, estimates) = evaluate(&population, &dataset, trace.final_controller(), &weights, cfg.discard_s)?;
    Ok(PipelineRun {
        population,
        grid,
        characterization,
        weights,
        plant,
        trace,
        dataset,
        evaluation,
        estimates,
    })
}
