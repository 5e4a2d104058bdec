//! DK iteration: H∞ synthesis on the D-scaled plant alternated with
//! pointwise μ analysis and rational refits of the scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{FrequencyGrid, StateSpace};
use crate::mu::{fit_dscale_banded, mu_upper_two_blocks, rp_check_below, scale_plant, BlockStructure, SsvReport};
use crate::plant::GeneralizedPlant;
use crate::synthesis::{hinf_synthesize, HinfOptions, SynthesisResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DKConfig {
    pub grid: FrequencyGrid,
    pub max_iters: usize,
    pub d_fit_order: usize,
    /// Share of the gap to the peak μ that a scaling fit may give up at
    /// each frequency.
    pub d_band_share: f64,
    /// Minimal relative μ allowance for the scaling fit.
    pub d_band_floor: f64,
    /// Robust performance is declared when `μ < stop_mu` at every grid point.
    pub stop_mu: f64,
    pub hinf: HinfOptions,
}

impl DKConfig {
    pub fn new(grid: FrequencyGrid) -> Self {
        Self {
            grid,
            max_iters: 4,
            d_fit_order: 8,
            d_band_share: 0.5,
            d_band_floor: 0.01,
            stop_mu: 1.0,
            hinf: HinfOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.d_band_share) || !(self.d_band_floor >= 0.0) {
            return Err(Error::InvalidArgument("scaling band parameters out of range".into()));
        }
        if !(self.stop_mu > 0.0) {
            return Err(Error::InvalidArgument("stop_mu must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DKIteration {
    /// γ achieved on the scaled plant.
    pub gamma: f64,
    pub report: SsvReport,
    /// Scaling used for this iteration's synthesis.
    pub scaling: StateSpace,
    /// Log error of the D fit made after this iteration, if any.
    pub d_fit_error: Option<f64>,
    pub synthesis: SynthesisResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DKTrace {
    pub iterations: Vec<DKIteration>,
    /// Index into `iterations` of the returned design.
    pub final_index: usize,
    pub converged: bool,
}

impl DKTrace {
    pub fn final_result(&self) -> &SynthesisResult {
        &self.iterations[self.final_index].synthesis
    }

    pub fn final_controller(&self) -> &StateSpace {
        &self.final_result().controller
    }

    pub fn final_report(&self) -> &SsvReport {
        &self.iterations[self.final_index].report
    }

    pub fn peaks(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.report.peak.1).collect()
    }
}

fn at(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| Error::AtIteration {
        iteration,
        source: Box::new(e),
    }
}

/// μ analysis of `F_l(P, K)` on the grid. The plant is never scaled here.
pub fn analyze(plant: &GeneralizedPlant, k: &StateSpace, blocks: &BlockStructure, grid: &FrequencyGrid) -> Result<SsvReport> {
    let n = plant.close(k)?.freq_response(grid)?;
    mu_upper_two_blocks(&n, blocks)
}

pub fn dk_iterate(plant: &GeneralizedPlant, blocks: &BlockStructure, cfg: &DKConfig) -> Result<DKTrace> {
    cfg.validate()?;
    if *blocks != BlockStructure::for_plant(plant) {
        return Err(Error::dims("block structure does not match the plant partition"));
    }
    let mut scaling = StateSpace::identity(1);
    let mut iterations: Vec<DKIteration> = Vec::new();
    let mut converged = false;
    for i in 1..=cfg.max_iters {
        let scaled = scale_plant(plant, &scaling).map_err(at(i))?;
        let synthesis = hinf_synthesize(&scaled, &cfg.hinf).map_err(at(i))?;
        let n = plant
            .close(&synthesis.controller)
            .and_then(|cl| cl.freq_response(&cfg.grid))
            .map_err(at(i))?;
        let report = mu_upper_two_blocks(&n, blocks).map_err(at(i))?;
        let done = rp_check_below(&report, cfg.stop_mu);
        let next = if done || i == cfg.max_iters {
            None
        } else {
            Some(fit_dscale_banded(&n, blocks, &report, cfg.d_fit_order, cfg.d_band_share, cfg.d_band_floor).map_err(at(i))?)
        };
        iterations.push(DKIteration {
            gamma: synthesis.gamma,
            report,
            scaling: scaling.clone(),
            d_fit_error: next.as_ref().map(|f| f.max_log_error),
            synthesis,
        });
        if done {
            converged = true;
            break;
        }
        if let Some(fit) = next {
            scaling = fit.sys;
        }
    }
    let final_index = if converged {
        iterations.len() - 1
    } else {
        iterations
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (k, it)| {
                if it.report.peak.1 < best.1 {
                    (k, it.report.peak.1)
                } else {
                    best
                }
            })
            .0
    };
    Ok(DKTrace {
        iterations,
        final_index,
        converged,
    })
}
