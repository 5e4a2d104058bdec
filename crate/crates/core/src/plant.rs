//! Partitioned generalized plants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::StateSpace;

/// Channel partition of a generalized plant.
///
/// Outputs are ordered `[Δ-out, performance, measurement]` and inputs
/// `[Δ-in, disturbance, control]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantDims {
    pub delta_out: usize,
    pub perf_out: usize,
    pub delta_in: usize,
    pub perf_in: usize,
    pub meas: usize,
    pub ctl: usize,
}

impl PlantDims {
    pub fn exo_out(&self) -> usize {
        self.delta_out + self.perf_out
    }

    pub fn exo_in(&self) -> usize {
        self.delta_in + self.perf_in
    }

    /// `(n_delta_out, n_z, n_delta_in, n_w, n_meas, n_ctl)`
    pub fn as_tuple(&self) -> (usize, usize, usize, usize, usize, usize) {
        (
            self.delta_out,
            self.perf_out,
            self.delta_in,
            self.perf_in,
            self.meas,
            self.ctl,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedPlant {
    pub sys: StateSpace,
    pub dims: PlantDims,
}

impl GeneralizedPlant {
    pub fn new(sys: StateSpace, dims: PlantDims) -> Result<Self> {
        if dims.exo_in() + dims.ctl != sys.nu() || dims.exo_out() + dims.meas != sys.ny() {
            return Err(Error::dims(format!(
                "plant is {}x{}, partition {:?}",
                sys.ny(),
                sys.nu(),
                dims.as_tuple()
            )));
        }
        Ok(Self { sys, dims })
    }

    /// Closes the measurement/control channels through `k`.
    pub fn close(&self, k: &StateSpace) -> Result<StateSpace> {
        crate::lti::lft_lower(&self.sys, k, self.dims.meas, self.dims.ctl)
    }
}
