//! Inverse input multiplicative residuals of a model population and the
//! scalar weight that overbounds them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::lti::{FrequencyGrid, FrequencyResponse, StateSpace};
use crate::magfit::{fit_magnitude, FitMode};

/// Envelope values below this are clipped before fitting.
pub const ENVELOPE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    pub nominal: StateSpace,
    pub members: Vec<StateSpace>,
    /// Measurement matrix `y = C x`.
    pub measurement: RMat,
    pub labels: Vec<String>,
}

impl PopulationModel {
    pub fn new(nominal: StateSpace, members: Vec<StateSpace>, measurement: RMat, labels: Vec<String>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("population has no members".into()));
        }
        if labels.len() != members.len() {
            return Err(Error::LengthMismatch(labels.len(), members.len()));
        }
        for m in &members {
            if m.nu() != nominal.nu() || m.ny() != nominal.ny() {
                return Err(Error::dims("member and nominal shapes differ"));
            }
        }
        if measurement.ncols() != nominal.ny() {
            return Err(Error::dims("measurement matrix columns must match the model outputs"));
        }
        Ok(Self {
            nominal,
            members,
            measurement,
            labels,
        })
    }
}

/// `E(jω) = I − (G₀(jω)⁺ G(jω))⁻¹` at one frequency.
pub fn residual_at(g0: &CMat, g: &CMat, omega: f64) -> Result<CMat> {
    let nu = g0.ncols();
    let sv = g0.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if g0.nrows() < nu || !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficientNominal(omega));
    }
    let ratio = linalg::pinv_complex(g0) * g;
    let id = CMat::identity(nu, nu);
    let inv = linalg::solve_complex(ratio, &id).ok_or(Error::SingularRatio(omega))?;
    Ok(id - inv)
}

/// Residual responses of every member against the nominal model.
pub fn compute_residuals(pop: &PopulationModel, grid: &FrequencyGrid) -> Result<Vec<FrequencyResponse>> {
    let g0 = pop.nominal.freq_response(grid)?;
    pop.members.iter().map(|m| member_residual(&g0, m)).collect()
}

/// Residual of one model against a precomputed nominal response.
pub fn member_residual(g0: &FrequencyResponse, member: &StateSpace) -> Result<FrequencyResponse> {
    let gi = member.freq_response(&g0.grid)?;
    let values = g0
        .grid
        .omegas()
        .iter()
        .zip(g0.values.iter().zip(&gi.values))
        .map(|(&w, (a, b))| residual_at(a, b, w))
        .collect::<Result<Vec<_>>>()?;
    FrequencyResponse::new(g0.grid.clone(), values)
}

/// `G₀(jω)(I − E(jω))⁻¹`, the member response implied by a residual.
pub fn reconstruct(g0: &CMat, e: &CMat) -> Option<CMat> {
    let n = e.nrows();
    let inv = linalg::solve_complex(CMat::identity(n, n) - e, &CMat::identity(n, n))?;
    Some(g0 * inv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEnvelope {
    pub grid: FrequencyGrid,
    /// `σ̄(E_i(jω_k))` per member.
    pub per_member: Vec<Vec<f64>>,
    /// Pointwise maximum over members.
    pub envelope: Vec<f64>,
}

pub fn envelope(residuals: &[FrequencyResponse]) -> Result<ResidualEnvelope> {
    let first = residuals
        .first()
        .ok_or_else(|| Error::InvalidArgument("no residuals".into()))?;
    if residuals.iter().any(|r| r.grid != first.grid) {
        return Err(Error::GridMismatch);
    }
    let per_member: Vec<Vec<f64>> = residuals.iter().map(|r| r.sigma_max()).collect();
    let envelope = (0..first.grid.len())
        .map(|k| per_member.iter().map(|t| t[k]).fold(0.0, f64::max))
        .collect();
    Ok(ResidualEnvelope {
        grid: first.grid.clone(),
        per_member,
        envelope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyWeight {
    /// SISO weight, applied as `w(s)·I`.
    pub w: StateSpace,
    pub order: usize,
    /// `20·log10(|w(jω_k)| / envelope_k)` on the fit grid.
    pub margin_db: Vec<f64>,
}

impl UncertaintyWeight {
    pub fn magnitudes(&self, grid: &FrequencyGrid) -> Result<Vec<f64>> {
        grid.omegas().iter().map(|&w| Ok(self.w.eval_jw(w)?[(0, 0)].norm())).collect()
    }
}

/// Stable minimum-phase `w(s)` with `|w(jω_k)| ≥ headroom · envelope_k`.
pub fn fit_overbound_weight(env: &ResidualEnvelope, order: usize, headroom: f64) -> Result<UncertaintyWeight> {
    if env.envelope.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::NonPositiveEnvelope);
    }
    let clipped: Vec<f64> = env.envelope.iter().map(|v| v.max(ENVELOPE_FLOOR)).collect();
    let fit = fit_magnitude(&env.grid, &clipped, order, FitMode::Overbound { headroom })?;
    let margin_db = fit.ratio.iter().map(|r| 20.0 * r.log10()).collect();
    Ok(UncertaintyWeight {
        w: fit.sys,
        order,
        margin_db,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub admitted: bool,
    pub residual: Vec<f64>,
    pub bound: Vec<f64>,
    /// Grid frequencies (rad/s) where the residual exceeds the weight.
    pub violations: Vec<f64>,
}

/// Checks `σ̄(E(jω_k)) ≤ |w(jω_k)|` for a candidate model.
pub fn admit(
    nominal: &StateSpace,
    weight: &UncertaintyWeight,
    candidate: &StateSpace,
    grid: &FrequencyGrid,
) -> Result<Admission> {
    if candidate.nu() != nominal.nu() || candidate.ny() != nominal.ny() {
        return Err(Error::dims("candidate model shape differs from the nominal"));
    }
    let g0 = nominal.freq_response(grid)?;
    let residual = member_residual(&g0, candidate)?.sigma_max();
    let bound = weight.magnitudes(grid)?;
    let violations: Vec<f64> = grid
        .omegas()
        .iter()
        .zip(residual.iter().zip(&bound))
        .filter(|(_, (r, b))| *r > *b)
        .map(|(w, _)| *w)
        .collect();
    Ok(Admission {
        admitted: violations.is_empty(),
        residual,
        bound,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag(k: f64) -> StateSpace {
        StateSpace::new(
            RMat::from_element(1, 1, -1.0),
            RMat::from_element(1, 1, 1.0),
            RMat::from_element(1, 1, k),
            RMat::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn nominal_member_has_zero_residual() {
        let pop = PopulationModel::new(lag(1.0), vec![lag(1.0)], RMat::identity(1, 1), vec!["a".into()]).unwrap();
        let grid = FrequencyGrid::logspace(0.1, 10.0, 7).unwrap();
        let res = compute_residuals(&pop, &grid).unwrap();
        assert!(res[0].sigma_max().iter().all(|v| *v < 1e-15));
    }

    #[test]
    fn constant_gain_mismatch() {
        let pop = PopulationModel::new(lag(1.0), vec![lag(2.0)], RMat::identity(1, 1), vec!["a".into()]).unwrap();
        let grid = FrequencyGrid::logspace(0.1, 10.0, 7).unwrap();
        for v in &compute_residuals(&pop, &grid).unwrap()[0].values {
            assert!((v[(0, 0)] - 0.5).norm() < 1e-14);
        }
    }

    #[test]
    fn envelope_takes_the_max_and_checks_grids() {
        let g1 = FrequencyGrid::logspace(0.1, 10.0, 2).unwrap();
        let mk = |v: f64, g: &FrequencyGrid| {
            FrequencyResponse::new(g.clone(), vec![CMat::from_element(1, 1, v.into()); g.len()]).unwrap()
        };
        let env = envelope(&[mk(0.1, &g1), mk(0.3, &g1)]).unwrap();
        assert_eq!(env.envelope, vec![0.3, 0.3]);
        let g2 = FrequencyGrid::logspace(0.2, 10.0, 2).unwrap();
        assert_eq!(envelope(&[mk(0.1, &g1), mk(0.3, &g2)]), Err(Error::GridMismatch));
    }

    #[test]
    fn zero_nominal_is_rank_deficient() {
        let g0 = CMat::zeros(2, 1);
        assert_eq!(residual_at(&g0, &g0, 3.0), Err(Error::RankDeficientNominal(3.0)));
    }

    #[test]
    fn negative_envelope_is_rejected() {
        let grid = FrequencyGrid::logspace(0.1, 10.0, 2).unwrap();
        let env = ResidualEnvelope {
            grid,
            per_member: vec![],
            envelope: vec![0.1, -0.1],
        };
        assert_eq!(fit_overbound_weight(&env, 1, 1.0), Err(Error::NonPositiveEnvelope));
    }
}
