//! Synthetic two-joint flexible manipulator population, multisine
//! experiments, FRF estimation and observer evaluation.

use std::fmt::Write as _;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::lti::{discretize_zoh, DiscreteStateSpace, FrequencyGrid, FrequencyResponse, StateSpace};
use crate::observer::ObserverRealization;
use crate::uncertainty::PopulationModel;

const DEG: f64 = 180.0 / std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    /// Hub inertia (kg·m²).
    pub j_h: f64,
    /// Link inertia (kg·m²).
    pub j_l: f64,
    /// Joint spring stiffness (N·m/rad).
    pub k: f64,
    /// Hub viscous damping (N·m·s/rad).
    pub b_h: f64,
    /// Link viscous damping (N·m·s/rad).
    pub b_l: f64,
    /// Motor current to torque (N·m/A).
    pub k_t: f64,
    /// Hub restoring stiffness to ground (N·m/rad).
    pub k_hub: f64,
}

impl JointParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.j_h, self.j_l, self.k, self.b_h, self.b_l, self.k_t, self.k_hub];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("joint parameters must be positive: {self:?}")))
        }
    }

    pub fn with_stiffness_scale(&self, s: f64) -> Self {
        Self { k: self.k * s, ..*self }
    }
}

pub fn default_joints() -> (JointParams, JointParams) {
    let base = JointParams {
        j_h: 2e-3,
        j_l: 8e-3,
        k: 2.0,
        b_h: 5e-3,
        b_l: 1e-2,
        k_t: 0.1,
        k_hub: 1.0,
    };
    (base, JointParams { k: 1.5, ..base })
}

/// Measurement matrix selecting the two hub angles from `(θ1, α1, θ2, α2)`.
pub fn measurement_matrix() -> RMat {
    RMat::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
}

/// Eight-state model, states `(θ1, α1, θ2, α2, θ̇1, α̇1, θ̇2, α̇2)` in rad and
/// rad/s, inputs the two motor currents, outputs `(θ1, α1, θ2, α2)` in degrees.
pub fn make_member(params: (JointParams, JointParams)) -> Result<StateSpace> {
    params.0.validate()?;
    params.1.validate()?;
    let mut a = RMat::zeros(8, 8);
    let mut b = RMat::zeros(8, 2);
    for (j, p) in [params.0, params.1].iter().enumerate() {
        let (th, al) = (2 * j, 2 * j + 1);
        let (dth, dal) = (4 + th, 4 + al);
        a[(th, dth)] = 1.0;
        a[(al, dal)] = 1.0;
        // J_h θ̈ = k_t u + k α − b_h θ̇ − k_hub θ
        let hub = [(th, -p.k_hub), (al, p.k), (dth, -p.b_h)];
        for &(col, v) in &hub {
            a[(dth, col)] += v / p.j_h;
            a[(dal, col)] -= v / p.j_h;
        }
        b[(dth, j)] = p.k_t / p.j_h;
        b[(dal, j)] = -p.k_t / p.j_h;
        // J_l (θ̈ + α̈) = −k α − b_l (θ̇ + α̇)
        let link = [(al, -p.k), (dth, -p.b_l), (dal, -p.b_l)];
        for &(col, v) in &link {
            a[(dal, col)] += v / p.j_l;
        }
    }
    let mut c = RMat::zeros(4, 8);
    for i in 0..4 {
        c[(i, i)] = DEG;
    }
    StateSpace::new(a, b, c, RMat::zeros(4, 2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub base: (JointParams, JointParams),
    pub stiffness_scales: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            base: default_joints(),
            stiffness_scales: [0.7, 0.85, 1.15, 1.4].iter().map(|&s| (s, s)).collect(),
            seed: 2024,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.0.validate()?;
        self.base.1.validate()?;
        if self.stiffness_scales.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one stiffness configuration is required".into(),
            ));
        }
        if self
            .stiffness_scales
            .iter()
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0))
        {
            return Err(Error::InvalidArgument("stiffness scales must be positive".into()));
        }
        Ok(())
    }

    pub fn member_params(&self, scales: (f64, f64)) -> (JointParams, JointParams) {
        (
            self.base.0.with_stiffness_scale(scales.0),
            self.base.1.with_stiffness_scale(scales.1),
        )
    }

    /// Per-joint geometric mean of the configured scales.
    pub fn nominal_scales(&self) -> (f64, f64) {
        let n = self.stiffness_scales.len() as f64;
        let (l1, l2) = self
            .stiffness_scales
            .iter()
            .fold((0.0, 0.0), |(a, b), (s1, s2)| (a + s1.ln(), b + s2.ln()));
        ((l1 / n).exp(), (l2 / n).exp())
    }
}

pub fn make_population(spec: &PopulationSpec) -> Result<PopulationModel> {
    spec.validate()?;
    let nominal = make_member(spec.member_params(spec.nominal_scales()))?;
    let members = spec
        .stiffness_scales
        .iter()
        .map(|&s| make_member(spec.member_params(s)))
        .collect::<Result<Vec<_>>>()?;
    let labels = spec
        .stiffness_scales
        .iter()
        .enumerate()
        .map(|(i, (a, b))| format!("cfg{}_k{a:.2}_{b:.2}", i + 1))
        .collect();
    PopulationModel::new(nominal, members, measurement_matrix(), labels)
}

/// Odd harmonic lines `1, 3, 5, …` of a `period`-sample record up to `f_max_hz`.
pub fn odd_lines(period: usize, dt: f64, f_max_hz: f64) -> Vec<usize> {
    let df = 1.0 / (period as f64 * dt);
    (1..period / 2)
        .step_by(2)
        .take_while(|&l| l as f64 * df <= f_max_hz)
        .collect()
}

/// Random-phase multisine with energy only at `lines` (DFT bins of an
/// `n_samples` period) and RMS value `amplitude`.
pub fn multisine(n_samples: usize, lines: &[usize], amplitude: f64, seed: u64) -> Result<Vec<f64>> {
    if lines.is_empty() || !(amplitude > 0.0) {
        return Err(Error::InvalidArgument(
            "multisine needs lines and a positive amplitude".into(),
        ));
    }
    if let Some(&l) = lines.iter().find(|&&l| 2 * l >= n_samples) {
        return Err(Error::LineAboveNyquist(l));
    }
    if lines.contains(&0) {
        return Err(Error::InvalidArgument("the DC line cannot be excited".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = lines.iter().map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    let scale = amplitude / (lines.len() as f64 / 2.0).sqrt();
    let w0 = std::f64::consts::TAU / n_samples as f64;
    Ok((0..n_samples)
        .map(|k| {
            lines
                .iter()
                .zip(&phases)
                .map(|(&l, &ph)| ((w0 * ((l * k) % n_samples) as f64) + ph).cos())
                .sum::<f64>()
                * scale
        })
        .collect())
}

/// One simulated record. Rows are samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub label: String,
    pub u: RMat,
    /// Model outputs without noise.
    pub x: RMat,
    pub y: RMat,
}

impl Record {
    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationDataset {
    pub dt: f64,
    pub noise_seed: u64,
    pub records: Vec<Record>,
}

impl PopulationDataset {
    pub fn duration(&self) -> f64 {
        self.records.first().map(|r| r.len() as f64 * self.dt).unwrap_or(0.0)
    }
}

/// Initial state giving a periodic response to one period of `inputs`.
pub fn periodic_initial_state(dsys: &DiscreteStateSpace, inputs: &RMat) -> Result<DVector<f64>> {
    let n = dsys.sys.nx();
    let mut x = DVector::zeros(n);
    let mut phi = RMat::identity(n, n);
    for k in 0..inputs.nrows() {
        x = &dsys.sys.a * &x + &dsys.sys.b * inputs.row(k).transpose();
        phi = &dsys.sys.a * &phi;
    }
    let lhs = RMat::identity(n, n) - phi;
    let sol = linalg::solve_real(lhs, &RMat::from_column_slice(n, 1, x.as_slice()))
        .ok_or_else(|| Error::Numerical("no periodic steady state (pole at a line frequency)".into()))?;
    Ok(sol.column(0).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Measurement noise standard deviation in degrees.
    pub y_std: f64,
}

/// ZOH simulation with `y = C x + v`, `v` white Gaussian.
pub fn simulate(
    model: &StateSpace,
    measurement: &RMat,
    inputs: &RMat,
    dt: f64,
    noise: NoiseSpec,
    seed: u64,
    x0: Option<&DVector<f64>>,
) -> Result<Record> {
    if inputs.ncols() != model.nu() || measurement.ncols() != model.ny() {
        return Err(Error::dims("simulate: input or measurement shape"));
    }
    if !(noise.y_std >= 0.0) {
        return Err(Error::InvalidArgument("noise level must be non-negative".into()));
    }
    let dsys = discretize_zoh(model, dt)?;
    let x = dsys.simulate(inputs, x0);
    let mut y = &x * measurement.transpose();
    if noise.y_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, noise.y_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in y.iter_mut() {
            *v += dist.sample(&mut rng);
        }
    }
    Ok(Record {
        label: String::new(),
        u: inputs.clone(),
        x,
        y,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub dt: f64,
    pub n_samples: usize,
    /// RMS current per input channel (A).
    pub amplitude: f64,
    pub f_max_hz: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            n_samples: 16384,
            amplitude: 0.5,
            f_max_hz: 25.0,
            noise: NoiseSpec { y_std: 0.05 },
            seed: 7,
        }
    }
}

/// Two-channel multisine input with independent phases per channel.
pub fn excitation(n_samples: usize, lines: &[usize], amplitude: f64, seed: u64) -> Result<RMat> {
    let s1 = multisine(n_samples, lines, amplitude, seed)?;
    let s2 = multisine(n_samples, lines, amplitude, seed.wrapping_add(0x9e37_79b9))?;
    let mut u = RMat::zeros(n_samples, 2);
    u.set_column(0, &DVector::from_vec(s1));
    u.set_column(1, &DVector::from_vec(s2));
    Ok(u)
}

/// One evaluation record per population member, starting from rest.
pub fn make_dataset(pop: &PopulationModel, cfg: &DatasetConfig) -> Result<PopulationDataset> {
    let lines = odd_lines(cfg.n_samples, cfg.dt, cfg.f_max_hz);
    let u = excitation(cfg.n_samples, &lines, cfg.amplitude, cfg.seed)?;
    let records = pop
        .members
        .iter()
        .zip(&pop.labels)
        .enumerate()
        .map(|(i, (m, label))| {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1);
            let mut r = simulate(m, &pop.measurement, &u, cfg.dt, cfg.noise, seed, None)?;
            r.label = label.clone();
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PopulationDataset {
        dt: cfg.dt,
        noise_seed: cfg.seed,
        records,
    })
}

/// Dataset CSV for one record.
pub fn record_csv(rec: &Record, dt: f64) -> String {
    let mut out = String::from("t_s,u1_A,u2_A,th1_deg,al1_deg,th2_deg,al2_deg,y1_deg,y2_deg\n");
    for k in 0..rec.len() {
        let _ = write!(out, "{:.6}", k as f64 * dt);
        for v in rec.u.row(k).iter().chain(rec.x.row(k).iter()).chain(rec.y.row(k).iter()) {
            let _ = write!(out, ",{v:.9e}");
        }
        out.push('\n');
    }
    out
}

/// Input and output samples of one experiment. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub u: RMat,
    pub y: RMat,
}

fn averaged_spectrum(sig: &RMat, period: usize, lines: &[usize]) -> Vec<Vec<Complex64>> {
    let n_per = sig.nrows() / period;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(period);
    let mut out = vec![vec![Complex64::new(0.0, 0.0); sig.ncols()]; lines.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); period];
    for ch in 0..sig.ncols() {
        for p in 0..n_per {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(sig[(p * period + k, ch)], 0.0);
            }
            fft.process(&mut buf);
            for (i, &l) in lines.iter().enumerate() {
                out[i][ch] += buf[l] / n_per as f64;
            }
        }
    }
    out
}

/// Least-squares FRF `G = Y Uᴴ (U Uᴴ)⁻¹` at each excited line, after averaging
/// the DFT over whole periods of each experiment.
pub fn frf_estimate(experiments: &[Experiment], period: usize, lines: &[usize], dt: f64) -> Result<FrequencyResponse> {
    let first = experiments
        .first()
        .ok_or_else(|| Error::InvalidArgument("no experiments".into()))?;
    let (n_u, n_y) = (first.u.ncols(), first.y.ncols());
    if period == 0 || lines.is_empty() {
        return Err(Error::InvalidArgument("period and lines must be non-empty".into()));
    }
    if let Some(&l) = lines.iter().find(|&&l| 2 * l >= period) {
        return Err(Error::LineAboveNyquist(l));
    }
    for e in experiments {
        if e.u.nrows() != e.y.nrows() {
            return Err(Error::LengthMismatch(e.u.nrows(), e.y.nrows()));
        }
        if e.u.ncols() != n_u || e.y.ncols() != n_y {
            return Err(Error::dims("experiments disagree on channel counts"));
        }
        if e.u.nrows() < period || e.u.nrows() % period != 0 {
            return Err(Error::InvalidArgument(
                "record length must be a multiple of the period".into(),
            ));
        }
    }
    let n_exp = experiments.len();
    let us: Vec<_> = experiments.iter().map(|e| averaged_spectrum(&e.u, period, lines)).collect();
    let ys: Vec<_> = experiments.iter().map(|e| averaged_spectrum(&e.y, period, lines)).collect();
    let mut values = Vec::with_capacity(lines.len());
    for (i, &l) in lines.iter().enumerate() {
        let u = CMat::from_fn(n_u, n_exp, |r, c| us[c][i][r]);
        let y = CMat::from_fn(n_y, n_exp, |r, c| ys[c][i][r]);
        let sv = u.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = if n_exp < n_u {
            0.0
        } else {
            sv.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        if !(smin > 1e-10 * smax) {
            return Err(Error::RankDeficientExcitation(l));
        }
        let uh = u.adjoint();
        let gram = &u * &uh;
        // G gram = Y Uᴴ  <=>  gramᴴ Gᴴ = (Y Uᴴ)ᴴ
        let rhs = (&y * &uh).adjoint();
        let gh = linalg::solve_complex(gram.adjoint(), &rhs).ok_or(Error::RankDeficientExcitation(l))?;
        values.push(gh.adjoint());
    }
    let w0 = std::f64::consts::TAU / (period as f64 * dt);
    let grid = FrequencyGrid::new(lines.iter().map(|&l| l as f64 * w0).collect())?;
    FrequencyResponse::new(grid, values)
}

/// Sampled-data observer run. The estimate is split into the model copy
/// driven by `u`, which is exact under zero-order hold, plus the observer's
/// closed-loop correction driven by the held output residual
/// `y[k] − C x̂_model[k]`. A perfect model on noise-free data therefore gives
/// the true state, and any internally stable observer stays stable.
pub fn run_observer(obs: &ObserverRealization, record: &Record, dt: f64) -> Result<RMat> {
    run_observer_from(obs, record, dt, None)
}

/// As [`run_observer`], with an initial state for the model copy (the
/// states of `obs.innovation`).
pub fn run_observer_from(obs: &ObserverRealization, record: &Record, dt: f64, xi0: Option<&DVector<f64>>) -> Result<RMat> {
    let inn = &obs.innovation;
    let c = &obs.measurement;
    let n_u = record.u.ncols();
    let n_y = c.nrows();
    if inn.nu() != n_u + n_y
        || obs.sys.nu() != n_u + n_y
        || record.y.ncols() != n_y
        || c.ncols() != inn.ny()
        || record.y.nrows() != record.len()
    {
        return Err(Error::dims("observer and record channel counts differ"));
    }
    let all_u: Vec<usize> = (0..n_u).collect();
    let all_y: Vec<usize> = (n_u..n_u + n_y).collect();
    let outs: Vec<usize> = (0..inn.ny()).collect();
    let model = discretize_zoh(&inn.select(&outs, &all_u), dt)?.sys;
    let correction = discretize_zoh(&obs.sys.select(&outs, &all_y), dt)?.sys;
    if correction.nx() > 0 && linalg::spectral_radius(&correction.a)? >= 1.0 {
        return Err(Error::UnstableObserver);
    }
    let mut xm = xi0.cloned().unwrap_or_else(|| DVector::zeros(model.nx()));
    if xm.len() != model.nx() {
        return Err(Error::dims("observer initial state length"));
    }
    let mut xc = DVector::zeros(correction.nx());
    let mut out = RMat::zeros(record.len(), inn.ny());
    for k in 0..record.len() {
        let u = record.u.row(k).transpose();
        let y = record.y.row(k).transpose();
        let copy = &model.c * &xm + &model.d * &u;
        let resid = y - c * &copy;
        let xh = copy + &correction.c * &xc + &correction.d * &resid;
        out.row_mut(k).copy_from(&xh.transpose());
        xm = &model.a * &xm + &model.b * &u;
        xc = &correction.a * &xc + &correction.b * &resid;
    }
    Ok(out)
}

/// Kalman-type observer `ξ̇ = A ξ + B u + L (y − C ξ)` run like [`run_observer`].
pub fn run_kalman(model: &StateSpace, measurement: &RMat, gain: &RMat, record: &Record, dt: f64) -> Result<RMat> {
    let obs = crate::observer::build_gain_observer(model, measurement, gain, "kalman")?;
    run_observer(&obs, record, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rms: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// One summary of `|x − x̂|` per output channel.
    pub per_state: Vec<Summary>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut s: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    s.sort_by(f64::total_cmp);
    let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
    Summary {
        rms,
        min: s[0],
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
        max: s[s.len() - 1],
    }
}

/// Error statistics after dropping the first `discard_s` seconds.
pub fn metrics(truth: &RMat, estimates: &RMat, dt: f64, discard_s: f64) -> Result<ErrorMetrics> {
    if truth.nrows() != estimates.nrows() {
        return Err(Error::LengthMismatch(truth.nrows(), estimates.nrows()));
    }
    if truth.ncols() != estimates.ncols() {
        return Err(Error::dims("truth and estimate channel counts differ"));
    }
    let skip = (discard_s / dt).round().max(0.0) as usize;
    if skip >= truth.nrows() {
        return Err(Error::InvalidArgument("transient discard covers the whole record".into()));
    }
    let per_state = (0..truth.ncols())
        .map(|j| {
            let e: Vec<f64> = (skip..truth.nrows()).map(|k| truth[(k, j)] - estimates[(k, j)]).collect();
            summarize(&e)
        })
        .collect();
    Ok(ErrorMetrics { per_state })
}
