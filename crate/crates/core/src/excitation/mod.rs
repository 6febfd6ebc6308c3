//! Fourier-series excitation trajectories and their optimization.

pub mod nelder_mead;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ExtendedStateSample, Lifted, Mechanism};
use crate::error::{Error, Result};
use crate::linalg::{compress_rows, numeric_rank, singular_values};
use nelder_mead::{minimize, NelderMeadOptions};

/// Relative singular-value tolerance for numeric rank.
pub const RANK_TOL: f64 = 1e-8;

/// z_i(t) = q0_i + Σ_k a_ik sin(kωt) + b_ik cos(kωt).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTrajectory {
    pub omega: f64,
    pub harmonics: usize,
    pub q0: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl FourierTrajectory {
    pub fn constant(omega: f64, harmonics: usize, q0: Vec<f64>) -> Self {
        let n = q0.len();
        FourierTrajectory { omega, harmonics, q0, a: vec![vec![0.0; harmonics]; n], b: vec![vec![0.0; harmonics]; n] }
    }

    pub fn n_dof(&self) -> usize {
        self.q0.len()
    }

    pub fn n_params(&self) -> usize {
        self.n_dof() * (2 * self.harmonics + 1)
    }

    /// Per coordinate: [q0, a_1..a_H, b_1..b_H].
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for i in 0..self.n_dof() {
            p.push(self.q0[i]);
            p.extend(&self.a[i]);
            p.extend(&self.b[i]);
        }
        p
    }

    pub fn from_params(omega: f64, harmonics: usize, p: &[f64]) -> Result<Self> {
        let stride = 2 * harmonics + 1;
        if p.is_empty() || p.len() % stride != 0 {
            return Err(Error::Dimension(format!("{} trajectory parameters for H = {harmonics}", p.len())));
        }
        let chunks = p.chunks(stride);
        Ok(FourierTrajectory {
            omega,
            harmonics,
            q0: chunks.clone().map(|c| c[0]).collect(),
            a: chunks.clone().map(|c| c[1..=harmonics].to_vec()).collect(),
            b: chunks.map(|c| c[harmonics + 1..].to_vec()).collect(),
        })
    }

    /// (z, ż, z̈) at time t.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n_dof();
        let (mut z, mut dz, mut ddz) = (self.q0.clone(), vec![0.0; n], vec![0.0; n]);
        for k in 1..=self.harmonics {
            let w = k as f64 * self.omega;
            let (s, c) = (w * t).sin_cos();
            for i in 0..n {
                let (a, b) = (self.a[i][k - 1], self.b[i][k - 1]);
                z[i] += a * s + b * c;
                dz[i] += w * (a * c - b * s);
                ddz[i] -= w * w * (a * s + b * c);
            }
        }
        (z, dz, ddz)
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    /// Evenly spaced sample times over one period, t_j = j·T/N.
    pub fn sample_times(&self, n: usize) -> Vec<f64> {
        let t = self.period();
        (0..n).map(|j| j as f64 * t / n as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    pub period: f64,
    pub harmonics: usize,
    pub samples_per_traj: usize,
    pub n_trajectories: usize,
    pub n_validation: usize,
    pub z_min: Vec<f64>,
    pub z_max: Vec<f64>,
    pub dz_min: Vec<f64>,
    pub dz_max: Vec<f64>,
    pub q0: Vec<f64>,
    pub workspace_check: bool,
    /// Samples per trajectory used inside the optimizer objective.
    pub objective_samples: usize,
    pub starts: usize,
    pub max_evals: usize,
    pub max_restarts: usize,
}

impl ExcitationConfig {
    pub fn puma() -> Self {
        let h = std::f64::consts::FRAC_PI_2;
        ExcitationConfig {
            period: 2.0 * std::f64::consts::PI,
            harmonics: 4,
            samples_per_traj: 100,
            n_trajectories: 10,
            n_validation: 1,
            z_min: vec![-h; 6],
            z_max: vec![h; 6],
            dz_min: vec![-1.45; 6],
            dz_max: vec![1.45; 6],
            q0: vec![0.0; 6],
            workspace_check: false,
            objective_samples: 100,
            starts: 8,
            max_evals: 120,
            max_restarts: 50,
        }
    }

    pub fn hexaglide() -> Self {
        ExcitationConfig {
            period: 2.0 * std::f64::consts::PI,
            harmonics: 2,
            samples_per_traj: 400,
            n_trajectories: 25,
            n_validation: 1,
            z_min: vec![1.0; 6],
            z_max: vec![2.0; 6],
            dz_min: vec![-1.0; 6],
            dz_max: vec![1.0; 6],
            q0: vec![1.5; 6],
            workspace_check: true,
            objective_samples: 100,
            starts: 8,
            max_evals: 60,
            max_restarts: 50,
        }
    }

    pub fn for_mechanism(mech: &Mechanism) -> Self {
        if mech.is_closed_loop() {
            Self::hexaglide()
        } else {
            Self::puma()
        }
    }

    pub fn n_dof(&self) -> usize {
        self.q0.len()
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_dof();
        let bad = |m: &str| Err(Error::Invalid(format!("excitation config: {m}")));
        if n == 0 || [&self.z_min, &self.z_max, &self.dz_min, &self.dz_max].iter().any(|v| v.len() != n) {
            return bad("bound vectors must match q0 in length");
        }
        let all = self.z_min.iter().chain(&self.z_max).chain(&self.dz_min).chain(&self.dz_max).chain(&self.q0);
        if all.clone().any(|v| !v.is_finite()) || !(self.period.is_finite() && self.period > 0.0) {
            return bad("bounds and period must be finite");
        }
        for i in 0..n {
            if !(self.z_min[i] <= self.q0[i] && self.q0[i] <= self.z_max[i]) || self.dz_min[i] > 0.0 || self.dz_max[i] < 0.0 {
                return bad("q0 and zero velocity must lie inside the bounds");
            }
        }
        if self.harmonics == 0 || self.samples_per_traj < 2 * self.harmonics + 1 || self.objective_samples < 2 * self.harmonics + 1 {
            return bad("need H >= 1 and at least 2H+1 samples per trajectory");
        }
        if self.starts == 0 || self.n_trajectories == 0 {
            return bad("starts and n_trajectories must be positive");
        }
        Ok(())
    }

    /// Squared normalized bound violations summed over sample times.
    fn violation(&self, traj: &FourierTrajectory, times: &[f64]) -> f64 {
        let mut v = 0.0;
        for &t in times {
            let (z, dz, _) = traj.eval(t);
            for i in 0..z.len() {
                let zr = self.z_max[i] - self.z_min[i];
                let dr = self.dz_max[i] - self.dz_min[i];
                v += ((z[i] - self.z_max[i]).max(0.0) / zr).powi(2) + ((self.z_min[i] - z[i]).max(0.0) / zr).powi(2);
                v += ((dz[i] - self.dz_max[i]).max(0.0) / dr).powi(2) + ((self.dz_min[i] - dz[i]).max(0.0) / dr).powi(2);
            }
        }
        v
    }

    /// Largest ratio of a sampled excursion to its bound (≤ 1 means feasible).
    fn excursion(&self, traj: &FourierTrajectory, times: &[f64]) -> f64 {
        let mut r = 0.0f64;
        for &t in times {
            let (z, dz, _) = traj.eval(t);
            for i in 0..z.len() {
                let dzp = z[i] - traj.q0[i];
                let zb = if dzp >= 0.0 { self.z_max[i] - traj.q0[i] } else { traj.q0[i] - self.z_min[i] };
                let vb = if dz[i] >= 0.0 { self.dz_max[i] } else { -self.dz_min[i] };
                r = r.max(dzp.abs() / zb.max(1e-300)).max(dz[i].abs() / vb.max(1e-300));
            }
        }
        r
    }
}

/// σ₁/σ_r with r the numeric rank.
pub fn condition_number(w: &DMatrix<f64>) -> Result<f64> {
    let sv = singular_values(&compress_rows(w));
    let r = numeric_rank(&sv, RANK_TOL);
    if r == 0 {
        return Err(Error::Invalid("condition number of a zero matrix".into()));
    }
    Ok(sv[0] / sv[r - 1])
}

/// σ₁/σ_r for a prescribed r; infinite when σ_r vanishes.
fn condition_at_rank(w: &DMatrix<f64>, r: usize) -> f64 {
    let sv = singular_values(&compress_rows(w));
    if r == 0 || r > sv.len() || sv[r - 1] <= sv[0] * 1e-14 {
        return f64::INFINITY;
    }
    sv[0] / sv[r - 1]
}

/// Stacked weighted observation block of one trajectory at `times`.
pub fn observation_block(mech: &Mechanism, traj: &FourierTrajectory, times: &[f64], weights: &[f64]) -> Result<DMatrix<f64>> {
    let n = mech.n_dof();
    let mut w = DMatrix::zeros(times.len() * n, mech.n_phi());
    let mut warm: Option<Vec<f64>> = None;
    for (j, &t) in times.iter().enumerate() {
        let (z, dz, ddz) = traj.eval(t);
        let l = mech.lift(&z, &dz, warm.as_deref())?;
        let k = mech.regressor_lifted(&l, &ddz)?;
        for r in 0..n {
            for c in 0..k.ncols() {
                w[(j * n + r, c)] = k[(r, c)] / weights[r];
            }
        }
        warm = Some(l.q);
    }
    Ok(w)
}

/// Maximal rank of the weighted regressor over random probe states.
pub fn structural_rank(mech: &Mechanism, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mech.n_dof();
    let states = (3 * mech.n_phi()).div_ceil(n).max(50);
    let mut w = DMatrix::zeros(states * n, mech.n_phi());
    let weights = &mech.model.nominal_force;
    for s in 0..states {
        let (z, dz, ddz) = mech.random_state(&mut rng);
        let k = mech.regressor(&z, &dz, &ddz)?;
        for r in 0..n {
            for c in 0..k.ncols() {
                w[(s * n + r, c)] = k[(r, c)] / weights[r];
            }
        }
    }
    Ok(numeric_rank(&singular_values(&compress_rows(&w)), RANK_TOL))
}

const PENALTY: f64 = 1e4;
const WORKSPACE_FAILURE: f64 = 1e6;

struct Objective<'a> {
    mech: &'a Mechanism,
    cfg: &'a ExcitationConfig,
    times: Vec<f64>,
    target_rank: usize,
}

impl Objective<'_> {
    /// ln κ at the target rank plus the bound penalty; workspace failures
    /// dominate every feasible value.
    fn value(&self, traj: &FourierTrajectory) -> f64 {
        let pen = PENALTY * self.cfg.violation(traj, &self.times);
        match self.block(traj) {
            Ok(w) => condition_at_rank(&w, self.target_rank).ln().min(1e3) + pen,
            Err((failures, _)) => WORKSPACE_FAILURE + failures as f64 + pen,
        }
    }

    fn block(&self, traj: &FourierTrajectory) -> std::result::Result<DMatrix<f64>, (usize, Error)> {
        if !self.cfg.workspace_check {
            return observation_block(self.mech, traj, &self.times, &self.mech.model.nominal_force).map_err(|e| (1, e));
        }
        // Count every infeasible sample so the optimizer sees a gradient back into the workspace.
        match observation_block(self.mech, traj, &self.times, &self.mech.model.nominal_force) {
            Ok(w) => Ok(w),
            Err(e) => Err((workspace_failures(self.mech, traj, &self.times).max(1), e)),
        }
    }
}

fn workspace_failures(mech: &Mechanism, traj: &FourierTrajectory, times: &[f64]) -> usize {
    times
        .iter()
        .filter(|&&t| {
            let (z, dz, _) = traj.eval(t);
            mech.lift(&z, &dz, None).is_err()
        })
        .count()
}

fn workspace_feasible(mech: &Mechanism, traj: &FourierTrajectory, times: &[f64]) -> bool {
    let mut warm: Option<Vec<f64>> = None;
    for &t in times {
        let (z, dz, _) = traj.eval(t);
        match mech.lift(&z, &dz, warm.as_deref()) {
            Ok(l) => warm = Some(l.q),
            Err(_) => return false,
        }
    }
    true
}

/// Mixes a base seed with a trajectory and start index.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut x = base ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Scales the oscillating part so the sampled excursion equals `target`.
fn scale_to(cfg: &ExcitationConfig, traj: &mut FourierTrajectory, times: &[f64], target: f64) {
    let e = cfg.excursion(traj, times);
    if e > 0.0 {
        let s = target / e;
        for i in 0..traj.n_dof() {
            traj.a[i].iter_mut().chain(traj.b[i].iter_mut()).for_each(|c| *c *= s);
        }
    }
}

/// Random trajectory within the sampled bounds. Closed-loop mechanisms move
/// coordinate pairs coherently, with small differential motion inside a pair.
fn random_start(mech: &Mechanism, cfg: &ExcitationConfig, rng: &mut ChaCha8Rng, times: &[f64]) -> Result<FourierTrajectory> {
    let n = cfg.n_dof();
    let h = cfg.harmonics;
    for _ in 0..cfg.max_restarts.max(1) {
        let mut traj = FourierTrajectory::constant(cfg.omega(), h, cfg.q0.clone());
        let coef = |scale: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (1..=h).map(|k| scale * rng.gen_range(-1.0..1.0) / k as f64).collect()
        };
        if cfg.workspace_check {
            let pairs = n.div_ceil(2);
            let pa: Vec<Vec<f64>> = (0..pairs).map(|_| coef(1.0, rng)).collect();
            let pb: Vec<Vec<f64>> = (0..pairs).map(|_| coef(1.0, rng)).collect();
            for i in 0..n {
                let da = coef(0.08, rng);
                let db = coef(0.08, rng);
                traj.a[i] = pa[i / 2].iter().zip(&da).map(|(x, y)| x + y).collect();
                traj.b[i] = pb[i / 2].iter().zip(&db).map(|(x, y)| x + y).collect();
            }
        } else {
            for i in 0..n {
                traj.a[i] = coef(1.0, rng);
                traj.b[i] = coef(1.0, rng);
            }
        }
        let target = rng.gen_range(0.6..0.95);
        scale_to(cfg, &mut traj, times, target);
        if !cfg.workspace_check || workspace_feasible(mech, &traj, times) {
            return Ok(traj);
        }
    }
    Err(Error::InfeasibleExcitation { restarts: cfg.max_restarts })
}

/// Shrinks the oscillation until every sample is inside the bounds and the workspace.
fn make_feasible(mech: &Mechanism, cfg: &ExcitationConfig, traj: &mut FourierTrajectory, times: &[f64]) -> bool {
    if cfg.excursion(traj, times) > 1.0 {
        scale_to(cfg, traj, times, 0.999);
    }
    for _ in 0..40 {
        if !cfg.workspace_check || workspace_feasible(mech, traj, times) {
            return cfg.excursion(traj, times) <= 1.0;
        }
        for i in 0..traj.n_dof() {
            traj.a[i].iter_mut().chain(traj.b[i].iter_mut()).for_each(|c| *c *= 0.9);
        }
    }
    false
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizedTrajectory {
    pub trajectory: FourierTrajectory,
    /// Condition number at the target rank on the objective grid.
    #[serde(deserialize_with = "crate::jsonio::null_as_infinity")]
    pub kappa: f64,
    pub evals: usize,
}

/// Multi-start penalty-augmented Nelder–Mead minimization of κ(W) for one trajectory.
pub fn optimize_trajectory(mech: &Mechanism, cfg: &ExcitationConfig, seed: u64, target_rank: usize) -> Result<OptimizedTrajectory> {
    cfg.validate()?;
    if cfg.n_dof() != mech.n_dof() {
        return Err(Error::Dimension(format!("excitation config has {} coordinates, model {}", cfg.n_dof(), mech.n_dof())));
    }
    let omega = cfg.omega();
    let h = cfg.harmonics;
    let probe = FourierTrajectory::constant(omega, h, cfg.q0.clone());
    let obj = Objective { mech, cfg, times: probe.sample_times(cfg.objective_samples), target_rank };
    let full_times = probe.sample_times(cfg.samples_per_traj);
    let opts = NelderMeadOptions { max_evals: cfg.max_evals, f_tol: 1e-9 };
    let mut best: Option<OptimizedTrajectory> = None;
    let mut evals = 0;
    for s in 0..cfg.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, s as u64));
        let start = random_start(mech, cfg, &mut rng, &obj.times)?;
        let x0 = start.to_params();
        let step: Vec<f64> = x0
            .chunks(2 * h + 1)
            .enumerate()
            .flat_map(|(i, c)| {
                let amp = c[1..].iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3 * (cfg.z_max[i] - cfg.z_min[i]));
                let mut st = vec![0.15 * amp; c.len()];
                st[0] = 0.02 * (cfg.z_max[i] - cfg.z_min[i]);
                st
            })
            .collect();
        let res = minimize(
            |p| match FourierTrajectory::from_params(omega, h, p) {
                Ok(t) => obj.value(&t),
                Err(_) => f64::INFINITY,
            },
            &x0,
            &step,
            &opts,
        );
        evals += res.evals;
        let mut traj = FourierTrajectory::from_params(omega, h, &res.x)?;
        if !make_feasible(mech, cfg, &mut traj, &full_times) {
            traj = start;
        }
        let kappa = match obj.block(&traj) {
            Ok(w) => condition_at_rank(&w, target_rank),
            Err(_) => f64::INFINITY,
        };
        if best.as_ref().is_none_or(|b| kappa < b.kappa) {
            best = Some(OptimizedTrajectory { trajectory: traj, kappa, evals: 0 });
        }
    }
    let mut best = best.ok_or(Error::InfeasibleExcitation { restarts: cfg.max_restarts })?;
    best.evals = evals;
    Ok(best)
}

/// Random feasible trajectory with its condition number at the target rank.
pub fn random_trajectory(mech: &Mechanism, cfg: &ExcitationConfig, seed: u64, target_rank: usize) -> Result<OptimizedTrajectory> {
    let probe = FourierTrajectory::constant(cfg.omega(), cfg.harmonics, cfg.q0.clone());
    let times = probe.sample_times(cfg.objective_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = random_start(mech, cfg, &mut rng, &times)?;
    let w = observation_block(mech, &traj, &times, &mech.model.nominal_force)?;
    Ok(OptimizedTrajectory { kappa: condition_at_rank(&w, target_rank), trajectory: traj, evals: 0 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub estimation: Vec<OptimizedTrajectory>,
    pub validation: Vec<OptimizedTrajectory>,
    pub target_rank: usize,
}

/// Seeds for estimation trajectories use stream 1, validation ones stream 2.
pub fn optimize_set(mech: &Mechanism, cfg: &ExcitationConfig, seed: u64) -> Result<TrajectorySet> {
    cfg.validate()?;
    let target_rank = structural_rank(mech, derive_seed(seed, 3, 0))?;
    let run = |stream: u64, count: usize| -> Result<Vec<OptimizedTrajectory>> {
        (0..count)
            .into_par_iter()
            .map(|j| optimize_trajectory(mech, cfg, derive_seed(seed, stream, j as u64), target_rank))
            .collect()
    };
    Ok(TrajectorySet { estimation: run(1, cfg.n_trajectories)?, validation: run(2, cfg.n_validation)?, target_rank })
}

/// Samples `n` evenly spaced states per trajectory with τ from the full model.
pub fn sample_dataset(mech: &Mechanism, trajectories: &[FourierTrajectory], n: usize) -> Result<Vec<ExtendedStateSample>> {
    let phi = mech.phi_full().values;
    let per: Vec<Vec<ExtendedStateSample>> = trajectories
        .par_iter()
        .map(|traj| {
            let mut out = Vec::with_capacity(n);
            let mut warm: Option<Vec<f64>> = None;
            for t in traj.sample_times(n) {
                let (z, dz, ddz) = traj.eval(t);
                let l: Lifted = mech.lift(&z, &dz, warm.as_deref())?;
                let tau = mech.idm_lifted(&l, &ddz, &phi)?;
                warm = Some(l.q);
                out.push(ExtendedStateSample { z, dz, ddz, tau: tau.as_slice().to_vec() });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mbmodel::build_puma560;

    #[test]
    fn constant_trajectory() {
        let t = FourierTrajectory::constant(1.0, 3, vec![0.2, -0.1]);
        for &s in &[0.0, 1.3, 4.0] {
            let (z, dz, ddz) = t.eval(s);
            assert_eq!(z, vec![0.2, -0.1]);
            assert!(dz.iter().chain(&ddz).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_sine_second_derivative() {
        let mut t = FourierTrajectory::constant(2.0, 2, vec![0.0]);
        t.a[0][0] = 1.0;
        for &s in &[0.1, 0.7, 2.9] {
            let (z, _, ddz) = t.eval(s);
            assert!((ddz[0] + 4.0 * z[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = FourierTrajectory::from_params(1.3, 4, &p).unwrap();
        let h = 1e-6;
        for &s in &[0.0, 0.4, 3.1] {
            let (_, dz, ddz) = t.eval(s);
            let (zp, dzp, _) = t.eval(s + h);
            let (zm, dzm, _) = t.eval(s - h);
            for i in 0..2 {
                assert!(((zp[i] - zm[i]) / (2.0 * h) - dz[i]).abs() < 1e-6);
                assert!(((dzp[i] - dzm[i]) / (2.0 * h) - ddz[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn params_round_trip_and_count() {
        let cfg = ExcitationConfig::puma();
        let t = FourierTrajectory::constant(cfg.omega(), cfg.harmonics, cfg.q0.clone());
        assert_eq!(t.n_params(), 54);
        let h = ExcitationConfig::hexaglide();
        assert_eq!(FourierTrajectory::constant(h.omega(), h.harmonics, h.q0.clone()).n_params(), 30);
        let p: Vec<f64> = (0..54).map(|i| i as f64 * 0.1).collect();
        assert_eq!(FourierTrajectory::from_params(1.0, 4, &p).unwrap().to_params(), p);
        assert!(FourierTrajectory::from_params(1.0, 4, &p[..50]).is_err());
    }

    #[test]
    fn condition_number_simple_cases() {
        assert!((condition_number(&DMatrix::identity(4, 4)).unwrap() - 1.0).abs() < 1e-12);
        let d = DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 1.0]);
        assert!((condition_number(&d).unwrap() - 10.0).abs() < 1e-10);
        assert!(condition_number(&DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExcitationConfig::puma().validate().is_ok());
        let mut c = ExcitationConfig::puma();
        c.samples_per_traj = 8;
        assert!(c.validate().is_err());
        let mut c = ExcitationConfig::puma();
        c.z_max[0] = f64::INFINITY;
        assert!(c.validate().is_err());
    }

    #[test]
    fn random_start_is_feasible() {
        let mech = Mechanism::new(build_puma560()).unwrap();
        let cfg = ExcitationConfig::puma();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let times = FourierTrajectory::constant(1.0, 4, vec![0.0; 6]).sample_times(100);
        let t = random_start(&mech, &cfg, &mut rng, &times).unwrap();
        assert!(cfg.excursion(&t, &times) <= 1.0);
        assert_eq!(cfg.violation(&t, &times), 0.0);
    }

    #[test]
    fn puma_structural_rank() {
        let mech = Mechanism::new(build_puma560()).unwrap();
        assert_eq!(structural_rank(&mech, 7).unwrap(), 36);
    }
}
