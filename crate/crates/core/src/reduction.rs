//! Weighted regression problem, generalized base parameters and the
//! normalized inverse/direct dynamics error criteria.
//!
//! All subset least-squares work runs on the triangular factor R̃ of the
//! weighted [W | χ]. For any column subset S, ‖W_S x − χ‖ = ‖R̃_S x − r̃_χ‖,
//! so candidate evaluations cost O(n³) regardless of the sample count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{solve_mass, ExtendedStateSample, Mechanism};
use crate::error::{Error, Result};
use crate::linalg::{compress_rows, numeric_rank as sv_rank, singular_values, PivotedQr};
use crate::symdag::SelectionOps;

pub const RANK_TOL: f64 = 1e-8;
/// Relative |R_kk| threshold below which a subset is treated as rank deficient.
pub const SUBSET_RANK_TOL: f64 = 1e-10;
/// Relative tolerance of the φ_R′ = φ_R + β φ_E consistency check.
pub const IDENTITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ErrorNorm {
    #[default]
    Euclidean,
    One,
    Max,
}

impl ErrorNorm {
    fn of(self, v: &DVector<f64>) -> f64 {
        match self {
            ErrorNorm::Euclidean => v.norm(),
            ErrorNorm::One => v.iter().map(|x| x.abs()).sum(),
            ErrorNorm::Max => v.amax(),
        }
    }
}

/// Stacked observation matrix W and force vector χ of a dataset, with the
/// per-coordinate nominal forces forming Σ^{1/2}.
#[derive(Clone, Debug)]
pub struct RegressionProblem {
    pub labels: Vec<String>,
    pub n_dof: usize,
    pub sigma_half: Vec<f64>,
    pub w: DMatrix<f64>,
    pub chi: DVector<f64>,
}

impl RegressionProblem {
    pub fn assemble(mech: &Mechanism, samples: &[ExtendedStateSample]) -> Result<Self> {
        Self::assemble_weighted(mech, samples, mech.model.nominal_force.clone())
    }

    pub fn assemble_weighted(mech: &Mechanism, samples: &[ExtendedStateSample], sigma_half: Vec<f64>) -> Result<Self> {
        let n = mech.n_dof();
        if samples.is_empty() {
            return Err(Error::Invalid("empty dataset".into()));
        }
        if sigma_half.len() != n || sigma_half.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Invalid("nominal forces must be positive, one per coordinate".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_valid(n)) {
            return Err(Error::Dimension(format!("sample {i} does not have {n} finite entries per field")));
        }
        let chunks: Vec<DMatrix<f64>> = samples
            .par_chunks(64)
            .map(|chunk| {
                let mut block = DMatrix::zeros(chunk.len() * n, mech.n_phi());
                let mut warm: Option<Vec<f64>> = None;
                for (j, s) in chunk.iter().enumerate() {
                    let l = mech.lift(&s.z, &s.dz, warm.as_deref())?;
                    block.rows_mut(j * n, n).copy_from(&mech.regressor_lifted(&l, &s.ddz)?);
                    warm = Some(l.q);
                }
                Ok(block)
            })
            .collect::<Result<_>>()?;
        let mut w = DMatrix::zeros(samples.len() * n, mech.n_phi());
        let mut row = 0;
        for c in chunks {
            w.rows_mut(row, c.nrows()).copy_from(&c);
            row += c.nrows();
        }
        let chi = DVector::from_iterator(samples.len() * n, samples.iter().flat_map(|s| s.tau.iter().copied()));
        Ok(RegressionProblem { labels: mech.labels.clone(), n_dof: n, sigma_half, w, chi })
    }

    pub fn n_samples(&self) -> usize {
        self.w.nrows() / self.n_dof
    }

    /// Σ^{-1/2} W and Σ^{-1/2} χ.
    pub fn weighted(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut w = self.w.clone();
        let mut chi = self.chi.clone();
        for r in 0..w.nrows() {
            let s = 1.0 / self.sigma_half[r % self.n_dof];
            w.row_mut(r).scale_mut(s);
            chi[r] *= s;
        }
        (w, chi)
    }

    pub fn compress(&self) -> CompressedProblem {
        let (w, chi) = self.weighted();
        let mut a = DMatrix::zeros(w.nrows(), w.ncols() + 1);
        a.columns_mut(0, w.ncols()).copy_from(&w);
        a.set_column(w.ncols(), &chi);
        CompressedProblem { labels: self.labels.clone(), r: compress_rows(&a), n_rows: w.nrows() }
    }

    /// Normalized residual of φ_R′ on the raw stacked data under any norm.
    pub fn eps_tau_with(&self, selected: &[usize], coef: &[f64], norm: ErrorNorm) -> Result<f64> {
        let (w, chi) = self.weighted();
        let den = norm.of(&chi);
        if den == 0.0 {
            return Err(Error::Invalid("zero force vector".into()));
        }
        let mut pred = DVector::zeros(chi.len());
        for (&c, &x) in selected.iter().zip(coef) {
            pred.axpy(x, &w.column(c), 1.0);
        }
        Ok(norm.of(&(chi - pred)) / den)
    }
}

/// Least-squares fit of χ on a column subset.
#[derive(Clone, Debug)]
pub struct SubsetFit {
    pub coef: DVector<f64>,
    pub residual: f64,
    pub rank: usize,
}

impl SubsetFit {
    pub fn full_rank(&self) -> bool {
        self.rank == self.coef.len()
    }
}

/// Triangular factor of the weighted [W | χ]; the last column carries χ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompressedProblem {
    pub labels: Vec<String>,
    pub r: DMatrix<f64>,
    pub n_rows: usize,
}

impl CompressedProblem {
    pub fn n_params(&self) -> usize {
        self.labels.len()
    }

    pub fn chi(&self) -> DVector<f64> {
        self.r.column(self.n_params()).into_owned()
    }

    pub fn chi_norm(&self) -> f64 {
        self.r.column(self.n_params()).norm()
    }

    pub fn columns(&self, selected: &[usize]) -> DMatrix<f64> {
        self.r.select_columns(selected)
    }

    pub fn check_selection(&self, selected: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.n_params()];
        for &s in selected {
            if s >= self.n_params() || seen[s] {
                return Err(Error::Invalid(format!("bad or repeated column {s} in selection")));
            }
            seen[s] = true;
        }
        Ok(())
    }

    pub fn fit(&self, selected: &[usize]) -> SubsetFit {
        let b = self.chi();
        if selected.is_empty() {
            return SubsetFit { coef: DVector::zeros(0), residual: b.norm(), rank: 0 };
        }
        let a = self.columns(selected);
        let qr = PivotedQr::new(a.clone(), SUBSET_RANK_TOL);
        let residual = qr.residual_norm(&b);
        let coef = if qr.rank == selected.len() { qr.solve(&b) } else { min_norm_solve(a, &b) };
        SubsetFit { coef, residual, rank: qr.rank }
    }

    /// ε_τ of the best fit on this problem; 1 for the empty model.
    pub fn eps_tau(&self, selected: &[usize]) -> f64 {
        if selected.is_empty() {
            return 1.0;
        }
        self.fit(selected).residual / self.chi_norm()
    }

    /// ε_τ of given coefficients (e.g. fitted on another dataset).
    pub fn prediction_error(&self, selected: &[usize], coef: &DVector<f64>) -> f64 {
        let mut res = self.chi();
        for (&c, &x) in selected.iter().zip(coef.iter()) {
            res.axpy(-x, &self.r.column(c), 1.0);
        }
        res.norm() / self.chi_norm()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.r.columns(0, self.n_params()).into_owned())
    }

    pub fn label_indices(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| self.labels.iter().position(|x| x == l).ok_or_else(|| Error::UnknownLabel(l.clone())))
            .collect()
    }

    pub fn complement(&self, selected: &[usize]) -> Vec<usize> {
        (0..self.n_params()).filter(|i| !selected.contains(i)).collect()
    }
}

fn min_norm_solve(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.svd(true, true);
    let tol = svd.singular_values.max() * SUBSET_RANK_TOL;
    svd.solve(b, tol).expect("svd computed with both factors")
}

/// Count of singular values above `rel_tol · σ₁` of Σ^{-1/2} W.
pub fn numeric_rank(problem: &CompressedProblem, rel_tol: f64) -> usize {
    sv_rank(&problem.singular_values(), rel_tol)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Beta {
    pub selected: Vec<usize>,
    pub excluded: Vec<usize>,
    /// |selected| × |excluded|, W_E ≈ W_R β.
    pub matrix: DMatrix<f64>,
    pub rank_deficient: bool,
}

/// Least-squares coefficients of the excluded columns on the selected ones.
pub fn beta_coeffs(problem: &CompressedProblem, selected: &[usize]) -> Result<Beta> {
    problem.check_selection(selected)?;
    if selected.is_empty() {
        return Err(Error::Invalid("beta needs a nonempty selection".into()));
    }
    let excluded = problem.complement(selected);
    let a = problem.columns(selected);
    let qr = PivotedQr::new(a.clone(), SUBSET_RANK_TOL);
    let rank_deficient = qr.rank < selected.len();
    let mut matrix = DMatrix::zeros(selected.len(), excluded.len());
    for (j, &e) in excluded.iter().enumerate() {
        let col = problem.r.column(e).into_owned();
        let x = if rank_deficient { min_norm_solve(a.clone(), &col) } else { qr.solve(&col) };
        matrix.set_column(j, &x);
    }
    Ok(Beta { selected: selected.to_vec(), excluded, matrix, rank_deficient })
}

#[derive(Clone, Debug)]
pub struct GeneralizedBase {
    pub values: DVector<f64>,
    pub fit: SubsetFit,
    /// Relative gap between the fit and φ_R + β φ_E; None when W_R is rank deficient.
    pub identity_gap: Option<f64>,
}

/// φ_R′ = W_R⁺χ, checked against φ_R + β φ_E when W_R has full column rank.
pub fn generalized_base(problem: &CompressedProblem, selected: &[usize], phi_full: &[f64]) -> Result<GeneralizedBase> {
    problem.check_selection(selected)?;
    if phi_full.len() != problem.n_params() {
        return Err(Error::Dimension(format!("phi has {} entries, problem {}", phi_full.len(), problem.n_params())));
    }
    let fit = problem.fit(selected);
    if selected.is_empty() || !fit.full_rank() {
        return Ok(GeneralizedBase { values: fit.coef.clone(), fit, identity_gap: None });
    }
    let beta = beta_coeffs(problem, selected)?;
    let phi_r = DVector::from_iterator(selected.len(), selected.iter().map(|&i| phi_full[i]));
    let phi_e = DVector::from_iterator(beta.excluded.len(), beta.excluded.iter().map(|&i| phi_full[i]));
    let other = phi_r + &beta.matrix * phi_e;
    let scale = fit.coef.norm().max(f64::MIN_POSITIVE);
    let gap = (&fit.coef - other).norm() / scale;
    if gap > IDENTITY_TOL {
        return Err(Error::Consistency(format!("generalized base identity violated by {gap:.3e}")));
    }
    Ok(GeneralizedBase { values: fit.coef.clone(), fit, identity_gap: Some(gap) })
}

/// ε_τ on the estimation problem.
pub fn idm_error(problem: &CompressedProblem, selected: &[usize]) -> Result<f64> {
    problem.check_selection(selected)?;
    if problem.chi_norm() == 0.0 {
        return Err(Error::Invalid("zero force vector".into()));
    }
    Ok(problem.eps_tau(selected))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedModel {
    pub heuristic: String,
    pub selected: Vec<String>,
    pub excluded: Vec<String>,
    pub beta: Option<DMatrix<f64>>,
    pub phi_r_prime: Vec<f64>,
    pub eps_tau_est: f64,
    pub eps_tau_val: Option<f64>,
    pub eps_ddz_est: Option<f64>,
    pub eps_ddz_val: Option<f64>,
    pub n_ops: Option<SelectionOps>,
    pub rank_deficient: bool,
}

impl ReducedModel {
    pub fn build(
        heuristic: &str,
        est: &CompressedProblem,
        val: Option<&CompressedProblem>,
        selected: &[usize],
        phi_full: &[f64],
        with_beta: bool,
    ) -> Result<Self> {
        let gb = generalized_base(est, selected, phi_full)?;
        let beta = if with_beta && !selected.is_empty() { Some(beta_coeffs(est, selected)?.matrix) } else { None };
        let eps_tau_val = val.map(|v| if selected.is_empty() { 1.0 } else { v.prediction_error(selected, &gb.values) });
        Ok(ReducedModel {
            heuristic: heuristic.to_string(),
            selected: selected.iter().map(|&i| est.labels[i].clone()).collect(),
            excluded: est.complement(selected).iter().map(|&i| est.labels[i].clone()).collect(),
            beta,
            phi_r_prime: gb.values.as_slice().to_vec(),
            eps_tau_est: if selected.is_empty() { 1.0 } else { gb.fit.residual / est.chi_norm() },
            eps_tau_val,
            eps_ddz_est: None,
            eps_ddz_val: None,
            n_ops: None,
            rank_deficient: !gb.fit.full_rank(),
        })
    }
}

/// Exact base parameters: the first `rank` pivot columns of the weighted W.
pub fn exact_base_parameters(
    est: &CompressedProblem,
    val: Option<&CompressedProblem>,
    phi_full: &[f64],
    rank_tol: f64,
) -> Result<ReducedModel> {
    let r = numeric_rank(est, rank_tol);
    let qr = PivotedQr::new(est.r.columns(0, est.n_params()).into_owned(), SUBSET_RANK_TOL);
    ReducedModel::build("base", est, val, &qr.perm[..r], phi_full, true)
}

/// Per-coordinate root-mean-square of z̈.
pub fn nominal_ddz(samples: &[ExtendedStateSample]) -> Vec<f64> {
    let n = samples.first().map_or(0, |s| s.ddz.len());
    let mut acc = vec![0.0; n];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(&s.ddz) {
            *a += v * v;
        }
    }
    acc.iter().map(|a| (a / samples.len() as f64).sqrt()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdmEval {
    /// ε_z̈, infinite when the reduced mass matrix is singular somewhere.
    pub eps: f64,
    pub singular_sample: Option<usize>,
    pub max_cond: f64,
}

impl DdmEval {
    pub fn mass_singular(&self) -> bool {
        self.singular_sample.is_some()
    }
}

/// Full-length parameter vector with φ_R′ in the selected slots and zeros elsewhere.
pub fn scatter(n: usize, selected: &[usize], values: &[f64]) -> DVector<f64> {
    let mut phi = DVector::zeros(n);
    for (&i, &v) in selected.iter().zip(values) {
        phi[i] = v;
    }
    phi
}

/// ε_z̈ of many parameter vectors in one pass over the samples.
pub fn ddm_errors(mech: &Mechanism, samples: &[ExtendedStateSample], models: &[DVector<f64>], nom_ddz: &[f64]) -> Result<Vec<DdmEval>> {
    let n = mech.n_dof();
    if nom_ddz.len() != n || nom_ddz.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Invalid("nominal accelerations must be positive, one per coordinate".into()));
    }
    if let Some(m) = models.iter().find(|m| m.len() != mech.n_phi()) {
        return Err(Error::Dimension(format!("model vector has {} entries, expected {}", m.len(), mech.n_phi())));
    }
    struct Partial {
        num: Vec<f64>,
        den: f64,
        singular: Vec<Option<usize>>,
        cond: Vec<f64>,
    }
    const CHUNK: usize = 32;
    let parts: Vec<Partial> = samples
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut p = Partial { num: vec![0.0; models.len()], den: 0.0, singular: vec![None; models.len()], cond: vec![0.0; models.len()] };
            let mut warm: Option<Vec<f64>> = None;
            for (j, s) in chunk.iter().enumerate() {
                let l = mech.lift(&s.z, &s.dz, warm.as_deref())?;
                let reg = mech.ddm_regressor(&l)?;
                warm = Some(l.q);
                let tau = DVector::from_column_slice(&s.tau);
                p.den += (0..n).map(|i| (s.ddz[i] / nom_ddz[i]).powi(2)).sum::<f64>();
                for (mi, phi) in models.iter().enumerate() {
                    if p.singular[mi].is_some() {
                        continue;
                    }
                    let (m, delta) = reg.mass_and_bias(phi);
                    match solve_mass(&m, &(&tau - delta)) {
                        Ok((ddz, cond)) => {
                            p.cond[mi] = p.cond[mi].max(cond);
                            p.num[mi] += (0..n).map(|i| ((s.ddz[i] - ddz[i]) / nom_ddz[i]).powi(2)).sum::<f64>();
                        }
                        Err(Error::MassSingular { .. }) => p.singular[mi] = Some(ci * CHUNK + j),
                        Err(e) => return Err(e),
                    }
                }
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;
    let mut num = vec![0.0; models.len()];
    let mut den = 0.0;
    let mut singular = vec![None; models.len()];
    let mut cond = vec![0.0f64; models.len()];
    for p in parts {
        den += p.den;
        for mi in 0..models.len() {
            num[mi] += p.num[mi];
            cond[mi] = cond[mi].max(p.cond[mi]);
            if singular[mi].is_none() {
                singular[mi] = p.singular[mi];
            }
        }
    }
    if den == 0.0 {
        return Err(Error::Invalid("zero accelerations in dataset".into()));
    }
    Ok((0..models.len())
        .map(|mi| DdmEval {
            eps: if singular[mi].is_some() { f64::INFINITY } else { (num[mi] / den).sqrt() },
            singular_sample: singular[mi],
            max_cond: cond[mi],
        })
        .collect())
}

/// ε_z̈ of one reduced model with its excluded parameters zeroed.
pub fn ddm_error(
    mech: &Mechanism,
    selected: &[usize],
    phi_r_prime: &[f64],
    samples: &[ExtendedStateSample],
    nom_ddz: &[f64],
) -> Result<DdmEval> {
    let phi = scatter(mech.n_phi(), selected, phi_r_prime);
    Ok(ddm_errors(mech, samples, &[phi], nom_ddz)?[0])
}

/// Estimation and validation problems as stored between CLI stages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub estimation: CompressedProblem,
    pub validation: Option<CompressedProblem>,
    pub phi_full: Vec<f64>,
}

impl ProblemFile {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        ciborium::into_writer(self, f).map_err(|e| Error::Invalid(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        ciborium::from_reader(f).map_err(|e| Error::Invalid(format!("reading {}: {e}", path.display())))
    }
}
