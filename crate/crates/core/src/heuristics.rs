//! Greedy parameter orderings: pivoted QR, backward elimination, forward
//! selection and its two-pass variant, plus an exhaustive oracle.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::PivotedQr;
use crate::reduction::{CompressedProblem, SUBSET_RANK_TOL};

/// Candidates whose error is within this of the best count as tied; the
/// lowest column index wins.
pub const TIE_TOL: f64 = 1e-12;
/// Largest problem the exhaustive search accepts.
pub const EXHAUSTIVE_MAX: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    Qr,
    Fs,
    Be,
    Fs2,
}

impl Heuristic {
    pub const ALL: [Heuristic; 4] = [Heuristic::Qr, Heuristic::Fs, Heuristic::Be, Heuristic::Fs2];

    pub fn as_str(self) -> &'static str {
        match self {
            Heuristic::Qr => "qr",
            Heuristic::Fs => "fs",
            Heuristic::Be => "be",
            Heuristic::Fs2 => "fs2",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Heuristic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qr" => Ok(Heuristic::Qr),
            "fs" => Ok(Heuristic::Fs),
            "be" => Ok(Heuristic::Be),
            "fs2" => Ok(Heuristic::Fs2),
            _ => Err(Error::Invalid(format!("unknown heuristic '{s}'"))),
        }
    }
}

/// How forward steps evaluate candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LsMode {
    /// Gram–Schmidt deflation of the candidate columns against the selection.
    #[default]
    Incremental,
    /// A fresh pivoted QR per candidate.
    FromScratch,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub heuristic: Heuristic,
    /// Labels in entry order; the first k define the k-parameter model.
    pub ordering: Vec<String>,
    pub order: Vec<usize>,
    /// Model of every size when the models are not nested prefixes.
    pub sets: Option<Vec<Vec<usize>>>,
    /// Index k holds the error of the k-parameter model; k = 0 is the empty model.
    pub eps_tau_est: Vec<f64>,
    pub eps_tau_val: Option<Vec<f64>>,
    pub tol: f64,
    /// Smallest k meeting the tolerance (largest k exceeding it for BE).
    pub reached_k: Option<usize>,
    /// For BE, the last set before the tolerance was exceeded.
    pub last_admissible_k: Option<usize>,
}

impl SelectionTrace {
    pub fn selection(&self, k: usize) -> Vec<usize> {
        match &self.sets {
            Some(s) => s[k].clone(),
            None => self.order[..k].to_vec(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.order.len()
    }

    /// Smallest k with ε_τ(ℰ) below `tol`.
    pub fn first_k_below(&self, tol: f64) -> Option<usize> {
        self.eps_tau_est.iter().position(|&e| e < tol)
    }

    pub fn check_permutation(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        self.order.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
    }
}

fn argmin_tied(scores: &[(usize, f64)]) -> (usize, f64) {
    let best = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    scores
        .iter()
        .filter(|s| s.1 <= best + TIE_TOL)
        .min_by_key(|s| s.0)
        .copied()
        .expect("at least one candidate")
}

fn finish(
    heuristic: Heuristic,
    est: &CompressedProblem,
    val: Option<&CompressedProblem>,
    order: Vec<usize>,
    sets: Option<Vec<Vec<usize>>>,
    tol: f64,
) -> SelectionTrace {
    let n = est.n_params();
    let select = |k: usize| match &sets {
        Some(s) => s[k].clone(),
        None => order[..k].to_vec(),
    };
    let curves: Vec<(f64, Option<f64>)> = (0..=n)
        .into_par_iter()
        .map(|k| {
            let sel = select(k);
            if sel.is_empty() {
                return (1.0, val.map(|_| 1.0));
            }
            let fit = est.fit(&sel);
            (fit.residual / est.chi_norm(), val.map(|v| v.prediction_error(&sel, &fit.coef)))
        })
        .collect();
    let eps_tau_est: Vec<f64> = curves.iter().map(|c| c.0).collect();
    let eps_tau_val = val.map(|_| curves.iter().map(|c| c.1.unwrap_or(f64::NAN)).collect());
    let (reached_k, last_admissible_k) = if heuristic == Heuristic::Be {
        let over = (0..=n).rev().find(|&k| eps_tau_est[k] > tol);
        (over, over.map(|k| k + 1).filter(|&k| k <= n))
    } else {
        (eps_tau_est.iter().position(|&e| e < tol), None)
    };
    SelectionTrace {
        heuristic,
        ordering: order.iter().map(|&i| est.labels[i].clone()).collect(),
        order,
        sets,
        eps_tau_est,
        eps_tau_val,
        tol,
        reached_k,
        last_admissible_k,
    }
}

/// Pivot order of the column-pivoted QR of Σ^{-1/2}W.
pub fn qr_heuristic(est: &CompressedProblem, val: Option<&CompressedProblem>, tol: f64) -> SelectionTrace {
    let qr = PivotedQr::new(est.r.columns(0, est.n_params()).into_owned(), SUBSET_RANK_TOL);
    finish(Heuristic::Qr, est, val, qr.perm, None, tol)
}

/// Removes, one at a time, the parameter whose removal hurts ε_τ least.
/// The full removal order is recorded; `tol` only marks the stopping point.
pub fn backward_elimination(est: &CompressedProblem, val: Option<&CompressedProblem>, tol: f64) -> SelectionTrace {
    let mut current: Vec<usize> = (0..est.n_params()).collect();
    let mut removed = Vec::with_capacity(current.len());
    while !current.is_empty() {
        let scores: Vec<(usize, f64)> = current
            .par_iter()
            .map(|&c| {
                let rest: Vec<usize> = current.iter().copied().filter(|&x| x != c).collect();
                (c, est.eps_tau(&rest))
            })
            .collect();
        let (pick, _) = argmin_tied(&scores);
        current.retain(|&x| x != pick);
        removed.push(pick);
    }
    removed.reverse();
    finish(Heuristic::Be, est, val, removed, None, tol)
}

/// Candidate columns deflated against the current selection.
struct ForwardState<'a> {
    est: &'a CompressedProblem,
    mode: LsMode,
    selected: Vec<usize>,
    deflated: Vec<DVector<f64>>,
    original_norm: Vec<f64>,
    residual: DVector<f64>,
}

impl<'a> ForwardState<'a> {
    fn new(est: &'a CompressedProblem, mode: LsMode) -> Self {
        let n = est.n_params();
        let deflated: Vec<DVector<f64>> = (0..n).map(|j| est.r.column(j).into_owned()).collect();
        let original_norm = deflated.iter().map(|v| v.norm()).collect();
        ForwardState { est, mode, selected: Vec::new(), deflated, original_norm, residual: est.chi() }
    }

    fn independent(&self, j: usize) -> bool {
        self.deflated[j].norm() > SUBSET_RANK_TOL * self.original_norm[j]
    }

    fn score(&self, j: usize) -> f64 {
        match self.mode {
            LsMode::FromScratch => {
                let mut s = self.selected.clone();
                s.push(j);
                self.est.eps_tau(&s)
            }
            LsMode::Incremental => {
                if !self.independent(j) {
                    return self.residual.norm() / self.est.chi_norm();
                }
                let u = self.deflated[j].normalize();
                let r = &self.residual - &u * u.dot(&self.residual);
                r.norm() / self.est.chi_norm()
            }
        }
    }

    fn best_candidate(&self) -> Option<(usize, f64)> {
        let cands: Vec<usize> = (0..self.est.n_params()).filter(|j| !self.selected.contains(j)).collect();
        if cands.is_empty() {
            return None;
        }
        let scores: Vec<(usize, f64)> = cands.par_iter().map(|&j| (j, self.score(j))).collect();
        Some(argmin_tied(&scores))
    }

    fn rebuild(&mut self) {
        let sel = std::mem::take(&mut self.selected);
        self.deflated = (0..self.est.n_params()).map(|j| self.est.r.column(j).into_owned()).collect();
        self.residual = self.est.chi();
        for j in sel {
            self.add(j);
        }
    }

    fn add(&mut self, j: usize) {
        self.selected.push(j);
        if self.mode == LsMode::FromScratch || !self.independent(j) {
            return;
        }
        let u = self.deflated[j].normalize();
        self.residual -= &u * u.dot(&self.residual);
        for k in 0..self.deflated.len() {
            if !self.selected.contains(&k) {
                let c = u.dot(&self.deflated[k]);
                self.deflated[k].axpy(-c, &u, 1.0);
            }
        }
        self.deflated[j].fill(0.0);
    }

    fn remove(&mut self, j: usize) {
        self.selected.retain(|&x| x != j);
        if self.mode == LsMode::Incremental {
            self.rebuild();
        }
    }
}

/// Adds, one at a time, the parameter that lowers ε_τ most.
pub fn forward_selection(est: &CompressedProblem, val: Option<&CompressedProblem>, tol: f64) -> SelectionTrace {
    forward_selection_with(est, val, tol, LsMode::default())
}

pub fn forward_selection_with(est: &CompressedProblem, val: Option<&CompressedProblem>, tol: f64, mode: LsMode) -> SelectionTrace {
    let mut st = ForwardState::new(est, mode);
    while let Some((j, _)) = st.best_candidate() {
        st.add(j);
    }
    finish(Heuristic::Fs, est, val, st.selected, None, tol)
}

/// Forward selection where every step adds the best candidate, drops the
/// parameter added by the previous step, then adds the best candidate again.
/// Runs until every parameter is included so that each size has a model.
pub fn forward_selection_two_pass(est: &CompressedProblem, val: Option<&CompressedProblem>, tol: f64) -> SelectionTrace {
    let n = est.n_params();
    let mut st = ForwardState::new(est, LsMode::default());
    let mut sets: Vec<Option<Vec<usize>>> = vec![None; n + 1];
    sets[0] = Some(Vec::new());
    let mut last: Option<usize> = None;
    for _ in 0..2 * n + 2 {
        let Some((s1, _)) = st.best_candidate() else { break };
        st.add(s1);
        sets[st.selected.len()] = Some(st.selected.clone());
        if let Some(l) = last {
            st.remove(l);
        }
        let Some((s2, _)) = st.best_candidate() else { break };
        st.add(s2);
        last = Some(s2);
        sets[st.selected.len()] = Some(st.selected.clone());
    }
    // Sizes skipped by the iteration fall back to the next smaller model plus greedy additions.
    for k in 1..=n {
        if sets[k].is_none() {
            let mut base = sets[k - 1].clone().expect("filled in increasing order");
            let mut f = ForwardState::new(est, LsMode::default());
            for &j in &base {
                f.add(j);
            }
            let (j, _) = f.best_candidate().expect("k <= n");
            base.push(j);
            sets[k] = Some(base);
        }
    }
    let sets: Vec<Vec<usize>> = sets.into_iter().map(|s| s.expect("all sizes filled")).collect();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for s in &sets {
        for &j in s {
            if !order.contains(&j) {
                order.push(j);
            }
        }
    }
    let nested = (1..=n).all(|k| sets[k][..] == order[..k] || is_same_set(&sets[k], &order[..k]));
    finish(Heuristic::Fs2, est, val, order, if nested { None } else { Some(sets) }, tol)
}

fn is_same_set(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

pub fn run(heuristic: Heuristic, est: &CompressedProblem, val: Option<&CompressedProblem>, tol: f64) -> SelectionTrace {
    match heuristic {
        Heuristic::Qr => qr_heuristic(est, val, tol),
        Heuristic::Fs => forward_selection(est, val, tol),
        Heuristic::Be => backward_elimination(est, val, tol),
        Heuristic::Fs2 => forward_selection_two_pass(est, val, tol),
    }
}

/// Best k-subset by brute force.
pub fn exhaustive_best_subset(est: &CompressedProblem, k: usize) -> Result<(Vec<usize>, f64)> {
    let n = est.n_params();
    if n > EXHAUSTIVE_MAX {
        return Err(Error::Invalid(format!("exhaustive search limited to {EXHAUSTIVE_MAX} parameters, got {n}")));
    }
    if k > n {
        return Err(Error::Invalid(format!("subset size {k} exceeds {n}")));
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best = (idx.clone(), est.eps_tau(&idx));
    loop {
        // Next combination in lexicographic order.
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else { break };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
        let e = est.eps_tau(&idx);
        if e < best.1 {
            best = (idx.clone(), e);
        }
    }
    Ok(best)
}
