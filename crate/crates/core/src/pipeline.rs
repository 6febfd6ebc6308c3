//! End-to-end runs: model, excitation, dataset, heuristics, reports.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::dynamics::Mechanism;
use crate::error::{Error, Result, StageContext};
use crate::excitation::{optimize_set, ExcitationConfig, TrajectorySet};
use crate::heuristics::{self, Heuristic, SelectionTrace};
use crate::jsonio;
use crate::mbmodel::{build_hexaglide, build_puma560, MultibodyModel};
use crate::reduction::{
    beta_coeffs, ddm_errors, generalized_base, nominal_ddz, numeric_rank, scatter, CompressedProblem, ProblemFile,
    ReducedModel, RegressionProblem, RANK_TOL,
};
use crate::symdag::{op_counts_for_selection, trace_ddm, trace_idm, ExprDag, SelectionOps};

/// Bumped whenever cached artifacts change meaning.
const CACHE_VERSION: u32 = 1;

fn default_heuristics() -> Vec<Heuristic> {
    vec![Heuristic::Qr, Heuristic::Be, Heuristic::Fs]
}

fn default_tol() -> f64 {
    1e-2
}

fn default_rank_tol() -> f64 {
    RANK_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// `puma560`, `hexaglide`, or a path to a model JSON file.
    pub model: String,
    #[serde(default)]
    pub excitation: Option<ExcitationConfig>,
    #[serde(default = "default_heuristics")]
    pub heuristics: Vec<Heuristic>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Model size reported in the summary; defaults to 18 for open chains and 17 for closed loops.
    #[serde(default)]
    pub summary_k: Option<usize>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// nom(z̈) per coordinate; defaults to the RMS of z̈ over the estimation set.
    #[serde(default)]
    pub nominal_ddz: Option<Vec<f64>>,
}

impl PipelineConfig {
    pub fn new(model: &str, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            model: model.to_string(),
            excitation: None,
            heuristics: default_heuristics(),
            tol: default_tol(),
            rank_tol: default_rank_tol(),
            seed: 0,
            summary_k: None,
            output_dir: output_dir.into(),
            cache_dir: None,
            nominal_ddz: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Invalid(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::Invalid(format!("rank_tol must lie in (0, 1), got {}", self.rank_tol)));
        }
        if self.heuristics.is_empty() {
            return Err(Error::Invalid("at least one heuristic is required".into()));
        }
        for (i, h) in self.heuristics.iter().enumerate() {
            if self.heuristics[..i].contains(h) {
                return Err(Error::Invalid(format!("heuristic {h} listed twice")));
            }
        }
        if builtin_model(&self.model).is_none() && !Path::new(&self.model).is_file() {
            return Err(Error::Invalid(format!("model `{}` is neither built in nor an existing file", self.model)));
        }
        if let Some(e) = &self.excitation {
            e.validate()?;
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }
}

fn builtin_model(name: &str) -> Option<MultibodyModel> {
    match name {
        "puma560" | "puma" => Some(build_puma560()),
        "hexaglide" => Some(build_hexaglide()),
        _ => None,
    }
}

/// Built-in model by name, otherwise a model JSON file.
pub fn resolve_model(spec: &str) -> Result<MultibodyModel> {
    match builtin_model(spec) {
        Some(m) => Ok(m),
        None => MultibodyModel::load(Path::new(spec)),
    }
}

pub fn default_summary_k(mech: &Mechanism) -> usize {
    if mech.is_closed_loop() {
        17
    } else {
        18
    }
}

/// Hex sha256 of the inputs that determine trajectories and datasets.
pub fn cache_key(model: &MultibodyModel, exc: &ExcitationConfig, seed: u64) -> Result<String> {
    let doc = serde_json::json!({ "version": CACHE_VERSION, "model": model, "excitation": exc, "seed": seed });
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&doc)?)))
}

/// Results for one model size of one heuristic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KReport {
    pub k: usize,
    pub selected_labels: Vec<String>,
    pub phi_r_prime: Vec<f64>,
    pub eps_tau_est: f64,
    pub eps_tau_val: f64,
    pub eps_ddz_est: f64,
    pub eps_ddz_val: f64,
    /// First sample (estimation, validation) at which the reduced mass matrix was singular.
    pub mass_singular_est: Option<usize>,
    pub mass_singular_val: Option<usize>,
    pub n_ops_idm: usize,
    pub n_ops_ddm: usize,
    /// Relative gap of φ_R′ = φ_R + β φ_E; None for rank-deficient selections.
    pub identity_gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionReport {
    pub heuristic: Heuristic,
    pub ordering: Vec<String>,
    pub n_phi: usize,
    pub rank: usize,
    pub tol: f64,
    pub reached_k: Option<usize>,
    pub full_ops: SelectionOps,
    /// Entries for k = 1..=n_phi.
    pub per_k: Vec<KReport>,
}

impl ReductionReport {
    pub fn at(&self, k: usize) -> Option<&KReport> {
        self.per_k.get(k.checked_sub(1)?)
    }
}

/// Everything the report stage needs, rebuilt from saved artifacts.
pub struct Evaluation<'a> {
    pub mech: &'a Mechanism,
    pub dataset: &'a Dataset,
    pub est: CompressedProblem,
    pub val: CompressedProblem,
    pub phi_full: Vec<f64>,
    pub nom_ddz: Vec<f64>,
    pub rank: usize,
    pub idm_dag: ExprDag,
    pub ddm_dag: ExprDag,
}

impl<'a> Evaluation<'a> {
    pub fn new(mech: &'a Mechanism, dataset: &'a Dataset, rank_tol: f64, nom_ddz: Option<Vec<f64>>) -> Result<Self> {
        let est = RegressionProblem::assemble(mech, &dataset.estimation).stage("assemble")?.compress();
        let val = RegressionProblem::assemble(mech, &dataset.validation).stage("assemble")?.compress();
        Ok(Self::from_problems(mech, dataset, est, val, rank_tol, nom_ddz))
    }

    pub fn from_problems(
        mech: &'a Mechanism,
        dataset: &'a Dataset,
        est: CompressedProblem,
        val: CompressedProblem,
        rank_tol: f64,
        nom_ddz: Option<Vec<f64>>,
    ) -> Self {
        let rank = numeric_rank(&est, rank_tol);
        Evaluation {
            mech,
            dataset,
            rank,
            phi_full: mech.phi_full().values,
            nom_ddz: nom_ddz.unwrap_or_else(|| nominal_ddz(&dataset.estimation)),
            idm_dag: trace_idm(mech).simplify(),
            ddm_dag: trace_ddm(mech).simplify(),
            est,
            val,
        }
    }

    /// Per-k reports for every trace, with one streaming DDM pass per dataset.
    pub fn reports(&self, traces: &[SelectionTrace]) -> Result<Vec<ReductionReport>> {
        let n = self.est.n_params();
        if let Some(t) = traces.iter().find(|t| t.n_params() != n) {
            return Err(Error::Dimension(format!("trace {} has {} parameters, problem {n}", t.heuristic, t.n_params())));
        }
        let full_ops = op_counts_for_selection(&self.idm_dag, &self.ddm_dag, &self.est.labels)?;
        struct Partial {
            sel: Vec<usize>,
            gb: crate::reduction::GeneralizedBase,
            ops: SelectionOps,
        }
        let mut partial: Vec<Vec<Partial>> = Vec::with_capacity(traces.len());
        for t in traces {
            let rows: Vec<Partial> = (1..=n)
                .into_par_iter()
                .map(|k| {
                    let sel = t.selection(k);
                    let gb = generalized_base(&self.est, &sel, &self.phi_full)?;
                    let labels: Vec<String> = sel.iter().map(|&i| self.est.labels[i].clone()).collect();
                    let ops = op_counts_for_selection(&self.idm_dag, &self.ddm_dag, &labels)?;
                    Ok(Partial { sel, gb, ops })
                })
                .collect::<Result<_>>()
                .stage("fit")?;
            partial.push(rows);
        }
        let models: Vec<DVector<f64>> =
            partial.iter().flatten().map(|p| scatter(n, &p.sel, p.gb.values.as_slice())).collect();
        let ddm_est = ddm_errors(self.mech, &self.dataset.estimation, &models, &self.nom_ddz).stage("ddm")?;
        let ddm_val = ddm_errors(self.mech, &self.dataset.validation, &models, &self.nom_ddz).stage("ddm")?;
        let mut idx = 0;
        let mut out = Vec::with_capacity(traces.len());
        for (t, rows) in traces.iter().zip(partial) {
            let per_k = rows
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    let (de, dv) = (ddm_est[idx], ddm_val[idx]);
                    idx += 1;
                    KReport {
                        k: i + 1,
                        selected_labels: p.sel.iter().map(|&j| self.est.labels[j].clone()).collect(),
                        phi_r_prime: p.gb.values.as_slice().to_vec(),
                        eps_tau_est: p.gb.fit.residual / self.est.chi_norm(),
                        eps_tau_val: self.val.prediction_error(&p.sel, &p.gb.values),
                        eps_ddz_est: de.eps,
                        eps_ddz_val: dv.eps,
                        mass_singular_est: de.singular_sample,
                        mass_singular_val: dv.singular_sample,
                        n_ops_idm: p.ops.idm.total,
                        n_ops_ddm: p.ops.ddm.total,
                        identity_gap: p.gb.identity_gap,
                    }
                })
                .collect();
            out.push(ReductionReport {
                heuristic: t.heuristic,
                ordering: t.ordering.clone(),
                n_phi: n,
                rank: self.rank,
                tol: t.tol,
                reached_k: t.reached_k,
                full_ops,
                per_k,
            });
        }
        Ok(out)
    }

    /// Σ^{-1/2}τ of the full model and of a reduced model on the validation set.
    pub fn tau_overlay(&self, selected: &[usize], phi_r_prime: &[f64]) -> Result<Vec<(usize, usize, f64, f64)>> {
        let phi = scatter(self.est.n_params(), selected, phi_r_prime);
        let nom = &self.mech.model.nominal_force;
        let mut rows = Vec::new();
        let mut warm: Option<Vec<f64>> = None;
        for (j, s) in self.dataset.validation.iter().enumerate() {
            let l = self.mech.lift(&s.z, &s.dz, warm.as_deref())?;
            let pred = self.mech.regressor_lifted(&l, &s.ddz)? * &phi;
            warm = Some(l.q);
            for i in 0..s.tau.len() {
                rows.push((j, i, s.tau[i] / nom[i], pred[i] / nom[i]));
            }
        }
        Ok(rows)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub heuristic: Heuristic,
    pub n_phi: usize,
    pub rank: usize,
    pub k: usize,
    pub eps_tau_est: f64,
    pub eps_tau_val: f64,
    pub eps_ddz_est: f64,
    pub eps_ddz_val: f64,
    pub n_op_idm_full: usize,
    pub n_op_idm: usize,
    pub n_op_idm_reduction: f64,
    pub n_op_ddm_full: usize,
    pub n_op_ddm: usize,
    pub n_op_ddm_reduction: f64,
}

pub fn summary_rows(model: &str, reports: &[ReductionReport], k: usize) -> Vec<SummaryRow> {
    reports
        .iter()
        .filter_map(|r| {
            let e = r.at(k)?;
            let (fi, fd) = (r.full_ops.idm.total, r.full_ops.ddm.total);
            Some(SummaryRow {
                model: model.to_string(),
                heuristic: r.heuristic,
                n_phi: r.n_phi,
                rank: r.rank,
                k,
                eps_tau_est: e.eps_tau_est,
                eps_tau_val: e.eps_tau_val,
                eps_ddz_est: e.eps_ddz_est,
                eps_ddz_val: e.eps_ddz_val,
                n_op_idm_full: fi,
                n_op_idm: e.n_ops_idm,
                n_op_idm_reduction: 1.0 - e.n_ops_idm as f64 / fi.max(1) as f64,
                n_op_ddm_full: fd,
                n_op_ddm: e.n_ops_ddm,
                n_op_ddm_reduction: 1.0 - e.n_ops_ddm as f64 / fd.max(1) as f64,
            })
        })
        .collect()
}

pub const CURVES_HEADER: [&str; 8] =
    ["heuristic", "k", "eps_tau_est", "eps_tau_val", "eps_ddz_est", "eps_ddz_val", "n_op_idm", "n_op_ddm"];

pub fn write_curves(path: &Path, reports: &[ReductionReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVES_HEADER)?;
    for r in reports {
        for e in &r.per_k {
            w.write_record([
                r.heuristic.to_string(),
                e.k.to_string(),
                e.eps_tau_est.to_string(),
                e.eps_tau_val.to_string(),
                e.eps_ddz_est.to_string(),
                e.eps_ddz_val.to_string(),
                e.n_ops_idm.to_string(),
                e.n_ops_ddm.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One column per heuristic; row i is the parameter at position i + 1.
pub fn write_orderings(path: &Path, reports: &[ReductionReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["position".to_string()];
    header.extend(reports.iter().map(|r| r.heuristic.to_string()));
    w.write_record(&header)?;
    let n = reports.iter().map(|r| r.ordering.len()).max().unwrap_or(0);
    for i in 0..n {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(reports.iter().map(|r| r.ordering.get(i).cloned().unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every report artifact for `traces` into `dir`; returns the reports.
pub fn write_reports(
    eval: &Evaluation,
    model_name: &str,
    traces: &[SelectionTrace],
    summary_k: usize,
    dir: &Path,
) -> Result<Vec<ReductionReport>> {
    std::fs::create_dir_all(dir)?;
    let reports = eval.reports(traces)?;
    for r in &reports {
        jsonio::write_file(&dir.join(format!("report_{}.json", r.heuristic)), r)?;
    }
    write_curves(&dir.join("curves.csv"), &reports).stage("write")?;
    write_orderings(&dir.join("orderings.csv"), &reports).stage("write")?;
    let rows = summary_rows(model_name, &reports, summary_k);
    write_summary(&dir.join("summary.csv"), &rows).stage("write")?;
    jsonio::write_file(&dir.join("summary.json"), &rows)?;
    // Overlay and reduced model for the forward-selection model when present.
    let pick = traces.iter().position(|t| t.heuristic == Heuristic::Fs).unwrap_or(0);
    if let Some(t) = traces.get(pick) {
        if summary_k >= 1 && summary_k <= t.n_params() {
            let sel = t.selection(summary_k);
            let e = reports[pick].at(summary_k).expect("k in range");
            let mut w = csv::Writer::from_path(dir.join("tau_norm_validation.csv"))?;
            w.write_record(["sample", "coordinate", "tau_norm_full", "tau_norm_reduced"])?;
            for (j, i, a, b) in eval.tau_overlay(&sel, &e.phi_r_prime).stage("overlay")? {
                w.write_record([j.to_string(), i.to_string(), a.to_string(), b.to_string()])?;
            }
            w.flush()?;
            let mut rm = ReducedModel::build(t.heuristic.as_str(), &eval.est, Some(&eval.val), &sel, &eval.phi_full, false)?;
            rm.beta = Some(beta_coeffs(&eval.est, &sel)?.matrix);
            rm.eps_ddz_est = Some(e.eps_ddz_est);
            rm.eps_ddz_val = Some(e.eps_ddz_val);
            rm.n_ops = Some(op_counts_for_selection(&eval.idm_dag, &eval.ddm_dag, &rm.selected)?);
            jsonio::write_file(&dir.join("reduced_model.json"), &rm)?;
        }
    }
    Ok(reports)
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub rank: usize,
    pub n_phi: usize,
    pub traces: Vec<SelectionTrace>,
    pub reports: Vec<ReductionReport>,
    pub summary: Vec<SummaryRow>,
    pub trajectories: TrajectorySet,
    pub output_dir: PathBuf,
}

/// Loads cached trajectories and dataset for this configuration or creates them.
pub fn prepare_data(mech: &Mechanism, exc: &ExcitationConfig, seed: u64, cache: &Path) -> Result<(TrajectorySet, Dataset)> {
    let key = cache_key(&mech.model, exc, seed)?;
    let dir = cache.join(&key);
    let traj_path = dir.join("trajectories.json");
    let data_path = dir.join("dataset.csv");
    if traj_path.is_file() && data_path.is_file() {
        let set: TrajectorySet = jsonio::read_file(&traj_path).stage("cache")?;
        let ds = Dataset::read_csv(&data_path).stage("cache")?;
        return Ok((set, ds));
    }
    let set = optimize_set(mech, exc, seed).stage("excitation")?;
    let ds = Dataset::sample(mech, &set, exc.samples_per_traj).stage("dataset")?;
    std::fs::create_dir_all(&dir)?;
    jsonio::write_file(&traj_path, &set)?;
    ds.write_csv(&data_path)?;
    Ok((set, ds))
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate().stage("config")?;
    let model = resolve_model(&cfg.model).stage("model")?;
    let mech = Mechanism::new(model).stage("model")?;
    let exc = cfg.excitation.clone().unwrap_or_else(|| ExcitationConfig::for_mechanism(&mech));
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    mech.model.save(&out.join("model.json"))?;
    let (set, ds) = prepare_data(&mech, &exc, cfg.seed, &cfg.cache_dir())?;
    jsonio::write_file(&out.join("trajectories.json"), &set)?;
    ds.write_csv(&out.join("dataset.csv"))?;
    let eval = Evaluation::new(&mech, &ds, cfg.rank_tol, cfg.nominal_ddz.clone())?;
    ProblemFile { estimation: eval.est.clone(), validation: Some(eval.val.clone()), phi_full: eval.phi_full.clone() }
        .save(&out.join("problem.bin"))?;
    let traces: Vec<SelectionTrace> =
        cfg.heuristics.iter().map(|&h| heuristics::run(h, &eval.est, Some(&eval.val), cfg.tol)).collect();
    for t in &traces {
        jsonio::write_file(&out.join(format!("trace_{}.json", t.heuristic)), t)?;
    }
    let k = cfg.summary_k.unwrap_or_else(|| default_summary_k(&mech));
    let name = model_name(&cfg.model);
    let reports = write_reports(&eval, &name, &traces, k, out)?;
    let summary = summary_rows(&name, &reports, k);
    Ok(PipelineOutcome {
        rank: eval.rank,
        n_phi: eval.est.n_params(),
        traces,
        reports,
        summary,
        trajectories: set,
        output_dir: out.clone(),
    })
}

fn model_name(spec: &str) -> String {
    Path::new(spec).file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned())
}
