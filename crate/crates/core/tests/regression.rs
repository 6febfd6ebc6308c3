//! Observation matrices, base parameters and excitation on generated datasets.

mod common;

use std::sync::OnceLock;

use common::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use paramprune::dataset::Dataset;
use paramprune::dynamics::Mechanism;
use paramprune::excitation::{
    condition_number, observation_block, optimize_trajectory, random_trajectory, ExcitationConfig,
};
use paramprune::heuristics::forward_selection;
use paramprune::reduction::{
    beta_coeffs, ddm_error, exact_base_parameters, generalized_base, nominal_ddz, numeric_rank, CompressedProblem,
    RegressionProblem, RANK_TOL,
};
use paramprune::symdag::{trace_ddm, trace_idm};
use rand::SeedableRng;

struct Fixture {
    mech: Mechanism,
    data: Dataset,
    raw: RegressionProblem,
    est: CompressedProblem,
    val: CompressedProblem,
}

fn fixture(closed: bool) -> &'static Fixture {
    static PUMA: OnceLock<Fixture> = OnceLock::new();
    static HEXA: OnceLock<Fixture> = OnceLock::new();
    let build = || {
        let mech = if closed { hexaglide() } else { puma() };
        let data = cheap_dataset(&mech, 11);
        let raw = RegressionProblem::assemble(&mech, &data.estimation).unwrap();
        let (est, val) = problems(&mech, &data);
        Fixture { mech, data, raw, est, val }
    };
    if closed {
        HEXA.get_or_init(build)
    } else {
        PUMA.get_or_init(build)
    }
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[test]
fn observation_matrix_shapes() {
    assert_eq!(fixture(false).raw.w.shape(), (6000, 49));
    assert_eq!(fixture(true).raw.w.shape(), (60000, 70));
}

#[test]
fn nominal_parameters_reproduce_forces() {
    for f in [fixture(false), fixture(true)] {
        let phi = DVector::from_vec(f.mech.phi_full().values);
        let e = (&f.raw.w * &phi - &f.raw.chi).amax() / f.raw.chi.amax();
        assert!(e <= 1e-10, "W phi - chi = {e:e}");
        for s in f.data.estimation.iter().step_by(97) {
            let k = f.mech.regressor(&s.z, &s.dz, &s.ddz).unwrap();
            let tau = DVector::from_column_slice(&s.tau);
            assert!((k * &phi - &tau).amax() <= 1e-10 * (1.0 + tau.amax()));
        }
    }
}

#[test]
fn base_parameter_counts() {
    assert_eq!(numeric_rank(&fixture(false).est, RANK_TOL), 36);
    assert_eq!(numeric_rank(&fixture(true).est, RANK_TOL), 64);
    assert_eq!(numeric_rank(&fixture(false).val, RANK_TOL), 36);
}

#[test]
fn exact_base_parameters_are_exact() {
    for f in [fixture(false), fixture(true)] {
        let phi = f.mech.phi_full().values;
        let base = exact_base_parameters(&f.est, Some(&f.val), &phi, RANK_TOL).unwrap();
        assert!(base.eps_tau_est < 1e-8, "{:e}", base.eps_tau_est);
        assert!(base.eps_tau_val.unwrap() < 1e-8);
    }
}

#[test]
fn beta_reconstructs_excluded_columns_on_the_uncompressed_matrix() {
    for f in [fixture(false), fixture(true)] {
        let phi = f.mech.phi_full().values;
        let base = exact_base_parameters(&f.est, None, &phi, RANK_TOL).unwrap();
        let sel = f.est.label_indices(&base.selected).unwrap();
        let beta = beta_coeffs(&f.est, &sel).unwrap();
        let (w, _) = f.raw.weighted();
        let w_r = w.select_columns(&sel);
        let w_e = w.select_columns(&beta.excluded);
        assert!(rel(&(w_r * &beta.matrix), &w_e) <= 1e-7);

        // Linear dependencies are a property of the model, not of the trajectories.
        let beta_val = beta_coeffs(&f.val, &sel).unwrap();
        assert!(rel(&beta_val.matrix, &beta.matrix) <= 1e-6);

        let gb = generalized_base(&f.est, &sel, &phi).unwrap();
        assert!(gb.identity_gap.unwrap() <= 1e-6);
    }
}

#[test]
fn full_model_has_no_acceleration_error() {
    let f = fixture(false);
    let phi = f.mech.phi_full().values;
    let all: Vec<usize> = (0..f.mech.n_phi()).collect();
    let nom = nominal_ddz(&f.data.estimation);
    let e = ddm_error(&f.mech, &all, &phi, &f.data.validation, &nom).unwrap();
    assert!(e.eps < 1e-10, "{:e}", e.eps);
}

#[test]
fn validation_tracks_estimation_left_of_full_precision() {
    let f = fixture(false);
    let fs = forward_selection(&f.est, Some(&f.val), 1e-2);
    let full = fs.first_k_below(1e-8).unwrap();
    let val = fs.eps_tau_val.as_ref().unwrap();
    for k in 10..full {
        let ratio = val[k] / fs.eps_tau_est[k];
        assert!((0.5..=2.0).contains(&ratio), "k = {k}: ratio {ratio}");
    }
}

/// σ₁/σ_r from the eigenvalues of WᵀW.
fn gram_condition(w: &DMatrix<f64>, r: usize) -> f64 {
    let mut ev: Vec<f64> = SymmetricEigen::new(w.transpose() * w).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    (ev[0] / ev[r - 1]).sqrt()
}

#[test]
fn condition_number_matches_gram_eigenvalues() {
    let mech = puma();
    let cfg = ExcitationConfig::for_mechanism(&mech);
    for seed in 0..5 {
        let t = random_trajectory(&mech, &cfg, seed, 36).unwrap();
        let times = t.trajectory.sample_times(cfg.objective_samples);
        let w = observation_block(&mech, &t.trajectory, &times, &mech.model.nominal_force).unwrap();
        let oracle = gram_condition(&w, 36);
        assert!((condition_number(&w).unwrap() / oracle - 1.0).abs() <= 1e-6);
        assert!((t.kappa / oracle - 1.0).abs() <= 1e-6);
    }
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 0.5]));
    assert!((condition_number(&d).unwrap() - 8.0).abs() < 1e-12);
}

#[test]
fn optimized_trajectory_beats_random_ones() {
    let mech = puma();
    let cfg = ExcitationConfig::for_mechanism(&mech);
    let opt = optimize_trajectory(&mech, &cfg, 5, 36).unwrap();
    let mut random: Vec<f64> = (100..150).map(|s| random_trajectory(&mech, &cfg, s, 36).unwrap().kappa).collect();
    random.sort_by(f64::total_cmp);
    assert!(opt.kappa < random[25], "optimized {} vs median {}", opt.kappa, random[25]);
}

#[test]
fn trajectory_optimization_is_bit_reproducible() {
    for mech in [puma(), hexaglide()] {
        let cfg = cheap_config(&mech);
        let a = optimize_trajectory(&mech, &cfg, 9, 1).unwrap();
        let b = optimize_trajectory(&mech, &cfg, 9, 1).unwrap();
        let bits = |t: &paramprune::excitation::OptimizedTrajectory| -> Vec<u64> {
            t.trajectory.to_params().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.kappa.to_bits(), b.kappa.to_bits());
    }
}

#[test]
fn traced_dags_match_numeric_dynamics_on_puma() {
    let mech = puma();
    let idm = trace_idm(&mech).simplify();
    let ddm = trace_ddm(&mech).simplify();
    let phi = mech.phi_full().values;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (z, dz, ddz) = mech.random_state(&mut rng);
        let tau = mech.idm(&z, &dz, &ddz, &phi).unwrap();
        let sym = eval_traced(&idm, &mech, &z, &dz, &ddz, &phi);
        for (a, b) in tau.iter().zip(&sym) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let (m, delta) = mech.mass_and_bias(&z, &dz, &phi).unwrap();
        let out = eval_traced(&ddm, &mech, &z, &dz, &ddz, &phi);
        let n = mech.n_dof();
        for i in 0..n {
            for j in 0..n {
                let v = out[ddm.outputs.iter().position(|o| o.0 == format!("M[{i}][{j}]")).unwrap()];
                assert!((v - m[(i, j)]).abs() <= 1e-12 * (1.0 + m[(i, j)].abs()));
            }
            let v = out[ddm.outputs.iter().position(|o| o.0 == format!("delta[{i}]")).unwrap()];
            assert!((v - delta[i]).abs() <= 1e-12 * (1.0 + delta[i].abs()));
        }
    }
}
