//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use paramprune::dataset::Dataset;
use paramprune::dynamics::Mechanism;
use paramprune::excitation::{optimize_set, ExcitationConfig, FourierTrajectory};
use paramprune::mbmodel::{build_hexaglide, build_puma560};
use paramprune::reduction::{CompressedProblem, RegressionProblem};
use paramprune::symdag::{record, ExprDag, Id, Node, Sym};
use paramprune::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn puma() -> Mechanism {
    Mechanism::new(build_puma560()).unwrap()
}

pub fn hexaglide() -> Mechanism {
    Mechanism::new(build_hexaglide()).unwrap()
}

/// Standard excitation setup with a small optimizer budget.
pub fn cheap_config(mech: &Mechanism) -> ExcitationConfig {
    let mut c = ExcitationConfig::for_mechanism(mech);
    c.starts = 1;
    c.max_evals = 8;
    c
}

pub fn cheap_dataset(mech: &Mechanism, seed: u64) -> Dataset {
    let cfg = cheap_config(mech);
    let set = optimize_set(mech, &cfg, seed).unwrap();
    Dataset::sample(mech, &set, cfg.samples_per_traj).unwrap()
}

pub fn problems(mech: &Mechanism, ds: &Dataset) -> (CompressedProblem, CompressedProblem) {
    (
        RegressionProblem::assemble(mech, &ds.estimation).unwrap().compress(),
        RegressionProblem::assemble(mech, &ds.validation).unwrap().compress(),
    )
}

/// Synthetic problem: random W and a decaying coefficient vector plus small noise.
pub fn synthetic_raw(rows: usize, cols: usize, seed: u64) -> RegressionProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    // Decaying coefficients give the subset search something to rank.
    let phi = DVector::from_fn(cols, |i, _| rng.gen_range(-1.0..1.0) * 0.7f64.powi(i as i32));
    let chi = &w * phi + DVector::from_fn(rows, |_, _| rng.gen_range(-1e-3..1e-3));
    RegressionProblem { labels: (0..cols).map(|i| format!("p{i}")).collect(), n_dof: 1, sigma_half: vec![1.0], w, chi }
}

pub fn synthetic(rows: usize, cols: usize, seed: u64) -> CompressedProblem {
    synthetic_raw(rows, cols, seed).compress()
}

/// max |idm(aφ₁ + bφ₂) − a·idm(φ₁) − b·idm(φ₂)| relative to the magnitudes involved.
pub fn linearity_error(mech: &Mechanism, z: &[f64], dz: &[f64], ddz: &[f64], p1: &[f64], p2: &[f64], a: f64, b: f64) -> f64 {
    let l = mech.lift(z, dz, None).unwrap();
    let mix: Vec<f64> = p1.iter().zip(p2).map(|(x, y)| a * x + b * y).collect();
    let t1 = mech.idm_lifted(&l, ddz, p1).unwrap();
    let t2 = mech.idm_lifted(&l, ddz, p2).unwrap();
    let tm = mech.idm_lifted(&l, ddz, &mix).unwrap();
    let k = mech.regressor_lifted(&l, ddz).unwrap();
    let via_k = &k * DVector::from_column_slice(&mix);
    let scale = 1.0 + (&t1 * a).amax() + (&t2 * b).amax();
    ((&tm - &t1 * a - &t2 * b).amax().max((tm - via_k).amax())) / scale
}

/// Relative asymmetry of M_zz at a state and whether it is positive definite.
pub fn mass_checks(mech: &Mechanism, z: &[f64], dz: &[f64]) -> (f64, bool) {
    let phi = mech.phi_full().values;
    let (m, _) = mech.mass_and_bias(z, dz, &phi).unwrap();
    let asym = (&m - m.transpose()).amax() / m.amax();
    (asym, m.cholesky().is_some())
}

/// Relative error of z̈ after τ = idm(z̈) followed by the direct dynamics.
pub fn round_trip_error(mech: &Mechanism, z: &[f64], dz: &[f64], ddz: &[f64]) -> f64 {
    let phi = mech.phi_full().values;
    let tau = mech.idm(z, dz, ddz, &phi).unwrap();
    let (back, _) = mech.forward_dynamics(z, dz, tau.as_slice(), &phi).unwrap();
    let d = DVector::from_column_slice(ddz);
    (back - &d).amax() / (1.0 + d.amax())
}

/// Closed-loop projection: constraint residual, ‖φ_q R‖ and the virtual-power
/// mismatch τ_zᵀż − τ_qᵀq̇, each relative to its natural scale.
pub fn projection_errors(mech: &Mechanism, z: &[f64], dz: &[f64], ddz: &[f64]) -> [f64; 3] {
    let h = mech.closure.as_ref().expect("closed loop");
    let l = mech.lift(z, dz, None).unwrap();
    let c = l.closed.as_ref().unwrap();
    let residual = h.residual(&mech.tree, &l.q).amax();
    let annihilation = (&c.phi_q * &c.rmat).amax() / (c.phi_q.amax() * c.rmat.amax());
    let phi = mech.phi_full().values;
    let tau_q = mech.tree.rnea(&l.q, &l.dq, &l.ddq(ddz), mech.gravity, &mech.body_params(&phi));
    let tau_z = mech.idm_lifted(&l, ddz, &phi).unwrap();
    let pz: f64 = tau_z.iter().zip(dz).map(|(t, v)| t * v).sum();
    let pq: f64 = tau_q.iter().zip(&l.dq).map(|(t, v)| t * v).sum();
    let scale: f64 = tau_q.iter().zip(&l.dq).map(|(t, v)| (t * v).abs()).sum::<f64>() + 1e-300;
    [residual, annihilation, (pz - pq).abs() / scale]
}

/// Worst mismatch between d(T+V)/dt by central differences and τ·ż along a
/// trajectory, relative to the largest power seen.
pub fn power_balance_error(mech: &Mechanism, traj: &FourierTrajectory, samples: usize) -> f64 {
    let phi = mech.phi_full().values;
    let energy = |t: f64| {
        let (z, dz, _) = traj.eval(t);
        let l = mech.lift(&z, &dz, None).unwrap();
        let (k, v) = mech.energy(&l.q, &l.dq, &phi);
        k + v
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut pmax = 0.0f64;
    for t in traj.sample_times(samples) {
        let (z, dz, ddz) = traj.eval(t);
        let tau = mech.idm(&z, &dz, &ddz, &phi).unwrap();
        let p: f64 = tau.iter().zip(&dz).map(|(a, b)| a * b).sum();
        let de = (energy(t + h) - energy(t - h)) / (2.0 * h);
        worst = worst.max((de - p).abs());
        pmax = pmax.max(p.abs());
    }
    worst / pmax
}

/// RK4 simulation of the model driven by linear springs τᵢ = −kᵢ(zᵢ − z₀ᵢ)
/// from rest; returns the worst drift of T + V + spring energy relative to
/// the energy magnitudes involved.
pub fn spring_rk4_drift(mech: &Mechanism, z0: &[f64], zstart: &[f64], stiffness: &[f64], dt: f64, steps: usize) -> f64 {
    let n = z0.len();
    let phi = mech.phi_full().values;
    let accel = |z: &[f64], dz: &[f64]| -> Vec<f64> {
        let tau: Vec<f64> = (0..n).map(|i| -stiffness[i] * (z[i] - z0[i])).collect();
        mech.forward_dynamics(z, dz, &tau, &phi).unwrap().0.as_slice().to_vec()
    };
    let total = |z: &[f64], dz: &[f64]| -> (f64, f64) {
        let l = mech.lift(z, dz, None).unwrap();
        let (t, v) = mech.energy(&l.q, &l.dq, &phi);
        let s: f64 = (0..n).map(|i| 0.5 * stiffness[i] * (z[i] - z0[i]).powi(2)).sum();
        (t + v + s, t.abs() + v.abs() + s.abs())
    };
    let mut z = zstart.to_vec();
    let mut dz = vec![0.0; n];
    let (e0, scale) = total(&z, &dz);
    let mut drift = 0.0f64;
    let axpy = |x: &[f64], y: &[f64], a: f64| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p + a * q).collect() };
    for _ in 0..steps {
        let k1v = dz.clone();
        let k1a = accel(&z, &dz);
        let k2v = axpy(&dz, &k1a, dt / 2.0);
        let k2a = accel(&axpy(&z, &k1v, dt / 2.0), &k2v);
        let k3v = axpy(&dz, &k2a, dt / 2.0);
        let k3a = accel(&axpy(&z, &k2v, dt / 2.0), &k3v);
        let k4v = axpy(&dz, &k3a, dt);
        let k4a = accel(&axpy(&z, &k3v, dt), &k4v);
        for i in 0..n {
            z[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
            dz[i] += dt / 6.0 * (k1a[i] + 2.0 * k2a[i] + 2.0 * k3a[i] + k4a[i]);
        }
        drift = drift.max((total(&z, &dz).0 - e0).abs());
    }
    drift / scale
}

/// One step of a random expression program: (op, lhs, rhs, constant).
pub type Step = (u8, usize, usize, f64);

/// Builds the program both symbolically and in plain f64.
pub fn random_program(steps: &[Step], inputs: &[f64], params: &[f64]) -> (ExprDag, f64) {
    let dag = record(|| {
        let mut vals: Vec<Sym> = Vec::new();
        for i in 0..inputs.len() {
            vals.push(Sym::input(&format!("x{i}")));
        }
        for i in 0..params.len() {
            vals.push(Sym::param(&format!("p{i}")));
        }
        let out = run_program(steps, vals);
        out.output("y");
    });
    let mut vals: Vec<f64> = inputs.to_vec();
    vals.extend_from_slice(params);
    (dag, run_program(steps, vals))
}

// Exercises the x - x folding rule.
#[allow(clippy::eq_op)]
fn run_program<T: Scalar + Divisible>(steps: &[Step], mut vals: Vec<T>) -> T {
    vals.push(T::cst(0.0));
    vals.push(T::cst(1.0));
    for &(op, i, j, c) in steps {
        let a = vals[i % vals.len()];
        let b = vals[j % vals.len()];
        let v = match op % 9 {
            0 => a + b,
            1 => a - b,
            2 => a * b,
            3 => -a,
            4 => a.sin(),
            5 => b.cos(),
            6 => a * T::cst(c),
            7 => a - a,
            // Denominator bounded away from zero.
            _ => a.divide(T::cst(2.0) + b.sin()),
        };
        vals.push(v);
    }
    // Sum the last few values so most of the program is live.
    let k = vals.len().min(4);
    let mut acc = T::cst(0.0);
    for v in &vals[vals.len() - k..] {
        acc = acc + *v;
    }
    acc
}

pub trait Divisible: Sized {
    fn divide(self, o: Self) -> Self;
}

impl Divisible for f64 {
    fn divide(self, o: f64) -> f64 {
        self / o
    }
}

impl Divisible for Sym {
    fn divide(self, o: Sym) -> Sym {
        self.div(o)
    }
}

/// Evaluates a DAG built by `random_program`, binding inputs and params by name.
pub fn eval_named(dag: &ExprDag, inputs: &[f64], params: &[f64]) -> f64 {
    let idx = |s: &str| s[1..].parse::<usize>().unwrap();
    let iv: Vec<f64> = dag.inputs.iter().map(|s| inputs[idx(s)]).collect();
    let pv: Vec<f64> = dag.params.iter().map(|s| params[idx(s)]).collect();
    dag.eval(&iv, &pv)[0]
}

/// The same program interned node by node with no rewriting at all.
pub fn raw_program(steps: &[Step], n_inputs: usize, n_params: usize) -> ExprDag {
    let mut d = ExprDag::new();
    let mut vals: Vec<Id> = (0..n_inputs).map(|i| d.input(&format!("x{i}"))).collect();
    vals.extend((0..n_params).map(|i| d.param(&format!("p{i}"))));
    vals.push(d.intern(Node::Const(0.0f64.to_bits())));
    vals.push(d.intern(Node::Const(1.0f64.to_bits())));
    let two = d.intern(Node::Const(2.0f64.to_bits()));
    for &(op, i, j, c) in steps {
        let a = vals[i % vals.len()];
        let b = vals[j % vals.len()];
        let n = match op % 9 {
            0 => Node::Add(a, b),
            1 => {
                let nb = d.intern(Node::Neg(b));
                Node::Add(a, nb)
            }
            2 => Node::Mul(a, b),
            3 => Node::Neg(a),
            4 => Node::Sin(a),
            5 => Node::Cos(b),
            6 => {
                let k = d.intern(Node::Const(c.to_bits()));
                Node::Mul(a, k)
            }
            7 => {
                let na = d.intern(Node::Neg(a));
                Node::Add(a, na)
            }
            _ => {
                let s = d.intern(Node::Sin(b));
                let den = d.intern(Node::Add(two, s));
                Node::Div(a, den)
            }
        };
        vals.push(d.intern(n));
    }
    let k = vals.len().min(4);
    let mut acc = d.intern(Node::Const(0.0f64.to_bits()));
    for &v in &vals[vals.len() - k..] {
        acc = d.intern(Node::Add(acc, v));
    }
    d.set_output("y", acc);
    d
}

pub fn zero_map(labels: &[String]) -> HashMap<String, f64> {
    labels.iter().map(|l| (l.clone(), 0.0)).collect()
}

/// Evaluates a traced dynamics DAG, binding `q[i]`, `dq[i]`, `ddq[i]` and parameter labels by name.
pub fn eval_traced(dag: &ExprDag, mech: &Mechanism, q: &[f64], dq: &[f64], ddq: &[f64], phi: &[f64]) -> Vec<f64> {
    let inputs: Vec<f64> = dag
        .inputs
        .iter()
        .map(|name| {
            let (pre, idx) = name.split_once('[').unwrap();
            let i: usize = idx.trim_end_matches(']').parse().unwrap();
            match pre {
                "q" => q[i],
                "dq" => dq[i],
                _ => ddq[i],
            }
        })
        .collect();
    let params: Vec<f64> = dag.params.iter().map(|p| phi[mech.labels.iter().position(|l| l == p).unwrap()]).collect();
    dag.eval(&inputs, &params)
}
