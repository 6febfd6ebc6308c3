//! Inverse and direct dynamics of a compiled model on its independent coordinates.

pub mod closed_loop;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lu_solve_cond;
use crate::mbmodel::{MultibodyModel, ParamVector, Topology};
use crate::scalar::{rot_x, V3};
use crate::tree::{self, world_poses, BodyParams, Joint, JointKind, Tree};

pub use closed_loop::{ConstrainedState, Hexaglide};

/// Condition number above which a mass matrix is treated as singular.
pub const MASS_COND_LIMIT: f64 = 1e12;

/// Number and seed of the random states probed to find dynamically inert parameters.
pub const PROBE_STATES: usize = 100;
pub const PROBE_SEED: u64 = 0x5eed_0001;
pub const ZERO_COLUMN_TOL: f64 = 1e-12;

/// One sample (z, ż, z̈, τ_z) on the independent coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedStateSample {
    pub z: Vec<f64>,
    pub dz: Vec<f64>,
    pub ddz: Vec<f64>,
    pub tau: Vec<f64>,
}

impl ExtendedStateSample {
    pub fn is_valid(&self, n: usize) -> bool {
        [&self.z, &self.dz, &self.ddz, &self.tau].iter().all(|v| v.len() == n && v.iter().all(|x| x.is_finite()))
    }
}

pub fn mdh_tree(joints: &[crate::mbmodel::MdhJoint]) -> Tree {
    let tj = joints
        .iter()
        .enumerate()
        .map(|(i, j)| Joint {
            parent: if i == 0 { None } else { Some(i - 1) },
            fixed_rot: rot_x(j.alpha),
            translation: [j.a, -j.alpha.sin() * j.d, j.alpha.cos() * j.d].map(|v| if v.abs() < 1e-15 { 0.0 } else { v }),
            kind: JointKind::Revolute,
            axis: crate::scalar::Axis::Z,
            coord: j.coordinate_index,
            offset: j.theta_offset,
            body: Some(i),
        })
        .collect();
    Tree { joints: tj, n_q: joints.len(), n_bodies: joints.len() }
}

/// Full and independent coordinates of one state.
#[derive(Clone, Debug)]
pub struct Lifted {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub closed: Option<ConstrainedState>,
}

impl Lifted {
    /// q̈ = R z̈ + [φ_d⁻¹γ; 0] (plain z̈ for open chains).
    pub fn ddq(&self, ddz: &[f64]) -> Vec<f64> {
        match &self.closed {
            Some(c) => (&c.rmat * DVector::from_column_slice(ddz) + &c.acc_bias).as_slice().to_vec(),
            None => ddz.to_vec(),
        }
    }

    /// Rᵀ v.
    pub fn project_vec(&self, v: &[f64]) -> DVector<f64> {
        match &self.closed {
            Some(c) => c.rmat.tr_mul(&DVector::from_column_slice(v)),
            None => DVector::from_column_slice(v),
        }
    }

    /// Rᵀ K.
    pub fn project_mat(&self, k: DMatrix<f64>) -> DMatrix<f64> {
        match &self.closed {
            Some(c) => c.rmat.tr_mul(&k),
            None => k,
        }
    }
}

/// Per-sample regressor of the direct-dynamics functions: for every parameter
/// p, column i of M and the bias δ, so that M(φ)[:, i] = m_cols[i]·φ and δ(φ) = delta·φ.
#[derive(Clone, Debug)]
pub struct DdmRegressor {
    pub m_cols: Vec<DMatrix<f64>>,
    pub delta: DMatrix<f64>,
}

impl DdmRegressor {
    pub fn mass_and_bias(&self, phi: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.delta.nrows();
        let mut m = DMatrix::zeros(n, n);
        for (i, mc) in self.m_cols.iter().enumerate() {
            m.set_column(i, &(mc * phi));
        }
        (m, &self.delta * phi)
    }
}

/// A model compiled for evaluation: kinematic tree, optional loop closure and
/// the active (dynamically relevant) parameter columns.
#[derive(Clone, Debug)]
pub struct Mechanism {
    pub model: MultibodyModel,
    pub tree: Tree,
    pub closure: Option<Hexaglide>,
    /// Slot indices (into the 10-per-body layout) of the active parameters.
    pub active: Vec<usize>,
    pub labels: Vec<String>,
    pub gravity: V3<f64>,
}

impl Mechanism {
    pub fn new(model: MultibodyModel) -> Result<Self> {
        let mech = Self::unfiltered(model)?;
        let active = mech.probe_active_columns()?;
        Ok(mech.with_active(active))
    }

    /// Compiles without the zero-column filter: every slot is active.
    pub fn unfiltered(model: MultibodyModel) -> Result<Self> {
        model.validate()?;
        let (tree, closure) = match &model.topology {
            Topology::OpenChain(j) => (mdh_tree(j), None),
            Topology::HexaglidePUS(g) => {
                let (t, h) = closed_loop::hexaglide_tree(g);
                (t, Some(h))
            }
        };
        let n_slots = 10 * model.bodies.len();
        let labels = model.all_labels();
        let gravity = V3::new(model.gravity[0], model.gravity[1], model.gravity[2]);
        Ok(Mechanism { model, tree, closure, active: (0..n_slots).collect(), labels, gravity })
    }

    pub fn with_active(mut self, active: Vec<usize>) -> Self {
        let all = self.model.all_labels();
        self.labels = active.iter().map(|&s| all[s].clone()).collect();
        self.active = active;
        self
    }

    pub fn n_dof(&self) -> usize {
        self.model.n_dof()
    }

    pub fn n_q(&self) -> usize {
        self.tree.n_q
    }

    pub fn n_phi(&self) -> usize {
        self.active.len()
    }

    pub fn is_closed_loop(&self) -> bool {
        self.closure.is_some()
    }

    pub fn phi_full(&self) -> ParamVector {
        let all = self.model.all_values();
        ParamVector { labels: self.labels.clone(), values: self.active.iter().map(|&s| all[s]).collect() }
    }

    /// Active parameter vector scattered into the per-body slot layout.
    pub fn slots(&self, phi: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; 10 * self.model.bodies.len()];
        for (&slot, &v) in self.active.iter().zip(phi) {
            s[slot] = v;
        }
        s
    }

    pub fn body_params(&self, phi: &[f64]) -> Vec<BodyParams<f64>> {
        self.slots(phi).chunks(10).map(BodyParams::from_slice).collect()
    }

    fn check_state(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.n_dof() {
            return Err(Error::Dimension(format!("{what} has {} entries, expected {}", v.len(), self.n_dof())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("{what} is not finite")));
        }
        Ok(())
    }

    fn check_phi(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.n_phi() {
            return Err(Error::Dimension(format!("phi has {} entries, expected {}", phi.len(), self.n_phi())));
        }
        Ok(())
    }

    /// Full coordinates for (z, ż); closed loops solve their dependent coordinates.
    pub fn lift(&self, z: &[f64], dz: &[f64], warm: Option<&[f64]>) -> Result<Lifted> {
        self.check_state(z, "z")?;
        self.check_state(dz, "dz")?;
        match &self.closure {
            None => Ok(Lifted { q: z.to_vec(), dq: dz.to_vec(), closed: None }),
            Some(h) => {
                let st = h.solve(&self.tree, z, dz, warm)?;
                Ok(Lifted { q: st.q.clone(), dq: st.dq.clone(), closed: Some(st) })
            }
        }
    }

    /// Regressor over every slot of the tree on the full coordinates.
    fn tree_regressor(&self, q: &[f64], dq: &[f64], ddq: &[f64], gravity: V3<f64>) -> DMatrix<f64> {
        let k = tree::regressor(&self.tree, q, dq, ddq, gravity);
        if self.active.len() == k.ncols() {
            k
        } else {
            k.select_columns(&self.active)
        }
    }

    pub fn regressor_lifted(&self, l: &Lifted, ddz: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(ddz, "ddz")?;
        let k = self.tree_regressor(&l.q, &l.dq, &l.ddq(ddz), self.gravity);
        Ok(l.project_mat(k))
    }

    /// K(z, ż, z̈) with τ = K φ, n_dof × n_φ.
    pub fn regressor(&self, z: &[f64], dz: &[f64], ddz: &[f64]) -> Result<DMatrix<f64>> {
        let l = self.lift(z, dz, None)?;
        self.regressor_lifted(&l, ddz)
    }

    pub fn idm_lifted(&self, l: &Lifted, ddz: &[f64], phi: &[f64]) -> Result<DVector<f64>> {
        self.check_state(ddz, "ddz")?;
        self.check_phi(phi)?;
        let tau_q = self.tree.rnea(&l.q, &l.dq, &l.ddq(ddz), self.gravity, &self.body_params(phi));
        Ok(l.project_vec(&tau_q))
    }

    /// Inverse dynamics by recursive Newton–Euler (projected for closed loops).
    pub fn idm(&self, z: &[f64], dz: &[f64], ddz: &[f64], phi: &[f64]) -> Result<DVector<f64>> {
        let l = self.lift(z, dz, None)?;
        self.idm_lifted(&l, ddz, phi)
    }

    pub fn mass_and_bias_lifted(&self, l: &Lifted, phi: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check_phi(phi)?;
        let bodies = self.body_params(phi);
        let mq = self.tree.crba(&l.q, &bodies);
        let n = self.n_q();
        let mq = DMatrix::from_fn(n, n, |i, j| mq[i][j]);
        let zero = vec![0.0; self.n_dof()];
        let delta_q = self.tree.rnea(&l.q, &l.dq, &l.ddq(&zero), self.gravity, &bodies);
        let delta = l.project_vec(&delta_q);
        let m = match &l.closed {
            Some(c) => c.rmat.tr_mul(&(&mq * &c.rmat)),
            None => mq,
        };
        Ok((m, delta))
    }

    /// M and δ with M z̈ + δ = τ.
    pub fn mass_and_bias(&self, z: &[f64], dz: &[f64], phi: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let l = self.lift(z, dz, None)?;
        self.mass_and_bias_lifted(&l, phi)
    }

    /// Solves M z̈ = τ − δ; returns z̈ and cond₁(M).
    pub fn forward_dynamics(&self, z: &[f64], dz: &[f64], tau: &[f64], phi: &[f64]) -> Result<(DVector<f64>, f64)> {
        self.check_state(tau, "tau")?;
        let (m, delta) = self.mass_and_bias(z, dz, phi)?;
        solve_mass(&m, &(DVector::from_column_slice(tau) - delta))
    }

    /// Direct-dynamics regressor at a lifted state.
    pub fn ddm_regressor(&self, l: &Lifted) -> Result<DdmRegressor> {
        let n = self.n_dof();
        let zeros_q = vec![0.0; self.n_q()];
        let mut m_cols = Vec::with_capacity(n);
        for i in 0..n {
            let ddq: Vec<f64> = match &l.closed {
                Some(c) => c.rmat.column(i).iter().copied().collect(),
                None => {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    e
                }
            };
            let k = self.tree_regressor(&l.q, &zeros_q, &ddq, V3::zero());
            m_cols.push(l.project_mat(k));
        }
        let delta = l.project_mat(self.tree_regressor(&l.q, &l.dq, &l.ddq(&vec![0.0; n]), self.gravity));
        Ok(DdmRegressor { m_cols, delta })
    }

    /// Kinetic and potential energy on the full coordinates.
    pub fn energy(&self, q: &[f64], dq: &[f64], phi: &[f64]) -> (f64, f64) {
        let bodies = self.body_params(phi);
        let mq = self.tree.crba(q, &bodies);
        let mut t = 0.0;
        for i in 0..q.len() {
            for j in 0..q.len() {
                t += 0.5 * dq[i] * mq[i][j] * dq[j];
            }
        }
        let zeros = vec![0.0; q.len()];
        let motion = self.tree.forward(q, &zeros, &zeros, V3::zero());
        let poses = world_poses(&self.tree, &motion);
        let mut v = 0.0;
        for (j, jt) in self.tree.joints.iter().enumerate() {
            if let Some(b) = jt.body {
                let (r, p) = poses[j];
                let first_moment = p.scale(bodies[b].m) + r.mul_vec(bodies[b].d);
                v -= self.gravity.dot(first_moment);
            }
        }
        (t, v)
    }

    /// A random state inside the region where the model is well defined.
    pub fn random_state(&self, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n_dof();
        if self.is_closed_loop() {
            // Pair-level offsets move freely; members of a pair must stay close.
            let pair: Vec<f64> = (0..n / 2).map(|_| rng.gen_range(-0.15..0.15)).collect();
            let z = (0..n).map(|i| 1.5 + pair[i / 2] + rng.gen_range(-0.02..0.02)).collect();
            let dz = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let ddz = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (z, dz, ddz)
        } else {
            let pi = std::f64::consts::PI;
            let z = (0..n).map(|_| rng.gen_range(-pi..pi)).collect();
            let dz = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ddz = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (z, dz, ddz)
        }
    }

    /// Slots whose regressor column stays below `ZERO_COLUMN_TOL · max|K|` over
    /// random probe states are dropped.
    fn probe_active_columns(&self) -> Result<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let n_slots = self.active.len();
        let mut col_max = vec![0.0f64; n_slots];
        for _ in 0..PROBE_STATES {
            let (z, dz, ddz) = self.random_state(&mut rng);
            let k = self.regressor(&z, &dz, &ddz)?;
            for (c, m) in col_max.iter_mut().enumerate() {
                *m = m.max(k.column(c).amax());
            }
        }
        let global = col_max.iter().copied().fold(0.0, f64::max);
        Ok((0..n_slots).filter(|&c| col_max[c] >= ZERO_COLUMN_TOL * global).collect())
    }
}

/// LU solve of a mass matrix with the singularity policy of the direct dynamics.
pub fn solve_mass(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    match lu_solve_cond(m, rhs) {
        Some((x, cond)) if cond <= MASS_COND_LIMIT => Ok((x, cond)),
        Some((_, cond)) => Err(Error::MassSingular { cond }),
        None => Err(Error::MassSingular { cond: f64::INFINITY }),
    }
}
