//! The 6-PUS hexaglide as a kinematic tree plus 18 S-joint closure equations,
//! solved for the dependent coordinates and projected onto the carriage heights.
//!
//! Coordinate layout: q[0..12] universal-joint angles (two per bar), q[12..18]
//! head position and XYZ Euler angles, q[18..24] carriage heights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::norm1;
use crate::mbmodel::HexaglideGeometry;
use crate::scalar::{rot_z, Axis, Rot, V3};
use crate::tree::{world_poses, Joint, JointKind, LinkMotion, Tree};

pub const N_Q: usize = 24;
pub const N_DEP: usize = 18;
pub const N_IND: usize = 6;
pub const HEAD_BODY: usize = 6;

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;
const POLISH_STEPS: usize = 2;
pub const COND_LIMIT: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct Hexaglide {
    pub geom: HexaglideGeometry,
    /// Tree joint carrying bar i.
    pub bar_joint: [usize; 6],
    pub head_joint: usize,
    /// S-joint centres in the head frame.
    pub head_points: [V3<f64>; 6],
    /// U-joint centres in the world frame at zero carriage height.
    pub u_points: [[f64; 2]; 6],
    pub sector: [f64; 3],
}

/// A solved configuration of the closed loop.
#[derive(Clone, Debug)]
pub struct ConstrainedState {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    /// 18 × 24, columns ordered [dependent | independent].
    pub phi_q: DMatrix<f64>,
    /// 24 × 6 null-space basis [-φ_d⁻¹φ_z; 1].
    pub rmat: DMatrix<f64>,
    /// φ_q q̈ = γ along any motion through (q, q̇).
    pub gamma: DVector<f64>,
    /// [φ_d⁻¹γ; 0], the acceleration of the dependent coordinates at z̈ = 0.
    pub acc_bias: DVector<f64>,
    /// 1-norm condition number of φ_d.
    pub cond: f64,
    pub newton_iterations: usize,
}

fn pair(i: usize) -> (usize, f64) {
    (i / 2, if i % 2 == 0 { -1.0 } else { 1.0 })
}

/// Builds the open tree of the hexaglide and its closure description.
pub fn hexaglide_tree(g: &HexaglideGeometry) -> (Tree, Hexaglide) {
    let ident = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut joints = Vec::new();
    let mut bar_joint = [0; 6];
    let mut head_points = [V3::zero(); 6];
    let mut u_points = [[0.0; 2]; 6];
    let sector = [0.0, g.alpha_sym, 2.0 * g.alpha_sym];
    for i in 0..6 {
        let (k, sgn) = pair(i);
        let (s, c) = sector[k].sin_cos();
        let radial = [c, s];
        let tangent = [-s, c];
        let u = [
            g.r_frame * radial[0] + sgn * 0.5 * g.e * tangent[0],
            g.r_frame * radial[1] + sgn * 0.5 * g.e * tangent[1],
        ];
        u_points[i] = u;
        head_points[i] = V3::new(
            g.r_head * radial[0] + sgn * 0.5 * g.e * tangent[0],
            g.r_head * radial[1] + sgn * 0.5 * g.e * tangent[1],
            0.0,
        );
        let carriage = joints.len();
        joints.push(Joint {
            parent: None,
            fixed_rot: rot_z(sector[k]),
            translation: [u[0], u[1], 0.0],
            kind: JointKind::Prismatic,
            axis: Axis::Z,
            coord: N_DEP + i,
            offset: 0.0,
            body: None,
        });
        joints.push(Joint {
            parent: Some(carriage),
            fixed_rot: ident,
            translation: [0.0; 3],
            kind: JointKind::Revolute,
            axis: Axis::Y,
            coord: 2 * i,
            offset: 0.0,
            body: None,
        });
        bar_joint[i] = joints.len();
        joints.push(Joint {
            parent: Some(carriage + 1),
            fixed_rot: ident,
            translation: [0.0; 3],
            kind: JointKind::Revolute,
            axis: Axis::X,
            coord: 2 * i + 1,
            offset: 0.0,
            body: Some(i),
        });
    }
    let chain = [
        (JointKind::Prismatic, Axis::X),
        (JointKind::Prismatic, Axis::Y),
        (JointKind::Prismatic, Axis::Z),
        (JointKind::Revolute, Axis::X),
        (JointKind::Revolute, Axis::Y),
        (JointKind::Revolute, Axis::Z),
    ];
    for (c, (kind, axis)) in chain.into_iter().enumerate() {
        let parent = if c == 0 { None } else { Some(joints.len() - 1) };
        joints.push(Joint {
            parent,
            fixed_rot: ident,
            translation: [0.0; 3],
            kind,
            axis,
            coord: 12 + c,
            offset: 0.0,
            body: if c == 5 { Some(HEAD_BODY) } else { None },
        });
    }
    let head_joint = joints.len() - 1;
    let tree = Tree { joints, n_q: N_Q, n_bodies: 7 };
    (tree, Hexaglide { geom: g.clone(), bar_joint, head_joint, head_points, u_points, sector })
}

impl Hexaglide {
    fn bar_point(&self) -> V3<f64> {
        V3::new(0.0, 0.0, -self.geom.l)
    }

    /// Closure residual: bar S point minus head S point, world frame, 18 rows.
    pub fn residual(&self, tree: &Tree, q: &[f64]) -> DVector<f64> {
        let zeros = vec![0.0; N_Q];
        let motion = tree.forward(q, &zeros, &zeros, V3::zero());
        let poses = world_poses(tree, &motion);
        let mut out = DVector::zeros(N_DEP);
        let (rh, ph) = poses[self.head_joint];
        for i in 0..6 {
            let (rb, pb) = poses[self.bar_joint[i]];
            let sb = pb + rb.mul_vec(self.bar_point());
            let sh = ph + rh.mul_vec(self.head_points[i]);
            let d = sb - sh;
            out[3 * i] = d.x;
            out[3 * i + 1] = d.y;
            out[3 * i + 2] = d.z;
        }
        out
    }

    /// Constraint Jacobian φ_q and γ = -(bias acceleration of the closure residual).
    pub fn jacobian_and_gamma(&self, tree: &Tree, q: &[f64], dq: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let zeros = vec![0.0; N_Q];
        let motion = tree.forward(q, dq, &zeros, V3::zero());
        let poses = world_poses(tree, &motion);
        let mut jac = DMatrix::zeros(N_DEP, N_Q);
        let mut gamma = DVector::zeros(N_DEP);
        let (rh, ph) = poses[self.head_joint];
        for i in 0..6 {
            let jb = self.bar_joint[i];
            let (rb, pb) = poses[jb];
            let sb = pb + rb.mul_vec(self.bar_point());
            let sh = ph + rh.mul_vec(self.head_points[i]);
            add_point_jacobian(tree, &poses, jb, sb, 1.0, 3 * i, &mut jac);
            add_point_jacobian(tree, &poses, self.head_joint, sh, -1.0, 3 * i, &mut jac);
            let ab = point_bias_acc(&motion[jb], &rb, self.bar_point());
            let ah = point_bias_acc(&motion[self.head_joint], &rh, self.head_points[i]);
            let d = ah - ab;
            gamma[3 * i] = d.x;
            gamma[3 * i + 1] = d.y;
            gamma[3 * i + 2] = d.z;
        }
        (jac, gamma)
    }

    /// Closed-form initial guess for the dependent coordinates.
    pub fn home_guess(&self, z: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        let zm = z.iter().sum::<f64>() / z.len() as f64;
        let horiz = g.r_frame - g.r_head;
        let h = zm - (g.l * g.l - horiz * horiz).max(0.0).sqrt();
        let mut q = vec![0.0; N_Q];
        q[14] = h;
        for i in 0..6 {
            let (k, _) = pair(i);
            let u = self.u_points[i];
            let s = self.head_points[i];
            let dw = [s.x - u[0], s.y - u[1], h - z[i]];
            let (sn, cs) = self.sector[k].sin_cos();
            // world direction to the sector frame (transpose of Rz)
            let v = [cs * dw[0] + sn * dw[1], -sn * dw[0] + cs * dw[1], dw[2]];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let v = [v[0] / n, v[1] / n, v[2] / n];
            q[2 * i + 1] = v[1].clamp(-1.0, 1.0).asin();
            q[2 * i] = (-v[0]).atan2(-v[2]);
        }
        q[N_DEP..].copy_from_slice(z);
        q
    }

    /// Solves the closure for the dependent coordinates at (z, ż).
    /// `warm` is a previous full coordinate vector used as Newton seed.
    pub fn solve(&self, tree: &Tree, z: &[f64], dz: &[f64], warm: Option<&[f64]>) -> Result<ConstrainedState> {
        let mut q = match warm {
            Some(w) => {
                let mut q = w.to_vec();
                q[N_DEP..].copy_from_slice(z);
                q
            }
            None => self.home_guess(z),
        };
        let mut iterations = 0;
        let mut res = self.residual(tree, &q);
        let zeros = vec![0.0; N_Q];
        loop {
            let rmax = res.amax();
            if !rmax.is_finite() {
                return Err(Error::OutsideWorkspace { residual: rmax, iterations });
            }
            if rmax <= NEWTON_TOL {
                break;
            }
            if iterations >= NEWTON_MAX_ITER {
                return Err(Error::OutsideWorkspace { residual: rmax, iterations });
            }
            let (jac, _) = self.jacobian_and_gamma(tree, &q, &zeros);
            let phi_d = jac.columns(0, N_DEP).into_owned();
            let Some(step) = phi_d.lu().solve(&(-&res)) else {
                return Err(Error::ConfigurationSingular { cond: f64::INFINITY });
            };
            // Backtracking on the residual norm keeps far-off seeds from diverging.
            let base = res.norm();
            let mut lambda = 1.0;
            let mut trial = q.clone();
            let mut trial_res;
            loop {
                for k in 0..N_DEP {
                    trial[k] = q[k] + lambda * step[k];
                }
                trial_res = self.residual(tree, &trial);
                if trial_res.norm() < base || lambda < 1e-3 {
                    break;
                }
                lambda *= 0.5;
            }
            q = trial;
            res = trial_res;
            iterations += 1;
        }
        // Polish to machine precision so the solution does not depend on the seed.
        for _ in 0..POLISH_STEPS {
            let (jac, _) = self.jacobian_and_gamma(tree, &q, &zeros);
            let Some(step) = jac.columns(0, N_DEP).into_owned().lu().solve(&(-&res)) else {
                break;
            };
            let mut trial = q.clone();
            for k in 0..N_DEP {
                trial[k] += step[k];
            }
            let trial_res = self.residual(tree, &trial);
            if !(trial_res.amax() < res.amax()) {
                break;
            }
            q = trial;
            res = trial_res;
        }
        let mut dq = vec![0.0; N_Q];
        dq[N_DEP..].copy_from_slice(dz);
        let (phi_q, _) = self.jacobian_and_gamma(tree, &q, &dq);
        let phi_d = phi_q.columns(0, N_DEP).into_owned();
        let phi_z = phi_q.columns(N_DEP, N_IND).into_owned();
        let Some(inv) = phi_d.clone().try_inverse() else {
            return Err(Error::ConfigurationSingular { cond: f64::INFINITY });
        };
        let cond = norm1(&phi_d) * norm1(&inv);
        if !(cond <= COND_LIMIT) {
            return Err(Error::ConfigurationSingular { cond });
        }
        let mut rmat = DMatrix::zeros(N_Q, N_IND);
        rmat.rows_mut(0, N_DEP).copy_from(&(-(&inv * &phi_z)));
        rmat.rows_mut(N_DEP, N_IND).fill_with_identity();
        let dzv = DVector::from_column_slice(dz);
        let ddep = rmat.rows(0, N_DEP) * &dzv;
        dq[..N_DEP].copy_from_slice(ddep.as_slice());
        let (phi_q, gamma) = self.jacobian_and_gamma(tree, &q, &dq);
        let mut acc_bias = DVector::zeros(N_Q);
        acc_bias.rows_mut(0, N_DEP).copy_from(&(&inv * &gamma));
        Ok(ConstrainedState { q, dq, phi_q, rmat, gamma, acc_bias, cond, newton_iterations: iterations })
    }
}

/// Adds `sign ·` ∂(world point on the link of joint j)/∂q into rows r0..r0+3.
fn add_point_jacobian(
    tree: &Tree,
    poses: &[(Rot<f64>, V3<f64>)],
    j: usize,
    point: V3<f64>,
    sign: f64,
    r0: usize,
    jac: &mut DMatrix<f64>,
) {
    let mut at = Some(j);
    while let Some(k) = at {
        let jt = &tree.joints[k];
        let (rk, pk) = poses[k];
        let axis = rk.mul_vec(jt.axis.unit());
        let col = match jt.kind {
            JointKind::Revolute => axis.cross(point - pk),
            JointKind::Prismatic => axis,
        };
        for (r, v) in col.to_array().into_iter().enumerate() {
            jac[(r0 + r, jt.coord)] += sign * v;
        }
        at = jt.parent;
    }
}

/// World acceleration of a body-fixed point, given link motion computed with
/// zero joint accelerations and no gravity.
fn point_bias_acc(lm: &LinkMotion<f64>, rot_w: &Rot<f64>, r: V3<f64>) -> V3<f64> {
    rot_w.mul_vec(lm.a + lm.dw.cross(r) + lm.w.cross(lm.w.cross(r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mbmodel::build_hexaglide;
    use crate::mbmodel::Topology;

    fn setup() -> (Tree, Hexaglide) {
        let m = build_hexaglide();
        let Topology::HexaglidePUS(g) = &m.topology else { panic!() };
        hexaglide_tree(g)
    }

    #[test]
    fn home_configuration_closes() {
        let (tree, hx) = setup();
        let z = [1.5; 6];
        let st = hx.solve(&tree, &z, &[0.0; 6], None).unwrap();
        assert!(hx.residual(&tree, &st.q).amax() <= 1e-10);
        assert!(st.cond < 1e8);
        // every bar spans exactly L between its U and S joints
        let zeros = vec![0.0; N_Q];
        let motion = tree.forward(&st.q, &zeros, &zeros, V3::zero());
        let poses = world_poses(&tree, &motion);
        let (rh, ph) = poses[hx.head_joint];
        for i in 0..6 {
            let u = V3::new(hx.u_points[i][0], hx.u_points[i][1], z[i]);
            let s = ph + rh.mul_vec(hx.head_points[i]);
            let d = s - u;
            assert!((d.dot(d).sqrt() - 1.0).abs() < 1e-10);
        }
        // head centred and level
        assert!(st.q[12].abs() < 1e-10 && st.q[13].abs() < 1e-10);
        assert!((st.q[14] - (1.5 - (1.0f64 - 0.411f64.powi(2)).sqrt())).abs() < 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (tree, hx) = setup();
        let z = [1.45, 1.52, 1.5, 1.55, 1.48, 1.5];
        let st = hx.solve(&tree, &z, &[0.0; 6], None).unwrap();
        let h = 1e-6;
        for c in [0, 5, 12, 15, 17, 19] {
            let mut qp = st.q.clone();
            let mut qm = st.q.clone();
            qp[c] += h;
            qm[c] -= h;
            let fd = (hx.residual(&tree, &qp) - hx.residual(&tree, &qm)) / (2.0 * h);
            let err = (fd - st.phi_q.column(c)).amax();
            assert!(err < 1e-8, "column {c}: {err}");
        }
    }

    #[test]
    fn gamma_matches_finite_differences() {
        // d/dt(φ_q q̇) = φ_q q̈ - γ, checked along q(t) = q0 + t v + t² a / 2.
        let (tree, hx) = setup();
        let z = [1.5, 1.47, 1.53, 1.5, 1.49, 1.51];
        let st = hx.solve(&tree, &z, &[0.1, -0.2, 0.3, 0.0, 0.1, -0.1], None).unwrap();
        let v = DVector::from_column_slice(&st.dq);
        let a = DVector::from_fn(N_Q, |i, _| 0.1 * ((i as f64) * 0.7).sin());
        let h = 1e-6;
        let at = |t: f64| -> (Vec<f64>, Vec<f64>) {
            let q: Vec<f64> = (0..N_Q).map(|i| st.q[i] + t * v[i] + 0.5 * t * t * a[i]).collect();
            let dq: Vec<f64> = (0..N_Q).map(|i| v[i] + t * a[i]).collect();
            (q, dq)
        };
        let (qp, dqp) = at(h);
        let (qm, dqm) = at(-h);
        let (jp, _) = hx.jacobian_and_gamma(&tree, &qp, &dqp);
        let (jm, _) = hx.jacobian_and_gamma(&tree, &qm, &dqm);
        let fd = (jp * DVector::from_vec(dqp) - jm * DVector::from_vec(dqm)) / (2.0 * h);
        let analytic = &st.phi_q * &a - &st.gamma;
        assert!((fd - analytic).amax() < 1e-6);
    }

    #[test]
    fn complement_annihilates_jacobian() {
        let (tree, hx) = setup();
        let z = [1.4, 1.5, 1.6, 1.5, 1.45, 1.55];
        let dz = [0.3, -0.1, 0.2, 0.0, -0.4, 0.1];
        let st = hx.solve(&tree, &z, &dz, None).unwrap();
        assert!((&st.phi_q * &st.rmat).amax() < 1e-10);
        let bottom = st.rmat.rows(N_DEP, N_IND).into_owned();
        assert_eq!(bottom, DMatrix::identity(6, 6));
        let dq = &st.rmat * DVector::from_column_slice(&dz);
        assert!((dq - DVector::from_column_slice(&st.dq)).amax() < 1e-10);
        assert!((&st.phi_q * DVector::from_column_slice(&st.dq)).amax() < 1e-10);
    }

    #[test]
    fn unreachable_heights_are_rejected() {
        let (tree, hx) = setup();
        let z = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        assert!(hx.solve(&tree, &z, &[0.0; 6], None).is_err());
    }
}
