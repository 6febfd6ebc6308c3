//! Kinematic trees of single-axis joints and the recursions evaluated on them.
//!
//! Frames follow the link-frame convention: every joint owns a child frame,
//! quantities of a body are expressed in its own frame, and a body's inertial
//! parameters are (m, m·c, I about the frame origin).

use crate::scalar::{Axis, Rot, Scalar, Sym3, V3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One joint of the tree. The child frame is obtained from the parent frame
/// by translating to `translation`, rotating by `fixed_rot`, then moving by
/// `q[coord] + offset` about or along `axis`.
#[derive(Clone, Debug)]
pub struct Joint {
    pub parent: Option<usize>,
    pub fixed_rot: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub kind: JointKind,
    pub axis: Axis,
    pub coord: usize,
    pub offset: f64,
    /// Index of the body rigidly attached to the child frame.
    pub body: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Tree {
    pub joints: Vec<Joint>,
    pub n_q: usize,
    pub n_bodies: usize,
}

/// Inertial parameters of one body in a generic scalar type.
#[derive(Clone, Copy, Debug)]
pub struct BodyParams<T> {
    pub m: T,
    pub d: V3<T>,
    pub i: Sym3<T>,
}

impl<T: Scalar> BodyParams<T> {
    /// From the fixed order (m, d_x, d_y, d_z, I_xx, I_xy, I_xz, I_yy, I_yz, I_zz).
    pub fn from_slice(p: &[T]) -> Self {
        BodyParams {
            m: p[0],
            d: V3::new(p[1], p[2], p[3]),
            i: Sym3 { xx: p[4], xy: p[5], xz: p[6], yy: p[7], yz: p[8], zz: p[9] },
        }
    }
}

pub(crate) fn skew_sq_neg<T: Scalar>(p: V3<T>) -> Sym3<T> {
    // -[p]x^2 = |p|^2 1 - p pᵀ
    Sym3 {
        xx: p.y * p.y + p.z * p.z,
        xy: -(p.x * p.y),
        xz: -(p.x * p.z),
        yy: p.x * p.x + p.z * p.z,
        yz: -(p.y * p.z),
        zz: p.x * p.x + p.y * p.y,
    }
}

/// -([p]x[d]x + [d]x[p]x) = 2(p·d)1 - p dᵀ - d pᵀ
fn skew_sym_pair<T: Scalar>(p: V3<T>, d: V3<T>) -> Sym3<T> {
    let pd = p.x * d.x + p.y * d.y + p.z * d.z;
    let two = T::cst(2.0);
    Sym3 {
        xx: two * (pd - p.x * d.x),
        xy: -(p.x * d.y + d.x * p.y),
        xz: -(p.x * d.z + d.x * p.z),
        yy: two * (pd - p.y * d.y),
        yz: -(p.y * d.z + d.y * p.z),
        zz: two * (pd - p.z * d.z),
    }
}

impl Tree {
    /// Rotation (child to parent) and child-origin position in the parent frame.
    pub fn joint_transform<T: Scalar>(&self, j: usize, qj: T) -> (Rot<T>, V3<T>) {
        let jt = &self.joints[j];
        let fixed = Rot::<T>::from_f64(&jt.fixed_rot);
        let trans = V3::<T>::from_f64(jt.translation);
        let val = if jt.offset != 0.0 { qj + T::cst(jt.offset) } else { qj };
        match jt.kind {
            JointKind::Revolute => {
                let r = fixed.mul(&Rot::about(jt.axis, val.cos(), val.sin()));
                (r, trans)
            }
            JointKind::Prismatic => {
                let dir = fixed.mul_vec(jt.axis.unit());
                (fixed, trans + dir.scale(val))
            }
        }
    }

    /// Velocities and accelerations of every link frame, in that frame.
    pub fn forward<T: Scalar>(&self, q: &[T], dq: &[T], ddq: &[T], gravity: V3<T>) -> Vec<LinkMotion<T>> {
        let mut out: Vec<LinkMotion<T>> = Vec::with_capacity(self.joints.len());
        for (j, jt) in self.joints.iter().enumerate() {
            let (rot, pos) = self.joint_transform(j, q[jt.coord]);
            let (w_p, dw_p, a_p) = match jt.parent {
                Some(p) => (out[p].w, out[p].dw, out[p].a),
                None => (V3::zero(), V3::zero(), -gravity),
            };
            let ax: V3<T> = jt.axis.unit();
            let qd = dq[jt.coord];
            let qdd = ddq[jt.coord];
            let a_origin = a_p + dw_p.cross(pos) + w_p.cross(w_p.cross(pos));
            let w_in = rot.tr_mul_vec(w_p);
            let dw_in = rot.tr_mul_vec(dw_p);
            let a_in = rot.tr_mul_vec(a_origin);
            let (w, dw, a) = match jt.kind {
                JointKind::Revolute => {
                    let wj = ax.scale(qd);
                    (w_in + wj, dw_in + w_in.cross(wj) + ax.scale(qdd), a_in)
                }
                JointKind::Prismatic => {
                    let vj = ax.scale(qd);
                    let two = T::cst(2.0);
                    (w_in, dw_in, a_in + w_in.cross(vj).scale(two) + ax.scale(qdd))
                }
            };
            out.push(LinkMotion { rot, pos, w, dw, a });
        }
        out
    }

    /// Recursive Newton–Euler inverse dynamics: generalized force per coordinate.
    pub fn rnea<T: Scalar>(
        &self,
        q: &[T],
        dq: &[T],
        ddq: &[T],
        gravity: V3<T>,
        bodies: &[BodyParams<T>],
    ) -> Vec<T> {
        let motion = self.forward(q, dq, ddq, gravity);
        let nj = self.joints.len();
        let mut f: Vec<Option<V3<T>>> = vec![None; nj];
        let mut n: Vec<Option<V3<T>>> = vec![None; nj];
        for (j, jt) in self.joints.iter().enumerate() {
            if let Some(b) = jt.body {
                let p = &bodies[b];
                let lm = &motion[j];
                let wd = lm.w.cross(p.d);
                f[j] = Some(lm.a.scale(p.m) + lm.dw.cross(p.d) + lm.w.cross(wd));
                n[j] = Some(p.i.mul_vec(lm.dw) + lm.w.cross(p.i.mul_vec(lm.w)) + p.d.cross(lm.a));
            }
        }
        let mut tau = vec![T::zero(); self.n_q];
        let mut has = vec![false; self.n_q];
        for j in (0..nj).rev() {
            let jt = &self.joints[j];
            let (Some(fj), Some(nj_)) = (f[j], n[j]) else { continue };
            let ax: V3<T> = jt.axis.unit();
            let t = match jt.kind {
                JointKind::Revolute => nj_.dot(ax),
                JointKind::Prismatic => fj.dot(ax),
            };
            tau[jt.coord] = if has[jt.coord] { tau[jt.coord] + t } else { t };
            has[jt.coord] = true;
            if let Some(p) = jt.parent {
                let lm = &motion[j];
                let fp = lm.rot.mul_vec(fj);
                let np = lm.rot.mul_vec(nj_) + lm.pos.cross(fp);
                f[p] = Some(match f[p] {
                    Some(x) => x + fp,
                    None => fp,
                });
                n[p] = Some(match n[p] {
                    Some(x) => x + np,
                    None => np,
                });
            }
        }
        tau
    }

    /// Composite-rigid-body mass matrix; entries (i, j) and (j, i) are the same value.
    pub fn crba<T: Scalar>(&self, q: &[T], bodies: &[BodyParams<T>]) -> Vec<Vec<T>> {
        let nj = self.joints.len();
        let tf: Vec<(Rot<T>, V3<T>)> =
            self.joints.iter().enumerate().map(|(j, jt)| self.joint_transform(j, q[jt.coord])).collect();
        let mut comp: Vec<Option<BodyParams<T>>> =
            self.joints.iter().map(|jt| jt.body.map(|b| bodies[b])).collect();
        for j in (0..nj).rev() {
            let (Some(c), Some(p)) = (comp[j], self.joints[j].parent) else { continue };
            let (rot, pos) = tf[j];
            let ed = rot.mul_vec(c.d);
            let moved = BodyParams {
                m: c.m,
                d: ed + pos.scale(c.m),
                i: rot.congruence(&c.i) + scale_sym(skew_sq_neg(pos), c.m) + skew_sym_pair(pos, ed),
            };
            comp[p] = Some(match comp[p] {
                Some(x) => BodyParams { m: x.m + moved.m, d: x.d + moved.d, i: x.i + moved.i },
                None => moved,
            });
        }
        let mut m = vec![vec![T::zero(); self.n_q]; self.n_q];
        for j in 0..nj {
            let Some(c) = comp[j] else { continue };
            let jt = &self.joints[j];
            let ax: V3<T> = jt.axis.unit();
            let (mut f, mut n) = match jt.kind {
                JointKind::Revolute => (ax.cross(c.d), c.i.mul_vec(ax)),
                JointKind::Prismatic => (ax.scale(c.m), c.d.cross(ax)),
            };
            let mut k = j;
            loop {
                let kt = &self.joints[k];
                let axk: V3<T> = kt.axis.unit();
                let v = match kt.kind {
                    JointKind::Revolute => n.dot(axk),
                    JointKind::Prismatic => f.dot(axk),
                };
                let (a, b) = (jt.coord, kt.coord);
                if a == b {
                    m[a][a] = v;
                } else {
                    m[a][b] = v;
                    m[b][a] = v;
                }
                let Some(p) = kt.parent else { break };
                let (rot, pos) = tf[k];
                f = rot.mul_vec(f);
                n = rot.mul_vec(n) + pos.cross(f);
                k = p;
            }
        }
        m
    }
}

fn scale_sym<T: Scalar>(s: Sym3<T>, k: T) -> Sym3<T> {
    Sym3 { xx: s.xx * k, xy: s.xy * k, xz: s.xz * k, yy: s.yy * k, yz: s.yz * k, zz: s.zz * k }
}

/// Motion of one link frame, in that frame.
#[derive(Clone, Copy, Debug)]
pub struct LinkMotion<T> {
    /// Child-to-parent rotation.
    pub rot: Rot<T>,
    /// Child origin in the parent frame.
    pub pos: V3<T>,
    pub w: V3<T>,
    pub dw: V3<T>,
    /// Acceleration of the frame origin, gravity included as a base acceleration.
    pub a: V3<T>,
}

/// World pose of every link frame.
pub fn world_poses(tree: &Tree, motion: &[LinkMotion<f64>]) -> Vec<(Rot<f64>, V3<f64>)> {
    let mut out: Vec<(Rot<f64>, V3<f64>)> = Vec::with_capacity(motion.len());
    for (j, jt) in tree.joints.iter().enumerate() {
        let lm = &motion[j];
        let pose = match jt.parent {
            Some(p) => {
                let (rp, pp) = out[p];
                (rp.mul(&lm.rot), pp + rp.mul_vec(lm.pos))
            }
            None => (lm.rot, lm.pos),
        };
        out.push(pose);
    }
    out
}

/// Parameter regressor of the tree: `n_q × 10·n_bodies`, columns in body order
/// and the fixed per-body order.
pub fn regressor(tree: &Tree, q: &[f64], dq: &[f64], ddq: &[f64], gravity: V3<f64>) -> nalgebra::DMatrix<f64> {
    let motion = tree.forward(q, dq, ddq, gravity);
    let mut k = nalgebra::DMatrix::zeros(tree.n_q, 10 * tree.n_bodies);
    for (j, jt) in tree.joints.iter().enumerate() {
        let Some(b) = jt.body else { continue };
        let lm = &motion[j];
        let mut wr = unit_wrenches(lm);
        let mut at = j;
        loop {
            let kt = &tree.joints[at];
            let ax = kt.axis.index();
            for (c, (f, n)) in wr.iter().enumerate() {
                let v = match kt.kind {
                    JointKind::Revolute => n.get(ax),
                    JointKind::Prismatic => f.get(ax),
                };
                k[(kt.coord, 10 * b + c)] += v;
            }
            let Some(p) = kt.parent else { break };
            let m = &motion[at];
            for (f, n) in wr.iter_mut() {
                let fp = m.rot.mul_vec(*f);
                *n = m.rot.mul_vec(*n) + m.pos.cross(fp);
                *f = fp;
            }
            at = p;
        }
    }
    k
}

/// Body wrench (force, moment about the frame origin) per unit parameter.
fn unit_wrenches(lm: &LinkMotion<f64>) -> [(V3<f64>, V3<f64>); 10] {
    let z = V3::zero();
    let (w, dw, a) = (lm.w, lm.dw, lm.a);
    let e = [V3::new(1.0, 0.0, 0.0), V3::new(0.0, 1.0, 0.0), V3::new(0.0, 0.0, 1.0)];
    let dcol = |ek: V3<f64>| (dw.cross(ek) + w.cross(w.cross(ek)), ek.cross(a));
    // moment of a unit symmetric inertia component: I dw + w x (I w)
    let icol = |s: Sym3<f64>| (z, s.mul_vec(dw) + w.cross(s.mul_vec(w)));
    let unit = |k: usize| {
        let mut v = [0.0; 6];
        v[k] = 1.0;
        Sym3 { xx: v[0], xy: v[1], xz: v[2], yy: v[3], yz: v[4], zz: v[5] }
    };
    [
        (a, z),
        dcol(e[0]),
        dcol(e[1]),
        dcol(e[2]),
        icol(unit(0)),
        icol(unit(1)),
        icol(unit(2)),
        icol(unit(3)),
        icol(unit(4)),
        icol(unit(5)),
    ]
}
