//! Scalar abstraction shared by the numeric and the symbolic dynamics paths,
//! plus the small fixed-size vector and matrix types those paths need.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

/// A field-like value the dynamics recursions can be evaluated over.
///
/// `f64` gives plain numerics; [`crate::symdag::Sym`] records an expression DAG.
pub trait Scalar:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct V3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> V3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        V3 { x, y, z }
    }

    pub fn zero() -> Self {
        V3::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        V3::new(T::cst(v[0]), T::cst(v[1]), T::cst(v[2]))
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn get(&self, i: usize) -> T {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        V3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn scale(self, s: T) -> Self {
        V3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> Add for V3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        V3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for V3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        V3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for V3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        V3::new(-self.x, -self.y, -self.z)
    }
}

/// Symmetric 3×3 matrix stored as (xx, xy, xz, yy, yz, zz).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym3<T> {
    pub xx: T,
    pub xy: T,
    pub xz: T,
    pub yy: T,
    pub yz: T,
    pub zz: T,
}

impl<T: Scalar> Sym3<T> {
    pub fn zero() -> Self {
        let z = T::zero();
        Sym3 { xx: z, xy: z, xz: z, yy: z, yz: z, zz: z }
    }

    pub fn mul_vec(&self, v: V3<T>) -> V3<T> {
        V3::new(
            self.xx * v.x + self.xy * v.y + self.xz * v.z,
            self.xy * v.x + self.yy * v.y + self.yz * v.z,
            self.xz * v.x + self.yz * v.y + self.zz * v.z,
        )
    }

    pub fn to_rows(&self) -> [[T; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    fn from_rows_upper(m: &[[T; 3]; 3]) -> Self {
        Sym3 { xx: m[0][0], xy: m[0][1], xz: m[0][2], yy: m[1][1], yz: m[1][2], zz: m[2][2] }
    }
}

impl<T: Scalar> Add for Sym3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Sym3 {
            xx: self.xx + o.xx,
            xy: self.xy + o.xy,
            xz: self.xz + o.xz,
            yy: self.yy + o.yy,
            yz: self.yz + o.yz,
            zz: self.zz + o.zz,
        }
    }
}

/// Coordinate axis of a joint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn unit<T: Scalar>(self) -> V3<T> {
        let mut e = [0.0; 3];
        e[self.index()] = 1.0;
        V3::from_f64(e)
    }
}

/// Rotation matrix; `mul_vec` maps child-frame coordinates to parent-frame ones.
#[derive(Clone, Copy, Debug)]
pub struct Rot<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Scalar> Rot<T> {
    pub fn identity() -> Self {
        Rot::from_f64(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn from_f64(m: &[[f64; 3]; 3]) -> Self {
        Rot { m: m.map(|r| r.map(T::cst)) }
    }

    /// Elementary rotation about `axis` given its cosine and sine.
    pub fn about(axis: Axis, c: T, s: T) -> Self {
        let o = T::cst(1.0);
        let z = T::zero();
        let m = match axis {
            Axis::X => [[o, z, z], [z, c, -s], [z, s, c]],
            Axis::Y => [[c, z, s], [z, o, z], [-s, z, c]],
            Axis::Z => [[c, -s, z], [s, c, z], [z, z, o]],
        };
        Rot { m }
    }

    pub fn mul_vec(&self, v: V3<T>) -> V3<T> {
        let m = &self.m;
        V3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// Applies the transpose (parent to child).
    pub fn tr_mul_vec(&self, v: V3<T>) -> V3<T> {
        let m = &self.m;
        V3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul(&self, o: &Rot<T>) -> Rot<T> {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Rot { m }
    }

    /// E S Eᵀ for a symmetric S.
    pub fn congruence(&self, s: &Sym3<T>) -> Sym3<T> {
        let sr = s.to_rows();
        let mut es = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                es[i][j] = self.m[i][0] * sr[0][j] + self.m[i][1] * sr[1][j] + self.m[i][2] * sr[2][j];
            }
        }
        let mut out = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                out[i][j] = es[i][0] * self.m[j][0] + es[i][1] * self.m[j][1] + es[i][2] * self.m[j][2];
            }
        }
        Sym3::from_rows_upper(&out)
    }
}

/// Rounds entries within 1e-15 of 0 or ±1 to the exact value, so rotations by
/// multiples of π/2 stay sparse after tracing.
pub fn snap_rotation(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    m.map(|r| {
        r.map(|v| {
            for t in [0.0, 1.0, -1.0] {
                if (v - t).abs() < 1e-15 {
                    return t;
                }
            }
            v
        })
    })
}

pub fn rot_x(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    snap_rotation([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
}

pub fn rot_z(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    snap_rotation([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
}
