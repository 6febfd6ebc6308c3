//! Multibody model data and the two reference machines.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter symbols in their fixed per-body order.
pub const SYMBOLS: [&str; 10] = ["m", "d_x", "d_y", "d_z", "I_xx", "I_xy", "I_xz", "I_yy", "I_yz", "I_zz"];

/// Mass, first moment of mass (m·c) and inertia about the body frame origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InertialParams {
    pub label: String,
    pub m: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub d_z: f64,
    #[serde(rename = "I_xx")]
    pub i_xx: f64,
    #[serde(rename = "I_xy")]
    pub i_xy: f64,
    #[serde(rename = "I_xz")]
    pub i_xz: f64,
    #[serde(rename = "I_yy")]
    pub i_yy: f64,
    #[serde(rename = "I_yz")]
    pub i_yz: f64,
    #[serde(rename = "I_zz")]
    pub i_zz: f64,
}

impl InertialParams {
    pub fn from_array(label: &str, p: [f64; 10]) -> Self {
        InertialParams {
            label: label.to_string(),
            m: p[0],
            d_x: p[1],
            d_y: p[2],
            d_z: p[3],
            i_xx: p[4],
            i_xy: p[5],
            i_xz: p[6],
            i_yy: p[7],
            i_yz: p[8],
            i_zz: p[9],
        }
    }

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.m, self.d_x, self.d_y, self.d_z, self.i_xx, self.i_xy, self.i_xz, self.i_yy, self.i_yz, self.i_zz,
        ]
    }
}

/// Modified Denavit–Hartenberg joint (Khalil convention).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdhJoint {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
    pub coordinate_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HexaglideGeometry {
    /// Bar length.
    #[serde(rename = "L")]
    pub l: f64,
    /// Separation of the two joints of a pair, on the guides and on the head.
    pub e: f64,
    /// Distance from the frame axis to the U joints.
    #[serde(rename = "R_frame")]
    pub r_frame: f64,
    /// Distance from the head axis to the S joints.
    pub r_head: f64,
    pub alpha_sym: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Topology {
    OpenChain(Vec<MdhJoint>),
    HexaglidePUS(HexaglideGeometry),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultibodyModel {
    pub topology: Topology,
    pub bodies: Vec<InertialParams>,
    pub gravity: [f64; 3],
    pub nominal_force: Vec<f64>,
}

impl MultibodyModel {
    pub fn n_dof(&self) -> usize {
        match &self.topology {
            Topology::OpenChain(j) => j.len(),
            Topology::HexaglidePUS(_) => 6,
        }
    }

    pub fn n_q(&self) -> usize {
        match &self.topology {
            Topology::OpenChain(j) => j.len(),
            Topology::HexaglidePUS(_) => 24,
        }
    }

    /// Every slot label, unfiltered, in body order.
    pub fn all_labels(&self) -> Vec<String> {
        self.bodies.iter().flat_map(|b| SYMBOLS.iter().map(move |s| format!("{s}^{}", b.label))).collect()
    }

    pub fn all_values(&self) -> Vec<f64> {
        self.bodies.iter().flat_map(|b| b.to_array()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_dof();
        if self.nominal_force.len() != n {
            return Err(Error::Dimension(format!("nominal_force has {} entries, expected {n}", self.nominal_force.len())));
        }
        if self.nominal_force.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Invalid("nominal_force entries must be positive".into()));
        }
        match &self.topology {
            Topology::OpenChain(joints) => {
                if self.bodies.len() != joints.len() {
                    return Err(Error::Dimension("open chain needs one body per joint".into()));
                }
                let mut seen = vec![false; joints.len()];
                for j in joints {
                    if j.coordinate_index >= joints.len() || seen[j.coordinate_index] {
                        return Err(Error::Invalid("joint coordinate indices must be a permutation".into()));
                    }
                    seen[j.coordinate_index] = true;
                }
            }
            Topology::HexaglidePUS(g) => {
                if self.bodies.len() != 7 {
                    return Err(Error::Dimension("hexaglide needs 6 bars and a head".into()));
                }
                if [g.l, g.e, g.r_frame, g.r_head].iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Invalid("hexaglide lengths must be positive".into()));
                }
                if g.r_frame - g.r_head >= g.l {
                    return Err(Error::Invalid("bars too short to reach the head".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::jsonio::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MultibodyModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::jsonio::write_file(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Frame-to-frame transform of a modified DH joint: Rx(α)·Tx(a)·Rz(θ)·Tz(d).
pub fn mdh_transform(joint: &MdhJoint, theta: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let (sa, ca) = joint.alpha.sin_cos();
    let (st, ct) = (theta + joint.theta_offset).sin_cos();
    let rot = Matrix3::new(ct, -st, 0.0, ca * st, ca * ct, -sa, sa * st, sa * ct, ca);
    let trans = Vector3::new(joint.a, -sa * joint.d, ca * joint.d);
    (rot, trans)
}

pub const PUMA_NOMINAL_TORQUE: [f64; 6] = [350.0, 300.0, 125.0, 8.0, 3.0, 1.0];

pub fn build_puma560() -> MultibodyModel {
    let mdh = [
        (0.0, 0.0, 0.0),
        (0.0, -FRAC_PI_2, 0.0),
        (0.4318, 0.0, -0.1491),
        (-0.0203, FRAC_PI_2, -0.4318),
        (0.0, -FRAC_PI_2, 0.0),
        (0.0, FRAC_PI_2, 0.0),
    ];
    let joints = mdh
        .iter()
        .enumerate()
        .map(|(i, &(a, alpha, d))| MdhJoint { a, alpha, d, theta_offset: 0.0, coordinate_index: i })
        .collect();
    let inertial: [[f64; 10]; 6] = [
        [10.52, 0.0, -0.568, 0.0, 1.643, 0.0, 0.0, 0.509, 0.0, 1.643],
        [15.78, 2.206, 0.2, 2.353, 0.841, 0.2, -0.329, 8.738, 0.4, 8.576],
        [8.767, -0.003, -1.727, 0.0, 3.717, -0.001, 0.002, 0.301, 0.002, 3.717],
        [1.052, 0.03, 0.06, -0.060, 0.184, 0.0, 0.0, 0.184, 0.0, 0.127],
        [1.052, 0.004, -0.007, 0.005, 0.074, 0.0, 0.0, 0.074, 0.0, 0.127],
        [0.351, 0.01, 0.02, 0.013, 0.008, 0.0, 0.002, 0.008, 0.0, 0.014],
    ];
    let bodies = inertial.iter().enumerate().map(|(i, p)| InertialParams::from_array(&(i + 1).to_string(), *p)).collect();
    MultibodyModel {
        topology: Topology::OpenChain(joints),
        bodies,
        gravity: [0.0, 0.0, -9.81],
        nominal_force: PUMA_NOMINAL_TORQUE.to_vec(),
    }
}

pub fn hexaglide_nominal_force() -> f64 {
    1.7 * 2.0 * PI / 1e-2
}

pub fn build_hexaglide() -> MultibodyModel {
    let geom = HexaglideGeometry { l: 1.0, e: 0.1365, r_frame: 0.4840, r_head: 0.0730, alpha_sym: 2.0 * PI / 3.0 };
    // Tabulated column order differs from ours: Ixx, Ixy, Iyy, Ixz, Izz, Iyz.
    let from_table = |label: &str, m: f64, d: [f64; 3], t: [f64; 6]| {
        InertialParams::from_array(label, [m, d[0], d[1], d[2], t[0], t[1], t[3], t[2], t[5], t[4]])
    };
    let bar = |i: usize| from_table(&i.to_string(), 5.804, [0.03, 0.03, -1.469], [1.044, 0.0, 1.044, 0.014, 0.002, 0.014]);
    let mut bodies: Vec<InertialParams> = (1..=6).map(bar).collect();
    bodies.push(from_table("P", 6.697, [0.07, 0.07, -0.238], [0.0283, 0.001, 0.028, 0.0, 0.038, 0.0]));
    MultibodyModel {
        topology: Topology::HexaglidePUS(geom),
        bodies,
        gravity: [0.0, 0.0, -9.81],
        nominal_force: vec![hexaglide_nominal_force(); 6],
    }
}

/// Flat parameter vector with labels "<symbol>^<body>".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

/// Label-filtered parameter vector of a model (zero-regressor columns removed).
pub fn phi_vector(model: &MultibodyModel) -> Result<ParamVector> {
    let mech = crate::dynamics::Mechanism::new(model.clone())?;
    Ok(mech.phi_full())
}
