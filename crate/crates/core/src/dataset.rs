//! Estimation and validation datasets and their CSV form.
//!
//! One row per sample: `set,traj,sample,z0..,dz0..,ddz0..,tau0..`. Floats
//! are written in shortest round-trip form so a reload is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ExtendedStateSample, Mechanism};
use crate::error::{Error, Result};
use crate::excitation::{sample_dataset, FourierTrajectory, TrajectorySet};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples_per_traj: usize,
    pub estimation: Vec<ExtendedStateSample>,
    pub validation: Vec<ExtendedStateSample>,
}

impl Dataset {
    pub fn sample(mech: &Mechanism, set: &TrajectorySet, samples_per_traj: usize) -> Result<Self> {
        let traj = |v: &[crate::excitation::OptimizedTrajectory]| -> Vec<FourierTrajectory> {
            v.iter().map(|o| o.trajectory.clone()).collect()
        };
        Ok(Dataset {
            samples_per_traj,
            estimation: sample_dataset(mech, &traj(&set.estimation), samples_per_traj)?,
            validation: sample_dataset(mech, &traj(&set.validation), samples_per_traj)?,
        })
    }

    pub fn n_dof(&self) -> usize {
        self.estimation.first().or(self.validation.first()).map_or(0, |s| s.z.len())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.n_dof();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["set".to_string(), "traj".into(), "sample".into()];
        for field in ["z", "dz", "ddz", "tau"] {
            header.extend((0..n).map(|i| format!("{field}{i}")));
        }
        w.write_record(&header)?;
        let per = self.samples_per_traj.max(1);
        for (name, rows) in [("estimation", &self.estimation), ("validation", &self.validation)] {
            for (i, s) in rows.iter().enumerate() {
                let mut rec = vec![name.to_string(), (i / per).to_string(), (i % per).to_string()];
                for v in s.z.iter().chain(&s.dz).chain(&s.ddz).chain(&s.tau) {
                    rec.push(v.to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let cols = r.headers()?.len();
        if cols < 7 || (cols - 3) % 4 != 0 {
            return Err(Error::Invalid(format!("{}: unexpected column count {cols}", path.display())));
        }
        let n = (cols - 3) / 4;
        let mut ds = Dataset::default();
        let mut max_sample = 0;
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Invalid(format!("{}: bad number `{}`", path.display(), &rec[i])))
            };
            let take = |off: usize| -> Result<Vec<f64>> { (0..n).map(|i| num(3 + off * n + i)).collect() };
            let s = ExtendedStateSample { z: take(0)?, dz: take(1)?, ddz: take(2)?, tau: take(3)? };
            max_sample = max_sample.max(rec[2].parse::<usize>().map_err(|_| Error::Invalid("bad sample index".into()))?);
            match &rec[0] {
                "estimation" => ds.estimation.push(s),
                "validation" => ds.validation.push(s),
                other => return Err(Error::Invalid(format!("{}: unknown set `{other}`", path.display()))),
            }
        }
        ds.samples_per_traj = max_sample + 1;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let s = |x: f64| ExtendedStateSample { z: vec![x, 0.1 + x], dz: vec![1.0 / 3.0, -2.0], ddz: vec![1e-300, 5.0], tau: vec![std::f64::consts::PI, -x] };
        let ds = Dataset { samples_per_traj: 2, estimation: vec![s(0.5), s(0.25), s(1.0 / 7.0), s(2.0)], validation: vec![s(9.0), s(3.0)] };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p).unwrap();
        assert_eq!(Dataset::read_csv(&p).unwrap(), ds);
    }
}
