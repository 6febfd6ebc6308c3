use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{record, ExprDag, OpCount, Sym};
use crate::dynamics::Mechanism;
use crate::error::{Error, Result};
use crate::scalar::{Scalar, V3};
use crate::tree::BodyParams;

fn symbolic_bodies(mech: &Mechanism) -> Vec<BodyParams<Sym>> {
    let all = mech.model.all_labels();
    let mut slots: Vec<Sym> = (0..all.len()).map(|_| Sym::cst(0.0)).collect();
    for &s in &mech.active {
        slots[s] = Sym::param(&all[s]);
    }
    slots.chunks(10).map(BodyParams::from_slice).collect()
}

fn inputs(prefix: &str, n: usize) -> Vec<Sym> {
    (0..n).map(|i| Sym::input(&format!("{prefix}[{i}]"))).collect()
}

fn gravity(mech: &Mechanism) -> V3<Sym> {
    V3::from_f64(mech.model.gravity)
}

/// DAG of the inverse dynamics on the full coordinates (outputs `tau[i]`).
/// For closed loops this is the unprojected d_q; the projection stays numeric.
pub fn trace_idm(mech: &Mechanism) -> ExprDag {
    let n = mech.n_q();
    record(|| {
        let q = inputs("q", n);
        let dq = inputs("dq", n);
        let ddq = inputs("ddq", n);
        let bodies = symbolic_bodies(mech);
        let tau = mech.tree.rnea(&q, &dq, &ddq, gravity(mech), &bodies);
        for (i, t) in tau.into_iter().enumerate() {
            t.output(format!("tau[{i}]"));
        }
    })
}

/// DAG of the joint [M | δ] function (outputs `M[i][j]`, `delta[i]`).
pub fn trace_ddm(mech: &Mechanism) -> ExprDag {
    let n = mech.n_q();
    record(|| {
        let q = inputs("q", n);
        let dq = inputs("dq", n);
        let zero: Vec<Sym> = (0..n).map(|_| Sym::cst(0.0)).collect();
        let bodies = symbolic_bodies(mech);
        let m = mech.tree.crba(&q, &bodies);
        let delta = mech.tree.rnea(&q, &dq, &zero, gravity(mech), &bodies);
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                v.output(format!("M[{i}][{j}]"));
            }
        }
        for (i, d) in delta.into_iter().enumerate() {
            d.output(format!("delta[{i}]"));
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionOps {
    pub idm: OpCount,
    pub ddm: OpCount,
}

/// Operation counts after zeroing every parameter outside `selected`.
pub fn op_counts_for_selection(idm: &ExprDag, ddm: &ExprDag, selected: &[String]) -> Result<SelectionOps> {
    let count = |dag: &ExprDag| -> Result<OpCount> {
        for s in selected {
            if !dag.params.contains(s) {
                return Err(Error::UnknownLabel(s.clone()));
            }
        }
        let zeros: HashMap<String, f64> =
            dag.params.iter().filter(|p| !selected.contains(p)).map(|p| (p.clone(), 0.0)).collect();
        Ok(dag.substitute_params(&zeros)?.simplify().op_count())
    };
    Ok(SelectionOps { idm: count(idm)?, ddm: count(ddm)? })
}
