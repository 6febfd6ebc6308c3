//! Hash-consed expression DAGs, built by running the generic dynamics code on
//! a symbolic scalar, with folding simplification and operation counting.

mod trace;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use trace::{op_counts_for_selection, trace_ddm, trace_idm, SelectionOps};

pub type Id = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Node {
    /// Bit pattern of an f64 (negative zero is normalized away).
    Const(u64),
    Input(u32),
    Param(u32),
    Add(Id, Id),
    Mul(Id, Id),
    Neg(Id),
    Sin(Id),
    Cos(Id),
    Div(Id, Id),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub adds: usize,
    pub muls: usize,
    pub funcs: usize,
    pub divs: usize,
    pub total: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ExprDag {
    nodes: Vec<Node>,
    index: HashMap<Node, Id>,
    pub inputs: Vec<String>,
    pub params: Vec<String>,
    pub outputs: Vec<(String, Id)>,
}

fn cbits(v: f64) -> u64 {
    if v == 0.0 {
        0.0f64.to_bits()
    } else {
        v.to_bits()
    }
}

impl ExprDag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: Id) -> Node {
        self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Interns a node without any rewriting.
    pub fn intern(&mut self, n: Node) -> Id {
        if let Some(&id) = self.index.get(&n) {
            return id;
        }
        let id = self.nodes.len() as Id;
        self.nodes.push(n);
        self.index.insert(n, id);
        id
    }

    pub fn constant(&mut self, v: f64) -> Id {
        self.intern(Node::Const(cbits(v)))
    }

    pub fn input(&mut self, name: &str) -> Id {
        let k = match self.inputs.iter().position(|s| s == name) {
            Some(k) => k,
            None => {
                self.inputs.push(name.to_string());
                self.inputs.len() - 1
            }
        };
        self.intern(Node::Input(k as u32))
    }

    pub fn param(&mut self, label: &str) -> Id {
        let k = match self.params.iter().position(|s| s == label) {
            Some(k) => k,
            None => {
                self.params.push(label.to_string());
                self.params.len() - 1
            }
        };
        self.intern(Node::Param(k as u32))
    }

    pub fn as_const(&self, id: Id) -> Option<f64> {
        match self.nodes[id as usize] {
            Node::Const(b) => Some(f64::from_bits(b)),
            _ => None,
        }
    }

    fn is_neg_of(&self, a: Id, b: Id) -> bool {
        matches!(self.nodes[a as usize], Node::Neg(x) if x == b)
    }

    fn ordered(a: Id, b: Id) -> (Id, Id) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x + y),
            (Some(x), _) if x == 0.0 => return b,
            (_, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        if self.is_neg_of(a, b) || self.is_neg_of(b, a) {
            return self.constant(0.0);
        }
        let (l, r) = Self::ordered(a, b);
        self.intern(Node::Add(l, r))
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => return self.constant(0.0),
            (Some(x), _) if x == 1.0 => return b,
            (_, Some(y)) if y == 1.0 => return a,
            (Some(x), _) if x == -1.0 => return self.neg(b),
            (_, Some(y)) if y == -1.0 => return self.neg(a),
            _ => {}
        }
        if let Node::Neg(x) = self.nodes[a as usize] {
            let p = self.mul(x, b);
            return self.neg(p);
        }
        if let Node::Neg(y) = self.nodes[b as usize] {
            let p = self.mul(a, y);
            return self.neg(p);
        }
        let (l, r) = Self::ordered(a, b);
        self.intern(Node::Mul(l, r))
    }

    pub fn neg(&mut self, a: Id) -> Id {
        if let Some(x) = self.as_const(a) {
            return self.constant(-x);
        }
        if let Node::Neg(x) = self.nodes[a as usize] {
            return x;
        }
        self.intern(Node::Neg(a))
    }

    pub fn sin(&mut self, a: Id) -> Id {
        match self.as_const(a) {
            Some(x) => self.constant(x.sin()),
            None => self.intern(Node::Sin(a)),
        }
    }

    pub fn cos(&mut self, a: Id) -> Id {
        match self.as_const(a) {
            Some(x) => self.constant(x.cos()),
            None => self.intern(Node::Cos(a)),
        }
    }

    pub fn div(&mut self, a: Id, b: Id) -> Id {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) if y != 0.0 => return self.constant(x / y),
            (Some(x), _) if x == 0.0 => return self.constant(0.0),
            (_, Some(y)) if y == 1.0 => return a,
            _ => {}
        }
        self.intern(Node::Div(a, b))
    }

    pub fn set_output(&mut self, name: impl Into<String>, id: Id) {
        self.outputs.push((name.into(), id));
    }

    fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<Id> = self.outputs.iter().map(|o| o.1).collect();
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id as usize], true) {
                continue;
            }
            match self.nodes[id as usize] {
                Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                Node::Neg(a) | Node::Sin(a) | Node::Cos(a) => stack.push(a),
                _ => {}
            }
        }
        seen
    }

    /// Operations among nodes reachable from the outputs; negation is free.
    pub fn op_count(&self) -> OpCount {
        let mut c = OpCount::default();
        for (n, r) in self.nodes.iter().zip(self.reachable()) {
            if !r {
                continue;
            }
            match n {
                Node::Add(..) => c.adds += 1,
                Node::Mul(..) => c.muls += 1,
                Node::Sin(_) | Node::Cos(_) => c.funcs += 1,
                Node::Div(..) => c.divs += 1,
                _ => {}
            }
        }
        c.total = c.adds + c.muls + c.funcs + c.divs;
        c
    }

    /// Values of all outputs.
    pub fn eval(&self, inputs: &[f64], params: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            v[i] = match *n {
                Node::Const(b) => f64::from_bits(b),
                Node::Input(k) => inputs[k as usize],
                Node::Param(k) => params[k as usize],
                Node::Add(a, b) => v[a as usize] + v[b as usize],
                Node::Mul(a, b) => v[a as usize] * v[b as usize],
                Node::Neg(a) => -v[a as usize],
                Node::Sin(a) => v[a as usize].sin(),
                Node::Cos(a) => v[a as usize].cos(),
                Node::Div(a, b) => v[a as usize] / v[b as usize],
            };
        }
        self.outputs.iter().map(|(_, id)| v[*id as usize]).collect()
    }

    pub fn output(&self, name: &str) -> Option<Id> {
        self.outputs.iter().find(|o| o.0 == name).map(|o| o.1)
    }

    /// Replaces parameters by constants without folding; unmentioned
    /// parameters stay symbolic. Follow with [`ExprDag::simplify`].
    pub fn substitute_params(&self, values: &HashMap<String, f64>) -> Result<ExprDag> {
        for k in values.keys() {
            if !self.params.contains(k) {
                return Err(Error::UnknownLabel(k.clone()));
            }
        }
        let mut out = ExprDag { inputs: self.inputs.clone(), params: self.params.clone(), ..Default::default() };
        let mut map = vec![0 as Id; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            let m = |x: Id| map[x as usize];
            let new = match *n {
                Node::Param(k) => match values.get(&self.params[k as usize]) {
                    Some(&v) => Node::Const(cbits(v)),
                    None => Node::Param(k),
                },
                Node::Add(a, b) => Node::Add(m(a), m(b)),
                Node::Mul(a, b) => Node::Mul(m(a), m(b)),
                Node::Div(a, b) => Node::Div(m(a), m(b)),
                Node::Neg(a) => Node::Neg(m(a)),
                Node::Sin(a) => Node::Sin(m(a)),
                Node::Cos(a) => Node::Cos(m(a)),
                other => other,
            };
            map[i] = out.intern(new);
        }
        out.outputs = self.outputs.iter().map(|(s, id)| (s.clone(), map[*id as usize])).collect();
        Ok(out)
    }

    /// Rebuilds the reachable graph through the folding constructors until
    /// nothing changes. Unreachable nodes are dropped.
    pub fn simplify(&self) -> ExprDag {
        let mut cur = self.rebuild();
        loop {
            let next = cur.rebuild();
            if next.nodes == cur.nodes && next.outputs == cur.outputs {
                return next;
            }
            cur = next;
        }
    }

    fn rebuild(&self) -> ExprDag {
        let reach = self.reachable();
        let mut out = ExprDag { inputs: self.inputs.clone(), params: self.params.clone(), ..Default::default() };
        let mut map = vec![0 as Id; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if !reach[i] {
                continue;
            }
            let m = |x: Id| map[x as usize];
            map[i] = match *n {
                Node::Const(b) => out.constant(f64::from_bits(b)),
                Node::Input(k) => out.intern(Node::Input(k)),
                Node::Param(k) => out.intern(Node::Param(k)),
                Node::Add(a, b) => out.add(m(a), m(b)),
                Node::Mul(a, b) => out.mul(m(a), m(b)),
                Node::Div(a, b) => out.div(m(a), m(b)),
                Node::Neg(a) => out.neg(m(a)),
                Node::Sin(a) => out.sin(m(a)),
                Node::Cos(a) => out.cos(m(a)),
            };
        }
        out.outputs = self.outputs.iter().map(|(s, id)| (s.clone(), map[*id as usize])).collect();
        out
    }

    /// Reachable nodes in topological order, for inspection.
    pub fn to_listing(&self) -> DagListing {
        let reach = self.reachable();
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !reach[i] {
                continue;
            }
            let (op, args, value, name) = match *n {
                Node::Const(b) => ("const", vec![], Some(f64::from_bits(b)), None),
                Node::Input(k) => ("input", vec![], None, Some(self.inputs[k as usize].clone())),
                Node::Param(k) => ("param", vec![], None, Some(self.params[k as usize].clone())),
                Node::Add(a, b) => ("add", vec![a, b], None, None),
                Node::Mul(a, b) => ("mul", vec![a, b], None, None),
                Node::Div(a, b) => ("div", vec![a, b], None, None),
                Node::Neg(a) => ("neg", vec![a], None, None),
                Node::Sin(a) => ("sin", vec![a], None, None),
                Node::Cos(a) => ("cos", vec![a], None, None),
            };
            nodes.push(ListedNode { id: i as Id, op: op.to_string(), args, value, name });
        }
        let outputs = self.outputs.iter().map(|(s, id)| ListedOutput { name: s.clone(), node: *id }).collect();
        DagListing { nodes, outputs, op_count: self.op_count() }
    }

    /// Straight-line program, one assignment per reachable operation node.
    pub fn emit_source(&self) -> String {
        let reach = self.reachable();
        let mut s = String::new();
        let name = |dag: &ExprDag, id: Id| -> String {
            match dag.nodes[id as usize] {
                Node::Const(b) => format!("{:?}", f64::from_bits(b)),
                Node::Input(k) => dag.inputs[k as usize].clone(),
                Node::Param(k) => dag.params[k as usize].clone(),
                _ => format!("t{id}"),
            }
        };
        for (i, n) in self.nodes.iter().enumerate() {
            if !reach[i] {
                continue;
            }
            let rhs = match *n {
                Node::Add(a, b) => format!("{} + {}", name(self, a), name(self, b)),
                Node::Mul(a, b) => format!("{} * {}", name(self, a), name(self, b)),
                Node::Div(a, b) => format!("{} / {}", name(self, a), name(self, b)),
                Node::Neg(a) => format!("-{}", name(self, a)),
                Node::Sin(a) => format!("sin({})", name(self, a)),
                Node::Cos(a) => format!("cos({})", name(self, a)),
                _ => continue,
            };
            let _ = writeln!(s, "t{i} = {rhs}");
        }
        for (o, id) in &self.outputs {
            let _ = writeln!(s, "{o} = {}", name(self, *id));
        }
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ListedNode {
    pub id: Id,
    pub op: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub args: Vec<Id>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub name: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ListedOutput {
    pub name: String,
    pub node: Id,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DagListing {
    pub nodes: Vec<ListedNode>,
    pub outputs: Vec<ListedOutput>,
    pub op_count: OpCount,
}

thread_local! {
    static BUILDER: RefCell<Option<ExprDag>> = const { RefCell::new(None) };
}

/// Symbolic scalar: a node of the DAG currently being recorded on this thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sym(pub Id);

fn with_dag<R>(f: impl FnOnce(&mut ExprDag) -> R) -> R {
    BUILDER.with(|b| f(b.borrow_mut().as_mut().expect("symbolic arithmetic outside of record()")))
}

/// Runs `f` with a fresh DAG as the recording target and returns the DAG.
pub fn record(f: impl FnOnce()) -> ExprDag {
    BUILDER.with(|b| {
        let prev = b.borrow_mut().replace(ExprDag::new());
        assert!(prev.is_none(), "nested DAG recording");
    });
    f();
    BUILDER.with(|b| b.borrow_mut().take().expect("recording target vanished"))
}

impl Sym {
    pub fn input(name: &str) -> Sym {
        Sym(with_dag(|d| d.input(name)))
    }

    pub fn param(label: &str) -> Sym {
        Sym(with_dag(|d| d.param(label)))
    }

    pub fn output(self, name: impl Into<String>) {
        with_dag(|d| d.set_output(name, self.0));
    }

    pub fn div(self, o: Sym) -> Sym {
        Sym(with_dag(|d| d.div(self.0, o.0)))
    }
}

impl Add for Sym {
    type Output = Sym;
    fn add(self, o: Sym) -> Sym {
        Sym(with_dag(|d| d.add(self.0, o.0)))
    }
}

impl Sub for Sym {
    type Output = Sym;
    fn sub(self, o: Sym) -> Sym {
        Sym(with_dag(|d| d.sub(self.0, o.0)))
    }
}

impl Mul for Sym {
    type Output = Sym;
    fn mul(self, o: Sym) -> Sym {
        Sym(with_dag(|d| d.mul(self.0, o.0)))
    }
}

impl Neg for Sym {
    type Output = Sym;
    fn neg(self) -> Sym {
        Sym(with_dag(|d| d.neg(self.0)))
    }
}

impl Scalar for Sym {
    fn cst(v: f64) -> Self {
        Sym(with_dag(|d| d.constant(v)))
    }
    fn sin(self) -> Self {
        Sym(with_dag(|d| d.sin(self.0)))
    }
    fn cos(self) -> Self {
        Sym(with_dag(|d| d.cos(self.0)))
    }
}
