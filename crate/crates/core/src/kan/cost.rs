//! Static scalar-operation counts for one forward pass.
//!
//! Spline network, per layer:
//!
//! - per input with at least one active edge: span lookup (1 add, 1 mult),
//!   Cox-de Boor basis (`k(k+1)` mults and adds), silu (1 exp, 2 mults, 1 add);
//! - per active edge: coefficient combination (`k+1` mults, `k` adds), base
//!   plus spline (1 add), scale by `omega` (1 mult);
//! - per node with `n > 0` active incoming edges: `n - 1` adds.
//!
//! Symbolic model: each edge costs what its expression tree costs
//! (add/sub count as adds, mul/div/neg as mults, `x^n` by repeated squaring),
//! plus the same node sums.
//!
//! Both add normalisation: `log10` gain inputs 1 log, 1 mult, 1 add; other
//! inputs 1 mult, 1 add; each output 1 mult, 1 add.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use super::network::{FeatureKind, InputNorm, KanNetwork};
use super::symbolic::{Expr, SymbolicModel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub adds: u64,
    pub mults: u64,
    pub exps: u64,
    pub logs: u64,
}

impl OpCount {
    pub fn total(&self) -> u64 {
        self.adds + self.mults + self.exps + self.logs
    }
}

impl Add for OpCount {
    type Output = OpCount;
    fn add(self, o: OpCount) -> OpCount {
        OpCount { adds: self.adds + o.adds, mults: self.mults + o.mults, exps: self.exps + o.exps, logs: self.logs + o.logs }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, o: OpCount) {
        *self = *self + o;
    }
}

fn ops(adds: u64, mults: u64, exps: u64, logs: u64) -> OpCount {
    OpCount { adds, mults, exps, logs }
}

fn norm_cost(input: &InputNorm, outputs: usize) -> OpCount {
    let mut c = OpCount::default();
    for f in &input.features {
        c += match f.kind {
            FeatureKind::LogGain => ops(1, 1, 0, 1),
            FeatureKind::Alpha | FeatureKind::Raw => ops(1, 1, 0, 0),
        };
    }
    c + ops(outputs as u64, outputs as u64, 0, 0)
}

fn node_sums(incoming: impl Iterator<Item = usize>) -> OpCount {
    ops(incoming.map(|n| n.saturating_sub(1) as u64).sum(), 0, 0, 0)
}

pub fn op_count(net: &KanNetwork) -> OpCount {
    let mut total = norm_cost(&net.input_norm, net.out_dim());
    for layer in &net.layers {
        let k = layer.order() as u64;
        for i in 0..layer.in_dim {
            let active = (0..layer.out_dim).filter(|&j| layer.mask[layer.edge(i, j)]).count() as u64;
            if active == 0 {
                continue;
            }
            total += ops(1 + k * (k + 1) + 1, 1 + k * (k + 1) + 2, 1, 0);
            total += ops(active * (k + 1), active * (k + 2), 0, 0);
        }
        total += node_sums((0..layer.out_dim).map(|j| (0..layer.in_dim).filter(|&i| layer.mask[layer.edge(i, j)]).count()));
    }
    total
}

fn pow_mults(n: u32) -> u64 {
    if n == 0 {
        return 0;
    }
    (31 - n.leading_zeros() + n.count_ones() - 1) as u64
}

pub fn expr_ops(e: &Expr) -> OpCount {
    match e {
        Expr::Const(_) | Expr::Var(_) => OpCount::default(),
        Expr::Add(a, b) | Expr::Sub(a, b) => expr_ops(a) + expr_ops(b) + ops(1, 0, 0, 0),
        Expr::Mul(a, b) | Expr::Div(a, b) => expr_ops(a) + expr_ops(b) + ops(0, 1, 0, 0),
        Expr::Neg(a) => expr_ops(a) + ops(0, 1, 0, 0),
        Expr::Pow(a, n) => expr_ops(a) + ops(0, pow_mults(*n), 0, 0),
        Expr::Ln(a) => expr_ops(a) + ops(0, 0, 0, 1),
        Expr::Exp(a) => expr_ops(a) + ops(0, 0, 1, 0),
    }
}

pub fn op_count_symbolic(model: &SymbolicModel) -> OpCount {
    let out_dim = model.layers.last().map_or(0, |l| l.out_dim);
    let mut total = norm_cost(&model.input_norm, out_dim);
    for layer in &model.layers {
        for e in &layer.edges {
            total += expr_ops(&e.expr);
        }
        total += node_sums((0..layer.out_dim).map(|j| layer.edges.iter().filter(|e| e.output == j).count()));
    }
    total
}
