use std::fmt;

use serde::{Deserialize, Serialize};

use super::network::{InputNorm, KanNetwork, OutputNorm};
use crate::error::{invalid, Result};

/// Scalar expression in one or more variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, u32),
    Ln(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => vars[*i],
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Neg(a) => -a.eval(vars),
            Expr::Pow(a, n) => a.eval(vars).powi(*n as i32),
            Expr::Ln(a) => a.eval(vars).ln(),
            Expr::Exp(a) => a.eval(vars).exp(),
        }
    }

    /// Replaces `Var(i)` with `Var(to)` everywhere.
    fn rename(&self, to: usize) -> Expr {
        match self {
            Expr::Var(_) => Expr::Var(to),
            Expr::Const(c) => Expr::Const(*c),
            Expr::Add(a, b) => Expr::Add(Box::new(a.rename(to)), Box::new(b.rename(to))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.rename(to)), Box::new(b.rename(to))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.rename(to)), Box::new(b.rename(to))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.rename(to)), Box::new(b.rename(to))),
            Expr::Neg(a) => Expr::Neg(Box::new(a.rename(to))),
            Expr::Pow(a, n) => Expr::Pow(Box::new(a.rename(to)), *n),
            Expr::Ln(a) => Expr::Ln(Box::new(a.rename(to))),
            Expr::Exp(a) => Expr::Exp(Box::new(a.rename(to))),
        }
    }

    fn fmt_with(&self, f: &mut fmt::Formatter<'_>, names: &dyn Fn(usize) -> String) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 => write!(f, "({c:.6})"),
            Expr::Const(c) => write!(f, "{c:.6}"),
            Expr::Var(i) => write!(f, "{}", names(*i)),
            Expr::Add(a, b) => bin(f, a, " + ", b, names),
            Expr::Sub(a, b) => bin(f, a, " - ", b, names),
            Expr::Mul(a, b) => bin(f, a, "*", b, names),
            Expr::Div(a, b) => bin(f, a, "/", b, names),
            Expr::Neg(a) => {
                write!(f, "-(")?;
                a.fmt_with(f, names)?;
                write!(f, ")")
            }
            Expr::Pow(a, n) => {
                write!(f, "(")?;
                a.fmt_with(f, names)?;
                write!(f, ")^{n}")
            }
            Expr::Ln(a) => {
                write!(f, "ln(")?;
                a.fmt_with(f, names)?;
                write!(f, ")")
            }
            Expr::Exp(a) => {
                write!(f, "exp(")?;
                a.fmt_with(f, names)?;
                write!(f, ")")
            }
        }
    }
}

fn bin(f: &mut fmt::Formatter<'_>, a: &Expr, op: &str, b: &Expr, names: &dyn Fn(usize) -> String) -> fmt::Result {
    write!(f, "(")?;
    a.fmt_with(f, names)?;
    write!(f, "{op}")?;
    b.fmt_with(f, names)?;
    write!(f, ")")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_with(f, &|i| format!("x{}", i + 1))
    }
}

fn c(v: f64) -> Box<Expr> {
    Box::new(Expr::Const(v))
}

fn x() -> Box<Expr> {
    Box::new(Expr::Var(0))
}

fn silu_expr() -> Expr {
    // x / (1 + exp(-x))
    Expr::Div(x(), Box::new(Expr::Add(c(1.0), Box::new(Expr::Exp(Box::new(Expr::Neg(x())))))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Constant,
    Affine,
    Cubic,
    Quartic,
    Logarithmic,
    SiluAffine,
}

impl Family {
    /// Candidates tried on every non-degenerate edge.
    pub const CANDIDATES: [Family; 5] =
        [Family::Affine, Family::Cubic, Family::Quartic, Family::Logarithmic, Family::SiluAffine];

    /// Builds the expression in `Var(0)` for fitted `params`:
    ///
    /// | family | form | params |
    /// |---|---|---|
    /// | constant | `c` | `[c]` |
    /// | affine | `a*x + b` | `[a, b]` |
    /// | cubic | `a*(b - x)^3 + c` | `[a, b, c]` |
    /// | quartic | `a*(b - x)^4 + c` | `[a, b, c]` |
    /// | logarithmic | `a*ln(b*x) + c`, `b = ±1` | `[a, b, c]` |
    /// | silu-affine | `a*silu(x) + b*x + c` | `[a, b, c]` |
    pub fn expr(self, p: &[f64]) -> Expr {
        match self {
            Family::Constant => Expr::Const(p[0]),
            Family::Affine => Expr::Add(Box::new(Expr::Mul(c(p[0]), x())), c(p[1])),
            Family::Cubic | Family::Quartic => {
                let n = if self == Family::Cubic { 3 } else { 4 };
                let pow = Expr::Pow(Box::new(Expr::Sub(c(p[1]), x())), n);
                Expr::Add(Box::new(Expr::Mul(c(p[0]), Box::new(pow))), c(p[2]))
            }
            Family::Logarithmic => {
                let arg = if p[1] < 0.0 { Box::new(Expr::Neg(x())) } else { x() };
                Expr::Add(Box::new(Expr::Mul(c(p[0]), Box::new(Expr::Ln(arg)))), c(p[2]))
            }
            Family::SiluAffine => Expr::Add(
                Box::new(Expr::Add(
                    Box::new(Expr::Mul(c(p[0]), Box::new(silu_expr()))),
                    Box::new(Expr::Mul(c(p[1]), x())),
                )),
                c(p[2]),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFit {
    pub family: Family,
    pub params: Vec<f64>,
    pub r2: f64,
}

/// Coefficient of determination. A constant target is explained perfectly
/// by any fit that reproduces it.
fn r_squared(ys: &[f64], pred: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = ys.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum();
    let floor = 1e-24 * n * (1.0 + mean * mean);
    if ss_tot <= floor {
        return if ss_res <= floor { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

/// Least squares `ys ≈ Σ coef_j cols[j]` by modified Gram-Schmidt.
/// Returns `None` when the columns are numerically dependent.
fn lstsq(cols: &[Vec<f64>], ys: &[f64]) -> Option<Vec<f64>> {
    let m = cols.len();
    let mut q: Vec<Vec<f64>> = cols.to_vec();
    let mut r = vec![vec![0.0; m]; m];
    for j in 0..m {
        let scale = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                r[i][j] += d;
                let qi = q[i].clone();
                q[j].iter_mut().zip(&qi).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-10 * scale.max(1e-300)) {
            return None;
        }
        r[j][j] = norm;
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let qty: Vec<f64> = q.iter().map(|qj| qj.iter().zip(ys).map(|(a, b)| a * b).sum()).collect();
    let mut coef = vec![0.0; m];
    for j in (0..m).rev() {
        let s: f64 = ((j + 1)..m).map(|k| r[j][k] * coef[k]).sum();
        coef[j] = (qty[j] - s) / r[j][j];
    }
    Some(coef)
}

fn linear_fit(cols: Vec<Vec<f64>>, ys: &[f64]) -> Option<(Vec<f64>, f64)> {
    let coef = lstsq(&cols, ys)?;
    let pred: Vec<f64> = (0..ys.len()).map(|s| cols.iter().zip(&coef).map(|(c, k)| c[s] * k).sum()).collect();
    Some((coef, r_squared(ys, &pred)))
}

/// Fits `a*(b - x)^n + c`: linear in `(a, c)` for fixed `b`; `b` by a scan
/// over a widened range followed by golden-section refinement.
fn shifted_power_fit(xs: &[f64], ys: &[f64], n: i32) -> Option<(Vec<f64>, f64)> {
    let (lo, hi) = min_max(xs);
    let w = hi - lo;
    let fit_at = |b: f64| {
        let col: Vec<f64> = xs.iter().map(|x| (b - x).powi(n)).collect();
        linear_fit(vec![col, vec![1.0; xs.len()]], ys).map(|(k, r2)| (vec![k[0], b, k[1]], r2))
    };
    let score = |b: f64| fit_at(b).map_or(f64::NEG_INFINITY, |(_, r2)| r2);
    const SCAN: usize = 200;
    let (a, z) = (lo - 3.0 * w, hi + 3.0 * w);
    let h = (z - a) / (SCAN - 1) as f64;
    let best = (0..SCAN)
        .map(|s| a + h * s as f64)
        .map(|b| (b, score(b)))
        .fold((a, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
    if best.1 == f64::NEG_INFINITY {
        return None;
    }
    let (mut l, mut r) = (best.0 - h, best.0 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut m1, mut m2) = (r - g * (r - l), l + g * (r - l));
    let (mut f1, mut f2) = (score(m1), score(m2));
    for _ in 0..60 {
        if f1 >= f2 {
            r = m2;
            (m2, f2) = (m1, f1);
            m1 = r - g * (r - l);
            f1 = score(m1);
        } else {
            l = m1;
            (m1, f1) = (m2, f2);
            m2 = l + g * (r - l);
            f2 = score(m2);
        }
    }
    let refined = if f1 >= f2 { m1 } else { m2 };
    let b = if score(refined) >= best.1 { refined } else { best.0 };
    fit_at(b)
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

/// Fits one family to samples `(xs, ys)`. Returns `None` when the family is
/// not applicable (e.g. a logarithm over a range containing zero).
pub fn fit_family(family: Family, xs: &[f64], ys: &[f64]) -> Option<EdgeFit> {
    let ones = vec![1.0; xs.len()];
    let (params, r2) = match family {
        Family::Constant => {
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            (vec![mean], r_squared(ys, &vec![mean; ys.len()]))
        }
        Family::Affine => linear_fit(vec![xs.to_vec(), ones], ys)?,
        Family::Cubic => shifted_power_fit(xs, ys, 3)?,
        Family::Quartic => shifted_power_fit(xs, ys, 4)?,
        Family::Logarithmic => {
            let (lo, hi) = min_max(xs);
            let sign = if lo > 0.0 {
                1.0
            } else if hi < 0.0 {
                -1.0
            } else {
                return None;
            };
            let col = xs.iter().map(|x| (sign * x).ln()).collect();
            let (k, r2) = linear_fit(vec![col, ones], ys)?;
            (vec![k[0], sign, k[1]], r2)
        }
        Family::SiluAffine => {
            let s = xs.iter().map(|&x| super::spline::silu(x)).collect();
            linear_fit(vec![s, xs.to_vec(), ones], ys)?
        }
    };
    (!r2.is_nan()).then_some(EdgeFit { family, params, r2 })
}

/// Fits every candidate and keeps the highest r² (earlier candidates win
/// ties). Ranges narrower than `1e-9` get the constant family.
pub fn best_fit(xs: &[f64], ys: &[f64]) -> EdgeFit {
    let (lo, hi) = min_max(xs);
    let constant = || fit_family(Family::Constant, xs, ys).expect("constant fit always exists");
    if !(hi - lo >= 1e-9) {
        return constant();
    }
    Family::CANDIDATES
        .iter()
        .filter_map(|&f| fit_family(f, xs, ys))
        .fold(None::<EdgeFit>, |best, fit| match best {
            Some(b) if b.r2 >= fit.r2 => Some(b),
            _ => Some(fit),
        })
        .unwrap_or_else(constant)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicEdge {
    pub input: usize,
    pub output: usize,
    pub fit: EdgeFit,
    /// `fit` as an expression in `Var(0)`, the edge's input.
    pub expr: Expr,
    /// Input interval the fit was made on.
    pub range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Active edges only.
    pub edges: Vec<SymbolicEdge>,
}

/// Closed-form surrogate of a network: each active edge replaced by its
/// best-fitting family, summed at nodes exactly as in the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicModel {
    pub layers: Vec<SymbolicLayer>,
    pub input_norm: InputNorm,
    pub output_norm: OutputNorm,
}

impl SymbolicModel {
    pub fn forward_normalized(&self, z: &[f64]) -> Vec<f64> {
        let mut a = z.to_vec();
        for layer in &self.layers {
            let mut out = vec![0.0; layer.out_dim];
            for e in &layer.edges {
                out[e.output] += e.expr.eval(&[a[e.input]]);
            }
            a = out;
        }
        a
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_norm.features.len() {
            return Err(invalid("input width mismatch"));
        }
        let y = self.forward_normalized(&self.input_norm.apply(x));
        Ok(y.into_iter().map(|v| self.output_norm.denormalize(v)).collect())
    }

    pub fn r2_scores(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.edges.iter().map(|e| e.fit.r2)).collect()
    }

    /// Expression of node `node` of layer `layer`'s output in terms of that
    /// layer's inputs (`Var(i)` is input `i`), or `None` if it has no edges.
    pub fn node_expr(&self, layer: usize, node: usize) -> Option<Expr> {
        self.layers[layer]
            .edges
            .iter()
            .filter(|e| e.output == node)
            .map(|e| e.expr.rename(e.input))
            .reduce(|a, b| Expr::Add(Box::new(a), Box::new(b)))
    }

    /// Human-readable formulas: inputs `x1..`, hidden nodes `h{layer}_{j}`,
    /// normalised outputs `y1..` (`p = lo + clamp(y, 0, 1) * (hi - lo)`).
    pub fn formula_text(&self) -> String {
        let mut s = String::new();
        let n = self.layers.len();
        s.push_str(&format!(
            "# p_j = {} + clamp(y_j, 0, 1) * {}\n",
            self.output_norm.lo,
            self.output_norm.hi - self.output_norm.lo
        ));
        for (l, layer) in self.layers.iter().enumerate() {
            let in_name = |i: usize| if l == 0 { format!("x{}", i + 1) } else { format!("h{}_{}", l, i + 1) };
            for j in 0..layer.out_dim {
                let lhs = if l + 1 == n { format!("y{}", j + 1) } else { format!("h{}_{}", l + 1, j + 1) };
                match self.node_expr(l, j) {
                    Some(e) => s.push_str(&format!("{lhs} = {}\n", Shown(&e, &in_name))),
                    None => s.push_str(&format!("{lhs} = 0\n")),
                }
                for e in layer.edges.iter().filter(|e| e.output == j) {
                    s.push_str(&format!(
                        "  # {} <- {}: {:?}, r2 = {:.4}\n",
                        lhs,
                        in_name(e.input),
                        e.fit.family,
                        e.fit.r2
                    ));
                }
            }
        }
        s
    }
}

struct Shown<'a>(&'a Expr, &'a dyn Fn(usize) -> String);

impl fmt::Display for Shown<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt_with(f, self.1)
    }
}

/// Fits a closed form to every active edge of a trained network, sampling
/// each edge at `probe_points` evenly spaced inputs across the range seen in
/// training (from the network's recorded statistics).
pub fn symbolic_export(net: &KanNetwork, probe_points: usize) -> Result<SymbolicModel> {
    if probe_points < 2 {
        return Err(invalid("need at least two probe points"));
    }
    let stats = net.stats.as_ref().ok_or_else(|| invalid("network has no edge statistics; train it first"))?;
    let mut layers = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let jobs: Vec<(usize, usize)> = (0..layer.in_dim)
            .flat_map(|i| (0..layer.out_dim).map(move |j| (i, j)))
            .filter(|&(i, j)| layer.mask[layer.edge(i, j)])
            .collect();
        let edges = crate::par::map(&jobs, |&(i, j)| {
            let (lo, hi) = stats.input_range[l][i];
            let xs: Vec<f64> = (0..probe_points)
                .map(|s| lo + (hi - lo) * s as f64 / (probe_points - 1) as f64)
                .collect();
            let ys: Vec<f64> = xs.iter().map(|&x| layer.edge_value(i, j, x)).collect();
            let fit = best_fit(&xs, &ys);
            SymbolicEdge { input: i, output: j, expr: fit.family.expr(&fit.params), fit, range: (lo, hi) }
        });
        layers.push(SymbolicLayer { in_dim: layer.in_dim, out_dim: layer.out_dim, edges });
    }
    Ok(SymbolicModel { layers, input_norm: net.input_norm.clone(), output_norm: net.output_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::{silu, FeatureKind, KanConfig};
    use proptest::prelude::*;

    fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|s| lo + (hi - lo) * s as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exact_affine_edge_selects_affine() {
        let xs = linspace(-1.0, 1.0, 50);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 0.25).collect();
        let fit = best_fit(&xs, &ys);
        assert_eq!(fit.family, Family::Affine);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!((fit.params[0] - 3.0).abs() < 1e-10 && (fit.params[1] + 0.25).abs() < 1e-10);
    }

    #[test]
    fn log_family_recovers_logarithm() {
        let xs = linspace(0.05, 1.0, 60);
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * (3.0 * x).ln() + 0.5).collect();
        let fit = fit_family(Family::Logarithmic, &xs, &ys).unwrap();
        assert!(fit.r2 >= 0.99);
        let expr = fit.family.expr(&fit.params);
        for &x in &xs {
            assert!((expr.eval(&[x]) - (2.0 * (3.0 * x).ln() + 0.5)).abs() < 1e-9);
        }
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_eq!(fit_family(Family::Logarithmic, &neg, &ys).unwrap().params[1], -1.0);
        assert!(fit_family(Family::Logarithmic, &linspace(-1.0, 1.0, 9), &[0.0; 9]).is_none());
    }

    #[test]
    fn shifted_cubic_is_recovered() {
        let xs = linspace(-1.0, 1.0, 80);
        let ys: Vec<f64> = xs.iter().map(|x| -8.0 * (0.06 - x).powi(3) + 1.5).collect();
        let fit = fit_family(Family::Cubic, &xs, &ys).unwrap();
        assert!(fit.r2 > 1.0 - 1e-10, "{}", fit.r2);
        assert!((fit.params[1] - 0.06).abs() < 1e-5);
    }

    #[test]
    fn degenerate_range_uses_constant() {
        let fit = best_fit(&[0.3; 10], &[0.7; 10]);
        assert_eq!(fit.family, Family::Constant);
        assert_eq!(fit.r2, 1.0);
    }

    #[test]
    fn silu_expression_matches_silu() {
        let e = Family::SiluAffine.expr(&[1.0, 0.0, 0.0]);
        for x in [-3.0, 0.0, 0.4, 5.0] {
            assert!((e.eval(&[x]) - silu(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn export_matches_network_on_probe_range() {
        let cfg = KanConfig::default();
        let mut net = KanNetwork::new(
            &cfg.dims(2, 1),
            &cfg,
            &[FeatureKind::Raw; 2],
            OutputNorm { lo: 0.0, hi: 1.0 },
            11,
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = linspace(-1.0, 1.0, 21)
            .iter()
            .flat_map(|&a| linspace(-1.0, 1.0, 21).into_iter().map(move |b| vec![a, b]))
            .collect();
        net.initialize_from_data(&xs, cfg.hidden_margin).unwrap();
        net.record_stats(&xs);
        let model = symbolic_export(&net, 100).unwrap();
        assert_eq!(model.layers[0].edges.len(), net.layers[0].active_edges());
        assert!(model.r2_scores().iter().all(|&r| r <= 1.0));
        assert!(model.r2_scores().iter().all(|&r| r > 0.95));
        let outs: Vec<f64> = xs.iter().map(|x| net.forward_normalized(&net.normalize_input(x))[0]).collect();
        let (lo, hi) = min_max(&outs);
        let worst = xs
            .iter()
            .zip(&outs)
            .map(|(x, y)| (model.forward_normalized(&net.normalize_input(x))[0] - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.1 * (hi - lo), "{worst} vs span {}", hi - lo);
        let text = model.formula_text();
        assert!(text.contains("y1 = ") && text.contains("r2 = "));
        let json = serde_json::to_string(&model).unwrap();
        assert_eq!(serde_json::from_str::<SymbolicModel>(&json).unwrap(), model);
    }

    proptest! {
        #[test]
        fn best_fit_is_argmax(coef in prop::collection::vec(-2.0f64..2.0, 6), lo in 0.01f64..0.5, w in 0.1f64..2.0) {
            let xs = linspace(lo, lo + w, 40);
            let ys: Vec<f64> = xs.iter().map(|&x| {
                coef[0] + coef[1] * x + coef[2] * x * x + coef[3] * (5.0 * x).sin() + coef[4] * silu(3.0 * x) + coef[5] * x.ln()
            }).collect();
            let best = best_fit(&xs, &ys);
            for f in Family::CANDIDATES {
                if let Some(fit) = fit_family(f, &xs, &ys) {
                    prop_assert!(best.r2 >= fit.r2);
                }
            }
        }
    }
}
