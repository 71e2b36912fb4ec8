use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spline::{silu, silu_deriv, Grid, SplineActivation, MAX_ORDER};
use super::KanConfig;
use crate::error::{invalid, Result};
use crate::{par, seed};

/// How a raw input feature is mapped onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// `log10` of a positive gain, then min/max of the fitting data.
    LogGain,
    /// Fixed affine map from `[0, 1]`.
    Alpha,
    /// Min/max of the fitting data.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub kind: FeatureKind,
    /// Range in transformed units mapped to `[-1, 1]`.
    pub lo: f64,
    pub hi: f64,
}

impl FeatureScale {
    fn transform(&self, v: f64) -> f64 {
        match self.kind {
            FeatureKind::LogGain => v.max(f64::MIN_POSITIVE).log10(),
            FeatureKind::Alpha | FeatureKind::Raw => v,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        let t = self.transform(v);
        if self.hi > self.lo {
            2.0 * (t - self.lo) / (self.hi - self.lo) - 1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub features: Vec<FeatureScale>,
}

impl InputNorm {
    /// Maps raw inputs already in `[-1, 1]` to themselves.
    pub fn identity(n: usize) -> Self {
        Self { features: vec![FeatureScale { kind: FeatureKind::Raw, lo: -1.0, hi: 1.0 }; n] }
    }

    pub fn unfitted(kinds: &[FeatureKind]) -> Self {
        Self {
            features: kinds
                .iter()
                .map(|&kind| match kind {
                    FeatureKind::Alpha => FeatureScale { kind, lo: 0.0, hi: 1.0 },
                    _ => FeatureScale { kind, lo: -1.0, hi: 1.0 },
                })
                .collect(),
        }
    }

    /// Fits data-driven ranges (`LogGain`, `Raw`) from `xs`; `Alpha` stays `[0, 1]`.
    pub fn fit(&mut self, xs: &[Vec<f64>]) {
        for (f, feat) in self.features.iter_mut().enumerate() {
            if feat.kind == FeatureKind::Alpha {
                continue;
            }
            let (lo, hi) = xs
                .iter()
                .map(|x| feat.transform(x[f]))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            feat.lo = lo;
            feat.hi = hi;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.features).map(|(&v, f)| f.apply(v)).collect()
    }
}

/// Network outputs live in `[0, 1]`; predictions are clamped there and then
/// mapped affinely onto `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputNorm {
    pub lo: f64,
    pub hi: f64,
}

impl OutputNorm {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.lo + y.clamp(0.0, 1.0) * (self.hi - self.lo)
    }
}

/// Fully connected layer of learnable edge functions. Edge `(i, j)` maps
/// input `i` to output `j` and is stored at index `i * out_dim + j`. All
/// edges leaving input `i` share `grids[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub grids: Vec<Grid>,
    pub omega: Vec<f64>,
    /// `basis_count` coefficients per edge, edges in storage order.
    pub coeffs: Vec<f64>,
    /// `true` = active. Pruned edges contribute exactly zero.
    pub mask: Vec<bool>,
}

impl KanLayer {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, cfg: &KanConfig, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(invalid("layer dimensions must be positive"));
        }
        let grid = Grid::uniform(-1.0, 1.0, cfg.grid_intervals, cfg.order)?;
        let nb = grid.basis_count();
        let edges = in_dim * out_dim;
        let coeffs = (0..edges * nb).map(|_| rng.gen_range(-1.0..1.0) * cfg.init_scale).collect();
        Ok(Self {
            in_dim,
            out_dim,
            grids: vec![grid; in_dim],
            omega: vec![1.0; edges],
            coeffs,
            mask: vec![true; edges],
        })
    }

    pub fn basis_count(&self) -> usize {
        self.grids[0].basis_count()
    }

    pub fn order(&self) -> usize {
        self.grids[0].order
    }

    pub fn edge(&self, i: usize, j: usize) -> usize {
        i * self.out_dim + j
    }

    pub fn edge_coeffs(&self, e: usize) -> &[f64] {
        let nb = self.basis_count();
        &self.coeffs[e * nb..(e + 1) * nb]
    }

    /// Copy of edge `(i, j)` as a standalone activation.
    pub fn activation(&self, i: usize, j: usize) -> SplineActivation {
        let e = self.edge(i, j);
        SplineActivation {
            omega: self.omega[e],
            coeffs: self.edge_coeffs(e).to_vec(),
            grid: self.grids[i].clone(),
        }
    }

    pub fn set_activation(&mut self, i: usize, j: usize, omega: f64, coeffs: &[f64]) -> Result<()> {
        let nb = self.basis_count();
        if coeffs.len() != nb {
            return Err(invalid(format!("expected {nb} coefficients")));
        }
        let e = self.edge(i, j);
        self.omega[e] = omega;
        self.coeffs[e * nb..(e + 1) * nb].copy_from_slice(coeffs);
        Ok(())
    }

    /// Value of edge `(i, j)` at `x`, ignoring the mask.
    pub fn edge_value(&self, i: usize, j: usize, x: f64) -> f64 {
        let k = self.order();
        let e = self.edge(i, j);
        let mut basis = [0.0; MAX_ORDER + 1];
        let first = self.grids[i].local_basis(x, &mut basis[..=k]);
        let c = &self.edge_coeffs(e)[first..=first + k];
        let spline: f64 = basis[..=k].iter().zip(c).map(|(b, c)| b * c).sum();
        self.omega[e] * (silu(x) + spline)
    }

    pub fn active_edges(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let k = self.order();
        let mut out = vec![0.0; self.out_dim];
        let mut basis = [0.0; MAX_ORDER + 1];
        for (i, &xi) in x.iter().enumerate() {
            let row = i * self.out_dim;
            if !self.mask[row..row + self.out_dim].iter().any(|&m| m) {
                continue;
            }
            let first = self.grids[i].local_basis(xi, &mut basis[..=k]);
            let base = silu(xi);
            for (j, o) in out.iter_mut().enumerate() {
                let e = row + j;
                if !self.mask[e] {
                    continue;
                }
                let c = &self.edge_coeffs(e)[first..=first + k];
                let spline: f64 = basis[..=k].iter().zip(c).map(|(b, c)| b * c).sum();
                *o += self.omega[e] * (base + spline);
            }
        }
        out
    }

    /// Per-edge outputs `phi_ij(x_i)` (zero for masked edges).
    pub fn edge_outputs(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.in_dim * self.out_dim];
        for (i, &xi) in x.iter().enumerate() {
            for j in 0..self.out_dim {
                let e = self.edge(i, j);
                if self.mask[e] {
                    v[e] = self.edge_value(i, j, xi);
                }
            }
        }
        v
    }

    fn param_count(&self) -> usize {
        self.omega.len() + self.coeffs.len()
    }
}

/// Training-set statistics kept with a network for pruning and symbolic export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    /// Mean `|phi_e(x)|` per layer and edge.
    pub importance: Vec<Vec<f64>>,
    /// Observed `(min, max)` of each layer input.
    pub input_range: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanNetwork {
    pub layers: Vec<KanLayer>,
    pub input_norm: InputNorm,
    pub output_norm: OutputNorm,
    #[serde(default)]
    pub stats: Option<EdgeStats>,
}

struct InputCache {
    first: usize,
    basis: [f64; MAX_ORDER + 1],
    dbasis: [f64; MAX_ORDER + 1],
    silu: f64,
    dsilu: f64,
}

impl KanNetwork {
    /// Builds a network with layer widths `dims` (`dims[0]` inputs).
    pub fn new(
        dims: &[usize],
        cfg: &KanConfig,
        input_kinds: &[FeatureKind],
        output_norm: OutputNorm,
        seed: u64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(invalid("a network needs at least an input and an output width"));
        }
        if input_kinds.len() != dims[0] {
            return Err(invalid("one feature kind per input is required"));
        }
        if !(output_norm.hi > output_norm.lo) {
            return Err(invalid("output range is empty"));
        }
        let mut rng = seed::rng(seed, seed::KAN_INIT, 0);
        let layers = dims
            .windows(2)
            .map(|w| KanLayer::new(w[0], w[1], cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, input_norm: InputNorm::unfitted(input_kinds), output_norm, stats: None })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        self.input_norm.apply(x)
    }

    /// Raw network output for normalised input: no clamping, target units in `[0, 1]`.
    pub fn forward_normalized(&self, z: &[f64]) -> Vec<f64> {
        let mut a = z.to_vec();
        for layer in &self.layers {
            a = layer.forward(&a);
        }
        a
    }

    /// Predicted outputs in physical units, inside the output range.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(invalid(format!("expected {} inputs, got {}", self.in_dim(), x.len())));
        }
        let y = self.forward_normalized(&self.normalize_input(x));
        Ok(y.into_iter().map(|v| self.output_norm.denormalize(v)).collect())
    }

    /// Fits the input normalisation and sets every hidden layer's grid
    /// domains to the observed range of its inputs (plus `cfg.hidden_margin`
    /// of the width on each side). Call once, before training.
    pub fn initialize_from_data(&mut self, xs: &[Vec<f64>], hidden_margin: f64) -> Result<()> {
        if xs.is_empty() {
            return Err(invalid("cannot initialise from an empty dataset"));
        }
        if xs.iter().any(|x| x.len() != self.in_dim()) {
            return Err(invalid("input width mismatch"));
        }
        self.input_norm.fit(xs);
        let mut acts: Vec<Vec<f64>> = xs.iter().map(|x| self.normalize_input(x)).collect();
        for l in 0..self.layers.len() {
            if l > 0 {
                let layer = &mut self.layers[l];
                for i in 0..layer.in_dim {
                    let (lo, hi) = acts
                        .iter()
                        .map(|a| a[i])
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                    let w = (hi - lo).max(1e-3);
                    let g = &layer.grids[i];
                    layer.grids[i] = Grid::uniform(lo - hidden_margin * w, hi + hidden_margin * w, g.intervals, g.order)?;
                }
            }
            let layer = &self.layers[l];
            acts = par::map(&acts, |a| layer.forward(a));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Flat parameters: per layer, all `omega` then all coefficients.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.omega);
            p.extend_from_slice(&l.coeffs);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.omega.len();
            l.omega.copy_from_slice(&p[off..off + n]);
            off += n;
            let n = l.coeffs.len();
            l.coeffs.copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offs.push(off);
            off += l.param_count();
        }
        offs
    }

    /// Adds `scale * d(sum of squared errors)/d(params)` for one sample to
    /// `grad`; returns the sample's squared error.
    fn backprop_sample(&self, z: &[f64], target: &[f64], scale: f64, offsets: &[usize], grad: &mut [f64]) -> f64 {
        let mut caches: Vec<Vec<InputCache>> = Vec::with_capacity(self.layers.len());
        let mut a = z.to_vec();
        for layer in &self.layers {
            let k = layer.order();
            let cache: Vec<InputCache> = a
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let mut c = InputCache {
                        first: 0,
                        basis: [0.0; MAX_ORDER + 1],
                        dbasis: [0.0; MAX_ORDER + 1],
                        silu: silu(x),
                        dsilu: silu_deriv(x),
                    };
                    c.first = layer.grids[i].local_basis_deriv(x, &mut c.basis[..=k], &mut c.dbasis[..=k]);
                    c
                })
                .collect();
            a = layer.forward(&a);
            caches.push(cache);
        }
        let mut sq = 0.0;
        let mut delta: Vec<f64> = a
            .iter()
            .zip(target)
            .map(|(y, t)| {
                sq += (y - t) * (y - t);
                2.0 * (y - t) * scale
            })
            .collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let k = layer.order();
            let nb = layer.basis_count();
            let omega_off = offsets[l];
            let coeff_off = omega_off + layer.omega.len();
            let mut delta_in = vec![0.0; layer.in_dim];
            for (i, c) in caches[l].iter().enumerate() {
                let mut d_in = 0.0;
                for (j, &dj) in delta.iter().enumerate() {
                    let e = layer.edge(i, j);
                    if !layer.mask[e] || dj == 0.0 {
                        continue;
                    }
                    let coeffs = &layer.coeffs[e * nb + c.first..e * nb + c.first + k + 1];
                    let mut s = 0.0;
                    let mut ds = 0.0;
                    for m in 0..=k {
                        s += coeffs[m] * c.basis[m];
                        ds += coeffs[m] * c.dbasis[m];
                    }
                    let w = layer.omega[e];
                    grad[omega_off + e] += dj * (c.silu + s);
                    let gc = &mut grad[coeff_off + e * nb + c.first..coeff_off + e * nb + c.first + k + 1];
                    for m in 0..=k {
                        gc[m] += dj * w * c.basis[m];
                    }
                    d_in += dj * w * (c.dsilu + ds);
                }
                delta_in[i] = d_in;
            }
            delta = delta_in;
        }
        sq
    }

    /// Mean squared error over all samples and outputs, in normalised units.
    pub fn loss(&self, zs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let count = (zs.len() * self.out_dim()).max(1) as f64;
        let idx: Vec<usize> = (0..zs.len()).collect();
        let partial = par::map_chunks(&idx, |chunk| {
            chunk
                .iter()
                .map(|&s| {
                    let y = self.forward_normalized(&zs[s]);
                    y.iter().zip(&targets[s]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .sum::<f64>()
        });
        partial.iter().sum::<f64>() / count
    }

    /// Mean squared error and its gradient over the samples in `batch`.
    pub fn loss_and_grad(&self, zs: &[Vec<f64>], targets: &[Vec<f64>], batch: &[usize]) -> (f64, Vec<f64>) {
        let count = (batch.len() * self.out_dim()).max(1) as f64;
        let scale = 1.0 / count;
        let offsets = self.layer_offsets();
        let np = self.param_count();
        let partial = par::map_chunks(batch, |chunk| {
            let mut g = vec![0.0; np];
            let mut sq = 0.0;
            for &s in chunk {
                sq += self.backprop_sample(&zs[s], &targets[s], scale, &offsets, &mut g);
            }
            (sq, g)
        });
        let mut grad = vec![0.0; np];
        let mut total = 0.0;
        for (sq, g) in partial {
            total += sq;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        (total / count, grad)
    }

    /// Records edge importance and layer input ranges over raw inputs `xs`.
    pub fn record_stats(&mut self, xs: &[Vec<f64>]) {
        let mut importance: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.mask.len()]).collect();
        let mut ranges: Vec<Vec<(f64, f64)>> = self
            .layers
            .iter()
            .map(|l| vec![(f64::INFINITY, f64::NEG_INFINITY); l.in_dim])
            .collect();
        let per_sample = par::map(xs, |x| {
            let mut a = self.normalize_input(x);
            let mut rows = Vec::with_capacity(self.layers.len());
            for layer in &self.layers {
                let e = layer.edge_outputs(&a);
                let next = layer.forward(&a);
                rows.push((std::mem::replace(&mut a, next), e));
            }
            rows
        });
        for rows in &per_sample {
            for (l, (input, edges)) in rows.iter().enumerate() {
                for (r, &v) in ranges[l].iter_mut().zip(input) {
                    *r = (r.0.min(v), r.1.max(v));
                }
                for (imp, &v) in importance[l].iter_mut().zip(edges) {
                    *imp += v.abs();
                }
            }
        }
        let n = xs.len().max(1) as f64;
        importance.iter_mut().flatten().for_each(|v| *v /= n);
        self.stats = Some(EdgeStats { importance, input_range: ranges });
    }

    pub fn active_edges(&self) -> usize {
        self.layers.iter().map(|l| l.active_edges()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> KanConfig {
        KanConfig::default()
    }

    fn unit_norm() -> OutputNorm {
        OutputNorm { lo: 0.0, hi: 1.0 }
    }

    #[test]
    fn degenerate_single_edge_is_silu() {
        let mut net = KanNetwork::new(&[1, 1], &cfg(), &[FeatureKind::Raw], OutputNorm { lo: 10.0, hi: 20.0 }, 0).unwrap();
        net.input_norm = InputNorm::identity(1);
        net.layers[0].coeffs.iter_mut().for_each(|c| *c = 0.0);
        for x in [-0.5, 0.2, 0.9] {
            let y = net.forward(&[x]).unwrap()[0];
            assert_relative_eq!(y, 10.0 + silu(x).clamp(0.0, 1.0) * 10.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_omega_gives_output_floor() {
        let mut net = KanNetwork::new(&[3, 7, 2], &cfg(), &[FeatureKind::Raw; 3], OutputNorm { lo: 10.0, hi: 1000.0 }, 1).unwrap();
        for l in &mut net.layers {
            l.omega.iter_mut().for_each(|w| *w = 0.0);
        }
        for x in [[0.1, 0.2, 0.3], [-5.0, 0.0, 4.0]] {
            assert_eq!(net.forward(&x).unwrap(), vec![10.0, 10.0]);
        }
    }

    #[test]
    fn forward_is_deterministic_and_checks_width() {
        let a = KanNetwork::new(&[2, 5, 1], &cfg(), &[FeatureKind::Raw; 2], unit_norm(), 42).unwrap();
        let b = KanNetwork::new(&[2, 5, 1], &cfg(), &[FeatureKind::Raw; 2], unit_norm(), 42).unwrap();
        assert_eq!(a, b);
        let x = [0.3, -0.4];
        assert_eq!(a.forward(&x).unwrap().to_vec(), b.forward(&x).unwrap());
        assert_eq!(a.forward(&x).unwrap(), a.forward(&x).unwrap());
        assert!(a.forward(&[0.1]).is_err());
    }

    #[test]
    fn masked_edges_equal_rebuilt_network() {
        let mut net = KanNetwork::new(&[3, 2], &cfg(), &[FeatureKind::Raw; 3], unit_norm(), 3).unwrap();
        net.input_norm = InputNorm::identity(3);
        let e = net.layers[0].edge(1, 0);
        net.layers[0].mask[e] = false;
        let mut rebuilt = net.clone();
        rebuilt.layers[0].mask[e] = true;
        rebuilt.layers[0].omega[e] = 0.0;
        for x in [[0.1, 0.5, -0.2], [0.9, -0.9, 0.0]] {
            let a = net.forward_normalized(&x);
            let b = rebuilt.forward_normalized(&x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn input_norm_maps_to_unit_box() {
        let mut norm = InputNorm::unfitted(&[FeatureKind::LogGain, FeatureKind::Alpha]);
        norm.fit(&[vec![1e-4, 0.0], vec![1e-2, 0.9]]);
        assert_relative_eq!(norm.apply(&[1e-4, 0.0])[0], -1.0);
        assert_relative_eq!(norm.apply(&[1e-2, 1.0])[0], 1.0);
        assert_relative_eq!(norm.apply(&[1e-3, 0.5])[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(norm.apply(&[1e-3, 0.5])[1], 0.0);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_outputs() {
        let net = KanNetwork::new(&[2, 5, 1], &cfg(), &[FeatureKind::Raw; 2], unit_norm(), 8).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: KanNetwork = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.forward(&[0.2, 0.1]).unwrap(), net.forward(&[0.2, 0.1]).unwrap());
    }
}
