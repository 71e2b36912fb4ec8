//! Uplink network model: topologies, path gains, Shannon rates and
//! alpha-fairness.
//!
//! Rates use base-2 logarithms. The proportional-fairness branch (alpha = 1)
//! uses the natural logarithm. For alpha != 1 the utility is
//! `sum(r^(1 - alpha)) / (1 - alpha)` with no `-1` shift, so it is
//! discontinuous at alpha = 1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

/// Physical and power-box parameters shared by every instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemParams {
    /// Noise power in watts.
    pub noise_power: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Area width and height in meters; positions lie in `[0, w] x [0, h]`.
    pub area: [f64; 2],
    pub path_gain_exponent: f64,
    /// Minimum UE-BS and UE-UE distance enforced when sampling, in meters.
    pub min_separation: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            noise_power: 1e-9,
            p_min: 10.0,
            p_max: 1000.0,
            area: [100.0, 100.0],
            path_gain_exponent: 2.0,
            min_separation: 1.0,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(invalid(format!("noise power must be > 0, got {}", self.noise_power)));
        }
        if !(self.p_min > 0.0 && self.p_min < self.p_max && self.p_max.is_finite()) {
            return Err(invalid(format!(
                "power bounds must satisfy 0 < p_min < p_max, got [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        if !(self.area[0] > 0.0 && self.area[1] > 0.0) {
            return Err(invalid("area dimensions must be positive"));
        }
        if !(self.path_gain_exponent > 0.0) {
            return Err(invalid("path gain exponent must be positive"));
        }
        if !(self.min_separation > 0.0) {
            return Err(invalid("minimum separation must be positive"));
        }
        Ok(())
    }

    pub fn clamp_power(&self, p: f64) -> f64 {
        p.clamp(self.p_min, self.p_max)
    }
}

/// Per-UE transmit powers in watts, each inside `[p_min, p_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerVector(Vec<f64>);

impl PowerVector {
    pub fn new(p: Vec<f64>, params: &SystemParams) -> Result<Self> {
        if let Some((i, v)) = p
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= params.p_min && v <= params.p_max))
        {
            return Err(invalid(format!(
                "power {v} of UE {i} outside [{}, {}]",
                params.p_min, params.p_max
            )));
        }
        Ok(Self(p))
    }

    /// Builds a vector by clamping every entry into the power box.
    pub fn clamped(p: &[f64], params: &SystemParams) -> Self {
        Self(p.iter().map(|&v| params.clamp_power(v)).collect())
    }

    pub fn uniform(n: usize, p: f64) -> Self {
        Self(vec![p; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub alpha: f64,
}

impl FairnessSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

/// UE/BS placement, path-gain matrix `gains[ue][bs]` and association `assoc[ue]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub bs: Vec<Point>,
    pub ue: Vec<Point>,
    pub gains: Vec<Vec<f64>>,
    pub assoc: Vec<usize>,
}

/// On-disk topology. `gains` and `assoc` are optional: missing gains are
/// computed from positions, missing association is computed by [`associate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub bs: Vec<Point>,
    pub ue: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assoc: Option<Vec<usize>>,
}

impl Topology {
    pub fn n_ue(&self) -> usize {
        self.ue.len()
    }

    pub fn n_bs(&self) -> usize {
        self.bs.len()
    }

    /// Own-link gain `h[i][b_i]`.
    pub fn own_gain(&self, ue: usize) -> f64 {
        self.gains[ue][self.assoc[ue]]
    }

    /// UEs served by `bs`, in index order.
    pub fn served_by(&self, bs: usize) -> Vec<usize> {
        (0..self.n_ue()).filter(|&i| self.assoc[i] == bs).collect()
    }

    /// Builds a geometric topology: gains from the path-gain law, balanced
    /// min-distance association.
    pub fn from_positions(bs: Vec<Point>, ue: Vec<Point>, params: &SystemParams) -> Result<Self> {
        let gains = gain_matrix(&bs, &ue, params)?;
        let assoc = associate(&bs, &ue)?;
        let topo = Self { bs, ue, gains, assoc };
        topo.validate()?;
        Ok(topo)
    }

    pub fn from_file(file: TopologyFile, params: &SystemParams) -> Result<Self> {
        let gains = match file.gains {
            Some(g) => g,
            None => gain_matrix(&file.bs, &file.ue, params)?,
        };
        let assoc = match file.assoc {
            Some(a) => a,
            None => associate(&file.bs, &file.ue)?,
        };
        let topo = Self { bs: file.bs, ue: file.ue, gains, assoc };
        topo.validate()?;
        Ok(topo)
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            bs: self.bs.clone(),
            ue: self.ue.clone(),
            gains: Some(self.gains.clone()),
            assoc: Some(self.assoc.clone()),
        }
    }

    /// Structural checks. Gains may be zero (reduction instances) but never
    /// negative, and every own-link gain must be positive.
    pub fn validate(&self) -> Result<()> {
        let (n, b) = (self.n_ue(), self.n_bs());
        if n == 0 || b == 0 {
            return Err(invalid("topology needs at least one UE and one BS"));
        }
        if self.gains.len() != n || self.gains.iter().any(|row| row.len() != b) {
            return Err(invalid(format!("gain matrix must be {n} x {b}")));
        }
        if self.assoc.len() != n {
            return Err(invalid(format!("association must have {n} entries")));
        }
        if let Some(&k) = self.assoc.iter().find(|&&k| k >= b) {
            return Err(invalid(format!("association refers to BS {k}, only {b} exist")));
        }
        if self.gains.iter().flatten().any(|&g| !(g >= 0.0 && g.is_finite())) {
            return Err(invalid("gains must be finite and non-negative"));
        }
        if let Some(i) = (0..n).find(|&i| !(self.own_gain(i) > 0.0)) {
            return Err(invalid(format!("UE {i} has zero gain to its serving BS")));
        }
        Ok(())
    }

    /// Samples a topology uniformly in the area, rejecting UEs closer than
    /// `min_separation` to any BS or to an earlier UE.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        n_ue: usize,
        n_bs: usize,
        params: &SystemParams,
    ) -> Result<Self> {
        if n_ue == 0 || n_bs == 0 {
            return Err(invalid("need at least one UE and one BS"));
        }
        let [w, h] = params.area;
        let draw = |rng: &mut R| [rng.gen::<f64>() * w, rng.gen::<f64>() * h];
        let bs: Vec<Point> = (0..n_bs).map(|_| draw(rng)).collect();
        let mut ue: Vec<Point> = Vec::with_capacity(n_ue);
        let mut attempts = 0usize;
        while ue.len() < n_ue {
            attempts += 1;
            if attempts > 100_000 {
                return Err(invalid("could not place UEs with the requested separation"));
            }
            let p = draw(rng);
            let clear = bs
                .iter()
                .chain(ue.iter())
                .all(|q| distance(&p, q) >= params.min_separation);
            if clear {
                ue.push(p);
            }
        }
        Self::from_positions(bs, ue, params)
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `||a - b||^(-exponent)`. Rejects pairs closer than the minimum separation.
pub fn path_gain(a: &Point, b: &Point, params: &SystemParams) -> Result<f64> {
    let d = distance(a, b);
    if !(d >= params.min_separation) {
        return Err(invalid(format!(
            "distance {d} m is below the minimum separation {} m",
            params.min_separation
        )));
    }
    Ok(d.powf(-params.path_gain_exponent))
}

fn gain_matrix(bs: &[Point], ue: &[Point], params: &SystemParams) -> Result<Vec<Vec<f64>>> {
    ue.iter()
        .map(|u| bs.iter().map(|b| path_gain(u, b, params)).collect())
        .collect()
}

/// Balanced association minimising the total UE-BS distance.
///
/// With `n = q * b + r`, every BS serves `q` or `q + 1` UEs and exactly `r`
/// serve `q + 1`. Solved exactly as a rectangular assignment problem where
/// each BS contributes `q` mandatory slots (cost shifted down by a constant
/// larger than any distance sum) and one optional slot when `r > 0`.
pub fn associate(bs: &[Point], ue: &[Point]) -> Result<Vec<usize>> {
    let (n, b) = (ue.len(), bs.len());
    if n == 0 || b == 0 {
        return Err(invalid("need at least one UE and one BS"));
    }
    let q = n / b;
    let r = n % b;
    let mut slots: Vec<(usize, bool)> = Vec::new();
    for k in 0..b {
        for _ in 0..q {
            slots.push((k, true));
        }
        if r > 0 {
            slots.push((k, false));
        }
    }
    let max_d = ue
        .iter()
        .flat_map(|u| bs.iter().map(move |s| distance(u, s)))
        .fold(0.0_f64, f64::max);
    let shift = (max_d + 1.0) * (n as f64 + 1.0);
    let cost: Vec<Vec<f64>> = ue
        .iter()
        .map(|u| {
            slots
                .iter()
                .map(|&(k, mandatory)| distance(u, &bs[k]) - if mandatory { shift } else { 0.0 })
                .collect()
        })
        .collect();
    let pick = hungarian(&cost);
    Ok(pick.into_iter().map(|s| slots[s].0).collect())
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
/// Returns the column chosen for each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// SINR of every UE at its serving BS with an explicit noise power.
/// Interference at `b_i` sums over every other UE in the network.
pub fn sinr_with_noise(topo: &Topology, powers: &[f64], noise: f64) -> Vec<f64> {
    let n = topo.n_ue();
    debug_assert_eq!(powers.len(), n);
    (0..n)
        .map(|i| {
            let k = topo.assoc[i];
            let signal = powers[i] * topo.gains[i][k];
            let interference: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| powers[j] * topo.gains[j][k])
                .sum();
            signal / (interference + noise)
        })
        .collect()
}

/// Rates in bits/s/Hz from raw power values (no bounds check).
pub fn rates_raw(topo: &Topology, powers: &[f64], params: &SystemParams) -> Vec<f64> {
    sinr_with_noise(topo, powers, params.noise_power)
        .into_iter()
        .map(|g| (1.0 + g).log2())
        .collect()
}

/// `r_i = log2(1 + p_i h_{i,b_i} / (sum_{j != i} p_j h_{j,b_i} + noise))`.
pub fn compute_rates(topo: &Topology, powers: &PowerVector, params: &SystemParams) -> Vec<f64> {
    rates_raw(topo, powers.as_slice(), params)
}

/// Alpha-fairness of a rate vector.
pub fn alpha_fairness(rates: &[f64], spec: &FairnessSpec) -> Result<f64> {
    let alpha = spec.alpha;
    if alpha >= 1.0 {
        if let Some(r) = rates.iter().find(|&&r| !(r > 0.0)) {
            return Err(Error::Domain(format!("rate {r} must be positive for alpha >= 1")));
        }
    }
    if alpha == 1.0 {
        Ok(rates.iter().map(|r| r.ln()).sum())
    } else {
        let e = 1.0 - alpha;
        Ok(rates.iter().map(|r| r.powf(e)).sum::<f64>() / e)
    }
}

/// Fairness of a power vector. Shorthand for rates followed by utility.
pub fn fairness_of(
    topo: &Topology,
    powers: &[f64],
    params: &SystemParams,
    spec: &FairnessSpec,
) -> Result<f64> {
    alpha_fairness(&rates_raw(topo, powers, params), spec)
}
