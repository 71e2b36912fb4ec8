//! Maximum-independent-set to power-allocation construction.
//!
//! Each vertex becomes a UE with its own BS, own-link gain 1, cross gain `M`
//! in both directions for every edge, zero elsewhere, noise `epsilon`, and
//! alpha = 1. [`verify_correspondence`] checks whether the high-power UEs of
//! a solved instance form a maximum independent set.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::net_model::{SystemParams, Topology};
use crate::oracle::SolveResult;

/// Largest graph accepted by [`brute_force_mis`].
pub const MIS_MAX_VERTICES: usize = 20;

/// Simple undirected graph. Edges are stored as `(min, max)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    vertex_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(vertex_count: usize) -> Self {
        Self { vertex_count, edges: BTreeSet::new() }
    }

    pub fn from_edges(vertex_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::new(vertex_count);
        for &(u, v) in edges {
            g.add_edge(u, v)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        if u == v {
            return Err(invalid(format!("self-loop on vertex {u}")));
        }
        if u >= self.vertex_count || v >= self.vertex_count {
            return Err(invalid(format!("edge ({u}, {v}) out of range for {} vertices", self.vertex_count)));
        }
        self.edges.insert((u.min(v), u.max(v)));
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn is_independent(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(a, &u)| set[a + 1..].iter().all(|&v| !self.has_edge(u, v)))
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::new(n);
        for u in 0..n {
            for v in u + 1..n {
                g.edges.insert((u, v));
            }
        }
        g
    }

    pub fn path(n: usize) -> Self {
        let mut g = Self::new(n);
        for u in 1..n {
            g.edges.insert((u - 1, u));
        }
        g
    }

    pub fn cycle(n: usize) -> Self {
        let mut g = Self::path(n);
        if n > 2 {
            g.edges.insert((0, n - 1));
        }
        g
    }

    /// Erdos-Renyi sample.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, edge_probability: f64) -> Self {
        let mut g = Self::new(n);
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(edge_probability) {
                    g.edges.insert((u, v));
                }
            }
        }
        g
    }
}

/// Edge-list text: header `n <count>`, then one `u v` pair per line.
/// Blank lines and `#` comments are ignored.
impl FromStr for Graph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .enumerate()
            .filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty graph file".into()))?;
        let mut parts = header.split_whitespace();
        let n = match (parts.next(), parts.next(), parts.next()) {
            (Some("n"), Some(count), None) => count
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad vertex count {count:?}: {e}")))?,
            _ => return Err(Error::Parse(format!("expected header `n <count>`, got {header:?}"))),
        };
        let mut g = Graph::new(n);
        for (lineno, line) in lines {
            let nums: Vec<&str> = line.split_whitespace().collect();
            let [u, v] = nums.as_slice() else {
                return Err(Error::Parse(format!("line {}: expected `u v`", lineno + 1)));
            };
            let parse = |t: &str| {
                t.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {t:?}: {e}", lineno + 1)))
            };
            g.add_edge(parse(u)?, parse(v)?)?;
        }
        Ok(g)
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n {}", self.vertex_count)?;
        for (u, v) in &self.edges {
            writeln!(f, "{u} {v}")?;
        }
        Ok(())
    }
}

/// A power-allocation instance built from a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedInstance {
    pub topology: Topology,
    /// Instance parameters; `noise_power` equals `epsilon`.
    pub params: SystemParams,
    pub alpha: f64,
    pub epsilon: f64,
    pub m_value: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_M: f64 = 1e6;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Builds the reduced instance: one UE-BS pair per vertex, `h[i][i] = 1`,
/// `h[i][j] = h[j][i] = m_value` for every edge, all other gains 0,
/// noise `epsilon`, alpha 1. Power bounds come from `params`.
pub fn build_instance(
    graph: &Graph,
    epsilon: f64,
    m_value: f64,
    params: &SystemParams,
) -> Result<ReducedInstance> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    if !(m_value > 1.0) {
        return Err(invalid("M must exceed 1"));
    }
    let n = graph.vertex_count();
    if n == 0 {
        return Err(invalid("graph has no vertices"));
    }
    let mut gains = vec![vec![0.0; n]; n];
    for (i, row) in gains.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (u, v) in graph.edges() {
        gains[u][v] = m_value;
        gains[v][u] = m_value;
    }
    // Positions carry no meaning here; gains override the path-gain law.
    let positions: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, 0.0]).collect();
    let topology = Topology { bs: positions.clone(), ue: positions, gains, assoc: (0..n).collect() };
    topology.validate()?;
    let params = SystemParams { noise_power: epsilon, ..*params };
    params.validate()?;
    Ok(ReducedInstance { topology, params, alpha: 1.0, epsilon, m_value })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisResult {
    pub size: usize,
    /// Every maximum independent set, each sorted, in lexicographic order.
    pub witnesses: Vec<Vec<usize>>,
}

/// Exact maximum independent sets by subset enumeration over bitmasks.
pub fn brute_force_mis(graph: &Graph) -> Result<MisResult> {
    let n = graph.vertex_count();
    if n > MIS_MAX_VERTICES {
        return Err(invalid(format!("brute-force MIS limited to {MIS_MAX_VERTICES} vertices, got {n}")));
    }
    let mut adj = vec![0u32; n];
    for (u, v) in graph.edges() {
        adj[u] |= 1 << v;
        adj[v] |= 1 << u;
    }
    let mut size = 0;
    let mut masks: Vec<u32> = Vec::new();
    for mask in 0u32..(1u32 << n) {
        let independent = (0..n).all(|v| mask & (1 << v) == 0 || adj[v] & mask == 0);
        if !independent {
            continue;
        }
        let c = mask.count_ones() as usize;
        if c > size {
            size = c;
            masks.clear();
        }
        if c == size {
            masks.push(mask);
        }
    }
    let mut witnesses: Vec<Vec<usize>> = masks
        .into_iter()
        .map(|m| (0..n).filter(|v| m & (1 << v) != 0).collect())
        .collect();
    witnesses.sort();
    Ok(MisResult { size, witnesses })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub verdict: Verdict,
    /// UEs with `p_i >= threshold_fraction * p_max`.
    pub extracted: Vec<usize>,
    pub independent: bool,
    pub mis_size: usize,
}

/// Extracts the high-power UEs and compares them with a maximum independent set.
pub fn verify_correspondence(
    graph: &Graph,
    instance: &ReducedInstance,
    solved: &SolveResult,
    threshold_fraction: f64,
) -> Result<Correspondence> {
    let n = graph.vertex_count();
    if solved.powers.len() != n || instance.topology.n_ue() != n {
        return Err(invalid("solution, instance and graph sizes differ"));
    }
    let cut = threshold_fraction * instance.params.p_max;
    let extracted: Vec<usize> = (0..n).filter(|&i| solved.powers.as_slice()[i] >= cut).collect();
    let mis = brute_force_mis(graph)?;
    let independent = graph.is_independent(&extracted);
    let verdict = if independent && extracted.len() == mis.size { Verdict::Match } else { Verdict::Mismatch };
    Ok(Correspondence { verdict, extracted, independent, mis_size: mis.size })
}
