//! Solvers for the alpha-fair power allocation problem
//! `max_p F_alpha(rates(p))` subject to `p_min <= p_i <= p_max`.
//!
//! [`solve_grid`] enumerates a log-spaced grid and is exact on that grid.
//! [`solve_gradient`] runs projected gradient ascent in log-power
//! coordinates `u_i = ln p_i` from several starts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::net_model::{alpha_fairness, rates_raw, FairnessSpec, PowerVector, SystemParams, Topology};
use crate::{par, seed};

/// Upper bound on grid points evaluated by [`solve_grid`].
pub const GRID_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    ExhaustiveGrid,
    MultistartGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub powers: PowerVector,
    pub fairness: f64,
    pub solver_tag: SolverTag,
    /// Number of objective evaluations.
    pub evaluations: u64,
    /// False when the winning gradient start hit the iteration cap.
    pub converged: bool,
}

/// `levels` log-spaced powers from `p_min` to `p_max`, endpoints exact.
pub fn log_grid(levels: usize, params: &SystemParams) -> Vec<f64> {
    let (lo, hi) = (params.p_min.ln(), params.p_max.ln());
    (0..levels)
        .map(|k| {
            if k == 0 {
                params.p_min
            } else if k + 1 == levels {
                params.p_max
            } else {
                (lo + (hi - lo) * k as f64 / (levels - 1) as f64).exp()
            }
        })
        .collect()
}

fn check_instance(topo: &Topology, params: &SystemParams) -> Result<()> {
    params.validate()?;
    topo.validate()
}

/// Exhaustive search over the Cartesian product of per-UE log grids.
///
/// Ties resolve toward the lexicographically smallest grid index (UE 0 is the
/// most significant digit).
pub fn solve_grid(
    topo: &Topology,
    params: &SystemParams,
    spec: &FairnessSpec,
    levels_per_ue: usize,
) -> Result<SolveResult> {
    check_instance(topo, params)?;
    if levels_per_ue < 2 {
        return Err(invalid("grid needs at least 2 levels per UE"));
    }
    let n = topo.n_ue();
    let total = (levels_per_ue as u64)
        .checked_pow(n as u32)
        .filter(|&t| t <= GRID_BUDGET)
        .ok_or_else(|| {
            Error::Budget(format!(
                "{levels_per_ue}^{n} grid points exceed the budget of {GRID_BUDGET}"
            ))
        })?;
    let levels = log_grid(levels_per_ue, params);

    const BLOCK: u64 = 4096;
    let blocks = total.div_ceil(BLOCK) as usize;
    let partial: Vec<Result<(f64, u64)>> = par::map_range(blocks, |b| {
        let start = b as u64 * BLOCK;
        let end = (start + BLOCK).min(total);
        let mut digits = vec![0usize; n];
        let mut rem = start;
        for d in digits.iter_mut().rev() {
            *d = (rem % levels_per_ue as u64) as usize;
            rem /= levels_per_ue as u64;
        }
        let mut p: Vec<f64> = digits.iter().map(|&d| levels[d]).collect();
        let mut best = (f64::NEG_INFINITY, start);
        for idx in start..end {
            let f = alpha_fairness(&rates_raw(topo, &p, params), spec)?;
            if f > best.0 {
                best = (f, idx);
            }
            // odometer increment, last UE fastest
            for pos in (0..n).rev() {
                digits[pos] += 1;
                if digits[pos] < levels_per_ue {
                    p[pos] = levels[digits[pos]];
                    break;
                }
                digits[pos] = 0;
                p[pos] = levels[0];
            }
        }
        Ok(best)
    });
    let mut best = (f64::NEG_INFINITY, 0u64);
    for r in partial {
        let (f, idx) = r?;
        if f > best.0 {
            best = (f, idx);
        }
    }
    let mut rem = best.1;
    let mut p = vec![0.0; n];
    for slot in p.iter_mut().rev() {
        *slot = levels[(rem % levels_per_ue as u64) as usize];
        rem /= levels_per_ue as u64;
    }
    let fairness = alpha_fairness(&rates_raw(topo, &p, params), spec)?;
    Ok(SolveResult {
        powers: PowerVector::new(p, params)?,
        fairness,
        solver_tag: SolverTag::ExhaustiveGrid,
        evaluations: total,
        converged: true,
    })
}

/// Fairness and its gradient with respect to log-powers `u_i = ln p_i`.
///
/// With `w_i = r_i^(-alpha) / ((1 + g_i) ln 2)`, the derivative is
/// `dF/du_k = w_k g_k - sum_{i != k} w_i g_i p_k h_{k,b_i} / I_i`
/// where `I_i` is interference plus noise at `b_i`.
pub fn objective_and_gradient(
    topo: &Topology,
    log_powers: &[f64],
    params: &SystemParams,
    spec: &FairnessSpec,
) -> Result<(f64, Vec<f64>)> {
    let n = topo.n_ue();
    let p: Vec<f64> = log_powers.iter().map(|u| u.exp()).collect();
    let mut interference = vec![0.0; n];
    let mut sinr = vec![0.0; n];
    for i in 0..n {
        let k = topo.assoc[i];
        let mut acc = params.noise_power;
        for j in 0..n {
            if j != i {
                acc += p[j] * topo.gains[j][k];
            }
        }
        interference[i] = acc;
        sinr[i] = p[i] * topo.gains[i][k] / acc;
    }
    let rates: Vec<f64> = sinr.iter().map(|g| (1.0 + g).log2()).collect();
    let value = alpha_fairness(&rates, spec)?;
    let weight: Vec<f64> = (0..n)
        .map(|i| rates[i].powf(-spec.alpha) / ((1.0 + sinr[i]) * std::f64::consts::LN_2))
        .collect();
    let grad = (0..n)
        .map(|k| {
            let mut g = weight[k] * sinr[k];
            for i in 0..n {
                if i != k {
                    g -= weight[i] * sinr[i] * p[k] * topo.gains[k][topo.assoc[i]] / interference[i];
                }
            }
            g
        })
        .collect();
    Ok((value, grad))
}

/// Projected gradient ascent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    /// Random starts, in addition to the all-`p_min` and all-`p_max` starts.
    pub starts: usize,
    pub max_iter: usize,
    pub initial_step: f64,
    pub armijo: f64,
    /// Stop when a step moves no coordinate by more than this (log units).
    pub step_tol: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self { starts: 8, max_iter: 200, initial_step: 1.0, armijo: 1e-4, step_tol: 1e-10 }
    }
}

/// Outcome of one backtracking search along a projected path.
pub(crate) struct Step {
    pub point: Vec<f64>,
    pub evaluations: u64,
}

/// Backtracking (Armijo) ascent step along `x + t * dir`, projected by `project`.
///
/// Halves `t` from `initial` until `f(x_t) >= f(x) + armijo * <grad, x_t - x>`.
/// Returns `None` when no step up to 60 halvings satisfies the condition.
pub(crate) fn armijo_ascent<F, P>(
    x: &[f64],
    fx: f64,
    grad: &[f64],
    dir: &[f64],
    initial: f64,
    armijo: f64,
    mut project: P,
    mut f: F,
) -> Result<Option<Step>>
where
    F: FnMut(&[f64]) -> Result<f64>,
    P: FnMut(&mut [f64]),
{
    let mut t = initial;
    let mut evaluations = 0;
    for _ in 0..60 {
        let mut cand: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        project(&mut cand);
        let predicted: f64 = cand.iter().zip(x).zip(grad).map(|((c, a), g)| g * (c - a)).sum();
        let value = f(&cand)?;
        evaluations += 1;
        if value >= fx + armijo * predicted && value.is_finite() {
            return Ok(Some(Step { point: cand, evaluations }));
        }
        t *= 0.5;
    }
    Ok(None)
}

struct StartOutcome {
    log_powers: Vec<f64>,
    value: f64,
    evaluations: u64,
    converged: bool,
}

fn ascend(
    topo: &Topology,
    params: &SystemParams,
    spec: &FairnessSpec,
    cfg: &GradientConfig,
    start: Vec<f64>,
) -> Result<StartOutcome> {
    let (lo, hi) = (params.p_min.ln(), params.p_max.ln());
    let project = |u: &mut [f64]| u.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    let mut u = start;
    project(&mut u);
    let (mut value, mut grad) = objective_and_gradient(topo, &u, params, spec)?;
    let mut evaluations = 1;
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let step = armijo_ascent(&u, value, &grad, &grad, cfg.initial_step, cfg.armijo, project, |c| {
            crate::net_model::fairness_of(topo, &exp_all(c), params, spec)
        })?;
        let Some(step) = step else {
            converged = true;
            break;
        };
        evaluations += step.evaluations;
        let moved = step.point.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        u = step.point;
        let (v, g) = objective_and_gradient(topo, &u, params, spec)?;
        evaluations += 1;
        value = v;
        grad = g;
        if moved <= cfg.step_tol {
            converged = true;
            break;
        }
    }
    // Scaling every power up raises every SINR, so an optimum has some UE at
    // p_max. Apply that shift explicitly; it is the slowest direction for the
    // ascent because noise is tiny relative to interference.
    let top = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top < hi {
        let shifted: Vec<f64> = u.iter().map(|v| (v + hi - top).min(hi)).collect();
        let v = crate::net_model::fairness_of(topo, &exp_all(&shifted), params, spec)?;
        evaluations += 1;
        if v >= value {
            u = shifted;
            value = v;
        }
    }
    Ok(StartOutcome { log_powers: u, value, evaluations, converged })
}

fn exp_all(u: &[f64]) -> Vec<f64> {
    u.iter().map(|v| v.exp()).collect()
}

/// Multi-start projected gradient ascent with the default configuration.
pub fn solve_gradient(
    topo: &Topology,
    params: &SystemParams,
    spec: &FairnessSpec,
    starts: usize,
    seed: u64,
) -> Result<SolveResult> {
    let cfg = GradientConfig { starts, ..Default::default() };
    solve_gradient_with(topo, params, spec, &cfg, seed, &[])
}

/// Multi-start projected gradient ascent.
///
/// Start order: all-`p_min`, all-`p_max`, each UE alone at `p_max` with the
/// rest at `p_min` (skipped for a single UE), `cfg.starts` uniform log-power
/// draws from `seed`, then `extra_starts` (powers in watts). The best final
/// fairness wins; ties go to the earlier start.
pub fn solve_gradient_with(
    topo: &Topology,
    params: &SystemParams,
    spec: &FairnessSpec,
    cfg: &GradientConfig,
    seed: u64,
    extra_starts: &[Vec<f64>],
) -> Result<SolveResult> {
    check_instance(topo, params)?;
    if cfg.starts < 1 {
        return Err(invalid("gradient solver needs at least one random start"));
    }
    let n = topo.n_ue();
    let (lo, hi) = (params.p_min.ln(), params.p_max.ln());
    let mut rng = seed::rng(seed, seed::SOLVER, 0);
    let mut starts = vec![vec![lo; n], vec![hi; n]];
    if n > 1 {
        for i in 0..n {
            let mut s = vec![lo; n];
            s[i] = hi;
            starts.push(s);
        }
    }
    for _ in 0..cfg.starts {
        starts.push((0..n).map(|_| rng.gen_range(lo..=hi)).collect());
    }
    for s in extra_starts {
        if s.len() != n {
            return Err(invalid("extra start has the wrong length"));
        }
        starts.push(s.iter().map(|p| p.ln()).collect());
    }
    let outcomes = par::map(&starts, |s| ascend(topo, params, spec, cfg, s.clone()));
    let mut best: Option<StartOutcome> = None;
    let mut evaluations = 0;
    for o in outcomes {
        let o = o?;
        evaluations += o.evaluations;
        if best.as_ref().map_or(true, |b| o.value > b.value) {
            best = Some(o);
        }
    }
    let best = best.expect("at least two starts");
    let powers = PowerVector::clamped(&exp_all(&best.log_powers), params);
    let fairness = crate::net_model::fairness_of(topo, powers.as_slice(), params, spec)?;
    Ok(SolveResult {
        powers,
        fairness,
        solver_tag: SolverTag::MultistartGradient,
        evaluations,
        converged: best.converged,
    })
}

/// Fairness over the `levels x levels` log grid of a two-UE instance, rows
/// `[p1, p2, F]` with `p1` varying slowest.
pub fn fairness_surface(
    topo: &Topology,
    params: &SystemParams,
    spec: &FairnessSpec,
    levels: usize,
) -> Result<Vec<[f64; 3]>> {
    check_instance(topo, params)?;
    if topo.n_ue() != 2 {
        return Err(invalid("a fairness surface needs exactly two UEs"));
    }
    if levels < 2 {
        return Err(invalid("grid needs at least 2 levels per UE"));
    }
    let grid = log_grid(levels, params);
    let rows = par::map_range(levels * levels, |k| {
        let p = [grid[k / levels], grid[k % levels]];
        alpha_fairness(&rates_raw(topo, &p, params), spec).map(|f| [p[0], p[1], f])
    });
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_model::compute_rates;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn two_ue() -> (Topology, SystemParams) {
        let topo = Topology {
            bs: vec![[0.0, 0.0]],
            ue: vec![[1.0, 0.0], [2.0, 0.0]],
            gains: vec![vec![0.8], vec![0.4]],
            assoc: vec![0, 0],
        };
        let params = SystemParams { noise_power: 0.1, p_min: 0.1, p_max: 10.0, ..Default::default() };
        (topo, params)
    }

    fn random_instance(rng: &mut impl Rng, n: usize, b: usize) -> Topology {
        Topology::sample(rng, n, b, &SystemParams::default()).unwrap()
    }

    #[test]
    fn surface_argmax_matches_grid_solver() {
        let (t, params) = two_ue();
        for alpha in [0.1, 0.5, 0.9] {
            let spec = FairnessSpec::new(alpha).unwrap();
            let rows = fairness_surface(&t, &params, &spec, 24).unwrap();
            assert_eq!(rows.len(), 24 * 24);
            let mut best = rows[0];
            for r in &rows {
                if r[2] > best[2] {
                    best = *r;
                }
            }
            let g = solve_grid(&t, &params, &spec, 24).unwrap();
            assert_eq!(g.powers.as_slice(), &best[..2]);
        }
        let three = Topology { gains: vec![vec![1.0]; 3], assoc: vec![0; 3], ue: vec![[1.0, 0.0]; 3], ..t };
        assert!(fairness_surface(&three, &params, &FairnessSpec::new(0.5).unwrap(), 4).is_err());
    }

    #[test]
    fn grid_endpoints_exact() {
        let g = log_grid(5, &SystemParams::default());
        assert_eq!(g[0], 10.0);
        assert_eq!(g[4], 1000.0);
        assert_relative_eq!(g[2], 100.0, max_relative = 1e-12);
    }

    #[test]
    fn single_ue_goes_to_p_max() {
        let params = SystemParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = random_instance(&mut rng, 1, 1);
        for alpha in [0.0, 0.3, 0.9] {
            let spec = FairnessSpec::new(alpha).unwrap();
            let g = solve_grid(&t, &params, &spec, 16).unwrap();
            assert_eq!(g.powers.as_slice(), &[1000.0]);
        }
        let spec = FairnessSpec::new(0.5).unwrap();
        let r = solve_gradient(&t, &params, &spec, 4, 0).unwrap();
        assert_relative_eq!(r.powers.as_slice()[0], 1000.0, max_relative = 1e-6);
    }

    #[test]
    fn decoupled_pairs_both_max() {
        let t = Topology {
            bs: vec![[0.0, 0.0], [50.0, 0.0]],
            ue: vec![[1.0, 0.0], [51.0, 0.0]],
            gains: vec![vec![1e-3, 0.0], vec![0.0, 1e-3]],
            assoc: vec![0, 1],
        };
        let params = SystemParams::default();
        let r = solve_grid(&t, &params, &FairnessSpec::new(0.5).unwrap(), 12).unwrap();
        assert_eq!(r.powers.as_slice(), &[1000.0, 1000.0]);
    }

    #[test]
    fn grid_budget_is_enforced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let t = random_instance(&mut rng, 8, 2);
        let err = solve_grid(&t, &SystemParams::default(), &FairnessSpec::new(0.1).unwrap(), 8);
        assert!(matches!(err, Err(Error::Budget(_))));
    }

    #[test]
    fn result_fairness_matches_net_model() {
        let (t, params) = two_ue();
        let spec = FairnessSpec::new(0.3).unwrap();
        for r in [solve_grid(&t, &params, &spec, 20).unwrap(), solve_gradient(&t, &params, &spec, 3, 9).unwrap()] {
            let f = alpha_fairness(&compute_rates(&t, &r.powers, &params), &spec).unwrap();
            assert!((f - r.fairness).abs() <= 1e-9);
        }
    }

    #[test]
    fn gradient_matches_grid_on_two_ue_example() {
        let (t, params) = two_ue();
        let spec = FairnessSpec::new(0.9).unwrap();
        let grid = solve_grid(&t, &params, &spec, 64).unwrap();
        let grad = solve_gradient(&t, &params, &spec, 16, 5).unwrap();
        assert!(grad.fairness >= grid.fairness - 1e-3, "{} vs {}", grad.fairness, grid.fairness);
    }

    #[test]
    fn gradient_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t = random_instance(&mut rng, 3, 2);
        let spec = FairnessSpec::new(0.4).unwrap();
        let a = solve_gradient(&t, &SystemParams::default(), &spec, 6, 77).unwrap();
        let b = solve_gradient(&t, &SystemParams::default(), &spec, 6, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_starts_rejected() {
        let (t, params) = two_ue();
        assert!(solve_gradient(&t, &params, &FairnessSpec::new(0.1).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn nested_refinement_never_decreases_grid_optimum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let t = random_instance(&mut rng, 3, 2);
            for alpha in [0.1, 0.5, 0.9] {
                let spec = FairnessSpec::new(alpha).unwrap();
                let mut prev = f64::NEG_INFINITY;
                // levels 3, 5, 9, 17: each grid contains the previous one
                for levels in [3, 5, 9, 17] {
                    let f = solve_grid(&t, &SystemParams::default(), &spec, levels).unwrap().fairness;
                    assert!(f >= prev - 1e-12);
                    prev = f;
                }
            }
        }
    }
}
