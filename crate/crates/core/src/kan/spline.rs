//! Uniform-knot B-splines and the learnable activation
//! `phi(x) = omega * (silu(x) + sum_i c_i B_i(x))`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const MAX_ORDER: usize = 15;

/// Uniform knot grid over `[lo, hi]` with `intervals` cells, padded by
/// `order` knots on each side. Carries `intervals + order` basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "GridRepr", into = "GridRepr")]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    lo: f64,
    hi: f64,
    intervals: usize,
    order: usize,
}

impl From<GridRepr> for Grid {
    fn from(r: GridRepr) -> Self {
        let mut g = Self { lo: r.lo, hi: r.hi, intervals: r.intervals.max(1), order: r.order.min(MAX_ORDER), knots: Vec::new() };
        g.build_knots();
        g
    }
}

impl From<Grid> for GridRepr {
    fn from(g: Grid) -> Self {
        Self { lo: g.lo, hi: g.hi, intervals: g.intervals, order: g.order }
    }
}

impl Grid {
    pub fn uniform(lo: f64, hi: f64, intervals: usize, order: usize) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(invalid(format!("grid domain [{lo}, {hi}] is empty")));
        }
        if intervals == 0 {
            return Err(invalid("grid needs at least one interval"));
        }
        if order > MAX_ORDER {
            return Err(invalid(format!("spline order {order} exceeds {MAX_ORDER}")));
        }
        let mut g = Self { lo, hi, intervals, order, knots: Vec::new() };
        g.build_knots();
        Ok(g)
    }

    fn build_knots(&mut self) {
        let h = self.step();
        let (k, n) = (self.order as isize, self.intervals as isize);
        self.knots = (-k..=n + k).map(|j| self.lo + j as f64 * h).collect();
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn basis_count(&self) -> usize {
        self.intervals + self.order
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Index of the knot span holding `x` (already clamped), in
    /// `[order, intervals + order - 1]`.
    fn span(&self, x: f64) -> usize {
        let cell = ((x - self.lo) / self.step()).floor();
        let cell = if cell < 0.0 { 0 } else { (cell as usize).min(self.intervals - 1) };
        cell + self.order
    }

    /// Nonzero basis values at `x`.
    ///
    /// Returns the index of the first nonzero basis function and writes the
    /// `order + 1` values into `out`. `x` is clamped to `[lo, hi]`.
    pub fn local_basis(&self, x: f64, out: &mut [f64]) -> usize {
        let x = self.clamp(x);
        let s = self.span(x);
        basis_funs(&self.knots, s, x, self.order, out);
        s - self.order
    }

    /// Nonzero basis values and their derivatives with respect to `x`.
    /// Derivatives are zero when `x` lies outside `[lo, hi]` (clamped region).
    pub fn local_basis_deriv(&self, x: f64, values: &mut [f64], derivs: &mut [f64]) -> usize {
        let inside = x >= self.lo && x <= self.hi;
        let xc = self.clamp(x);
        let s = self.span(xc);
        let k = self.order;
        basis_funs(&self.knots, s, xc, k, values);
        if k == 0 || !inside {
            derivs[..=k].iter_mut().for_each(|d| *d = 0.0);
            return s - k;
        }
        let mut lower = [0.0; 16];
        basis_funs(&self.knots, s, xc, k - 1, &mut lower[..k]);
        // B'_{i,k} = k/(t_{i+k} - t_i) B_{i,k-1} - k/(t_{i+k+1} - t_{i+1}) B_{i+1,k-1}
        let t = &self.knots;
        let first = s - k;
        for m in 0..=k {
            let i = first + m;
            let left = if m >= 1 { lower[m - 1] * k as f64 / (t[i + k] - t[i]) } else { 0.0 };
            let right = if m < k { lower[m] * k as f64 / (t[i + k + 1] - t[i + 1]) } else { 0.0 };
            derivs[m] = left - right;
        }
        first
    }
}

/// Cox-de Boor triangle for the `degree + 1` basis functions nonzero on
/// span `s`, written to `out[..=degree]`.
fn basis_funs(t: &[f64], s: usize, x: f64, degree: usize, out: &mut [f64]) {
    let mut left = [0.0; 16];
    let mut right = [0.0; 16];
    out[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - t[s + 1 - j];
        right[j] = t[s + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// All `intervals + order` basis values at `x` (clamped into the domain).
pub fn bspline_basis(x: f64, grid: &Grid) -> Vec<f64> {
    let mut local = vec![0.0; grid.order + 1];
    let first = grid.local_basis(x, &mut local);
    let mut all = vec![0.0; grid.basis_count()];
    all[first..first + local.len()].copy_from_slice(&local);
    all
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// One learnable edge function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineActivation {
    pub omega: f64,
    pub coeffs: Vec<f64>,
    pub grid: Grid,
}

impl SplineActivation {
    pub fn new(omega: f64, coeffs: Vec<f64>, grid: Grid) -> Result<Self> {
        if coeffs.len() != grid.basis_count() {
            return Err(invalid(format!(
                "expected {} coefficients, got {}",
                grid.basis_count(),
                coeffs.len()
            )));
        }
        Ok(Self { omega, coeffs, grid })
    }

    /// Spline part only: `sum_i c_i B_i(x)` with `x` clamped to the grid domain.
    pub fn spline(&self, x: f64) -> f64 {
        let mut local = [0.0; 16];
        let k = self.grid.order;
        let first = self.grid.local_basis(x, &mut local[..=k]);
        local[..=k].iter().zip(&self.coeffs[first..]).map(|(b, c)| b * c).sum()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.omega * (silu(x) + self.spline(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Textbook recursive Cox-de Boor over the full knot vector with
    /// half-open support intervals.
    fn naive(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        if t[i + p] > t[i] {
            v += (x - t[i]) / (t[i + p] - t[i]) * naive(t, i, p - 1, x);
        }
        if t[i + p + 1] > t[i + 1] {
            v += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * naive(t, i + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn cubic_basis_matches_naive_recursion() {
        let g = Grid::uniform(-1.0, 1.0, 5, 3).unwrap();
        for &x in &[0.0, -0.95, -0.2, 0.33, 0.7, 0.999] {
            let fast = bspline_basis(x, &g);
            for (i, &v) in fast.iter().enumerate() {
                assert_relative_eq!(v, naive(g.knots(), i, 3, x), epsilon = 1e-14);
            }
        }
        // x = 0 sits at an interior point of the third cell
        let at0 = bspline_basis(0.0, &g);
        assert_relative_eq!(at0.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn order_zero_is_indicator() {
        let g = Grid::uniform(0.0, 5.0, 5, 0).unwrap();
        let b = bspline_basis(2.5, &g);
        assert_eq!(b, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        // right end belongs to the last cell
        assert_eq!(bspline_basis(5.0, &g), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn right_endpoint_is_left_limit() {
        let g = Grid::uniform(-1.0, 1.0, 5, 3).unwrap();
        let at = bspline_basis(1.0, &g);
        let near = bspline_basis(1.0 - 1e-12, &g);
        for (a, b) in at.iter().zip(&near) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
        assert_eq!(bspline_basis(3.0, &g), at);
    }

    #[test]
    fn basis_derivative_matches_finite_difference() {
        let g = Grid::uniform(-1.0, 1.0, 5, 3).unwrap();
        let mut v = [0.0; 4];
        let mut d = [0.0; 4];
        for &x in &[-0.77, -0.1, 0.25, 0.61] {
            let first = g.local_basis_deriv(x, &mut v, &mut d);
            let h = 1e-6;
            let hi = bspline_basis(x + h, &g);
            let lo = bspline_basis(x - h, &g);
            for m in 0..4 {
                let fd = (hi[first + m] - lo[first + m]) / (2.0 * h);
                assert_relative_eq!(d[m], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn activation_examples() {
        let g = Grid::uniform(-1.0, 1.0, 5, 3).unwrap();
        let zero = SplineActivation::new(1.0, vec![0.0; 8], g.clone()).unwrap();
        assert_eq!(zero.eval(0.0), 0.0);
        let twice = SplineActivation::new(2.0, vec![0.0; 8], g.clone()).unwrap();
        assert_relative_eq!(twice.eval(40.0), 80.0, max_relative = 1e-12);
        assert!(SplineActivation::new(1.0, vec![0.0; 7], g).is_err());
    }

    /// Solves for coefficients whose spline interpolates `-silu` at the grid
    /// knots and Greville-adjacent points, then checks the activation vanishes
    /// at the knots.
    #[test]
    fn spline_can_cancel_silu_at_knots() {
        let g = Grid::uniform(-1.0, 1.0, 5, 3).unwrap();
        let nb = g.basis_count();
        // 6 knots inside [lo, hi] plus 2 extra points gives a square system.
        let mut pts: Vec<f64> = (0..=5).map(|j| -1.0 + 0.4 * j as f64).collect();
        pts.push(-0.9);
        pts.push(0.9);
        let a: Vec<Vec<f64>> = pts.iter().map(|&x| bspline_basis(x, &g)).collect();
        let b: Vec<f64> = pts.iter().map(|&x| -silu(x)).collect();
        let c = solve_dense(a, b);
        assert_eq!(c.len(), nb);
        let act = SplineActivation::new(1.0, c, g).unwrap();
        for j in 0..=5 {
            let x = -1.0 + 0.4 * j as f64;
            assert!(act.eval(x).abs() < 1e-10, "x = {x}: {}", act.eval(x));
        }
    }

    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in -1.0f64..=1.0, intervals in 1usize..12, order in 0usize..5) {
            let g = Grid::uniform(-1.0, 1.0, intervals, order).unwrap();
            let b = bspline_basis(x, &g);
            let s: f64 = b.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(b.iter().all(|&v| v >= -1e-15));
        }
    }
}
