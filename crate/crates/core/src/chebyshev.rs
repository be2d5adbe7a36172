//! Chebyshev–Lobatto collocation and fitting of linear ODEs with polynomial
//! coefficients to sampled functions.
//!
//! A family `f_1..f_r` sampled on the grid is annihilated by
//! `L = Σ_{j≤n} a_j(h) ∂^j` with `a_j` polynomials of degree `≤ m` when the
//! collocation matrix with entries `u^l f_i^{(j)}(h_k)` (rows `(i, k)`,
//! columns `(j, l)`) has a null vector. For `r ≤ n` and `m` large enough
//! this is the Wronskian operator; the fit takes the right singular vector
//! of the smallest singular value, with derivatives taken in the reference
//! coordinate `u ∈ [−1, 1]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::C64;

/// Amplification of `D^n` above which differentiation is refused.
pub const MAX_AMPLIFICATION: f64 = 1e12;

/// Chebyshev–Lobatto points on `[a, b]` with the spectral differentiation
/// matrix.
#[derive(Debug, Clone)]
pub struct ChebGrid {
    pub a: f64,
    pub b: f64,
    /// `h_k = (a + b)/2 + (b − a)/2 · cos(πk/(N − 1))`, decreasing in `k`.
    pub nodes: Vec<f64>,
    diff: DMatrix<f64>,
}

impl ChebGrid {
    pub fn new(a: f64, b: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidInput("a Chebyshev grid needs at least 2 points".into()));
        }
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput(format!("invalid interval [{a}, {b}]")));
        }
        let n = n_points - 1;
        let x: Vec<f64> = (0..=n).map(|k| (std::f64::consts::PI * k as f64 / n as f64).cos()).collect();
        let c = |k: usize| if k == 0 || k == n { 2.0 } else { 1.0 } * if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut d = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..=n {
            for j in 0..=n {
                if i != j {
                    d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
                }
            }
        }
        // negative-sum trick for the diagonal
        for i in 0..=n {
            let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
            d[(i, i)] = -s;
        }
        let half = 0.5 * (b - a);
        let nodes = x.iter().map(|&u| 0.5 * (a + b) + half * u).collect();
        Ok(Self { a, b, nodes, diff: d / half })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Position of `h` in the reference interval `[−1, 1]`.
    pub fn reference(&self, h: f64) -> f64 {
        (2.0 * h - self.a - self.b) / (self.b - self.a)
    }

    pub fn diff_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    /// Infinity norm of `D^order`.
    pub fn amplification(&self, order: usize) -> f64 {
        let mut m = DMatrix::<f64>::identity(self.len(), self.len());
        for _ in 0..order {
            m = &self.diff * m;
        }
        m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Spectral derivative of grid values.
    pub fn derivative(&self, f: &[C64]) -> Vec<C64> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| f[j] * self.diff[(i, j)]).sum()).collect()
    }

    /// `[f, f′, …, f^{(order)}]` on the grid.
    pub fn derivatives(&self, f: &[C64], order: usize) -> Vec<Vec<C64>> {
        let mut out = vec![f.to_vec()];
        for _ in 0..order {
            let next = self.derivative(out.last().unwrap());
            out.push(next);
        }
        out
    }
}

/// A fitted operator `Σ_j a_j(h) ∂^j`, `a_j(h) = Σ_l coefficients[j][l] u^l`
/// with `u` the reference coordinate of `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOde {
    pub order: usize,
    pub coeff_degree: usize,
    pub interval: [f64; 2],
    pub coefficients: Vec<Vec<C64>>,
    /// Smallest over largest singular value of the collocation matrix.
    pub residual: f64,
    pub singular_values: Vec<f64>,
}

impl LinearOde {
    /// `a_0(h), …, a_n(h)`.
    pub fn coefficients_at(&self, h: f64) -> Vec<C64> {
        let u = (2.0 * h - self.interval[0] - self.interval[1]) / (self.interval[1] - self.interval[0]);
        self.coefficients
            .iter()
            .map(|c| c.iter().rev().fold(C64::new(0.0, 0.0), |acc, v| acc * u + v))
            .collect()
    }

    /// Pointwise `L f` on the grid.
    pub fn apply(&self, grid: &ChebGrid, f: &[C64]) -> Vec<C64> {
        let ders = grid.derivatives(f, self.order);
        grid.nodes
            .iter()
            .enumerate()
            .map(|(k, &h)| self.coefficients_at(h).iter().zip(&ders).map(|(a, d)| a * d[k]).sum())
            .collect()
    }

    /// `max_k |L f(h_k)| / max_k Σ_j |a_j(h_k) f^{(j)}(h_k)|`: zero when `L`
    /// annihilates `f`, of order one for an unrelated function.
    pub fn annihilation_residual(&self, grid: &ChebGrid, f: &[C64]) -> f64 {
        let ders = grid.derivatives(f, self.order);
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (k, &h) in grid.nodes.iter().enumerate() {
            let a = self.coefficients_at(h);
            let terms: Vec<C64> = a.iter().zip(&ders).map(|(a, d)| a * d[k]).collect();
            num = num.max(terms.iter().sum::<C64>().norm());
            den = den.max(terms.iter().map(|t| t.norm()).sum());
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

/// Fits `L` of order `order` with coefficient polynomials of degree
/// `coeff_degree` annihilating every sample set in `samples`.
pub fn fit_linear_ode(grid: &ChebGrid, samples: &[Vec<C64>], order: usize, coeff_degree: usize) -> Result<LinearOde> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no sample sets".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != grid.len()) {
        return Err(Error::InvalidInput(format!("sample set of length {} on a grid of {}", s.len(), grid.len())));
    }
    if grid.len() < 4 * (order + 1) {
        return Err(Error::InvalidInput(format!("order {order} needs at least {} grid points", 4 * (order + 1))));
    }
    let cols = (order + 1) * (coeff_degree + 1);
    let rows = samples.len() * grid.len();
    if rows < cols {
        return Err(Error::InvalidInput(format!("{rows} collocation rows cannot determine {cols} unknowns")));
    }
    let amplification = grid.amplification(order);
    if amplification > MAX_AMPLIFICATION {
        return Err(Error::IllConditioned { amplification });
    }

    let ders: Vec<Vec<Vec<C64>>> = samples.iter().map(|f| grid.derivatives(f, order)).collect();
    let u: Vec<f64> = grid.nodes.iter().map(|&h| grid.reference(h)).collect();
    let mut m = DMatrix::<C64>::zeros(rows, cols);
    for (i, d) in ders.iter().enumerate() {
        for k in 0..grid.len() {
            for j in 0..=order {
                for l in 0..=coeff_degree {
                    m[(i * grid.len() + k, j * (coeff_degree + 1) + l)] = d[j][k] * u[k].powi(l as i32);
                }
            }
        }
    }
    // derivatives in the reference coordinate u keep the columns
    // dimensionless without inflating columns that vanish identically
    let half = 0.5 * (grid.b - grid.a);
    let scales: Vec<f64> = (0..cols).map(|c| half.powi(-((c / (coeff_degree + 1)) as i32))).collect();
    for (c, s) in scales.iter().enumerate() {
        m.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = m.svd(false, true);
    let sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let (imin, smin) = sv.iter().cloned().enumerate().fold((0, f64::INFINITY), |a, (i, s)| if s < a.1 { (i, s) } else { a });
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut coef: Vec<C64> = (0..cols).map(|c| v_t[(imin, c)].conj() / scales[c]).collect();
    // fix the phase and size: the largest entry becomes 1
    let big = coef.iter().cloned().fold(C64::new(0.0, 0.0), |a, z| if z.norm() > a.norm() { z } else { a });
    for z in coef.iter_mut() {
        *z /= big;
    }
    let mut sorted = sv.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(LinearOde {
        order,
        coeff_degree,
        interval: [grid.a, grid.b],
        coefficients: coef.chunks(coeff_degree + 1).map(|c| c.to_vec()).collect(),
        residual: if smax > 0.0 { smin / smax } else { 0.0 },
        singular_values: sorted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &ChebGrid, f: impl Fn(f64) -> f64) -> Vec<C64> {
        grid.nodes.iter().map(|&h| C64::new(f(h), 0.0)).collect()
    }

    #[test]
    fn differentiates_polynomials_exactly() {
        let g = ChebGrid::new(-1.0, 3.0, 12).unwrap();
        let f = sample(&g, |h| h.powi(5) - 2.0 * h);
        let d = g.derivative(&f);
        for (k, &h) in g.nodes.iter().enumerate() {
            assert!((d[k].re - (5.0 * h.powi(4) - 2.0)).abs() < 1e-10 * 405.0);
        }
    }

    #[test]
    fn exponential_is_first_order() {
        let g = ChebGrid::new(-1.0, 1.0, 16).unwrap();
        let ode = fit_linear_ode(&g, &[sample(&g, f64::exp)], 1, 0).unwrap();
        let (a0, a1) = (ode.coefficients[0][0], ode.coefficients[1][0]);
        assert!((a0 / a1 + 1.0).norm() < 1e-8);
        assert!(ode.residual < 1e-12);
    }

    #[test]
    fn quadratics_satisfy_third_order() {
        let g = ChebGrid::new(-1.0, 1.0, 16).unwrap();
        let s = [sample(&g, |_| 1.0), sample(&g, |h| h), sample(&g, |h| h * h)];
        let ode = fit_linear_ode(&g, &s, 3, 0).unwrap();
        assert!(ode.residual <= 1e-10);
        assert!(ode.coefficients[0][0].norm() < 1e-10);
        assert!((ode.coefficients[3][0].norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn residual_drops_at_true_order() {
        let g = ChebGrid::new(-1.0, 1.0, 20).unwrap();
        let f = [sample(&g, |h| h.exp() + (2.0 * h).exp()), sample(&g, |h| (2.0 * h).exp())];
        let r: Vec<f64> = (0..=3).map(|n| fit_linear_ode(&g, &f, n, 0).unwrap().residual).collect();
        assert!(r[0] > 1e-3 && r[1] > 1e-3);
        assert!(r[2] < 1e-10 && r[3] < 1e-10);
        assert!(r.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-13));
    }

    #[test]
    fn polynomial_coefficients() {
        // Airy: f'' − h f = 0 has a first-degree coefficient; sample its
        // power series solutions
        let g = ChebGrid::new(-1.0, 1.0, 24).unwrap();
        let airy = |c0: f64, c1: f64| {
            move |h: f64| {
                let mut coef = vec![c0, c1, 0.0];
                for k in 3..60 {
                    coef.push(coef[k - 3] / (k as f64 * (k as f64 - 1.0)));
                }
                coef.iter().rev().fold(0.0, |acc, c| acc * h + c)
            }
        };
        let s = [sample(&g, airy(1.0, 0.0)), sample(&g, airy(0.0, 1.0))];
        let ode = fit_linear_ode(&g, &s, 2, 1).unwrap();
        assert!(ode.residual < 1e-10);
        let a = ode.coefficients_at(0.5);
        assert!((a[0] / a[2] + 0.5).norm() < 1e-8);
        assert!((a[1] / a[2]).norm() < 1e-8);
    }

    #[test]
    fn refuses_ill_conditioned_differentiation() {
        let g = ChebGrid::new(0.0, 1e-3, 40).unwrap();
        let s = [sample(&g, f64::exp)];
        assert!(matches!(fit_linear_ode(&g, &s, 3, 0), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn too_few_points() {
        let g = ChebGrid::new(-1.0, 1.0, 10).unwrap();
        assert!(fit_linear_ode(&g, &[sample(&g, f64::exp)], 3, 0).is_err());
    }
}
