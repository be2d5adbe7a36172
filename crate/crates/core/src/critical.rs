//! Critical points and critical values of H by multistart Newton on ∇H = 0.
//!
//! The search only covers a finite seed box; critical points far outside it
//! can be missed.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::poly::{BivariatePoly, Fibration, Point, C64};

/// Lattice of complex seeds: `resolution²` real grid points in
/// `[-half_width, half_width]²`, each rotated by `phases` phase factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedGrid {
    pub half_width: f64,
    pub resolution: usize,
    pub phases: usize,
}

impl Default for SeedGrid {
    fn default() -> Self {
        Self { half_width: 5.0, resolution: 21, phases: 4 }
    }
}

impl SeedGrid {
    pub fn seeds(&self) -> Vec<Point> {
        let n = self.resolution.max(2);
        let w = self.half_width;
        // small fixed offsets keep seeds off symmetry lines where the
        // Hessian of common examples is singular
        let (ox, oy) = (0.0137 * w / 5.0, 0.0071 * w / 5.0);
        let mut out = Vec::with_capacity(n * n * self.phases.max(1));
        for k in 0..self.phases.max(1) {
            let phase = C64::from_polar(1.0, std::f64::consts::FRAC_PI_4 * k as f64);
            for ix in 0..n {
                for iy in 0..n {
                    let u = -w + 2.0 * w * ix as f64 / (n - 1) as f64 + ox;
                    let v = -w + 2.0 * w * iy as f64 / (n - 1) as f64 + oy;
                    out.push(Point::new(phase * u, phase.conj() * v));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalOptions {
    pub grid: SeedGrid,
    pub tol_newton: f64,
    pub tol_dedup: f64,
    pub max_iter: usize,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        Self { grid: SeedGrid::default(), tol_newton: 1e-12, tol_dedup: 1e-8, max_iter: 100 }
    }
}

/// Critical points of H and the set Δ of critical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalData {
    pub points: Vec<Point>,
    pub values: Vec<C64>,
    /// `value_of_point[k]` indexes `values` for `points[k]`.
    pub value_of_point: Vec<usize>,
    /// Seeds whose Newton iteration did not converge.
    pub failed_seeds: usize,
}

impl CriticalData {
    /// Distance from `h` to the nearest critical value.
    pub fn clearance(&self, h: C64) -> f64 {
        self.values.iter().map(|v| (v - h).norm()).fold(f64::INFINITY, f64::min)
    }
}

/// Points closer than this are treated as the same critical point. Newton
/// converges only linearly onto degenerate points, so converged iterates
/// spread over a radius well above `tol_dedup`.
const POINT_MERGE: f64 = 1e-3;

fn hessian_matrix(fib: &Fibration, p: Point) -> Matrix2<C64> {
    let h = fib.hessian(p);
    Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1])
}

/// Newton step for ∇H = 0, falling back to a truncated pseudo-inverse when
/// the Hessian is numerically singular.
fn newton_step(fib: &Fibration, p: Point) -> Option<Point> {
    let (gx, gy) = fib.grad(p);
    let j = hessian_matrix(fib, p);
    let f = Vector2::new(gx, gy);
    let svd = j.svd(true, true);
    let smax = svd.singular_values[0].max(svd.singular_values[1]);
    if !(smax > 0.0) || !smax.is_finite() {
        return None;
    }
    let step = svd.solve(&f, smax * 1e-10).ok()?;
    Some(Point::new(p.x - step[0], p.y - step[1]))
}

fn grad_l1(fib: &Fibration, p: Point) -> f64 {
    let (gx, gy) = fib.grad(p);
    gx.norm() + gy.norm()
}

fn newton_from(fib: &Fibration, seed: Point, opts: &CriticalOptions) -> Option<Point> {
    let mut p = seed;
    for _ in 0..opts.max_iter {
        if grad_l1(fib, p) <= opts.tol_newton {
            return Some(p);
        }
        p = newton_step(fib, p)?;
        if !p.norm().is_finite() || p.norm() > 1e6 {
            return None;
        }
    }
    (grad_l1(fib, p) <= opts.tol_newton).then_some(p)
}

fn singular_ratio(m: &Matrix2<C64>) -> (f64, Vector2<C64>) {
    let svd = m.svd(false, true);
    let (s0, s1) = (svd.singular_values[0], svd.singular_values[1]);
    let vt = svd.v_t.expect("requested v_t");
    let (imin, smax, smin) = if s0 >= s1 { (1, s0, s1) } else { (0, s1, s0) };
    let kernel = Vector2::new(vt[(imin, 0)].conj(), vt[(imin, 1)].conj());
    (if smax > 0.0 { smin / smax } else { 0.0 }, kernel)
}

/// Detects a curve of critical points through `p`: restarting Newton a short
/// distance along the Hessian kernel lands back on `p` for an isolated point
/// but stays near the offset point when the critical set is a curve.
fn is_non_isolated(fib: &Fibration, p: Point, opts: &CriticalOptions) -> bool {
    let (ratio, kernel) = singular_ratio(&hessian_matrix(fib, p));
    if ratio > 1e-6 {
        return false;
    }
    let s = 1e-2;
    let probe = Point::new(p.x + kernel[0] * s, p.y + kernel[1] * s);
    match newton_from(fib, probe, opts) {
        Some(q) => q.dist(&p) > 0.5 * s,
        None => false,
    }
}

/// Finds critical points inside the seed box and deduplicates their values.
pub fn critical_data(h: &BivariatePoly, opts: &CriticalOptions, execution: Execution) -> Result<CriticalData> {
    if h.is_constant() {
        return Err(Error::InvalidInput("H is constant; critical set is all of C²".into()));
    }
    if !(opts.tol_newton > 0.0 && opts.tol_dedup > 0.0) {
        return Err(Error::InvalidInput("tolerances must be positive".into()));
    }
    let fib = Fibration::new(h.clone());
    let seeds = opts.grid.seeds();
    let converged = exec::map(execution, &seeds, |&s| newton_from(&fib, s, opts));
    let failed_seeds = converged.iter().filter(|c| c.is_none()).count();

    // merge in seed order; keep the member with the smallest gradient
    let mut reps: Vec<Point> = Vec::new();
    for p in converged.into_iter().flatten() {
        match reps.iter_mut().find(|r| r.dist(&p) <= POINT_MERGE.max(opts.tol_dedup)) {
            Some(r) => {
                if grad_l1(&fib, p) < grad_l1(&fib, *r) {
                    *r = p;
                }
            }
            None => reps.push(p),
        }
    }
    for &p in &reps {
        if is_non_isolated(&fib, p, opts) {
            return Err(Error::NonIsolatedCritical {
                x: format!("{:.6}", p.x),
                y: format!("{:.6}", p.y),
            });
        }
    }

    let mut values: Vec<C64> = Vec::new();
    for p in &reps {
        let v = fib.value(*p);
        if !values.iter().any(|w| (w - v).norm() <= opts.tol_dedup) {
            values.push(v);
        }
    }
    values.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let value_index = |v: C64| {
        values
            .iter()
            .position(|w| (w - v).norm() <= opts.tol_dedup)
            .expect("every representative value was inserted")
    };
    let mut indexed: Vec<(usize, Point)> = reps.iter().map(|&p| (value_index(fib.value(p)), p)).collect();
    indexed.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            let (pa, pb) = (a.1.to_array(), b.1.to_array());
            pa.iter()
                .zip(pb.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(CriticalData {
        points: indexed.iter().map(|e| e.1).collect(),
        value_of_point: indexed.iter().map(|e| e.0).collect(),
        values,
        failed_seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::elliptic_hamiltonian;

    fn small_grid() -> CriticalOptions {
        CriticalOptions { grid: SeedGrid { half_width: 3.0, resolution: 9, phases: 2 }, ..Default::default() }
    }

    #[test]
    fn elliptic_critical_values() {
        let cd = critical_data(&elliptic_hamiltonian(), &CriticalOptions::default(), Execution::Parallel).unwrap();
        assert_eq!(cd.values.len(), 2);
        assert!((cd.values[0] - 2.0).norm() < 1e-10);
        assert!((cd.values[1] + 2.0).norm() < 1e-10);
        assert_eq!(cd.points.len(), 2);
        assert!(cd.points[0].dist(&Point::real(1.0, 0.0)) < 1e-10);
        assert!(cd.points[1].dist(&Point::real(-1.0, 0.0)) < 1e-10);
        let fib = Fibration::new(elliptic_hamiltonian());
        for p in &cd.points {
            assert!(grad_l1(&fib, *p) <= 1e-12);
        }
    }

    #[test]
    fn quadratic_form_has_single_minimum() {
        let h = BivariatePoly::from_real(&[(2, 0, 1.0), (0, 2, 1.0)]);
        let cd = critical_data(&h, &small_grid(), Execution::Sequential).unwrap();
        assert_eq!(cd.points.len(), 1);
        assert!(cd.points[0].norm() < 1e-12);
        assert!(cd.values[0].norm() < 1e-12);
    }

    #[test]
    fn constant_is_rejected() {
        let h = BivariatePoly::constant(C64::new(1.0, 0.0));
        assert!(matches!(
            critical_data(&h, &small_grid(), Execution::Sequential),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn degenerate_isolated_point_is_accepted() {
        // x³ + y² has a cusp at the origin: Hessian rank one but isolated
        let h = BivariatePoly::from_real(&[(3, 0, 1.0), (0, 2, 1.0)]);
        let cd = critical_data(&h, &small_grid(), Execution::Sequential).unwrap();
        assert_eq!(cd.values.len(), 1);
        assert!(cd.values[0].norm() < 1e-8);
    }

    #[test]
    fn curve_of_critical_points_is_rejected() {
        // (x² + y² − 1)² is critical along the whole conic
        let q = BivariatePoly::from_real(&[(2, 0, 1.0), (0, 2, 1.0), (0, 0, -1.0)]);
        let h = &q * &q;
        assert!(matches!(
            critical_data(&h, &small_grid(), Execution::Sequential),
            Err(Error::NonIsolatedCritical { .. })
        ));
    }

    #[test]
    fn every_point_maps_to_a_value() {
        let h = BivariatePoly::from_real(&[(0, 2, 1.0), (4, 0, -1.0), (2, 0, 1.0)]);
        let cd = critical_data(&h, &CriticalOptions::default(), Execution::Parallel).unwrap();
        assert_eq!(cd.points.len(), 3);
        for (k, p) in cd.points.iter().enumerate() {
            assert!((h.eval(*p) - cd.values[cd.value_of_point[k]]).norm() <= 1e-8);
        }
    }
}
