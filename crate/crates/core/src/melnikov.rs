//! Poincaré return map of planar perturbations `ẋ = H_y + εP`,
//! `ẏ = −H_x + εQ` and extraction of the leading Melnikov coefficient.
//!
//! Along any trajectory `dH = ε(Q dx − P dy)`, so the displacement
//! `ΔH = P_ε(h) − h` on a transversal section is `ε ∮ ω` at first order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::ode::{refine_crossing, Dopri, OdeOptions};
use crate::poly::BivariatePoly;

/// Time limit for one return.
pub const DEFAULT_MAX_TIME: f64 = 1e3;
/// Tolerance on the section function at a refined crossing.
pub const SECTION_TOL: f64 = 1e-12;

/// Default ε-grid: geometric with ratio 1/2.
pub const DEFAULT_EPS_GRID: [f64; 5] = [1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5];

/// A ray `origin + s·direction`, `s > 0`, used as Poincaré section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub origin: [f64; 2],
    pub direction: [f64; 2],
    /// Largest `s` searched for the starting level.
    #[serde(default = "default_reach")]
    pub reach: f64,
}

fn default_reach() -> f64 {
    10.0
}

impl SectionSpec {
    pub fn new(origin: [f64; 2], direction: [f64; 2]) -> Self {
        Self { origin, direction, reach: default_reach() }
    }

    /// Vertical ray upwards through the center `(−1, 0)` of the elliptic ovals.
    pub fn elliptic() -> Self {
        Self::new([-1.0, 0.0], [0.0, 1.0])
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        [self.origin[0] + s * self.direction[0], self.origin[1] + s * self.direction[1]]
    }

    /// Signed distance-like function vanishing on the section line.
    pub fn side(&self, z: &[f64]) -> f64 {
        self.direction[0] * (z[1] - self.origin[1]) - self.direction[1] * (z[0] - self.origin[0])
    }

    fn along(&self, z: &[f64]) -> f64 {
        self.direction[0] * (z[0] - self.origin[0]) + self.direction[1] * (z[1] - self.origin[1])
    }

    /// First point on the ray with `H = h`, by bracketing on a uniform scan
    /// and bisection.
    pub fn start_point(&self, hp: &BivariatePoly, h: f64) -> Result<[f64; 2]> {
        let f = |s: f64| {
            let p = self.point(s);
            hp.eval_real(p[0], p[1]) - h
        };
        let n = 4000;
        let ds = self.reach / n as f64;
        let mut prev = f(0.0);
        if prev == 0.0 {
            return Ok(self.origin);
        }
        for k in 1..=n {
            let s = k as f64 * ds;
            let cur = f(s);
            if cur == 0.0 {
                return Ok(self.point(s));
            }
            if prev.signum() != cur.signum() {
                let (mut a, mut b, mut fa) = (s - ds, s, prev);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    let fm = f(m);
                    if fm.signum() == fa.signum() {
                        a = m;
                        fa = fm;
                    } else {
                        b = m;
                    }
                    if b - a <= 4.0 * f64::EPSILON * b.abs() {
                        break;
                    }
                }
                return Ok(self.point(0.5 * (a + b)));
            }
            prev = cur;
        }
        Err(Error::InvalidInput(format!("no point with H = {h} on the section ray within reach {}", self.reach)))
    }
}

/// Integrator settings for return maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnOptions {
    pub ode: OdeOptions,
    pub max_time: f64,
    /// Trajectories leaving this ball count as not returning.
    pub escape_radius: f64,
}

impl Default for ReturnOptions {
    fn default() -> Self {
        Self {
            ode: OdeOptions { rtol: 1e-12, atol: 1e-13, h_init: 1e-3, h_max: 0.05, max_steps: 5_000_000 },
            max_time: DEFAULT_MAX_TIME,
            escape_radius: 1e3,
        }
    }
}

/// Outcome of following a trajectory through `crossings` returns.
pub(crate) struct Return<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    /// Accepted steps `(t, state)`, starting at the initial state.
    pub trace: Vec<(f64, [f64; N])>,
}

/// Integrates `f` from `y0` (on the section, in the plane coordinates
/// `y[0], y[1]`) until the `crossings`-th return to the ray in the starting
/// direction.
pub(crate) fn integrate_returns<const N: usize, F>(
    f: F,
    y0: [f64; N],
    section: &SectionSpec,
    crossings: usize,
    opts: &ReturnOptions,
    keep_trace: bool,
) -> Result<Return<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let v0 = f(0.0, &y0);
    let d = section.direction;
    let dn = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let vn = (v0[0] * v0[0] + v0[1] * v0[1]).sqrt();
    let cross = d[0] * v0[1] - d[1] * v0[0];
    if vn == 0.0 || (cross / (dn * vn)).abs() < 1e-8 {
        return Err(Error::SectionTangency { cross: if vn == 0.0 { 0.0 } else { cross / (dn * vn) } });
    }
    let sigma = cross.signum();
    let mut ode = Dopri::new(&f, 0.0, y0, opts.ode);
    let mut trace = Vec::new();
    if keep_trace {
        trace.push((0.0, y0));
    }
    let mut seen = 0;
    loop {
        let (t_prev, y_prev) = (ode.t, ode.y);
        let g_prev = section.side(&y_prev);
        let step = ode.step(f64::INFINITY)?;
        if ode.t > opts.max_time || ode.y[..2].iter().map(|v| v * v).sum::<f64>().sqrt() > opts.escape_radius {
            return Err(Error::NoReturn { max_time: opts.max_time });
        }
        let g = section.side(&ode.y);
        if sigma * g_prev < 0.0 && sigma * g >= 0.0 && section.along(&ode.y) > 0.0 {
            seen += 1;
            if seen == crossings {
                let (t, y) = refine_crossing(&f, &|z: &[f64; N]| section.side(z), t_prev, &y_prev, step, SECTION_TOL);
                if keep_trace {
                    trace.push((t, y));
                }
                return Ok(Return { t, y, trace });
            }
        }
        if keep_trace {
            trace.push((ode.t, ode.y));
        }
    }
}

/// The planar perturbed system with its Hamiltonian partials cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarSystem {
    #[serde(rename = "H")]
    pub h: BivariatePoly,
    #[serde(rename = "P")]
    pub p: BivariatePoly,
    #[serde(rename = "Q")]
    pub q: BivariatePoly,
    #[serde(skip)]
    hx: BivariatePoly,
    #[serde(skip)]
    hy: BivariatePoly,
}

impl PlanarSystem {
    pub fn new(h: BivariatePoly, p: BivariatePoly, q: BivariatePoly) -> Result<Self> {
        for (name, poly) in [("H", &h), ("P", &p), ("Q", &q)] {
            if !poly.is_real() {
                return Err(Error::InvalidInput(format!("{name} must have real coefficients")));
            }
        }
        let (hx, hy) = h.partials();
        Ok(Self { h, p, q, hx, hy })
    }

    fn field(&self, eps: f64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + '_ {
        move |_t, z| {
            let (x, y) = (z[0], z[1]);
            [
                self.hy.eval_real(x, y) + eps * self.p.eval_real(x, y),
                -self.hx.eval_real(x, y) + eps * self.q.eval_real(x, y),
            ]
        }
    }
}

/// One evaluation of the displacement map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnSample {
    pub h: f64,
    pub eps: f64,
    pub delta_h: f64,
    pub crossings: usize,
    pub time: f64,
}

/// `P_ε^{crossings}(h) − h` on the given section.
pub fn poincare_return(
    sys: &PlanarSystem,
    h: f64,
    eps: f64,
    section: &SectionSpec,
    crossings: usize,
    opts: &ReturnOptions,
) -> Result<ReturnSample> {
    if crossings == 0 {
        return Err(Error::InvalidInput("crossings must be at least 1".into()));
    }
    let p0 = section.start_point(&sys.h, h)?;
    let r = integrate_returns(sys.field(eps), p0, section, crossings, opts, false)?;
    let delta_h = sys.h.eval_real(r.y[0], r.y[1]) - sys.h.eval_real(p0[0], p0[1]);
    Ok(ReturnSample { h, eps, delta_h, crossings, time: r.t })
}

/// Settings for [`melnikov_expansion`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionOptions {
    pub section: SectionSpec,
    pub returns: ReturnOptions,
    /// Highest ε-power in the fit.
    pub max_order: usize,
    /// Number of section crossings per sample; `2` gives the map of `γ·γ`.
    pub crossings: usize,
    pub execution: Execution,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self {
            section: SectionSpec::elliptic(),
            returns: ReturnOptions::default(),
            max_order: 3,
            crossings: 1,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelnikovExpansion {
    pub k: usize,
    pub h: Vec<f64>,
    /// `M^k(h)` estimates on the grid.
    #[serde(rename = "Mk")]
    pub mk: Vec<f64>,
    /// Root-mean-square residual of the ε-fit, maximal over the grid.
    pub residual: f64,
    /// `coefficients[h_index][j − 1]` is the fitted `c_j(h)`.
    pub coefficients: Vec<Vec<f64>>,
    /// Noise floor of each fitted order.
    pub noise_floor: Vec<f64>,
    pub samples: Vec<ReturnSample>,
}

/// Least-squares fit of `ΔH = Σ_{j=1}^{m} c_j ε^j`; returns the
/// coefficients and the RMS residual.
pub fn fit_eps_series(eps: &[f64], delta: &[f64], m: usize) -> Result<(Vec<f64>, f64)> {
    if eps.len() < m {
        return Err(Error::InvalidInput(format!("{} ε-values cannot fit {m} orders", eps.len())));
    }
    let scale = eps.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    let a = nalgebra::DMatrix::from_fn(eps.len(), m, |i, j| (eps[i] / scale).powi(j as i32 + 1));
    let rhs = nalgebra::DVector::from_column_slice(delta);
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&rhs, 1e-14).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let res = (&a * &sol - &rhs).norm() / (eps.len() as f64).sqrt();
    Ok(((0..m).map(|j| sol[j] / scale.powi(j as i32 + 1)).collect(), res))
}

/// Samples `ΔH` on `h_grid × eps_grid`, fits the ε-series per `h` and
/// returns the first order whose coefficient clears the noise floor
/// `10·tol/ε_min^j` somewhere on the grid.
pub fn melnikov_expansion(
    sys: &PlanarSystem,
    h_grid: &[f64],
    eps_grid: &[f64],
    opts: &ExpansionOptions,
) -> Result<MelnikovExpansion> {
    if eps_grid.len() < 5 {
        return Err(Error::InvalidInput("the ε-grid needs at least 5 values".into()));
    }
    if eps_grid.iter().any(|&e| e == 0.0 || !e.is_finite()) {
        return Err(Error::InvalidInput("ε-values must be finite and nonzero".into()));
    }
    let m = opts.max_order.min(eps_grid.len() - 1).max(1);
    let pairs: Vec<(f64, f64)> = h_grid.iter().flat_map(|&h| eps_grid.iter().map(move |&e| (h, e))).collect();
    let samples = exec::try_map(opts.execution, &pairs, |&(h, e)| {
        poincare_return(sys, h, e, &opts.section, opts.crossings, &opts.returns)
    })?;

    let tol = opts.returns.ode.rtol.max(opts.returns.ode.atol);
    let eps_min = eps_grid.iter().fold(f64::INFINITY, |a, e| a.min(e.abs()));
    let noise_floor: Vec<f64> = (1..=m).map(|j| 10.0 * tol / eps_min.powi(j as i32)).collect();

    let mut coefficients = Vec::with_capacity(h_grid.len());
    let mut residual = 0.0f64;
    for row in samples.chunks(eps_grid.len()) {
        let delta: Vec<f64> = row.iter().map(|s| s.delta_h).collect();
        let (c, r) = fit_eps_series(eps_grid, &delta, m)?;
        residual = residual.max(r);
        coefficients.push(c);
    }
    let k = (0..m)
        .find(|&j| coefficients.iter().any(|c| c[j].abs() > noise_floor[j]))
        .ok_or(Error::AllOrdersVanish)?;
    Ok(MelnikovExpansion {
        k: k + 1,
        h: h_grid.to_vec(),
        mk: coefficients.iter().map(|c| c[k]).collect(),
        residual,
        coefficients,
        noise_floor,
        samples,
    })
}

/// Observed order of `ΔH` in ε from two samples: `log(ΔH₁/ΔH₂)/log(ε₁/ε₂)`.
pub fn observed_slope(a: &ReturnSample, b: &ReturnSample) -> f64 {
    (a.delta_h.abs() / b.delta_h.abs()).ln() / (a.eps.abs() / b.eps.abs()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::elliptic_hamiltonian;

    fn zero() -> BivariatePoly {
        BivariatePoly::zero()
    }

    #[test]
    fn start_point_on_elliptic_ray() {
        let p = SectionSpec::elliptic().start_point(&elliptic_hamiltonian(), 0.0).unwrap();
        assert!((p[0] + 1.0).abs() < 1e-15);
        assert!((p[1] - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn unperturbed_return_conserves_h() {
        let sys = PlanarSystem::new(elliptic_hamiltonian(), zero(), zero()).unwrap();
        let r = poincare_return(&sys, 0.0, 0.0, &SectionSpec::elliptic(), 1, &ReturnOptions::default()).unwrap();
        assert!(r.delta_h.abs() < 1e-11, "{:e}", r.delta_h);
        assert!(r.time > 0.0);
    }

    #[test]
    fn tangent_section_is_rejected() {
        let sys = PlanarSystem::new(elliptic_hamiltonian(), zero(), zero()).unwrap();
        // the level H = 0 passes through the origin, where the flow is vertical
        let s = SectionSpec::new([0.0, 0.0], [0.0, 1.0]);
        let err = poincare_return(&sys, 0.0, 0.0, &s, 1, &ReturnOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SectionTangency { .. }));
    }

    #[test]
    fn escaping_orbit_reports_no_return() {
        // outside the separatrix loop trajectories run off to infinity
        let sys = PlanarSystem::new(elliptic_hamiltonian(), zero(), zero()).unwrap();
        let s = SectionSpec::new([-3.0, 0.0], [0.0, 1.0]);
        let err = poincare_return(&sys, 20.0, 0.0, &s, 1, &ReturnOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoReturn { .. }));
    }

    #[test]
    fn eps_fit_recovers_polynomial() {
        let eps = DEFAULT_EPS_GRID;
        let d: Vec<f64> = eps.iter().map(|e| 0.3 * e - 2.0 * e * e + 5.0 * e * e * e).collect();
        let (c, r) = fit_eps_series(&eps, &d, 3).unwrap();
        assert!((c[0] - 0.3).abs() < 1e-12);
        assert!((c[1] + 2.0).abs() < 1e-8);
        assert!((c[2] - 5.0).abs() < 1e-4);
        assert!(r < 1e-18);
    }

    #[test]
    fn zero_crossings_is_invalid() {
        let sys = PlanarSystem::new(elliptic_hamiltonian(), zero(), zero()).unwrap();
        assert!(poincare_return(&sys, 0.0, 1e-3, &SectionSpec::elliptic(), 0, &ReturnOptions::default()).is_err());
    }
}
