//! Hamiltonian-time quadrature along fiber loops.
//!
//! Each segment between consecutive samples is parametrized as a graph over
//! `x` (when `H_y` dominates at both ends) or over `y`, with the other
//! coordinate solved on the fiber by Newton. On the fiber `dt = dx / H_y =
//! −dy / H_x`, so the chosen variable never divides by a vanishing partial.
//! Cumulative integrals use the 4-stage Gauss collocation scheme, which is
//! of order 8 per segment for every quantity below.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fiber::FiberLoop;
use crate::poly::{BivariatePoly, Fibration, Point, C64};

/// Relative tolerance of the resonance test `|e^I − 1| ≤ tol·max(1, |e^I|)`.
pub const TOL_RESONANCE: f64 = 1e-8;

const STAGES: usize = 4;

struct Gauss {
    c: [f64; STAGES],
    w: [f64; STAGES],
    /// `acol[i][j] = ∫₀^{c_i} ℓ_j`, with `ℓ_j` the Lagrange basis on the nodes.
    acol: [[f64; STAGES]; STAGES],
}

fn gauss() -> &'static Gauss {
    static G: OnceLock<Gauss> = OnceLock::new();
    G.get_or_init(|| {
        let (r1, r2) = (0.339_981_043_584_856_3, 0.861_136_311_594_052_6);
        let c = [(1.0 - r2) / 2.0, (1.0 - r1) / 2.0, (1.0 + r1) / 2.0, (1.0 + r2) / 2.0];
        let (w1, w2) = (0.652_145_154_862_546_1 / 2.0, 0.347_854_845_137_453_9 / 2.0);
        let w = [w2, w1, w1, w2];
        let mut acol = [[0.0; STAGES]; STAGES];
        for j in 0..STAGES {
            // coefficients of ℓ_j in the monomial basis
            let mut coef: Vec<f64> = vec![1.0];
            let mut denom = 1.0;
            for m in 0..STAGES {
                if m == j {
                    continue;
                }
                let mut next = vec![0.0; coef.len() + 1];
                for (k, a) in coef.iter().enumerate() {
                    next[k + 1] += a;
                    next[k] -= a * c[m];
                }
                coef = next;
                denom *= c[j] - c[m];
            }
            for i in 0..STAGES {
                acol[i][j] = coef.iter().enumerate().map(|(k, a)| a * c[i].powi(k as i32 + 1) / (k as f64 + 1.0)).sum::<f64>()
                    / denom;
            }
        }
        Gauss { c, w, acol }
    })
}

/// Quadrature node on a loop segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub pt: Point,
    /// `dt/ds` along the segment parameter `s ∈ [0, 1]`.
    pub dt: C64,
    pub dx: C64,
    pub dy: C64,
}

/// Nodes of every segment of a loop, the common input of all functionals.
#[derive(Debug, Clone)]
pub struct LoopQuadrature {
    pub h: C64,
    /// `STAGES` consecutive nodes per segment.
    pub nodes: Vec<Node>,
}

fn solve_on_fiber(fib: &Fibration, h: C64, mut p: Point, along_x: bool) -> Result<Point> {
    let mut res = f64::INFINITY;
    for _ in 0..40 {
        let (v, scale) = fib.h.eval_with_scale(p);
        let r = v - h;
        res = r.norm();
        if res <= 16.0 * f64::EPSILON * (scale + h.norm()) {
            return Ok(p);
        }
        let (gx, gy) = fib.grad(p);
        let step = if along_x { r / gy } else { r / gx };
        if !step.norm().is_finite() {
            break;
        }
        if along_x {
            p.y -= step;
        } else {
            p.x -= step;
        }
        if step.norm() <= 4.0 * f64::EPSILON * (1.0 + p.norm()) {
            return Ok(p);
        }
    }
    Err(Error::ProjectionDiverged { residual: res })
}

fn segment_nodes(fib: &Fibration, h: C64, p: Point, q: Point) -> Result<[Node; STAGES]> {
    let g = gauss();
    let (gxp, gyp) = fib.grad(p);
    let (gxq, gyq) = fib.grad(q);
    let along_x = gyp.norm().min(gyq.norm()) >= gxp.norm().min(gxq.norm());
    let d = q - p;
    let mut out = [Node { pt: p, dt: C64::new(0.0, 0.0), dx: C64::new(0.0, 0.0), dy: C64::new(0.0, 0.0) }; STAGES];
    for (i, node) in out.iter_mut().enumerate() {
        let pt = solve_on_fiber(fib, h, p.lerp(&q, g.c[i]), along_x)?;
        let (gx, gy) = fib.grad(pt);
        *node = if along_x {
            Node { pt, dt: d.x / gy, dx: d.x, dy: -gx / gy * d.x }
        } else {
            Node { pt, dt: -d.y / gx, dx: -gy / gx * d.y, dy: d.y }
        };
        if !node.dt.norm().is_finite() {
            return Err(Error::HitCritical { grad: gx.norm().max(gy.norm()) });
        }
    }
    Ok(out)
}

impl LoopQuadrature {
    pub fn new(fib: &Fibration, lp: &FiberLoop, execution: Execution) -> Result<Self> {
        let segs: Vec<(Point, Point)> = lp.segments().collect();
        let per = exec::try_map(execution, &segs, |&(p, q)| segment_nodes(fib, lp.h, p, q))?;
        Ok(Self { h: lp.h, nodes: per.into_iter().flatten().collect() })
    }

    pub fn segments(&self) -> usize {
        self.nodes.len() / STAGES
    }

    /// Values of `f` at the nodes.
    pub fn eval(&self, f: &BivariatePoly) -> Vec<C64> {
        self.nodes.iter().map(|n| f.eval(n.pt)).collect()
    }

    /// Cumulative integral of `f dt` given node values of `f`: returns the
    /// stage values at every node and the values at segment ends (starting
    /// with 0).
    pub fn cumulative(&self, f: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let g = gauss();
        let nseg = self.segments();
        let mut stage = Vec::with_capacity(self.nodes.len());
        let mut ends = Vec::with_capacity(nseg + 1);
        let mut acc = C64::new(0.0, 0.0);
        ends.push(acc);
        for k in 0..nseg {
            let base = k * STAGES;
            let fd: [C64; STAGES] = std::array::from_fn(|j| f[base + j] * self.nodes[base + j].dt);
            for i in 0..STAGES {
                stage.push(acc + (0..STAGES).map(|j| fd[j] * g.acol[i][j]).sum::<C64>());
            }
            acc += (0..STAGES).map(|j| fd[j] * g.w[j]).sum::<C64>();
            ends.push(acc);
        }
        (stage, ends)
    }

    /// `∮ f dt` from node values of `f`.
    pub fn integral_dt(&self, f: &[C64]) -> C64 {
        let g = gauss();
        self.nodes.iter().zip(f).enumerate().map(|(k, (n, v))| g.w[k % STAGES] * v * n.dt).sum()
    }

    /// `∮ f dx + g dy` from node values.
    pub fn integral_form(&self, fdx: &[C64], fdy: &[C64]) -> C64 {
        let g = gauss();
        self.nodes
            .iter()
            .enumerate()
            .map(|(k, n)| g.w[k % STAGES] * (fdx[k] * n.dx + fdy[k] * n.dy))
            .sum()
    }

    pub fn time_profile(&self, a: &BivariatePoly) -> TimeProfile {
        let ones = vec![C64::new(1.0, 0.0); self.nodes.len()];
        let (_, t_cum) = self.cumulative(&ones);
        let (_, a_cum) = self.cumulative(&self.eval(a));
        TimeProfile { t_cum, a_cum }
    }

    /// Node data for the exponent integral and the inner integral `B`.
    pub fn profiles(&self, c: &Coefficients) -> Profiles {
        let av = self.eval(&c.a);
        let (alpha, a_ends) = self.cumulative(&av);
        let bv: Vec<C64> = self.eval(&c.b).iter().zip(&alpha).map(|(b, al)| b * (-al).exp()).collect();
        let (big_b, b_ends) = self.cumulative(&bv);
        let p = self.eval(&c.p);
        Profiles {
            period: self.integral_dt(&vec![C64::new(1.0, 0.0); self.nodes.len()]),
            exponent: *a_ends.last().unwrap(),
            alpha,
            big_b,
            b_total: *b_ends.last().unwrap(),
            p,
        }
    }

    /// The raw loop functionals; `psi` is `None` at resonance.
    pub fn functionals(&self, c: &Coefficients) -> LoopFunctionals {
        let pr = self.profiles(c);
        let pe: Vec<C64> = pr.p.iter().zip(&pr.alpha).map(|(p, al)| p * al.exp()).collect();
        let theta_p_raw = self.integral_dt(&pe);
        let phi_raw = self.integral_dt(&pe.iter().zip(&pr.big_b).map(|(u, b)| u * b).collect::<Vec<_>>());
        let half = (pr.exponent * 0.5).exp();
        let theta_plus = theta_p_raw / half;
        let theta_minus = half * pr.b_total;
        let phi = phi_raw / half;
        let psi = (!is_resonant(pr.exponent, TOL_RESONANCE))
            .then(|| half * phi + theta_plus * theta_minus / ((-pr.exponent).exp() - 1.0));
        LoopFunctionals { period: pr.period, exponent: pr.exponent, theta_plus, theta_minus, phi, psi }
    }

    /// Ψ by the literal double sum over all node pairs, without the
    /// factorization through θ± and φ.
    pub fn psi_direct(&self, c: &Coefficients, execution: Execution) -> Result<C64> {
        let g = gauss();
        let pr = self.profiles(c);
        let e_minus_i = (-pr.exponent).exp();
        if is_resonant(pr.exponent, TOL_RESONANCE) {
            return Err(Error::Resonance { distance: (pr.exponent.exp() - 1.0).norm() });
        }
        let bv = self.eval(&c.b);
        let n = self.nodes.len();
        // u_j dt-weighted inner integrand b e^{-α}, v_l outer p e^{α}
        let u: Vec<C64> = (0..n).map(|j| bv[j] * (-pr.alpha[j]).exp() * self.nodes[j].dt).collect();
        let outer = exec::map_range(execution, n, |l| {
            let (seg_l, i) = (l / STAGES, l % STAGES);
            let mut inner = C64::new(0.0, 0.0);
            for j in 0..n {
                let seg_j = j / STAGES;
                let jj = j % STAGES;
                let contrib = if seg_j > seg_l {
                    u[j] * g.w[jj]
                } else if seg_j < seg_l {
                    u[j] * g.w[jj] * e_minus_i
                } else {
                    // same segment: the part after t_l, plus the part before
                    // t_l reached after one full turn
                    let before = g.acol[i][jj];
                    u[j] * (g.w[jj] - before) + u[j] * before * e_minus_i
                };
                inner += contrib;
            }
            g.w[i] * pr.p[l] * pr.alpha[l].exp() * self.nodes[l].dt * inner
        });
        let total: C64 = outer.into_iter().sum();
        Ok(total / (e_minus_i - 1.0))
    }

    /// `∮ Q dx − P dy`.
    pub fn abelian(&self, q: &BivariatePoly, p: &BivariatePoly) -> C64 {
        let qv = self.eval(q);
        let pv: Vec<C64> = self.eval(p).into_iter().map(|v| -v).collect();
        self.integral_form(&qv, &pv)
    }
}

/// Node-level profiles: `alpha = ∫₀^t A`, `big_b = ∫₀^t b e^{−alpha}`.
#[derive(Debug, Clone)]
pub struct Profiles {
    pub period: C64,
    pub exponent: C64,
    pub alpha: Vec<C64>,
    pub big_b: Vec<C64>,
    pub b_total: C64,
    pub p: Vec<C64>,
}

pub fn is_resonant(exponent: C64, tol: f64) -> bool {
    let e = exponent.exp();
    (e - 1.0).norm() <= tol * e.norm().max(1.0)
}

/// The polynomials `A`, `b`, `p` defining θ±, φ and Ψ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    #[serde(rename = "A")]
    pub a: BivariatePoly,
    pub b: BivariatePoly,
    pub p: BivariatePoly,
}

impl Coefficients {
    pub fn new(a: BivariatePoly, b: BivariatePoly, p: BivariatePoly) -> Self {
        Self { a, b, p }
    }
}

/// Cumulative time and exponent integral at the segment ends.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeProfile {
    pub t_cum: Vec<C64>,
    pub a_cum: Vec<C64>,
}

impl TimeProfile {
    pub fn period(&self) -> C64 {
        *self.t_cum.last().unwrap()
    }

    pub fn exponent(&self) -> C64 {
        *self.a_cum.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopFunctionals {
    #[serde(rename = "T")]
    pub period: C64,
    #[serde(rename = "I")]
    pub exponent: C64,
    pub theta_plus: C64,
    pub theta_minus: C64,
    pub phi: C64,
    pub psi: Option<C64>,
}

impl LoopFunctionals {
    /// Ψ, or [`Error::Resonance`] when `e^I = 1`.
    pub fn psi(&self) -> Result<C64> {
        self.psi.ok_or(Error::Resonance { distance: (self.exponent.exp() - 1.0).norm() })
    }

    pub fn as_array(&self) -> [C64; 6] {
        [
            self.period,
            self.exponent,
            self.theta_plus,
            self.theta_minus,
            self.phi,
            self.psi.unwrap_or(C64::new(f64::NAN, f64::NAN)),
        ]
    }
}

pub fn time_profile(fib: &Fibration, lp: &FiberLoop, a: &BivariatePoly) -> Result<TimeProfile> {
    Ok(LoopQuadrature::new(fib, lp, Execution::default())?.time_profile(a))
}

/// θ±, φ, Ψ, T and I of a loop. Fails with [`Error::Resonance`] when Ψ is
/// undefined; [`LoopQuadrature::functionals`] returns the rest regardless.
pub fn loop_functionals(fib: &Fibration, lp: &FiberLoop, c: &Coefficients) -> Result<LoopFunctionals> {
    let f = LoopQuadrature::new(fib, lp, Execution::default())?.functionals(c);
    f.psi()?;
    let gap = (f.exponent.exp() - 1.0).norm();
    if gap < 1e-4 {
        log::warn!("near resonance: |e^I - 1| = {gap:.3e}, Ψ is ill-conditioned");
    }
    Ok(f)
}

pub fn psi_direct(fib: &Fibration, lp: &FiberLoop, c: &Coefficients) -> Result<C64> {
    LoopQuadrature::new(fib, lp, Execution::default())?.psi_direct(c, Execution::default())
}

/// `∮ Q dx − P dy` along the loop.
pub fn abelian_integral(fib: &Fibration, lp: &FiberLoop, q: &BivariatePoly, p: &BivariatePoly) -> Result<C64> {
    Ok(LoopQuadrature::new(fib, lp, Execution::default())?.abelian(q, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{invert_loop, trace_real_oval, LoopControls};

    fn one() -> BivariatePoly {
        BivariatePoly::constant(C64::new(1.0, 0.0))
    }

    #[test]
    fn collocation_matrix_properties() {
        let g = gauss();
        for i in 0..STAGES {
            let row: f64 = g.acol[i].iter().sum();
            assert!((row - g.c[i]).abs() < 1e-15);
            // exact for cubic integrands
            let cubic: f64 = (0..STAGES).map(|j| g.acol[i][j] * g.c[j].powi(3)).sum();
            assert!((cubic - g.c[i].powi(4) / 4.0).abs() < 1e-15);
        }
        assert!((g.w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let deg7: f64 = (0..STAGES).map(|j| g.w[j] * g.c[j].powi(7)).sum();
        assert!((deg7 - 0.125).abs() < 1e-15);
    }

    #[test]
    fn circle_period_and_area() {
        let fib = Fibration::new(BivariatePoly::from_real(&[(2, 0, 1.0), (0, 2, 1.0)]));
        let lp = trace_real_oval(&fib, 1.0, (1.0, 0.0), 300, &LoopControls::default()).unwrap();
        let tp = time_profile(&fib, &lp, &BivariatePoly::zero()).unwrap();
        assert!((tp.period() - std::f64::consts::PI).norm() < 1e-12);
        assert_eq!(tp.exponent(), C64::new(0.0, 0.0));
        assert_eq!(tp.t_cum.len(), lp.len() + 1);
        let q = BivariatePoly::from_real(&[(0, 1, -1.0)]);
        let p = BivariatePoly::from_real(&[(1, 0, -1.0)]);
        let area = abelian_integral(&fib, &lp, &q, &p).unwrap();
        assert!((area + std::f64::consts::TAU).norm() < 1e-12, "{area}");
    }

    #[test]
    fn constant_coefficients_closed_forms() {
        let fib = Fibration::elliptic();
        let lp = trace_real_oval(&fib, 0.0, (-1.0, 1.0), 400, &LoopControls::default()).unwrap();
        let c = Coefficients::new(one(), one(), one());
        let f = loop_functionals(&fib, &lp, &c).unwrap();
        let t = f.period;
        assert!((f.exponent - t).norm() < 1e-12);
        let tp = (-t / 2.0).exp() * (t.exp() - 1.0);
        let tm = (t / 2.0).exp() * (1.0 - (-t).exp());
        assert!((f.theta_plus - tp).norm() < 1e-10 * tp.norm());
        assert!((f.theta_minus - tm).norm() < 1e-10 * tm.norm());
        // φ = e^{-T/2} ∫₀^T e^t (1 − e^{−t}) dt = e^{-T/2}(e^T − 1 − T)
        let phi = (-t / 2.0).exp() * (t.exp() - 1.0 - t);
        assert!((f.phi - phi).norm() < 1e-10 * phi.norm());
    }

    #[test]
    fn zero_p_gives_zero() {
        let fib = Fibration::elliptic();
        let lp = trace_real_oval(&fib, 0.5, (-1.0, 1.0), 300, &LoopControls::default()).unwrap();
        let c = Coefficients::new(one(), one(), BivariatePoly::zero());
        let f = loop_functionals(&fib, &lp, &c).unwrap();
        assert_eq!(f.theta_plus, C64::new(0.0, 0.0));
        assert_eq!(f.phi, C64::new(0.0, 0.0));
        assert_eq!(f.psi, Some(C64::new(0.0, 0.0)));
        assert_eq!(psi_direct(&fib, &lp, &c).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn psi_routes_agree() {
        let fib = Fibration::elliptic();
        let lp = trace_real_oval(&fib, 0.5, (-1.0, 1.0), 300, &LoopControls::default()).unwrap();
        let c = Coefficients::new(one(), one(), BivariatePoly::from_real(&[(1, 0, 1.0)]));
        let f = loop_functionals(&fib, &lp, &c).unwrap();
        let d = psi_direct(&fib, &lp, &c).unwrap();
        assert!((f.psi.unwrap() - d).norm() <= 1e-9 * d.norm(), "{} {}", f.psi.unwrap(), d);
    }

    #[test]
    fn resonance_is_reported() {
        let fib = Fibration::elliptic();
        let lp = trace_real_oval(&fib, 0.5, (-1.0, 1.0), 300, &LoopControls::default()).unwrap();
        let c = Coefficients::new(BivariatePoly::zero(), one(), one());
        assert!(matches!(loop_functionals(&fib, &lp, &c), Err(Error::Resonance { .. })));
        assert!(matches!(psi_direct(&fib, &lp, &c), Err(Error::Resonance { .. })));
    }

    #[test]
    fn inversion_negates_period() {
        let fib = Fibration::elliptic();
        let lp = trace_real_oval(&fib, 0.5, (-1.0, 1.0), 300, &LoopControls::default()).unwrap();
        let a = time_profile(&fib, &lp, &one()).unwrap();
        let b = time_profile(&fib, &invert_loop(&lp), &one()).unwrap();
        assert!((a.period() + b.period()).norm() < 1e-12);
        assert!((a.exponent() + b.exponent()).norm() < 1e-12);
    }
}
