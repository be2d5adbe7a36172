//! The three-dimensional system with invariant plane
//!
//! ```text
//! ẋ = H_y + zR + εP,   ẏ = −H_x + zS + εQ,   ż = Az + εb,
//! ```
//!
//! the periodic solution `g` of the normal variation equation `ġ = Ag + b`
//! along an oval, the Pontryagin–Melnikov integral
//! `J = ∮ (Q + gS) dx − (P + gR) dy` and a direct simulation of the return.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fiber::{trace_real_oval, FiberLoop, LoopControls};
use crate::ham_time::{is_resonant, Coefficients, LoopQuadrature, TOL_RESONANCE};
use crate::melnikov::{integrate_returns, ReturnOptions, SectionSpec};
use crate::poly::{BivariatePoly, Fibration, C64};

/// Default lower bound on `|∮ A dt|`.
pub const DEFAULT_HYP_MARGIN: f64 = 0.1;

fn default_margin() -> f64 {
    DEFAULT_HYP_MARGIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct System3D {
    #[serde(rename = "H")]
    pub h: BivariatePoly,
    #[serde(rename = "R", default)]
    pub r: BivariatePoly,
    #[serde(rename = "S", default)]
    pub s: BivariatePoly,
    #[serde(rename = "A")]
    pub a: BivariatePoly,
    #[serde(default)]
    pub b: BivariatePoly,
    #[serde(rename = "P", default)]
    pub p: BivariatePoly,
    #[serde(rename = "Q", default)]
    pub q: BivariatePoly,
    #[serde(default = "default_margin")]
    pub hyp_margin: f64,
}

impl System3D {
    pub fn new(h: BivariatePoly, a: BivariatePoly, b: BivariatePoly) -> Self {
        let z = BivariatePoly::zero();
        Self { h, r: z.clone(), s: z.clone(), a, b, p: z.clone(), q: z, hyp_margin: DEFAULT_HYP_MARGIN }
    }

    pub fn with_rs(mut self, r: BivariatePoly, s: BivariatePoly) -> Self {
        self.r = r;
        self.s = s;
        self
    }

    pub fn with_pq(mut self, p: BivariatePoly, q: BivariatePoly) -> Self {
        self.p = p;
        self.q = q;
        self
    }

    pub fn fibration(&self) -> Fibration {
        Fibration::new(self.h.clone())
    }

    /// `p = S·H_y + R·H_x`, the weight of Ψ in `J`.
    pub fn psi_weight(&self) -> BivariatePoly {
        let (hx, hy) = self.h.partials();
        &(&self.s * &hy) + &(&self.r * &hx)
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients::new(self.a.clone(), self.b.clone(), self.psi_weight())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, poly) in
            [("H", &self.h), ("R", &self.r), ("S", &self.s), ("A", &self.a), ("b", &self.b), ("P", &self.p), ("Q", &self.q)]
        {
            if !poly.is_real() {
                return Err(Error::InvalidInput(format!("{name} must have real coefficients")));
            }
        }
        if !(self.hyp_margin >= 0.0) {
            return Err(Error::InvalidInput("hyp_margin must be nonnegative".into()));
        }
        Ok(())
    }
}

/// The periodic solution `g = e^{α}(B + B_T/(e^{−I} − 1))` of `ġ = Ag + b`
/// on a loop, with `α = ∫₀ᵗ A` and `B = ∫₀ᵗ b e^{−α}`.
#[derive(Debug, Clone)]
pub struct NormalSolution {
    pub period: C64,
    pub exponent: C64,
    /// Hamiltonian time at the loop samples, closing with the period.
    pub times: Vec<C64>,
    /// `g` at the loop samples, closing with the value at the base point.
    pub values: Vec<C64>,
    /// `ġ = Ag + b` at the loop samples.
    pub rates: Vec<C64>,
    /// `g` at the quadrature nodes.
    pub(crate) node_values: Vec<C64>,
    pub(crate) quadrature: LoopQuadrature,
}

impl NormalSolution {
    pub fn new(fib: &Fibration, lp: &FiberLoop, a: &BivariatePoly, b: &BivariatePoly, margin: f64, execution: Execution) -> Result<Self> {
        let quad = LoopQuadrature::new(fib, lp, execution)?;
        let ones = vec![C64::new(1.0, 0.0); quad.nodes.len()];
        let (_, times) = quad.cumulative(&ones);
        let (alpha, alpha_end) = quad.cumulative(&quad.eval(a));
        let exponent = *alpha_end.last().unwrap();
        if exponent.norm() < margin || is_resonant(exponent, TOL_RESONANCE) {
            return Err(Error::Resonance { distance: (exponent.exp() - 1.0).norm() });
        }
        let weighted: Vec<C64> = quad.eval(b).iter().zip(&alpha).map(|(bv, al)| bv * (-al).exp()).collect();
        let (big_b, b_end) = quad.cumulative(&weighted);
        let shift = *b_end.last().unwrap() / ((-exponent).exp() - 1.0);
        let node_values = alpha.iter().zip(&big_b).map(|(al, bb)| al.exp() * (bb + shift)).collect();
        let values: Vec<C64> = alpha_end.iter().zip(&b_end).map(|(al, bb)| al.exp() * (bb + shift)).collect();
        let n = lp.len();
        let rates = (0..=n)
            .map(|i| {
                let pt = lp.points[i % n];
                a.eval(pt) * values[i] + b.eval(pt)
            })
            .collect();
        Ok(Self { period: *times.last().unwrap(), exponent, times, values, rates, node_values, quadrature: quad })
    }

    /// `g(t)` for real time on a real oval, by cubic Hermite interpolation
    /// between samples using `ġ = Ag + b`.
    pub fn eval(&self, t: f64) -> C64 {
        let period = self.period.re;
        let t = t.rem_euclid(period);
        let k = self.times.partition_point(|s| s.re <= t).clamp(1, self.times.len() - 1) - 1;
        let (t0, t1) = (self.times[k].re, self.times[k + 1].re);
        let dt = t1 - t0;
        let s = (t - t0) / dt;
        let (h00, h10, h01, h11) =
            (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s, -2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
        self.values[k] * h00 + self.rates[k] * (h10 * dt) + self.values[k + 1] * h01 + self.rates[k + 1] * (h11 * dt)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// `g(t_eval)` on a real oval.
pub fn normal_periodic_solution(sys: &System3D, lp: &FiberLoop, t_eval: f64) -> Result<f64> {
    let sol = NormalSolution::new(&sys.fibration(), lp, &sys.a, &sys.b, sys.hyp_margin, Execution::Parallel)?;
    Ok(sol.eval(t_eval).re)
}

/// Both evaluations of the Pontryagin–Melnikov integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PontryaginMelnikov {
    /// `∮ (Q + gS) dx − (P + gR) dy` with `g` at the quadrature nodes.
    pub direct: C64,
    /// `∮ Q dx − P dy`.
    pub abelian: C64,
    /// `ψ(ρ(γ))` with `p = S·H_y + R·H_x`.
    pub psi: C64,
    /// `abelian + psi`.
    pub decomposed: C64,
    pub relative_difference: f64,
}

pub fn pontryagin_melnikov(sys: &System3D, lp: &FiberLoop) -> Result<PontryaginMelnikov> {
    pontryagin_melnikov_with(sys, lp, Execution::Parallel)
}

pub fn pontryagin_melnikov_with(sys: &System3D, lp: &FiberLoop, execution: Execution) -> Result<PontryaginMelnikov> {
    sys.validate()?;
    let fib = sys.fibration();
    let sol = NormalSolution::new(&fib, lp, &sys.a, &sys.b, sys.hyp_margin, execution)?;
    let quad = &sol.quadrature;
    let (qv, pv, sv, rv) = (quad.eval(&sys.q), quad.eval(&sys.p), quad.eval(&sys.s), quad.eval(&sys.r));
    let g = &sol.node_values;
    let fdx: Vec<C64> = (0..g.len()).map(|k| qv[k] + g[k] * sv[k]).collect();
    let fdy: Vec<C64> = (0..g.len()).map(|k| -(pv[k] + g[k] * rv[k])).collect();
    let direct = quad.integral_form(&fdx, &fdy);
    let abelian = quad.abelian(&sys.q, &sys.p);
    let psi = quad.functionals(&sys.coefficients()).psi()?;
    let decomposed = abelian + psi;
    let relative_difference = (direct - decomposed).norm() / direct.norm().max(decomposed.norm()).max(f64::MIN_POSITIVE);
    Ok(PontryaginMelnikov { direct, abelian, psi, decomposed, relative_difference })
}

/// One sample of the simulated orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(rename = "H")]
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation3D {
    pub h: f64,
    pub eps: f64,
    pub delta_h: f64,
    pub return_time: f64,
    /// `max |z(t) − εg(t)|` along the orbit.
    pub tracking: f64,
    /// `tracking / ε²`.
    pub tracking_constant: f64,
    pub z_profile: Vec<OrbitSample>,
}

/// Settings for [`simulate_3d_return`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub returns: ReturnOptions,
    /// Samples of the oval used to build `g`.
    pub oval_points: usize,
    pub loop_controls: LoopControls,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { returns: ReturnOptions::default(), oval_points: 800, loop_controls: LoopControls::default() }
    }
}

/// Integrates the full system from `(x₀, y₀, εg(x₀, y₀))` on the section
/// through one return and reports `ΔH` and the normal coordinate.
pub fn simulate_3d_return(
    sys: &System3D,
    h: f64,
    eps: f64,
    section: &SectionSpec,
    opts: &SimulationOptions,
) -> Result<Simulation3D> {
    sys.validate()?;
    let fib = sys.fibration();
    let p0 = section.start_point(&sys.h, h)?;
    let oval = trace_real_oval(&fib, h, (p0[0], p0[1]), opts.oval_points, &opts.loop_controls)?;
    let sol = NormalSolution::new(&fib, &oval, &sys.a, &sys.b, sys.hyp_margin, Execution::Parallel)?;
    let start = [oval.base().x.re, oval.base().y.re];
    let z0 = eps * sol.values[0].re;
    let bound = 10.0 * eps.abs() * sol.max_abs();

    let (hx, hy) = sys.h.partials();
    let field = |_t: f64, u: &[f64; 3]| {
        let (x, y, z) = (u[0], u[1], u[2]);
        [
            hy.eval_real(x, y) + z * sys.r.eval_real(x, y) + eps * sys.p.eval_real(x, y),
            -hx.eval_real(x, y) + z * sys.s.eval_real(x, y) + eps * sys.q.eval_real(x, y),
            sys.a.eval_real(x, y) * z + eps * sys.b.eval_real(x, y),
        ]
    };
    let ret = integrate_returns(field, [start[0], start[1], z0], section, 1, &opts.returns, true)?;

    let mut tracking = 0.0f64;
    let mut z_profile = Vec::with_capacity(ret.trace.len());
    for (t, u) in &ret.trace {
        if u[2].abs() > bound && eps != 0.0 {
            return Err(Error::NormalEscape { z: u[2].abs(), bound });
        }
        tracking = tracking.max((u[2] - eps * sol.eval(*t).re).abs());
        z_profile.push(OrbitSample { t: *t, x: u[0], y: u[1], z: u[2], h: sys.h.eval_real(u[0], u[1]) });
    }
    let delta_h = sys.h.eval_real(ret.y[0], ret.y[1]) - sys.h.eval_real(start[0], start[1]);
    Ok(Simulation3D {
        h,
        eps,
        delta_h,
        return_time: ret.t,
        tracking,
        tracking_constant: if eps != 0.0 { tracking / (eps * eps) } else { 0.0 },
        z_profile,
    })
}
