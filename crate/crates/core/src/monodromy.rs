//! Monodromy of loops and of the functionals built on them, with the
//! elliptic-case identities for `H = y² − x³ + 3x` around the critical
//! value `+2`.
//!
//! Cycle conventions for the elliptic case at a real `h₀ ∈ (−2, 2)`:
//!
//! * the base point `*` is `(−1, √(h₀ + 2))`. The line `x = −1` carries
//!   `H_x = 0`, so horizontal transport keeps the base point on it and it
//!   returns to itself after any turn around `+2`;
//! * `γ` is the real oval through `*`, oriented by the Hamiltonian flow;
//! * `δ` vanishes at `(1, 0)`: the Morse circle near `h = 2` is carried to
//!   `h₀` along the real axis, which keeps it in the plane `x ∈ ℝ, y ∈ iℝ`
//!   through `q = (e₂, 0)`, the right end point of the oval. It is rebased
//!   to `*` along the arc of `γ` running from `*` against the flow to `q`,
//!   and oriented so that `Im T_δ < 0`.
//!
//! With these choices a counter-clockwise turn around `+2` maps `γ` to
//! `γ·δ` and fixes `δ`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fiber::{
    chord_connector, commutator_loop, compose_loops, invert_loop, rebase_loop, trace_real_oval, transport_loop,
    vanishing_cycle, BasePath, FiberLoop, TransportControls,
};
use crate::ham_time::{Coefficients, LoopQuadrature};
use crate::poly::{BivariatePoly, Fibration, Point, C64};
use crate::tri_group::{rho_with, TriMatrix};

/// Samples per full turn of a monodromy circle.
const SAMPLES_PER_TURN: usize = 256;

/// Carries `lp` once around the circle `|h − crit_value| = radius`
/// (`turns` times, counter-clockwise for positive `turns`) and returns the
/// loop over the starting `h`, rebased onto the original base point.
pub fn monodromy_loop(
    fib: &Fibration,
    lp: &FiberLoop,
    crit_value: C64,
    radius: f64,
    turns: i32,
    controls: &TransportControls,
) -> Result<FiberLoop> {
    let path = BasePath::around(lp.h, crit_value, radius, turns, SAMPLES_PER_TURN);
    let after = transport_loop(fib, lp, &path, controls)?;
    let lc = &controls.loop_controls;
    let drift = after.base().dist(&lp.base());
    if drift <= lc.tol_base {
        let mut out = after;
        out.points[0] = lp.base();
        return Ok(out);
    }
    if drift <= 4.0 * lc.max_step {
        let connector = chord_connector(fib, lp.base(), after.base(), lp.h, lc)?;
        return rebase_loop(fib, &after, &connector, lc);
    }
    // the base point may come back elsewhere on the same trace, e.g. a
    // half-turn along a cycle vanishing at the encircled value
    let (_, _, dist) = after.nearest_segment(&lp.base());
    if dist <= lc.max_step {
        return after.rotate_to(fib, lp.base(), lc);
    }
    Err(Error::BasePointDrift { distance: drift })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonodromyReport {
    pub crit_value: C64,
    pub radius: f64,
    pub loop_before: FiberLoop,
    pub loop_after: FiberLoop,
    pub rho_before: TriMatrix,
    pub rho_after: TriMatrix,
    pub residuals: BTreeMap<String, f64>,
}

/// Monodromy of `lp` around `crit_value`, with ρ before and after. With a
/// vanishing cycle `delta` based at the same point, the report includes the
/// Picard–Lefschetz residual `‖ρ(after) − ρ(lp)ρ(δ)‖`.
#[allow(clippy::too_many_arguments)]
pub fn monodromy_transport(
    fib: &Fibration,
    lp: &FiberLoop,
    crit_value: C64,
    radius: f64,
    coeffs: &Coefficients,
    delta: Option<&FiberLoop>,
    controls: &TransportControls,
) -> Result<MonodromyReport> {
    let after = monodromy_loop(fib, lp, crit_value, radius, 1, controls)?;
    let rho_before = rho_with(fib, lp, coeffs, controls.execution)?;
    let rho_after = rho_with(fib, &after, coeffs, controls.execution)?;
    let mut residuals = BTreeMap::new();
    residuals.insert("unchanged".to_string(), rho_after.distance(&rho_before));
    if let Some(d) = delta {
        let rd = rho_with(fib, d, coeffs, controls.execution)?;
        residuals.insert("picard_lefschetz".to_string(), rho_after.distance(&rho_before.multiply(&rd)));
    }
    Ok(MonodromyReport { crit_value, radius, loop_before: lp.clone(), loop_after: after, rho_before, rho_after, residuals })
}

/// Discretization settings for the elliptic cycle construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOptions {
    /// Samples of the traced real oval before spacing refinement.
    pub oval_points: usize,
    /// Distance from `+2` at which the Morse circle is built.
    pub morse_radius: f64,
    pub morse_points: usize,
    pub transport: TransportControls,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self { oval_points: 400, morse_radius: 1e-2, morse_points: 64, transport: TransportControls::default() }
    }
}

/// The based cycles `γ, δ ∈ π₁(E_{h₀}, *)` of the elliptic fibration.
#[derive(Debug, Clone)]
pub struct EllipticCycles {
    pub fib: Fibration,
    pub h0: f64,
    pub base: Point,
    pub gamma: FiberLoop,
    pub delta: FiberLoop,
    /// Arc of `γ` from `*` to `q = (e₂, 0)`, against the flow, used to
    /// rebase `δ`.
    pub connector: Vec<Point>,
}

pub const SADDLE_POINT: (f64, f64) = (1.0, 0.0);
pub const SADDLE_VALUE: f64 = 2.0;
pub const CENTER_VALUE: f64 = -2.0;

/// Middle root of `x³ − 3x + h₀`, the right end of the real oval.
fn middle_root(h0: f64) -> f64 {
    // x = 2 cos θ solves x³ − 3x = 2 cos 3θ
    let th = (-h0 / 2.0).acos() / 3.0;
    let roots = [0, 1, 2].map(|k| 2.0 * (th - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos());
    let mut r = roots;
    r.sort_by(f64::total_cmp);
    r[1]
}

impl EllipticCycles {
    pub fn new(h0: f64, opts: &CycleOptions) -> Result<Self> {
        if !(h0 > CENTER_VALUE && h0 < SADDLE_VALUE) {
            return Err(Error::InvalidInput(format!("h0 = {h0} must lie in (-2, 2)")));
        }
        let fib = Fibration::elliptic();
        let lc = opts.transport.loop_controls;
        let gamma = trace_real_oval(&fib, h0, (-1.0, (h0 + 2.0).sqrt()), opts.oval_points, &lc)?;
        let base = gamma.base();

        let raw = vanishing_cycle(
            &fib,
            Point::real(SADDLE_POINT.0, SADDLE_POINT.1),
            C64::new(SADDLE_VALUE, 0.0),
            C64::new(h0, 0.0),
            opts.morse_radius,
            opts.morse_points,
            &opts.transport,
        )?;
        let q = Point::real(middle_root(h0), 0.0);
        let gamma = gamma.rotate_to(&fib, base, &lc)?;
        let connector = gamma.arc_to(q, false);
        let q = *connector.last().unwrap();
        let delta_q = raw.rotate_to(&fib, q, &lc)?;
        let mut delta_q = delta_q;
        delta_q.points[0] = q;
        let mut delta = rebase_loop(&fib, &delta_q, &connector, &lc)?;
        let t = LoopQuadrature::new(&fib, &delta, opts.transport.execution)?.time_profile(&BivariatePoly::zero());
        if t.period().im > 0.0 {
            delta = invert_loop(&delta);
        }
        Ok(Self { fib, h0, base, gamma, delta, connector })
    }

    pub fn commutator(&self) -> Result<FiberLoop> {
        commutator_loop(&self.gamma, &self.delta, self.gamma_tol())
    }

    pub fn compose(&self, a: &FiberLoop, b: &FiberLoop) -> Result<FiberLoop> {
        compose_loops(a, b, self.gamma_tol())
    }

    fn gamma_tol(&self) -> f64 {
        1e-9
    }

    pub fn letter(&self, l: Letter) -> FiberLoop {
        match l {
            Letter::Gamma => self.gamma.clone(),
            Letter::Delta => self.delta.clone(),
            Letter::GammaInv => invert_loop(&self.gamma),
            Letter::DeltaInv => invert_loop(&self.delta),
        }
    }

    /// The based loop spelled by `word`, read left to right.
    pub fn word(&self, word: &[Letter]) -> Result<FiberLoop> {
        let mut out = FiberLoop::trivial(C64::new(self.h0, 0.0), self.base);
        for &l in word {
            out = self.compose(&out, &self.letter(l))?;
        }
        Ok(out)
    }
}

/// Generators of `π₁(E_{h₀}, *)` and their inverses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Letter {
    Gamma,
    Delta,
    GammaInv,
    DeltaInv,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::Gamma, Letter::Delta, Letter::GammaInv, Letter::DeltaInv];

    pub fn inverse(self) -> Letter {
        match self {
            Letter::Gamma => Letter::GammaInv,
            Letter::Delta => Letter::DeltaInv,
            Letter::GammaInv => Letter::Gamma,
            Letter::DeltaInv => Letter::Delta,
        }
    }

    /// `g`, `d` for the generators and `G`, `D` for their inverses.
    pub fn from_char(c: char) -> Option<Letter> {
        match c {
            'g' => Some(Letter::Gamma),
            'd' => Some(Letter::Delta),
            'G' => Some(Letter::GammaInv),
            'D' => Some(Letter::DeltaInv),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Letter::Gamma => 'g',
            Letter::Delta => 'd',
            Letter::GammaInv => 'G',
            Letter::DeltaInv => 'D',
        }
    }
}

/// Parses a word such as `"gdG"`.
pub fn parse_word(s: &str) -> Result<Vec<Letter>> {
    s.chars()
        .map(|c| Letter::from_char(c).ok_or_else(|| Error::InvalidInput(format!("unknown letter '{c}' in word \"{s}\""))))
        .collect()
}

/// Ρ-values and Ψ-functionals of `γ`, `δ` and their commutator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRhos {
    pub gamma: TriMatrix,
    pub delta: TriMatrix,
}

pub fn cycle_rhos(cycles: &EllipticCycles, coeffs: &Coefficients, execution: Execution) -> Result<CycleRhos> {
    Ok(CycleRhos {
        gamma: rho_with(&cycles.fib, &cycles.gamma, coeffs, execution)?,
        delta: rho_with(&cycles.fib, &cycles.delta, coeffs, execution)?,
    })
}

fn ensure_in_s(w: &TriMatrix) -> Result<()> {
    if w.in_s() {
        Ok(())
    } else {
        Err(Error::Resonance { distance: (w.exponent.exp() - 1.0).norm() })
    }
}

/// Both sides of the monodromy formula for Ψ_γ around `+2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonellReport {
    pub h0: f64,
    pub radius: f64,
    /// Ψ of the transported loop.
    pub lhs: C64,
    /// `Ψ_γ + Ψ_δ − e^{−I_δ}/(e^{−I_δ} − 1)² · (1/(e^{−I_γ−I_δ} − 1) − 1/(e^{−I_γ} − 1)) · Ψ̃_{[γ,δ]}`.
    pub rhs: C64,
    pub residual: f64,
    /// Product identity residual for `(ρ(γ), ρ(δ))`.
    pub mid_residual: f64,
}

/// Right-hand side of the monodromy formula from ρ(γ), ρ(δ) alone.
pub fn monell_rhs(rg: &TriMatrix, rd: &TriMatrix) -> Result<C64> {
    ensure_in_s(rg)?;
    ensure_in_s(rd)?;
    ensure_in_s(&rg.multiply(rd))?;
    let (eg, ed) = ((-rg.exponent).exp(), (-rd.exponent).exp());
    let k = ed / ((ed - 1.0) * (ed - 1.0)) * (1.0 / (eg * ed - 1.0) - 1.0 / (eg - 1.0));
    Ok(rg.psi()? + rd.psi()? - k * rg.commutator(rd).psi_tilde())
}

/// Compares Ψ of `Mon₂ γ`, computed on the transported loop, with the
/// formula evaluated from ρ(γ), ρ(δ).
pub fn monell_residual(cycles: &EllipticCycles, coeffs: &Coefficients, radius: f64, controls: &TransportControls) -> Result<MonellReport> {
    let fib = &cycles.fib;
    let rg = rho_with(fib, &cycles.gamma, coeffs, controls.execution)?;
    let rd = rho_with(fib, &cycles.delta, coeffs, controls.execution)?;
    let rhs = monell_rhs(&rg, &rd)?;
    let mon = monodromy_loop(fib, &cycles.gamma, C64::new(SADDLE_VALUE, 0.0), radius, 1, controls)?;
    let rm = rho_with(fib, &mon, coeffs, controls.execution)?;
    ensure_in_s(&rm)?;
    let lhs = rm.psi()?;
    let (mid, scale) = crate::tri_group::mid_identity_terms(&rg, &rd)?;
    Ok(MonellReport {
        h0: cycles.h0,
        radius,
        lhs,
        rhs,
        residual: (lhs - rhs).norm(),
        mid_residual: mid.norm() / scale.max(1.0),
    })
}

/// `ξ = Ψ_γ − Ψ_δ·log(h − 2)/2πi + e^{−I_δ}Ψ̃_{[γ,δ]}/((e^{−I_δ} − 1)²(e^{−I_γ} − 1))`
/// from ρ-values, with the logarithm given explicitly.
pub fn xi_from(rg: &TriMatrix, rd: &TriMatrix, log_term: C64) -> Result<C64> {
    ensure_in_s(rg)?;
    ensure_in_s(rd)?;
    let (eg, ed) = ((-rg.exponent).exp(), (-rd.exponent).exp());
    let two_pi_i = C64::new(0.0, std::f64::consts::TAU);
    let tilde = rg.commutator(rd).psi_tilde();
    Ok(rg.psi()? - rd.psi()? * log_term / two_pi_i + ed * tilde / ((ed - 1.0) * (ed - 1.0) * (eg - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiSample {
    pub h: f64,
    pub before: C64,
    pub after: C64,
    pub difference: f64,
    /// Ψ_γ minus its singular part, i.e. ξ − regular remainder evaluated
    /// before the turn; equals `before`.
    pub psi_gamma: C64,
}

/// ξ before and after one counter-clockwise turn around `+2`; the log
/// branch advances by `2πi`.
pub fn xi_invariance(
    h_samples: &[f64],
    coeffs: &Coefficients,
    radius: f64,
    opts: &CycleOptions,
) -> Result<Vec<XiSample>> {
    let exec_mode = opts.transport.execution;
    crate::exec::try_map(exec_mode, h_samples, |&h| {
        let cycles = EllipticCycles::new(h, opts)?;
        let fib = &cycles.fib;
        let rg = rho_with(fib, &cycles.gamma, coeffs, exec_mode)?;
        let rd = rho_with(fib, &cycles.delta, coeffs, exec_mode)?;
        let log0 = C64::new(h - SADDLE_VALUE, 0.0).ln();
        let before = xi_from(&rg, &rd, log0)?;
        let two_pi_i = C64::new(0.0, std::f64::consts::TAU);
        let r = radius.min(0.5 * (SADDLE_VALUE - h).abs().max(radius));
        let c = C64::new(SADDLE_VALUE, 0.0);
        let mg = monodromy_loop(fib, &cycles.gamma, c, r, 1, &opts.transport)?;
        let md = monodromy_loop(fib, &cycles.delta, c, r, 1, &opts.transport)?;
        let rmg = rho_with(fib, &mg, coeffs, exec_mode)?;
        let rmd = rho_with(fib, &md, coeffs, exec_mode)?;
        let after = xi_from(&rmg, &rmd, log0 + two_pi_i)?;
        Ok(XiSample { h, before, after, difference: (after - before).norm(), psi_gamma: rg.psi()? })
    })
}

/// Numerical rank of the rows `v_0..v_j` for every `j`.
fn rank_sequence(rows: &[Vec<C64>], threshold: f64) -> Vec<usize> {
    let cols = rows.first().map_or(0, |r| r.len());
    (1..=rows.len())
        .map(|j| {
            // rows are normalized: rank is invariant under row scaling and
            // the iterates grow geometrically
            let m = nalgebra::DMatrix::<C64>::from_fn(j, cols, |i, k| {
                let n = rows[i].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                rows[i][k] / n
            });
            let sv = m.singular_values();
            let smax = sv.iter().cloned().fold(0.0, f64::max);
            sv.iter().filter(|&&s| s > threshold * smax).count()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub h_samples: Vec<f64>,
    pub threshold: f64,
    /// Rank of `{Mon^i Ψ_γ : i ≤ j}` for `j = 0..=max_iter`.
    pub ranks: Vec<usize>,
    /// Same sequence at other thresholds.
    pub sensitivity: BTreeMap<String, Vec<usize>>,
    /// Rank sequence of the iterates of `(Mon₂ − Id)²` on `1/(e^{−I_γ} − 1)`.
    pub reduced_ranks: Vec<usize>,
}

impl RankReport {
    pub fn strictly_increasing(ranks: &[usize]) -> bool {
        ranks.windows(2).all(|w| w[1] > w[0])
    }
}

pub const RANK_THRESHOLD: f64 = 1e-8;

/// Rank growth of the monodromy orbit of Ψ_γ on real samples in `(−2, 2)`,
/// using `Mon^i Ψ_γ = ψ(ρ(γ)ρ(δ)^i)`.
pub fn rank_growth(h_samples: &[f64], max_iter: usize, coeffs: &Coefficients, opts: &CycleOptions) -> Result<RankReport> {
    let exec_mode = opts.transport.execution;
    let per_sample = crate::exec::try_map(exec_mode, h_samples, |&h| {
        let cycles = EllipticCycles::new(h, opts)?;
        let rg = rho_with(&cycles.fib, &cycles.gamma, coeffs, exec_mode)?;
        let rd = rho_with(&cycles.fib, &cycles.delta, coeffs, exec_mode)?;
        let mut w = rg;
        let mut orbit = Vec::with_capacity(max_iter + 1);
        for _ in 0..=max_iter {
            ensure_in_s(&w)?;
            orbit.push(w.psi()?);
            w = w.multiply(&rd);
        }
        // (Mon − Id)^{2i} applied to g_0 where g_k = 1/(e^{−I_γ − k I_δ} − 1)
        let g: Vec<C64> = (0..=2 * max_iter)
            .map(|k| 1.0 / ((-(rg.exponent + rd.exponent * k as f64)).exp() - 1.0))
            .collect();
        let mut coef = vec![1.0f64];
        let mut reduced = Vec::with_capacity(max_iter + 1);
        for _ in 0..=max_iter {
            reduced.push(coef.iter().enumerate().map(|(k, c)| g[k] * *c).sum::<C64>());
            // multiply by (S − 1)² with S the shift k → k + 1
            let mut next = vec![0.0; coef.len() + 2];
            for (k, c) in coef.iter().enumerate() {
                next[k] += c;
                next[k + 1] -= 2.0 * c;
                next[k + 2] += c;
            }
            coef = next;
        }
        Ok((orbit, reduced))
    })?;
    let transpose = |pick: &dyn Fn(&(Vec<C64>, Vec<C64>)) -> &Vec<C64>| -> Vec<Vec<C64>> {
        (0..=max_iter).map(|i| per_sample.iter().map(|s| pick(s)[i]).collect()).collect()
    };
    let rows = transpose(&|s| &s.0);
    let reduced_rows = transpose(&|s| &s.1);
    let mut sensitivity = BTreeMap::new();
    for t in [1e-6, 1e-10] {
        sensitivity.insert(format!("{t:e}"), rank_sequence(&rows, t));
    }
    Ok(RankReport {
        h_samples: h_samples.to_vec(),
        threshold: RANK_THRESHOLD,
        ranks: rank_sequence(&rows, RANK_THRESHOLD),
        sensitivity,
        reduced_ranks: rank_sequence(&reduced_rows, RANK_THRESHOLD),
    })
}
