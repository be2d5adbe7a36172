//! Discretized loops on the level curves `E_h = {H = h}` and their transport
//! over the base `B = C \ Δ`.
//!
//! A [`FiberLoop`] stores its base point as sample 0; the closing segment
//! back to the base point is implicit. Consecutive samples are joined by the
//! short on-fiber arc that is a graph over x or y, so loop integrals only
//! see the homotopy class fixed by the sample spacing.
//!
//! Transport moves every sample by Newton projection along the conjugate
//! gradient, i.e. along the horizontal lift for the Hermitian metric. The
//! homotopy class is kept by step control (bounded per-step displacement
//! and sample spacing); it is not certified.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::ode::{refine_crossing, Dopri, OdeOptions};
use crate::poly::{Fibration, Point, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopControls {
    /// Largest allowed distance between consecutive samples.
    pub max_step: f64,
    /// Samples must keep `|∇H| ≥ min_grad`.
    pub min_grad: f64,
    /// Accepted `|H − h|` on stored samples.
    pub tol_fiber: f64,
    /// Target residual of Newton projection.
    pub proj_tol: f64,
    /// Base points closer than this are identified.
    pub tol_base: f64,
}

impl Default for LoopControls {
    fn default() -> Self {
        Self { max_step: 1e-2, min_grad: 1e-6, tol_fiber: 1e-10, proj_tol: 1e-12, tol_base: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportControls {
    pub loop_controls: LoopControls,
    pub base_step: f64,
    pub min_base_step: f64,
    pub execution: Execution,
}

impl Default for TransportControls {
    fn default() -> Self {
        Self {
            loop_controls: LoopControls::default(),
            base_step: 1e-2,
            min_base_step: 1e-8,
            execution: Execution::Parallel,
        }
    }
}

/// Closed discretized loop on `E_h`; `points[0]` is the base point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LoopJson", try_from = "LoopJson")]
pub struct FiberLoop {
    pub h: C64,
    pub points: Vec<Point>,
    pub tol_fiber: f64,
}

#[derive(Serialize, Deserialize)]
struct LoopJson {
    h: [f64; 2],
    points: Vec<[f64; 4]>,
}

impl From<FiberLoop> for LoopJson {
    fn from(l: FiberLoop) -> Self {
        LoopJson { h: [l.h.re, l.h.im], points: l.points.iter().map(|p| p.to_array()).collect() }
    }
}

impl TryFrom<LoopJson> for FiberLoop {
    type Error = Error;
    fn try_from(j: LoopJson) -> Result<Self> {
        FiberLoop::new(
            C64::new(j.h[0], j.h[1]),
            j.points.into_iter().map(Point::from_array).collect(),
            LoopControls::default().tol_fiber,
        )
    }
}

impl FiberLoop {
    pub fn new(h: C64, points: Vec<Point>, tol_fiber: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("a loop needs at least one sample".into()));
        }
        Ok(Self { h, points, tol_fiber })
    }

    /// The constant loop at `base`.
    pub fn trivial(h: C64, base: Point) -> Self {
        Self { h, points: vec![base], tol_fiber: LoopControls::default().tol_fiber }
    }

    pub fn base(&self) -> Point {
        self.points[0]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Segments `(p_k, p_{k+1})`, including the closing one.
    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        (0..n).map(move |k| (self.points[k], self.points[(k + 1) % n]))
    }

    pub fn max_residual(&self, fib: &Fibration) -> f64 {
        self.points.iter().map(|p| (fib.value(*p) - self.h).norm()).fold(0.0, f64::max)
    }

    pub fn max_spacing(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(&b)).fold(0.0, f64::max)
    }

    pub fn min_grad(&self, fib: &Fibration) -> f64 {
        self.points.iter().map(|p| fib.grad_norm(*p)).fold(f64::INFINITY, f64::min)
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(&b)).sum()
    }

    /// Checks the fiber, spacing and regularity invariants.
    pub fn validate(&self, fib: &Fibration, controls: &LoopControls) -> Result<()> {
        let r = self.max_residual(fib);
        if r > self.tol_fiber {
            return Err(Error::ProjectionDiverged { residual: r });
        }
        let g = self.min_grad(fib);
        if g < controls.min_grad {
            return Err(Error::HitCritical { grad: g });
        }
        let s = self.max_spacing();
        if s > controls.max_step * (1.0 + 1e-9) {
            return Err(Error::InvalidInput(format!("sample spacing {s:.3e} exceeds max_step")));
        }
        Ok(())
    }

    /// Segment closest to `q`: `(index, parameter, distance)`.
    pub fn nearest_segment(&self, q: &Point) -> (usize, f64, f64) {
        let mut best = (0, 0.0, f64::INFINITY);
        for (k, (a, b)) in self.segments().enumerate() {
            let d = b - a;
            let dd = d.x.norm_sqr() + d.y.norm_sqr();
            let s = if dd > 0.0 {
                let w = *q - a;
                ((w.x * d.x.conj() + w.y * d.y.conj()).re / dd).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let dist = a.lerp(&b, s).dist(q);
            if dist < best.2 {
                best = (k, s, dist);
            }
        }
        best
    }

    /// Path along the loop from the base point to `q`, which must lie on the
    /// loop's trace. `forward` follows the loop orientation.
    pub fn arc_to(&self, q: Point, forward: bool) -> Vec<Point> {
        let (k, _, _) = self.nearest_segment(&q);
        let n = self.points.len();
        let mut out = Vec::new();
        if forward {
            out.extend_from_slice(&self.points[..=k]);
        } else {
            out.push(self.points[0]);
            let mut j = n - 1;
            while j > k {
                out.push(self.points[j]);
                j -= 1;
            }
        }
        if out.last().is_some_and(|p| p.dist(&q) > 0.0) {
            out.push(q);
        }
        out
    }

    /// Moves the base point along the loop to `q` (projected onto the fiber).
    pub fn rotate_to(&self, fib: &Fibration, q: Point, controls: &LoopControls) -> Result<FiberLoop> {
        let q = project_to_fiber(fib, q, self.h, controls.proj_tol)?;
        let (k, _, dist) = self.nearest_segment(&q);
        if dist > controls.max_step {
            return Err(Error::InvalidInput(format!("point is {dist:.3e} away from the loop")));
        }
        let n = self.points.len();
        let mut pts = Vec::with_capacity(n + 1);
        pts.push(q);
        let next = (k + 1) % n;
        let mut j = next;
        loop {
            if !(j == next && self.points[j].dist(&q) < 1e-14) {
                pts.push(self.points[j]);
            }
            if j == k {
                break;
            }
            j = (j + 1) % n;
        }
        if pts.len() > 1 && pts.last().unwrap().dist(&q) < 1e-14 {
            pts.pop();
        }
        FiberLoop::new(self.h, pts, self.tol_fiber)
    }

    /// Splits every segment into `factor` pieces, projected onto the fiber.
    pub fn subdivided(&self, fib: &Fibration, factor: usize, controls: &LoopControls) -> Result<FiberLoop> {
        let factor = factor.max(1);
        let mut pts = Vec::with_capacity(self.points.len() * factor);
        for (a, b) in self.segments() {
            pts.push(a);
            for i in 1..factor {
                let m = a.lerp(&b, i as f64 / factor as f64);
                pts.push(project_to_fiber(fib, m, self.h, controls.proj_tol)?);
            }
        }
        FiberLoop::new(self.h, pts, self.tol_fiber)
    }
}

/// Path in the base B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PathJson", try_from = "PathJson")]
pub struct BasePath {
    pub samples: Vec<C64>,
    pub closed: bool,
}

#[derive(Serialize, Deserialize)]
struct PathJson {
    samples: Vec<[f64; 2]>,
    #[serde(default)]
    closed: bool,
}

impl From<BasePath> for PathJson {
    fn from(p: BasePath) -> Self {
        PathJson { samples: p.samples.iter().map(|z| [z.re, z.im]).collect(), closed: p.closed }
    }
}

impl TryFrom<PathJson> for BasePath {
    type Error = Error;
    fn try_from(j: PathJson) -> Result<Self> {
        if j.samples.is_empty() {
            return Err(Error::InvalidInput("empty base path".into()));
        }
        Ok(BasePath { samples: j.samples.into_iter().map(|a| C64::new(a[0], a[1])).collect(), closed: j.closed })
    }
}

impl BasePath {
    pub fn segment(a: C64, b: C64) -> Self {
        Self { samples: vec![a, b], closed: false }
    }

    pub fn polyline(samples: Vec<C64>) -> Self {
        let closed = samples.len() > 1 && (samples[0] - samples[samples.len() - 1]).norm() == 0.0;
        Self { samples, closed }
    }

    /// Closed path from `h0`: radially to the circle `|h − center| = radius`,
    /// `turns` full counter-clockwise turns (negative = clockwise), and back.
    pub fn around(h0: C64, center: C64, radius: f64, turns: i32, samples_per_turn: usize) -> Self {
        let d = h0 - center;
        let dir = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        let start = center + dir * radius;
        let mut s = vec![h0];
        if (start - h0).norm() > 0.0 {
            s.push(start);
        }
        let n = samples_per_turn.max(8) * turns.unsigned_abs() as usize;
        let sign = if turns >= 0 { 1.0 } else { -1.0 };
        for k in 1..=n {
            let th = sign * std::f64::consts::TAU * k as f64 / samples_per_turn.max(8) as f64;
            s.push(center + dir * radius * C64::from_polar(1.0, th));
        }
        if (start - h0).norm() > 0.0 {
            *s.last_mut().unwrap() = start;
            s.push(h0);
        } else {
            *s.last_mut().unwrap() = h0;
        }
        Self { samples: s, closed: true }
    }

    pub fn reversed(&self) -> Self {
        let mut s = self.samples.clone();
        s.reverse();
        Self { samples: s, closed: self.closed }
    }

    pub fn start(&self) -> C64 {
        self.samples[0]
    }

    pub fn end(&self) -> C64 {
        *self.samples.last().unwrap()
    }

    /// Smallest distance from the refined path to a critical value.
    pub fn clearance(&self, critical_values: &[C64], base_step: f64) -> f64 {
        self.refined(base_step)
            .iter()
            .flat_map(|h| critical_values.iter().map(move |c| (h - c).norm()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Samples with consecutive distance at most `base_step`.
    pub fn refined(&self, base_step: f64) -> Vec<C64> {
        let mut out = vec![self.samples[0]];
        for w in self.samples.windows(2) {
            let n = ((w[1] - w[0]).norm() / base_step).ceil().max(1.0) as usize;
            for i in 1..=n {
                out.push(w[0] + (w[1] - w[0]) * (i as f64 / n as f64));
            }
        }
        out
    }
}

fn residual_floor(fib: &Fibration, p: Point, h: C64) -> (C64, f64) {
    let (v, scale) = fib.h.eval_with_scale(p);
    (v - h, 64.0 * f64::EPSILON * (scale + h.norm()))
}

/// Newton projection of `pt` onto `E_h` along the conjugate gradient.
pub fn project_to_fiber(fib: &Fibration, pt: Point, h: C64, tol: f64) -> Result<Point> {
    project_counted(fib, pt, h, tol, 25).map(|(p, _)| p)
}

fn project_counted(fib: &Fibration, pt: Point, h: C64, tol: f64, max_iter: usize) -> Result<(Point, usize)> {
    let mut p = pt;
    let mut res = f64::INFINITY;
    for it in 0..=max_iter {
        let (r, floor) = residual_floor(fib, p, h);
        res = r.norm();
        if res <= tol.max(floor) {
            return Ok((p, it));
        }
        if it == max_iter {
            break;
        }
        let (gx, gy) = fib.grad(p);
        let n = gx.norm_sqr() + gy.norm_sqr();
        if !(n > 0.0) || !n.is_finite() {
            break;
        }
        p = Point::new(p.x - r * gx.conj() / n, p.y - r * gy.conj() / n);
    }
    Err(Error::ProjectionDiverged { residual: res })
}

/// Inserts projected chord points wherever the spacing exceeds `max_step`.
fn refine_spacing(fib: &Fibration, h: C64, pts: Vec<Point>, controls: &LoopControls) -> Result<Vec<Point>> {
    let mut pts = pts;
    for _ in 0..30 {
        let n = pts.len();
        if n < 2 && pts.iter().all(|_| true) && n == 1 {
            return Ok(pts);
        }
        let mut out = Vec::with_capacity(n + n / 4);
        let mut changed = false;
        for k in 0..n {
            let a = pts[k];
            let b = pts[(k + 1) % n];
            out.push(a);
            let d = a.dist(&b);
            if d > controls.max_step {
                let m = (d / controls.max_step).ceil() as usize;
                for i in 1..m {
                    let c = a.lerp(&b, i as f64 / m as f64);
                    out.push(project_to_fiber(fib, c, h, controls.proj_tol)?);
                }
                changed = true;
            }
        }
        pts = out;
        if !changed {
            return Ok(pts);
        }
    }
    Err(Error::ProjectionDiverged { residual: f64::NAN })
}

/// Drops interior samples whose neighbours are already close; the base point
/// is never removed.
fn coarsen(pts: Vec<Point>, max_step: f64) -> Vec<Point> {
    if pts.len() < 8 {
        return pts;
    }
    let n = pts.len();
    let mut out = Vec::with_capacity(n);
    out.push(pts[0]);
    let mut k = 1;
    while k < n {
        let next = if k + 1 < n { pts[k + 1] } else { pts[0] };
        let prev = *out.last().unwrap();
        if k + 1 < n && prev.dist(&next) <= 0.5 * max_step {
            k += 1;
            continue;
        }
        out.push(pts[k]);
        k += 1;
    }
    out
}

/// Result of [`trace_real_oval_detailed`].
#[derive(Debug, Clone)]
pub struct OvalTrace {
    pub lp: FiberLoop,
    pub arclength: f64,
    /// Distance between the traced end point and the start point.
    pub closure_residual: f64,
}

/// Traces the compact real oval of a real `H` through `start_hint`, following
/// the Hamiltonian field `(H_y, −H_x)`.
pub fn trace_real_oval(
    fib: &Fibration,
    h: f64,
    start_hint: (f64, f64),
    n_points: usize,
    controls: &LoopControls,
) -> Result<FiberLoop> {
    trace_real_oval_detailed(fib, h, start_hint, n_points, controls).map(|t| t.lp)
}

pub fn trace_real_oval_detailed(
    fib: &Fibration,
    h: f64,
    start_hint: (f64, f64),
    n_points: usize,
    controls: &LoopControls,
) -> Result<OvalTrace> {
    if !fib.h.is_real() {
        return Err(Error::InvalidInput("real oval tracing needs a real polynomial".into()));
    }
    if n_points < 3 {
        return Err(Error::InvalidInput("need at least 3 points".into()));
    }
    let hc = C64::new(h, 0.0);
    let p0 = project_to_fiber(fib, Point::real(start_hint.0, start_hint.1), hc, controls.proj_tol)?;
    let (x0, y0) = (p0.x.re, p0.y.re);
    let grad_floor = controls.min_grad;
    let hit = std::cell::Cell::new(f64::INFINITY);
    let field = |_s: f64, z: &[f64; 2]| {
        let p = Point::real(z[0], z[1]);
        let (gx, gy) = fib.grad(p);
        let n = (gx.re * gx.re + gy.re * gy.re).sqrt();
        hit.set(hit.get().min(n));
        [gy.re / n, -gx.re / n]
    };
    let opts = OdeOptions { rtol: 1e-13, atol: 1e-13, h_init: 1e-3, h_max: 0.05, max_steps: 2_000_000 };
    let v0 = field(0.0, &[x0, y0]);
    let section = |z: &[f64; 2]| v0[0] * (z[0] - x0) + v0[1] * (z[1] - y0);

    let max_length = 1e3;
    let mut ode = Dopri::new(field, 0.0, [x0, y0], opts);
    let mut left = false;
    let length;
    loop {
        let (s_prev, z_prev) = (ode.t, ode.y);
        let g_prev = section(&z_prev);
        let step = ode.step(f64::INFINITY)?;
        if hit.get() < grad_floor {
            return Err(Error::HitCritical { grad: hit.get() });
        }
        if ode.t > max_length {
            return Err(Error::NotClosed { max_length });
        }
        let g = section(&ode.y);
        let far = ((ode.y[0] - x0).powi(2) + (ode.y[1] - y0).powi(2)).sqrt();
        if !left {
            left = far > 10.0 * step.max(1e-6);
            continue;
        }
        if g_prev < 0.0 && g >= 0.0 && far < 0.25 {
            let f = |s: f64, z: &[f64; 2]| field(s, z);
            let (s_cross, z_cross) = refine_crossing(&f, &section, s_prev, &z_prev, step, 1e-15);
            let miss = ((z_cross[0] - x0).powi(2) + (z_cross[1] - y0).powi(2)).sqrt();
            if miss < 1e-6 {
                length = s_cross;
                break;
            }
        }
    }

    // second pass: uniform arclength samples
    let mut ode = Dopri::new(field, 0.0, [x0, y0], opts);
    let mut pts = Vec::with_capacity(n_points);
    pts.push(p0);
    for k in 1..n_points {
        ode.advance_to(length * k as f64 / n_points as f64)?;
        let q = project_to_fiber(fib, Point::real(ode.y[0], ode.y[1]), hc, controls.proj_tol)?;
        ode.y = [q.x.re, q.y.re];
        pts.push(q);
    }
    ode.advance_to(length)?;
    let closure_residual = ((ode.y[0] - x0).powi(2) + (ode.y[1] - y0).powi(2)).sqrt();
    let pts = refine_spacing(fib, hc, pts, controls)?;
    let lp = FiberLoop::new(hc, pts, controls.tol_fiber)?;
    Ok(OvalTrace { lp, arclength: length, closure_residual })
}

/// `M` with `vᵀ S v = w₁² + w₂²` for `v = M w`, where `S` is half the Hessian.
fn morse_frame(hess: [[C64; 2]; 2]) -> Result<[[C64; 2]; 2]> {
    let s = [[hess[0][0] * 0.5, hess[0][1] * 0.5], [hess[1][0] * 0.5, hess[1][1] * 0.5]];
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let scale = s.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    if !(scale > 0.0) || det.norm() <= 1e-10 * scale * scale {
        return Err(Error::DegenerateHessian { det: det.norm() });
    }
    // real rotation making the leading entry large
    let mut best = (0.0, -1.0);
    for k in 0..8 {
        let th = std::f64::consts::PI * k as f64 / 8.0;
        let (c, sn) = (th.cos(), th.sin());
        let a = s[0][0] * c * c + (s[0][1] + s[1][0]) * c * sn + s[1][1] * sn * sn;
        if a.norm() > best.1 * 1.5 {
            best = (th, a.norm());
        }
        if k == 0 && a.norm() >= 0.25 * scale {
            break;
        }
    }
    let (c, sn) = (best.0.cos(), best.0.sin());
    let r = [[c, -sn], [sn, c]];
    // S' = Rᵀ S R
    let mut sp = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    sp[i][j] += s[k][l] * r[k][i] * r[l][j];
                }
            }
        }
    }
    let a = sp[0][0];
    let b = sp[0][1];
    let d2 = sp[1][1] - b * b / a;
    let (ra, rd) = (a.sqrt(), d2.sqrt());
    let m_prime = [[C64::new(1.0, 0.0) / ra, -(b / a) / rd], [C64::new(0.0, 0.0), C64::new(1.0, 0.0) / rd]];
    let mut m = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                m[i][j] += m_prime[k][j] * r[i][k];
            }
        }
    }
    Ok(m)
}

/// Loop vanishing at the Morse point `crit_pt` as `h → crit_val`.
///
/// The Morse circle is built at `h` when `|h − crit_val| ≤ radius`;
/// otherwise at distance `radius` from `crit_val` on the ray towards `h`,
/// and then transported along that ray to `h`.
pub fn vanishing_cycle(
    fib: &Fibration,
    crit_pt: Point,
    crit_val: C64,
    h: C64,
    radius: f64,
    n_points: usize,
    controls: &TransportControls,
) -> Result<FiberLoop> {
    if n_points < 3 {
        return Err(Error::InvalidInput("need at least 3 points".into()));
    }
    let dh = h - crit_val;
    if dh.norm() == 0.0 {
        return Err(Error::InvalidInput("h equals the critical value".into()));
    }
    let h_m = if dh.norm() <= radius { h } else { crit_val + dh * (radius / dh.norm()) };
    let m = morse_frame(fib.hessian(crit_pt))?;
    let r = (h_m - crit_val).sqrt();
    let lc = &controls.loop_controls;
    let circle: Vec<Point> = (0..n_points)
        .map(|k| {
            let xi = std::f64::consts::TAU * k as f64 / n_points as f64;
            let (w1, w2) = (r * xi.cos(), r * xi.sin());
            Point::new(crit_pt.x + m[0][0] * w1 + m[0][1] * w2, crit_pt.y + m[1][0] * w1 + m[1][1] * w2)
        })
        .collect();
    let pts = exec::try_map(controls.execution, &circle, |&p| project_to_fiber(fib, p, h_m, lc.proj_tol))?;
    for (a, b) in circle.iter().zip(&pts) {
        // the correction must stay small against the circle size
        if a.dist(b) > 0.5 * r.norm() * m_norm(&m) {
            return Err(Error::ProjectionDiverged { residual: a.dist(b) });
        }
    }
    let pts = refine_spacing(fib, h_m, pts, lc)?;
    let lp = FiberLoop::new(h_m, pts, lc.tol_fiber)?;
    if h_m == h {
        return Ok(lp);
    }
    transport_loop(fib, &lp, &BasePath::segment(h_m, h), controls)
}

fn m_norm(m: &[[C64; 2]; 2]) -> f64 {
    m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn transport_step(
    fib: &Fibration,
    pts: &[Point],
    h_from: C64,
    h_to: C64,
    controls: &TransportControls,
) -> Result<Vec<Point>> {
    let lc = &controls.loop_controls;
    let dh = h_to - h_from;
    exec::try_map(controls.execution, pts, |&p| {
        let (gx, gy) = fib.grad(p);
        let n = gx.norm_sqr() + gy.norm_sqr();
        if n.sqrt() < lc.min_grad {
            return Err(Error::HitCritical { grad: n.sqrt() });
        }
        let pred = Point::new(p.x + dh * gx.conj() / n, p.y + dh * gy.conj() / n);
        let (q, iters) = project_counted(fib, pred, h_to, lc.proj_tol, 8)?;
        if iters > 6 || q.dist(&p) > 5.0 * lc.max_step {
            return Err(Error::ProjectionDiverged { residual: q.dist(&p) });
        }
        let g = fib.grad_norm(q);
        if g < lc.min_grad {
            return Err(Error::HitCritical { grad: g });
        }
        Ok(q)
    })
}

fn transport_interval(
    fib: &Fibration,
    pts: Vec<Point>,
    h_from: C64,
    h_to: C64,
    controls: &TransportControls,
) -> Result<Vec<Point>> {
    let lc = &controls.loop_controls;
    match transport_step(fib, &pts, h_from, h_to, controls) {
        Ok(next) => {
            let next = refine_spacing(fib, h_to, next, lc)?;
            Ok(coarsen(next, lc.max_step))
        }
        Err(e @ Error::HitCritical { .. }) => Err(e),
        Err(e) => {
            if (h_to - h_from).norm() * 0.5 < controls.min_base_step {
                return Err(e);
            }
            let mid = (h_from + h_to) * 0.5;
            let half = transport_interval(fib, pts, h_from, mid, controls)?;
            transport_interval(fib, half, mid, h_to, controls)
        }
    }
}

/// Carries `lp` along `path`; the result lies on the fiber over the end of
/// the path. For a closed path this realizes the monodromy action, with the
/// base point moved along its own horizontal lift.
pub fn transport_loop(fib: &Fibration, lp: &FiberLoop, path: &BasePath, controls: &TransportControls) -> Result<FiberLoop> {
    if (path.start() - lp.h).norm() > 1e-12 * lp.h.norm().max(1.0) {
        return Err(Error::InvalidInput("base path must start at the loop's h".into()));
    }
    let hs = path.refined(controls.base_step);
    let mut pts = lp.points.clone();
    for w in hs.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        pts = transport_interval(fib, pts, w[0], w[1], controls)?;
    }
    let end = path.end();
    if hs.len() < 2 || hs.windows(2).all(|w| w[0] == w[1]) {
        // constant path: re-project only
        let lc = &controls.loop_controls;
        pts = exec::try_map(controls.execution, &pts, |&p| project_to_fiber(fib, p, end, lc.proj_tol))?;
    }
    FiberLoop::new(end, pts, lp.tol_fiber)
}

/// `g1` followed by `g2`; both must share `h` and the base point.
pub fn compose_loops(g1: &FiberLoop, g2: &FiberLoop, tol_base: f64) -> Result<FiberLoop> {
    if (g1.h - g2.h).norm() > 1e-12 * g1.h.norm().max(1.0) {
        return Err(Error::InvalidInput("loops lie on different fibers".into()));
    }
    let d = g1.base().dist(&g2.base());
    if d > tol_base {
        return Err(Error::BasePointMismatch { distance: d });
    }
    let mut pts = g1.points.clone();
    pts.push(g1.base());
    pts.extend_from_slice(&g2.points[1..]);
    if pts.len() > 1 && pts[pts.len() - 1] == pts[0] {
        pts.pop();
    }
    // collapse the doubled base point when g1 is trivial
    if g1.points.len() == 1 {
        pts.remove(0);
    }
    FiberLoop::new(g1.h, pts, g1.tol_fiber.max(g2.tol_fiber))
}

/// Same loop traversed backwards from the same base point.
pub fn invert_loop(g: &FiberLoop) -> FiberLoop {
    let mut pts = Vec::with_capacity(g.points.len());
    pts.push(g.points[0]);
    pts.extend(g.points[1..].iter().rev());
    FiberLoop { h: g.h, points: pts, tol_fiber: g.tol_fiber }
}

/// `g1 · g2 · g1⁻¹ · g2⁻¹`.
pub fn commutator_loop(g1: &FiberLoop, g2: &FiberLoop, tol_base: f64) -> Result<FiberLoop> {
    let a = compose_loops(g1, g2, tol_base)?;
    let b = compose_loops(&a, &invert_loop(g1), tol_base)?;
    compose_loops(&b, &invert_loop(g2), tol_base)
}

/// Conjugates `g` by an in-fiber `connector` running from the new base point
/// to `g`'s base point: the result is `connector · g · connector⁻¹`.
pub fn rebase_loop(fib: &Fibration, g: &FiberLoop, connector: &[Point], controls: &LoopControls) -> Result<FiberLoop> {
    let Some(last) = connector.last() else {
        return Err(Error::InvalidInput("empty connector".into()));
    };
    let d = last.dist(&g.base());
    if d > controls.tol_base {
        return Err(Error::BasePointMismatch { distance: d });
    }
    for p in connector {
        let r = (fib.value(*p) - g.h).norm();
        if r > controls.tol_fiber {
            return Err(Error::ConnectorOffFiber { residual: r });
        }
    }
    for w in connector.windows(2) {
        if w[0].dist(&w[1]) > controls.max_step * (1.0 + 1e-9) {
            return Err(Error::InvalidInput("connector spacing exceeds max_step".into()));
        }
    }
    let m = connector.len() - 1;
    if m == 0 {
        return Ok(g.clone());
    }
    let mut pts = Vec::with_capacity(g.points.len() + 2 * m + 1);
    pts.extend_from_slice(&connector[..m]);
    pts.extend_from_slice(&g.points);
    pts.push(g.base());
    pts.extend(connector[1..m].iter().rev());
    FiberLoop::new(g.h, pts, g.tol_fiber)
}

/// Short in-fiber path from `a` to `b`: the projected chord, sampled at
/// `max_step`. Only meaningful when `a` and `b` are close.
pub fn chord_connector(fib: &Fibration, a: Point, b: Point, h: C64, controls: &LoopControls) -> Result<Vec<Point>> {
    let n = (a.dist(&b) / controls.max_step).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(n + 1);
    out.push(a);
    for i in 1..n {
        out.push(project_to_fiber(fib, a.lerp(&b, i as f64 / n as f64), h, controls.proj_tol)?);
    }
    out.push(b);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{elliptic_hamiltonian, BivariatePoly};

    fn circle_fib() -> Fibration {
        Fibration::new(BivariatePoly::from_real(&[(2, 0, 1.0), (0, 2, 1.0)]))
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn projection_examples() {
        let fib = circle_fib();
        let on = Point::real(0.6, 0.8);
        assert_eq!(project_to_fiber(&fib, on, c(1.0, 0.0), 1e-12).unwrap(), on);
        let p = project_to_fiber(&fib, Point::real(1.0 + 1e-3, 0.0), c(1.0, 0.0), 1e-12).unwrap();
        assert!(p.dist(&Point::real(1.0, 0.0)) < 1e-12);

        let ell = Fibration::elliptic();
        let h = c(0.7, 0.2);
        let x = c(0.3, -0.4);
        let y = (h + x * x * x - x * 3.0).sqrt();
        let q = project_to_fiber(&ell, Point::new(x + 1e-4, y - 1e-4), h, 1e-12).unwrap();
        assert!((ell.value(q) - h).norm() <= 1e-12);
    }

    #[test]
    fn projection_fails_at_critical_point() {
        let fib = circle_fib();
        assert!(matches!(
            project_to_fiber(&fib, Point::real(0.0, 0.0), c(1.0, 0.0), 1e-12),
            Err(Error::ProjectionDiverged { .. })
        ));
    }

    #[test]
    fn unit_circle_trace() {
        let fib = circle_fib();
        let t = trace_real_oval_detailed(&fib, 1.0, (1.2, 0.0), 400, &LoopControls::default()).unwrap();
        assert!((t.arclength - std::f64::consts::TAU).abs() < 1e-9);
        assert!(t.closure_residual < 1e-9);
        for p in &t.lp.points {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
        // flow (2y, -2x) is clockwise: second sample below the start (1, 0)
        assert!(t.lp.points[1].y.re < 0.0);
    }

    #[test]
    fn elliptic_oval_bounds() {
        let fib = Fibration::elliptic();
        let lp = trace_real_oval(&fib, 0.0, (-1.0, 1.0), 800, &LoopControls::default()).unwrap();
        let xmin = lp.points.iter().map(|p| p.x.re).fold(f64::INFINITY, f64::min);
        let xmax = lp.points.iter().map(|p| p.x.re).fold(f64::NEG_INFINITY, f64::max);
        // extremal samples sit within O(spacing²) of the branch points
        assert!((xmin + 3f64.sqrt()).abs() < 1e-3, "{xmin}");
        assert!(xmax.abs() < 1e-3, "{xmax}");
        assert!(lp.max_residual(&fib) <= 1e-10);
        assert!(lp.max_spacing() <= 1e-2 + 1e-12);
    }

    #[test]
    fn near_saddle_oval_closes() {
        let fib = Fibration::elliptic();
        let t = trace_real_oval_detailed(&fib, 1.9, (-1.0, 1.0), 1000, &LoopControls::default()).unwrap();
        assert!(t.closure_residual <= 1e-10, "{}", t.closure_residual);
    }

    #[test]
    fn vanishing_cycle_scaling() {
        let fib = Fibration::elliptic();
        let tc = TransportControls::default();
        let crit = Point::real(1.0, 0.0);
        let diam = |h: f64| {
            let lp = vanishing_cycle(&fib, crit, c(2.0, 0.0), c(h, 0.0), 0.1, 64, &tc).unwrap();
            assert!(lp.max_residual(&fib) <= 1e-10);
            lp.points.iter().map(|p| p.dist(&crit)).fold(0.0, f64::max)
        };
        let d1 = diam(1.99);
        let d2 = diam(1.9999);
        assert!(d1 > 0.03 && d1 < 0.2, "{d1}");
        assert!((d1 / d2 / 10.0 - 1.0).abs() < 0.05, "{}", d1 / d2);
    }

    #[test]
    fn morse_circle_is_exact_for_quadratic() {
        let fib = circle_fib();
        let eps = 1e-2;
        let lp = vanishing_cycle(&fib, Point::default(), c(0.0, 0.0), c(eps, 0.0), 1.0, 32, &TransportControls::default())
            .unwrap();
        for p in &lp.points {
            assert!((p.norm() - eps.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_hessian_rejected() {
        let fib = Fibration::new(BivariatePoly::from_real(&[(3, 0, 1.0), (0, 2, 1.0)]));
        let r = vanishing_cycle(&fib, Point::default(), c(0.0, 0.0), c(0.01, 0.0), 1.0, 32, &TransportControls::default());
        assert!(matches!(r, Err(Error::DegenerateHessian { .. })));
    }

    #[test]
    fn loop_algebra() {
        let fib = Fibration::new(elliptic_hamiltonian());
        let g = trace_real_oval(&fib, 0.5, (-1.0, 1.0), 200, &LoopControls::default()).unwrap();
        assert_eq!(invert_loop(&invert_loop(&g)), g);
        let t = FiberLoop::trivial(g.h, g.base());
        assert_eq!(compose_loops(&g, &t, 1e-9).unwrap().points, g.points);
        assert_eq!(compose_loops(&t, &g, 1e-9).unwrap().points, g.points);
        let mut shifted = g.clone();
        shifted.points.rotate_left(3);
        assert!(matches!(compose_loops(&g, &shifted, 1e-9), Err(Error::BasePointMismatch { .. })));
        assert_eq!(rebase_loop(&fib, &g, &[g.base()], &LoopControls::default()).unwrap(), g);
        let bad = [Point::real(5.0, 5.0), g.base()];
        assert!(matches!(
            rebase_loop(&fib, &g, &bad, &LoopControls::default()),
            Err(Error::ConnectorOffFiber { .. })
        ));
    }

    #[test]
    fn base_path_around() {
        let p = BasePath::around(c(1.5, 0.0), c(2.0, 0.0), 0.25, 1, 64);
        assert_eq!(p.start(), c(1.5, 0.0));
        assert_eq!(p.end(), c(1.5, 0.0));
        assert!(p.samples.iter().skip(2).take(60).all(|h| ((h - 2.0).norm() - 0.25).abs() < 1e-12));
        assert!(p.clearance(&[c(2.0, 0.0), c(-2.0, 0.0)], 1e-2) >= 0.249);
    }

    #[test]
    fn constant_path_keeps_loop() {
        let fib = Fibration::elliptic();
        let g = trace_real_oval(&fib, 0.5, (-1.0, 1.0), 300, &LoopControls::default()).unwrap();
        let t = transport_loop(&fib, &g, &BasePath::segment(g.h, g.h), &TransportControls::default()).unwrap();
        assert_eq!(t.len(), g.len());
        for (a, b) in t.points.iter().zip(&g.points) {
            assert!(a.dist(b) <= 1e-10);
        }
    }

    #[test]
    fn json_loop_round_trip() {
        let l = FiberLoop::new(c(1.0, 0.5), vec![Point::new(c(1.0, 2.0), c(3.0, 4.0))], 1e-10).unwrap();
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(s, r#"{"h":[1.0,0.5],"points":[[1.0,2.0,3.0,4.0]]}"#);
        let back: FiberLoop = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
    }
}
