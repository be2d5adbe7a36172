//! Adaptive Dormand–Prince 5(4) integrator with section-crossing detection.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-11, atol: 1e-12, h_init: 1e-3, h_max: 0.1, max_steps: 2_000_000 }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Single Dormand–Prince step; returns the 5th-order solution and the
/// embedded error estimate.
pub fn dopri_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> ([f64; N], [f64; N])
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, y);
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k[s] = f(t + C[s] * h, &ys);
    }
    let mut out = *y;
    let mut err = [0.0; N];
    for s in 0..7 {
        for i in 0..N {
            out[i] += h * B[s] * k[s][i];
            err[i] += h * E[s] * k[s][i];
        }
    }
    (out, err)
}

/// Stateful adaptive integrator.
pub struct Dopri<const N: usize, F> {
    f: F,
    opts: OdeOptions,
    pub t: f64,
    pub y: [f64; N],
    h: f64,
    steps: usize,
}

impl<const N: usize, F> Dopri<N, F>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    pub fn new(f: F, t0: f64, y0: [f64; N], opts: OdeOptions) -> Self {
        Self { f, opts, t: t0, y: y0, h: opts.h_init, steps: 0 }
    }

    pub fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N] {
        (self.f)(t, y)
    }

    fn error_norm(&self, y0: &[f64; N], y1: &[f64; N], err: &[f64; N]) -> f64 {
        let mut acc = 0.0;
        for i in 0..N {
            let sc = self.opts.atol + self.opts.rtol * y0[i].abs().max(y1[i].abs());
            acc += (err[i] / sc).powi(2);
        }
        (acc / N as f64).sqrt()
    }

    /// Takes one accepted step not exceeding `h_cap`; returns the step size used.
    pub fn step(&mut self, h_cap: f64) -> Result<f64> {
        loop {
            self.steps += 1;
            if self.steps > self.opts.max_steps {
                return Err(Error::NoReturn { max_time: self.t });
            }
            let h = self.h.min(h_cap).min(self.opts.h_max);
            let (y1, err) = dopri_step(&self.f, self.t, &self.y, h);
            let en = self.error_norm(&self.y, &y1, &err);
            if !en.is_finite() {
                self.h = h * 0.1;
                if self.h < 1e-14 {
                    return Err(Error::NoReturn { max_time: self.t });
                }
                continue;
            }
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            if en <= 1.0 {
                self.t += h;
                self.y = y1;
                if h >= self.h.min(self.opts.h_max) * 0.999 || fac < 1.0 {
                    self.h = h * fac;
                }
                return Ok(h);
            }
            self.h = h * fac;
            if self.h < 1e-14 {
                return Err(Error::NoReturn { max_time: self.t });
            }
        }
    }

    /// Advances exactly to `t_end`.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while t_end - self.t > 1e-15 * t_end.abs().max(1.0) {
            self.step(t_end - self.t)?;
        }
        self.t = t_end;
        Ok(())
    }
}

/// Refines a sign change of `g` inside a step from `(t0, y0)` of size `h` by
/// the Illinois variant of regula falsi, re-stepping from `(t0, y0)`.
pub fn refine_crossing<const N: usize, F, G>(
    f: &F,
    g: &G,
    t0: f64,
    y0: &[f64; N],
    h: f64,
    pos_tol: f64,
) -> (f64, [f64; N])
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(&[f64; N]) -> f64,
{
    let (mut a, mut ga) = (0.0, g(y0));
    let y_end = dopri_step(f, t0, y0, h).0;
    let (mut b, mut gb) = (h, g(&y_end));
    let mut best = (h, y_end);
    let mut side = 0i32;
    for _ in 0..200 {
        let tau = if gb != ga { (a * gb - b * ga) / (gb - ga) } else { 0.5 * (a + b) };
        let tau = tau.clamp(a.min(b), a.max(b));
        let y = dopri_step(f, t0, y0, tau).0;
        let gt = g(&y);
        best = (tau, y);
        if gt.abs() <= pos_tol || (b - a).abs() <= 1e-16 * h.abs().max(1.0) {
            break;
        }
        if gt.signum() == gb.signum() {
            b = tau;
            gb = gt;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            a = tau;
            ga = gt;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
    }
    (t0 + best.0, best.1)
}
