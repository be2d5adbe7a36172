//! The group of upper-triangular matrices
//!
//! ```text
//! [ e^{-I/2}  a         b        ]
//! [ 0         e^{I/2}   c        ]
//! [ 0         0         e^{-I/2} ]
//! ```
//!
//! stored by the exponent `I` itself, so products add exponents exactly and
//! no square-root branch is ever chosen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fiber::FiberLoop;
use crate::ham_time::{is_resonant, Coefficients, LoopQuadrature, TOL_RESONANCE};
use crate::poly::{Fibration, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriMatrix {
    #[serde(rename = "I")]
    pub exponent: C64,
    pub a: C64,
    pub b: C64,
    pub c: C64,
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl TriMatrix {
    pub fn new(exponent: C64, a: C64, b: C64, c: C64) -> Self {
        Self { exponent, a, b, c }
    }

    pub fn identity() -> Self {
        Self::new(zero(), zero(), zero(), zero())
    }

    pub fn diagonal(exponent: C64) -> Self {
        Self::new(exponent, zero(), zero(), zero())
    }

    pub fn multiply(&self, o: &TriMatrix) -> TriMatrix {
        let (m1, p1) = ((-self.exponent * 0.5).exp(), (self.exponent * 0.5).exp());
        let (m2, p2) = ((-o.exponent * 0.5).exp(), (o.exponent * 0.5).exp());
        TriMatrix {
            exponent: self.exponent + o.exponent,
            a: m1 * o.a + self.a * p2,
            c: p1 * o.c + self.c * m2,
            b: m1 * o.b + self.a * o.c + self.b * m2,
        }
    }

    pub fn inverse(&self) -> TriMatrix {
        let i = self.exponent;
        TriMatrix {
            exponent: -i,
            a: -self.a,
            c: -self.c,
            b: (i * 0.5).exp() * self.a * self.c - i.exp() * self.b,
        }
    }

    /// `W₁ W₂ W₁⁻¹ W₂⁻¹`; the exponent is set to exactly 0.
    pub fn commutator(&self, o: &TriMatrix) -> TriMatrix {
        let mut k = self.multiply(o).multiply(&self.inverse()).multiply(&o.inverse());
        k.exponent = zero();
        k
    }

    /// `V W V⁻¹`; conjugation keeps the diagonal, so the exponent is copied.
    pub fn conjugate_by(&self, v: &TriMatrix) -> TriMatrix {
        let mut k = v.multiply(self).multiply(&v.inverse());
        k.exponent = self.exponent;
        k
    }

    pub fn in_s(&self) -> bool {
        !is_resonant(self.exponent, TOL_RESONANCE)
    }

    fn s_distance(&self) -> f64 {
        (self.exponent.exp() - 1.0).norm()
    }

    /// The Ad-invariant `ψ(W) = e^{I/2} b + a c / (e^{−I} − 1)`, the (1,3)
    /// entry of `(e^{−I} − 1)⁻¹ (W − e^{I/2})(W − e^{−I/2})`.
    pub fn psi(&self) -> Result<C64> {
        if !self.in_s() {
            return Err(Error::NotInS { which: "W", distance: self.s_distance() });
        }
        Ok((self.exponent * 0.5).exp() * self.b + self.a * self.c / ((-self.exponent).exp() - 1.0))
    }

    /// `ψ̃(W) = (e^{−I} − 1) e^{I/2} b + a c`, defined on the whole group.
    pub fn psi_tilde(&self) -> C64 {
        ((-self.exponent * 0.5).exp() - (self.exponent * 0.5).exp()) * self.b + self.a * self.c
    }

    /// Dense 3×3 form.
    pub fn to_dense(&self) -> [[C64; 3]; 3] {
        let (m, p) = ((-self.exponent * 0.5).exp(), (self.exponent * 0.5).exp());
        [[m, self.a, self.b], [zero(), p, self.c], [zero(), zero(), m]]
    }

    /// Largest entry-wise difference, comparing exponents directly.
    pub fn distance(&self, o: &TriMatrix) -> f64 {
        [self.exponent - o.exponent, self.a - o.a, self.b - o.b, self.c - o.c]
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self) -> f64 {
        [self.exponent, self.a, self.b, self.c].iter().map(|z| z.norm()).fold(1.0, f64::max)
    }
}

/// `ρ(γ) = (I_γ, θ⁻_γ, φ_γ, θ⁺_γ)`.
pub fn rho(fib: &Fibration, lp: &FiberLoop, c: &Coefficients) -> Result<TriMatrix> {
    rho_with(fib, lp, c, Execution::default())
}

pub fn rho_with(fib: &Fibration, lp: &FiberLoop, c: &Coefficients, execution: Execution) -> Result<TriMatrix> {
    let f = LoopQuadrature::new(fib, lp, execution)?.functionals(c);
    Ok(TriMatrix::new(f.exponent, f.theta_minus, f.phi, f.theta_plus))
}

/// Coefficient of `ψ̃([W₁, W₂])` in the product identity for ψ.
pub fn mid_coefficient(i1: C64, i2: C64) -> C64 {
    let (e1, e2, e12) = ((-i1).exp(), (-i2).exp(), (-(i1 + i2)).exp());
    e12 / ((e1 - 1.0) * (e2 - 1.0) * (e12 - 1.0))
}

/// `ψ(W₁W₂) − ψ(W₁) − ψ(W₂) − κ·ψ̃([W₁, W₂])` together with the size of the
/// largest term, for relative comparisons.
pub fn mid_identity_terms(w1: &TriMatrix, w2: &TriMatrix) -> Result<(C64, f64)> {
    let w12 = w1.multiply(w2);
    let named = [("W1", w1), ("W2", w2), ("W1W2", &w12)];
    for (which, w) in named {
        if !w.in_s() {
            return Err(Error::NotInS { which, distance: w.s_distance() });
        }
    }
    let terms = [
        w12.psi()?,
        w1.psi()?,
        w2.psi()?,
        mid_coefficient(w1.exponent, w2.exponent) * w1.commutator(w2).psi_tilde(),
    ];
    let scale = terms.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok((terms[0] - terms[1] - terms[2] - terms[3], scale))
}

pub fn mid_identity_residual(w1: &TriMatrix, w2: &TriMatrix) -> Result<C64> {
    mid_identity_terms(w1, w2).map(|(r, _)| r)
}
