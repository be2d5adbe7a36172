//! Bivariate polynomials with complex coefficients.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// A point of C².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct Point {
    pub x: C64,
    pub y: C64,
}

impl Point {
    pub const fn new(x: C64, y: C64) -> Self {
        Self { x, y }
    }

    pub fn real(x: f64, y: f64) -> Self {
        Self::new(C64::new(x, 0.0), C64::new(y, 0.0))
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).norm_sqr() + (self.y - other.y).norm_sqr()).sqrt()
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_sqr() + self.y.norm_sqr()).sqrt()
    }

    pub fn lerp(&self, other: &Point, s: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * s,
            self.y + (other.y - self.y) * s,
        )
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x.re, self.x.im, self.y.re, self.y.im]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(C64::new(a[0], a[1]), C64::new(a[2], a[3]))
    }
}

impl From<Point> for [f64; 4] {
    fn from(p: Point) -> Self {
        p.to_array()
    }
}

impl From<[f64; 4]> for Point {
    fn from(a: [f64; 4]) -> Self {
        Point::from_array(a)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<C64> for Point {
    type Output = Point;
    fn mul(self, s: C64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Sparse polynomial in (x, y).
///
/// Terms are keyed by `(deg_x, deg_y)` and kept sorted, so evaluation sums
/// monomials in a fixed order. Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "PolyJson", try_from = "PolyJson")]
pub struct BivariatePoly {
    terms: BTreeMap<(u32, u32), C64>,
}

#[derive(Serialize, Deserialize)]
struct PolyJson {
    terms: Vec<[f64; 4]>,
}

impl From<BivariatePoly> for PolyJson {
    fn from(p: BivariatePoly) -> Self {
        PolyJson {
            terms: p
                .terms
                .iter()
                .map(|(&(i, j), c)| [i as f64, j as f64, c.re, c.im])
                .collect(),
        }
    }
}

impl TryFrom<PolyJson> for BivariatePoly {
    type Error = Error;

    fn try_from(j: PolyJson) -> Result<Self> {
        let mut terms = Vec::with_capacity(j.terms.len());
        for t in j.terms {
            for &d in &t[..2] {
                if d < 0.0 || d.fract() != 0.0 || d > u32::MAX as f64 {
                    return Err(Error::InvalidInput(format!("bad degree {d} in polynomial term")));
                }
            }
            if !t[2].is_finite() || !t[3].is_finite() {
                return Err(Error::InvalidInput("non-finite polynomial coefficient".into()));
            }
            terms.push((t[0] as u32, t[1] as u32, C64::new(t[2], t[3])));
        }
        Ok(BivariatePoly::from_terms(terms))
    }
}

impl BivariatePoly {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds a polynomial, summing duplicate monomials and dropping zeros.
    pub fn from_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (u32, u32, C64)>,
    {
        let mut map = BTreeMap::new();
        for (i, j, c) in terms {
            *map.entry((i, j)).or_insert(C64::new(0.0, 0.0)) += c;
        }
        map.retain(|_, c| *c != C64::new(0.0, 0.0));
        Self { terms: map }
    }

    /// Real-coefficient shorthand: `[(deg_x, deg_y, coeff)]`.
    pub fn from_real(terms: &[(u32, u32, f64)]) -> Self {
        Self::from_terms(terms.iter().map(|&(i, j, c)| (i, j, C64::new(c, 0.0))))
    }

    pub fn constant(c: C64) -> Self {
        Self::from_terms([(0, 0, c)])
    }

    pub fn monomial(i: u32, j: u32, c: f64) -> Self {
        Self::from_terms([(i, j, C64::new(c, 0.0))])
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|&(i, j)| i == 0 && j == 0)
    }

    pub fn is_real(&self) -> bool {
        self.terms.values().all(|c| c.im == 0.0)
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|&(i, j)| i + j).max()
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, u32, C64)> + '_ {
        self.terms.iter().map(|(&(i, j), &c)| (i, j, c))
    }

    pub fn coeff(&self, i: u32, j: u32) -> C64 {
        self.terms.get(&(i, j)).copied().unwrap_or_default()
    }

    pub fn eval(&self, p: Point) -> C64 {
        self.terms
            .iter()
            .map(|(&(i, j), &c)| c * p.x.powu(i) * p.y.powu(j))
            .fold(C64::new(0.0, 0.0), |acc, t| acc + t)
    }

    /// Value together with the sum of absolute monomial magnitudes, which
    /// bounds the rounding error of the evaluation.
    pub fn eval_with_scale(&self, p: Point) -> (C64, f64) {
        let mut v = C64::new(0.0, 0.0);
        let mut s = 0.0;
        for (&(i, j), &c) in &self.terms {
            let t = c * p.x.powu(i) * p.y.powu(j);
            v += t;
            s += t.norm();
        }
        (v, s)
    }

    pub fn eval_real(&self, x: f64, y: f64) -> f64 {
        self.eval(Point::real(x, y)).re
    }

    pub fn d_dx(&self) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .filter(|(&(i, _), _)| i > 0)
                .map(|(&(i, j), &c)| (i - 1, j, c * i as f64)),
        )
    }

    pub fn d_dy(&self) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .filter(|(&(_, j), _)| j > 0)
                .map(|(&(i, j), &c)| (i, j - 1, c * j as f64)),
        )
    }

    /// `(∂/∂x, ∂/∂y)`.
    pub fn partials(&self) -> (Self, Self) {
        (self.d_dx(), self.d_dy())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_terms(self.terms().map(|(i, j, c)| (i, j, c * s)))
    }
}

impl Add for &BivariatePoly {
    type Output = BivariatePoly;
    fn add(self, o: &BivariatePoly) -> BivariatePoly {
        BivariatePoly::from_terms(self.terms().chain(o.terms()))
    }
}

impl Sub for &BivariatePoly {
    type Output = BivariatePoly;
    fn sub(self, o: &BivariatePoly) -> BivariatePoly {
        BivariatePoly::from_terms(self.terms().chain(o.terms().map(|(i, j, c)| (i, j, -c))))
    }
}

impl Neg for &BivariatePoly {
    type Output = BivariatePoly;
    fn neg(self) -> BivariatePoly {
        self.scale(C64::new(-1.0, 0.0))
    }
}

impl Mul for &BivariatePoly {
    type Output = BivariatePoly;
    fn mul(self, o: &BivariatePoly) -> BivariatePoly {
        let mut out = Vec::with_capacity(self.terms.len() * o.terms.len());
        for (i1, j1, c1) in self.terms() {
            for (i2, j2, c2) in o.terms() {
                out.push((i1 + i2, j1 + j2, c1 * c2));
            }
        }
        BivariatePoly::from_terms(out)
    }
}

impl fmt::Display for BivariatePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (&(i, j), c) in self.terms.iter().rev() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if c.im == 0.0 {
                write!(f, "{}", c.re)?;
            } else {
                write!(f, "({})", c)?;
            }
            match i {
                0 => {}
                1 => write!(f, "*x")?,
                _ => write!(f, "*x^{i}")?,
            }
            match j {
                0 => {}
                1 => write!(f, "*y")?,
                _ => write!(f, "*y^{j}")?,
            }
        }
        Ok(())
    }
}

/// H together with its first and second partial derivatives.
#[derive(Debug, Clone)]
pub struct Fibration {
    pub h: BivariatePoly,
    pub hx: BivariatePoly,
    pub hy: BivariatePoly,
    pub hxx: BivariatePoly,
    pub hxy: BivariatePoly,
    pub hyy: BivariatePoly,
}

impl Fibration {
    pub fn new(h: BivariatePoly) -> Self {
        let (hx, hy) = h.partials();
        let (hxx, hxy) = hx.partials();
        let hyy = hy.d_dy();
        Self { h, hx, hy, hxx, hxy, hyy }
    }

    /// The elliptic Hamiltonian `y² − x³ + 3x`.
    pub fn elliptic() -> Self {
        Self::new(elliptic_hamiltonian())
    }

    pub fn value(&self, p: Point) -> C64 {
        self.h.eval(p)
    }

    pub fn grad(&self, p: Point) -> (C64, C64) {
        (self.hx.eval(p), self.hy.eval(p))
    }

    pub fn grad_norm(&self, p: Point) -> f64 {
        let (gx, gy) = self.grad(p);
        (gx.norm_sqr() + gy.norm_sqr()).sqrt()
    }

    /// `[[H_xx, H_xy], [H_xy, H_yy]]`.
    pub fn hessian(&self, p: Point) -> [[C64; 2]; 2] {
        let xy = self.hxy.eval(p);
        [[self.hxx.eval(p), xy], [xy, self.hyy.eval(p)]]
    }
}

/// `y² − x³ + 3x`, critical values ±2.
pub fn elliptic_hamiltonian() -> BivariatePoly {
    BivariatePoly::from_real(&[(0, 2, 1.0), (3, 0, -1.0), (1, 0, 3.0)])
}
