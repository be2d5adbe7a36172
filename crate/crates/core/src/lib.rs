//! Numerical toolkit for loops on the complex level curves of a bivariate
//! polynomial: critical data, transport and monodromy of loops, iterated
//! path integrals along loops, Poincaré return maps of perturbed planar
//! systems and the normal variation of a three-dimensional extension.

pub mod chebyshev;
pub mod critical;
pub mod error;
pub mod exec;
pub mod fiber;
pub mod ham_time;
pub mod melnikov;
pub mod monodromy;
pub mod normal_var;
pub mod ode;
pub mod poly;
pub mod tri_group;

pub use error::{Error, Result};
pub use exec::Execution;
pub use poly::{BivariatePoly, Fibration, Point, C64};
