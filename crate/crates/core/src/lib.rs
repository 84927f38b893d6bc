//! Executable constructions on subcartesian differential spaces embedded in ℝⁿ.
//!
//! Functions on a space are ambient smooth expressions restricted to it, and
//! derivations are represented by ambient vector fields. On top of that the
//! crate integrates flows with exit detection, classifies derivations as
//! vector fields, samples orbits of finite field families, checks declared
//! stratifications, runs Poisson reduction by invariants and measures the
//! torsion of almost complex structures.

#![allow(clippy::needless_range_loop)]

pub mod almostcomplex;
pub mod cli;
pub mod expr;
pub mod field;
pub mod flow;
pub mod linalg;
pub mod orbit;
pub mod poisson;
pub mod report;
pub mod scenario;
pub mod ode;
pub mod space;
pub mod strata;
