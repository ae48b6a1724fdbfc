//! Numerical laboratory for nonlocal eikonal equations of dislocation type,
//!
//! ```text
//! u_t = (c₀(·, t) ⋆ 1_{u(·,t) ≥ 0}(x) + c₁(x, t)) |Du|,
//! ```
//!
//! computing weak solutions `(u, χ)` through a mollified fixed-point
//! construction, measuring the structural estimates those solutions obey, and
//! reproducing an explicit one-dimensional family of distinct weak solutions
//! sharing the same initial data.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod counterexample;
pub mod eikonal;
pub mod error;
pub mod grid;
pub mod velocity;
pub mod weak_engine;

pub use error::{Error, Result};
