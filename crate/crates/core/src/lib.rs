//! Numerical laboratory for impulsive semiflows.
//!
//! An impulsive semiflow is built from a flow `φ` generated by a Lipschitz
//! vector field, an impulsive cross-section `D`, and an impulse `I: D → D̂`
//! that throws every trajectory reaching `D` onto the landing section `D̂`.
//! This crate integrates such systems, computes their Poincaré maps and
//! periodic orbits, evaluates fixed-point indices, and implements the C⁰
//! closing and attractor-creation perturbations that drive the density of
//! periodic orbits.
//!
//! The modules follow the layers of the construction:
//!
//! - [`geometry`], [`section`], [`impulse`]: ambient spaces, chart patches, impulse maps.
//! - [`field`], [`integrate`]: vector fields with perturbation terms, adaptive
//!   Runge–Kutta integration and first hitting times.
//! - [`system`], [`semiflow`]: the impulsive system and its trajectories.
//! - [`poincare`], [`refine`]: Poincaré maps, return maps, periodic orbits.
//! - [`index`]: fixed-point index through winding numbers.
//! - [`perturb`]: closing lemmas, attractor creation, permanence trials.
//! - [`global`]: recurrent-set proxy, density gap, densification, shadowing.
//! - [`builtin`], [`config`], [`harness`]: example systems, JSON configuration,
//!   experiment orchestration behind the `impulsive-lab` binary.

pub mod builtin;
pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod global;
pub mod harness;
pub mod impulse;
pub mod index;
pub mod integrate;
pub mod perturb;
pub mod poincare;
pub mod profile;
pub mod refine;
pub mod section;
pub mod seed;
pub mod semiflow;
pub mod system;

pub use error::{Error, Result};

/// Ambient coordinates. Every space in this crate lives in ℝ³ (or 𝕋³).
pub type Point = nalgebra::Vector3<f64>;

/// Chart coordinates on a section patch. One-dimensional charts keep the
/// second coordinate at zero.
pub type ChartPoint = nalgebra::Vector2<f64>;

/// Parses `"x,y,z"` into a point.
pub fn parse_point(s: &str) -> Option<Point> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    match parts.as_slice() {
        [x, y, z] => Some(Point::new(*x, *y, *z)),
        _ => None,
    }
}
