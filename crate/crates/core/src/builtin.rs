//! Built-in example systems.
//!
//! - `S1a`: rotation `(−y, x, 0)` in the box `[−3, 3]³`; D on the half-plane
//!   θ = 0, D̂ on θ = π/2 with the same radii, quarter-turn impulse.
//!   Every orbit through D̂ is periodic with period 3π/2.
//! - `S1b`: as S1a but D̂ spans radii `[0.5, 1.5]` and meets the unit
//!   cylinder; circles of radius below 1.5 never reach D.
//! - `S2`: linear flow `(1, √2, √3)` on the unit torus, D on `x = 0`, D̂ on
//!   `x = 1/2`, identity chart impulse.
//! - `S3`: north–south flow on the unit sphere, D an equatorial arc, D̂ its
//!   backward time-one image, longitude-preserving impulse.

use nalgebra::Matrix2;

use crate::field::{BaseField, VectorField};
use crate::geometry::{AmbientSpace, Surface};
use crate::impulse::Impulse;
use crate::section::{Chart, SectionPatch};
use crate::system::ImpulsiveSystem;
use crate::{ChartPoint, Error, Point, Result};

pub const NAMES: [&str; 4] = ["S1a", "S1b", "S2", "S3"];

pub fn builtin_system(name: &str) -> Result<ImpulsiveSystem> {
    match name {
        "S1a" => Ok(s1(false)),
        "S1b" => Ok(s1(true)),
        "S2" => Ok(s2()),
        "S3" => Ok(s3()),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

fn s1(variant_b: bool) -> ImpulsiveSystem {
    let space = AmbientSpace::EuclideanBox {
        lo: Point::repeat(-3.0),
        hi: Point::repeat(3.0),
    };
    let field = VectorField::new(BaseField::CylinderRotation, vec![], &space);
    let d = SectionPatch::affine(
        "D",
        Point::zeros(),
        [Point::x(), Point::z()],
        ChartPoint::new(1.5, -0.5),
        ChartPoint::new(2.5, 0.5),
    );
    let (lo, offset) = if variant_b {
        (0.5, ChartPoint::new(-1.0, 0.0))
    } else {
        (1.5, ChartPoint::zeros())
    };
    let d_hat = SectionPatch::affine(
        "D_hat",
        Point::zeros(),
        [Point::y(), Point::z()],
        ChartPoint::new(lo, -0.5),
        ChartPoint::new(lo + 1.0, 0.5),
    );
    let mut sys = ImpulsiveSystem::new(
        if variant_b { "S1b" } else { "S1a" },
        space,
        field,
        d,
        d_hat,
        Impulse::affine(Matrix2::identity(), offset),
    );
    sys.tolerances.integration = 1e-11;
    sys
}

fn s2() -> ImpulsiveSystem {
    let space = AmbientSpace::FlatTorus {
        periods: Point::repeat(1.0),
    };
    let field = VectorField::new(
        BaseField::TorusConstant {
            velocity: Point::new(1.0, 2f64.sqrt(), 3f64.sqrt()),
        },
        vec![],
        &space,
    );
    let patch = |name: &str, x: f64| {
        let mut p = SectionPatch::affine(
            name,
            Point::new(x, 0.0, 0.0),
            [Point::y(), Point::z()],
            ChartPoint::new(0.1, 0.1),
            ChartPoint::new(0.4, 0.4),
        );
        p.margin = 0.01;
        p
    };
    ImpulsiveSystem::new(
        "S2",
        space,
        field,
        patch("D", 0.0),
        patch("D_hat", 0.5),
        Impulse::identity(),
    )
}

/// Height of the landing latitude: the north–south flow moves `z` as
/// `−tanh(t + c)`, so the backward time-one image of the equator sits at
/// `tanh(1)`.
pub fn s3_landing_height() -> f64 {
    1f64.tanh()
}

/// Two-link chain on S3 that stalls near the equator: `x₁` sits on the
/// meridian at height `tanh(1.5)`, dwells until just above D, and the second
/// link restarts just below the equator, skipping the impulse that the true
/// orbit takes. The jump between the links is about `delta / 5`.
pub fn s3_paper_chain(delta: f64) -> Vec<(Point, f64)> {
    let z = 1.5f64.tanh();
    let e = delta / 10.0;
    vec![
        (Point::new((1.0 - z * z).sqrt(), 0.0, z), 1.5 - e),
        (Point::new(1.0 / e.cosh(), 0.0, -e.tanh()), 1.0),
    ]
}

/// Two unit links of the true trajectory from the first point of
/// [`s3_paper_chain`].
pub fn s3_true_chain(sys: &ImpulsiveSystem) -> Result<Vec<(Point, f64)>> {
    let x1 = s3_paper_chain(0.0)[0].0;
    let x2 = crate::global::trajectory_points(sys, &x1, &[1.0])?[0];
    Ok(vec![(x1, 1.0), (x2, 1.0)])
}

fn s3() -> ImpulsiveSystem {
    let space = AmbientSpace::ImplicitSurface {
        surface: Surface::Sphere {
            center: Point::zeros(),
            radius: 1.0,
        },
    };
    let field = VectorField::new(BaseField::NorthSouthSphere, vec![], &space);
    let arc = |name: &str, height: f64| SectionPatch {
        name: name.to_string(),
        chart: Chart::Latitude {
            center: Point::zeros(),
            radius: 1.0,
            height,
        },
        lo: ChartPoint::new(-1.0, 0.0),
        hi: ChartPoint::new(1.0, 0.0),
        margin: 0.05,
        transversality_floor: 1e-3,
    };
    let mut sys = ImpulsiveSystem::new(
        "S3",
        space,
        field,
        arc("D", 0.0),
        arc("D_hat", s3_landing_height()),
        Impulse::identity(),
    );
    sys.tolerances.integration = 1e-10;
    sys
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::validate_system;

    #[test]
    fn all_builtins_validate() {
        for name in NAMES {
            let sys = builtin_system(name).unwrap();
            let r = validate_system(&sys, 21);
            assert!(r.passed, "{name}: {r:?}");
        }
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert_eq!(builtin_system("S9").unwrap_err(), Error::UnknownSystem("S9".into()));
    }

    #[test]
    fn s1a_quarter_turn_impulse() {
        let sys = builtin_system("S1a").unwrap();
        let q = sys.apply_impulse(&Point::new(2.0, 0.0, 0.0)).unwrap();
        assert!((q - Point::new(0.0, 2.0, 0.0)).norm() < 1e-15);
        let back = sys.impulse_inverse(&q).unwrap();
        assert!((back - Point::new(2.0, 0.0, 0.0)).norm() < 1e-15);
        assert!(sys.apply_impulse(&Point::new(0.9, 0.0, 0.0)).is_err());
    }

    #[test]
    fn s1b_impulse_shifts_radius() {
        let sys = builtin_system("S1b").unwrap();
        let q = sys.apply_impulse(&Point::new(2.0, 0.0, 0.1)).unwrap();
        assert!((q - Point::new(0.0, 1.0, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn s1b_circles_through_the_landing_patch_miss_d() {
        let sys = builtin_system("S1b").unwrap();
        for r in [0.6, 1.0, 1.4] {
            let traj = crate::semiflow::impulsive_trajectory(&sys, &Point::new(0.0, r, 0.2), 20.0).unwrap();
            assert!(traj.events.is_empty(), "r = {r}");
        }
    }

    #[test]
    fn s3_field_is_tangent_to_the_sphere() {
        let sys = builtin_system("S3").unwrap();
        for p in crate::geometry::fibonacci_sphere(200) {
            assert!(sys.field.base.eval(&p).dot(&p).abs() < 1e-14);
        }
    }

    #[test]
    fn s3_chains() {
        let sys = builtin_system("S3").unwrap();
        let chain = s3_paper_chain(0.05);
        assert!((chain[0].0.norm() - 1.0).abs() < 1e-15 && (chain[1].0.norm() - 1.0).abs() < 1e-15);
        let truth = s3_true_chain(&sys).unwrap();
        assert_eq!(truth[0].0, chain[0].0);
        assert!((truth[1].0.norm() - 1.0).abs() < 1e-9);
    }
}
