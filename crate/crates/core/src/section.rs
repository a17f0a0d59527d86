//! Cross-section patches: codimension-one chart rectangles with a section
//! function, an interior margin and a transversality floor.
//!
//! A point belongs to a patch only if the section function vanishes there
//! *and* its chart coordinates fall in the rectangle. The zero set of the
//! section function alone is never used as the section.

use nalgebra::{Matrix2, Matrix3x2};
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_centered, AmbientSpace};
use crate::{ChartPoint, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Chart {
    /// `u ↦ origin + u₁·axes[0] + u₂·axes[1]`.
    Affine { origin: Point, axes: [Point; 2] },
    /// Latitude arc of a sphere at height `height` above `center`:
    /// `u ↦ center + (ρ cos u, ρ sin u, height)` with longitude `u`.
    Latitude {
        center: Point,
        radius: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionPatch {
    pub name: String,
    pub chart: Chart,
    /// Chart rectangle; one-dimensional charts have `lo[1] == hi[1] == 0`.
    pub lo: ChartPoint,
    pub hi: ChartPoint,
    /// Width of the boundary band ∂D in chart units.
    pub margin: f64,
    /// Minimum admissible |X·∇g| on the patch.
    pub transversality_floor: f64,
}

impl SectionPatch {
    pub fn affine(
        name: &str,
        origin: Point,
        axes: [Point; 2],
        lo: ChartPoint,
        hi: ChartPoint,
    ) -> Self {
        SectionPatch {
            name: name.to_string(),
            chart: Chart::Affine { origin, axes },
            lo,
            hi,
            margin: 0.02,
            transversality_floor: 1e-3,
        }
    }

    pub fn dim(&self) -> usize {
        match self.chart {
            Chart::Affine { .. } => 2,
            Chart::Latitude { .. } => 1,
        }
    }

    pub fn mid(&self) -> ChartPoint {
        (self.lo + self.hi) * 0.5
    }

    pub fn embed(&self, u: &ChartPoint) -> Point {
        match &self.chart {
            Chart::Affine { origin, axes } => origin + axes[0] * u.x + axes[1] * u.y,
            Chart::Latitude {
                center,
                radius,
                height,
            } => {
                let rho = (radius * radius - height * height).max(0.0).sqrt();
                center + Point::new(rho * u.x.cos(), rho * u.x.sin(), *height)
            }
        }
    }

    /// Unit normal of an affine chart (the gradient of its section function).
    fn affine_normal(axes: &[Point; 2]) -> Point {
        axes[0].cross(&axes[1]).normalize()
    }

    /// Section function g; zero on the hypersurface carrying the patch.
    pub fn section_value(&self, space: &AmbientSpace, p: &Point) -> f64 {
        match &self.chart {
            Chart::Affine { axes, .. } => {
                let c = self.embed(&self.mid());
                Self::affine_normal(axes).dot(&space.displacement(&c, p))
            }
            Chart::Latitude { center, height, .. } => p.z - center.z - height,
        }
    }

    pub fn gradient(&self, _p: &Point) -> Point {
        match &self.chart {
            Chart::Affine { axes, .. } => Self::affine_normal(axes),
            Chart::Latitude { .. } => Point::z(),
        }
    }

    /// Chart coordinates of `p` (the chart's inverse composed with the
    /// orthogonal projection onto the hypersurface).
    pub fn chart_coords(&self, space: &AmbientSpace, p: &Point) -> ChartPoint {
        let mid = self.mid();
        match &self.chart {
            Chart::Affine { axes, .. } => {
                let c = self.embed(&mid);
                let w = space.displacement(&c, p);
                let a = Matrix3x2::from_columns(&[axes[0], axes[1]]);
                let gram: Matrix2<f64> = a.transpose() * a;
                let inv = gram.try_inverse().unwrap_or_else(Matrix2::identity);
                mid + inv * (a.transpose() * w)
            }
            Chart::Latitude { center, .. } => {
                let d = p - center;
                let lon = d.y.atan2(d.x);
                let u = mid.x + wrap_centered(lon - mid.x, 2.0 * std::f64::consts::PI);
                ChartPoint::new(u, 0.0)
            }
        }
    }

    /// Closest point on the hypersurface patch's chart image.
    pub fn project(&self, space: &AmbientSpace, p: &Point) -> Point {
        space.reduce(&self.embed(&self.chart_coords(space, p)))
    }

    /// Distance from `p` to the closed patch (nearest point of the clamped
    /// chart projection).
    pub fn distance_to(&self, space: &AmbientSpace, p: &Point) -> f64 {
        let mut u = self.chart_coords(space, p);
        for i in 0..self.dim() {
            u[i] = u[i].clamp(self.lo[i], self.hi[i]);
        }
        space.distance(p, &space.reduce(&self.embed(&u)))
    }

    pub fn in_rect(&self, u: &ChartPoint, tol: f64) -> bool {
        (0..self.dim()).all(|i| u[i] >= self.lo[i] - tol && u[i] <= self.hi[i] + tol)
    }

    /// Interior D̊: at least `margin` away from the rectangle boundary.
    pub fn is_interior(&self, u: &ChartPoint) -> bool {
        self.boundary_distance(u) >= self.margin
    }

    /// Chart distance to the rectangle boundary (negative outside).
    pub fn boundary_distance(&self, u: &ChartPoint) -> f64 {
        (0..self.dim())
            .map(|i| (u[i] - self.lo[i]).min(self.hi[i] - u[i]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, space: &AmbientSpace, p: &Point, tol: f64) -> bool {
        self.section_value(space, p).abs() <= tol && self.in_rect(&self.chart_coords(space, p), tol)
    }

    /// Size of the chart rectangle (largest side).
    pub fn size(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.hi[i] - self.lo[i])
            .fold(0.0, f64::max)
    }

    /// Chart distance, a metric on chart coordinates. For affine charts with
    /// orthonormal axes it coincides with the ambient distance on the patch.
    pub fn chart_distance(&self, a: &ChartPoint, b: &ChartPoint) -> f64 {
        (a - b).norm()
    }

    /// Uniform grid with `n` points per axis spanning `[lo + inset, hi − inset]`.
    pub fn grid(&self, n: usize, inset: f64) -> Vec<ChartPoint> {
        let n = n.max(1);
        let axis = |i: usize, k: usize| {
            let (a, b) = (self.lo[i] + inset, self.hi[i] - inset);
            if n == 1 {
                0.5 * (a + b)
            } else {
                a + (b - a) * k as f64 / (n - 1) as f64
            }
        };
        if self.dim() == 1 {
            (0..n).map(|k| ChartPoint::new(axis(0, k), 0.0)).collect()
        } else {
            let mut out = Vec::with_capacity(n * n);
            for j in 0..n {
                for k in 0..n {
                    out.push(ChartPoint::new(axis(0, k), axis(1, j)));
                }
            }
            out
        }
    }

    /// Ambient grid over the closed patch.
    pub fn sample(&self, space: &AmbientSpace, n: usize) -> Vec<Point> {
        self.grid(n, 0.0)
            .iter()
            .map(|u| space.reduce(&self.embed(u)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surface;
    use approx::assert_relative_eq;

    fn s1a_d() -> (AmbientSpace, SectionPatch) {
        let space = AmbientSpace::EuclideanBox {
            lo: Point::repeat(-3.0),
            hi: Point::repeat(3.0),
        };
        let d = SectionPatch::affine(
            "D",
            Point::zeros(),
            [Point::x(), Point::z()],
            ChartPoint::new(1.5, -0.5),
            ChartPoint::new(2.5, 0.5),
        );
        (space, d)
    }

    #[test]
    fn chart_points_lie_on_the_section() {
        let (space, d) = s1a_d();
        for u in d.grid(11, 0.0) {
            let p = d.embed(&u);
            assert!(d.section_value(&space, &p).abs() <= 1e-12);
            assert_relative_eq!((d.chart_coords(&space, &p) - u).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_set_outside_rectangle_is_not_on_patch() {
        let (space, d) = s1a_d();
        // y = 0 but x = -2: same plane, opposite side of the cylinder.
        let p = Point::new(-2.0, 0.0, 0.0);
        assert!(d.section_value(&space, &p).abs() < 1e-15);
        assert!(!d.contains(&space, &p, 1e-9));
        assert!(d.contains(&space, &Point::new(2.0, 0.0, 0.1), 1e-9));
    }

    #[test]
    fn interior_is_margin_band_complement() {
        let (_, d) = s1a_d();
        assert!(d.is_interior(&ChartPoint::new(2.0, 0.0)));
        assert!(!d.is_interior(&ChartPoint::new(1.51, 0.0)));
        assert!(!d.is_interior(&ChartPoint::new(2.0, 0.49)));
    }

    #[test]
    fn torus_chart_inverse_wraps() {
        let space = AmbientSpace::FlatTorus {
            periods: Point::repeat(1.0),
        };
        let d = SectionPatch::affine(
            "D",
            Point::zeros(),
            [Point::y(), Point::z()],
            ChartPoint::new(0.1, 0.1),
            ChartPoint::new(0.4, 0.4),
        );
        let p = Point::new(0.999_999, 0.2, 0.3);
        let u = d.chart_coords(&space, &p);
        assert_relative_eq!(u, ChartPoint::new(0.2, 0.3), epsilon = 1e-12);
        assert!(d.section_value(&space, &p) < 0.0);
        assert!(d.section_value(&space, &Point::new(0.001, 0.2, 0.3)) > 0.0);
    }

    #[test]
    fn latitude_chart_roundtrip() {
        let space = AmbientSpace::ImplicitSurface {
            surface: Surface::Sphere {
                center: Point::zeros(),
                radius: 1.0,
            },
        };
        let patch = SectionPatch {
            name: "D".into(),
            chart: Chart::Latitude {
                center: Point::zeros(),
                radius: 1.0,
                height: 0.3,
            },
            lo: ChartPoint::new(-1.0, 0.0),
            hi: ChartPoint::new(1.0, 0.0),
            margin: 0.05,
            transversality_floor: 1e-3,
        };
        for u in patch.grid(9, 0.0) {
            let p = patch.embed(&u);
            assert_relative_eq!(p.norm(), 1.0, epsilon = 1e-12);
            assert!(patch.contains(&space, &p, 1e-12));
            assert_relative_eq!(patch.chart_coords(&space, &p), u, epsilon = 1e-12);
        }
    }
}
