//! Ambient spaces and point-set distances.

use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

/// Constraint surface for implicit-surface spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Surface {
    Sphere { center: Point, radius: f64 },
}

impl Surface {
    /// The constraint function g_M; zero on the surface.
    pub fn constraint(&self, p: &Point) -> f64 {
        match self {
            Surface::Sphere { center, radius } => (p - center).norm() - radius,
        }
    }

    pub fn normal(&self, p: &Point) -> Point {
        match self {
            Surface::Sphere { center, .. } => {
                let d = p - center;
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Point::z()
                }
            }
        }
    }

    pub fn project(&self, p: &Point) -> Point {
        match self {
            Surface::Sphere { center, radius } => {
                let d = p - center;
                let n = d.norm();
                if n > 0.0 {
                    center + d * (radius / n)
                } else {
                    center + Point::new(0.0, 0.0, *radius)
                }
            }
        }
    }
}

/// The manifold M, realized inside ℝ³.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AmbientSpace {
    EuclideanBox { lo: Point, hi: Point },
    FlatTorus { periods: Point },
    ImplicitSurface { surface: Surface },
}

impl AmbientSpace {
    /// Manifold dimension d.
    pub fn dimension(&self) -> usize {
        match self {
            AmbientSpace::ImplicitSurface { .. } => 2,
            _ => 3,
        }
    }

    /// Displacement `b − a` using the minimal torus representative.
    pub fn displacement(&self, a: &Point, b: &Point) -> Point {
        let mut d = b - a;
        if let AmbientSpace::FlatTorus { periods } = self {
            for i in 0..3 {
                d[i] = wrap_centered(d[i], periods[i]);
            }
        }
        d
    }

    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        self.displacement(a, b).norm()
    }

    /// Canonical representative: torus coordinates reduced to `[0, period)`,
    /// surface points projected.
    pub fn reduce(&self, p: &Point) -> Point {
        match self {
            AmbientSpace::FlatTorus { periods } => {
                let mut q = *p;
                for i in 0..3 {
                    q[i] = q[i].rem_euclid(periods[i]);
                    if q[i] >= periods[i] {
                        q[i] = 0.0;
                    }
                }
                q
            }
            AmbientSpace::ImplicitSurface { surface } => surface.project(p),
            AmbientSpace::EuclideanBox { .. } => *p,
        }
    }

    /// Whether an (unreduced) integration state is inside the domain.
    pub fn contains(&self, p: &Point) -> bool {
        match self {
            AmbientSpace::EuclideanBox { lo, hi } => {
                (0..3).all(|i| p[i] >= lo[i] - 1e-12 && p[i] <= hi[i] + 1e-12)
            }
            _ => p.iter().all(|c| c.is_finite()),
        }
    }

    /// Diameter of the space (upper bound used for trivial shadowing checks).
    pub fn diameter(&self) -> f64 {
        match self {
            AmbientSpace::EuclideanBox { lo, hi } => (hi - lo).norm(),
            AmbientSpace::FlatTorus { periods } => (periods * 0.5).norm(),
            AmbientSpace::ImplicitSurface {
                surface: Surface::Sphere { radius, .. },
            } => 2.0 * radius,
        }
    }

    /// Deterministic low-discrepancy sample of `n` points of the space.
    /// Boxes also include their eight corners first.
    pub fn sample_points(&self, n: usize) -> Vec<Point> {
        match self {
            AmbientSpace::EuclideanBox { lo, hi } => {
                let mut pts = Vec::with_capacity(n + 8);
                for mask in 0..8u8 {
                    pts.push(Point::new(
                        if mask & 1 == 0 { lo.x } else { hi.x },
                        if mask & 2 == 0 { lo.y } else { hi.y },
                        if mask & 4 == 0 { lo.z } else { hi.z },
                    ));
                }
                for i in 0..n {
                    let h = halton3(i + 1);
                    pts.push(lo + (hi - lo).component_mul(&h));
                }
                pts
            }
            AmbientSpace::FlatTorus { periods } => (0..n)
                .map(|i| periods.component_mul(&halton3(i + 1)))
                .collect(),
            AmbientSpace::ImplicitSurface {
                surface: Surface::Sphere { center, radius },
            } => fibonacci_sphere(n.max(1))
                .into_iter()
                .map(|u| center + u * *radius)
                .collect(),
        }
    }
}

/// Reduces `x` into `(-p/2, p/2]`.
/// Uniform hash grid over points for fixed-radius neighbor queries; respects
/// torus periodicity.
pub struct PointGrid<'a> {
    space: &'a AmbientSpace,
    cell: f64,
    wrap: Option<[i64; 3]>,
    map: std::collections::HashMap<[i64; 3], Vec<usize>>,
    points: &'a [Point],
}

impl<'a> PointGrid<'a> {
    /// `points` must be reduced. Queries are exact for radii up to `cell`.
    pub fn new(space: &'a AmbientSpace, points: &'a [Point], cell: f64) -> Self {
        let (cell, wrap) = match space {
            AmbientSpace::FlatTorus { periods } => {
                let n = (0..3).map(|i| ((periods[i] / cell).floor() as i64).max(1)).collect::<Vec<_>>();
                (cell, Some([n[0], n[1], n[2]]))
            }
            _ => (cell, None),
        };
        let mut g = PointGrid {
            space,
            cell,
            wrap,
            map: std::collections::HashMap::new(),
            points,
        };
        for (i, p) in points.iter().enumerate() {
            let key = g.key(p);
            g.map.entry(key).or_default().push(i);
        }
        g
    }

    fn key(&self, p: &Point) -> [i64; 3] {
        let mut k = [0i64; 3];
        for i in 0..3 {
            k[i] = (p[i] / self.cell).floor() as i64;
            if let (Some(n), AmbientSpace::FlatTorus { periods }) = (self.wrap, self.space) {
                let cell = periods[i] / n[i] as f64;
                k[i] = ((p[i] / cell).floor() as i64).rem_euclid(n[i]);
            }
        }
        k
    }

    /// Calls `f(index, distance)` for every point within `radius ≤ cell` of `q`.
    pub fn for_each_near(&self, q: &Point, radius: f64, mut f: impl FnMut(usize, f64)) {
        let k = self.key(q);
        let mut seen: Vec<[i64; 3]> = Vec::with_capacity(27);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let mut c = [k[0] + dx, k[1] + dy, k[2] + dz];
                    if let Some(n) = self.wrap {
                        for i in 0..3 {
                            c[i] = c[i].rem_euclid(n[i]);
                        }
                    }
                    if seen.contains(&c) {
                        continue;
                    }
                    seen.push(c);
                    if let Some(v) = self.map.get(&c) {
                        for &i in v {
                            let d = self.space.distance(q, &self.points[i]);
                            if d <= radius {
                                f(i, d);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn wrap_centered(x: f64, p: f64) -> f64 {
    let r = x - p * (x / p).round();
    if r <= -0.5 * p {
        r + p
    } else {
        r
    }
}

/// Radical inverse in base `b`.
pub fn radical_inverse(mut i: usize, b: usize) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

pub fn halton2(i: usize) -> (f64, f64) {
    (radical_inverse(i, 2), radical_inverse(i, 3))
}

pub fn halton3(i: usize) -> Point {
    Point::new(
        radical_inverse(i, 2),
        radical_inverse(i, 3),
        radical_inverse(i, 5),
    )
}

/// Nearly uniform unit vectors on S².
pub fn fibonacci_sphere(n: usize) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let th = golden * i as f64;
            Point::new(r * th.cos(), r * th.sin(), z)
        })
        .collect()
}

/// Sampled Hausdorff distance `max(sup_a d(a,B), sup_b d(b,A))`.
pub fn hausdorff_distance(space: &AmbientSpace, a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(directed_distance(space, a, b).max(directed_distance(space, b, a)))
}

/// `sup_{a∈A} inf_{b∈B} d(a,b)`.
pub fn directed_distance(space: &AmbientSpace, a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| space.distance(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// `inf_{a∈A, b∈B} d(a,b)`: separation between sampled sets.
pub fn set_distance(space: &AmbientSpace, a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(a.iter()
        .flat_map(|p| b.iter().map(move |q| (p, q)))
        .map(|(p, q)| space.distance(p, q))
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hausdorff_of_identical_sets_is_zero() {
        let s = AmbientSpace::EuclideanBox {
            lo: Point::repeat(-1.0),
            hi: Point::repeat(1.0),
        };
        let a = vec![Point::zeros(), Point::x(), Point::y()];
        assert_eq!(hausdorff_distance(&s, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_point_to_pair() {
        // sup_a d(a,B) = 1, sup_b d(b,A) = 1.
        let s = AmbientSpace::EuclideanBox {
            lo: Point::repeat(-1.0),
            hi: Point::repeat(1.0),
        };
        let a = vec![Point::zeros()];
        let b = vec![Point::x(), Point::y()];
        assert_relative_eq!(hausdorff_distance(&s, &a, &b).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_rejects_empty_sets() {
        let s = AmbientSpace::FlatTorus {
            periods: Point::repeat(1.0),
        };
        assert_eq!(
            hausdorff_distance(&s, &[], &[Point::zeros()]),
            Err(Error::EmptySet)
        );
    }

    #[test]
    fn torus_distance_uses_minimal_representative() {
        let s = AmbientSpace::FlatTorus {
            periods: Point::repeat(1.0),
        };
        let a = Point::new(0.05, 0.0, 0.0);
        let b = Point::new(0.95, 0.0, 0.0);
        assert_relative_eq!(s.distance(&a, &b), 0.1, epsilon = 1e-15);
        assert_relative_eq!(s.reduce(&Point::new(-0.25, 1.5, 3.0))[0], 0.75);
    }

    #[test]
    fn wrap_centered_range() {
        for x in [-2.6, -0.5, 0.0, 0.49, 0.5, 0.51, 7.3] {
            let w = wrap_centered(x, 1.0);
            assert!(w > -0.5 && w <= 0.5, "{x} -> {w}");
            assert_relative_eq!((x - w).round(), x - w, epsilon = 1e-12);
        }
    }

    #[test]
    fn distance_is_a_metric_on_sampled_triples() {
        let spaces = [
            AmbientSpace::EuclideanBox {
                lo: Point::repeat(-3.0),
                hi: Point::repeat(3.0),
            },
            AmbientSpace::FlatTorus {
                periods: Point::new(1.0, 2.0, 1.5),
            },
            AmbientSpace::ImplicitSurface {
                surface: Surface::Sphere {
                    center: Point::zeros(),
                    radius: 1.0,
                },
            },
        ];
        for s in &spaces {
            let pts = s.sample_points(40);
            for a in &pts {
                for b in &pts {
                    assert_relative_eq!(s.distance(a, b), s.distance(b, a), epsilon = 1e-12);
                    for c in pts.iter().step_by(7) {
                        assert!(s.distance(a, c) <= s.distance(a, b) + s.distance(b, c) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_samples_satisfy_constraint() {
        let surf = Surface::Sphere {
            center: Point::zeros(),
            radius: 1.0,
        };
        let s = AmbientSpace::ImplicitSurface {
            surface: surf.clone(),
        };
        for p in s.sample_points(200) {
            assert!(surf.constraint(&p).abs() <= 1e-12);
        }
        let q = s.reduce(&Point::new(0.3, -2.0, 0.7));
        assert!(surf.constraint(&q).abs() <= 1e-12);
    }
}
