//! Lipschitz vector fields: a base field plus additive, localized
//! perturbation terms.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::geometry::AmbientSpace;
use crate::profile::{alpha_eta, beta_eta, bump, plateau, BUMP_SLOPE};
use crate::Point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    pub powers: [u32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseField {
    /// `(−y, x, 0)`.
    CylinderRotation,
    /// Constant velocity; a linear flow on the torus.
    TorusConstant { velocity: Point },
    /// `(xz, yz, −(x² + y²))`: source at the north pole, sink at the south pole.
    NorthSouthSphere,
    /// One list of monomials per coordinate.
    Polynomial { components: [Vec<Monomial>; 3] },
}

impl BaseField {
    pub fn eval(&self, p: &Point) -> Point {
        match self {
            BaseField::CylinderRotation => Point::new(-p.y, p.x, 0.0),
            BaseField::TorusConstant { velocity } => *velocity,
            BaseField::NorthSouthSphere => Point::new(
                p.x * p.z,
                p.y * p.z,
                -(p.x * p.x + p.y * p.y),
            ),
            BaseField::Polynomial { components } => {
                let mut out = Point::zeros();
                for (k, terms) in components.iter().enumerate() {
                    out[k] = terms
                        .iter()
                        .map(|m| {
                            m.coef
                                * p.x.powi(m.powers[0] as i32)
                                * p.y.powi(m.powers[1] as i32)
                                * p.z.powi(m.powers[2] as i32)
                        })
                        .sum();
                }
                out
            }
        }
    }
}

/// Sampled orbit segment with a transported orthonormal frame: the local
/// flowbox in which tube and contraction perturbations are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSegment {
    /// Flow time of the segment (samples are uniform in time).
    pub duration: f64,
    /// Consecutive (unwrapped) samples.
    pub points: Vec<Point>,
    /// `[e, n₁, n₂]` per sample: flow direction and transversal complement.
    pub frames: Vec<[Point; 3]>,
}

const CHUNK: usize = 8;

/// Local flowbox coordinates of a point near a segment.
#[derive(Debug, Clone, Copy)]
pub struct LocalCoords {
    /// Time parameter along the segment in `[0, duration]`.
    pub s: f64,
    /// Transversal offset in the frame `(n₁, n₂)`.
    pub z: [f64; 2],
    pub frame: [Point; 3],
}

impl OrbitSegment {
    pub fn new(duration: f64, points: Vec<Point>, frames: Vec<[Point; 3]>) -> Self {
        OrbitSegment {
            duration,
            points,
            frames,
        }
    }

    fn dt(&self) -> f64 {
        self.duration / (self.points.len() - 1) as f64
    }

    /// Nearest point on the polyline within `reach`, expressed in flowbox
    /// coordinates. `None` when the point is farther than `reach`.
    pub fn local_coords(&self, space: &AmbientSpace, q: &Point, reach: f64) -> Option<LocalCoords> {
        let n = self.points.len();
        if n < 2 {
            return None;
        }
        let mut best: Option<(f64, usize, f64, Point)> = None;
        let mut start = 0;
        while start < n - 1 {
            let end = (start + CHUNK).min(n - 1);
            let mid = (start + end) / 2;
            let chunk_r = (start..=end)
                .map(|i| (self.points[i] - self.points[mid]).norm())
                .fold(0.0, f64::max);
            let dm = space.displacement(&self.points[mid], q).norm();
            if dm <= chunk_r + reach {
                for j in start..end {
                    let a = self.points[j];
                    let seg = self.points[j + 1] - a;
                    let w = space.displacement(&a, q);
                    let len2 = seg.norm_squared();
                    let lam = if len2 > 0.0 {
                        (w.dot(&seg) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let off = w - seg * lam;
                    let d = off.norm();
                    if d <= reach && best.as_ref().is_none_or(|b| d < b.0) {
                        best = Some((d, j, lam, off));
                    }
                }
            }
            start = end;
        }
        let (_, j, lam, off) = best?;
        let f = if lam < 0.5 { self.frames[j] } else { self.frames[j + 1] };
        Some(LocalCoords {
            s: (j as f64 + lam) * self.dt(),
            z: [f[1].dot(&off), f[2].dot(&off)],
            frame: f,
        })
    }

    /// Points filling the tube of the given radius, for support checks and
    /// C⁰ measurements.
    pub fn support_samples(&self, radius: f64, rings: usize) -> Vec<Point> {
        let mut out = Vec::new();
        for (p, f) in self.points.iter().zip(&self.frames) {
            out.push(*p);
            for r in 1..=rings {
                let rr = radius * r as f64 / rings as f64;
                for k in 0..8 {
                    let th = std::f64::consts::TAU * k as f64 / 8.0;
                    out.push(p + (f[1] * th.cos() + f[2] * th.sin()) * rr);
                }
            }
        }
        out
    }
}

/// Steering tube: inside the tube every point receives the same transversal
/// velocity `velocity` (frame coordinates), ramped in and out along the
/// segment. Points in the transversal plateau are displaced by
/// `velocity · ∫λ(s) ds` on crossing the tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubePerturbation {
    pub segment: OrbitSegment,
    pub radius: f64,
    /// Transversal plateau radius (full strength inside).
    pub plateau_radius: f64,
    pub velocity: [f64; 2],
    /// Fraction of the duration used by each longitudinal ramp.
    pub ramp: f64,
}

impl TubePerturbation {
    pub fn longitudinal(&self, s: f64) -> f64 {
        let d = self.segment.duration;
        let r = self.ramp * d;
        plateau(s, 0.0, r, d - r, d)
    }

    /// ∫ λ(s) ds over the segment.
    pub fn longitudinal_integral(&self) -> f64 {
        crate::profile::integrate(|s| self.longitudinal(s), 0.0, self.segment.duration, 2000)
    }

    pub fn eval(&self, space: &AmbientSpace, q: &Point) -> Point {
        let Some(lc) = self.segment.local_coords(space, q, self.radius) else {
            return Point::zeros();
        };
        let r = (lc.z[0] * lc.z[0] + lc.z[1] * lc.z[1]).sqrt();
        let radial = if r <= self.plateau_radius {
            1.0
        } else {
            crate::profile::smoothstep((self.radius - r) / (self.radius - self.plateau_radius))
        };
        let g = self.longitudinal(lc.s) * radial;
        if g == 0.0 {
            return Point::zeros();
        }
        (lc.frame[1] * self.velocity[0] + lc.frame[2] * self.velocity[1]) * g
    }

    pub fn size(&self) -> f64 {
        (self.velocity[0].powi(2) + self.velocity[1].powi(2)).sqrt()
    }
}

/// Transversal contraction `ż = −α_η(s)·β_η(|z|)·z` in the flowbox of a
/// segment: the term `P^η` of the attractor construction with the sign that
/// contracts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionBump {
    pub segment: OrbitSegment,
    pub radius: f64,
    pub eta: f64,
}

impl ContractionBump {
    pub fn eval(&self, space: &AmbientSpace, q: &Point) -> Point {
        let Some(lc) = self.segment.local_coords(space, q, self.radius) else {
            return Point::zeros();
        };
        let r = (lc.z[0] * lc.z[0] + lc.z[1] * lc.z[1]).sqrt();
        let g = alpha_eta(lc.s, self.eta, self.segment.duration) * beta_eta(r, self.eta, self.radius);
        if g == 0.0 {
            return Point::zeros();
        }
        -(lc.frame[1] * lc.z[0] + lc.frame[2] * lc.z[1]) * g
    }

    /// Bound `η²·radius` on the sup-norm of the term.
    pub fn size_bound(&self) -> f64 {
        self.eta * self.eta * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldTerm {
    Constant { vector: Point },
    Linear { matrix: Matrix3<f64> },
    /// `bump(|q − c|/r)·v`.
    Bump { center: Point, radius: f64, vector: Point },
    Tube(TubePerturbation),
    Contraction(ContractionBump),
}

impl FieldTerm {
    pub fn eval(&self, space: &AmbientSpace, q: &Point) -> Point {
        match self {
            FieldTerm::Constant { vector } => *vector,
            FieldTerm::Linear { matrix } => matrix * q,
            FieldTerm::Bump {
                center,
                radius,
                vector,
            } => vector * bump(space.displacement(center, q).norm() / radius),
            FieldTerm::Tube(t) => t.eval(space, q),
            FieldTerm::Contraction(c) => c.eval(space, q),
        }
    }

    /// Upper bound of the sup-norm on the space.
    pub fn size_bound(&self, space: &AmbientSpace) -> f64 {
        match self {
            FieldTerm::Constant { vector } => vector.norm(),
            FieldTerm::Linear { matrix } => {
                let reach = space
                    .sample_points(64)
                    .iter()
                    .map(|p| p.norm())
                    .fold(0.0, f64::max);
                matrix.norm() * reach
            }
            FieldTerm::Bump { vector, .. } => vector.norm(),
            FieldTerm::Tube(t) => t.size(),
            FieldTerm::Contraction(c) => c.size_bound(),
        }
    }

    fn lipschitz_bound(&self) -> f64 {
        match self {
            FieldTerm::Constant { .. } => 0.0,
            FieldTerm::Linear { matrix } => matrix.norm(),
            FieldTerm::Bump { radius, vector, .. } => vector.norm() * BUMP_SLOPE / radius,
            FieldTerm::Tube(t) => {
                t.size() * (1.875 / (t.radius - t.plateau_radius) + 1.875 / (t.ramp * t.segment.duration).max(1e-9))
            }
            FieldTerm::Contraction(c) => c.eta * c.eta * 4.0,
        }
    }

    /// Points where the term is supported (empty for global terms).
    pub fn support_samples(&self) -> Vec<Point> {
        match self {
            FieldTerm::Bump { center, .. } => vec![*center],
            FieldTerm::Tube(t) => t.segment.support_samples(t.plateau_radius, 2),
            FieldTerm::Contraction(c) => c.segment.support_samples(c.radius * 0.6, 3),
            _ => Vec::new(),
        }
    }
}

/// X = base + Σ terms, tangentially projected on implicit surfaces, together
/// with its sampled sup-norm and Lipschitz estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorField {
    pub base: BaseField,
    #[serde(default)]
    pub terms: Vec<FieldTerm>,
    pub sup_norm: f64,
    pub lipschitz: f64,
}

impl VectorField {
    pub fn new(base: BaseField, terms: Vec<FieldTerm>, space: &AmbientSpace) -> Self {
        let mut f = VectorField {
            base,
            terms,
            sup_norm: 0.0,
            lipschitz: 0.0,
        };
        f.estimate_norms(space);
        f
    }

    pub fn eval(&self, space: &AmbientSpace, p: &Point) -> Point {
        let mut v = self.base.eval(p);
        for t in &self.terms {
            v += t.eval(space, p);
        }
        if let AmbientSpace::ImplicitSurface { surface } = space {
            let n = surface.normal(p);
            v -= n * n.dot(&v);
        }
        v
    }

    pub fn with_term(&self, term: FieldTerm, space: &AmbientSpace) -> Self {
        let mut terms = self.terms.clone();
        terms.push(term);
        VectorField::new(self.base.clone(), terms, space)
    }

    /// Same field run at `factor` times the speed.
    pub fn scaled(&self, factor: f64, space: &AmbientSpace) -> Self {
        let base = match &self.base {
            BaseField::TorusConstant { velocity } => BaseField::TorusConstant {
                velocity: velocity * factor,
            },
            other => {
                let comps = polynomial_components(other);
                BaseField::Polynomial {
                    components: comps.map(|c| {
                        c.into_iter()
                            .map(|m| Monomial {
                                coef: m.coef * factor,
                                ..m
                            })
                            .collect()
                    }),
                }
            }
        };
        let terms = self
            .terms
            .iter()
            .map(|t| match t {
                FieldTerm::Constant { vector } => FieldTerm::Constant {
                    vector: vector * factor,
                },
                FieldTerm::Linear { matrix } => FieldTerm::Linear {
                    matrix: matrix * factor,
                },
                FieldTerm::Bump {
                    center,
                    radius,
                    vector,
                } => FieldTerm::Bump {
                    center: *center,
                    radius: *radius,
                    vector: vector * factor,
                },
                other => other.clone(),
            })
            .collect();
        VectorField::new(base, terms, space)
    }

    fn estimate_norms(&mut self, space: &AmbientSpace) {
        let pts = space.sample_points(2048);
        let base_sup = pts
            .iter()
            .map(|p| {
                let mut v = self.base.eval(p);
                if let AmbientSpace::ImplicitSurface { surface } = space {
                    let n = surface.normal(p);
                    v -= n * n.dot(&v);
                }
                v.norm()
            })
            .fold(0.0, f64::max);
        let h = 1e-4;
        let dirs = [Point::x(), Point::y(), Point::z()];
        let base_lip = pts
            .iter()
            .take(512)
            .flat_map(|p| dirs.iter().map(move |d| (p, d)))
            .map(|(p, d)| (self.base.eval(&(p + d * h)) - self.base.eval(p)).norm() / h)
            .fold(0.0, f64::max);
        self.sup_norm = base_sup + self.terms.iter().map(|t| t.size_bound(space)).sum::<f64>();
        self.lipschitz = base_lip + self.terms.iter().map(FieldTerm::lipschitz_bound).sum::<f64>();
    }
}

fn polynomial_components(b: &BaseField) -> [Vec<Monomial>; 3] {
    let m = |coef: f64, powers: [u32; 3]| Monomial { coef, powers };
    match b {
        BaseField::CylinderRotation => [vec![m(-1.0, [0, 1, 0])], vec![m(1.0, [1, 0, 0])], vec![]],
        BaseField::NorthSouthSphere => [
            vec![m(1.0, [1, 0, 1])],
            vec![m(1.0, [0, 1, 1])],
            vec![m(-1.0, [2, 0, 0]), m(-1.0, [0, 2, 0])],
        ],
        BaseField::TorusConstant { velocity } => [
            vec![m(velocity.x, [0, 0, 0])],
            vec![m(velocity.y, [0, 0, 0])],
            vec![m(velocity.z, [0, 0, 0])],
        ],
        BaseField::Polynomial { components } => components.clone(),
    }
}

/// Sampled `‖X − Y‖_{C⁰}` over a nested low-discrepancy sample of the space.
pub fn c0_distance_fields(x: &VectorField, y: &VectorField, space: &AmbientSpace, n_samples: usize) -> f64 {
    c0_distance_on(x, y, space, &space.sample_points(n_samples))
}

/// `max ‖X(p) − Y(p)‖` over the given points.
pub fn c0_distance_on(x: &VectorField, y: &VectorField, space: &AmbientSpace, pts: &[Point]) -> f64 {
    pts.iter()
        .map(|p| (x.eval(space, p) - y.eval(space, p)).norm())
        .fold(0.0, f64::max)
}

/// Transports an orthonormal frame along consecutive samples.
pub fn transported_frames(
    field: &VectorField,
    space: &AmbientSpace,
    points: &[Point],
) -> Vec<[Point; 3]> {
    let mut frames: Vec<[Point; 3]> = Vec::with_capacity(points.len());
    for p in points {
        let e = field.eval(space, p).normalize();
        let seed = match (frames.last(), space) {
            (Some(f), _) => f[1],
            (None, AmbientSpace::ImplicitSurface { surface }) => surface.normal(p).cross(&e),
            (None, _) => {
                let trial = if e.x.abs() < 0.9 { Point::x() } else { Point::y() };
                trial
            }
        };
        let n1 = (seed - e * e.dot(&seed)).normalize();
        let n2 = e.cross(&n1);
        frames.push([e, n1, n2]);
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surface;
    use approx::assert_relative_eq;

    fn box3() -> AmbientSpace {
        AmbientSpace::EuclideanBox {
            lo: Point::repeat(-3.0),
            hi: Point::repeat(3.0),
        }
    }

    #[test]
    fn builtin_fields_evaluate() {
        let p = Point::new(1.0, 2.0, 0.5);
        assert_eq!(BaseField::CylinderRotation.eval(&p), Point::new(-2.0, 1.0, 0.0));
        let ns = BaseField::NorthSouthSphere.eval(&p);
        assert_eq!(ns, Point::new(0.5, 1.0, -5.0));
    }

    #[test]
    fn sphere_field_is_tangent() {
        let space = AmbientSpace::ImplicitSurface {
            surface: Surface::Sphere {
                center: Point::zeros(),
                radius: 1.0,
            },
        };
        let f = VectorField::new(BaseField::NorthSouthSphere, vec![], &space);
        for p in space.sample_points(300) {
            assert!(f.eval(&space, &p).dot(&p).abs() < 1e-12);
            // Unprojected base field is already tangent: x²z + y²z − z(x² + y²) = 0.
            assert!(BaseField::NorthSouthSphere.eval(&p).dot(&p).abs() < 1e-12);
        }
        assert_relative_eq!(f.sup_norm, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn cylinder_norms() {
        let f = VectorField::new(BaseField::CylinderRotation, vec![], &box3());
        assert_relative_eq!(f.sup_norm, 3.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(f.lipschitz, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn c0_distance_constant_offset() {
        let s = box3();
        let x = VectorField::new(BaseField::CylinderRotation, vec![], &s);
        assert_eq!(c0_distance_fields(&x, &x, &s, 500), 0.0);
        let y = x.with_term(
            FieldTerm::Constant {
                vector: Point::new(0.0, 0.0, 0.25),
            },
            &s,
        );
        assert_relative_eq!(c0_distance_fields(&x, &y, &s, 500), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn c0_distance_is_monotone_in_nested_samples() {
        let s = box3();
        let x = VectorField::new(BaseField::CylinderRotation, vec![], &s);
        let y = x.with_term(
            FieldTerm::Bump {
                center: Point::new(0.3, 0.2, -0.1),
                radius: 1.0,
                vector: Point::new(0.1, 0.0, 0.0),
            },
            &s,
        );
        let mut prev = 0.0;
        for n in [10, 50, 200, 1000] {
            let d = c0_distance_fields(&x, &y, &s, n);
            assert!(d >= prev && d <= 0.1 + 1e-15);
            prev = d;
        }
    }

    #[test]
    fn tube_is_full_strength_at_center_and_zero_outside() {
        let s = AmbientSpace::FlatTorus {
            periods: Point::repeat(1.0),
        };
        let x = VectorField::new(
            BaseField::TorusConstant {
                velocity: Point::new(1.0, 2f64.sqrt(), 3f64.sqrt()),
            },
            vec![],
            &s,
        );
        let pts: Vec<Point> = (0..=32)
            .map(|i| Point::new(0.2, 0.2, 0.2) + x.base.eval(&Point::zeros()) * (0.4 * i as f64 / 32.0))
            .collect();
        let frames = transported_frames(&x, &s, &pts);
        let tube = TubePerturbation {
            segment: OrbitSegment::new(0.4, pts.clone(), frames),
            radius: 0.03,
            plateau_radius: 0.02,
            velocity: [0.04, 0.0],
            ramp: 0.2,
        };
        let mid = pts[16];
        assert_relative_eq!(tube.eval(&s, &mid).norm(), 0.04, epsilon = 1e-12);
        let far = mid + Point::new(0.0, 0.1, -0.1);
        assert_eq!(tube.eval(&s, &far), Point::zeros());
        let y = x.with_term(FieldTerm::Tube(tube.clone()), &s);
        // Low-discrepancy samples rarely land in the thin tube: value in [0, a].
        let d = c0_distance_fields(&x, &y, &s, 2000);
        assert!((0.0..=0.04 + 1e-15).contains(&d));
        assert_relative_eq!(c0_distance_on(&x, &y, &s, &[mid]), 0.04, epsilon = 1e-12);
    }
}
