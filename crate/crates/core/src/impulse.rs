//! Impulse maps `I: D → D̂` in chart coordinates: an affine base map followed
//! by a sum of compactly supported displacement bumps.
//!
//! Writing `w = A·u + b` for the base image, the impulse is
//! `I(u) = w + Σ φᵢ(w)`. When the displacement sum has Lipschitz constant
//! `L < 1` the map `w ↦ w + Σ φᵢ(w)` is a homeomorphism which is the identity
//! outside the union of the supports, so a bump perturbation ζ∘I of an
//! impulse is again an impulse of this form.
//!
//! A push is the exception: it composes small translation steps along a
//! segment, so its displacement may have a large Lipschitz constant while each
//! step is a homeomorphism. It must not overlap any other bump.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::profile::{bump, BUMP_SLOPE, RADIAL_PEAK, RADIAL_SLOPE};
use crate::{ChartPoint, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ImpulseBump {
    /// `φ(w) = bump(|w − c|/r)·d`.
    Translate {
        center: ChartPoint,
        radius: f64,
        displacement: ChartPoint,
    },
    /// `φ(w) = −κ·bump(|w − c|/r)·(w − c)`: radial contraction toward `c`.
    Contract {
        center: ChartPoint,
        radius: f64,
        strength: f64,
    },
    /// `φ(w) = τ_N ∘ ⋯ ∘ τ_1(w) − w` where `τ_k` translates by `(to − from)/N`
    /// with a bump of radius `r` centered at `from + (k−1)/N·(to − from)`.
    /// Each step carries the previous center onto the next, so `from ↦ to`.
    Push {
        from: ChartPoint,
        to: ChartPoint,
        radius: f64,
        steps: usize,
    },
}

impl ImpulseBump {
    /// Push from `from` to `to` with steps of Lipschitz constant at most
    /// `step_lipschitz`.
    pub fn push(from: ChartPoint, to: ChartPoint, radius: f64, step_lipschitz: f64) -> Self {
        let steps = ((to - from).norm() * BUMP_SLOPE / (radius * step_lipschitz)).ceil().max(1.0) as usize;
        ImpulseBump::Push {
            from,
            to,
            radius,
            steps,
        }
    }

    pub fn center(&self) -> ChartPoint {
        match self {
            ImpulseBump::Translate { center, .. } | ImpulseBump::Contract { center, .. } => *center,
            ImpulseBump::Push { from, .. } => *from,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            ImpulseBump::Translate { radius, .. }
            | ImpulseBump::Contract { radius, .. }
            | ImpulseBump::Push { radius, .. } => *radius,
        }
    }

    /// Centers of the disks whose union contains the support.
    fn centers(&self) -> Vec<ChartPoint> {
        match self {
            ImpulseBump::Push { from, to, steps, .. } => {
                (0..*steps).map(|k| from + (to - from) * (k as f64 / *steps as f64)).collect()
            }
            _ => vec![self.center()],
        }
    }

    fn step(&self) -> ChartPoint {
        match self {
            ImpulseBump::Push { from, to, steps, .. } => (to - from) / *steps as f64,
            _ => ChartPoint::zeros(),
        }
    }

    /// Segment carrying the support: the push path, or the center.
    fn spine(&self) -> (ChartPoint, ChartPoint) {
        match self {
            ImpulseBump::Push { from, to, .. } => (*from, *to),
            _ => (self.center(), self.center()),
        }
    }

    /// Whether `w` lies within the radius of the spine, which contains the
    /// support.
    pub fn covers(&self, w: &ChartPoint) -> bool {
        let (a, b) = self.spine();
        segment_distance(&a, &b, w) < self.radius()
    }

    /// Inverse of a push on its support, stepping back through `τ_N, …, τ_1`.
    fn push_inverse(&self, v: &ChartPoint, tol: f64) -> Result<ChartPoint> {
        let (step, r) = (self.step(), self.radius());
        let mut w = *v;
        for c in self.centers().iter().rev() {
            let target = w;
            let mut residual = f64::INFINITY;
            for _ in 0..200 {
                let next = target - step * bump((w - c).norm() / r);
                residual = (next - w).norm();
                w = next;
                if residual <= tol {
                    break;
                }
            }
            if residual > tol {
                return Err(Error::InverseDiverged {
                    iterations: 200,
                    residual,
                });
            }
        }
        Ok(w)
    }

    pub fn eval(&self, w: &ChartPoint) -> ChartPoint {
        match self {
            ImpulseBump::Translate {
                center,
                radius,
                displacement,
            } => displacement * bump((w - center).norm() / radius),
            ImpulseBump::Contract {
                center,
                radius,
                strength,
            } => {
                let d = w - center;
                -d * (strength * bump(d.norm() / radius))
            }
            ImpulseBump::Push { radius, .. } => {
                if !self.covers(w) {
                    return ChartPoint::zeros();
                }
                let step = self.step();
                let moved = self
                    .centers()
                    .iter()
                    .fold(*w, |u, c| u + step * bump((u - c).norm() / radius));
                moved - w
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            ImpulseBump::Translate {
                radius,
                displacement,
                ..
            } => displacement.norm() * BUMP_SLOPE / radius,
            ImpulseBump::Contract { strength, .. } => strength.abs() * RADIAL_SLOPE,
            ImpulseBump::Push { radius, .. } => self.step().norm() * BUMP_SLOPE / radius,
        }
    }

    /// Lipschitz bound of the displacement itself, which for a push compounds
    /// over the steps.
    fn displacement_lipschitz(&self) -> f64 {
        match self {
            ImpulseBump::Push { steps, .. } => (1.0 + self.lipschitz()).powi(*steps as i32) - 1.0,
            _ => self.lipschitz(),
        }
    }

    /// Sup-norm of the displacement.
    pub fn size(&self) -> f64 {
        match self {
            ImpulseBump::Translate { displacement, .. } => displacement.norm(),
            ImpulseBump::Contract {
                radius, strength, ..
            } => strength.abs() * radius * RADIAL_PEAK,
            ImpulseBump::Push { from, to, .. } => (to - from).norm(),
        }
    }

    fn overlaps(&self, other: &ImpulseBump) -> bool {
        let (a, b) = self.spine();
        let (c, d) = other.spine();
        segments_distance(&a, &b, &c, &d) < self.radius() + other.radius()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Impulse {
    pub matrix: Matrix2<f64>,
    pub offset: ChartPoint,
    #[serde(default)]
    pub bumps: Vec<ImpulseBump>,
}

impl Impulse {
    pub fn affine(matrix: Matrix2<f64>, offset: ChartPoint) -> Self {
        Impulse {
            matrix,
            offset,
            bumps: Vec::new(),
        }
    }

    pub fn identity() -> Self {
        Self::affine(Matrix2::identity(), ChartPoint::zeros())
    }

    pub fn base(&self, u: &ChartPoint) -> ChartPoint {
        self.matrix * u + self.offset
    }

    pub fn base_inverse(&self, w: &ChartPoint) -> Option<ChartPoint> {
        self.matrix.try_inverse().map(|m| m * (w - self.offset))
    }

    pub fn displacement(&self, w: &ChartPoint) -> ChartPoint {
        self.bumps
            .iter()
            .fold(ChartPoint::zeros(), |acc, b| acc + b.eval(w))
    }

    /// Forward map in chart coordinates.
    pub fn apply_chart(&self, u: &ChartPoint) -> ChartPoint {
        let w = self.base(u);
        w + self.displacement(&w)
    }

    /// Inverse in chart coordinates: solve `w + φ(w) = v` by the fixed-point
    /// iteration `w ← v − φ(w)`, which contracts because `L < 1`. Points in
    /// the support of a push are inverted through its steps.
    pub fn inverse_chart(&self, v: &ChartPoint, tol: f64) -> Result<ChartPoint> {
        let is_push = |b: &&ImpulseBump| matches!(b, ImpulseBump::Push { .. });
        if let Some(p) = self.bumps.iter().filter(is_push).find(|p| p.covers(v)) {
            let w = p.push_inverse(v, tol)?;
            return self.base_inverse(&w).ok_or(Error::InverseDiverged {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
        let others: Vec<&ImpulseBump> = self.bumps.iter().filter(|b| !is_push(b)).collect();
        let mut w = *v;
        let budget = 5000;
        let mut residual = f64::INFINITY;
        if !others.is_empty() {
            for _ in 0..budget {
                let next = v - others.iter().fold(ChartPoint::zeros(), |acc, b| acc + b.eval(&w));
                residual = (next - w).norm();
                w = next;
                if residual <= tol {
                    break;
                }
            }
            if residual > tol {
                return Err(Error::InverseDiverged {
                    iterations: budget,
                    residual,
                });
            }
        }
        self.base_inverse(&w).ok_or(Error::InverseDiverged {
            iterations: 0,
            residual: f64::INFINITY,
        })
    }

    /// Lipschitz bound of the displacement sum: the worst total over groups of
    /// bumps whose supports meet a common bump. A push alone counts with its
    /// step constant; overlapping anything it counts with its full
    /// displacement constant.
    pub fn lipschitz_bound(&self) -> f64 {
        self.bumps
            .iter()
            .map(|bi| {
                let group: Vec<&ImpulseBump> = self.bumps.iter().filter(|bj| bi.overlaps(bj)).collect();
                if group.len() == 1 {
                    bi.lipschitz()
                } else {
                    group.iter().map(|b| b.displacement_lipschitz()).sum::<f64>()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Lipschitz bound after adding `extra`.
    pub fn lipschitz_bound_with(&self, extra: &ImpulseBump) -> f64 {
        let mut j = self.clone();
        j.bumps.push(extra.clone());
        j.lipschitz_bound()
    }

    /// `ζ ∘ I` where ζ adds one more bump.
    pub fn with_bump(&self, b: ImpulseBump) -> Impulse {
        let mut j = self.clone();
        j.bumps.push(b);
        j
    }
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(a: &ChartPoint, b: &ChartPoint, p: &ChartPoint) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Distance between the segments `[a, b]` and `[c, d]`.
pub fn segments_distance(a: &ChartPoint, b: &ChartPoint, c: &ChartPoint, d: &ChartPoint) -> f64 {
    let cross = |u: ChartPoint, v: ChartPoint| u.x * v.y - u.y * v.x;
    let side = |p: &ChartPoint, q: &ChartPoint, r: &ChartPoint| cross(q - p, r - p);
    let (d1, d2) = (side(a, b, c), side(a, b, d));
    let (d3, d4) = (side(c, d, a), side(c, d, b));
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    segment_distance(a, b, c)
        .min(segment_distance(a, b, d))
        .min(segment_distance(c, d, a))
        .min(segment_distance(c, d, b))
}

/// Sampled C⁰ distance between two impulses over chart samples of D.
pub fn c0_distance_impulses(i: &Impulse, j: &Impulse, samples: &[ChartPoint]) -> f64 {
    samples
        .iter()
        .map(|u| (i.apply_chart(u) - j.apply_chart(u)).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<ChartPoint> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                v.push(ChartPoint::new(
                    1.5 + i as f64 / (n - 1) as f64,
                    -0.5 + j as f64 / (n - 1) as f64,
                ));
            }
        }
        v
    }

    #[test]
    fn affine_impulse_roundtrip() {
        let imp = Impulse::affine(
            Matrix2::new(0.0, -1.0, 1.0, 0.0),
            ChartPoint::new(0.3, -0.2),
        );
        for u in grid(20) {
            let back = imp.inverse_chart(&imp.apply_chart(&u), 1e-14).unwrap();
            assert!((back - u).norm() <= 1e-12);
        }
    }

    #[test]
    fn bump_moves_center_exactly() {
        let c = ChartPoint::new(2.0, 0.0);
        let imp = Impulse::identity().with_bump(ImpulseBump::Translate {
            center: c,
            radius: 0.2,
            displacement: ChartPoint::new(0.1, 0.0),
        });
        assert_relative_eq!(imp.apply_chart(&c), ChartPoint::new(2.1, 0.0), epsilon = 1e-15);
        let back = imp.inverse_chart(&ChartPoint::new(2.1, 0.0), 1e-13).unwrap();
        assert!((back - c).norm() <= 1e-10);
        assert!(imp.lipschitz_bound() < 1.0);
        assert_relative_eq!(
            c0_distance_impulses(&Impulse::identity(), &imp, &[c]),
            0.1,
            epsilon = 1e-15
        );
    }

    #[test]
    fn contraction_bump_fixes_center() {
        let c = ChartPoint::new(2.0, 0.1);
        let imp = Impulse::identity().with_bump(ImpulseBump::Contract {
            center: c,
            radius: 0.3,
            strength: 0.5,
        });
        assert_eq!(imp.apply_chart(&c), c);
        let near = c + ChartPoint::new(1e-4, 0.0);
        assert_relative_eq!((imp.apply_chart(&near) - c).norm(), 0.5e-4, epsilon = 1e-9);
        assert!(imp.bumps[0].size() <= 0.5 * 0.3 * 0.29);
    }

    #[test]
    fn push_carries_its_start_to_its_end() {
        let (from, to) = (ChartPoint::new(2.0, 0.0), ChartPoint::new(2.03, 0.01));
        let push = ImpulseBump::push(from, to, 0.004, 0.5);
        assert!(push.lipschitz() <= 0.5);
        let imp = Impulse::identity().with_bump(push.clone());
        assert_relative_eq!(imp.apply_chart(&from), to, epsilon = 1e-12);
        assert_eq!(imp.lipschitz_bound(), push.lipschitz());
        // A point beside the tube stays put.
        let aside = ChartPoint::new(2.015, 0.01);
        assert!(segment_distance(&from, &to, &aside) > 0.004);
        assert_eq!(imp.apply_chart(&aside), aside);
        assert_relative_eq!(c0_distance_impulses(&Impulse::identity(), &imp, &[from, aside]), push.size(), epsilon = 1e-12);
        let back = imp.inverse_chart(&to, 1e-14).unwrap();
        assert!((back - from).norm() <= 1e-10);
        // Overlapping another bump voids the step bound.
        let other = ImpulseBump::Translate {
            center: ChartPoint::new(2.0, 0.005),
            radius: 0.01,
            displacement: ChartPoint::new(1e-4, 0.0),
        };
        assert!(imp.lipschitz_bound_with(&other) > 1.0);
    }

    #[test]
    fn segment_distances() {
        let p = |x, y| ChartPoint::new(x, y);
        assert_relative_eq!(segment_distance(&p(0.0, 0.0), &p(1.0, 0.0), &p(0.5, 2.0)), 2.0);
        assert_relative_eq!(segment_distance(&p(0.0, 0.0), &p(1.0, 0.0), &p(4.0, 4.0)), 5.0);
        assert_relative_eq!(segment_distance(&p(1.0, 1.0), &p(1.0, 1.0), &p(1.0, 0.0)), 1.0);
        assert_eq!(segments_distance(&p(0.0, 0.0), &p(1.0, 1.0), &p(0.0, 1.0), &p(1.0, 0.0)), 0.0);
        assert_relative_eq!(segments_distance(&p(0.0, 0.0), &p(1.0, 0.0), &p(0.0, 1.0), &p(1.0, 2.0)), 1.0);
    }

    proptest! {
        #[test]
        fn push_is_invertible(
            dx in -0.05f64..0.05, dz in -0.05f64..0.05, r in 0.001f64..0.02,
            ox in -0.06f64..0.06, oz in -0.06f64..0.06,
        ) {
            let from = ChartPoint::new(2.0, 0.0);
            let imp = Impulse::identity().with_bump(ImpulseBump::push(from, from + ChartPoint::new(dx, dz), r, 0.5));
            let u = from + ChartPoint::new(ox, oz);
            let v = imp.apply_chart(&u);
            prop_assert!((v - u).norm() <= ChartPoint::new(dx, dz).norm() + 1e-12);
            let back = imp.inverse_chart(&v, 1e-14).unwrap();
            prop_assert!((back - u).norm() <= 1e-9);
        }

        #[test]
        fn bumped_impulse_is_injective_and_invertible(
            cx in 1.6f64..2.4, cz in -0.4f64..0.4, dx in -0.05f64..0.05, dz in -0.05f64..0.05,
            px in 1.5f64..2.5, pz in -0.5f64..0.5, qx in 1.5f64..2.5, qz in -0.5f64..0.5,
        ) {
            let imp = Impulse::identity().with_bump(ImpulseBump::Translate {
                center: ChartPoint::new(cx, cz),
                radius: 0.15,
                displacement: ChartPoint::new(dx, dz),
            });
            let l = imp.lipschitz_bound();
            prop_assert!(l < 1.0);
            let (p, q) = (ChartPoint::new(px, pz), ChartPoint::new(qx, qz));
            let sep = (imp.apply_chart(&p) - imp.apply_chart(&q)).norm();
            prop_assert!(sep >= (1.0 - l) * (p - q).norm() - 1e-12);
            let back = imp.inverse_chart(&imp.apply_chart(&p), 1e-13).unwrap();
            prop_assert!((back - p).norm() <= 1e-8);
        }
    }
}
