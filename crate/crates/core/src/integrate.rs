//! Dormand–Prince 5(4) integration with dense output, and first hitting times
//! to section patches.

use crate::field::VectorField;
use crate::geometry::AmbientSpace;
use crate::section::SectionPatch;
use crate::{ChartPoint, Error, Point, Result};

const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct Step {
    pub t0: f64,
    pub h: f64,
    pub y0: Point,
    pub y1: Point,
    k1: Point,
    rc: [Point; 4],
}

impl Step {
    /// Dense output at time `t ∈ [t0, t0 + h]`.
    pub fn interp(&self, t: f64) -> Point {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        self.y0 + (self.rc[0] + (self.rc[1] + (self.rc[2] + self.rc[3] * th1) * th) * th1) * th
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }
}

pub enum Control {
    Continue,
    Stop,
}

/// Flow of a vector field with fixed integration settings. `backward` runs
/// the negated field.
#[derive(Clone, Copy)]
pub struct Flow<'a> {
    pub field: &'a VectorField,
    pub space: &'a AmbientSpace,
    pub tol: f64,
    pub h_max: f64,
    pub backward: bool,
}

impl<'a> Flow<'a> {
    pub fn new(field: &'a VectorField, space: &'a AmbientSpace, tol: f64, h_max: f64) -> Self {
        Flow {
            field,
            space,
            tol,
            h_max,
            backward: false,
        }
    }

    pub fn reversed(&self) -> Self {
        Flow {
            backward: !self.backward,
            ..*self
        }
    }

    pub fn rhs(&self, p: &Point) -> Point {
        let v = self.field.eval(self.space, p);
        if self.backward {
            -v
        } else {
            v
        }
    }

    fn error_scale(&self, a: f64, b: f64) -> f64 {
        match self.space {
            AmbientSpace::FlatTorus { .. } => self.tol,
            _ => self.tol * (1.0 + a.abs().max(b.abs())),
        }
    }

    /// Single Dormand–Prince step: solution, FSAL derivative, error norm, dense coefficients.
    fn dp_step(&self, y0: &Point, k1: &Point, h: f64) -> (Point, Point, f64, [Point; 4]) {
        let k2 = self.rhs(&(y0 + k1 * (h * A2[0])));
        let k3 = self.rhs(&(y0 + (k1 * A3[0] + k2 * A3[1]) * h));
        let k4 = self.rhs(&(y0 + (k1 * A4[0] + k2 * A4[1] + k3 * A4[2]) * h));
        let k5 = self.rhs(&(y0 + (k1 * A5[0] + k2 * A5[1] + k3 * A5[2] + k4 * A5[3]) * h));
        let k6 = self.rhs(&(y0 + (k1 * A6[0] + k2 * A6[1] + k3 * A6[2] + k4 * A6[3] + k5 * A6[4]) * h));
        let y1 = y0 + (k1 * B[0] + k3 * B[2] + k4 * B[3] + k5 * B[4] + k6 * B[5]) * h;
        let k7 = self.rhs(&y1);
        let e = (k1 * E[0] + k3 * E[2] + k4 * E[3] + k5 * E[4] + k6 * E[5] + k7 * E[6]) * h;
        let mut acc = 0.0;
        for i in 0..3 {
            let sc = self.error_scale(y0[i], y1[i]);
            acc += (e[i] / sc).powi(2);
        }
        let err = (acc / 3.0).sqrt();
        let ydiff = y1 - y0;
        let bspl = k1 * h - ydiff;
        let rc = [
            ydiff,
            bspl,
            ydiff - k7 * h - bspl,
            (k1 * D[0] + k3 * D[2] + k4 * D[3] + k5 * D[4] + k6 * D[5] + k7 * D[6]) * h,
        ];
        (y1, k7, err, rc)
    }

    /// Integrates from `x0` over `[0, duration]` (unreduced coordinates),
    /// calling `on_step` after every accepted step. Returns the final time
    /// and state.
    pub fn integrate(
        &self,
        x0: &Point,
        duration: f64,
        mut on_step: impl FnMut(&Step) -> Result<Control>,
    ) -> Result<(f64, Point)> {
        let mut t = 0.0;
        let mut y = *x0;
        if duration <= 0.0 {
            return Ok((0.0, y));
        }
        let mut k1 = self.rhs(&y);
        let mut h = self.h_max.min(1e-2).min(duration);
        let mut rejected = false;
        while t < duration {
            let mut last = false;
            if t + h >= duration {
                h = duration - t;
                last = true;
            }
            if h < 1e-14 * (1.0 + t.abs()) {
                if last {
                    // A remainder below step resolution.
                    return Ok((duration, y + k1 * h));
                }
                return Err(Error::StepUnderflow { time: t });
            }
            let (mut y1, k7, err, rc) = self.dp_step(&y, &k1, h);
            if !err.is_finite() {
                h *= 0.2;
                rejected = true;
                continue;
            }
            if err <= 1.0 {
                if let AmbientSpace::ImplicitSurface { surface } = self.space {
                    y1 = surface.project(&y1);
                }
                let step = Step {
                    t0: t,
                    h,
                    y0: y,
                    y1,
                    k1,
                    rc,
                };
                t = if last { duration } else { t + h };
                y = y1;
                k1 = if matches!(self.space, AmbientSpace::ImplicitSurface { .. }) {
                    self.rhs(&y)
                } else {
                    k7
                };
                if let Control::Stop = on_step(&step)? {
                    return Ok((t, y));
                }
                if !self.space.contains(&y) {
                    return Err(Error::LeftDomain {
                        time: if self.backward { -t } else { t },
                        point: y,
                    });
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                let fac = if rejected { fac.min(1.0) } else { fac };
                h = (h * fac).min(self.h_max);
                rejected = false;
            } else {
                h *= (0.9 * err.powf(-0.2)).max(0.2);
                rejected = true;
            }
        }
        Ok((t, y))
    }

    /// One explicit step of length `dt` from the start of `step`; accurate
    /// to the integration tolerance because `dt ≤ step.h`.
    pub fn restep(&self, step: &Step, dt: f64) -> Point {
        if dt == 0.0 {
            return step.y0;
        }
        let (y, _, _, _) = self.dp_step(&step.y0, &step.k1, dt);
        match self.space {
            AmbientSpace::ImplicitSurface { surface } => surface.project(&y),
            _ => y,
        }
    }

    /// `φ_t(x0)` in unreduced coordinates; negative `t` runs backward.
    pub fn flow_raw(&self, x0: &Point, t: f64) -> Result<Point> {
        if t < 0.0 {
            return self.reversed().flow_raw(x0, -t);
        }
        Ok(self.integrate(x0, t, |_| Ok(Control::Continue))?.1)
    }

    /// `φ_t(x0)`, reduced to the canonical representative.
    pub fn flow(&self, x0: &Point, t: f64) -> Result<Point> {
        if t == 0.0 {
            return Ok(*x0);
        }
        Ok(self.space.reduce(&self.flow_raw(x0, t)?))
    }

    /// Earliest admissible crossing of any of `sections`; see [`HitOptions`].
    pub fn first_hit(&self, x0: &Point, sections: &[&SectionPatch], opts: &HitOptions) -> Result<HitOutcome> {
        self.first_hit_recording(x0, sections, opts, None)
    }

    /// As [`Flow::first_hit`], also pushing `(t, state)` after every accepted
    /// step (unreduced) into `samples`.
    pub fn first_hit_recording(
        &self,
        x0: &Point,
        sections: &[&SectionPatch],
        opts: &HitOptions,
        mut samples: Option<&mut Vec<(f64, Point)>>,
    ) -> Result<HitOutcome> {
        if let Some(s) = samples.as_deref_mut() {
            s.push((0.0, *x0));
        }
        self.first_hit_observed(x0, sections, opts, |step, hit| {
            if let Some(s) = samples.as_deref_mut() {
                match hit {
                    Some(h) => s.push((h.time, h.raw_point)),
                    None => s.push((step.t1(), step.y1)),
                }
            }
            Control::Continue
        })
    }

    /// As [`Flow::first_hit`], calling `observer` after every accepted step
    /// with the hit ending the search, if it lies in that step. The observer
    /// may stop the search early; the outcome is then `NoHit` at the stop.
    pub fn first_hit_observed(
        &self,
        x0: &Point,
        sections: &[&SectionPatch],
        opts: &HitOptions,
        mut observer: impl FnMut(&Step, Option<&HitResult>) -> Control,
    ) -> Result<HitOutcome> {
        let space = self.space;
        let mut g_prev: Vec<f64> = sections
            .iter()
            .map(|s| {
                let g = s.section_value(space, x0);
                if g.abs() <= opts.section_tol {
                    0.0
                } else {
                    g
                }
            })
            .collect();
        let mut warnings = Vec::new();
        let mut found: Option<HitResult> = None;
        let (t_end, y_end) = self.integrate(x0, opts.t_max, |step| {
            let mut best: Option<HitResult> = None;
            for (si, sec) in sections.iter().enumerate() {
                let g1 = sec.section_value(space, &step.y1);
                let g0 = g_prev[si];
                g_prev[si] = g1;
                let crossing = (g0 < 0.0 && g1 >= 0.0) || (g0 > 0.0 && g1 <= 0.0);
                if !crossing || step.t1() < opts.burn_in {
                    continue;
                }
                let Some(mut hit) = self.refine_crossing(step, sec, g0, g1, opts.section_tol) else {
                    continue;
                };
                if hit.time < opts.burn_in || hit.time <= 0.0 {
                    continue;
                }
                hit.section = si;
                if hit.transversality < sec.transversality_floor {
                    warnings.push(TangencyWarning {
                        time: hit.time,
                        point: hit.point,
                        transversality: hit.transversality,
                    });
                    continue;
                }
                if best.as_ref().is_none_or(|b| hit.time < b.time) {
                    best = Some(hit);
                }
            }
            let ctl = observer(step, best.as_ref());
            if best.is_some() {
                found = best;
                return Ok(Control::Stop);
            }
            Ok(ctl)
        })?;
        Ok(match found {
            Some(mut h) => {
                h.warnings = warnings;
                HitOutcome::Hit(h)
            }
            None => HitOutcome::NoHit {
                time: t_end,
                point: space.reduce(&y_end),
                warnings,
            },
        })
    }

    /// Root of `g` inside one step: Illinois iteration on the dense output,
    /// then Newton polishing on re-integrated points. Returns `None` for a
    /// spurious sign change (a jump of a wrapped section function) or a point
    /// outside the chart rectangle.
    fn refine_crossing(&self, step: &Step, sec: &SectionPatch, g0: f64, g1: f64, section_tol: f64) -> Option<HitResult> {
        let space = self.space;
        let g = |t: f64| sec.section_value(space, &step.interp(t));
        let (mut a, mut b) = (step.t0, step.t1());
        let (mut ga, mut gb) = (g0, g1);
        let mut side = 0i8;
        let mut t = b;
        for _ in 0..100 {
            if gb == ga {
                break;
            }
            t = (a * gb - b * ga) / (gb - ga);
            if !(t > a && t < b) {
                t = 0.5 * (a + b);
            }
            let gt = g(t);
            if gt == 0.0 || (b - a) <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
                break;
            }
            if (gt < 0.0) == (ga < 0.0) {
                a = t;
                ga = gt;
                if side == -1 {
                    gb *= 0.5;
                }
                side = -1;
            } else {
                b = t;
                gb = gt;
                if side == 1 {
                    ga *= 0.5;
                }
                side = 1;
            }
        }
        let mut p = self.restep(step, t - step.t0);
        for _ in 0..3 {
            let gp = sec.section_value(space, &p);
            let rate = sec.gradient(&p).dot(&self.rhs(&p));
            if gp == 0.0 || rate.abs() < 1e-12 {
                break;
            }
            let tn = (t - gp / rate).clamp(step.t0, step.t1());
            if tn == t {
                break;
            }
            t = tn;
            p = self.restep(step, t - step.t0);
        }
        let gp = sec.section_value(space, &p);
        if gp.abs() > section_tol.max(1e-7) {
            return None;
        }
        let reduced = space.reduce(&p);
        let chart = sec.chart_coords(space, &reduced);
        if !sec.in_rect(&chart, 1e-12) {
            return None;
        }
        let x = self.rhs(&p);
        let transversality = sec.gradient(&p).dot(&x).abs();
        Some(HitResult {
            time: t,
            point: reduced,
            raw_point: p,
            chart,
            section: 0,
            transversality,
            interior: sec.is_interior(&chart),
            direction: if g1 > g0 { 1 } else { -1 },
            warnings: Vec::new(),
        })
    }
}

/// Settings of a hitting-time search.
#[derive(Debug, Clone, Copy)]
pub struct HitOptions {
    /// Search horizon: no hit before `t_max` is reported as [`HitOutcome::NoHit`].
    pub t_max: f64,
    /// Crossings earlier than this are ignored.
    pub burn_in: f64,
    /// `|g| ≤ section_tol` counts as on the section.
    pub section_tol: f64,
}

impl HitOptions {
    pub fn new(t_max: f64, section_tol: f64) -> Self {
        HitOptions {
            t_max,
            burn_in: 0.0,
            section_tol,
        }
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangencyWarning {
    pub time: f64,
    pub point: Point,
    pub transversality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitResult {
    pub time: f64,
    /// Hit point, reduced.
    pub point: Point,
    /// Hit point in the integration's unreduced coordinates.
    pub raw_point: Point,
    pub chart: ChartPoint,
    /// Index into the searched section list.
    pub section: usize,
    /// `|X·∇g|` at the hit.
    pub transversality: f64,
    pub interior: bool,
    /// Sign of the crossing (direction of increasing `g` is `+1`).
    pub direction: i8,
    pub warnings: Vec<TangencyWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HitOutcome {
    Hit(HitResult),
    NoHit {
        time: f64,
        point: Point,
        warnings: Vec<TangencyWarning>,
    },
}

impl HitOutcome {
    pub fn hit(self) -> Option<HitResult> {
        match self {
            HitOutcome::Hit(h) => Some(h),
            HitOutcome::NoHit { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BaseField;
    use crate::geometry::Surface;
    use crate::section::Chart;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn cyl() -> (AmbientSpace, VectorField) {
        let s = AmbientSpace::EuclideanBox {
            lo: Point::repeat(-3.0),
            hi: Point::repeat(3.0),
        };
        let f = VectorField::new(BaseField::CylinderRotation, vec![], &s);
        (s, f)
    }

    fn s1a_d() -> SectionPatch {
        SectionPatch::affine(
            "D",
            Point::zeros(),
            [Point::x(), Point::z()],
            ChartPoint::new(1.5, -0.5),
            ChartPoint::new(2.5, 0.5),
        )
    }

    #[test]
    fn circular_flow_quarter_turn() {
        let (s, f) = cyl();
        let fl = Flow::new(&f, &s, 1e-9, 0.1);
        let p = fl.flow(&Point::new(2.0, 0.0, 0.0), PI / 2.0).unwrap();
        assert!((p - Point::new(0.0, 2.0, 0.0)).norm() <= 1e-8);
        assert_eq!(fl.flow(&Point::new(1.0, 2.0, 0.3), 0.0).unwrap(), Point::new(1.0, 2.0, 0.3));
        let back = fl.flow(&p, -PI / 2.0).unwrap();
        assert!((back - Point::new(2.0, 0.0, 0.0)).norm() <= 1e-8);
    }

    #[test]
    fn remainder_below_step_resolution() {
        let (s, f) = cyl();
        let fl = Flow::new(&f, &s, 1e-9, 0.1);
        let x = Point::new(2.0, 0.0, 0.0);
        let p = fl.flow_raw(&x, 1e-16).unwrap();
        assert_relative_eq!(p, Point::new(2.0, 2e-16, 0.0), epsilon = 1e-30);
        let q = fl.flow_raw(&x, 1.0 + 1e-15).unwrap();
        assert!((q - Point::new(2.0 * 1f64.cos(), 2.0 * 1f64.sin(), 0.0)).norm() <= 1e-8);
    }

    #[test]
    fn torus_linear_flow() {
        let s = AmbientSpace::FlatTorus {
            periods: Point::repeat(1.0),
        };
        let f = VectorField::new(
            BaseField::TorusConstant {
                velocity: Point::new(1.0, 2f64.sqrt(), 3f64.sqrt()),
            },
            vec![],
            &s,
        );
        let fl = Flow::new(&f, &s, 1e-9, 0.1);
        let p = fl.flow(&Point::zeros(), 1.0).unwrap();
        let expect = Point::new(0.0, 0.414_213_56, 0.732_050_81);
        assert!(s.distance(&p, &expect) <= 1e-8);
        assert!(s.distance(&p, &Point::new(0.0, 2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0)) <= 1e-9);
    }

    #[test]
    fn s1a_hit_from_landing_section() {
        let (s, f) = cyl();
        let fl = Flow::new(&f, &s, 1e-9, 0.1);
        let d = s1a_d();
        let h = fl
            .first_hit(&Point::new(0.0, 2.0, 0.0), &[&d], &HitOptions::new(200.0, 1e-9))
            .unwrap()
            .hit()
            .unwrap();
        assert_relative_eq!(h.time, 1.5 * PI, epsilon = 1e-6);
        assert!((h.point - Point::new(2.0, 0.0, 0.0)).norm() <= 1e-6);
        assert!(h.interior);
        assert_relative_eq!(h.transversality, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn small_circle_never_hits() {
        let (s, f) = cyl();
        let fl = Flow::new(&f, &s, 1e-9, 0.1);
        let d = s1a_d();
        let out = fl
            .first_hit(&Point::new(0.0, 0.9, 0.0), &[&d], &HitOptions::new(100.0, 1e-9))
            .unwrap();
        assert!(matches!(out, HitOutcome::NoHit { .. }));
    }

    #[test]
    fn start_on_section_is_not_a_hit() {
        let (s, f) = cyl();
        let fl = Flow::new(&f, &s, 1e-9, 0.1);
        let d = s1a_d();
        let h = fl
            .first_hit(&Point::new(2.0, 0.0, 0.0), &[&d], &HitOptions::new(20.0, 1e-9))
            .unwrap()
            .hit()
            .unwrap();
        assert_relative_eq!(h.time, 2.0 * PI, epsilon = 1e-7);
    }

    #[test]
    fn grazing_hit_is_rejected_with_warning() {
        // Section tangent to the flow: the plane x = 2 meets the circle of
        // radius 2 tangentially at (2, 0, 0).
        let (s, f) = cyl();
        let fl = Flow::new(&f, &s, 1e-9, 0.1);
        let mut sec = SectionPatch::affine(
            "T",
            Point::new(2.0, 0.0, 0.0),
            [Point::y(), Point::z()],
            ChartPoint::new(-0.5, -0.5),
            ChartPoint::new(0.5, 0.5),
        );
        sec.transversality_floor = 0.5;
        // Radius slightly above 2: two crossings near tangency.
        let x0 = Point::new(0.0, -2.05, 0.0);
        let out = fl.first_hit(&x0, &[&sec], &HitOptions::new(3.0, 1e-9)).unwrap();
        match out {
            HitOutcome::NoHit { warnings, .. } => assert!(!warnings.is_empty()),
            HitOutcome::Hit(h) => panic!("grazing hit accepted: {h:?}"),
        }
    }

    #[test]
    fn torus_wrap_is_not_a_crossing() {
        let s = AmbientSpace::FlatTorus {
            periods: Point::repeat(1.0),
        };
        let f = VectorField::new(
            BaseField::TorusConstant {
                velocity: Point::new(1.0, 0.0, 0.0),
            },
            vec![],
            &s,
        );
        let fl = Flow::new(&f, &s, 1e-9, 0.1);
        let d = SectionPatch::affine(
            "D",
            Point::zeros(),
            [Point::y(), Point::z()],
            ChartPoint::new(0.1, 0.1),
            ChartPoint::new(0.4, 0.4),
        );
        let h = fl
            .first_hit(&Point::new(0.3, 0.2, 0.2), &[&d], &HitOptions::new(5.0, 1e-9))
            .unwrap()
            .hit()
            .unwrap();
        assert_relative_eq!(h.time, 0.7, epsilon = 1e-9);
    }

    #[test]
    fn sphere_meridian_flow() {
        let s = AmbientSpace::ImplicitSurface {
            surface: Surface::Sphere {
                center: Point::zeros(),
                radius: 1.0,
            },
        };
        let f = VectorField::new(BaseField::NorthSouthSphere, vec![], &s);
        let fl = Flow::new(&f, &s, 1e-10, 0.1);
        // z(t) = −tanh(t + c); start at z = tanh(1) on longitude 0.3.
        let z0 = 1f64.tanh();
        let r0 = (1.0 - z0 * z0).sqrt();
        let x0 = Point::new(r0 * 0.3f64.cos(), r0 * 0.3f64.sin(), z0);
        let p = fl.flow(&x0, 1.0).unwrap();
        assert!(p.z.abs() <= 1e-8);
        assert_relative_eq!(p.y.atan2(p.x), 0.3, epsilon = 1e-9);
        let eq = SectionPatch {
            name: "D".into(),
            chart: Chart::Latitude {
                center: Point::zeros(),
                radius: 1.0,
                height: 0.0,
            },
            lo: ChartPoint::new(-1.0, 0.0),
            hi: ChartPoint::new(1.0, 0.0),
            margin: 0.05,
            transversality_floor: 1e-3,
        };
        let h = fl.first_hit(&x0, &[&eq], &HitOptions::new(10.0, 1e-9)).unwrap().hit().unwrap();
        assert_relative_eq!(h.time, 1.0, epsilon = 1e-8);
        assert_relative_eq!(h.chart.x, 0.3, epsilon = 1e-9);
    }
}
