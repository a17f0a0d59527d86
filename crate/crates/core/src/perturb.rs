//! Localized perturbations: closing perturbations of impulses and vector
//! fields, creation of attracting periodic orbits, and permanence tests.
//!
//! Every construction returns the perturbed system together with a
//! [`PerturbationRecord`] from which the same system can be rebuilt.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{c0_distance_on, transported_frames, ContractionBump, FieldTerm, OrbitSegment, TubePerturbation};
use crate::geometry::{halton2, halton3, AmbientSpace, PointGrid};
use crate::impulse::{c0_distance_impulses, segment_distance, ImpulseBump};
use crate::index::{index_of_orbit, index_stability_margin};
use crate::integrate::{Control, HitOutcome};
use crate::poincare::{
    contraction_ratio, find_free_orbit, find_periodic_orbit_chart, landing_clearance, refine_orbit, return_map, Classification, OrbitMap,
    OrbitSearch, OrbitSection, PeriodicOrbit,
};
use crate::profile::{BUMP_SLOPE, RADIAL_PEAK, RADIAL_SLOPE};
use crate::refine::{solve, RefineFailure, RefineOptions};
use crate::section::SectionPatch;
use crate::semiflow::{dense_orbit, edge_clearance, walk, DenseOrbit};
use crate::system::ImpulsiveSystem;
use crate::{ChartPoint, Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Impulse,
    Field,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "impulse" => Ok(Mode::Impulse),
            "field" => Ok(Mode::Field),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Perturbation {
    /// Nothing to do: the target was already periodic, or η = 0.
    Identity { mode: Mode },
    ImpulseBump { bump: ImpulseBump },
    FieldTerm { term: FieldTerm },
}

impl Perturbation {
    pub fn mode(&self) -> Mode {
        match self {
            Perturbation::Identity { mode } => *mode,
            Perturbation::ImpulseBump { .. } => Mode::Impulse,
            Perturbation::FieldTerm { .. } => Mode::Field,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationRecord {
    pub operation: String,
    pub mode: Mode,
    pub perturbations: Vec<Perturbation>,
    /// Measured C⁰ size of the change.
    pub c0_size: f64,
    /// Size guaranteed by the construction.
    pub size_bound: f64,
    #[serde(default)]
    pub target: Option<Point>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Rebuilds a perturbed system: impulse bumps and field terms are appended in
/// order, and the field is rebuilt once.
pub fn apply_perturbations<'a>(sys: &ImpulsiveSystem, items: impl IntoIterator<Item = &'a Perturbation>) -> ImpulsiveSystem {
    let mut impulse = sys.impulse.clone();
    let mut terms = sys.field.terms.clone();
    let mut field_changed = false;
    for p in items {
        match p {
            Perturbation::Identity { .. } => {}
            Perturbation::ImpulseBump { bump } => impulse.bumps.push(bump.clone()),
            Perturbation::FieldTerm { term } => {
                terms.push(term.clone());
                field_changed = true;
            }
        }
    }
    let mut out = sys.with_impulse(impulse);
    if field_changed {
        out = out.with_field(crate::field::VectorField::new(sys.field.base.clone(), terms, &sys.space));
    }
    out
}

pub fn apply_records(sys: &ImpulsiveSystem, records: &[PerturbationRecord]) -> ImpulsiveSystem {
    apply_perturbations(sys, records.iter().flat_map(|r| r.perturbations.iter()))
}

/// Result of a perturbation construction.
#[derive(Debug, Clone)]
pub struct Construction {
    pub system: ImpulsiveSystem,
    pub orbit: PeriodicOrbit,
    pub record: PerturbationRecord,
    /// Returns used by a closing construction (`n`).
    pub returns: usize,
    /// Finite-difference contraction ratio (attractor constructions).
    pub ratio: Option<f64>,
}

fn unit_check(eps: f64, name: &str) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter(format!("{name} must be positive")));
    }
    Ok(())
}

/// Parts of already constructed orbits that a new perturbation must leave
/// untouched: sampled orbit points for field terms and impulse base points
/// (D̂ chart) for impulse bumps. A perturbation whose support misses them
/// leaves those orbits exactly as they were.
#[derive(Debug, Clone, Default)]
pub struct Protected {
    /// Reduced ambient points.
    pub points: Vec<Point>,
    pub bases: Vec<ChartPoint>,
}

/// Clearance kept between a new impulse bump and protected base points.
const BASE_GAP: f64 = 2e-3;
/// Largest ratio of push length to push radius.
const MAX_PUSH_ASPECT: f64 = 200.0;

impl Protected {
    /// Adds the samples of `orbit` (spacing `dt` in time) and the base points
    /// of its impulses.
    pub fn add_orbit(&mut self, sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, dt: f64) -> Result<()> {
        let samples = orbit_samples(sys, orbit, dt)?;
        self.points.extend(samples.reduced.iter().copied());
        let mut bases = Vec::new();
        walk(sys, &orbit.representative, orbit.period - 1e-9, |ws| {
            if ws.impulse {
                let pre = sys.space.reduce(&ws.at(ws.end_time()));
                bases.push(sys.impulse.base(&sys.d.chart_coords(&sys.space, &pre)));
            }
            Control::Continue
        })?;
        self.bases.extend(bases);
        Ok(())
    }

    /// Largest bump radius at `w` whose support keeps clear of the bases.
    fn base_room(&self, w: &ChartPoint) -> f64 {
        self.bases
            .iter()
            .map(|b| (b - w).norm() - BASE_GAP)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClosingOptions {
    pub epsilon: f64,
    /// Iterates of `P` examined per candidate.
    pub recurrence_budget: usize,
    /// Candidate start points near the target.
    pub candidates: usize,
    /// Cap on the Lipschitz constant of the impulse displacement after the
    /// bump is added.
    pub lipschitz_cap: f64,
    /// Verified closing attempts per candidate.
    pub max_attempts: usize,
    /// Required chart clearance of the closed orbit from the margin bands.
    pub min_clearance: f64,
}

impl ClosingOptions {
    pub fn new(epsilon: f64, recurrence_budget: usize) -> Self {
        ClosingOptions {
            epsilon,
            recurrence_budget,
            candidates: 16,
            lipschitz_cap: 0.8,
            max_attempts: 12,
            min_clearance: 2e-3,
        }
    }
}

enum Attempt {
    Closed(Box<Construction>),
    NotRecurrent,
    Collision,
}

/// Closing perturbation of the impulse at `p ∈ D̂`. Along the landings
/// `x₀, x₁, …` of a point near `p`, looks for `i < j` with `x_i` within ε/2
/// of `p` and `x_j` close to `x_i` relative to the intermediate base points;
/// a translation bump at the base of `x_j` then sends it to `x_i` while
/// fixing `x_{i+1},…,x_{j−1}`. When no pair leaves room for a single bump
/// below the Lipschitz cap, a second pass pushes the base along the segment
/// to its target through a chain of small bumps in a thin tube that misses
/// the intermediate bases. Stretches of the orbit that pass within
/// `min_clearance` of the margin bands are never used.
pub fn closing_impulse(sys: &ImpulsiveSystem, p: &Point, opts: &ClosingOptions) -> Result<Construction> {
    closing_impulse_avoiding(sys, p, opts, &Protected::default())
}

/// [`closing_impulse`] with a bump that keeps clear of `protect`.
pub fn closing_impulse_avoiding(
    sys: &ImpulsiveSystem,
    p: &Point,
    opts: &ClosingOptions,
    protect: &Protected,
) -> Result<Construction> {
    if sys.d_hat.dim() != 2 {
        return Err(Error::DimensionUnsupported(sys.space.dimension()));
    }
    if !sys.on_d_hat(p) {
        return Err(Error::OutsidePatch {
            patch: sys.d_hat.name.clone(),
            point: *p,
        });
    }
    let eps = opts.epsilon;
    unit_check(eps, "epsilon")?;
    if eps >= sys.d_hat.size() {
        return Err(Error::InvalidParameter(format!(
            "epsilon {eps} exceeds the size of {}",
            sys.d_hat.name
        )));
    }
    let pv = sys.d_hat.chart_coords(&sys.space, p);
    let mut collided = false;
    for push in [false, true] {
        for x in closing_candidates(sys, &pv, 0.25 * eps, opts.candidates) {
            match close_from(sys, &pv, &x, p, opts, protect, push)? {
                Attempt::Closed(c) => return Ok(*c),
                Attempt::Collision => collided = true,
                Attempt::NotRecurrent => {}
            }
        }
    }
    if collided {
        Err(Error::BumpCollision(format!(
            "every near-return within the budget needs a bump overlapping other iterates (target {p:?})"
        )))
    } else {
        Err(Error::NotRecurrent)
    }
}

fn closing_candidates(sys: &ImpulsiveSystem, center: &ChartPoint, radius: f64, n: usize) -> Vec<ChartPoint> {
    let mut out = vec![*center];
    let mut i = 1;
    while out.len() < n.max(1) && i < 50 * n.max(1) {
        let (a, b) = halton2(i);
        i += 1;
        let th = std::f64::consts::TAU * b;
        let c = center + ChartPoint::new(th.cos(), th.sin()) * (radius * a.sqrt());
        if sys.d_hat.is_interior(&c) {
            out.push(c);
        }
    }
    out
}

fn close_from(
    sys: &ImpulsiveSystem,
    pv: &ChartPoint,
    x: &ChartPoint,
    p: &Point,
    opts: &ClosingOptions,
    protect: &Protected,
    push: bool,
) -> Result<Attempt> {
    let eps = opts.epsilon;
    let tol = sys.tolerances.periodic;
    let flow = sys.flow();
    let hit_opts = sys.hit_options(sys.tolerances.horizon).with_burn_in(sys.burn_in());
    // iterates[k] lands on D̂; bases[k] is the base point whose impulse gives iterates[k + 1].
    let mut iterates: Vec<ChartPoint> = vec![*x];
    let mut bases: Vec<ChartPoint> = Vec::new();
    let mut hits: Vec<ChartPoint> = Vec::new();
    let mut collided = false;
    let mut tried = 0usize;
    // Pairs start at or after `floor`: earlier stretches pass too close to the margin bands.
    let mut floor = if sys.d_hat.boundary_distance(x) < opts.min_clearance { 1 } else { 0 };
    for _ in 0..opts.recurrence_budget {
        let cur = *iterates.last().unwrap();
        let y = sys.d_hat_point(&cur);
        let h = match flow.first_hit(&y, &[&sys.d], &hit_opts) {
            Ok(HitOutcome::Hit(h)) => h,
            Ok(_) | Err(Error::LeftDomain { .. }) => break,
            Err(e) => return Err(e),
        };
        let w = sys.impulse.base(&h.chart);
        let xn = sys.impulse.apply_chart(&h.chart);
        if !sys.d_hat.in_rect(&xn, 0.0) {
            break;
        }
        bases.push(w);
        hits.push(h.chart);
        iterates.push(xn);
        let j = iterates.len() - 1;
        if !h.interior || sys.d.boundary_distance(&h.chart) - sys.d.margin < opts.min_clearance {
            floor = j;
            continue;
        }
        let reach = sys.d_hat.boundary_distance(&w).min(protect.base_room(&w));
        let scan_floor = floor;
        if sys.d_hat.boundary_distance(&xn) < opts.min_clearance {
            floor = j + 1;
        }
        // Scan back from j: `m` is the distance from w to the bases strictly between i and j − 1.
        let mut m = f64::INFINITY;
        for i in (scan_floor..j).rev() {
            if i + 1 < j {
                m = m.min((bases[i] - w).norm());
            }
            let xi = iterates[i];
            let d = xi - xn;
            if d.norm() >= eps || (xi - pv).norm() >= 0.5 * eps {
                continue;
            }
            let need = d.norm() * BUMP_SLOPE / opts.lipschitz_cap;
            let strict = need < 0.95 * m.min(reach);
            if strict == push {
                continue;
            }
            let bump = if strict {
                ImpulseBump::Translate {
                    center: w,
                    radius: 0.95 * m.min(reach),
                    displacement: d,
                }
            } else {
                // Push along the segment to w + d, inside half the clearance
                // from the intermediate bases, the patch edge, and protected bases.
                let to = w + d;
                let fixed = bases[i..j - 1]
                    .iter()
                    .map(|b| segment_distance(&w, &to, b))
                    .fold(f64::INFINITY, f64::min);
                let room = protect
                    .bases
                    .iter()
                    .map(|b| segment_distance(&w, &to, b) - BASE_GAP)
                    .fold(f64::INFINITY, f64::min);
                let edge = sys.d_hat.boundary_distance(&w).min(sys.d_hat.boundary_distance(&to));
                let radius = 0.5 * fixed.min(room).min(edge);
                if !(radius > d.norm() / MAX_PUSH_ASPECT) {
                    continue;
                }
                ImpulseBump::push(w, to, radius, 0.5)
            };
            if tried >= opts.max_attempts {
                break;
            }
            tried += 1;
            let n = j - i;
            let (system, perturbations, size) = if d.norm() <= tol {
                (sys.clone(), vec![Perturbation::Identity { mode: Mode::Impulse }], 0.0)
            } else {
                if sys.impulse.lipschitz_bound_with(&bump) > opts.lipschitz_cap {
                    collided = true;
                    continue;
                }
                let jmp = sys.impulse.with_bump(bump.clone());
                (sys.with_impulse(jmp), vec![Perturbation::ImpulseBump { bump }], d.norm())
            };
            match find_periodic_orbit_chart(&system, &xi, n, tol)? {
                OrbitSearch::Found(orbit)
                    if sys.space.distance(&orbit.representative, p) < eps
                        && landing_clearance(&system, &orbit.chart, orbit.k)? >= opts.min_clearance =>
                {
                    let mut samples = sys.d_grid(41);
                    samples.push(h.chart);
                    let c0 = c0_distance_impulses(&sys.impulse, &system.impulse, &samples);
                    return Ok(Attempt::Closed(Box::new(Construction {
                        system,
                        orbit,
                        record: PerturbationRecord {
                            operation: "closing-impulse".into(),
                            mode: Mode::Impulse,
                            perturbations,
                            c0_size: c0,
                            size_bound: size,
                            target: Some(*p),
                            seed: None,
                        },
                        returns: n,
                        ratio: None,
                    })));
                }
                _ => collided = true,
            }
        }
    }
    Ok(if collided { Attempt::Collision } else { Attempt::NotRecurrent })
}

/// Samples of `orbit` over one period, starting at the representative.
pub fn orbit_samples(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, dt: f64) -> Result<DenseOrbit> {
    dense_orbit(sys, &orbit.representative, orbit.period, dt)
}

/// Clearance test for perturbation supports along a sampled orbit: a sample
/// is free when D, D̂, existing localized field terms, and other strands of
/// the orbit are all farther than `reach`.
struct Clearance<'a> {
    sys: &'a ImpulsiveSystem,
    orbit: &'a DenseOrbit,
    grid: PointGrid<'a>,
    protect: PointGrid<'a>,
    /// Samples with index below this bound belong to the orbit.
    limit: usize,
    period: f64,
    spacing: f64,
    /// Whether other passes of the orbit itself block a sample.
    own_orbit: bool,
}

impl<'a> Clearance<'a> {
    fn new(sys: &'a ImpulsiveSystem, orbit: &'a DenseOrbit, cell: f64, spacing: f64, protect: &'a [Point]) -> Self {
        Clearance {
            sys,
            orbit,
            grid: PointGrid::new(&sys.space, &orbit.reduced, cell),
            protect: PointGrid::new(&sys.space, protect, cell),
            limit: orbit.len(),
            period: orbit.span,
            spacing,
            own_orbit: true,
        }
    }

    fn free(&self, i: usize, reach: f64) -> bool {
        let sys = self.sys;
        let q = &self.orbit.reduced[i];
        if sys.d.distance_to(&sys.space, q) < reach || sys.d_hat.distance_to(&sys.space, q) < reach {
            return false;
        }
        for t in &sys.field.terms {
            let clear = match t {
                FieldTerm::Bump { center, radius, .. } => sys.space.distance(center, q) >= radius + reach,
                FieldTerm::Tube(tp) => tp.segment.local_coords(&sys.space, q, tp.radius + reach).is_none(),
                FieldTerm::Contraction(c) => c.segment.local_coords(&sys.space, q, c.radius + reach).is_none(),
                _ => true,
            };
            if !clear {
                return false;
            }
        }
        let mut blocked = false;
        self.protect.for_each_near(q, reach, |_, _| blocked = true);
        if blocked {
            return false;
        }
        if !self.own_orbit {
            return true;
        }
        let speed = sys.field.eval(&sys.space, q).norm().max(1e-9);
        let window = 3.0 * (reach + self.spacing) / speed;
        let ti = self.orbit.times[i];
        let mut ok = true;
        self.grid.for_each_near(q, reach + 0.5 * self.spacing, |k, _| {
            if k >= self.limit || !ok {
                return;
            }
            let dt = (self.orbit.times[k] - ti).abs();
            let dt = dt.min(self.period - dt);
            if dt > window {
                ok = false;
            }
        });
        ok
    }
}

fn segment_from(sys: &ImpulsiveSystem, orbit: &DenseOrbit, lo: usize, hi: usize, dt: f64) -> OrbitSegment {
    let points: Vec<Point> = orbit.raw[lo..=hi].to_vec();
    let frames = transported_frames(&sys.field, &sys.space, &points);
    OrbitSegment::new(dt * (hi - lo) as f64, points, frames)
}

/// Whether samples `lo..=hi` are uniformly spaced in time on one arc.
fn same_arc(orbit: &DenseOrbit, lo: usize, hi: usize) -> bool {
    lo > 0 && orbit.arc[lo - 1] == orbit.arc[hi] && orbit.arc[lo] == orbit.arc[hi]
}

#[derive(Debug, Clone, Copy)]
pub struct FieldClosingOptions {
    pub epsilon: f64,
    /// Time budget for the near-return search.
    pub horizon: f64,
    /// Longest tube segment (time).
    pub max_tube: f64,
    /// Shortest tube segment (time).
    pub min_tube: f64,
    /// Sampling step of the orbit used for the clearance test.
    pub sample_dt: f64,
}

impl FieldClosingOptions {
    pub fn new(epsilon: f64) -> Self {
        FieldClosingOptions {
            epsilon,
            horizon: 2000.0,
            max_tube: 1.0,
            min_tube: 0.2,
            sample_dt: 0.01,
        }
    }
}

/// Orthonormal basis of the plane perpendicular to `v`.
fn perpendicular_axes(v: &Point) -> [Point; 2] {
    let e = v.normalize();
    let trial = if e.x.abs() < 0.9 { Point::x() } else { Point::y() };
    let a = (trial - e * e.dot(&trial)).normalize();
    [a, e.cross(&a)]
}

/// Closing perturbation of the field: a near-return of the orbit of `p` to a
/// small transversal disk Σ_p at `p` is steered onto `p` by a tube
/// perturbation on the stretch of orbit just before the return.
pub fn closing_field(sys: &ImpulsiveSystem, p: &Point, opts: &FieldClosingOptions) -> Result<Construction> {
    closing_field_avoiding(sys, p, opts, &Protected::default())
}

/// [`closing_field`] with a tube that keeps clear of `protect`.
pub fn closing_field_avoiding(
    sys: &ImpulsiveSystem,
    p: &Point,
    opts: &FieldClosingOptions,
    protect: &Protected,
) -> Result<Construction> {
    let dim = sys.space.dimension();
    if dim != 3 {
        return Err(Error::DimensionUnsupported(dim));
    }
    let eps = opts.epsilon;
    unit_check(eps, "epsilon")?;
    let floor = 0.5 * sys.field.lipschitz * sys.tolerances.singularity_radius;
    let mut p = sys.space.reduce(p);
    if sys.field.eval(&sys.space, &p).norm() <= floor.max(1e-9) {
        return Err(Error::InvalidParameter(format!("{p:?} is within the singularity floor of X")));
    }
    if sys.on_d(&p) {
        p = sys.flow().flow(&p, -0.25 * sys.travel_time_bound())?;
    }
    let x_p = sys.field.eval(&sys.space, &p);
    let half = 0.5 * eps;
    let mut sigma = SectionPatch::affine(
        "Sigma_p",
        p,
        perpendicular_axes(&x_p),
        ChartPoint::new(-half, -half),
        ChartPoint::new(half, half),
    );
    sigma.margin = 0.0;

    let dt = opts.sample_dt;
    let orbit = dense_orbit(sys, &p, opts.horizon, dt)?;
    let max_reach = 1.1 * (3.0 * half + 0.003);
    let mut clearance = Clearance::new(
        sys,
        &orbit,
        max_reach + dt * sys.field.sup_norm,
        dt * sys.field.sup_norm,
        &protect.points,
    );
    // Earlier passes through the tube are steered as well; the solve and the
    // final verification account for them.
    clearance.own_orbit = false;

    // Single returns to the small disk Σ_p may take longer than the default horizon.
    let mut search = sys.clone();
    search.tolerances.horizon = opts.horizon;
    let mut cur = p;
    let mut elapsed = 0.0;
    let mut j = 0;
    let mut blocked = false;
    let mut failed: Option<f64> = None;
    loop {
        let Some(r) = return_map(&search, &sigma, &cur, 1)? else {
            break;
        };
        j += 1;
        elapsed += r.time;
        if elapsed >= opts.horizon {
            break;
        }
        cur = r.point;
        if r.chart.norm() >= half {
            continue;
        }
        let delta = sys.space.displacement(&p, &r.point);
        if delta.norm() <= 1e-12 {
            let orbit = match find_free_orbit(sys, &sigma, &p, j, sys.tolerances.periodic)? {
                OrbitSearch::Found(o) => o,
                _ => continue,
            };
            return Ok(Construction {
                system: sys.clone(),
                orbit,
                record: PerturbationRecord {
                    operation: "closing-field".into(),
                    mode: Mode::Field,
                    perturbations: vec![Perturbation::Identity { mode: Mode::Field }],
                    c0_size: 0.0,
                    size_bound: 0.0,
                    target: Some(p),
                    seed: None,
                },
                returns: j,
                ratio: None,
            });
        }
        clearance.limit = orbit.times.partition_point(|&t| t < elapsed);
        clearance.period = elapsed;
        let plateau = 1.5 * delta.norm() + 1e-3;
        let reach = 2.0 * plateau;
        let speed = sys.field.eval(&sys.space, &r.point).norm();
        let gap = 2.5 * reach / speed + 0.02;
        let Some((lo, hi)) = tube_window(&orbit, &clearance, elapsed - gap, 1.1 * reach, opts) else {
            blocked = true;
            continue;
        };
        let segment = segment_from(sys, &orbit, lo, hi, dt);
        let exit = *segment.frames.last().expect("segment has samples");
        let mut tube = TubePerturbation {
            segment,
            radius: reach,
            plateau_radius: plateau,
            velocity: [0.0, 0.0],
            ramp: 0.2,
        };
        let lam = tube.longitudinal_integral();
        let v0 = ChartPoint::new(-exit[1].dot(&delta), -exit[2].dot(&delta)) / lam;
        let steer = |v: &ChartPoint| -> Option<ChartPoint> {
            let mut t = tube.clone();
            t.velocity = [v.x, v.y];
            let y = sys.with_field(sys.field.with_term(FieldTerm::Tube(t), &sys.space));
            match return_map(&y, &sigma, &p, j) {
                Ok(Some(r)) => Some(r.chart),
                _ => None,
            }
        };
        let v = match solve(steer, v0, &RefineOptions::new(1e-11, 2)) {
            Ok(r) => r.x,
            Err(RefineFailure::Stalled { residual, .. }) => {
                failed = Some(residual);
                continue;
            }
            Err(RefineFailure::Undefined) => {
                failed = Some(f64::INFINITY);
                continue;
            }
        };
        if v.norm() >= eps {
            failed = Some(v.norm());
            continue;
        }
        tube.velocity = [v.x, v.y];
        let term = FieldTerm::Tube(tube);
        let system = sys.with_field(sys.field.with_term(term.clone(), &sys.space));
        let found = match find_free_orbit(&system, &sigma, &p, j, sys.tolerances.periodic)? {
            OrbitSearch::Found(o) if sys.space.distance(&o.representative, &p) < eps => o,
            OrbitSearch::NotFound { residual, .. } => {
                failed = Some(residual);
                continue;
            }
            _ => {
                failed = Some(f64::INFINITY);
                continue;
            }
        };
        let c0 = c0_distance_on(&sys.field, &system.field, &sys.space, &term.support_samples());
        return Ok(Construction {
            system,
            orbit: found,
            record: PerturbationRecord {
                operation: "closing-field".into(),
                mode: Mode::Field,
                perturbations: vec![Perturbation::FieldTerm { term }],
                c0_size: c0,
                size_bound: v.norm(),
                target: Some(p),
                seed: None,
            },
            returns: j,
            ratio: None,
        });
    }
    match (failed, blocked) {
        (Some(residual), _) => Err(Error::VerificationFailed { residual }),
        (None, true) => Err(Error::TubeIntersectsSection),
        (None, false) => Err(Error::NotRecurrent),
    }
}

/// Longest admissible tube window ending at time `end`: free samples on a
/// single arc, between `min_tube` and `max_tube` long.
fn tube_window(orbit: &DenseOrbit, clearance: &Clearance, end: f64, reach: f64, opts: &FieldClosingOptions) -> Option<(usize, usize)> {
    if end <= 0.0 {
        return None;
    }
    let hi = orbit.times.partition_point(|&t| t <= end).checked_sub(1)?;
    let dt = opts.sample_dt;
    let max_len = (opts.max_tube / dt).round() as usize;
    let min_len = (opts.min_tube / dt).round() as usize;
    let mut lo = hi;
    while hi - lo < max_len && lo > 1 && same_arc(orbit, lo - 1, hi) && clearance.free(lo - 1, reach) {
        lo -= 1;
    }
    if !clearance.free(hi, reach) || hi - lo < min_len {
        return None;
    }
    Some((lo, hi))
}

#[derive(Debug, Clone, Copy)]
pub struct AttractOptions {
    pub eta: f64,
    /// Initial transversal radius R of the contraction; halved while no free
    /// segment is found.
    pub radius: f64,
    pub min_radius: f64,
    /// Longest segment used (time).
    pub max_duration: f64,
    pub sample_dt: f64,
}

impl AttractOptions {
    pub fn new(eta: f64) -> Self {
        AttractOptions {
            eta,
            radius: 0.3,
            min_radius: 1e-3,
            max_duration: 6.0,
            sample_dt: 0.005,
        }
    }
}

pub fn attractify(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, eta: f64) -> Result<Construction> {
    attractify_with(sys, orbit, &AttractOptions::new(eta), &Protected::default())
}

fn require_orbit(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit) -> Result<()> {
    if !(orbit.residual <= 10.0 * sys.tolerances.periodic) {
        return Err(Error::InvalidParameter(format!(
            "orbit residual {:.3e} above tolerance",
            orbit.residual
        )));
    }
    Ok(())
}

/// Index radius around a contracted orbit, kept inside the chart.
pub fn index_radius(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, r: f64) -> f64 {
    let bd = match &orbit.section {
        OrbitSection::Landing => landing_clearance(sys, &orbit.chart, orbit.k).unwrap_or(0.0) / 2.0,
        OrbitSection::Free { patch, .. } => (0.9 * patch.boundary_distance(&orbit.chart))
            .min(0.5 * edge_clearance(sys, &orbit.representative, orbit.period).unwrap_or(0.0)),
    };
    r.min(bd)
}

fn finish_attractor(
    sys: &ImpulsiveSystem,
    system: ImpulsiveSystem,
    orbit: &PeriodicOrbit,
    record: PerturbationRecord,
    index_ball: f64,
) -> Result<Construction> {
    let tol = sys.tolerances.periodic;
    let mut found = match refine_orbit(&system, orbit, tol)? {
        OrbitSearch::Found(o) => o,
        OrbitSearch::NotFound { residual, .. } => return Err(Error::VerificationFailed { residual }),
        OrbitSearch::BoundaryLanding => return Err(Error::VerificationFailed { residual: f64::INFINITY }),
    };
    let ratio = contraction_ratio(&system, &found, 1e-4)?;
    if ratio >= 1.0 {
        return Err(Error::ContractionNotAchieved { ratio });
    }
    found.classification = Classification::Attracting;
    found.family = false;
    found.index = index_of_orbit(&system, &found, index_radius(&system, &found, index_ball)).ok();
    Ok(Construction {
        system,
        orbit: found,
        record,
        returns: orbit.k,
        ratio: Some(ratio),
    })
}

fn identity_attractor(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, mode: Mode, operation: &str) -> Result<Construction> {
    let ratio = contraction_ratio(sys, orbit, 1e-4)?;
    Ok(Construction {
        system: sys.clone(),
        orbit: orbit.clone(),
        record: PerturbationRecord {
            operation: operation.into(),
            mode,
            perturbations: vec![Perturbation::Identity { mode }],
            c0_size: 0.0,
            size_bound: 0.0,
            target: Some(orbit.representative),
            seed: None,
        },
        returns: orbit.k,
        ratio: Some(ratio),
    })
}

/// Attracting periodic orbit by a transversal contraction
/// `ż = −α_η(s)·β_η(|z|)·z` on a free segment of the orbit. The return map
/// contracts by about `exp(−η²(δ − 3η))` and `‖Y − X‖_{C⁰} ≤ η²·R`.
pub fn attractify_with(
    sys: &ImpulsiveSystem,
    orbit: &PeriodicOrbit,
    opts: &AttractOptions,
    protect: &Protected,
) -> Result<Construction> {
    require_orbit(sys, orbit)?;
    let eta = opts.eta;
    if eta == 0.0 {
        return identity_attractor(sys, orbit, Mode::Field, "attractify");
    }
    unit_check(eta, "eta")?;
    let dt = opts.sample_dt;
    let samples = orbit_samples(sys, orbit, dt)?;
    let spacing = dt * sys.field.sup_norm;
    let min_len = ((4.5 * eta + 0.1) / dt).ceil() as usize;
    let max_len = (opts.max_duration / dt).round() as usize;
    let mut radius = opts.radius.min(0.3 * sys.d_hat.size());
    while radius >= opts.min_radius {
        let reach = 1.1 * radius;
        let clearance = Clearance::new(sys, &samples, reach + spacing, spacing, &protect.points);
        let free: Vec<bool> = (0..samples.len()).map(|i| clearance.free(i, reach)).collect();
        let mut best: Option<(usize, usize)> = None;
        let mut start = None;
        for i in 0..=samples.len() {
            let ok = i < samples.len() && free[i] && start.is_none_or(|s| same_arc(&samples, s, i));
            match (ok, start) {
                (true, None) => start = Some(i),
                (true, Some(_)) => {}
                (false, Some(s)) => {
                    let e = i - 1;
                    if best.is_none_or(|(a, b)| e - s > b - a) {
                        best = Some((s, e));
                    }
                    start = if i < samples.len() && free[i] { Some(i) } else { None };
                }
                (false, None) => {}
            }
        }
        if let Some((mut lo, hi)) = best {
            if lo == 0 || samples.arc[lo - 1] != samples.arc[lo] {
                lo += 1;
            }
            if hi >= lo + min_len {
                let hi = hi.min(lo + max_len);
                let segment = segment_from(sys, &samples, lo, hi, dt);
                let bump = ContractionBump { segment, radius, eta };
                let bound = bump.size_bound();
                let term = FieldTerm::Contraction(bump);
                let system = sys.with_field(sys.field.with_term(term.clone(), &sys.space));
                let c0 = c0_distance_on(&sys.field, &system.field, &sys.space, &term.support_samples());
                let record = PerturbationRecord {
                    operation: "attractify".into(),
                    mode: Mode::Field,
                    perturbations: vec![Perturbation::FieldTerm { term }],
                    c0_size: c0,
                    size_bound: bound,
                    target: Some(orbit.representative),
                    seed: None,
                };
                return finish_attractor(sys, system, orbit, record, radius / 3.0);
            }
        }
        radius *= 0.5;
    }
    Err(Error::NoFreeSegment)
}

/// Attracting periodic orbit by post-composing the impulse with a radial
/// contraction toward the orbit's representative on D̂ (in the base-image
/// coordinates of the last impulse), fixing the other crossings.
pub fn attractify_impulse(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, eta: f64) -> Result<Construction> {
    attractify_impulse_avoiding(sys, orbit, eta, &Protected::default())
}

/// [`attractify_impulse`] with a bump that keeps clear of `protect`.
pub fn attractify_impulse_avoiding(
    sys: &ImpulsiveSystem,
    orbit: &PeriodicOrbit,
    eta: f64,
    protect: &Protected,
) -> Result<Construction> {
    require_orbit(sys, orbit)?;
    if orbit.k == 0 || orbit.section != OrbitSection::Landing {
        return Err(Error::InvalidParameter("orbit must land on D̂ (k ≥ 1)".into()));
    }
    if eta == 0.0 {
        return identity_attractor(sys, orbit, Mode::Impulse, "attractify-impulse");
    }
    unit_check(eta, "eta")?;
    let flow = sys.flow();
    let hit_opts = sys.hit_options(sys.tolerances.horizon).with_burn_in(sys.burn_in());
    let mut cur = orbit.chart;
    let mut bases = Vec::with_capacity(orbit.k);
    for _ in 0..orbit.k {
        let h = flow
            .first_hit(&sys.d_hat_point(&cur), &[&sys.d], &hit_opts)?
            .hit()
            .ok_or_else(|| Error::MapUndefined {
                point: sys.d_hat_point(&cur),
                reason: "orbit does not reach D".into(),
            })?;
        bases.push((h.chart, sys.impulse.base(&h.chart)));
        cur = sys.impulse.apply_chart(&h.chart);
    }
    let (u_k, w_k) = *bases.last().expect("k ≥ 1");
    let sep = bases[..orbit.k - 1]
        .iter()
        .map(|(_, w)| (w - w_k).norm())
        .fold(f64::INFINITY, f64::min);
    let kappa0 = 0.5;
    let r = (0.5 * sep)
        .min(sys.d_hat.boundary_distance(&w_k))
        .min(protect.base_room(&w_k))
        .min(eta / (kappa0 * RADIAL_PEAK));
    if !(r > 1e-4) {
        return Err(Error::CrossingsTooClose);
    }
    let contract = |kappa: f64| ImpulseBump::Contract {
        center: w_k,
        radius: r,
        strength: kappa,
    };
    let others = sys.impulse.lipschitz_bound_with(&contract(0.0));
    let kappa = kappa0.min((0.97 - others) / RADIAL_SLOPE);
    if kappa <= 0.0 {
        return Err(Error::ContractionNotAchieved { ratio: 1.0 });
    }
    let bump = contract(kappa);
    let bound = bump.size();
    let system = sys.with_impulse(sys.impulse.with_bump(bump.clone()));
    let mut samples = sys.d_grid(41);
    samples.push(u_k);
    for i in 0..64 {
        let (s, t) = halton2(i + 1);
        let th = std::f64::consts::TAU * t;
        let w = w_k + ChartPoint::new(th.cos(), th.sin()) * (r * s);
        if let Some(u) = sys.impulse.base_inverse(&w) {
            samples.push(u);
        }
    }
    let c0 = c0_distance_impulses(&sys.impulse, &system.impulse, &samples);
    let record = PerturbationRecord {
        operation: "attractify-impulse".into(),
        mode: Mode::Impulse,
        perturbations: vec![Perturbation::ImpulseBump { bump }],
        c0_size: c0,
        size_bound: bound,
        target: Some(orbit.representative),
        seed: None,
    };
    finish_attractor(sys, system, orbit, record, 0.25 * r)
}

/// Contraction margin of an orbit: `min |F(v) − v|` over the circle of
/// radius `radius` around the representative, where F is the orbit's return
/// map. In field mode it is divided by the Gronwall factor `(e^{LT} − 1)/L`
/// bounding how far a C⁰ change of the field moves F, so perturbations
/// below the margin cannot change the index.
pub fn contraction_margin(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, radius: f64, mode: Mode) -> Result<f64> {
    let map = OrbitMap::new(sys, orbit);
    let m = index_stability_margin(&map, &orbit.chart, radius, 64)?;
    Ok(match mode {
        Mode::Impulse => m,
        Mode::Field => {
            let l = sys.field.lipschitz.max(1e-9);
            m * l / ((l * orbit.period).exp() - 1.0)
        }
    })
}

#[derive(Debug, Clone)]
pub enum Trials {
    /// Random three-bump ensembles of size exactly δ.
    Random(usize),
    /// Given perturbations, one per trial.
    Explicit(Vec<Perturbation>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub c0_size: f64,
    pub survived: bool,
    /// Distance from the original representative to the surviving one.
    pub displacement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermanenceReport {
    pub mode: Mode,
    pub delta: f64,
    pub trials: usize,
    pub survivals: usize,
    pub worst_displacement: f64,
    pub seed: u64,
    pub survival_radius: f64,
    pub outcomes: Vec<TrialOutcome>,
}

#[derive(Debug, Clone)]
pub struct PermanenceOptions {
    pub delta: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Defaults to `10·δ`.
    pub survival_radius: Option<f64>,
}

/// Empirical permanence: for each trial a perturbation of C⁰ size δ is drawn
/// (or taken from the list), and the orbit is searched for again from its
/// representative. Trials run concurrently with per-trial sub-seeds.
pub fn permanence_test(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, trials: &Trials, opts: &PermanenceOptions) -> Result<PermanenceReport> {
    unit_check(opts.delta, "delta")?;
    let radius = opts.survival_radius.unwrap_or(10.0 * opts.delta);
    let n = match trials {
        Trials::Random(n) => *n,
        Trials::Explicit(v) => v.len(),
    };
    let samples = if matches!(opts.mode, Mode::Field) && matches!(trials, Trials::Random(_)) {
        orbit_samples(sys, orbit, 0.01)?.reduced
    } else {
        Vec::new()
    };
    let outcomes: Vec<TrialOutcome> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (perturbations, size) = match trials {
                Trials::Random(_) => random_perturbation(sys, opts.mode, opts.delta, opts.seed, i as u64, &samples),
                Trials::Explicit(v) => {
                    let size = explicit_size(sys, &v[i]);
                    (vec![v[i].clone()], size)
                }
            };
            let perturbed = apply_perturbations(sys, &perturbations);
            let found = match refine_orbit(&perturbed, orbit, sys.tolerances.periodic) {
                Ok(OrbitSearch::Found(o)) => Some(o),
                _ => None,
            };
            let displacement = found
                .map(|o| sys.space.distance(&o.representative, &orbit.representative))
                .filter(|d| *d <= radius);
            TrialOutcome {
                c0_size: size,
                survived: displacement.is_some(),
                displacement,
            }
        })
        .collect();
    let survivals = outcomes.iter().filter(|o| o.survived).count();
    let worst = outcomes
        .iter()
        .filter_map(|o| o.displacement)
        .fold(0.0, f64::max);
    Ok(PermanenceReport {
        mode: opts.mode,
        delta: opts.delta,
        trials: n,
        survivals,
        worst_displacement: worst,
        seed: opts.seed,
        survival_radius: radius,
        outcomes,
    })
}

fn explicit_size(sys: &ImpulsiveSystem, p: &Perturbation) -> f64 {
    match p {
        Perturbation::Identity { .. } => 0.0,
        Perturbation::ImpulseBump { bump } => bump.size(),
        Perturbation::FieldTerm { term } => term.size_bound(&sys.space),
    }
}

/// Three random bumps scaled so that their measured C⁰ size is `delta`.
fn random_perturbation(
    sys: &ImpulsiveSystem,
    mode: Mode,
    delta: f64,
    seed: u64,
    trial: u64,
    orbit_pts: &[Point],
) -> (Vec<Perturbation>, f64) {
    let mut rng = crate::seed::rng(seed, trial);
    let size = sys.d_hat.size();
    match mode {
        Mode::Impulse => {
            let dim = sys.d_hat.dim();
            let mut bumps: Vec<ImpulseBump> = (0..3)
                .map(|_| {
                    let mut c = ChartPoint::zeros();
                    for i in 0..dim {
                        c[i] = rng.gen_range(sys.d_hat.lo[i]..=sys.d_hat.hi[i]);
                    }
                    let radius = rng.gen_range(0.05..=0.2) * size;
                    let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let dir = if dim == 1 {
                        ChartPoint::new(th.cos().signum(), 0.0)
                    } else {
                        ChartPoint::new(th.cos(), th.sin())
                    };
                    ImpulseBump::Translate {
                        center: c,
                        radius,
                        displacement: dir,
                    }
                })
                .collect();
            let mut probe = sys.d_hat.grid(61, 0.0);
            probe.extend(bumps.iter().map(ImpulseBump::center));
            let sum = |w: &ChartPoint, bs: &[ImpulseBump]| bs.iter().fold(ChartPoint::zeros(), |a, b| a + b.eval(w));
            let unit = probe.iter().map(|w| sum(w, &bumps).norm()).fold(0.0, f64::max);
            let scale = delta / unit;
            for b in bumps.iter_mut() {
                if let ImpulseBump::Translate { displacement, .. } = b {
                    *displacement *= scale;
                }
            }
            let measured = probe.iter().map(|w| sum(w, &bumps).norm()).fold(0.0, f64::max);
            (bumps.into_iter().map(|bump| Perturbation::ImpulseBump { bump }).collect(), measured)
        }
        Mode::Field => {
            let mut terms: Vec<FieldTerm> = (0..3)
                .map(|_| {
                    let radius = rng.gen_range(0.05..=0.2) * size;
                    let anchor = if orbit_pts.is_empty() {
                        halton3(rng.gen_range(1..4096))
                    } else {
                        orbit_pts[rng.gen_range(0..orbit_pts.len())]
                    };
                    let offset = random_unit(&mut rng) * (0.5 * radius * rng.gen::<f64>().cbrt());
                    let center = match &sys.space {
                        AmbientSpace::ImplicitSurface { surface } => surface.project(&(anchor + offset)),
                        _ => sys.space.reduce(&(anchor + offset)),
                    };
                    FieldTerm::Bump {
                        center,
                        radius,
                        vector: random_unit(&mut rng),
                    }
                })
                .collect();
            let mut probe: Vec<Point> = Vec::new();
            for t in &terms {
                if let FieldTerm::Bump { center, radius, .. } = t {
                    probe.push(*center);
                    for i in 1..200 {
                        let h = halton3(i) * 2.0 - Point::repeat(1.0);
                        if h.norm() <= 1.0 {
                            probe.push(sys.space.reduce(&(center + h * *radius)));
                        }
                    }
                }
            }
            let field_sum = |q: &Point, ts: &[FieldTerm]| {
                let mut v = ts.iter().fold(Point::zeros(), |a, t| a + t.eval(&sys.space, q));
                if let AmbientSpace::ImplicitSurface { surface } = &sys.space {
                    let n = surface.normal(q);
                    v -= n * n.dot(&v);
                }
                v
            };
            let unit = probe.iter().map(|q| field_sum(q, &terms).norm()).fold(0.0, f64::max);
            let scale = delta / unit;
            for t in terms.iter_mut() {
                if let FieldTerm::Bump { vector, .. } = t {
                    *vector *= scale;
                }
            }
            let measured = probe.iter().map(|q| field_sum(q, &terms).norm()).fold(0.0, f64::max);
            (terms.into_iter().map(|term| Perturbation::FieldTerm { term }).collect(), measured)
        }
    }
}

fn random_unit(rng: &mut impl Rng) -> Point {
    loop {
        let v = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::builtin_system;
    use crate::field::FieldTerm;
    use crate::poincare::find_periodic_orbit;
    use nalgebra::Matrix3;

    fn s1a_orbit(sys: &ImpulsiveSystem) -> PeriodicOrbit {
        find_periodic_orbit(sys, &Point::new(0.0, 2.0, 0.0), 1, 1e-10).unwrap().found().unwrap()
    }

    #[test]
    fn closing_impulse_on_the_torus() {
        let sys = builtin_system("S2").unwrap();
        let p = Point::new(0.5, 0.25, 0.25);
        let c = closing_impulse(&sys, &p, &ClosingOptions::new(0.05, 400)).unwrap();
        assert!(c.record.c0_size < 0.05);
        let samples = sys.d_hat.grid(41, 0.0);
        assert!(c0_distance_impulses(&sys.impulse, &c.system.impulse, &samples) <= c.record.c0_size + 1e-12);
        assert!(sys.space.distance(&c.orbit.representative, &p) < 0.05);
        let again = find_periodic_orbit(&c.system, &c.orbit.representative, c.orbit.k, 1e-9).unwrap().found().unwrap();
        assert!(again.residual < 1e-8);
        assert_eq!(apply_records(&sys, &[c.record.clone()]), c.system);
        let text = serde_json::to_string(&c.record).unwrap();
        assert_eq!(serde_json::from_str::<PerturbationRecord>(&text).unwrap(), c.record);
    }

    #[test]
    fn closing_a_periodic_point_is_the_identity() {
        let sys = builtin_system("S1a").unwrap();
        let c = closing_impulse(&sys, &Point::new(0.0, 2.2, 0.1), &ClosingOptions::new(0.05, 50)).unwrap();
        assert!(c.record.c0_size < 1e-9);
        assert!(c.record.perturbations.iter().all(|p| matches!(p, Perturbation::Identity { .. })));
        assert_eq!(c.system.impulse, sys.impulse);
    }

    #[test]
    fn closing_rejects_bad_parameters() {
        let s2 = builtin_system("S2").unwrap();
        let p = Point::new(0.5, 0.25, 0.25);
        assert!(matches!(
            closing_impulse(&s2, &p, &ClosingOptions::new(0.5, 10)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            closing_impulse(&s2, &Point::new(0.2, 0.25, 0.25), &ClosingOptions::new(0.05, 10)),
            Err(Error::OutsidePatch { .. })
        ));
        let s3 = builtin_system("S3").unwrap();
        let q = s3.d_hat_point(&ChartPoint::new(0.0, 0.0));
        assert!(matches!(
            closing_impulse(&s3, &q, &ClosingOptions::new(0.05, 10)),
            Err(Error::DimensionUnsupported(_))
        ));
    }

    #[test]
    fn closing_field_near_a_singularity_is_rejected() {
        let s3 = builtin_system("S3").unwrap();
        let r = closing_field(&s3, &Point::new(0.0, 0.0, 1.0), &FieldClosingOptions::new(0.05));
        assert!(r.is_err());
    }

    #[test]
    fn closing_field_on_the_torus_leaves_the_flow_outside_the_tube() {
        let sys = builtin_system("S2").unwrap();
        let p = Point::new(0.75, 0.125, 0.375);
        let opts = FieldClosingOptions {
            horizon: 5000.0,
            ..FieldClosingOptions::new(0.05)
        };
        let c = closing_field(&sys, &p, &opts).unwrap();
        assert!(c.record.c0_size < 0.05);
        assert!(sys.space.distance(&c.orbit.representative, &p) < 0.05);
        let again = refine_orbit(&c.system, &c.orbit, 1e-9).unwrap().found().unwrap();
        assert!(again.residual < 1e-7);
        let support: Vec<Point> = c
            .system
            .field
            .terms
            .iter()
            .flat_map(|t| t.support_samples())
            .collect();
        assert!(!support.is_empty());
        let (a, b) = (sys.flow(), c.system.flow());
        let mut checked = 0;
        for q in sys.space.sample_points(40) {
            let pts = dense_orbit(&sys, &q, 0.5, 0.01).unwrap();
            let far = pts.reduced.iter().all(|x| {
                c.system.field.terms.iter().all(|t| t.eval(&sys.space, x).norm() == 0.0)
                    && support.iter().all(|s| sys.space.distance(s, x) > 0.2)
            });
            if far {
                let (ya, yb) = (a.flow(&q, 0.5).unwrap(), b.flow(&q, 0.5).unwrap());
                assert!(sys.space.distance(&ya, &yb) < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 5);
    }

    #[test]
    fn attractify_field_on_s1a() {
        let sys = builtin_system("S1a").unwrap();
        let orbit = s1a_orbit(&sys);
        let c = attractify(&sys, &orbit, 0.2).unwrap();
        assert!(c.ratio.unwrap() <= 0.9);
        assert_eq!(c.orbit.index, Some(1));
        assert_eq!(c.orbit.classification, Classification::Attracting);
        assert!(c.record.c0_size <= c.record.size_bound + 1e-12);
        let zero = attractify(&sys, &orbit, 0.0).unwrap();
        assert_eq!(zero.system, sys);
        assert!((zero.ratio.unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn attractify_impulse_on_s1a() {
        let sys = builtin_system("S1a").unwrap();
        let orbit = s1a_orbit(&sys);
        let c = attractify_impulse(&sys, &orbit, 0.1).unwrap();
        assert!(c.ratio.unwrap() <= 0.9);
        assert_eq!(c.orbit.index, Some(1));
        let samples = sys.d.grid(81, 0.0);
        assert!(c0_distance_impulses(&sys.impulse, &c.system.impulse, &samples) <= 0.1);
        let zero = attractify_impulse(&sys, &orbit, 0.0).unwrap();
        assert_eq!(zero.system.impulse, sys.impulse);
    }

    #[test]
    fn radial_damping_destroys_the_s1a_family() {
        let sys = builtin_system("S1a").unwrap();
        let orbit = s1a_orbit(&sys);
        let damping = Perturbation::FieldTerm {
            term: FieldTerm::Linear {
                matrix: Matrix3::from_diagonal(&Point::new(-0.01, -0.01, 0.0)),
            },
        };
        let opts = PermanenceOptions {
            delta: 0.01,
            mode: Mode::Field,
            seed: 1,
            survival_radius: Some(0.5),
        };
        let r = permanence_test(&sys, &orbit, &Trials::Explicit(vec![damping]), &opts).unwrap();
        assert_eq!(r.survivals, 0);
    }

    #[test]
    fn s1b_circles_ignore_impulse_perturbations() {
        let sys = builtin_system("S1b").unwrap();
        let circle = find_free_orbit(&sys, &sys.d_hat, &Point::new(0.0, 1.0, 0.0), 1, 1e-10)
            .unwrap()
            .found()
            .unwrap();
        assert!((circle.period - std::f64::consts::TAU).abs() < 1e-6);
        let opts = PermanenceOptions {
            delta: 0.05,
            mode: Mode::Impulse,
            seed: 3,
            survival_radius: None,
        };
        let r = permanence_test(&sys, &circle, &Trials::Random(8), &opts).unwrap();
        assert_eq!(r.survivals, 8);
        assert!(r.worst_displacement < 1e-9);
        for o in &r.outcomes {
            assert!((o.c0_size - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn permanence_is_reproducible_from_the_seed() {
        let sys = builtin_system("S1a").unwrap();
        let c = attractify(&sys, &s1a_orbit(&sys), 0.2).unwrap();
        let opts = PermanenceOptions {
            delta: 1e-4,
            mode: Mode::Field,
            seed: 9,
            survival_radius: None,
        };
        let a = permanence_test(&c.system, &c.orbit, &Trials::Random(4), &opts).unwrap();
        let b = permanence_test(&c.system, &c.orbit, &Trials::Random(4), &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.survivals <= a.trials);
    }
}
