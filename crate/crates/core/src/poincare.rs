//! Impulsive Poincaré maps `P_{X,I}` on D̂ and `f_{X,I}` on D, return maps
//! to free cross-sections, and periodic orbits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrate::HitOutcome;
use crate::refine::{fd_jacobian, solve, RefineFailure, RefineOptions};
use crate::section::SectionPatch;
use crate::semiflow::edge_clearance;
use crate::system::ImpulsiveSystem;
use crate::{ChartPoint, Error, Point, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum MapOutcome {
    Landed { point: Point, chart: ChartPoint, time: f64 },
    /// No D hit within the horizon.
    NoReturn,
    /// The D hit lies in the margin band of ∂D.
    BoundaryLanding { point: Point, time: f64 },
}

impl MapOutcome {
    pub fn landed(&self) -> Option<(Point, ChartPoint, f64)> {
        match self {
            MapOutcome::Landed { point, chart, time } => Some((*point, *chart, *time)),
            _ => None,
        }
    }
}

/// `P_{X,I}(y) = I(φ_{τ(y)}(y))` for `y ∈ D̂`.
pub fn poincare_hat(sys: &ImpulsiveSystem, y: &Point) -> Result<MapOutcome> {
    if !sys.on_d_hat(y) {
        return Err(Error::OutsidePatch {
            patch: sys.d_hat.name.clone(),
            point: *y,
        });
    }
    let opts = sys.hit_options(sys.tolerances.horizon).with_burn_in(sys.burn_in());
    match sys.flow().first_hit(y, &[&sys.d], &opts)? {
        HitOutcome::NoHit { .. } => Ok(MapOutcome::NoReturn),
        HitOutcome::Hit(h) if !h.interior => Ok(MapOutcome::BoundaryLanding {
            point: h.point,
            time: h.time,
        }),
        HitOutcome::Hit(h) => {
            let chart = sys.impulse.apply_chart(&h.chart);
            Ok(MapOutcome::Landed {
                point: sys.d_hat_point(&chart),
                chart,
                time: h.time,
            })
        }
    }
}

/// `P` in D̂ chart coordinates.
pub fn poincare_hat_chart(sys: &ImpulsiveSystem, v: &ChartPoint) -> Result<MapOutcome> {
    if !sys.d_hat.in_rect(v, 1e-12) {
        return Err(Error::OutsidePatch {
            patch: sys.d_hat.name.clone(),
            point: sys.d_hat.embed(v),
        });
    }
    poincare_hat(sys, &sys.d_hat_point(v))
}

/// Smallest chart clearance along a landing orbit: the distance of each D
/// hit from the margin band, of each landing from the edge of D̂, and of
/// each near miss from the edge of D. Nearby orbits keep the same
/// combinatorics while they move by less.
pub fn landing_clearance(sys: &ImpulsiveSystem, v: &ChartPoint, k: usize) -> Result<f64> {
    let opts = sys.hit_options(sys.tolerances.horizon).with_burn_in(sys.burn_in());
    let mut cur = *v;
    let mut clear = sys.d_hat.boundary_distance(v);
    let mut period = 0.0;
    for _ in 0..k {
        match sys.flow().first_hit(&sys.d_hat_point(&cur), &[&sys.d], &opts)? {
            HitOutcome::Hit(h) => {
                clear = clear.min(sys.d.boundary_distance(&h.chart) - sys.d.margin);
                cur = sys.impulse.apply_chart(&h.chart);
                clear = clear.min(sys.d_hat.boundary_distance(&cur));
                period += h.time;
            }
            HitOutcome::NoHit { .. } => return Ok(f64::NEG_INFINITY),
        }
    }
    Ok(clear.min(edge_clearance(sys, &sys.d_hat_point(v), period)?))
}

/// `P^k`, accumulating flight times. Returns the landing points in order.
pub fn poincare_iterate(sys: &ImpulsiveSystem, v: &ChartPoint, k: usize) -> Result<Option<(Vec<ChartPoint>, f64)>> {
    let mut cur = *v;
    let mut pts = Vec::with_capacity(k);
    let mut total = 0.0;
    for _ in 0..k {
        if !sys.d_hat.in_rect(&cur, 0.0) {
            return Ok(None);
        }
        match poincare_hat_chart(sys, &cur)? {
            MapOutcome::Landed { chart, time, .. } => {
                cur = chart;
                total += time;
                pts.push(chart);
            }
            _ => return Ok(None),
        }
    }
    Ok(Some((pts, total)))
}

/// `f_{X,I} = I⁻¹ ∘ P_{X,I} ∘ I` on D.
pub fn poincare_d(sys: &ImpulsiveSystem, x: &Point) -> Result<MapOutcome> {
    let y = sys.apply_impulse(x)?;
    match poincare_hat(sys, &y)? {
        MapOutcome::Landed { point, time, .. } => {
            let back = sys.impulse_inverse(&point)?;
            Ok(MapOutcome::Landed {
                chart: sys.d.chart_coords(&sys.space, &back),
                point: back,
                time,
            })
        }
        other => Ok(other),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Return {
    pub point: Point,
    pub chart: ChartPoint,
    pub time: f64,
    /// Impulses applied on the way.
    pub impulses: usize,
}

/// Follows the impulsive trajectory from `x ∈ σ` to its `n_crossings`-th
/// crossing of σ in the direction of the flow at `x`. `None` when the orbit
/// does not return within the horizon.
pub fn return_map(sys: &ImpulsiveSystem, sigma: &SectionPatch, x: &Point, n_crossings: usize) -> Result<Option<Return>> {
    if !sigma.contains(&sys.space, x, 1e-7) {
        return Err(Error::OutsidePatch {
            patch: sigma.name.clone(),
            point: *x,
        });
    }
    let flow = sys.flow();
    let dir = sigma.gradient(x).dot(&sys.field.eval(&sys.space, x));
    if dir.abs() < sigma.transversality_floor {
        return Err(Error::InvalidParameter(format!("section {} not transversal at {x:?}", sigma.name)));
    }
    let want: i8 = if dir > 0.0 { 1 } else { -1 };
    let mut cur = *x;
    let mut t = 0.0;
    let mut burn = 0.0;
    let mut count = 0;
    let mut impulses = 0;
    while count < n_crossings {
        let remaining = sys.tolerances.horizon - t;
        if remaining <= 0.0 {
            return Ok(None);
        }
        let opts = sys.hit_options(remaining).with_burn_in(burn);
        let Some(h) = flow.first_hit(&cur, &[&sys.d, sigma], &opts)?.hit() else {
            return Ok(None);
        };
        t += h.time;
        if h.section == 0 {
            cur = sys.apply_impulse(&h.point)?;
            impulses += 1;
            burn = sys.burn_in();
        } else {
            cur = h.point;
            burn = 0.0;
            if h.direction == want {
                count += 1;
            }
        }
    }
    Ok(Some(Return {
        point: cur,
        chart: sigma.chart_coords(&sys.space, &cur),
        time: t,
        impulses,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Attracting,
    Unknown,
}

/// Where an orbit's representative lives and which return map closes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OrbitSection {
    /// On D̂; the orbit closes after `k` applications of `P_{X,I}`.
    Landing,
    /// On a free cross-section; the orbit closes at the given crossing.
    Free { patch: SectionPatch, crossings: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    /// Representative on D̂ or on the free section.
    pub representative: Point,
    pub chart: ChartPoint,
    pub period: f64,
    /// Number of D̂ crossings per period.
    pub k: usize,
    /// `|P^k(y) − y|` in chart distance.
    pub residual: f64,
    pub classification: Classification,
    pub index: Option<i32>,
    /// Landing points on D̂ (chart coordinates), ending at the representative.
    pub crossings: Vec<ChartPoint>,
    /// Member of a non-isolated family of fixed points (`DP^k ≈ id`).
    pub family: bool,
    pub section: OrbitSection,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrbitSearch {
    Found(PeriodicOrbit),
    NotFound { best: ChartPoint, residual: f64 },
    BoundaryLanding,
}

impl OrbitSearch {
    pub fn found(self) -> Option<PeriodicOrbit> {
        match self {
            OrbitSearch::Found(o) => Some(o),
            _ => None,
        }
    }
}

/// Refines a fixed point of `P^k` near `guess ∈ D̂`.
pub fn find_periodic_orbit(sys: &ImpulsiveSystem, guess: &Point, k: usize, refine_tol: f64) -> Result<OrbitSearch> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if !sys.on_d_hat(guess) {
        return Err(Error::OutsidePatch {
            patch: sys.d_hat.name.clone(),
            point: *guess,
        });
    }
    let v0 = sys.d_hat.chart_coords(&sys.space, guess);
    find_periodic_orbit_chart(sys, &v0, k, refine_tol)
}

pub fn find_periodic_orbit_chart(sys: &ImpulsiveSystem, v0: &ChartPoint, k: usize, refine_tol: f64) -> Result<OrbitSearch> {
    let dim = sys.d_hat.dim();
    let boundary = std::sync::atomic::AtomicBool::new(false);
    let err: std::sync::Mutex<Option<Error>> = std::sync::Mutex::new(None);
    let map = |v: &ChartPoint| -> Option<ChartPoint> {
        match poincare_iterate_classified(sys, v, k) {
            Ok(Iterate::Landed(pts, _)) => Some(pts[k - 1] - v),
            Ok(Iterate::Boundary) => {
                boundary.store(true, std::sync::atomic::Ordering::Relaxed);
                None
            }
            Ok(Iterate::Undefined) => None,
            Err(e) => {
                *err.lock().unwrap() = Some(e);
                None
            }
        }
    };
    let refined = solve(map, *v0, &RefineOptions::new(refine_tol, dim));
    if let Some(e) = err.into_inner().unwrap() {
        if !matches!(e, Error::LeftDomain { .. }) {
            return Err(e);
        }
    }
    match refined {
        Ok(r) => {
            let Iterate::Landed(pts, period) = poincare_iterate_classified(sys, &r.x, k)? else {
                return Ok(OrbitSearch::BoundaryLanding);
            };
            let residual = (pts[k - 1] - r.x).norm();
            let family = is_family(sys, &r.x, k, &pts[k - 1]);
            Ok(OrbitSearch::Found(PeriodicOrbit {
                representative: sys.d_hat_point(&r.x),
                chart: r.x,
                period,
                k,
                residual,
                classification: Classification::Unknown,
                index: None,
                crossings: pts,
                family,
                section: OrbitSection::Landing,
            }))
        }
        Err(_) if boundary.load(std::sync::atomic::Ordering::Relaxed) => Ok(OrbitSearch::BoundaryLanding),
        Err(RefineFailure::Stalled { x, residual }) => Ok(OrbitSearch::NotFound { best: x, residual }),
        Err(RefineFailure::Undefined) => Ok(OrbitSearch::NotFound {
            best: *v0,
            residual: f64::INFINITY,
        }),
    }
}

enum Iterate {
    Landed(Vec<ChartPoint>, f64),
    Boundary,
    Undefined,
}

fn poincare_iterate_classified(sys: &ImpulsiveSystem, v: &ChartPoint, k: usize) -> Result<Iterate> {
    let mut cur = *v;
    let mut pts = Vec::with_capacity(k);
    let mut total = 0.0;
    for _ in 0..k {
        if !sys.d_hat.in_rect(&cur, 0.0) {
            return Ok(Iterate::Undefined);
        }
        match poincare_hat_chart(sys, &cur)? {
            MapOutcome::Landed { chart, time, .. } => {
                cur = chart;
                total += time;
                pts.push(chart);
            }
            MapOutcome::BoundaryLanding { .. } => return Ok(Iterate::Boundary),
            MapOutcome::NoReturn => return Ok(Iterate::Undefined),
        }
    }
    Ok(Iterate::Landed(pts, total))
}

/// Whether `DP^k` at a fixed point is the identity to finite-difference
/// accuracy (a continuum of fixed points).
fn is_family(sys: &ImpulsiveSystem, v: &ChartPoint, k: usize, image: &ChartPoint) -> bool {
    let dim = sys.d_hat.dim();
    let f = |w: &ChartPoint| -> Option<ChartPoint> {
        poincare_iterate(sys, w, k).ok().flatten().map(|(p, _)| p[k - 1])
    };
    match fd_jacobian(&f, v, image, 1e-4, dim) {
        Some(j) => {
            let dev = j - nalgebra::Matrix2::identity();
            let dev = if dim == 1 { dev[(0, 0)].abs() } else { dev.abs().max() };
            dev < 1e-5
        }
        None => false,
    }
}

/// Per_t: periodic orbits with period ≤ `t_bound`, seeded from a grid on D̂.
pub fn periodic_orbits_up_to(sys: &ImpulsiveSystem, t_bound: f64, grid_resolution: usize) -> Vec<PeriodicOrbit> {
    let seeds = sys.d_hat.grid(grid_resolution, 2.0 * sys.d_hat.margin);
    let tol = sys.tolerances.periodic;
    let per_seed: Vec<Vec<PeriodicOrbit>> = seeds
        .par_iter()
        .map(|v| {
            let mut found = Vec::new();
            let mut cur = *v;
            let mut elapsed = 0.0;
            let mut k = 0;
            loop {
                let Ok(MapOutcome::Landed { chart, time, .. }) = poincare_hat_chart(sys, &cur) else {
                    break;
                };
                elapsed += time;
                k += 1;
                if elapsed > t_bound {
                    break;
                }
                cur = chart;
                if let Ok(OrbitSearch::Found(o)) = find_periodic_orbit_chart(sys, v, k, tol) {
                    if o.period <= t_bound && o.residual <= tol {
                        found.push(o);
                    }
                }
                if !sys.d_hat.in_rect(&cur, 0.0) {
                    break;
                }
            }
            found
        })
        .collect();
    let mut all: Vec<PeriodicOrbit> = per_seed.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        a.period
            .total_cmp(&b.period)
            .then(a.chart.x.total_cmp(&b.chart.x))
            .then(a.chart.y.total_cmp(&b.chart.y))
    });
    merge_orbits(all, sys.tolerances.merge_radius)
}

/// Drops orbits that coincide with an earlier one: same period and a
/// representative within `radius` of one of the earlier orbit's crossings.
/// Orbits with a smaller primitive period absorb their multiples.
pub fn merge_orbits(orbits: Vec<PeriodicOrbit>, radius: f64) -> Vec<PeriodicOrbit> {
    let mut kept: Vec<PeriodicOrbit> = Vec::new();
    for o in orbits {
        let dup = kept.iter().any(|q| {
            let same_orbit = q.crossings.iter().any(|c| (c - o.chart).norm() <= radius);
            let multiple = (o.period / q.period - (o.period / q.period).round()).abs() < 1e-6;
            same_orbit && multiple
        });
        if !dup {
            kept.push(o);
        }
    }
    kept
}

/// The map whose fixed point is the orbit, in the chart of its section.
pub struct OrbitMap<'a> {
    pub sys: &'a ImpulsiveSystem,
    pub section: &'a OrbitSection,
    pub k: usize,
}

impl<'a> OrbitMap<'a> {
    pub fn new(sys: &'a ImpulsiveSystem, orbit: &'a PeriodicOrbit) -> Self {
        OrbitMap {
            sys,
            section: &orbit.section,
            k: orbit.k,
        }
    }

    /// Image, return time, and impulses applied; `None` where undefined.
    pub fn eval_full(&self, v: &ChartPoint) -> Result<Option<(ChartPoint, f64, usize, Vec<ChartPoint>)>> {
        match self.section {
            OrbitSection::Landing => Ok(match poincare_iterate_classified(self.sys, v, self.k)? {
                Iterate::Landed(pts, t) => Some((pts[self.k - 1], t, self.k, pts)),
                _ => None,
            }),
            OrbitSection::Free { patch, crossings } => {
                if !patch.in_rect(v, 1e-12) {
                    return Ok(None);
                }
                let x = self.sys.space.reduce(&patch.embed(v));
                match return_map(self.sys, patch, &x, *crossings) {
                    Ok(Some(r)) if patch.in_rect(&r.chart, 1e-12) => Ok(Some((r.chart, r.time, r.impulses, vec![r.chart]))),
                    Ok(_) => Ok(None),
                    Err(Error::LeftDomain { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self.section {
            OrbitSection::Landing => self.sys.d_hat.dim(),
            OrbitSection::Free { patch, .. } => patch.dim(),
        }
    }

    pub fn embed(&self, v: &ChartPoint) -> Point {
        match self.section {
            OrbitSection::Landing => self.sys.d_hat_point(v),
            OrbitSection::Free { patch, .. } => self.sys.space.reduce(&patch.embed(v)),
        }
    }
}

impl crate::index::ChartMap for OrbitMap<'_> {
    fn eval(&self, x: &ChartPoint) -> Result<ChartPoint> {
        match self.eval_full(x)? {
            Some((y, ..)) => Ok(y),
            None => Err(Error::MapUndefined {
                point: self.embed(x),
                reason: "no return".into(),
            }),
        }
    }
}

/// Re-finds `orbit` in `sys` starting from its chart position.
pub fn refine_orbit(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, tol: f64) -> Result<OrbitSearch> {
    if let OrbitSection::Landing = orbit.section {
        return find_periodic_orbit_chart(sys, &orbit.chart, orbit.k, tol);
    }
    let map = OrbitMap::new(sys, orbit);
    let err: std::sync::Mutex<Option<Error>> = std::sync::Mutex::new(None);
    let f = |v: &ChartPoint| -> Option<ChartPoint> {
        match map.eval_full(v) {
            Ok(r) => r.map(|(y, ..)| y - v),
            Err(e) => {
                *err.lock().unwrap() = Some(e);
                None
            }
        }
    };
    let refined = solve(f, orbit.chart, &RefineOptions::new(tol, map.dim()));
    if let Some(e) = err.into_inner().unwrap() {
        return Err(e);
    }
    match refined {
        Ok(r) => {
            let Some((y, period, impulses, _)) = map.eval_full(&r.x)? else {
                return Ok(OrbitSearch::NotFound {
                    best: r.x,
                    residual: f64::INFINITY,
                });
            };
            Ok(OrbitSearch::Found(PeriodicOrbit {
                representative: map.embed(&r.x),
                chart: r.x,
                period,
                k: impulses,
                residual: (y - r.x).norm(),
                classification: orbit.classification,
                index: None,
                crossings: vec![r.x],
                family: false,
                section: orbit.section.clone(),
            }))
        }
        Err(RefineFailure::Stalled { x, residual }) => Ok(OrbitSearch::NotFound { best: x, residual }),
        Err(RefineFailure::Undefined) => Ok(OrbitSearch::NotFound {
            best: orbit.chart,
            residual: f64::INFINITY,
        }),
    }
}

/// Fixed point of the `crossings`-th return to a free section near `x`.
pub fn find_free_orbit(
    sys: &ImpulsiveSystem,
    patch: &SectionPatch,
    x: &Point,
    crossings: usize,
    tol: f64,
) -> Result<OrbitSearch> {
    if crossings == 0 {
        return Err(Error::InvalidParameter("crossings must be at least 1".into()));
    }
    let chart = patch.chart_coords(&sys.space, x);
    let seed = PeriodicOrbit {
        representative: *x,
        chart,
        period: 0.0,
        k: 0,
        residual: f64::INFINITY,
        classification: Classification::Unknown,
        index: None,
        crossings: vec![chart],
        family: false,
        section: OrbitSection::Free {
            patch: patch.clone(),
            crossings,
        },
    };
    refine_orbit(sys, &seed, tol)
}

/// Finite-difference contraction ratio of the orbit's return map:
/// `max_e ‖F(y + h e) − F(y)‖ / h` over eight chart directions.
pub fn contraction_ratio(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, h: f64) -> Result<f64> {
    let map = OrbitMap::new(sys, orbit);
    let undefined = || Error::MapUndefined {
        point: orbit.representative,
        reason: "return map undefined near the orbit".into(),
    };
    let (base, ..) = map.eval_full(&orbit.chart)?.ok_or_else(undefined)?;
    let dirs: Vec<ChartPoint> = if map.dim() == 1 {
        vec![ChartPoint::new(1.0, 0.0), ChartPoint::new(-1.0, 0.0)]
    } else {
        (0..8)
            .map(|i| {
                let th = std::f64::consts::TAU * i as f64 / 8.0;
                ChartPoint::new(th.cos(), th.sin())
            })
            .collect()
    };
    let ratios = dirs
        .par_iter()
        .map(|e| {
            let (y, ..) = map.eval_full(&(orbit.chart + e * h))?.ok_or_else(undefined)?;
            Ok((y - base).norm() / h)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::builtin_system;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn s1a_landing_point_is_fixed() {
        let sys = builtin_system("S1a").unwrap();
        let out = poincare_hat(&sys, &Point::new(0.0, 2.0, 0.0)).unwrap();
        let (p, _, t) = out.landed().unwrap();
        assert!((p - Point::new(0.0, 2.0, 0.0)).norm() <= 1e-9);
        assert_relative_eq!(t, 1.5 * PI, epsilon = 1e-9);
        assert!(poincare_hat(&sys, &Point::new(0.0, 0.9, 0.0)).is_err());
    }

    #[test]
    fn s1a_conjugate_map_is_identity() {
        let sys = builtin_system("S1a").unwrap();
        for u in sys.d.grid(5, 0.1) {
            let x = sys.d_point(&u);
            let (fx, _, _) = poincare_d(&sys, &x).unwrap().landed().unwrap();
            assert!((fx - x).norm() <= 1e-9);
        }
    }

    #[test]
    fn s1a_orbit_refinement() {
        let sys = builtin_system("S1a").unwrap();
        let o = find_periodic_orbit(&sys, &Point::new(0.0, 2.1, 0.1), 1, 1e-9).unwrap().found().unwrap();
        assert!((o.representative - Point::new(0.0, 2.1, 0.1)).norm() <= 1e-9);
        assert_relative_eq!(o.period, 1.5 * PI, epsilon = 1e-8);
        assert!(o.residual <= 1e-9);
        assert!(o.family);
    }

    #[test]
    fn return_map_on_free_section() {
        let sys = builtin_system("S1a").unwrap();
        // θ = 5π/4: the sector 0 < θ < π/2 is skipped by the impulse.
        let (c, s) = ((1.25 * PI).cos(), (1.25 * PI).sin());
        let sigma = SectionPatch::affine(
            "sigma",
            Point::zeros(),
            [Point::new(c, s, 0.0), Point::z()],
            ChartPoint::new(1.6, -0.4),
            ChartPoint::new(2.4, 0.4),
        );
        let x = sigma.embed(&ChartPoint::new(2.0, 0.1));
        let r1 = return_map(&sys, &sigma, &x, 1).unwrap().unwrap();
        assert!((r1.point - x).norm() <= 1e-8);
        assert_eq!(r1.impulses, 1);
        let r2 = return_map(&sys, &sigma, &x, 2).unwrap().unwrap();
        assert!((r2.point - x).norm() <= 1e-7);

        let sigma2 = SectionPatch::affine(
            "sigma",
            Point::zeros(),
            [Point::y(), Point::z()],
            ChartPoint::new(0.5, -0.4),
            ChartPoint::new(1.4, 0.4),
        );
        let x = Point::new(0.0, 0.9, 0.0);
        let r = return_map(&sys, &sigma2, &x, 1).unwrap().unwrap();
        assert!((r.point - x).norm() <= 1e-8);
        assert_relative_eq!(r.time, 2.0 * PI, epsilon = 1e-8);
        assert_eq!(r.impulses, 0);
    }

    #[test]
    fn s1a_orbit_census() {
        let sys = builtin_system("S1a").unwrap();
        assert!(periodic_orbits_up_to(&sys, 4.0, 5).is_empty());
        let orbits = periodic_orbits_up_to(&sys, 5.0, 5);
        assert_eq!(orbits.len(), 25);
        assert!(orbits.iter().all(|o| o.family && o.k == 1));
        assert!(orbits.iter().all(|o| (o.period - 1.5 * PI).abs() < 1e-8));
    }
}
