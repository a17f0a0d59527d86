//! Impulsive trajectories: flow until D, jump by I, repeat.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::integrate::{Control, HitOutcome, Step};
use crate::system::ImpulsiveSystem;
use crate::{ChartPoint, Error, Point, Result};

/// A smooth piece `[start, end]` with the integrator's accepted states
/// (unreduced coordinates, absolute times).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub start: f64,
    pub end: f64,
    pub samples: Vec<(f64, Point)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseEvent {
    /// Impulsive time τ_n.
    pub time: f64,
    /// `φ` limit at τ_n, on D.
    pub pre: Point,
    /// `I(pre)`, on D̂; the trajectory's value at τ_n.
    pub post: Point,
    pub pre_chart: ChartPoint,
    /// Whether the hit is in the interior D̊ (outside the margin band).
    pub interior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x0: Point,
    pub arcs: Vec<Arc>,
    pub events: Vec<ImpulseEvent>,
    pub horizon: f64,
    /// Number of grazing hits skipped along the way.
    pub tangency_warnings: usize,
}

impl Trajectory {
    /// Events in the margin band of ∂D.
    pub fn boundary_events(&self) -> impl Iterator<Item = &ImpulseEvent> {
        self.events.iter().filter(|e| !e.interior)
    }

    pub fn is_boundary_sensitive(&self) -> bool {
        self.boundary_events().next().is_some()
    }
}

/// Builds `γ_x` on `[0, t_end]`.
pub fn impulsive_trajectory(sys: &ImpulsiveSystem, x0: &Point, t_end: f64) -> Result<Trajectory> {
    if !sys.space.contains(x0) {
        return Err(Error::InvalidParameter(format!("initial point {x0:?} outside the domain")));
    }
    let flow = sys.flow();
    let mut t = 0.0;
    let mut x = *x0;
    let mut burn = if sys.on_d(x0) { sys.burn_in() } else { 0.0 };
    let mut arcs = Vec::new();
    let mut events = Vec::new();
    let mut tangency_warnings = 0;
    loop {
        let remaining = t_end - t;
        let mut samples = Vec::new();
        let opts = sys.hit_options(remaining).with_burn_in(burn);
        let out = flow.first_hit_recording(&x, &[&sys.d], &opts, Some(&mut samples))?;
        for s in samples.iter_mut() {
            s.0 += t;
        }
        match out {
            HitOutcome::Hit(h) => {
                tangency_warnings += h.warnings.len();
                let post = sys.apply_impulse(&h.point)?;
                arcs.push(Arc {
                    start: t,
                    end: t + h.time,
                    samples,
                });
                t += h.time;
                events.push(ImpulseEvent {
                    time: t,
                    pre: h.point,
                    post,
                    pre_chart: h.chart,
                    interior: h.interior,
                });
                x = post;
                burn = sys.burn_in();
                if t >= t_end {
                    arcs.push(Arc {
                        start: t,
                        end: t,
                        samples: vec![(t, x)],
                    });
                    break;
                }
            }
            HitOutcome::NoHit { warnings, .. } => {
                tangency_warnings += warnings.len();
                arcs.push(Arc {
                    start: t,
                    end: t_end,
                    samples,
                });
                break;
            }
        }
    }
    Ok(Trajectory {
        x0: *x0,
        arcs,
        events,
        horizon: t_end,
        tangency_warnings,
    })
}

/// `γ_x(t)`. At `t = τ_n` the post-impulse point is returned.
pub fn evaluate(sys: &ImpulsiveSystem, traj: &Trajectory, t: f64) -> Result<Point> {
    if !(0.0..=traj.horizon).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            lo: 0.0,
            hi: traj.horizon,
        });
    }
    if t == 0.0 {
        return Ok(traj.x0);
    }
    if let Some(e) = traj.events.iter().find(|e| e.time == t) {
        return Ok(e.post);
    }
    let arc = traj
        .arcs
        .iter()
        .find(|a| a.start <= t && t < a.end)
        .or_else(|| traj.arcs.last())
        .expect("trajectory has at least one arc");
    let idx = arc.samples.partition_point(|s| s.0 <= t).saturating_sub(1);
    let (ts, ps) = arc.samples[idx];
    let p = sys.flow().flow_raw(&ps, t - ts)?;
    Ok(sys.space.reduce(&p))
}

/// Strictly increasing impulsive times τ₁ < τ₂ < ….
pub fn impulsive_times(traj: &Trajectory) -> Vec<f64> {
    traj.events.iter().map(|e| e.time).collect()
}

/// Writes `t,x1,x2,x3,arc_index` rows (reduced coordinates).
pub fn write_csv(sys: &ImpulsiveSystem, traj: &Trajectory, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x1", "x2", "x3", "arc_index"]).map_err(csv_err)?;
    for (i, arc) in traj.arcs.iter().enumerate() {
        for (t, p) in &arc.samples {
            let q = sys.space.reduce(p);
            w.write_record([
                t.to_string(),
                q.x.to_string(),
                q.y.to_string(),
                q.z.to_string(),
                i.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Samples of the orbit every `dt` time units, impulse post-points included.
pub fn sample_orbit(sys: &ImpulsiveSystem, traj: &Trajectory, dt: f64) -> Result<Vec<Point>> {
    let n = (traj.horizon / dt).ceil() as usize;
    let mut pts = Vec::with_capacity(n + traj.events.len() * 2 + 1);
    let flow = sys.flow();
    for arc in &traj.arcs {
        let mut k = 0usize;
        let mut t = arc.start;
        while t < arc.end || (t == arc.end && arc.start == arc.end) {
            let idx = arc.samples.partition_point(|s| s.0 <= t).saturating_sub(1);
            let (ts, ps) = arc.samples[idx];
            pts.push(sys.space.reduce(&flow.flow_raw(&ps, t - ts)?));
            k += 1;
            t = arc.start + k as f64 * dt;
            if arc.start == arc.end {
                break;
            }
        }
    }
    for e in &traj.events {
        pts.push(e.pre);
    }
    Ok(pts)
}

/// An accepted step of an impulsive trajectory as seen by [`walk`]: the
/// step's dense output is valid on local times `[step.t0, end]`, and the
/// global time is `offset + local`.
pub struct WalkStep<'s> {
    pub step: &'s Step,
    pub offset: f64,
    pub end: f64,
    /// The step ends at an impulse.
    pub impulse: bool,
}

impl WalkStep<'_> {
    pub fn start_time(&self) -> f64 {
        self.offset + self.step.t0
    }

    pub fn end_time(&self) -> f64 {
        self.offset + self.end
    }

    /// Unreduced state at global time `t` within the step.
    pub fn at(&self, t: f64) -> Point {
        self.step.interp(t - self.offset)
    }
}

/// Runs the impulsive trajectory of `x0` up to `t_end`, handing every step to
/// `observer`, which may stop the walk. Returns the time reached.
pub fn walk(
    sys: &ImpulsiveSystem,
    x0: &Point,
    t_end: f64,
    mut observer: impl FnMut(&WalkStep) -> Control,
) -> Result<f64> {
    let flow = sys.flow();
    let mut t = 0.0;
    let mut x = *x0;
    let mut burn = if sys.on_d(x0) { sys.burn_in() } else { 0.0 };
    loop {
        let opts = sys.hit_options(t_end - t).with_burn_in(burn);
        let mut stopped = false;
        let out = flow.first_hit_observed(&x, &[&sys.d], &opts, |step, hit| {
            let ws = WalkStep {
                step,
                offset: t,
                end: hit.map_or(step.t1(), |h| h.time),
                impulse: hit.is_some(),
            };
            let c = observer(&ws);
            if matches!(c, Control::Stop) {
                stopped = true;
            }
            c
        })?;
        match out {
            HitOutcome::Hit(h) if !stopped => {
                t += h.time;
                x = sys.apply_impulse(&h.point)?;
                burn = sys.burn_in();
                if t >= t_end {
                    return Ok(t);
                }
            }
            HitOutcome::Hit(h) => return Ok(t + h.time),
            HitOutcome::NoHit { time, .. } => return Ok(t + time),
        }
    }
}

/// Smallest chart distance from `∂D` at which the trajectory of `x0` meets
/// the hypersurface of D on `[0, t_end]`, counting hits and near misses
/// alike. Trajectories closer than this stay on the same side of every edge.
pub fn edge_clearance(sys: &ImpulsiveSystem, x0: &Point, t_end: f64) -> Result<f64> {
    let space = &sys.space;
    let g = |p: &Point| sys.d.section_value(space, &space.reduce(p));
    let mut clear = f64::INFINITY;
    walk(sys, x0, t_end, |ws| {
        let (a, b) = (ws.start_time(), ws.end_time());
        let at = if ws.impulse {
            Some(b)
        } else {
            let (ga, gb) = (g(&ws.at(a)), g(&ws.at(b)));
            (ga * gb < 0.0).then(|| {
                let (mut lo, mut hi, mut glo) = (a, b, ga);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    let gm = g(&ws.at(mid));
                    if gm * glo > 0.0 {
                        lo = mid;
                        glo = gm;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
        };
        if let Some(t) = at {
            let u = sys.d.chart_coords(space, &space.reduce(&ws.at(t)));
            clear = clear.min(sys.d.boundary_distance(&u).abs());
        }
        Control::Continue
    })?;
    Ok(clear)
}

/// Samples `γ_x` every `dt` on `[0, t_end]` from the dense output (reduced),
/// plus the pre- and post-impulse points.
pub fn dense_samples(sys: &ImpulsiveSystem, x0: &Point, t_end: f64, dt: f64) -> Result<Vec<(f64, Point)>> {
    let mut out = vec![(0.0, sys.space.reduce(x0))];
    let mut next = dt;
    walk(sys, x0, t_end, |ws| {
        while next < ws.end_time() {
            out.push((next, sys.space.reduce(&ws.at(next))));
            next += dt;
        }
        if ws.impulse {
            let pre = sys.space.reduce(&ws.at(ws.end_time()));
            out.push((ws.end_time(), pre));
            if let Ok(post) = sys.apply_impulse(&pre) {
                out.push((ws.end_time(), post));
            }
        }
        Control::Continue
    })?;
    Ok(out)
}

/// Uniform-in-time samples of a trajectory with unreduced coordinates that
/// are continuous along each arc.
#[derive(Debug, Clone, Default)]
pub struct DenseOrbit {
    pub times: Vec<f64>,
    /// Unreduced states (continuous within an arc).
    pub raw: Vec<Point>,
    pub reduced: Vec<Point>,
    /// Arc index (number of impulses before the sample).
    pub arc: Vec<usize>,
    /// Time span covered.
    pub span: f64,
}

impl DenseOrbit {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Samples every `dt` on `[0, t_end)`; a sample is also placed at the start
/// of every arc.
pub fn dense_orbit(sys: &ImpulsiveSystem, x0: &Point, t_end: f64, dt: f64) -> Result<DenseOrbit> {
    let mut out = DenseOrbit {
        span: t_end,
        ..Default::default()
    };
    let push = |out: &mut DenseOrbit, t: f64, p: Point, arc: usize| {
        out.times.push(t);
        out.reduced.push(sys.space.reduce(&p));
        out.raw.push(p);
        out.arc.push(arc);
    };
    push(&mut out, 0.0, *x0, 0);
    let mut k = 1usize;
    let mut arc = 0usize;
    walk(sys, x0, t_end, |ws| {
        loop {
            let t = k as f64 * dt;
            if t >= ws.end_time() || t >= t_end {
                break;
            }
            push(&mut out, t, ws.at(t), arc);
            k += 1;
        }
        if ws.impulse {
            arc += 1;
            let pre = sys.space.reduce(&ws.at(ws.end_time()));
            if ws.end_time() < t_end {
                if let Ok(post) = sys.apply_impulse(&pre) {
                    push(&mut out, ws.end_time(), post, arc);
                }
            }
        }
        Control::Continue
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::builtin_system;
    use std::f64::consts::PI;

    #[test]
    fn s1a_periodic_trajectory() {
        let sys = builtin_system("S1a").unwrap();
        let x0 = Point::new(0.0, 2.0, 0.0);
        let traj = impulsive_trajectory(&sys, &x0, 10.0).unwrap();
        let times = impulsive_times(&traj);
        assert_eq!(times.len(), 2);
        assert!((times[0] - 1.5 * PI).abs() < 1e-8);
        assert!((times[1] - 3.0 * PI).abs() < 1e-8);
        for e in &traj.events {
            assert!((e.pre - Point::new(2.0, 0.0, 0.0)).norm() < 1e-8);
            assert!((e.post - x0).norm() < 1e-8);
            assert!(e.interior);
        }
        assert!((evaluate(&sys, &traj, PI / 2.0).unwrap() - Point::new(-2.0, 0.0, 0.0)).norm() < 1e-8);
        assert!((evaluate(&sys, &traj, times[0]).unwrap() - x0).norm() < 1e-8);
        assert_eq!(evaluate(&sys, &traj, 0.0).unwrap(), x0);
        assert!(evaluate(&sys, &traj, 10.5).is_err());
    }

    #[test]
    fn small_circles_never_hit() {
        let sys = builtin_system("S1a").unwrap();
        let traj = impulsive_trajectory(&sys, &Point::new(0.0, 0.9, 0.0), 50.0).unwrap();
        assert!(traj.events.is_empty());
        assert_eq!(traj.arcs.len(), 1);
        for t in [1.0, 7.5, 33.3, 50.0] {
            let p = evaluate(&sys, &traj, t).unwrap();
            let oracle = Point::new(-0.9 * t.sin(), 0.9 * t.cos(), 0.0);
            assert!((p - oracle).norm() < 1e-8);
        }
    }

    #[test]
    fn before_the_first_hit_the_semiflow_is_the_flow() {
        let sys = builtin_system("S2").unwrap();
        let x0 = Point::new(0.5, 0.2, 0.3);
        let traj = impulsive_trajectory(&sys, &x0, 0.4).unwrap();
        assert!(traj.events.is_empty());
        let flow = sys.flow();
        for t in [0.1, 0.25, 0.4] {
            let a = evaluate(&sys, &traj, t).unwrap();
            assert!(sys.space.distance(&a, &flow.flow(&x0, t).unwrap()) < 1e-10);
        }
    }

    /// First `n` with `(y, z) + (n + 1/2)(√2, √3)` in the D square, by direct scan.
    fn torus_first_hit(y: f64, z: f64) -> f64 {
        (0..10_000)
            .map(|n| n as f64 + 0.5)
            .find(|t| {
                let a = (y + t * 2f64.sqrt()).rem_euclid(1.0);
                let b = (z + t * 3f64.sqrt()).rem_euclid(1.0);
                (0.1..=0.4).contains(&a) && (0.1..=0.4).contains(&b)
            })
            .unwrap()
    }

    #[test]
    fn torus_hits_at_half_integers() {
        let sys = builtin_system("S2").unwrap();
        for (y, z) in [(0.2, 0.3), (0.15, 0.35), (0.33, 0.12)] {
            let traj = impulsive_trajectory(&sys, &Point::new(0.5, y, z), 60.0).unwrap();
            let t1 = impulsive_times(&traj)[0];
            assert!((t1 - torus_first_hit(y, z)).abs() < 1e-7, "{t1}");
        }
    }

    #[test]
    fn events_are_consistent_and_separated() {
        let sys = builtin_system("S2").unwrap();
        let traj = impulsive_trajectory(&sys, &Point::new(0.5, 0.2, 0.3), 200.0).unwrap();
        assert!(traj.events.len() > 5);
        let bound = sys.travel_time_bound();
        for w in traj.events.windows(2) {
            assert!(w[1].time - w[0].time >= bound - 1e-9);
        }
        for e in &traj.events {
            assert!(sys.d.section_value(&sys.space, &e.pre).abs() <= 1e-8);
            assert!(sys.space.distance(&sys.apply_impulse(&e.pre).unwrap(), &e.post) <= 1e-8);
        }
        for arc in &traj.arcs {
            for (t, p) in &arc.samples {
                if *t > arc.start + 1e-6 && *t < arc.end - 1e-6 {
                    assert!(!sys.on_d(&sys.space.reduce(p)));
                }
            }
        }
    }

    #[test]
    fn csv_export() {
        let sys = builtin_system("S1a").unwrap();
        let traj = impulsive_trajectory(&sys, &Point::new(0.0, 2.0, 0.0), 10.0).unwrap();
        let mut buf = Vec::new();
        write_csv(&sys, &traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,x3,arc_index"));
        let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
        assert_eq!(last[4], "2");
    }
}
