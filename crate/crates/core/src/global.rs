//! Global analysis: a finite-horizon proxy for the non-wandering set, the
//! density gap between that proxy and a list of periodic orbits, the
//! densification loop that closes the gap by repeated C⁰ perturbations, and
//! pseudo-orbits with a resolution-bounded shadowing falsifier.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{halton2, halton3, AmbientSpace, PointGrid};
use crate::integrate::Control;
use crate::perturb::{
    attractify_impulse_avoiding, attractify_with, closing_field_avoiding, closing_impulse_avoiding, AttractOptions,
    ClosingOptions, FieldClosingOptions, Mode, PerturbationRecord, Protected,
};
use crate::poincare::{periodic_orbits_up_to, refine_orbit, OrbitSearch, PeriodicOrbit};
use crate::semiflow::{dense_orbit, walk};
use crate::system::ImpulsiveSystem;
use crate::{ChartPoint, Error, Point, Result};

/// Region covered by a recurrent proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Region {
    /// Axis-aligned box, cut into cubic cells.
    Box { lo: Point, hi: Point },
    /// Cylindrical shell `r ∈ [r_inner, r_outer]`, `z ∈ [z_lo, z_hi]` about
    /// the vertical axis through `center`, cut into cubic cells.
    Annulus {
        center: Point,
        r_inner: f64,
        r_outer: f64,
        z_lo: f64,
        z_hi: f64,
    },
    /// The landing patch D̂, cut into square chart cells.
    Patch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyCell {
    pub center: Point,
    /// Chart coordinates on D̂ for patch cells.
    pub chart: Option<ChartPoint>,
    pub marked: bool,
    pub flagged: bool,
    /// Sample and re-entry time witnessing the mark.
    pub witness: Option<(Point, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentProxy {
    pub region: Region,
    pub cell_size: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub samples_per_cell: usize,
    pub cells: Vec<ProxyCell>,
}

impl RecurrentProxy {
    pub fn marked(&self) -> impl Iterator<Item = &ProxyCell> {
        self.cells.iter().filter(|c| c.marked)
    }

    /// Marked cells that are not boundary-flagged: the cells the density gap
    /// is measured on.
    pub fn eligible(&self) -> impl Iterator<Item = &ProxyCell> {
        self.cells.iter().filter(|c| c.marked && !c.flagged)
    }

    /// CSV with columns `x,y,z,marked,flagged` (cell centers).
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "z", "marked", "flagged"]).map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.center.x.to_string(),
                c.center.y.to_string(),
                c.center.z.to_string(),
                c.marked.to_string(),
                c.flagged.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Cells of side `c` covering a length, ignoring round-off in the ratio.
fn cell_count(len: f64, c: f64) -> usize {
    ((len / c - 1e-9).ceil() as usize).max(1)
}

struct CellSpec {
    center: Point,
    chart: Option<ChartPoint>,
    samples: Vec<Point>,
}

fn cubic_cells(space: &AmbientSpace, lo: &Point, hi: &Point, c: f64, keep: impl Fn(&Point) -> bool, n: usize) -> Vec<CellSpec> {
    let counts: Vec<usize> = (0..3).map(|i| cell_count(hi[i] - lo[i], c)).collect();
    let mut out = Vec::new();
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                let corner = lo + Point::new(i as f64, j as f64, k as f64) * c;
                let mut center = corner + Point::repeat(0.5 * c);
                if let AmbientSpace::ImplicitSurface { surface } = space {
                    if surface.constraint(&center).abs() > c {
                        continue;
                    }
                    center = surface.project(&center);
                }
                if !keep(&center) {
                    continue;
                }
                let mut samples = vec![center];
                samples.extend((1..n).map(|s| space.reduce(&(corner + halton3(s) * c))));
                out.push(CellSpec {
                    center: space.reduce(&center),
                    chart: None,
                    samples,
                });
            }
        }
    }
    out
}

fn cell_specs(sys: &ImpulsiveSystem, region: &Region, c: f64, n: usize) -> Result<Vec<CellSpec>> {
    let space = &sys.space;
    match region {
        Region::Box { lo, hi } => {
            if (0..3).any(|i| lo[i] >= hi[i]) {
                return Err(Error::InvalidParameter("empty box region".into()));
            }
            if let AmbientSpace::EuclideanBox { lo: dlo, hi: dhi } = space {
                if (0..3).any(|i| lo[i] < dlo[i] || hi[i] > dhi[i]) {
                    return Err(Error::InvalidParameter("region outside the ambient domain".into()));
                }
            }
            Ok(cubic_cells(space, lo, hi, c, |_| true, n))
        }
        Region::Annulus {
            center,
            r_inner,
            r_outer,
            z_lo,
            z_hi,
        } => {
            if !(0.0 <= *r_inner && r_inner < r_outer && z_lo < z_hi) {
                return Err(Error::InvalidParameter("empty annulus region".into()));
            }
            let lo = center + Point::new(-r_outer, -r_outer, *z_lo);
            let hi = center + Point::new(*r_outer, *r_outer, *z_hi);
            if let AmbientSpace::EuclideanBox { lo: dlo, hi: dhi } = space {
                if (0..3).any(|i| lo[i] < dlo[i] || hi[i] > dhi[i]) {
                    return Err(Error::InvalidParameter("region outside the ambient domain".into()));
                }
            }
            let keep = |p: &Point| {
                let d = p - center;
                let r = d.x.hypot(d.y);
                r >= *r_inner && r <= *r_outer
            };
            Ok(cubic_cells(space, &lo, &hi, c, keep, n))
        }
        Region::Patch => {
            let d_hat = &sys.d_hat;
            let dims = d_hat.dim();
            let counts: Vec<usize> = (0..2)
                .map(|i| {
                    if i < dims {
                        cell_count(d_hat.hi[i] - d_hat.lo[i], c)
                    } else {
                        1
                    }
                })
                .collect();
            let mut out = Vec::new();
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    let mut corner = d_hat.lo + ChartPoint::new(i as f64, j as f64) * c;
                    let mut size = ChartPoint::repeat(c);
                    if dims == 1 {
                        corner.y = 0.0;
                        size.y = 0.0;
                    }
                    let mut chart = corner + size * 0.5;
                    for a in 0..dims {
                        chart[a] = chart[a].min(d_hat.hi[a]);
                    }
                    let mut samples = vec![sys.d_hat_point(&chart)];
                    for s in 1..n {
                        let (a, b) = halton2(s);
                        let mut u = corner + ChartPoint::new(a * size.x, b * size.y);
                        for k in 0..dims {
                            u[k] = u[k].clamp(d_hat.lo[k], d_hat.hi[k]);
                        }
                        samples.push(sys.d_hat_point(&u));
                    }
                    out.push(CellSpec {
                        center: sys.d_hat_point(&chart),
                        chart: Some(chart),
                        samples,
                    });
                }
            }
            Ok(out)
        }
    }
}

/// Outcome of one sample: first re-entry time into the neighborhood and
/// whether a boundary event happened before it (or before `t_max`).
fn sample_return(sys: &ImpulsiveSystem, x: &Point, center: &Point, radius: f64, t_min: f64, t_max: f64) -> (Option<f64>, bool) {
    let space = &sys.space;
    let speed = sys.field.sup_norm.max(1e-9);
    let dt = 0.25 * radius / speed;
    let mut found = None;
    let mut boundary = false;
    let res = walk(sys, x, t_max, |ws| {
        let (a, b) = (ws.start_time(), ws.end_time());
        if b >= t_min {
            let da = space.distance(&space.reduce(&ws.at(a)), center);
            let db = space.distance(&space.reduce(&ws.at(b)), center);
            if da.min(db) - 0.5 * speed * (b - a) <= radius {
                let mut t = a.max(t_min);
                loop {
                    if space.distance(&space.reduce(&ws.at(t)), center) <= radius {
                        found = Some(t);
                        return Control::Stop;
                    }
                    if t >= b {
                        break;
                    }
                    t = (t + dt).min(b);
                }
            }
        }
        if ws.impulse {
            let pre = space.reduce(&ws.at(b));
            if !sys.d.is_interior(&sys.d.chart_coords(space, &pre)) {
                boundary = true;
            }
        }
        Control::Continue
    });
    if res.is_err() {
        return (None, boundary);
    }
    (found, boundary)
}

/// Marks every cell of `region` (side `eps_grid`) some sample of which
/// re-enters the ball of radius `eps_grid` about the cell center at a time
/// in `[t_min, t_max]`. A cell is flagged when each of its re-entering
/// samples (each sample, for unmarked cells) met the margin band of ∂D
/// before returning.
pub fn recurrent_proxy(
    sys: &ImpulsiveSystem,
    region: &Region,
    eps_grid: f64,
    t_min: f64,
    t_max: f64,
    samples_per_cell: usize,
) -> Result<RecurrentProxy> {
    if !(eps_grid > 0.0) {
        return Err(Error::InvalidParameter("eps_grid must be positive".into()));
    }
    if !(t_min >= 1.0 && t_max >= t_min) {
        return Err(Error::InvalidParameter("need 1 ≤ T_min ≤ T_max".into()));
    }
    let n = samples_per_cell.max(1);
    let jobs = cell_specs(sys, region, eps_grid, n)?;
    let cells = jobs
        .par_iter()
        .map(|job| {
            let mut witness = None;
            let mut any_boundary = false;
            let mut clean_return = false;
            for x in &job.samples {
                let (ret, boundary) = sample_return(sys, x, &job.center, eps_grid, t_min, t_max);
                any_boundary |= boundary;
                if let Some(t) = ret {
                    if witness.is_none() {
                        witness = Some((*x, t));
                    }
                    if !boundary {
                        clean_return = true;
                        witness = Some((*x, t));
                        break;
                    }
                }
            }
            let marked = witness.is_some();
            ProxyCell {
                center: job.center,
                chart: job.chart,
                marked,
                flagged: if marked { !clean_return } else { any_boundary },
                witness,
            }
        })
        .collect();
    Ok(RecurrentProxy {
        region: region.clone(),
        cell_size: eps_grid,
        t_min,
        t_max,
        samples_per_cell: n,
        cells,
    })
}

/// Points of `orbits` sampled over one period, at most `dt` apart in time
/// and at most `max_gap` apart in space.
pub fn orbit_points(sys: &ImpulsiveSystem, orbits: &[PeriodicOrbit], dt: f64, max_gap: f64) -> Result<Vec<Point>> {
    let dt = dt.min(max_gap / sys.field.sup_norm.max(1e-9));
    let per: Vec<Vec<Point>> = orbits
        .par_iter()
        .map(|o| dense_orbit(sys, &o.representative, o.period, dt).map(|d| d.reduced))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Distance from each eligible cell center to the nearest point, in the
/// order of [`RecurrentProxy::eligible`]. Empty `points` give `+∞`.
pub fn cell_gaps(space: &AmbientSpace, proxy: &RecurrentProxy, points: &[Point]) -> Vec<f64> {
    let cells: Vec<&ProxyCell> = proxy.eligible().collect();
    if points.is_empty() {
        return vec![f64::INFINITY; cells.len()];
    }
    let reach = 2.0 * proxy.cell_size;
    let grid = PointGrid::new(space, points, reach);
    cells
        .par_iter()
        .map(|c| {
            let mut best = f64::INFINITY;
            grid.for_each_near(&c.center, reach, |_, d| best = best.min(d));
            if best.is_finite() {
                best
            } else {
                points.iter().map(|p| space.distance(p, &c.center)).fold(f64::INFINITY, f64::min)
            }
        })
        .collect()
}

/// One-sided density gap: the largest distance from a marked, unflagged
/// proxy cell center to the sampled periodic orbits. `0` for an empty proxy,
/// `+∞` when there are eligible cells but no orbits.
pub fn density_gap(sys: &ImpulsiveSystem, orbits: &[PeriodicOrbit], proxy: &RecurrentProxy, sampling_time: f64) -> Result<f64> {
    if proxy.eligible().next().is_none() {
        return Ok(0.0);
    }
    let points = orbit_points(sys, orbits, sampling_time, 0.5 * proxy.cell_size)?;
    Ok(cell_gaps(&sys.space, proxy, &points).into_iter().fold(0.0, f64::max))
}

/// Serializes `+∞` as `null`.
mod gap_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod gap_vec_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|g| g.is_finite().then_some(*g))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|g| g.unwrap_or(f64::INFINITY))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensifyStatus {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensifyFailure {
    pub iteration: usize,
    pub target: Point,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub system: String,
    pub mode: Mode,
    pub epsilon: f64,
    pub budget: usize,
    pub seed: u64,
    pub status: DensifyStatus,
    /// Closing scale ε′ used for every construction.
    pub closing_epsilon: f64,
    pub proxy_cells: usize,
    pub eligible_cells: usize,
    /// Orbits present before any perturbation.
    pub census_orbits: usize,
    /// Attempts made (successes and failures).
    pub iterations: usize,
    #[serde(with = "gap_serde")]
    pub initial_gap: f64,
    #[serde(with = "gap_serde")]
    pub final_gap: f64,
    /// Gap after the census and after each successful iteration.
    #[serde(with = "gap_vec_serde")]
    pub gap_trace: Vec<f64>,
    /// Sum of the measured C⁰ sizes of all perturbations.
    pub total_perturbation: f64,
    pub orbits: Vec<PeriodicOrbit>,
    pub records: Vec<PerturbationRecord>,
    pub failures: Vec<DensifyFailure>,
}

#[derive(Debug, Clone)]
pub struct DensifyOptions {
    pub mode: Mode,
    pub epsilon: f64,
    pub budget: usize,
    pub seed: u64,
    /// Re-entry window of the proxy.
    pub t_min: f64,
    pub t_max: f64,
    pub samples_per_cell: usize,
    /// Period bound of the initial orbit census.
    pub census_period: f64,
    /// Contraction strength of field-mode attractors.
    pub field_eta: f64,
    /// Near-return horizon of field closings.
    pub field_horizon: f64,
    pub sample_dt: f64,
}

impl DensifyOptions {
    pub fn new(mode: Mode, epsilon: f64, budget: usize, seed: u64) -> Self {
        DensifyOptions {
            mode,
            epsilon,
            budget,
            seed,
            t_min: 1.0,
            t_max: 400.0,
            samples_per_cell: 6,
            census_period: 20.0,
            field_eta: 0.1,
            field_horizon: 5000.0,
            sample_dt: 0.01,
        }
    }

    /// Closing scale: half the target gap, and at most `1/budget` so that a
    /// full budget of closing bumps (each of size below ε′/2 in the typical
    /// case, below ε′ always) stays C⁰-small in total.
    pub fn closing_epsilon(&self) -> f64 {
        (0.5 * self.epsilon).min(1.0 / self.budget.max(1) as f64)
    }
}

/// Densification on the landing patch: starting from the periodic orbits of
/// period at most `census_period`, repeatedly closes an orbit through the
/// worst-covered proxy cell and makes it attracting, keeping every earlier
/// orbit intact, until the density gap is at most ε or the budget is spent.
pub fn densify(sys: &ImpulsiveSystem, opts: &DensifyOptions) -> Result<(ImpulsiveSystem, DensityReport)> {
    let eps = opts.epsilon;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    sys.require_valid()?;
    let eps_grid = 0.5 * eps;
    let proxy = recurrent_proxy(sys, &Region::Patch, eps_grid, opts.t_min, opts.t_max, opts.samples_per_cell)?;
    let eligible: Vec<ProxyCell> = proxy.eligible().cloned().collect();
    let tol = sys.tolerances.periodic;
    let res = ((sys.d_hat.size() / eps).ceil() as usize + 1).max(2);
    let census: Vec<PeriodicOrbit> = periodic_orbits_up_to(sys, opts.census_period, res)
        .into_iter()
        .filter(|o| o.residual <= 10.0 * tol)
        .collect();
    let dt = opts.sample_dt;
    let max_gap = 0.5 * eps_grid;
    let mut protect = Protected::default();
    for o in &census {
        protect.add_orbit(sys, o, dt)?;
    }
    let mut points = orbit_points(sys, &census, dt, max_gap)?;
    let mut gaps = cell_gaps(&sys.space, &proxy, &points);
    let gap_of = |g: &[f64]| g.iter().copied().fold(0.0, f64::max);
    let mut gap = gap_of(&gaps);
    let initial_gap = gap;
    let mut report = DensityReport {
        system: sys.name.clone(),
        mode: opts.mode,
        epsilon: eps,
        budget: opts.budget,
        seed: opts.seed,
        status: DensifyStatus::BudgetExhausted,
        closing_epsilon: opts.closing_epsilon(),
        proxy_cells: proxy.cells.len(),
        eligible_cells: eligible.len(),
        census_orbits: census.len(),
        iterations: 0,
        initial_gap,
        final_gap: gap,
        gap_trace: vec![gap],
        total_perturbation: 0.0,
        orbits: census.clone(),
        records: Vec::new(),
        failures: Vec::new(),
    };
    let mut cur = sys.clone();
    let mut orbits = census;
    let mut skipped = vec![false; eligible.len()];
    let eps_close = opts.closing_epsilon();
    while gap > eps && report.iterations < opts.budget {
        let Some(cell) = (0..eligible.len())
            .filter(|&i| !skipped[i] && gaps[i] > eps)
            .max_by(|&a, &b| gaps[a].total_cmp(&gaps[b]).then(b.cmp(&a)))
        else {
            break;
        };
        let iteration = report.iterations;
        report.iterations += 1;
        skipped[cell] = true;
        let target = jitter_target(&cur, &eligible[cell], eps_close, opts.seed, iteration as u64);
        let fail = |stage: &str, e: &Error| DensifyFailure {
            iteration,
            target,
            stage: stage.into(),
            error: e.to_string(),
        };
        let attempt = match opts.mode {
            Mode::Impulse => closing_impulse_avoiding(&cur, &target, &ClosingOptions::new(eps_close, 2000), &protect)
                .map_err(|e| fail("closing", &e))
                .and_then(|c| {
                    attractify_impulse_avoiding(&c.system, &c.orbit, 0.5 * eps_close, &protect)
                        .map(|a| (c, a))
                        .map_err(|e| fail("attract", &e))
                }),
            Mode::Field => {
                let mut fo = FieldClosingOptions::new(eps_close);
                fo.horizon = opts.field_horizon;
                closing_field_avoiding(&cur, &target, &fo, &protect)
                    .map_err(|e| fail("closing", &e))
                    .and_then(|c| {
                        attractify_with(&c.system, &c.orbit, &AttractOptions::new(opts.field_eta), &protect)
                            .map(|a| (c, a))
                            .map_err(|e| fail("attract", &e))
                    })
            }
        };
        let (closing, attract) = match attempt {
            Ok(v) => v,
            Err(f) => {
                report.failures.push(f);
                continue;
            }
        };
        let next = attract.system;
        let mut kept = Vec::with_capacity(orbits.len() + 1);
        let mut lost = false;
        for o in &orbits {
            match refine_orbit(&next, o, tol)? {
                OrbitSearch::Found(r) if (r.chart - o.chart).norm() <= 1e3 * tol.max(1e-12) => {
                    let mut r = r;
                    r.classification = o.classification;
                    r.index = o.index;
                    kept.push(r);
                }
                _ => {
                    lost = true;
                    break;
                }
            }
        }
        if lost {
            report
                .failures
                .push(fail("verify", &Error::VerificationFailed { residual: f64::INFINITY }));
            continue;
        }
        let mut new_points = points.clone();
        new_points.extend(orbit_points(&next, std::slice::from_ref(&attract.orbit), dt, max_gap)?);
        let new_gaps = cell_gaps(&next.space, &proxy, &new_points);
        let new_gap = gap_of(&new_gaps);
        if new_gap > gap {
            report.failures.push(fail("gap", &Error::InvalidParameter(format!("gap rose to {new_gap}"))));
            continue;
        }
        protect.add_orbit(&next, &attract.orbit, dt)?;
        kept.push(attract.orbit);
        orbits = kept;
        cur = next;
        points = new_points;
        gaps = new_gaps;
        gap = new_gap;
        for mut r in [closing.record, attract.record] {
            r.seed = Some(opts.seed);
            report.total_perturbation += r.c0_size;
            report.records.push(r);
        }
        report.gap_trace.push(gap);
    }
    report.final_gap = gap;
    report.orbits = orbits;
    if gap <= eps {
        report.status = DensifyStatus::Converged;
    }
    Ok((cur, report))
}

/// Closing target: the cell center moved by a seeded offset of at most a
/// quarter of ε′ inside D̂.
fn jitter_target(sys: &ImpulsiveSystem, cell: &ProxyCell, eps: f64, seed: u64, stream: u64) -> Point {
    let Some(chart) = cell.chart else {
        return cell.center;
    };
    let mut rng = crate::seed::rng(seed, stream);
    let th = std::f64::consts::TAU * rng.gen::<f64>();
    let r = 0.25 * eps * rng.gen::<f64>().sqrt();
    let mut u = chart + ChartPoint::new(th.cos(), th.sin()) * r;
    if sys.d_hat.dim() == 1 {
        u.y = 0.0;
    }
    if sys.d_hat.is_interior(&u) {
        sys.d_hat_point(&u)
    } else {
        cell.center
    }
}

/// A `(δ, T)`-pseudo-orbit `[(x_i, t_i)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOrbit {
    pub chain: Vec<(Point, f64)>,
    pub delta: f64,
    pub t_bound: f64,
    /// `σ(n) = t₀ + … + t_{n−1}`, with `σ(0) = 0`; one more entry than links.
    pub sigma: Vec<f64>,
    /// `dist(γ_{x_i}(t_i), x_{i+1})` for consecutive links.
    pub jumps: Vec<f64>,
}

impl PseudoOrbit {
    /// Checks `1 ≤ t_i ≤ T` and that every link ends within δ of the next
    /// chain point.
    pub fn new(sys: &ImpulsiveSystem, chain: Vec<(Point, f64)>, delta: f64, t_bound: f64) -> Result<Self> {
        if chain.is_empty() {
            return Err(Error::EmptySet);
        }
        for (_, t) in &chain {
            if !(*t >= 1.0 && *t <= t_bound) {
                return Err(Error::InvalidParameter(format!("dwell time {t} outside [1, {t_bound}]")));
            }
        }
        let mut jumps = Vec::with_capacity(chain.len() - 1);
        for w in chain.windows(2) {
            let end = trajectory_points(sys, &w[0].0, &[w[0].1])?[0];
            let d = sys.space.distance(&end, &sys.space.reduce(&w[1].0));
            if !(d < delta) {
                return Err(Error::InvalidParameter(format!(
                    "link ends {d:.3e} from the next chain point (δ = {delta})"
                )));
            }
            jumps.push(d);
        }
        let mut sigma = vec![0.0];
        for (_, t) in &chain {
            sigma.push(sigma.last().unwrap() + t);
        }
        Ok(PseudoOrbit {
            chain,
            delta,
            t_bound,
            sigma,
            jumps,
        })
    }

    pub fn span(&self) -> f64 {
        *self.sigma.last().unwrap()
    }

    /// Link active at `t`: `σ(i) ≤ t < σ(i+1)`, the last link also owning
    /// the endpoint.
    pub fn link_at(&self, t: f64) -> usize {
        let n = self.chain.len();
        self.sigma[1..n].partition_point(|&s| s <= t)
    }
}

/// Values of `γ_{x0}` at the sorted times `times` (reduced). At an impulsive
/// time the value is the post-impulse point.
pub fn trajectory_points(sys: &ImpulsiveSystem, x0: &Point, times: &[f64]) -> Result<Vec<Point>> {
    let Some(&last) = times.last() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(times.len());
    let mut idx = 0;
    while idx < times.len() && times[idx] <= 0.0 {
        out.push(sys.space.reduce(x0));
        idx += 1;
    }
    if idx == times.len() {
        return Ok(out);
    }
    walk(sys, x0, last, |ws| {
        let end = ws.end_time();
        while idx < times.len() && (times[idx] < end || (!ws.impulse && times[idx] <= end)) {
            out.push(sys.space.reduce(&ws.at(times[idx])));
            idx += 1;
        }
        if idx == times.len() {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    if out.len() < times.len() {
        return Err(Error::TimeOutOfRange {
            t: times[out.len()],
            lo: 0.0,
            hi: last,
        });
    }
    Ok(out)
}

/// `x₀ ⋆ t = γ_{x_i}(t − σ(i))` for `σ(i) ≤ t < σ(i+1)`.
pub fn pseudo_orbit_eval(p: &PseudoOrbit, sys: &ImpulsiveSystem, t: f64) -> Result<Point> {
    Ok(pseudo_orbit_points(p, sys, &[t])?[0])
}

/// [`pseudo_orbit_eval`] at sorted times.
pub fn pseudo_orbit_points(p: &PseudoOrbit, sys: &ImpulsiveSystem, times: &[f64]) -> Result<Vec<Point>> {
    let span = p.span();
    if let Some(&t) = times.iter().find(|&&t| !(0.0..=span).contains(&t)) {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: span });
    }
    let mut out = Vec::with_capacity(times.len());
    let mut start = 0;
    while start < times.len() {
        let i = p.link_at(times[start]);
        let end = start + times[start..].iter().take_while(|&&t| p.link_at(t) == i).count();
        let local: Vec<f64> = times[start..end].iter().map(|t| t - p.sigma[i]).collect();
        out.extend(trajectory_points(sys, &p.chain[i].0, &local)?);
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    ShadowedWitness,
    NotShadowedAtResolution,
}

/// Search space of the falsifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResolution {
    pub initial_points: usize,
    pub local_points: usize,
    pub global_points: usize,
    pub breakpoints: usize,
    pub levels_per_breakpoint: usize,
    pub time_grid: usize,
    pub sample_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowVerdict {
    pub verdict: Verdict,
    pub epsilon: f64,
    /// Sup over the time grid of `dist(γ_x̃(ζ(t)), x₀ ⋆ t)` for the best
    /// candidate, re-evaluated from its own trajectory.
    pub best_distance: f64,
    pub best_initial: Point,
    /// Breakpoints `(t_j, ζ(t_j))` of the best reparametrization.
    pub best_breakpoints: Vec<(f64, f64)>,
    pub resolution: SearchResolution,
    /// Candidates discarded by the lower bound without a full search.
    pub pruned: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FalsifierOptions {
    pub time_grid: usize,
    pub levels: usize,
    pub chunk: usize,
}

impl Default for FalsifierOptions {
    fn default() -> Self {
        FalsifierOptions {
            time_grid: 400,
            levels: 41,
            chunk: 256,
        }
    }
}

/// Searches initial points (half in the ε-ball about `x₀`, starting with
/// `x₀` itself, half spread over the space) and piecewise-linear
/// reparametrizations with `rep_slack_points` segments and slopes in
/// `[1 − ε, 1 + ε]` for a trajectory ε-close to the pseudo-orbit.
pub fn shadowing_falsifier(
    sys: &ImpulsiveSystem,
    p: &PseudoOrbit,
    eps: f64,
    init_grid: usize,
    rep_slack_points: usize,
) -> Result<ShadowVerdict> {
    shadowing_falsifier_with(sys, p, eps, init_grid, rep_slack_points, &FalsifierOptions::default())
}

struct Search<'a> {
    eps: f64,
    grid: Vec<f64>,
    target: Vec<Point>,
    step: f64,
    breaks: Vec<f64>,
    levels: Vec<Vec<f64>>,
    space: &'a AmbientSpace,
    slack: f64,
}

impl Search<'_> {
    fn at(&self, samples: &[Point], s: f64) -> Point {
        let x = (s / self.step).clamp(0.0, (samples.len() - 1) as f64);
        let k = (x.floor() as usize).min(samples.len() - 2);
        let f = x - k as f64;
        let a = samples[k];
        let d = self.space.displacement(&a, &samples[k + 1]);
        self.space.reduce(&(a + d * f))
    }

    /// Valid lower bound on the sup distance over every admissible ζ.
    fn lower_bound(&self, samples: &[Point], stop: f64) -> f64 {
        let mut lb: f64 = 0.0;
        for (t, q) in self.grid.iter().zip(&self.target) {
            let lo = ((1.0 - self.eps) * t / self.step).floor().max(0.0) as usize;
            let hi = (((1.0 + self.eps) * t / self.step).ceil() as usize).min(samples.len() - 1);
            let m = samples[lo..=hi]
                .iter()
                .map(|x| self.space.distance(x, q))
                .fold(f64::INFINITY, f64::min);
            lb = lb.max(m - self.slack);
            if lb >= stop {
                break;
            }
        }
        lb
    }

    /// Minimax over breakpoint levels; returns the value and the levels.
    fn minimax(&self, samples: &[Point], stop: f64) -> Option<(f64, Vec<f64>)> {
        let k = self.breaks.len() - 1;
        let mut best: Vec<Vec<(f64, usize)>> = vec![vec![(0.0, 0)]];
        for j in 0..k {
            let (t0, t1) = (self.breaks[j], self.breaks[j + 1]);
            let dt = t1 - t0;
            let ms: Vec<usize> = (0..self.grid.len())
                .filter(|&m| self.grid[m] >= t0 - 1e-12 && self.grid[m] <= t1 + 1e-12)
                .collect();
            let mut next = vec![(f64::INFINITY, usize::MAX); self.levels[j + 1].len()];
            for (a, &(va, _)) in best[j].iter().enumerate() {
                if va >= stop {
                    continue;
                }
                let za = self.levels[j][a];
                for (b, &zb) in self.levels[j + 1].iter().enumerate() {
                    let slope = (zb - za) / dt;
                    if (slope - 1.0).abs() > self.eps + 1e-12 {
                        continue;
                    }
                    let cap = next[b].0.min(stop);
                    let mut v = va;
                    for &m in &ms {
                        let z = za + slope * (self.grid[m] - t0);
                        v = v.max(self.space.distance(&self.at(samples, z), &self.target[m]));
                        if v >= cap {
                            break;
                        }
                    }
                    if v < next[b].0 {
                        next[b] = (v, a);
                    }
                }
            }
            best.push(next);
        }
        let (b, &(v, _)) = best[k].iter().enumerate().min_by(|x, y| x.1 .0.total_cmp(&y.1 .0))?;
        if !v.is_finite() {
            return None;
        }
        let mut lv = vec![0.0; k + 1];
        let mut cur = b;
        for j in (1..=k).rev() {
            lv[j] = self.levels[j][cur];
            cur = best[j][cur].1;
        }
        Some((v, lv))
    }
}

pub fn shadowing_falsifier_with(
    sys: &ImpulsiveSystem,
    p: &PseudoOrbit,
    eps: f64,
    init_grid: usize,
    rep_slack_points: usize,
    fo: &FalsifierOptions,
) -> Result<ShadowVerdict> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let space = &sys.space;
    let span = p.span();
    let m = fo.time_grid.max(2);
    let grid: Vec<f64> = (0..m).map(|i| span * i as f64 / (m - 1) as f64).collect();
    let target = pseudo_orbit_points(p, sys, &grid)?;
    let step = span / (2 * (m - 1)) as f64;
    let horizon = (1.0 + eps) * span;
    let n_samples = (horizon / step).ceil() as usize + 2;
    let sample_times: Vec<f64> = (0..n_samples).map(|i| i as f64 * step).collect();
    let k = rep_slack_points.max(1);
    let breaks: Vec<f64> = (0..=k).map(|j| span * j as f64 / k as f64).collect();
    let nl = fo.levels.max(1) | 1;
    let levels: Vec<Vec<f64>> = breaks
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            if j == 0 {
                vec![0.0]
            } else {
                (0..nl)
                    .map(|l| {
                        let u = if nl == 1 { 0.0 } else { 2.0 * l as f64 / (nl - 1) as f64 - 1.0 };
                        if l == nl / 2 {
                            t
                        } else {
                            t * (1.0 + eps * u)
                        }
                    })
                    .collect()
            }
        })
        .collect();
    let search = Search {
        eps,
        grid,
        target,
        step,
        breaks,
        levels,
        space,
        slack: 0.5 * step * sys.field.sup_norm,
    };

    let x0 = space.reduce(&p.chain[0].0);
    let n_local = init_grid.div_ceil(2).max(1);
    let n_global = init_grid.saturating_sub(n_local);
    let mut candidates = Vec::with_capacity(n_local + n_global);
    candidates.push(x0);
    let mut i = 1;
    while candidates.len() < n_local {
        let u = halton3(i) * 2.0 - Point::repeat(1.0);
        i += 1;
        if u.norm() > 1.0 {
            continue;
        }
        candidates.push(space.reduce(&(x0 + u * eps)));
    }
    let mut global = space.sample_points(n_global);
    global.truncate(n_global);
    candidates.extend(global);

    let mut best: (f64, usize, Vec<f64>) = (f64::INFINITY, usize::MAX, Vec::new());
    let mut pruned = 0;
    for (c, chunk) in candidates.chunks(fo.chunk.max(1)).enumerate() {
        let stop = best.0;
        let results: Vec<(usize, Option<(f64, Vec<f64>)>)> = chunk
            .par_iter()
            .enumerate()
            .map(|(o, x)| {
                let idx = c * fo.chunk.max(1) + o;
                let Ok(samples) = trajectory_points(sys, x, &sample_times) else {
                    return (idx, None);
                };
                if search.lower_bound(&samples, stop) >= stop {
                    return (idx, None);
                }
                (idx, search.minimax(&samples, stop))
            })
            .collect();
        for (idx, r) in results {
            match r {
                Some((v, lv)) if v < best.0 || (v == best.0 && idx < best.1) => best = (v, idx, lv),
                Some(_) => {}
                None => pruned += 1,
            }
        }
    }
    let (_, idx, lv) = best;
    if idx == usize::MAX {
        return Err(Error::InvalidParameter("no candidate trajectory could be evaluated".into()));
    }
    let initial = candidates[idx];
    let bps: Vec<(f64, f64)> = search.breaks.iter().copied().zip(lv).collect();
    let best_distance = replay(sys, &search, &initial, &bps)?;
    Ok(ShadowVerdict {
        verdict: if best_distance <= eps {
            Verdict::ShadowedWitness
        } else {
            Verdict::NotShadowedAtResolution
        },
        epsilon: eps,
        best_distance,
        best_initial: initial,
        best_breakpoints: bps,
        resolution: SearchResolution {
            initial_points: candidates.len(),
            local_points: n_local,
            global_points: candidates.len() - n_local,
            breakpoints: k,
            levels_per_breakpoint: nl,
            time_grid: m,
            sample_step: step,
        },
        pruned,
    })
}

/// Piecewise-linear `ζ` through `breakpoints` evaluated at `t`.
pub fn reparametrize(breakpoints: &[(f64, f64)], t: f64) -> f64 {
    let j = breakpoints.partition_point(|b| b.0 <= t).clamp(1, breakpoints.len() - 1);
    let (t0, z0) = breakpoints[j - 1];
    let (t1, z1) = breakpoints[j];
    z0 + (z1 - z0) * (t - t0) / (t1 - t0)
}

fn replay(sys: &ImpulsiveSystem, search: &Search, x: &Point, bps: &[(f64, f64)]) -> Result<f64> {
    let zs: Vec<f64> = search.grid.iter().map(|&t| reparametrize(bps, t)).collect();
    let pts = trajectory_points(sys, x, &zs)?;
    Ok(pts
        .iter()
        .zip(&search.target)
        .map(|(a, b)| sys.space.distance(a, b))
        .fold(0.0, f64::max))
}

/// Sup distance of `γ_x ∘ ζ` from the pseudo-orbit over a uniform grid of
/// `n` times, with `ζ` given by its breakpoints.
pub fn shadow_distance(sys: &ImpulsiveSystem, p: &PseudoOrbit, x: &Point, breakpoints: &[(f64, f64)], n: usize) -> Result<f64> {
    let span = p.span();
    let n = n.max(2);
    let grid: Vec<f64> = (0..n).map(|i| span * i as f64 / (n - 1) as f64).collect();
    let target = pseudo_orbit_points(p, sys, &grid)?;
    let zs: Vec<f64> = grid.iter().map(|&t| reparametrize(breakpoints, t)).collect();
    let pts = trajectory_points(sys, x, &zs)?;
    Ok(pts
        .iter()
        .zip(&target)
        .map(|(a, b)| sys.space.distance(a, b))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{builtin_system, s3_paper_chain, s3_true_chain};
    use crate::field::{BaseField, VectorField};
    use crate::poincare::find_periodic_orbit;
    use proptest::prelude::*;

    fn annulus(r_inner: f64, r_outer: f64) -> Region {
        Region::Annulus {
            center: Point::zeros(),
            r_inner,
            r_outer,
            z_lo: -0.2,
            z_hi: 0.2,
        }
    }

    #[test]
    fn plain_circles_outside_d_are_all_recurrent() {
        let sys = builtin_system("S1a").unwrap();
        let proxy = recurrent_proxy(&sys, &annulus(2.6, 2.9), 0.1, 1.0, 20.0, 1).unwrap();
        assert!(!proxy.cells.is_empty());
        assert!(proxy.cells.iter().all(|c| c.marked && !c.flagged));
        for c in &proxy.cells {
            let r = c.center.x.hypot(c.center.y);
            assert!((2.6..=2.9).contains(&r));
        }
    }

    #[test]
    fn a_constant_field_has_no_recurrence() {
        let s1a = builtin_system("S1a").unwrap();
        let field = VectorField::new(
            BaseField::TorusConstant {
                velocity: Point::new(0.0, 1.0, 0.0),
            },
            vec![],
            &s1a.space,
        );
        let sys = s1a.with_field(field);
        let region = Region::Box {
            lo: Point::new(-2.0, -2.0, -0.5),
            hi: Point::new(-1.0, 0.0, 0.5),
        };
        let proxy = recurrent_proxy(&sys, &region, 0.25, 1.0, 10.0, 2).unwrap();
        assert_eq!(proxy.cells.len(), 4 * 8 * 4);
        assert_eq!(proxy.marked().count(), 0);
        let mut csv = Vec::new();
        proxy.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x,y,z,marked,flagged\n"));
        assert_eq!(text.lines().count(), proxy.cells.len() + 1);
    }

    #[test]
    fn proxy_rejects_bad_parameters() {
        let sys = builtin_system("S1a").unwrap();
        assert!(recurrent_proxy(&sys, &Region::Patch, 0.1, 0.5, 10.0, 1).is_err());
        assert!(recurrent_proxy(&sys, &Region::Patch, 0.0, 1.0, 10.0, 1).is_err());
        assert!(recurrent_proxy(&sys, &annulus(2.0, 3.5), 0.1, 1.0, 10.0, 1).is_err());
    }

    #[test]
    fn gap_sentinels() {
        let sys = builtin_system("S1a").unwrap();
        let empty = RecurrentProxy {
            region: Region::Patch,
            cell_size: 0.1,
            t_min: 1.0,
            t_max: 2.0,
            samples_per_cell: 1,
            cells: vec![],
        };
        assert_eq!(density_gap(&sys, &[], &empty, 0.01).unwrap(), 0.0);
        let proxy = recurrent_proxy(&sys, &Region::Patch, 0.25, 1.0, 10.0, 1).unwrap();
        assert!(proxy.eligible().count() > 0);
        assert_eq!(density_gap(&sys, &[], &proxy, 0.01).unwrap(), f64::INFINITY);
        let orbit = find_periodic_orbit(&sys, &Point::new(0.0, 2.0, 0.0), 1, 1e-10).unwrap().found().unwrap();
        let gap = density_gap(&sys, &[orbit], &proxy, 0.01).unwrap();
        let oracle = proxy
            .eligible()
            .map(|c| (c.center - Point::new(0.0, 2.0, 0.0)).norm())
            .fold(0.0, f64::max);
        assert!((gap - oracle).abs() < 0.01, "{gap} vs {oracle}");
    }

    #[test]
    fn s1a_needs_no_densification() {
        let sys = builtin_system("S1a").unwrap();
        for mode in [Mode::Impulse, Mode::Field] {
            let (out, r) = densify(&sys, &DensifyOptions::new(mode, 0.1, 5, 1)).unwrap();
            assert_eq!(r.status, DensifyStatus::Converged);
            assert_eq!(r.iterations, 0);
            assert!(r.final_gap <= 0.1);
            assert_eq!(out, sys);
        }
    }

    #[test]
    fn zero_budget_on_the_torus() {
        let sys = builtin_system("S2").unwrap();
        let (out, r) = densify(&sys, &DensifyOptions::new(Mode::Impulse, 0.1, 0, 7)).unwrap();
        assert_eq!(r.status, DensifyStatus::BudgetExhausted);
        assert_eq!(r.final_gap, f64::INFINITY);
        assert_eq!(out, sys);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["final_gap"].is_null());
        let back: DensityReport = serde_json::from_value(json).unwrap();
        assert_eq!(back.final_gap, f64::INFINITY);
    }

    #[test]
    fn pseudo_orbit_evaluation() {
        let sys = builtin_system("S3").unwrap();
        let chain = s3_paper_chain(0.05);
        let p = PseudoOrbit::new(&sys, chain.clone(), 0.05, 2.0).unwrap();
        assert!(p.jumps[0] < 0.05 && p.jumps[0] > 0.005);
        assert_eq!(p.sigma, vec![0.0, chain[0].1, chain[0].1 + 1.0]);
        let at = pseudo_orbit_eval(&p, &sys, p.sigma[1]).unwrap();
        assert!((at - chain[1].0).norm() < 1e-12);
        let before = pseudo_orbit_eval(&p, &sys, p.sigma[1] - 1e-9).unwrap();
        assert!((before - at).norm() > 0.005);
        assert!(pseudo_orbit_eval(&p, &sys, 3.0).is_err());

        let single = PseudoOrbit::new(&sys, vec![(chain[0].0, 1.2)], 0.05, 2.0).unwrap();
        let q = pseudo_orbit_eval(&single, &sys, 0.7).unwrap();
        let direct = trajectory_points(&sys, &chain[0].0, &[0.7]).unwrap()[0];
        assert_eq!(q, direct);

        assert!(PseudoOrbit::new(&sys, vec![(chain[0].0, 0.5)], 0.05, 2.0).is_err());
        assert!(PseudoOrbit::new(&sys, chain, 0.001, 2.0).is_err());
    }

    fn in_rep(bps: &[(f64, f64)], eps: f64) -> bool {
        bps[0] == (0.0, 0.0)
            && bps.windows(2).all(|w| {
                let s = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                s >= 1.0 - eps - 1e-12 && s <= 1.0 + eps + 1e-12
            })
    }

    #[test]
    fn true_chain_is_its_own_witness() {
        let sys = builtin_system("S3").unwrap();
        let p = PseudoOrbit::new(&sys, s3_true_chain(&sys).unwrap(), 0.05, 2.0).unwrap();
        assert!(p.jumps[0] < 1e-12);
        let v = shadowing_falsifier(&sys, &p, 0.1, 200, 4).unwrap();
        assert_eq!(v.verdict, Verdict::ShadowedWitness);
        assert!(v.best_distance <= 1e-6);
        assert!(in_rep(&v.best_breakpoints, 0.1));
        let replay = shadow_distance(&sys, &p, &v.best_initial, &v.best_breakpoints, v.resolution.time_grid).unwrap();
        assert!((replay - v.best_distance).abs() < 1e-8);
    }

    #[test]
    fn huge_epsilon_is_trivially_shadowed() {
        let sys = builtin_system("S3").unwrap();
        let p = PseudoOrbit::new(&sys, s3_paper_chain(0.05), 0.05, 2.0).unwrap();
        let v = shadowing_falsifier(&sys, &p, 2.5, 50, 2).unwrap();
        assert_eq!(v.verdict, Verdict::ShadowedWitness);
        assert!(v.best_distance <= 2.5);
    }

    #[test]
    fn coarse_search_on_the_paper_chain_fails() {
        let sys = builtin_system("S3").unwrap();
        let p = PseudoOrbit::new(&sys, s3_paper_chain(0.05), 0.05, 2.0).unwrap();
        let v = shadowing_falsifier(&sys, &p, 0.1, 400, 4).unwrap();
        assert_eq!(v.verdict, Verdict::NotShadowedAtResolution);
        assert!(v.best_distance > 0.1);
        assert!(in_rep(&v.best_breakpoints, 0.1));
    }

    proptest! {
        #[test]
        fn piecewise_linear_maps_stay_in_rep(
            eps in 0.01f64..0.5,
            raw in prop::collection::vec((0.1f64..1.0, -1.0f64..1.0), 1..8),
            s in 0.0f64..1.0,
            t in 0.0f64..1.0,
        ) {
            let mut bps = vec![(0.0, 0.0)];
            for (dt, u) in &raw {
                let (t0, z0) = *bps.last().unwrap();
                bps.push((t0 + dt, z0 + dt * (1.0 + eps * u)));
            }
            prop_assert!(in_rep(&bps, eps));
            prop_assert_eq!(reparametrize(&bps, 0.0), 0.0);
            let span = bps.last().unwrap().0;
            let (a, b) = (s.min(t) * span, s.max(t) * span);
            prop_assume!(b - a > 1e-6);
            let q = (reparametrize(&bps, b) - reparametrize(&bps, a)) / (b - a);
            prop_assert!(q >= 1.0 - eps - 1e-9 && q <= 1.0 + eps + 1e-9);
        }
    }
}
