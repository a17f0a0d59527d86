//! Fixed-point index of planar maps as the winding number of `f(x) − x`
//! along the boundary of a ball.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::poincare::{poincare_iterate, PeriodicOrbit};
use crate::system::ImpulsiveSystem;
use crate::{ChartPoint, Error, Result};

/// A continuous map of a planar chart.
pub trait ChartMap: Sync {
    fn eval(&self, x: &ChartPoint) -> Result<ChartPoint>;
}

/// Adapter for closures.
pub struct FnMap<F>(pub F);

impl<F: Fn(&ChartPoint) -> ChartPoint + Sync> ChartMap for FnMap<F> {
    fn eval(&self, x: &ChartPoint) -> Result<ChartPoint> {
        Ok((self.0)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexCase {
    Disjoint,
    Degree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexResult {
    pub index: i32,
    /// `min ‖f(x) − x‖` over the evaluated boundary points.
    pub margin: f64,
    pub case: IndexCase,
    pub samples: usize,
    /// Accumulated angle divided by 2π, before rounding.
    pub winding: f64,
}

const MAX_SAMPLES: usize = 200_000;

/// Winding number of `f(p(s)) − p(s)` for a closed path `p` on `s ∈ [0, 1)`,
/// refined until every angle increment is below π/2. Returns
/// `(turns, margin, samples, argmin)`.
fn winding<M: ChartMap + ?Sized>(
    f: &M,
    path: impl Fn(f64) -> ChartPoint + Sync,
    n0: usize,
) -> Result<(f64, f64, usize, ChartPoint)> {
    let n0 = n0.max(8);
    let disp = |s: f64| -> Result<ChartPoint> {
        let x = path(s);
        Ok(f.eval(&x)? - x)
    };
    let mut pts: Vec<(f64, ChartPoint)> = (0..n0)
        .into_par_iter()
        .map(|i| {
            let s = i as f64 / n0 as f64;
            disp(s).map(|d| (s, d))
        })
        .collect::<Result<_>>()?;
    loop {
        let n = pts.len();
        let mut split = Vec::new();
        for i in 0..n {
            let (s0, d0) = pts[i];
            let (s1, d1) = if i + 1 < n { pts[i + 1] } else { (1.0, pts[0].1) };
            let inc = angle_increment(&d0, &d1);
            if inc.abs() >= std::f64::consts::FRAC_PI_2 {
                if s1 - s0 < 1e-13 {
                    return Err(Error::AngleJump);
                }
                split.push(0.5 * (s0 + s1));
            }
        }
        if split.is_empty() {
            break;
        }
        if n + split.len() > MAX_SAMPLES {
            return Err(Error::AngleJump);
        }
        let extra: Vec<(f64, ChartPoint)> = split
            .into_par_iter()
            .map(|s| disp(s).map(|d| (s, d)))
            .collect::<Result<_>>()?;
        pts.extend(extra);
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let n = pts.len();
    let mut total = 0.0;
    for i in 0..n {
        total += angle_increment(&pts[i].1, &pts[(i + 1) % n].1);
    }
    let (imin, _) = pts
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.1.norm()))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let margin = pts[imin].1.norm();
    Ok((total / std::f64::consts::TAU, margin, n, path(pts[imin].0)))
}

fn angle_increment(a: &ChartPoint, b: &ChartPoint) -> f64 {
    let cross = a.x * b.y - a.y * b.x;
    let dot = a.dot(b);
    cross.atan2(dot)
}

fn circle(center: ChartPoint, radius: f64) -> impl Fn(f64) -> ChartPoint + Sync {
    move |s: f64| {
        let th = std::f64::consts::TAU * s;
        center + ChartPoint::new(th.cos(), th.sin()) * radius
    }
}

/// Counterclockwise perimeter of the axis-aligned square with half-side `h`.
fn square(center: ChartPoint, h: f64) -> impl Fn(f64) -> ChartPoint + Sync {
    move |s: f64| {
        let q = (s * 4.0).rem_euclid(4.0);
        let side = q.floor();
        let u = q - side;
        let (x, y) = match side as i32 {
            0 => (-1.0 + 2.0 * u, -1.0),
            1 => (1.0, -1.0 + 2.0 * u),
            2 => (1.0 - 2.0 * u, 1.0),
            _ => (-1.0, 1.0 - 2.0 * u),
        };
        center + ChartPoint::new(x, y) * h
    }
}

fn finish(turns: f64, margin: f64, samples: usize, scale: f64) -> Result<IndexResult> {
    if margin <= 1e-7 * scale {
        return Err(Error::FixedPointOnBoundary { margin });
    }
    let index = turns.round();
    if (turns - index).abs() > 1e-6 {
        return Err(Error::AngleJump);
    }
    Ok(IndexResult {
        index: index as i32,
        margin,
        case: IndexCase::Degree,
        samples,
        winding: turns,
    })
}

/// `ι_f(B)` for the ball `B = B(center, radius)`.
pub fn fixed_point_index<M: ChartMap + ?Sized>(f: &M, center: &ChartPoint, radius: f64, n_boundary: usize) -> Result<IndexResult> {
    if radius <= 0.0 {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    let (turns, margin, samples, _) = winding(f, circle(*center, radius), n_boundary)?;
    let mut res = finish(turns, margin, samples, radius)?;
    if res.index == 0 && images_miss_ball(f, center, radius, n_boundary)? {
        res.case = IndexCase::Disjoint;
    }
    Ok(res)
}

/// Sampled test of `f(B̄) ∩ B̄ = ∅`.
fn images_miss_ball<M: ChartMap + ?Sized>(f: &M, center: &ChartPoint, radius: f64, n: usize) -> Result<bool> {
    let rings = (n / 8).max(4);
    let per = n.max(8);
    let mut pts = vec![*center];
    for i in 1..=rings {
        let r = radius * i as f64 / rings as f64;
        for j in 0..per {
            let th = std::f64::consts::TAU * j as f64 / per as f64;
            pts.push(center + ChartPoint::new(th.cos(), th.sin()) * r);
        }
    }
    let min = pts
        .par_iter()
        .map(|x| f.eval(x).map(|y| (y - center).norm() - radius))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(min > 0.0)
}

/// Boundary margin `m`: every `g` with `sup_{∂B} ‖g − f‖ < m` has the same index.
pub fn index_stability_margin<M: ChartMap + ?Sized>(f: &M, center: &ChartPoint, radius: f64, n_boundary: usize) -> Result<f64> {
    Ok(fixed_point_index(f, center, radius, n_boundary)?.margin)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Located {
    Found { point: ChartPoint, residual: f64 },
    NotFound { best: ChartPoint, residual: f64 },
}

/// Quadtree search for a fixed point inside a ball of nonzero index: keeps
/// sub-squares of nonzero boundary index until `‖f(p) − p‖ ≤ tol`.
pub fn locate_fixed_point<M: ChartMap + ?Sized>(
    f: &M,
    center: &ChartPoint,
    radius: f64,
    depth: usize,
    tol: f64,
) -> Result<Located> {
    let res = |p: &ChartPoint| -> Result<f64> { Ok((f.eval(p)? - p).norm()) };
    let mut best = (*center, res(center)?);
    // Ok(Some(i)): index of the square; Ok(None): a fixed point sits on or
    // near its boundary (the boundary minimizer is offered as a candidate).
    let square_index = |c: &ChartPoint, h: f64, best: &mut (ChartPoint, f64)| -> Result<Option<i32>> {
        match winding(f, square(*c, h), 32) {
            Ok((turns, margin, _, argmin)) => {
                if margin <= 1e-7 * h || margin <= tol {
                    let r = res(&argmin)?;
                    if r < best.1 {
                        *best = (argmin, r);
                    }
                    return Ok(None);
                }
                let idx = turns.round();
                if (turns - idx).abs() > 1e-6 {
                    return Ok(None);
                }
                Ok(Some(idx as i32))
            }
            Err(Error::AngleJump) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut cur = None;
    for h in [radius, radius / std::f64::consts::SQRT_2] {
        if let Some(i) = square_index(center, h, &mut best)? {
            if i != 0 {
                cur = Some((*center, h));
                break;
            }
        }
    }
    let Some((mut c, mut h)) = cur else {
        return Ok(if best.1 <= tol {
            Located::Found {
                point: best.0,
                residual: best.1,
            }
        } else {
            Located::NotFound {
                best: best.0,
                residual: best.1,
            }
        });
    };
    'descend: for _ in 0..depth {
        let r = res(&c)?;
        if r < best.1 {
            best = (c, r);
        }
        if best.1 <= tol {
            break;
        }
        // Plain quadrants first; if a fixed point sits on a shared edge,
        // retry with jittered, slightly enlarged quadrants.
        for attempt in 0..3 {
            let hh = 0.5 * h;
            let jitter = ChartPoint::new(0.0731, 0.1173) * (hh * attempt as f64);
            let half = if attempt == 0 { hh } else { 1.25 * hh };
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                let ch = c + ChartPoint::new(sx * hh, sy * hh) + jitter;
                if let Some(i) = square_index(&ch, half, &mut best)? {
                    if i != 0 {
                        c = ch;
                        h = half;
                        continue 'descend;
                    }
                }
                if best.1 <= tol {
                    break 'descend;
                }
            }
        }
        break;
    }
    if best.1 <= tol {
        return Ok(Located::Found {
            point: best.0,
            residual: best.1,
        });
    }
    Ok(Located::NotFound {
        best: best.0,
        residual: best.1,
    })
}

/// `P^k` of a system as a chart map on D̂.
pub struct ReturnChartMap<'a> {
    pub sys: &'a ImpulsiveSystem,
    pub k: usize,
}

impl ChartMap for ReturnChartMap<'_> {
    fn eval(&self, x: &ChartPoint) -> Result<ChartPoint> {
        match poincare_iterate(self.sys, x, self.k)? {
            Some((pts, _)) => Ok(pts[self.k - 1]),
            None => Err(Error::MapUndefined {
                point: self.sys.d_hat.embed(x),
                reason: "no interior return".into(),
            }),
        }
    }
}

/// Index of the `k`-fold Poincaré map around the orbit's representative.
pub fn index_of_orbit(sys: &ImpulsiveSystem, orbit: &PeriodicOrbit, radius: f64) -> Result<i32> {
    let dim = sys.space.dimension();
    if dim != 3 {
        return Err(Error::DimensionUnsupported(dim));
    }
    let map = crate::poincare::OrbitMap::new(sys, orbit);
    if map.dim() != 2 {
        return Err(Error::DimensionUnsupported(map.dim()));
    }
    Ok(fixed_point_index(&map, &orbit.chart, radius, 32)?.index)
}
