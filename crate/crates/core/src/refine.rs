//! Derivative-free root finding for displacement maps `F(v) = P(v) − v` on
//! section charts: a few damped fixed-point steps, then Broyden updates with
//! backtracking from a finite-difference initial Jacobian.

use nalgebra::Matrix2;

use crate::ChartPoint;

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub tol: f64,
    /// Total budget of Broyden iterations.
    pub budget: usize,
    /// Chart dimension (1 or 2). In dimension 1 the second coordinate is inert.
    pub dim: usize,
    /// Finite-difference step for the initial Jacobian.
    pub fd_step: f64,
}

impl RefineOptions {
    pub fn new(tol: f64, dim: usize) -> Self {
        RefineOptions {
            tol,
            budget: 60,
            dim,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined {
    pub x: ChartPoint,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefineFailure {
    /// The map became undefined at an iterate.
    Undefined,
    /// No progress within the budget; best point and residual.
    Stalled { x: ChartPoint, residual: f64 },
}

fn mask(v: ChartPoint, dim: usize) -> ChartPoint {
    if dim == 1 {
        ChartPoint::new(v.x, 0.0)
    } else {
        v
    }
}

/// Finite-difference Jacobian of `f` at `x` (value `fx` given).
pub fn fd_jacobian(
    f: &impl Fn(&ChartPoint) -> Option<ChartPoint>,
    x: &ChartPoint,
    fx: &ChartPoint,
    h: f64,
    dim: usize,
) -> Option<Matrix2<f64>> {
    let mut j = Matrix2::identity();
    for c in 0..dim {
        let mut xp = *x;
        xp[c] += h;
        let fp = mask(f(&xp)?, dim);
        j.set_column(c, &((fp - fx) / h));
    }
    Some(j)
}

/// Solves `F(x) = 0`. `f` returns `None` where the map is undefined.
pub fn solve(
    f: impl Fn(&ChartPoint) -> Option<ChartPoint>,
    x0: ChartPoint,
    opts: &RefineOptions,
) -> Result<Refined, RefineFailure> {
    let dim = opts.dim;
    let mut x = mask(x0, dim);
    let mut fx = mask(f(&x).ok_or(RefineFailure::Undefined)?, dim);
    let mut r = fx.norm();
    if r <= opts.tol {
        return Ok(Refined {
            x,
            residual: r,
            iterations: 0,
        });
    }
    for _ in 0..3 {
        let xn = x + fx * 0.5;
        let Some(fn_) = f(&xn).map(|v| mask(v, dim)) else {
            break;
        };
        if fn_.norm() >= 0.9 * r {
            break;
        }
        x = xn;
        fx = fn_;
        r = fx.norm();
        if r <= opts.tol {
            return Ok(Refined {
                x,
                residual: r,
                iterations: 0,
            });
        }
    }
    let mut jac: Option<Matrix2<f64>> = None;
    let mut fresh = false;
    for it in 1..=opts.budget {
        let j = match jac {
            Some(j) => j,
            None => {
                let h = opts.fd_step.max(1e-3 * r.min(1.0)).min(1e-3);
                let j = fd_jacobian(&f, &x, &fx, h, dim).ok_or(RefineFailure::Undefined)?;
                jac = Some(j);
                fresh = true;
                j
            }
        };
        let Some(jinv) = j.try_inverse() else {
            return Err(RefineFailure::Stalled { x, residual: r });
        };
        let dx = mask(-(jinv * fx), dim);
        if !dx.iter().all(|c| c.is_finite()) || dx.norm() > 1e3 {
            return Err(RefineFailure::Stalled { x, residual: r });
        }
        let mut lam = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let xn = x + dx * lam;
            if let Some(fn_) = f(&xn) {
                let fn_ = mask(fn_, dim);
                if fn_.norm() < r * (1.0 - 1e-4 * lam) || fn_.norm() <= opts.tol {
                    accepted = Some((xn, fn_));
                    break;
                }
            }
            lam *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            if !fresh {
                // Stale Broyden matrix: rebuild from finite differences.
                jac = None;
                continue;
            }
            return Err(RefineFailure::Stalled { x, residual: r });
        };
        let s = xn - x;
        let y = fn_ - fx;
        let ss = s.norm_squared();
        if ss > 0.0 {
            let upd = (y - j * s) * s.transpose() / ss;
            let mut jn = j + upd;
            if dim == 1 {
                jn[(1, 1)] = 1.0;
                jn[(0, 1)] = 0.0;
                jn[(1, 0)] = 0.0;
            }
            jac = Some(jn);
            fresh = false;
        }
        x = xn;
        fx = fn_;
        r = fx.norm();
        if r <= opts.tol {
            return Ok(Refined {
                x,
                residual: r,
                iterations: it,
            });
        }
    }
    Err(RefineFailure::Stalled { x, residual: r })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_contraction_fixed_point() {
        // P(v) = A v + b with fixed point (0.6, −0.2).
        let p = |v: &ChartPoint| ChartPoint::new(0.5 * v.x + 0.3 + 0.1 * v.y + 0.02, 0.5 * v.y - 0.1);
        let r = solve(|v| Some(p(v) - v), ChartPoint::new(0.0, 0.0), &RefineOptions::new(1e-12, 2)).unwrap();
        assert!((p(&r.x) - r.x).norm() <= 1e-12);
    }

    #[test]
    fn nonlinear_map_converges() {
        let f = |v: &ChartPoint| Some(ChartPoint::new(v.x.sin() + 0.3 * v.y - 0.2, v.y * v.y * v.y + v.y - 0.5 * v.x));
        let r = solve(f, ChartPoint::new(0.5, 0.5), &RefineOptions::new(1e-12, 2)).unwrap();
        assert!(f(&r.x).unwrap().norm() <= 1e-12);
    }

    #[test]
    fn translation_has_no_fixed_point() {
        let f = |_: &ChartPoint| Some(ChartPoint::new(0.05, 0.01));
        assert!(solve(f, ChartPoint::new(0.2, 0.2), &RefineOptions::new(1e-9, 2)).is_err());
    }

    #[test]
    fn one_dimensional_root() {
        let f = |v: &ChartPoint| Some(ChartPoint::new(v.x * v.x - 2.0, 7.0));
        let r = solve(f, ChartPoint::new(1.0, 0.0), &RefineOptions::new(1e-13, 1)).unwrap();
        assert!((r.x.x - 2f64.sqrt()).abs() <= 1e-12);
        assert_eq!(r.x.y, 0.0);
    }
}
