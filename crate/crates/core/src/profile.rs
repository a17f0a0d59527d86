//! Compactly supported C¹ profiles used by every bump construction.

/// Radial bump `(1 − s²)²` on `[0, 1)`, zero beyond. Equals 1 at the center
/// with zero slope there.
pub fn bump(s: f64) -> f64 {
    let s = s.abs();
    if s >= 1.0 {
        0.0
    } else {
        let t = 1.0 - s * s;
        t * t
    }
}

/// `sup |bump'| = 8 / (3√3)`, attained at `s = 1/√3`.
pub const BUMP_SLOPE: f64 = 1.539_600_717_839_002;

/// `sup (bump(s) + s·|bump'(s)|) = 4/3`: Lipschitz factor of `w ↦ bump(|w|)·w`.
pub const RADIAL_SLOPE: f64 = 4.0 / 3.0;

/// `sup s·bump(s) = 16 / (25√5)`.
pub const RADIAL_PEAK: f64 = 0.286_216_701_081_146_3;

/// Quintic smoothstep on `[0, 1]`, clamped outside.
pub fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * x * (x * (6.0 * x - 15.0) + 10.0)
    }
}

/// 0 outside `[a0, b0]`, 1 on `[a1, b1]`, smooth ramps between.
pub fn plateau(s: f64, a0: f64, a1: f64, b1: f64, b0: f64) -> f64 {
    if s <= a0 || s >= b0 {
        return 0.0;
    }
    let up = if a1 > a0 { smoothstep((s - a0) / (a1 - a0)) } else { 1.0 };
    let down = if b0 > b1 { smoothstep((b0 - s) / (b0 - b1)) } else { 1.0 };
    up.min(down)
}

/// Longitudinal profile α_η on `[0, δ]`: zero on `[0, η] ∪ [δ−η, δ]`,
/// equal to η on `[2η, δ−2η]`.
pub fn alpha_eta(s: f64, eta: f64, delta: f64) -> f64 {
    eta * plateau(s, eta, 2.0 * eta, delta - 2.0 * eta, delta - eta)
}

/// Transversal profile β_η for a tube of support radius `radius`: equal to η
/// inside `2·radius/3`, zero outside `radius`.
pub fn beta_eta(r: f64, eta: f64, radius: f64) -> f64 {
    let inner = 2.0 * radius / 3.0;
    if r <= inner {
        eta
    } else if r >= radius {
        0.0
    } else {
        eta * smoothstep((radius - r) / (radius - inner))
    }
}

/// Integral of [`alpha_eta`] over `[0, δ]` by composite Simpson.
pub fn alpha_integral(eta: f64, delta: f64) -> f64 {
    integrate(|s| alpha_eta(s, eta, delta), 0.0, delta, 2000)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampled_max(f: impl Fn(f64) -> f64) -> f64 {
        (0..=200_000)
            .map(|i| f(i as f64 / 200_000.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn bump_constants_match_sampling() {
        let h = 1e-7;
        let slope = sampled_max(|s| ((bump(s + h) - bump(s - h)) / (2.0 * h)).abs());
        assert!((slope - BUMP_SLOPE).abs() < 1e-6);
        let radial = sampled_max(|s| {
            let d = (bump(s + h) - bump(s - h)) / (2.0 * h);
            bump(s) + s * d.abs()
        });
        assert!((radial - RADIAL_SLOPE).abs() < 1e-6);
        let peak = sampled_max(|s| s * bump(s));
        assert!((peak - RADIAL_PEAK).abs() < 1e-9);
    }

    #[test]
    fn alpha_plateau_and_support() {
        let (eta, delta) = (0.2, 3.0);
        assert_eq!(alpha_eta(0.1, eta, delta), 0.0);
        assert_eq!(alpha_eta(2.9, eta, delta), 0.0);
        for s in [0.4, 1.0, 2.0, 2.6] {
            assert!((alpha_eta(s, eta, delta) - eta).abs() < 1e-15);
        }
        let i = alpha_integral(eta, delta);
        assert!(i > eta * (delta - 4.0 * eta) && i < eta * (delta - 2.0 * eta));
    }

    #[test]
    fn beta_plateau_and_support() {
        assert_eq!(beta_eta(0.19, 0.3, 0.3), 0.3);
        assert_eq!(beta_eta(0.31, 0.3, 0.3), 0.0);
        assert!(beta_eta(0.25, 0.3, 0.3) > 0.0 && beta_eta(0.25, 0.3, 0.3) < 0.3);
    }
}
