//! The impulsive system `(M, φ, D, I)` and validation of its standing
//! hypotheses.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::field::VectorField;
use crate::geometry::{hausdorff_distance, set_distance, AmbientSpace};
use crate::impulse::Impulse;
use crate::integrate::{Flow, HitOptions};
use crate::section::SectionPatch;
use crate::{ChartPoint, Error, Point, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Local error tolerance of the integrator.
    pub integration: f64,
    /// Event time tolerance.
    pub event: f64,
    pub impulse_inverse: f64,
    /// `|g| ≤ section` counts as on a section.
    pub section: f64,
    /// Residual accepted for periodic orbits.
    pub periodic: f64,
    /// Maximum integration step; keeps steps from jumping over thin patches.
    pub h_max: f64,
    /// Default search horizon standing in for `τ = +∞`.
    pub horizon: f64,
    /// Singularity-exclusion radius around the closure of D.
    pub singularity_radius: f64,
    /// Orbits whose representatives are closer than this are merged.
    pub merge_radius: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            integration: 1e-9,
            event: 1e-8,
            impulse_inverse: 1e-12,
            section: 1e-9,
            periodic: 1e-7,
            h_max: 0.1,
            horizon: 200.0,
            singularity_radius: 0.1,
            merge_radius: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulsiveSystem {
    pub name: String,
    pub space: AmbientSpace,
    pub field: VectorField,
    pub d: SectionPatch,
    pub d_hat: SectionPatch,
    pub impulse: Impulse,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(skip)]
    section_gap: OnceLock<f64>,
}

impl PartialEq for ImpulsiveSystem {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name
            && self.space == o.space
            && self.field == o.field
            && self.d == o.d
            && self.d_hat == o.d_hat
            && self.impulse == o.impulse
            && self.tolerances == o.tolerances
    }
}

impl ImpulsiveSystem {
    pub fn new(
        name: &str,
        space: AmbientSpace,
        field: VectorField,
        d: SectionPatch,
        d_hat: SectionPatch,
        impulse: Impulse,
    ) -> Self {
        ImpulsiveSystem {
            name: name.to_string(),
            space,
            field,
            d,
            d_hat,
            impulse,
            tolerances: Tolerances::default(),
            section_gap: OnceLock::new(),
        }
    }

    pub fn with_field(&self, field: VectorField) -> Self {
        ImpulsiveSystem {
            field,
            section_gap: OnceLock::new(),
            ..self.clone()
        }
    }

    pub fn with_impulse(&self, impulse: Impulse) -> Self {
        ImpulsiveSystem {
            impulse,
            ..self.clone()
        }
    }

    pub fn flow(&self) -> Flow<'_> {
        Flow::new(&self.field, &self.space, self.tolerances.integration, self.tolerances.h_max)
    }

    /// Sampled `dist(D, D̂)`.
    pub fn section_gap(&self) -> f64 {
        *self.section_gap.get_or_init(|| {
            let a = self.d.sample(&self.space, 31);
            let b = self.d_hat.sample(&self.space, 31);
            set_distance(&self.space, &a, &b).unwrap_or(0.0)
        })
    }

    /// Lower bound `dist(D, D̂)/‖X‖∞` on the time between impulses.
    pub fn travel_time_bound(&self) -> f64 {
        self.section_gap() / self.field.sup_norm
    }

    /// Post-impulse burn-in `dist(D, D̂)/(2‖X‖∞)`.
    pub fn burn_in(&self) -> f64 {
        0.5 * self.travel_time_bound()
    }

    pub fn hit_options(&self, t_max: f64) -> HitOptions {
        HitOptions::new(t_max, self.tolerances.section)
    }

    pub fn on_d(&self, p: &Point) -> bool {
        self.d.contains(&self.space, p, self.tolerances.section.max(1e-7))
    }

    pub fn on_d_hat(&self, p: &Point) -> bool {
        self.d_hat.contains(&self.space, p, self.tolerances.section.max(1e-7))
    }

    /// `I(p)` for `p ∈ D`.
    pub fn apply_impulse(&self, p: &Point) -> Result<Point> {
        if !self.on_d(p) {
            return Err(Error::OutsidePatch {
                patch: self.d.name.clone(),
                point: *p,
            });
        }
        let u = self.d.chart_coords(&self.space, p);
        Ok(self.d_hat_point(&self.impulse.apply_chart(&u)))
    }

    /// `I⁻¹(q)` for `q` in the image of `I`.
    pub fn impulse_inverse(&self, q: &Point) -> Result<Point> {
        if !self.on_d_hat(q) {
            return Err(Error::OutsidePatch {
                patch: self.d_hat.name.clone(),
                point: *q,
            });
        }
        let v = self.d_hat.chart_coords(&self.space, q);
        let u = self.impulse.inverse_chart(&v, self.tolerances.impulse_inverse)?;
        if !self.d.in_rect(&u, 1e-9) {
            return Err(Error::OutsidePatch {
                patch: self.d.name.clone(),
                point: *q,
            });
        }
        Ok(self.d_point(&u))
    }

    pub fn d_point(&self, u: &ChartPoint) -> Point {
        self.space.reduce(&self.d.embed(u))
    }

    pub fn d_hat_point(&self, v: &ChartPoint) -> Point {
        self.space.reduce(&self.d_hat.embed(v))
    }

    /// Chart samples of D.
    pub fn d_grid(&self, n: usize) -> Vec<ChartPoint> {
        self.d.grid(n, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Points of the closed `r`-neighborhood of a patch.
fn neighborhood(space: &AmbientSpace, patch: &SectionPatch, r: f64, n: usize) -> Vec<Point> {
    let mut grown = patch.clone();
    for i in 0..patch.dim() {
        grown.lo[i] -= r;
        grown.hi[i] += r;
    }
    let mut out = Vec::new();
    for u in grown.grid(n, 0.0) {
        let p = grown.embed(&u);
        let nrm = patch.gradient(&p);
        for k in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            out.push(space.reduce(&(p + nrm * (k * r))));
        }
    }
    out
}

/// Checks the standing hypotheses of an impulsive system on sampled grids.
pub fn validate_system(sys: &ImpulsiveSystem, n_samples: usize) -> ValidationReport {
    let n = n_samples.max(2);
    let space = &sys.space;
    let mut checks = Vec::new();

    let r = sys.tolerances.singularity_radius;
    let near = neighborhood(space, &sys.d, r, n);
    let min_speed = near
        .iter()
        .map(|p| sys.field.eval(space, p).norm())
        .fold(f64::INFINITY, f64::min);
    let spacing = (sys.d.size() + 2.0 * r) / (n - 1) as f64;
    let floor = sys.field.lipschitz * spacing.max(r / 2.0) * 0.5;
    checks.push(Check {
        name: "singularity-exclusion".into(),
        passed: min_speed > floor,
        value: min_speed,
        detail: format!("min |X| near closure of D; must exceed {floor:.3e}"),
    });

    for patch in [&sys.d, &sys.d_hat] {
        let t = patch
            .sample(space, n)
            .iter()
            .map(|p| patch.gradient(p).dot(&sys.field.eval(space, p)).abs())
            .fold(f64::INFINITY, f64::min);
        checks.push(Check {
            name: format!("transversality-{}", patch.name),
            passed: t >= patch.transversality_floor,
            value: t,
            detail: format!("min |X·∇g| on {}; floor {:.3e}", patch.name, patch.transversality_floor),
        });
    }

    let d_pts = sys.d.sample(space, n);
    let chart_images: Vec<ChartPoint> = sys.d_grid(n).iter().map(|u| sys.impulse.apply_chart(u)).collect();
    let img: Vec<Point> = chart_images.iter().map(|v| sys.d_hat_point(v)).collect();
    let dh = hausdorff_distance(space, &d_pts, &img).unwrap_or(0.0);
    checks.push(Check {
        name: "hausdorff-separation".into(),
        passed: dh > 0.0,
        value: dh,
        detail: "sampled dist_H(D, I(D))".into(),
    });

    let lip = sys.impulse.lipschitz_bound();
    checks.push(Check {
        name: "impulse-injectivity".into(),
        passed: lip < 1.0,
        value: lip,
        detail: "Lipschitz bound of the displacement bumps".into(),
    });

    let contained = chart_images.iter().filter(|v| !sys.d_hat.in_rect(v, 1e-9)).count();
    checks.push(Check {
        name: "image-containment".into(),
        passed: contained == 0,
        value: contained as f64,
        detail: "impulse images outside the landing rectangle".into(),
    });

    let sep = set_distance(space, &d_pts, &img).unwrap_or(0.0);
    checks.push(Check {
        name: "landing-separation".into(),
        passed: sep > 0.0,
        value: sep,
        detail: "sampled dist(D, I(D)); positive means I(D) ∩ D = ∅".into(),
    });

    let passed = checks.iter().all(|c| c.passed);
    ValidationReport { checks, passed }
}

impl ImpulsiveSystem {
    /// Errors unless the system validates.
    pub fn require_valid(&self) -> Result<()> {
        let report = validate_system(self, 21);
        if report.passed {
            Ok(())
        } else {
            let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
            Err(Error::InvalidSystem(failed.join(", ")))
        }
    }
}
