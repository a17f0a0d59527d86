//! System configurations: built-in shorthand, explicit systems with
//! perturbation records, and validation of the standing hypotheses.

use impulsive::builtin::builtin_system;
use impulsive::config::{emit_config, parse_config, SystemConfig};
use impulsive::perturb::{closing_impulse, ClosingOptions};
use impulsive::section::SectionPatch;
use impulsive::system::validate_system;
use impulsive::{ChartPoint, Point};

fn main() -> impulsive::Result<()> {
    let short = SystemConfig::builtin("S1a", 3);
    println!("{}", emit_config(&short));

    let s1a = short.build()?;
    let report = validate_system(&s1a, 21);
    for c in &report.checks {
        println!("  {:24} {:5} {:.4e}  {}", c.name, c.passed, c.value, c.detail);
    }

    // D straddling the rotation axis contains a zero of the field.
    let mut singular = s1a.clone();
    singular.d = SectionPatch::affine("D", Point::zeros(), [Point::x(), Point::z()], ChartPoint::new(-0.5, -0.5), ChartPoint::new(0.5, 0.5));
    let bad = validate_system(&singular, 21);
    println!("singular D: passed {}, {:?}", bad.passed, bad.check("singularity-exclusion").map(|c| c.passed));

    let s2 = builtin_system("S2")?;
    let closed = closing_impulse(&s2, &Point::new(0.5, 0.25, 0.25), &ClosingOptions::new(0.05, 400))?;
    let cfg = SystemConfig::explicit(&s2, vec![closed.record], 9);
    let text = emit_config(&cfg);
    let back = parse_config(&text)?;
    assert_eq!(back.build()?, closed.system);
    println!("closed S2: {} bytes, hash {}", text.len(), cfg.hash());

    let err = parse_config("{\"schema_version\": 1, \"builtin\": \"S2\", \"seed\": 0, \"extra\": 1}").unwrap_err();
    println!("rejected: {err}");
    Ok(())
}
