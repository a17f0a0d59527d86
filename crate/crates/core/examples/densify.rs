//! Iterated closing and attracting on S2 until the periodic orbits are
//! ε-dense in the recurrent proxy. Pass `field` to perturb the vector field
//! instead of the impulse.

use impulsive::builtin::builtin_system;
use impulsive::config::{emit_config, SystemConfig};
use impulsive::global::{densify, DensifyOptions};
use impulsive::perturb::Mode;

fn main() -> impulsive::Result<()> {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("field") => Mode::Field,
        _ => Mode::Impulse,
    };
    let base = builtin_system("S2")?;
    let (sys, report) = densify(&base, &DensifyOptions::new(mode, 0.1, 25, 7))?;
    println!(
        "{mode:?}: {:?} after {} attempts, gap {:.4}, total perturbation {:.4}",
        report.status, report.iterations, report.final_gap, report.total_perturbation
    );
    println!("gap trace: {:?}", report.gap_trace);
    for o in &report.orbits {
        println!("  k {:3} period {:8.3} at {:?}", o.k, o.period, o.representative.as_slice());
    }
    println!("{} perturbation records", report.records.len());
    // The densified system is reproducible from the base and the records.
    let cfg = SystemConfig::explicit(&base, report.records.clone(), 7);
    assert_eq!(cfg.build()?, sys);
    println!("config hash {}, {} bytes", cfg.hash(), emit_config(&cfg).len());
    Ok(())
}
