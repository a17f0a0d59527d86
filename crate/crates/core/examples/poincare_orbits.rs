//! Poincaré maps on D̂ and the census of periodic orbits.

use impulsive::builtin::builtin_system;
use impulsive::poincare::{contraction_ratio, find_periodic_orbit, periodic_orbits_up_to, poincare_hat};
use impulsive::Point;

fn main() -> impulsive::Result<()> {
    let s1a = builtin_system("S1a")?;
    let y = Point::new(0.0, 2.2, 0.3);
    if let Some((p, _, t)) = poincare_hat(&s1a, &y)?.landed() {
        println!("S1a: P({:?}) = {:?} after {t:.6}", y.as_slice(), p.as_slice());
    }
    let orbit = find_periodic_orbit(&s1a, &y, 1, 1e-10)?.found().expect("S1a is a periodic family");
    println!(
        "S1a orbit: period {:.9}, residual {:.1e}, family {}, ratio {:.4}",
        orbit.period,
        orbit.residual,
        orbit.family,
        contraction_ratio(&s1a, &orbit, 1e-4)?
    );

    for name in ["S1a", "S2"] {
        let sys = builtin_system(name)?;
        let census = periodic_orbits_up_to(&sys, 20.0, 12);
        println!("{name}: {} periodic orbits with period <= 20 from a 12x12 seed grid", census.len());
        for o in census.iter().take(3) {
            println!("  k={} period {:.4} at {:?}", o.k, o.period, o.representative.as_slice());
        }
    }
    Ok(())
}
