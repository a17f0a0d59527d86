//! The recurrent proxy of an annulus in S1a and how densely the detected
//! periodic orbits cover it.

use impulsive::builtin::builtin_system;
use impulsive::global::{density_gap, recurrent_proxy, Region};
use impulsive::poincare::periodic_orbits_up_to;
use impulsive::Point;

fn main() -> impulsive::Result<()> {
    let sys = builtin_system("S1a")?;
    let region = Region::Annulus {
        center: Point::zeros(),
        r_inner: 1.6,
        r_outer: 2.4,
        z_lo: -0.4,
        z_hi: 0.4,
    };
    let proxy = recurrent_proxy(&sys, &region, 0.05, 1.0, 20.0, 1)?;
    println!(
        "proxy: {} cells, {} marked recurrent, {} eligible",
        proxy.cells.len(),
        proxy.marked().count(),
        proxy.eligible().count()
    );
    for res in [8, 16, 24] {
        let orbits = periodic_orbits_up_to(&sys, 20.0, res);
        let gap = density_gap(&sys, &orbits, &proxy, 0.01)?;
        println!("census grid {res:2}: {:3} orbits, density gap {gap:.4}", orbits.len());
    }
    Ok(())
}
