//! Closing perturbations on the torus system S2, whose unperturbed semiflow
//! has no short periodic orbits.

use impulsive::builtin::builtin_system;
use impulsive::impulse::c0_distance_impulses;
use impulsive::perturb::{closing_field, closing_impulse, ClosingOptions, FieldClosingOptions};
use impulsive::poincare::find_periodic_orbit;
use impulsive::Point;

fn main() -> impulsive::Result<()> {
    let sys = builtin_system("S2")?;
    let eps = 0.05;

    for target in [Point::new(0.5, 0.25, 0.25), Point::new(0.5, 0.2, 0.3)] {
        let c = closing_impulse(&sys, &target, &ClosingOptions::new(eps, 400))?;
        let d = c0_distance_impulses(&sys.impulse, &c.system.impulse, &sys.d_grid(81));
        // Replay: the orbit is found again in the perturbed system from its representative.
        let again = find_periodic_orbit(&c.system, &c.orbit.representative, c.orbit.k, 1e-10)?.found().unwrap();
        println!(
            "impulse closing at {:?}: {} returns, period {:.3}, d_C0(I,J) = {d:.4}, orbit at distance {:.4}, replay residual {:.1e}",
            target.as_slice(),
            c.returns,
            c.orbit.period,
            sys.space.distance(&c.orbit.representative, &target),
            again.residual
        );
    }

    // Field mode steers a near-return with a tube perturbation away from D and D̂.
    let target = Point::new(0.75, 0.125, 0.375);
    let mut opts = FieldClosingOptions::new(eps);
    opts.horizon = 5000.0;
    let c = closing_field(&sys, &target, &opts)?;
    println!(
        "field closing at {:?}: ||Y - X||_C0 = {:.4}, period {:.3}, orbit at distance {:.4}",
        target.as_slice(),
        c.record.c0_size,
        c.orbit.period,
        sys.space.distance(&c.orbit.representative, &target)
    );
    Ok(())
}
