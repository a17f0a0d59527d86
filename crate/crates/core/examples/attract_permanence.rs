//! Making a periodic orbit attracting, then testing that it persists under
//! random small perturbations.

use impulsive::builtin::builtin_system;
use impulsive::field::FieldTerm;
use impulsive::perturb::{
    attractify, contraction_margin, index_radius, permanence_test, Mode, PermanenceOptions, Perturbation, Trials,
};
use impulsive::poincare::{contraction_ratio, find_periodic_orbit};
use impulsive::Point;
use nalgebra::Matrix3;

fn main() -> impulsive::Result<()> {
    let sys = builtin_system("S1a")?;
    let family = find_periodic_orbit(&sys, &Point::new(0.0, 2.0, 0.0), 1, 1e-10)?.found().unwrap();
    println!("S1a return map ratio before: {:.4}", contraction_ratio(&sys, &family, 1e-4)?);

    let a = attractify(&sys, &family, 0.2)?;
    println!(
        "after attractify(eta=0.2): ratio {:.4}, index {:?}, ||Y - X||_C0 {:.4} <= bound {:.4}",
        a.ratio.unwrap(),
        a.orbit.index,
        a.record.c0_size,
        a.record.size_bound
    );

    let r = index_radius(&a.system, &a.orbit, 0.05);
    let margin = contraction_margin(&a.system, &a.orbit, r, Mode::Field)?;
    let opts = PermanenceOptions {
        delta: 0.1 * margin,
        mode: Mode::Field,
        seed: 11,
        survival_radius: None,
    };
    let rep = permanence_test(&a.system, &a.orbit, &Trials::Random(20), &opts)?;
    println!(
        "permanence at delta {:.2e}: {}/{} survive, worst displacement {:.2e}",
        rep.delta, rep.survivals, rep.trials, rep.worst_displacement
    );

    // The unperturbed family does not persist: a weak radial damping spirals
    // every orbit inward.
    let damping = Perturbation::FieldTerm {
        term: FieldTerm::Linear {
            matrix: Matrix3::from_diagonal(&Point::new(-0.01, -0.01, 0.0)),
        },
    };
    let opts = PermanenceOptions {
        delta: 0.01,
        mode: Mode::Field,
        seed: 11,
        survival_radius: Some(0.5),
    };
    let rep = permanence_test(&sys, &family, &Trials::Explicit(vec![damping]), &opts)?;
    println!("family under radial damping: {}/{} survive", rep.survivals, rep.trials);
    Ok(())
}
