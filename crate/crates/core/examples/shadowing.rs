//! Shadowing on the sphere system S3: the two-link chain that jumps across
//! the impulse is a valid pseudo-orbit that no true orbit follows, while a
//! chain cut from a true orbit is shadowed by it.

use impulsive::builtin::{builtin_system, s3_paper_chain, s3_true_chain};
use impulsive::global::{shadowing_falsifier, PseudoOrbit};

fn main() -> impulsive::Result<()> {
    let sys = builtin_system("S3")?;
    let delta = 0.05;

    let chain = PseudoOrbit::new(&sys, s3_paper_chain(delta), delta, 2.0)?;
    println!("two-link chain: jump {:.4} < delta {delta}", chain.jumps[0]);
    let v = shadowing_falsifier(&sys, &chain, 0.1, 2000, 8)?;
    println!(
        "  {:?}: best distance {:.4} over {} starts",
        v.verdict, v.best_distance, v.resolution.initial_points
    );

    let truth = PseudoOrbit::new(&sys, s3_true_chain(&sys)?, delta, 2.0)?;
    let w = shadowing_falsifier(&sys, &truth, 0.1, 2000, 8)?;
    println!("true-orbit chain: {:?}, distance {:.2e}", w.verdict, w.best_distance);
    Ok(())
}
