//! Impulsive trajectory of S1a from (0, 2, 0): a quarter-turn jump every
//! 3π/2, so the orbit is periodic.

use impulsive::builtin::builtin_system;
use impulsive::semiflow::{evaluate, impulsive_times, impulsive_trajectory, write_csv};
use impulsive::Point;

fn main() -> impulsive::Result<()> {
    let sys = builtin_system("S1a")?;
    let x0 = Point::new(0.0, 2.0, 0.0);
    let traj = impulsive_trajectory(&sys, &x0, 10.0)?;

    for (n, tau) in impulsive_times(&traj).iter().enumerate() {
        println!("tau_{} = {tau:.9}  ({:.6} * pi)", n + 1, tau / std::f64::consts::PI);
    }
    for e in &traj.events {
        println!("jump at t={:.4}: {:?} -> {:?}", e.time, e.pre.as_slice(), e.post.as_slice());
    }
    // Evaluating at an impulsive time returns the post-jump point.
    let at = evaluate(&sys, &traj, 1.5 * std::f64::consts::PI)?;
    println!("psi(3pi/2) = {:?}", at.as_slice());

    let mut csv = Vec::new();
    write_csv(&sys, &traj, &mut csv)?;
    let text = String::from_utf8(csv).unwrap();
    println!("{} csv rows, first three:", text.lines().count() - 1);
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
