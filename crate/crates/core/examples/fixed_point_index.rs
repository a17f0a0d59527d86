//! Fixed-point index by winding numbers, for plain chart maps and for the
//! return map of an attracting orbit.

use impulsive::builtin::builtin_system;
use impulsive::index::{fixed_point_index, index_of_orbit, index_stability_margin, locate_fixed_point, FnMap, Located};
use impulsive::perturb::attractify;
use impulsive::poincare::find_periodic_orbit;
use impulsive::{ChartPoint, Point};

fn main() -> impulsive::Result<()> {
    let c = ChartPoint::zeros();
    let maps: [(&str, fn(&ChartPoint) -> ChartPoint); 3] = [
        ("contraction x/2", |x| x * 0.5),
        ("translation +(10,0)", |x| x + ChartPoint::new(10.0, 0.0)),
        ("saddle diag(2, 1/2)", |x| ChartPoint::new(2.0 * x.x, 0.5 * x.y)),
    ];
    for (name, f) in maps {
        let r = fixed_point_index(&FnMap(f), &c, 1.0, 64)?;
        let m = index_stability_margin(&FnMap(f), &c, 1.0, 64)?;
        println!("{name:22} index {:2}  margin {m:.4}  ({:?})", r.index, r.case);
    }

    let shifted = |x: &ChartPoint| x * 0.5 + ChartPoint::new(0.15, -0.2);
    if let Located::Found { point, residual } = locate_fixed_point(&FnMap(shifted), &c, 1.0, 60, 1e-10)? {
        println!("located fixed point {:?} (residual {residual:.1e})", point.as_slice());
    }

    // The S1a family has index undefined (every point is fixed); an
    // attracting perturbation isolates the orbit with index 1.
    let sys = builtin_system("S1a")?;
    let orbit = find_periodic_orbit(&sys, &Point::new(0.0, 2.0, 0.0), 1, 1e-10)?.found().unwrap();
    println!("S1a family: {:?}", index_of_orbit(&sys, &orbit, 0.05).err());
    let a = attractify(&sys, &orbit, 0.2)?;
    println!("attractified S1a orbit: index {}", index_of_orbit(&a.system, &a.orbit, 0.05)?);
    Ok(())
}
