use impulsive::builtin::builtin_system;
use impulsive::config::{emit_config, parse_config, SystemConfig};
use impulsive::impulse::{c0_distance_impulses, ImpulseBump};
use impulsive::perturb::{closing_impulse, ClosingOptions, Mode, Perturbation, PerturbationRecord};
use impulsive::poincare::find_periodic_orbit;
use impulsive::semiflow::{evaluate, impulsive_times, impulsive_trajectory};
use impulsive::{ChartPoint, Point};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn s1a_semiflow_composes(
        r in 0.5f64..2.9, th in 0.0f64..std::f64::consts::TAU, z in -1.0f64..1.0,
        s in 0.0f64..15.0, t in 0.0f64..15.0,
    ) {
        let sys = builtin_system("S1a").unwrap();
        let x0 = Point::new(r * th.cos(), r * th.sin(), z);
        let whole = impulsive_trajectory(&sys, &x0, s + t).unwrap();
        prop_assume!(impulsive_times(&whole).iter().all(|tau| (tau - s).abs() >= 1e-6));
        let y = evaluate(&sys, &whole, s).unwrap();
        let rest = impulsive_trajectory(&sys, &y, t).unwrap();
        let a = evaluate(&sys, &whole, s + t).unwrap();
        let b = evaluate(&sys, &rest, t).unwrap();
        prop_assert!(sys.space.distance(&a, &b) <= 1e-6);
        // Radius and height are invariant under both the flow and the impulse.
        prop_assert!(((a.x * a.x + a.y * a.y).sqrt() - r).abs() <= 1e-6);
        prop_assert!((a.z - z).abs() <= 1e-12);
    }

    #[test]
    fn s2_closing_meets_its_contract(y in 0.16f64..0.34, z in 0.16f64..0.34, eps in 0.03f64..0.08) {
        let sys = builtin_system("S2").unwrap();
        let p = Point::new(0.5, y, z);
        if let Ok(c) = closing_impulse(&sys, &p, &ClosingOptions::new(eps, 400)) {
            prop_assert!(c0_distance_impulses(&sys.impulse, &c.system.impulse, &sys.d_grid(81)) < eps);
            prop_assert!(c.system.impulse.lipschitz_bound() < 1.0);
            let orbit = find_periodic_orbit(&c.system, &c.orbit.representative, c.orbit.k, 1e-9)
                .unwrap()
                .found()
                .unwrap();
            prop_assert!(sys.space.distance(&orbit.representative, &p) < eps);
            prop_assert!(orbit.residual <= 1e-8);
        }
    }

    #[test]
    fn perturbed_configs_round_trip(
        cy in 0.15f64..0.35, cz in 0.15f64..0.35, r in 0.01f64..0.05,
        dy in -0.01f64..0.01, dz in -0.01f64..0.01, seed in any::<u64>(),
    ) {
        let bump = ImpulseBump::push(ChartPoint::new(cy, cz), ChartPoint::new(cy + dy, cz + dz), r, 0.5);
        let record = PerturbationRecord {
            operation: "closing-impulse".into(),
            mode: Mode::Impulse,
            perturbations: vec![Perturbation::ImpulseBump { bump }],
            c0_size: (dy * dy + dz * dz).sqrt(),
            size_bound: (dy * dy + dz * dz).sqrt(),
            target: Some(Point::new(0.5, cy + dy, cz + dz)),
            seed: Some(seed),
        };
        let cfg = SystemConfig::explicit(&builtin_system("S2").unwrap(), vec![record], seed);
        let text = emit_config(&cfg);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(emit_config(&back), text);
        prop_assert_eq!(back.build().unwrap(), cfg.build().unwrap());
    }
}
