//! Property tests for the algebraic laws the library is built on.

use std::sync::Arc;

use proptest::prelude::*;

use dimmech_core::expr::{lie_bracket, ChartDomain, ScalarField, VectorField};
use dimmech_core::measurand::{
    convert, parse_dimension, ratio, Dimension, MeasurandSpace, TypedNumber, UnitSystem,
};

fn gas() -> Arc<MeasurandSpace> {
    MeasurandSpace::new(vec!["P", "V", "N", "T"]).unwrap()
}

fn arb_exponents() -> impl Strategy<Value = Vec<i64>> {
    proptest::collection::vec(-6i64..=6, 4)
}

fn arb_magnitude() -> impl Strategy<Value = f64> {
    prop_oneof![
        -100.0..100.0f64,
        -1e-3..1e-3f64,
        Just(0.0),
        Just(1.0),
        Just(-1.0),
    ]
}

fn arb_nonzero() -> impl Strategy<Value = f64> {
    arb_magnitude().prop_filter("nonzero", |m| m.abs() > 1e-9)
}

fn typed(space: &Arc<MeasurandSpace>, mag: f64, exps: Vec<i64>) -> TypedNumber {
    TypedNumber::new(mag, space.dimension(exps).unwrap()).unwrap()
}

fn rel_close(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() <= 1e-12 * scale
}

proptest! {
    #[test]
    fn mul_is_associative_and_commutative(
        ma in arb_magnitude(), mb in arb_magnitude(), mc in arb_magnitude(),
        ea in arb_exponents(), eb in arb_exponents(), ec in arb_exponents(),
    ) {
        let space = gas();
        let a = typed(&space, ma, ea);
        let b = typed(&space, mb, eb);
        let c = typed(&space, mc, ec);
        let left = a.mul(&b).unwrap().mul(&c).unwrap();
        let right = a.mul(&b.mul(&c).unwrap()).unwrap();
        prop_assert_eq!(left.dimension(), right.dimension());
        prop_assert!(rel_close(left.magnitude(), right.magnitude()));
        let ab = a.mul(&b).unwrap();
        let ba = b.mul(&a).unwrap();
        prop_assert_eq!(ab.dimension(), ba.dimension());
        prop_assert!(rel_close(ab.magnitude(), ba.magnitude()));
    }

    #[test]
    fn magnitude_and_type_maps_are_homomorphisms(
        ma in arb_magnitude(), mb in arb_magnitude(),
        ea in arb_exponents(), eb in arb_exponents(),
    ) {
        let space = gas();
        let a = typed(&space, ma, ea.clone());
        let b = typed(&space, mb, eb.clone());
        let ab = a.mul(&b).unwrap();
        prop_assert!(rel_close(ab.magnitude(), ma * mb));
        let expected: Vec<i64> = ea.iter().zip(&eb).map(|(x, y)| x + y).collect();
        prop_assert_eq!(ab.dimension().exponents(), &expected[..]);
    }

    #[test]
    fn additive_fibres_are_abelian_groups(
        mx in arb_magnitude(), my in arb_magnitude(), mz in arb_magnitude(),
        exps in arb_exponents(),
    ) {
        let space = gas();
        let x = typed(&space, mx, exps.clone());
        let y = typed(&space, my, exps.clone());
        let z = typed(&space, mz, exps.clone());
        let left = x.add(&y).unwrap().add(&z).unwrap();
        let right = x.add(&y.add(&z).unwrap()).unwrap();
        prop_assert!(rel_close(left.magnitude(), right.magnitude()));
        prop_assert!(rel_close(
            x.add(&y).unwrap().magnitude(),
            y.add(&x).unwrap().magnitude()
        ));
        let zero = typed(&space, 0.0, exps.clone());
        prop_assert_eq!(x.add(&zero).unwrap().magnitude(), mx);
        let neg = typed(&space, -mx, exps);
        prop_assert_eq!(x.add(&neg).unwrap().magnitude(), 0.0);
    }

    #[test]
    fn ratio_two_out_of_three(
        ma in arb_nonzero(), mb in arb_nonzero(), mc in arb_nonzero(),
        exps in arb_exponents(),
    ) {
        let space = gas();
        let a = typed(&space, ma, exps.clone());
        let b = typed(&space, mb, exps.clone());
        let c = typed(&space, mc, exps);
        let cycle = ratio(&a, &b).unwrap() * ratio(&b, &c).unwrap() * ratio(&c, &a).unwrap();
        prop_assert!((cycle - 1.0).abs() <= 1e-12, "cycle = {}", cycle);
        let recip = ratio(&a, &b).unwrap() * ratio(&b, &a).unwrap();
        prop_assert!((recip - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn conversion_round_trips_and_respects_products(
        ma in arb_magnitude(), mb in arb_magnitude(),
        ea in arb_exponents(), eb in arb_exponents(),
        scales_from in proptest::collection::vec(0.1f64..10.0, 4),
        scales_to in proptest::collection::vec(0.1f64..10.0, 4),
    ) {
        let space = gas();
        let from = UnitSystem::new(&space, scales_from, vec!["f1", "f2", "f3", "f4"]).unwrap();
        let to = UnitSystem::new(&space, scales_to, vec!["t1", "t2", "t3", "t4"]).unwrap();
        let a = typed(&space, ma, ea);
        let b = typed(&space, mb, eb);
        let round = convert(&convert(&a, &from, &to).unwrap(), &to, &from).unwrap();
        prop_assert!(rel_close(round.magnitude(), a.magnitude()));
        // conversion is a typed-field morphism: it respects products
        let lhs = convert(&a.mul(&b).unwrap(), &from, &to).unwrap();
        let rhs = convert(&a, &from, &to)
            .unwrap()
            .mul(&convert(&b, &from, &to).unwrap())
            .unwrap();
        prop_assert_eq!(lhs.dimension(), rhs.dimension());
        prop_assert!(rel_close(lhs.magnitude(), rhs.magnitude()));
    }

    #[test]
    fn dimension_rendering_round_trips(exps in arb_exponents()) {
        let space = gas();
        let d: Dimension = space.dimension(exps).unwrap();
        let back = parse_dimension(&d.to_string(), &space).unwrap();
        prop_assert_eq!(d, back);
    }

    #[test]
    fn gradient_matches_finite_differences(
        c in proptest::collection::vec(-2.0f64..2.0, 6),
        x in proptest::collection::vec(-2.0f64..2.0, 2),
    ) {
        let chart = ChartDomain::new(vec!["u", "v"]).unwrap();
        let src = format!(
            "{} + {}*u + {}*v + {}*u*v + {}*sin(u) + {}*cos(v)",
            c[0], c[1], c[2], c[3], c[4], c[5]
        );
        let f = ScalarField::parse(&src, &chart).unwrap();
        let g = f.grad(&x).unwrap().components;
        let h = 1e-5;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f.eval(&xp).unwrap() - f.eval(&xm).unwrap()) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() < 1e-7, "{} vs {}", g[i], fd);
        }
    }

    #[test]
    fn lie_bracket_is_antisymmetric(
        c in proptest::collection::vec(-1.5f64..1.5, 4),
        x in proptest::collection::vec(-2.0f64..2.0, 2),
    ) {
        let chart = ChartDomain::new(vec!["u", "v"]).unwrap();
        let mk = |a: f64, b: f64| {
            VectorField::new(
                &chart,
                vec![
                    ScalarField::parse(&format!("{a}*u*v"), &chart).unwrap(),
                    ScalarField::parse(&format!("{b} + sin(u)"), &chart).unwrap(),
                ],
            )
            .unwrap()
        };
        let xf = mk(c[0], c[1]);
        let yf = mk(c[2], c[3]);
        let xy = lie_bracket(&xf, &yf).unwrap().eval(&x).unwrap();
        let yx = lie_bracket(&yf, &xf).unwrap().eval(&x).unwrap();
        for i in 0..2 {
            prop_assert!((xy[i] + yx[i]).abs() < 1e-10);
        }
    }
}
