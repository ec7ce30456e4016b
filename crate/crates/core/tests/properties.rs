use koopman_core::characterize::{
    check_derivation, classify_operator, kato_sides, OperatorUnderTest,
};
use koopman_core::koopman::{adjoint_apply, generator_fd, koopman_apply, resolvent_laplace};
use koopman_core::observables::{
    alg_product, catalog, modulus, pair, seminorm_k, strict_seminorm, AtomicMeasure, Dictionary,
    Observable, VanishingWeight,
};
use koopman_core::semiflow::{
    check_semiflow_laws, crandall_liggett_evolve, make_ode_flow, make_translation_flow,
    AccretiveRelation, Semiflow,
};
use koopman_core::state::{CompactSample, DomainChart, StatePoint};
use koopman_core::Complex64;
use proptest::prelude::*;

type WithDerivative = (Observable, Box<dyn Fn(f64) -> f64>);

fn close(a: Complex64, b: Complex64, rel: f64) -> bool {
    (a - b).norm() <= rel * (1.0 + a.norm().max(b.norm()))
}

/// A small parametric family of bounded observables on the half line.
fn observable() -> impl Strategy<Value = Observable> {
    prop_oneof![
        (0.1..3.0f64).prop_map(catalog::exp_neg),
        (-2.0..2.0f64, 0.5..3.0f64).prop_map(|(phase, freq)| {
            Observable::real("sin", 1.0, move |x| (freq * x.x() + phase).sin())
        }),
        (0.5..3.0f64).prop_map(|freq| {
            Observable::complex("expi", 1.0, move |x| {
                Complex64::from_polar(1.0, freq * x.x())
            })
        }),
        (-1.0..1.0f64, -1.0..1.0f64)
            .prop_map(|(re, im)| Observable::constant(Complex64::new(re, im))),
    ]
}

fn point() -> impl Strategy<Value = StatePoint> {
    (0.0..5.0f64).prop_map(StatePoint::from)
}

fn logistic_flow(step: f64) -> Semiflow {
    make_ode_flow(
        |x| vec![x.x() * (1.0 - x.x())],
        DomainChart::interval(0.1, 2.0).unwrap(),
        step,
    )
    .unwrap()
}

fn logistic_exact(t: f64, x: f64) -> f64 {
    x * t.exp() / (1.0 - x + x * t.exp())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn algebra_laws(f in observable(), g in observable(), h in observable(), x in point()) {
        let fg = alg_product(&f, &g).eval(&x).unwrap();
        let gf = alg_product(&g, &f).eval(&x).unwrap();
        prop_assert_eq!(fg, gf);
        let left = alg_product(&alg_product(&f, &g), &h).eval(&x).unwrap();
        let right = alg_product(&f, &alg_product(&g, &h)).eval(&x).unwrap();
        prop_assert!(close(left, right, 1e-15));
        prop_assert_eq!(alg_product(&f, &Observable::unit()).eval(&x).unwrap(), f.eval(&x).unwrap());
    }

    #[test]
    fn lattice_law(f in observable(), g in observable(), x in point()) {
        let lhs = modulus(&alg_product(&f, &g)).eval(&x).unwrap();
        let rhs = alg_product(&modulus(&f), &modulus(&g)).eval(&x).unwrap();
        prop_assert!(close(lhs, rhs, 1e-15));
    }

    #[test]
    fn seminorm_k_is_a_seminorm(f in observable(), g in observable(), re in -3.0..3.0f64, im in -3.0..3.0f64) {
        let k = CompactSample::uniform(0.0, 4.0, 17).unwrap();
        let c = Complex64::new(re, im);
        let scaled = seminorm_k(&f.scale(c), &k).unwrap();
        prop_assert!((scaled - c.norm() * seminorm_k(&f, &k).unwrap()).abs() <= 1e-14 * (1.0 + scaled));
        let sum = seminorm_k(&f.add(&g), &k).unwrap();
        prop_assert!(sum <= seminorm_k(&f, &k).unwrap() + seminorm_k(&g, &k).unwrap() + 1e-15);
    }

    #[test]
    fn strict_seminorm_bounded(f in observable(), eps in 0.01..0.5f64) {
        let grid = CompactSample::uniform(0.0, 20.0, 81).unwrap();
        let w = VanishingWeight::exp_decay(&[eps]).unwrap();
        let max_w = grid.points().iter().map(|x| w.eval(x)).fold(0.0, f64::max);
        prop_assert!(strict_seminorm(&f, &w, &grid).unwrap() <= f.bound() * max_w + 1e-15);
    }

    #[test]
    fn pairing_is_bilinear(f in observable(), g in observable(), a in -2.0..2.0f64, y in point(), z in point()) {
        let mu = AtomicMeasure::new(vec![(y.clone(), Complex64::new(0.7, -0.2)), (z.clone(), Complex64::new(-1.1, 0.4))]);
        let nu = AtomicMeasure::dirac(z);
        let c = Complex64::new(a, 0.5);
        let lhs = pair(&f.scale(c).add(&g), &mu).unwrap();
        let rhs = c * pair(&f, &mu).unwrap() + pair(&g, &mu).unwrap();
        prop_assert!(close(lhs, rhs, 1e-14));
        let lhs = pair(&f, &mu.scale(c).add(&nu)).unwrap();
        let rhs = c * pair(&f, &mu).unwrap() + pair(&f, &nu).unwrap();
        prop_assert!(close(lhs, rhs, 1e-14));
    }

    #[test]
    fn koopman_is_a_unital_lattice_algebra_homomorphism(f in observable(), g in observable(), t in 0.0..3.0f64, x in point()) {
        let flow = make_translation_flow();
        let tf = koopman_apply(&flow, t, &f).unwrap().eval(&x).unwrap();
        let tg = koopman_apply(&flow, t, &g).unwrap().eval(&x).unwrap();
        let tfg = koopman_apply(&flow, t, &alg_product(&f, &g)).unwrap().eval(&x).unwrap();
        prop_assert_eq!(tfg, tf * tg);
        let t_abs = koopman_apply(&flow, t, &modulus(&f)).unwrap().eval(&x).unwrap();
        prop_assert_eq!(t_abs, Complex64::new(tf.norm(), 0.0));
        prop_assert_eq!(koopman_apply(&flow, t, &Observable::unit()).unwrap().eval(&x).unwrap(), Complex64::new(1.0, 0.0));
        let c = Complex64::new(0.3, -1.7);
        let lin = koopman_apply(&flow, t, &f.scale(c).add(&g)).unwrap().eval(&x).unwrap();
        prop_assert!(close(lin, c * tf + tg, 1e-15));
    }

    #[test]
    fn duality_is_exact(f in observable(), t in 0.0..3.0f64, y in point(), z in point()) {
        let flow = make_translation_flow();
        let mu = AtomicMeasure::new(vec![(y, Complex64::new(0.4, 0.1)), (z, Complex64::new(-0.8, 0.0))]);
        let lhs = pair(&koopman_apply(&flow, t, &f).unwrap(), &mu).unwrap();
        let rhs = pair(&f, &adjoint_apply(&flow, t, &mu).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn generator_is_second_order(rate in 0.2..2.0f64, phase in -1.0..1.0f64, h in 5e-3..2e-2f64) {
        let flow = make_translation_flow();
        let grid = CompactSample::uniform(0.0, 3.0, 20).unwrap();
        let sin = Observable::real("sin", 1.0, move |p| (p.x() + phase).sin());
        let cases: [WithDerivative; 2] = [
            (catalog::exp_neg(rate), Box::new(move |x| -rate * (-rate * x).exp())),
            (sin, Box::new(move |x| (x + phase).cos())),
        ];
        for (f, exact) in cases {
            let err = |h: f64| {
                grid.points()
                    .iter()
                    .map(|x| (generator_fd(&flow, &f, x, h).unwrap().value.re - exact(x.x())).abs())
                    .fold(0.0, f64::max)
            };
            let (e1, e2) = (err(h), err(h / 2.0));
            prop_assert!(e2 <= 0.3 * e1, "e1={e1} e2={e2}");
        }
    }

    #[test]
    fn resolvent_error_within_estimates(rate in 0.2..2.0f64, nu in 0.5..2.0f64, x in 0.0..3.0f64, t_max in 10.0..30.0f64, n_exp in 7u32..10) {
        let flow = make_translation_flow();
        let f = catalog::exp_neg(rate);
        let res = resolvent_laplace(&flow, &f, nu, t_max, 1 << n_exp).unwrap();
        let x = StatePoint::from(x);
        let exact = (-rate * x.x()).exp() / (nu + rate);
        let err = (res.observable.eval(&x).unwrap().re - exact).abs();
        prop_assert!(err <= res.quad_error_at(&x).unwrap() + res.truncation_error + 1e-15);
    }

    #[test]
    fn crandall_liggett_is_monotone(a in 0.1..3.0f64, t in 0.1..3.0f64, x in 0.1..5.0f64, k_exp in 2u32..12) {
        let rel = AccretiveRelation::linear(a);
        let exact = (-a * t).exp() * x;
        let k = 1usize << k_exp;
        let e1 = (crandall_liggett_evolve(&rel, t, &x.into(), k).unwrap().x() - exact).abs();
        let e2 = (crandall_liggett_evolve(&rel, t, &x.into(), 2 * k).unwrap().x() - exact).abs();
        prop_assert!(e2 < e1);
    }

    #[test]
    fn identity_law_is_exact(x in 0.1..2.0f64, step in 1e-3..1e-1f64) {
        let flow = logistic_flow(step);
        prop_assert_eq!(flow.evaluate(0.0, &x.into()).unwrap(), StatePoint::from(x));
    }

    #[test]
    fn semigroup_residual_within_accuracy(s in 0.0..1.0f64, t in 0.0..1.0f64, step in 0.02..0.1f64) {
        let flow = logistic_flow(step);
        let grid = CompactSample::uniform(0.1, 2.0, 12).unwrap();
        let r = check_semiflow_laws(&flow, &grid, &[s, t], 1.0).unwrap();
        let lipschitz = (0.8 * (s + t)).exp();
        prop_assert!(r.residual("semigroup") <= 2.0 * flow.accuracy().error * (1.0 + lipschitz));
    }

    #[test]
    fn kato_dirac_matches_pointwise_identity(rate in 0.2..2.0f64, re in -1.0..1.0f64, im in -1.0..1.0f64, x in 0.0..3.0f64) {
        prop_assume!(re.abs() + im.abs() > 0.1);
        let flow = make_translation_flow();
        let c = Complex64::new(re, im);
        let f = catalog::exp_neg(rate).scale(c);
        let s = kato_sides(&flow, &f, &AtomicMeasure::dirac(x.into()), 1e-3, 1e-12).unwrap();
        let exact = -rate * c.norm() * (-rate * x).exp();
        prop_assert!((s.lhs.re - exact).abs() < 1e-5, "{s:?}");
        prop_assert!((s.rhs.re - exact).abs() < 1e-5, "{s:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ode_flow_is_fourth_order(t in 0.5..2.0f64, step in 0.05..0.2f64) {
        let grid = CompactSample::uniform(0.1, 2.0, 15).unwrap();
        let err = |h: f64| {
            let flow = logistic_flow(h);
            grid.points()
                .iter()
                .map(|x| (flow.evaluate(t, x).unwrap().x() - logistic_exact(t, x.x())).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(step), err(step / 2.0));
        prop_assert!(e1 >= 8.0 * e2, "e1={e1} e2={e2}");

        let linear = |h: f64| make_ode_flow(|x| vec![-x.x()], DomainChart::real_line(), h).unwrap();
        let lin_err = |h: f64| (linear(h).evaluate(t, &1.0.into()).unwrap().x() - (-t).exp()).abs();
        prop_assert!(lin_err(step) >= 8.0 * lin_err(step / 2.0));
    }

    #[test]
    fn classification_recovers_translation(t in 0.2..1.5f64) {
        let flow = make_translation_flow();
        let dict = Dictionary::new(vec![catalog::exp_neg(1.0), catalog::sin(), catalog::exp_i()]);
        let grid = CompactSample::from_scalars(&[0.0, 1.0]).unwrap();
        let cands = CompactSample::with_spacing(0.0, 3.0, 1e-3).unwrap();
        let cls = classify_operator(&OperatorUnderTest::from_flow(&flow), t, &dict, &grid, &cands, 1e-9).unwrap();
        let map = cls.point_map.expect("koopman-like");
        for m in map {
            prop_assert!((m.image.x() - (m.point.x() + t)).abs() <= cands.mesh() + 1e-9);
        }
    }
}

#[test]
fn derivation_residual_is_second_order() {
    let flow = make_translation_flow();
    let grid = CompactSample::uniform(0.0, 3.0, 20).unwrap();
    let (f, g) = (catalog::exp_neg(1.0), catalog::sin());
    let r = |h: f64| {
        check_derivation(&flow, &f, &g, &grid, h, 1.0)
            .unwrap()
            .residual("product-rule")
    };
    for h in [1e-2, 5e-3] {
        assert!(
            r(h / 2.0) <= 0.3 * r(h),
            "h={h}: {} -> {}",
            r(h),
            r(h / 2.0)
        );
    }
}
