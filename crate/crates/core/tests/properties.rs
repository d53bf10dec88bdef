use obrediff::simulator::{run, Mode, Signal};
use obrediff::solver::{solve_coefficients, verify_synthesis, ConstraintSet};
use obrediff::spectrum::{frequency_zero_residual, relative_error, ErrorSpectrum};
use obrediff::suitability::{analyze, Classification};
use obrediff::{make_catalog, Complex64, Integrator, ObreshkovTableau};
use proptest::prelude::*;

fn cat(name: Integrator, h: f64, omega: f64) -> ObreshkovTableau {
    make_catalog(name, h, name.is_frequency_optimized().then_some(omega)).unwrap()
}

fn integrator() -> impl Strategy<Value = Integrator> {
    prop::sample::select(Integrator::ALL.to_vec())
}

fn nonzero(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo..hi, any::<bool>()).prop_map(|(v, neg)| if neg { -v } else { v })
}

/// Arbitrary valid tableau: consistent c0, nonzero leading coefficient.
fn tableau() -> impl Strategy<Value = ObreshkovTableau> {
    (1usize..=3, 1usize..=4, 1e-5..1.0f64).prop_flat_map(|(k, m, h)| {
        (
            prop::collection::vec(-1.0..1.0f64, m - 1),
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, m + 1), k),
            nonzero(0.1, 10.0),
        )
            .prop_map(move |(mut c0, mut c, lead)| {
                c0.push(1.0 - c0.iter().sum::<f64>());
                c[k - 1][0] = lead;
                ObreshkovTableau { k, m, h, c0, c, label: None, omega_select: None }
            })
    })
}

fn ideal_members() -> impl Strategy<Value = Integrator> {
    prop::sample::select(vec![
        Integrator::Be,
        Integrator::Bdf2,
        Integrator::B,
        Integrator::D,
        Integrator::E,
        Integrator::F,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn leading_row_scaling_keeps_roots(t in tableau(), alpha in nonzero(1e-3, 1e3)) {
        let mut scaled = t.clone();
        for v in scaled.c[t.k - 1].iter_mut() {
            *v *= alpha;
        }
        let a = analyze(&t).unwrap();
        let b = analyze(&scaled).unwrap();
        prop_assert_eq!(a.roots.len(), b.roots.len());
        for (x, y) in a.roots.iter().zip(&b.roots) {
            prop_assert!((x - y).norm() <= 1e-9 * x.norm().max(1.0), "{} vs {}", x, y);
        }
        prop_assert_eq!(a.classification, b.classification);
    }

    #[test]
    fn catalog_classification_ignores_step(name in integrator(), theta in 0.05..3.0f64, h in 1e-6..1.0f64) {
        let ref_class = analyze(&cat(name, 1e-3, theta / 1e-3)).unwrap().classification;
        let class = analyze(&cat(name, h, theta / h)).unwrap().classification;
        prop_assert_eq!(ref_class, class);
        prop_assert_eq!(class.is_suitable(), !matches!(name, Integrator::Tr | Integrator::A | Integrator::C));
    }

    #[test]
    fn json_round_trip_is_bit_exact(t in tableau()) {
        let back = ObreshkovTableau::from_json(&t.to_json()).unwrap();
        prop_assert_eq!(&back, &t);
        for (a, b) in back.c.iter().flatten().zip(t.c.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(back.h.to_bits(), t.h.to_bits());
    }

    #[test]
    fn relative_error_is_conjugate_symmetric(name in integrator(), h in 1e-5..1e-2f64, omega in 1.0..1e4f64) {
        let t = cat(name, h, 0.5 / h);
        let pos = relative_error(&t, Complex64::new(0.0, omega));
        let neg = relative_error(&t, Complex64::new(0.0, -omega));
        prop_assert!((neg - pos.conj()).norm() <= 1e-14 * pos.norm().max(1.0));
    }

    #[test]
    fn series_matches_pointwise(name in integrator(), h in 1e-4..1e-1f64, r in 0.0..0.5f64, arg in -3.2..3.2f64) {
        let t = cat(name, h, 0.5 / h);
        let s = Complex64::from_polar(r / h, arg);
        let exact = relative_error(&t, s);
        let series = ErrorSpectrum::with_len(&t, 25).eval_series(s);
        prop_assert!((exact - series).norm() <= 1e-10 * exact.norm().max(1.0), "{} vs {}", exact, series);
    }

    #[test]
    fn asymptotic_errors_decay_with_root_radius(a in -500.0..500.0f64, b in -500.0..500.0f64) {
        // (λ - 0.5)(λ + 0.25): spectral radius 0.5.
        let h = 1e-2;
        let t = ObreshkovTableau {
            k: 1,
            m: 2,
            h,
            c0: vec![0.5, 0.5],
            c: vec![vec![h, -0.25 * h, -0.125 * h]],
            label: None,
            omega_select: None,
        };
        prop_assert_eq!(analyze(&t).unwrap().classification, Classification::Asymptotic);
        let trace = run(&t, &Signal::Constant(0.0), 40.0 * h, &[a, b], Mode::Direct).unwrap();
        let scale = 10.0 * a.abs().max(b.abs());
        for (n, e) in trace.error.iter().skip(2).enumerate() {
            prop_assert!(e.abs() <= scale * 0.5f64.powi(n as i32 + 1), "step {}: {}", n + 1, e);
        }
    }

    #[test]
    fn ideal_members_forget_their_start(name in ideal_members(), x in -1e3..1e3f64, y in -1e3..1e3f64) {
        let t = cat(name, 1e-3, 120.0 * std::f64::consts::PI);
        let sig = Signal::Cosine { omega: 120.0 * std::f64::consts::PI, amplitude: 1.0 };
        let ia = vec![x; t.m];
        let ib = vec![y; t.m];
        let ta = run(&t, &sig, 0.03, &ia, Mode::Direct).unwrap();
        let tb = run(&t, &sig, 0.03, &ib, Mode::Direct).unwrap();
        // Indices 0..m hold the injected values; steps n ≥ m + 1 follow.
        for i in (2 * t.m)..ta.len() {
            prop_assert_eq!(ta.computed[i].to_bits(), tb.computed[i].to_bits(), "index {}", i);
        }
    }

    #[test]
    fn optimized_members_are_exact_at_their_frequency(
        name in prop::sample::select(vec![Integrator::A, Integrator::B, Integrator::E]),
        theta in 0.1..2.5f64,
        omega in 10.0..2000.0f64,
    ) {
        let h = theta / omega;
        let t = cat(name, h, omega);
        let sig = Signal::Cosine { omega, amplitude: 1.0 };
        let trace = run(&t, &sig, 100.0 * h, &[sig.deriv(2, 0.0)], Mode::Direct).unwrap();
        let worst = trace.error.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        prop_assert!(worst <= 1e-9 * omega * omega, "{}: {:e}", name, worst / (omega * omega));
    }

    #[test]
    fn engines_agree(t in tableau(), init in -100.0..100.0f64, omega in 0.1..5.0f64) {
        prop_assume!(analyze(&t).unwrap().classification.is_suitable());
        let sig = Signal::Cosine { omega: omega / t.h, amplitude: 1.0 };
        let init = vec![init; t.m];
        let a = run(&t, &sig, 60.0 * t.h, &init, Mode::Direct).unwrap();
        let b = run(&t, &sig, 60.0 * t.h, &init, Mode::StateSpace).unwrap();
        for (x, y) in a.computed.iter().zip(&b.computed) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn synthesized_members_certify(
        which in 0usize..3,
        theta in 0.05..2.5f64,
        omega in 1.0..5000.0f64,
    ) {
        let h = theta / omega;
        let c = match which {
            0 => ConstraintSet::integrator_b(h, omega),
            1 => ConstraintSet::integrator_e(h, omega),
            _ => ConstraintSet::integrator_f(h),
        };
        let t = solve_coefficients(&c).unwrap();
        let cert = verify_synthesis(&t, &c);
        prop_assert!(cert.passed(), "{}", cert);
        if which < 2 {
            prop_assert!(frequency_zero_residual(&t, omega) <= 1e-10);
        }
    }
}

#[test]
fn e_degenerates_to_f_at_low_frequency() {
    let h = 1e-3;
    let e = solve_coefficients(&ConstraintSet::integrator_e(h, 1e-3 / h)).unwrap();
    let f = cat(Integrator::F, h, 1.0);
    for (a, b) in e.c.iter().flatten().zip(f.c.iter().flatten()) {
        let scale = b.abs().max(h * h);
        assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
    }
}

#[test]
fn second_order_catalog_members_have_two_row_tableaus() {
    for name in Integrator::SECOND_ORDER {
        let t = cat(name, 1e-3, 100.0);
        assert_eq!((t.k, t.m), (2, 1), "{name}");
    }
}
