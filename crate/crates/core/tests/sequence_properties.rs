use proptest::prelude::*;
use qcb_core::domains;
use qcb_core::measures::{estimate_pairings, extrapolate, ExtrapolationMethod, SpatialFn, TestDictionary};
use qcb_core::sequences::{band_fraction, fraction_above, k_ladder, Profile, SequenceSpec};
use qcb_core::{Integrand, Matrix};

/// Midpoint-rule fraction of [t0, t1] whose fractional part is at least λ.
fn band_fraction_1d(t0: f64, t1: f64, lambda: f64) -> f64 {
    let n = 200_000;
    (0..n)
        .filter(|&i| {
            let t = t0 + (t1 - t0) * (i as f64 + 0.5) / n as f64;
            t - t.floor() >= lambda
        })
        .count() as f64
        / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn band_fraction_is_a_fraction(ts in prop::collection::vec(-5.0f64..5.0, 2..5), lambda in 0.0f64..1.0) {
        let f = band_fraction(&ts, lambda);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn band_fraction_ignores_integer_shifts(ts in prop::collection::vec(-5.0f64..5.0, 3..5), shift in -4i32..4, lambda in 0.05f64..0.95) {
        let shifted: Vec<f64> = ts.iter().map(|t| t + shift as f64).collect();
        prop_assert!((band_fraction(&ts, lambda) - band_fraction(&shifted, lambda)).abs() <= 1e-9);
        let mut reversed = ts.clone();
        reversed.reverse();
        prop_assert!((band_fraction(&ts, lambda) - band_fraction(&reversed, lambda)).abs() <= 1e-9);
    }

    #[test]
    fn band_fraction_on_segments_matches_sampling(t0 in -3.0f64..3.0, len in 0.01f64..4.0, lambda in 0.05f64..0.95) {
        let got = band_fraction(&[t0, t0 + len], lambda);
        let oracle = band_fraction_1d(t0, t0 + len, lambda);
        prop_assert!((got - oracle).abs() <= 1e-4, "{got} vs {oracle}");
    }

    #[test]
    fn fraction_above_decreases(ts in prop::collection::vec(-2.0f64..2.0, 3..5), c0 in -3.0f64..3.0, dc in 0.0f64..1.0) {
        prop_assert!(fraction_above(&ts, c0 + dc) <= fraction_above(&ts, c0) + 1e-12);
    }

    #[test]
    fn ladder_is_sorted_powers_of_two(kmin in 1u64..64, span in 0u64..4096) {
        let ladder = k_ladder(kmin, kmin + span);
        prop_assert!(ladder.windows(2).all(|w| w[1] == 2 * w[0]));
        prop_assert!(ladder.iter().all(|k| k.is_power_of_two() && *k >= kmin && *k <= kmin + span));
    }

    #[test]
    fn aitken_recovers_geometric_tails(limit in -10.0f64..10.0, amp in 0.1f64..5.0, r in 0.1f64..0.9) {
        let values: Vec<f64> = (0..6).map(|i| limit + amp * r.powi(i)).collect();
        let e = extrapolate(&values);
        prop_assert_eq!(e.method, ExtrapolationMethod::Aitken);
        prop_assert!(e.cauchy);
        prop_assert!((e.limit - limit).abs() <= 1e-9 * (1.0 + limit.abs()));
    }
}

fn concentration(b: Vec<f64>) -> SequenceSpec {
    SequenceSpec::Concentration {
        profile: Profile::radial_bump(&b, 2).unwrap(),
        x0: vec![0.0, 0.0],
        p: 2.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn concentration_is_local_and_keeps_energy(b in prop::collection::vec(-1.0f64..1.0, 2)) {
        prop_assume!(b[0].abs() + b[1].abs() > 0.1);
        let mesh = domains::build_half_ball(&[0.0, 1.0], 1.0 / 64.0).unwrap().graded(&[0.0; 3], 0.15).unwrap();
        let oracle = std::f64::consts::PI * (b[0] * b[0] + b[1] * b[1]) / 3.0;
        let seq = concentration(b);
        let mut energies = Vec::new();
        for k in [1u64, 4, 8] {
            let grads = seq.materialize(&mesh, k).unwrap();
            for (c, g) in grads.iter().enumerate() {
                let outside = mesh.cell(c).iter().all(|&v| {
                    let x = mesh.vertices()[v];
                    (x[0] * x[0] + x[1] * x[1]).sqrt() >= 1.0 / k as f64
                });
                if outside {
                    prop_assert_eq!(g.norm(), 0.0);
                }
            }
            energies.push(grads.iter().zip(mesh.volumes()).map(|(s, v)| v * s.norm_sq()).sum::<f64>());
        }
        prop_assert!(energies.iter().all(|e| (e - oracle).abs() <= 0.03 * oracle), "{energies:?} vs {oracle}");
    }

    #[test]
    fn pairings_are_linear_in_the_test(alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let mesh = domains::build_ball(2, 0.2).unwrap();
        let a = Matrix::outer(&[1.0, 0.0], &[0.0, 1.0]);
        let seq = SequenceSpec::Laminate { a, b: -a, lambda: 0.5, direction: vec![0.0, 1.0], base: None };
        let v1 = Integrand::power_norm(2, 2, 2.0, 1.0).unwrap();
        let v2 = Integrand::determinant(2).unwrap();
        let combo = Integrand::combination(vec![(alpha, v1.clone()), (beta, v2.clone())]).unwrap();
        let dict = TestDictionary::new(
            2, 2, 2.0,
            vec![SpatialFn::Coordinate { index: 1 }],
            vec![v1, v2, combo],
        ).unwrap();
        let est = estimate_pairings(&seq, &mesh, &dict, &[16, 32]).unwrap();
        let u = dict.user_start();
        for g in 0..dict.spatial().len() {
            let p = |v: usize| est.pairing(g, v).unwrap().values.clone();
            let (p1, p2, pc) = (p(u), p(u + 1), p(u + 2));
            for i in 0..pc.len() {
                let expected = alpha * p1[i] + beta * p2[i];
                prop_assert!((pc[i] - expected).abs() <= 1e-10 * (1.0 + p1[i].abs() + p2[i].abs()));
            }
        }
    }
}

#[test]
fn atom_sphere_moments_are_normalized() {
    let mesh = domains::build_half_ball(&[0.0, 1.0], 1.0 / 32.0).unwrap().graded(&[0.0; 3], 0.15).unwrap();
    let dict = TestDictionary::new(2, 2, 2.0, vec![], vec![Integrand::determinant(2).unwrap()]).unwrap();
    let est = estimate_pairings(&concentration(vec![1.0, 0.5]), &mesh, &dict, &[1, 2, 4]).unwrap();
    assert_eq!(est.atoms.len(), 1);
    let atom = &est.atoms[0];
    assert!(atom.boundary);
    assert!((atom.sphere_moments[dict.mass_index()] - 1.0).abs() <= 1e-9);
    for m in &atom.sphere_moments {
        assert!(m.abs() <= 1.0 + 1e-9);
    }
}
