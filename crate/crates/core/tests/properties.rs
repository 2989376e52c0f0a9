use proptest::prelude::*;
use qcb_core::domains::{self, cell_gradients, Constraint, DisplacementField, DomainMesh};
use qcb_core::integrands::{self, sphere_split};
use qcb_core::relaxation::{self, Energy, SolverOptions};
use qcb_core::{Integrand, Matrix};

fn matrix(m: usize, n: usize, bound: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-bound..bound, m * n).prop_map(move |v| Matrix::from_row_major(m, n, &v).unwrap())
}

fn homogeneous_families() -> Vec<Integrand> {
    let a = [1.0, -0.5, 0.25];
    vec![
        Integrand::power_norm(2, 2, 2.0, 1.0).unwrap(),
        Integrand::power_norm(3, 3, 3.5, 0.7).unwrap(),
        Integrand::determinant(2).unwrap(),
        Integrand::determinant(3).unwrap(),
        Integrand::cofactor_contraction(a, [0.0, 0.0, 1.0]).unwrap(),
        Integrand::cofactor_contraction([1.0, 0.0, 0.0], [0.6, 0.0, 0.8]).unwrap(),
    ]
}

fn all_families() -> Vec<Integrand> {
    let a = Matrix::outer(&[1.0, 0.0], &[0.0, 1.0]);
    let mut v = homogeneous_families();
    v.push(Integrand::double_well(a, -a).unwrap());
    v.push(Integrand::quartic_well(1, 1).unwrap());
    v.push(Integrand::mass(2, 2, 2.0).unwrap());
    v.push(
        Integrand::combination(vec![
            (1.0, Integrand::power_norm(2, 2, 2.0, 1.0).unwrap()),
            (-0.5, Integrand::determinant(2).unwrap()),
        ])
        .unwrap(),
    );
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn homogeneity(entries in prop::collection::vec(-3.0f64..3.0, 9)) {
        for v in homogeneous_families() {
            let s = Matrix::from_row_major(v.m(), v.n(), &entries[..v.m() * v.n()]).unwrap();
            let base = v.eval(&s);
            for lambda in [0.0f64, 0.5, 2.0, 10.0] {
                let expected = lambda.powf(v.p()) * base;
                let got = v.eval(&s.scale(lambda));
                let tol = 1e-12 * expected.abs().max(lambda.powf(v.p()) * s.norm().powf(v.p())).max(1e-300);
                prop_assert!((got - expected).abs() <= tol, "{} at λ={lambda}: {got} vs {expected}", v.name());
            }
        }
    }

    #[test]
    fn cofactor_identity(s in matrix(3, 3, 4.0)) {
        let prod = s.matmul(&s.cofactor().transpose());
        let scale = s.norm().powi(3).max(1e-12);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { s.det() } else { 0.0 };
                prop_assert!((prod.get(i, j) - expected).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn growth_bound(entries in prop::collection::vec(-1.0f64..1.0, 9), radius in 0.0f64..1e3) {
        for v in all_families() {
            let raw = Matrix::from_row_major(v.m(), v.n(), &entries[..v.m() * v.n()]).unwrap();
            let s = if raw.norm() > 0.0 { raw.scale(radius / raw.norm()) } else { raw };
            let bound = v.growth_const() * (1.0 + s.norm().powf(v.p()));
            prop_assert!(v.eval(&s).abs() <= bound * (1.0 + 1e-12), "{} at |s|={radius}", v.name());
        }
    }

    #[test]
    fn sphere_split_reconstructs(samples in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 4), 1..8)) {
        let a = Matrix::outer(&[1.0, 0.0], &[0.0, 1.0]);
        for v in [
            Integrand::double_well(a, -a).unwrap(),
            Integrand::power_norm(2, 2, 2.0, 1.0).unwrap(),
            Integrand::determinant(2).unwrap(),
        ] {
            let split = sphere_split(&v).unwrap();
            let pts: Vec<Matrix> = samples.iter().map(|e| Matrix::from_row_major(2, 2, e).unwrap()).collect();
            prop_assert!(split.reconstruction_residual(&pts) <= 1e-6);
        }
    }
}

fn meshes() -> Vec<DomainMesh> {
    vec![
        domains::build_ball(2, 0.3).unwrap(),
        domains::build_ball(3, 0.5).unwrap(),
        domains::build_half_ball(&[0.0, 1.0], 0.3).unwrap(),
        domains::build_half_ball(&[0.0, 0.0, 1.0], 0.5).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn affine_fields_have_exact_gradients(a in matrix(3, 3, 5.0), c in prop::collection::vec(-1.0f64..1.0, 3)) {
        for mesh in meshes() {
            let n = mesh.dim();
            let coarse = Matrix::from_row_major(2, n, &a.to_row_major()[..2 * n]).unwrap();
            let u = DisplacementField::from_fn(&mesh, 2, Constraint::Free, |x| {
                let y = coarse.apply(&x[..n]);
                vec![y[0] + c[0], y[1] + c[1]]
            });
            for g in cell_gradients(&mesh, &u) {
                prop_assert!((g - coarse).max_abs() <= 1e-12 * (1.0 + coarse.max_abs()));
            }
        }
    }

    #[test]
    fn dirichlet_mask_keeps_gamma_values(values in prop::collection::vec(-1.0f64..1.0, 1..400)) {
        let mesh = domains::build_half_ball(&[0.0, 1.0], 0.25).unwrap();
        let mut u = DisplacementField::zeros(&mesh, 1, Constraint::GammaFree);
        for v in 0..mesh.vertex_count() {
            u.values[v] = values[v % values.len()] + 2.0;
        }
        u.apply_mask();
        for v in 0..mesh.vertex_count() {
            if mesh.on_dirichlet(v) {
                prop_assert_eq!(u.values[v], 0.0);
            } else if mesh.on_gamma(v) {
                prop_assert!(u.values[v] != 0.0);
            }
        }
    }

    #[test]
    fn null_lagrangian_on_zero_trace_fields(values in prop::collection::vec(-1.0f64..1.0, 16), dim in 2usize..4) {
        let mesh = domains::build_ball(dim, if dim == 2 { 0.2 } else { 0.4 }).unwrap();
        let u = DisplacementField::from_fn(&mesh, dim, Constraint::Dirichlet, |x| {
            (0..dim)
                .map(|i| {
                    let k = &values[4 * i..4 * i + 4];
                    k[0] * (3.0 * x[0] + k[1]).sin() + k[2] * (2.0 * x[1] * x[dim - 1] + k[3]).cos()
                })
                .collect()
        });
        let grads = cell_gradients(&mesh, &u);
        let total: f64 = grads.iter().zip(mesh.volumes()).map(|(g, v)| v * g.det()).sum();
        let norm: f64 = grads.iter().zip(mesh.volumes()).map(|(g, v)| v * g.norm_sq()).sum();
        prop_assert!(total.abs() <= 1e-6 * norm.max(1e-300), "{total} vs {norm}");
    }

    #[test]
    fn homogeneous_energy_scales(values in prop::collection::vec(-1.0f64..1.0, 64), lambda in 0.1f64..8.0) {
        let mesh = domains::build_half_ball(&[0.0, 1.0], 0.25).unwrap();
        for v in [Integrand::determinant(2).unwrap(), Integrand::power_norm(2, 2, 3.0, 1.0).unwrap()] {
            let energy = Energy::new(&mesh, &v, v.zero_matrix(), Constraint::GammaFree, None).unwrap();
            let mut u = DisplacementField::zeros(&mesh, 2, Constraint::GammaFree);
            for (i, x) in u.values.iter_mut().enumerate() {
                *x = values[i % values.len()] * (1.0 + (i as f64).sin());
            }
            u.apply_mask();
            let e1 = energy.energy_of(&u);
            let e2 = energy.energy_of(&u.scaled(lambda));
            prop_assert!((e2 - lambda.powf(v.p()) * e1).abs() <= 1e-8 * (lambda.powf(v.p()) * e1).abs().max(1e-300));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn zero_field_is_admissible(s0 in matrix(2, 2, 2.0), seed in 0u64..1000) {
        let mesh = domains::build_ball(2, 0.4).unwrap();
        let a = Matrix::outer(&[1.0, 0.0], &[0.0, 1.0]);
        let opts = SolverOptions { multistart: 3, max_iter: 60, seed, ..SolverOptions::default() };
        for v in [Integrand::double_well(a, -a).unwrap(), Integrand::determinant(2).unwrap()] {
            let r = relaxation::quasiconvex_envelope(&v, &s0, &mesh, &opts).unwrap();
            prop_assert!(r.value <= v.eval(&s0) + 1e-12);
            prop_assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn boundary_envelope_below_envelope(seed in 0u64..1000) {
        let opts = SolverOptions { multistart: 3, max_iter: 80, seed, ..SolverOptions::default() };
        let rho = [0.0, 1.0];
        for v in [Integrand::determinant(2).unwrap(), Integrand::power_norm(2, 2, 2.0, 1.0).unwrap()] {
            let qb = relaxation::boundary_quasiconvexification(&v, &rho, &domains::build_half_ball(&rho, 0.3).unwrap(), &opts).unwrap();
            let q = relaxation::quasiconvex_envelope(&v, &v.zero_matrix(), &domains::build_ball(2, 0.3).unwrap(), &opts).unwrap();
            prop_assert!(qb.value <= q.value + qb.eps_cls);
        }
    }
}

#[test]
fn refinement_does_not_raise_the_envelope() {
    let a = Matrix::outer(&[1.0, 0.0], &[0.0, 1.0]);
    let v = Integrand::double_well(a, -a).unwrap();
    let s0 = Matrix::zeros(2, 2);
    let opts = SolverOptions {
        multistart: 4,
        ..SolverOptions::default()
    };
    let coarse = relaxation::quasiconvex_envelope(&v, &s0, &domains::build_ball(2, 0.4).unwrap(), &opts).unwrap();
    let fine = relaxation::quasiconvex_envelope(&v, &s0, &domains::build_ball(2, 0.2).unwrap(), &opts).unwrap();
    assert!(fine.value <= coarse.value + 1e-8, "{} > {}", fine.value, coarse.value);
}

#[test]
fn recession_of_double_well_is_homogeneous() {
    let a = Matrix::outer(&[1.0, 0.0], &[0.0, 1.0]);
    let v = Integrand::double_well(a, -a).unwrap();
    let r = v.recession_integrand().unwrap();
    assert!(r.is_homogeneous());
    let s = Matrix::from_row_major(2, 2, &[0.3, -1.0, 2.0, 0.5]).unwrap();
    let s = s.scale(1.0 / s.norm());
    let est = integrands::recession_estimate(&v, &s, &[1e4, 1e6, 1e8]).unwrap();
    assert!((est.value - r.eval(&s)).abs() <= 1e-6 * r.eval(&s).abs());
}
