use approx::assert_relative_eq;
use proptest::prelude::*;

use dhl_core::exponents::{lambda_mu_of_matrix, lambda_of_region, profile_of_field};
use dhl_core::fields::periodize;
use dhl_core::homogenize::shift_nodal;
use dhl_core::regularity::harnack_quotient;
use dhl_core::solver::{energy, solve_corrector, solve_corrector_for, solve_dirichlet, weak_residual, SolverOptions};
use dhl_core::{derive_exponents, ExtReal, Grid, MatrixField, Mesh, ScalarField, Topology};

fn exponent() -> impl Strategy<Value = ExtReal> {
    prop_oneof![4 => (1.01f64..40.0).prop_map(ExtReal::Finite), 1 => Just(ExtReal::Infinite)]
}

fn weights(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-3.0f64..3.0).prop_map(f64::exp), len)
}

fn box_field(n: usize, w: &[f64]) -> MatrixField {
    MatrixField::from_scalar_values(Grid::new(2, n, 2.0, Topology::Box).unwrap(), w).unwrap()
}

fn torus_field(n: usize, w: &[f64]) -> MatrixField {
    let side = n as f64;
    periodize(&MatrixField::from_scalar_values(Grid::new(2, n, side, Topology::Box).unwrap(), w).unwrap(), side).unwrap()
}

fn refine(w: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; 4 * n * n];
    for j in 0..2 * n {
        for i in 0..2 * n {
            out[j * 2 * n + i] = w[(j / 2) * n + i / 2];
        }
    }
    out
}

fn boundary(x: &[f64; 3]) -> f64 {
    1.0 + x[0] - 0.3 * x[1] * x[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_positive_iff_sharp(d in 2usize..5, p in exponent(), q in exponent()) {
        let e = derive_exponents(d, p, q).unwrap();
        prop_assert_eq!(e.delta > 0.0, e.sharp_ok);
        if e.sharp_ok {
            prop_assert!(e.s >= 1.0);
            prop_assert!(e.p_star >= 1.0);
        }
    }

    #[test]
    fn conditioning_is_at_least_one(w in weights(64), p in exponent(), q in exponent()) {
        let profile = profile_of_field(&box_field(8, &w)).unwrap();
        let cells: Vec<usize> = (0..64).collect();
        let lam = lambda_of_region(&profile, &cells, p, q).unwrap().to_f64();
        prop_assert!(lam >= 1.0 - 1e-12);
    }

    #[test]
    fn conditioning_ignores_labels_and_refinement(w in weights(64), seed in 0usize..64) {
        let (p, q) = (ExtReal::Finite(3.0), ExtReal::Finite(2.5));
        let cells: Vec<usize> = (0..64).collect();
        let base = lambda_of_region(&profile_of_field(&box_field(8, &w)).unwrap(), &cells, p, q).unwrap().to_f64();
        let mut shuffled = w.clone();
        shuffled.rotate_left(seed);
        shuffled.reverse();
        let relabeled = lambda_of_region(&profile_of_field(&box_field(8, &shuffled)).unwrap(), &cells, p, q).unwrap().to_f64();
        assert_relative_eq!(base, relabeled, max_relative = 1e-12);
        let fine: Vec<usize> = (0..256).collect();
        let refined = lambda_of_region(&profile_of_field(&box_field(16, &refine(&w, 8))).unwrap(), &fine, p, q).unwrap().to_f64();
        assert_relative_eq!(base, refined, max_relative = 1e-12);
    }

    #[test]
    fn ellipticity_brackets_the_spectrum(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, skew in -2.0f64..2.0) {
        // Symmetric part [[a² + 0.1, ab], [ab, b² + c² + 0.1]] is positive definite.
        let s = [a * a + 0.1, a * b, a * b, b * b + c * c + 0.1];
        let m = [s[0], s[1] + skew, s[2] - skew, s[3]];
        let e = lambda_mu_of_matrix(&m, 2).unwrap();
        let tr = s[0] + s[3];
        let det = s[0] * s[3] - s[1] * s[2];
        let top = 0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
        let mu = e.mu.to_f64();
        prop_assert!(e.lambda > 0.0);
        prop_assert!(e.lambda <= top * (1.0 + 1e-9));
        prop_assert!(mu >= top * (1.0 - 1e-9));
        // |Aξ|²/(ξ·Aξ) ≥ ξ·Aξ/|ξ|² along any direction.
        for t in [0.0f64, 0.7, 1.9, 2.8] {
            let xi = [t.cos(), t.sin()];
            let ax = [m[0] * xi[0] + m[1] * xi[1], m[2] * xi[0] + m[3] * xi[1]];
            let quad = xi[0] * ax[0] + xi[1] * ax[1];
            prop_assert!((ax[0] * ax[0] + ax[1] * ax[1]) / quad <= mu * (1.0 + 1e-9));
            prop_assert!(quad >= e.lambda * (1.0 - 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dirichlet_solution_is_galerkin_and_minimal(w in weights(256), node in 0usize..289, bump in -0.5f64..0.5) {
        let field = box_field(16, &w);
        let mesh = Mesh::new(field.grid);
        let u = solve_dirichlet(&field, &mesh, boundary).unwrap();
        let r = weak_residual(&field, &mesh, &u.values, None);
        let scale = energy(&field, &mesh, &u.values, None).sqrt();
        for i in 0..field.grid.num_nodes() {
            if !field.grid.is_boundary_node(i) {
                prop_assert!(r[i].abs() <= 1e-7 * scale.max(1.0));
            }
        }
        if !field.grid.is_boundary_node(node) && bump != 0.0 {
            let mut v = u.values.clone();
            v[node] += bump;
            prop_assert!(energy(&field, &mesh, &v, None) > energy(&field, &mesh, &u.values, None));
        }
    }

    #[test]
    fn solution_is_invariant_under_coefficient_scaling(w in weights(256), t in 0.01f64..100.0) {
        let field = box_field(16, &w);
        let mesh = Mesh::new(field.grid);
        let u = solve_dirichlet(&field, &mesh, boundary).unwrap();
        let v = solve_dirichlet(&field.scaled(t), &mesh, boundary).unwrap();
        for (a, b) in u.values.iter().zip(&v.values) {
            prop_assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn corrector_is_mean_zero_and_linear(w in weights(256)) {
        let field = torus_field(16, &w);
        let mesh = Mesh::new(field.grid);
        let opts = SolverOptions::default();
        let phi1 = solve_corrector(&field, &mesh, 0).unwrap();
        let phi2 = solve_corrector(&field, &mesh, 1).unwrap();
        let both = solve_corrector_for(&field, &mesh, &[1.0, 1.0, 0.0], &opts).unwrap();
        prop_assert!(phi1.mean().abs() < 1e-12);
        prop_assert!(both.mean().abs() < 1e-12);
        let scale = phi1.max_abs().max(phi2.max_abs()).max(1e-3);
        for i in 0..phi1.values.len() {
            prop_assert!((both.values[i] - phi1.values[i] - phi2.values[i]).abs() <= 1e-7 * scale);
        }
    }

    #[test]
    fn corrector_follows_cell_shifts(w in weights(256), sx in 0i64..16, sy in 0i64..16) {
        let field = torus_field(16, &w);
        let mesh = Mesh::new(field.grid);
        let phi = solve_corrector(&field, &mesh, 0).unwrap();
        let moved = solve_corrector(&field.shifted([sx, sy, 0]), &mesh, 0).unwrap();
        let expected = shift_nodal(&phi, [sx, sy, 0]);
        let scale = phi.max_abs().max(1e-3);
        for (a, b) in moved.values.iter().zip(&expected.values) {
            prop_assert!((a - b).abs() <= 1e-7 * scale);
        }
    }

    #[test]
    fn corrector_flux_is_divergence_free(w in weights(256)) {
        let field = torus_field(16, &w);
        let mesh = Mesh::new(field.grid);
        let phi = solve_corrector(&field, &mesh, 1).unwrap();
        let r = weak_residual(&field, &mesh, &phi.values, Some(&[0.0, 1.0, 0.0]));
        let total: f64 = r.iter().sum();
        let scale = w.iter().cloned().fold(0.0, f64::max);
        prop_assert!(total.abs() <= 1e-10 * scale);
        prop_assert!(r.iter().all(|x| x.abs() <= 1e-7 * scale));
    }

    #[test]
    fn harnack_quotient_is_scale_free(t in 0.1f64..50.0, c in 1.5f64..4.0) {
        let g = Grid::new(2, 32, 2.0, Topology::Box).unwrap();
        let u = ScalarField::from_fn(g, |x| c + x[0] - 0.5 * x[1]);
        let a = harnack_quotient(&u, [0.0; 3], 1.0, 0.5).unwrap().quotient;
        let b = harnack_quotient(&u.scaled(t), [0.0; 3], 1.0, 0.5).unwrap().quotient;
        assert_relative_eq!(a, b, max_relative = 1e-12);
        prop_assert!(a >= 1.0);
    }
}

#[test]
fn binary_roundtrip_preserves_fields() {
    let w: Vec<f64> = (0..64).map(|i| 1.0 + (i % 7) as f64).collect();
    let field = box_field(8, &w);
    let back = MatrixField::read_from(&mut field.to_bytes().as_slice()).unwrap();
    assert_eq!(field, back);
    let mesh = Mesh::new(field.grid);
    let u = solve_dirichlet(&field, &mesh, boundary).unwrap();
    let read = ScalarField::read_from(&mut u.to_bytes().as_slice(), 2.0).unwrap();
    assert_eq!(read.values, u.values);
    assert_eq!(read.meta.residual, u.meta.residual);
}
