use proptest::prelude::*;
use qtime_core::linalg::{
    c, hermiticity_error, max_abs, max_abs_diff, trace, trace_of_product, CMatrix,
};
use qtime_core::pauli::{enumerate_basis, expand_traceless, generator_count, Parity};

/// Random traceless Hermitian matrix of dimension `dim` from flat entries.
fn traceless_hermitian(dim: usize, raw: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    let mut it = raw.iter().cycle();
    for i in 0..dim {
        m[(i, i)] = c(*it.next().unwrap(), 0.0);
        for j in i + 1..dim {
            let z = c(*it.next().unwrap(), *it.next().unwrap());
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    let shift = trace(&m) / c(dim as f64, 0.0);
    for i in 0..dim {
        m[(i, i)] -= shift;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_reconstructs_traceless_hermitian(
        n in 1usize..=3,
        raw in prop::collection::vec(-2.0f64..2.0, 64),
    ) {
        let dim = 1usize << n;
        let a = traceless_hermitian(dim, &raw);
        prop_assert!(hermiticity_error(&a) < 1e-14);
        let exp = expand_traceless(&a, n, false).unwrap();
        let back = exp.reconstruct().unwrap();
        prop_assert!(max_abs_diff(&a, &back) < 1e-10 * max_abs(&a).max(1.0));
        let total: f64 = exp.weight_norms.values().sum();
        let frob: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((total - frob).abs() < 1e-10 * frob.max(1.0));
    }

    #[test]
    fn weight_projections_sum_to_the_operator(
        n in 2usize..=3,
        raw in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let a = traceless_hermitian(1 << n, &raw);
        let exp = expand_traceless(&a, n, false).unwrap();
        let low = exp.project_weights(|w| w <= 2);
        let high = exp.project_weights(|w| w > 2);
        prop_assert!(max_abs_diff(&(low + high), &a) < 1e-10);
    }
}

#[test]
fn generators_are_orthonormal_up_to_five_qubits() {
    for n in 1..=5 {
        let basis = enumerate_basis(n).unwrap();
        assert_eq!(basis.len(), generator_count(n));
        assert_eq!(basis.len(), 9 * n * (n - 1) / 2 + 3 * n);
        let mats = basis.matrices();
        for a in 0..mats.len() {
            for b in a..mats.len() {
                let g = trace_of_product(&mats[a], &mats[b]);
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (g - c(expected, 0.0)).norm() < 1e-12,
                    "n={n} pair ({a},{b}) gives {g}"
                );
            }
        }
    }
}

#[test]
fn parity_tags_match_matrix_reality() {
    for n in 1..=4 {
        let basis = enumerate_basis(n).unwrap();
        for (m, p) in basis.matrices().iter().zip(basis.parity()) {
            let re = m.iter().fold(0.0_f64, |acc, z| acc.max(z.re.abs()));
            let im = m.iter().fold(0.0_f64, |acc, z| acc.max(z.im.abs()));
            match p {
                Parity::Symmetric => assert!(im < 1e-14),
                Parity::Antisymmetric => assert!(re < 1e-14),
            }
        }
    }
}
