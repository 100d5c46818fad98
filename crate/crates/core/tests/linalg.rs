use ectonas_core::linalg::{svd, truncate, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn orthonormality_defect(q: &Matrix) -> f64 {
    let g = q.transpose().matmul(q).unwrap();
    let i = Matrix::identity(g.rows());
    g.data().iter().zip(i.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn matrix_strategy() -> impl Strategy<Value = Matrix> {
    (1usize..9, 1usize..9).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn decomposition_properties(a in matrix_strategy()) {
        let s = svd(&a).unwrap();
        let norm = a.frobenius_norm();
        prop_assert!(s.reconstruct().frobenius_distance(&a) <= 1e-8 * norm.max(1e-300));
        prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.sigma.iter().all(|&x| x >= 0.0));
        prop_assert!(orthonormality_defect(&s.u) <= 1e-9);
        prop_assert!(orthonormality_defect(&s.v) <= 1e-9);
    }

    #[test]
    fn truncation_error_is_the_discarded_spectrum(a in matrix_strategy(), pick in 0usize..8) {
        let s = svd(&a).unwrap();
        let r = 1 + pick % s.sigma.len();
        let (a_tilde, v_t) = truncate(&s, r).unwrap();
        let err = a_tilde.matmul(&v_t).unwrap().frobenius_distance(&a);
        let tail: f64 = s.sigma[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((err - tail).abs() <= 1e-8 * a.frobenius_norm().max(1.0));
    }
}

#[test]
fn rank_deficient_matrix_has_zero_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = gaussian(7, 2, &mut rng).matmul(&gaussian(2, 5, &mut rng)).unwrap();
    let s = svd(&a).unwrap();
    assert!(s.sigma[2..].iter().all(|&x| x <= 1e-12 * s.sigma[0]), "{:?}", s.sigma);
    let (a_tilde, v_t) = truncate(&s, 2).unwrap();
    assert!(a_tilde.matmul(&v_t).unwrap().frobenius_distance(&a) <= 1e-10 * a.frobenius_norm());
}

#[test]
fn truncation_beats_random_factorizations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let (m, n) = (rng.random_range(3..10), rng.random_range(3..10));
        let a = gaussian(m, n, &mut rng);
        let s = svd(&a).unwrap();
        let r = rng.random_range(1..s.sigma.len());
        let (a_tilde, v_t) = truncate(&s, r).unwrap();
        let best = a_tilde.matmul(&v_t).unwrap().frobenius_distance(&a);
        for trial in 0..200 {
            // Half the challengers are perturbations of the optimum itself.
            let (b, c) = if trial % 2 == 0 {
                (gaussian(m, r, &mut rng), gaussian(r, n, &mut rng))
            } else {
                let eps = 10f64.powi(-rng.random_range(1..6));
                let db = gaussian(m, r, &mut rng);
                let dc = gaussian(r, n, &mut rng);
                (
                    Matrix::from_fn(m, r, |i, j| a_tilde.get(i, j) + eps * db.get(i, j)),
                    Matrix::from_fn(r, n, |i, j| v_t.get(i, j) + eps * dc.get(i, j)),
                )
            };
            let err = b.matmul(&c).unwrap().frobenius_distance(&a);
            assert!(best <= err + 1e-12, "rank {r}: {best} > {err}");
        }
    }
}
