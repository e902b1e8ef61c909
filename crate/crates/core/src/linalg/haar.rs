use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::{dot, norm2, DenseMatrix};

/// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with
/// the diagonal of R made positive.
///
/// Gram-Schmidt with one re-orthogonalization pass produces exactly that R
/// normalization, and the second pass keeps Q orthonormal to rounding.
pub fn qr_haar<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DenseMatrix {
    assert!(n >= 1, "qr_haar needs n >= 1");
    // rows of `q` are the columns of the Gaussian matrix, orthonormalized in turn
    let mut q = vec![0.0; n * n];
    for x in q.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    for i in 0..n {
        let (done, rest) = q.split_at_mut(i * n);
        let qi = &mut rest[..n];
        for _ in 0..2 {
            for j in 0..i {
                let qj = &done[j * n..(j + 1) * n];
                let proj = dot(qj, qi);
                for (a, &b) in qi.iter_mut().zip(qj) {
                    *a -= proj * b;
                }
            }
        }
        let nrm = norm2(qi);
        for a in qi.iter_mut() {
            *a /= nrm;
        }
    }
    DenseMatrix::from_row_major(n, n, q)
        .expect("finite Gaussian samples")
        .transpose()
}

/// Spectral norm estimate by power iteration on `A^T A`.
///
/// Returns a lower bound that is accurate to a few digits after `iters`
/// steps from a deterministic start vector.
pub fn spectral_norm_estimate(a: &DenseMatrix, iters: usize) -> f64 {
    let n = a.cols();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let nx = norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|t| *t /= nx);
        let y = a.matvec(&x);
        est = norm2(&y);
        x = a.matvec_t(&y);
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 7, 40] {
            let q = qr_haar(n, &mut rng);
            assert!(q.orthonormality_defect() < 1e-12);
        }
    }

    #[test]
    fn one_by_one_takes_both_signs() {
        let signs: Vec<f64> = (0..40)
            .map(|s| qr_haar(1, &mut ChaCha8Rng::seed_from_u64(s))[(0, 0)])
            .collect();
        assert!(signs.iter().all(|x| x.abs() == 1.0));
        assert!(signs.iter().any(|&x| x > 0.0) && signs.iter().any(|&x| x < 0.0));
    }

    #[test]
    fn norm_of_diagonal() {
        let a = DenseMatrix::from_diagonal(&[1.0, -5.0, 2.0]);
        assert!((spectral_norm_estimate(&a, 100) - 5.0).abs() < 1e-8);
    }
}
