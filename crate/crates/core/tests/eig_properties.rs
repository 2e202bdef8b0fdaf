//! Randomized eigensolver properties: reconstruction, orthonormality, and
//! spectral shift invariance across the full size range.

use sadkit::numerics::{sym_eig, Matrix, RngStream};

fn random_symmetric(n: usize, stream: &mut RngStream) -> Matrix {
    let mut a = Matrix::from_vec(n, n, stream.gaussian(n * n)).unwrap();
    a.symmetrize();
    a
}

#[test]
fn reconstruction_and_orthonormality_sweep() {
    let mut stream = RngStream::new(2024, 0);
    let mut tested = 0;
    for n in 2..=64usize {
        for _ in 0..16 {
            let a = random_symmetric(n, &mut stream);
            let e = sym_eig(&a).unwrap();

            let rel = e.reconstruct().sub(&a).unwrap().frob_norm() / a.frob_norm();
            assert!(rel <= 1e-8, "n={} reconstruction error {:e}", n, rel);

            let gram = e.eigenvectors.transpose().matmul(&e.eigenvectors).unwrap();
            let ortho = gram.sub(&Matrix::identity(n)).unwrap().max_abs();
            assert!(ortho <= 1e-10, "n={} orthonormality error {:e}", n, ortho);

            for w in e.eigenvalues.windows(2) {
                assert!(w[0] >= w[1], "eigenvalues not descending");
            }
            tested += 1;
        }
    }
    assert!(tested >= 1000, "covered {} matrices", tested);
}

#[test]
fn shift_moves_spectrum_only() {
    let mut stream = RngStream::new(2025, 0);
    for _ in 0..50 {
        let n = 2 + stream.below(15);
        let a = random_symmetric(n, &mut stream);
        let c = 4.0 * (stream.uniform() - 0.5);
        let shifted = a.add(&Matrix::identity(n).scale(c)).unwrap();
        let ea = sym_eig(&a).unwrap();
        let es = sym_eig(&shifted).unwrap();
        for (l, ls) in ea.eigenvalues.iter().zip(&es.eigenvalues) {
            assert!((ls - l - c).abs() <= 1e-10, "shift violated: {} vs {} + {}", ls, l, c);
        }
    }
}
