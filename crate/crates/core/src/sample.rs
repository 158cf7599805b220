//! Seeded random generators for matrices, states, and measurements.
//!
//! Used by the randomized test suites and by callers that want reproducible
//! random instances. All functions are deterministic given the `Rng` state.

use rand::Rng;

use crate::linalg::{c, CMatrix};

/// Complex Ginibre matrix: i.i.d. standard-normal-ish entries (uniform
/// centered entries are sufficient for generic-position instances).
pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    })
}

/// Random Hermitian matrix.
pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMatrix {
    random_matrix(rng, n, n).hermitize()
}

/// Random positive definite matrix `G G^dagger + delta I`.
pub fn random_pd(rng: &mut impl Rng, n: usize, delta: f64) -> CMatrix {
    let g = random_matrix(rng, n, n);
    &(&g * &g.adjoint()) + &CMatrix::identity(n).scale_re(delta)
}

/// Random unit column vector.
pub fn random_unit_ket(rng: &mut impl Rng, n: usize) -> CMatrix {
    loop {
        let v = random_matrix(rng, n, 1);
        let norm = v.frobenius_norm();
        if norm > 1e-6 {
            return v.scale_re(1.0 / norm);
        }
    }
}

/// Random `n x n` matrix with unit Frobenius norm; as `|A>>` this is a random
/// pure state on the doubled space.
pub fn random_unit_input(rng: &mut impl Rng, n: usize) -> CMatrix {
    loop {
        let a = random_matrix(rng, n, n);
        let norm = a.frobenius_norm();
        if norm > 1e-6 {
            return a.scale_re(1.0 / norm);
        }
    }
}

/// Random rank-`rank` orthogonal projector via Gram-Schmidt.
pub fn random_projector(rng: &mut impl Rng, n: usize, rank: usize) -> CMatrix {
    assert!(rank <= n, "rank exceeds dimension");
    let mut basis: Vec<CMatrix> = Vec::new();
    while basis.len() < rank {
        let mut v = random_matrix(rng, n, 1);
        for b in &basis {
            let overlap = (&b.adjoint() * &v).get(0, 0);
            v = &v - &b.scale(overlap);
        }
        let norm = v.frobenius_norm();
        if norm > 1e-6 {
            basis.push(v.scale_re(1.0 / norm));
        }
    }
    let mut p = CMatrix::zeros(n, n);
    for b in &basis {
        p = &p + &(b * &b.adjoint());
    }
    p
}

/// Random POVM with `k` outcomes: Gram matrices normalized to resolve the
/// identity via the symmetric square-root of their sum.
pub fn random_povm(rng: &mut impl Rng, dim: usize, k: usize) -> Vec<CMatrix> {
    assert!(k >= 2, "a POVM needs at least two outcomes");
    let parts: Vec<CMatrix> = (0..k)
        .map(|_| {
            let g = random_matrix(rng, dim, dim);
            &g * &g.adjoint()
        })
        .collect();
    let mut sum = CMatrix::zeros(dim, dim);
    for e in &parts {
        sum = &sum + e;
    }
    let inv_sqrt = sum
        .pinv_on_support(crate::linalg::DEFAULT_SUPPORT_TOL)
        .expect("sum of random Gram matrices is PD")
        .sqrt_psd()
        .expect("pseudo-inverse of PD matrix is PSD");
    parts
        .into_iter()
        .map(|e| (&(&inv_sqrt * &e) * &inv_sqrt).hermitize())
        .collect()
}
