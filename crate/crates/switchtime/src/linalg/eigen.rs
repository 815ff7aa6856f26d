//! General real eigendecomposition via the real Schur form.
//!
//! nalgebra ships a real Schur decomposition but no eigenvector extraction
//! for non-symmetric matrices. We promote the quasi-triangular factor to a
//! genuinely triangular complex matrix by rotating each 2x2 block with a
//! unitary similarity, then back-substitute for the eigenvectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

type C = Complex<f64>;

/// Complex eigenvalues and right eigenvectors of a real square matrix.
///
/// Returns `None` when the Schur iteration fails to converge. Repeated or
/// defective eigenvalues still produce output here; callers must judge the
/// quality of `Y` (conditioning, reconstruction) before trusting it.
pub fn complex_eigen(m: &DMatrix<f64>) -> Option<(DVector<C>, DMatrix<C>)> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eigendecomposition requires a square matrix");
    if n == 0 {
        return Some((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    if n == 1 {
        return Some((
            DVector::from_element(1, C::new(m[(0, 0)], 0.0)),
            DMatrix::from_element(1, 1, C::new(1.0, 0.0)),
        ));
    }

    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)?;
    let (q, t) = schur.unpack();

    // Promote to complex; `u` becomes upper triangular, `z` stays unitary
    // with m = z u z*.
    let mut u = t.map(|v| C::new(v, 0.0));
    let mut z = q.map(|v| C::new(v, 0.0));

    let block_tol = f64::EPSILON * t.norm().max(1.0);
    let mut k = 0;
    while k + 1 < n {
        if t[(k + 1, k)].abs() <= block_tol {
            u[(k + 1, k)] = C::new(0.0, 0.0);
            k += 1;
            continue;
        }
        // 2x2 block with a complex conjugate eigenvalue pair.
        let (a, b) = (t[(k, k)], t[(k, k + 1)]);
        let (c, d) = (t[(k + 1, k)], t[(k + 1, k + 1)]);
        let mean = 0.5 * (a + d);
        let disc = 0.25 * (a - d) * (a - d) + b * c;
        if disc >= 0.0 {
            // Real eigenvalues in an unreduced block: split with a real
            // rotation is possible, but simply treating the larger
            // eigenvector problem is easier here; fall back to flagging.
            return None;
        }
        let nu = (-disc).sqrt();
        let lambda = C::new(mean, nu);
        // Eigenvector of the block for λ, from whichever row is better
        // conditioned.
        let v = if b.abs() >= c.abs() {
            [C::new(b, 0.0), lambda - C::new(a, 0.0)]
        } else {
            [lambda - C::new(d, 0.0), C::new(c, 0.0)]
        };
        let scale = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        let v = [v[0] / scale, v[1] / scale];
        // Unitary W = [v, v_perp]; W* B W = [[λ, *], [0, λ̄]].
        let w = [[v[0], -v[1].conj()], [v[1], v[0].conj()]];

        // u <- W_full* u W_full on rows/columns {k, k+1}.
        for j in 0..n {
            let (r0, r1) = (u[(k, j)], u[(k + 1, j)]);
            u[(k, j)] = w[0][0].conj() * r0 + w[1][0].conj() * r1;
            u[(k + 1, j)] = w[0][1].conj() * r0 + w[1][1].conj() * r1;
        }
        for i in 0..n {
            let (c0, c1) = (u[(i, k)], u[(i, k + 1)]);
            u[(i, k)] = c0 * w[0][0] + c1 * w[1][0];
            u[(i, k + 1)] = c0 * w[0][1] + c1 * w[1][1];
            let (z0, z1) = (z[(i, k)], z[(i, k + 1)]);
            z[(i, k)] = z0 * w[0][0] + z1 * w[1][0];
            z[(i, k + 1)] = z0 * w[0][1] + z1 * w[1][1];
        }
        u[(k + 1, k)] = C::new(0.0, 0.0);
        k += 2;
    }

    // Eigenvectors of the triangular factor by back-substitution, guarded
    // against (numerically) repeated eigenvalues.
    let norm_u = u.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let den_floor = f64::EPSILON * norm_u.max(1e-300);
    let mut vectors = DMatrix::<C>::zeros(n, n);
    let mut work = vec![C::new(0.0, 0.0); n];
    for j in 0..n {
        for item in work.iter_mut() {
            *item = C::new(0.0, 0.0);
        }
        work[j] = C::new(1.0, 0.0);
        for k in (0..j).rev() {
            let mut s = C::new(0.0, 0.0);
            for (m_idx, wm) in work.iter().enumerate().take(j + 1).skip(k + 1) {
                s += u[(k, m_idx)] * *wm;
            }
            let mut den = u[(k, k)] - u[(j, j)];
            if den.norm() < den_floor {
                den = C::new(den_floor, 0.0);
            }
            work[k] = -s / den;
        }
        let scale = work
            .iter()
            .take(j + 1)
            .map(|v| v.norm())
            .fold(0.0f64, f64::max);
        for item in work.iter_mut().take(j + 1) {
            *item /= scale;
        }
        // Back to the original basis: y_j = Z w.
        for i in 0..n {
            let mut acc = C::new(0.0, 0.0);
            for (m_idx, wm) in work.iter().enumerate().take(j + 1) {
                acc += z[(i, m_idx)] * *wm;
            }
            vectors[(i, j)] = acc;
        }
    }

    let values = DVector::from_iterator(n, (0..n).map(|i| u[(i, i)]));
    Some((values, vectors))
}
