//! Matrix-exponential kernels.
//!
//! `expm` is the scaling-and-squaring method with a degree-13 Padé
//! approximant. `van_loan` evaluates the block exponential of
//! `G = [-Aᵀ Q; 0 A]` whose upper-right block yields both the transition
//! matrix `e^{Aδ}` and the running-cost integral `∫ e^{Aᵀη} Q e^{Aη} dη` in a
//! single call. For fixed linear modes the same blocks come from scalar
//! exponentials of precomputed eigenvalues.

mod eigen;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

type C = Complex<f64>;

/// Scaling threshold for the degree-13 Padé approximant.
const PADE13_THETA: f64 = 5.371920351148152;

/// Padé-13 numerator coefficients.
const PADE13_B: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        let mut s = 0.0;
        for i in 0..m.nrows() {
            s += m[(i, j)].abs();
        }
        worst = worst.max(s);
    }
    worst
}

fn one_norm_c(m: &DMatrix<C>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        let mut s = 0.0;
        for i in 0..m.nrows() {
            s += m[(i, j)].norm();
        }
        worst = worst.max(s);
    }
    worst
}

/// Matrix exponential by scaling and squaring with Padé(13, 13).
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "expm requires a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expm input".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if n == 1 {
        return Ok(DMatrix::from_element(1, 1, m[(0, 0)].exp()));
    }

    let norm = one_norm(m);
    let squarings = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);

    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * PADE13_B[13] + &a4 * PADE13_B[11] + &a2 * PADE13_B[9];
    let u_poly =
        &a6 * &u_inner + &a6 * PADE13_B[7] + &a4 * PADE13_B[5] + &a2 * PADE13_B[3] + &eye * PADE13_B[1];
    let u = &scaled * u_poly;

    let v_inner = &a6 * PADE13_B[12] + &a4 * PADE13_B[10] + &a2 * PADE13_B[8];
    let v =
        &a6 * &v_inner + &a6 * PADE13_B[6] + &a4 * PADE13_B[4] + &a2 * PADE13_B[2] + &eye * PADE13_B[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .ok_or(Error::Singular("expm Padé solve"))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Output of the block-exponential construction: the subinterval transition
/// matrix `e^{Aδ}` and the cost integral `∫₀^δ e^{Aᵀη} Q e^{Aη} dη`.
#[derive(Clone, Debug)]
pub struct VanLoanResult {
    pub trans: DMatrix<f64>,
    pub cost: DMatrix<f64>,
}

fn van_loan_block(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut g = DMatrix::zeros(2 * n, 2 * n);
    g.view_mut((0, 0), (n, n)).copy_from(&(-a.transpose()));
    g.view_mut((0, n), (n, n)).copy_from(q);
    g.view_mut((n, n), (n, n)).copy_from(a);
    g
}

fn extract_blocks(z: &DMatrix<f64>, n: usize) -> VanLoanResult {
    let z2 = z.view((0, n), (n, n)).into_owned();
    let z3 = z.view((n, n), (n, n)).into_owned();
    let mut cost = z3.transpose() * z2;
    // Z₃ᵀZ₂ is symmetric only in exact arithmetic.
    cost = 0.5 * (&cost + cost.transpose());
    VanLoanResult { trans: z3, cost }
}

/// Single block exponential yielding the transition matrix and the cost
/// integral over a duration `dt ≥ 0`.
pub fn van_loan(a: &DMatrix<f64>, q: &DMatrix<f64>, dt: f64) -> Result<VanLoanResult> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!(
            "van_loan requires a square A, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!(
            "Q must be {n}x{n}, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::Infeasible(format!("negative duration {dt}")));
    }
    if dt == 0.0 {
        return Ok(VanLoanResult {
            trans: DMatrix::identity(n, n),
            cost: DMatrix::zeros(n, n),
        });
    }
    let z = expm(&(van_loan_block(a, q) * dt))?;
    Ok(extract_blocks(&z, n))
}

/// Eigendecomposition of one mode's block matrix, or the fallback flag.
#[derive(Clone, Debug)]
pub struct EigenMode {
    pub diagonalizable: bool,
    pub lambda: DVector<C>,
    pub y: DMatrix<C>,
    pub y_inv: DMatrix<C>,
}

/// Precomputed factorizations of `G_i = [-A_iᵀ Q; 0 A_i]` for every linear
/// mode, enabling the scalar-exponential path.
#[derive(Clone, Debug)]
pub struct EigenCache {
    modes: Vec<EigenMode>,
    state_dim: usize,
}

/// Condition-number guard on the eigenvector matrix beyond which the dense
/// exponential fallback is used.
const EIGEN_COND_LIMIT: f64 = 1e8;

/// Relative reconstruction error accepted for the factorization.
const EIGEN_RECONSTRUCTION_RTOL: f64 = 1e-8;

/// Factorize every mode's block matrix offline. Modes whose factor is
/// missing, defective or ill-conditioned are flagged for the fallback; no
/// error is raised.
pub fn precompute_eigen(mode_matrices: &[DMatrix<f64>], q: &DMatrix<f64>) -> EigenCache {
    let state_dim = q.nrows();
    let modes = mode_matrices
        .iter()
        .map(|a| {
            let g = van_loan_block(a, q);
            match try_factorize(&g) {
                Some((lambda, y, y_inv)) => EigenMode {
                    diagonalizable: true,
                    lambda,
                    y,
                    y_inv,
                },
                None => EigenMode {
                    diagonalizable: false,
                    lambda: DVector::zeros(0),
                    y: DMatrix::zeros(0, 0),
                    y_inv: DMatrix::zeros(0, 0),
                },
            }
        })
        .collect();
    EigenCache { modes, state_dim }
}

fn try_factorize(g: &DMatrix<f64>) -> Option<(DVector<C>, DMatrix<C>, DMatrix<C>)> {
    let (lambda, y) = eigen::complex_eigen(g)?;
    let y_inv = y.clone().lu().try_inverse()?;
    if one_norm_c(&y) * one_norm_c(&y_inv) > EIGEN_COND_LIMIT {
        return None;
    }
    // Reconstruction check: ‖YΛY⁻¹ − G‖ ≤ rtol·‖G‖.
    let lam = DMatrix::from_diagonal(&lambda);
    let rec = &y * lam * &y_inv;
    let mut err = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            err = err.max((rec[(i, j)] - C::new(g[(i, j)], 0.0)).norm());
        }
    }
    if err > EIGEN_RECONSTRUCTION_RTOL * g.norm().max(1e-30) {
        return None;
    }
    Some((lambda, y, y_inv))
}

impl EigenCache {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn is_diagonalizable(&self, mode: usize) -> bool {
        self.modes[mode].diagonalizable
    }

    pub fn mode(&self, mode: usize) -> &EigenMode {
        &self.modes[mode]
    }
}

/// Transition matrix and cost integral from scalar exponentials of the
/// precomputed eigenvalues: `Z = Y e^{Λδ} Y⁻¹`, then the same block
/// extraction as [`van_loan`]. Imaginary round-off is discarded.
pub fn van_loan_eigen(cache: &EigenCache, mode: usize, dt: f64) -> Result<VanLoanResult> {
    let n = cache.state_dim;
    let entry = &cache.modes[mode];
    if !entry.diagonalizable {
        return Err(Error::NotDiagonalizable(mode));
    }
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::Infeasible(format!("negative duration {dt}")));
    }
    if dt == 0.0 {
        return Ok(VanLoanResult {
            trans: DMatrix::identity(n, n),
            cost: DMatrix::zeros(n, n),
        });
    }
    let exp_lam = DMatrix::from_diagonal(&entry.lambda.map(|l| (l * dt).exp()));
    let zc = &entry.y * exp_lam * &entry.y_inv;
    let z = zc.map(|v| v.re);
    Ok(extract_blocks(&z, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    /// Truncated Taylor series, accurate to ~1e-14 for ‖M‖ ≤ 1.
    fn expm_taylor(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = m.nrows();
        let mut sum = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..=terms {
            term = (&term * m) / k as f64;
            sum += &term;
        }
        sum
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }

    #[test]
    fn expm_zero_is_identity() {
        let result = expm(&DMatrix::zeros(3, 3)).unwrap();
        assert!(max_diff(&result, &DMatrix::identity(3, 3)) < 1e-15);
    }

    #[test]
    fn expm_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let result = expm(&m).unwrap();
        assert_relative_eq!(result[(0, 0)], 1f64.exp(), epsilon = 1e-12);
        assert_relative_eq!(result[(1, 1)], 2f64.exp(), epsilon = 1e-12);
        assert!(result[(0, 1)].abs() < 1e-14);
        assert!(result[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn expm_matches_taylor_series() {
        let mut state = 42u64;
        for _ in 0..20 {
            let mut m = DMatrix::from_fn(4, 4, |_, _| lcg(&mut state));
            let norm = one_norm(&m);
            if norm > 1.0 {
                m /= norm;
            }
            let pade = expm(&m).unwrap();
            let taylor = expm_taylor(&m, 30);
            assert!(
                max_diff(&pade, &taylor) < 1e-12,
                "Padé and Taylor disagree by {}",
                max_diff(&pade, &taylor)
            );
        }
    }

    #[test]
    fn expm_large_norm_scales() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![50.0, -50.0]));
        let result = expm(&m).unwrap();
        assert_relative_eq!(result[(0, 0)], 50f64.exp(), max_relative = 1e-10);
        assert!(result[(1, 1)].abs() < 1e-15);
        // Accuracy must hold out to norm 100.
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 100.0, -100.0, 0.0]);
        let result = expm(&rot).unwrap();
        assert_relative_eq!(result[(0, 0)], 100f64.cos(), max_relative = 1e-10);
        assert_relative_eq!(result[(0, 1)], 100f64.sin(), max_relative = 1e-10);
    }

    #[test]
    fn expm_rejects_non_square() {
        assert!(matches!(
            expm(&DMatrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn expm_rejects_nan() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = f64::NAN;
        assert!(matches!(expm(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn van_loan_zero_dynamics() {
        // A = 0: transition is the identity and the integral is Q·δ.
        let out = van_loan(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(max_diff(&out.trans, &DMatrix::identity(2, 2)) < 1e-12);
        assert!(max_diff(&out.cost, &DMatrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn van_loan_scalar_decoupled() {
        // A = -I: e^{-δ}·I and ((1 - e^{-2δ})/2)·I.
        let a = -DMatrix::<f64>::identity(2, 2);
        let out = van_loan(&a, &DMatrix::identity(2, 2), 1.0).unwrap();
        let e1 = (-1f64).exp();
        let m_exact = (1.0 - (-2f64).exp()) / 2.0;
        assert_relative_eq!(out.trans[(0, 0)], e1, epsilon = 1e-12);
        assert_relative_eq!(out.cost[(0, 0)], m_exact, epsilon = 1e-12);
        assert!(out.trans[(0, 1)].abs() < 1e-14);
        assert!(out.cost[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn van_loan_zero_duration() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 2.0, -1.0, 0.4]);
        let out = van_loan(&a, &DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(out.trans, DMatrix::identity(2, 2));
        assert_eq!(out.cost, DMatrix::zeros(2, 2));
    }

    #[test]
    fn van_loan_rejects_negative_duration() {
        let a = DMatrix::zeros(2, 2);
        assert!(van_loan(&a, &DMatrix::identity(2, 2), -0.1).is_err());
    }

    /// Composite Gauss-Legendre quadrature of e^{Aᵀη} Q e^{Aη}.
    fn cost_integral_quadrature(
        a: &DMatrix<f64>,
        q: &DMatrix<f64>,
        dt: f64,
        panels: usize,
    ) -> DMatrix<f64> {
        // 5-point Gauss-Legendre nodes and weights on [-1, 1].
        let nodes = [
            -0.906179845938664,
            -0.538469310105683,
            0.0,
            0.538469310105683,
            0.906179845938664,
        ];
        let weights = [
            0.236926885056189,
            0.478628670499366,
            0.568888888888889,
            0.478628670499366,
            0.236926885056189,
        ];
        let n = a.nrows();
        let h = dt / panels as f64;
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(weights.iter()) {
                let eta = mid + 0.5 * h * x;
                let e = expm(&(a * eta)).unwrap();
                acc += (e.transpose() * q * &e) * (0.5 * h * w);
            }
        }
        acc
    }

    #[test]
    fn van_loan_matches_quadrature() {
        let mut state = 7u64;
        for _ in 0..5 {
            // Random stable A and random PSD Q.
            let raw = DMatrix::from_fn(3, 3, |_, _| lcg(&mut state));
            let a = raw - DMatrix::<f64>::identity(3, 3) * 2.0;
            let half = DMatrix::from_fn(3, 3, |_, _| lcg(&mut state));
            let q = &half * half.transpose();
            let out = van_loan(&a, &q, 0.7).unwrap();
            let oracle = cost_integral_quadrature(&a, &q, 0.7, 64);
            assert!(
                max_diff(&out.cost, &oracle) < 1e-8,
                "cost integral disagrees with quadrature by {}",
                max_diff(&out.cost, &oracle)
            );
            // The integral is symmetric PSD within the stated tolerance.
            assert_eq!(out.cost, out.cost.transpose());
            let min_eig = out
                .cost
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig >= -1e-10 * out.cost.norm());
        }
    }

    #[test]
    fn van_loan_semigroup_and_additivity() {
        let mut state = 99u64;
        let a = DMatrix::from_fn(3, 3, |_, _| lcg(&mut state));
        let half = DMatrix::from_fn(3, 3, |_, _| lcg(&mut state));
        let q = &half * half.transpose();
        let (d1, d2) = (0.3, 0.45);
        let r1 = van_loan(&a, &q, d1).unwrap();
        let r2 = van_loan(&a, &q, d2).unwrap();
        let r12 = van_loan(&a, &q, d1 + d2).unwrap();
        assert!(max_diff(&r12.trans, &(&r2.trans * &r1.trans)) < 1e-9);
        let m_combined = &r1.cost + r1.trans.transpose() * &r2.cost * &r1.trans;
        assert!(max_diff(&r12.cost, &m_combined) < 1e-9);
    }

    #[test]
    fn trans_derivative_is_a_times_trans() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.2, -0.3]);
        let q = DMatrix::identity(2, 2);
        let h = 1e-6;
        let plus = van_loan(&a, &q, 0.8 + h).unwrap().trans;
        let minus = van_loan(&a, &q, 0.8 - h).unwrap().trans;
        let fd = (plus - minus) / (2.0 * h);
        let exact = &a * van_loan(&a, &q, 0.8).unwrap().trans;
        assert!(max_diff(&fd, &exact) / exact.norm() < 1e-5);
    }

    #[test]
    fn eigen_cache_diagonal_mode() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let cache = precompute_eigen(&[a], &DMatrix::zeros(2, 2));
        assert!(cache.is_diagonalizable(0));
        let mut eigs: Vec<f64> = cache.mode(0).lambda.iter().map(|l| l.re).collect();
        eigs.sort_by(f64::total_cmp);
        assert_relative_eq!(eigs[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(eigs[1], -1.0, epsilon = 1e-10);
        assert_relative_eq!(eigs[2], 1.0, epsilon = 1e-10);
        assert_relative_eq!(eigs[3], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn eigen_cache_flags_defective_mode() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let cache = precompute_eigen(&[a], &DMatrix::zeros(2, 2));
        assert!(!cache.is_diagonalizable(0));
        assert!(matches!(
            van_loan_eigen(&cache, 0, 0.5),
            Err(Error::NotDiagonalizable(0))
        ));
    }

    #[test]
    fn eigen_path_matches_dense_path() {
        let a1 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 2.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -2.0]);
        let q = DMatrix::identity(2, 2);
        let cache = precompute_eigen(&[a1.clone(), a2.clone()], &q);
        assert!(cache.is_diagonalizable(0));
        assert!(cache.is_diagonalizable(1));
        for (idx, a) in [a1, a2].iter().enumerate() {
            for dt in [0.0, 0.1, 0.5, 1.0] {
                let fast = van_loan_eigen(&cache, idx, dt).unwrap();
                let dense = van_loan(a, &q, dt).unwrap();
                assert!(max_diff(&fast.trans, &dense.trans) < 1e-8);
                assert!(max_diff(&fast.cost, &dense.cost) < 1e-8);
            }
        }
    }

    #[test]
    fn eigen_path_closed_form() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let q = DMatrix::identity(2, 2);
        let cache = precompute_eigen(&[a], &q);
        assert!(cache.is_diagonalizable(0));
        let out = van_loan_eigen(&cache, 0, 1.0).unwrap();
        let m_exact = (1.0 - (-2f64).exp()) / 2.0;
        assert_relative_eq!(out.cost[(0, 0)], m_exact, epsilon = 1e-9);
        assert_relative_eq!(out.cost[(1, 1)], m_exact, epsilon = 1e-9);
    }
}
