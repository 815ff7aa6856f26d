//! Outer optimization loop: iterate cost/gradient/Hessian evaluations and
//! second-order steps over the constraint set
//! `Δ = { δ : max(0, lb) ≤ δ ≤ ub, Σδ = T }`.
//!
//! The built-in solver takes regularized Newton steps restricted to the
//! tangent space of the equality constraint and the inactive bounds, with a
//! projected backtracking line search. The same cost/gradient/Hessian
//! surface is exposed through [`NlpCallbacks`] so an external NLP backend
//! can drive the iterations instead.

use std::cell::{Cell, RefCell};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{project_to_delta, Intervals, SwitchedProblem};
use crate::sensitivity::{CostEvaluation, Evaluator};
use crate::simulate;

/// How the curvature model is built each iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMode {
    /// The analytic Hessian, eigenvalue-floored on the tangent space.
    Exact,
    /// Identity curvature: pure projected-gradient steps (test hook).
    Identity,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// First-order optimality tolerance on the projected gradient.
    pub tol: f64,
    /// Eigenvalue floor factor for the reduced Hessian: the floor is
    /// `hessian_regularization · max(1, ‖H_r‖)`.
    pub hessian_regularization: f64,
    pub line_search_initial: f64,
    pub line_search_shrink: f64,
    pub line_search_sufficient_decrease: f64,
    pub line_search_max_steps: usize,
    /// Starting Levenberg damping relative to the curvature scale; 1 makes
    /// the first steps gradient-like, 0 starts at the pure Newton step.
    pub initial_damping: f64,
    pub hessian_mode: HessianMode,
    /// Verify the solution against the RK45 oracle after solving.
    pub oracle_check: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 100,
            tol: 1e-8,
            hessian_regularization: 1e-6,
            line_search_initial: 1.0,
            line_search_shrink: 0.5,
            line_search_sufficient_decrease: 1e-4,
            line_search_max_steps: 60,
            initial_damping: 1.0,
            hessian_mode: HessianMode::Exact,
            oracle_check: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    LineSearchFailure,
    Overflow,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub delta_star: Intervals,
    /// Interior switching times `τ_1 .. τ_N`.
    pub tau_star: Vec<f64>,
    /// Cost at every accepted iterate, starting from the initial point.
    pub j_history: Vec<f64>,
    pub j_final: f64,
    /// RK45-verified cost at the solution, when requested and finite.
    pub j_oracle: Option<f64>,
    /// Every cost evaluation, including line-search trials.
    pub n_cost_evaluations: usize,
    pub wall_time: Duration,
    pub termination: Termination,
    /// Projected-gradient norm at the final iterate.
    pub optimality: f64,
}

/// Projection of a direction onto the feasible cone at δ: components sum to
/// zero and active bounds only allow inward movement. Fixed components are
/// clamped one at a time while the multiplier re-balances the rest.
fn project_direction(
    v: &DVector<f64>,
    delta: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    active_tol: f64,
) -> DVector<f64> {
    let n = v.len();
    let mut fixed = vec![false; n];
    let mut d = DVector::zeros(n);
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        if free.is_empty() {
            return DVector::zeros(n);
        }
        let shift: f64 = free.iter().map(|&i| v[i]).sum::<f64>() / free.len() as f64;
        for i in 0..n {
            d[i] = if fixed[i] { 0.0 } else { v[i] - shift };
        }
        let mut changed = false;
        for &i in &free {
            let at_lower = delta[i] - lower[i].max(0.0) <= active_tol;
            let at_upper = upper[i] - delta[i] <= active_tol;
            if (at_lower && d[i] < 0.0) || (at_upper && d[i] > 0.0) {
                fixed[i] = true;
                changed = true;
            }
        }
        if !changed {
            return d;
        }
    }
}

/// KKT residual for the stopping rule: `‖P_T(-∇J)‖_∞`, the largest feasible
/// descent component at δ.
pub fn first_order_optimality(
    delta: &Intervals,
    grad: &DVector<f64>,
    p: &SwitchedProblem,
) -> f64 {
    let active_tol = 1e-8 * p.horizon().max(1.0);
    let d = project_direction(&(-grad), delta.delta(), p.lower(), p.upper(), active_tol);
    d.amax()
}

/// Orthonormal basis of `{ d : Σ d_i = 0 }` in dimension `m` (Helmert
/// columns), used to reduce the Newton system to the tangent space.
fn simplex_tangent_basis(m: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(m, m.saturating_sub(1));
    for k in 1..m {
        let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
        for row in 0..k {
            z[(row, k - 1)] = scale;
        }
        z[(k, k - 1)] = -(k as f64) * scale;
    }
    z
}

/// Newton direction restricted to the free variables and the equality
/// tangent space. The reduced Hessian is made positive definite by flipping
/// negative curvature and adding the Levenberg damping ν, so `ν → 0` gives
/// the pure Newton step and large ν a scaled gradient step.
fn newton_direction(
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
    free: &[usize],
    floor_factor: f64,
    damping: f64,
    mode: HessianMode,
) -> Option<DVector<f64>> {
    let n = grad.len();
    let m = free.len();
    if m < 2 {
        return None;
    }
    let g_f = DVector::from_iterator(m, free.iter().map(|&i| grad[i]));
    let h_f = match mode {
        HessianMode::Exact => {
            DMatrix::from_fn(m, m, |r, c| hess[(free[r], free[c])])
        }
        HessianMode::Identity => DMatrix::identity(m, m),
    };
    let z = simplex_tangent_basis(m);
    let h_r = z.transpose() * &h_f * &z;
    let g_r = z.transpose() * &g_f;

    let eigen = h_r.symmetric_eigen();
    let max_abs = eigen
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0f64, f64::max);
    let floor = floor_factor * max_abs.max(1.0);
    // The damping is relative to the curvature scale so ν = 1 is a
    // gradient-like step regardless of problem scaling.
    let nu = damping * max_abs.max(1.0);
    let inv_vals = DVector::from_iterator(
        eigen.eigenvalues.len(),
        eigen
            .eigenvalues
            .iter()
            .map(|l| 1.0 / (l.abs() + nu).max(floor)),
    );
    // H⁺ = V diag(|λ| + ν) Vᵀ, applied in inverse form.
    let y = &eigen.eigenvectors
        * DMatrix::from_diagonal(&inv_vals)
        * eigen.eigenvectors.transpose()
        * (-g_r);
    let d_f = z * y;

    let mut d = DVector::zeros(n);
    for (slot, &i) in free.iter().enumerate() {
        d[i] = d_f[slot];
    }
    Some(d)
}

/// Solve the switching time optimization problem with the built-in solver.
///
/// Starts from `delta0` (projected to Δ) or the equally spaced split of the
/// horizon. Every accepted iterate is feasible; the cost history is
/// nonincreasing.
pub fn solve(
    p: &SwitchedProblem,
    delta0: Option<&Intervals>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.max_iter == 0 {
        return Err(Error::InvalidProblem(format!(
            "solver options require tol > 0 and max_iter >= 1, got tol = {}, max_iter = {}",
            opts.tol, opts.max_iter
        )));
    }
    let start = Instant::now();
    let evaluator = Evaluator::new(p);
    let active_tol = 1e-8 * p.horizon().max(1.0);

    let mut delta = match delta0 {
        Some(d) => project_to_delta(d.delta(), p)?,
        None => p.equally_spaced()?,
    };

    let mut n_evals = 0usize;
    let evaluate = |d: &Intervals, n_evals: &mut usize| -> Result<CostEvaluation> {
        *n_evals += 1;
        evaluator.evaluate(d)
    };

    let mut current = match evaluate(&delta, &mut n_evals) {
        Ok(e) => e,
        Err(Error::Overflow(_)) => {
            return Ok(finish_report(
                p,
                delta,
                vec![],
                f64::INFINITY,
                n_evals,
                start,
                Termination::Overflow,
                f64::INFINITY,
                false,
            ));
        }
        Err(e) => return Err(e),
    };
    let mut history = vec![current.j];
    let mut termination = Termination::MaxIter;
    let mut damping = opts.initial_damping;

    for _ in 0..opts.max_iter {
        let opt = first_order_optimality(&delta, &current.grad, p);
        if opt <= opts.tol {
            termination = Termination::Converged;
            break;
        }

        // Free set from the projected steepest-descent direction.
        let pg = project_direction(
            &(-&current.grad),
            delta.delta(),
            p.lower(),
            p.upper(),
            active_tol,
        );
        let free: Vec<usize> = (0..delta.len()).filter(|&i| pg[i] != 0.0).collect();

        // No measurable descent left along the feasible cone: numerically
        // stationary even if the gradient norm sits above the tolerance.
        // The margin is a few hundred ulps of the cost scale; below it the
        // Armijo comparison is deciding on rounding noise.
        let stationary_slope = -300.0 * f64::EPSILON * (1.0 + current.j.abs());
        if current.grad.dot(&pg) >= stationary_slope {
            termination = Termination::Converged;
            break;
        }

        let mut moved = false;
        'attempts: for _ in 0..6 {
            let mut direction = newton_direction(
                &current.grad,
                &current.hess,
                &free,
                opts.hessian_regularization,
                damping,
                opts.hessian_mode,
            )
            .unwrap_or_else(|| pg.clone());
            let mut slope = current.grad.dot(&direction);
            if slope >= stationary_slope {
                // Damped Newton direction is numerically orthogonal to the
                // gradient; fall back to steepest feasible descent.
                direction = pg.clone();
                slope = current.grad.dot(&direction);
            }

            // Projected (bending) line search: the trial path clamps at the
            // bounds coordinate-wise, so one interval hitting its bound does
            // not strangle the step for the others. Sufficient decrease is
            // measured against the actual displacement.
            let mut step = opts.line_search_initial;
            for halvings in 0..opts.line_search_max_steps {
                let raw = delta.delta() + &direction * step;
                let trial = project_to_delta(&raw, p)?;
                let displacement = trial.delta() - delta.delta();
                let decrease = current.grad.dot(&displacement);
                if decrease >= stationary_slope {
                    step *= opts.line_search_shrink;
                    continue;
                }
                match evaluate(&trial, &mut n_evals) {
                    Ok(eval) => {
                        if eval.j
                            <= current.j + opts.line_search_sufficient_decrease * decrease
                        {
                            delta = trial;
                            current = eval;
                            history.push(current.j);
                            // Levenberg update: relax toward Newton on clean
                            // steps, stiffen when backtracking was needed.
                            damping = if halvings == 0 {
                                damping / 3.0
                            } else {
                                (damping * 3.0).max(1e-8)
                            };
                            moved = true;
                            break 'attempts;
                        }
                    }
                    Err(Error::Overflow(_)) | Err(Error::NonFinite(_)) => {
                        // Diverging trial point: shrink and retry.
                    }
                    Err(e) => return Err(e),
                }
                step *= opts.line_search_shrink;
            }
            damping = (damping * 30.0).max(1e-3);
        }

        if !moved {
            // No Armijo-acceptable step exists. If even the full projected
            // gradient step could only promise a decrease below the rounding
            // noise of J, the point is optimal to working precision.
            let noise_slope = -1e6 * f64::EPSILON * (1.0 + current.j.abs());
            termination = if current.grad.dot(&pg) >= noise_slope {
                Termination::Converged
            } else {
                Termination::LineSearchFailure
            };
            break;
        }
    }

    if termination == Termination::MaxIter {
        // The loop may have exited exactly at the optimum.
        if first_order_optimality(&delta, &current.grad, p) <= opts.tol {
            termination = Termination::Converged;
        }
    }

    let optimality = first_order_optimality(&delta, &current.grad, p);
    let j_final = current.j;
    Ok(finish_report(
        p,
        delta,
        history,
        j_final,
        n_evals,
        start,
        termination,
        optimality,
        opts.oracle_check,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish_report(
    p: &SwitchedProblem,
    delta: Intervals,
    history: Vec<f64>,
    j_final: f64,
    n_evals: usize,
    start: Instant,
    termination: Termination,
    optimality: f64,
    oracle_check: bool,
) -> SolveReport {
    let wall_time = start.elapsed();
    let j_oracle = (oracle_check && termination != Termination::Overflow)
        .then(|| simulate::integrate(p, &delta, 1e-8, 1e-10).ok().map(|t| t.j_oracle))
        .flatten();
    let tau_star = delta.interior_times();
    SolveReport {
        delta_star: delta,
        tau_star,
        j_history: history,
        j_final,
        j_oracle,
        n_cost_evaluations: n_evals,
        wall_time,
        termination,
        optimality,
    }
}

/// Pure cost/gradient/Hessian callbacks over δ plus the constraint data
/// (one all-ones equality row with right-hand side T, and the bounds), so
/// third-party NLP solvers can drive the iteration without touching the
/// evaluation internals. Consecutive calls at the same point share one
/// evaluation.
pub struct NlpCallbacks<'p> {
    problem: &'p SwitchedProblem,
    evaluator: Evaluator<'p>,
    cached: RefCell<Option<(DVector<f64>, CostEvaluation)>>,
    n_evals: Cell<usize>,
}

impl<'p> NlpCallbacks<'p> {
    pub fn new(problem: &'p SwitchedProblem) -> Self {
        NlpCallbacks {
            problem,
            evaluator: Evaluator::new(problem),
            cached: RefCell::new(None),
            n_evals: Cell::new(0),
        }
    }

    fn with_eval<T>(&self, delta: &[f64], f: impl FnOnce(&CostEvaluation) -> T) -> Result<T> {
        let key = DVector::from_column_slice(delta);
        {
            let cached = self.cached.borrow();
            if let Some((stored, eval)) = cached.as_ref() {
                if stored == &key {
                    return Ok(f(eval));
                }
            }
        }
        let eval = self
            .evaluator
            .evaluate(&Intervals::new(key.clone())?)?;
        self.n_evals.set(self.n_evals.get() + 1);
        let out = f(&eval);
        *self.cached.borrow_mut() = Some((key, eval));
        Ok(out)
    }

    pub fn cost(&self, delta: &[f64]) -> Result<f64> {
        self.with_eval(delta, |e| e.j)
    }

    pub fn gradient(&self, delta: &[f64]) -> Result<Vec<f64>> {
        self.with_eval(delta, |e| e.grad.iter().cloned().collect())
    }

    /// Row-major packed lower triangle of the Hessian.
    pub fn hessian_lower(&self, delta: &[f64]) -> Result<Vec<f64>> {
        self.with_eval(delta, |e| {
            let n = e.hess.nrows();
            let mut out = Vec::with_capacity(n * (n + 1) / 2);
            for i in 0..n {
                for j in 0..=i {
                    out.push(e.hess[(i, j)]);
                }
            }
            out
        })
    }

    /// The single linear equality: coefficients (all ones) and its
    /// right-hand side T.
    pub fn equality_row(&self) -> (Vec<f64>, f64) {
        (
            vec![1.0; self.problem.n_intervals()],
            self.problem.horizon(),
        )
    }

    /// Lower and upper bounds on δ.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.problem.lower().iter().cloned().collect(),
            self.problem.upper().iter().cloned().collect(),
        )
    }

    pub fn evaluation_count(&self) -> usize {
        self.n_evals.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ModeDynamics;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn two_mode_problem() -> SwitchedProblem {
        SwitchedProblem::new(
            vec![
                ModeDynamics::linear(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 2.0]))
                    .unwrap(),
                ModeDynamics::linear(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -2.0]))
                    .unwrap(),
            ],
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            1.0,
            5,
        )
        .unwrap()
    }

    #[test]
    fn optimality_ignores_multiplier_direction() {
        let p = two_mode_problem();
        let delta = Intervals::new(DVector::from_vec(vec![0.5, 0.5])).unwrap();
        let grad = DVector::from_vec(vec![3.0, 3.0]);
        assert_relative_eq!(first_order_optimality(&delta, &grad, &p), 0.0);
    }

    #[test]
    fn optimality_balanced_gradient() {
        let p = two_mode_problem();
        let delta = Intervals::new(DVector::from_vec(vec![0.5, 0.5])).unwrap();
        let grad = DVector::from_vec(vec![1.0, -1.0]);
        assert_relative_eq!(first_order_optimality(&delta, &grad, &p), 1.0);
    }

    #[test]
    fn optimality_respects_active_bound() {
        // At δ_0 = 0, a direction that would shrink δ_0 further is not
        // feasible and must not count as descent.
        let p = two_mode_problem();
        let delta = Intervals::new(DVector::from_vec(vec![0.0, 1.0])).unwrap();
        // -grad = [-2, 2]: wants δ_0 down (blocked) and δ_1 up.
        let grad = DVector::from_vec(vec![2.0, -2.0]);
        assert_relative_eq!(first_order_optimality(&delta, &grad, &p), 0.0);
        // The opposite sign is feasible.
        let grad = DVector::from_vec(vec![-2.0, 2.0]);
        assert_relative_eq!(first_order_optimality(&delta, &grad, &p), 2.0);
    }

    #[test]
    fn rejects_degenerate_options() {
        let p = two_mode_problem();
        let bad_tol = SolverOptions {
            tol: 0.0,
            ..SolverOptions::default()
        };
        assert!(solve(&p, None, &bad_tol).is_err());
        let bad_iter = SolverOptions {
            max_iter: 0,
            ..SolverOptions::default()
        };
        assert!(solve(&p, None, &bad_iter).is_err());
    }

    #[test]
    fn single_interval_returns_immediately() {
        let p = SwitchedProblem::new(
            vec![ModeDynamics::linear(DMatrix::zeros(2, 2)).unwrap()],
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            1.0,
            5,
        )
        .unwrap();
        let report = solve(&p, None, &SolverOptions::default()).unwrap();
        assert_eq!(report.termination, Termination::Converged);
        assert_relative_eq!(report.j_final, 5.0, epsilon = 1e-12);
        assert_eq!(report.j_history.len(), 1);
        assert!(report.tau_star.is_empty());
    }

    #[test]
    fn history_is_nonincreasing_and_feasible() {
        let p = two_mode_problem();
        let report = solve(&p, None, &SolverOptions::default()).unwrap();
        for w in report.j_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert_relative_eq!(report.delta_star.total(), 1.0, epsilon = 1e-8);
        assert!(report.delta_star.delta().iter().all(|d| *d >= -1e-12));
    }

    #[test]
    fn overflow_reported_in_termination() {
        let p = SwitchedProblem::new(
            vec![ModeDynamics::linear(DMatrix::from_row_slice(1, 1, &[50.0])).unwrap()],
            DVector::from_vec(vec![1.0]),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            1.0,
            5,
        )
        .unwrap();
        let report = solve(&p, None, &SolverOptions::default()).unwrap();
        assert_eq!(report.termination, Termination::Overflow);
    }

    #[test]
    fn callbacks_match_direct_evaluation() {
        let p = two_mode_problem();
        let callbacks = NlpCallbacks::new(&p);
        let delta = [0.4, 0.6];
        let j = callbacks.cost(&delta).unwrap();
        let g = callbacks.gradient(&delta).unwrap();
        let h = callbacks.hessian_lower(&delta).unwrap();
        // Shared evaluation: three queries at one point cost one evaluation.
        assert_eq!(callbacks.evaluation_count(), 1);

        let eval = crate::sensitivity::evaluate(
            &p,
            &Intervals::new(DVector::from_column_slice(&delta)).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(j, eval.j);
        assert_relative_eq!(g[0], eval.grad[0]);
        assert_relative_eq!(g[1], eval.grad[1]);
        assert_relative_eq!(h[0], eval.hess[(0, 0)]);
        assert_relative_eq!(h[1], eval.hess[(1, 0)]);
        assert_relative_eq!(h[2], eval.hess[(1, 1)]);

        let (row, rhs) = callbacks.equality_row();
        assert_eq!(row, vec![1.0, 1.0]);
        assert_relative_eq!(rhs, 1.0);
        let (lb, ub) = callbacks.bounds();
        assert_eq!(lb, vec![0.0, 0.0]);
        assert!(ub.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn external_gradient_loop_descends() {
        // Drive a crude projected-gradient method through the callback
        // contract only.
        let p = two_mode_problem();
        let callbacks = NlpCallbacks::new(&p);
        let mut delta = vec![0.5, 0.5];
        let j0 = callbacks.cost(&delta).unwrap();
        let mut j_prev = j0;
        for _ in 0..20 {
            let g = callbacks.gradient(&delta).unwrap();
            let mean = (g[0] + g[1]) / 2.0;
            let step = 1e-3;
            let raw = DVector::from_vec(vec![
                delta[0] - step * (g[0] - mean),
                delta[1] - step * (g[1] - mean),
            ]);
            let projected = project_to_delta(&raw, &p).unwrap();
            delta = projected.delta().iter().cloned().collect();
            let j = callbacks.cost(&delta).unwrap();
            assert!(j <= j_prev + 1e-9);
            j_prev = j;
        }
        assert!(j_prev < j0);
    }
}
