//! Cost, gradient and Hessian of the linearized switching-time problem.
//!
//! One pass over the subdivided horizon linearizes the dynamics at every
//! grid state, computes the subinterval transition matrices and cost
//! integrals, and propagates the state (the "linearize, exponentiate,
//! propagate" sweep). A backward recursion then produces the cost-to-go
//! matrices `S_i`, from which the cost `J = x₀ᵀS₀x₀`, the gradient
//! `∇J_i = x_{i+1}ᵀC_i x_{i+1}` and the Hessian
//! `H_{i,ℓ} = 2 x_{ℓ+1}ᵀ C_ℓ Φ(τ_{ℓ+1}, τ_{i+1}) A_i^{n_i} x_{i+1}` (ℓ ≥ i)
//! all come out of the same shared tables.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{precompute_eigen, van_loan, van_loan_eigen, EigenCache};
use crate::problem::{
    build_partition, collapsed_partition, GridPartition, Intervals, ModeDynamics, SwitchedProblem,
};

/// State norm beyond which propagation aborts: the linearization has
/// diverged and downstream numbers would be meaningless.
pub const OVERFLOW_NORM: f64 = 1e15;

/// Per-subinterval data produced by the forward sweep.
#[derive(Clone, Debug)]
pub struct Block {
    /// Linearization `A_i^j` (augmented for nonlinear problems).
    pub a: DMatrix<f64>,
    /// Transition matrix `e^{A_i^j δ_i^j}`.
    pub trans: DMatrix<f64>,
    /// Cost integral `∫₀^{δ_i^j} e^{Aᵀη} Q e^{Aη} dη`.
    pub cost: DMatrix<f64>,
    /// State at the subinterval start, `x_i^j`.
    pub x: DVector<f64>,
    /// Subinterval duration `δ_i^j`.
    pub dt: f64,
}

/// All linearizations, exponentials and grid states for one candidate δ.
#[derive(Clone, Debug)]
pub struct LinearizationCache {
    /// `blocks[i][j]` covers the j-th subinterval of interval i.
    pub blocks: Vec<Vec<Block>>,
    /// States at the switching times, `x_0 .. x_{N+1}` (augmented for
    /// nonlinear problems; the last component is the constant 1).
    pub switch_states: Vec<DVector<f64>>,
    /// Running-cost weight in the working dimension.
    pub q: DMatrix<f64>,
    /// Terminal weight in the working dimension.
    pub e: DMatrix<f64>,
    /// Whether the constant-state augmentation is active.
    pub augmented: bool,
}

impl LinearizationCache {
    /// Final state `x(T_δ)` of the linearized flow.
    pub fn final_state(&self) -> &DVector<f64> {
        self.switch_states.last().unwrap()
    }
}

/// Transition matrices between switching times, `Φ(τ_l, τ_i)` for `l ≥ i`.
#[derive(Clone, Debug)]
pub struct PhiTable {
    rows: Vec<Vec<DMatrix<f64>>>,
}

impl PhiTable {
    /// `Φ(τ_to, τ_from)`; `None` when `to < from` (no backward transitions).
    pub fn get(&self, to: usize, from: usize) -> Option<&DMatrix<f64>> {
        if to < from {
            return None;
        }
        self.rows.get(from).and_then(|row| row.get(to - from))
    }
}

/// Cost, derivatives and the shared intermediate tables for one δ.
#[derive(Clone, Debug)]
pub struct CostEvaluation {
    pub j: f64,
    pub grad: DVector<f64>,
    /// Symmetric by construction: the lower triangle mirrors the upper.
    pub hess: DMatrix<f64>,
    /// Cost-to-go matrices `S_0 .. S_{N+1}`.
    pub s: Vec<DMatrix<f64>>,
    /// `C_0 .. C_N`.
    pub c: Vec<DMatrix<f64>>,
    pub phi: PhiTable,
    pub cache: LinearizationCache,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn block_diag_with_zero(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(m);
    out
}

fn embed_linear(a: &DMatrix<f64>) -> DMatrix<f64> {
    block_diag_with_zero(a)
}

/// Linearize one mode at an (augmented) state.
///
/// Nonlinear modes produce `[[Jf(x̂), f(x̂) - Jf(x̂)x̂], [0, 0]]` where `x̂`
/// strips the trailing constant state; linear modes return `A` unchanged.
pub fn linearize_at(mode: &ModeDynamics, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    match mode {
        ModeDynamics::Linear(a) => Ok(a.clone()),
        ModeDynamics::Nonlinear { .. } => {
            let n = x.len() - 1;
            let raw = x.rows(0, n).into_owned();
            let f = mode.eval(&raw);
            let jac = mode.jacobian_at(&raw);
            if f.len() != n || jac.nrows() != n || jac.ncols() != n {
                return Err(Error::Dimension(format!(
                    "dynamics returned f of length {} and Jacobian {}x{} for state dimension {n}",
                    f.len(),
                    jac.nrows(),
                    jac.ncols()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) || jac.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dynamics evaluation".into()));
            }
            let affine = &f - &jac * &raw;
            let mut a = DMatrix::zeros(n + 1, n + 1);
            a.view_mut((0, 0), (n, n)).copy_from(&jac);
            a.view_mut((0, n), (n, 1)).copy_from(&affine);
            Ok(a)
        }
    }
}

/// The forward sweep: linearize at every grid state, compute the block
/// exponential per subinterval and propagate `x_i^{j+1} = E_i^j x_i^j`.
pub fn build_cache(
    p: &SwitchedProblem,
    partition: &GridPartition,
    eigen: Option<&EigenCache>,
) -> Result<LinearizationCache> {
    let linear = p.is_linear();
    let (q, e) = if linear {
        (p.q().clone(), p.e().clone())
    } else {
        (block_diag_with_zero(p.q()), block_diag_with_zero(p.e()))
    };

    let mut x = if linear {
        p.x0().clone()
    } else {
        let n = p.state_dim();
        let mut x0 = DVector::zeros(n + 1);
        x0.rows_mut(0, n).copy_from(p.x0());
        x0[n] = 1.0;
        x0
    };

    let mut blocks = Vec::with_capacity(partition.intervals.len());
    let mut switch_states = Vec::with_capacity(partition.intervals.len() + 1);
    switch_states.push(x.clone());

    for (i, part) in partition.intervals.iter().enumerate() {
        let mode = &p.modes()[i];
        let mut interval_blocks = Vec::with_capacity(part.sub_durations.len());
        for &dt in &part.sub_durations {
            let a = match mode {
                ModeDynamics::Linear(am) if linear => am.clone(),
                ModeDynamics::Linear(am) => embed_linear(am),
                ModeDynamics::Nonlinear { .. } => linearize_at(mode, &x)?,
            };
            let use_eigen = linear
                && mode.is_linear()
                && eigen.map(|c| c.is_diagonalizable(i)).unwrap_or(false);
            let vl = if use_eigen {
                van_loan_eigen(eigen.unwrap(), i, dt)?
            } else {
                van_loan(&a, &q, dt)?
            };
            let x_next = &vl.trans * &x;
            if x_next.iter().any(|v| !v.is_finite()) || x_next.norm() > OVERFLOW_NORM {
                return Err(Error::Overflow(x_next.norm()));
            }
            interval_blocks.push(Block {
                a,
                trans: vl.trans,
                cost: vl.cost,
                x: x.clone(),
                dt,
            });
            x = x_next;
        }
        blocks.push(interval_blocks);
        switch_states.push(x.clone());
    }

    Ok(LinearizationCache {
        blocks,
        switch_states,
        q,
        e,
        augmented: !linear,
    })
}

/// Backward cost-to-go recursion: `S_{N+1} = E`,
/// `S_i^j = M_i^j + (E_i^j)ᵀ S_i^{j+1} E_i^j`, descending over every
/// subinterval. Returns `[S_0, ..., S_{N+1}]` at the switching times.
pub fn compute_s(cache: &LinearizationCache) -> Vec<DMatrix<f64>> {
    let count = cache.blocks.len();
    let mut out = vec![DMatrix::zeros(0, 0); count + 1];
    let mut s = cache.e.clone();
    out[count] = s.clone();
    for i in (0..count).rev() {
        for block in cache.blocks[i].iter().rev() {
            s = &block.cost + block.trans.transpose() * &s * &block.trans;
            symmetrize(&mut s);
        }
        out[i] = s.clone();
    }
    out
}

/// `C_i = Q + (A_i^{n_i})ᵀ S_{i+1} + S_{i+1} A_i^{n_i}`, forced to machine
/// symmetry.
pub fn compute_c(cache: &LinearizationCache, s: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    cache
        .blocks
        .iter()
        .enumerate()
        .map(|(i, interval)| {
            let a_last = &interval.last().unwrap().a;
            let s_next = &s[i + 1];
            let mut c = &cache.q + a_last.transpose() * s_next + s_next * a_last;
            symmetrize(&mut c);
            c
        })
        .collect()
}

/// Transition matrices between all forward pairs of switching times,
/// `Φ(τ_{l+1}, τ_i) = (∏_j E_l^j) Φ(τ_l, τ_i)`.
pub fn compute_phi(cache: &LinearizationCache) -> PhiTable {
    let count = cache.blocks.len();
    let dim = cache.switch_states[0].len();
    // Per-interval products E_i^{n_i} ... E_i^0.
    let interval_trans: Vec<DMatrix<f64>> = cache
        .blocks
        .iter()
        .map(|interval| {
            let mut prod = DMatrix::identity(dim, dim);
            for block in interval {
                prod = &block.trans * prod;
            }
            prod
        })
        .collect();

    let rows = (0..=count)
        .map(|i| {
            let mut row = Vec::with_capacity(count + 1 - i);
            row.push(DMatrix::identity(dim, dim));
            for trans in &interval_trans[i..count] {
                let next = trans * row.last().unwrap();
                row.push(next);
            }
            row
        })
        .collect();
    PhiTable { rows }
}

/// Evaluates the linearized cost and its derivatives for candidate interval
/// vectors, owning the offline eigendecompositions for linear problems.
pub struct Evaluator<'p> {
    problem: &'p SwitchedProblem,
    eigen: Option<EigenCache>,
}

impl<'p> Evaluator<'p> {
    pub fn new(problem: &'p SwitchedProblem) -> Self {
        let eigen = problem.is_linear().then(|| {
            let mats: Vec<DMatrix<f64>> = problem
                .modes()
                .iter()
                .map(|m| match m {
                    ModeDynamics::Linear(a) => a.clone(),
                    ModeDynamics::Nonlinear { .. } => unreachable!("linear problem"),
                })
                .collect();
            precompute_eigen(&mats, problem.q())
        });
        Evaluator { problem, eigen }
    }

    /// Dense-exponential path only; keeps every subinterval on the same
    /// route as `frozen_perturbation_cost` recomputations.
    pub fn without_eigen_path(problem: &'p SwitchedProblem) -> Self {
        Evaluator {
            problem,
            eigen: None,
        }
    }

    pub fn problem(&self) -> &SwitchedProblem {
        self.problem
    }

    /// Full evaluation: partition, forward sweep, backward recursion and the
    /// assembly of `J`, `∇J` and `H_J` from the shared tables.
    ///
    /// Linear problems skip the grid (no re-linearization is needed), which
    /// also makes the cost well-defined for `Σδ ≠ T` trial points; nonlinear
    /// problems require `Σδ = T` so grid membership is meaningful.
    pub fn evaluate(&self, intervals: &Intervals) -> Result<CostEvaluation> {
        let partition = if self.problem.is_linear() {
            collapsed_partition(intervals)
        } else {
            build_partition(self.problem, intervals)?
        };
        self.evaluate_on(&partition)
    }

    /// Evaluation on an explicit partition (grid studies and tests).
    pub fn evaluate_on(&self, partition: &GridPartition) -> Result<CostEvaluation> {
        let cache = build_cache(self.problem, partition, self.eigen.as_ref())?;
        let s = compute_s(&cache);
        let c = compute_c(&cache, &s);
        let phi = compute_phi(&cache);

        let x0 = &cache.switch_states[0];
        let j = x0.dot(&(&s[0] * x0));

        let count = cache.blocks.len();
        let grad = DVector::from_iterator(
            count,
            (0..count).map(|i| {
                let xi1 = &cache.switch_states[i + 1];
                xi1.dot(&(&c[i] * xi1))
            }),
        );

        let mut hess = DMatrix::zeros(count, count);
        for i in 0..count {
            let a_last = &cache.blocks[i].last().unwrap().a;
            let w = a_last * &cache.switch_states[i + 1];
            for l in i..count {
                let phi_il = phi.get(l + 1, i + 1).unwrap();
                let v = &c[l] * (phi_il * &w);
                let entry = 2.0 * cache.switch_states[l + 1].dot(&v);
                hess[(i, l)] = entry;
                hess[(l, i)] = entry;
            }
        }

        Ok(CostEvaluation {
            j,
            grad,
            hess,
            s,
            c,
            phi,
            cache,
        })
    }
}

/// One-shot evaluation.
pub fn evaluate(p: &SwitchedProblem, intervals: &Intervals) -> Result<CostEvaluation> {
    Evaluator::new(p).evaluate(intervals)
}

/// Cost of the frozen-linearization model when only the last subinterval of
/// interval `i` stretches by `eps` and every other block stays fixed.
///
/// All upstream cost contributions are reused; the downstream cost folds
/// through the unchanged `S_{i+1}`:
/// `J(ε) = Σ_prefix x_q^pᵀ M_q^p x_q^p
///        + x_i^{n_i}ᵀ (M(δ+ε) + E(δ+ε)ᵀ S_{i+1} E(δ+ε)) x_i^{n_i}`.
///
/// This is the model whose derivatives the analytic gradient and Hessian
/// describe, so central differences of this function validate them.
pub fn frozen_perturbation_cost(eval: &CostEvaluation, i: usize, eps: f64) -> Result<f64> {
    let cache = &eval.cache;
    if i >= cache.blocks.len() {
        return Err(Error::Dimension(format!(
            "interval index {i} out of range ({} intervals)",
            cache.blocks.len()
        )));
    }
    let last = cache.blocks[i].last().unwrap();
    let new_dt = last.dt + eps;
    if new_dt < 0.0 {
        return Err(Error::Infeasible(format!(
            "perturbation {eps} makes the last subinterval negative ({new_dt})"
        )));
    }

    let vl = van_loan(&last.a, &cache.q, new_dt)?;
    let s_next = &eval.s[i + 1];
    let tail = &vl.cost + vl.trans.transpose() * s_next * &vl.trans;
    let mut total = last.x.dot(&(&tail * &last.x));

    let n_last = cache.blocks[i].len() - 1;
    for (q_idx, interval) in cache.blocks.iter().enumerate().take(i + 1) {
        for (j_idx, block) in interval.iter().enumerate() {
            if q_idx == i && j_idx == n_last {
                break;
            }
            total += block.x.dot(&(&block.cost * &block.x));
        }
    }
    Ok(total)
}
