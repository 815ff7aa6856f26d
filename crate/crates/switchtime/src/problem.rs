//! Problem definition: mode dynamics, decision variables, the constraint set
//! and the background-grid partition machinery.
//!
//! A switched autonomous system runs through a fixed sequence of N+1 modes.
//! The decision variables are the interval durations `δ = [δ_0, ..., δ_N]`,
//! constrained to the set `Δ = { δ ≥ 0, lb ≤ δ ≤ ub, Σ δ_i = T }`. The cost is
//! the quadratic Bolza form `∫ xᵀQx dt + x(T)ᵀE x(T)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for merging a background grid point into a switching
/// time that it (numerically) coincides with.
pub const GRID_COINCIDENCE_RTOL: f64 = 1e-12;

/// Relative tolerance on `Σ δ_i = T` accepted when partitioning.
pub const HORIZON_RTOL: f64 = 1e-9;

type DynamicsFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Dynamics of a single mode: either a linear system `ẋ = A x` or a
/// differentiable vector field with its Jacobian.
#[derive(Clone)]
pub enum ModeDynamics {
    Linear(DMatrix<f64>),
    Nonlinear { f: DynamicsFn, jacobian: JacobianFn },
}

impl fmt::Debug for ModeDynamics {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeDynamics::Linear(a) => write!(out, "Linear({}x{})", a.nrows(), a.ncols()),
            ModeDynamics::Nonlinear { .. } => write!(out, "Nonlinear"),
        }
    }
}

impl ModeDynamics {
    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "mode matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mode matrix entries".into()));
        }
        Ok(ModeDynamics::Linear(a))
    }

    pub fn nonlinear<F, J>(f: F, jacobian: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        ModeDynamics::Nonlinear {
            f: Arc::new(f),
            jacobian: Arc::new(jacobian),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ModeDynamics::Linear(_))
    }

    /// Evaluate the vector field at `x`.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ModeDynamics::Linear(a) => a * x,
            ModeDynamics::Nonlinear { f, .. } => f(x),
        }
    }

    /// Evaluate the Jacobian of the vector field at `x`.
    pub fn jacobian_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ModeDynamics::Linear(a) => a.clone(),
            ModeDynamics::Nonlinear { jacobian, .. } => jacobian(x),
        }
    }
}

/// A constant or affine reference signal `r(t) = r0 + rdot·t` tracked by the
/// state components listed in `tracked`.
#[derive(Clone, Debug)]
pub struct ReferenceSignal {
    pub r0: DVector<f64>,
    pub rdot: DVector<f64>,
    /// `tracked[k]` is the state index whose deviation from `r_k(t)` is
    /// penalized.
    pub tracked: Vec<usize>,
}

impl ReferenceSignal {
    pub fn constant(r0: DVector<f64>, tracked: Vec<usize>) -> Self {
        let n = r0.len();
        ReferenceSignal {
            r0,
            rdot: DVector::zeros(n),
            tracked,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.rdot.iter().all(|v| *v == 0.0)
    }
}

/// The full switching time optimization problem.
///
/// `modes.len()` is N+1; there are N interior switching times. `q` and `e`
/// weight the running and terminal quadratic costs. `lower`/`upper` bound the
/// individual interval durations (defaults 0 and +∞).
#[derive(Clone, Debug)]
pub struct SwitchedProblem {
    modes: Vec<ModeDynamics>,
    x0: DVector<f64>,
    q: DMatrix<f64>,
    e: DMatrix<f64>,
    horizon: f64,
    n_grid: usize,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

fn check_weight(m: &DMatrix<f64>, n: usize, name: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} entries")));
    }
    let scale = m.norm();
    if (m - m.transpose()).norm() > 1e-10 * scale.max(1.0) {
        return Err(Error::InvalidProblem(format!("{name} is not symmetric")));
    }
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let min_eig = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 * scale.max(1.0) {
        return Err(Error::InvalidProblem(format!(
            "{name} is not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

impl SwitchedProblem {
    pub fn new(
        modes: Vec<ModeDynamics>,
        x0: DVector<f64>,
        q: DMatrix<f64>,
        e: DMatrix<f64>,
        horizon: f64,
        n_grid: usize,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidProblem("at least one mode required".into()));
        }
        let n = x0.len();
        if n == 0 {
            return Err(Error::InvalidProblem("empty initial state".into()));
        }
        for (i, mode) in modes.iter().enumerate() {
            if let ModeDynamics::Linear(a) = mode {
                if a.nrows() != n {
                    return Err(Error::Dimension(format!(
                        "mode {i} is {}x{} but the state has dimension {n}",
                        a.nrows(),
                        a.ncols()
                    )));
                }
            }
        }
        check_weight(&q, n, "Q")?;
        check_weight(&e, n, "E")?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidProblem(format!("horizon T = {horizon} must be positive")));
        }
        if n_grid < 2 {
            return Err(Error::InvalidProblem(format!("n_grid = {n_grid} must be at least 2")));
        }
        let count = modes.len();
        Ok(SwitchedProblem {
            modes,
            x0,
            q,
            e,
            horizon,
            n_grid,
            lower: DVector::zeros(count),
            upper: DVector::from_element(count, f64::INFINITY),
        })
    }

    /// Replace the default `[0, ∞)` duration bounds.
    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let count = self.modes.len();
        if lower.len() != count || upper.len() != count {
            return Err(Error::Dimension(format!(
                "bounds must have length {count}"
            )));
        }
        for i in 0..count {
            if lower[i].is_nan() || lower[i] < 0.0 || lower[i] > upper[i] {
                return Err(Error::InvalidProblem(format!(
                    "bounds for interval {i} must satisfy 0 <= lb <= ub, got [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        if lower.sum() > self.horizon || upper.sum() < self.horizon {
            return Err(Error::EmptyConstraintSet(format!(
                "bounds cannot sum to T = {}: sum(lb) = {}, sum(ub) = {}",
                self.horizon,
                lower.sum(),
                upper.sum()
            )));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    /// Number of intervals, N+1.
    pub fn n_intervals(&self) -> usize {
        self.modes.len()
    }

    /// Number of interior switching times, N.
    pub fn n_switches(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn modes(&self) -> &[ModeDynamics] {
        &self.modes
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// True when every mode is linear; the linearization grid and the
    /// constant-state augmentation are skipped in that case.
    pub fn is_linear(&self) -> bool {
        self.modes.iter().all(ModeDynamics::is_linear)
    }

    /// Equally spaced initial guess `δ_i = T/(N+1)`, projected onto the
    /// constraint set when the bounds do not admit it directly.
    pub fn equally_spaced(&self) -> Result<Intervals> {
        let count = self.modes.len();
        let raw = DVector::from_element(count, self.horizon / count as f64);
        project_to_delta(&raw, self)
    }
}

/// Nonnegative interval durations; switching times are always derived from
/// them as prefix sums.
#[derive(Clone, Debug, PartialEq)]
pub struct Intervals {
    delta: DVector<f64>,
}

impl Intervals {
    pub fn new(delta: DVector<f64>) -> Result<Self> {
        if delta.is_empty() {
            return Err(Error::Dimension("empty interval vector".into()));
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interval durations".into()));
        }
        if let Some(bad) = delta.iter().find(|v| **v < 0.0) {
            return Err(Error::Infeasible(format!("negative duration {bad}")));
        }
        Ok(Intervals { delta })
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// Total duration `T_δ = Σ δ_i`, accumulated left to right.
    pub fn total(&self) -> f64 {
        self.delta.iter().sum()
    }

    /// All switching times `[τ_0 = 0, τ_1, ..., τ_{N+1} = T_δ]`.
    pub fn switching_times(&self) -> Vec<f64> {
        let mut tau = Vec::with_capacity(self.delta.len() + 1);
        let mut acc = 0.0;
        tau.push(acc);
        for d in self.delta.iter() {
            acc += d;
            tau.push(acc);
        }
        tau
    }

    /// Interior switching times `[τ_1, ..., τ_N]`.
    pub fn interior_times(&self) -> Vec<f64> {
        let tau = self.switching_times();
        tau[1..tau.len() - 1].to_vec()
    }
}

/// Subdivision of one interval by the background grid points inside it.
#[derive(Clone, Debug)]
pub struct IntervalPartition {
    /// τ_i, the interval start.
    pub start: f64,
    /// Durations `δ_i^j` for j = 0..=n_i; `len() == n_i + 1`.
    pub sub_durations: Vec<f64>,
}

impl IntervalPartition {
    /// Count of strict-interior background points, n_i.
    pub fn interior_points(&self) -> usize {
        self.sub_durations.len() - 1
    }
}

/// The background grid together with the per-interval subdivision induced by
/// a candidate δ.
#[derive(Clone, Debug)]
pub struct GridPartition {
    pub intervals: Vec<IntervalPartition>,
    /// Grid spacing `T/(n_grid - 1)`; zero for the collapsed partition.
    pub spacing: f64,
}

impl GridPartition {
    /// Flatten the subdivision back to per-interval durations.
    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.intervals.len(),
            self.intervals.iter().map(|p| p.sub_durations.iter().sum()),
        )
    }

    pub fn total_subintervals(&self) -> usize {
        self.intervals.iter().map(|p| p.sub_durations.len()).sum()
    }
}

/// Assign the background grid points to intervals and subdivide.
///
/// Each grid point belongs to exactly one interval via half-open membership
/// `[τ_i, τ_{i+1})`; a point within `1e-12·T` of a switching time is merged
/// into it so no zero-length subinterval appears.
pub fn build_partition(p: &SwitchedProblem, intervals: &Intervals) -> Result<GridPartition> {
    let horizon = p.horizon;
    if intervals.len() != p.n_intervals() {
        return Err(Error::Dimension(format!(
            "expected {} intervals, got {}",
            p.n_intervals(),
            intervals.len()
        )));
    }
    let total = intervals.total();
    if (total - horizon).abs() > HORIZON_RTOL * horizon {
        return Err(Error::Infeasible(format!(
            "interval durations sum to {total}, expected T = {horizon}"
        )));
    }

    let spacing = horizon / (p.n_grid - 1) as f64;
    let merge_tol = GRID_COINCIDENCE_RTOL * horizon;
    let tau = intervals.switching_times();
    let delta = intervals.delta();

    let mut parts = Vec::with_capacity(intervals.len());
    for i in 0..intervals.len() {
        let (t_start, t_end) = (tau[i], tau[i + 1]);
        // First and last grid indices strictly inside (t_start, t_end),
        // excluding points that merge into either switching time.
        let k_lo = ((t_start + merge_tol) / spacing).floor() as i64 + 1;
        let k_hi = ((t_end - merge_tol) / spacing).ceil() as i64 - 1;
        let k_lo = k_lo.max(0);
        let k_hi = k_hi.min(p.n_grid as i64 - 1);

        let mut subs = Vec::new();
        let mut prev = t_start;
        for k in k_lo..=k_hi {
            let t = k as f64 * spacing;
            if t <= t_start + merge_tol || t >= t_end - merge_tol {
                continue;
            }
            subs.push(t - prev);
            prev = t;
        }
        // Close the interval with the remainder so the pieces reconstruct
        // δ_i exactly.
        let used: f64 = subs.iter().sum();
        subs.push((delta[i] - used).max(0.0));
        parts.push(IntervalPartition {
            start: t_start,
            sub_durations: subs,
        });
    }
    Ok(GridPartition {
        intervals: parts,
        spacing,
    })
}

/// One subinterval per interval, ignoring the grid. Used for purely linear
/// problems where no re-linearization is needed.
pub fn collapsed_partition(intervals: &Intervals) -> GridPartition {
    let tau = intervals.switching_times();
    let parts = intervals
        .delta()
        .iter()
        .enumerate()
        .map(|(i, d)| IntervalPartition {
            start: tau[i],
            sub_durations: vec![*d],
        })
        .collect();
    GridPartition {
        intervals: parts,
        spacing: 0.0,
    }
}

/// Euclidean projection of `raw` onto `Δ = {δ : max(0, lb) ≤ δ ≤ ub, Σδ = T}`.
///
/// The projection is `δ_i(λ) = clamp(raw_i - λ, lo_i, hi_i)` for the multiplier
/// λ solving `Σ δ_i(λ) = T`, found by bisection on the monotone sum.
pub fn project_to_delta(raw: &DVector<f64>, p: &SwitchedProblem) -> Result<Intervals> {
    let count = p.n_intervals();
    if raw.len() != count {
        return Err(Error::Dimension(format!(
            "expected {} durations, got {}",
            count,
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input".into()));
    }
    let horizon = p.horizon;
    let lo: Vec<f64> = p.lower.iter().map(|v| v.max(0.0)).collect();
    let hi: Vec<f64> = p.upper.iter().cloned().collect();
    let lo_sum: f64 = lo.iter().sum();
    let hi_sum: f64 = hi.iter().sum();
    if lo_sum > horizon * (1.0 + 1e-12) || hi_sum < horizon * (1.0 - 1e-12) {
        return Err(Error::EmptyConstraintSet(format!(
            "sum(lb) = {lo_sum}, sum(ub) = {hi_sum}, T = {horizon}"
        )));
    }

    // Already feasible: the projection of a member is itself.
    let feasible = (0..count).all(|i| raw[i] >= lo[i] - 1e-14 && raw[i] <= hi[i] + 1e-14)
        && (raw.sum() - horizon).abs() <= 1e-12 * horizon.max(1.0);
    if feasible {
        let clamped = DVector::from_fn(count, |i, _| raw[i].clamp(lo[i], hi[i]));
        return Intervals::new(clamped);
    }

    let sum_at = |lambda: f64| -> f64 {
        (0..count)
            .map(|i| (raw[i] - lambda).clamp(lo[i], hi[i]))
            .sum()
    };

    // Bracket the multiplier, expanding until the sum straddles T.
    let spread = raw.amax().max(horizon).max(1.0);
    let mut left = -spread;
    let mut right = spread;
    while sum_at(left) < horizon {
        left *= 2.0;
        if left < -1e300 {
            return Err(Error::Infeasible("projection bracketing failed".into()));
        }
    }
    while sum_at(right) > horizon {
        right *= 2.0;
        if right > 1e300 {
            return Err(Error::Infeasible("projection bracketing failed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (left + right);
        if sum_at(mid) >= horizon {
            left = mid;
        } else {
            right = mid;
        }
        if right - left <= f64::EPSILON * spread {
            break;
        }
    }
    let lambda = 0.5 * (left + right);
    let mut delta: Vec<f64> = (0..count)
        .map(|i| (raw[i] - lambda).clamp(lo[i], hi[i]))
        .collect();

    // Distribute the residual over the unclamped components so the sum is
    // exact to machine precision.
    let free: Vec<usize> = (0..count)
        .filter(|&i| delta[i] > lo[i] + 1e-14 && delta[i] < hi[i] - 1e-14)
        .collect();
    if !free.is_empty() {
        let residual = horizon - delta.iter().sum::<f64>();
        let share = residual / free.len() as f64;
        for &i in &free {
            delta[i] = (delta[i] + share).clamp(lo[i], hi[i]);
        }
    }
    Intervals::new(DVector::from_vec(delta))
}

/// Extend the problem with reference states so a tracking cost becomes a pure
/// state-regulation cost.
///
/// The state grows by one component per reference entry with dynamics
/// `ẋ_r = rdot`. The running-cost weight gains the cross terms that turn
/// `xᵀQx` into `xᵀQx - 2·x_selᵀx_r + ‖x_r‖²`; when the tracked block of `Q`
/// is the plain selector quadratic this equals `‖x_sel - x_r‖²`.
pub fn augment_problem(
    p: &SwitchedProblem,
    reference: Option<&ReferenceSignal>,
) -> Result<SwitchedProblem> {
    let reference = match reference {
        Some(r) => r,
        None => return Ok(p.clone()),
    };
    let n = p.state_dim();
    let n_r = reference.r0.len();
    if reference.rdot.len() != n_r || reference.tracked.len() != n_r {
        return Err(Error::Dimension(format!(
            "reference r0 ({}), rdot ({}) and tracked ({}) must have equal length",
            reference.r0.len(),
            reference.rdot.len(),
            reference.tracked.len()
        )));
    }
    for &idx in &reference.tracked {
        if idx >= n {
            return Err(Error::Dimension(format!(
                "tracked component {idx} out of range for state dimension {n}"
            )));
        }
    }

    let n_aug = n + n_r;
    let mut q = DMatrix::zeros(n_aug, n_aug);
    q.view_mut((0, 0), (n, n)).copy_from(p.q());
    for (k, &idx) in reference.tracked.iter().enumerate() {
        q[(idx, n + k)] -= 1.0;
        q[(n + k, idx)] -= 1.0;
        q[(n + k, n + k)] += 1.0;
    }
    let mut e = DMatrix::zeros(n_aug, n_aug);
    e.view_mut((0, 0), (n, n)).copy_from(p.e());

    let mut x0 = DVector::zeros(n_aug);
    x0.rows_mut(0, n).copy_from(p.x0());
    x0.rows_mut(n, n_r).copy_from(&reference.r0);

    let constant = reference.is_constant();
    let rdot = reference.rdot.clone();
    let modes = p
        .modes
        .iter()
        .map(|mode| match mode {
            ModeDynamics::Linear(a) if constant => {
                let mut aug = DMatrix::zeros(n_aug, n_aug);
                aug.view_mut((0, 0), (n, n)).copy_from(a);
                ModeDynamics::Linear(aug)
            }
            _ => {
                let inner = mode.clone();
                let inner_jac = mode.clone();
                let rdot_f = rdot.clone();
                ModeDynamics::nonlinear(
                    move |z: &DVector<f64>| {
                        let x = z.rows(0, n).into_owned();
                        let mut out = DVector::zeros(n_aug);
                        out.rows_mut(0, n).copy_from(&inner.eval(&x));
                        out.rows_mut(n, n_r).copy_from(&rdot_f);
                        out
                    },
                    move |z: &DVector<f64>| {
                        let x = z.rows(0, n).into_owned();
                        let mut out = DMatrix::zeros(n_aug, n_aug);
                        out.view_mut((0, 0), (n, n))
                            .copy_from(&inner_jac.jacobian_at(&x));
                        out
                    },
                )
            }
        })
        .collect();

    SwitchedProblem::new(modes, x0, q, e, p.horizon, p.n_grid)
        .and_then(|aug| aug.with_bounds(p.lower.clone(), p.upper.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simple_problem(n_modes: usize, horizon: f64, n_grid: usize) -> SwitchedProblem {
        let modes = (0..n_modes)
            .map(|_| ModeDynamics::linear(DMatrix::zeros(2, 2)).unwrap())
            .collect();
        SwitchedProblem::new(
            modes,
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            horizon,
            n_grid,
        )
        .unwrap()
    }

    #[test]
    fn partition_assigns_grid_points() {
        // Grid {0, .25, .5, .75, 1}; δ = [0.4, 0.6] puts .25 in the first
        // interval and {.5, .75} in the second.
        let p = simple_problem(2, 1.0, 5);
        let delta = Intervals::new(DVector::from_vec(vec![0.4, 0.6])).unwrap();
        let part = build_partition(&p, &delta).unwrap();
        assert_eq!(part.intervals[0].interior_points(), 1);
        assert_eq!(part.intervals[1].interior_points(), 2);
        let s0 = &part.intervals[0].sub_durations;
        let s1 = &part.intervals[1].sub_durations;
        assert_relative_eq!(s0[0], 0.25, epsilon = 1e-14);
        assert_relative_eq!(s0[1], 0.15, epsilon = 1e-14);
        assert_relative_eq!(s1[0], 0.10, epsilon = 1e-14);
        assert_relative_eq!(s1[1], 0.25, epsilon = 1e-14);
        assert_relative_eq!(s1[2], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn partition_collapsed_interval() {
        let p = simple_problem(3, 1.0, 5);
        let delta = Intervals::new(DVector::from_vec(vec![0.5, 0.0, 0.5])).unwrap();
        let part = build_partition(&p, &delta).unwrap();
        assert_eq!(part.intervals[1].interior_points(), 0);
        assert_eq!(part.intervals[1].sub_durations, vec![0.0]);
    }

    #[test]
    fn partition_rejects_wrong_total() {
        let p = simple_problem(2, 1.0, 5);
        let delta = Intervals::new(DVector::from_vec(vec![0.4, 0.7])).unwrap();
        assert!(matches!(
            build_partition(&p, &delta),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn partition_merges_coincident_points() {
        // τ_1 = 0.25 sits exactly on a grid point: it must not create a
        // zero-length subinterval on either side.
        let p = simple_problem(2, 1.0, 5);
        let delta = Intervals::new(DVector::from_vec(vec![0.25, 0.75])).unwrap();
        let part = build_partition(&p, &delta).unwrap();
        assert_eq!(part.intervals[0].interior_points(), 0);
        assert_eq!(part.intervals[1].interior_points(), 2);
        assert!(part
            .intervals
            .iter()
            .flat_map(|s| s.sub_durations.iter())
            .all(|d| *d > 1e-13));
    }

    #[test]
    fn projection_returns_member_unchanged() {
        let p = simple_problem(2, 1.0, 5);
        let raw = DVector::from_vec(vec![0.3, 0.7]);
        let proj = project_to_delta(&raw, &p).unwrap();
        assert_eq!(proj.delta(), &raw);
    }

    #[test]
    fn projection_symmetric_case() {
        let p = simple_problem(2, 1.0, 5);
        let proj = project_to_delta(&DVector::from_vec(vec![2.0, 2.0]), &p).unwrap();
        assert_relative_eq!(proj.delta()[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(proj.delta()[1], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn projection_clamps_negative_entry() {
        let p = simple_problem(2, 1.0, 5);
        let proj = project_to_delta(&DVector::from_vec(vec![-1.0, 3.0]), &p).unwrap();
        assert_relative_eq!(proj.delta()[0], 0.0, epsilon = 1e-10);
        assert_relative_eq!(proj.delta()[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn projection_detects_empty_set() {
        let p = simple_problem(2, 1.0, 5)
            .with_bounds(
                DVector::from_vec(vec![0.0, 0.0]),
                DVector::from_vec(vec![0.3, 0.3]),
            )
            .err()
            .unwrap();
        assert!(matches!(p, Error::EmptyConstraintSet(_)));
    }

    #[test]
    fn equally_spaced_respects_bounds() {
        let p = simple_problem(3, 1.0, 5)
            .with_bounds(
                DVector::from_vec(vec![0.5, 0.0, 0.0]),
                DVector::from_vec(vec![1.0, 1.0, 0.2]),
            )
            .unwrap();
        let init = p.equally_spaced().unwrap();
        let d = init.delta();
        assert!(d[0] >= 0.5 - 1e-10);
        assert!(d[2] <= 0.2 + 1e-10);
        assert_relative_eq!(init.total(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn augment_zero_reference_keeps_original_block() {
        let p = simple_problem(2, 1.0, 5);
        let reference = ReferenceSignal::constant(DVector::zeros(2), vec![0, 1]);
        let aug = augment_problem(&p, Some(&reference)).unwrap();
        assert_eq!(aug.state_dim(), 4);
        // With x_r(t) ≡ 0 the cross terms vanish along any trajectory:
        // zᵀQz = xᵀQ̄x whenever z = [x; 0].
        let z = DVector::from_vec(vec![0.3, -0.8, 0.0, 0.0]);
        let x = DVector::from_vec(vec![0.3, -0.8]);
        let full = (z.transpose() * aug.q() * &z)[(0, 0)];
        let orig = (x.transpose() * p.q() * &x)[(0, 0)];
        assert_relative_eq!(full, orig, epsilon = 1e-14);
        assert_eq!(aug.q().view((0, 0), (2, 2)), p.q().view((0, 0), (2, 2)));
    }

    #[test]
    fn augment_fishing_structure() {
        // Two tracked states with unit weights: the augmented quadratic is
        // the squared tracking error.
        let p = simple_problem(2, 1.0, 5);
        let reference =
            ReferenceSignal::constant(DVector::from_vec(vec![1.0, 1.0]), vec![0, 1]);
        let aug = augment_problem(&p, Some(&reference)).unwrap();
        let z = DVector::from_vec(vec![0.5, 0.7, 1.0, 1.0]);
        let err: f64 = (0.5f64 - 1.0).powi(2) + (0.7f64 - 1.0).powi(2);
        let cost = (z.transpose() * aug.q() * &z)[(0, 0)];
        assert_relative_eq!(cost, err, epsilon = 1e-14);
        // x0 extends with the reference start.
        assert_eq!(aug.x0().as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn augment_rejects_mismatched_reference() {
        let p = simple_problem(2, 1.0, 5);
        let reference = ReferenceSignal {
            r0: DVector::from_vec(vec![1.0]),
            rdot: DVector::zeros(1),
            tracked: vec![0, 1],
        };
        assert!(matches!(
            augment_problem(&p, Some(&reference)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn augment_preserves_psd() {
        let p = simple_problem(2, 1.0, 5);
        let reference =
            ReferenceSignal::constant(DVector::from_vec(vec![1.0, 2.0]), vec![0, 1]);
        // Constructor re-validates PSD-ness of the augmented weights.
        let aug = augment_problem(&p, Some(&reference)).unwrap();
        let min_eig = aug
            .q()
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-12);
    }
}
