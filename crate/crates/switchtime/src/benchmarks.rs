//! Bundled benchmark problems and their builtin nonlinear vector fields.

use nalgebra::{DMatrix, DVector};

use crate::nlpsolve::SolverOptions;
use crate::problem::ModeDynamics;
use crate::schema::{
    DoubleTankParams, LotkaVolterraParams, ModeSpec, ProblemFile, ReferenceSpec,
};

/// Lotka-Volterra predator-prey dynamics with a fishing control `u`:
/// `ẋ_1 = x_1 - x_1 x_2 - c1 x_1 u`, `ẋ_2 = -x_2 + x_1 x_2 - c2 x_2 u`.
pub fn lotka_volterra_mode(c1: f64, c2: f64, u: f64) -> ModeDynamics {
    ModeDynamics::nonlinear(
        move |x: &DVector<f64>| {
            DVector::from_vec(vec![
                x[0] - x[0] * x[1] - c1 * x[0] * u,
                -x[1] + x[0] * x[1] - c2 * x[1] * u,
            ])
        },
        move |x: &DVector<f64>| {
            DMatrix::from_row_slice(
                2,
                2,
                &[1.0 - x[1] - c1 * u, -x[0], x[1], -1.0 + x[0] - c2 * u],
            )
        },
    )
}

/// Two cascaded tanks with inflow `u` into the upper tank:
/// `ẋ_1 = -√x_1 + u`, `ẋ_2 = √x_1 - √x_2`. Levels are clamped away from
/// zero so trial evaluations outside the physical region stay finite.
pub fn double_tank_mode(u: f64) -> ModeDynamics {
    let safe_sqrt = |v: f64| v.max(1e-9).sqrt();
    ModeDynamics::nonlinear(
        move |x: &DVector<f64>| {
            DVector::from_vec(vec![-safe_sqrt(x[0]) + u, safe_sqrt(x[0]) - safe_sqrt(x[1])])
        },
        move |x: &DVector<f64>| {
            let d1 = 1.0 / (2.0 * safe_sqrt(x[0]));
            let d2 = 1.0 / (2.0 * safe_sqrt(x[1]));
            DMatrix::from_row_slice(2, 2, &[-d1, 0.0, d1, -d2])
        },
    )
}

fn identity_rows(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn zero_rows(n: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; n]; n]
}

/// Two unstable 2x2 dynamics switching five times over a unit horizon with a
/// pure running cost. Linear, so the grid size is irrelevant.
pub fn unstable_linear() -> ProblemFile {
    let a1 = vec![vec![-1.0, 0.0], vec![1.0, 2.0]];
    let a2 = vec![vec![1.0, 1.0], vec![1.0, -2.0]];
    let modes = (0..6)
        .map(|i| ModeSpec::Linear {
            a: if i % 2 == 0 { a1.clone() } else { a2.clone() },
        })
        .collect();
    ProblemFile {
        n_x: 2,
        modes,
        x0: vec![1.0, 1.0],
        q: identity_rows(2),
        e: zero_rows(2),
        horizon: 1.0,
        n_grid: 2,
        lb: None,
        ub: None,
        reference: None,
    }
}

/// Lotka-Volterra fishing: eight switches between not fishing (u = 0) and
/// fishing (u = 1), steering both biomasses to the unit steady state over
/// twelve time units.
pub fn fishing(n_grid: usize) -> ProblemFile {
    let modes = (0..9)
        .map(|i| ModeSpec::LotkaVolterra {
            lotka_volterra: LotkaVolterraParams {
                c1: 0.4,
                c2: 0.2,
                u: (i % 2) as f64,
            },
        })
        .collect();
    ProblemFile {
        n_x: 2,
        modes,
        x0: vec![0.5, 0.7],
        q: identity_rows(2),
        e: zero_rows(2),
        horizon: 12.0,
        n_grid,
        lb: None,
        ub: None,
        reference: Some(ReferenceSpec {
            r0: vec![1.0, 1.0],
            rdot: vec![0.0, 0.0],
            tracked: vec![0, 1],
        }),
    }
}

/// Double-tank level tracking: fifteen switches between the low (u = 1) and
/// high (u = 2) inflow, tracking the slowly draining reference `3 - 0.05t`
/// with the lower tank.
pub fn tank(n_grid: usize) -> ProblemFile {
    let modes = (0..16)
        .map(|i| ModeSpec::DoubleTank {
            double_tank: DoubleTankParams {
                u: if i % 2 == 0 { 1.0 } else { 2.0 },
            },
        })
        .collect();
    ProblemFile {
        n_x: 2,
        modes,
        x0: vec![2.0, 2.0],
        q: vec![vec![0.0, 0.0], vec![0.0, 1.0]],
        e: zero_rows(2),
        horizon: 10.0,
        n_grid,
        lb: None,
        ub: None,
        reference: Some(ReferenceSpec {
            r0: vec![3.0],
            rdot: vec![-0.05],
            tracked: vec![1],
        }),
    }
}

/// Builtin problems by CLI name, at their default grid sizes.
pub fn builtin(name: &str) -> Option<ProblemFile> {
    match name {
        "unstable-linear" => Some(unstable_linear()),
        "fishing" => Some(fishing(200)),
        "tank" => Some(tank(100)),
        _ => None,
    }
}

/// Solver settings used for each bundled benchmark.
pub fn builtin_solver_options(name: &str) -> SolverOptions {
    let mut opts = SolverOptions::default();
    match name {
        "fishing" => opts.max_iter = 20,
        "tank" => opts.max_iter = 15,
        _ => {}
    }
    opts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_resolve() {
        assert!(builtin("unstable-linear").is_some());
        assert!(builtin("fishing").is_some());
        assert!(builtin("tank").is_some());
        assert!(builtin("unknown").is_none());
    }

    #[test]
    fn fishing_problem_shape() {
        let p = fishing(200).to_problem().unwrap();
        assert_eq!(p.n_intervals(), 9);
        assert_eq!(p.state_dim(), 4);
        assert_eq!(p.horizon(), 12.0);
    }

    #[test]
    fn tank_problem_shape() {
        let p = tank(100).to_problem().unwrap();
        assert_eq!(p.n_intervals(), 16);
        assert_eq!(p.state_dim(), 3);
        assert_eq!(p.horizon(), 10.0);
    }

    #[test]
    fn unstable_linear_is_linear() {
        let p = unstable_linear().to_problem().unwrap();
        assert!(p.is_linear());
        assert_eq!(p.n_switches(), 5);
    }
}
