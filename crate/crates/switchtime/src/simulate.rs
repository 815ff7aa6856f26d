//! Independent verification by direct integration of the true switched
//! dynamics with a Dormand-Prince 4(5) adaptive stepper.
//!
//! The running cost is integrated as an appended quadrature state
//! `ℓ̇ = xᵀQx` so its accuracy rides on the same step controller as the
//! state. Integration restarts exactly at every switching time; no step
//! straddles a switch.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{Intervals, SwitchedProblem};
use crate::sensitivity;

/// Butcher tableau of the Dormand-Prince 5(4) pair. The stage times are
/// omitted: the switched fields are autonomous.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// 5th-order weights (row 7 of the tableau; FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Embedded 4th-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Densely sampled solution of the true switched dynamics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Strictly increasing sample times; every switching time appears.
    pub times: Vec<f64>,
    /// State at each sample (problem dimension, no augmentation).
    pub states: Vec<DVector<f64>>,
    /// Index of the mode active on `[times[k], times[k+1])`.
    pub modes: Vec<usize>,
    /// Accumulated running cost `∫₀^t xᵀQx` at each sample.
    pub running_cost: Vec<f64>,
    /// `ℓ(T) + x(T)ᵀ E x(T)`.
    pub j_oracle: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Optional cap on the step size, e.g. to guarantee sample density.
    pub max_step: Option<f64>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: None,
        }
    }
}

/// Integrate the switched problem over `[0, T_δ]` restarting at every
/// switching time, and accumulate the quadratic running cost.
pub fn integrate(p: &SwitchedProblem, intervals: &Intervals, rtol: f64, atol: f64) -> Result<Trajectory> {
    integrate_with(
        p,
        intervals,
        IntegrateOptions {
            rtol,
            atol,
            max_step: None,
        },
    )
}

pub fn integrate_with(
    p: &SwitchedProblem,
    intervals: &Intervals,
    opts: IntegrateOptions,
) -> Result<Trajectory> {
    if intervals.len() != p.n_intervals() {
        return Err(Error::Dimension(format!(
            "expected {} intervals, got {}",
            p.n_intervals(),
            intervals.len()
        )));
    }
    for (tol, name) in [(opts.rtol, "rtol"), (opts.atol, "atol")] {
        if !(tol > 0.0 && tol <= 1e-2) {
            return Err(Error::InvalidProblem(format!(
                "{name} = {tol} outside (0, 1e-2]"
            )));
        }
    }
    if intervals.delta().iter().any(|d| *d < 0.0) {
        return Err(Error::Infeasible("negative duration".into()));
    }

    let n = p.state_dim();
    let q = p.q();
    let mut x = p.x0().clone();
    let mut cost = 0.0;
    let mut t = 0.0;

    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut modes = vec![active_mode(intervals, 0)];
    let mut running = vec![0.0];

    let tau = intervals.switching_times();
    for (i, mode) in p.modes().iter().enumerate() {
        let span = intervals.delta()[i];
        if span == 0.0 {
            continue;
        }
        let t_end = tau[i + 1];
        // Work state y = [x; ℓ].
        let mut y = DVector::zeros(n + 1);
        y.rows_mut(0, n).copy_from(&x);
        y[n] = cost;
        let field = |y: &DVector<f64>| -> DVector<f64> {
            let xs = y.rows(0, n).into_owned();
            let dx = mode.eval(&xs);
            let mut dy = DVector::zeros(n + 1);
            dy.rows_mut(0, n).copy_from(&dx);
            dy[n] = xs.dot(&(q * &xs));
            dy
        };

        let mut h = initial_step(&field, &y, span, opts.rtol);
        if let Some(cap) = opts.max_step {
            h = h.min(cap);
        }
        let mut k1 = field(&y);
        loop {
            let remaining = t_end - t;
            if remaining <= 1e-14 * t_end.max(1.0) {
                break;
            }
            h = h.min(remaining);
            if h < 1e-14 * span.max(1.0) {
                return Err(Error::StepSizeUnderflow(t));
            }

            // Stage evaluations.
            let mut k = vec![k1.clone()];
            for s in 1..7 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a_sj = A[s - 1][j];
                    if a_sj != 0.0 {
                        ys += kj * (h * a_sj);
                    }
                }
                k.push(field(&ys));
            }

            let mut y5 = y.clone();
            let mut y4 = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if B5[j] != 0.0 {
                    y5 += kj * (h * B5[j]);
                }
                if B4[j] != 0.0 {
                    y4 += kj * (h * B4[j]);
                }
            }

            // Weighted RMS error estimate.
            let mut err_acc = 0.0;
            for idx in 0..y.len() {
                let scale = opts.atol + opts.rtol * y[idx].abs().max(y5[idx].abs());
                let e = (y5[idx] - y4[idx]) / scale;
                err_acc += e * e;
            }
            let err = (err_acc / y.len() as f64).sqrt();

            if !err.is_finite() {
                return Err(Error::StepSizeUnderflow(t));
            }
            if err <= 1.0 {
                t += h;
                y = y5;
                k1 = k[6].clone(); // FSAL: last stage is f at the new point
                let xs = y.rows(0, n).into_owned();
                times.push(t);
                states.push(xs);
                modes.push(i);
                running.push(y[n]);
            }
            let factor = if err > 0.0 {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h *= factor;
            if let Some(cap) = opts.max_step {
                h = h.min(cap);
            }
        }

        x = y.rows(0, n).into_owned();
        cost = y[n];
        // Land exactly on the switching time.
        t = t_end;
        *times.last_mut().unwrap() = t_end;
    }

    let terminal = x.dot(&(p.e() * &x));
    let j_oracle = cost + terminal;

    // Mode labels: sample k is governed by the interval containing
    // [times[k], times[k+1]); recompute for exactness at switch samples.
    for (k, time) in times.iter().enumerate() {
        modes[k] = active_mode_at(intervals, *time);
    }

    Ok(Trajectory {
        times,
        states,
        modes,
        running_cost: running,
        j_oracle,
    })
}

fn active_mode(intervals: &Intervals, index: usize) -> usize {
    // First interval with positive duration at or after `index`.
    for i in index..intervals.len() {
        if intervals.delta()[i] > 0.0 {
            return i;
        }
    }
    intervals.len() - 1
}

fn active_mode_at(intervals: &Intervals, t: f64) -> usize {
    let tau = intervals.switching_times();
    for i in 0..intervals.len() {
        if intervals.delta()[i] == 0.0 {
            continue;
        }
        if (t < tau[i + 1] || i == intervals.len() - 1) && t >= tau[i] {
            return i;
        }
    }
    active_mode(intervals, 0)
}

fn initial_step<F>(field: &F, y: &DVector<f64>, span: f64, rtol: f64) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let dy = field(y);
    let d0 = y.norm().max(1e-8);
    let d1 = dy.norm().max(1e-8);
    (0.01 * d0 / d1).min(0.1 * span).max(1e-10 * span).min(rtol.sqrt() * span)
}

/// Relative gap between the integrated cost and the linearized-model cost,
/// `|J_ode - J_lin| / |J_ode|` (absolute gap when the oracle cost vanishes).
pub fn linearization_gap(p: &SwitchedProblem, intervals: &Intervals, rtol: f64) -> Result<f64> {
    let oracle = integrate(p, intervals, rtol, rtol * 1e-2)?;
    let lin = sensitivity::evaluate(p, intervals)?;
    let diff = (oracle.j_oracle - lin.j).abs();
    if oracle.j_oracle.abs() < 1e-300 {
        return Ok(diff);
    }
    Ok(diff / oracle.j_oracle.abs())
}
