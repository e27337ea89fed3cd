//! Stationary discrete-time Riccati solution for the goal linearization,
//! and closed-loop LQR rollouts on the nonlinear plant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::QuadraticCost;
use crate::dynamics::{error_coords_unchecked, rk4_unchecked, Control, Dynamics, LinearizedSystem, State};
use crate::error::{check_dim, Error, Result};
use crate::trajectory::Trajectory;

pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 100_000;

/// Error-norm above which a closed-loop rollout is declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p_inf: DMatrix<f64>,
    /// Feedback gain, `u = -K x̃`.
    pub k: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl RiccatiSolution {
    /// `x̃'P∞x̃`.
    pub fn value(&self, e: &State) -> f64 {
        e.dot(&(&self.p_inf * e))
    }

    pub fn control(&self, e: &State) -> Control {
        -(&self.k * e)
    }
}

fn gain(lin: &LinearizedSystem, cost: &QuadraticCost, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bt_p = lin.B.transpose() * p;
    let s = &cost.R + &bt_p * &lin.B;
    let chol = s.cholesky().ok_or(Error::Singular("R + B'PB"))?;
    Ok(chol.solve(&(bt_p * &lin.A)))
}

/// One application of `P ↦ A'PA - A'PB(R + B'PB)⁻¹B'PA + Q`.
pub fn riccati_step(
    lin: &LinearizedSystem,
    cost: &QuadraticCost,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = gain(lin, cost, p)?;
    let at_p = lin.A.transpose() * p;
    let next = &at_p * &lin.A - &at_p * &lin.B * k + &cost.Q;
    Ok((&next + next.transpose()) * 0.5)
}

/// `‖P - (A'PA - A'PB(R + B'PB)⁻¹B'PA + Q)‖∞` (max-abs entry).
pub fn dare_residual(lin: &LinearizedSystem, cost: &QuadraticCost, p: &DMatrix<f64>) -> Result<f64> {
    Ok((p - riccati_step(lin, cost, p)?).amax())
}

/// Value iteration on the Riccati recursion from `P₀ = Q`.
pub fn solve_dare(
    lin: &LinearizedSystem,
    cost: &QuadraticCost,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    check_dim("cost Q", cost.state_dim(), lin.state_dim())?;
    check_dim("cost R", cost.control_dim(), lin.control_dim())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let mut p = cost.Q.clone();
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let next = riccati_step(lin, cost, &p)?;
        change = (&next - &p).amax();
        if !change.is_finite() {
            return Err(Error::NonFinite("Riccati iteration"));
        }
        p = next;
        if change <= tol {
            let k = gain(lin, cost, &p)?;
            let residual = dare_residual(lin, cost, &p)?;
            return Ok(RiccatiSolution {
                p_inf: p,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last_change: change,
    })
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Closed-loop rollout with `u_t = -K x̃_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRollout {
    pub trajectory: Trajectory,
    /// Set when the state left the finite range or exceeded [`DIVERGENCE_NORM`];
    /// the trajectory then stops at the last finite state.
    pub diverged: bool,
    pub final_error: f64,
}

pub fn lqr_rollout(
    model: &dyn Dynamics,
    cost: &QuadraticCost,
    gain: &DMatrix<f64>,
    x0: &State,
    steps: usize,
    dt: f64,
) -> Result<ClosedLoopRollout> {
    check_dim("x0", x0.len(), model.state_dim())?;
    if gain.nrows() != model.control_dim() || gain.ncols() != model.state_dim() {
        return Err(Error::InvalidArgument(format!(
            "gain is {}x{}, expected {}x{}",
            gain.nrows(),
            gain.ncols(),
            model.control_dim(),
            model.state_dim()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut states = vec![x0.clone()];
    let mut controls = Vec::with_capacity(steps);
    let mut step_costs = Vec::with_capacity(steps);
    let mut diverged = false;
    let mut x = x0.clone();
    for _ in 0..steps {
        let e = error_coords_unchecked(model, &x);
        let u = -(gain * &e);
        let c = cost.eval(&e, &u);
        let next = rk4_unchecked(model, &x, &u, dt);
        if !c.is_finite() || next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        controls.push(u);
        step_costs.push(c);
        states.push(next.clone());
        x = next;
        if error_coords_unchecked(model, &x).norm() > DIVERGENCE_NORM {
            diverged = true;
            break;
        }
    }
    let final_error = error_coords_unchecked(model, &x).norm();
    Ok(ClosedLoopRollout {
        trajectory: Trajectory::from_parts(states, controls, step_costs, 0.0),
        diverged,
        final_error,
    })
}
