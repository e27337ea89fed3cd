//! Iterative LQR for the fixed-horizon problem
//! `min Σ_{t<T} c(x̃_t, u_t) + Φ(x̃_T)` subject to the RK4-discretized plant.
//!
//! Dynamics derivatives come from central differences of the RK4 map along
//! the current trajectory; cost derivatives are exact. The control Hessian
//! is regularized with `λI` on a Levenberg schedule and every step goes
//! through a backtracking line search on the exact objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::{QuadraticCost, TerminalCost};
use crate::dynamics::{error_coords_unchecked, step_jacobians, Control, Dynamics, State, FD_EPS};
use crate::error::{check_dim, Error, Result};
use crate::trajectory::{rollout, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlqrOptions {
    pub max_iterations: usize,
    /// Converged once a step improves the cost by less than
    /// `convergence_tol · (1 + |J|)`.
    pub convergence_tol: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    /// Factor applied to λ after a failed backward pass or line search.
    pub reg_scale: f64,
    /// Divisor applied to λ after an accepted step.
    pub reg_decrease: f64,
    pub line_search_alphas: Vec<f64>,
    pub fd_eps: f64,
}

impl Default for IlqrOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            convergence_tol: 1e-7,
            reg_init: 1e-6,
            reg_min: 1e-8,
            reg_max: 1e8,
            reg_scale: 10.0,
            reg_decrease: 2.0,
            line_search_alphas: (0..=10).map(|k| 0.5f64.powi(k)).collect(),
            fd_eps: FD_EPS,
        }
    }
}

impl IlqrOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("ilqr options: {msg}")));
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be positive");
        }
        if !(self.reg_min > 0.0 && self.reg_min <= self.reg_init && self.reg_init <= self.reg_max) {
            return bad("need 0 < reg_min <= reg_init <= reg_max");
        }
        if !(self.reg_scale > 1.0 && self.reg_decrease > 1.0) {
            return bad("regularization factors must exceed 1");
        }
        let alphas = &self.line_search_alphas;
        if alphas.first() != Some(&1.0)
            || alphas.windows(2).any(|w| w[1] >= w[0])
            || alphas.iter().any(|a| !(*a > 0.0))
        {
            return bad("line_search_alphas must start at 1 and strictly descend in (0, 1]");
        }
        if !(self.fd_eps > 0.0) {
            return bad("fd_eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlqrResult {
    pub trajectory: Trajectory,
    pub converged: bool,
    pub iterations: usize,
    /// Cost after the initial rollout and after every accepted step.
    pub cost_history: Vec<f64>,
    /// λ at the start of every iteration.
    pub reg_history: Vec<f64>,
    #[serde(skip)]
    pub feedback_gains: Vec<DMatrix<f64>>,
}

struct Candidate {
    states: Vec<State>,
    controls: Vec<Control>,
    step_costs: Vec<f64>,
    terminal: f64,
    total: f64,
}

impl Candidate {
    fn into_trajectory(self) -> Trajectory {
        Trajectory::from_parts(self.states, self.controls, self.step_costs, self.terminal)
    }
}

struct Plan {
    ff: Vec<Control>,
    fb: Vec<DMatrix<f64>>,
    /// Linear and quadratic terms of the predicted cost change, per unit α.
    dv: (f64, f64),
}

struct Problem<'a> {
    model: &'a dyn Dynamics,
    cost: &'a QuadraticCost,
    terminal: &'a TerminalCost,
    x0: &'a State,
    dt: f64,
}

impl Problem<'_> {
    fn simulate(&self, controls: Vec<Control>) -> Result<Candidate> {
        let (states, step_costs, terminal) =
            rollout(self.model, self.cost, self.terminal, self.x0, &controls, self.dt)?;
        let total = step_costs.iter().fold(0.0, |a, c| a + c) + terminal;
        Ok(Candidate {
            states,
            controls,
            step_costs,
            terminal,
            total,
        })
    }

    fn backward(
        &self,
        cand: &Candidate,
        jac: &[(DMatrix<f64>, DMatrix<f64>)],
        reg: f64,
    ) -> Option<Plan> {
        let horizon = cand.controls.len();
        let p = self.model.control_dim();
        let q2 = &self.cost.Q * 2.0;
        let r2 = &self.cost.R * 2.0;
        let e_final = error_coords_unchecked(self.model, &cand.states[horizon]);
        let (mut vx, mut vxx) = self.terminal.derivatives(&e_final);

        let mut ff = vec![Control::zeros(p); horizon];
        let mut fb = vec![DMatrix::zeros(p, self.model.state_dim()); horizon];
        let mut dv = (0.0, 0.0);
        for t in (0..horizon).rev() {
            let (fx, fu) = &jac[t];
            let e = error_coords_unchecked(self.model, &cand.states[t]);
            let u = &cand.controls[t];
            let fxt = fx.transpose();
            let fut = fu.transpose();

            let qx = &q2 * &e + &fxt * &vx;
            let qu = &r2 * u + &fut * &vx;
            let vxx_fx = &vxx * fx;
            let qxx = &q2 + &fxt * &vxx_fx;
            let qux = &fut * &vxx_fx;
            let quu = &r2 + &fut * &vxx * fu;

            let mut quu_reg = quu.clone();
            for i in 0..p {
                quu_reg[(i, i)] += reg;
            }
            let chol = quu_reg.cholesky()?;
            let k = -chol.solve(&qu);
            let big_k = -chol.solve(&qux);

            dv.0 += k.dot(&qu);
            dv.1 += 0.5 * k.dot(&(&quu * &k));

            let kt = big_k.transpose();
            vx = &qx + &kt * &quu * &k + &kt * &qu + qux.transpose() * &k;
            let next_vxx = &qxx + &kt * &quu * &big_k + &kt * &qux + qux.transpose() * &big_k;
            vxx = (&next_vxx + next_vxx.transpose()) * 0.5;
            if vx.iter().chain(vxx.iter()).any(|v| !v.is_finite()) {
                return None;
            }
            ff[t] = k;
            fb[t] = big_k;
        }
        Some(Plan { ff, fb, dv })
    }

    fn forward(&self, cand: &Candidate, plan: &Plan, alpha: f64) -> Result<Candidate> {
        let mut x = self.x0.clone();
        let mut controls = Vec::with_capacity(cand.controls.len());
        for t in 0..cand.controls.len() {
            let dx = &x - &cand.states[t];
            let u = &cand.controls[t] + &plan.ff[t] * alpha + &plan.fb[t] * dx;
            x = crate::dynamics::rk4_unchecked(self.model, &x, &u, self.dt);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalBlowup { step: t });
            }
            controls.push(u);
        }
        self.simulate(controls)
    }
}

/// Solves the fixed-horizon problem of length `horizon` from `x0`.
///
/// Non-convergence within `max_iterations` is reported through
/// `converged = false` rather than an error.
#[allow(clippy::too_many_arguments)]
pub fn solve_fhocp(
    model: &dyn Dynamics,
    cost: &QuadraticCost,
    terminal: &TerminalCost,
    x0: &State,
    horizon: usize,
    dt: f64,
    init_controls: Option<&[Control]>,
    opts: &IlqrOptions,
) -> Result<IlqrResult> {
    opts.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    check_dim("x0", x0.len(), model.state_dim())?;
    let controls = match init_controls {
        Some(init) => {
            check_dim("init_controls", init.len(), horizon)?;
            for u in init {
                check_dim("control", u.len(), model.control_dim())?;
            }
            init.to_vec()
        }
        None => vec![Control::zeros(model.control_dim()); horizon],
    };
    // dimension and dt checks, plus the initial rollout
    let first = crate::trajectory::evaluate_controls(model, cost, terminal, x0, &controls, dt)?;
    let problem = Problem {
        model,
        cost,
        terminal,
        x0,
        dt,
    };
    let mut cand = Candidate {
        states: first.states.iter().map(|s| State::from_column_slice(s)).collect(),
        controls,
        step_costs: first.step_costs,
        terminal: first.terminal_cost_value,
        total: first.total_cost,
    };

    let mut cost_history = vec![cand.total];
    let mut reg_history = Vec::new();
    let mut reg = opts.reg_init;
    let mut converged = false;
    let mut gains = Vec::new();
    let mut jac = linearize_along(&problem, &cand, opts.fd_eps);
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        reg_history.push(reg);
        let Some(plan) = problem.backward(&cand, &jac, reg) else {
            reg *= opts.reg_scale;
            if reg > opts.reg_max {
                break;
            }
            continue;
        };

        let tol = opts.convergence_tol * (1.0 + cand.total.abs());
        if -(plan.dv.0 + plan.dv.1) < tol {
            // predicted full-step improvement is already below tolerance
            converged = true;
            gains = plan.fb;
            break;
        }

        let mut accepted = None;
        for &alpha in &opts.line_search_alphas {
            match problem.forward(&cand, &plan, alpha) {
                Ok(next) if next.total < cand.total => {
                    accepted = Some(next);
                    break;
                }
                Ok(_) | Err(Error::NumericalBlowup { .. }) | Err(Error::NonFinite(_)) => {}
                Err(e) => return Err(e),
            }
        }

        match accepted {
            Some(next) => {
                let improvement = cand.total - next.total;
                cand = next;
                cost_history.push(cand.total);
                gains = plan.fb;
                reg = (reg / opts.reg_decrease).max(opts.reg_min);
                if improvement < opts.convergence_tol * (1.0 + cand.total.abs()) {
                    converged = true;
                    break;
                }
                jac = linearize_along(&problem, &cand, opts.fd_eps);
            }
            None => {
                reg *= opts.reg_scale;
                if reg > opts.reg_max {
                    break;
                }
            }
        }
    }

    Ok(IlqrResult {
        trajectory: cand.into_trajectory(),
        converged,
        iterations,
        cost_history,
        reg_history,
        feedback_gains: gains,
    })
}

fn linearize_along(
    problem: &Problem<'_>,
    cand: &Candidate,
    eps: f64,
) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    cand.controls
        .iter()
        .zip(&cand.states)
        .map(|(u, x)| step_jacobians(problem.model, x, u, problem.dt, eps))
        .collect()
}
