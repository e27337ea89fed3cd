use serde::{Deserialize, Serialize};

use crate::cost::{QuadraticCost, TerminalCost};
use crate::dynamics::{error_coords_unchecked, rk4_unchecked, Control, Dynamics, State};
use crate::error::{check_dim, Error, Result};

/// Open-loop rollout with per-step cost bookkeeping. States are in raw
/// coordinates; costs are evaluated in error coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub step_costs: Vec<f64>,
    pub terminal_cost_value: f64,
    pub total_cost: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn state(&self, t: usize) -> State {
        State::from_column_slice(&self.states[t])
    }

    pub fn control(&self, t: usize) -> Control {
        Control::from_column_slice(&self.controls[t])
    }

    pub fn final_state(&self) -> State {
        self.state(self.states.len() - 1)
    }

    pub fn stage_cost(&self) -> f64 {
        self.step_costs.iter().fold(0.0, |a, c| a + c)
    }

    pub fn controls_as_vectors(&self) -> Vec<Control> {
        (0..self.horizon()).map(|t| self.control(t)).collect()
    }

    pub(crate) fn from_parts(
        states: Vec<State>,
        controls: Vec<Control>,
        step_costs: Vec<f64>,
        terminal_cost_value: f64,
    ) -> Self {
        let total_cost = step_costs.iter().fold(0.0, |a, c| a + c) + terminal_cost_value;
        Self {
            states: states.iter().map(|s| s.as_slice().to_vec()).collect(),
            controls: controls.iter().map(|u| u.as_slice().to_vec()).collect(),
            step_costs,
            terminal_cost_value,
            total_cost,
        }
    }
}

/// Rolls `controls` forward from `x0` and tallies the cost.
pub fn evaluate_controls(
    model: &dyn Dynamics,
    cost: &QuadraticCost,
    terminal: &TerminalCost,
    x0: &State,
    controls: &[Control],
    dt: f64,
) -> Result<Trajectory> {
    check_dim("x0", x0.len(), model.state_dim())?;
    check_dim("cost Q", cost.state_dim(), model.state_dim())?;
    check_dim("cost R", cost.control_dim(), model.control_dim())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    for (t, u) in controls.iter().enumerate() {
        check_dim("control", u.len(), model.control_dim())?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite control at step {t}")));
        }
    }
    let (states, step_costs, terminal_value) = rollout(model, cost, terminal, x0, controls, dt)?;
    Ok(Trajectory::from_parts(
        states,
        controls.to_vec(),
        step_costs,
        terminal_value,
    ))
}

pub(crate) fn rollout(
    model: &dyn Dynamics,
    cost: &QuadraticCost,
    terminal: &TerminalCost,
    x0: &State,
    controls: &[Control],
    dt: f64,
) -> Result<(Vec<State>, Vec<f64>, f64)> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut step_costs = Vec::with_capacity(controls.len());
    let mut x = x0.clone();
    for (t, u) in controls.iter().enumerate() {
        let e = error_coords_unchecked(model, &x);
        step_costs.push(cost.eval(&e, u));
        let next = rk4_unchecked(model, &x, u, dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { step: t });
        }
        states.push(std::mem::replace(&mut x, next));
    }
    let terminal_value = terminal.eval(&error_coords_unchecked(model, &x));
    states.push(x);
    if !terminal_value.is_finite() || step_costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("rollout cost"));
    }
    Ok((states, step_costs, terminal_value))
}
