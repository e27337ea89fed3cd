//! Continuous-time plants, their fixed-step RK4 discretization, and
//! finite-difference linearization about the goal equilibrium.
//!
//! Every solver in this crate works in *error coordinates*: the state minus
//! the goal, with angular entries wrapped into `[-π, π)`. Raw-coordinate
//! trajectories are only reconstructed for output.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type State = DVector<f64>;
pub type Control = DVector<f64>;

/// Default central-difference step for state and control perturbations.
pub const FD_EPS: f64 = 1e-5;

/// A continuous-time plant `dx/dt = g(x, u)` with a regulated equilibrium.
pub trait Dynamics: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Equilibrium under zero control that the controller regulates to.
    fn goal(&self) -> State;
    /// State indices that live on the circle.
    fn angle_indices(&self) -> &[usize];
    fn vector_field(&self, x: &State, u: &Control) -> State;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.1,
        }
    }
}

/// Torque-driven pendulum, state `(θ, θ̇)` with `θ = 0` hanging down.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub params: PendulumParams,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Self {
        Self { params }
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new(PendulumParams::default())
    }
}

impl Dynamics for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn goal(&self) -> State {
        State::from_vec(vec![PI, 0.0])
    }

    fn angle_indices(&self) -> &[usize] {
        &[0]
    }

    fn vector_field(&self, x: &State, u: &Control) -> State {
        let PendulumParams {
            mass,
            length,
            gravity,
            damping,
        } = self.params;
        let (theta, omega) = (x[0], x[1]);
        let inertia = mass * length * length;
        let alpha = (u[0] - damping * omega - mass * gravity * length * theta.sin()) / inertia;
        State::from_vec(vec![omega, alpha])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's center of mass.
    pub half_length: f64,
    pub gravity: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.81,
        }
    }
}

/// Frictionless cart with a uniform pole, state `(x, θ, ẋ, θ̇)` with `θ = 0`
/// hanging down. The control is the horizontal force on the cart.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self { params }
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new(CartPoleParams::default())
    }
}

impl Dynamics for CartPole {
    fn name(&self) -> &str {
        "cartpole"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn goal(&self) -> State {
        State::from_vec(vec![0.0, PI, 0.0, 0.0])
    }

    fn angle_indices(&self) -> &[usize] {
        &[1]
    }

    fn vector_field(&self, x: &State, u: &Control) -> State {
        let CartPoleParams {
            cart_mass,
            pole_mass,
            half_length: l,
            gravity,
        } = self.params;
        let (theta, xdot, thetadot) = (x[1], x[2], x[3]);
        let (s, c) = theta.sin_cos();

        // Lagrangian equations of motion:
        //   [M + m      m l c  ] [ẍ]   [f + m l s θ̇²]
        //   [m l c    4/3 m l² ] [θ̈] = [  -m g l s   ]
        let m11 = cart_mass + pole_mass;
        let m12 = pole_mass * l * c;
        let m22 = 4.0 / 3.0 * pole_mass * l * l;
        let r1 = u[0] + pole_mass * l * s * thetadot * thetadot;
        let r2 = -pole_mass * gravity * l * s;
        let det = m11 * m22 - m12 * m12;
        let xddot = (m22 * r1 - m12 * r2) / det;
        let thetaddot = (m11 * r2 - m12 * r1) / det;
        State::from_vec(vec![xdot, thetadot, xddot, thetaddot])
    }
}

/// Linear time-invariant plant `dx/dt = F x + G u` regulated to the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl LinearPlant {
    pub fn new(f: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        if !f.is_square() || g.nrows() != f.nrows() || g.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "linear plant shapes F {}x{}, G {}x{}",
                f.nrows(),
                f.ncols(),
                g.nrows(),
                g.ncols()
            )));
        }
        Ok(Self { f, g })
    }

    /// `ẋ₁ = x₂, ẋ₂ = u`.
    pub fn double_integrator() -> Self {
        Self {
            f: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            g: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        }
    }
}

impl Dynamics for LinearPlant {
    fn name(&self) -> &str {
        "linear"
    }

    fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    fn control_dim(&self) -> usize {
        self.g.ncols()
    }

    fn goal(&self) -> State {
        State::zeros(self.f.nrows())
    }

    fn angle_indices(&self) -> &[usize] {
        &[]
    }

    fn vector_field(&self, x: &State, u: &Control) -> State {
        &self.f * x + &self.g * u
    }
}

/// Registry of the bundled plants, selected by string id.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Pendulum(Pendulum),
    CartPole(CartPole),
    Linear(LinearPlant),
}

impl Model {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "pendulum" => Ok(Model::Pendulum(Pendulum::default())),
            "cartpole" | "cart-pole" => Ok(Model::CartPole(CartPole::default())),
            "double_integrator" => Ok(Model::Linear(LinearPlant::double_integrator())),
            other => Err(Error::InvalidArgument(format!("unknown model id {other:?}"))),
        }
    }

    fn inner(&self) -> &dyn Dynamics {
        match self {
            Model::Pendulum(m) => m,
            Model::CartPole(m) => m,
            Model::Linear(m) => m,
        }
    }
}

impl Dynamics for Model {
    fn name(&self) -> &str {
        self.inner().name()
    }

    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn control_dim(&self) -> usize {
        self.inner().control_dim()
    }

    fn goal(&self) -> State {
        self.inner().goal()
    }

    fn angle_indices(&self) -> &[usize] {
        self.inner().angle_indices()
    }

    fn vector_field(&self, x: &State, u: &Control) -> State {
        self.inner().vector_field(x, u)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = a - two_pi * ((a + PI) / two_pi).floor();
    // floor rounding can land exactly on +π for inputs just below it
    if w >= PI {
        w - two_pi
    } else {
        w
    }
}

/// One classical RK4 step with the control held constant over `dt`.
/// The result is not angle-wrapped.
pub fn rk4_step(model: &dyn Dynamics, x: &State, u: &Control, dt: f64) -> Result<State> {
    check_dim("state", x.len(), model.state_dim())?;
    check_dim("control", u.len(), model.control_dim())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let next = rk4_unchecked(model, x, u, dt);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NumericalBlowup { step: 0 })
    }
}

pub(crate) fn rk4_unchecked(model: &dyn Dynamics, x: &State, u: &Control, dt: f64) -> State {
    let k1 = model.vector_field(x, u);
    let k2 = model.vector_field(&(x + &k1 * (0.5 * dt)), u);
    let k3 = model.vector_field(&(x + &k2 * (0.5 * dt)), u);
    let k4 = model.vector_field(&(x + &k3 * dt), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// `x - x_goal` with angle entries wrapped into `[-π, π)`.
pub fn error_coords(model: &dyn Dynamics, x: &State) -> Result<State> {
    check_dim("state", x.len(), model.state_dim())?;
    Ok(error_coords_unchecked(model, x))
}

pub(crate) fn error_coords_unchecked(model: &dyn Dynamics, x: &State) -> State {
    let mut e = x - model.goal();
    for &i in model.angle_indices() {
        e[i] = wrap_angle(e[i]);
    }
    e
}

/// Inverse of [`error_coords`] on the principal branch.
pub fn from_error_coords(model: &dyn Dynamics, e: &State) -> Result<State> {
    check_dim("error state", e.len(), model.state_dim())?;
    Ok(e + model.goal())
}

/// Discrete-time linearization `x̃⁺ ≈ A x̃ + B u` about the goal.
#[derive(Debug, Clone, PartialEq)]
#[allow(non_snake_case)]
pub struct LinearizedSystem {
    pub A: DMatrix<f64>,
    pub B: DMatrix<f64>,
    pub dt: f64,
}

impl LinearizedSystem {
    pub fn state_dim(&self) -> usize {
        self.A.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.B.ncols()
    }

    /// Rank of `[B, AB, ..., A^{n-1}B]`.
    pub fn controllability_rank(&self) -> usize {
        let n = self.state_dim();
        let p = self.control_dim();
        let mut ctrb = DMatrix::zeros(n, n * p);
        let mut block = self.B.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * p), (n, p)).copy_from(&block);
            block = &self.A * block;
        }
        let svd = ctrb.svd(false, false);
        let smax = svd.singular_values.max();
        svd.rank(smax * 1e-10 * n as f64)
    }
}

/// Central-difference Jacobians of the RK4 map at an arbitrary raw point.
pub(crate) fn step_jacobians(
    model: &dyn Dynamics,
    x: &State,
    u: &Control,
    dt: f64,
    eps: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let p = u.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, p);
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + eps;
        let fp = rk4_unchecked(model, &xp, u, dt);
        xp[j] = x[j] - eps;
        let fm = rk4_unchecked(model, &xp, u, dt);
        xp[j] = x[j];
        a.set_column(j, &((fp - fm) / (2.0 * eps)));
    }
    let mut up = u.clone();
    for j in 0..p {
        up[j] = u[j] + eps;
        let fp = rk4_unchecked(model, x, &up, dt);
        up[j] = u[j] - eps;
        let fm = rk4_unchecked(model, x, &up, dt);
        up[j] = u[j];
        b.set_column(j, &((fp - fm) / (2.0 * eps)));
    }
    (a, b)
}

/// Linearizes the discretized plant about `(x_goal, 0)` in error coordinates.
pub fn linearize_discrete(model: &dyn Dynamics, dt: f64, eps: f64) -> Result<LinearizedSystem> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let n = model.state_dim();
    let p = model.control_dim();
    let goal = model.goal();
    let mapped = |e: &State, u: &Control| -> State {
        let x = e + &goal;
        error_coords_unchecked(model, &rk4_unchecked(model, &x, u, dt))
    };

    let zero_x = State::zeros(n);
    let zero_u = Control::zeros(p);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, p);
    for j in 0..n {
        let mut e = zero_x.clone();
        e[j] = eps;
        let fp = mapped(&e, &zero_u);
        e[j] = -eps;
        let fm = mapped(&e, &zero_u);
        a.set_column(j, &((fp - fm) / (2.0 * eps)));
    }
    for j in 0..p {
        let mut u = zero_u.clone();
        u[j] = eps;
        let fp = mapped(&zero_x, &u);
        u[j] = -eps;
        let fm = mapped(&zero_x, &u);
        b.set_column(j, &((fp - fm) / (2.0 * eps)));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linearization"));
    }
    Ok(LinearizedSystem { A: a, B: b, dt })
}
