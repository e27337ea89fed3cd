//! Free-final-time transfer into the Riccati level set
//! `Ω_M = {x̃ : x̃'P∞x̃ ≤ M}` followed by LQR regulation.
//!
//! The free final time is realized as an ascending sweep over horizons,
//! each a fixed-horizon iLQR solve with the Riccati terminal cost, stopping
//! at the first horizon whose optimized terminal state lies in `Ω_M`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{QuadraticCost, TerminalCost};
use crate::dynamics::{error_coords_unchecked, rk4_unchecked, Control, Dynamics, State};
use crate::error::{check_dim, Error, Result};
use crate::ilqr::{solve_fhocp, IlqrOptions, IlqrResult};
use crate::riccati::{lqr_rollout, RiccatiSolution};
use crate::trajectory::Trajectory;

/// Candidate levels tried by [`select_level`], largest first.
pub const LEVEL_CANDIDATES: [f64; 19] = [
    10.0, 5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4, 5e-5,
    2e-5, 1e-5,
];
pub const LEVEL_SAMPLES: usize = 50;
pub const LEVEL_SEED: u64 = 0x5eed;
/// Error norm a boundary sample must reach under LQR to count as regulated.
pub const LEVEL_REGULATION_TOL: f64 = 1e-3;
pub const CLF_STRIDE: usize = 5;
pub const CLF_TOL: f64 = 1e-6;

/// Sub-level set of the Riccati cost. Ties count as inside.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSet<'a> {
    pub ric: &'a RiccatiSolution,
    pub level: f64,
}

impl TerminalSet<'_> {
    pub fn value(&self, e: &State) -> f64 {
        self.ric.value(e)
    }

    pub fn contains(&self, e: &State) -> bool {
        self.value(e) <= self.level
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedSolution {
    pub t_star: usize,
    pub hit: bool,
    pub level: f64,
    pub transfer: Trajectory,
    /// Floored objective `Σ c + max(x̃_T'P∞x̃_T, M)`, or `x̃₀'P∞x̃₀` when `x₀ ∈ Ω_M`.
    pub j_m: f64,
    pub transfer_cost: f64,
    pub expected_regulation_cost: f64,
    #[serde(with = "crate::io::json_f64")]
    pub actual_regulation_cost: f64,
    #[serde(with = "crate::io::json_f64")]
    pub total_composite_cost: f64,
    pub regulation_diverged: bool,
    /// First regulation step after which the remaining tail cost is below 1%
    /// of the actual regulation cost.
    pub regulation_time: Option<usize>,
    /// `x̃_T'P∞x̃_T` of the optimized terminal state for every horizon tried.
    pub terminal_values: Vec<f64>,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub fh_cost: f64,
    pub transfer_cost: f64,
    pub expected_regulation_cost: f64,
    pub actual_regulation_cost: f64,
    pub total_composite_cost: f64,
    pub terminal_error: f64,
    pub hit_omega: bool,
    pub solver_iterations: usize,
}

impl SweepRecord {
    fn failed(horizon: usize) -> Self {
        Self {
            horizon,
            fh_cost: f64::NAN,
            transfer_cost: f64::NAN,
            expected_regulation_cost: f64::NAN,
            actual_regulation_cost: f64::NAN,
            total_composite_cost: f64::NAN,
            terminal_error: f64::NAN,
            hit_omega: false,
            solver_iterations: 0,
        }
    }

    /// Failed solves are recorded in-band with NaN costs.
    pub fn is_failed(&self) -> bool {
        self.fh_cost.is_nan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateBaseline {
    pub horizon: usize,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub surrogate: SurrogateBaseline,
    /// Composite rollout per record; `None` where the solve failed.
    #[serde(skip)]
    pub composites: Vec<Option<CompositeRollout>>,
}

/// Transfer followed by closed-loop regulation up to a fixed total length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRollout {
    pub trajectory: Trajectory,
    pub transfer_steps: usize,
    pub transfer_cost: f64,
    /// Simulated LQR tail cost, `+∞` if the regulator diverged.
    pub actual_regulation_cost: f64,
    pub diverged: bool,
    pub final_error: f64,
}

impl CompositeRollout {
    pub fn total_cost(&self) -> f64 {
        self.transfer_cost + self.actual_regulation_cost
    }

    pub fn regulation_costs(&self) -> &[f64] {
        &self.trajectory.step_costs[self.transfer_steps..]
    }
}

/// Shared problem data for the regularized solves.
#[derive(Clone, Copy)]
pub struct Setup<'a> {
    pub model: &'a dyn Dynamics,
    pub cost: &'a QuadraticCost,
    pub ric: &'a RiccatiSolution,
    pub dt: f64,
    pub opts: &'a IlqrOptions,
}

impl<'a> Setup<'a> {
    fn terminal(&self) -> TerminalCost {
        TerminalCost::Riccati {
            p: self.ric.p_inf.clone(),
        }
    }

    fn error(&self, x: &State) -> State {
        error_coords_unchecked(self.model, x)
    }

    fn check_state(&self, x0: &State) -> Result<()> {
        check_dim("x0", x0.len(), self.model.state_dim())?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("x0 has non-finite entries".into()));
        }
        Ok(())
    }

    /// Extends a control sequence to `horizon` steps by simulating the LQR
    /// law from the end of `traj`.
    fn extend_with_lqr(&self, traj: &Trajectory, horizon: usize) -> Vec<Control> {
        let mut controls = traj.controls_as_vectors();
        let mut x = traj.final_state();
        while controls.len() < horizon {
            let u = self.ric.control(&self.error(&x));
            x = rk4_unchecked(self.model, &x, &u, self.dt);
            controls.push(u);
        }
        controls
    }

    fn solve(&self, x0: &State, horizon: usize, init: Option<&[Control]>) -> Result<IlqrResult> {
        solve_fhocp(
            self.model,
            self.cost,
            &self.terminal(),
            x0,
            horizon,
            self.dt,
            init,
            self.opts,
        )
    }

    /// Fixed-horizon solves for an ascending horizon list. With warm starts
    /// each solve is seeded from the previous one extended by LQR steps;
    /// `stop` ends the chain early after the result it is handed.
    fn chain(
        &self,
        x0: &State,
        horizons: &[usize],
        warm_start: bool,
        mut stop: impl FnMut(&IlqrResult) -> bool,
    ) -> Vec<(usize, Result<IlqrResult>)> {
        if !warm_start {
            // independent solves; `stop` is applied after the fact
            let all: Vec<_> = horizons
                .par_iter()
                .map(|&h| (h, self.solve(x0, h, None)))
                .collect();
            let mut out = Vec::with_capacity(all.len());
            for (h, r) in all {
                let done = matches!(&r, Ok(res) if stop(res));
                out.push((h, r));
                if done {
                    break;
                }
            }
            return out;
        }
        let mut out = Vec::with_capacity(horizons.len());
        let mut previous: Option<Trajectory> = None;
        for &h in horizons {
            let cold = self.solve(x0, h, None);
            let res = match previous.as_ref().map(|t| self.extend_with_lqr(t, h)) {
                Some(init) => better(self.solve(x0, h, Some(&init)), cold),
                None => cold,
            };
            let done = match &res {
                Ok(r) => {
                    previous = Some(r.trajectory.clone());
                    stop(r)
                }
                Err(_) => false,
            };
            out.push((h, res));
            if done {
                break;
            }
        }
        out
    }
}

/// Keeps the lower-cost of two solves; ties and double failures go to `a`.
fn better(a: Result<IlqrResult>, b: Result<IlqrResult>) -> Result<IlqrResult> {
    match (a, b) {
        (Ok(a), Ok(b)) => {
            if b.trajectory.total_cost < a.trajectory.total_cost {
                Ok(b)
            } else {
                Ok(a)
            }
        }
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(a), Err(_)) => Err(a),
    }
}

/// Concatenates the open-loop transfer with `u = -Kx̃` up to `total_steps`.
pub fn composite_rollout(
    setup: &Setup<'_>,
    transfer: &Trajectory,
    total_steps: usize,
) -> Result<CompositeRollout> {
    let transfer_steps = transfer.horizon();
    if total_steps < transfer_steps {
        return Err(Error::InvalidArgument(format!(
            "total_steps {total_steps} shorter than transfer {transfer_steps}"
        )));
    }
    let tail = lqr_rollout(
        setup.model,
        setup.cost,
        &setup.ric.k,
        &transfer.final_state(),
        total_steps - transfer_steps,
        setup.dt,
    )?;
    let transfer_cost = transfer.stage_cost();
    let actual = if tail.diverged {
        f64::INFINITY
    } else {
        tail.trajectory.stage_cost()
    };

    let mut full = transfer.clone();
    full.states.extend(tail.trajectory.states.into_iter().skip(1));
    full.controls.extend(tail.trajectory.controls);
    full.step_costs.extend(tail.trajectory.step_costs);
    full.terminal_cost_value = 0.0;
    full.total_cost = full.stage_cost();

    Ok(CompositeRollout {
        trajectory: full,
        transfer_steps,
        transfer_cost,
        actual_regulation_cost: actual,
        diverged: tail.diverged,
        final_error: tail.final_error,
    })
}

fn regulation_time(costs: &[f64], total: f64) -> Option<usize> {
    if !total.is_finite() {
        return None;
    }
    let mut remaining = total;
    for (s, c) in costs.iter().enumerate() {
        if remaining < 0.01 * total {
            return Some(s);
        }
        remaining -= c;
    }
    (remaining < 0.01 * total).then_some(costs.len())
}

/// Smallest horizon in `1..=t_max` whose optimized terminal state enters
/// `Ω_M`, with the transfer trajectory and its cost decomposition.
/// `total_steps` is the overall episode length used for the regulation tail.
pub fn solve_free_final_time(
    setup: &Setup<'_>,
    x0: &State,
    level: f64,
    t_max: usize,
    total_steps: usize,
) -> Result<RegularizedSolution> {
    setup.check_state(x0)?;
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::InvalidArgument(format!("level must be positive, got {level}")));
    }
    if t_max == 0 {
        return Err(Error::InvalidArgument("t_max must be >= 1".into()));
    }
    let omega = TerminalSet {
        ric: setup.ric,
        level,
    };
    let e0 = setup.error(x0);

    let (transfer, hit, terminal_values, iterations) = if omega.contains(&e0) {
        let value = omega.value(&e0);
        let transfer = Trajectory::from_parts(vec![x0.clone()], vec![], vec![], value);
        (transfer, true, Vec::new(), 0)
    } else {
        let horizons: Vec<usize> = (1..=t_max).collect();
        let chain = setup.chain(x0, &horizons, true, |r| {
            omega.contains(&setup.error(&r.trajectory.final_state()))
        });
        let mut values = Vec::with_capacity(chain.len());
        let mut iterations = 0;
        let mut last = None;
        for (_, res) in chain {
            let res = res?;
            iterations += res.iterations;
            values.push(omega.value(&setup.error(&res.trajectory.final_state())));
            last = Some(res.trajectory);
        }
        let transfer = last.expect("t_max >= 1");
        let hit = values.last().is_some_and(|v| *v <= level);
        (transfer, hit, values, iterations)
    };

    let t_star = transfer.horizon();
    let composite = composite_rollout(setup, &transfer, total_steps.max(t_star))?;
    let expected = omega.value(&setup.error(&transfer.final_state()));
    let transfer_cost = transfer.stage_cost();
    let j_m = if t_star == 0 {
        expected
    } else {
        transfer_cost + expected.max(level)
    };
    Ok(RegularizedSolution {
        t_star,
        hit,
        level,
        j_m,
        transfer_cost,
        expected_regulation_cost: expected,
        actual_regulation_cost: composite.actual_regulation_cost,
        total_composite_cost: composite.total_cost(),
        regulation_diverged: composite.diverged,
        regulation_time: regulation_time(composite.regulation_costs(), composite.actual_regulation_cost),
        terminal_values,
        solver_iterations: iterations,
        transfer,
    })
}

/// Solves the Riccati-terminal problem for every horizon in `horizons`,
/// regulates each result to `total_steps`, and adds the no-terminal-cost
/// baseline at `total_steps`.
pub fn horizon_sweep(
    setup: &Setup<'_>,
    x0: &State,
    horizons: &[usize],
    level: f64,
    total_steps: usize,
    warm_start: bool,
) -> Result<SweepResult> {
    setup.check_state(x0)?;
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] == 0 {
        return Err(Error::InvalidArgument(
            "horizon list must be nonempty, positive and strictly ascending".into(),
        ));
    }
    if horizons[horizons.len() - 1] > total_steps {
        return Err(Error::InvalidArgument(format!(
            "horizon {} exceeds total_steps {total_steps}",
            horizons[horizons.len() - 1]
        )));
    }
    let omega = TerminalSet {
        ric: setup.ric,
        level,
    };
    let mut records = Vec::with_capacity(horizons.len());
    let mut composites = Vec::with_capacity(horizons.len());
    // cheapest non-diverged composite rollout, used to seed the baseline
    let mut seed: Option<CompositeRollout> = None;
    for (h, res) in setup.chain(x0, horizons, warm_start, |_| false) {
        let solved = res.and_then(|r| {
            let comp = composite_rollout(setup, &r.trajectory, total_steps)?;
            Ok((r, comp))
        });
        let Ok((r, comp)) = solved else {
            records.push(SweepRecord::failed(h));
            composites.push(None);
            continue;
        };
        let e_final = setup.error(&r.trajectory.final_state());
        records.push(SweepRecord {
            horizon: h,
            fh_cost: r.trajectory.total_cost,
            transfer_cost: comp.transfer_cost,
            expected_regulation_cost: omega.value(&e_final),
            actual_regulation_cost: comp.actual_regulation_cost,
            total_composite_cost: comp.total_cost(),
            terminal_error: e_final.norm(),
            hit_omega: omega.contains(&e_final),
            solver_iterations: r.iterations,
        });
        if !comp.diverged && seed.as_ref().is_none_or(|s| comp.total_cost() < s.total_cost()) {
            seed = Some(comp.clone());
        }
        composites.push(Some(comp));
    }
    let seed = seed.map(|c| c.trajectory.controls_as_vectors());
    Ok(SweepResult {
        records,
        composites,
        surrogate: surrogate_baseline(setup, x0, total_steps, seed.as_deref())?,
    })
}

/// Fixed-horizon problem of length `total_steps` with no terminal cost,
/// the stand-in for the true infinite-horizon optimum.
/// Solved from zero controls and, when given, from `init`; the lower cost wins.
pub fn surrogate_baseline(
    setup: &Setup<'_>,
    x0: &State,
    total_steps: usize,
    init: Option<&[Control]>,
) -> Result<SurrogateBaseline> {
    let solve = |init: Option<&[Control]>| {
        solve_fhocp(
            setup.model,
            setup.cost,
            &TerminalCost::None,
            x0,
            total_steps,
            setup.dt,
            init,
            setup.opts,
        )
    };
    let res = match init {
        Some(init) => better(solve(Some(init)), solve(None))?,
        None => solve(None)?,
    };
    Ok(SurrogateBaseline {
        horizon: total_steps,
        cost: res.trajectory.total_cost,
        converged: res.converged,
        iterations: res.iterations,
        final_error: setup.error(&res.trajectory.final_state()).norm(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfPoint {
    pub step: usize,
    pub value: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfReport {
    pub points: Vec<ClfPoint>,
    /// Every value is below its predecessor; steps where the predecessor is
    /// already within `CLF_TOL` of zero only need to not increase by more
    /// than `CLF_TOL`.
    pub decreasing: bool,
    /// False when a re-solve from some sampled state failed to reach `Ω_M`.
    pub complete: bool,
    pub final_error: f64,
}

/// Re-evaluates the regularized value function every `stride` steps along
/// the closed-loop composite trajectory from `x0`.
pub fn clf_decrease_check(
    setup: &Setup<'_>,
    x0: &State,
    level: f64,
    t_max: usize,
    stride: usize,
    total_steps: usize,
) -> Result<ClfReport> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let omega = TerminalSet {
        ric: setup.ric,
        level,
    };
    let sol = solve_free_final_time(setup, x0, level, t_max, total_steps)?;
    let composite = composite_rollout(setup, &sol.transfer, total_steps.max(sol.t_star))?;
    let mut complete = sol.hit;
    let mut points = Vec::new();
    for step in (0..composite.trajectory.states.len()).step_by(stride) {
        let x = composite.trajectory.state(step);
        let e = setup.error(&x);
        let (value, inside) = if omega.contains(&e) {
            (omega.value(&e), true)
        } else {
            let resolved = solve_free_final_time(setup, &x, level, t_max, total_steps)?;
            complete &= resolved.hit;
            (resolved.j_m, false)
        };
        points.push(ClfPoint { step, value, inside });
    }
    let decreasing = points.windows(2).all(|w| {
        let (prev, next) = (w[0].value, w[1].value);
        if prev > CLF_TOL {
            next < prev
        } else {
            next <= prev + CLF_TOL
        }
    });
    Ok(ClfReport {
        points,
        decreasing,
        complete,
        final_error: composite.final_error,
    })
}

/// Largest candidate level whose ellipsoid boundary samples are all
/// regulated by the LQR law, i.e. an empirical check that `Ω_M` sits in
/// the regulator's region of attraction.
pub fn select_level(
    model: &dyn Dynamics,
    cost: &QuadraticCost,
    ric: &RiccatiSolution,
    dt: f64,
    regulation_steps: usize,
    seed: u64,
) -> Result<f64> {
    let n = model.state_dim();
    let goal = model.goal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<State> = (0..LEVEL_SAMPLES)
        .map(|_| State::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    for &level in &LEVEL_CANDIDATES {
        let all_regulated = directions.iter().all(|d| {
            let e = d * (level / ric.value(d)).sqrt();
            match lqr_rollout(model, cost, &ric.k, &(e + &goal), regulation_steps, dt) {
                Ok(r) => !r.diverged && r.final_error < LEVEL_REGULATION_TOL,
                Err(_) => false,
            }
        });
        if all_regulated {
            return Ok(level);
        }
    }
    Err(Error::NoConvergence {
        iterations: LEVEL_CANDIDATES.len(),
        last_change: LEVEL_CANDIDATES[LEVEL_CANDIDATES.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regulation_time_examples() {
        assert_eq!(regulation_time(&[50.0, 40.0, 9.0, 0.5, 0.5], 100.0), Some(4));
        assert_eq!(regulation_time(&[], 0.0), None);
        assert_eq!(regulation_time(&[1.0], f64::INFINITY), None);
    }
}
