//! Experiment specs, the built-in experiment registry, config-file handling and the
//! end-to-end runner that writes `sweep.csv`, `solution.json` and
//! `trajectory.csv`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::QuadraticCost;
use crate::dynamics::{
    linearize_discrete, CartPole, CartPoleParams, Dynamics, LinearPlant, Model, Pendulum,
    PendulumParams, State,
};
use crate::error::{Error, Result};
use crate::ilqr::IlqrOptions;
use crate::io::{self, TrajectoryTable};
use crate::regularizer::{
    composite_rollout, horizon_sweep, select_level, solve_free_final_time, RegularizedSolution,
    Setup, SurrogateBaseline, SweepRecord, LEVEL_SAMPLES, LEVEL_SEED,
};
use crate::riccati::{lqr_rollout, solve_dare, RiccatiSolution, DARE_MAX_ITER, DARE_TOL};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_TOTAL_STEPS: usize = 150;
pub const DEFAULT_T_MAX: usize = 40;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SOLUTION_FILE: &str = "solution.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TRAJECTORY_DIR: &str = "trajectories";

/// A fully resolved experiment. Serializes to the same TOML layout that
/// [`ConfigFile`] reads, so an emitted spec can be fed back as a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
    pub model: String,
    pub x0: Vec<f64>,
    pub x_goal: Vec<f64>,
    pub dt: f64,
    pub total_steps: usize,
    pub t_list: Vec<usize>,
    pub t_max: usize,
    /// Terminal-set level; chosen automatically when absent.
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    pub level_seed: u64,
    pub warm_start: bool,
    pub emit_trajectories: bool,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum: Option<PendulumParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cartpole: Option<CartPoleParams>,
    pub ilqr: IlqrOptions,
}

fn diag(d: &[f64]) -> Vec<Vec<f64>> {
    (0..d.len())
        .map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect())
        .collect()
}

fn canonical_model(name: &str) -> Result<&'static str> {
    match name {
        "pendulum" => Ok("pendulum"),
        "cartpole" | "cart-pole" => Ok("cartpole"),
        "double_integrator" => Ok("double_integrator"),
        other => Err(Error::Config(format!("unknown model {other:?}"))),
    }
}

impl ExperimentSpec {
    /// Defaults for a model, starting at rest in its hanging/zero state.
    pub fn for_model(model: &str) -> Result<Self> {
        let model = canonical_model(model)?;
        let (x0, q, r, pendulum, cartpole) = match model {
            "pendulum" => (
                vec![0.0, 0.0],
                diag(&[1.0, 0.1]),
                diag(&[0.1]),
                Some(PendulumParams::default()),
                None,
            ),
            "cartpole" => (
                vec![0.0; 4],
                diag(&[1.0, 1.0, 0.1, 0.1]),
                diag(&[0.1]),
                None,
                Some(CartPoleParams::default()),
            ),
            _ => (vec![1.0, 0.0], diag(&[1.0, 0.1]), diag(&[0.1]), None, None),
        };
        let mut spec = Self {
            id: None,
            model: model.to_string(),
            x0,
            x_goal: Vec::new(),
            dt: DEFAULT_DT,
            total_steps: DEFAULT_TOTAL_STEPS,
            t_list: (1..=DEFAULT_T_MAX).collect(),
            t_max: DEFAULT_T_MAX,
            level: None,
            level_seed: LEVEL_SEED,
            warm_start: true,
            emit_trajectories: false,
            q,
            r,
            pendulum,
            cartpole,
            ilqr: IlqrOptions::default(),
        };
        spec.x_goal = spec.build_model()?.goal().as_slice().to_vec();
        Ok(spec)
    }

    /// Built-in experiments: cart-pole from rest (1) and from 3π/4 (2),
    /// pendulum from rest (3) and from 5π/12 (4).
    pub fn registry(id: u32) -> Result<Self> {
        let (model, x0) = match id {
            1 => ("cartpole", vec![0.0, 0.0, 0.0, 0.0]),
            2 => ("cartpole", vec![0.0, 3.0 * PI / 4.0, 0.0, 0.0]),
            3 => ("pendulum", vec![0.0, 0.0]),
            4 => ("pendulum", vec![5.0 * PI / 12.0, 0.0]),
            other => return Err(Error::Config(format!("no experiment with id {other}"))),
        };
        let mut spec = Self::for_model(model)?;
        spec.id = Some(id);
        spec.x0 = x0;
        Ok(spec)
    }

    pub fn build_model(&self) -> Result<Model> {
        match canonical_model(&self.model)? {
            "pendulum" => Ok(Model::Pendulum(Pendulum::new(self.pendulum.unwrap_or_default()))),
            "cartpole" => Ok(Model::CartPole(CartPole::new(self.cartpole.unwrap_or_default()))),
            _ => Ok(Model::Linear(LinearPlant::double_integrator())),
        }
    }

    pub fn build_cost(&self) -> Result<QuadraticCost> {
        let q = matrix(&self.q, "q")?;
        let r = matrix(&self.r, "r")?;
        QuadraticCost::new(q, r).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let model = self.build_model()?;
        let n = model.state_dim();
        match canonical_model(&self.model)? {
            "pendulum" if self.cartpole.is_some() => return bad("[cartpole] given for pendulum".into()),
            "cartpole" if self.pendulum.is_some() => return bad("[pendulum] given for cartpole".into()),
            "double_integrator" if self.pendulum.is_some() || self.cartpole.is_some() => {
                return bad("double_integrator takes no model parameters".into())
            }
            _ => {}
        }
        if self.x0.len() != n || self.x0.iter().any(|v| !v.is_finite()) {
            return bad(format!("x0 must be {n} finite numbers, got {:?}", self.x0));
        }
        let goal = model.goal();
        if self.x_goal.len() != n || self.x_goal.iter().zip(goal.iter()).any(|(a, b)| (a - b).abs() > 1e-12) {
            return bad(format!(
                "x_goal {:?} does not match the {} equilibrium {:?}",
                self.x_goal,
                self.model,
                goal.as_slice()
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.total_steps == 0 {
            return bad("total_steps must be >= 1".into());
        }
        if self.t_list.is_empty()
            || self.t_list[0] == 0
            || self.t_list.windows(2).any(|w| w[1] <= w[0])
            || self.t_list[self.t_list.len() - 1] > self.total_steps
        {
            return bad("t_list must be nonempty, strictly ascending, within 1..=total_steps".into());
        }
        if self.t_max == 0 || self.t_max > self.total_steps {
            return bad(format!("t_max must be in 1..={}", self.total_steps));
        }
        if let Some(m) = self.level {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("M must be positive, got {m}"));
            }
        }
        let cost = self.build_cost()?;
        if cost.state_dim() != n || cost.control_dim() != model.control_dim() {
            return bad(format!(
                "q must be {n}x{n} and r {p}x{p}",
                p = model.control_dim()
            ));
        }
        self.ilqr.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes to TOML")
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Partial spec as read from a TOML config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub id: Option<u32>,
    pub model: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub x_goal: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub total_steps: Option<usize>,
    pub t_list: Option<Vec<usize>>,
    pub t_max: Option<usize>,
    #[serde(rename = "M")]
    pub level: Option<f64>,
    pub level_seed: Option<u64>,
    pub warm_start: Option<bool>,
    pub emit_trajectories: Option<bool>,
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub q_diag: Option<Vec<f64>>,
    pub r_diag: Option<Vec<f64>>,
    pub pendulum: Option<PendulumParams>,
    pub cartpole: Option<CartPoleParams>,
    pub ilqr: Option<IlqrOptions>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.q.is_some() && cfg.q_diag.is_some() {
            return Err(Error::Config("give q or q_diag, not both".into()));
        }
        if cfg.r.is_some() && cfg.r_diag.is_some() {
            return Err(Error::Config("give r or r_diag, not both".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Values given on the command line; they take precedence over the config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub id: Option<u32>,
    pub model: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub level: Option<f64>,
    pub dt: Option<f64>,
    pub total_steps: Option<usize>,
    pub t_max: Option<usize>,
    pub warm_start: Option<bool>,
    pub emit_trajectories: Option<bool>,
}

/// Builds the spec from registry defaults, then the config file, then the
/// command line, each layer overriding the previous one.
pub fn resolve(config: Option<&ConfigFile>, cli: &Overrides) -> Result<ExperimentSpec> {
    let empty = ConfigFile::default();
    let cfg = config.unwrap_or(&empty);
    let id = cli.id.or(cfg.id);
    let mut spec = match id {
        Some(id) => ExperimentSpec::registry(id)?,
        None => {
            let model = cli.model.as_deref().or(cfg.model.as_deref()).unwrap_or("pendulum");
            ExperimentSpec::for_model(model)?
        }
    };
    if let Some(model) = cli.model.as_deref().or(cfg.model.as_deref()) {
        if canonical_model(model)? != spec.model {
            spec = ExperimentSpec::for_model(model)?;
        }
    }

    macro_rules! layer {
        ($src:expr, $($field:ident),*) => {
            $(if let Some(v) = &$src.$field { spec.$field = v.clone(); })*
        };
    }
    layer!(cfg, x0, x_goal, dt, total_steps, t_list, t_max, level_seed, warm_start, emit_trajectories, q, r);
    if let Some(d) = &cfg.q_diag {
        spec.q = diag(d);
    }
    if let Some(d) = &cfg.r_diag {
        spec.r = diag(d);
    }
    if cfg.level.is_some() {
        spec.level = cfg.level;
    }
    if cfg.pendulum.is_some() {
        spec.pendulum = cfg.pendulum;
    }
    if cfg.cartpole.is_some() {
        spec.cartpole = cfg.cartpole;
    }
    if let Some(opts) = &cfg.ilqr {
        spec.ilqr = opts.clone();
    }

    layer!(cli, x0, dt, total_steps, t_max, warm_start, emit_trajectories);
    if cli.level.is_some() {
        spec.level = cli.level;
    }
    if cli.total_steps.is_some() || cfg.total_steps.is_some() {
        // keep the default horizon list inside the episode
        if cfg.t_list.is_none() {
            spec.t_list.retain(|&t| t <= spec.total_steps);
        }
        if cfg.t_max.is_none() && cli.t_max.is_none() {
            spec.t_max = spec.t_max.min(spec.total_steps);
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Plain-data copy of the Riccati solution for the JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSummary {
    pub p_inf: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

impl From<&RiccatiSolution> for RiccatiSummary {
    fn from(s: &RiccatiSolution) -> Self {
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        Self {
            p_inf: rows(&s.p_inf),
            k: rows(&s.k),
            iterations: s.iterations,
            residual: s.residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub ilqr: IlqrOptions,
    pub dare_tol: f64,
    pub level_seed: u64,
    pub level_samples: usize,
    /// `"given"` when M came from the spec, `"selected"` otherwise.
    pub level_source: String,
    pub warm_start: bool,
}

/// Everything a run produces. `records` live in `sweep.csv`, `trajectory`
/// in `trajectory.csv`, per-horizon composites under `trajectories/`, and
/// the rest in `solution.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub spec: ExperimentSpec,
    pub level: f64,
    pub riccati: RiccatiSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<RegularizedSolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateBaseline>,
    pub provenance: Provenance,
    #[serde(skip)]
    pub records: Vec<SweepRecord>,
    #[serde(skip)]
    pub trajectory: Option<TrajectoryTable>,
    #[serde(skip)]
    pub trajectories: Vec<(usize, TrajectoryTable)>,
}

/// Model, cost, Riccati solution and level for a validated spec.
pub struct Problem {
    pub spec: ExperimentSpec,
    pub model: Model,
    pub cost: QuadraticCost,
    pub ric: RiccatiSolution,
    pub level: f64,
}

impl Problem {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let model = spec.build_model()?;
        let cost = spec.build_cost()?;
        let lin = linearize_discrete(&model, spec.dt, spec.ilqr.fd_eps)?;
        let ric = solve_dare(&lin, &cost, DARE_TOL, DARE_MAX_ITER)?;
        let level = match spec.level {
            Some(m) => m,
            None => select_level(&model, &cost, &ric, spec.dt, spec.total_steps, spec.level_seed)?,
        };
        Ok(Self {
            spec: spec.clone(),
            model,
            cost,
            ric,
            level,
        })
    }

    pub fn setup(&self) -> Setup<'_> {
        Setup {
            model: &self.model,
            cost: &self.cost,
            ric: &self.ric,
            dt: self.spec.dt,
            opts: &self.spec.ilqr,
        }
    }

    pub fn x0(&self) -> State {
        State::from_column_slice(&self.spec.x0)
    }

    fn result(&self) -> RunResult {
        RunResult {
            spec: self.spec.clone(),
            level: self.level,
            riccati: (&self.ric).into(),
            solution: None,
            surrogate: None,
            provenance: Provenance {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                ilqr: self.spec.ilqr.clone(),
                dare_tol: DARE_TOL,
                level_seed: self.spec.level_seed,
                level_samples: LEVEL_SAMPLES,
                level_source: if self.spec.level.is_some() { "given" } else { "selected" }.to_string(),
                warm_start: self.spec.warm_start,
            },
            records: Vec::new(),
            trajectory: None,
            trajectories: Vec::new(),
        }
    }

    /// Horizon sweep with composite rollouts and the surrogate baseline.
    pub fn sweep(&self) -> Result<RunResult> {
        let setup = self.setup();
        let sweep = horizon_sweep(
            &setup,
            &self.x0(),
            &self.spec.t_list,
            self.level,
            self.spec.total_steps,
            self.spec.warm_start,
        )?;
        let mut out = self.result();
        if self.spec.emit_trajectories {
            out.trajectories = sweep
                .composites
                .iter()
                .zip(&sweep.records)
                .filter_map(|(c, r)| {
                    c.as_ref()
                        .map(|c| (r.horizon, TrajectoryTable::from_trajectory(&c.trajectory, c.transfer_steps)))
                })
                .collect();
        }
        out.records = sweep.records;
        out.surrogate = Some(sweep.surrogate);
        Ok(out)
    }

    /// Free-final-time transfer plus its composite trajectory.
    pub fn solve(&self) -> Result<RunResult> {
        let setup = self.setup();
        let sol = solve_free_final_time(&setup, &self.x0(), self.level, self.spec.t_max, self.spec.total_steps)?;
        let comp = composite_rollout(&setup, &sol.transfer, self.spec.total_steps.max(sol.t_star))?;
        let mut out = self.result();
        out.trajectory = Some(TrajectoryTable::from_trajectory(&comp.trajectory, comp.transfer_steps));
        out.solution = Some(sol);
        Ok(out)
    }

    /// Pure LQR from `x0`, no transfer phase. Also returns the divergence
    /// flag, final error norm and accumulated cost.
    pub fn regulate(&self) -> Result<(RunResult, bool, f64, f64)> {
        let r = lqr_rollout(&self.model, &self.cost, &self.ric.k, &self.x0(), self.spec.total_steps, self.spec.dt)?;
        let mut out = self.result();
        out.trajectory = Some(TrajectoryTable::from_trajectory(&r.trajectory, 0));
        Ok((out, r.diverged, r.final_error, r.trajectory.total_cost))
    }

    /// Sweep, free-final-time solve and surrogate in one result.
    pub fn run(&self) -> Result<RunResult> {
        let mut out = self.sweep()?;
        let solved = self.solve()?;
        out.solution = solved.solution;
        out.trajectory = solved.trajectory;
        Ok(out)
    }
}

/// Runs the full experiment and writes its files into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunResult> {
    let result = Problem::new(spec)?.run()?;
    write_result(&result, out_dir)?;
    Ok(result)
}

pub fn solution_json(result: &RunResult) -> String {
    let mut s = serde_json::to_string_pretty(result).expect("result serializes to JSON");
    s.push('\n');
    s
}

pub fn parse_solution_json(text: &str) -> Result<RunResult> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("solution.json: {e}")))
}

fn trajectory_file(horizon: usize) -> String {
    format!("T{horizon:03}.csv")
}

/// Writes whichever parts of `result` are present. The JSON file is always
/// written; the CSV files only when the result carries their data.
pub fn write_result(result: &RunResult, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    if result.surrogate.is_some() {
        io::emit_sweep_csv(&result.records, &out_dir.join(SWEEP_FILE))?;
    }
    if let Some(t) = &result.trajectory {
        io::write_atomic(&out_dir.join(TRAJECTORY_FILE), t.to_csv().as_bytes())?;
    }
    if !result.trajectories.is_empty() {
        let dir = out_dir.join(TRAJECTORY_DIR);
        fs::create_dir_all(&dir)?;
        for (h, t) in &result.trajectories {
            io::write_atomic(&dir.join(trajectory_file(*h)), t.to_csv().as_bytes())?;
        }
    }
    io::write_atomic(&out_dir.join(SOLUTION_FILE), solution_json(result).as_bytes())
}

/// Reads back a directory written by [`write_result`].
pub fn read_result(out_dir: &Path) -> Result<RunResult> {
    let mut result = parse_solution_json(&fs::read_to_string(out_dir.join(SOLUTION_FILE))?)?;
    let sweep = out_dir.join(SWEEP_FILE);
    if sweep.exists() {
        result.records = io::parse_sweep_csv(&fs::read_to_string(sweep)?)?;
    }
    let traj = out_dir.join(TRAJECTORY_FILE);
    if traj.exists() {
        result.trajectory = Some(TrajectoryTable::parse(&fs::read_to_string(traj)?)?);
    }
    let dir = out_dir.join(TRAJECTORY_DIR);
    if dir.is_dir() {
        let mut names: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .filter_map(|n| {
                n.strip_prefix('T')
                    .and_then(|s| s.strip_suffix(".csv"))
                    .and_then(|s| s.parse::<usize>().ok())
            })
            .collect();
        names.sort_unstable();
        for h in names {
            let text = fs::read_to_string(dir.join(trajectory_file(h)))?;
            result.trajectories.push((h, TrajectoryTable::parse(&text)?));
        }
    }
    Ok(result)
}
