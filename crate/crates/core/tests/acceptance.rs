//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::fs;
use std::time::Instant;

use common::{
    random_psd, random_stable_plant, rel_gap, riccati_recursion_cost, rk4_matrices, with_level,
};
use ihoc_core::cost::{QuadraticCost, TerminalCost};
use ihoc_core::dynamics::{linearize_discrete, LinearPlant, LinearizedSystem, Model, State, FD_EPS};
use ihoc_core::experiment::{read_result, run_experiment, ExperimentSpec, RunResult};
use ihoc_core::ilqr::{solve_fhocp, IlqrOptions};
use ihoc_core::io::{parse_sweep_csv, sweep_csv};
use ihoc_core::regularizer::{clf_decrease_check, solve_free_final_time, CLF_STRIDE};
use ihoc_core::riccati::{dare_residual, solve_dare, DARE_MAX_ITER, DARE_TOL};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dare_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (id, q) in [("pendulum", vec![1.0, 0.1]), ("cartpole", vec![1.0, 1.0, 0.1, 0.1])] {
        let model = Model::from_id(id).unwrap();
        let lin = linearize_discrete(&model, 0.1, FD_EPS).unwrap();
        let cost = QuadraticCost::diagonal(&q, &[0.1]).unwrap();
        let sol = solve_dare(&lin, &cost, DARE_TOL, DARE_MAX_ITER).unwrap();
        worst = worst.max(dare_residual(&lin, &cost, &sol.p_inf).unwrap());
    }
    let scalar = LinearizedSystem {
        A: DMatrix::from_element(1, 1, 1.0),
        B: DMatrix::from_element(1, 1, 1.0),
        dt: 1.0,
    };
    let cost = QuadraticCost::diagonal(&[1.0], &[1.0]).unwrap();
    let p = solve_dare(&scalar, &cost, 1e-13, DARE_MAX_ITER).unwrap().p_inf[(0, 0)];
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let elapsed = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-8 && (p - golden).abs() <= 1e-10 && elapsed < 1.0,
        format!(
            "max residual {worst:.2e}, scalar error {:.2e}, {elapsed:.3}s",
            (p - golden).abs()
        ),
    )
}

fn ilqr_oracle() -> Outcome {
    let start = Instant::now();
    let opts = IlqrOptions::default();
    let mut worst: f64 = 0.0;

    let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let g = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (a, b) = rk4_matrices(&f, &g, 0.1);
    let cost = QuadraticCost::diagonal(&[1.0, 0.1], &[0.1]).unwrap();
    let lin = LinearizedSystem { A: a.clone(), B: b.clone(), dt: 0.1 };
    let p_inf = solve_dare(&lin, &cost, DARE_TOL, DARE_MAX_ITER).unwrap().p_inf;
    let x0 = State::from_row_slice(&[1.0, -0.5]);
    let tc = TerminalCost::Riccati { p: p_inf.clone() };
    let res = solve_fhocp(&LinearPlant::double_integrator(), &cost, &tc, &x0, 20, 0.1, None, &opts).unwrap();
    let oracle = riccati_recursion_cost(&a, &b, &cost.Q, &cost.R, &p_inf, 20, &x0);
    worst = worst.max(rel_gap(res.trajectory.total_cost, oracle));

    for seed in 0..10 {
        let (plant, f, g) = random_stable_plant(seed);
        let (a, b) = rk4_matrices(&f, &g, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let q = random_psd(&mut rng, 3) + DMatrix::identity(3, 3) * 0.1;
        let r = DMatrix::from_element(1, 1, rng.random_range(0.05..1.0));
        let p_t = random_psd(&mut rng, 3);
        let cost = QuadraticCost::new(q.clone(), r.clone()).unwrap();
        let x0 = State::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let tc = TerminalCost::Riccati { p: p_t.clone() };
        let res = solve_fhocp(&plant, &cost, &tc, &x0, 25, 0.1, None, &opts).unwrap();
        let oracle = riccati_recursion_cost(&a, &b, &q, &r, &p_t, 25, &x0);
        worst = worst.max(rel_gap(res.trajectory.total_cost, oracle));
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && elapsed < 10.0,
        format!("worst relative gap {worst:.2e} over 11 instances, {elapsed:.3}s"),
    )
}

fn monotonicity(runs: &[RunResult]) -> Outcome {
    let mut violations = Vec::new();
    for run in runs {
        let id = run.spec.id.unwrap();
        let recs = &run.records;
        for (i, short) in recs.iter().enumerate() {
            for long in &recs[i + 1..] {
                let tol = 1e-3 * (1.0 + long.fh_cost);
                if !(short.fh_cost >= long.fh_cost - tol) {
                    violations.push(format!(
                        "exp {id} fh({})={:.3} < fh({})={:.3}",
                        short.horizon, short.fh_cost, long.horizon, long.fh_cost
                    ));
                }
            }
        }
    }
    let n = violations.len();
    violations.truncate(3);
    check(
        n == 0,
        if n == 0 {
            "fh_cost nonincreasing in T for exps 1-4".into()
        } else {
            format!("{n} violating pairs, e.g. {}", violations.join("; "))
        },
    )
}

fn convergence(runs: &[RunResult]) -> Outcome {
    let mut worst = Vec::new();
    let mut ok = true;
    for run in runs {
        let id = run.spec.id.unwrap();
        let t_star = run.solution.as_ref().unwrap().t_star;
        let baseline = run.surrogate.as_ref().unwrap().cost;
        let (t, gap) = run
            .records
            .iter()
            .filter(|r| r.horizon >= t_star)
            .map(|r| (r.horizon, rel_gap(r.total_composite_cost, baseline)))
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        ok &= gap <= 0.02;
        worst.push(format!("exp {id} max {:.2}% at T={t}", 100.0 * gap));
    }
    check(ok, worst.join(", "))
}

fn short_horizon(runs: &[RunResult]) -> Outcome {
    let t: Vec<usize> = runs.iter().map(|r| r.solution.as_ref().unwrap().t_star).collect();
    let hit = runs.iter().all(|r| r.solution.as_ref().unwrap().hit);
    check(
        hit && t.iter().all(|&t| t <= 15) && t[1] <= t[0] && t[3] <= t[2],
        format!("T* = {t:?} for exps 1-4"),
    )
}

fn hitting_minimality(runs: &[RunResult]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for run in runs {
        let sol = run.solution.as_ref().unwrap();
        let m = run.level;
        let vals = &sol.terminal_values;
        let at = vals.last().copied().unwrap_or(f64::NAN);
        let before = if vals.len() >= 2 { vals[vals.len() - 2] } else { f64::INFINITY };
        ok &= sol.hit && at <= m && before > m;
        // the sweep solved the same horizons independently of the stop rule
        let rec = |t: usize| run.records.iter().find(|r| r.horizon == t);
        if let (Some(a), Some(b)) = (rec(sol.t_star), rec(sol.t_star.saturating_sub(1))) {
            ok &= a.hit_omega && !b.hit_omega;
        }
        detail.push(format!("exp {}: {before:.2} > M={m} >= {at:.2}", run.spec.id.unwrap()));
    }
    check(ok, detail.join(", "))
}

fn gas_evidence() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for id in [2, 4] {
        let p = common::experiment(id);
        let report = clf_decrease_check(&p.setup(), &p.x0(), p.level, p.spec.t_max, CLF_STRIDE, 150).unwrap();
        let vals: Vec<f64> = report.points.iter().map(|pt| pt.value).collect();
        ok &= report.decreasing && report.complete && report.final_error < 1e-2;
        detail.push(format!(
            "exp {id}: {} points, first {:.2} last {:.1e}, decreasing={}, final |x~|={:.1e}",
            vals.len(),
            vals[0],
            vals[vals.len() - 1],
            report.decreasing,
            report.final_error
        ));
    }
    check(ok, detail.join("; "))
}

fn mismatch_refinement(level: f64) -> Outcome {
    let mismatch: Vec<f64> = [level, level / 4.0, level / 16.0]
        .iter()
        .map(|&m| {
            let p = with_level(3, m);
            let sol = solve_free_final_time(&p.setup(), &p.x0(), m, p.spec.t_max, 150).unwrap();
            (sol.actual_regulation_cost - sol.expected_regulation_cost).abs()
        })
        .collect();
    check(
        mismatch.windows(2).all(|w| w[1] <= w[0]),
        format!("|actual - expected| at M, M/4, M/16 = {mismatch:.4?}"),
    )
}

fn determinism_and_round_trip(runs: &[RunResult]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for id in [1, 3] {
        let spec = ExperimentSpec::registry(id).unwrap();
        let a = dir.path().join(format!("a{id}"));
        let b = dir.path().join(format!("b{id}"));
        run_experiment(&spec, &a).unwrap();
        let result = run_experiment(&spec, &b).unwrap();
        for file in ["sweep.csv", "solution.json", "trajectory.csv"] {
            let same = fs::read(a.join(file)).unwrap() == fs::read(b.join(file)).unwrap();
            if !same {
                notes.push(format!("exp {id} {file} differs between runs"));
            }
            ok &= same;
        }
        let back = read_result(&a).unwrap();
        if back != result {
            notes.push(format!("exp {id} result does not round-trip"));
            ok = false;
        }
    }
    for run in runs {
        let text = sweep_csv(&run.records);
        let parsed = parse_sweep_csv(&text).unwrap();
        let bits = |r: &ihoc_core::regularizer::SweepRecord| {
            [r.fh_cost, r.transfer_cost, r.expected_regulation_cost, r.actual_regulation_cost, r.total_composite_cost, r.terminal_error]
                .map(f64::to_bits)
        };
        let exact = parsed.len() == run.records.len()
            && parsed.iter().zip(&run.records).all(|(p, r)| bits(p) == bits(r));
        ok &= exact && sweep_csv(&parsed) == text;
    }
    check(
        ok,
        if notes.is_empty() {
            "byte-identical reruns, bit-exact CSV/JSON round trips".into()
        } else {
            notes.join("; ")
        },
    )
}

fn main() {
    let start = Instant::now();
    let runs: Vec<RunResult> = (1..=4)
        .map(|id| {
            common::experiment(id).run().unwrap_or_else(|e| panic!("experiment {id}: {e}"))
        })
        .collect();
    let level3 = runs[2].level;

    let criteria: Vec<(&str, Outcome)> = vec![
        ("DARE correctness", dare_correctness()),
        ("iLQR oracle equivalence", ilqr_oracle()),
        ("fixed-horizon cost monotone in T", monotonicity(&runs)),
        ("composite cost within 2% of surrogate for T >= T*", convergence(&runs)),
        ("short hitting times", short_horizon(&runs)),
        ("hitting-time minimality", hitting_minimality(&runs)),
        ("value decrease along closed loop", gas_evidence()),
        ("regulation mismatch shrinks with M", mismatch_refinement(level3)),
        ("determinism and round trip", determinism_and_round_trip(&runs)),
    ];

    let mut failed = 0;
    for (i, (name, outcome)) in criteria.iter().enumerate() {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {}: {tag}  {name}: {detail}", i + 1);
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
