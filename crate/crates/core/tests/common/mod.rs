#![allow(dead_code)]

use ihoc_core::dynamics::{LinearPlant, State};
use ihoc_core::experiment::{ExperimentSpec, Problem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn experiment(id: u32) -> Problem {
    Problem::new(&ExperimentSpec::registry(id).unwrap()).unwrap()
}

pub fn with_level(id: u32, level: f64) -> Problem {
    let mut spec = ExperimentSpec::registry(id).unwrap();
    spec.level = Some(level);
    Problem::new(&spec).unwrap()
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-9)
}

/// Exact one-step map of classical RK4 with held input on `ẋ = Fx + Gu`.
pub fn rk4_matrices(f: &DMatrix<f64>, g: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = f.nrows();
    let hf = f * h;
    let hf2 = &hf * &hf;
    let hf3 = &hf2 * &hf;
    let hf4 = &hf3 * &hf;
    let eye = DMatrix::<f64>::identity(n, n);
    let a = &eye + &hf + &hf2 / 2.0 + &hf3 / 6.0 + &hf4 / 24.0;
    let b = (&eye + &hf / 2.0 + &hf2 / 6.0 + &hf3 / 24.0) * g * h;
    (a, b)
}

/// Backward Riccati recursion from `P_T = terminal`; returns `x0'P_0x0`.
pub fn riccati_recursion_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    terminal: &DMatrix<f64>,
    horizon: usize,
    x0: &State,
) -> f64 {
    let mut p = terminal.clone();
    for _ in 0..horizon {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let k = s.try_inverse().unwrap() * (&btp * a);
        let atp = a.transpose() * &p;
        p = q + &atp * a - &atp * b * k;
    }
    x0.dot(&(&p * x0))
}

pub fn random_stable_plant(seed: u64) -> (LinearPlant, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::<f64>::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    // shift so every eigenvalue has negative real part
    let f = &m - DMatrix::<f64>::identity(3, 3) * (m.norm() + 0.1);
    let g = DMatrix::<f64>::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0));
    (LinearPlant::new(f.clone(), g.clone()).unwrap(), f, g)
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let l = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose()
}
