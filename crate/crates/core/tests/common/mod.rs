#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvc_core::sim::SimScenario;
use rvc_core::*;

/// Crossed design with `γ_0 = (1/4, 1/4, 1/2)` and `η_0 = 1/4`.
pub fn stated_scenario() -> SimScenario {
    SimScenario { sigma_sq: [0.25, 0.0625, 0.0625, 0.125], ..Default::default() }
}

pub fn tau_cfg() -> FitConfig {
    FitConfig { rho: RhoConfig::default().calibrated().unwrap(), ..Default::default() }
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Small random instance: `n = 30, p = 4, k = 3, J = 2`.
pub fn random_problem(seed: u64) -> (Dataset, ModelSpec, DVector<f64>, DVector<f64>) {
    random_problem_sized(seed, 30, 4, 3)
}

pub fn random_problem_sized(seed: u64, n: usize, p: usize, k: usize) -> (Dataset, ModelSpec, DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(p, k, |_, _| normal(&mut rng))).collect();
    let y = DMatrix::from_fn(n, p, |_, _| 2.0 * normal(&mut rng));
    let v1 = DMatrix::from_element(p, p, 1.0);
    let v2 = DMatrix::from_fn(p, p, |i, j| if (i < p / 2) == (j < p / 2) { 1.0 } else { 0.0 });
    let spec = ModelSpec::new(vec![v1, v2]).unwrap();
    let ds = Dataset::new(y, x).unwrap();
    let beta = DVector::from_fn(k, |_, _| 0.3 * normal(&mut rng));
    let gamma = DVector::from_vec(vec![0.4 + 0.2 * normal(&mut rng).abs(), 0.7]);
    (ds, spec, beta, gamma)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn max_rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().max() / a.abs().max().max(b.abs().max()).max(1.0)
}
