//! The alternating fit: scales, a fixed-point step for `β`, a simplex step
//! for `γ`, and finally the equation for `η`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{self, InitSettings};
use crate::model::{self, Dataset, ModelSpec};
use crate::objective::{self, Objective, PairGeometry, PairScale};
use crate::rho::{self, RhoConfig};
use crate::simplex::{self, SimplexSettings};

/// Settings of the iterative fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rho: RhoConfig,
    pub max_iter: usize,
    /// Relative change in `(β, γ)` below which the iteration stops.
    pub tol: f64,
    pub simplex: SimplexSettings,
    /// Seed of the initializer's subsampling.
    pub seed: u64,
    pub init: InitSettings,
    /// Maximum halvings of a `β` step that increases the objective.
    pub max_halvings: usize,
    /// Tuning of the full-vector `ρ` used by the classical S baseline.
    pub classical: ClassicalTuning,
}

/// How the classical S baseline picks its `(c, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClassicalTuning {
    /// `b` given; `c` solves `E_{χ²_p} ρ_c = b`.
    Breakdown(f64),
    /// `ρ` saturates at the `1 − α` quantile of `χ²_p`; `b = E_{χ²_p} ρ_c`.
    Rejection(f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rho: RhoConfig::default(),
            max_iter: 200,
            tol: 1e-6,
            simplex: SimplexSettings::default(),
            seed: 0,
            init: InitSettings::default(),
            max_halvings: 20,
            classical: ClassicalTuning::Rejection(0.01),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.rho.validate()?;
        self.simplex.validate()?;
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        let (ClassicalTuning::Breakdown(v) | ClassicalTuning::Rejection(v)) = self.classical;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidInput(format!("classical S tuning must lie in (0, 1), got {v}")));
        }
        if !(self.init.b > 0.0 && self.init.b < 1.0) || self.init.candidates == 0 {
            return Err(Error::InvalidInput(format!("invalid initializer settings {:?}", self.init)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    CompositeTau,
    CompositeS,
    ClassicalS,
    GaussianMl,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::CompositeTau => "composite-tau",
            Estimator::CompositeS => "composite-s",
            Estimator::ClassicalS => "classical-s",
            Estimator::GaussianMl => "gaussian-ml",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composite-tau" | "tau" => Ok(Estimator::CompositeTau),
            "composite-s" | "s" => Ok(Estimator::CompositeS),
            "classical-s" => Ok(Estimator::ClassicalS),
            "gaussian-ml" | "ml" => Ok(Estimator::GaussianMl),
            other => Err(Error::InvalidInput(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimator: Estimator,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub eta: f64,
    pub eta_degenerate: bool,
    /// Per-couple `(s_jl, τ_jl)`; empty for full-vector estimators.
    pub pair_scales: Vec<PairScale>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

impl FitResult {
    /// `Σ(η̂, γ̂)`.
    pub fn sigma(&self, spec: &ModelSpec) -> Result<DMatrix<f64>> {
        model::assemble_sigma(spec, self.eta, &self.gamma)
    }
}

/// An objective in `(β, γ)` that the alternating scheme can minimise.
pub(crate) trait Criterion {
    /// Objective at `(β, γ)` given the residual matrix of `β`; `Err` when
    /// `γ ∉ Γ`. May keep warm-start state between calls.
    fn value(&mut self, resid: &DMatrix<f64>, gamma: &DVector<f64>) -> Result<f64>;
    /// Fixed-point update of `β` at frozen scales.
    fn beta_step(&mut self, beta: &DVector<f64>, gamma: &DVector<f64>) -> Result<DVector<f64>>;
}

pub(crate) struct Outcome {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

fn rel_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    let d = (new - old).norm();
    if d == 0.0 {
        return 0.0;
    }
    d / old.norm().max(new.norm()).max(1e-300)
}

/// The `γ` simplex step at fixed `β`; returns the best feasible point.
pub(crate) fn simplex_gamma<C: Criterion>(
    crit: &mut C,
    resid: &DMatrix<f64>,
    gamma: &DVector<f64>,
    current: f64,
    steps: Option<&[f64]>,
    settings: &SimplexSettings,
) -> (DVector<f64>, f64) {
    let out = simplex::minimize(
        |g: &[f64]| {
            let g = DVector::from_column_slice(g);
            crit.value(resid, &g).unwrap_or(f64::INFINITY)
        },
        gamma.as_slice(),
        steps,
        settings,
    );
    if out.value < current {
        (DVector::from_vec(out.x), out.value)
    } else {
        (gamma.clone(), current)
    }
}

pub(crate) fn alternate<C: Criterion>(
    crit: &mut C,
    ds: &Dataset,
    beta0: DVector<f64>,
    gamma0: DVector<f64>,
    cfg: &FitConfig,
) -> Result<Outcome> {
    let mut beta = beta0;
    let mut gamma = gamma0;
    let mut resid = ds.residuals(&beta);
    let mut loss = crit.value(&resid, &gamma)?;
    let mut trace = vec![IterationRecord { beta: beta.as_slice().to_vec(), gamma: gamma.as_slice().to_vec(), loss }];
    let mut last_dgamma: Option<DVector<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let beta_old = beta.clone();
        let gamma_old = gamma.clone();

        // B: fixed-point step, halved back toward the current β while it
        // increases the objective
        if let Ok(mut cand) = crit.beta_step(&beta, &gamma) {
            for _ in 0..=cfg.max_halvings {
                let r = ds.residuals(&cand);
                if let Ok(v) = crit.value(&r, &gamma) {
                    if v <= loss {
                        beta = cand;
                        resid = r;
                        loss = v;
                        break;
                    }
                }
                cand = (&cand + &beta) * 0.5;
            }
        }

        // C: simplex on γ
        let steps: Option<Vec<f64>> = last_dgamma.as_ref().map(|d| {
            d.iter()
                .zip(gamma.iter())
                .map(|(dg, g)| {
                    let scale = 1.0 + g.abs();
                    (2.0 * dg.abs()).clamp(1e-4 * scale, cfg.simplex.initial_step * scale)
                })
                .collect()
        });
        let (g_new, v_new) = simplex_gamma(crit, &resid, &gamma, loss, steps.as_deref(), &cfg.simplex);
        gamma = g_new;
        loss = v_new;
        let dgamma = &gamma - &gamma_old;
        last_dgamma = Some(dgamma);

        trace.push(IterationRecord { beta: beta.as_slice().to_vec(), gamma: gamma.as_slice().to_vec(), loss });
        log::debug!("iteration {iterations}: loss {loss:.10e}");
        let change = rel_change(&beta, &beta_old).max(rel_change(&gamma, &gamma_old));
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(Outcome { beta, gamma, iterations, converged, trace })
}

/// Composite objective with per-couple M-scale warm starts.
pub(crate) struct CompositeCriterion<'a> {
    pub ds: &'a Dataset,
    pub spec: &'a ModelSpec,
    pub rho: RhoConfig,
    pub objective: Objective,
    hints: Vec<f64>,
    buf: Vec<f64>,
}

impl<'a> CompositeCriterion<'a> {
    pub fn new(ds: &'a Dataset, spec: &'a ModelSpec, rho: RhoConfig, objective: Objective) -> Self {
        let np = spec.p() * spec.p().saturating_sub(1) / 2;
        Self { ds, spec, rho, objective, hints: vec![f64::NAN; np], buf: Vec::with_capacity(ds.n()) }
    }

    fn value_geoms(&mut self, resid: &DMatrix<f64>, geoms: &[PairGeometry]) -> Result<f64> {
        let mut total = 0.0;
        for (g, hint) in geoms.iter().zip(self.hints.iter_mut()) {
            model::pair_distances(resid, g.pair, &g.star_inv, &mut self.buf);
            let h = if hint.is_finite() { Some(*hint) } else { None };
            let sc = rho::tau_scale_hint(&self.buf, &self.rho, h)?;
            if sc.s > 0.0 {
                *hint = sc.s;
            }
            total += match self.objective {
                Objective::Tau => sc.tau,
                Objective::S => sc.s,
            };
        }
        Ok(total)
    }
}

impl Criterion for CompositeCriterion<'_> {
    fn value(&mut self, resid: &DMatrix<f64>, gamma: &DVector<f64>) -> Result<f64> {
        let geoms = objective::pair_geometry(self.spec, gamma)?;
        self.value_geoms(resid, &geoms)
    }

    fn beta_step(&mut self, beta: &DVector<f64>, gamma: &DVector<f64>) -> Result<DVector<f64>> {
        objective::beta_step_with(self.ds, self.spec, beta, gamma, &self.rho, self.objective)
    }
}

fn check_problem(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    spec.check_compatible(ds)?;
    if ds.p() < 2 {
        return Err(Error::Dimension("composite estimators need p ≥ 2".into()));
    }
    Ok(())
}

fn fit_composite(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig, objective: Objective) -> Result<FitResult> {
    check_problem(ds, spec, cfg)?;
    let (beta0, gamma0) = init::initial_estimates(ds, spec, &cfg.init, cfg.seed)?;
    fit_composite_from(ds, spec, cfg, objective, beta0, gamma0)
}

/// Composite fit from given starting values.
pub fn fit_composite_from(
    ds: &Dataset,
    spec: &ModelSpec,
    cfg: &FitConfig,
    objective: Objective,
    beta0: DVector<f64>,
    gamma0: DVector<f64>,
) -> Result<FitResult> {
    check_problem(ds, spec, cfg)?;
    if beta0.len() != ds.k() || gamma0.len() != spec.j() {
        return Err(Error::Dimension("starting values do not match the model".into()));
    }
    let gamma0 = if model::assemble_sigma(spec, 1.0, &gamma0).is_ok() { gamma0 } else { DVector::zeros(spec.j()) };
    let mut crit = CompositeCriterion::new(ds, spec, cfg.rho, objective);
    let out = alternate(&mut crit, ds, beta0, gamma0, cfg)?;

    // final scales and loss recomputed from scratch
    let geoms = objective::pair_geometry(spec, &out.gamma)?;
    let resid = ds.residuals(&out.beta);
    let mut scales = Vec::new();
    let loss = objective::objective_from_parts(&resid, &geoms, &cfg.rho, objective, &mut Vec::new(), Some(&mut scales))?;
    let eta = objective::solve_eta(ds, spec, &out.beta, &out.gamma, &cfg.rho)?;
    Ok(FitResult {
        estimator: match objective {
            Objective::Tau => Estimator::CompositeTau,
            Objective::S => Estimator::CompositeS,
        },
        beta: out.beta,
        gamma: out.gamma,
        eta: eta.eta,
        eta_degenerate: eta.degenerate,
        pair_scales: scales,
        loss,
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace,
    })
}

/// Composite τ-estimator of `(β, γ, η)`.
pub fn fit_composite_tau(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<FitResult> {
    fit_composite(ds, spec, cfg, Objective::Tau)
}

/// Composite S-estimator of `(β, γ, η)`.
pub fn fit_composite_s(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<FitResult> {
    fit_composite(ds, spec, cfg, Objective::S)
}

/// One derivative-free minimisation of `γ ↦ T(β, γ)` from `gamma`.
pub fn gamma_step(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    cfg: &FitConfig,
) -> Result<DVector<f64>> {
    check_problem(ds, spec, cfg)?;
    let mut crit = CompositeCriterion::new(ds, spec, cfg.rho, Objective::Tau);
    let resid = ds.residuals(beta);
    let current = crit.value(&resid, gamma)?;
    Ok(simplex_gamma(&mut crit, &resid, gamma, current, None, &cfg.simplex).0)
}
