//! Sandwich covariance and Wald tests, cell/couple/row outlier flags, and the
//! finite-sample breakdown constants `h`, `h*`, `f` with their lower bounds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fit::{FitConfig, FitResult};
use crate::linalg;
use crate::model::{self, Dataset, ModelSpec, PairIndex};
use crate::objective::{self, Objective};

/// Asymptotic covariance of `λ̂ = (β̂, γ̂)` with Wald statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub estimate: DVector<f64>,
    pub cov_lambda: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    pub wald_z: DVector<f64>,
    pub p_values: DVector<f64>,
    /// Symmetrised numerical Hessian of the objective.
    pub hessian: DMatrix<f64>,
    /// Largest relative asymmetry of the raw numerical Hessian.
    pub hessian_asymmetry: f64,
}

fn two_sided_p(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { f64::NAN } else { 0.0 };
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * n.sf(z.abs())).min(1.0)
}

fn objective_of(fit: &FitResult) -> Result<Objective> {
    use crate::fit::Estimator::*;
    match fit.estimator {
        CompositeTau => Ok(Objective::Tau),
        CompositeS => Ok(Objective::S),
        other => Err(Error::InvalidInput(format!(
            "sandwich covariance is available for composite fits only, not {}",
            other.label()
        ))),
    }
}

fn full_gradient(
    ds: &Dataset,
    spec: &ModelSpec,
    lambda: &DVector<f64>,
    cfg: &FitConfig,
    objective: Objective,
) -> Result<DVector<f64>> {
    let k = ds.k();
    let beta = lambda.rows(0, k).into_owned();
    let gamma = lambda.rows(k, spec.j()).into_owned();
    let (gb, gg) = objective::composite_gradient(ds, spec, &beta, &gamma, &cfg.rho, objective)?;
    let mut out = DVector::zeros(lambda.len());
    out.rows_mut(0, k).copy_from(&gb);
    out.rows_mut(k, spec.j()).copy_from(&gg);
    Ok(out)
}

/// `Σ_λ = H⁻¹ M H⁻¹` with `H` from central differences of the analytic
/// gradient and `M = Σ_i g_i g_iᵀ` from per-unit score contributions
/// evaluated with the scales frozen at `λ̂`.
pub fn sandwich_cov(ds: &Dataset, spec: &ModelSpec, fit: &FitResult, cfg: &FitConfig) -> Result<InferenceResult> {
    let objective = objective_of(fit)?;
    if !fit.converged {
        log::warn!("sandwich covariance evaluated at an unconverged fit");
    }
    let (k, nj) = (ds.k(), spec.j());
    let d = k + nj;
    let mut lambda = DVector::zeros(d);
    lambda.rows_mut(0, k).copy_from(&fit.beta);
    lambda.rows_mut(k, nj).copy_from(&fit.gamma);

    let mut h = DMatrix::zeros(d, d);
    for r in 0..d {
        let step = 1e-4 * (1.0 + lambda[r].abs());
        let mut up = lambda.clone();
        let mut dn = lambda.clone();
        up[r] += step;
        dn[r] -= step;
        let gu = full_gradient(ds, spec, &up, cfg, objective)?;
        let gd = full_gradient(ds, spec, &dn, cfg, objective)?;
        h.set_column(r, &((gu - gd) / (2.0 * step)));
    }
    let scale = h.abs().max().max(f64::MIN_POSITIVE);
    let asym = (&h - h.transpose()).abs().max() / scale;
    let h = (&h + h.transpose()) * 0.5;

    let scores = objective::unit_scores(ds, spec, &fit.beta, &fit.gamma, &cfg.rho, objective)?;
    let m = scores.transpose() * &scores;
    let hinv = linalg::inverse(&h, "objective Hessian")?;
    let mut cov = &hinv * m * hinv.transpose();
    cov = (&cov + cov.transpose()) * 0.5;

    // clamp tiny negative eigenvalues
    let eig = SymmetricEigen::new(cov.clone());
    let floor = -1e-8 * cov.trace().abs();
    if eig.eigenvalues.iter().any(|&v| v < floor) {
        return Err(Error::NotPositiveDefinite { min_eig: eig.eigenvalues.min(), max_eig: eig.eigenvalues.max() });
    }
    if eig.eigenvalues.iter().any(|&v| v < 0.0) {
        let clamped = eig.eigenvalues.map(|v| v.max(0.0));
        cov = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    }

    let std_errors = cov.diagonal().map(|v| v.max(0.0).sqrt());
    let wald_z = lambda.zip_map(&std_errors, |e, s| if s > 0.0 { e / s } else { f64::NAN });
    let p_values = wald_z.map(two_sided_p);
    Ok(InferenceResult { estimate: lambda, cov_lambda: cov, std_errors, wald_z, p_values, hessian: h, hessian_asymmetry: asym })
}

/// Stored `(z, p)` for parameter `index` (β first, then γ).
pub fn wald_test(inf: &InferenceResult, index: usize) -> Result<(f64, f64)> {
    if index >= inf.wald_z.len() {
        return Err(Error::IndexOutOfRange { index, len: inf.wald_z.len() });
    }
    Ok((inf.wald_z[index], inf.p_values[index]))
}

/// `(z, p)` for an estimate with a given standard error.
pub fn wald_from(estimate: f64, se: f64) -> (f64, f64) {
    let z = if se > 0.0 { estimate / se } else { f64::NAN };
    (z, two_sided_p(z))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutlierLevel {
    Cell,
    Couple,
    Row,
}

impl std::str::FromStr for OutlierLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell" => Ok(OutlierLevel::Cell),
            "couple" => Ok(OutlierLevel::Couple),
            "row" => Ok(OutlierLevel::Row),
            other => Err(Error::InvalidInput(format!("unknown outlier level '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlag {
    pub unit: usize,
    /// Coordinates of the cell, couple or (all) row.
    pub coords: Vec<usize>,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub level: OutlierLevel,
    pub alpha: f64,
    /// Degrees of freedom `q`.
    pub dof: usize,
    pub threshold: f64,
    /// Number of distances examined.
    pub tested: usize,
    pub flags: Vec<OutlierFlag>,
}

/// Quantile of order `alpha` of `χ²_q`.
pub fn chi2_quantile(q: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || q == 0 {
        return Err(Error::InvalidInput(format!("invalid quantile request q={q}, alpha={alpha}")));
    }
    let chi = ChiSquared::new(q as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(chi.inverse_cdf(alpha))
}

/// Flags cells, couples or rows whose squared Mahalanobis distance under
/// `Σ(η̂, γ̂)` exceeds the `χ²_q` quantile of order `alpha`.
pub fn detect_outliers(
    ds: &Dataset,
    spec: &ModelSpec,
    fit: &FitResult,
    level: OutlierLevel,
    alpha: f64,
) -> Result<OutlierReport> {
    spec.check_compatible(ds)?;
    // η̂ = 0 (exact fit of at least half the data): zero residuals sit at
    // distance 0 and every other one at +∞
    let exact = !(fit.eta > 0.0);
    let sigma = model::assemble_sigma(spec, if exact { 1.0 } else { fit.eta }, &fit.gamma)?;
    let mut resid = ds.residuals(&fit.beta);
    // residuals at round-off level of the cell are exact zeros
    for i in 0..ds.n() {
        for j in 0..ds.p() {
            let y = ds.y()[(i, j)];
            if resid[(i, j)].abs() <= 16.0 * f64::EPSILON * y.abs().max((y - resid[(i, j)]).abs()) {
                resid[(i, j)] = 0.0;
            }
        }
    }
    let scaled = |d: f64| if exact && d > 0.0 { f64::INFINITY } else { d };
    let (n, p) = (ds.n(), ds.p());
    let mut flags = Vec::new();
    let (dof, tested) = match level {
        OutlierLevel::Cell => {
            let thr = chi2_quantile(1, alpha)?;
            for i in 0..n {
                for j in 0..p {
                    let d = scaled(resid[(i, j)] * resid[(i, j)] / sigma[(j, j)]);
                    if d > thr {
                        flags.push(OutlierFlag { unit: i, coords: vec![j], distance: d });
                    }
                }
            }
            (1, n * p)
        }
        OutlierLevel::Couple => {
            let thr = chi2_quantile(2, alpha)?;
            let pairs = PairIndex::all(p);
            let mut buf = Vec::with_capacity(n);
            for pair in &pairs {
                let sub = pair.sub2(&sigma);
                let inv = linalg::adjugate2(&sub) / linalg::det2(&sub);
                model::pair_distances(&resid, *pair, &inv, &mut buf);
                for (i, &d) in buf.iter().enumerate() {
                    let d = scaled(d);
                    if d > thr {
                        flags.push(OutlierFlag { unit: i, coords: vec![pair.j, pair.l], distance: d });
                    }
                }
            }
            flags.sort_by_key(|f| (f.unit, f.coords.clone()));
            (2, n * pairs.len())
        }
        OutlierLevel::Row => {
            let thr = chi2_quantile(p, alpha)?;
            let inv = linalg::inverse(&sigma, "fitted covariance")?;
            let rq = &resid * &inv;
            for i in 0..n {
                let d = scaled(rq.row(i).dot(&resid.row(i)));
                if d > thr {
                    flags.push(OutlierFlag { unit: i, coords: (0..p).collect(), distance: d });
                }
            }
            (p, n)
        }
    };
    Ok(OutlierReport { level, alpha, dof, threshold: chi2_quantile(dof, alpha)?, tested, flags })
}

/// Finite-sample breakdown constants and the lower bounds on the
/// breakdown point under row-wise and cell-wise contamination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownConstants {
    pub h: usize,
    pub h_star: usize,
    pub f: usize,
    pub bound_ccm: f64,
    pub bound_icm: f64,
    /// True when the enumeration was sampled rather than exhaustive, in
    /// which case `h`, `h*` are lower estimates.
    pub approximate: bool,
}

/// Settings of the combinatorial search behind [`breakdown_constants`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownSearch {
    /// Largest `n` for which exhaustive enumeration is attempted.
    pub exact_max_n: usize,
    /// Largest number of subsets per couple enumerated exhaustively.
    pub exact_max_subsets: u64,
    /// Random subsets per couple otherwise.
    pub sampled_subsets: usize,
    pub seed: u64,
    /// Relative tolerance of the zero tests.
    pub tol: f64,
}

impl Default for BreakdownSearch {
    fn default() -> Self {
        Self { exact_max_n: 25, exact_max_subsets: 200_000, sampled_subsets: 2_000, seed: 0, tol: 1e-8 }
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Calls `visit` on every `size`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, size: usize, mut visit: impl FnMut(&[usize])) {
    if size > n {
        return;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        visit(&idx);
        // rightmost index that can still move
        let Some(i) = (0..size).rev().find(|&i| idx[i] != i + n - size) else { return };
        idx[i] += 1;
        for j in (i + 1)..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn subsets(n: usize, size: usize, exact: bool, sampled: usize, rng: &mut ChaCha8Rng, mut visit: impl FnMut(&[usize])) {
    if exact {
        for_each_subset(n, size, visit);
    } else {
        for _ in 0..sampled {
            let mut s = sample(rng, n, size).into_vec();
            s.sort_unstable();
            visit(&s);
        }
    }
}

/// Rows `x_i^{jl}` of one couple: `2n × k`, unit `i` owning rows `2i, 2i+1`.
fn pair_rows(ds: &Dataset, pair: PairIndex) -> DMatrix<f64> {
    let (n, k) = (ds.n(), ds.k());
    DMatrix::from_fn(2 * n, k, |r, c| {
        let xi = &ds.x()[r / 2];
        xi[(if r % 2 == 0 { pair.j } else { pair.l }, c)]
    })
}

fn is_zero(v: f64, scale: f64, tol: f64) -> bool {
    v.abs() <= tol * scale.max(f64::MIN_POSITIVE)
}

/// `h_jl`: most units whose couple design rows all vanish along one `b ≠ 0`.
fn h_pair(rows: &DMatrix<f64>, n: usize, search: &BreakdownSearch, exact: bool, rng: &mut ChaCha8Rng) -> usize {
    let k = rows.ncols();
    let count = |b: &DVector<f64>| -> usize {
        let bn = b.norm();
        (0..n)
            .filter(|&i| {
                (0..2).all(|r| {
                    let row = rows.row(2 * i + r);
                    is_zero(row.dot(&b.transpose()), row.norm() * bn, search.tol)
                })
            })
            .count()
    };
    if k == 1 {
        // b is a nonzero scalar: only all-zero rows count
        return count(&DVector::from_element(1, 1.0));
    }
    let mut best = 0;
    subsets(2 * n, k - 1, exact, search.sampled_subsets, rng, |s| {
        let sub = DMatrix::from_fn(s.len(), k, |r, c| rows[(s[r], c)]);
        let ns = linalg::null_space(&sub, search.tol);
        for c in 0..ns.ncols() {
            best = best.max(count(&ns.column(c).into_owned()));
        }
    });
    best
}

/// `h*_jl`: most units `i` with `uᵀ(y_i^{jl} − x_i^{jl} b) = 0` for one
/// `u ≠ 0` and some `b`. Candidate directions `u` are the angles at which
/// `k + 1` augmented rows `(uᵀx_i, −uᵀy_i)` become linearly dependent.
fn h_star_pair(ds: &Dataset, pair: PairIndex, search: &BreakdownSearch, exact: bool, rng: &mut ChaCha8Rng) -> usize {
    let (n, k) = (ds.n(), ds.k());
    let aug = |i: usize, r: usize| -> DVector<f64> {
        let row = if r == 0 { pair.j } else { pair.l };
        let xi = &ds.x()[i];
        DVector::from_fn(k + 1, |c, _| if c < k { xi[(row, c)] } else { -ds.y()[(i, row)] })
    };
    let a0: Vec<DVector<f64>> = (0..n).map(|i| aug(i, 0)).collect();
    let a1: Vec<DVector<f64>> = (0..n).map(|i| aug(i, 1)).collect();
    let count = |u: (f64, f64), c: &DVector<f64>| -> usize {
        let cn = c.norm();
        (0..n)
            .filter(|&i| {
                let a = &a0[i] * u.0 + &a1[i] * u.1;
                is_zero(a.dot(c), (a0[i].norm() + a1[i].norm()) * cn, 100.0 * search.tol)
            })
            .count()
    };
    // k units can always be fitted exactly for any u
    let mut best = n.min(k);
    if n <= k {
        return n;
    }
    subsets(n, k + 1, exact, search.sampled_subsets, rng, |s| {
        let m0 = DMatrix::from_fn(s.len(), k + 1, |r, c| a0[s[r]][c]);
        let m1 = DMatrix::from_fn(s.len(), k + 1, |r, c| a1[s[r]][c]);
        // det(m0 + t m1) = 0: real eigenvalues of −m1⁻¹ m0, or u = (0, 1)
        let mut angles: Vec<(f64, f64)> = Vec::new();
        if let Some(inv1) = m1.clone().try_inverse() {
            let e = (-(inv1 * &m0)).complex_eigenvalues();
            for z in e.iter() {
                if z.im.abs() <= 1e-8 * (1.0 + z.re.abs()) {
                    // (cos, sin) ∝ (1, t)
                    let t = z.re;
                    let nrm = (1.0 + t * t).sqrt();
                    angles.push((1.0 / nrm, t / nrm));
                }
            }
        } else {
            angles.push((0.0, 1.0));
        }
        if linalg::rcond_general(&m0) < search.tol {
            angles.push((1.0, 0.0));
        }
        for u in angles {
            let m = &m0 * u.0 + &m1 * u.1;
            let ns = linalg::null_space(&m, 1e-7);
            for c in 0..ns.ncols() {
                best = best.max(count(u, &ns.column(c).into_owned()));
            }
        }
    });
    best
}

/// `h`, `h*`, `f = h + h*` and the bounds `min((1 − b) − f/n, b)` (row-wise)
/// and half of it (cell-wise), with `b` taken from the fit configuration.
pub fn breakdown_constants(ds: &Dataset, b: f64, search: &BreakdownSearch) -> Result<BreakdownConstants> {
    let (n, k, p) = (ds.n(), ds.k(), ds.p());
    if n < k + 1 {
        return Err(Error::InvalidInput(format!("need n ≥ k + 1, got n = {n}, k = {k}")));
    }
    if p < 2 {
        return Err(Error::Dimension("breakdown constants need p ≥ 2".into()));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::InvalidInput(format!("b must lie in (0, 1), got {b}")));
    }
    let exact = n <= search.exact_max_n
        && binomial(2 * n, k.saturating_sub(1)) <= search.exact_max_subsets
        && binomial(n, k + 1) <= search.exact_max_subsets;
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut h = 0;
    let mut h_star = 0;
    for pair in PairIndex::all(p) {
        let rows = pair_rows(ds, pair);
        h = h.max(h_pair(&rows, n, search, exact, &mut rng));
        h_star = h_star.max(h_star_pair(ds, pair, search, exact, &mut rng));
    }
    let f = h + h_star;
    let bound_ccm = ((1.0 - b) - f as f64 / n as f64).min(b).max(0.0);
    Ok(BreakdownConstants { h, h_star, f, bound_ccm, bound_icm: 0.5 * bound_ccm, approximate: !exact })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_oracles() {
        let (_, p) = wald_from(1.96, 1.0);
        assert!((p - 0.05).abs() < 1e-3);
        assert_eq!(wald_from(0.0, 1.0).1, 1.0);
        assert!(wald_from(3.0, 1.0).1 < wald_from(2.0, 1.0).1);
    }

    #[test]
    fn couple_threshold() {
        assert!((chi2_quantile(2, 0.999).unwrap() - 13.815_510_557_964_274).abs() < 1e-9);
    }

    #[test]
    fn subset_enumeration_counts() {
        let mut c = 0;
        for_each_subset(7, 3, |_| c += 1);
        assert_eq!(c, 35);
        let mut c = 0;
        for_each_subset(4, 4, |_| c += 1);
        assert_eq!(c, 1);
        assert_eq!(binomial(50, 5), 2_118_760);
    }
}
