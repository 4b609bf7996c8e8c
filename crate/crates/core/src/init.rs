//! Starting values for the iterative fit: an S-regression of the stacked
//! responses for `β`, a pairwise Gnanadesikan–Kettenring scatter of the
//! residuals, and a least-squares fit of the scatter entries on the
//! structure matrices for `γ`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, Dataset, ModelSpec};
use crate::rho;

/// Settings of the initial estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSettings {
    /// Random elemental subsets tried by the S-regression.
    pub candidates: usize,
    /// Reweighting steps applied to the best candidate.
    pub refine_steps: usize,
    /// Right-hand side of the S-regression scale equation.
    pub b: f64,
}

impl Default for InitSettings {
    fn default() -> Self {
        Self { candidates: 500, refine_steps: 3, b: 0.5 }
    }
}

/// Robust S-regression of `y` on `x` by random elemental subsets followed
/// by reweighting. Returns the coefficients and the M-scale of the squared
/// residuals.
pub fn s_regression(x: &DMatrix<f64>, y: &DVector<f64>, settings: &InitSettings, seed: u64) -> Result<(DVector<f64>, f64)> {
    let (n, k) = (x.nrows(), x.ncols());
    if n != y.len() {
        return Err(Error::Dimension(format!("{} rows in x, {} responses", n, y.len())));
    }
    if n < k || k == 0 {
        return Err(Error::RankDeficient(format!("{n} observations for {k} coefficients")));
    }
    if linalg::rank(x, 1e-10) < k {
        return Err(Error::RankDeficient("stacked design does not have full column rank".into()));
    }
    let c = rho::tuning_for_b(settings.b, 1)?;
    let b = settings.b;
    let mut sq = vec![0.0; n];
    let scale_of = |beta: &DVector<f64>, sq: &mut Vec<f64>| -> Result<f64> {
        let r = y - x * beta;
        for (o, v) in sq.iter_mut().zip(r.iter()) {
            *o = v * v;
        }
        Ok(rho::solve_mscale(sq, c, b)?.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut attempts = 0;
    let mut accepted = 0;
    while accepted < settings.candidates && attempts < 20 * settings.candidates.max(1) {
        attempts += 1;
        let rows = sample(&mut rng, n, k);
        let xs = DMatrix::from_fn(k, k, |i, j| x[(rows.index(i), j)]);
        let ys = DVector::from_fn(k, |i, _| y[rows.index(i)]);
        let Some(beta) = xs.lu().solve(&ys) else { continue };
        if beta.iter().any(|v| !v.is_finite()) {
            continue;
        }
        accepted += 1;
        let s = scale_of(&beta, &mut sq)?;
        if best.as_ref().is_none_or(|(_, bs)| s < *bs) {
            best = Some((beta, s));
        }
    }
    let (mut beta, mut s) = match best {
        Some(v) => v,
        None => {
            // every subset was singular: fall back on least squares
            let xtx = x.transpose() * x;
            let beta = linalg::solve_symmetric(&xtx, &(x.transpose() * y), "initial least squares")?;
            let s = scale_of(&beta, &mut sq)?;
            (beta, s)
        }
    };

    for _ in 0..settings.refine_steps {
        if s <= 0.0 {
            break;
        }
        let r = y - x * &beta;
        let w: Vec<f64> = r.iter().map(|v| rho::weight(v * v / s, c)).collect();
        let mut xtwx = DMatrix::zeros(k, k);
        let mut xtwy = DVector::zeros(k);
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let xi = x.row(i);
            xtwx += w[i] * xi.transpose() * xi;
            xtwy += w[i] * y[i] * xi.transpose();
        }
        let Ok(next) = linalg::solve_symmetric(&xtwx, &xtwy, "S-regression reweighting") else { break };
        let s_next = scale_of(&next, &mut sq)?;
        if s_next < s {
            beta = next;
            s = s_next;
        } else {
            break;
        }
    }
    Ok((beta, s))
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    v.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Normalised median absolute deviation.
pub fn mad(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut w = v.to_vec();
    let med = median(&mut w);
    for x in w.iter_mut() {
        *x = (*x - med).abs();
    }
    1.482_602_218_505_602 * median(&mut w)
}

/// Pairwise Gnanadesikan–Kettenring scatter of the columns of `r`, built
/// from MADs so each entry only depends on two columns.
pub fn gk_scatter(r: &DMatrix<f64>) -> DMatrix<f64> {
    let p = r.ncols();
    let scales: Vec<f64> = (0..p).map(|j| mad(r.column(j).as_slice())).collect();
    let mut out = DMatrix::zeros(p, p);
    for j in 0..p {
        out[(j, j)] = scales[j] * scales[j];
        for l in 0..j {
            if scales[j] == 0.0 || scales[l] == 0.0 {
                continue;
            }
            let u = r.column(j) / scales[j];
            let v = r.column(l) / scales[l];
            let plus: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| a + b).collect();
            let minus: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| a - b).collect();
            let (sp, sm) = (mad(&plus), mad(&minus));
            let cov = 0.25 * (sp * sp - sm * sm) * scales[j] * scales[l];
            out[(j, l)] = cov;
            out[(l, j)] = cov;
        }
    }
    out
}

fn lower_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for j in 0..p {
        for l in 0..=j {
            out.push(m[(j, l)]);
        }
    }
    out
}

/// Least-squares fit of the lower triangle of `scatter` on the lower
/// triangles of `(I, V_1, …, V_J)`; `γ_j` is the ratio of the `V_j`
/// coefficient to the identity coefficient. The result is pulled toward
/// zero by halving until `I + Σ γ_j V_j` is positive definite.
pub fn gamma_from_scatter(scatter: &DMatrix<f64>, spec: &ModelSpec) -> Result<DVector<f64>> {
    let p = spec.p();
    if scatter.nrows() != p || scatter.ncols() != p {
        return Err(Error::Dimension(format!("scatter is {}×{}, expected {p}×{p}", scatter.nrows(), scatter.ncols())));
    }
    let nj = spec.j();
    let t = DVector::from_vec(lower_triangle(scatter));
    let mut cols = vec![DVector::from_vec(lower_triangle(&DMatrix::identity(p, p)))];
    cols.extend(spec.v().iter().map(|v| DVector::from_vec(lower_triangle(v))));
    let design = DMatrix::from_columns(&cols);
    if linalg::rank(&design, 1e-10) < nj + 1 {
        return Err(Error::RankDeficient(
            "identity and structure matrices are linearly dependent; γ is not identified".into(),
        ));
    }
    let theta = linalg::solve_symmetric(&(design.transpose() * &design), &(design.transpose() * &t), "γ regression")?;
    let mean_diag = scatter.diagonal().mean().abs();
    let floor = 1e-2 * mean_diag.max(f64::MIN_POSITIVE);
    let theta0 = if theta[0] > floor { theta[0] } else { floor };
    let mut gamma = DVector::from_fn(nj, |j, _| theta[j + 1] / theta0);
    for _ in 0..60 {
        if model::assemble_sigma(spec, 1.0, &gamma).is_ok() {
            return Ok(gamma);
        }
        gamma *= 0.5;
    }
    Ok(DVector::zeros(nj))
}

/// Initial `(β, γ)` for the iterative fit; deterministic given `seed`.
pub fn initial_estimates(
    ds: &Dataset,
    spec: &ModelSpec,
    settings: &InitSettings,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    spec.check_compatible(ds)?;
    let (x, y) = ds.stacked();
    let (beta, _) = s_regression(&x, &y, settings, seed)?;
    let resid = ds.residuals(&beta);
    let scatter = gk_scatter(&resid);
    let gamma = gamma_from_scatter(&scatter, spec)?;
    Ok((beta, gamma))
}
