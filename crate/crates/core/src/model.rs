//! Data model for the variance-components linear mixed model
//! `y_i ~ N_p(x_i β, η (I + Σ_j γ_j V_j))`, covariance assembly, pairwise
//! submatrices and the two structured design builders.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-10;

/// `n` units, each a `p`-vector response with a `p×k` fixed-effects design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Responses, one row per unit (`n×p`).
    y: DMatrix<f64>,
    /// Per-unit designs, each `p×k`.
    x: Vec<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = y.nrows();
        let p = y.ncols();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if p == 0 {
            return Err(Error::Dimension("responses have zero coordinates".into()));
        }
        if x.len() != n {
            return Err(Error::Dimension(format!(
                "{} responses but {} design matrices",
                n,
                x.len()
            )));
        }
        let k = x[0].ncols();
        if k == 0 {
            return Err(Error::Dimension("design has zero columns".into()));
        }
        for (i, xi) in x.iter().enumerate() {
            if xi.nrows() != p || xi.ncols() != k {
                return Err(Error::Dimension(format!(
                    "unit {} design is {}×{}, expected {}×{}",
                    i,
                    xi.nrows(),
                    xi.ncols(),
                    p,
                    k
                )));
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("unit {i} design has non-finite entries")));
            }
            if y.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("unit {i} response has non-finite entries")));
            }
        }
        Ok(Self { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.x[0].ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    /// Residual matrix `y_i − x_i β`, one row per unit.
    pub fn residuals(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let mut r = self.y.clone();
        for (i, xi) in self.x.iter().enumerate() {
            let fitted = xi * beta;
            for j in 0..self.p() {
                r[(i, j)] -= fitted[j];
            }
        }
        r
    }

    /// Same designs, new responses.
    pub fn with_responses(&self, y: DMatrix<f64>) -> Result<Self> {
        Self::new(y, self.x.clone())
    }

    /// Stacked `(n·p)×k` design and `n·p` response, unit-major.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (n, p, k) = (self.n(), self.p(), self.k());
        let mut xs = DMatrix::zeros(n * p, k);
        let mut ys = DVector::zeros(n * p);
        for i in 0..n {
            for j in 0..p {
                ys[i * p + j] = self.y[(i, j)];
                for c in 0..k {
                    xs[(i * p + j, c)] = self.x[i][(j, c)];
                }
            }
        }
        (xs, ys)
    }
}

/// The structure matrices `V_1..V_J` (the identity `V_0` is implicit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    v: Vec<DMatrix<f64>>,
}

impl ModelSpec {
    pub fn new(v: Vec<DMatrix<f64>>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Dimension("at least one structure matrix is required".into()));
        }
        let p = v[0].nrows();
        for (j, vj) in v.iter().enumerate() {
            if vj.nrows() != p || vj.ncols() != p {
                return Err(Error::Dimension(format!(
                    "V_{} is {}×{}, expected {}×{}",
                    j + 1,
                    vj.nrows(),
                    vj.ncols(),
                    p,
                    p
                )));
            }
            let asym = (vj - vj.transpose()).abs().max();
            if asym > SYMMETRY_TOL {
                return Err(Error::InvalidInput(format!(
                    "V_{} is not symmetric (max asymmetry {asym:.3e})",
                    j + 1
                )));
            }
        }
        Ok(Self { v })
    }

    pub fn p(&self) -> usize {
        self.v[0].nrows()
    }

    /// Number of structure matrices `J`.
    pub fn j(&self) -> usize {
        self.v.len()
    }

    pub fn v(&self) -> &[DMatrix<f64>] {
        &self.v
    }

    /// `I + Σ_j γ_j V_j` without any definiteness check.
    pub fn structure(&self, gamma: &DVector<f64>) -> DMatrix<f64> {
        let p = self.p();
        let mut s = DMatrix::identity(p, p);
        for (g, vj) in gamma.iter().zip(&self.v) {
            s += vj * *g;
        }
        s
    }

    pub fn check_compatible(&self, ds: &Dataset) -> Result<()> {
        if self.p() != ds.p() {
            return Err(Error::Dimension(format!(
                "model has p = {} but data has p = {}",
                self.p(),
                ds.p()
            )));
        }
        Ok(())
    }
}

/// Fixed effects `β`, structure ratios `γ` and overall scale `η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub eta: f64,
}

impl Parameters {
    pub fn sigma(&self, spec: &ModelSpec) -> Result<DMatrix<f64>> {
        assemble_sigma(spec, self.eta, &self.gamma)
    }
}

/// A coordinate couple `(j, l)` with `j < l`, zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairIndex {
    pub j: usize,
    pub l: usize,
}

impl PairIndex {
    pub fn new(j: usize, l: usize, p: usize) -> Result<Self> {
        if !(j < l && l < p) {
            return Err(Error::InvalidInput(format!("invalid pair ({j}, {l}) for p = {p}")));
        }
        Ok(Self { j, l })
    }

    /// All `p(p−1)/2` couples in lexicographic order.
    pub fn all(p: usize) -> Vec<PairIndex> {
        let mut out = Vec::with_capacity(p * p.saturating_sub(1) / 2);
        for j in 0..p {
            for l in (j + 1)..p {
                out.push(PairIndex { j, l });
            }
        }
        out
    }

    /// The 2×2 submatrix at rows/columns `(j, l)`.
    pub fn sub2(&self, m: &DMatrix<f64>) -> Matrix2<f64> {
        Matrix2::new(
            m[(self.j, self.j)],
            m[(self.j, self.l)],
            m[(self.l, self.j)],
            m[(self.l, self.l)],
        )
    }
}

/// `Σ(η, γ) = η (I + Σ_j γ_j V_j)`; rejects results that are not positive
/// definite, which signals `γ ∉ Γ` (or `η ≤ 0`).
pub fn assemble_sigma(spec: &ModelSpec, eta: f64, gamma: &DVector<f64>) -> Result<DMatrix<f64>> {
    if gamma.len() != spec.j() {
        return Err(Error::Dimension(format!(
            "gamma has length {} but the model has J = {}",
            gamma.len(),
            spec.j()
        )));
    }
    let sigma = spec.structure(gamma) * eta;
    linalg::check_positive_definite(&sigma)?;
    Ok(sigma)
}

/// Per-couple unit-determinant normalization `Σ_jl / |Σ_jl|^{1/2}`.
pub fn pair_submatrix_normalized(sigma1gamma: &DMatrix<f64>, pair: PairIndex) -> Result<Matrix2<f64>> {
    let sub = pair.sub2(sigma1gamma);
    linalg::check_positive_definite2(&sub)?;
    Ok(sub / linalg::det2(&sub).sqrt())
}

/// Squared pairwise Mahalanobis distances of the `(j, l)` sub-residuals
/// with respect to `sigma_star_jl`.
pub fn pairwise_mahalanobis(
    ds: &Dataset,
    beta: &DVector<f64>,
    sigma_star_jl: &Matrix2<f64>,
    pair: PairIndex,
) -> Result<DVector<f64>> {
    if beta.len() != ds.k() {
        return Err(Error::Dimension(format!(
            "beta has length {} but the design has k = {}",
            beta.len(),
            ds.k()
        )));
    }
    if pair.l >= ds.p() {
        return Err(Error::IndexOutOfRange { index: pair.l, len: ds.p() });
    }
    linalg::check_positive_definite2(sigma_star_jl)?;
    let inv = linalg::adjugate2(sigma_star_jl) / linalg::det2(sigma_star_jl);
    let r = ds.residuals(beta);
    let mut out = Vec::with_capacity(ds.n());
    pair_distances(&r, pair, &inv, &mut out);
    Ok(DVector::from_vec(out))
}

/// Quadratic forms `r_iᵀ Q r_i` over the `(j, l)` columns of a residual
/// matrix, written into `out`.
#[inline]
pub(crate) fn pair_distances(r: &DMatrix<f64>, pair: PairIndex, q: &Matrix2<f64>, out: &mut Vec<f64>) {
    out.clear();
    let cj = r.column(pair.j);
    let cl = r.column(pair.l);
    let (a, b, d) = (q[(0, 0)], q[(0, 1)] + q[(1, 0)], q[(1, 1)]);
    for (u, v) in cj.iter().zip(cl.iter()) {
        out.push((a * u * u + b * u * v + d * v * v).max(0.0));
    }
}

/// 2-way crossed classification with interaction: `V_1 = I_F⊗J_G⊗J_H`,
/// `V_2 = J_F⊗I_G⊗J_H`, `V_3 = J_F⊗J_G⊗I_H`, coordinates ordered by `h`
/// within `g` within `f`.
pub fn build_crossed_design(f: usize, g: usize, h: usize) -> Result<ModelSpec> {
    if f == 0 || g == 0 || h == 0 {
        return Err(Error::InvalidInput("crossed design sizes must be ≥ 1".into()));
    }
    let eye = |n: usize| DMatrix::<f64>::identity(n, n);
    let ones = |n: usize| DMatrix::<f64>::from_element(n, n, 1.0);
    let v1 = eye(f).kronecker(&ones(g)).kronecker(&ones(h));
    let v2 = ones(f).kronecker(&eye(g)).kronecker(&ones(h));
    let v3 = ones(f).kronecker(&ones(g)).kronecker(&eye(h));
    ModelSpec::new(vec![v1, v2, v3])
}

/// Random intercept, slope and curvature on the time grid `a`:
/// `jjᵀ, aaᵀ, bbᵀ, jaᵀ+ajᵀ, jbᵀ+bjᵀ, abᵀ+baᵀ` with `b = a²`.
pub fn build_random_coeff_design(a: &[f64]) -> Result<ModelSpec> {
    let p = a.len();
    if p < 2 {
        return Err(Error::InvalidInput("random-coefficients design needs p ≥ 2".into()));
    }
    let j = DVector::from_element(p, 1.0);
    let av = DVector::from_column_slice(a);
    let bv = av.map(|t| t * t);
    let outer = |u: &DVector<f64>, v: &DVector<f64>| u * v.transpose();
    let sym = |u: &DVector<f64>, v: &DVector<f64>| u * v.transpose() + v * u.transpose();
    ModelSpec::new(vec![
        outer(&j, &j),
        outer(&av, &av),
        outer(&bv, &bv),
        sym(&j, &av),
        sym(&j, &bv),
        sym(&av, &bv),
    ])
}
