//! Composite objectives `S(β, γ) = Σ_{j<l} s_jl` and `T(β, γ) = Σ_{j<l} τ_jl`,
//! their analytic gradients, the weighted fixed-point update for `β`, and
//! the pooled equation for `η`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, Dataset, ModelSpec, PairIndex};
use crate::rho::{self, RhoConfig};

/// Which robust scale is summed over the coordinate couples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    /// Sum of τ-scales.
    Tau,
    /// Sum of M-scales.
    S,
}

/// Geometry of one couple at a fixed `γ`.
#[derive(Clone, Debug)]
pub(crate) struct PairGeometry {
    pub pair: PairIndex,
    /// `Σ_jl(1, γ)`.
    pub sub: Matrix2<f64>,
    /// `|Σ_jl(1, γ)|`.
    pub det: f64,
    /// `(Σ*_jl)⁻¹ = |Σ_jl|^{-1/2} adj(Σ_jl)`.
    pub star_inv: Matrix2<f64>,
}

/// Couple geometry for every pair; fails when `γ ∉ Γ`.
pub(crate) fn pair_geometry(spec: &ModelSpec, gamma: &DVector<f64>) -> Result<Vec<PairGeometry>> {
    let sigma = model::assemble_sigma(spec, 1.0, gamma)?;
    PairIndex::all(spec.p())
        .into_iter()
        .map(|pair| {
            let sub = pair.sub2(&sigma);
            linalg::check_positive_definite2(&sub)?;
            let det = linalg::det2(&sub);
            let star_inv = linalg::adjugate2(&sub) / det.sqrt();
            Ok(PairGeometry { pair, sub, det, star_inv })
        })
        .collect()
}

/// Scale summary of one couple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScale {
    pub pair: PairIndex,
    pub s: f64,
    pub tau: f64,
}

fn check_inputs(ds: &Dataset, spec: &ModelSpec, beta: &DVector<f64>, gamma: &DVector<f64>) -> Result<()> {
    spec.check_compatible(ds)?;
    if ds.p() < 2 {
        return Err(Error::Dimension("composite objectives need p ≥ 2".into()));
    }
    if beta.len() != ds.k() {
        return Err(Error::Dimension(format!("beta has length {}, expected {}", beta.len(), ds.k())));
    }
    if gamma.len() != spec.j() {
        return Err(Error::Dimension(format!("gamma has length {}, expected {}", gamma.len(), spec.j())));
    }
    Ok(())
}

/// Objective value and per-pair scales from residuals and couple geometry.
pub(crate) fn objective_from_parts(
    resid: &DMatrix<f64>,
    geoms: &[PairGeometry],
    rho: &RhoConfig,
    objective: Objective,
    buf: &mut Vec<f64>,
    scales: Option<&mut Vec<PairScale>>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut collected = Vec::new();
    for g in geoms {
        model::pair_distances(resid, g.pair, &g.star_inv, buf);
        let sc = rho::tau_scale(buf, rho)?;
        total += match objective {
            Objective::Tau => sc.tau,
            Objective::S => sc.s,
        };
        if scales.is_some() {
            collected.push(PairScale { pair: g.pair, s: sc.s, tau: sc.tau });
        }
    }
    if let Some(out) = scales {
        *out = collected;
    }
    Ok(total)
}

pub(crate) fn objective_value(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
    objective: Objective,
) -> Result<f64> {
    check_inputs(ds, spec, beta, gamma)?;
    let geoms = pair_geometry(spec, gamma)?;
    let resid = ds.residuals(beta);
    objective_from_parts(&resid, &geoms, rho, objective, &mut Vec::new(), None)
}

/// Composite S objective: the sum of pairwise M-scales.
pub fn loss_s(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
) -> Result<f64> {
    objective_value(ds, spec, beta, gamma, rho, Objective::S)
}

/// Composite τ objective: the sum of pairwise τ-scales.
pub fn loss_tau(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
) -> Result<f64> {
    objective_value(ds, spec, beta, gamma, rho, Objective::Tau)
}

/// Per-unit weights `W̃_i` of one couple; zero for a degenerate couple.
///
/// For the τ objective `W̃_i = (A_2 − B_2) Ẇ_{1,i} + W_{2,i}`; for the S
/// objective only `Ẇ_{1,i}` remains.
pub(crate) fn pair_weights(m: &[f64], rho: &RhoConfig, objective: Objective, out: &mut Vec<f64>) -> Result<f64> {
    out.clear();
    let n = m.len() as f64;
    let (s, degenerate) = rho::solve_mscale(m, rho.c1, rho.b)?;
    if degenerate || s <= 0.0 {
        out.resize(m.len(), 0.0);
        return Ok(0.0);
    }
    let denom = m.iter().map(|&v| rho::weight(v / s, rho.c1) * v).sum::<f64>() / n;
    if !(denom > 0.0) {
        out.resize(m.len(), 0.0);
        return Ok(s);
    }
    match objective {
        Objective::S => {
            out.extend(m.iter().map(|&v| rho::weight(v / s, rho.c1) * s / denom));
        }
        Objective::Tau => {
            let mut a2 = 0.0;
            let mut b2 = 0.0;
            for &v in m {
                let t = v / s;
                a2 += rho.rho2(t);
                b2 += rho::weight(t, rho.c2) * t;
            }
            let shift = (a2 - b2) / n;
            out.extend(m.iter().map(|&v| {
                let t = v / s;
                shift * rho::weight(t, rho.c1) * s / denom + rho::weight(t, rho.c2)
            }));
        }
    }
    Ok(s)
}

/// Per-unit score contributions to `∇T` (or `∇S`), stacked as `n × (k+J)`.
/// Row sums reproduce the analytic gradient exactly.
pub(crate) fn unit_scores(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
    objective: Objective,
) -> Result<DMatrix<f64>> {
    check_inputs(ds, spec, beta, gamma)?;
    let (n, k, nj) = (ds.n(), ds.k(), spec.j());
    let geoms = pair_geometry(spec, gamma)?;
    let resid = ds.residuals(beta);
    let mut scores = DMatrix::zeros(n, k + nj);
    let mut m = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let inv_n = 1.0 / n as f64;
    for g in &geoms {
        model::pair_distances(&resid, g.pair, &g.star_inv, &mut m);
        pair_weights(&m, rho, objective, &mut w)?;
        let sigma_inv = linalg::adjugate2(&g.sub) / g.det;
        let inv_sqrt_det = 1.0 / g.det.sqrt();
        // bracket |V_r,jl| V_r,jl⁻¹ − c_r,jl Σ_jl⁻¹ for every r
        let brackets: Vec<Matrix2<f64>> = spec
            .v()
            .iter()
            .map(|vr| {
                let vsub = g.pair.sub2(vr);
                let c = 0.5 * vsub[(0, 0)] * g.sub[(1, 1)] + 0.5 * vsub[(1, 1)] * g.sub[(0, 0)]
                    - vsub[(0, 1)] * g.sub[(0, 1)];
                linalg::adjugate2(&vsub) - sigma_inv * c
            })
            .collect();
        let (j, l) = (g.pair.j, g.pair.l);
        for i in 0..n {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            let r = Vector2::new(resid[(i, j)], resid[(i, l)]);
            let qr = g.star_inv * r;
            let xi = &ds.x()[i];
            let scale = wi * inv_n;
            for c in 0..k {
                let d = -2.0 * (xi[(j, c)] * qr[0] + xi[(l, c)] * qr[1]);
                scores[(i, c)] += scale * d;
            }
            for (rr, br) in brackets.iter().enumerate() {
                let d = inv_sqrt_det * r.dot(&(br * r));
                scores[(i, k + rr)] += scale * d;
            }
        }
    }
    Ok(scores)
}

/// Analytic gradient `(∂/∂β, ∂/∂γ)` of the chosen composite objective.
pub fn composite_gradient(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
    objective: Objective,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let scores = unit_scores(ds, spec, beta, gamma, rho, objective)?;
    let k = ds.k();
    let total: DVector<f64> = scores.row_sum().transpose();
    Ok((total.rows(0, k).into_owned(), total.rows(k, spec.j()).into_owned()))
}

/// `∇_β T(β, γ)`.
pub fn grad_beta(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
) -> Result<DVector<f64>> {
    composite_gradient(ds, spec, beta, gamma, rho, Objective::Tau).map(|g| g.0)
}

/// `∇_γ T(β, γ)`.
pub fn grad_gamma(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
) -> Result<DVector<f64>> {
    composite_gradient(ds, spec, beta, gamma, rho, Objective::Tau).map(|g| g.1)
}

/// `c_{r,jl} = ½ v_jj σ_ll + ½ v_ll σ_jj − v_jl σ_jl`, half the derivative
/// of `|Σ_jl|` along `V_r`.
pub fn determinant_direction(sigma_jl: &Matrix2<f64>, v_jl: &Matrix2<f64>) -> f64 {
    0.5 * v_jl[(0, 0)] * sigma_jl[(1, 1)] + 0.5 * v_jl[(1, 1)] * sigma_jl[(0, 0)]
        - v_jl[(0, 1)] * sigma_jl[(0, 1)]
}

/// Right-hand side of the weighted fixed-point equation for `β`, with
/// weights frozen at the current `(β, γ)` and couples whitened by the
/// symmetric root of `(Σ*_jl)⁻¹`.
pub(crate) fn beta_step_with(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
    objective: Objective,
) -> Result<DVector<f64>> {
    check_inputs(ds, spec, beta, gamma)?;
    let (n, k) = (ds.n(), ds.k());
    let geoms = pair_geometry(spec, gamma)?;
    let resid = ds.residuals(beta);
    let mut lhs = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut m = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut xdot = DMatrix::<f64>::zeros(2, k);
    for g in &geoms {
        model::pair_distances(&resid, g.pair, &g.star_inv, &mut m);
        pair_weights(&m, rho, objective, &mut w)?;
        // (Σ*_jl)^{-1/2}
        let root = linalg::sqrt_sym2(&g.star_inv)?;
        let (j, l) = (g.pair.j, g.pair.l);
        for i in 0..n {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            let xi = &ds.x()[i];
            for c in 0..k {
                let a = xi[(j, c)];
                let b = xi[(l, c)];
                xdot[(0, c)] = root[(0, 0)] * a + root[(0, 1)] * b;
                xdot[(1, c)] = root[(1, 0)] * a + root[(1, 1)] * b;
            }
            let ydot = root * Vector2::new(ds.y()[(i, j)], ds.y()[(i, l)]);
            for c in 0..k {
                rhs[c] += wi * (xdot[(0, c)] * ydot[0] + xdot[(1, c)] * ydot[1]);
                for d in c..k {
                    lhs[(c, d)] += wi * (xdot[(0, c)] * xdot[(0, d)] + xdot[(1, c)] * xdot[(1, d)]);
                }
            }
        }
    }
    for c in 0..k {
        for d in 0..c {
            lhs[(c, d)] = lhs[(d, c)];
        }
    }
    linalg::solve_symmetric(&lhs, &rhs, "beta fixed-point normal equations")
}

/// One fixed-point update of `β` for the composite τ objective.
pub fn beta_step(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
) -> Result<DVector<f64>> {
    beta_step_with(ds, spec, beta, gamma, rho, Objective::Tau)
}

/// Solution of the pooled scale equation for `η`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta: f64,
    pub degenerate: bool,
}

/// Solves `mean_{i, j<l} ρ_1(r_iᵀ Σ_jl(1, γ)⁻¹ r_i / η) = b` over all
/// `n·p(p−1)/2` couple distances. The unnormalised `Σ_jl(1, γ)` is used.
pub fn solve_eta(
    ds: &Dataset,
    spec: &ModelSpec,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: &RhoConfig,
) -> Result<EtaEstimate> {
    check_inputs(ds, spec, beta, gamma)?;
    let geoms = pair_geometry(spec, gamma)?;
    let resid = ds.residuals(beta);
    let mut pooled = Vec::with_capacity(ds.n() * geoms.len());
    let mut buf = Vec::with_capacity(ds.n());
    for g in &geoms {
        let inv = linalg::adjugate2(&g.sub) / g.det;
        model::pair_distances(&resid, g.pair, &inv, &mut buf);
        pooled.extend_from_slice(&buf);
    }
    let (eta, degenerate) = rho::solve_mscale(&pooled, rho.c1, rho.b)?;
    Ok(EtaEstimate { eta, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_rjl_hand_arithmetic() {
        let sigma = Matrix2::new(2.0, 1.0, 1.0, 3.0);
        let v = Matrix2::identity();
        assert!((determinant_direction(&sigma, &v) - 2.5).abs() < 1e-15);
        // V_jl = Σ_jl gives c = |Σ_jl| and a vanishing bracket
        let c = determinant_direction(&sigma, &sigma);
        assert!((c - linalg::det2(&sigma)).abs() < 1e-15);
        let bracket = linalg::adjugate2(&sigma) - sigma.try_inverse().unwrap() * c;
        assert!(bracket.abs().max() < 1e-14);
    }

    #[test]
    fn degenerate_pair_has_zero_weights() {
        let mut w = Vec::new();
        let s = pair_weights(&[0.0; 6], &RhoConfig::default(), Objective::Tau, &mut w).unwrap();
        assert_eq!(s, 0.0);
        assert!(w.iter().all(|&v| v == 0.0));
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_problem(seed: u64) -> (Dataset, ModelSpec, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, p, k) = (30, 4, 3);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let x: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(p, k, |_, _| draw())).collect();
        let y = DMatrix::from_fn(n, p, |_, _| 2.0 * draw());
        let v1 = DMatrix::from_element(p, p, 1.0);
        let v2 = DMatrix::from_fn(p, p, |i, j| if (i < 2) == (j < 2) { 1.0 } else { 0.0 });
        let spec = ModelSpec::new(vec![v1, v2]).unwrap();
        let ds = Dataset::new(y, x).unwrap();
        let beta = DVector::from_fn(k, |_, _| 0.3 * draw());
        let gamma = DVector::from_vec(vec![0.4 + 0.2 * draw().abs(), 0.7]);
        (ds, spec, beta, gamma)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let rho = RhoConfig::default();
        for seed in 0..4 {
            let (ds, spec, beta, gamma) = random_problem(seed);
            for objective in [Objective::Tau, Objective::S] {
                let (gb, gg) = composite_gradient(&ds, &spec, &beta, &gamma, &rho, objective).unwrap();
                let f = |b: &DVector<f64>, g: &DVector<f64>| {
                    objective_value(&ds, &spec, b, g, &rho, objective).unwrap()
                };
                for c in 0..beta.len() {
                    let h = 1e-6 * (1.0 + beta[c].abs());
                    let mut bp = beta.clone();
                    let mut bm = beta.clone();
                    bp[c] += h;
                    bm[c] -= h;
                    let fd = (f(&bp, &gamma) - f(&bm, &gamma)) / (2.0 * h);
                    assert!((fd - gb[c]).abs() <= 1e-5 * (1.0 + gb[c].abs()), "beta {c}: {fd} vs {}", gb[c]);
                }
                for c in 0..gamma.len() {
                    let h = 1e-6 * (1.0 + gamma[c].abs());
                    let mut gp = gamma.clone();
                    let mut gm = gamma.clone();
                    gp[c] += h;
                    gm[c] -= h;
                    let fd = (f(&beta, &gp) - f(&beta, &gm)) / (2.0 * h);
                    assert!((fd - gg[c]).abs() <= 1e-5 * (1.0 + gg[c].abs()), "gamma {c}: {fd} vs {}", gg[c]);
                }
            }
        }
    }

    #[test]
    fn beta_step_is_a_descent_step() {
        let rho = RhoConfig::default();
        let (ds, spec, beta, gamma) = random_problem(7);
        let t0 = loss_tau(&ds, &spec, &beta, &gamma, &rho).unwrap();
        let b1 = beta_step(&ds, &spec, &beta, &gamma, &rho).unwrap();
        let g = grad_beta(&ds, &spec, &beta, &gamma, &rho).unwrap();
        assert!((&b1 - &beta).dot(&g) < 0.0);
        let t1 = loss_tau(&ds, &spec, &b1, &gamma, &rho).unwrap();
        assert!(t1 < t0);
    }

    #[test]
    fn eta_scales_with_data() {
        let rho = RhoConfig::default();
        let (ds, spec, beta, gamma) = random_problem(3);
        let e1 = solve_eta(&ds, &spec, &beta, &gamma, &rho).unwrap();
        let y2 = ds.y() * 3.0;
        let x2: Vec<DMatrix<f64>> = ds.x().to_vec();
        let ds2 = Dataset::new(y2, x2).unwrap();
        let e2 = solve_eta(&ds2, &spec, &(&beta * 3.0), &gamma, &rho).unwrap();
        assert!((e2.eta / e1.eta - 9.0).abs() < 1e-9);
    }
}
