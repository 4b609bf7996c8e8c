//! Classical S-estimator on full `p`-vector distances, used as a baseline.
//! It minimises one M-scale of `r_iᵀ Σ*⁻¹ r_i` with `Σ* = Σ / |Σ|^{1/p}`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::fit::{self, ClassicalTuning, Criterion, Estimator, FitConfig, FitResult};
use crate::init;
use crate::linalg;
use crate::model::{self, Dataset, ModelSpec};
use crate::rho;

/// Tuning `(c, b)` of the full-vector `ρ`, always with `b = E_{χ²_p} ρ_c`
/// so the scale is consistent at the normal model.
pub fn classical_tuning(p: usize, tuning: ClassicalTuning) -> Result<(f64, f64)> {
    match tuning {
        ClassicalTuning::Breakdown(b) => Ok((rho::tuning_for_b(b, p)?, b)),
        ClassicalTuning::Rejection(alpha) => {
            if p == 0 || !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidInput(format!("invalid classical tuning p={p}, rejection={alpha}")));
            }
            let chi = ChiSquared::new(p as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
            let c = (chi.inverse_cdf(1.0 - alpha) / 9.0).sqrt();
            Ok((c, rho::consistency_b(c, p)))
        }
    }
}

struct FullGeometry {
    /// `Σ*(γ)⁻¹`.
    star_inv: DMatrix<f64>,
}

fn full_geometry(spec: &ModelSpec, gamma: &DVector<f64>) -> Result<FullGeometry> {
    let sigma = model::assemble_sigma(spec, 1.0, gamma)?;
    let p = spec.p() as f64;
    let logdet = linalg::log_det_spd(&sigma)?;
    let inv = linalg::inverse(&sigma, "full-vector covariance")?;
    Ok(FullGeometry { star_inv: inv * (logdet / p).exp() })
}

fn distances(resid: &DMatrix<f64>, q: &DMatrix<f64>, out: &mut Vec<f64>) {
    out.clear();
    let rq = resid * q;
    for i in 0..resid.nrows() {
        out.push(rq.row(i).dot(&resid.row(i)).max(0.0));
    }
}

struct ClassicalCriterion<'a> {
    ds: &'a Dataset,
    spec: &'a ModelSpec,
    c: f64,
    b: f64,
    hint: Option<f64>,
    buf: Vec<f64>,
}

impl Criterion for ClassicalCriterion<'_> {
    fn value(&mut self, resid: &DMatrix<f64>, gamma: &DVector<f64>) -> Result<f64> {
        let g = full_geometry(self.spec, gamma)?;
        distances(resid, &g.star_inv, &mut self.buf);
        let (s, degenerate) = rho::solve_mscale_hint(&self.buf, self.c, self.b, self.hint)?;
        if !degenerate {
            self.hint = Some(s);
        }
        Ok(s)
    }

    fn beta_step(&mut self, beta: &DVector<f64>, gamma: &DVector<f64>) -> Result<DVector<f64>> {
        let g = full_geometry(self.spec, gamma)?;
        let resid = self.ds.residuals(beta);
        distances(&resid, &g.star_inv, &mut self.buf);
        let (s, degenerate) = rho::solve_mscale(&self.buf, self.c, self.b)?;
        if degenerate {
            return Err(Error::Singular { context: "classical S weights", rcond: 0.0 });
        }
        let k = self.ds.k();
        let mut lhs = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (i, xi) in self.ds.x().iter().enumerate() {
            let w = rho::weight(self.buf[i] / s, self.c);
            if w == 0.0 {
                continue;
            }
            let xq = xi.transpose() * &g.star_inv;
            lhs += &xq * xi * w;
            rhs += &xq * self.ds.y().row(i).transpose() * w;
        }
        linalg::solve_symmetric(&lhs, &rhs, "classical S normal equations")
    }
}

/// Classical full-vector S-estimator of `(β, γ, η)`.
pub fn fit_classical_s(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    spec.check_compatible(ds)?;
    let (c, b) = classical_tuning(ds.p(), cfg.classical)?;
    let (beta0, gamma0) = if ds.p() >= 2 {
        init::initial_estimates(ds, spec, &cfg.init, cfg.seed)?
    } else {
        let (x, y) = ds.stacked();
        (init::s_regression(&x, &y, &cfg.init, cfg.seed)?.0, DVector::zeros(spec.j()))
    };
    let gamma0 = if model::assemble_sigma(spec, 1.0, &gamma0).is_ok() { gamma0 } else { DVector::zeros(spec.j()) };
    let mut crit = ClassicalCriterion { ds, spec, c, b, hint: None, buf: Vec::with_capacity(ds.n()) };
    let out = fit::alternate(&mut crit, ds, beta0, gamma0, cfg)?;

    let resid = ds.residuals(&out.beta);
    let g = full_geometry(spec, &out.gamma)?;
    distances(&resid, &g.star_inv, &mut crit.buf);
    let (loss, _) = rho::solve_mscale(&crit.buf, c, b)?;
    // η from the unnormalised Σ(1, γ̂)
    let sigma1 = model::assemble_sigma(spec, 1.0, &out.gamma)?;
    let inv = linalg::inverse(&sigma1, "full-vector covariance")?;
    distances(&resid, &inv, &mut crit.buf);
    let (eta, eta_degenerate) = rho::solve_mscale(&crit.buf, c, b)?;
    Ok(FitResult {
        estimator: Estimator::ClassicalS,
        beta: out.beta,
        gamma: out.gamma,
        eta,
        eta_degenerate,
        pair_scales: Vec::new(),
        loss,
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuning_for_twelve_coordinates() {
        let (c, b) = classical_tuning(12, ClassicalTuning::Rejection(0.01)).unwrap();
        assert!((9.0 * c * c - 26.216_967_5).abs() < 1e-5);
        assert!(b > 0.5 && b < 0.7, "{b}");
        let (c, b) = classical_tuning(12, ClassicalTuning::Breakdown(0.5)).unwrap();
        assert_eq!(b, 0.5);
        assert!((rho::consistency_b(c, 12) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn normalised_inverse_has_unit_determinant() {
        let spec = model::build_crossed_design(2, 2, 3).unwrap();
        let g = full_geometry(&spec, &DVector::from_vec(vec![1.0, 1.0, 2.0])).unwrap();
        let ld = linalg::log_det_spd(&g.star_inv).unwrap();
        assert!(ld.abs() < 1e-10);
    }
}
