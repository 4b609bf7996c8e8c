//! The bounded ρ family, its derivative, consistency constants, M-scales
//! and τ-scales.
//!
//! `rho_opt(v, c)` is the piecewise polynomial family with quadratic centre
//! on `v ≤ 2c`, an eighth-degree blend on `2c < v ≤ 3c`, and the constant 1
//! beyond. Scales are always applied to squared distances through
//! `rho_opt_sq(u, c) = rho_opt(√u, c)`.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const A0: f64 = 1.792;
pub const A1: f64 = -1.944;
pub const A2: f64 = 1.728;
pub const A3: f64 = -0.312;
pub const A4: f64 = 0.016;
pub const A: f64 = 3.25;

/// `ρ^o_c(v)`; nondecreasing from 0 to 1, constant past `3c`.
pub fn rho_opt(v: f64, c: f64) -> f64 {
    let t = v / c;
    rho_opt_sq_std(t * t)
}

/// `ρ^o_c(√u)`, written directly in `w = u / c²` so no square root is taken.
#[inline]
pub fn rho_opt_sq(u: f64, c: f64) -> f64 {
    rho_opt_sq_std(u / (c * c))
}

#[inline]
fn rho_opt_sq_std(w: f64) -> f64 {
    if w <= 4.0 {
        w / (2.0 * A)
    } else if w <= 9.0 {
        let w2 = w * w;
        (A4 / 8.0 * w2 * w2 + A3 / 6.0 * w2 * w + A2 / 4.0 * w2 + A1 / 2.0 * w + A0) / A
    } else {
        1.0
    }
}

/// Derivative of `rho_opt_sq(·, c)` with respect to its argument.
#[inline]
pub fn weight(u: f64, c: f64) -> f64 {
    let inv_c2 = 1.0 / (c * c);
    weight_std(u * inv_c2) * inv_c2
}

#[inline]
fn weight_std(w: f64) -> f64 {
    if w <= 4.0 {
        1.0 / (2.0 * A)
    } else if w <= 9.0 {
        (A4 / 2.0 * w * w * w + A3 / 2.0 * w * w + A2 / 2.0 * w + A1 / 2.0) / A
    } else {
        0.0
    }
}

/// Tuning of the two ρ functions used by the τ-scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoConfig {
    /// Tuning of `ρ_1`, which defines the M-scale.
    pub c1: f64,
    /// Tuning of `ρ_2`, which defines the τ-scale.
    pub c2: f64,
    /// Right-hand side of the M-scale equation.
    pub b: f64,
}

impl Default for RhoConfig {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.64, b: 0.5 }
    }
}

impl RhoConfig {
    pub fn new(c1: f64, c2: f64, b: f64) -> Result<Self> {
        let cfg = Self { c1, c2, b };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(Error::InvalidInput(format!("b = {} must lie in (0, 1)", self.b)));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::InvalidInput(format!("c1 = {} must be positive", self.c1)));
        }
        if !(self.c2 >= self.c1 && self.c2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "c2 = {} must be at least c1 = {}",
                self.c2, self.c1
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn rho1(&self, u: f64) -> f64 {
        rho_opt_sq(u, self.c1)
    }

    #[inline]
    pub fn rho2(&self, u: f64) -> f64 {
        rho_opt_sq(u, self.c2)
    }

    /// `E_{χ²_q} ρ_1`, the value of `b` that makes a `q`-dimensional
    /// M-scale consistent at the Gaussian.
    pub fn full_vector_b(&self, q: usize) -> f64 {
        consistency_b(self.c1, q)
    }

    /// Rescales `c1` and `c2` by a common factor so that
    /// `E_{χ²_2} ρ_1 = b`. The ratio `c2 / c1` is kept, so the composite
    /// estimates of `β` and `γ` are unchanged and only `η̂` becomes
    /// consistent at the Gaussian.
    pub fn calibrated(&self) -> Result<Self> {
        self.validate()?;
        let c1 = tuning_for_b(self.b, 2)?;
        let ratio = c1 / self.c1;
        Ok(Self { c1, c2: self.c2 * ratio, b: self.b })
    }
}

/// The `c` for which `E_{χ²_q} rho_opt_sq(·, c) = b`.
pub fn tuning_for_b(b: f64, q: usize) -> Result<f64> {
    if !(b > 0.0 && b < 1.0) || q == 0 {
        return Err(Error::InvalidInput(format!("cannot tune for b = {b}, q = {q}")));
    }
    // consistency_b is decreasing in c
    let (mut lo, mut hi) = (1e-3, 1.0);
    while consistency_b(hi, q) > b {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidInput(format!("no tuning constant reaches b = {b}")));
        }
    }
    while consistency_b(lo, q) < b {
        lo /= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if consistency_b(mid, q) > b {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A robust scale of a sample of squared distances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    /// M-scale.
    pub s: f64,
    /// τ-scale built on `s`.
    pub tau: f64,
    /// Set when at least a fraction `1 − b` of the sample is zero.
    pub degenerate: bool,
}

fn cache() -> &'static RwLock<HashMap<(u64, usize), f64>> {
    static CACHE: OnceLock<RwLock<HashMap<(u64, usize), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// `E[rho_opt_sq(V, c)]` for `V ~ χ²_q`, integrated to an absolute
/// tolerance of `1e-8`. Results are memoised per `(c, q)`.
pub fn consistency_b(c: f64, q: usize) -> f64 {
    let key = (c.to_bits(), q);
    if let Some(v) = cache().read().ok().and_then(|m| m.get(&key).copied()) {
        return v;
    }
    let value = integrate_consistency(c, q);
    if let Ok(mut m) = cache().write() {
        m.insert(key, value);
    }
    value
}

fn integrate_consistency(c: f64, q: usize) -> f64 {
    let qf = q as f64;
    let log_norm = -(0.5 * qf) * std::f64::consts::LN_2 - ln_gamma(0.5 * qf);
    let density = |u: f64| -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        (log_norm + (0.5 * qf - 1.0) * u.ln() - 0.5 * u).exp()
    };
    let integrand = |u: f64| rho_opt_sq(u, c) * density(u);
    let c2 = c * c;
    // the chi-square(1) density is unbounded at 0; substitute u = t² there
    let first = if q == 1 {
        adaptive_simpson(&|t: f64| 2.0 * t * integrand(t * t), 0.0, 2.0 * c, 1e-11)
    } else {
        adaptive_simpson(&integrand, 0.0, 4.0 * c2, 1e-11)
    };
    let second = adaptive_simpson(&integrand, 4.0 * c2, 9.0 * c2, 1e-11);
    let tail = ChiSquared::new(qf).map(|d| d.sf(9.0 * c2)).unwrap_or(0.0);
    first + second + tail
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Solves `mean ρ_c(m_i / s) = b` for `s`.
///
/// Returns `(s, degenerate)`. The mean is continuous and nonincreasing in
/// `s`, so the root is bracketed first and then refined by Newton steps
/// that fall back to geometric bisection whenever they leave the bracket.
pub fn solve_mscale(m: &[f64], c: f64, b: f64) -> Result<(f64, bool)> {
    solve_mscale_hint(m, c, b, None)
}

/// As [`solve_mscale`], starting the root search at `hint` when it is a
/// positive finite value (typically the scale of a nearby problem).
pub fn solve_mscale_hint(m: &[f64], c: f64, b: f64, hint: Option<f64>) -> Result<(f64, bool)> {
    let n = m.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut max = 0.0f64;
    let mut min_pos = f64::INFINITY;
    let mut sum = 0.0;
    let mut zeros = 0usize;
    for &v in m {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidInput(format!("distance {v} is not a finite nonnegative value")));
        }
        if v == 0.0 {
            zeros += 1;
        } else {
            max = max.max(v);
            min_pos = min_pos.min(v);
            sum += v;
        }
    }
    if zeros as f64 >= (1.0 - b) * n as f64 {
        return Ok((0.0, true));
    }
    let inv_n = 1.0 / n as f64;
    let inv_c2 = 1.0 / (c * c);
    // value and s-derivative of mean ρ(m/s) − b
    let eval = |s: f64| -> (f64, f64) {
        let k = inv_c2 / s;
        let mut f = 0.0;
        let mut d = 0.0;
        for &v in m {
            let w = v * k;
            f += rho_opt_sq_std(w);
            d += weight_std(w) * w;
        }
        (f * inv_n - b, -d * inv_n / s)
    };
    // every positive entry saturates at `lo`; every entry sits on the
    // linear piece, with mean below b, at `hi`
    let mut lo = min_pos / (9.0 * c * c) * 0.5;
    let mut hi = max / (2.0 * A * c * c * b) * 2.0;
    let mut s = match hint {
        Some(h) if h > lo && h < hi && h.is_finite() => h,
        _ => (sum * inv_n / (2.0 * A * c * c * b)).clamp(lo, hi),
    };
    for _ in 0..200 {
        let (f, d) = eval(s);
        if f == 0.0 {
            return Ok((s, false));
        }
        if f > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let mut next = if d < 0.0 { s - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = (lo * hi).sqrt();
        }
        if (next - s).abs() <= 4.0 * f64::EPSILON * s || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok((next, false));
        }
        s = next;
    }
    Ok((s, false))
}

/// M-scale of squared distances with `ρ_1`, reported together with the
/// τ-scale on top of it.
pub fn mscale(m: &[f64], cfg: &RhoConfig) -> Result<ScaleResult> {
    tau_scale(m, cfg)
}

/// τ-scale `s · mean ρ_2(m_i / s)`, with `s` the `ρ_1` M-scale.
pub fn tau_scale(m: &[f64], cfg: &RhoConfig) -> Result<ScaleResult> {
    tau_scale_hint(m, cfg, None)
}

/// [`tau_scale`] with a starting value for the M-scale root search.
pub fn tau_scale_hint(m: &[f64], cfg: &RhoConfig, hint: Option<f64>) -> Result<ScaleResult> {
    let (s, degenerate) = solve_mscale_hint(m, cfg.c1, cfg.b, hint)?;
    if degenerate {
        return Ok(ScaleResult { s: 0.0, tau: 0.0, degenerate });
    }
    let mean2 = m.iter().map(|&v| cfg.rho2(v / s)).sum::<f64>() / m.len() as f64;
    Ok(ScaleResult { s, tau: s * mean2, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(t: f64) -> f64 {
        A4 / 8.0 * t.powi(8) + A3 / 6.0 * t.powi(6) + A2 / 4.0 * t.powi(4) + A1 / 2.0 * t.powi(2) + A0
    }

    #[test]
    fn breakpoint_values() {
        assert!((poly(3.0) - 3.25).abs() < 1e-12);
        assert!((poly(2.0) - 2.0).abs() < 1e-12);
        for &c in &[0.3, 1.0, 1.64, 7.0] {
            assert_eq!(rho_opt(0.0, c), 0.0);
            assert!((rho_opt(3.0 * c, c) - 1.0).abs() < 1e-12);
            assert!((rho_opt(2.0 * c, c) - 4.0 / (2.0 * A)).abs() < 1e-12);
            assert!((rho_opt_sq(9.0 * c * c, c) - 1.0).abs() < 1e-12);
            assert!((rho_opt_sq(4.0 * c * c, c) - 0.615_384_615_384_615_4).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_pieces() {
        let c = 1.3;
        for &u in &[0.1, 1.0, 3.9 * c * c] {
            assert!((weight(u, c) - 1.0 / (2.0 * A * c * c)).abs() < 1e-15);
        }
        assert_eq!(weight(10.0 * c * c, c), 0.0);
        // continuity at the breakpoints
        let eps = 1e-9;
        for &w in &[4.0, 9.0] {
            let u = w * c * c;
            assert!((weight(u - eps, c) - weight(u + eps, c)).abs() < 1e-7);
        }
    }

    #[test]
    fn weight_matches_finite_differences() {
        let c = 1.0;
        let h = 1e-6;
        let mut u = 0.01;
        while u < 12.0 * c * c {
            let near_break = [4.0f64, 9.0].iter().any(|b| (u - b * c * c).abs() < 1e-3);
            if !near_break {
                let fd = (rho_opt_sq(u + h, c) - rho_opt_sq(u - h, c)) / (2.0 * h);
                assert!((fd - weight(u, c)).abs() < 1e-6, "u = {u}");
            }
            u += 0.0137;
        }
    }

    #[test]
    fn rho_properties_on_grid() {
        let c = 1.64;
        let mut prev = 0.0;
        let step = 9.0 * c * c / 10_000.0;
        let lipschitz = step / (2.0 * A * c * c) * 1.000_001;
        for i in 1..=12_000 {
            let u = i as f64 * step;
            let r = rho_opt_sq(u, c);
            assert!(r >= prev);
            assert!(r - prev <= lipschitz);
            if prev < 1.0 && u < 9.0 * c * c {
                assert!(r > prev, "strict increase fails at {u}");
            }
            assert!(r <= 1.0);
            prev = r;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn a6_holds() {
        let c = 1.64;
        for i in 1..=10_000 {
            let v = i as f64 / 10_000.0 * 9.0 * c * c;
            assert!(2.0 * rho_opt_sq(v, c) - weight(v, c) * v > 0.0, "A6 fails at {v}");
        }
    }

    #[test]
    fn consistency_limits_and_monotonicity() {
        assert!(consistency_b(200.0, 2) < 1e-4);
        let mut prev = f64::INFINITY;
        for i in 1..30 {
            let v = consistency_b(0.1 * i as f64, 3);
            assert!(v < prev);
            prev = v;
        }
        // chi-square(1): compare the substitution branch with a dense sum
        let c = 0.8;
        let dense = {
            let n = 400_000;
            let top = 9.0 * c * c;
            let h = top / n as f64;
            let mut s = 0.0;
            for i in 0..n {
                let u = (i as f64 + 0.5) * h;
                let pdf = (-(0.5 * u)).exp() / (2.0 * std::f64::consts::PI * u).sqrt();
                s += rho_opt_sq(u, c) * pdf * h;
            }
            s + ChiSquared::new(1.0).unwrap().sf(top)
        };
        assert!((consistency_b(c, 1) - dense).abs() < 1e-5);
    }

    #[test]
    fn mscale_constant_sample() {
        let cfg = RhoConfig::default();
        // q* solves rho_opt_sq(q) = 0.5 on the quadratic piece: q/(2a) = 0.5
        let q_star = A;
        let res = mscale(&[5.0; 17], &cfg).unwrap();
        assert!((res.s - 5.0 / q_star).abs() < 1e-12);
        assert!(!res.degenerate);
    }

    #[test]
    fn mscale_degenerate_and_empty() {
        let cfg = RhoConfig::default();
        let res = mscale(&[0.0; 10], &cfg).unwrap();
        assert_eq!(res.s, 0.0);
        assert!(res.degenerate);
        let mut m = vec![0.0; 5];
        m.extend([1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(mscale(&m, &cfg).unwrap().degenerate);
        assert!(matches!(mscale(&[], &cfg), Err(Error::EmptySample)));
    }

    #[test]
    fn tau_equals_b_times_s_when_rhos_match() {
        let cfg = RhoConfig::new(1.0, 1.0, 0.5).unwrap();
        let m: Vec<f64> = (1..40).map(|i| (i as f64 * 0.37).sin().abs() * 4.0 + 0.01 * i as f64).collect();
        let r = tau_scale(&m, &cfg).unwrap();
        assert!((r.tau - cfg.b * r.s).abs() <= 1e-12 * r.s);
    }

    #[test]
    fn calibrated_keeps_ratio_and_hits_b() {
        let cfg = RhoConfig::default().calibrated().unwrap();
        assert!((cfg.c2 / cfg.c1 - 1.64).abs() < 1e-12);
        assert!((consistency_b(cfg.c1, 2) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(RhoConfig::new(1.0, 1.64, 1.0).is_err());
        assert!(RhoConfig::new(2.0, 1.0, 0.5).is_err());
        assert!(RhoConfig::new(-1.0, 1.0, 0.5).is_err());
    }
}
