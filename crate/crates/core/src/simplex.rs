//! Derivative-free Nelder–Mead search with support for infeasible points,
//! which simply evaluate to `+∞`.

use serde::{Deserialize, Serialize};

/// Simplex-search settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexSettings {
    /// Edge length of the initial simplex, relative to `1 + |x_i|`.
    pub initial_step: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub max_evals: usize,
    /// Stop once every vertex is within `xtol` (relative) of the best one...
    pub xtol: f64,
    /// ...and the value spread is below `ftol` (relative).
    pub ftol: f64,
}

impl Default for SimplexSettings {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_evals: 400,
            xtol: 1e-8,
            ftol: 1e-10,
        }
    }
}

impl SimplexSettings {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.initial_step > 0.0
            && self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.max_evals > 0
            && self.xtol >= 0.0
            && self.ftol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidInput(format!("invalid simplex settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimises `f` starting from `x0`. `steps`, when given, overrides the
/// per-coordinate edge lengths of the initial simplex.
pub fn minimize<F>(mut f: F, x0: &[f64], steps: Option<&[f64]>, settings: &SimplexSettings) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(x0, &mut evals);
    if d == 0 {
        return SimplexOutcome { x: vec![], value: f0, evals, converged: true };
    }

    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut vals = vec![f0];
    for i in 0..d {
        let mut x = x0.to_vec();
        let h = match steps {
            Some(s) if s[i] != 0.0 => s[i],
            _ => settings.initial_step * (1.0 + x0[i].abs()),
        };
        x[i] += h;
        let mut v = eval(&x, &mut evals);
        if !v.is_finite() {
            // try the opposite direction before giving up on the edge
            x[i] = x0[i] - h;
            v = eval(&x, &mut evals);
        }
        pts.push(x);
        vals.push(v);
    }

    let mut converged = false;
    while evals < settings.max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let best = vals[0];
        let worst = vals[d];
        let xspread = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())))
            .fold(0.0, f64::max);
        let fspread = if best.is_finite() && worst.is_finite() {
            (worst - best).abs() / (1.0 + best.abs())
        } else {
            f64::INFINITY
        };
        if xspread <= settings.xtol || (fspread <= settings.ftol && xspread <= settings.xtol.sqrt()) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..d).map(|c| pts[..d].iter().map(|p| p[c]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|c| centroid[c] + t * (pts[d][c] - centroid[c])).collect() };

        let xr = along(-settings.reflection);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(-settings.reflection * settings.expansion);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let x = along(-settings.reflection * settings.contraction);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = along(settings.contraction);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < fr.min(vals[d]) {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        for i in 1..=d {
            let x: Vec<f64> = (0..d).map(|c| pts[0][c] + settings.shrink * (pts[i][c] - pts[0][c])).collect();
            vals[i] = eval(&x, &mut evals);
            pts[i] = x;
        }
    }

    let (ib, _) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("simplex has vertices");
    SimplexOutcome { x: pts[ib].clone(), value: vals[ib], evals, converged }
}
