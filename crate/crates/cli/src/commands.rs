use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rvc_core::inference::{self, BreakdownConstants, BreakdownSearch, InferenceResult, OutlierReport};
use rvc_core::sim::{self, Contamination, SimScenario, StudyReport};
use rvc_core::{Dataset, Estimator, FitConfig, FitResult, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io;
use crate::{DiagnoseArgs, FitArgs, Format, InputArgs, ModelKind, Outcome, OutputArgs, SimulateArgs};

/// Everything `rvc fit` writes in JSON mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub config: FitConfig,
    pub fit: FitResult,
    /// Sandwich covariance and Wald tests; composite estimators only.
    pub inference: Option<InferenceResult>,
    pub inference_error: Option<String>,
    pub outliers: OutlierReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub fit: FitResult,
    pub breakdown: BreakdownConstants,
    pub outliers: OutlierReport,
}

fn emit(out: &OutputArgs, text: &str) -> Result<(), CliError> {
    match &out.output {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(&p.display().to_string(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn load(input: &InputArgs) -> Result<(Dataset, ModelSpec), CliError> {
    let v = input.v.as_deref().map(io::read_vspec).transpose()?;
    io::ingest_dataset(&input.input, v.as_ref())
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn do_fit(est: Estimator, ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<FitResult, CliError> {
    let fit = sim::fit_with(est, ds, spec, cfg)?;
    if !fit.converged {
        log::warn!("{} fit did not converge after {} iterations", est.label(), fit.iterations);
    }
    Ok(fit)
}

fn param_names(k: usize, j: usize) -> Vec<String> {
    (0..k).map(|i| format!("beta{i}")).chain((1..=j).map(|i| format!("gamma{i}"))).collect()
}

fn coords_label(c: &[usize]) -> String {
    c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-")
}

pub fn cmd_fit(a: &FitArgs) -> Result<Outcome, CliError> {
    check_alpha(a.alpha)?;
    let cfg = a.tuning.fit_config()?;
    let (ds, spec) = load(&a.input)?;
    let fit = do_fit(a.estimator, &ds, &spec, &cfg)?;
    let (inference, inference_error) = match a.estimator {
        Estimator::CompositeTau | Estimator::CompositeS => match inference::sandwich_cov(&ds, &spec, &fit, &cfg) {
            Ok(inf) => (Some(inf), None),
            Err(e) => {
                log::warn!("covariance not available: {e}");
                (None, Some(e.to_string()))
            }
        },
        _ => (None, None),
    };
    let outliers = inference::detect_outliers(&ds, &spec, &fit, a.level, a.alpha)?;
    let report = FitReport { config: cfg, fit, inference, inference_error, outliers };
    let text = match a.output.format {
        Format::Json => to_json(&report)?,
        Format::Csv => fit_csv(&report, ds.k(), spec.j()),
        Format::Text => fit_text(&report, ds.k(), spec.j()),
    };
    emit(&a.output, &text)?;
    Ok(Outcome { converged: report.fit.converged })
}

fn fit_csv(r: &FitReport, k: usize, j: usize) -> String {
    let mut s = String::from("record,label,value,std_error,z,p_value\n");
    let est: Vec<f64> = r.fit.beta.iter().chain(r.fit.gamma.iter()).copied().collect();
    for (i, name) in param_names(k, j).iter().enumerate() {
        let record = if i < k { "beta" } else { "gamma" };
        match &r.inference {
            Some(inf) => writeln!(
                s,
                "{record},{name},{},{},{},{}",
                est[i], inf.std_errors[i], inf.wald_z[i], inf.p_values[i]
            ),
            None => writeln!(s, "{record},{name},{},,,", est[i]),
        }
        .unwrap();
    }
    writeln!(s, "eta,eta,{},,,", r.fit.eta).unwrap();
    writeln!(s, "loss,loss,{},,,", r.fit.loss).unwrap();
    writeln!(s, "converged,converged,{},,,", r.fit.converged).unwrap();
    for f in &r.outliers.flags {
        writeln!(s, "outlier,unit {} coords {},{},,,", f.unit, coords_label(&f.coords), f.distance).unwrap();
    }
    s
}

fn fit_text(r: &FitReport, k: usize, j: usize) -> String {
    let mut s = String::new();
    let f = &r.fit;
    writeln!(s, "estimator   {}", f.estimator.label()).unwrap();
    writeln!(s, "converged   {} ({} iterations)", f.converged, f.iterations).unwrap();
    writeln!(s, "loss        {:.6}", f.loss).unwrap();
    writeln!(s, "eta         {:.6}", f.eta).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "{:<10} {:>12} {:>10}  [p-value]", "parameter", "estimate", "std.err").unwrap();
    let est: Vec<f64> = f.beta.iter().chain(f.gamma.iter()).copied().collect();
    for (i, name) in param_names(k, j).iter().enumerate() {
        match &r.inference {
            Some(inf) => {
                writeln!(s, "{name:<10} {:>12.4} {:>10.4}  [{:.3}]", est[i], inf.std_errors[i], inf.p_values[i])
            }
            None => writeln!(s, "{name:<10} {:>12.4}", est[i]),
        }
        .unwrap();
    }
    if let Some(e) = &r.inference_error {
        writeln!(s, "covariance unavailable: {e}").unwrap();
    }
    writeln!(s).unwrap();
    outliers_text(&mut s, &r.outliers);
    s
}

fn outliers_text(s: &mut String, o: &OutlierReport) {
    writeln!(
        s,
        "outliers ({:?}, chi2_{} quantile {} = {:.4}): {} of {} flagged",
        o.level,
        o.dof,
        o.alpha,
        o.threshold,
        o.flags.len(),
        o.tested
    )
    .unwrap();
    for f in &o.flags {
        writeln!(s, "  unit {:>4}  coords {:<8} distance {:.4}", f.unit, coords_label(&f.coords), f.distance).unwrap();
    }
}

/// `start:end:step` or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| CliError::usage(format!("bad number '{t}' in grid '{s}'")));
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.len() {
        1 => s.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        3 => {
            let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if step.is_nan() || step <= 0.0 || hi < lo {
                return Err(CliError::usage(format!("grid '{s}' needs start ≤ end and a positive step")));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| lo + i as f64 * step).collect()
        }
        _ => return Err(CliError::usage(format!("grid '{s}' must be start:end:step or a comma list"))),
    };
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(CliError::usage(format!("grid '{s}' has non-finite values")));
    }
    Ok(grid)
}

fn parse_sigma_sq(s: &str) -> Result<[f64; 4], CliError> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::usage(format!("bad --sigma-sq '{s}'")))?;
    v.try_into().map_err(|_| CliError::usage(format!("--sigma-sq needs four values, got '{s}'")))
}

fn parse_estimators(s: &str) -> Result<Vec<Estimator>, CliError> {
    let mut out = Vec::new();
    for t in s.split(',') {
        let e: Estimator = t.trim().parse()?;
        if !out.contains(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let cfg = a.tuning.fit_config()?;
    let grid = parse_grid(&a.omega0_grid)?;
    let estimators = parse_estimators(&a.estimators)?;
    let (contamination, eps) = match a.model {
        ModelKind::None => (Contamination::None, 0.0),
        ModelKind::Ccm => (Contamination::Ccm, a.eps),
        ModelKind::Icm => (Contamination::Icm, a.eps),
    };
    let scn = SimScenario {
        n: a.n,
        sigma_sq: parse_sigma_sq(&a.sigma_sq)?,
        contamination,
        eps,
        leverage: a.leverage,
        reps: a.reps,
        seed: a.tuning.seed,
        ..Default::default()
    };
    let mut report = sim::run_study(&scn, &estimators, &grid, &cfg, 0)?;
    if !a.no_refine && grid.len() > 1 {
        let spacing = grid.windows(2).map(|w| (w[1] - w[0]).abs()).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
        if spacing.is_finite() {
            sim::refine_argmax(&mut report, &cfg, spacing / 2.0, 0)?;
        }
    }
    let text = match a.output.format {
        Format::Json => to_json(&report)?,
        Format::Csv => study_csv(&report),
        Format::Text => study_text(&report),
    };
    emit(&a.output, &text)?;
    Ok(Outcome { converged: true })
}

fn study_csv(r: &StudyReport) -> String {
    let mut s = String::from("row,estimator,omega0,msmd,mkld,failures,non_pd\n");
    for sw in &r.sweeps {
        let l = sw.estimator.label();
        for p in &sw.points {
            writeln!(s, "point,{l},{},{},{},{},{}", p.omega0, p.msmd, p.mkld, p.failures, p.non_pd).unwrap();
        }
        writeln!(s, "max,{l},,{},{},,", sw.max_msmd, sw.max_mkld).unwrap();
    }
    for sw in &r.sweeps {
        if let Some((m, k)) = r.efficiency(sw.estimator) {
            writeln!(s, "efficiency,{},,{m},{k},,", sw.estimator.label()).unwrap();
        }
    }
    s
}

fn study_text(r: &StudyReport) -> String {
    let mut s = String::new();
    let sc = &r.scenario;
    writeln!(
        s,
        "contamination {:?}  eps {}  leverage {}  n {}  reps {}  seed {}",
        sc.contamination, sc.eps, sc.leverage, sc.n, sc.reps, sc.seed
    )
    .unwrap();
    writeln!(s, "{:<14} {:>8} {:>12} {:>12} {:>8} {:>7}", "estimator", "omega0", "MSMD", "MKLD", "failed", "non-pd").unwrap();
    for sw in &r.sweeps {
        let l = sw.estimator.label();
        for p in &sw.points {
            writeln!(
                s,
                "{l:<14} {:>8.3} {:>12.4} {:>12.4} {:>8} {:>7}",
                p.omega0, p.msmd, p.mkld, p.failures, p.non_pd
            )
            .unwrap();
        }
        writeln!(s, "{l:<14} {:>8} {:>12.4} {:>12.4}", "max", sw.max_msmd, sw.max_mkld).unwrap();
    }
    let effs: Vec<_> = r.sweeps.iter().filter_map(|sw| r.efficiency(sw.estimator).map(|e| (sw.estimator, e))).collect();
    if !effs.is_empty() {
        writeln!(s).unwrap();
        writeln!(s, "{:<14} {:>12} {:>12}", "efficiency", "MSMD", "MKLD").unwrap();
        for (e, (m, k)) in effs {
            writeln!(s, "{:<14} {:>12.4} {:>12.4}", e.label(), m, k).unwrap();
        }
    }
    s
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> Result<Outcome, CliError> {
    check_alpha(a.alpha)?;
    let cfg = a.tuning.fit_config()?;
    let (ds, spec) = load(&a.input)?;
    let breakdown = inference::breakdown_constants(&ds, cfg.rho.b, &BreakdownSearch::default())?;
    let fit = do_fit(a.estimator, &ds, &spec, &cfg)?;
    let outliers = inference::detect_outliers(&ds, &spec, &fit, a.level, a.alpha)?;
    let report = DiagnoseReport { fit, breakdown, outliers };
    let text = match a.output.format {
        Format::Json => to_json(&report)?,
        Format::Csv => diagnose_csv(&report),
        Format::Text => diagnose_text(&report),
    };
    emit(&a.output, &text)?;
    Ok(Outcome { converged: report.fit.converged })
}

fn diagnose_csv(r: &DiagnoseReport) -> String {
    let b = &r.breakdown;
    let mut s = String::from("record,label,value\n");
    writeln!(s, "breakdown,h,{}", b.h).unwrap();
    writeln!(s, "breakdown,h_star,{}", b.h_star).unwrap();
    writeln!(s, "breakdown,f,{}", b.f).unwrap();
    writeln!(s, "breakdown,bound_ccm,{}", b.bound_ccm).unwrap();
    writeln!(s, "breakdown,bound_icm,{}", b.bound_icm).unwrap();
    writeln!(s, "breakdown,approximate,{}", b.approximate).unwrap();
    writeln!(s, "threshold,{:?},{}", r.outliers.level, r.outliers.threshold).unwrap();
    for f in &r.outliers.flags {
        writeln!(s, "outlier,unit {} coords {},{}", f.unit, coords_label(&f.coords), f.distance).unwrap();
    }
    s
}

fn diagnose_text(r: &DiagnoseReport) -> String {
    let b = &r.breakdown;
    let mut s = String::new();
    writeln!(s, "h {}  h* {}  f {}{}", b.h, b.h_star, b.f, if b.approximate { "  (sampled search)" } else { "" })
        .unwrap();
    writeln!(s, "breakdown bound, whole units {:.4}", b.bound_ccm).unwrap();
    writeln!(s, "breakdown bound, single cells {:.4}", b.bound_icm).unwrap();
    writeln!(s, "fit {} converged {}", r.fit.estimator.label(), r.fit.converged).unwrap();
    outliers_text(&mut s, &r.outliers);
    s
}

/// Writes a dataset in the JSON layout with explicit matrices.
pub fn save_dataset(path: &Path, ds: &Dataset, spec: &ModelSpec) -> Result<(), CliError> {
    io::write_json_dataset(path, ds, io::explicit_v(spec))
}
