use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use rvc_cli::commands::{DiagnoseReport, FitReport};
use rvc_cli::io::{self, VSpec};
use rvc_core::inference::{breakdown_constants, BreakdownSearch};
use rvc_core::sim::{self, SimScenario};
use rvc_core::{Dataset, Estimator, FitConfig, ModelSpec, RhoConfig};
use tempfile::TempDir;

fn rvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvc")).args(args).output().expect("spawn rvc")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulated(n: usize, seed: u64) -> (Dataset, ModelSpec) {
    let scn = SimScenario { n, sigma_sq: [0.25, 0.0625, 0.0625, 0.125], ..Default::default() };
    let (ds, spec, _) = sim::gen_clean(&scn, &mut sim::rep_rng(seed, 0, 0)).unwrap();
    (ds, spec)
}

fn write_dataset(dir: &TempDir, name: &str, ds: &Dataset, v: VSpec) -> PathBuf {
    let path = dir.path().join(name);
    io::write_json_dataset(&path, ds, v).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn json_and_csv_round_trips_are_bit_identical() {
    let dir = TempDir::new().unwrap();
    let (ds, spec) = simulated(15, 1);
    let json = write_dataset(&dir, "d.json", &ds, io::explicit_v(&spec));
    let (back, spec_back) = io::ingest_dataset(&json, None).unwrap();
    assert_eq!(back.y(), ds.y());
    assert_eq!(back.x(), ds.x());
    assert_eq!(spec_back.v(), spec.v());

    let csv = dir.path().join("d.csv");
    io::write_csv_dataset(&csv, &ds).unwrap();
    let (back, _) = io::ingest_dataset(&csv, Some(&VSpec::Shorthand("crossed:2,2,3".into()))).unwrap();
    assert_eq!(back.y(), ds.y());
    assert_eq!(back.x(), ds.x());
}

#[test]
fn crossed_shorthand_matches_index_construction() {
    let spec = io::parse_shorthand("crossed:2,2,3").unwrap();
    let (g, h) = (2, 3);
    let level = |c: usize| (c / (g * h), (c / h) % g, c % h);
    let oracle: Vec<DMatrix<f64>> = (0..3)
        .map(|factor| {
            DMatrix::from_fn(12, 12, |r, c| {
                let (a, b) = (level(r), level(c));
                let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2];
                if same[factor] {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    assert_eq!(spec.v(), oracle.as_slice());

    // and the two spellings of V give the same ingested model
    let dir = TempDir::new().unwrap();
    let (ds, _) = simulated(5, 2);
    let a = write_dataset(&dir, "a.json", &ds, VSpec::Shorthand("crossed:2,2,3".into()));
    let explicit = VSpec::Explicit(
        oracle.iter().map(|m| (0..12).map(|r| m.row(r).iter().copied().collect()).collect()).collect(),
    );
    let b = write_dataset(&dir, "b.json", &ds, explicit);
    assert_eq!(io::ingest_dataset(&a, None).unwrap().1, io::ingest_dataset(&b, None).unwrap().1);
}

#[test]
fn ingestion_errors_name_the_problem() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "unit,coord,x1\n0,0,1.0\n0,1,2.0\n").unwrap();
    let o = rvc(&["fit", "--input", s(&csv), "--v", "crossed:1,1,2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing column 'y'"), "{}", stderr(&o));

    std::fs::write(&csv, "unit,coord,y,x1\n0,0,1.0,1\n0,1,oops,1\n").unwrap();
    let o = rvc(&["fit", "--input", s(&csv), "--v", "crossed:1,1,2"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[parse]:") && err.contains(":3:3:") && err.contains("oops"), "{err}");

    let json = dir.path().join("bad.json");
    std::fs::write(
        &json,
        r#"{"p":2,"k":1,"units":[{"y":[1,2],"x":[[1],[1]]},{"y":[1],"x":[[1],[1]]}],"V":"crossed:1,1,2"}"#,
    )
    .unwrap();
    let o = rvc(&["fit", "--input", s(&json)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unit 1"), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);

    let o = rvc(&["fit", "--input", s(&dir.path().join("absent.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[io]:"));

    let o = rvc(&["fit", "--input", s(&json), "--b", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[input]:"));
}

#[test]
fn fit_converges_and_json_round_trips() {
    let dir = TempDir::new().unwrap();
    let (ds, spec) = simulated(80, 3);
    let input = write_dataset(&dir, "d.json", &ds, VSpec::Shorthand("crossed:2,2,3".into()));
    let cfg = FitConfig { rho: RhoConfig::default().calibrated().unwrap(), seed: 1, ..Default::default() };
    for (est, label) in [(Estimator::CompositeTau, "composite-tau"), (Estimator::CompositeS, "composite-s")] {
        let out = dir.path().join(format!("{label}.json"));
        let o = rvc(&["fit", "--input", s(&input), "--estimator", label, "--calibrate", "--output", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let report: FitReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert!(report.fit.converged);
        assert_eq!(report.fit.estimator, est);
        let inf = report.inference.expect("composite fits report a covariance");
        assert_eq!(inf.std_errors.len(), ds.k() + spec.j());
        let lib = sim::fit_with(est, &ds, &spec, &cfg).unwrap();
        assert!((report.fit.loss - lib.loss).abs() <= 1e-8 * lib.loss.abs().max(1.0));
    }

    let o = rvc(&["fit", "--input", s(&input), "--format", "text", "--calibrate"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("beta0") && l.trim_end().ends_with(']')), "{text}");

    let o = rvc(&["fit", "--input", s(&input), "--format", "csv", "--estimator", "gaussian-ml"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().all(|l| l.split(',').count() == 6));
}

#[test]
fn non_convergence_exits_two_with_results_written() {
    let dir = TempDir::new().unwrap();
    let (ds, _) = simulated(40, 4);
    let input = write_dataset(&dir, "d.json", &ds, VSpec::Shorthand("crossed:2,2,3".into()));
    let out = dir.path().join("o.json");
    let o = rvc(&["fit", "--input", s(&input), "--max-iter", "1", "--tol", "1e-14", "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let report: FitReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!report.fit.converged);
}

const SIM_BASE: &[&str] =
    &["simulate", "--reps", "2", "--n", "30", "--estimators", "composite-tau,gaussian-ml", "--format", "csv"];

#[test]
fn simulate_smoke_and_reproducible() {
    let mut args = SIM_BASE.to_vec();
    args.extend(["--omega0-grid", "0,4", "--seed", "9", "--no-refine"]);
    let a = rvc(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "row,estimator,omega0,msmd,mkld,failures,non_pd");
    assert!(rows.iter().all(|r| r.split(',').count() == 7));
    // 2 grid points + a max row per estimator, one efficiency row per estimator
    assert_eq!(rows.len(), 1 + 2 * 3 + 2);
    let mut threaded = args.clone();
    threaded.extend(["--threads", "2"]);
    let b = rvc(&threaded);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn icm_study_lists_each_shift_and_a_max_row() {
    let mut args = SIM_BASE.to_vec();
    args.extend(["--model", "icm", "--eps", "0.10", "--omega0-grid", "0:4:2", "--seed", "5"]);
    let o = rvc(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    for est in ["composite-tau", "gaussian-ml"] {
        let points: Vec<f64> = text
            .lines()
            .filter(|l| l.starts_with(&format!("point,{est},")))
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        for w in [0.0, 2.0, 4.0] {
            assert!(points.contains(&w), "{est} misses {w}: {points:?}");
        }
        // refinement adds one or two points next to the worst shift
        assert!(points.len() > 3 && points.len() <= 5);
        assert!(points.windows(2).all(|p| p[0] < p[1]));
        let max = text.lines().find(|l| l.starts_with(&format!("max,{est},"))).expect("max row");
        let max_msmd: f64 = max.split(',').nth(3).unwrap().parse().unwrap();
        let worst = text
            .lines()
            .filter(|l| l.starts_with(&format!("point,{est},")))
            .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max_msmd, worst);
    }
}

#[test]
fn diagnose_matches_library_and_alpha_moves_threshold() {
    let dir = TempDir::new().unwrap();
    let (ds, _) = simulated(12, 6);
    let input = write_dataset(&dir, "d.json", &ds, VSpec::Shorthand("crossed:2,2,3".into()));
    let run = |alpha: &str| -> DiagnoseReport {
        let out = dir.path().join(format!("diag{alpha}.json"));
        let o = rvc(&["diagnose", "--input", s(&input), "--alpha", alpha, "--level", "couple", "--output", s(&out)]);
        assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap()
    };
    let r = run("0.99");
    let lib = breakdown_constants(&ds, 0.5, &BreakdownSearch::default()).unwrap();
    assert_eq!(r.breakdown, lib);
    assert!(!r.breakdown.approximate);

    // the χ²₂ quantile has the closed form −2 ln(1 − α)
    for alpha in ["0.9", "0.99", "0.999"] {
        let r = run(alpha);
        let a: f64 = alpha.parse().unwrap();
        assert!((r.outliers.threshold - (-2.0 * (1.0 - a).ln())).abs() < 1e-9);
        assert_eq!(r.outliers.dof, 2);
    }
    let loose = run("0.5");
    let strict = run("0.999");
    assert!(loose.outliers.flags.len() >= strict.outliers.flags.len());
}

#[test]
fn row_level_on_exact_fit_flags_nothing() {
    let dir = TempDir::new().unwrap();
    let (ds, spec) = simulated(30, 7);
    // responses exactly on the regression surface
    let beta = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.5]);
    let y = DMatrix::from_fn(ds.n(), ds.p(), |i, j| (ds.x()[i].row(j) * &beta)[0]);
    let exact = ds.with_responses(y).unwrap();
    let input = write_dataset(&dir, "d.json", &exact, io::explicit_v(&spec));
    let out = dir.path().join("diag.json");
    let o = rvc(&["diagnose", "--input", s(&input), "--level", "row", "--output", s(&out)]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    let r: DiagnoseReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r.outliers.tested, 30);
    assert!(r.outliers.flags.is_empty());
}
