//! Dataset and structure-matrix ingestion, plus writers for round trips.
//!
//! JSON layout:
//! `{"p": 3, "k": 2, "units": [{"y": [..], "x": [[..], ..]}, ..], "V": ..}`
//! where `V` is either a shorthand string (`crossed:F,G,H`,
//! `randcoef:a1,...,ap`) or an array of explicit `p × p` matrices given as
//! arrays of rows.
//!
//! CSV layout: long format with header `unit,coord,y,x1,...,xk`, one row per
//! `(unit, coordinate)`; coordinates are 0-based. `V` comes separately.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rvc_core::{model, Dataset, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VSpec {
    Shorthand(String),
    Explicit(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub p: usize,
    pub k: usize,
    pub units: Vec<UnitRecord>,
    #[serde(rename = "V")]
    pub v: VSpec,
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::input(format!("bad number '{}' in {what}", t.trim())))
        })
        .collect()
}

/// Expands a `crossed:F,G,H` or `randcoef:a1,...,ap` shorthand.
pub fn parse_shorthand(s: &str) -> Result<ModelSpec, CliError> {
    let (kind, args) = s
        .split_once(':')
        .ok_or_else(|| CliError::input(format!("structure shorthand '{s}' needs the form kind:args")))?;
    match kind.trim() {
        "crossed" => {
            let v = parse_list(args, "crossed sizes")?;
            if v.len() != 3 || v.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
                return Err(CliError::input(format!("crossed needs three positive integers, got '{args}'")));
            }
            Ok(model::build_crossed_design(v[0] as usize, v[1] as usize, v[2] as usize)?)
        }
        "randcoef" => Ok(model::build_random_coeff_design(&parse_list(args, "randcoef grid")?)?),
        other => Err(CliError::input(format!("unknown structure shorthand '{other}'"))),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != nrows {
        return Err(CliError::input(format!("{what}: expected {nrows} rows, found {}", rows.len())));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(CliError::input(format!("{what}: row {r} has {} entries, expected {ncols}", row.len())));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn spec_from(v: &VSpec, p: usize) -> Result<ModelSpec, CliError> {
    let spec = match v {
        VSpec::Shorthand(s) => parse_shorthand(s)?,
        VSpec::Explicit(ms) => {
            let mats = ms
                .iter()
                .enumerate()
                .map(|(j, m)| rows_to_matrix(m, p, p, &format!("V[{j}]")))
                .collect::<Result<Vec<_>, _>>()?;
            ModelSpec::new(mats)?
        }
    };
    if spec.p() != p {
        return Err(CliError::input(format!("structure matrices are {0}×{0} but p = {p}", spec.p())));
    }
    Ok(spec)
}

/// Reads a `V` argument: a shorthand, or a path to a JSON file holding a
/// shorthand string or an array of matrices.
pub fn read_vspec(arg: &str) -> Result<VSpec, CliError> {
    if arg.starts_with("crossed:") || arg.starts_with("randcoef:") {
        return Ok(VSpec::Shorthand(arg.to_string()));
    }
    let text = fs::read_to_string(arg).map_err(|e| CliError::io(arg, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(arg, e.line(), e.column(), e.to_string()))
}

pub fn dataset_from_file(file: &DatasetFile) -> Result<(Dataset, ModelSpec), CliError> {
    let (p, k) = (file.p, file.k);
    if file.units.is_empty() {
        return Err(CliError::input("dataset has no units"));
    }
    let mut y = DMatrix::zeros(file.units.len(), p);
    let mut xs = Vec::with_capacity(file.units.len());
    for (i, u) in file.units.iter().enumerate() {
        if u.y.len() != p {
            return Err(CliError::input(format!("unit {i}: y has {} entries, expected p = {p}", u.y.len())));
        }
        for (j, v) in u.y.iter().enumerate() {
            y[(i, j)] = *v;
        }
        xs.push(rows_to_matrix(&u.x, p, k, &format!("unit {i}: x"))?);
    }
    let spec = spec_from(&file.v, p)?;
    Ok((Dataset::new(y, xs)?, spec))
}

pub fn read_json_dataset(path: &Path, v_override: Option<&VSpec>) -> Result<(Dataset, ModelSpec), CliError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| CliError::io(&name, e))?;
    let mut file: DatasetFile =
        serde_json::from_str(&text).map_err(|e| CliError::parse(&name, e.line(), e.column(), e.to_string()))?;
    if let Some(v) = v_override {
        file.v = v.clone();
    }
    dataset_from_file(&file)
}

pub fn read_csv_dataset(path: &Path, v: &VSpec) -> Result<(Dataset, ModelSpec), CliError> {
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::csv(&name, e))?;
    let headers = rdr.headers().map_err(|e| CliError::csv(&name, e))?.clone();
    let col = |h: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|c| c.trim() == h)
            .ok_or_else(|| CliError::input(format!("{name}: missing column '{h}'")))
    };
    let (cu, cc, cy) = (col("unit")?, col("coord")?, col("y")?);
    let mut xcols = Vec::new();
    while let Some(pos) = headers.iter().position(|c| c.trim() == format!("x{}", xcols.len() + 1)) {
        xcols.push(pos);
    }
    if xcols.is_empty() {
        return Err(CliError::input(format!("{name}: missing column 'x1'")));
    }
    let k = xcols.len();

    // unit label -> coord -> (y, x row)
    let mut units: BTreeMap<String, BTreeMap<usize, (f64, Vec<f64>)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::csv(&name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |c: usize, label: &str| -> Result<&str, CliError> {
            rec.get(c).ok_or_else(|| CliError::parse(&name, line as usize, c + 1, format!("missing field '{label}'")))
        };
        let num = |c: usize, label: &str| -> Result<f64, CliError> {
            let raw = field(c, label)?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| CliError::parse(&name, line as usize, c + 1, format!("'{raw}' is not a number in column '{label}'")))
        };
        let unit = field(cu, "unit")?.trim().to_string();
        let coord_raw = field(cc, "coord")?;
        let coord: usize = coord_raw.trim().parse().map_err(|_| {
            CliError::parse(&name, line as usize, cc + 1, format!("'{coord_raw}' is not a coordinate index"))
        })?;
        let yv = num(cy, "y")?;
        let xrow = xcols
            .iter()
            .enumerate()
            .map(|(j, &c)| num(c, &format!("x{}", j + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if !units.contains_key(&unit) {
            order.push(unit.clone());
        }
        if units.entry(unit.clone()).or_default().insert(coord, (yv, xrow)).is_some() {
            return Err(CliError::parse(&name, line as usize, cc + 1, format!("unit '{unit}' repeats coordinate {coord}")));
        }
    }
    if order.is_empty() {
        return Err(CliError::input(format!("{name}: no data rows")));
    }
    let p = units.values().flat_map(|m| m.keys()).max().map_or(0, |m| m + 1);
    let mut file = DatasetFile { p, k, units: Vec::with_capacity(order.len()), v: v.clone() };
    for label in &order {
        let coords = &units[label];
        if coords.len() != p || coords.keys().last() != Some(&(p - 1)) {
            return Err(CliError::input(format!("unit '{label}' has {} of the {p} coordinates", coords.len())));
        }
        file.units.push(UnitRecord {
            y: coords.values().map(|c| c.0).collect(),
            x: coords.values().map(|c| c.1.clone()).collect(),
        });
    }
    dataset_from_file(&file)
}

/// Reads a dataset, choosing the format from the extension (`.csv` or JSON).
pub fn ingest_dataset(path: &Path, v: Option<&VSpec>) -> Result<(Dataset, ModelSpec), CliError> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let v = v.ok_or_else(|| CliError::usage("CSV input needs --v with a structure shorthand or matrix file"))?;
        read_csv_dataset(path, v)
    } else {
        read_json_dataset(path, v)
    }
}

pub fn to_file(ds: &Dataset, v: VSpec) -> DatasetFile {
    let units = (0..ds.n())
        .map(|i| UnitRecord {
            y: ds.y().row(i).iter().copied().collect(),
            x: (0..ds.p()).map(|j| ds.x()[i].row(j).iter().copied().collect()).collect(),
        })
        .collect();
    DatasetFile { p: ds.p(), k: ds.k(), units, v }
}

pub fn explicit_v(spec: &ModelSpec) -> VSpec {
    VSpec::Explicit(
        spec.v()
            .iter()
            .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
            .collect(),
    )
}

pub fn write_json_dataset(path: &Path, ds: &Dataset, v: VSpec) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&to_file(ds, v)).map_err(|e| CliError::input(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::io(&path.display().to_string(), e))
}

pub fn write_csv_dataset(path: &Path, ds: &Dataset) -> Result<(), CliError> {
    let name = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(&name, e))?;
    let mut header = vec!["unit".to_string(), "coord".to_string(), "y".to_string()];
    header.extend((1..=ds.k()).map(|c| format!("x{c}")));
    w.write_record(&header).map_err(|e| CliError::csv(&name, e))?;
    for i in 0..ds.n() {
        for j in 0..ds.p() {
            let mut rec = vec![i.to_string(), j.to_string(), format!("{:?}", ds.y()[(i, j)])];
            rec.extend(ds.x()[i].row(j).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(|e| CliError::csv(&name, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&name, e))
}
