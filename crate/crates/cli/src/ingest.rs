//! CSV ingestion for `fit`.

use std::path::Path;

use nalgebra::DMatrix;
use odtr::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const TREATMENT_COLUMN: &str = "A";
pub const OUTCOME_COLUMN: &str = "Y";
pub const MISSING_SUFFIX: &str = "_missing";

/// A covariate whose missing cells were replaced by the observed median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedColumn {
    pub name: String,
    pub median: f64,
    pub missing: usize,
}

/// The affine map taking the raw outcome onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScaling {
    pub negated: bool,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub data: Dataset,
    pub imputed: Vec<ImputedColumn>,
    pub scaling: OutcomeScaling,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

pub fn read_csv(path: &Path, negate_y: bool) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(CliError::io(path))?;
    parse_csv(file, negate_y)
}

/// Reads a header row and numeric cells. `A` must be 0 or 1 and `Y` numeric
/// on every row; the remaining columns are covariates, where empty or `NA`
/// cells are imputed by the column median and flagged by an added
/// `<name>_missing` indicator.
pub fn parse_csv<R: std::io::Read>(reader: R, negate_y: bool) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("header has no `{name}` column (found: {})", headers.join(", "))))
    };
    let a_col = find(TREATMENT_COLUMN)?;
    let y_col = find(OUTCOME_COLUMN)?;
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != a_col && c != y_col).collect();
    if cov_cols.is_empty() {
        return Err(CliError::Input("no covariate columns besides A and Y".into()));
    }

    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); cov_cols.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let get = |c: usize| record.get(c).unwrap_or("").trim();
        a.push(match get(a_col) {
            "0" | "0.0" => 0u8,
            "1" | "1.0" => 1u8,
            other => return Err(CliError::Input(format!("line {line}: A must be 0 or 1, got `{other}`"))),
        });
        let yv: f64 = get(y_col)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| CliError::Input(format!("line {line}: Y must be numeric, got `{}`", get(y_col))))?;
        y.push(if negate_y { -yv } else { yv });
        for (k, &c) in cov_cols.iter().enumerate() {
            let cell = get(c);
            let v = if is_missing(cell) {
                None
            } else {
                Some(cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::Input(format!("line {line}: column `{}` is not numeric: `{cell}`", headers[c]))
                })?)
            };
            cells[k].push(v);
        }
    }
    let n = a.len();
    if n == 0 {
        return Err(CliError::Input("no data rows".into()));
    }
    let treated = a.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == n {
        return Err(CliError::Input(format!("every row has A = {}; both arms are needed", a[0])));
    }

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut indicators = Vec::new();
    let mut imputed = Vec::new();
    for (k, &c) in cov_cols.iter().enumerate() {
        let name = headers[c].clone();
        let mut observed: Vec<f64> = cells[k].iter().flatten().copied().collect();
        if observed.is_empty() {
            return Err(CliError::Input(format!("column `{name}` has no observed values")));
        }
        let missing = n - observed.len();
        if missing == 0 {
            columns.push(observed);
        } else {
            let med = median(&mut observed);
            columns.push(cells[k].iter().map(|v| v.unwrap_or(med)).collect());
            indicators.push((
                format!("{name}{MISSING_SUFFIX}"),
                cells[k].iter().map(|v| if v.is_none() { 1.0 } else { 0.0 }).collect::<Vec<f64>>(),
            ));
            imputed.push(ImputedColumn { name: name.clone(), median: med, missing });
        }
        names.push(name);
    }
    for (name, col) in indicators {
        names.push(name);
        columns.push(col);
    }

    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y: Vec<f64> = if max > min { y.iter().map(|v| (v - min) / (max - min)).collect() } else { vec![0.0; n] };
    let w = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let data = Dataset::new(w, a, y, names)?;
    Ok(Ingested { data, imputed, scaling: OutcomeScaling { negated: negate_y, min, max } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imputes_medians_and_adds_indicators() {
        let csv = "W1,A,Y,W2\n1,0,5,NA\n2,1,7,10\n3,0,9,\n4,1,6,20\n";
        let got = parse_csv(csv.as_bytes(), false).unwrap();
        assert_eq!(got.data.column_names(), &["W1", "W2", "W2_missing"]);
        assert_eq!(got.data.w().column(1).as_slice(), &[15.0, 10.0, 15.0, 20.0]);
        assert_eq!(got.data.w().column(2).as_slice(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(got.imputed, vec![ImputedColumn { name: "W2".into(), median: 15.0, missing: 2 }]);
        assert_eq!(got.data.y(), &[0.0, 0.5, 1.0, 0.25]);
    }

    #[test]
    fn negation_flips_the_scale() {
        let csv = "W1,A,Y\n1,0,5\n2,1,7\n3,0,9\n";
        let got = parse_csv(csv.as_bytes(), true).unwrap();
        assert_eq!(got.data.y(), &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn input_errors_are_named() {
        let no_a = parse_csv("W1,T,Y\n1,0,1\n".as_bytes(), false).unwrap_err();
        assert!(no_a.to_string().contains("`A`"), "{no_a}");
        assert_eq!(no_a.exit_code(), 2);
        let one_arm = parse_csv("W1,A,Y\n1,1,1\n2,1,0\n".as_bytes(), false).unwrap_err();
        assert!(one_arm.to_string().contains("both arms"));
        let bad_y = parse_csv("W1,A,Y\n1,1,x\n2,0,0\n".as_bytes(), false).unwrap_err();
        assert!(bad_y.to_string().contains("Y must be numeric"));
        let bad_a = parse_csv("W1,A,Y\n1,2,1\n2,0,0\n".as_bytes(), false).unwrap_err();
        assert!(bad_a.to_string().contains("A must be 0 or 1"));
    }
}
