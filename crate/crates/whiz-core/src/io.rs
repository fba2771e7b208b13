//! File ingestion and emission.
//!
//! Observation matrices travel as CSV with a `f0,f1,...` header; result
//! tables are emitted byte-stably (rows sorted, floats printed at 12
//! significant digits) so identical runs diff clean.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ResultTable;
use crate::model::{Assertion, GroundTruth, MixtureParams, ObservationGraph, SensedMatrix};
use crate::scalar::{real, Real};

/// Output format for result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Formats a float with 12 significant digits, decimal notation for moderate
/// exponents and `me±k` otherwise, trailing zeros stripped. Pure function of
/// the bits, so identical inputs always serialize identically.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".to_string() } else { "-inf".to_string() };
    }
    let sci = format!("{:.11e}", x);
    let (mant, exp) = sci.split_once('e').expect("scientific format always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let sign = if neg { "-" } else { "" };
    if !(-4..12).contains(&exp) {
        let body = if digits.len() == 1 {
            digits.to_string()
        } else {
            format!("{}.{}", &digits[..1], &digits[1..])
        };
        return format!("{sign}{body}e{exp}");
    }
    let point = exp + 1; // digits before the decimal point
    if point <= 0 {
        format!("{sign}0.{}{}", "0".repeat((-point) as usize), digits)
    } else if (point as usize) >= digits.len() {
        format!("{sign}{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        format!("{sign}{}.{}", &digits[..point as usize], &digits[point as usize..])
    }
}

/// Loads a rectangular numeric CSV (one header row) as a sensed matrix.
/// Row order is preserved; parse failures name the offending cell.
pub fn load_matrix_csv<T: Real>(path: impl AsRef<Path>) -> Result<SensedMatrix<T>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::invalid(format!("{}: empty file", path.display()))),
    };
    let n_cols = header.len();
    if n_cols == 0 {
        return Err(Error::invalid(format!("{}: empty header", path.display())));
    }
    let mut values: Vec<T> = Vec::new();
    let mut n_rows = 0usize;
    for (i, record) in records.enumerate() {
        let record = record?;
        let row = i + 1; // 1-based data row
        if record.len() != n_cols {
            return Err(Error::RaggedRow { row, expected: n_cols, got: record.len() });
        }
        for (col, field) in record.iter().enumerate() {
            let parsed: f64 = field.trim().parse().map_err(|_| Error::ParseCell {
                row,
                col: col + 1,
                value: field.to_string(),
            })?;
            values.push(T::from_f64(parsed).ok_or_else(|| Error::ParseCell {
                row,
                col: col + 1,
                value: field.to_string(),
            })?);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::invalid(format!("{}: no data rows", path.display())));
    }
    SensedMatrix::from_rows(n_rows, n_cols, &values)
}

/// Writes a sensed matrix with the `f0,f1,...` header.
pub fn save_matrix_csv<T: Real>(matrix: &SensedMatrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..matrix.n_cols()).map(|c| format!("f{c}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..matrix.n_rows() {
        let fields: Vec<String> = (0..matrix.n_cols())
            .map(|c| fmt_sig(matrix.data()[(n, c)].to_f64().unwrap_or(f64::NAN)))
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Renders a result table as CSV text (header + sorted rows).
pub fn render_result_table_csv(table: &ResultTable) -> Result<String> {
    if table.rows().is_empty() {
        return Err(Error::invalid("result table is empty"));
    }
    let mut out = String::from("experiment,method,sweep_param,sweep_value,trial_count,metric,mean,std\n");
    for row in table.sorted_rows() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.experiment,
            row.method,
            row.sweep_param,
            fmt_sig(row.sweep_value),
            row.trial_count,
            row.metric,
            fmt_sig(row.mean),
            fmt_sig(row.std),
        ));
    }
    Ok(out)
}

/// Renders a result table as JSON text with sorted keys and rows.
pub fn render_result_table_json(table: &ResultTable) -> Result<String> {
    if table.rows().is_empty() {
        return Err(Error::invalid("result table is empty"));
    }
    let mut out = String::from("[\n");
    let rows = table.sorted_rows();
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&format!(
            "  {{\"experiment\":{},\"mean\":{},\"method\":{},\"metric\":{},\"std\":{},\"sweep_param\":{},\"sweep_value\":{},\"trial_count\":{}}}",
            json_str(&row.experiment),
            fmt_sig(row.mean),
            json_str(&row.method),
            json_str(&row.metric),
            fmt_sig(row.std),
            json_str(&row.sweep_param),
            fmt_sig(row.sweep_value),
            row.trial_count,
        ));
        out.push_str(if i + 1 < rows.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    Ok(out)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Writes a nonempty result table in the requested format.
pub fn save_results(table: &ResultTable, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    let rendered = match format {
        OutputFormat::Csv => render_result_table_csv(table)?,
        OutputFormat::Json => render_result_table_json(table)?,
    };
    write_atomic(path.as_ref(), rendered.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}

/// Writes assertions as `source,claim,polarity` rows (polarity 1/0).
pub fn save_graph_csv(graph: &ObservationGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("source,claim,polarity\n");
    for a in graph.assertions() {
        out.push_str(&format!("{},{},{}\n", a.source, a.claim, u8::from(a.polarity)));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Writes the raw event stream in emission order, same schema as the graph.
pub fn save_events_csv(graph: &ObservationGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("source,claim,polarity\n");
    for a in graph.events() {
        out.push_str(&format!("{},{},{}\n", a.source, a.claim, u8::from(a.polarity)));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Loads a `source,claim,polarity` CSV; source/claim counts are inferred
/// from the largest indices present.
pub fn load_graph_csv(path: impl AsRef<Path>) -> Result<ObservationGraph> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut assertions = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != 3 {
            return Err(Error::RaggedRow { row, expected: 3, got: record.len() });
        }
        let parse_idx = |col: usize| -> Result<usize> {
            record[col].trim().parse().map_err(|_| Error::ParseCell {
                row,
                col: col + 1,
                value: record[col].to_string(),
            })
        };
        let polarity = match record[2].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::ParseCell { row, col: 3, value: other.to_string() });
            }
        };
        assertions.push(Assertion { source: parse_idx(0)?, claim: parse_idx(1)?, polarity });
    }
    if assertions.is_empty() {
        return Err(Error::invalid(format!("{}: no assertions", path.display())));
    }
    let n_sources = assertions.iter().map(|a| a.source).max().unwrap() + 1;
    let n_claims = assertions.iter().map(|a| a.claim).max().unwrap() + 1;
    ObservationGraph::new(n_sources, n_claims, assertions)
}

/// JSON-facing representation of mixture parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureParamsDto {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl MixtureParamsDto {
    pub fn from_params<T: Real>(params: &MixtureParams<T>) -> Self {
        let to_f64 = |v: T| v.to_f64().unwrap_or(f64::NAN);
        Self {
            weights: params.weights().iter().map(|w| to_f64(*w)).collect(),
            means: (0..params.k())
                .map(|k| (0..params.dim()).map(|d| to_f64(params.means()[(k, d)])).collect())
                .collect(),
            covariances: params
                .covariances()
                .iter()
                .map(|c| {
                    (0..c.nrows())
                        .map(|i| (0..c.ncols()).map(|j| to_f64(c[(i, j)])).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn into_params<T: Real>(&self) -> Result<MixtureParams<T>> {
        let k = self.weights.len();
        if self.means.len() != k || self.covariances.len() != k {
            return Err(Error::invalid("weights, means and covariances must agree on K"));
        }
        let d = self.means.first().map(|m| m.len()).unwrap_or(0);
        if self.means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("ragged mean rows"));
        }
        let weights = nalgebra::DVector::from_iterator(k, self.weights.iter().map(|w| real::<T>(*w)));
        let means = nalgebra::DMatrix::from_fn(k, d, |i, j| real::<T>(self.means[i][j]));
        let covariances = self
            .covariances
            .iter()
            .map(|c| {
                if c.len() != d || c.iter().any(|row| row.len() != d) {
                    return Err(Error::invalid("covariance shape must be DxD"));
                }
                Ok(nalgebra::DMatrix::from_fn(d, d, |i, j| real::<T>(c[i][j])))
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureParams::new(weights, means, covariances)
    }
}

/// JSON-facing representation of ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthDto {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_params: Option<MixtureParamsDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claim_labels: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_reliability: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claim_quality: Option<Vec<f64>>,
}

impl GroundTruthDto {
    pub fn from_truth<T: Real>(truth: &GroundTruth<T>) -> Self {
        let to_f64 = |v: &Vec<T>| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
        Self {
            true_params: truth.true_params.as_ref().map(MixtureParamsDto::from_params),
            claim_labels: truth.claim_labels.clone(),
            source_reliability: truth.source_reliability.as_ref().map(to_f64),
            claim_quality: truth.claim_quality.as_ref().map(to_f64),
        }
    }
}

pub fn load_params_json<T: Real>(path: impl AsRef<Path>) -> Result<MixtureParams<T>> {
    let text = std::fs::read_to_string(path)?;
    let dto: MixtureParamsDto = serde_json::from_str(&text)?;
    dto.into_params()
}

/// JSON-facing representation of the Gaussian mean prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorDto {
    pub center: Vec<Vec<f64>>,
    pub variance: f64,
    pub weights: Vec<f64>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl PriorDto {
    pub fn into_prior<T: Real>(&self) -> Result<crate::model::PriorSpec<T>> {
        let template = MixtureParamsDto {
            weights: self.weights.clone(),
            means: self.center.clone(),
            covariances: self.covariances.clone(),
        }
        .into_params::<T>()?;
        crate::model::PriorSpec::centered_on(&template, real(self.variance))
    }
}

pub fn load_prior_json<T: Real>(path: impl AsRef<Path>) -> Result<crate::model::PriorSpec<T>> {
    let text = std::fs::read_to_string(path)?;
    let dto: PriorDto = serde_json::from_str(&text)?;
    dto.into_prior()
}

/// Writes sessions as `discount,defer_time,deferred` rows.
pub fn save_sessions_csv<T: Real>(
    sessions: &[crate::synth::TubeSession<T>],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = String::from("discount,defer_time,deferred\n");
    for s in sessions {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_sig(s.discount.to_f64().unwrap_or(f64::NAN)),
            fmt_sig(s.defer_time.to_f64().unwrap_or(f64::NAN)),
            u8::from(s.deferred)
        ));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Loads a `discount,defer_time,deferred` CSV.
pub fn load_sessions_csv<T: Real>(path: impl AsRef<Path>) -> Result<Vec<crate::synth::TubeSession<T>>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut sessions = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != 3 {
            return Err(Error::RaggedRow { row, expected: 3, got: record.len() });
        }
        let parse = |col: usize| -> Result<f64> {
            record[col].trim().parse().map_err(|_| Error::ParseCell {
                row,
                col: col + 1,
                value: record[col].to_string(),
            })
        };
        let deferred = match record[2].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::ParseCell { row, col: 3, value: other.to_string() }),
        };
        sessions.push(crate::synth::TubeSession {
            discount: real(parse(0)?),
            defer_time: real(parse(1)?),
            deferred,
        });
    }
    if sessions.is_empty() {
        return Err(Error::invalid(format!("{}: no sessions", path.display())));
    }
    Ok(sessions)
}

pub fn save_params_json<T: Real>(params: &MixtureParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let dto = MixtureParamsDto::from_params(params);
    let text = serde_json::to_string_pretty(&dto)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn fmt_sig_basic_shapes() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(-0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.25), "0.25");
        assert_eq!(fmt_sig(-3.5), "-3.5");
        assert_eq!(fmt_sig(1e-4), "0.0001");
        assert_eq!(fmt_sig(1e-5), "1e-5");
        assert_eq!(fmt_sig(12345.0), "12345");
        assert_eq!(fmt_sig(1e12), "1e12");
        assert_eq!(fmt_sig(123456789012345.0), "1.23456789012e14");
    }

    #[test]
    fn fmt_sig_rounds_to_twelve_digits() {
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(2.0 / 3.0), "0.666666666667");
        assert_eq!(fmt_sig(std::f64::consts::PI), "3.14159265359");
    }

    #[test]
    fn fmt_sig_round_trips_to_twelve_digits() {
        for &x in &[1.2345678901234e-7, 9.87654321e33, -0.000123456789012, 42.0, 1e300] {
            let parsed: f64 = fmt_sig(x).parse().unwrap();
            let rel = ((parsed - x) / x).abs();
            assert!(rel < 5e-12, "{x} -> {} -> {parsed}", fmt_sig(x));
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = SensedMatrix::new(dmatrix![0.0, 1.0; 2.0, 3.0]).unwrap();
        save_matrix_csv(&m, &path).unwrap();
        let loaded: SensedMatrix<f64> = load_matrix_csv(&path).unwrap();
        assert_eq!(loaded.data(), m.data());
    }

    #[test]
    fn matrix_csv_trivial_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "f0,f1\n0.0,1.0\n2.0,3.0\n").unwrap();
        let loaded: SensedMatrix<f64> = load_matrix_csv(&path).unwrap();
        assert_eq!(loaded.data(), &dmatrix![0.0, 1.0; 2.0, 3.0]);
    }

    #[test]
    fn matrix_csv_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1\n1.0,2.0\n1.0,2.0,3.0\n").unwrap();
        let err = load_matrix_csv::<f64>(&path).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { row: 2, expected: 2, got: 3 }));
    }

    #[test]
    fn matrix_csv_names_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1\n1.0,abc\n").unwrap();
        let err = load_matrix_csv::<f64>(&path).unwrap_err();
        match err {
            Error::ParseCell { row, col, value } => {
                assert_eq!((row, col), (1, 2));
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn matrix_csv_missing_file() {
        let err = load_matrix_csv::<f64>("/nonexistent/nope.csv").unwrap_err();
        assert!(matches!(err, Error::Csv(_) | Error::Io(_)));
    }

    #[test]
    fn graph_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let graph = ObservationGraph::new(
            2,
            3,
            vec![
                Assertion { source: 0, claim: 0, polarity: true },
                Assertion { source: 1, claim: 2, polarity: false },
            ],
        )
        .unwrap();
        save_graph_csv(&graph, &path).unwrap();
        let loaded = load_graph_csv(&path).unwrap();
        assert_eq!(loaded.assertions(), graph.assertions());
    }
}
