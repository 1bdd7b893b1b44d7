//! Dataset ingestion and persistence of models, reports and plot data.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{standardize, Dataset, StandardizationStats};
use crate::error::{PradaError, Result};
use crate::extraction::{ExtractionReport, PartialDependence};
use crate::network::NetworkParams;
use crate::pipeline::TrainConfig;

/// Raw table read from CSV: covariates, response and header names.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub response_name: String,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

/// Parses a header row plus numeric rows; the last column is the response.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn read_csv_table<R: Read>(input: R) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 2 {
        return Err(PradaError::InvalidData(
            "need at least one covariate column and a response column".into(),
        ));
    }
    let width = header.len();
    let mut values = Vec::new();
    let mut n_rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        for c in 0..width {
            let cell = rec.get(c).map(str::trim).unwrap_or("");
            if cell.is_empty() {
                return Err(PradaError::InvalidCell {
                    row: line,
                    column: header[c].clone(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| PradaError::InvalidCell {
                row: line,
                column: header[c].clone(),
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(PradaError::InvalidCell {
                    row: line,
                    column: header[c].clone(),
                    message: format!("non-finite value: {cell:?}"),
                });
            }
            values.push(v);
        }
        if rec.len() > width {
            return Err(PradaError::InvalidCell {
                row: line,
                column: format!("#{}", width + 1),
                message: "more cells than header columns".into(),
            });
        }
        n_rows += 1;
    }
    let all = Array2::from_shape_vec((n_rows, width), values).expect("row-major fill");
    let d = width - 1;
    Ok(RawTable {
        response_name: header[d].clone(),
        column_names: header[..d].to_vec(),
        x: all.slice(ndarray::s![.., ..d]).to_owned(),
        y: all.column(d).to_owned(),
    })
}

/// Reads and standardizes a CSV dataset.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let table = read_csv_table(File::open(path)?)?;
    if table.x.nrows() < 2 {
        return Err(PradaError::DatasetTooSmall(format!(
            "{} has {} data rows, need at least 2",
            path.display(),
            table.x.nrows()
        )));
    }
    standardize(&table.x, &table.y, table.column_names, table.response_name)
}

/// Writes raw data as CSV: covariate columns then the response.
pub fn write_dataset_csv<W: Write>(
    out: W,
    column_names: &[String],
    response_name: &str,
    x: &Array2<f64>,
    y: &Array1<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = column_names.iter().map(String::as_str).collect();
    header.push(response_name);
    w.write_record(&header)?;
    for (row, yv) in x.rows().into_iter().zip(y) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(yv.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A trained network with everything needed to use it on raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub column_names: Vec<String>,
    pub response_name: String,
    pub standardization_stats: StandardizationStats,
    pub lambda: f64,
    pub config: TrainConfig,
    pub params: NetworkParams,
    #[serde(default)]
    pub test_mse: Option<f64>,
}

impl ModelFile {
    /// Prediction on the raw scale from raw covariates.
    pub fn predict_raw(&self, x_raw: &[f64]) -> Result<f64> {
        if x_raw.len() != self.column_names.len() {
            return Err(PradaError::DimensionMismatch(format!(
                "model expects {} covariates, got {}",
                self.column_names.len(),
                x_raw.len()
            )));
        }
        let z: Vec<f64> = x_raw
            .iter()
            .enumerate()
            .map(|(d, &v)| self.standardization_stats.transform_x(d, v))
            .collect();
        Ok(self.standardization_stats.back_transform_y(self.params.forward(&z)?))
    }

    /// Checks that a dataset has this model's columns, in order.
    pub fn check_columns(&self, data: &Dataset) -> Result<()> {
        if data.column_names != self.column_names {
            return Err(PradaError::DimensionMismatch(format!(
                "model columns {:?} differ from data columns {:?}",
                self.column_names, data.column_names
            )));
        }
        Ok(())
    }

    /// Re-expresses raw data on this model's standardized scale.
    pub fn restandardize(&self, data: &Dataset) -> Result<Dataset> {
        self.check_columns(data)?;
        let raw = data.raw_x();
        let s = &self.standardization_stats;
        let x = Array2::from_shape_fn(raw.dim(), |(i, d)| s.transform_x(d, raw[[i, d]]));
        let y = data.raw_y().mapv(|v| (v - s.y_mean) / s.y_sd);
        Ok(Dataset {
            x,
            y,
            column_names: data.column_names.clone(),
            response_name: data.response_name.clone(),
            stats: s.clone(),
        })
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    write_json(path, model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    read_json(path)
}

/// Training configuration from a `key = value` file.
pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    TrainConfig::from_key_values(&fs::read_to_string(path)?)
}

/// Grid CSV with columns `component_id,variable,x,value,fixed_level`.
///
/// `fixed_level` is empty for one-variable and marginal curves.
pub fn write_grids_csv<W: Write>(out: W, grids: &[PartialDependence], column_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component_id", "variable", "x", "value", "fixed_level"])?;
    for g in grids {
        let name = column_names
            .get(g.variable)
            .cloned()
            .unwrap_or_else(|| format!("x{}", g.variable + 1));
        let level = g.fixed_level.map(|l| l.to_string()).unwrap_or_default();
        for (x, v) in g.x.iter().zip(&g.value) {
            w.write_record([g.component_id.to_string(), name.clone(), x.to_string(), v.to_string(), level.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Importance CSV with columns `variable,importance`.
pub fn write_importance_csv<W: Write>(out: W, column_names: &[String], importance: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "importance"])?;
    for (n, v) in column_names.iter().zip(importance) {
        w.write_record([n.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and `partial_dependence.csv` into `dir`, creating it.
pub fn persist_report(report: &ExtractionReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_json(dir.join("report.json"), report)?;
    let f = BufWriter::new(File::create(dir.join("partial_dependence.csv"))?);
    write_grids_csv(f, &report.grids, &report.column_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn happy_path_table() {
        let t = read_csv_table("a,b,y\n1,2,3\n4,5.5,6\n7,8,-1e-3\n".as_bytes()).unwrap();
        assert_eq!(t.column_names, vec!["a", "b"]);
        assert_eq!(t.response_name, "y");
        assert_eq!(t.x.dim(), (3, 2));
        assert_eq!(t.x[[1, 1]], 5.5);
        assert_eq!(t.y[2], -1e-3);
    }

    #[test]
    fn nan_cell_is_located() {
        let err = read_csv_table("a,b,y\n1,2,3\n4,NaN,6\n".as_bytes()).unwrap_err();
        match err {
            PradaError::InvalidCell { row, column, .. } => assert_eq!((row, column.as_str()), (3, "b")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_and_text_cells_rejected() {
        assert!(matches!(
            read_csv_table("a,y\n1,2\n3\n".as_bytes()),
            Err(PradaError::InvalidCell { row: 3, .. })
        ));
        assert!(matches!(
            read_csv_table("a,y\n1,x\n".as_bytes()),
            Err(PradaError::InvalidCell { row: 2, .. })
        ));
        assert!(read_csv_table("y\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn dataset_csv_round_trips_exactly() {
        let x = ndarray::array![[0.1, -2.5e-7], [1.0 / 3.0, 4.0]];
        let y = ndarray::array![std::f64::consts::PI, -0.0];
        let names = vec!["u".to_string(), "v".to_string()];
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &names, "r", &x, &y).unwrap();
        let t = read_csv_table(buf.as_slice()).unwrap();
        assert_eq!(t.x, x);
        assert_eq!(t.y, y);
        assert_eq!(t.response_name, "r");
    }
}
