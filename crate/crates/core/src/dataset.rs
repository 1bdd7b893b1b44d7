//! Standardized regression datasets and train/test splitting.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PradaError, Result};

/// Per-column mean and sample standard deviation of the raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

impl StandardizationStats {
    /// Stats that leave data unchanged.
    pub fn identity(d: usize) -> Self {
        Self {
            x_mean: vec![0.0; d],
            x_sd: vec![1.0; d],
            y_mean: 0.0,
            y_sd: 1.0,
        }
    }

    pub fn back_transform_y(&self, y_std: f64) -> f64 {
        y_std * self.y_sd + self.y_mean
    }

    pub fn transform_x(&self, d: usize, x_raw: f64) -> f64 {
        (x_raw - self.x_mean[d]) / self.x_sd[d]
    }

    /// Converts a slope dy/dx on the standardized scale to raw units.
    pub fn raw_slope(&self, d: usize, slope_std: f64) -> f64 {
        slope_std * self.y_sd / self.x_sd[d]
    }
}

/// Covariate matrix and response, both z-scored.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub column_names: Vec<String>,
    pub response_name: String,
    pub stats: StandardizationStats,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Z-scores every covariate column and the response.
///
/// Constant columns are rejected since they cannot be scaled.
pub fn standardize(
    raw_x: &Array2<f64>,
    raw_y: &Array1<f64>,
    column_names: Vec<String>,
    response_name: impl Into<String>,
) -> Result<Dataset> {
    let (n, d) = raw_x.dim();
    if n != raw_y.len() {
        return Err(PradaError::DimensionMismatch(format!(
            "{n} covariate rows but {} responses",
            raw_y.len()
        )));
    }
    if column_names.len() != d {
        return Err(PradaError::DimensionMismatch(format!(
            "{d} columns but {} names",
            column_names.len()
        )));
    }
    if n < 2 {
        return Err(PradaError::DatasetTooSmall(format!(
            "need at least 2 rows, got {n}"
        )));
    }
    let response_name = response_name.into();
    if raw_x.iter().chain(raw_y.iter()).any(|v| !v.is_finite()) {
        return Err(PradaError::NonFinite("raw data".into()));
    }

    let mut x = raw_x.as_standard_layout().into_owned();
    let mut x_mean = Vec::with_capacity(d);
    let mut x_sd = Vec::with_capacity(d);
    for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
        let (mean, sd) = mean_sd(col.iter().copied());
        if !(sd > 0.0) || sd < 1e-12 * mean.abs().max(1.0) {
            return Err(PradaError::ConstantColumn(column_names[j].clone()));
        }
        col.mapv_inplace(|v| (v - mean) / sd);
        x_mean.push(mean);
        x_sd.push(sd);
    }
    let (y_mean, y_sd) = mean_sd(raw_y.iter().copied());
    if !(y_sd > 0.0) || y_sd < 1e-12 * y_mean.abs().max(1.0) {
        return Err(PradaError::ConstantColumn(response_name));
    }
    let y = raw_y.mapv(|v| (v - y_mean) / y_sd);

    Ok(Dataset {
        x,
        y,
        column_names,
        response_name,
        stats: StandardizationStats {
            x_mean,
            x_sd,
            y_mean,
            y_sd,
        },
    })
}

impl Dataset {
    /// Wraps data that is already on the model scale, with identity stats.
    pub fn from_standardized(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if n != y.len() {
            return Err(PradaError::DimensionMismatch(format!(
                "{n} covariate rows but {} responses",
                y.len()
            )));
        }
        Ok(Self {
            x: x.as_standard_layout().into_owned(),
            y,
            column_names: (1..=d).map(|j| format!("x{j}")).collect(),
            response_name: "y".into(),
            stats: StandardizationStats::identity(d),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Rows at `indices`, sharing this dataset's standardization stats.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), indices),
            y: self.y.select(Axis(0), indices),
            column_names: self.column_names.clone(),
            response_name: self.response_name.clone(),
            stats: self.stats.clone(),
        }
    }

    /// Uniform random split without replacement; `train_fraction` of rows go to training.
    pub fn split<R: Rng + ?Sized>(&self, train_fraction: f64, rng: &mut R) -> Result<(Self, Self)> {
        let n = self.n_samples();
        let n_train = (train_fraction * n as f64).round() as usize;
        if n_train < 1 || n_train >= n {
            return Err(PradaError::DatasetTooSmall(format!(
                "cannot split {n} rows with train fraction {train_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let (train, test) = idx.split_at(n_train);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// Raw covariate matrix recovered from the stored stats.
    pub fn raw_x(&self) -> Array2<f64> {
        let mut raw = self.x.clone();
        for (j, mut col) in raw.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.stats.x_mean[j], self.stats.x_sd[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        raw
    }

    pub fn raw_y(&self) -> Array1<f64> {
        self.y.mapv(|v| self.stats.back_transform_y(v))
    }

    /// Observed (min, max) of a standardized column.
    pub fn column_range(&self, d: usize) -> (f64, f64) {
        self.x
            .column(d)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}
