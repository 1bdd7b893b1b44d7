//! Penalty-strength sweeps over repeated random splits and the choice of λ*.

use std::io::{Read, Write};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{PradaError, Result};
use crate::pipeline::{smooth_starts, train_from_starts, TrainConfig};

/// Fraction of rows used for training in each split.
pub const TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPathTable {
    pub lambdas: Vec<f64>,
    pub mean_test_error: Vec<f64>,
    pub sd_test_error: Vec<f64>,
    pub n_splits: usize,
}

impl LambdaPathTable {
    pub fn validate(&self) -> Result<()> {
        let n = self.lambdas.len();
        if n == 0 {
            return Err(PradaError::InvalidData("empty lambda path".into()));
        }
        if self.mean_test_error.len() != n || self.sd_test_error.len() != n {
            return Err(PradaError::DimensionMismatch("lambda path columns differ in length".into()));
        }
        if self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite()))
            || self.lambdas.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(PradaError::InvalidData("lambdas must be positive and strictly increasing".into()));
        }
        if self.mean_test_error.iter().any(|m| !m.is_finite())
            || self.sd_test_error.iter().any(|&s| !(s >= 0.0 && s.is_finite()))
        {
            return Err(PradaError::InvalidData("test errors must be finite, sds nonnegative".into()));
        }
        Ok(())
    }

    /// CSV with columns `lambda,mean_test_error,sd_test_error,n_splits`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "mean_test_error", "sd_test_error", "n_splits"])?;
        for i in 0..self.lambdas.len() {
            w.write_record([
                self.lambdas[i].to_string(),
                self.mean_test_error[i].to_string(),
                self.sd_test_error[i].to_string(),
                self.n_splits.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut t = Self {
            lambdas: vec![],
            mean_test_error: vec![],
            sd_test_error: vec![],
            n_splits: 0,
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let cell = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| PradaError::InvalidCell {
                        row: i + 2,
                        column: ["lambda", "mean_test_error", "sd_test_error", "n_splits"][c].into(),
                        message: "expected a number".into(),
                    })
            };
            t.lambdas.push(cell(0)?);
            t.mean_test_error.push(cell(1)?);
            t.sd_test_error.push(cell(2)?);
            t.n_splits = cell(3)? as usize;
        }
        t.validate()?;
        Ok(t)
    }
}

/// How λ* is read off the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SelectionRule {
    /// Largest λ whose lower two-sd edge reaches the minimum mean.
    #[default]
    TwoSd,
    /// Largest λ whose mean is within one standard error of the minimum.
    OneStandardError,
}

/// `λ* = max{λ_i : mean_i − 2·sd_i ≤ min_j mean_j}`.
pub fn select_lambda(table: &LambdaPathTable) -> Result<f64> {
    select_lambda_with(table, SelectionRule::TwoSd)
}

pub fn select_lambda_with(table: &LambdaPathTable, rule: SelectionRule) -> Result<f64> {
    table.validate()?;
    let m = &table.mean_test_error;
    let argmin = m
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < m[b] { i } else { b });
    let min = m[argmin];
    let ok = |i: usize| match rule {
        SelectionRule::TwoSd => m[i] - 2.0 * table.sd_test_error[i] <= min,
        SelectionRule::OneStandardError => {
            m[i] <= min + table.sd_test_error[argmin] / (table.n_splits.max(1) as f64).sqrt()
        }
    };
    let best = (0..m.len()).rev().find(|&i| ok(i)).unwrap_or(argmin);
    Ok(table.lambdas[best])
}

/// Seed of split `s` under a master seed.
pub fn split_seed(master: u64, s: usize) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0x5851_F42D_4C95_7F2D)
        .wrapping_add(s as u64)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Test MSE of every `(split, λ)` pair, indexed `[split][λ]`.
pub fn path_errors(data: &Dataset, lambdas: &[f64], cfg: &TrainConfig, n_splits: usize) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if lambdas.is_empty() {
        return Err(PradaError::InvalidConfig("lambda grid is empty".into()));
    }
    if n_splits < 2 {
        return Err(PradaError::InvalidConfig("n_splits must be >= 2".into()));
    }
    (0..n_splits)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.rng_seed, s));
            let (train, test) = data.split(TRAIN_FRACTION, &mut rng)?;
            let starts = smooth_starts(&train, cfg)?;
            let errors = lambdas
                .par_iter()
                .map(|&lambda| {
                    let c = TrainConfig { lambda, ..cfg.clone() };
                    Ok(train_from_starts(&starts, &train, &test, &c)?.test_mse)
                })
                .collect::<Result<Vec<f64>>>()?;
            info!("lambda path: split {}/{} done", s + 1, n_splits);
            Ok(errors)
        })
        .collect()
}

/// Mean and sample sd of the test MSE over `n_splits` random 90/10 splits per λ.
///
/// Stage 1 is shared by all λ within a split. Splits are seeded from `cfg.rng_seed`.
pub fn run_lambda_path(data: &Dataset, lambdas: &[f64], cfg: &TrainConfig, n_splits: usize) -> Result<LambdaPathTable> {
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let errors = path_errors(data, &sorted, cfg, n_splits)?;
    let mut table = LambdaPathTable {
        lambdas: sorted.clone(),
        mean_test_error: vec![],
        sd_test_error: vec![],
        n_splits,
    };
    for j in 0..sorted.len() {
        let col: Vec<f64> = errors.iter().map(|row| row[j]).collect();
        let (m, s) = mean_sd(&col);
        table.mean_test_error.push(m);
        table.sd_test_error.push(s);
    }
    table.validate()?;
    Ok(table)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || n < 2 {
        return Err(PradaError::InvalidConfig(format!("bad grid [{lo}, {hi}] with {n} points")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Options of [`auto_lambda_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoGridOptions {
    pub n_points: usize,
    /// Largest fraction of penalized parameters the smallest λ may zero.
    pub max_zero_fraction: f64,
    pub bisection_steps: usize,
}

impl Default for AutoGridOptions {
    fn default() -> Self {
        Self {
            n_points: 20,
            max_zero_fraction: 0.01,
            bisection_steps: 4,
        }
    }
}

/// Log-spaced grid whose largest λ prunes every node and whose smallest λ
/// zeroes under `max_zero_fraction` of the penalized parameters.
///
/// Both ends are found by doubling/halving and then bisection in log λ on
/// probe trainings from one shared smooth start.
pub fn auto_lambda_grid(data: &Dataset, cfg: &TrainConfig, opts: &AutoGridOptions) -> Result<Vec<f64>> {
    let probe_cfg = TrainConfig { n_restarts: 1, ..cfg.clone() };
    let starts = smooth_starts(data, &probe_cfg)?;
    let n_pen = (cfg.hidden_units * (data.n_features() + 1)) as f64;
    let probe = |lambda: f64| -> Result<(usize, f64)> {
        let c = TrainConfig { lambda, ..probe_cfg.clone() };
        let out = train_from_starts(&starts, data, data, &c)?;
        let zeros = out.params.count_zero_weights() as f64 / n_pen;
        Ok((out.params.live_nodes().len(), zeros))
    };
    let pruned = |l: f64| probe(l).map(|(live, _)| live == 0);
    let sparse = |l: f64| probe(l).map(|(_, z)| z >= opts.max_zero_fraction);

    // smallest λ with every node pruned
    let mut hi = 1.0;
    let mut lo = hi;
    if pruned(hi)? {
        while lo > 1e-12 && pruned(lo / 4.0)? {
            lo /= 4.0;
        }
        hi = lo;
        lo = hi / 4.0;
    } else {
        loop {
            lo = hi;
            hi *= 4.0;
            if hi > 1e6 {
                return Err(PradaError::InvalidConfig("no lambda up to 1e6 prunes the network".into()));
            }
            if pruned(hi)? {
                break;
            }
        }
    }
    for _ in 0..opts.bisection_steps {
        let mid = (lo * hi).sqrt();
        if pruned(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let top = hi;

    // largest λ that still leaves the network essentially dense
    let mut a = top / 4.0;
    while sparse(a)? {
        a /= 4.0;
        if a < 1e-14 {
            return Err(PradaError::InvalidConfig("could not find a non-sparsifying lambda".into()));
        }
    }
    let mut b = a * 4.0;
    for _ in 0..opts.bisection_steps {
        let mid = (a * b).sqrt();
        if sparse(mid)? {
            b = mid;
        } else {
            a = mid;
        }
    }
    log_grid(a, top, opts.n_points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(m: &[f64], s: &[f64], l: &[f64]) -> LambdaPathTable {
        LambdaPathTable {
            lambdas: l.to_vec(),
            mean_test_error: m.to_vec(),
            sd_test_error: s.to_vec(),
            n_splits: 20,
        }
    }

    #[test]
    fn rule_examples() {
        let t = table(&[1.0, 1.1, 2.0], &[0.05, 0.1, 0.1], &[0.1, 0.2, 0.3]);
        assert_eq!(select_lambda(&t).unwrap(), 0.2);
        let t = table(&[0.5, 0.5, 0.5], &[0.0, 0.0, 0.0], &[0.1, 0.2, 0.3]);
        assert_eq!(select_lambda(&t).unwrap(), 0.3);
        let t = table(&[0.2, 0.4, 0.9], &[0.0, 0.0, 0.0], &[0.1, 0.2, 0.3]);
        assert_eq!(select_lambda(&t).unwrap(), 0.1);
    }

    #[test]
    fn one_se_rule_uses_argmin_error() {
        // se at the argmin = 0.4/√16 = 0.1
        let mut t = table(&[1.0, 1.05, 1.2], &[0.4, 0.0, 0.0], &[0.1, 0.2, 0.3]);
        t.n_splits = 16;
        assert_eq!(select_lambda_with(&t, SelectionRule::OneStandardError).unwrap(), 0.2);
        // the two-sd rule looks at each candidate's own sd
        assert_eq!(select_lambda(&t).unwrap(), 0.1);
    }

    #[test]
    fn invalid_tables_rejected() {
        assert!(select_lambda(&table(&[1.0, 1.0], &[0.0, 0.0], &[0.2, 0.1])).is_err());
        assert!(select_lambda(&table(&[1.0], &[-0.1], &[0.2])).is_err());
        assert!(select_lambda(&table(&[], &[], &[])).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = table(&[1.0, 1.1, 2.0], &[0.05, 0.1, 0.1], &[1e-4, 0.2, 0.3]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lambda,mean_test_error,sd_test_error,n_splits\n0.0001,1,0.05,20\n"));
        assert_eq!(LambdaPathTable::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 1.0, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[4] - 1.0).abs() < 1e-12);
        assert!((g[1] - 1e-3).abs() < 1e-15);
        assert!(log_grid(1.0, 0.5, 3).is_err());
    }
}
