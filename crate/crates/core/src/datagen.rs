//! Synthetic additive-model generators.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{standardize, Dataset};
use crate::error::{PradaError, Result};

/// Legendre polynomial `P_k` for `k` in 1..=4.
///
/// `P_4` uses the standard leading coefficient 35.
pub fn legendre_polynomial(k: usize, x: f64) -> Result<f64> {
    let x2 = x * x;
    Ok(match k {
        1 => x,
        2 => 0.5 * (3.0 * x2 - 1.0),
        3 => 0.5 * (5.0 * x2 * x - 3.0 * x),
        4 => (35.0 * x2 * x2 - 30.0 * x2 + 3.0) / 8.0,
        _ => {
            return Err(PradaError::InvalidConfig(format!(
                "legendre order must be 1..=4, got {k}"
            )))
        }
    })
}

/// Derivative `P_k'(x)`.
pub fn legendre_derivative(k: usize, x: f64) -> Result<f64> {
    let x2 = x * x;
    Ok(match k {
        1 => 1.0,
        2 => 3.0 * x,
        3 => 0.5 * (15.0 * x2 - 3.0),
        4 => (140.0 * x2 * x - 60.0 * x) / 8.0,
        _ => {
            return Err(PradaError::InvalidConfig(format!(
                "legendre order must be 1..=4, got {k}"
            )))
        }
    })
}

/// Asymptotic saliency importance of `P_k` under `U[-1, 1]`: `½∫|P_k'(x)|dx`.
///
/// Evaluated with composite Simpson on a fine grid split at the roots of `P_k'`.
pub fn legendre_true_importance(k: usize) -> Result<f64> {
    let roots: Vec<f64> = match k {
        1 => vec![],
        2 => vec![0.0],
        3 => vec![-(0.2f64.sqrt()), 0.2f64.sqrt()],
        4 => vec![-(3.0f64 / 7.0).sqrt(), 0.0, (3.0f64 / 7.0).sqrt()],
        _ => {
            return Err(PradaError::InvalidConfig(format!(
                "legendre order must be 1..=4, got {k}"
            )))
        }
    };
    let mut knots = vec![-1.0];
    knots.extend(roots);
    knots.push(1.0);
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = 2000;
        let h = (b - a) / m as f64;
        let f = |x: f64| legendre_derivative(k, x).map(f64::abs);
        let mut s = f(a)? + f(b)?;
        for i in 1..m {
            s += f(a + i as f64 * h)? * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += s * h / 3.0;
    }
    Ok(0.5 * total)
}

/// The function of one additive term, evaluated on its support variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermFn {
    Legendre { order: usize },
    Linear { slope: f64 },
    Sine { frequency: f64, amplitude: f64 },
    Tanh { scale: f64, amplitude: f64 },
    /// Product of the support variables times a coefficient.
    Product { coefficient: f64 },
    /// `Σ_n v_n·tanh(b_n + w_n·x_S) + Σ_s slope_s·x_s`: a fitted component.
    TanhSum {
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
        outputs: Vec<f64>,
        slopes: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveTerm {
    /// Sorted covariate indices the term depends on.
    pub support: Vec<usize>,
    pub function: TermFn,
}

impl AdditiveTerm {
    pub fn new(mut support: Vec<usize>, function: TermFn) -> Self {
        support.sort_unstable();
        support.dedup();
        Self { support, function }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.support.is_empty() || self.support.iter().any(|&s| s >= d) {
            return Err(PradaError::InvalidConfig(format!(
                "term support {:?} invalid for {d} covariates",
                self.support
            )));
        }
        let one_var = |name: &str| {
            if self.support.len() != 1 {
                Err(PradaError::InvalidConfig(format!("{name} term needs exactly one variable")))
            } else {
                Ok(())
            }
        };
        match &self.function {
            TermFn::Legendre { order } => {
                one_var("legendre")?;
                legendre_polynomial(*order, 0.0)?;
            }
            TermFn::Linear { .. } | TermFn::Sine { .. } | TermFn::Tanh { .. } => one_var("scalar")?,
            TermFn::Product { .. } => {}
            TermFn::TanhSum {
                weights,
                biases,
                outputs,
                slopes,
            } => {
                let k = self.support.len();
                if weights.len() != biases.len()
                    || weights.len() != outputs.len()
                    || weights.iter().any(|w| w.len() != k)
                    || slopes.len() != k
                {
                    return Err(PradaError::InvalidConfig("inconsistent tanh-sum term".into()));
                }
            }
        }
        Ok(())
    }

    /// Value of the term at a full covariate vector.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let first = x[self.support[0]];
        match &self.function {
            TermFn::Legendre { order } => legendre_polynomial(*order, first).unwrap_or(f64::NAN),
            TermFn::Linear { slope } => slope * first,
            TermFn::Sine {
                frequency,
                amplitude,
            } => amplitude * (frequency * first).sin(),
            TermFn::Tanh { scale, amplitude } => amplitude * (scale * first).tanh(),
            TermFn::Product { coefficient } => {
                coefficient * self.support.iter().map(|&s| x[s]).product::<f64>()
            }
            TermFn::TanhSum {
                weights,
                biases,
                outputs,
                slopes,
            } => {
                let mut out = 0.0;
                for ((w, b), v) in weights.iter().zip(biases).zip(outputs) {
                    let z = b + w.iter().zip(&self.support).map(|(wi, &s)| wi * x[s]).sum::<f64>();
                    out += v * z.tanh();
                }
                out + slopes.iter().zip(&self.support).map(|(a, &s)| a * x[s]).sum::<f64>()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// iid `U[-1, 1]` in each of `dim` columns.
    Uniform { dim: usize },
    /// Zero-mean Gaussian with the given correlation matrix.
    Gaussian { correlation: Vec<Vec<f64>> },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::Uniform { dim } => *dim,
            CovariateLaw::Gaussian { correlation } => correlation.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_samples: usize,
    pub covariates: CovariateLaw,
    pub components: Vec<AdditiveTerm>,
    pub noise_sd: f64,
    #[serde(default)]
    pub column_names: Option<Vec<String>>,
}

impl GeneratorSpec {
    /// Sum of the first four Legendre polynomials on `x1..x4`, remaining columns pure noise.
    pub fn legendre(n_samples: usize, dim: usize, noise_sd: f64) -> Self {
        Self {
            n_samples,
            covariates: CovariateLaw::Uniform { dim },
            components: (1..=4)
                .map(|k| AdditiveTerm::new(vec![k - 1], TermFn::Legendre { order: k }))
                .collect(),
            noise_sd,
            column_names: None,
        }
    }

    /// Six terms on `x1..x7` of eight uniform covariates: two Legendre terms, a sine,
    /// a linear term, a two-way product and a saturating tanh; `x8` is pure noise.
    pub fn six_component(n_samples: usize, noise_sd: f64) -> Self {
        Self {
            n_samples,
            covariates: CovariateLaw::Uniform { dim: 8 },
            components: vec![
                AdditiveTerm::new(vec![0], TermFn::Legendre { order: 2 }),
                AdditiveTerm::new(vec![1], TermFn::Sine { frequency: 3.0, amplitude: 1.0 }),
                AdditiveTerm::new(vec![2], TermFn::Linear { slope: 1.0 }),
                AdditiveTerm::new(vec![3, 4], TermFn::Product { coefficient: 2.0 }),
                AdditiveTerm::new(vec![5], TermFn::Tanh { scale: 4.0, amplitude: 1.0 }),
                AdditiveTerm::new(vec![6], TermFn::Legendre { order: 3 }),
            ],
            noise_sd,
            column_names: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.covariates.dim();
        if d == 0 {
            return Err(PradaError::InvalidConfig("generator needs at least one covariate".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(PradaError::InvalidConfig(format!(
                "noise_sd must be >= 0, got {}",
                self.noise_sd
            )));
        }
        if let Some(names) = &self.column_names {
            if names.len() != d {
                return Err(PradaError::InvalidConfig("one column name per covariate".into()));
            }
        }
        for t in &self.components {
            t.validate(d)?;
        }
        Ok(())
    }

    /// Ground-truth supports, one per term, in declaration order.
    pub fn true_supports(&self) -> Vec<Vec<usize>> {
        self.components.iter().map(|t| t.support.clone()).collect()
    }

    pub fn noiseless_response(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|t| t.evaluate(x)).sum()
    }
}

/// Generated data: the standardized dataset plus ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub data: Dataset,
    pub raw_x: Array2<f64>,
    pub raw_y: Array1<f64>,
    pub true_supports: Vec<Vec<usize>>,
}

/// Symmetric PSD square root `Q·sqrt(Λ)` of a correlation matrix.
///
/// Eigenvalues down to `-1e-10` are clipped to zero; anything more negative is rejected.
pub fn correlation_factor(correlation: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = correlation.len();
    if correlation.iter().any(|r| r.len() != d) {
        return Err(PradaError::InvalidConfig("correlation matrix must be square".into()));
    }
    let m = DMatrix::from_fn(d, d, |i, j| correlation[i][j]);
    for i in 0..d {
        if (m[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(PradaError::InvalidConfig("correlation diagonal must be 1".into()));
        }
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                return Err(PradaError::InvalidConfig("correlation matrix must be symmetric".into()));
            }
        }
    }
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(PradaError::NotPositiveSemiDefinite(min));
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

fn sample_covariates(law: &CovariateLaw, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    match law {
        CovariateLaw::Uniform { dim } => {
            Ok(Array2::from_shape_fn((n, *dim), |_| rng.random_range(-1.0..=1.0)))
        }
        CovariateLaw::Gaussian { correlation } => {
            let l = correlation_factor(correlation)?;
            let d = correlation.len();
            let mut x = Array2::zeros((n, d));
            let mut z = vec![0.0; d];
            for i in 0..n {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(rng);
                }
                for r in 0..d {
                    x[[i, r]] = (0..d).map(|c| l[(r, c)] * z[c]).sum();
                }
            }
            Ok(x)
        }
    }
}

/// Draws covariates by the spec's law and `y = Σ terms(x) + ε`, then standardizes.
pub fn generate_additive_dataset(spec: &GeneratorSpec, seed: u64) -> Result<GeneratedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_samples;
    let raw_x = sample_covariates(&spec.covariates, n, &mut rng)?;
    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| PradaError::InvalidConfig(format!("noise distribution: {e}")))?;
    let raw_y = Array1::from_shape_fn(n, |i| {
        let row = raw_x.row(i);
        spec.noiseless_response(row.as_slice().expect("standard layout")) + noise.sample(&mut rng)
    });
    let d = spec.covariates.dim();
    let names = spec
        .column_names
        .clone()
        .unwrap_or_else(|| (1..=d).map(|j| format!("x{j}")).collect());
    let data = standardize(&raw_x, &raw_y, names, "y")?;
    Ok(GeneratedDataset {
        data,
        raw_x,
        raw_y,
        true_supports: spec.true_supports(),
    })
}

/// The Legendre benchmark: `y = P1(x1)+P2(x2)+P3(x3)+P4(x4)+ε` over `U[-1,1]^d`.
pub fn generate_legendre_dataset(n: usize, d: usize, noise_sd: f64, seed: u64) -> Result<GeneratedDataset> {
    if d < 4 {
        return Err(PradaError::InvalidConfig(format!(
            "legendre benchmark needs at least 4 covariates, got {d}"
        )));
    }
    if n < 2 {
        return Err(PradaError::DatasetTooSmall(format!("need at least 2 samples, got {n}")));
    }
    generate_additive_dataset(&GeneratorSpec::legendre(n, d, noise_sd), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for i in 1..m {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn legendre_values() {
        assert_eq!(legendre_polynomial(2, 1.0).unwrap(), 1.0);
        assert_eq!(legendre_polynomial(3, 0.0).unwrap(), 0.0);
        assert_eq!(legendre_polynomial(3, 0.5).unwrap(), -0.4375);
        for k in 1..=4 {
            assert_eq!(legendre_polynomial(k, 1.0).unwrap(), 1.0);
        }
        assert!(legendre_polynomial(5, 0.3).is_err());
        assert!(legendre_polynomial(0, 0.3).is_err());
    }

    #[test]
    fn legendre_orthogonality_by_quadrature() {
        // Simpson is exact for polynomials up to degree 3 per panel; degree-8 products
        // converge quickly on a fine grid.
        for j in 1..=4 {
            for k in (j + 1)..=4 {
                let ip = simpson(
                    |x| legendre_polynomial(j, x).unwrap() * legendre_polynomial(k, x).unwrap(),
                    -1.0,
                    1.0,
                    2000,
                );
                assert!(ip.abs() < 1e-10, "<P{j},P{k}> = {ip}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for k in 1..=4 {
            for &x in &[-0.9, -0.3, 0.1, 0.77] {
                let h = 1e-6;
                let fd = (legendre_polynomial(k, x + h).unwrap() - legendre_polynomial(k, x - h).unwrap())
                    / (2.0 * h);
                assert!((fd - legendre_derivative(k, x).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn true_importances_match_closed_forms() {
        // ½∫|P4'| = 125/56 with the standard coefficient 35
        let closed = [1.0, 1.5, 0.4 * 5f64.sqrt() + 1.0, 125.0 / 56.0];
        for k in 1..=4 {
            let v = legendre_true_importance(k).unwrap();
            assert!((v - closed[k - 1]).abs() < 1e-9, "k={k}: {v}");
        }
        // rounded values reported for the benchmark
        let rounded: Vec<f64> = (1..=4)
            .map(|k| (legendre_true_importance(k).unwrap() * 100.0).round() / 100.0)
            .collect();
        assert_eq!(rounded, vec![1.0, 1.5, 1.89, 2.23]);
    }

    #[test]
    fn endpoint_response_without_noise() {
        let spec = GeneratorSpec::legendre(1, 5, 0.0);
        assert_eq!(spec.noiseless_response(&[1.0, 1.0, 1.0, 1.0, 0.3]), 4.0);
    }

    #[test]
    fn legendre_response_variance() {
        // Var = 1/3 + 1/5 + 1/7 + 1/9 + 0.01 ≈ 0.797
        let expected = 1.0 / 3.0 + 1.0 / 5.0 + 1.0 / 7.0 + 1.0 / 9.0 + 0.01;
        let g = generate_legendre_dataset(200_000, 5, 0.1, 3).unwrap();
        let n = g.raw_y.len() as f64;
        let m = g.raw_y.sum() / n;
        let var = g.raw_y.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - expected).abs() < 0.01, "var {var} vs {expected}");
        assert!((expected - 0.797).abs() < 1e-3);
    }

    #[test]
    fn noise_column_is_independent() {
        let g = generate_legendre_dataset(1000, 5, 0.1, 11).unwrap();
        let x5 = g.raw_x.column(4).to_vec();
        assert!(corr(&x5, &g.raw_y.to_vec()).abs() < 0.1);
        assert_eq!(g.true_supports, vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_legendre_dataset(100, 5, 0.1, 7).unwrap();
        let b = generate_legendre_dataset(100, 5, 0.1, 7).unwrap();
        assert_eq!(a.raw_x, b.raw_x);
        assert_eq!(a.raw_y, b.raw_y);
        let c = generate_legendre_dataset(100, 5, 0.1, 8).unwrap();
        assert_ne!(a.raw_y, c.raw_y);
    }

    #[test]
    fn identity_correlation_gives_uncorrelated_columns() {
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let spec = GeneratorSpec {
            n_samples: 10_000,
            covariates: CovariateLaw::Gaussian { correlation: eye },
            components: vec![AdditiveTerm::new(vec![0], TermFn::Linear { slope: 1.0 })],
            noise_sd: 0.0,
            column_names: None,
        };
        let g = generate_additive_dataset(&spec, 5).unwrap();
        for i in 0..3 {
            for j in 0..i {
                let c = corr(&g.raw_x.column(i).to_vec(), &g.raw_x.column(j).to_vec());
                assert!(c.abs() < 0.05);
            }
        }
    }

    #[test]
    fn correlated_gaussian_reproduces_correlation() {
        let c = vec![vec![1.0, 0.6, -0.3], vec![0.6, 1.0, 0.1], vec![-0.3, 0.1, 1.0]];
        let spec = GeneratorSpec {
            n_samples: 20_000,
            covariates: CovariateLaw::Gaussian { correlation: c.clone() },
            components: vec![AdditiveTerm::new(vec![1], TermFn::Linear { slope: 1.0 })],
            noise_sd: 0.1,
            column_names: None,
        };
        let g = generate_additive_dataset(&spec, 9).unwrap();
        for i in 0..3 {
            for j in 0..i {
                let e = corr(&g.raw_x.column(i).to_vec(), &g.raw_x.column(j).to_vec());
                assert!((e - c[i][j]).abs() < 0.03);
            }
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let c = vec![vec![1.0, 0.9, 0.9], vec![0.9, 1.0, -0.9], vec![0.9, -0.9, 1.0]];
        assert!(matches!(
            correlation_factor(&c),
            Err(PradaError::NotPositiveSemiDefinite(_))
        ));
        // rank-deficient but PSD is fine
        let s = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(correlation_factor(&s).is_ok());
    }

    #[test]
    fn supports_follow_component_list() {
        let spec = GeneratorSpec {
            n_samples: 50,
            covariates: CovariateLaw::Uniform { dim: 4 },
            components: vec![
                AdditiveTerm::new(vec![2, 0], TermFn::Product { coefficient: 1.0 }),
                AdditiveTerm::new(vec![3], TermFn::Sine { frequency: 2.0, amplitude: 1.0 }),
            ],
            noise_sd: 0.0,
            column_names: None,
        };
        let g = generate_additive_dataset(&spec, 1).unwrap();
        assert_eq!(g.true_supports, vec![vec![0, 2], vec![3]]);
        let bad = GeneratorSpec {
            components: vec![AdditiveTerm::new(vec![9], TermFn::Linear { slope: 1.0 })],
            ..spec
        };
        assert!(generate_additive_dataset(&bad, 1).is_err());
    }
}
