//! One-hidden-layer tanh regression network.
//!
//! Parameters are stored in one flat buffer laid out as
//! `[input weights (H×D, row-major) | input biases (H) | output weights (H) | output bias]`,
//! so optimizers can treat them as a single vector. Input and output weights
//! form the penalized vector; biases are never penalized.

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{PradaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsRepr", try_from = "ParamsRepr")]
pub struct NetworkParams {
    hidden: usize,
    inputs: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    input_weights: Vec<Vec<f64>>,
    input_biases: Vec<f64>,
    output_weights: Vec<f64>,
    output_bias: f64,
}

impl From<NetworkParams> for ParamsRepr {
    fn from(p: NetworkParams) -> Self {
        ParamsRepr {
            input_weights: (0..p.hidden).map(|h| p.input_row(h).to_vec()).collect(),
            input_biases: p.input_biases().to_vec(),
            output_weights: p.output_weights().to_vec(),
            output_bias: p.output_bias(),
        }
    }
}

impl TryFrom<ParamsRepr> for NetworkParams {
    type Error = PradaError;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        NetworkParams::from_parts(&r.input_weights, &r.input_biases, &r.output_weights, r.output_bias)
    }
}

impl NetworkParams {
    pub fn zeros(hidden: usize, inputs: usize) -> Result<Self> {
        if hidden == 0 || inputs == 0 {
            return Err(PradaError::InvalidConfig(format!(
                "network needs H >= 1 and D >= 1, got H={hidden}, D={inputs}"
            )));
        }
        Ok(Self {
            hidden,
            inputs,
            values: vec![0.0; hidden * inputs + 2 * hidden + 1],
        })
    }

    pub fn from_parts(
        input_weights: &[Vec<f64>],
        input_biases: &[f64],
        output_weights: &[f64],
        output_bias: f64,
    ) -> Result<Self> {
        let hidden = input_weights.len();
        let inputs = input_weights.first().map_or(0, Vec::len);
        let mut p = Self::zeros(hidden, inputs)?;
        if input_weights.iter().any(|r| r.len() != inputs)
            || input_biases.len() != hidden
            || output_weights.len() != hidden
        {
            return Err(PradaError::DimensionMismatch(
                "inconsistent network parameter shapes".into(),
            ));
        }
        for (h, row) in input_weights.iter().enumerate() {
            p.input_row_mut(h).copy_from_slice(row);
        }
        p.input_biases_mut().copy_from_slice(input_biases);
        p.output_weights_mut().copy_from_slice(output_weights);
        *p.output_bias_mut() = output_bias;
        if p.values.iter().any(|v| !v.is_finite()) {
            return Err(PradaError::NonFinite("network parameters".into()));
        }
        Ok(p)
    }

    /// Fan-in scaled uniform initialization; the output bias starts at zero.
    pub fn init<R: Rng + ?Sized>(hidden: usize, inputs: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(hidden, inputs)?;
        let a_in = 1.0 / (inputs as f64).sqrt();
        let a_out = 1.0 / (hidden as f64).sqrt();
        for v in &mut p.values[..hidden * inputs + hidden] {
            *v = rng.random_range(-a_in..=a_in);
        }
        for v in p.output_weights_mut() {
            *v = rng.random_range(-a_out..=a_out);
        }
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Parameters of the same shape with every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden,
            inputs: self.inputs,
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.hidden == other.hidden && self.inputs == other.inputs
    }

    pub fn input_weights_range(&self) -> Range<usize> {
        0..self.hidden * self.inputs
    }

    pub fn input_biases_range(&self) -> Range<usize> {
        let s = self.hidden * self.inputs;
        s..s + self.hidden
    }

    pub fn output_weights_range(&self) -> Range<usize> {
        let s = self.hidden * self.inputs + self.hidden;
        s..s + self.hidden
    }

    pub fn output_bias_index(&self) -> usize {
        self.values.len() - 1
    }

    /// Whether flat index `i` belongs to the penalized vector (a weight, not a bias).
    pub fn is_penalized(&self, i: usize) -> bool {
        self.input_weights_range().contains(&i) || self.output_weights_range().contains(&i)
    }

    pub fn input_weights(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.hidden, self.inputs), &self.values[self.input_weights_range()])
            .expect("shape matches buffer")
    }

    pub fn input_row(&self, h: usize) -> &[f64] {
        &self.values[h * self.inputs..(h + 1) * self.inputs]
    }

    pub fn input_row_mut(&mut self, h: usize) -> &mut [f64] {
        let d = self.inputs;
        &mut self.values[h * d..(h + 1) * d]
    }

    pub fn input_weight(&self, h: usize, d: usize) -> f64 {
        self.values[h * self.inputs + d]
    }

    pub fn set_input_weight(&mut self, h: usize, d: usize, w: f64) {
        self.values[h * self.inputs + d] = w;
    }

    pub fn input_biases(&self) -> &[f64] {
        &self.values[self.input_biases_range()]
    }

    pub fn input_biases_mut(&mut self) -> &mut [f64] {
        let r = self.input_biases_range();
        &mut self.values[r]
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.values[self.output_weights_range()]
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let r = self.output_weights_range();
        &mut self.values[r]
    }

    pub fn output_bias(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn output_bias_mut(&mut self) -> &mut f64 {
        self.values.last_mut().expect("nonempty")
    }

    /// A node is dead when its output weight is zero or all its input weights are zero.
    pub fn is_dead(&self, h: usize) -> bool {
        self.output_weights()[h] == 0.0 || self.input_row(h).iter().all(|&w| w == 0.0)
    }

    pub fn live_nodes(&self) -> Vec<usize> {
        (0..self.hidden).filter(|&h| !self.is_dead(h)).collect()
    }

    /// Number of penalized parameters that are not exactly zero.
    pub fn count_nonzero_weights(&self) -> usize {
        self.input_weights_range()
            .chain(self.output_weights_range())
            .filter(|&i| self.values[i] != 0.0)
            .count()
    }

    /// Number of penalized parameters that are exactly zero.
    pub fn count_zero_weights(&self) -> usize {
        self.hidden * (self.inputs + 1) - self.count_nonzero_weights()
    }

    /// Input weights and output weight of every dead node set to exactly zero,
    /// with any constant contribution `v·tanh(b)` folded into the output bias.
    pub fn zero_dead_nodes(&self) -> Self {
        let mut p = self.clone();
        for h in 0..self.hidden {
            if !self.is_dead(h) {
                continue;
            }
            let v = self.output_weights()[h];
            if v != 0.0 {
                *p.output_bias_mut() += v * self.input_biases()[h].tanh();
            }
            p.input_row_mut(h).fill(0.0);
            p.output_weights_mut()[h] = 0.0;
            p.input_biases_mut()[h] = 0.0;
        }
        p
    }

    /// A smaller network containing only the live nodes.
    ///
    /// Nodes with zero output weight are dropped exactly. Nodes with an all-zero
    /// input row are constant, and their value is folded into the output bias.
    pub fn without_dead_nodes(&self) -> Self {
        let live = self.live_nodes();
        let mut bias = self.output_bias();
        for h in 0..self.hidden {
            let v = self.output_weights()[h];
            if self.is_dead(h) && v != 0.0 {
                bias += v * self.input_biases()[h].tanh();
            }
        }
        if live.is_empty() {
            let mut p = Self::zeros(1, self.inputs).expect("valid shape");
            *p.output_bias_mut() = bias;
            return p;
        }
        let rows: Vec<Vec<f64>> = live.iter().map(|&h| self.input_row(h).to_vec()).collect();
        let b: Vec<f64> = live.iter().map(|&h| self.input_biases()[h]).collect();
        let v: Vec<f64> = live.iter().map(|&h| self.output_weights()[h]).collect();
        Self::from_parts(&rows, &b, &v, bias).expect("shapes derived from a valid network")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs {
            return Err(PradaError::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn pre_activation(&self, h: usize, x: &[f64]) -> f64 {
        let row = self.input_row(h);
        let mut z = self.input_biases()[h];
        for (w, xi) in row.iter().zip(x) {
            z += w * xi;
        }
        z
    }

    #[inline]
    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let v = self.output_weights();
        let mut out = self.output_bias();
        for (h, &vh) in v.iter().enumerate() {
            out += vh * self.pre_activation(h, x).tanh();
        }
        out
    }

    /// Prediction `c + Σ_h v_h·tanh(b_h + w_h·x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub fn forward_view(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        match x.as_slice() {
            Some(s) => self.forward(s),
            None => self.forward(&x.to_vec()),
        }
    }

    /// Predictions for every row of `data`.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        Ok(rows(data).map(|x| self.forward_unchecked(x)).collect())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.n_features() != self.inputs {
            return Err(PradaError::DimensionMismatch(format!(
                "network expects {} inputs, dataset has {}",
                self.inputs,
                data.n_features()
            )));
        }
        Ok(())
    }

    /// Mean squared error over the dataset.
    pub fn mse_loss(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(PradaError::EmptyDataset);
        }
        self.check_data(data)?;
        let sse: f64 = rows(data)
            .zip(data.y.iter())
            .map(|(x, &y)| {
                let r = self.forward_unchecked(x) - y;
                r * r
            })
            .sum();
        Ok(sse / data.n_samples() as f64)
    }

    /// Exact gradient of the MSE with respect to every parameter.
    pub fn loss_gradient(&self, data: &Dataset) -> Result<NetworkParams> {
        self.loss_and_gradient(data, None).map(|(_, g)| g)
    }

    /// MSE and its gradient in one pass.
    ///
    /// When `frozen` is given (one flag per flat parameter, zero-valued where set),
    /// nodes with a frozen output weight and frozen input links are skipped; their
    /// gradient entries are left at zero.
    pub fn loss_and_gradient(
        &self,
        data: &Dataset,
        frozen: Option<&[bool]>,
    ) -> Result<(f64, NetworkParams)> {
        if data.is_empty() {
            return Err(PradaError::EmptyDataset);
        }
        self.check_data(data)?;
        let (hn, dn) = (self.hidden, self.inputs);
        let vr = self.output_weights_range();

        // Active nodes and, per node, their active input links.
        let mut nodes: Vec<(usize, Vec<usize>)> = Vec::with_capacity(hn);
        for h in 0..hn {
            match frozen {
                Some(f) if f[vr.start + h] => continue,
                Some(f) => nodes.push((h, (0..dn).filter(|&d| !f[h * dn + d]).collect())),
                None => nodes.push((h, (0..dn).collect())),
            }
        }

        let w = &self.values;
        let b = self.input_biases();
        let v = self.output_weights();
        let mut grad = self.zeros_like();
        let scale = 2.0 / data.n_samples() as f64;
        let mut act = vec![0.0; nodes.len()];
        let mut sse = 0.0;
        let bias_start = self.input_biases_range().start;
        let c_idx = self.output_bias_index();

        for (x, &y) in rows(data).zip(data.y.iter()) {
            let mut pred = self.output_bias();
            for (k, (h, links)) in nodes.iter().enumerate() {
                let mut z = b[*h];
                let row = &w[h * dn..(h + 1) * dn];
                for &d in links {
                    z += row[d] * x[d];
                }
                let a = z.tanh();
                act[k] = a;
                pred += v[*h] * a;
            }
            let r = pred - y;
            sse += r * r;
            let g = scale * r;
            let gv = grad.values.as_mut_slice();
            gv[c_idx] += g;
            for (k, (h, links)) in nodes.iter().enumerate() {
                let a = act[k];
                gv[vr.start + h] += g * a;
                let delta = g * v[*h] * (1.0 - a * a);
                gv[bias_start + h] += delta;
                let grow = &mut gv[h * dn..(h + 1) * dn];
                for &d in links {
                    grow[d] += delta * x[d];
                }
            }
        }
        let loss = sse / data.n_samples() as f64;
        if !loss.is_finite() || grad.values.iter().any(|g| !g.is_finite()) {
            return Err(PradaError::NonFinite("loss gradient".into()));
        }
        Ok((loss, grad))
    }

    /// Analytic input gradient ∂f/∂x at `x`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut g = vec![0.0; self.inputs];
        for h in 0..self.hidden {
            let vh = self.output_weights()[h];
            if vh == 0.0 {
                continue;
            }
            let a = self.pre_activation(h, x).tanh();
            let s = vh * (1.0 - a * a);
            for (gd, w) in g.iter_mut().zip(self.input_row(h)) {
                *gd += s * w;
            }
        }
        Ok(g)
    }
}

/// Row slices of a dataset's covariate matrix.
pub(crate) fn rows(data: &Dataset) -> impl Iterator<Item = &[f64]> + '_ {
    let d = data.n_features();
    match data.x.as_slice() {
        Some(s) => s.chunks_exact(d.max(1)),
        None => panic!("dataset covariates must be in standard layout"),
    }
}
