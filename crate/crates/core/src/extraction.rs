//! Additive-model components read off a sparse network: grouping of hidden
//! nodes by input support, linear-term splitting, partial dependence and
//! saliency importance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{PradaError, Result};
use crate::network::{rows, NetworkParams};

/// One additive function: the hidden nodes sharing an input support plus any
/// linear terms split off from other functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveComponent {
    pub support: Vec<usize>,
    pub node_indices: Vec<usize>,
    #[serde(default)]
    pub linear_terms: BTreeMap<usize, f64>,
    pub complexity: usize,
}

impl AdditiveComponent {
    fn nonlinear(support: Vec<usize>, node_indices: Vec<usize>) -> Self {
        let complexity = node_indices.len();
        Self {
            support,
            node_indices,
            linear_terms: BTreeMap::new(),
            complexity,
        }
    }

    fn refresh_complexity(&mut self) {
        self.complexity = self.node_indices.len() + self.linear_terms.len();
    }

    pub fn is_linear_only(&self) -> bool {
        self.node_indices.is_empty()
    }

    /// Value at a full covariate vector (all `D` inputs).
    pub fn evaluate_row(&self, params: &NetworkParams, x: &[f64]) -> f64 {
        let mut out = 0.0;
        for &h in &self.node_indices {
            let mut z = params.input_biases()[h];
            for &d in &self.support {
                z += params.input_weight(h, d) * x[d];
            }
            out += params.output_weights()[h] * z.tanh();
        }
        for (&d, &slope) in &self.linear_terms {
            out += slope * x[d];
        }
        out
    }

    /// Analytic `∂f/∂x_d` at a full covariate vector.
    pub fn partial_derivative(&self, params: &NetworkParams, x: &[f64], d: usize) -> f64 {
        let mut g = self.linear_terms.get(&d).copied().unwrap_or(0.0);
        for &h in &self.node_indices {
            let w = params.input_weight(h, d);
            if w == 0.0 {
                continue;
            }
            let mut z = params.input_biases()[h];
            for &s in &self.support {
                z += params.input_weight(h, s) * x[s];
            }
            let a = z.tanh();
            g += params.output_weights()[h] * (1.0 - a * a) * w;
        }
        g
    }

    /// Display name such as `f(x1,x3)`.
    pub fn label(&self, column_names: &[String]) -> String {
        let names: Vec<&str> = self
            .support
            .iter()
            .map(|&d| column_names.get(d).map(String::as_str).unwrap_or("?"))
            .collect();
        format!("f({})", names.join(","))
    }
}

fn support_order(a: &[usize], b: &[usize]) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Groups live hidden nodes by their set of nonzero input weights.
///
/// Components are ordered by support size, then lexicographically.
pub fn group_nodes(params: &NetworkParams) -> Vec<AdditiveComponent> {
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for h in params.live_nodes() {
        let support: Vec<usize> = (0..params.inputs())
            .filter(|&d| params.input_weight(h, d) != 0.0)
            .collect();
        groups.entry(support).or_default().push(h);
    }
    let mut comps: Vec<AdditiveComponent> = groups
        .into_iter()
        .map(|(s, n)| AdditiveComponent::nonlinear(s, n))
        .collect();
    comps.sort_by(|a, b| support_order(&a.support, &b.support));
    comps
}

/// Component value at a point given over its support variables, in support order.
pub fn evaluate_component(
    component: &AdditiveComponent,
    params: &NetworkParams,
    x_support: &[f64],
) -> Result<f64> {
    if x_support.len() != component.support.len() {
        return Err(PradaError::DimensionMismatch(format!(
            "component over {} variables evaluated at {} values",
            component.support.len(),
            x_support.len()
        )));
    }
    let mut full = vec![0.0; params.inputs()];
    for (&d, &v) in component.support.iter().zip(x_support) {
        full[d] = v;
    }
    Ok(component.evaluate_row(params, &full))
}

/// Output bias plus the sum of all components.
pub fn additive_prediction(components: &[AdditiveComponent], params: &NetworkParams, x: &[f64]) -> f64 {
    params.output_bias() + components.iter().map(|c| c.evaluate_row(params, x)).sum::<f64>()
}

fn sample_variance(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Moves near-linear inputs out of their tanh nodes into linear terms.
///
/// For each component and support variable `d`, the analytic `∂f/∂x_d` is
/// evaluated on every row. If its sample variance is below `sigma2_max`, the
/// input weights of `d` in that component's nodes are set to zero, the mean
/// derivative becomes a linear term on `{d}`, and the mean change over the
/// data is absorbed into the output bias. Repeats until nothing changes.
///
/// Returns the updated network (same node indexing) and components.
pub fn split_linear_terms(
    components: &[AdditiveComponent],
    params: &NetworkParams,
    data: &Dataset,
    sigma2_max: f64,
) -> Result<(Vec<AdditiveComponent>, NetworkParams)> {
    if data.n_features() != params.inputs() {
        return Err(PradaError::DimensionMismatch(format!(
            "network has {} inputs, data has {} columns",
            params.inputs(),
            data.n_features()
        )));
    }
    if data.is_empty() {
        return Err(PradaError::EmptyDataset);
    }
    let mut params = params.clone();
    let mut comps = components.to_vec();
    let mut linear: BTreeMap<usize, f64> = BTreeMap::new();
    for c in &mut comps {
        for (d, s) in std::mem::take(&mut c.linear_terms) {
            *linear.entry(d).or_insert(0.0) += s;
        }
    }
    comps.retain(|c| !c.is_linear_only());

    loop {
        let mut changed = false;
        for c in &comps {
            let mut remove = Vec::new();
            for &d in &c.support {
                let derivs: Vec<f64> = rows(data).map(|x| c.partial_derivative(&params, x, d)).collect();
                let (mean, var) = sample_variance(&derivs);
                if var < sigma2_max {
                    remove.push((d, mean));
                }
            }
            if remove.is_empty() {
                continue;
            }
            changed = true;
            let before: Vec<f64> = rows(data).map(|x| c.evaluate_row(&params, x)).collect();
            for &(d, slope) in &remove {
                for &h in &c.node_indices {
                    params.set_input_weight(h, d, 0.0);
                }
                *linear.entry(d).or_insert(0.0) += slope;
            }
            let shift: f64 = rows(data)
                .zip(&before)
                .map(|(x, b)| {
                    let lin: f64 = remove.iter().map(|&(d, s)| s * x[d]).sum();
                    b - c.evaluate_row(&params, x) - lin
                })
                .sum::<f64>()
                / data.n_samples() as f64;
            *params.output_bias_mut() += shift;
        }
        if !changed {
            break;
        }
        // nodes whose whole support was removed are constants now
        params = params.zero_dead_nodes();
        comps = group_nodes(&params);
    }

    for (d, slope) in linear {
        match comps.iter_mut().find(|c| c.support == [d]) {
            Some(c) => {
                c.linear_terms.insert(d, slope);
            }
            None => {
                let mut c = AdditiveComponent::nonlinear(vec![d], vec![]);
                c.linear_terms.insert(d, slope);
                comps.push(c);
            }
        }
    }
    for c in &mut comps {
        c.refresh_complexity();
    }
    comps.sort_by(|a, b| support_order(&a.support, &b.support));
    Ok((comps, params))
}

/// Saliency importance `I_j = mean_i |∂f/∂x_j (X_i)|`, computed analytically.
pub fn variable_importance(params: &NetworkParams, data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(PradaError::EmptyDataset);
    }
    if data.n_features() != params.inputs() {
        return Err(PradaError::DimensionMismatch(format!(
            "network has {} inputs, data has {} columns",
            params.inputs(),
            data.n_features()
        )));
    }
    let mut imp = vec![0.0; params.inputs()];
    for x in rows(data) {
        for (acc, g) in imp.iter_mut().zip(params.input_gradient(x)?) {
            *acc += g.abs();
        }
    }
    let n = data.n_samples() as f64;
    Ok(imp.into_iter().map(|s| s / n).collect())
}

/// How the support variables other than the free one are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CoInputs {
    /// One curve per level, every co-input held at that level.
    Fixed { levels: Vec<f64> },
    /// Averaged over the co-input values of the data rows.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_points: usize,
    /// Grid interval; `None` spans the observed range of the free variable.
    pub range: Option<(f64, f64)>,
    pub co_inputs: CoInputs,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_points: 101,
            range: None,
            co_inputs: CoInputs::Fixed { levels: vec![-1.0, 1.0] },
        }
    }
}

/// One centered curve of a component along one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDependence {
    pub component_id: usize,
    pub variable: usize,
    /// Level of the co-inputs; `None` for one-variable components and marginal curves.
    pub fixed_level: Option<f64>,
    pub x: Vec<f64>,
    pub value: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn centered(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in &mut v {
        *x -= m;
    }
    v
}

/// Mean-centered curves of a component along `variable`, one per co-input setting.
pub fn partial_dependence_grid(
    component_id: usize,
    component: &AdditiveComponent,
    params: &NetworkParams,
    variable: usize,
    spec: &GridSpec,
    data: &Dataset,
) -> Result<Vec<PartialDependence>> {
    if !component.support.contains(&variable) {
        return Err(PradaError::UnknownVariable(variable));
    }
    if spec.n_points < 2 {
        return Err(PradaError::InvalidConfig("grid needs at least 2 points".into()));
    }
    let (lo, hi) = match spec.range {
        Some(r) => r,
        None => data.column_range(variable),
    };
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(PradaError::InvalidConfig(format!("bad grid range [{lo}, {hi}]")));
    }
    let grid = linspace(lo, hi, spec.n_points);
    let mut full = vec![0.0; params.inputs()];
    let one_var = component.support.len() == 1;
    let mut curve = |level: Option<f64>| -> PartialDependence {
        let values = grid
            .iter()
            .map(|&g| {
                for &d in &component.support {
                    full[d] = level.unwrap_or(0.0);
                }
                full[variable] = g;
                component.evaluate_row(params, &full)
            })
            .collect();
        PartialDependence {
            component_id,
            variable,
            fixed_level: level,
            x: grid.clone(),
            value: centered(values),
        }
    };
    if one_var {
        return Ok(vec![curve(None)]);
    }
    match &spec.co_inputs {
        CoInputs::Fixed { levels } => Ok(levels.iter().map(|&l| curve(Some(l))).collect()),
        CoInputs::Marginal => {
            if data.is_empty() {
                return Err(PradaError::EmptyDataset);
            }
            let n = data.n_samples() as f64;
            let values = grid
                .iter()
                .map(|&g| {
                    rows(data)
                        .map(|x| {
                            let mut row = x.to_vec();
                            row[variable] = g;
                            component.evaluate_row(params, &row)
                        })
                        .sum::<f64>()
                        / n
                })
                .collect();
            Ok(vec![PartialDependence {
                component_id,
                variable,
                fixed_level: None,
                x: grid,
                value: centered(values),
            }])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Derivative-variance threshold for linear splitting; `None` disables splitting.
    pub sigma2_max: Option<f64>,
    pub grid: GridSpec,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            sigma2_max: Some(0.01),
            grid: GridSpec::default(),
        }
    }
}

/// Everything read off one trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub column_names: Vec<String>,
    /// Network after dead-node cleanup and linear splitting; components index its nodes.
    pub params: NetworkParams,
    pub output_bias: f64,
    pub components: Vec<AdditiveComponent>,
    /// Saliency importance of the trained network, standardized scale.
    pub importance: Vec<f64>,
    pub grids: Vec<PartialDependence>,
    pub options: ExtractOptions,
}

impl ExtractionReport {
    pub fn predict(&self, x: &[f64]) -> f64 {
        additive_prediction(&self.components, &self.params, x)
    }

    /// Supports of all components.
    pub fn supports(&self) -> Vec<Vec<usize>> {
        self.components.iter().map(|c| c.support.clone()).collect()
    }

    /// Recomputes every grid from the stored parameters.
    pub fn recompute_grids(&self, data: &Dataset) -> Result<Vec<PartialDependence>> {
        build_grids(&self.components, &self.params, &self.options.grid, data)
    }
}

fn build_grids(
    components: &[AdditiveComponent],
    params: &NetworkParams,
    spec: &GridSpec,
    data: &Dataset,
) -> Result<Vec<PartialDependence>> {
    let mut out = Vec::new();
    for (i, c) in components.iter().enumerate() {
        for &d in &c.support {
            out.extend(partial_dependence_grid(i, c, params, d, spec, data)?);
        }
    }
    Ok(out)
}

/// Groups nodes, optionally splits linear terms, and evaluates importance and grids.
///
/// `data` should be the data the importance is averaged over (the test set in
/// the benchmark); it also sets linearity and grid ranges.
pub fn extract(params: &NetworkParams, data: &Dataset, options: &ExtractOptions) -> Result<ExtractionReport> {
    let importance = variable_importance(params, data)?;
    let cleaned = params.zero_dead_nodes();
    let grouped = group_nodes(&cleaned);
    let (components, net) = match options.sigma2_max {
        Some(s) => split_linear_terms(&grouped, &cleaned, data, s)?,
        None => (grouped, cleaned),
    };
    let grids = build_grids(&components, &net, &options.grid, data)?;
    Ok(ExtractionReport {
        column_names: data.column_names.clone(),
        output_bias: net.output_bias(),
        params: net,
        components,
        importance,
        grids,
        options: options.clone(),
    })
}
