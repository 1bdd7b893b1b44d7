//! Three-stage training (smooth Adam, adaptive-lasso Adam, proximal descent),
//! restarts, and the two baselines: uniform-weight lasso and node-gate pruning.

use std::str::FromStr;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{PradaError, Result};
use crate::network::NetworkParams;
use crate::optim::{
    compute_penalty_weights, proximal_update, soft_threshold, subgradient_lasso_step, AdamState,
    PenaltyWeights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub gamma: f64,
    /// Stage-2 penalty strength, the one user-facing penalty knob.
    pub lambda: f64,
    pub stage3_alpha: f64,
    pub stage3_lambda: f64,
    /// Adam step size for stages 1 and 2.
    pub step_size: f64,
    pub convergence_tol: f64,
    pub convergence_patience: usize,
    pub max_epochs_stage1: usize,
    pub max_epochs_stage2: usize,
    pub max_epochs_stage3: usize,
    pub n_restarts: usize,
    pub rng_seed: u64,
    /// Train network weights together with the gates in the node-gate baseline.
    pub dgr_joint: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_units: 50,
            gamma: 2.0,
            lambda: 1e-3,
            stage3_alpha: 1e-5,
            stage3_lambda: 1e-5,
            step_size: 1e-3,
            convergence_tol: 1e-5,
            convergence_patience: 10,
            max_epochs_stage1: 20_000,
            max_epochs_stage2: 20_000,
            max_epochs_stage3: 5_000,
            n_restarts: 5,
            rng_seed: 0,
            dgr_joint: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| PradaError::InvalidConfig(format!("bad value for {key}: {value:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PradaError::InvalidConfig(m));
        if self.hidden_units < 1 {
            return bad("hidden_units must be >= 1".into());
        }
        if self.n_restarts < 1 {
            return bad("n_restarts must be >= 1".into());
        }
        if self.convergence_patience < 1 {
            return bad("convergence_patience must be >= 1".into());
        }
        for (name, v) in [
            ("convergence_tol", self.convergence_tol),
            ("stage3_alpha", self.stage3_alpha),
            ("step_size", self.step_size),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("stage3_lambda", self.stage3_lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "hidden_units" => self.hidden_units = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "stage3_alpha" => self.stage3_alpha = parse(key, value)?,
            "stage3_lambda" => self.stage3_lambda = parse(key, value)?,
            "step_size" => self.step_size = parse(key, value)?,
            "convergence_tol" => self.convergence_tol = parse(key, value)?,
            "convergence_patience" => self.convergence_patience = parse(key, value)?,
            "max_epochs_stage1" => self.max_epochs_stage1 = parse(key, value)?,
            "max_epochs_stage2" => self.max_epochs_stage2 = parse(key, value)?,
            "max_epochs_stage3" => self.max_epochs_stage3 = parse(key, value)?,
            "n_restarts" => self.n_restarts = parse(key, value)?,
            "rng_seed" => self.rng_seed = parse(key, value)?,
            "dgr_joint" => self.dgr_joint = parse(key, value)?,
            other => {
                return Err(PradaError::InvalidConfig(format!("unknown config key: {other}")))
            }
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of the defaults.
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PradaError::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "hidden_units={}\ngamma={}\nlambda={}\nstage3_alpha={}\nstage3_lambda={}\nstep_size={}\n\
             convergence_tol={}\nconvergence_patience={}\nmax_epochs_stage1={}\nmax_epochs_stage2={}\n\
             max_epochs_stage3={}\nn_restarts={}\nrng_seed={}\ndgr_joint={}\n",
            self.hidden_units,
            self.gamma,
            self.lambda,
            self.stage3_alpha,
            self.stage3_lambda,
            self.step_size,
            self.convergence_tol,
            self.convergence_patience,
            self.max_epochs_stage1,
            self.max_epochs_stage2,
            self.max_epochs_stage3,
            self.n_restarts,
            self.rng_seed,
            self.dgr_joint
        )
    }

    /// Penalty strength used in the proximal stage.
    ///
    /// With adaptive weights the small fixed constant suffices because weights
    /// pushed near zero in stage 2 carry huge multipliers. Uniform weights
    /// (`gamma == 0`) have no such amplification, so the stage-2 strength is kept.
    pub fn effective_stage3_lambda(&self) -> f64 {
        if self.gamma == 0.0 {
            self.lambda
        } else {
            self.stage3_lambda
        }
    }

    /// Step size of the proximal stage.
    ///
    /// Uniform weights need the Adam step size for soft-thresholding at the
    /// stage-2 strength to reach parameters left oscillating at that scale.
    pub fn effective_stage3_alpha(&self) -> f64 {
        if self.gamma == 0.0 {
            self.step_size
        } else {
            self.stage3_alpha
        }
    }
}

/// Relative improvement of the running best loss between consecutive epochs.
fn relative_improvement(prev_best: f64, best: f64) -> f64 {
    if prev_best == 0.0 {
        0.0
    } else {
        (prev_best - best) / prev_best.abs()
    }
}

/// True iff the running best loss improved by less than `tol` (relative) in each
/// of the last `patience` epochs.
pub fn has_converged(loss_history: &[f64], tol: f64, patience: usize) -> bool {
    let patience = patience.max(1);
    if loss_history.len() <= patience {
        return false;
    }
    let mut best = loss_history[0];
    let mut flat_run = 0;
    for &l in &loss_history[1..] {
        let new_best = best.min(l);
        if relative_improvement(best, new_best) < tol {
            flat_run += 1;
        } else {
            flat_run = 0;
        }
        best = new_best;
    }
    flat_run >= patience
}

/// Incremental form of [`has_converged`].
#[derive(Debug, Clone)]
struct ConvergenceMonitor {
    best: f64,
    flat_run: usize,
    tol: f64,
    patience: usize,
}

impl ConvergenceMonitor {
    fn new(tol: f64, patience: usize) -> Self {
        Self {
            best: f64::INFINITY,
            flat_run: 0,
            tol,
            patience: patience.max(1),
        }
    }

    fn push(&mut self, loss: f64) -> bool {
        if self.best.is_infinite() {
            self.best = loss;
            return false;
        }
        let new_best = self.best.min(loss);
        if relative_improvement(self.best, new_best) < self.tol {
            self.flat_run += 1;
        } else {
            self.flat_run = 0;
        }
        self.best = new_best;
        self.flat_run >= self.patience
    }
}

/// Applies the convergence rule to means over fixed-size blocks of epochs.
#[derive(Debug, Clone)]
struct BlockMonitor {
    inner: ConvergenceMonitor,
    block: usize,
    sum: f64,
    count: usize,
}

impl BlockMonitor {
    /// `tol` is a per-epoch rate; each block must improve by `tol · block`.
    fn new(tol: f64, patience: usize, block: usize) -> Self {
        Self {
            inner: ConvergenceMonitor::new(tol * block as f64, patience),
            block,
            sum: 0.0,
            count: 0,
        }
    }

    fn push(&mut self, objective: f64) -> bool {
        self.sum += objective;
        self.count += 1;
        if self.count < self.block {
            return false;
        }
        let mean = self.sum / self.block as f64;
        self.sum = 0.0;
        self.count = 0;
        self.inner.push(mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub epochs: usize,
    pub converged: bool,
    pub final_objective: f64,
}

/// Stage 1: unpenalized Adam until convergence.
pub fn train_smooth(params: &mut NetworkParams, data: &Dataset, cfg: &TrainConfig) -> Result<StageReport> {
    let mut state = AdamState::with_step_size(params.len(), cfg.step_size);
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_tol, cfg.convergence_patience);
    let mut last = f64::NAN;
    for epoch in 0..cfg.max_epochs_stage1 {
        let (loss, grad) = params.loss_and_gradient(data, None)?;
        last = loss;
        if monitor.push(loss) {
            return Ok(StageReport { epochs: epoch, converged: true, final_objective: loss });
        }
        state.update(params.as_mut_slice(), grad.as_slice(), None)?;
    }
    Ok(StageReport {
        epochs: cfg.max_epochs_stage1,
        converged: false,
        final_objective: last,
    })
}

/// Stage 2: Adam on the adaptive-lasso subgradient until convergence.
///
/// The subgradient objective oscillates from epoch to epoch, so the convergence
/// rule is applied to means over blocks of [`SUBGRADIENT_BLOCK`] epochs, with the
/// tolerance scaled to the same per-epoch rate.
pub fn train_penalized(
    params: &mut NetworkParams,
    data: &Dataset,
    lambda: f64,
    weights: &PenaltyWeights,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    let mut state = AdamState::with_step_size(params.len(), cfg.step_size);
    let mut monitor = BlockMonitor::new(cfg.convergence_tol, cfg.convergence_patience, SUBGRADIENT_BLOCK);
    let mut last = f64::NAN;
    for epoch in 0..cfg.max_epochs_stage2 {
        let obj = subgradient_lasso_step(params, data, lambda, weights, &mut state)?;
        last = obj;
        if monitor.push(obj) {
            return Ok(StageReport { epochs: epoch + 1, converged: true, final_objective: obj });
        }
    }
    Ok(StageReport {
        epochs: cfg.max_epochs_stage2,
        converged: false,
        final_objective: last,
    })
}

/// Epochs averaged per convergence check in the subgradient stage.
pub const SUBGRADIENT_BLOCK: usize = 100;

/// Stage 3: proximal gradient descent with re-computed adaptive weights.
pub fn train_proximal(
    params: &mut NetworkParams,
    data: &Dataset,
    lambda: f64,
    alpha: f64,
    weights: &PenaltyWeights,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    let thresholds: Vec<f64> = weights.weights.iter().map(|w| lambda * w).collect();
    // frozen links start at zero
    for (t, &f) in params.as_mut_slice().iter_mut().zip(&weights.frozen) {
        if f {
            *t = 0.0;
        }
    }
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_tol, cfg.convergence_patience);
    let mut last = f64::NAN;
    for epoch in 0..cfg.max_epochs_stage3 {
        let (loss, grad) = params.loss_and_gradient(data, Some(&weights.frozen))?;
        last = loss + lambda * weights.weighted_l1(params.as_slice())?;
        if monitor.push(last) {
            return Ok(StageReport { epochs: epoch, converged: true, final_objective: last });
        }
        proximal_update(
            params.as_mut_slice(),
            grad.as_slice(),
            alpha,
            &thresholds,
            &weights.penalized,
            &weights.frozen,
        )?;
    }
    Ok(StageReport {
        epochs: cfg.max_epochs_stage3,
        converged: false,
        final_objective: last,
    })
}

/// One full training run from a given initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub params: NetworkParams,
    pub train_mse: f64,
    pub test_mse: f64,
    pub stages: Vec<StageReport>,
}

impl RunResult {
    pub fn converged(&self) -> bool {
        self.stages.iter().all(|s| s.converged)
    }
}

/// Best run among restarts plus every restart's test error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub test_mse: f64,
    pub train_mse: f64,
    pub converged: bool,
    pub best_restart: usize,
    pub restart_test_mse: Vec<f64>,
}

fn check_inputs(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if train.n_features() != test.n_features() {
        return Err(PradaError::DimensionMismatch(format!(
            "train has {} columns, test has {}",
            train.n_features(),
            test.n_features()
        )));
    }
    if train.is_empty() || test.is_empty() {
        return Err(PradaError::EmptyDataset);
    }
    Ok(())
}

/// Seed of restart `r`.
pub fn restart_seed(cfg: &TrainConfig, r: usize) -> u64 {
    cfg.rng_seed.wrapping_add(r as u64)
}

/// Stage-1 result of one restart: the smooth network before any penalty.
#[derive(Debug, Clone)]
pub struct SmoothStart {
    pub params: NetworkParams,
    pub report: StageReport,
}

/// Runs stage 1 for every restart. Stage 1 does not depend on `lambda` or
/// `gamma`, so the result can be shared by many penalized continuations.
pub fn smooth_starts(train: &Dataset, cfg: &TrainConfig) -> Result<Vec<SmoothStart>> {
    cfg.validate()?;
    (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg, r));
            let mut params = NetworkParams::init(cfg.hidden_units, train.n_features(), &mut rng)?;
            let report = train_smooth(&mut params, train, cfg)?;
            Ok(SmoothStart { params, report })
        })
        .collect()
}

/// Stages 2 and 3 from a smooth start.
pub fn continue_penalized(
    start: &SmoothStart,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<RunResult> {
    let mut params = start.params.clone();
    let w2 = compute_penalty_weights(&params, cfg.gamma)?;
    let s2 = train_penalized(&mut params, train, cfg.lambda, &w2, cfg)?;
    let w3 = compute_penalty_weights(&params, cfg.gamma)?;
    let s3 = train_proximal(
        &mut params,
        train,
        cfg.effective_stage3_lambda(),
        cfg.effective_stage3_alpha(),
        &w3,
        cfg,
    )?;
    Ok(RunResult {
        train_mse: params.mse_loss(train)?,
        test_mse: params.mse_loss(test)?,
        params,
        stages: vec![start.report.clone(), s2, s3],
    })
}

/// Picks the restart with the lowest test error (first one on ties).
pub fn select_best(runs: Vec<RunResult>) -> TrainOutcome {
    let restart_test_mse: Vec<f64> = runs.iter().map(|r| r.test_mse).collect();
    let best_restart = restart_test_mse
        .iter()
        .enumerate()
        .fold(0, |b, (i, &m)| if m < restart_test_mse[b] { i } else { b });
    let best = runs.into_iter().nth(best_restart).expect("at least one restart");
    let converged = best.converged();
    if !converged {
        warn!(
            "training hit the epoch cap before convergence (epochs per stage: {:?})",
            best.stages.iter().map(|s| s.epochs).collect::<Vec<_>>()
        );
    }
    TrainOutcome {
        params: best.params,
        test_mse: best.test_mse,
        train_mse: best.train_mse,
        converged,
        best_restart,
        restart_test_mse,
    }
}

/// Finishes stages 2 and 3 from precomputed smooth starts and selects the best restart.
pub fn train_from_starts(
    starts: &[SmoothStart],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_inputs(train, test, cfg)?;
    let runs = starts
        .par_iter()
        .map(|s| continue_penalized(s, train, test, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_best(runs))
}

/// Full three-stage training with restarts; returns the lowest-test-error run.
pub fn train_prada(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_inputs(train, test, cfg)?;
    let starts = smooth_starts(train, cfg)?;
    train_from_starts(&starts, train, test, cfg)
}

/// The same staging with uniform penalty weights (`gamma = 0`).
pub fn train_standard_lasso(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig { gamma: 0.0, ..cfg.clone() };
    train_prada(train, test, &cfg)
}

/// Network with a multiplicative gate on each hidden node's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedNetworkParams {
    pub network: NetworkParams,
    pub gates: Vec<f64>,
}

impl GatedNetworkParams {
    pub fn new(network: NetworkParams) -> Self {
        let gates = vec![1.0; network.hidden()];
        Self { network, gates }
    }

    /// Equivalent plain network with each output weight scaled by its gate.
    pub fn effective(&self) -> NetworkParams {
        let mut p = self.network.clone();
        for (v, g) in p.output_weights_mut().iter_mut().zip(&self.gates) {
            *v *= g;
        }
        p
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.effective().forward(x)
    }

    pub fn live_nodes(&self) -> usize {
        self.gates.iter().filter(|&&g| g != 0.0).count()
    }

    fn gate_gradient(&self, data: &Dataset) -> Result<(f64, NetworkParams, Vec<f64>)> {
        let eff = self.effective();
        let (loss, geff) = eff.loss_and_gradient(data, None)?;
        let vr = eff.output_weights_range();
        let gv = &geff.as_slice()[vr.clone()];
        let gates: Vec<f64> = gv
            .iter()
            .zip(self.network.output_weights())
            .map(|(g, v)| g * v)
            .collect();
        // chain rule back to the raw output weights
        let mut gnet = geff.clone();
        for (k, g) in gnet.as_mut_slice()[vr].iter_mut().enumerate() {
            *g *= self.gates[k];
        }
        Ok((loss, gnet, gates))
    }
}

/// Result of the node-gate baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedOutcome {
    pub params: GatedNetworkParams,
    pub test_mse: f64,
    pub train_mse: f64,
    pub converged: bool,
    pub best_restart: usize,
    pub restart_test_mse: Vec<f64>,
}

/// Lasso on per-node gates after smooth training: subgradient Adam, then
/// proximal descent, so whole nodes are removed but links never are.
pub fn continue_gated(
    start: &SmoothStart,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(GatedNetworkParams, f64, f64, bool)> {
    let mut gp = GatedNetworkParams::new(start.params.clone());
    let h = gp.gates.len();
    let lambda = cfg.lambda;

    // stage 2: Adam on gates (and weights when joint)
    let mut gate_state = AdamState::with_step_size(h, cfg.step_size);
    let mut net_state = AdamState::with_step_size(gp.network.len(), cfg.step_size);
    let mut monitor = BlockMonitor::new(cfg.convergence_tol, cfg.convergence_patience, SUBGRADIENT_BLOCK);
    let mut converged2 = false;
    for _ in 0..cfg.max_epochs_stage2 {
        let (loss, gnet, mut ggate) = gp.gate_gradient(train)?;
        let l1: f64 = gp.gates.iter().map(|g| g.abs()).sum();
        for (gg, &g) in ggate.iter_mut().zip(&gp.gates) {
            *gg += lambda * if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 };
        }
        if monitor.push(loss + lambda * l1) {
            converged2 = true;
            break;
        }
        gate_state.update(&mut gp.gates, &ggate, None)?;
        if cfg.dgr_joint {
            net_state.update(gp.network.as_mut_slice(), gnet.as_slice(), None)?;
        }
    }

    // stage 3: proximal descent on gates with the same penalty strength
    let alpha = cfg.step_size;
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_tol, cfg.convergence_patience);
    let mut converged3 = false;
    for _ in 0..cfg.max_epochs_stage3 {
        let (loss, gnet, ggate) = gp.gate_gradient(train)?;
        let l1: f64 = gp.gates.iter().map(|g| g.abs()).sum();
        if monitor.push(loss + lambda * l1) {
            converged3 = true;
            break;
        }
        for (g, gg) in gp.gates.iter_mut().zip(&ggate) {
            *g = soft_threshold(*g - alpha * gg, alpha * lambda);
        }
        if cfg.dgr_joint {
            for (t, g) in gp.network.as_mut_slice().iter_mut().zip(gnet.as_slice()) {
                *t -= alpha * g;
            }
        }
    }
    let eff = gp.effective();
    Ok((
        gp,
        eff.mse_loss(train)?,
        eff.mse_loss(test)?,
        start.report.converged && converged2 && converged3,
    ))
}

/// Node-gate pruning baseline with restarts.
pub fn train_dgr(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<GatedOutcome> {
    check_inputs(train, test, cfg)?;
    let starts = smooth_starts(train, cfg)?;
    dgr_from_starts(&starts, train, test, cfg)
}

pub fn dgr_from_starts(
    starts: &[SmoothStart],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<GatedOutcome> {
    check_inputs(train, test, cfg)?;
    let runs = starts
        .par_iter()
        .map(|s| continue_gated(s, train, test, cfg))
        .collect::<Result<Vec<_>>>()?;
    let restart_test_mse: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let best_restart = restart_test_mse
        .iter()
        .enumerate()
        .fold(0, |b, (i, &m)| if m < restart_test_mse[b] { i } else { b });
    let (params, train_mse, test_mse, converged) =
        runs.into_iter().nth(best_restart).expect("at least one restart");
    Ok(GatedOutcome {
        params,
        test_mse,
        train_mse,
        converged,
        best_restart,
        restart_test_mse,
    })
}
