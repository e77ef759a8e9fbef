//! Importance-aware fusion of the two expert score maps.
//!
//! A selector turns each point's normalized score pair into simplex weights, and a
//! predictor classifies the weighted pair. Channel 0 is the 3D expert (X₁),
//! channel 1 the 2D expert (X₂).

mod baseline;
mod calibrate;

pub use baseline::{BaselineFuser, FusionStrategy, LinearFuser};
pub use calibrate::{compute_baseline_b, fit_logistic, BaselineConstant, Calibration};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy_grad, cross_entropy_rows, entropy_rows, Activation, AdamWConfig, AdamWState, Gradients, LrSchedule,
    Mlp, NetCheckpoint, Trace,
};
use crate::sdf::DIVERGENCE_PATIENCE;

/// Floor applied to standard deviations during normalization.
pub const STD_FLOOR: f64 = 1e-6;
const LOG_FLOOR: f64 = crate::nn::loss::PROB_FLOOR;

/// Per-channel z-normalization statistics, fitted on training rows only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl NormStats {
    pub fn fit(x1: &[f64], x2: &[f64]) -> Result<Self> {
        if x1.is_empty() || x1.len() != x2.len() {
            return Err(Error::DimensionMismatch { expected: x1.len(), got: x2.len() });
        }
        let stat = |x: &[f64]| {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt().max(STD_FLOOR))
        };
        let (m1, s1) = stat(x1);
        let (m2, s2) = stat(x2);
        Ok(NormStats { mean: [m1, m2], std: [s1, s2] })
    }

    pub fn identity() -> Self {
        NormStats { mean: [0.0; 2], std: [1.0; 2] }
    }

    /// Normalized `(N, 2)` rows, flattened.
    pub fn apply(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        if x1.len() != x2.len() {
            return Err(Error::DimensionMismatch { expected: x1.len(), got: x2.len() });
        }
        let mut rows = Vec::with_capacity(2 * x1.len());
        for (a, b) in x1.iter().zip(x2) {
            rows.push((a - self.mean[0]) / self.std[0]);
            rows.push((b - self.mean[1]) / self.std[1]);
        }
        Ok(rows)
    }
}

/// Normalized score rows with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBatch {
    /// Flat `(N, 2)`.
    pub rows: Vec<f64>,
    pub labels: Vec<u8>,
}

impl FusionBatch {
    pub fn new(rows: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != 2 * labels.len() {
            return Err(Error::DimensionMismatch { expected: 2 * labels.len(), got: rows.len() });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("fusion rows must be finite".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("fusion labels must be 0 or 1".into()));
        }
        Ok(FusionBatch { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.rows.chunks(2).map(|r| r[c]).collect()
    }

    fn select(&self, idx: &[usize]) -> FusionBatch {
        FusionBatch {
            rows: idx.iter().flat_map(|&i| [self.rows[2 * i], self.rows[2 * i + 1]]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Which losses update which network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientRouting {
    /// L_p updates the predictor only, λ·L_s the selector only.
    Separate,
    /// Both networks follow the gradient of L_p + λ·L_s.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IafConfig {
    pub margin: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub selector_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    pub routing: GradientRouting,
    /// Uniform random subsample of training rows when there are more.
    pub max_rows: Option<usize>,
    /// Leading epochs in which only the predictor is updated.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for IafConfig {
    fn default() -> Self {
        IafConfig {
            margin: 0.1,
            lambda: 1.0,
            epochs: 150,
            batch_size: 32,
            lr: 0.01,
            weight_decay: 1e-2,
            selector_hidden: vec![16, 16],
            predictor_hidden: vec![16, 16],
            routing: GradientRouting::Separate,
            max_rows: None,
            warmup_epochs: 1,
            seed: 0,
        }
    }
}

impl IafConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("margin and lambda must be non-negative".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Selector and predictor networks.
#[derive(Debug, Clone, PartialEq)]
pub struct IafNets {
    pub selector: Mlp,
    pub predictor: Mlp,
}

fn net(hidden: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
    let mut dims = vec![2];
    dims.extend_from_slice(hidden);
    dims.push(2);
    Mlp::new(&dims, Activation::Tanh, Activation::Softmax, rng)
}

impl IafNets {
    /// Random init; the selector's last layer is zeroed so it starts at (0.5, 0.5).
    pub fn new(selector_hidden: &[usize], predictor_hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut selector = net(selector_hidden, &mut rng);
        selector.zero_last_layer();
        let predictor = net(predictor_hidden, &mut rng);
        IafNets { selector, predictor }
    }

    pub fn selector_forward(&self, rows: &[f64]) -> Result<Vec<f64>> {
        Ok(self.selector.forward(rows, rows.len() / 2)?.outputs.pop().unwrap())
    }

    /// Class probabilities and anomaly scores (class-1 probability) for given weights.
    pub fn predictor_forward(&self, rows: &[f64], s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if rows.len() != s.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: s.len() });
        }
        let xs: Vec<f64> = rows.iter().zip(s).map(|(x, w)| x * w).collect();
        let probs = self.predictor.forward(&xs, rows.len() / 2)?.outputs.pop().unwrap();
        let a = probs.chunks(2).map(|p| p[1]).collect();
        Ok((probs, a))
    }

    /// Fused anomaly scores of normalized rows.
    pub fn scores(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let s = self.selector_forward(rows)?;
        Ok(self.predictor_forward(rows, &s)?.1)
    }

    fn pass(&self, batch: &FusionBatch) -> Result<Pass> {
        let n = batch.len();
        let sel = self.selector.forward(&batch.rows, n)?;
        let xs: Vec<f64> = batch.rows.iter().zip(sel.output()).map(|(x, w)| x * w).collect();
        let pred = self.predictor.forward(&xs, n)?;
        let ce = cross_entropy_rows(pred.output(), 2, &batch.labels);
        Ok(Pass { sel, pred, ce })
    }
}

struct Pass {
    sel: Trace,
    pred: Trace,
    /// Per-row predictor cross-entropy.
    ce: Vec<f64>,
}

/// Loss values and gradients of one batch.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub value: f64,
    pub selector: Gradients,
    pub predictor: Gradients,
}

/// Per-row performance gate `max(m - (b - CE), 0)`.
pub fn gate(ce: f64, b: f64, margin: f64) -> f64 {
    (margin - b + ce).max(0.0)
}

/// Predictor loss: mean cross-entropy of the predictor on `rows ⊙ S`.
///
/// `selector` gradients are those of L_p through S (used only with joint routing).
pub fn predictor_loss(nets: &IafNets, batch: &FusionBatch) -> Result<LossGrads> {
    let pass = nets.pass(batch)?;
    Ok(predictor_grads(nets, batch, &pass))
}

fn predictor_grads(nets: &IafNets, batch: &FusionBatch, pass: &Pass) -> LossGrads {
    let n = batch.len();
    let value = pass.ce.iter().sum::<f64>() / n as f64;
    let up = cross_entropy_grad(pass.pred.output(), 2, &batch.labels);
    let (predictor, d_xs) = nets.predictor.backward(&pass.pred, &up);
    let d_s: Vec<f64> = d_xs.iter().zip(&batch.rows).map(|(g, x)| g * x).collect();
    let (selector, _) = nets.selector.backward(&pass.sel, &d_s);
    LossGrads { value, selector, predictor }
}

/// Selector loss `(1/N) Σ r(x)·H(S(x))`, with gradients through both the gate
/// (via the predictor composition) and the entropy.
///
/// `predictor` gradients are those of L_s w.r.t. φ (used only with joint routing).
pub fn selector_loss(nets: &IafNets, batch: &FusionBatch, b: f64, margin: f64) -> Result<LossGrads> {
    let pass = nets.pass(batch)?;
    Ok(selector_grads(nets, batch, &pass, b, margin))
}

fn selector_grads(nets: &IafNets, batch: &FusionBatch, pass: &Pass, b: f64, margin: f64) -> LossGrads {
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let s = pass.sel.output();
    let h = entropy_rows(s, 2);
    let probs = pass.pred.output();
    let mut value = 0.0;
    let mut d_s = vec![0.0; 2 * n];
    let mut up_p = vec![0.0; 2 * n];
    for i in 0..n {
        let r = gate(pass.ce[i], b, margin);
        value += r * h[i];
        if r > 0.0 {
            for c in 0..2 {
                let sc = s[2 * i + c];
                // dH/dS_c = -(log S_c + 1), with the log clamped as in H
                d_s[2 * i + c] += inv_n * r * -(sc.max(LOG_FLOOR).ln() + 1.0);
            }
            let y = batch.labels[i] as usize;
            let p = probs[2 * i + y];
            if p > LOG_FLOOR {
                // dr/dP_y = dCE/dP_y = -1/P_y
                up_p[2 * i + y] = inv_n * h[i] * -1.0 / p;
            }
        }
    }
    let (predictor, d_xs) = nets.predictor.backward(&pass.pred, &up_p);
    for ((d, g), x) in d_s.iter_mut().zip(&d_xs).zip(&batch.rows) {
        *d += g * x;
    }
    let (selector, _) = nets.selector.backward(&pass.sel, &d_s);
    LossGrads {
        value: value * inv_n,
        selector,
        predictor,
    }
}

pub fn final_loss(lp: f64, ls: f64, lambda: f64) -> f64 {
    lp + lambda * ls
}

/// A trained fusion model with everything needed at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct IafModel {
    pub nets: IafNets,
    pub baseline: BaselineConstant,
    pub stats: NormStats,
    pub config: IafConfig,
}

impl IafModel {
    pub fn fuse_point_scores(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        self.nets.scores(&self.stats.apply(x1, x2)?)
    }

    /// The same networks applied to the object-level pair, normalized with the
    /// point-level statistics.
    pub fn fuse_object_scores(&self, s1: f64, s2: f64) -> Result<f64> {
        Ok(self.fuse_point_scores(&[s1], &[s2])?[0])
    }

    /// Mean selector weights `(w₃d, w₂d)` over the given raw maps.
    pub fn mean_importance(&self, x1: &[f64], x2: &[f64]) -> Result<[f64; 2]> {
        let s = self.nets.selector_forward(&self.stats.apply(x1, x2)?)?;
        let n = (s.len() / 2).max(1) as f64;
        let mut m = [0.0; 2];
        for row in s.chunks(2) {
            m[0] += row[0] / n;
            m[1] += row[1] / n;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IafEpoch {
    pub predictor_loss: f64,
    pub selector_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IafReport {
    pub history: Vec<IafEpoch>,
    pub rows_used: usize,
}

/// Trains the selector and predictor on raw expert maps with point labels.
pub fn train_iaf(x1: &[f64], x2: &[f64], labels: &[u8], config: &IafConfig) -> Result<(IafModel, IafReport)> {
    config.validate()?;
    if x1.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: x1.len() });
    }
    let stats = NormStats::fit(x1, x2)?;
    let full = FusionBatch::new(stats.apply(x1, x2)?, labels.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = match config.max_rows {
        Some(cap) if cap < full.len() => {
            let mut idx: Vec<usize> = (0..full.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cap);
            idx.sort_unstable();
            full.select(&idx)
        }
        _ => full,
    };
    let baseline = compute_baseline_b(&batch)?;
    let mut nets = IafNets::new(&config.selector_hidden, &config.predictor_hidden, rng.gen());
    let adam = AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut sel_opt = AdamWState::new(&nets.selector, adam);
    let mut pred_opt = AdamWState::new(&nets.predictor, adam);
    let n = batch.len();
    let steps_per_epoch = n.div_ceil(config.batch_size) as u64;
    let schedule = LrSchedule {
        base: config.lr,
        total: steps_per_epoch * config.epochs as u64,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut initial = None;
    let mut above = 0;
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut lp_sum, mut ls_sum) = (0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let mb = batch.select(chunk);
            let pass = nets.pass(&mb)?;
            let lp = predictor_grads(&nets, &mb, &pass);
            let ls = selector_grads(&nets, &mb, &pass, baseline.b, config.margin);
            let w = chunk.len() as f64;
            lp_sum += lp.value * w;
            ls_sum += ls.value * w;
            let (g_sel, g_pred) = match config.routing {
                GradientRouting::Separate => {
                    let mut g = ls.selector;
                    g.scale(config.lambda);
                    (g, lp.predictor)
                }
                GradientRouting::Joint => {
                    let mut gs = ls.selector;
                    gs.scale(config.lambda);
                    gs.add_assign(&lp.selector);
                    let mut gp = ls.predictor;
                    gp.scale(config.lambda);
                    gp.add_assign(&lp.predictor);
                    (gs, gp)
                }
            };
            let lr = schedule.at(step);
            if epoch >= config.warmup_epochs {
                sel_opt.step(&mut nets.selector, &g_sel, lr)?;
            }
            pred_opt.step(&mut nets.predictor, &g_pred, lr)?;
            step += 1;
        }
        let lp = lp_sum / n as f64;
        let ls = ls_sum / n as f64;
        let lf = final_loss(lp, ls, config.lambda);
        let init = *initial.get_or_insert(lf);
        if !lf.is_finite() {
            return Err(Error::Diverged { epoch, loss: lf, initial: init });
        }
        if lf > 10.0 * init {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged { epoch, loss: lf, initial: init });
            }
        } else {
            above = 0;
        }
        history.push(IafEpoch {
            predictor_loss: lp,
            selector_loss: ls,
            final_loss: lf,
        });
    }
    Ok((
        IafModel {
            nets,
            baseline,
            stats,
            config: config.clone(),
        },
        IafReport { history, rows_used: n },
    ))
}

/// Serializable fusion bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionBundle {
    pub config_hash: String,
    pub selector: NetCheckpoint,
    pub predictor: NetCheckpoint,
    pub baseline: BaselineConstant,
    pub stats: NormStats,
    pub config: IafConfig,
    #[serde(default)]
    pub linear: Option<LinearFuser>,
}

impl FusionBundle {
    pub fn new(model: &IafModel, linear: Option<LinearFuser>, config_hash: &str) -> Self {
        FusionBundle {
            config_hash: config_hash.to_string(),
            selector: NetCheckpoint::from_net(&model.nets.selector, None),
            predictor: NetCheckpoint::from_net(&model.nets.predictor, None),
            baseline: model.baseline,
            stats: model.stats,
            config: model.config.clone(),
            linear,
        }
    }

    pub fn model(&self) -> Result<IafModel> {
        Ok(IafModel {
            nets: IafNets {
                selector: self.selector.to_net()?,
                predictor: self.predictor.to_net()?,
            },
            baseline: self.baseline,
            stats: self.stats,
            config: self.config.clone(),
        })
    }
}

#[cfg(test)]
mod tests;
