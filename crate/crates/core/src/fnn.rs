//! Floating-point feed-forward discriminator (ReLU hidden layers, sigmoid
//! output), binary cross-entropy, Adam, and the shift-friendly input scaler
//! shared with the fixed-point path.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqsim::{IQShot, Label};
use crate::metrics::{self, own_class_distances};
use crate::rng;

/// Probability clamp inside the loss.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            layer_sizes: vec![2, 8, 4, 1],
        }
    }
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Architecture> {
        let arch = Architecture { layer_sizes };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.layer_sizes;
        if s.len() < 2 || s[0] != 2 || s[s.len() - 1] != 1 || s.contains(&0) {
            return Err(Error::Config(format!(
                "architecture {s:?} must start with 2 inputs, end with 1 output and have no empty layer"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn n_weights(&self) -> usize {
        self.layers().map(|(i, o)| i * o).sum()
    }

    pub fn n_biases(&self) -> usize {
        self.layer_sizes[1..].iter().sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.n_biases()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn zeros(fan_in: usize, fan_out: usize) -> DenseLayer {
        DenseLayer {
            weights: vec![vec![0.0; fan_in]; fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn fan_out(&self) -> usize {
        self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnParams {
    pub layers: Vec<DenseLayer>,
}

impl FnnParams {
    pub fn zeros(arch: &Architecture) -> FnnParams {
        FnnParams {
            layers: arch.layers().map(|(i, o)| DenseLayer::zeros(i, o)).collect(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> FnnParams {
        let mut p = FnnParams::zeros(arch);
        for layer in &mut p.layers {
            let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            for row in &mut layer.weights {
                for w in row {
                    *w = rng.random_range(-limit..=limit);
                }
            }
        }
        p
    }

    pub fn architecture(&self) -> Architecture {
        let mut sizes = vec![self.layers.first().map_or(0, DenseLayer::fan_in)];
        sizes.extend(self.layers.iter().map(DenseLayer::fan_out));
        Architecture { layer_sizes: sizes }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Config(format!("layer {} output does not match layer {} input", k + 1, k + 2)));
            }
        }
        for l in &self.layers {
            let fi = l.fan_in();
            if l.weights.iter().any(|r| r.len() != fi) || l.weights.len() != l.biases.len() {
                return Err(Error::Config("ragged weight matrix".into()));
            }
        }
        Ok(())
    }

    /// Every weight (layer-major, row-major) followed by every bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.layers.iter().flat_map(|l| l.weights.iter().flatten().copied()).collect();
        out.extend(self.layers.iter().flat_map(|l| l.biases.iter().copied()));
        out
    }

    /// Inverse of [`FnnParams::flat`].
    pub fn from_flat(arch: &Architecture, values: &[f64]) -> Result<FnnParams> {
        arch.validate()?;
        if values.len() != arch.n_params() {
            return Err(Error::LengthMismatch { expected: arch.n_params(), got: values.len() });
        }
        let mut p = FnnParams::zeros(arch);
        p.for_each_mut(|k, v| *v = values[k]);
        Ok(p)
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().flatten() {
                f(k, w);
                k += 1;
            }
        }
        for l in &mut self.layers {
            for b in &mut l.biases {
                f(k, b);
                k += 1;
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Pre-sigmoid output.
pub fn forward_logit(params: &FnnParams, x: [f64; 2]) -> f64 {
    let mut act: Vec<f64> = x.to_vec();
    let last = params.layers.len() - 1;
    for (k, layer) in params.layers.iter().enumerate() {
        let mut next: Vec<f64> = layer
            .weights
            .iter()
            .zip(&layer.biases)
            .map(|(row, b)| row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + b)
            .collect();
        if k != last {
            next.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        act = next;
    }
    act[0]
}

pub fn forward(params: &FnnParams, x: [f64; 2]) -> f64 {
    sigmoid(forward_logit(params, x))
}

/// Threshold 0.5; exactly 0.5 is ground.
pub fn classify(params: &FnnParams, x: [f64; 2]) -> Label {
    Label::from_bit(forward(params, x) > 0.5)
}

pub fn bce_loss(p: f64, y: Label) -> f64 {
    let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    match y {
        Label::Excited => -p.ln(),
        Label::Ground => -(1.0 - p).ln(),
    }
}

/// A scaled input with its label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub x: [f64; 2],
    pub y: Label,
}

/// Gradient of the mean batch loss, shaped like the parameters, plus that loss.
pub fn grad(params: &FnnParams, batch: &[Example]) -> (FnnParams, f64) {
    let mut g = FnnParams::zeros(&params.architecture());
    let mut loss = 0.0;
    let n_layers = params.layers.len();
    let mut acts: Vec<Vec<f64>> = vec![Vec::new(); n_layers + 1];
    let mut pre: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    for ex in batch {
        acts[0].clear();
        acts[0].extend_from_slice(&ex.x);
        for (k, layer) in params.layers.iter().enumerate() {
            let z: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(row, b)| row.iter().zip(&acts[k]).map(|(w, a)| w * a).sum::<f64>() + b)
                .collect();
            acts[k + 1] = if k + 1 == n_layers {
                z.iter().map(|&v| sigmoid(v)).collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre[k] = z;
        }
        let p = acts[n_layers][0];
        let y = f64::from(ex.y.as_u8());
        loss += bce_loss(p, ex.y);
        let mut delta = vec![p - y];
        for k in (0..n_layers).rev() {
            let layer = &params.layers[k];
            let gl = &mut g.layers[k];
            for (o, d) in delta.iter().enumerate() {
                gl.biases[o] += d;
                for (i, a) in acts[k].iter().enumerate() {
                    gl.weights[o][i] += d * a;
                }
            }
            if k > 0 {
                delta = (0..layer.fan_in())
                    .map(|i| {
                        if pre[k - 1][i] > 0.0 {
                            delta.iter().enumerate().map(|(o, d)| d * layer.weights[o][i]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
    }
    let inv = 1.0 / batch.len().max(1) as f64;
    g.for_each_mut(|_, v| *v *= inv);
    (g, loss * inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, n_params: usize) -> AdamState {
        AdamState {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut FnnParams, state: &mut AdamState, grads: &FnnParams) {
    let g = grads.flat();
    state.t += 1;
    let c = state.cfg;
    let bc1 = 1.0 - c.beta1.powi(state.t);
    let bc2 = 1.0 - c.beta2.powi(state.t);
    let (m, v) = (&mut state.m, &mut state.v);
    params.for_each_mut(|k, p| {
        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
        let mhat = m[k] / bc1;
        let vhat = v[k] / bc2;
        *p -= c.lr * mhat / (vhat.sqrt() + c.eps);
    });
}

/// Per-channel mean and power-of-two half range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mu_i: f64,
    pub n_i: i32,
    pub mu_q: f64,
    pub n_q: i32,
}

fn channel_fit(values: impl Iterator<Item = f64> + Clone, channel: &'static str) -> Result<(f64, i32)> {
    let (sum, count) = values.clone().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return Err(Error::Empty("scaler input"));
    }
    let mu = sum / count as f64;
    let max = values.map(|v| (v - mu).abs()).fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::ZeroSpread { channel });
    }
    Ok((mu, (max.log2().round() as i32).max(1)))
}

pub fn scaler_fit(shots: &[IQShot]) -> Result<ScalerParams> {
    let (mu_i, n_i) = channel_fit(shots.iter().map(|s| s.i), "I")?;
    let (mu_q, n_q) = channel_fit(shots.iter().map(|s| s.q), "Q")?;
    Ok(ScalerParams { mu_i, n_i, mu_q, n_q })
}

/// `(value - mu + 2^n) / 2^(n+1)` per channel.
pub fn scaler_apply(p: &ScalerParams, shot: &IQShot) -> [f64; 2] {
    let ch = |v: f64, mu: f64, n: i32| (v - mu + 2f64.powi(n)) / 2f64.powi(n + 1);
    [ch(shot.i, p.mu_i, p.n_i), ch(shot.q, p.mu_q, p.n_q)]
}

pub fn to_examples(p: &ScalerParams, shots: &[IQShot]) -> Vec<Example> {
    shots
        .iter()
        .map(|s| Example {
            x: scaler_apply(p, s),
            y: s.label,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Fraction of the (shuffled) dataset used for training; 0.6 gives the
    /// 60,000/40,000 split of a 100,000-shot dataset.
    pub train_fraction: f64,
    /// Early stop when the relative loss improvement over `patience` epochs
    /// falls below `min_rel_improvement`.
    pub patience: usize,
    pub min_rel_improvement: f64,
    /// Outlier cut on the own-class Mahalanobis distance; `None` keeps every shot.
    pub herald_cut: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 100,
            adam: AdamConfig::default(),
            train_fraction: 0.6,
            patience: 5,
            min_rel_improvement: 1e-5,
            herald_cut: Some(5.0),
            seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::range("train_fraction", self.train_fraction, 0.0, 1.0));
        }
        Ok(())
    }
}

/// Drops shots farther than `cut` from their own class mean.
pub fn herald(shots: &[IQShot], cut: f64) -> Result<Vec<IQShot>> {
    let d = own_class_distances(shots)?;
    Ok(shots.iter().zip(d).filter(|(_, d)| *d <= cut).map(|(s, _)| *s).collect())
}

/// Shuffles with the training seed and splits into (train, test).
pub fn split_dataset(shots: &[IQShot], cfg: &TrainConfig) -> Result<(Vec<IQShot>, Vec<IQShot>)> {
    cfg.validate()?;
    if shots.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut all = shots.to_vec();
    all.shuffle(&mut rng::stream(cfg.seed, u64::MAX));
    let n_train = (all.len() as f64 * cfg.train_fraction).round() as usize;
    let test = all.split_off(n_train);
    Ok((all, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_fidelity: f64,
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,test_fidelity")?;
    for r in history {
        writeln!(w, "{},{:.9},{:.6}", r.epoch, r.train_loss, r.test_fidelity)?;
    }
    Ok(())
}

pub fn evaluate(params: &FnnParams, examples: &[Example]) -> Result<metrics::FidelityReport> {
    let labels: Vec<Label> = examples.iter().map(|e| e.y).collect();
    let preds: Vec<Label> = examples.iter().map(|e| classify(params, e.x)).collect();
    metrics::fidelity(&labels, &preds)
}

/// Mini-batch Adam on pre-scaled examples. Deterministic given `cfg.seed`.
pub fn train(
    train_set: &[Example],
    test_set: &[Example],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(FnnParams, Vec<EpochRecord>)> {
    arch.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut params = FnnParams::init(arch, &mut rng::stream(cfg.seed, 0));
    let mut adam = AdamState::new(cfg.adam, arch.n_params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffler = rng::stream(cfg.seed, 1);
    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| train_set[k]));
            let (g, loss) = grad(&params, &batch);
            total += loss * chunk.len() as f64;
            adam_step(&mut params, &mut adam, &g);
        }
        let train_loss = total / train_set.len() as f64;
        let test_fidelity = if test_set.is_empty() {
            f64::NAN
        } else {
            evaluate(&params, test_set).map(|f| f.avg).unwrap_or(f64::NAN)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            test_fidelity,
        });
        if epoch >= cfg.patience {
            let before = history[epoch - cfg.patience].train_loss;
            if before - train_loss < cfg.min_rel_improvement * before {
                break;
            }
        }
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqsim::{cluster_dataset, GaussianCluster};

    #[test]
    fn default_parameter_census() {
        let a = Architecture::default();
        assert_eq!((a.n_weights(), a.n_biases(), a.n_params()), (52, 13, 65));
        let p = FnnParams::init(&a, &mut rng::stream(0, 0));
        assert_eq!(p.flat().len(), 65);
        assert!(Architecture::new(vec![3, 1]).is_err());
        assert!(Architecture::new(vec![2, 0, 1]).is_err());
    }

    #[test]
    fn zero_params_give_half() {
        let p = FnnParams::zeros(&Architecture::default());
        assert_eq!(forward(&p, [0.3, 0.9]), 0.5);
        assert_eq!(classify(&p, [0.3, 0.9]), Label::Ground);
    }

    #[test]
    fn hand_computed_toy() {
        // 2-1-1: h = relu(0.5 x0 - 0.25 x1 + 0.1), out = sigmoid(2 h - 0.3)
        let p = FnnParams {
            layers: vec![
                DenseLayer { weights: vec![vec![0.5, -0.25]], biases: vec![0.1] },
                DenseLayer { weights: vec![vec![2.0]], biases: vec![-0.3] },
            ],
        };
        let h: f64 = 0.5 * 0.8 - 0.25 * 0.4 + 0.1;
        assert!((forward_logit(&p, [0.8, 0.4]) - (2.0 * h - 0.3)).abs() < 1e-15);
        assert!((forward(&p, [0.8, 0.4]) - 1.0 / (1.0 + (0.3 - 2.0 * h).exp())).abs() < 1e-15);
        // Negative pre-activation is cut by the ReLU.
        assert!((forward_logit(&p, [0.0, 1.0]) + 0.3).abs() < 1e-15);
    }

    /// Straight-line re-implementation for the default shape only.
    fn reference_2841(p: &FnnParams, x: [f64; 2]) -> f64 {
        let l = &p.layers;
        let mut h1 = [0.0; 8];
        for j in 0..8 {
            h1[j] = (l[0].weights[j][0] * x[0] + l[0].weights[j][1] * x[1] + l[0].biases[j]).max(0.0);
        }
        let mut h2 = [0.0; 4];
        for j in 0..4 {
            let mut s = l[1].biases[j];
            for i in 0..8 {
                s += l[1].weights[j][i] * h1[i];
            }
            h2[j] = s.max(0.0);
        }
        let mut z = l[2].biases[0];
        for i in 0..4 {
            z += l[2].weights[0][i] * h2[i];
        }
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        let a = Architecture::default();
        for seed in 0..20 {
            let mut r = rng::stream(seed, 5);
            let mut p = FnnParams::init(&a, &mut r);
            for l in &mut p.layers {
                for b in &mut l.biases {
                    *b = r.random_range(-0.5..0.5);
                }
            }
            let x = [r.random_range(-1.0..2.0), r.random_range(-1.0..2.0)];
            assert!((forward(&p, x) - reference_2841(&p, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_at_half_is_ln2() {
        assert!((bce_loss(0.5, Label::Ground) - 2f64.ln()).abs() < 1e-15);
        assert!((bce_loss(0.5, Label::Excited) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(0.0, Label::Excited).is_finite());
    }

    #[test]
    fn zero_gradient_adam_step_is_identity() {
        let a = Architecture::default();
        let mut p = FnnParams::init(&a, &mut rng::stream(4, 4));
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), a.n_params());
        adam_step(&mut p, &mut st, &FnnParams::zeros(&a));
        assert_eq!(p, before);
    }

    #[test]
    fn scaler_worked_example() {
        let shots: Vec<IQShot> = (-3..=3)
            .map(|k| IQShot { label: Label::Ground, i: k as f64 * 1e6, q: k as f64 * 10.0 })
            .collect();
        let s = scaler_fit(&shots).unwrap();
        assert_eq!(s.mu_i, 0.0);
        assert_eq!(s.n_i, 22);
        assert_eq!(s.n_q, 5);
        let at = |i: f64| scaler_apply(&s, &IQShot { label: Label::Ground, i, q: 0.0 })[0];
        assert_eq!(at(0.0), 0.5);
        assert_eq!(at(4_194_304.0), 1.0);
        assert_eq!(at(48.0), 4_194_352.0 / 8_388_608.0);
        assert!((at(48.0) - 0.500005722).abs() < 1e-9);
    }

    #[test]
    fn scaler_rejects_constant_channel() {
        let shots = vec![IQShot { label: Label::Ground, i: 1.0, q: 2.0 }; 4];
        assert!(matches!(scaler_fit(&shots), Err(Error::ZeroSpread { channel: "I" })));
        assert!(scaler_fit(&[]).is_err());
    }

    #[test]
    fn train_rejects_empty() {
        let err = train(&[], &[], &Architecture::default(), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn herald_drops_far_outliers() {
        let c = GaussianCluster::isotropic([0.0, 0.0], [10.0, 0.0], 1.0);
        let mut shots = cluster_dataset(&c, 2000, 3, 1).unwrap();
        shots.push(IQShot { label: Label::Ground, i: 0.0, q: 40.0 });
        let kept = herald(&shots, 5.0).unwrap();
        assert!(kept.len() < shots.len());
        assert!(!kept.iter().any(|s| s.q == 40.0));
        assert!(kept.len() >= shots.len() - 5);
    }

    #[test]
    fn split_sizes_sum() {
        let c = GaussianCluster::isotropic([0.0, 0.0], [1.0, 0.0], 1.0);
        let shots = cluster_dataset(&c, 500, 3, 1).unwrap();
        let (tr, te) = split_dataset(&shots, &TrainConfig::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (600, 400));
    }

    #[test]
    fn history_csv() {
        let h = [EpochRecord { epoch: 0, train_loss: 0.5, test_fidelity: 0.75 }];
        let mut buf = Vec::new();
        write_history_csv(&h, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,test_fidelity\n0,0.500000000,0.750000\n");
    }
}
