//! Stage-specific integration of prior scores with detector confidences:
//! additive ranking for reference generation, a small learned network for
//! the final prediction, and the static additive zero-shot mode.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matching::LossWeights;
use crate::priors::PriorBundle;
use crate::rng::SplitMix64;

const IN_DIM: usize = 3;
const HIDDEN_DIM: usize = 8;

/// Pipeline stage a fusion rule applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    ReferenceGen,
    FinalPrediction,
    Matching,
}

/// How priors combine with detector scores at a given stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionRule {
    Additive,
    LearnedMlp,
    CostSubtraction,
}

impl Stage {
    /// The integration rules valid at this stage.
    pub fn allowed_rules(self) -> &'static [FusionRule] {
        match self {
            Stage::ReferenceGen => &[FusionRule::Additive],
            Stage::FinalPrediction => &[FusionRule::Additive, FusionRule::LearnedMlp],
            Stage::Matching => &[FusionRule::CostSubtraction],
        }
    }
}

/// Learned fusion network: 3 inputs (spatial prior, visual prior, detector
/// score), 8 rectified hidden units, logistic output. 41 parameters total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionNet {
    pub layer_sizes: [usize; 3],
    /// Hidden weights, row-major: `w1[k * 3 + i]` connects input i to unit k.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output weights: `w2[k]` connects hidden unit k to the output.
    pub w2: Vec<f64>,
    pub b2: f64,
    pub seed: u64,
    pub learning_rate: f64,
}

/// Gradients of the output with respect to every parameter and input.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub inputs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionError {
    EmptyCandidates,
    /// A training sample has no matched positive candidate.
    NoPositives { sample: usize },
    /// Serialized network has unexpected layer sizes.
    BadShape { expected: String, got: String },
}

impl fmt::Display for FusionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyCandidates => f.write_str("candidate list is empty"),
            Self::NoPositives { sample } => {
                write!(f, "training sample {sample} has no matched positive candidate")
            }
            Self::BadShape { expected, got } => {
                write!(f, "network shape mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for FusionError {}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl FusionNet {
    pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
    pub const PARAM_COUNT: usize = IN_DIM * HIDDEN_DIM + HIDDEN_DIM + HIDDEN_DIM + 1;

    /// Initialize with weights and biases uniform in [-0.5, 0.5].
    pub fn seeded(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.next_range(-0.5, 0.5)).collect()
        };
        let w1 = draw(IN_DIM * HIDDEN_DIM);
        let b1 = draw(HIDDEN_DIM);
        let w2 = draw(HIDDEN_DIM);
        let b2 = draw(1)[0];
        Self {
            layer_sizes: [IN_DIM, HIDDEN_DIM, 1],
            w1,
            b1,
            w2,
            b2,
            seed,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
        }
    }

    /// All-zero parameters; the output is 0.5 for every input.
    pub fn zeroed() -> Self {
        Self {
            layer_sizes: [IN_DIM, HIDDEN_DIM, 1],
            w1: vec![0.0; IN_DIM * HIDDEN_DIM],
            b1: vec![0.0; HIDDEN_DIM],
            w2: vec![0.0; HIDDEN_DIM],
            b2: 0.0,
            seed: 0,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
        }
    }

    /// Check serialized shape consistency.
    pub fn validate(&self) -> Result<(), FusionError> {
        let ok = self.layer_sizes == [IN_DIM, HIDDEN_DIM, 1]
            && self.w1.len() == IN_DIM * HIDDEN_DIM
            && self.b1.len() == HIDDEN_DIM
            && self.w2.len() == HIDDEN_DIM;
        if ok {
            Ok(())
        } else {
            Err(FusionError::BadShape {
                expected: format!("[{IN_DIM}, {HIDDEN_DIM}, 1]"),
                got: format!(
                    "sizes {:?}, w1 {}, b1 {}, w2 {}",
                    self.layer_sizes,
                    self.w1.len(),
                    self.b1.len(),
                    self.w2.len()
                ),
            })
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Forward pass on `[h_s, h_v, p]`; output strictly inside (0, 1).
    pub fn forward(&self, h_s: f64, h_v: f64, p: f64) -> f64 {
        let x = [h_s, h_v, p];
        let mut act = self.b2;
        for k in 0..HIDDEN_DIM {
            let mut pre = self.b1[k];
            for (i, xi) in x.iter().enumerate() {
                pre += self.w1[k * IN_DIM + i] * xi;
            }
            if pre > 0.0 {
                act += self.w2[k] * pre;
            }
        }
        sigmoid(act)
    }

    /// Backward pass: gradients of `upstream * z` with respect to every
    /// parameter and input, i.e. `upstream * dz/dtheta` with exact rectifier
    /// and logistic derivatives.
    pub fn backward(&self, h_s: f64, h_v: f64, p: f64, upstream: f64) -> FusionGradients {
        let x = [h_s, h_v, p];
        let mut hidden = [0.0; HIDDEN_DIM];
        let mut active = [false; HIDDEN_DIM];
        let mut act = self.b2;
        for k in 0..HIDDEN_DIM {
            let mut pre = self.b1[k];
            for (i, xi) in x.iter().enumerate() {
                pre += self.w1[k * IN_DIM + i] * xi;
            }
            if pre > 0.0 {
                hidden[k] = pre;
                active[k] = true;
                act += self.w2[k] * pre;
            }
        }
        let z = sigmoid(act);
        let d_act = upstream * z * (1.0 - z);

        let mut g = FusionGradients {
            w1: vec![0.0; IN_DIM * HIDDEN_DIM],
            b1: vec![0.0; HIDDEN_DIM],
            w2: vec![0.0; HIDDEN_DIM],
            b2: d_act,
            inputs: [0.0; 3],
        };
        for k in 0..HIDDEN_DIM {
            g.w2[k] = d_act * hidden[k];
            if active[k] {
                let d_pre = d_act * self.w2[k];
                g.b1[k] = d_pre;
                for (i, xi) in x.iter().enumerate() {
                    g.w1[k * IN_DIM + i] = d_pre * xi;
                    g.inputs[i] += d_pre * self.w1[k * IN_DIM + i];
                }
            }
        }
        g
    }

    fn apply_step(&mut self, grad: &FusionGradients, scale: f64) {
        let step = self.learning_rate * scale;
        for (w, g) in self.w1.iter_mut().zip(&grad.w1) {
            *w -= step * g;
        }
        for (b, g) in self.b1.iter_mut().zip(&grad.b1) {
            *b -= step * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grad.w2) {
            *w -= step * g;
        }
        self.b2 -= step * grad.b2;
    }
}

/// Prediction mode for the final selection stage.
#[derive(Debug, Clone)]
pub enum PredictMode {
    /// Additive prior injection with no training.
    ZeroShot,
    /// Learned fusion network.
    Learned(FusionNet),
}

/// Indices of the `n` highest values of `p + h_s + h_v`, descending, ties
/// broken toward the lower index. Fewer than `n` candidates returns all.
pub fn rank_top_n(bundle: &PriorBundle, n: usize) -> Vec<usize> {
    assert!(n >= 1, "n must be at least 1");
    let mut idx: Vec<usize> = (0..bundle.len()).collect();
    let score = |j: usize| bundle.p[j] + bundle.h_s[j] + bundle.h_v[j];
    idx.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).unwrap().then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Select the final candidate. Zero-shot takes the additive argmax; learned
/// mode takes the argmax of the network output per candidate. Ties break
/// toward the lower index.
pub fn predict(bundle: &PriorBundle, mode: &PredictMode) -> Result<usize, FusionError> {
    if bundle.is_empty() {
        return Err(FusionError::EmptyCandidates);
    }
    let scores: Vec<f64> = match mode {
        PredictMode::ZeroShot => (0..bundle.len())
            .map(|j| bundle.p[j] + bundle.h_s[j] + bundle.h_v[j])
            .collect(),
        PredictMode::Learned(net) => (0..bundle.len())
            .map(|j| net.forward(bundle.h_s[j], bundle.h_v[j], bundle.p[j]))
            .collect(),
    };
    let mut best = 0;
    for (j, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = j;
        }
    }
    Ok(best)
}

/// One fusion training sample: a prior bundle and the index of the
/// Hungarian-matched candidate, when one exists.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub bundle: PriorBundle,
    pub positive: Option<usize>,
}

const BCE_EPS: f64 = 1e-7;

fn bce(z: f64, y: f64) -> f64 {
    let z = z.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * z.ln() + (1.0 - y) * (1.0 - z).ln())
}

fn bce_grad(z: f64, y: f64) -> f64 {
    let z = z.clamp(BCE_EPS, 1.0 - BCE_EPS);
    (z - y) / (z * (1.0 - z))
}

/// Train by full-batch gradient descent with a fixed step. The per-candidate
/// objective is binary cross-entropy toward the matched/unmatched labels plus
/// a squared-error pull toward the combined prior as a soft label, weighted
/// by the classification and confidence loss weights. Returns the trained
/// network and the loss recorded at the start of each epoch.
pub fn train_fusion(
    net: &FusionNet,
    data: &[TrainingSample],
    epochs: usize,
    weights: &LossWeights,
) -> Result<(FusionNet, Vec<f64>), FusionError> {
    for (s, sample) in data.iter().enumerate() {
        match sample.positive {
            Some(j) if j < sample.bundle.len() => {}
            _ => return Err(FusionError::NoPositives { sample: s }),
        }
        if sample.bundle.is_empty() {
            return Err(FusionError::EmptyCandidates);
        }
    }
    let mut net = net.clone();
    let mut trace = Vec::with_capacity(epochs);
    if data.is_empty() {
        trace.resize(epochs, 0.0);
        return Ok((net, trace));
    }
    let n = data.len() as f64;
    for _ in 0..epochs {
        let mut total = 0.0;
        let mut grad = FusionGradients {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: 0.0,
            inputs: [0.0; 3],
        };
        for sample in data {
            let bundle = &sample.bundle;
            let positive = sample.positive.expect("validated above");
            let m = bundle.len() as f64;
            for j in 0..bundle.len() {
                let (h_s, h_v, p) = (bundle.h_s[j], bundle.h_v[j], bundle.p[j]);
                let z = net.forward(h_s, h_v, p);
                let y = if j == positive { 1.0 } else { 0.0 };
                let h = bundle.h[j];
                total += (weights.cls * bce(z, y) + weights.conf * (z - h) * (z - h)) / m;
                let upstream =
                    (weights.cls * bce_grad(z, y) + weights.conf * 2.0 * (z - h)) / m;
                let g = net.backward(h_s, h_v, p, upstream);
                for (acc, gi) in grad.w1.iter_mut().zip(&g.w1) {
                    *acc += gi;
                }
                for (acc, gi) in grad.b1.iter_mut().zip(&g.b1) {
                    *acc += gi;
                }
                for (acc, gi) in grad.w2.iter_mut().zip(&g.w2) {
                    *acc += gi;
                }
                grad.b2 += g.b2;
            }
        }
        trace.push(total / n);
        net.apply_step(&grad, 1.0 / n);
    }
    Ok((net, trace))
}
