//! Categorical policies over a finite response set.
//!
//! Two parametrizations are provided: a plain logit table
//! ([`CategoricalPolicy`]) and a two-layer perceptron ([`MlpPolicy`]) that
//! maps a one-hot prompt to response logits. The MLP has a hand-written
//! backward pass that consumes loss gradients expressed in probability
//! space, which is the surface [`crate::losses::analytic_gradient`] exposes.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Hidden width of the toy MLP.
pub const DEFAULT_HIDDEN: usize = 32;

/// ChaCha stream reserved for weight initialization, so the same seed can
/// also drive task generation without sharing a keystream.
pub const INIT_STREAM: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("logit {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },
    #[error("empty logit vector")]
    Empty,
    #[error("{what} index {index} out of range (size {len})")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    ShapeMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("KL support violation at index {index}: p = {p} but q = {q}")]
    SupportViolation { index: usize, p: f64, q: f64 },
    #[error("no preference pairs given")]
    NoPairs,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// A single preference pair attached to a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
}

/// Max-subtracted softmax.
pub fn softmax_forward(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(PolicyError::Empty);
    }
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(PolicyError::NonFiniteLogit { index, value });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Log-softmax computed without forming probabilities, so tiny
/// probabilities keep their full relative precision.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    softmax_forward(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|z| z - max - log_total).collect())
}

/// Pulls a probability-space gradient back through softmax:
/// `∂L/∂z_j = p_j·(g_j − Σ_i g_i·p_i)`.
pub fn softmax_backward(probs: &[f64], dloss_dprobs: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != dloss_dprobs.len() {
        return Err(PolicyError::ShapeMismatch {
            what: "dloss_dprobs",
            expected: probs.len(),
            actual: dloss_dprobs.len(),
        });
    }
    let inner: f64 = probs.iter().zip(dloss_dprobs).map(|(p, g)| p * g).sum();
    Ok(probs.iter().zip(dloss_dprobs).map(|(p, g)| p * (g - inner)).collect())
}

/// `Σ p_i·log(p_i/q_i)` with `0·log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(PolicyError::ShapeMismatch { what: "q", expected: p.len(), actual: q.len() });
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(PolicyError::SupportViolation { index, p: pi, q: qi });
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can push an exact zero a hair negative.
    Ok(total.max(0.0))
}

/// A table of per-prompt logits with cached row-wise softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPolicy {
    logits: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

impl CategoricalPolicy {
    pub fn from_logits(logits: Vec<Vec<f64>>) -> Result<Self> {
        let width = logits.first().map(Vec::len).ok_or(PolicyError::Empty)?;
        let mut probs = Vec::with_capacity(logits.len());
        for row in &logits {
            if row.len() != width {
                return Err(PolicyError::ShapeMismatch { what: "logit row", expected: width, actual: row.len() });
            }
            probs.push(softmax_forward(row)?);
        }
        Ok(Self { logits, probs })
    }

    /// Snapshot of the distribution an MLP assigns to every prompt.
    pub fn from_mlp(mlp: &MlpPolicy) -> Result<Self> {
        let logits = (0..mlp.num_prompts).map(|k| mlp.logits(k)).collect::<Result<Vec<_>>>()?;
        Self::from_logits(logits)
    }

    pub fn num_prompts(&self) -> usize {
        self.logits.len()
    }

    pub fn num_responses(&self) -> usize {
        self.logits[0].len()
    }

    pub fn logits(&self, prompt: usize) -> Result<&[f64]> {
        self.row(&self.logits, prompt)
    }

    pub fn probs(&self, prompt: usize) -> Result<&[f64]> {
        self.row(&self.probs, prompt)
    }

    fn row<'a>(&self, table: &'a [Vec<f64>], prompt: usize) -> Result<&'a [f64]> {
        table
            .get(prompt)
            .map(Vec::as_slice)
            .ok_or(PolicyError::IndexOutOfRange { what: "prompt", index: prompt, len: table.len() })
    }

    fn prob(&self, prompt: usize, response: usize) -> Result<f64> {
        let row = self.probs(prompt)?;
        row.get(response)
            .copied()
            .ok_or(PolicyError::IndexOutOfRange { what: "response", index: response, len: row.len() })
    }
}

/// Mean of `−log π(chosen | prompt)` over `pairs`.
pub fn nll_of_chosen(policy: &CategoricalPolicy, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(PolicyError::NoPairs);
    }
    let mut total = 0.0;
    for pair in pairs {
        total -= policy.prob(pair.prompt, pair.chosen)?.ln();
    }
    Ok(total / pairs.len() as f64)
}

/// Two-layer perceptron policy: `softmax(W2·relu(W1·onehot + b1) + b2)`.
///
/// Matrices are stored row-major: `w1` is `hidden × num_prompts`, `w2` is
/// `num_responses × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    pub num_prompts: usize,
    pub num_responses: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Seed the weights were drawn from, if any.
    pub seed: Option<u64>,
}

/// Gradient of a scalar loss with respect to every [`MlpPolicy`] parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros_like(policy: &MlpPolicy) -> Self {
        Self {
            w1: vec![0.0; policy.w1.len()],
            b1: vec![0.0; policy.b1.len()],
            w2: vec![0.0; policy.w2.len()],
            b2: vec![0.0; policy.b2.len()],
        }
    }

    /// `self += scale·other`.
    pub fn add_scaled(&mut self, other: &ParamGradient, scale: f64) {
        for (dst, src) in [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
        ] {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    /// Flattened in checkpoint order (`w1, b1, w2, b2`).
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2].into_iter().flatten().copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.to_flat().iter().all(|g| *g == 0.0)
    }
}

impl MlpPolicy {
    /// An MLP with every weight and bias set to zero.
    pub fn zeros(num_prompts: usize, num_responses: usize, hidden: usize) -> Self {
        Self {
            num_prompts,
            num_responses,
            hidden,
            w1: vec![0.0; hidden * num_prompts],
            b1: vec![0.0; hidden],
            w2: vec![0.0; num_responses * hidden],
            b2: vec![0.0; num_responses],
            seed: None,
        }
    }

    /// Seeded initialization: every layer's weights and biases are drawn
    /// from `uniform(−a, a)` with `a = 1/√fan_in`.
    pub fn init(num_prompts: usize, num_responses: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let mut policy = Self::zeros(num_prompts, num_responses, hidden);
        let a1 = 1.0 / (num_prompts as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        for (values, bound) in [
            (&mut policy.w1, a1),
            (&mut policy.b1, a1),
            (&mut policy.w2, a2),
            (&mut policy.b2, a2),
        ] {
            values.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        policy.seed = Some(seed);
        policy
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters flattened as `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2].into_iter().flatten().copied().collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(PolicyError::ShapeMismatch { what: "parameter vector", expected, actual: flat.len() });
        }
        let mut rest = flat;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn check_prompt(&self, prompt: usize) -> Result<()> {
        if prompt >= self.num_prompts {
            return Err(PolicyError::IndexOutOfRange { what: "prompt", index: prompt, len: self.num_prompts });
        }
        Ok(())
    }

    /// Hidden pre-activations for a one-hot prompt. Only column `prompt` of
    /// `w1` contributes.
    fn pre_activations(&self, prompt: usize) -> Vec<f64> {
        (0..self.hidden).map(|h| self.w1[h * self.num_prompts + prompt] + self.b1[h]).collect()
    }

    fn output_logits(&self, activations: &[f64]) -> Vec<f64> {
        (0..self.num_responses)
            .map(|r| {
                let row = &self.w2[r * self.hidden..(r + 1) * self.hidden];
                row.iter().zip(activations).map(|(w, a)| w * a).sum::<f64>() + self.b2[r]
            })
            .collect()
    }

    pub fn logits(&self, prompt: usize) -> Result<Vec<f64>> {
        self.check_prompt(prompt)?;
        let act: Vec<f64> = self.pre_activations(prompt).into_iter().map(|v| v.max(0.0)).collect();
        Ok(self.output_logits(&act))
    }

    /// Response distribution for `prompt`.
    pub fn forward(&self, prompt: usize) -> Result<Vec<f64>> {
        softmax_forward(&self.logits(prompt)?)
    }

    /// Exact gradient of a scalar loss with respect to every parameter,
    /// given `∂L/∂probs` for one prompt. The rectifier uses subgradient 0 at 0.
    pub fn backprop(&self, prompt: usize, dloss_dprobs: &[f64]) -> Result<ParamGradient> {
        self.check_prompt(prompt)?;
        if dloss_dprobs.len() != self.num_responses {
            return Err(PolicyError::ShapeMismatch {
                what: "dloss_dprobs",
                expected: self.num_responses,
                actual: dloss_dprobs.len(),
            });
        }
        let pre = self.pre_activations(prompt);
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let probs = softmax_forward(&self.output_logits(&act))?;
        let d_logits = softmax_backward(&probs, dloss_dprobs)?;

        let mut grad = ParamGradient::zeros_like(self);
        grad.b2.copy_from_slice(&d_logits);
        let mut d_act = vec![0.0; self.hidden];
        for (r, &dz) in d_logits.iter().enumerate() {
            let row = r * self.hidden;
            for h in 0..self.hidden {
                grad.w2[row + h] = dz * act[h];
                d_act[h] += self.w2[row + h] * dz;
            }
        }
        for h in 0..self.hidden {
            let d_pre = if pre[h] > 0.0 { d_act[h] } else { 0.0 };
            grad.b1[h] = d_pre;
            grad.w1[h * self.num_prompts + prompt] = d_pre;
        }
        Ok(grad)
    }
}

/// Free-function form of [`MlpPolicy::forward`].
pub fn mlp_forward(policy: &MlpPolicy, prompt_index: usize) -> Result<Vec<f64>> {
    policy.forward(prompt_index)
}

/// Free-function form of [`MlpPolicy::backprop`].
pub fn backprop(policy: &MlpPolicy, prompt_index: usize, dloss_dprobs: &[f64]) -> Result<ParamGradient> {
    policy.backprop(prompt_index, dloss_dprobs)
}

/// Identifier written into every checkpoint file.
pub const CHECKPOINT_FORMAT: &str = "prefopt-mlp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk JSON form of an [`MlpPolicy`].
///
/// `params` holds `w1` (row-major, `hidden × num_prompts`), `b1`, `w2`
/// (row-major, `num_responses × hidden`) and `b2`, concatenated in that
/// order. Floats are written in shortest round-trip form, so loading a
/// saved checkpoint reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub num_prompts: usize,
    pub num_responses: usize,
    pub hidden: usize,
    pub seed: Option<u64>,
    pub params: Vec<f64>,
}

impl From<&MlpPolicy> for Checkpoint {
    fn from(policy: &MlpPolicy) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            num_prompts: policy.num_prompts,
            num_responses: policy.num_responses,
            hidden: policy.hidden,
            seed: policy.seed,
            params: policy.params(),
        }
    }
}

impl TryFrom<Checkpoint> for MlpPolicy {
    type Error = PolicyError;

    fn try_from(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(PolicyError::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        let mut policy = MlpPolicy::zeros(ckpt.num_prompts, ckpt.num_responses, ckpt.hidden);
        policy.set_params(&ckpt.params)?;
        policy.seed = ckpt.seed;
        Ok(policy)
    }
}

impl MlpPolicy {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Checkpoint::from(self))?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        ckpt.try_into()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_json(&fs::read_to_string(path)?)
    }
}
