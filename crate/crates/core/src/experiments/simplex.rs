use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::losses::{self, LossSpec, PairPoint};
use crate::optim::{self, OptimizerKind, Stepper};
use crate::policy::{softmax_backward, softmax_forward};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// `π(rejected)` level at which [`SimplexPoint::rejected_cleared`] is recorded.
    pub clear_threshold: f64,
}

impl SimplexOptions {
    pub const DEFAULT_STEPS: usize = 5000;
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { steps: Self::DEFAULT_STEPS, learning_rate: 0.05, optimizer: OptimizerKind::Adam, clear_threshold: 0.01 }
    }
}

/// The distribution at the first step where `π(rejected)` fell to the
/// clear threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearedSnapshot {
    pub step: usize,
    pub probs: Vec<f64>,
}

/// A categorical distribution parametrized by free logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub steps: usize,
    pub loss: f64,
    pub rejected_cleared: Option<ClearedSnapshot>,
}

/// Minimizes one pair's loss over a free categorical distribution started
/// at `reference`, with default options and the given step budget.
pub fn minimize_over_simplex(
    reference: &[f64],
    chosen: usize,
    rejected: usize,
    spec: &LossSpec,
    steps: usize,
) -> Result<SimplexPoint> {
    minimize_over_simplex_with(reference, chosen, rejected, spec, &SimplexOptions { steps, ..Default::default() })
}

pub fn minimize_over_simplex_with(
    reference: &[f64],
    chosen: usize,
    rejected: usize,
    spec: &LossSpec,
    options: &SimplexOptions,
) -> Result<SimplexPoint> {
    spec.validate()?;
    let n = reference.len();
    let pre = |msg: String| Err(ExperimentError::Precondition(msg));
    if chosen == rejected {
        return pre(format!("chosen and rejected are the same response ({chosen})"));
    }
    if chosen >= n || rejected >= n {
        return pre(format!("response index out of range for {n} responses"));
    }
    if let Some(p) = reference.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return pre(format!("reference probabilities must be strictly positive, found {p}"));
    }
    let total: f64 = reference.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return pre(format!("reference probabilities sum to {total}, not 1"));
    }
    if !(options.learning_rate.is_finite() && options.learning_rate > 0.0) {
        return Err(ExperimentError::InvalidConfig(format!("learning rate must be positive, got {}", options.learning_rate)));
    }

    let (r_w, r_l) = (reference[chosen], reference[rejected]);
    let mut logits: Vec<f64> = reference.iter().map(|p| p.ln()).collect();
    let mut stepper = Stepper::new(options.optimizer, n, options.learning_rate);
    let mut cleared = None;
    let mut probs = softmax_forward(&logits)?;
    let mut loss = f64::NAN;
    for step in 0..=options.steps {
        let point = PairPoint::new(probs[chosen], probs[rejected], r_w, r_l)?;
        loss = losses::loss(&point, spec).map_err(|source| ExperimentError::LossAt { step, source })?;
        if !loss.is_finite() {
            return Err(ExperimentError::NonFinite { step, value: loss });
        }
        if cleared.is_none() && probs[rejected] <= options.clear_threshold {
            cleared = Some(ClearedSnapshot { step, probs: probs.clone() });
        }
        if step == options.steps {
            break;
        }
        let g = losses::analytic_gradient(&point, spec).map_err(|source| ExperimentError::LossAt { step, source })?;
        let mut dprobs = vec![0.0; n];
        dprobs[chosen] = g.d_p_w;
        dprobs[rejected] = g.d_p_l;
        let grad = softmax_backward(&probs, &dprobs)?;
        logits = optim::apply(&logits, &stepper.step(&grad), 1.0);
        probs = softmax_forward(&logits).map_err(|_| ExperimentError::NonFinite { step: step + 1, value: f64::NAN })?;
    }
    Ok(SimplexPoint { probs, logits, steps: options.steps, loss, rejected_cleared: cleared })
}
