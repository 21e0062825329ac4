//! First-order update rules and a backtracking line search.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "plain-gd")]
    PlainGd,
    #[serde(rename = "adam")]
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::PlainGd => "plain-gd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" | "plain-gd" | "plain_gd" | "sgd" => Ok(OptimizerKind::PlainGd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected gd or adam)")),
        }
    }
}

/// Adam moment estimates (no weight decay).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// Folds `grad` into the moments and returns the bias-corrected step
    /// to subtract from the parameters.
    pub fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        self.m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(grad)
            .map(|((m, v), &g)| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps)
            })
            .collect()
    }
}

/// Produces update directions for either optimizer.
#[derive(Debug, Clone)]
pub enum Stepper {
    PlainGd { lr: f64 },
    Adam(Adam),
}

impl Stepper {
    pub fn new(kind: OptimizerKind, dim: usize, lr: f64) -> Self {
        match kind {
            OptimizerKind::PlainGd => Stepper::PlainGd { lr },
            OptimizerKind::Adam => Stepper::Adam(Adam::new(dim, lr)),
        }
    }

    pub fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        match self {
            Stepper::PlainGd { lr } => grad.iter().map(|g| *lr * g).collect(),
            Stepper::Adam(adam) => adam.step(grad),
        }
    }
}

/// `params − scale·step`.
pub fn apply(params: &[f64], step: &[f64], scale: f64) -> Vec<f64> {
    params.iter().zip(step).map(|(p, s)| p - scale * s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accepted {
    pub params: Vec<f64>,
    pub loss: f64,
    pub halvings: u32,
}

/// Halves the step until `objective` strictly decreases below
/// `current_loss`, trying at most `max_halvings` halvings after the full
/// step. Candidates whose objective errors or is non-finite count as
/// rejections. Returns `None` if no candidate was accepted.
pub fn backtrack<E>(
    params: &[f64],
    step: &[f64],
    current_loss: f64,
    max_halvings: u32,
    mut objective: impl FnMut(&[f64]) -> Result<f64, E>,
) -> Option<Accepted> {
    let mut scale = 1.0;
    for halvings in 0..=max_halvings {
        let candidate = apply(params, step, scale);
        if let Ok(loss) = objective(&candidate) {
            if loss.is_finite() && loss < current_loss {
                return Some(Accepted { params: candidate, loss, halvings });
            }
        }
        scale *= 0.5;
    }
    None
}
