use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train_toy, TrainingConfig, TrainingTrace, TRACE_HEADER};
use super::{ExperimentError, Result, ToyTask};
use crate::fmt::float17;
use crate::losses::{LossKind, LossSpec};

/// The hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// BDPO mixture weight λ.
    Mixture,
    /// DPO+NLL weight α.
    Alpha,
    /// DPOP penalty weight.
    Penalty,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Mixture => "lambda",
            SweepParam::Alpha => "alpha",
            SweepParam::Penalty => "penalty",
            SweepParam::Beta => "beta",
        }
    }

    /// Loss family the parameter belongs to, if it is specific to one.
    pub fn loss_kind(self) -> Option<LossKind> {
        match self {
            SweepParam::Mixture => Some(LossKind::Bdpo),
            SweepParam::Alpha => Some(LossKind::DpoNll),
            SweepParam::Penalty => Some(LossKind::Dpop),
            SweepParam::Beta => None,
        }
    }

    pub fn apply(self, spec: LossSpec, value: f64) -> LossSpec {
        match self {
            SweepParam::Mixture => LossSpec { mixture: value, ..spec },
            SweepParam::Alpha => LossSpec { alpha: value, ..spec },
            SweepParam::Penalty => LossSpec { penalty: value, ..spec },
            SweepParam::Beta => LossSpec { beta: value, ..spec },
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lambda" | "mixture" => Ok(SweepParam::Mixture),
            "alpha" => Ok(SweepParam::Alpha),
            "penalty" => Ok(SweepParam::Penalty),
            "beta" => Ok(SweepParam::Beta),
            other => Err(format!("unknown sweep parameter `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub value: f64,
    pub trace: TrainingTrace,
    /// [`trace_distance`] to the DPO run, when one was trained.
    pub distance_to_dpo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub runs: Vec<SweepRun>,
    pub dpo: Option<TrainingTrace>,
}

impl SweepResult {
    /// All traces in one long table keyed by the swept value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{},{TRACE_HEADER}", self.param)?;
        for run in &self.runs {
            let value = float17(run.value);
            let csv = run.trace.csv_string();
            for line in csv.lines().skip(1) {
                writeln!(out, "{value},{line}")?;
            }
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("sweep CSV is ASCII")
    }

    pub fn distances(&self) -> Vec<Option<f64>> {
        self.runs.iter().map(|r| r.distance_to_dpo).collect()
    }
}

/// Root-mean-square difference of `log π(chosen)` and `log π(rejected)`
/// over matching trace rows.
pub fn trace_distance(a: &TrainingTrace, b: &TrainingTrace) -> Result<f64> {
    if a.rows.len() != b.rows.len() || a.rows.is_empty() {
        return Err(ExperimentError::InvalidConfig(format!(
            "traces have {} and {} rows",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in a.rows.iter().zip(&b.rows) {
        if (x.step, x.prompt) != (y.step, y.prompt) {
            return Err(ExperimentError::InvalidConfig(format!(
                "trace rows disagree: step {} prompt {} vs step {} prompt {}",
                x.step, x.prompt, y.step, y.prompt
            )));
        }
        total += (x.log_p_chosen - y.log_p_chosen).powi(2) + (x.log_p_rejected - y.log_p_rejected).powi(2);
    }
    Ok((total / (2 * a.rows.len()) as f64).sqrt())
}

/// Trains one run per value in parallel, all sharing `task` and the seed
/// in `base`. For a mixture sweep a DPO run with the same settings is
/// trained as well and every run's distance to it is recorded.
pub fn run_sweep(task: &ToyTask, base: &TrainingConfig, param: SweepParam, values: &[f64]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(ExperimentError::InvalidConfig(format!("no values given for {param}")));
    }
    let spec = match param.loss_kind() {
        Some(kind) => LossSpec { kind, ..base.loss_spec },
        None => base.loss_spec,
    };
    let configs: Vec<TrainingConfig> =
        values.iter().map(|&v| TrainingConfig { loss_spec: param.apply(spec, v), ..*base }).collect();
    for config in &configs {
        config.validate()?;
    }
    let traces: Vec<TrainingTrace> = configs.par_iter().map(|c| train_toy(task, c)).collect::<Result<_>>()?;
    let dpo = if param == SweepParam::Mixture {
        Some(train_toy(task, &TrainingConfig { loss_spec: LossSpec { kind: LossKind::Dpo, ..spec }, ..*base })?)
    } else {
        None
    };
    let mut runs = Vec::with_capacity(traces.len());
    for (&value, trace) in values.iter().zip(traces) {
        let distance_to_dpo = dpo.as_ref().map(|d| trace_distance(&trace, d)).transpose()?;
        runs.push(SweepRun { value, trace, distance_to_dpo });
    }
    Ok(SweepResult { param, runs, dpo })
}
