use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result, ToyTask};
use crate::fmt::float17;
use crate::losses::{self, LossSpec, PairPoint};
use crate::optim::{self, OptimizerKind, Stepper};
use crate::policy::{kl_divergence, MlpPolicy, PolicyError, DEFAULT_HIDDEN};

/// Column header of the trace CSV.
pub const TRACE_HEADER: &str =
    "step,prompt,p_chosen,p_rejected,log_p_chosen,log_p_rejected,kl_to_ref,nll_chosen,in_dist_log_mass,loss";

/// Hyperparameters of one toy training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub loss_spec: LossSpec,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Backtrack each step until the objective strictly decreases.
    pub line_search: bool,
    /// Seed of the reference (and initial) MLP weights.
    pub seed: u64,
    pub trace_every: usize,
    pub max_halvings: u32,
    pub hidden: usize,
}

impl TrainingConfig {
    pub const FIGURE_STEPS: usize = 1000;
    pub const FIGURE_LEARNING_RATE: f64 = 0.01;
    pub const FIGURE_TRACE_EVERY: usize = 10;
    pub const THEOREM_STEPS: usize = 300;
    pub const THEOREM_LEARNING_RATE: f64 = 1.0;
    pub const MAX_HALVINGS: u32 = 40;

    /// Adam without line search: the setting used to show training dynamics.
    pub fn figure(loss_spec: LossSpec, seed: u64) -> Self {
        Self {
            loss_spec,
            steps: Self::FIGURE_STEPS,
            learning_rate: Self::FIGURE_LEARNING_RATE,
            optimizer: OptimizerKind::Adam,
            line_search: false,
            seed,
            trace_every: Self::FIGURE_TRACE_EVERY,
            max_halvings: Self::MAX_HALVINGS,
            hidden: DEFAULT_HIDDEN,
        }
    }

    /// Plain gradient descent with backtracking, traced every step.
    pub fn theorem(loss_spec: LossSpec, seed: u64) -> Self {
        Self {
            steps: Self::THEOREM_STEPS,
            learning_rate: Self::THEOREM_LEARNING_RATE,
            optimizer: OptimizerKind::PlainGd,
            line_search: true,
            trace_every: 1,
            ..Self::figure(loss_spec, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_spec.validate()?;
        let bad = |msg: String| Err(ExperimentError::InvalidConfig(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.trace_every == 0 || self.trace_every > self.steps {
            return bad(format!("trace_every must be in 1..={}, got {}", self.steps, self.trace_every));
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        Ok(())
    }
}

/// One trace line: the state of one preference pair at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub prompt: usize,
    pub p_chosen: f64,
    pub p_rejected: f64,
    pub log_p_chosen: f64,
    pub log_p_rejected: f64,
    /// Mean over prompts of `KL(π_θ ‖ π_ref)`.
    pub kl_to_ref: f64,
    /// Mean over pairs of `−log π_θ(chosen)`.
    pub nll_chosen: f64,
    pub in_dist_log_mass: f64,
    /// Loss of this row's pair.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StopReason {
    Completed,
    /// No halving of the proposed step decreased the objective.
    LineSearchStalled { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Moved { loss: f64, halvings: u32 },
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub code_version: String,
    pub config: TrainingConfig,
    pub task: ToyTask,
    pub parameter_count: usize,
    pub steps_run: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub metadata: TrainingMetadata,
    pub rows: Vec<TraceRow>,
    /// `[prompt][response]` reference probabilities.
    pub reference_probs: Vec<Vec<f64>>,
    pub final_probs: Vec<Vec<f64>>,
    /// Mean pair loss after every step, starting at step 0.
    pub objective_history: Vec<f64>,
    /// Halvings taken by the line search at steps 1, 2, ….
    pub halvings: Vec<u32>,
}

impl TrainingTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.prompt,
                float17(r.p_chosen),
                float17(r.p_rejected),
                float17(r.log_p_chosen),
                float17(r.log_p_rejected),
                float17(r.kl_to_ref),
                float17(r.nll_chosen),
                float17(r.in_dist_log_mass),
                float17(r.loss)
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace CSV is ASCII")
    }

    /// Writes `<stem>.csv` and `<stem>.json` (metadata) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.csv_string())?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_string_pretty(&self.metadata)? + "\n")?;
        Ok(vec![csv, json])
    }

    pub fn rows_at(&self, step: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.step == step)
    }

    pub fn last_step(&self) -> usize {
        self.rows.last().map_or(0, |r| r.step)
    }
}

/// Owns one training run and advances it a step at a time.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    task: &'a ToyTask,
    config: TrainingConfig,
    policy: MlpPolicy,
    reference_probs: Vec<Vec<f64>>,
    stepper: Stepper,
    step: usize,
    loss: f64,
}

struct Evaluation {
    probs: Vec<Vec<f64>>,
    pair_losses: Vec<f64>,
    mean: f64,
}

impl<'a> Trainer<'a> {
    /// Seeds the reference MLP from `config.seed` and starts the trained
    /// policy as an exact clone of it.
    pub fn new(task: &'a ToyTask, config: TrainingConfig) -> Result<Self> {
        let reference = MlpPolicy::init(task.num_prompts, task.num_responses, config.hidden, config.seed);
        Self::with_reference(task, config, reference)
    }

    pub fn with_reference(task: &'a ToyTask, config: TrainingConfig, reference: MlpPolicy) -> Result<Self> {
        config.validate()?;
        if reference.num_prompts != task.num_prompts || reference.num_responses != task.num_responses {
            return Err(ExperimentError::InvalidConfig(format!(
                "reference model is {}×{} but the task is {}×{}",
                reference.num_prompts, reference.num_responses, task.num_prompts, task.num_responses
            )));
        }
        let reference_probs = (0..task.num_prompts).map(|k| reference.forward(k)).collect::<std::result::Result<_, _>>()?;
        let stepper = Stepper::new(config.optimizer, reference.param_count(), config.learning_rate);
        let mut trainer = Self { task, config, policy: reference, reference_probs, stepper, step: 0, loss: f64::NAN };
        trainer.loss = trainer.evaluate(&trainer.policy, 0)?.mean;
        Ok(trainer)
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn objective(&self) -> f64 {
        self.loss
    }

    pub fn policy(&self) -> &MlpPolicy {
        &self.policy
    }

    pub fn reference_probs(&self) -> &[Vec<f64>] {
        &self.reference_probs
    }

    fn evaluate(&self, policy: &MlpPolicy, step: usize) -> Result<Evaluation> {
        let probs = (0..self.task.num_prompts)
            .map(|k| policy.forward(k))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| match e {
                PolicyError::NonFiniteLogit { value, .. } => ExperimentError::NonFinite { step, value },
                other => other.into(),
            })?;
        let spec = &self.config.loss_spec;
        let mut pair_losses = Vec::with_capacity(self.task.pairs.len());
        for pair in &self.task.pairs {
            let point = self.pair_point(&probs, pair.prompt, pair.chosen, pair.rejected)?;
            let value = losses::loss(&point, spec).map_err(|source| ExperimentError::LossAt { step, source })?;
            if !value.is_finite() {
                return Err(ExperimentError::NonFinite { step, value });
            }
            pair_losses.push(value);
        }
        let mean = pair_losses.iter().sum::<f64>() / pair_losses.len() as f64;
        Ok(Evaluation { probs, pair_losses, mean })
    }

    fn pair_point(&self, probs: &[Vec<f64>], prompt: usize, chosen: usize, rejected: usize) -> Result<PairPoint> {
        let r = &self.reference_probs[prompt];
        let p = &probs[prompt];
        Ok(PairPoint::new(p[chosen], p[rejected], r[chosen], r[rejected])?)
    }

    /// Flat gradient of the mean pair loss at the current parameters.
    pub fn gradient(&self) -> Result<Vec<f64>> {
        gradient_of_mean_loss(&self.policy, self.task, &self.reference_probs, &self.config.loss_spec)
            .map_err(|e| match e {
                ExperimentError::Loss(source) => ExperimentError::LossAt { step: self.step, source },
                other => other,
            })
    }

    /// One update. With line search enabled a stalled search leaves the
    /// parameters untouched and reports [`StepOutcome::Stalled`].
    pub fn step(&mut self) -> Result<StepOutcome> {
        let grad = self.gradient()?;
        let direction = self.stepper.step(&grad);
        let params = self.policy.params();
        let next = self.step + 1;
        if self.config.line_search {
            let mut probe = self.policy.clone();
            let accepted = optim::backtrack(&params, &direction, self.loss, self.config.max_halvings, |candidate| {
                probe.set_params(candidate)?;
                self.evaluate(&probe, next).map(|e| e.mean)
            });
            match accepted {
                Some(acc) => {
                    self.policy.set_params(&acc.params)?;
                    self.loss = acc.loss;
                    self.step = next;
                    Ok(StepOutcome::Moved { loss: acc.loss, halvings: acc.halvings })
                }
                None => Ok(StepOutcome::Stalled),
            }
        } else {
            self.policy.set_params(&optim::apply(&params, &direction, 1.0))?;
            self.loss = self.evaluate(&self.policy, next)?.mean;
            self.step = next;
            Ok(StepOutcome::Moved { loss: self.loss, halvings: 0 })
        }
    }

    /// Trace rows for the current parameters, one per pair.
    pub fn snapshot(&self) -> Result<Vec<TraceRow>> {
        let eval = self.evaluate(&self.policy, self.step)?;
        let kl = (0..self.task.num_prompts)
            .map(|k| kl_divergence(&eval.probs[k], &self.reference_probs[k]))
            .sum::<std::result::Result<f64, _>>()?
            / self.task.num_prompts as f64;
        let nll = self.task.pairs.iter().map(|p| -eval.probs[p.prompt][p.chosen].ln()).sum::<f64>()
            / self.task.pairs.len() as f64;
        Ok(self
            .task
            .pairs
            .iter()
            .zip(&eval.pair_losses)
            .map(|(pair, &loss)| {
                let p = &eval.probs[pair.prompt];
                let (pc, pr) = (p[pair.chosen], p[pair.rejected]);
                TraceRow {
                    step: self.step,
                    prompt: pair.prompt,
                    p_chosen: pc,
                    p_rejected: pr,
                    log_p_chosen: pc.ln(),
                    log_p_rejected: pr.ln(),
                    kl_to_ref: kl,
                    nll_chosen: nll,
                    // The sum of two softmax entries can round a hair above 1.
                    in_dist_log_mass: (pc + pr).ln().min(0.0),
                    loss,
                }
            })
            .collect())
    }

    fn current_probs(&self) -> Result<Vec<Vec<f64>>> {
        Ok((0..self.task.num_prompts).map(|k| self.policy.forward(k)).collect::<std::result::Result<_, _>>()?)
    }
}

/// Gradient of the mean pair loss with respect to the flat MLP parameters.
pub(crate) fn gradient_of_mean_loss(
    policy: &MlpPolicy,
    task: &ToyTask,
    reference_probs: &[Vec<f64>],
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    let scale = 1.0 / task.pairs.len() as f64;
    let mut total = vec![0.0; policy.param_count()];
    for prompt in 0..task.num_prompts {
        let probs = policy.forward(prompt)?;
        let r = &reference_probs[prompt];
        let mut dprobs = vec![0.0; task.num_responses];
        let mut any = false;
        for pair in task.pairs_for(prompt) {
            let point = PairPoint::new(probs[pair.chosen], probs[pair.rejected], r[pair.chosen], r[pair.rejected])?;
            let g = losses::analytic_gradient(&point, spec)?;
            dprobs[pair.chosen] += scale * g.d_p_w;
            dprobs[pair.rejected] += scale * g.d_p_l;
            any = true;
        }
        if any {
            let grad = policy.backprop(prompt, &dprobs)?;
            total.iter_mut().zip(grad.to_flat()).for_each(|(t, g)| *t += g);
        }
    }
    Ok(total)
}

/// Mean pair loss of `policy` on `task`.
pub(crate) fn mean_loss(
    policy: &MlpPolicy,
    task: &ToyTask,
    reference_probs: &[Vec<f64>],
    spec: &LossSpec,
) -> std::result::Result<f64, ExperimentError> {
    let mut total = 0.0;
    for pair in &task.pairs {
        let p = policy.forward(pair.prompt)?;
        let r = &reference_probs[pair.prompt];
        let point = PairPoint::new(p[pair.chosen], p[pair.rejected], r[pair.chosen], r[pair.rejected])?;
        total += losses::loss(&point, spec)?;
    }
    Ok(total / task.pairs.len() as f64)
}

/// Trains a fresh reference clone on `task` and records the trace.
pub fn train_toy(task: &ToyTask, config: &TrainingConfig) -> Result<TrainingTrace> {
    run(Trainer::new(task, *config)?)
}

/// Like [`train_toy`] with an explicitly supplied reference model.
pub fn train_toy_with_reference(task: &ToyTask, config: &TrainingConfig, reference: MlpPolicy) -> Result<TrainingTrace> {
    run(Trainer::with_reference(task, *config, reference)?)
}

fn run(mut trainer: Trainer<'_>) -> Result<TrainingTrace> {
    let config = trainer.config;
    let reference_probs = trainer.reference_probs.clone();
    let mut rows = trainer.snapshot()?;
    let mut objective_history = vec![trainer.loss];
    let mut halvings = Vec::new();
    let mut stop = StopReason::Completed;
    while trainer.step < config.steps {
        match trainer.step()? {
            StepOutcome::Moved { loss, halvings: h } => {
                objective_history.push(loss);
                halvings.push(h);
                if trainer.step.is_multiple_of(config.trace_every) || trainer.step == config.steps {
                    rows.extend(trainer.snapshot()?);
                }
            }
            StepOutcome::Stalled => {
                stop = StopReason::LineSearchStalled { step: trainer.step + 1 };
                if rows.last().map(|r| r.step) != Some(trainer.step) {
                    rows.extend(trainer.snapshot()?);
                }
                break;
            }
        }
    }
    let final_probs = trainer.current_probs()?;
    let metadata = TrainingMetadata {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        task: trainer.task.clone(),
        parameter_count: trainer.policy.param_count(),
        steps_run: trainer.step,
        stop_reason: stop,
    };
    Ok(TrainingTrace { metadata, rows, reference_probs, final_probs, objective_history, halvings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::experiments::{generate_toy_task, generate_toy_task_with_mode, TaskMode};
    use crate::gradcheck::{gradient_fd, relative_error_norm};

    fn short(kind: LossKind) -> TrainingConfig {
        TrainingConfig { steps: 40, trace_every: 10, ..TrainingConfig::figure(LossSpec::new(kind), 7) }
    }

    #[test]
    fn step_zero_is_the_reference() {
        let task = generate_toy_task(7);
        let trace = train_toy(&task, &short(LossKind::Dpo)).unwrap();
        for row in trace.rows_at(0) {
            let pair = task.pairs_for(row.prompt).next().unwrap();
            assert_eq!(row.p_chosen, trace.reference_probs[row.prompt][pair.chosen]);
            assert_eq!(row.kl_to_ref, 0.0);
            assert!((row.loss - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_recorded_on_schedule() {
        let trace = train_toy(&generate_toy_task(1), &short(LossKind::Bdpo)).unwrap();
        let steps: Vec<usize> = trace.rows.iter().map(|r| r.step).step_by(4).collect();
        assert_eq!(steps, vec![0, 10, 20, 30, 40]);
        assert_eq!(trace.objective_history.len(), 41);
        assert_eq!(trace.metadata.stop_reason, StopReason::Completed);
    }

    #[test]
    fn trace_row_invariants() {
        let task = generate_toy_task(2);
        for kind in LossKind::ALL {
            let trace = train_toy(&task, &short(kind)).unwrap();
            for row in &trace.rows {
                assert!(row.p_chosen > 0.0 && row.p_chosen < 1.0);
                assert!((row.log_p_chosen - row.p_chosen.ln()).abs() <= 1e-12);
                assert!((row.log_p_rejected - row.p_rejected.ln()).abs() <= 1e-12);
                assert!(row.in_dist_log_mass <= 0.0);
                assert!(row.kl_to_ref >= 0.0);
            }
            for probs in &trace.final_probs {
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for mode in [TaskMode::MainText, TaskMode::AppendixB1] {
            let task = generate_toy_task_with_mode(4, mode);
            for kind in LossKind::ALL {
                let config = short(kind);
                let mut trainer = Trainer::new(&task, config).unwrap();
                for _ in 0..5 {
                    trainer.step().unwrap();
                }
                let analytic = trainer.gradient().unwrap();
                let mut probe = trainer.policy().clone();
                let numeric = gradient_fd(
                    |x: &[f64]| {
                        probe.set_params(x)?;
                        mean_loss(&probe, &task, trainer.reference_probs(), &config.loss_spec)
                    },
                    &trainer.policy().params(),
                    1e-6,
                )
                .unwrap();
                let err = relative_error_norm(&analytic, &numeric);
                assert!(err < 1e-6, "{kind} {mode}: {err}");
            }
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let task = generate_toy_task(9);
        let a = train_toy(&task, &short(LossKind::Dpop)).unwrap();
        let b = train_toy(&task, &short(LossKind::Dpop)).unwrap();
        assert_eq!(a.csv_string(), b.csv_string());
    }

    #[test]
    fn line_search_never_increases_the_objective() {
        let task = generate_toy_task(3);
        let config = TrainingConfig { steps: 50, ..TrainingConfig::theorem(LossSpec::bdpo(0.1, 0.5), 3) };
        let trace = train_toy(&task, &config).unwrap();
        assert!(trace.objective_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = TrainingConfig::figure(LossSpec::new(LossKind::Dpo), 0);
        for config in [
            TrainingConfig { steps: 0, ..base },
            TrainingConfig { learning_rate: 0.0, ..base },
            TrainingConfig { trace_every: base.steps + 1, ..base },
            TrainingConfig { loss_spec: LossSpec::bdpo(0.1, 1.0), ..base },
        ] {
            assert!(config.validate().is_err(), "{config:?}");
        }
    }

    #[test]
    fn divergence_reports_the_step() {
        let task = generate_toy_task(0);
        let config = TrainingConfig {
            steps: 200,
            learning_rate: 1e6,
            optimizer: OptimizerKind::PlainGd,
            trace_every: 1,
            ..TrainingConfig::figure(LossSpec::dpo(0.1), 0)
        };
        match train_toy(&task, &config) {
            Err(ExperimentError::NonFinite { step, .. }) | Err(ExperimentError::LossAt { step, .. }) => {
                assert!(step >= 1)
            }
            other => panic!("expected a divergence, got {other:?}"),
        }
    }

    #[test]
    fn csv_header_and_shape() {
        let trace = train_toy(&generate_toy_task(5), &short(LossKind::DpoNll)).unwrap();
        let csv = trace.csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        assert_eq!(lines.count(), trace.rows.len());
    }
}
