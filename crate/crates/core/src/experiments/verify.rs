use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::simplex::{minimize_over_simplex_with, ClearedSnapshot, SimplexOptions};
use super::train::{gradient_of_mean_loss, mean_loss, StepOutcome, Trainer, TrainingConfig};
use super::{generate_toy_task, ExperimentError, Result, ToyTask};
use crate::contour::{evaluate_grid, grid_argmin, GridSettings};
use crate::gradcheck::{self, relative_error, relative_error_norm};
use crate::losses::{self, LossKind, LossSpec, PairPoint};
use crate::policy::{MlpPolicy, DEFAULT_HIDDEN};

/// Draws a Dirichlet(1, …, 1) vector from normalized unit exponentials.
/// Every entry is strictly positive.
pub fn sample_reference<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -rng.random_range(f64::EPSILON..1.0).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Options {
    pub seeds: Vec<u64>,
    pub num_responses: usize,
    pub beta: f64,
    pub mixture: f64,
    pub simplex: SimplexOptions,
    pub chosen_threshold: f64,
    pub rejected_threshold: f64,
}

impl Default for Theorem1Options {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            num_responses: 4,
            beta: losses::DEFAULT_BETA,
            mixture: losses::DEFAULT_MIXTURE,
            simplex: SimplexOptions::default(),
            chosen_threshold: 0.99,
            rejected_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Case {
    pub seed: u64,
    pub reference: Vec<f64>,
    pub chosen: usize,
    pub rejected: usize,
    pub bdpo_probs: Vec<f64>,
    pub bdpo_converged: bool,
    /// DPO state when `π(rejected)` first reached the threshold.
    pub dpo_cleared: Option<ClearedSnapshot>,
    /// `π(chosen)` was still below the chosen threshold at that moment.
    pub dpo_chosen_unsaturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub options: Theorem1Options,
    pub cases: Vec<Theorem1Case>,
    pub bdpo_converged: usize,
    pub dpo_cleared: usize,
    pub dpo_chosen_unsaturated: usize,
    pub pass: bool,
}

/// For every seed: a random strictly positive reference and a random
/// pair; BDPO must drive the pair to the corner while DPO must clear the
/// rejected response, and for at least one seed do so with `π(chosen)`
/// still short of the chosen threshold.
pub fn verify_theorem1(options: &Theorem1Options) -> Result<Theorem1Report> {
    if options.num_responses < 2 {
        return Err(ExperimentError::InvalidConfig("need at least two responses".into()));
    }
    let bdpo = LossSpec::bdpo(options.beta, options.mixture);
    let dpo = LossSpec::dpo(options.beta);
    let mut cases = Vec::with_capacity(options.seeds.len());
    for &seed in &options.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = sample_reference(&mut rng, options.num_responses);
        let chosen = rng.random_range(0..options.num_responses);
        let rejected = (chosen + rng.random_range(1..options.num_responses)) % options.num_responses;

        let b = minimize_over_simplex_with(&reference, chosen, rejected, &bdpo, &options.simplex)?;
        let d = minimize_over_simplex_with(
            &reference,
            chosen,
            rejected,
            &dpo,
            &SimplexOptions { clear_threshold: options.rejected_threshold, ..options.simplex },
        )?;
        let bdpo_converged =
            b.probs[chosen] >= options.chosen_threshold && b.probs[rejected] <= options.rejected_threshold;
        let dpo_chosen_unsaturated =
            d.rejected_cleared.as_ref().is_some_and(|s| s.probs[chosen] < options.chosen_threshold);
        cases.push(Theorem1Case {
            seed,
            reference,
            chosen,
            rejected,
            bdpo_probs: b.probs,
            bdpo_converged,
            dpo_cleared: d.rejected_cleared,
            dpo_chosen_unsaturated,
        });
    }
    let bdpo_converged = cases.iter().filter(|c| c.bdpo_converged).count();
    let dpo_cleared = cases.iter().filter(|c| c.dpo_cleared.is_some()).count();
    let dpo_chosen_unsaturated = cases.iter().filter(|c| c.dpo_chosen_unsaturated).count();
    let pass = bdpo_converged == cases.len() && dpo_cleared == cases.len() && dpo_chosen_unsaturated >= 1;
    Ok(Theorem1Report { options: options.clone(), cases, bdpo_converged, dpo_cleared, dpo_chosen_unsaturated, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Step {
    pub step: usize,
    pub loss: f64,
    /// Per pair, in task order.
    pub p_chosen: Vec<f64>,
    pub bound: Vec<f64>,
    pub bound_held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub task_seed: u64,
    pub config: TrainingConfig,
    pub steps: Vec<Theorem2Step>,
    pub monotone: bool,
    pub bound_held: bool,
    /// Step at which no halving decreased the loss. The run stops there;
    /// this is recorded but is not a failure.
    pub line_search_failure: Option<usize>,
    pub pass: bool,
}

/// Trains BDPO with monotone (line-searched) descent and checks
/// `π_θ(chosen) ≥ (1−λ)·π_ref(chosen)` for every pair at every step.
pub fn verify_theorem2(task: &ToyTask, config: &TrainingConfig) -> Result<Theorem2Report> {
    if config.loss_spec.kind != LossKind::Bdpo {
        return Err(ExperimentError::Precondition(format!("expected a bdpo spec, got {}", config.loss_spec.kind)));
    }
    if !config.line_search {
        return Err(ExperimentError::Precondition("line search must be enabled".into()));
    }
    let mut trainer = Trainer::new(task, *config)?;
    let keep = 1.0 - config.loss_spec.mixture;
    let bound: Vec<f64> =
        task.pairs.iter().map(|p| keep * trainer.reference_probs()[p.prompt][p.chosen]).collect();
    let record = |trainer: &Trainer<'_>| -> Result<Theorem2Step> {
        let p_chosen: Vec<f64> = trainer.snapshot()?.iter().map(|r| r.p_chosen).collect();
        let bound_held = p_chosen.iter().zip(&bound).all(|(p, b)| p >= b);
        Ok(Theorem2Step { step: trainer.step_index(), loss: trainer.objective(), p_chosen, bound: bound.clone(), bound_held })
    };
    let mut steps = vec![record(&trainer)?];
    let mut line_search_failure = None;
    while trainer.step_index() < config.steps {
        match trainer.step()? {
            StepOutcome::Moved { .. } => steps.push(record(&trainer)?),
            StepOutcome::Stalled => {
                line_search_failure = Some(trainer.step_index() + 1);
                break;
            }
        }
    }
    let monotone = steps.windows(2).all(|w| w[1].loss <= w[0].loss);
    let bound_held = steps.iter().all(|s| s.bound_held);
    Ok(Theorem2Report {
        task_seed: task.seed,
        config: *config,
        steps,
        monotone,
        bound_held,
        line_search_failure,
        pass: monotone && bound_held,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Options {
    pub counterexample_pw: f64,
    pub counterexample_epsilon: f64,
    pub epsilons: Vec<f64>,
    /// DPO loss below which a point counts as a DPO minimizer.
    pub dpo_tolerance: f64,
    /// Required gap between the counterexample's BDPO loss and BDPO's minimum.
    pub margin: f64,
    pub simplex: SimplexOptions,
    /// Probe grid for BDPO's minimum (`p_l` may start at 0).
    pub grid: GridSettings,
}

impl Default for Corollary1Options {
    fn default() -> Self {
        Self {
            counterexample_pw: 0.1,
            counterexample_epsilon: 1e-9,
            epsilons: vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9],
            dpo_tolerance: 1e-6,
            margin: 0.01,
            // The rejected probability decays slowly once the loss flattens;
            // 5000 steps leave DPO near 1e-5 at unit β.
            simplex: SimplexOptions { steps: 20_000, ..SimplexOptions::default() },
            grid: GridSettings { pw_range: (0.005, 1.0), pl_range: (0.0, 0.5), resolution: (200, 200), mask_simplex: true },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonProbe {
    pub epsilon: f64,
    pub dpo_loss: f64,
    pub bdpo_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Report {
    pub reference: (f64, f64),
    pub spec_bdpo: LossSpec,
    pub spec_dpo: LossSpec,
    pub bdpo_minimizer: Vec<f64>,
    pub dpo_at_bdpo_minimizer: f64,
    pub dpo_probe_grid_min: f64,
    pub forward_pass: bool,
    pub counterexample: EpsilonProbe,
    pub bdpo_grid_min: f64,
    pub bdpo_grid_argmin: (f64, f64),
    pub counterexample_gap: f64,
    pub counterexample_pass: bool,
    /// ε sweep: DPO loss must shrink as ε does while BDPO stays away from
    /// its minimum.
    pub epsilon_sweep: Vec<EpsilonProbe>,
    pub epsilon_sweep_pass: bool,
    /// DPO loss with `π(rejected)` left at its reference value.
    pub dpo_at_reference_rejected: f64,
    pub reference_rejected_pass: bool,
    pub pass: bool,
}

/// Checks that BDPO's minimizer also minimizes DPO, and that a DPO
/// minimizer found by only crushing the rejected response does not
/// minimize BDPO.
pub fn verify_corollary1(
    reference: (f64, f64),
    spec_bdpo: &LossSpec,
    spec_dpo: &LossSpec,
    options: &Corollary1Options,
) -> Result<Corollary1Report> {
    if spec_bdpo.kind != LossKind::Bdpo || spec_dpo.kind != LossKind::Dpo {
        return Err(ExperimentError::Precondition("expected a bdpo spec and a dpo spec".into()));
    }
    if spec_bdpo.beta != spec_dpo.beta {
        return Err(ExperimentError::Precondition(format!(
            "the two specs must share β (got {} and {})",
            spec_bdpo.beta, spec_dpo.beta
        )));
    }
    let (r_w, r_l) = reference;
    PairPoint::at_reference(r_w, r_l)?;
    let rest = 1.0 - r_w - r_l;
    if rest <= 0.0 {
        return Err(ExperimentError::Precondition(format!(
            "reference ({r_w}, {r_l}) leaves no mass for other responses"
        )));
    }

    let minimizer = minimize_over_simplex_with(&[r_w, r_l, rest], 0, 1, spec_bdpo, &options.simplex)?;
    let at = |p_w: f64, p_l: f64| PairPoint::new(p_w, p_l, r_w, r_l);
    let dpo_at_bdpo_minimizer = losses::dpo_loss(&at(minimizer.probs[0], minimizer.probs[1])?, spec_dpo)?;
    let dpo_grid = evaluate_grid(spec_dpo, reference, &GridSettings { pl_range: (options.grid.pw_range.0, options.grid.pl_range.1), ..options.grid })
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let dpo_probe_grid_min = grid_argmin(&dpo_grid).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?.loss;
    let forward_pass = dpo_at_bdpo_minimizer < options.dpo_tolerance
        && dpo_at_bdpo_minimizer <= dpo_probe_grid_min + options.dpo_tolerance;

    let bdpo_grid =
        evaluate_grid(spec_bdpo, reference, &options.grid).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let bdpo_min = grid_argmin(&bdpo_grid).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;

    let probe = |epsilon: f64| -> Result<EpsilonProbe> {
        let point = at(options.counterexample_pw, epsilon)?;
        Ok(EpsilonProbe { epsilon, dpo_loss: losses::dpo_loss(&point, spec_dpo)?, bdpo_loss: losses::bdpo_loss(&point, spec_bdpo)? })
    };
    let counterexample = probe(options.counterexample_epsilon)?;
    let counterexample_gap = counterexample.bdpo_loss - bdpo_min.loss;
    let counterexample_pass = counterexample.dpo_loss < options.dpo_tolerance && counterexample_gap > options.margin;

    let mut epsilons = options.epsilons.clone();
    epsilons.sort_by(|a, b| b.total_cmp(a));
    let epsilon_sweep = epsilons.iter().map(|&e| probe(e)).collect::<Result<Vec<_>>>()?;
    let epsilon_sweep_pass = epsilon_sweep.windows(2).all(|w| w[1].dpo_loss < w[0].dpo_loss)
        && epsilon_sweep.iter().all(|p| p.bdpo_loss - bdpo_min.loss > options.margin);

    let dpo_at_reference_rejected = losses::dpo_loss(&at(options.counterexample_pw, r_l)?, spec_dpo)?;
    let reference_rejected_pass = options.counterexample_pw >= r_w || dpo_at_reference_rejected > std::f64::consts::LN_2;

    Ok(Corollary1Report {
        reference,
        spec_bdpo: *spec_bdpo,
        spec_dpo: *spec_dpo,
        bdpo_minimizer: minimizer.probs,
        dpo_at_bdpo_minimizer,
        dpo_probe_grid_min,
        forward_pass,
        counterexample,
        bdpo_grid_min: bdpo_min.loss,
        bdpo_grid_argmin: (bdpo_min.pw, bdpo_min.pl),
        counterexample_gap,
        counterexample_pass,
        epsilon_sweep,
        epsilon_sweep_pass,
        dpo_at_reference_rejected,
        reference_rejected_pass,
        pass: forward_pass && counterexample_pass && epsilon_sweep_pass && reference_rejected_pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGradientStats {
    pub kind: LossKind,
    pub samples: usize,
    pub max_rel_err_p_w: f64,
    pub max_rel_err_p_l: f64,
    pub worst: Option<(PairPoint, LossSpec)>,
    pub failures: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    pub losses: Vec<LossGradientStats>,
    pub pass: bool,
}

fn random_point<R: Rng>(rng: &mut R) -> (f64, f64) {
    loop {
        let a = rng.random_range(0.02..0.98);
        let b = rng.random_range(0.02..0.98);
        if a + b <= 1.0 {
            return (a, b);
        }
    }
}

fn random_spec<R: Rng>(rng: &mut R, kind: LossKind) -> LossSpec {
    LossSpec {
        kind,
        beta: rng.random_range(0.05..1.0),
        alpha: rng.random_range(0.0..2.0),
        penalty: rng.random_range(0.0..10.0),
        mixture: rng.random_range(0.05..0.95),
    }
}

/// Analytic `(∂L/∂p_w, ∂L/∂p_l)` against central differences at random
/// interior points, component-wise relative error.
pub fn verify_gradients(samples: usize, seed: u64, tolerance: f64) -> Result<GradientReport> {
    let h = gradcheck::DEFAULT_STEP;
    let mut stats = Vec::with_capacity(LossKind::ALL.len());
    for (i, kind) in LossKind::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let mut s = LossGradientStats {
            kind,
            samples,
            max_rel_err_p_w: 0.0,
            max_rel_err_p_l: 0.0,
            worst: None,
            failures: 0,
            pass: true,
        };
        let mut worst = 0.0;
        let mut drawn = 0;
        while drawn < samples {
            let (p_w, p_l) = random_point(&mut rng);
            let (r_w, r_l) = random_point(&mut rng);
            // The DPOP penalty switches on at p_w = r_w; keep the stencil on one side.
            if kind == LossKind::Dpop && (p_w - r_w).abs() < 1e-4 {
                continue;
            }
            drawn += 1;
            let spec = random_spec(&mut rng, kind);
            let point = PairPoint::new(p_w, p_l, r_w, r_l)?;
            let analytic = losses::analytic_gradient(&point, &spec)?;
            let numeric = gradcheck::loss_gradient_fd(&point, &spec, h)?;
            let ew = relative_error(analytic.d_p_w, numeric.d_p_w);
            let el = relative_error(analytic.d_p_l, numeric.d_p_l);
            s.max_rel_err_p_w = s.max_rel_err_p_w.max(ew);
            s.max_rel_err_p_l = s.max_rel_err_p_l.max(el);
            if ew.max(el) > worst {
                worst = ew.max(el);
                s.worst = Some((point, spec));
            }
            if ew > tolerance || el > tolerance {
                s.failures += 1;
            }
        }
        s.pass = s.failures == 0;
        stats.push(s);
    }
    let pass = stats.iter().all(|s| s.pass);
    Ok(GradientReport { seed, tolerance, step: h, losses: stats, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackpropCase {
    pub seed: u64,
    pub loss: LossKind,
    pub parameters: usize,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackpropReport {
    pub tolerance: f64,
    pub step: f64,
    pub cases: Vec<BackpropCase>,
    pub pass: bool,
}

/// Backpropagated MLP gradients of the mean toy loss against central
/// differences over every parameter, norm-wise relative error. Case `s`
/// uses loss `ALL[s % 4]`, policy seed `s` and reference seed `s + 1000`.
pub fn verify_backprop(seeds: &[u64], tolerance: f64) -> Result<BackpropReport> {
    let h = gradcheck::DEFAULT_STEP;
    let mut cases = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let kind = LossKind::ALL[(seed % LossKind::ALL.len() as u64) as usize];
        let spec = LossSpec::new(kind);
        let task = generate_toy_task(seed);
        let policy = MlpPolicy::init(task.num_prompts, task.num_responses, DEFAULT_HIDDEN, seed);
        let reference = MlpPolicy::init(task.num_prompts, task.num_responses, DEFAULT_HIDDEN, seed + 1000);
        let reference_probs =
            (0..task.num_prompts).map(|k| reference.forward(k)).collect::<std::result::Result<Vec<_>, _>>()?;
        let analytic = gradient_of_mean_loss(&policy, &task, &reference_probs, &spec)?;
        let mut probe = policy.clone();
        let numeric = gradcheck::gradient_fd(
            |x: &[f64]| {
                probe.set_params(x)?;
                mean_loss(&probe, &task, &reference_probs, &spec)
            },
            &policy.params(),
            h,
        )?;
        let rel_err = relative_error_norm(&analytic, &numeric);
        cases.push(BackpropCase { seed, loss: kind, parameters: policy.param_count(), rel_err, pass: rel_err <= tolerance });
    }
    let pass = cases.iter().all(|c| c.pass);
    Ok(BackpropReport { tolerance, step: h, cases, pass })
}
