use std::collections::BTreeMap;
use std::fmt::Write as _;

use prefopt::contour::{alpha_sweep, evaluate_grid, grid_argmin, render_svg, ContourGrid, GridSettings};
use prefopt::experiments::{
    self, generate_toy_task_with_mode, run_sweep, train_toy, Corollary1Options, SweepParam, TaskMode,
    Theorem1Options, Theorem2Report, TrainingConfig,
};
use prefopt::fmt::float17;
use prefopt::losses::{LossKind, LossSpec};
use prefopt::optim::OptimizerKind;
use serde::Serialize;
use serde_json::json;

use crate::args::{ContourArgs, Suite, SweepArgs, TaskModeArg, ToyArgs, VerifyArgs};
use crate::manifest::Outputs;
use crate::settings::{layer, parse_list, Layered};
use crate::CliError;

const FIGURE1_REFERENCE: (f64, f64) = (0.4, 0.1);
const FIGURE2_ALPHAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
const THEOREM2_MIXTURES: [f64; 3] = [0.25, 0.5, 0.75];
const COROLLARY_BETA: f64 = 1.0;
const GRADIENT_TOLERANCE: f64 = 1e-6;
const BACKPROP_TOLERANCE: f64 = 1e-5;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_kind(text: &str) -> Result<LossKind, CliError> {
    text.parse::<LossKind>().map_err(|e| usage(e.to_string()))
}

fn parse_optimizer(text: &Option<String>) -> Result<Option<OptimizerKind>, CliError> {
    text.as_deref().map(|t| t.parse::<OptimizerKind>().map_err(usage)).transpose()
}

fn json<T: Serialize>(value: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(value).map_err(|e| CliError::Runtime(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| CliError::Runtime(e.to_string()))
}

// ---------------------------------------------------------------- contour

enum ContourJob {
    Figure1,
    Figure2(Vec<f64>),
    Single(LossKind),
}

fn parse_reference(text: &str) -> Result<(f64, f64), CliError> {
    match parse_list("ref", text)?.as_slice() {
        [w, l] => Ok((*w, *l)),
        _ => Err(usage(format!("--ref expects two comma-separated probabilities, got `{text}`"))),
    }
}

fn parse_resolution(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split([',', 'x']).map(str::trim).collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| usage(format!("--resolution: `{s}` is not a count")));
    match parts.as_slice() {
        [n] => Ok((num(n)?, num(n)?)),
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(usage(format!("--resolution expects N or N_PW,N_PL, got `{text}`"))),
    }
}

pub fn contour(args: ContourArgs) -> Result<u8, CliError> {
    let layered = layer(&args.common)?;
    let job = match (args.figure, &args.loss) {
        (Some(1), None) | (None, None) => ContourJob::Figure1,
        (Some(2), None) => ContourJob::Figure2(layered.alpha.clone().unwrap_or(FIGURE2_ALPHAS.to_vec())),
        (Some(n), None) => return Err(usage(format!("--figure must be 1 or 2, got {n}"))),
        (None, Some(loss)) => ContourJob::Single(parse_kind(loss)?),
        (Some(_), Some(_)) => return Err(usage("--figure and --loss are mutually exclusive")),
    };
    if let ContourJob::Figure2(alphas) = &job {
        if alphas.is_empty() {
            return Err(usage("--alpha list is empty"));
        }
    }
    let hyper = match job {
        ContourJob::Figure2(_) => Layered { alpha: None, ..layered.clone() }.hyper()?,
        _ => layered.hyper()?,
    };
    let reference = args.reference.as_deref().map(parse_reference).transpose()?.unwrap_or(FIGURE1_REFERENCE);

    let mut settings = match job {
        ContourJob::Figure2(_) => GridSettings::figure2(),
        _ => GridSettings::figure1(),
    };
    settings.pw_range = (args.pw_min.unwrap_or(settings.pw_range.0), args.pw_max.unwrap_or(settings.pw_range.1));
    settings.pl_range = (args.pl_min.unwrap_or(settings.pl_range.0), args.pl_max.unwrap_or(settings.pl_range.1));
    if let Some(r) = &args.resolution {
        settings.resolution = parse_resolution(r)?;
    }
    settings.mask_simplex = args.mask_simplex;

    let grids: Vec<(String, ContourGrid)> = match &job {
        ContourJob::Figure1 => LossKind::ALL
            .into_iter()
            .map(|kind| Ok((format!("grid_{kind}"), evaluate_grid(&hyper.spec(kind)?, reference, &settings)?)))
            .collect::<Result<_, CliError>>()?,
        ContourJob::Figure2(alphas) => {
            for &alpha in alphas {
                LossSpec::dpo_nll(hyper.beta, alpha).validate().map_err(|e| usage(e.to_string()))?;
            }
            let grids = alpha_sweep(reference, alphas, hyper.beta, &settings)?;
            alphas.iter().zip(grids).map(|(a, g)| (format!("grid_dpo-nll_alpha_{a}"), g)).collect()
        }
        ContourJob::Single(kind) => {
            vec![(format!("grid_{kind}"), evaluate_grid(&hyper.spec(*kind)?, reference, &settings)?)]
        }
    };

    let out = layered.out();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut outputs = Outputs::default();
    let mut summary = String::from("grid,loss,beta,alpha,penalty,lambda,argmin_pw,argmin_pl,argmin_loss\n");
    for (stem, grid) in &grids {
        outputs.extend(grid.save(&out, stem)?);
        if layered.svg {
            outputs.write(out.join(format!("{stem}.svg")), render_svg(grid))?;
        }
        let best = grid_argmin(grid)?;
        let s = &grid.spec;
        let _ = writeln!(
            summary,
            "{stem},{},{},{},{},{},{},{},{}",
            s.kind,
            float17(s.beta),
            float17(s.alpha),
            float17(s.penalty),
            float17(s.mixture),
            float17(best.pw),
            float17(best.pl),
            float17(best.loss)
        );
        println!("{stem}: {}×{} cells, argmin ({:.4}, {:.4}) = {:.6}", grid.cols(), grid.rows(), best.pw, best.pl, best.loss);
    }
    outputs.write(out.join("contour_summary.csv"), summary)?;

    let preset = match &job {
        ContourJob::Figure1 => json!({ "figure": 1 }),
        ContourJob::Figure2(alphas) => json!({ "figure": 2, "alphas": alphas }),
        ContourJob::Single(kind) => json!({ "loss": kind }),
    };
    let config = json!({
        "job": preset,
        "reference": [reference.0, reference.1],
        "grid": settings,
        "hyperparameters": hyper,
        "svg": layered.svg,
        "out": out.display().to_string(),
    });
    outputs.finish(&out, "contour", layered.seed(), config)?;
    Ok(0)
}

// -------------------------------------------------------------------- toy

fn training_config(
    layered: &Layered,
    spec: LossSpec,
    trace_every: Option<usize>,
    optimizer: Option<OptimizerKind>,
) -> TrainingConfig {
    let base = TrainingConfig::figure(spec, layered.seed());
    let steps = layered.steps.unwrap_or(base.steps);
    TrainingConfig {
        steps,
        learning_rate: layered.lr.unwrap_or(base.learning_rate),
        optimizer: optimizer.unwrap_or(base.optimizer),
        line_search: layered.line_search,
        trace_every: trace_every.unwrap_or(base.trace_every.min(steps)),
        ..base
    }
}

pub fn toy(args: ToyArgs) -> Result<u8, CliError> {
    let layered = layer(&args.common)?;
    let hyper = layered.hyper()?;
    let kinds: Vec<LossKind> = match (&args.losses, &args.loss) {
        (Some(list), _) => list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse_kind).collect::<Result<_, _>>()?,
        (None, Some(one)) => vec![parse_kind(one)?],
        (None, None) => LossKind::ALL.to_vec(),
    };
    if kinds.is_empty() {
        return Err(usage("--losses is empty"));
    }
    let mode = match args.task_mode {
        Some(TaskModeArg::AppendixB1) => TaskMode::AppendixB1,
        _ => TaskMode::MainText,
    };
    let optimizer = parse_optimizer(&args.optimizer)?;
    let configs = kinds
        .iter()
        .map(|&kind| {
            let config = training_config(&layered, hyper.spec(kind)?, args.trace_every, optimizer);
            config.validate()?;
            Ok(config)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let seed = layered.seed();
    let task = generate_toy_task_with_mode(seed, mode);
    let out = layered.out();
    let mut outputs = Outputs::default();
    let mut summary = String::from("loss,prompt,response,role,p_ref,p_final\n");
    for config in &configs {
        let kind = config.loss_spec.kind;
        let trace = train_toy(&task, config)?;
        outputs.extend(trace.save(&out, &format!("trace_{kind}"))?);
        for prompt in 0..task.num_prompts {
            for response in 0..task.num_responses {
                let _ = writeln!(
                    summary,
                    "{kind},{prompt},{response},{},{},{}",
                    task.role(prompt, response),
                    float17(trace.reference_probs[prompt][response]),
                    float17(trace.final_probs[prompt][response])
                );
            }
        }
        let finals: Vec<String> = trace.rows_at(trace.last_step()).map(|r| format!("{:.4}", r.p_chosen)).collect();
        println!("{kind}: {} steps, final p_chosen [{}]", trace.metadata.steps_run, finals.join(", "));
    }
    outputs.write(out.join("summary.csv"), summary)?;

    let config = json!({
        "task": task,
        "training": configs,
        "out": out.display().to_string(),
    });
    outputs.finish(&out, "toy", seed, config)?;
    Ok(0)
}

// ----------------------------------------------------------------- verify

#[derive(Debug, Serialize)]
struct Theorem2Suite {
    mixtures: Vec<f64>,
    seeds: Vec<u64>,
    runs: Vec<Theorem2Report>,
    failures: usize,
    line_search_failures: usize,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    results: BTreeMap<&'static str, bool>,
    suites: BTreeMap<&'static str, serde_json::Value>,
    pass: bool,
}

fn suite_name(suite: Suite) -> &'static str {
    match suite {
        Suite::Theorem1 => "theorem1",
        Suite::Theorem2 => "theorem2",
        Suite::Corollary1 => "corollary1",
        Suite::Gradients => "gradients",
        Suite::Backprop => "backprop",
        Suite::All => "all",
    }
}

pub fn verify(args: VerifyArgs) -> Result<u8, CliError> {
    let layered = layer(&args.common)?;
    // A λ list only makes sense for theorem2; the other suites use a single λ.
    let mixtures = layered.lambda.clone().unwrap_or(THEOREM2_MIXTURES.to_vec());
    if mixtures.is_empty() {
        return Err(usage("--lambda list is empty"));
    }
    let single_mixture = match mixtures.as_slice() {
        [m] => Some(*m),
        _ => None,
    };
    let hyper = Layered { lambda: single_mixture.map(|m| vec![m]), ..layered.clone() }.hyper()?;
    let base_seed = layered.seed();
    let n_seeds = args.seeds.unwrap_or(20);
    if n_seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (base_seed..base_seed + n_seeds).collect();
    let samples = args.samples.unwrap_or(1000);
    if samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }

    let suites = match args.suite {
        Suite::All => vec![Suite::Theorem1, Suite::Theorem2, Suite::Corollary1, Suite::Gradients, Suite::Backprop],
        one => vec![one],
    };
    let mut report = VerifyReport { results: BTreeMap::new(), suites: BTreeMap::new(), pass: true };
    for suite in suites {
        let (pass, value) = match suite {
            Suite::Theorem1 => {
                let mut options = Theorem1Options {
                    seeds: seeds.clone(),
                    beta: hyper.beta,
                    mixture: hyper.lambda,
                    ..Default::default()
                };
                if let Some(steps) = layered.steps {
                    options.simplex.steps = steps;
                }
                let r = experiments::verify_theorem1(&options)?;
                (r.pass, json(&r)?)
            }
            Suite::Theorem2 => {
                let mut runs = Vec::new();
                for &mixture in &mixtures {
                    let spec = LossSpec::bdpo(hyper.beta, mixture);
                    spec.validate().map_err(|e| usage(e.to_string()))?;
                    for &seed in &seeds {
                        let base = TrainingConfig::theorem(spec, seed);
                        let steps = layered.steps.unwrap_or(base.steps);
                        let config = TrainingConfig {
                            steps,
                            learning_rate: layered.lr.unwrap_or(base.learning_rate),
                            trace_every: 1,
                            ..base
                        };
                        let task = experiments::generate_toy_task(seed);
                        runs.push(experiments::verify_theorem2(&task, &config)?);
                    }
                }
                let failures = runs.iter().filter(|r| !r.pass).count();
                let line_search_failures = runs.iter().filter(|r| r.line_search_failure.is_some()).count();
                let s = Theorem2Suite {
                    mixtures: mixtures.clone(),
                    seeds: seeds.clone(),
                    runs,
                    failures,
                    line_search_failures,
                    pass: failures == 0,
                };
                (s.pass, json(&s)?)
            }
            Suite::Corollary1 => {
                let beta = layered.beta.unwrap_or(COROLLARY_BETA);
                let r = experiments::verify_corollary1(
                    FIGURE1_REFERENCE,
                    &LossSpec::bdpo(beta, hyper.lambda),
                    &LossSpec::dpo(beta),
                    &Corollary1Options::default(),
                )?;
                (r.pass, json(&r)?)
            }
            Suite::Gradients => {
                let r = experiments::verify_gradients(samples, base_seed, GRADIENT_TOLERANCE)?;
                (r.pass, json(&r)?)
            }
            Suite::Backprop => {
                let r = experiments::verify_backprop(&seeds, BACKPROP_TOLERANCE)?;
                (r.pass, json(&r)?)
            }
            Suite::All => unreachable!(),
        };
        let name = suite_name(suite);
        println!("{name}: {}", if pass { "PASS" } else { "FAIL" });
        report.results.insert(name, pass);
        report.suites.insert(name, value);
        report.pass &= pass;
    }

    let out = layered.out();
    let mut outputs = Outputs::default();
    outputs.write(out.join(format!("verify_{}.json", suite_name(args.suite))), to_json(&report)?)?;
    let config = json!({
        "suite": suite_name(args.suite),
        "seeds": seeds,
        "samples": samples,
        "beta": hyper.beta,
        "corollary_beta": layered.beta.unwrap_or(COROLLARY_BETA),
        "lambda": hyper.lambda,
        "theorem2_lambdas": mixtures,
        "steps": layered.steps,
        "lr": layered.lr,
        "gradient_tolerance": GRADIENT_TOLERANCE,
        "backprop_tolerance": BACKPROP_TOLERANCE,
        "out": out.display().to_string(),
    });
    outputs.finish(&out, "verify", base_seed, config)?;
    Ok(if report.pass { 0 } else { 1 })
}

// ------------------------------------------------------------------ sweep

pub fn sweep(args: SweepArgs) -> Result<u8, CliError> {
    let layered = layer(&args.common)?;
    let flagged: Vec<SweepParam> = [
        (SweepParam::Mixture, args.common.lambda.is_some()),
        (SweepParam::Alpha, args.common.alpha.is_some()),
        (SweepParam::Penalty, args.common.penalty.is_some()),
    ]
    .into_iter()
    .filter_map(|(p, set)| set.then_some(p))
    .collect();
    let from_file: Vec<SweepParam> = [
        (SweepParam::Mixture, layered.lambda.is_some()),
        (SweepParam::Alpha, layered.alpha.is_some()),
        (SweepParam::Penalty, layered.penalty.is_some()),
    ]
    .into_iter()
    .filter_map(|(p, set)| set.then_some(p))
    .collect();
    let candidates = if flagged.is_empty() { from_file } else { flagged };
    let param = match candidates.as_slice() {
        [p] => *p,
        [] => return Err(usage("sweep needs a parameter list: --lambda, --alpha or --penalty")),
        _ => return Err(usage("sweep varies one parameter at a time; give only one of --lambda, --alpha, --penalty")),
    };
    let values = match param {
        SweepParam::Mixture => layered.lambda.clone(),
        SweepParam::Alpha => layered.alpha.clone(),
        SweepParam::Penalty => layered.penalty.clone(),
        SweepParam::Beta => None,
    }
    .unwrap_or_default();
    if values.is_empty() {
        return Err(usage(format!("--{param} list is empty")));
    }
    let rest = match param {
        SweepParam::Mixture => Layered { lambda: None, ..layered.clone() },
        SweepParam::Alpha => Layered { alpha: None, ..layered.clone() },
        SweepParam::Penalty => Layered { penalty: None, ..layered.clone() },
        SweepParam::Beta => layered.clone(),
    };
    let hyper = rest.hyper()?;
    let kind = param.loss_kind().unwrap_or(LossKind::Bdpo);
    let base = training_config(&layered, hyper.spec(kind)?, args.trace_every, parse_optimizer(&args.optimizer)?);
    for &v in &values {
        param.apply(base.loss_spec, v).validate().map_err(|e| usage(e.to_string()))?;
    }
    base.validate()?;

    let seed = layered.seed();
    let task = experiments::generate_toy_task(seed);
    let result = run_sweep(&task, &base, param, &values)?;

    let out = layered.out();
    let mut outputs = Outputs::default();
    outputs.write(out.join(format!("sweep_{param}.csv")), result.csv_string())?;
    let mut summary = format!("{param},distance_to_dpo,mean_final_p_chosen,mean_final_p_rejected\n");
    for run in &result.runs {
        let last: Vec<_> = run.trace.rows_at(run.trace.last_step()).collect();
        let n = last.len() as f64;
        let mean_c = last.iter().map(|r| r.p_chosen).sum::<f64>() / n;
        let mean_r = last.iter().map(|r| r.p_rejected).sum::<f64>() / n;
        let distance = run.distance_to_dpo.map(float17).unwrap_or_default();
        let _ = writeln!(summary, "{},{distance},{},{}", float17(run.value), float17(mean_c), float17(mean_r));
        match run.distance_to_dpo {
            Some(d) => println!("{param}={}: distance to dpo {d:.6}", run.value),
            None => println!("{param}={}: mean final p_chosen {mean_c:.4}", run.value),
        }
    }
    outputs.write(out.join(format!("sweep_{param}_summary.csv")), summary)?;
    if let Some(dpo) = &result.dpo {
        outputs.write(out.join(format!("sweep_{param}_dpo.csv")), dpo.csv_string())?;
    }

    let config = json!({
        "param": param,
        "values": values,
        "task": task,
        "training": base,
        "out": out.display().to_string(),
    });
    outputs.finish(&out, "sweep", seed, config)?;
    Ok(0)
}
