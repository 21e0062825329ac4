//! Flag/config-file layering. Flags win over the config file, which wins
//! over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use prefopt::losses::{LossSpec, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_MIXTURE, DEFAULT_PENALTY};
use serde::{Deserialize, Serialize};

use crate::args::CommonArgs;
use crate::CliError;

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Values {
    One(f64),
    Many(Vec<f64>),
}

impl From<Values> for Vec<f64> {
    fn from(v: Values) -> Self {
        match v {
            Values::One(x) => vec![x],
            Values::Many(xs) => xs,
        }
    }
}

/// Keys accepted in a `--config` document.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    beta: Option<f64>,
    alpha: Option<Values>,
    penalty: Option<Values>,
    lambda: Option<Values>,
    steps: Option<usize>,
    lr: Option<f64>,
    line_search: Option<bool>,
    svg: Option<bool>,
}

fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if is_toml {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Parses a comma-separated float list. Empty entries are skipped, so an
/// empty string yields an empty list.
pub fn parse_list(flag: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("--{flag}: `{s}` is not a finite number")))
        })
        .collect()
}

/// Shared settings after layering, before command-specific defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Layered {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub beta: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    pub penalty: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub line_search: bool,
    pub svg: bool,
}

pub fn layer(common: &CommonArgs) -> Result<Layered, CliError> {
    let file = match &common.config {
        Some(path) => load_file(path)?,
        None => FileConfig::default(),
    };
    let list = |flag: &str, text: &Option<String>, fallback: Option<Values>| -> Result<Option<Vec<f64>>, CliError> {
        match text {
            Some(t) => parse_list(flag, t).map(Some),
            None => Ok(fallback.map(Vec::from)),
        }
    };
    Ok(Layered {
        seed: common.seed.or(file.seed),
        out: common.out.clone().or(file.out),
        beta: common.beta.or(file.beta),
        alpha: list("alpha", &common.alpha, file.alpha)?,
        penalty: list("penalty", &common.penalty, file.penalty)?,
        lambda: list("lambda", &common.lambda, file.lambda)?,
        steps: common.steps.or(file.steps),
        lr: common.lr.or(file.lr),
        line_search: common.line_search || file.line_search.unwrap_or(false),
        svg: common.svg || file.svg.unwrap_or(false),
    })
}

fn single(flag: &str, values: &Option<Vec<f64>>, default: f64) -> Result<f64, CliError> {
    match values.as_deref() {
        None => Ok(default),
        Some([v]) => Ok(*v),
        Some(other) => Err(CliError::Usage(format!("--{flag} takes exactly one value here, got {}", other.len()))),
    }
}

/// Loss hyperparameters with every default materialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hyper {
    pub beta: f64,
    pub alpha: f64,
    pub penalty: f64,
    pub lambda: f64,
}

impl Layered {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn hyper(&self) -> Result<Hyper, CliError> {
        Ok(Hyper {
            beta: self.beta.unwrap_or(DEFAULT_BETA),
            alpha: single("alpha", &self.alpha, DEFAULT_ALPHA)?,
            penalty: single("penalty", &self.penalty, DEFAULT_PENALTY)?,
            lambda: single("lambda", &self.lambda, DEFAULT_MIXTURE)?,
        })
    }
}

impl Hyper {
    pub fn spec(&self, kind: prefopt::LossKind) -> Result<LossSpec, CliError> {
        let spec = LossSpec { kind, beta: self.beta, alpha: self.alpha, penalty: self.penalty, mixture: self.lambda };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists() {
        assert_eq!(parse_list("lambda", "0.1, 0.5,0.9").unwrap(), vec![0.1, 0.5, 0.9]);
        assert!(parse_list("lambda", "").unwrap().is_empty());
        assert!(parse_list("lambda", "0.1,x").is_err());
        assert!(parse_list("lambda", "nan").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 3\nbeta = 0.2\nlambda = [0.25, 0.75]\n").unwrap();
        let common = CommonArgs { config: Some(path), beta: Some(0.3), ..Default::default() };
        let l = layer(&common).unwrap();
        assert_eq!(l.seed(), 3);
        assert_eq!(l.beta, Some(0.3));
        assert_eq!(l.lambda, Some(vec![0.25, 0.75]));
        assert_eq!(l.hyper().unwrap_err().to_string(), "--lambda takes exactly one value here, got 2");
        assert_eq!(l.out(), PathBuf::from(DEFAULT_OUT));
    }

    #[test]
    fn json_config_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("c.json");
        fs::write(&good, r#"{"steps": 12, "alpha": 2.0, "line-search": true}"#).unwrap();
        let l = layer(&CommonArgs { config: Some(good), ..Default::default() }).unwrap();
        assert_eq!(l.steps, Some(12));
        assert_eq!(l.hyper().unwrap().alpha, 2.0);
        assert!(l.line_search);
        let bad = dir.path().join("bad.json");
        fs::write(&bad, r#"{"sead": 1}"#).unwrap();
        assert!(matches!(layer(&CommonArgs { config: Some(bad), ..Default::default() }), Err(CliError::Usage(_))));
    }
}
