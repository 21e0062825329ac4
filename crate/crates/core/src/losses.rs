//! Scalar preference losses over a single (chosen, rejected) pair.
//!
//! Every loss is a function of four probabilities: the trained policy's
//! probabilities of the chosen and rejected responses and the reference
//! policy's probabilities of the same two responses. All four losses share
//! the same shape,
//!
//! ```text
//! loss = -log σ(Δ) = softplus(-Δ)
//! ```
//!
//! and differ only in the margin `Δ`:
//!
//! - DPO:     `Δ = β·log(p_w/p_l) − β·log(r_w/r_l)`
//! - DPO+NLL: DPO plus `α·(−log p_w)`
//! - DPOP:    `Δ_DPO − λ·max(0, −β·log(p_w/r_w))`
//! - BDPO:    `Δ = β·log(p_w/π_mix) − β·log(r_w/r_l)` with
//!   `π_mix = λ·p_l + (1−λ)·r_l`
//!
//! Gradients are with respect to the two trained probabilities and are
//! closed form. Domain violations are typed errors; nothing here returns a
//! NaN or infinite sentinel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Default temperature.
pub const DEFAULT_BETA: f64 = 0.1;
/// Default NLL weight for DPO+NLL.
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Default DPOP penalty weight.
pub const DEFAULT_PENALTY: f64 = 5.0;
/// Default BDPO mixture weight.
pub const DEFAULT_MIXTURE: f64 = 0.5;

/// Errors raised by loss evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("{name} must be a probability in [0, 1], got {value}")]
    NotAProbability { name: &'static str, value: f64 },
    #[error("reference probability {name} must be strictly positive, got {value}")]
    NonPositiveReference { name: &'static str, value: f64 },
    #[error("{kind} loss is undefined at {name} = 0")]
    ZeroProbability { kind: LossKind, name: &'static str },
    #[error("log-ratio requires positive probabilities, got {num} / {den}")]
    LogRatioDomain { num: f64, den: f64 },
    #[error("invalid hyperparameter {name} = {value}: {reason}")]
    InvalidHyperparameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("operation requires a {expected} spec, got {actual}")]
    WrongKind { expected: LossKind, actual: LossKind },
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Which member of the loss family to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "dpo")]
    Dpo,
    #[serde(rename = "dpop")]
    Dpop,
    #[serde(rename = "dpo-nll")]
    DpoNll,
    #[serde(rename = "bdpo")]
    Bdpo,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Dpo, LossKind::Dpop, LossKind::DpoNll, LossKind::Bdpo];

    /// Short lowercase identifier used in file names and flags.
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Dpo => "dpo",
            LossKind::Dpop => "dpop",
            LossKind::DpoNll => "dpo-nll",
            LossKind::Bdpo => "bdpo",
        }
    }

    /// Whether the loss stays finite when the rejected probability is 0.
    pub fn allows_zero_rejected(self) -> bool {
        matches!(self, LossKind::Bdpo)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown loss `{0}` (expected dpo, dpop, dpo-nll or bdpo)")]
pub struct ParseLossKindError(pub String);

impl FromStr for LossKind {
    type Err = ParseLossKindError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dpo" => Ok(LossKind::Dpo),
            "dpop" => Ok(LossKind::Dpop),
            "dpo-nll" | "dpo_nll" | "dponll" | "dpo+nll" => Ok(LossKind::DpoNll),
            "bdpo" => Ok(LossKind::Bdpo),
            other => Err(ParseLossKindError(other.to_string())),
        }
    }
}

/// A loss together with all of its hyperparameters.
///
/// Hyperparameters that do not belong to `kind` are carried along but never
/// read during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Temperature β.
    pub beta: f64,
    /// NLL weight α (DPO+NLL).
    pub alpha: f64,
    /// Penalty weight λ (DPOP).
    pub penalty: f64,
    /// Mixture weight λ ∈ (0, 1) (BDPO).
    pub mixture: f64,
}

impl LossSpec {
    /// A spec of the given kind with every hyperparameter at its default.
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            penalty: DEFAULT_PENALTY,
            mixture: DEFAULT_MIXTURE,
        }
    }

    pub fn dpo(beta: f64) -> Self {
        Self::new(LossKind::Dpo).with_beta(beta)
    }

    pub fn dpo_nll(beta: f64, alpha: f64) -> Self {
        Self { alpha, ..Self::new(LossKind::DpoNll).with_beta(beta) }
    }

    pub fn dpop(beta: f64, penalty: f64) -> Self {
        Self { penalty, ..Self::new(LossKind::Dpop).with_beta(beta) }
    }

    pub fn bdpo(beta: f64, mixture: f64) -> Self {
        Self { mixture, ..Self::new(LossKind::Bdpo).with_beta(beta) }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// Checks the invariants relevant to `kind`.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(LossError::InvalidHyperparameter {
                name: "beta",
                value: self.beta,
                reason: "must be positive and finite",
            });
        }
        match self.kind {
            LossKind::DpoNll if !(self.alpha.is_finite() && self.alpha >= 0.0) => {
                Err(LossError::InvalidHyperparameter {
                    name: "alpha",
                    value: self.alpha,
                    reason: "must be non-negative and finite",
                })
            }
            LossKind::Dpop if !(self.penalty.is_finite() && self.penalty >= 0.0) => {
                Err(LossError::InvalidHyperparameter {
                    name: "penalty",
                    value: self.penalty,
                    reason: "must be non-negative and finite",
                })
            }
            LossKind::Bdpo if !(self.mixture > 0.0 && self.mixture < 1.0) => {
                Err(LossError::InvalidHyperparameter {
                    name: "mixture",
                    value: self.mixture,
                    reason: "must lie in the open interval (0, 1)",
                })
            }
            _ => Ok(()),
        }
    }
}

/// One evaluation point: chosen/rejected probabilities under the trained
/// policy (`p_w`, `p_l`) and the reference policy (`r_w`, `r_l`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPoint {
    pub p_w: f64,
    pub p_l: f64,
    pub r_w: f64,
    pub r_l: f64,
}

impl PairPoint {
    /// Builds a point, checking that every value is a probability and that
    /// both reference probabilities are strictly positive.
    pub fn new(p_w: f64, p_l: f64, r_w: f64, r_l: f64) -> Result<Self> {
        let point = Self { p_w, p_l, r_w, r_l };
        point.check_ranges()?;
        Ok(point)
    }

    /// The point where the trained policy coincides with the reference.
    pub fn at_reference(r_w: f64, r_l: f64) -> Result<Self> {
        Self::new(r_w, r_l, r_w, r_l)
    }

    fn check_ranges(&self) -> Result<()> {
        for (name, value) in [("p_w", self.p_w), ("p_l", self.p_l), ("r_w", self.r_w), ("r_l", self.r_l)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(LossError::NotAProbability { name, value });
            }
        }
        for (name, value) in [("r_w", self.r_w), ("r_l", self.r_l)] {
            if value <= 0.0 {
                return Err(LossError::NonPositiveReference { name, value });
            }
        }
        Ok(())
    }

    fn require_interior(&self, kind: LossKind) -> Result<()> {
        self.check_ranges()?;
        if self.p_w <= 0.0 {
            return Err(LossError::ZeroProbability { kind, name: "p_w" });
        }
        if self.p_l <= 0.0 && !kind.allows_zero_rejected() {
            return Err(LossError::ZeroProbability { kind, name: "p_l" });
        }
        Ok(())
    }
}

/// Partial derivatives of a loss with respect to the trained probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    /// ∂L/∂p_w
    pub d_p_w: f64,
    /// ∂L/∂p_l
    pub d_p_l: f64,
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scaled log-ratio `β·log(p_num / p_den)`.
pub fn log_ratio_score(p_num: f64, p_den: f64, beta: f64) -> Result<f64> {
    if !(p_num > 0.0 && p_den > 0.0) {
        return Err(LossError::LogRatioDomain { num: p_num, den: p_den });
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(LossError::InvalidHyperparameter {
            name: "beta",
            value: beta,
            reason: "must be positive and finite",
        });
    }
    Ok(beta * (p_num / p_den).ln())
}

/// `λ·p_theta + (1−λ)·p_ref`.
pub fn mixture_prob(p_theta: f64, p_ref: f64, mixture: f64) -> f64 {
    mixture * p_theta + (1.0 - mixture) * p_ref
}

// Margins assume the point has already passed `require_interior`.

fn dpo_margin(point: &PairPoint, beta: f64) -> f64 {
    beta * (point.p_w / point.p_l).ln() - beta * (point.r_w / point.r_l).ln()
}

/// Returns the DPOP margin and whether the penalty branch is active.
fn dpop_margin(point: &PairPoint, spec: &LossSpec) -> (f64, bool) {
    let delta = dpo_margin(point, spec.beta);
    if point.p_w < point.r_w {
        let reward_w = spec.beta * (point.p_w / point.r_w).ln();
        (delta - spec.penalty * (-reward_w), true)
    } else {
        (delta, false)
    }
}

fn bdpo_margin(point: &PairPoint, spec: &LossSpec) -> (f64, f64) {
    let mix = mixture_prob(point.p_l, point.r_l, spec.mixture);
    let delta = spec.beta * (point.p_w / mix).ln() - spec.beta * (point.r_w / point.r_l).ln();
    (delta, mix)
}

/// `−log σ(β·log(p_w/r_w) − β·log(p_l/r_l))`.
pub fn dpo_loss(point: &PairPoint, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    point.require_interior(LossKind::Dpo)?;
    Ok(softplus(-dpo_margin(point, spec.beta)))
}

/// DPO plus `α·(−log p_w)`.
pub fn dpo_nll_loss(point: &PairPoint, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    point.require_interior(LossKind::DpoNll)?;
    Ok(softplus(-dpo_margin(point, spec.beta)) + spec.alpha * (-point.p_w.ln()))
}

/// DPO with a penalty that switches on once `p_w` falls below `r_w`.
pub fn dpop_loss(point: &PairPoint, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    point.require_interior(LossKind::Dpop)?;
    Ok(softplus(-dpop_margin(point, spec).0))
}

/// DPO with the rejected probability replaced by its mixture with the
/// reference. Finite for `p_l = 0`.
pub fn bdpo_loss(point: &PairPoint, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    point.require_interior(LossKind::Bdpo)?;
    Ok(softplus(-bdpo_margin(point, spec).0))
}

/// Evaluates whichever loss `spec.kind` selects.
pub fn loss(point: &PairPoint, spec: &LossSpec) -> Result<f64> {
    match spec.kind {
        LossKind::Dpo => dpo_loss(point, spec),
        LossKind::Dpop => dpop_loss(point, spec),
        LossKind::DpoNll => dpo_nll_loss(point, spec),
        LossKind::Bdpo => bdpo_loss(point, spec),
    }
}

/// Closed-form `(∂L/∂p_w, ∂L/∂p_l)`.
///
/// At the DPOP kink `p_w = r_w` the penalty-inactive branch is used.
pub fn analytic_gradient(point: &PairPoint, spec: &LossSpec) -> Result<LossGradient> {
    spec.validate()?;
    point.require_interior(spec.kind)?;
    let beta = spec.beta;
    let grad = match spec.kind {
        LossKind::Dpo => {
            let s = sigmoid(-dpo_margin(point, beta));
            LossGradient { d_p_w: -beta * s / point.p_w, d_p_l: beta * s / point.p_l }
        }
        LossKind::DpoNll => {
            let s = sigmoid(-dpo_margin(point, beta));
            LossGradient {
                d_p_w: -beta * s / point.p_w - spec.alpha / point.p_w,
                d_p_l: beta * s / point.p_l,
            }
        }
        LossKind::Dpop => {
            let (delta, active) = dpop_margin(point, spec);
            let s = sigmoid(-delta);
            let slope_w = if active { beta * (1.0 + spec.penalty) } else { beta };
            LossGradient { d_p_w: -s * slope_w / point.p_w, d_p_l: beta * s / point.p_l }
        }
        LossKind::Bdpo => {
            let (delta, mix) = bdpo_margin(point, spec);
            let s = sigmoid(-delta);
            LossGradient {
                d_p_w: -beta * s / point.p_w,
                d_p_l: beta * s * spec.mixture / mix,
            }
        }
    };
    Ok(grad)
}

/// Magnitude of the DPO+NLL gradient coefficient on `log p_w`:
/// `β·σ(r_l − r_w) + α` with `r = β·log(p/ref)`.
pub fn nll_coefficient(point: &PairPoint, spec: &LossSpec) -> Result<f64> {
    if spec.kind != LossKind::DpoNll {
        return Err(LossError::WrongKind { expected: LossKind::DpoNll, actual: spec.kind });
    }
    spec.validate()?;
    point.require_interior(LossKind::DpoNll)?;
    Ok(spec.beta * sigmoid(-dpo_margin(point, spec.beta)) + spec.alpha)
}

/// Upper bound on `|∂L_BDPO/∂p_l|` over `p_l ∈ [0, 1]`: `β·λ / ((1−λ)·r_l)`.
pub fn bdpo_rejected_gradient_bound(spec: &LossSpec, r_l: f64) -> f64 {
    spec.beta * spec.mixture / ((1.0 - spec.mixture) * r_l)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn pt(p_w: f64, p_l: f64, r_w: f64, r_l: f64) -> PairPoint {
        PairPoint::new(p_w, p_l, r_w, r_l).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_ratio_score_examples() {
        // 0.1·ln 4, mpmath
        assert!(close(log_ratio_score(0.4, 0.1, 0.1).unwrap(), 0.13862943611198906, 1e-15));
        assert_eq!(log_ratio_score(0.3, 0.3, 0.1).unwrap(), 0.0);
        assert!(close(log_ratio_score(0.2, 0.8, 1.0).unwrap(), -1.3862943611198906, 1e-15));
    }

    #[test]
    fn log_ratio_score_rejects_zero() {
        assert!(matches!(log_ratio_score(0.0, 0.1, 0.1), Err(LossError::LogRatioDomain { .. })));
        assert!(matches!(log_ratio_score(0.1, 0.0, 0.1), Err(LossError::LogRatioDomain { .. })));
        assert!(log_ratio_score(0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn dpo_examples() {
        let spec = LossSpec::dpo(0.1);
        assert!(close(dpo_loss(&pt(0.4, 0.1, 0.4, 0.1), &spec).unwrap(), LN2, 1e-15));
        assert!(close(dpo_loss(&pt(0.25, 0.3, 0.25, 0.3), &LossSpec::dpo(3.0)).unwrap(), LN2, 1e-15));
        // −log σ(0.1·ln 2), mpmath
        assert!(close(dpo_loss(&pt(0.4, 0.05, 0.4, 0.1), &spec).unwrap(), 0.65909026761122674, 1e-14));
        let a = dpo_loss(&pt(0.2, 0.05, 0.4, 0.1), &spec).unwrap();
        let b = dpo_loss(&pt(0.4, 0.1, 0.4, 0.1), &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dpo_zero_probability_is_a_domain_error() {
        let spec = LossSpec::dpo(0.1);
        let at_zero = PairPoint { p_w: 0.4, p_l: 0.0, r_w: 0.4, r_l: 0.1 };
        assert_eq!(
            dpo_loss(&at_zero, &spec),
            Err(LossError::ZeroProbability { kind: LossKind::Dpo, name: "p_l" })
        );
        let zero_w = PairPoint { p_w: 0.0, p_l: 0.1, r_w: 0.4, r_l: 0.1 };
        assert!(dpo_loss(&zero_w, &spec).is_err());
        assert!(dpop_loss(&at_zero, &LossSpec::dpop(0.1, 5.0)).is_err());
        assert!(dpo_nll_loss(&at_zero, &LossSpec::dpo_nll(0.1, 1.0)).is_err());
    }

    #[test]
    fn pair_point_validation() {
        assert!(matches!(PairPoint::new(1.2, 0.1, 0.4, 0.1), Err(LossError::NotAProbability { .. })));
        assert!(matches!(PairPoint::new(0.2, 0.1, 0.0, 0.1), Err(LossError::NonPositiveReference { .. })));
        assert!(PairPoint::new(0.0, 0.0, 0.4, 0.1).is_ok());
    }

    #[test]
    fn dpo_nll_examples() {
        let point = pt(0.4, 0.1, 0.4, 0.1);
        // ln 2 + ln 2.5, mpmath
        let v = dpo_nll_loss(&point, &LossSpec::dpo_nll(0.1, 1.0)).unwrap();
        assert!(close(v, 1.6094379124341003, 1e-14));
        let zero_alpha = LossSpec::dpo_nll(0.1, 0.0);
        for p in [pt(0.3, 0.2, 0.4, 0.1), pt(0.9, 0.01, 0.2, 0.7)] {
            assert_eq!(dpo_nll_loss(&p, &zero_alpha).unwrap(), dpo_loss(&p, &LossSpec::dpo(0.1)).unwrap());
        }
        let sure = pt(1.0, 0.1, 0.4, 0.1);
        let spec = LossSpec::dpo_nll(0.1, 1.0);
        assert_eq!(dpo_nll_loss(&sure, &spec).unwrap(), dpo_loss(&sure, &spec).unwrap());
    }

    #[test]
    fn dpop_examples() {
        let spec = LossSpec::dpop(0.1, 5.0);
        // penalty inactive: bit-identical to DPO
        for p in [pt(0.4, 0.05, 0.4, 0.1), pt(0.8, 0.1, 0.4, 0.1), pt(0.5, 0.5, 0.3, 0.2)] {
            assert_eq!(dpop_loss(&p, &spec).unwrap(), dpo_loss(&p, &spec).unwrap());
        }
        // −log σ(−0.0693147 − 0.3465736), mpmath
        let v = dpop_loss(&pt(0.2, 0.1, 0.4, 0.1), &spec).unwrap();
        assert!(close(v, 0.92255768007208308, 1e-14), "{v}");
        let off = LossSpec::dpop(0.1, 0.0);
        let p = pt(0.2, 0.1, 0.4, 0.1);
        assert_eq!(dpop_loss(&p, &off).unwrap(), dpo_loss(&p, &off).unwrap());
    }

    #[test]
    fn dpop_parenthesizations_agree() {
        // β·(log(p_w/r_w) − log(p_l/r_l) − λ·max(0, log(r_w/p_w)))
        let appendix = |p: &PairPoint, beta: f64, lam: f64| {
            let inner = (p.p_w / p.r_w).ln() - (p.p_l / p.r_l).ln() - lam * (p.r_w / p.p_w).ln().max(0.0);
            softplus(-beta * inner)
        };
        for (p, beta, lam) in [
            (pt(0.2, 0.1, 0.4, 0.1), 0.1, 5.0),
            (pt(0.05, 0.3, 0.6, 0.2), 0.5, 2.0),
            (pt(0.7, 0.1, 0.4, 0.2), 1.0, 3.0),
        ] {
            let main = dpop_loss(&p, &LossSpec::dpop(beta, lam)).unwrap();
            assert!(close(main, appendix(&p, beta, lam), 1e-14));
        }
    }

    #[test]
    fn mixture_prob_examples() {
        assert!(close(mixture_prob(0.0, 0.1, 0.5), 0.05, 1e-17));
        assert!(close(mixture_prob(0.1, 0.1, 0.5), 0.1, 1e-17));
        assert!(close(mixture_prob(0.8, 0.2, 0.25), 0.35, 1e-16));
        assert!(mixture_prob(0.0, 0.3, 0.7) >= (1.0 - 0.7) * 0.3);
    }

    #[test]
    fn bdpo_examples() {
        let spec = LossSpec::bdpo(0.1, 0.5);
        assert!(close(bdpo_loss(&pt(0.4, 0.1, 0.4, 0.1), &spec).unwrap(), LN2, 1e-15));
        // π_mix = 0.05, −log σ(0.1·ln 2), mpmath
        let v = bdpo_loss(&pt(0.4, 0.0, 0.4, 0.1), &spec).unwrap();
        assert!(close(v, 0.65909026761122674, 1e-14));
        let best = bdpo_loss(&pt(1.0, 0.0, 0.4, 0.1), &spec).unwrap();
        for i in 0..=20 {
            for j in 0..=20 {
                let (p_w, p_l) = (i as f64 / 20.0, j as f64 / 20.0);
                if p_w + p_l > 1.0 || p_w == 0.0 || (i == 20 && j == 0) {
                    continue;
                }
                assert!(best < bdpo_loss(&pt(p_w, p_l, 0.4, 0.1), &spec).unwrap());
            }
        }
    }

    #[test]
    fn bdpo_zero_chosen_is_an_error() {
        let p = PairPoint { p_w: 0.0, p_l: 0.0, r_w: 0.4, r_l: 0.1 };
        assert_eq!(
            bdpo_loss(&p, &LossSpec::bdpo(0.1, 0.5)),
            Err(LossError::ZeroProbability { kind: LossKind::Bdpo, name: "p_w" })
        );
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::dpo(0.0).validate().is_err());
        assert!(LossSpec::bdpo(0.1, 1.0).validate().is_err());
        assert!(LossSpec::bdpo(0.1, 0.0).validate().is_err());
        assert!(LossSpec::dpo_nll(0.1, -1.0).validate().is_err());
        assert!(LossSpec::dpop(0.1, -0.5).validate().is_err());
        // mixture is irrelevant to DPO
        let mut s = LossSpec::dpo(0.1);
        s.mixture = 7.0;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn irrelevant_hyperparameters_are_ignored() {
        let p = pt(0.3, 0.15, 0.4, 0.1);
        for kind in LossKind::ALL {
            let base = LossSpec::new(kind);
            let mut other = base;
            match kind {
                LossKind::Dpo => {
                    other.alpha = 9.0;
                    other.penalty = 0.0;
                    other.mixture = 0.9;
                }
                LossKind::Dpop => {
                    other.alpha = 9.0;
                    other.mixture = 0.9;
                }
                LossKind::DpoNll => {
                    other.penalty = 0.0;
                    other.mixture = 0.9;
                }
                LossKind::Bdpo => {
                    other.alpha = 9.0;
                    other.penalty = 0.0;
                }
            }
            assert_eq!(loss(&p, &base).unwrap(), loss(&p, &other).unwrap(), "{kind}");
        }
    }

    #[test]
    fn dispatch() {
        let r = pt(0.4, 0.1, 0.4, 0.1);
        assert!(close(loss(&r, &LossSpec::dpo(0.1)).unwrap(), LN2, 1e-15));
        assert!(close(loss(&r, &LossSpec::bdpo(0.1, 0.5)).unwrap(), LN2, 1e-15));
        let p = pt(0.1, 0.6, 0.4, 0.1);
        assert_eq!(loss(&p, &LossSpec::dpop(0.1, 0.0)).unwrap(), dpo_loss(&p, &LossSpec::dpo(0.1)).unwrap());
    }

    #[test]
    fn gradient_examples() {
        let r = pt(0.4, 0.1, 0.4, 0.1);
        let g = analytic_gradient(&r, &LossSpec::dpo(0.1)).unwrap();
        assert!(close(g.d_p_l, 0.5, 1e-15));
        assert!(close(g.d_p_w, -0.125, 1e-15));
        let g = analytic_gradient(&r, &LossSpec::bdpo(0.1, 0.5)).unwrap();
        assert!(close(g.d_p_l, 0.25, 1e-15));
    }

    #[test]
    fn bdpo_gradient_finite_at_zero_rejected() {
        let spec = LossSpec::bdpo(0.1, 0.5);
        let g = analytic_gradient(&pt(0.4, 0.0, 0.4, 0.1), &spec).unwrap();
        assert!(g.d_p_l.is_finite());
        assert!(g.d_p_l <= bdpo_rejected_gradient_bound(&spec, 0.1));
        assert!(analytic_gradient(&pt(0.4, 0.0, 0.4, 0.1), &LossSpec::dpo(0.1)).is_err());
    }

    #[test]
    fn dpop_gradient_uses_inactive_branch_at_kink() {
        let p = pt(0.4, 0.2, 0.4, 0.1);
        let a = analytic_gradient(&p, &LossSpec::dpop(0.1, 5.0)).unwrap();
        let b = analytic_gradient(&p, &LossSpec::dpo(0.1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nll_coefficient_examples() {
        let spec = LossSpec::dpo_nll(0.1, 1.0);
        assert!(close(nll_coefficient(&pt(0.4, 0.1, 0.4, 0.1), &spec).unwrap(), 1.05, 1e-15));
        // r_l − r_w → −∞: coefficient → α
        let far = nll_coefficient(&pt(0.999, 1e-300, 0.4, 0.1), &LossSpec::dpo_nll(1.0, 1.0)).unwrap();
        assert!(close(far, 1.0, 1e-12));
        assert_eq!(
            nll_coefficient(&pt(0.4, 0.1, 0.4, 0.1), &LossSpec::dpo(0.1)),
            Err(LossError::WrongKind { expected: LossKind::DpoNll, actual: LossKind::Dpo })
        );
    }

    #[test]
    fn stable_primitives() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(close(softplus(0.0), LN2, 1e-16));
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for kind in LossKind::ALL {
            assert_eq!(kind.as_str().parse::<LossKind>().unwrap(), kind);
        }
        assert_eq!("DPO_NLL".parse::<LossKind>().unwrap(), LossKind::DpoNll);
        assert!("ipo".parse::<LossKind>().is_err());
    }
}
