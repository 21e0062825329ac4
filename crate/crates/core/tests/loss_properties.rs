use std::f64::consts::LN_2;

use prefopt::gradcheck::{loss_gradient_fd, relative_error};
use prefopt::losses::{self, analytic_gradient, LossKind, LossSpec, PairPoint};
use proptest::prelude::*;

fn prob() -> impl Strategy<Value = f64> {
    0.02f64..0.98
}

/// Two probabilities that fit on one simplex.
fn pair() -> impl Strategy<Value = (f64, f64)> {
    (prob(), prob()).prop_filter("p_w + p_l <= 1", |(a, b)| a + b <= 1.0)
}

fn kind() -> impl Strategy<Value = LossKind> {
    prop_oneof![Just(LossKind::Dpo), Just(LossKind::Dpop), Just(LossKind::DpoNll), Just(LossKind::Bdpo)]
}

fn spec_of(kind: LossKind) -> impl Strategy<Value = LossSpec> {
    (0.05f64..1.0, 0.0f64..2.0, 0.0f64..10.0, 0.05f64..0.95)
        .prop_map(move |(beta, alpha, penalty, mixture)| LossSpec { kind, beta, alpha, penalty, mixture })
}

fn any_spec() -> impl Strategy<Value = LossSpec> {
    kind().prop_flat_map(spec_of)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn dpo_is_invariant_to_common_scaling((p_w, p_l) in pair(), (r_w, r_l) in pair(), c in 0.05f64..1.0, beta in 0.05f64..1.0) {
        let spec = LossSpec::dpo(beta);
        let base = losses::dpo_loss(&PairPoint::new(p_w, p_l, r_w, r_l).unwrap(), &spec).unwrap();
        let scaled = losses::dpo_loss(&PairPoint::new(c * p_w, c * p_l, r_w, r_l).unwrap(), &spec).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12, "{base} vs {scaled}");
    }

    #[test]
    fn bdpo_decreases_under_common_upscaling((p_w, p_l) in pair(), (r_w, r_l) in pair(), c1 in 0.05f64..1.0, c2 in 0.05f64..1.0, spec in spec_of(LossKind::Bdpo)) {
        prop_assume!((c1 - c2).abs() > 1e-6);
        let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
        let at = |c: f64| losses::bdpo_loss(&PairPoint::new(c * p_w, c * p_l, r_w, r_l).unwrap(), &spec).unwrap();
        prop_assert!(at(hi) < at(lo));
    }

    #[test]
    fn losses_fall_in_p_w_and_rise_in_p_l((p_w, p_l) in pair(), (r_w, r_l) in pair(), dw in 1e-4f64..0.01, spec in any_spec()) {
        let base = PairPoint::new(p_w, p_l, r_w, r_l).unwrap();
        let l0 = losses::loss(&base, &spec).unwrap();
        let up_w = losses::loss(&PairPoint { p_w: p_w + dw, ..base }, &spec).unwrap();
        let up_l = losses::loss(&PairPoint { p_l: p_l + dw, ..base }, &spec).unwrap();
        prop_assert!(up_w < l0);
        prop_assert!(up_l > l0);
    }

    #[test]
    fn gradient_signs((p_w, p_l) in pair(), (r_w, r_l) in pair(), spec in any_spec()) {
        let g = analytic_gradient(&PairPoint::new(p_w, p_l, r_w, r_l).unwrap(), &spec).unwrap();
        prop_assert!(g.d_p_w < 0.0);
        prop_assert!(g.d_p_l > 0.0);
    }

    #[test]
    fn dpop_matches_dpo_above_the_reference(r_w in 0.02f64..0.9, frac in 0.0f64..1.0, p_l in prob(), r_l in 0.02f64..0.98, beta in 0.05f64..1.0, penalty in 0.0f64..10.0) {
        let p_w = r_w + frac * (1.0 - r_w);
        let point = PairPoint::new(p_w, p_l, r_w, r_l).unwrap();
        let dpo = losses::dpo_loss(&point, &LossSpec::dpo(beta)).unwrap();
        let dpop = losses::dpop_loss(&point, &LossSpec::dpop(beta, penalty)).unwrap();
        prop_assert_eq!(dpo.to_bits(), dpop.to_bits());
    }

    #[test]
    fn dpop_exceeds_dpo_below_the_reference((p_w, p_l) in pair(), r_l in 0.02f64..0.98, gap in 0.01f64..0.5, beta in 0.05f64..1.0, penalty in 0.1f64..10.0) {
        let r_w = (p_w + gap).min(1.0);
        prop_assume!(r_w > p_w);
        let point = PairPoint::new(p_w, p_l, r_w, r_l).unwrap();
        let dpo = losses::dpo_loss(&point, &LossSpec::dpo(beta)).unwrap();
        let dpop = losses::dpop_loss(&point, &LossSpec::dpop(beta, penalty)).unwrap();
        prop_assert!(dpop > dpo);
    }

    #[test]
    fn every_loss_is_ln2_at_the_reference((r_w, r_l) in pair(), spec in any_spec()) {
        let spec = if spec.kind == LossKind::DpoNll { LossSpec { alpha: 0.0, ..spec } } else { spec };
        let value = losses::loss(&PairPoint::at_reference(r_w, r_l).unwrap(), &spec).unwrap();
        prop_assert!((value - LN_2).abs() <= 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_central_differences((p_w, p_l) in pair(), (r_w, r_l) in pair(), spec in any_spec()) {
        prop_assume!(spec.kind != LossKind::Dpop || (p_w - r_w).abs() > 1e-4);
        let point = PairPoint::new(p_w, p_l, r_w, r_l).unwrap();
        let a = analytic_gradient(&point, &spec).unwrap();
        let n = loss_gradient_fd(&point, &spec, 1e-6).unwrap();
        prop_assert!(relative_error(a.d_p_w, n.d_p_w) <= 1e-6);
        prop_assert!(relative_error(a.d_p_l, n.d_p_l) <= 1e-6);
    }

    #[test]
    fn bdpo_rejected_gradient_is_bounded(p_w in prob(), p_l in 0.0f64..0.98, (r_w, r_l) in pair(), spec in spec_of(LossKind::Bdpo)) {
        let g = analytic_gradient(&PairPoint::new(p_w, p_l, r_w, r_l).unwrap(), &spec).unwrap();
        prop_assert!(g.d_p_l.is_finite());
        prop_assert!(g.d_p_l <= losses::bdpo_rejected_gradient_bound(&spec, r_l) * (1.0 + 1e-12));
    }

    #[test]
    fn dpo_nll_adds_exactly_the_weighted_nll((p_w, p_l) in pair(), (r_w, r_l) in pair(), beta in 0.05f64..1.0, alpha in 0.0f64..5.0) {
        let point = PairPoint::new(p_w, p_l, r_w, r_l).unwrap();
        let dpo = losses::dpo_loss(&point, &LossSpec::dpo(beta)).unwrap();
        let nll = losses::dpo_nll_loss(&point, &LossSpec::dpo_nll(beta, alpha)).unwrap();
        prop_assert!((nll - dpo - alpha * -p_w.ln()).abs() <= 1e-12);
    }
}

#[test]
fn zero_rejected_is_only_legal_for_bdpo() {
    let point = PairPoint::new(0.3, 0.0, 0.4, 0.1).unwrap();
    for kind in LossKind::ALL {
        let result = losses::loss(&point, &LossSpec::new(kind));
        assert_eq!(result.is_ok(), kind == LossKind::Bdpo, "{kind}");
    }
}
