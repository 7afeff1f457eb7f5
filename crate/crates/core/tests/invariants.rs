use proptest::prelude::*;

use seqdens::datasets::make_batches;
use seqdens::distributions::{
    bernoulli_logpmf, gauss_kl, gmm_kernel, gmm_logpdf, log_sum_exp, BernoulliParams, DiagGaussianParams,
    GaussianMixtureParams,
};
use seqdens::objectives::mle_loss;
use seqdens::oracle::{finite_diff_grad, toy_config, toy_sequence};
use seqdens::{ElementKind, Family, Mode, SequenceModel};

fn diag(v: &[(f64, f64)]) -> DiagGaussianParams {
    DiagGaussianParams {
        mean: v.iter().map(|p| p.0).collect(),
        log_scale: v.iter().map(|p| p.1).collect(),
    }
}

proptest! {
    #[test]
    fn kl_nonnegative_and_zero_on_self(q in prop::collection::vec((-3.0f64..3.0, -2.0f64..2.0), 1..6),
                                       shift in -2.0f64..2.0) {
        let qd = diag(&q);
        let pd = diag(&q.iter().map(|&(m, s)| (m + shift, s * 0.5)).collect::<Vec<_>>());
        prop_assert!(gauss_kl(&qd, &pd).unwrap() >= 0.0);
        prop_assert!(gauss_kl(&qd, &qd).unwrap().abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_bounds(xs in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v = log_sum_exp(&xs);
        prop_assert!(v >= m - 1e-12);
        prop_assert!(v <= m + (xs.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn mixture_kernel_gradient(raw in prop::collection::vec(-1.5f64..1.5, 9), x in -3.0f64..3.0) {
        let mut g = vec![0.0; 9];
        gmm_kernel(&raw, x, Some(&mut g));
        let c = finite_diff_grad(|r| gmm_kernel(r, x, None), &raw, &g, 1e-3).unwrap();
        prop_assert!(c.max_rel_err <= 1e-4, "{c:?}");
    }

    #[test]
    fn single_component_mixture_is_gaussian(mu in -3.0f64..3.0, ls in -2.0f64..2.0, x in -4.0f64..4.0) {
        let p = GaussianMixtureParams { logits: vec![0.4], means: vec![mu], log_scales: vec![ls] };
        let z = (x - mu) / ls.exp();
        let want = -0.5 * z * z - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
        prop_assert!((gmm_logpdf(&p, x).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_probabilities_sum_to_one(logit in -30.0f64..30.0) {
        let p = BernoulliParams { logit };
        let s = bernoulli_logpmf(&p, 0.0).unwrap().exp() + bernoulli_logpmf(&p, 1.0).unwrap().exp();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batches_cover_each_index_once(n in 1usize..60, b in 1usize..9, seed in 0u64..50, epoch in 0u64..4) {
        let data: Vec<usize> = (0..n).collect();
        let stream = make_batches(&data, b, seed).unwrap();
        let mut seen: Vec<usize> = stream.epoch_batches(epoch).concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, data);
    }
}

#[test]
fn deterministic_models_score_the_same_twice() {
    for fam in [Family::FRnn, Family::DeltaRnn, Family::RnnHier, Family::RnnFlat] {
        let cfg = toy_config(fam);
        let kinds = [ElementKind::Continuous; 4];
        let m = SequenceModel::new(&cfg, &kinds, 9).unwrap();
        let s = toy_sequence(3, &kinds, 2).unwrap();
        let score = || mle_loss(&mut m.forward(&s, Mode::Prior, &[]).unwrap(), &s).unwrap().breakdown.recon_total();
        let (a, b) = (score(), score());
        assert_eq!(a.to_bits(), b.to_bits(), "{fam}");
    }
}
