use proptest::prelude::*;
use rand::RngCore;
use slr_core::activation::Jet;
use slr_core::quadrature::GaussHermite;
use slr_core::rng::Streams;
use slr_core::stats::summarize;
use slr_core::{ActivationKind, LengthLaw, ModelConfig, Task};

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0..6.0f64, 1..8)
}

fn activation() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![
        Just(ActivationKind::Softmax),
        Just(ActivationKind::SoftplusNormalized),
        Just(ActivationKind::LinearPlusOne),
        Just(ActivationKind::Identity),
        (-2.0..2.0f64).prop_map(ActivationKind::ErfBias),
    ]
}

proptest! {
    #[test]
    fn normalized_activations_lie_on_the_simplex(chi in logits()) {
        for act in [ActivationKind::Softmax, ActivationKind::SoftplusNormalized] {
            let s = act.apply(&chi);
            prop_assert!(s.iter().all(|&x| x >= 0.0));
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_a_common_shift(chi in logits(), c in -50.0..50.0f64) {
        let a = ActivationKind::Softmax.apply(&chi);
        let shifted: Vec<f64> = chi.iter().map(|x| x + c).collect();
        let b = ActivationKind::Softmax.apply(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_normalized_survives_extreme_logits(chi in prop::collection::vec(-800.0..800.0f64, 1..6)) {
        let s = ActivationKind::SoftplusNormalized.apply(&chi);
        prop_assert!(s.iter().all(|x| x.is_finite()));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn jvp_matches_finite_differences(act in activation(), chi in logits(), dir in prop::collection::vec(-1.0..1.0f64, 8)) {
        let l = chi.len();
        let d = &dir[..l];
        let mut jet = Jet::with_capacity(l);
        jet.eval(act, &chi);
        let mut jd = vec![0.0; l];
        jet.jvp(d, &mut jd);
        let h = 1e-6;
        let plus: Vec<f64> = chi.iter().zip(d).map(|(c, e)| c + h * e).collect();
        let minus: Vec<f64> = chi.iter().zip(d).map(|(c, e)| c - h * e).collect();
        let (sp, sm) = (act.apply(&plus), act.apply(&minus));
        for i in 0..l {
            let fd = (sp[i] - sm[i]) / (2.0 * h);
            prop_assert!((jd[i] - fd).abs() < 1e-6, "{} i={i}: {} vs {fd}", act.name(), jd[i]);
        }
    }

    #[test]
    fn vjp_is_the_adjoint_of_jvp(act in activation(), chi in logits(), d in prop::collection::vec(-1.0..1.0f64, 8), w in prop::collection::vec(-1.0..1.0f64, 8)) {
        let l = chi.len();
        let mut jet = Jet::with_capacity(l);
        jet.eval(act, &chi);
        let (mut jd, mut jtw) = (vec![0.0; l], vec![0.0; l]);
        jet.jvp(&d[..l], &mut jd);
        jet.vjp(&w[..l], &mut jtw);
        let lhs: f64 = w[..l].iter().zip(&jd).map(|(a, b)| a * b).sum();
        let rhs: f64 = jtw.iter().zip(&d[..l]).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn posterior_is_the_normalized_weight(chi in logits(), nu in 0.0..6.0f64, max in any::<bool>()) {
        let l = chi.len();
        let law = LengthLaw::fixed(l).unwrap();
        let cfg = if max { ModelConfig::max(nu, law) } else { ModelConfig::spiked(nu, law) }.unwrap();
        let g: Vec<f64> = (0..l).map(|e| cfg.weight(e, &chi).unwrap()).collect();
        let z: f64 = g.iter().sum();
        let mut p = vec![0.0; l];
        cfg.posterior(&chi, &mut p);
        for e in 0..l {
            prop_assert!((p[e] - g[e] / z).abs() < 1e-10);
        }
        if max {
            // For the max task the weights average to one at every χ.
            prop_assert!((z / l as f64 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn hard_tasks_put_all_posterior_mass_on_one_token(chi in logits()) {
        let l = chi.len();
        let cfg = ModelConfig::max_hard(LengthLaw::fixed(l).unwrap()).unwrap();
        let mut p = vec![0.0; l];
        cfg.posterior(&chi, &mut p);
        let best = (0..l).max_by(|&a, &b| chi[a].partial_cmp(&chi[b]).unwrap()).unwrap();
        prop_assert_eq!(p[best], 1.0);
        prop_assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn length_law_ids_round_trip(ws in prop::collection::vec(0.05..1.0f64, 1..6), start in 1usize..5) {
        let z: f64 = ws.iter().sum();
        let support: Vec<(usize, f64)> = ws.iter().enumerate().map(|(i, w)| (start + 2 * i, w / z)).collect();
        let law = LengthLaw::new(support.clone()).unwrap();
        let back = LengthLaw::from_id(&law.id()).unwrap();
        for ((l1, p1), (l2, p2)) in law.support().iter().zip(back.support()) {
            prop_assert_eq!(l1, l2);
            prop_assert!((p1 - p2).abs() < 1e-12);
        }
        let mean: f64 = support.iter().map(|(l, p)| *l as f64 * p).sum();
        let inv: f64 = support.iter().map(|(l, p)| p / *l as f64).sum();
        prop_assert!((law.mean() - mean).abs() < 1e-12);
        prop_assert!((law.mean_inverse() - inv).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_length_laws_are_rejected(ws in prop::collection::vec(0.05..1.0f64, 1..6), scale in prop_oneof![0.5..0.95f64, 1.05..2.0f64]) {
        let z: f64 = ws.iter().sum();
        let support: Vec<(usize, f64)> = ws.iter().enumerate().map(|(i, w)| (i + 1, scale * w / z)).collect();
        prop_assert!(LengthLaw::new(support).is_err());
    }

    #[test]
    fn summarize_matches_the_textbook_formulas(xs in prop::collection::vec(-10.0..10.0f64, 2..200)) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let est = summarize(&xs);
        prop_assert!((est.value - mean).abs() < 1e-10);
        prop_assert!((est.std_err - (var / n).sqrt()).abs() < 1e-10);
        prop_assert_eq!(est.n_mc, xs.len());
    }

    #[test]
    fn streams_are_reproducible_and_distinct(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        let s = Streams::new(seed);
        let (a, b) = (s.get(i).next_u64(), Streams::new(seed).get(i).next_u64());
        prop_assert_eq!(a, b);
        if i != j {
            prop_assert_ne!(a, s.get(j).next_u64());
        }
    }
}

fn double_factorial(n: i64) -> f64 {
    (1..=n).rev().step_by(2).map(|k| k as f64).product()
}

#[test]
fn gauss_hermite_integrates_gaussian_moments_exactly() {
    for n in [1usize, 3, 8, 20, 40] {
        let q = GaussHermite::new(n);
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..n {
            // Exact for polynomials up to degree 2n - 1.
            let m = q.expect(|x| x.powi(2 * k as i32));
            let exact = if k == 0 { 1.0 } else { double_factorial(2 * k as i64 - 1) };
            assert!((m - exact).abs() < 1e-9 * exact, "n={n} E[x^{}] = {m}, want {exact}", 2 * k);
        }
        let odd = q.expect(|x| x.powi(3) + x);
        assert!(odd.abs() < 1e-10);
    }
}

#[test]
fn task_names_round_trip() {
    for t in [Task::Spiked, Task::Max, Task::MaxHard, Task::Null, Task::FirstToken] {
        assert_eq!(Task::parse(t.name()).unwrap(), t);
    }
}
