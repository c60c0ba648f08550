mod common;

use belieflab::belief::{step, BeliefState, ObservationRecord};
use belieflab::bounds::{lemma3_check, tail_chain, theorem1_n, vbar, ConcentrationParams};
use belieflab::hypothesis::{
    alpha_lower_bound, build_kl_covering, default_kl_radii, gammas, HypothesisSpace,
};
use belieflab::network::{lazy_metropolis, lemma1_check, validate_weights};
use belieflab::sampling::sample_history;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn beliefs_stay_normalized(seed in any::<u64>(), n in 1usize..5, m in 2usize..20) {
        let mut r = rng(seed);
        let model = common::random_model(&mut r, n, m);
        let a = lazy_metropolis(&common::random_graph(&mut r, n)).unwrap();
        let mut state = BeliefState::from_priors(&common::random_priors(&mut r, n, m)).unwrap();
        for _ in 0..500 {
            let obs: Vec<usize> = (0..n).map(|i| r.gen_range(0..model.alphabet_size(i))).collect();
            state = step(&state, &a, &model, &obs).unwrap();
        }
        prop_assert!(state.normalization_drift() <= 1e-9);
    }

    #[test]
    fn lazy_metropolis_is_valid_and_contracts(seed in any::<u64>(), n in 2usize..9) {
        let mut r = rng(seed);
        let g = common::random_graph(&mut r, n);
        let a = lazy_metropolis(&g).unwrap();
        prop_assert!(validate_weights(&a, &g).unwrap().all_passed());
        prop_assert!(a.lambda_empirical() <= a.lambda_formula() + 1e-12);
        prop_assert!(lemma1_check(&a, 100).passed());
    }

    #[test]
    fn kl_covering_partitions(seed in any::<u64>(), r_ball in 0.01f64..0.5) {
        let mut r = rng(seed);
        let model = common::random_model(&mut r, 2, 25);
        let g = gammas(&model).unwrap();
        let max_gamma = g.iter().copied().fold(0.0, f64::max);
        let cov = build_kl_covering(&model, &HypothesisSpace::finite(25), &default_kl_radii(r_ball, max_gamma).unwrap()).unwrap();
        let mut seen = [0; 25];
        for &t in cov.inner.iter().chain(&cov.outside()) {
            seen[t] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(cov.overflow.is_empty());
        for (b, members) in cov.bands.iter().enumerate() {
            for &t in members {
                prop_assert!(g[t] > cov.radii[b] && g[t] <= cov.radii[b + 1]);
            }
        }
    }

    #[test]
    fn transient_time_is_monotone(seed in any::<u64>(), rho in 0.01f64..0.5, sigma in 0.01f64..0.5) {
        let mut r = rng(seed);
        let model = common::random_model(&mut r, 3, 10);
        let a = lazy_metropolis(&common::random_graph(&mut r, 3)).unwrap();
        let g = gammas(&model).unwrap();
        let max_gamma = g.iter().copied().fold(0.0, f64::max);
        let prior = vec![vec![0.1; 10]; 3];
        let run = |rho: f64, sigma: f64, radius: f64| {
            let cov = build_kl_covering(&model, &HypothesisSpace::finite(10), &default_kl_radii(radius, max_gamma).unwrap()).unwrap();
            let p = ConcentrationParams {
                rho, sigma, r: radius,
                alpha: alpha_lower_bound(&model).unwrap(),
                epsilon: 0.1,
                lambda: a.lambda_formula(),
                n: 3,
                inner_radius: None,
                dimension: None,
            };
            theorem1_n(&p, &cov, &model, &prior, 1u64 << 40).unwrap()
        };
        let base = run(rho, sigma, 0.05);
        let looser = run(rho * 1.5, sigma * 1.5, 0.05);
        prop_assert!(looser.n1_min <= base.n1_min);
        prop_assert!(looser.n2_min <= base.n2_min);
        prop_assert!(base.n2_bandwise >= base.n2_min);
    }

    #[test]
    fn tail_chain_holds_pathwise(seed in any::<u64>(), n in 1usize..4, k in 0usize..60) {
        let mut r = rng(seed);
        let model = common::random_model(&mut r, n, 8);
        let a = lazy_metropolis(&common::random_graph(&mut r, n)).unwrap();
        let priors = common::random_priors(&mut r, n, 8);
        let star = model.theta_star();
        let eps = priors.iter().map(|p| p[star]).fold(1.0, f64::min) * (1.0 - 1e-9);
        let mu0 = BeliefState::from_priors(&priors).unwrap();
        let outside: Vec<usize> = (0..8).filter(|&t| t != star && r.gen_bool(0.6)).collect();
        let h = sample_history(&model, seed, 0, k);
        let rep = tail_chain(&model, &a, &mu0, &h, k, &outside, eps).unwrap();
        prop_assert!(rep.holds(), "{:?}", rep);
    }

    #[test]
    fn density_comparison_holds_for_networks(seed in any::<u64>(), n in 2usize..4, k in 1usize..31) {
        let mut r = rng(seed);
        let model = common::random_model(&mut r, n, 10);
        let a = lazy_metropolis(&common::random_graph(&mut r, n)).unwrap();
        let prior = common::random_row(&mut r, 10, 0.1);
        let anchor = r.gen_range(0..10);
        let set: Vec<usize> = (0..10).filter(|&t| t == anchor || r.gen_bool(0.5)).collect();
        let mut rec = ObservationRecord::for_model(&model);
        for _ in 0..k {
            let obs: Vec<usize> = (0..n).map(|i| r.gen_range(0..model.alphabet_size(i))).collect();
            rec.push(&obs).unwrap();
        }
        let rep = lemma3_check(&model, &a, &set, &prior, &rec, k).unwrap();
        prop_assert!(rep.passed && rep.corrected_passed);
    }
}

#[test]
fn mean_log_likelihood_ratio_drifts_at_minus_gamma() {
    let mut r = rng(11);
    let model = common::random_model(&mut r, 3, 6);
    let g = gammas(&model).unwrap();
    let (k, trials) = (20usize, 10_000u64);
    for theta in 0..6 {
        let samples: Vec<f64> =
            (0..trials).map(|t| vbar(&model, theta, &sample_history(&model, 5, t, k), k).unwrap()).collect();
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        let expected = -(k as f64) * g[theta];
        assert!((mean - expected).abs() <= 4.0 * se + 1e-12, "θ={theta}: {mean} vs {expected} (se {se})");
    }
}
