//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use belieflab::belief::{closed_form, mirror_oracle_step, step, BeliefState, ObservationRecord};
use belieflab::bounds::{
    tail_chain, lemma2_mc, lemma3_check, theorem1_n, theorem2_n, ConcentrationParams, DEFAULT_K_MAX,
};
use belieflab::hypothesis::{
    alpha_lower_bound, build_hellinger_covering, build_kl_covering, default_hellinger_deltas,
    default_hellinger_radii, default_kl_radii, gamma, gammas, hellinger_joint, HypothesisSpace,
    LikelihoodModel,
};
use belieflab::network::{lazy_metropolis, lemma1_check, validate_weights, Graph, WeightMatrix};
use belieflab::numeric::total_variation;
use belieflab::sampling::sample_history;
use belieflab::scenario::{
    build_localization, mc_concentration, rate_slope, run, Ball, Scenario, TraceConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn random_history(rng: &mut ChaCha8Rng, model: &LikelihoodModel, k: usize) -> ObservationRecord {
    let mut rec = ObservationRecord::for_model(model);
    for _ in 0..k {
        let obs: Vec<usize> =
            (0..model.n_agents()).map(|i| rng.gen_range(0..model.alphabet_size(i))).collect();
        rec.push(&obs).unwrap();
    }
    rec
}

fn update_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = 50;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=6);
        let m = rng.gen_range(5..=40);
        let model = common::random_model(&mut rng, n, m);
        let a = lazy_metropolis(&common::random_graph(&mut rng, n)).unwrap();
        let mu0 = BeliefState::from_priors(&common::random_priors(&mut rng, n, m)).unwrap();
        let history = random_history(&mut rng, &model, k);
        let mut state = mu0.clone();
        for t in 0..k {
            state = step(&state, &a, &model, history.at(t)).unwrap();
        }
        for i in 0..n {
            let cf = closed_form(&mu0, &a, &model, &history, k, i).unwrap();
            for (x, y) in state.log_row(i).iter().zip(&cf) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    outcome(worst <= 1e-9, format!("max |log-belief difference| = {worst:.3e} over 50 scenarios"))
}

fn mirror_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(3..=15);
        let model = common::random_model(&mut rng, n, m);
        let a = lazy_metropolis(&common::random_graph(&mut rng, n)).unwrap();
        let state = BeliefState::from_priors(&common::random_priors(&mut rng, n, m)).unwrap();
        let obs: Vec<usize> = (0..n).map(|i| rng.gen_range(0..model.alphabet_size(i))).collect();
        let next = step(&state, &a, &model, &obs).unwrap();
        for i in 0..n {
            let sol = match mirror_oracle_step(&state, &a, &model, &obs, i) {
                Ok(sol) => sol,
                Err(e) => return outcome(false, format!("oracle error: {e}")),
            };
            worst = worst.max(total_variation(&next.belief_row(i), &sol.belief));
        }
    }
    outcome(worst <= 1e-6, format!("max TV(step, mirror oracle) = {worst:.3e} over 20 instances"))
}

fn deviation_bound() -> Outcome {
    let graphs = [
        ("path(5)", Graph::path(5).unwrap()),
        ("ring(8)", Graph::ring(8).unwrap()),
        ("star(6)", Graph::star(6).unwrap()),
        ("grid(3,3)", Graph::grid(3, 3).unwrap()),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, g) in graphs {
        let a = lazy_metropolis(&g).unwrap();
        let rep = lemma1_check(&a, 200);
        let ok = rep.violations.iter().all(|v| v.lambda != "formula");
        passed &= ok;
        parts.push(format!("{name} max/bound {:.3}", rep.max_ratio_formula));
    }
    outcome(passed, parts.join(", "))
}

fn tail_probability() -> Outcome {
    let targets = [0.0, 0.2, 0.35, 0.45, 0.55, 0.7, 0.9, 1.1];
    let model = common::tail_probability_model(&targets, [0.15, 0.2]);
    let cov = build_kl_covering(&model, &HypothesisSpace::finite(8), &[0.3, 0.6, 1.2]).unwrap();
    if cov.bands.len() != 2 || !cov.overflow.is_empty() {
        return outcome(false, "instance does not form a 2-band covering");
    }
    let mut passed = true;
    let mut parts = Vec::new();
    for (j, k) in [20usize, 50, 100].into_iter().enumerate() {
        let rep = lemma2_mc(&model, &cov, k, 2000, 40 + j as u64).unwrap();
        passed &= rep.passed;
        parts.push(format!("k={k}: {:.4} vs bound {:.4}", rep.empirical, rep.bound));
    }
    outcome(passed, parts.join(", "))
}

fn countable_instance() -> (Scenario, ConcentrationParams, belieflab::hypothesis::KlCovering) {
    let model = common::coded_model();
    let g = Graph::ring(3).unwrap();
    let a = lazy_metropolis(&g).unwrap();
    let m = model.n_hypotheses();
    let r = 0.25;
    let max_gamma = gammas(&model).unwrap().into_iter().fold(0.0, f64::max);
    let cov =
        build_kl_covering(&model, &HypothesisSpace::finite(m), &default_kl_radii(r, max_gamma).unwrap())
            .unwrap();
    let params = ConcentrationParams {
        rho: 0.1,
        sigma: 0.1,
        r,
        alpha: alpha_lower_bound(&model).unwrap(),
        epsilon: 1.0 / m as f64,
        lambda: a.lambda_formula(),
        n: 3,
        inner_radius: None,
        dimension: None,
    };
    let scenario = Scenario::new(
        g,
        a,
        model,
        HypothesisSpace::finite(m),
        vec![vec![1.0 / m as f64; m]; 3],
        1000,
        Some(1.0 / m as f64),
    )
    .unwrap()
    .with_ball(Ball::new("truth", cov.inner.clone()))
    .unwrap();
    (scenario, params, cov)
}

fn countable_transient_time() -> Outcome {
    let (scenario, params, cov) = countable_instance();
    if cov.inner != vec![0] {
        return outcome(false, format!("ball holds {:?}, expected only the truth", cov.inner));
    }
    let rep = theorem1_n(&params, &cov, scenario.model(), scenario.priors(), DEFAULT_K_MAX).unwrap();
    let Some(n_big) = rep.n else {
        return outcome(false, "transient time not reached within k_max");
    };
    let steps = n_big.min(100_000) as usize;
    let trials = 500;
    let mc = mc_concentration(&scenario, &cov.inner, params.sigma, steps, trials, 5).unwrap();
    let se = mc.std_error_at(params.rho);
    let mut passed = mc.failure_frequency <= params.rho + 3.0 * se;

    // pathwise chain on 50 trajectories at the uncapped N
    let mu0 = scenario.initial_state();
    let outside = cov.outside();
    let mut chain_ok = 0;
    for trial in 0..50 {
        let h = sample_history(scenario.model(), 6, trial, n_big as usize);
        let chain = tail_chain(
            scenario.model(),
            scenario.weights(),
            &mu0,
            &h,
            n_big as usize,
            &outside,
            params.epsilon,
        )
        .unwrap();
        chain_ok += chain.holds() as usize;
    }
    passed &= chain_ok == 50;
    outcome(
        passed,
        format!(
            "N = {n_big} (N1 {:?}, N2 {:?}, log C3 {:.1}); failures {}/{trials} at k = {steps}; chain holds on {chain_ok}/50",
            rep.n1_min,
            rep.n2_min,
            rep.log_c3.unwrap(),
            mc.failures
        ),
    )
}

fn geometric_rate() -> Outcome {
    let (scenario, _, _) = countable_instance();
    let trace = run(&scenario, 8, &TraceConfig::default()).unwrap();
    let mut passed = true;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for theta in 1..scenario.model().n_hypotheses() {
        let g = gamma(scenario.model(), theta).unwrap();
        if g < 0.05 {
            continue;
        }
        checked += 1;
        let slope = rate_slope(&trace, theta, 200, 1000).unwrap();
        for &s in &slope.per_agent {
            let rel = (s + g).abs() / g;
            worst = worst.max(rel);
            passed &= rel <= 0.2;
        }
    }
    outcome(passed, format!("{checked} wrong hypotheses, worst relative slope error {:.2}%", 100.0 * worst))
}

fn density_comparison() -> (Outcome, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut min_slack = f64::INFINITY;
    let mut passed = true;
    for _ in 0..20 {
        let n = rng.gen_range(2..=3);
        let m = rng.gen_range(3..=12);
        let k = rng.gen_range(1..=30);
        let model = common::random_model(&mut rng, n, m);
        let a = lazy_metropolis(&common::random_graph(&mut rng, n)).unwrap();
        let prior = common::random_row(&mut rng, m, 0.1);
        let mut set: Vec<usize> = (0..m).filter(|_| rng.gen_bool(0.5)).collect();
        if set.is_empty() {
            set.push(rng.gen_range(0..m));
        }
        let h = random_history(&mut rng, &model, k);
        let rep = lemma3_check(&model, &a, &set, &prior, &h, k).unwrap();
        passed &= rep.passed;
        min_slack = rep.agents.iter().map(|s| s.slack).fold(min_slack, f64::min);
    }

    // single agent: C1 = 1 and the inequality as stated omits the 1/μ0(B) factor
    let mut violated = 0;
    let mut corrected = 0;
    for _ in 0..20 {
        let m = rng.gen_range(3..=12);
        let k = rng.gen_range(1..=30);
        let model = common::random_model(&mut rng, 1, m);
        let a = WeightMatrix::new(vec![vec![1.0]]).unwrap();
        let prior = common::random_row(&mut rng, m, 0.1);
        let set: Vec<usize> = (0..m / 2).collect();
        let h = random_history(&mut rng, &model, k);
        let rep = lemma3_check(&model, &a, &set, &prior, &h, k).unwrap();
        violated += (!rep.passed) as usize;
        corrected += rep.corrected_passed as usize;
    }
    let info = format!(
        "n = 1 proper subsets: stated form violated on {violated}/20, form with the 1/mu0(B) factor holds on {corrected}/20"
    );
    (outcome(passed, format!("20 instances with n in {{2, 3}}, min slack {min_slack:.3}")), info)
}

fn continuum_transient_time() -> Outcome {
    let spec = common::localization_spec();
    let scenario = build_localization(&spec, Graph::ring(3).unwrap(), 0).unwrap();
    let model = scenario.model();
    let (r, big_r) = (0.3, 0.1);
    let radii = default_hellinger_radii(r).unwrap();
    let deltas = default_hellinger_deltas(&radii, big_r);
    let cov = build_hellinger_covering(model, scenario.space(), r, &radii, &deltas).unwrap();

    let mut seen = vec![0usize; model.n_hypotheses()];
    cov.inner.iter().for_each(|&t| seen[t] += 1);
    cov.bands.iter().flat_map(|b| &b.members).for_each(|&t| seen[t] += 1);
    let partition = seen.iter().all(|&c| c == 1);

    let params = ConcentrationParams {
        rho: 0.2,
        sigma: 0.2,
        r,
        alpha: scenario.alpha(),
        epsilon: scenario.epsilon(),
        lambda: scenario.weights().lambda_formula(),
        n: 3,
        inner_radius: Some(big_r),
        dimension: Some(2),
    };
    let rep = theorem2_n(&params, &cov, DEFAULT_K_MAX).unwrap();
    let Some(n_big) = rep.n else {
        return outcome(false, "transient time not reached within k_max");
    };
    let steps = n_big.min(100_000) as usize;
    let ball = Ball::hellinger("ball", model, r);
    let trials = 200;
    let mc = mc_concentration(&scenario, &ball.members, params.sigma, steps, trials, 12).unwrap();
    let success = (trials - mc.failures) as f64 / trials as f64;
    outcome(
        partition && success >= 0.8,
        format!(
            "partition {partition}; bands {} with net sizes {:?}; N = {n_big}; concentrated in {:.1}% of {trials} trials at k = {steps}",
            cov.bands.len(),
            cov.net_sizes(),
            100.0 * success
        ),
    )
}

fn brute_force_hellinger(model: &LikelihoodModel, a: usize, b: usize) -> f64 {
    let n = model.n_agents();
    let sizes: Vec<usize> = (0..n).map(|i| model.alphabet_size(i)).collect();
    let total: usize = sizes.iter().product();
    let mut sq = 0.0;
    for mut code in 0..total {
        let (mut p, mut q) = (1.0, 1.0);
        for (i, &s) in sizes.iter().enumerate() {
            let sym = code % s;
            code /= s;
            p *= model.likelihood(i, a, sym);
            q *= model.likelihood(i, b, sym);
        }
        sq += (p.sqrt() - q.sqrt()).powi(2);
    }
    (0.5 * sq).sqrt() / (n as f64).sqrt()
}

fn structural() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // normalization after 10^4 steps
    let model = common::random_model(&mut rng, 4, 20);
    let g = common::random_graph(&mut rng, 4);
    let a = lazy_metropolis(&g).unwrap();
    let scenario = Scenario::new(
        g.clone(),
        a.clone(),
        model.clone(),
        HypothesisSpace::finite(20),
        common::random_priors(&mut rng, 4, 20),
        10_000,
        None,
    )
    .unwrap();
    let cfg = TraceConfig { full_until: 0, thin_every: 1000, keep_observations: false };
    let trace = run(&scenario, 3, &cfg).unwrap();
    if trace.max_drift > 1e-9 {
        failures.push(format!("drift {:.2e}", trace.max_drift));
    }

    // weight validation
    for g in [Graph::path(5).unwrap(), Graph::star(6).unwrap(), common::random_graph(&mut rng, 7)] {
        let a = lazy_metropolis(&g).unwrap();
        if !validate_weights(&a, &g).unwrap().all_passed() {
            failures.push("lazy Metropolis weights rejected".into());
        }
    }
    let row_only = WeightMatrix::new(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
    if validate_weights(&row_only, &Graph::path(2).unwrap()).unwrap().doubly_stochastic.passed {
        failures.push("column sums not checked".into());
    }

    // joint Hellinger against the joint alphabet
    let mut worst_h: f64 = 0.0;
    for n in 1..=3 {
        let model = common::random_model(&mut rng, n, 6);
        for x in 0..6 {
            for y in 0..6 {
                worst_h = worst_h.max((hellinger_joint(&model, x, y) - brute_force_hellinger(&model, x, y)).abs());
            }
        }
    }
    if worst_h > 1e-10 {
        failures.push(format!("hellinger_joint error {worst_h:.2e}"));
    }

    // covering partitions
    let model = common::random_model(&mut rng, 3, 30);
    let max_gamma = gammas(&model).unwrap().into_iter().fold(0.0, f64::max);
    let cov = build_kl_covering(
        &model,
        &HypothesisSpace::finite(30),
        &default_kl_radii(0.05, max_gamma).unwrap(),
    )
    .unwrap();
    let mut seen = vec![0usize; 30];
    cov.inner.iter().chain(cov.outside().iter()).for_each(|&t| seen[t] += 1);
    if seen.iter().any(|&c| c != 1) || cov.cardinalities().iter().sum::<usize>() + cov.overflow.len() + cov.inner.len() != 30 {
        failures.push("KL covering is not a partition".into());
    }
    let spec = common::small_localization_spec();
    let loc = build_localization(&spec, Graph::path(2).unwrap(), 0).unwrap();
    let radii = default_hellinger_radii(0.2).unwrap();
    let deltas = default_hellinger_deltas(&radii, 0.05);
    let hc = build_hellinger_covering(loc.model(), loc.space(), 0.2, &radii, &deltas).unwrap();
    let mut seen = vec![0usize; loc.model().n_hypotheses()];
    hc.inner.iter().for_each(|&t| seen[t] += 1);
    for band in &hc.bands {
        band.members.iter().for_each(|&t| seen[t] += 1);
        let cell_total: usize = band.cells.iter().map(Vec::len).sum();
        if cell_total != band.members.len() {
            failures.push(format!("band {} cells do not partition the band", band.level));
        }
    }
    if seen.iter().any(|&c| c != 1) {
        failures.push("Hellinger covering is not a partition".into());
    }

    // determinism across thread counts
    let short = scenario.clone().with_horizon(500);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let t1 = one.install(|| run(&short, 77, &TraceConfig::default()).unwrap());
    let t4 = four.install(|| run(&short, 77, &TraceConfig::default()).unwrap());
    let m1 = one.install(|| mc_concentration(&short, &[0], 0.1, 200, 64, 77).unwrap());
    let m4 = four.install(|| mc_concentration(&short, &[0], 0.1, 200, 64, 77).unwrap());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if t1 != t4 || bits(&m1.min_masses) != bits(&m4.min_masses) {
        failures.push("results depend on the thread count".into());
    }

    if failures.is_empty() {
        outcome(true, format!("drift {:.2e}, hellinger error {worst_h:.2e}, partitions and determinism hold", trace.max_drift))
    } else {
        outcome(false, failures.join("; "))
    }
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("update / closed-form equivalence", Box::new(update_closed_form)),
        ("mirror-descent oracle", Box::new(mirror_oracle)),
        ("consensus deviation bound", Box::new(deviation_bound)),
        ("concentration Monte Carlo", Box::new(tail_probability)),
        ("countable transient time end to end", Box::new(countable_transient_time)),
        ("geometric learning rate", Box::new(geometric_rate)),
        ("density comparison", Box::new(|| {
            let (o, info) = density_comparison();
            println!("      info: {info}");
            o
        })),
        ("continuum transient time", Box::new(continuum_transient_time)),
        ("structural invariants", Box::new(structural)),
    ];
    let mut failed = 0;
    for (idx, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let status = if o.passed { "PASS" } else { "FAIL" };
        failed += (!o.passed) as usize;
        println!(
            "{status} [{}] {name} ({:.1}s): {}",
            idx + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
