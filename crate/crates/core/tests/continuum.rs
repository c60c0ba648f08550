mod common;

use belieflab::bounds::{
    lemma4_mc, log_density_g, log_density_g_i, theorem2_n, ConcentrationParams, NetCellSampling,
    DEFAULT_K_MAX,
};
use belieflab::hypothesis::{
    build_hellinger_covering, default_hellinger_deltas, default_hellinger_radii, HellingerCovering,
};
use belieflab::network::Graph;
use belieflab::sampling::sample_history;
use belieflab::scenario::{build_localization, Scenario};

const R: f64 = 0.2;
const INNER: f64 = 0.05;

fn small() -> (Scenario, HellingerCovering) {
    let s = build_localization(&common::small_localization_spec(), Graph::path(2).unwrap(), 0).unwrap();
    let radii = default_hellinger_radii(R).unwrap();
    let deltas = default_hellinger_deltas(&radii, INNER);
    let cov = build_hellinger_covering(s.model(), s.space(), R, &radii, &deltas).unwrap();
    (s, cov)
}

#[test]
fn grid_density_trivial_cases() {
    let (s, cov) = small();
    let prior = s.space().uniform_prior();
    let h = sample_history(s.model(), 1, 0, 25);
    let set = &cov.bands[0].members;
    for i in 0..2 {
        let g0 = log_density_g_i(s.model(), s.weights(), set, &prior, &h, 0, i).unwrap();
        assert!(g0.abs() < 1e-12);
    }
    // the joint density is a prior-weighted product over agents
    let star = s.model().theta_star();
    let direct: f64 = (0..25)
        .map(|t| {
            let obs = h.at(t);
            (0..2).map(|j| s.model().likelihood(j, star, obs[j]).ln()).sum::<f64>()
        })
        .sum::<f64>()
        + prior[star].ln();
    let g = log_density_g(s.model(), &[star], &prior, &h, 25).unwrap();
    assert!((g - direct).abs() < 1e-10);
}

/// Event indicator recomputed from closed-form densities on the same histories.
fn oracle_hits(s: &Scenario, cov: &HellingerCovering, k: usize, trials: u64, seed: u64) -> Vec<(usize, usize, usize, usize)> {
    let prior = s.space().uniform_prior();
    let ball: Vec<usize> = (0..prior.len()).filter(|&t| cov.distances[t] <= INNER).collect();
    let mut hits = Vec::new();
    for band in &cov.bands {
        let gap = band.inner_radius - band.delta - INNER;
        for (c, cell) in band.cells.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            for i in 0..2 {
                let mut count = 0;
                for trial in 0..trials {
                    let h = sample_history(s.model(), seed, trial, k);
                    let f = log_density_g_i(s.model(), s.weights(), cell, &prior, &h, k, i).unwrap();
                    let b = log_density_g_i(s.model(), s.weights(), &ball, &prior, &h, k, i).unwrap();
                    count += (f - b >= -2.0 * k as f64 * gap) as usize;
                }
                hits.push((band.level, c, i, count));
            }
        }
    }
    hits
}

#[test]
fn net_cell_counts_match_closed_form_oracle() {
    let (s, cov) = small();
    let prior = s.space().uniform_prior();
    let (k, trials, seed) = (15, 60, 4);
    let rep = lemma4_mc(s.model(), s.weights(), &cov, &prior, INNER, k, trials, seed, NetCellSampling::TruthProxy)
        .unwrap();
    let got: Vec<(usize, usize, usize, usize)> =
        rep.cells.iter().map(|c| (c.band, c.cell, c.agent, c.hits)).collect();
    assert_eq!(got, oracle_hits(&s, &cov, k, trials as u64, seed));
}

#[test]
fn net_cell_bound_is_violated_next_to_the_inner_ball() {
    let (s, cov) = small();
    let prior = s.space().uniform_prior();
    let rep =
        lemma4_mc(s.model(), s.weights(), &cov, &prior, INNER, 40, 500, 3, NetCellSampling::ExactMixture).unwrap();
    assert!(rep.asserted > 0);
    // outer band: far from the truth, the tail event never fires
    assert!(rep.cells.iter().filter(|c| c.band == 1).all(|c| c.hits == 0 && c.passed));
    // the bound shrinks like δ^d while the event stays likely for cells whose
    // divergence from the truth is small compared with the band gap
    let failing: Vec<_> = rep.cells.iter().filter(|c| !c.passed).collect();
    assert!(!failing.is_empty());
    assert!(failing.iter().all(|c| c.band > 1 && c.empirical > 100.0 * c.bound));
    assert_eq!(rep.failures, failing.len());
}

#[test]
fn net_cells_at_zero_steps_are_deterministic() {
    let (s, cov) = small();
    let prior = s.space().uniform_prior();
    let rep = lemma4_mc(s.model(), s.weights(), &cov, &prior, INNER, 0, 10, 1, NetCellSampling::TruthProxy).unwrap();
    // both densities equal 1, so the log ratio is 0 ≥ 0
    assert!(rep.cells.iter().all(|c| c.hits == 10));
}

#[test]
fn net_cells_reject_inner_radius_breaking_positivity() {
    let (s, cov) = small();
    let prior = s.space().uniform_prior();
    let err = lemma4_mc(s.model(), s.weights(), &cov, &prior, 0.15, 10, 10, 1, NetCellSampling::TruthProxy);
    assert!(err.is_err());
}

#[test]
fn continuum_transient_time_on_small_grid() {
    let (s, cov) = small();
    let params = ConcentrationParams {
        rho: 0.2,
        sigma: 0.2,
        r: R,
        alpha: s.alpha(),
        epsilon: s.epsilon(),
        lambda: s.weights().lambda_formula(),
        n: 2,
        inner_radius: Some(INNER),
        dimension: Some(2),
    };
    let rep = theorem2_n(&params, &cov, DEFAULT_K_MAX).unwrap();
    let n = rep.n.expect("finite transient time");
    assert_eq!(n, rep.n1_min.unwrap().max(rep.n2_min.unwrap()));
    assert_eq!(rep.bands.len(), cov.bands.len());
    let looser = ConcentrationParams { rho: 0.4, ..params.clone() };
    assert!(theorem2_n(&looser, &cov, DEFAULT_K_MAX).unwrap().n1_min <= rep.n1_min);
    let bad = ConcentrationParams { inner_radius: Some(0.15), ..params };
    assert!(theorem2_n(&bad, &cov, DEFAULT_K_MAX).is_err());
}
