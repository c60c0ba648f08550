use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_c1, log_c2, log_c3};
use crate::belief::{closed_form, BeliefState, ObservationRecord};
use crate::error::{Error, Result};
use crate::hypothesis::{alpha_lower_bound, HellingerCovering, KlCovering, LikelihoodModel};
use crate::network::WeightMatrix;
use crate::numeric::{log_sum_exp, log_sum_exp_iter};
use crate::sampling::{stream, CategoricalSampler, ObservationSampler, TrialStreams, HYPOTHESIS_STREAM};

fn check_history(history: &ObservationRecord, model: &LikelihoodModel, k: usize) -> Result<()> {
    if history.n_agents() != model.n_agents() {
        return Err(Error::Dimension(format!(
            "history has {} agents, model has {}",
            history.n_agents(),
            model.n_agents()
        )));
    }
    if history.len() < k {
        return Err(Error::InvalidArgument(format!("history has {} steps, {k} requested", history.len())));
    }
    Ok(())
}

/// `Σ_{t≤k} (1/n) Σ_i log(ℓ^i(s_t^i|θ) / ℓ^i(s_t^i|θ*))`.
pub fn vbar(model: &LikelihoodModel, theta: usize, history: &ObservationRecord, k: usize) -> Result<f64> {
    check_history(history, model, k)?;
    if theta >= model.n_hypotheses() {
        return Err(Error::InvalidArgument(format!("hypothesis {theta} out of range")));
    }
    let star = model.theta_star();
    let n = model.n_agents();
    let mut total = 0.0;
    for t in 0..k {
        let obs = history.at(t);
        for (i, &s) in obs.iter().enumerate() {
            let row = model.log_likelihoods(i, s);
            total += row[theta] - row[star];
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct TailProbabilityReport {
    pub k: usize,
    pub trials: usize,
    pub hits: usize,
    pub empirical: f64,
    /// Binomial standard error at the bound, `sqrt(b(1−b)/T)` with `b = min(bound, 1)`.
    pub std_error: f64,
    pub bound: f64,
    pub log_bound: f64,
    pub vacuous: bool,
    pub passed: bool,
}

/// Monte Carlo frequency of `∃θ ∉ B_r : V̄_k(θ) ≥ −(k/2)γ(θ)` under the truth,
/// against `C2 Σ_l N_{r_l} exp(−k r_l²)`.
pub fn lemma2_mc(
    model: &LikelihoodModel,
    cov: &KlCovering,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<TailProbabilityReport> {
    if cov.n_hypotheses() != model.n_hypotheses() || cov.center != model.theta_star() {
        return Err(Error::InvalidArgument("covering was built for a different model".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let alpha = alpha_lower_bound(model)?;
    let log_c2 = log_c2(alpha)?;
    let last = *cov.radii.last().expect("covering has radii");
    let mut terms: Vec<f64> = cov
        .bands
        .iter()
        .zip(&cov.radii)
        .filter(|(b, _)| !b.is_empty())
        .map(|(b, r)| (b.len() as f64).ln() - k as f64 * r * r)
        .collect();
    if !cov.overflow.is_empty() {
        terms.push((cov.overflow.len() as f64).ln() - k as f64 * last * last);
    }
    let log_bound = log_c2 + log_sum_exp(&terms);
    let bound = log_bound.exp();

    let outside = cov.outside();
    let thresholds: Vec<f64> = outside.iter().map(|&t| -0.5 * k as f64 * cov.gammas[t]).collect();
    let n = model.n_agents();
    let star = model.theta_star();
    let sampler = ObservationSampler::truth(model);
    let hits = (0..trials as u64)
        .into_par_iter()
        .filter(|&trial| {
            let mut streams = TrialStreams::new(seed, trial, n);
            let mut obs = vec![0; n];
            let mut v = vec![0.0; outside.len()];
            for _ in 0..k {
                streams.draw(&sampler, star, &mut obs);
                for (i, &s) in obs.iter().enumerate() {
                    let row = model.log_likelihoods(i, s);
                    for (acc, &t) in v.iter_mut().zip(&outside) {
                        *acc += row[t] - row[star];
                    }
                }
            }
            v.iter().zip(&thresholds).any(|(&x, &th)| x / n as f64 >= th)
        })
        .count();

    let empirical = hits as f64 / trials as f64;
    let b = bound.min(1.0);
    let std_error = (b * (1.0 - b) / trials as f64).sqrt();
    let vacuous = bound >= 1.0;
    Ok(TailProbabilityReport {
        k,
        trials,
        hits,
        empirical,
        std_error,
        bound,
        log_bound,
        vacuous,
        passed: vacuous || empirical <= bound + 3.0 * std_error,
    })
}

fn check_prior(prior: &[f64], model: &LikelihoodModel) -> Result<()> {
    if prior.len() != model.n_hypotheses() {
        return Err(Error::Dimension(format!(
            "prior has {} entries, model has {} hypotheses",
            prior.len(),
            model.n_hypotheses()
        )));
    }
    if prior.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidDistribution("prior masses must be nonnegative".into()));
    }
    Ok(())
}

fn log_set_mass(prior: &[f64], set: &[usize]) -> Result<f64> {
    let mass: f64 = set.iter().map(|&t| prior[t]).sum();
    if !(mass > 0.0) {
        return Err(Error::InvalidArgument("set has zero prior mass".into()));
    }
    Ok(mass.ln())
}

// Σ_{t=1..k} Σ_j w^{(k−t)}_j log ℓ^j(s_t^j|θ) for every θ
fn history_exponents(
    model: &LikelihoodModel,
    history: &ObservationRecord,
    k: usize,
    weights: impl Fn(usize) -> Vec<f64>,
) -> Vec<f64> {
    let mut acc = vec![0.0; model.n_hypotheses()];
    for t in 1..=k {
        let obs = history.at(t - 1);
        for (j, &w) in weights(k - t).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (x, &v) in acc.iter_mut().zip(model.log_likelihoods(j, obs[j])) {
                *x += w * v;
            }
        }
    }
    acc
}

fn log_prior_average(prior: &[f64], set: &[usize], exponents: &[f64]) -> Result<f64> {
    let log_mass = log_set_mass(prior, set)?;
    Ok(log_sum_exp_iter(set.iter().map(|&t| prior[t].ln() + exponents[t])) - log_mass)
}

/// `log g_B^i = log( (1/μ_0(B)) Σ_{θ∈B} μ_0(θ) Π_t Π_j ℓ^j(s_t^j|θ)^{[A^{k−t}]_ij} )`.
///
/// `prior` holds point masses (quadrature weights already folded in).
pub fn log_density_g_i(
    model: &LikelihoodModel,
    a: &WeightMatrix,
    set: &[usize],
    prior: &[f64],
    history: &ObservationRecord,
    k: usize,
    i: usize,
) -> Result<f64> {
    check_history(history, model, k)?;
    check_prior(prior, model)?;
    if a.n() != model.n_agents() || i >= a.n() {
        return Err(Error::Dimension("weight matrix does not match the model".into()));
    }
    let powers = a.row_powers(i, k);
    let exps = history_exponents(model, history, k, |s| powers[s].clone());
    log_prior_average(prior, set, &exps)
}

/// `log g_B = log Σ_{θ∈B} μ_0(θ) Π_t Π_j ℓ^j(s_t^j|θ)` (not normalized by `μ_0(B)`).
pub fn log_density_g(
    model: &LikelihoodModel,
    set: &[usize],
    prior: &[f64],
    history: &ObservationRecord,
    k: usize,
) -> Result<f64> {
    check_history(history, model, k)?;
    check_prior(prior, model)?;
    let ones = vec![1.0; model.n_agents()];
    let exps = history_exponents(model, history, k, |_| ones.clone());
    Ok(log_prior_average(prior, set, &exps)? + log_set_mass(prior, set)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentSlack {
    pub agent: usize,
    pub log_g_i: f64,
    /// `log C1 + (1/n) log g_B − log g_B^i`.
    pub slack: f64,
    /// Slack with `g_B` normalized by `μ_0(B)`.
    pub corrected_slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityComparisonReport {
    pub log_c1: f64,
    pub log_g: f64,
    pub log_prior_mass: f64,
    pub agents: Vec<AgentSlack>,
    /// Every agent has nonnegative `slack`.
    pub passed: bool,
    /// Every agent has nonnegative `corrected_slack`.
    pub corrected_passed: bool,
}

const SLACK_TOL: f64 = 1e-9;

/// Checks `log g_B^i ≤ log C1 + (1/n) log g_B` for every agent.
///
/// With `g_B` unnormalized the inequality fails for `n = 1` whenever
/// `μ_0(B) < 1`; `corrected_slack` adds the missing `−(1/n) log μ_0(B)`.
pub fn lemma3_check(
    model: &LikelihoodModel,
    a: &WeightMatrix,
    set: &[usize],
    prior: &[f64],
    history: &ObservationRecord,
    k: usize,
) -> Result<DensityComparisonReport> {
    let alpha = alpha_lower_bound(model)?;
    let n = model.n_agents();
    let lc1 = log_c1(alpha, n, a.lambda_formula())?;
    let log_g = log_density_g(model, set, prior, history, k)?;
    let log_prior_mass = log_set_mass(prior, set)?;
    let agents = (0..n)
        .map(|i| {
            let log_g_i = log_density_g_i(model, a, set, prior, history, k, i)?;
            let slack = lc1 + log_g / n as f64 - log_g_i;
            Ok(AgentSlack {
                agent: i,
                log_g_i,
                slack,
                corrected_slack: slack - log_prior_mass / n as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tol = |x: f64| SLACK_TOL * x.abs().max(1.0);
    Ok(DensityComparisonReport {
        log_c1: lc1,
        log_g,
        log_prior_mass,
        passed: agents.iter().all(|s| s.slack >= -tol(s.log_g_i)),
        corrected_passed: agents.iter().all(|s| s.corrected_slack >= -tol(s.log_g_i)),
        agents,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetCellSampling {
    /// Histories drawn from the true rows only.
    TruthProxy,
    /// `θ` drawn from the prior restricted to `B_R`, then a history from its rows.
    ExactMixture,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetCell {
    /// 1-based band level.
    pub band: usize,
    pub cell: usize,
    pub agent: usize,
    pub cell_size: usize,
    pub hits: usize,
    pub empirical: f64,
    pub std_error: f64,
    pub log_bound: f64,
    pub bound: f64,
    pub vacuous: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetCellReport {
    pub k: usize,
    pub trials: usize,
    pub inner_radius: f64,
    pub sampling: NetCellSampling,
    pub cells: Vec<NetCell>,
    pub asserted: usize,
    pub failures: usize,
    pub note: String,
}

impl NetCellReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Monte Carlo frequency of `log(g_F^i / g_{B_R}^i) ≥ −2k c_l` per net cell
/// `F` and agent `i`, with `c_l = r_{l+1} − δ_l − R`, against
/// `C2 exp(−k c_l + d log δ_l)`. Only non-vacuous bounds are asserted.
#[allow(clippy::too_many_arguments)]
pub fn lemma4_mc(
    model: &LikelihoodModel,
    a: &WeightMatrix,
    cov: &HellingerCovering,
    prior: &[f64],
    inner_radius: f64,
    k: usize,
    trials: usize,
    seed: u64,
    sampling: NetCellSampling,
) -> Result<NetCellReport> {
    check_prior(prior, model)?;
    if cov.distances.len() != model.n_hypotheses() || cov.center != model.theta_star() {
        return Err(Error::InvalidArgument("covering was built for a different model".into()));
    }
    if a.n() != model.n_agents() {
        return Err(Error::Dimension("weight matrix does not match the model".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let d = cov
        .dimension
        .ok_or_else(|| Error::InvalidArgument("the continuum check needs a grid covering".into()))?
        as f64;
    let alpha = alpha_lower_bound(model)?;
    let lc2 = log_c2(alpha)?;
    let mut gaps = Vec::with_capacity(cov.bands.len());
    for band in &cov.bands {
        let gap = band.inner_radius - band.delta - inner_radius;
        if !(gap > 0.0) {
            return Err(Error::Positivity { band: band.level, value: gap });
        }
        gaps.push(gap);
    }
    let ball: Vec<usize> = (0..model.n_hypotheses())
        .filter(|&t| cov.distances[t] <= inner_radius)
        .collect();
    let log_ball_mass = log_set_mass(prior, &ball)?;

    // flattened (band, cell) list
    let cells: Vec<(usize, usize, &[usize])> = cov
        .bands
        .iter()
        .enumerate()
        .flat_map(|(b, band)| band.cells.iter().enumerate().map(move |(c, mem)| (b, c, mem.as_slice())))
        .filter(|(_, _, mem)| !mem.is_empty())
        .collect();
    let mut cell_log_mass = Vec::with_capacity(cells.len());
    for (_, _, mem) in &cells {
        cell_log_mass.push(log_set_mass(prior, mem)?);
    }

    let n = model.n_agents();
    let m = model.n_hypotheses();
    let log_prior: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
    let (sampler, mixture) = match sampling {
        NetCellSampling::TruthProxy => (ObservationSampler::truth(model), None),
        NetCellSampling::ExactMixture => {
            let masses: Vec<f64> = ball.iter().map(|&t| prior[t]).collect();
            let total: f64 = masses.iter().sum();
            let probs: Vec<f64> = masses.iter().map(|p| p / total).collect();
            (ObservationSampler::for_hypotheses(model, &ball), Some(CategoricalSampler::new(&probs)))
        }
    };

    let counts = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let theta = match &mixture {
                Some(s) => ball[s.sample(&mut stream(seed, trial, HYPOTHESIS_STREAM))],
                None => model.theta_star(),
            };
            let mut streams = TrialStreams::new(seed, trial, n);
            let mut obs = vec![0; n];
            // x[i][θ] = Σ_t Σ_j [A^{k−t}]_ij log ℓ^j(s_t^j|θ)
            let mut x = vec![vec![0.0; m]; n];
            let mut next = vec![vec![0.0; m]; n];
            for _ in 0..k {
                streams.draw(&sampler, theta, &mut obs);
                for i in 0..n {
                    let row = &mut next[i];
                    row.copy_from_slice(model.log_likelihoods(i, obs[i]));
                    for (j, &w) in a.row(i).iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        for (y, &v) in row.iter_mut().zip(&x[j]) {
                            *y += w * v;
                        }
                    }
                }
                std::mem::swap(&mut x, &mut next);
            }
            let mut hits = vec![0usize; cells.len() * n];
            for (i, xi) in x.iter().enumerate() {
                let log_avg =
                    |set: &[usize]| log_sum_exp_iter(set.iter().map(|&t| log_prior[t] + xi[t]));
                let log_g_ball = log_avg(&ball) - log_ball_mass;
                for (c, (b, _, mem)) in cells.iter().enumerate() {
                    let log_g_cell = log_avg(mem) - cell_log_mass[c];
                    if log_g_cell - log_g_ball >= -2.0 * k as f64 * gaps[*b] {
                        hits[c * n + i] += 1;
                    }
                }
            }
            hits
        })
        .reduce(
            || vec![0usize; cells.len() * n],
            |mut acc, h| {
                acc.iter_mut().zip(h).for_each(|(a, b)| *a += b);
                acc
            },
        );

    let mut out = Vec::with_capacity(cells.len() * n);
    for (c, &(b, cell, mem)) in cells.iter().enumerate() {
        let band = &cov.bands[b];
        let log_bound = lc2 - k as f64 * gaps[b] + d * band.delta.ln();
        let bound = log_bound.exp();
        let vacuous = bound >= 1.0;
        let bb = bound.min(1.0);
        let std_error = (bb * (1.0 - bb) / trials as f64).sqrt();
        for i in 0..n {
            let h = counts[c * n + i];
            let empirical = h as f64 / trials as f64;
            out.push(NetCell {
                band: band.level,
                cell,
                agent: i,
                cell_size: mem.len(),
                hits: h,
                empirical,
                std_error,
                log_bound,
                bound,
                vacuous,
                passed: vacuous || empirical <= bound + 3.0 * std_error,
            });
        }
    }
    let asserted = out.iter().filter(|c| !c.vacuous).count();
    let failures = out.iter().filter(|c| !c.passed).count();
    let note = match sampling {
        NetCellSampling::TruthProxy => {
            "histories drawn from the true rows as a proxy for the B_R mixture".to_string()
        }
        NetCellSampling::ExactMixture => {
            "histories drawn from the prior mixture over B_R".to_string()
        }
    };
    Ok(NetCellReport {
        k,
        trials,
        inner_radius,
        sampling,
        cells: out,
        asserted,
        failures,
        note,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentChain {
    pub agent: usize,
    pub log_mass_out: f64,
    pub log_ratio_sum: f64,
    pub log_prior_free: f64,
    pub log_network_bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailChainReport {
    pub k: usize,
    pub log_c3: f64,
    pub agents: Vec<AgentChain>,
}

impl TailChainReport {
    pub fn holds(&self) -> bool {
        self.agents.iter().all(|a| a.holds)
    }
}

/// The pathwise chain `μ_k^i(Bᶜ) ≤ S_ratio ≤ S_prior ≤ S_network` bounding the belief mass
/// outside a ball:
///
/// - `S_ratio = Σ_{θ∈Bᶜ} Π_j (μ_0^j(θ)/μ_0^j(θ*))^{[A^k]_ij} Π_t Π_j (ℓ^j(s_t^j|θ)/ℓ^j(s_t^j|θ*))^{[A^{k−t}]_ij}`
/// - `S_prior = (1/ε) Σ_{θ∈Bᶜ} Π_t Π_j (ℓ^j(s_t^j|θ)/ℓ^j(s_t^j|θ*))^{[A^{k−t}]_ij}`
/// - `S_network = C3 Σ_{θ∈Bᶜ} Π_t Π_j (ℓ^j(s_t^j|θ)/ℓ^j(s_t^j|θ*))^{1/n}`
///
/// `C3` uses `λ = 1 − η/(4n²)`.
pub fn tail_chain(
    model: &LikelihoodModel,
    a: &WeightMatrix,
    mu0: &BeliefState,
    history: &ObservationRecord,
    k: usize,
    outside: &[usize],
    epsilon: f64,
) -> Result<TailChainReport> {
    check_history(history, model, k)?;
    let n = model.n_agents();
    let star = model.theta_star();
    if mu0.n_agents() != n || mu0.n_hypotheses() != model.n_hypotheses() || a.n() != n {
        return Err(Error::Dimension("beliefs, weights and model disagree in shape".into()));
    }
    if let Some(i) = (0..n).find(|&i| mu0.belief(i, star) < epsilon) {
        return Err(Error::InvalidArgument(format!(
            "agent {i} prior at the true hypothesis is below epsilon = {epsilon}"
        )));
    }
    let alpha = alpha_lower_bound(model)?;
    let lc3 = log_c3(alpha, n, a.lambda_formula(), epsilon)?;
    let uniform = vec![1.0 / n as f64; n];
    let u = history_exponents(model, history, k, |_| uniform.clone());
    let log_network_bound = lc3 + log_sum_exp_iter(outside.iter().map(|&t| u[t] - u[star]));

    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let powers = a.row_powers(i, k);
        let w = history_exponents(model, history, k, |s| powers[s].clone());
        let prior_exp: Vec<f64> = (0..model.n_hypotheses())
            .map(|t| (0..n).map(|j| powers[k][j] * mu0.log_row(j)[t]).sum())
            .collect();
        let log_prior_free = -epsilon.ln() + log_sum_exp_iter(outside.iter().map(|&t| w[t] - w[star]));
        let log_ratio_sum = log_sum_exp_iter(
            outside
                .iter()
                .map(|&t| prior_exp[t] - prior_exp[star] + w[t] - w[star]),
        );
        let post = closed_form(mu0, a, model, history, k, i)?;
        let log_mass_out = log_sum_exp_iter(outside.iter().map(|&t| post[t]));
        let le = |x: f64, y: f64| x <= y + 1e-9 * y.abs().max(1.0);
        agents.push(AgentChain {
            agent: i,
            log_mass_out,
            log_ratio_sum,
            log_prior_free,
            log_network_bound,
            holds: le(log_mass_out, log_ratio_sum) && le(log_ratio_sum, log_prior_free) && le(log_prior_free, log_network_bound),
        });
    }
    Ok(TailChainReport { k, log_c3: lc3, agents })
}
