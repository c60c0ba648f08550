//! Log-space belief dynamics: geometric averaging of neighbours' beliefs
//! followed by a local Bayes step.
//!
//! Beliefs are stored as point masses. On a grid the mass at `θ` is the
//! density times the quadrature weight `w_θ`; because every row of `A` sums to
//! one, `Σ_j a_ij (log p_j + log w) = Σ_j a_ij log p_j + log w`, so the weights
//! drop out of the update and masses can be propagated directly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypothesis::LikelihoodModel;
use crate::network::WeightMatrix;
use crate::numeric::{log_sum_exp, total_variation};

const PRIOR_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    n: usize,
    m: usize,
    // row-major [agent][θ]
    log_beliefs: Vec<f64>,
    k: usize,
}

impl BeliefState {
    /// Per-agent prior masses; every entry must be positive and each row must
    /// sum to one within `1e-9`.
    pub fn from_priors(priors: &[Vec<f64>]) -> Result<Self> {
        let n = priors.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no agents".into()));
        }
        let m = priors[0].len();
        let mut log_beliefs = Vec::with_capacity(n * m);
        for (i, row) in priors.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension(format!(
                    "agent {i} prior has {} entries, expected {m}",
                    row.len()
                )));
            }
            if let Some(t) = row.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::InvalidDistribution(format!(
                    "agent {i}: prior mass at hypothesis {t} is {}, priors must be strictly positive",
                    row[t]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PRIOR_SUM_TOLERANCE {
                return Err(Error::InvalidDistribution(format!(
                    "agent {i}: prior sums to {sum}"
                )));
            }
            log_beliefs.extend(row.iter().map(|p| p.ln()));
        }
        Ok(Self {
            n,
            m,
            log_beliefs,
            k: 0,
        })
    }

    /// Every agent starts from the same prior.
    pub fn shared(n: usize, prior: &[f64]) -> Result<Self> {
        Self::from_priors(&vec![prior.to_vec(); n])
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            log_beliefs: vec![-(m as f64).ln(); n * m],
            k: 0,
        }
    }

    /// Builds masses from densities with respect to quadrature weights.
    pub fn from_densities(densities: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        let masses: Vec<Vec<f64>> = densities
            .iter()
            .map(|row| {
                if row.len() != weights.len() {
                    return Err(Error::Dimension(format!(
                        "{} densities but {} weights",
                        row.len(),
                        weights.len()
                    )));
                }
                Ok(row.iter().zip(weights).map(|(p, w)| p * w).collect())
            })
            .collect::<Result<_>>()?;
        Self::from_priors(&masses)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn n_hypotheses(&self) -> usize {
        self.m
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn log_row(&self, agent: usize) -> &[f64] {
        &self.log_beliefs[agent * self.m..(agent + 1) * self.m]
    }

    pub fn belief_row(&self, agent: usize) -> Vec<f64> {
        self.log_row(agent).iter().map(|x| x.exp()).collect()
    }

    pub fn belief(&self, agent: usize, theta: usize) -> f64 {
        self.log_beliefs[agent * self.m + theta].exp()
    }

    /// Largest `|log Σ_θ μ^i(θ)|` over agents.
    pub fn normalization_drift(&self) -> f64 {
        (0..self.n)
            .map(|i| log_sum_exp(self.log_row(i)).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest belief any agent holds, used for the prior floor check.
    pub fn min_belief(&self) -> f64 {
        self.log_beliefs
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .exp()
    }
}

/// Symbols observed by every agent at every step; step `t` (1-based) is `at(t − 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObservationRecord {
    alphabets: Vec<usize>,
    symbols: Vec<usize>,
}

impl ObservationRecord {
    pub fn new(alphabets: Vec<usize>) -> Self {
        Self {
            alphabets,
            symbols: Vec::new(),
        }
    }

    pub fn for_model(model: &LikelihoodModel) -> Self {
        Self::new((0..model.n_agents()).map(|i| model.alphabet_size(i)).collect())
    }

    pub fn push(&mut self, obs: &[usize]) -> Result<()> {
        check_observation(&self.alphabets, obs)?;
        self.symbols.extend_from_slice(obs);
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.alphabets.len()
    }

    pub fn len(&self) -> usize {
        if self.alphabets.is_empty() {
            0
        } else {
            self.symbols.len() / self.alphabets.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn at(&self, t: usize) -> &[usize] {
        let n = self.alphabets.len();
        &self.symbols[t * n..(t + 1) * n]
    }
}

fn check_observation(alphabets: &[usize], obs: &[usize]) -> Result<()> {
    if obs.len() != alphabets.len() {
        return Err(Error::Dimension(format!(
            "{} symbols for {} agents",
            obs.len(),
            alphabets.len()
        )));
    }
    if let Some(i) = (0..obs.len()).find(|&i| obs[i] >= alphabets[i]) {
        return Err(Error::InvalidArgument(format!(
            "agent {i} observed symbol {} outside its alphabet of size {}",
            obs[i], alphabets[i]
        )));
    }
    Ok(())
}

fn check_shapes(state: &BeliefState, a: &WeightMatrix, model: &LikelihoodModel) -> Result<()> {
    if a.n() != state.n || model.n_agents() != state.n {
        return Err(Error::Dimension(format!(
            "state has {} agents, weights {}, model {}",
            state.n,
            a.n(),
            model.n_agents()
        )));
    }
    if model.n_hypotheses() != state.m {
        return Err(Error::Dimension(format!(
            "state has {} hypotheses, model {}",
            state.m,
            model.n_hypotheses()
        )));
    }
    Ok(())
}

/// One update: `log μ_k^i = Σ_j a_ij log μ_{k−1}^j + log ℓ^i(s^i|·) − log Z`.
pub fn step(
    state: &BeliefState,
    a: &WeightMatrix,
    model: &LikelihoodModel,
    obs: &[usize],
) -> Result<BeliefState> {
    let mut out = state.clone();
    step_into(state, a, model, obs, &mut out)?;
    Ok(out)
}

/// [`step`] writing into a preallocated state of the same shape.
pub fn step_into(
    state: &BeliefState,
    a: &WeightMatrix,
    model: &LikelihoodModel,
    obs: &[usize],
    out: &mut BeliefState,
) -> Result<()> {
    check_shapes(state, a, model)?;
    let alphabets: Vec<usize> = (0..state.n).map(|i| model.alphabet_size(i)).collect();
    check_observation(&alphabets, obs)?;
    let (n, m) = (state.n, state.m);
    out.n = n;
    out.m = m;
    out.log_beliefs.resize(n * m, 0.0);
    for i in 0..n {
        let row = &mut out.log_beliefs[i * m..(i + 1) * m];
        row.copy_from_slice(model.log_likelihoods(i, obs[i]));
        for (j, &w) in a.row(i).iter().enumerate() {
            // zero weights would turn −∞ beliefs into NaN
            if w == 0.0 {
                continue;
            }
            for (r, &lb) in row.iter_mut().zip(state.log_row(j)) {
                *r += w * lb;
            }
        }
        let z = log_sum_exp(row);
        if z == f64::NEG_INFINITY {
            return Err(Error::DegenerateLikelihood {
                agent: i,
                symbol: obs[i],
            });
        }
        row.iter_mut().for_each(|r| *r -= z);
    }
    out.k = state.k + 1;
    Ok(())
}

/// Log-beliefs of agent `i` after `k` steps written directly in terms of the
/// priors and the history:
/// `Σ_j [A^k]_ij log μ_0^j + Σ_{t=1..k} Σ_j [A^{k−t}]_ij log ℓ^j(s_t^j|·)`, normalized.
pub fn closed_form(
    mu0: &BeliefState,
    a: &WeightMatrix,
    model: &LikelihoodModel,
    history: &ObservationRecord,
    k: usize,
    i: usize,
) -> Result<Vec<f64>> {
    check_shapes(mu0, a, model)?;
    if history.len() < k {
        return Err(Error::InvalidArgument(format!(
            "history has {} steps, {k} requested",
            history.len()
        )));
    }
    let powers = a.row_powers(i, k);
    let m = mu0.m;
    let mut acc = vec![0.0; m];
    accumulate(&mut acc, &powers[k], |j| mu0.log_row(j));
    for t in 1..=k {
        let obs = history.at(t - 1);
        accumulate(&mut acc, &powers[k - t], |j| model.log_likelihoods(j, obs[j]));
    }
    let z = log_sum_exp(&acc);
    if z == f64::NEG_INFINITY {
        return Err(Error::DegenerateLikelihood {
            agent: i,
            symbol: history.at(k.saturating_sub(1))[i],
        });
    }
    acc.iter_mut().for_each(|x| *x -= z);
    Ok(acc)
}

// acc += Σ_j w_j rows(j), skipping zero weights
fn accumulate<'a>(acc: &mut [f64], weights: &[f64], rows: impl Fn(usize) -> &'a [f64]) {
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (x, &v) in acc.iter_mut().zip(rows(j)) {
            *x += w * v;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MirrorSolution {
    pub belief: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

const MIRROR_STEP: f64 = 0.5;
const MIRROR_MAX_ITERATIONS: usize = 50_000;
const MIRROR_TOLERANCE: f64 = 1e-12;

/// Minimizes `G(π) = E_π[−log ℓ^i(s^i|·)] + Σ_j a_ij D_KL(π ‖ μ_{k−1}^j)` over
/// the simplex by exponentiated gradient, independently of [`step`].
pub fn mirror_oracle_step(
    state: &BeliefState,
    a: &WeightMatrix,
    model: &LikelihoodModel,
    obs: &[usize],
    i: usize,
) -> Result<MirrorSolution> {
    check_shapes(state, a, model)?;
    let m = state.m;
    let log_lik = model.log_likelihoods(i, obs[i]);
    let neighbours: Vec<(f64, &[f64])> = a
        .row(i)
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(j, &w)| (w, state.log_row(j)))
        .collect();

    let objective = |log_pi: &[f64]| -> f64 {
        let mut g = 0.0;
        for t in 0..m {
            let p = log_pi[t].exp();
            if p == 0.0 {
                continue;
            }
            g -= p * log_lik[t];
            for &(w, log_mu) in &neighbours {
                g += w * p * (log_pi[t] - log_mu[t]);
            }
        }
        g
    };

    let mut log_pi = vec![-(m as f64).ln(); m];
    let mut current = objective(&log_pi);
    let mut grad = vec![0.0; m];
    for iteration in 1..=MIRROR_MAX_ITERATIONS {
        for t in 0..m {
            let mut gt = -log_lik[t];
            for &(w, log_mu) in &neighbours {
                gt += w * (log_pi[t] + 1.0 - log_mu[t]);
            }
            grad[t] = gt;
        }
        for t in 0..m {
            log_pi[t] -= MIRROR_STEP * grad[t];
        }
        let z = log_sum_exp(&log_pi);
        log_pi.iter_mut().for_each(|x| *x -= z);
        let next = objective(&log_pi);
        let decrease = current - next;
        current = next;
        if decrease.abs() < MIRROR_TOLERANCE {
            return Ok(MirrorSolution {
                belief: log_pi.iter().map(|x| x.exp()).collect(),
                objective: current,
                iterations: iteration,
            });
        }
    }
    Err(Error::OracleNonConvergence {
        iterations: MIRROR_MAX_ITERATIONS,
    })
}

/// `μ^i(set)`; indices outside the hypothesis range are an error.
pub fn belief_mass(state: &BeliefState, agent: usize, set: &[usize]) -> Result<f64> {
    if let Some(&t) = set.iter().find(|&&t| t >= state.m) {
        return Err(Error::InvalidArgument(format!(
            "hypothesis {t} out of range for {} hypotheses",
            state.m
        )));
    }
    let row = state.log_row(agent);
    Ok(set.iter().map(|&t| row[t].exp()).sum::<f64>().min(1.0))
}

/// Largest total-variation distance between any two agents' beliefs.
pub fn consensus_gap(state: &BeliefState) -> f64 {
    let rows: Vec<Vec<f64>> = (0..state.n).map(|i| state.belief_row(i)).collect();
    let mut gap: f64 = 0.0;
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            gap = gap.max(total_variation(&rows[a], &rows[b]));
        }
    }
    gap
}

/// Most believed hypothesis for an agent, lowest index on ties.
pub fn argmax(state: &BeliefState, agent: usize) -> usize {
    let row = state.log_row(agent);
    let mut best = 0;
    for t in 1..row.len() {
        if row[t] > row[best] {
            best = t;
        }
    }
    best
}
