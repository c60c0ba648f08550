//! Experiment scenarios, simulation runs and empirical concentration measures.

mod localization;

pub use localization::{
    build_localization, localization_model, Localization, LocalizationSpec, Noise, DEFAULT_FLOOR,
};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{belief_mass, consensus_gap, step_into, BeliefState};
use crate::error::{Error, Result};
use crate::hypothesis::{alpha_lower_bound, hellinger_joint, kl_ball, HypothesisSpace, LikelihoodModel};
use crate::network::{validate_weights, Graph, WeightMatrix};
use crate::numeric::{log_sum_exp_iter, ols_slope};
use crate::sampling::{ObservationSampler, TrialStreams};

/// A named set of hypotheses whose belief mass is tracked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ball {
    pub name: String,
    pub members: Vec<usize>,
}

impl Ball {
    pub fn new(name: impl Into<String>, members: Vec<usize>) -> Self {
        Self { name: name.into(), members }
    }

    /// `{θ : γ(θ) ≤ r}`.
    pub fn kl(name: impl Into<String>, model: &LikelihoodModel, r: f64) -> Result<Self> {
        Ok(Self::new(name, kl_ball(model, r)?))
    }

    /// `{θ : h̄(θ*, θ) ≤ r}`.
    pub fn hellinger(name: impl Into<String>, model: &LikelihoodModel, r: f64) -> Self {
        let star = model.theta_star();
        let members = (0..model.n_hypotheses())
            .filter(|&t| hellinger_joint(model, star, t) <= r)
            .collect();
        Self::new(name, members)
    }
}

/// A validated network, model and prior assignment.
#[derive(Debug, Clone)]
pub struct Scenario {
    graph: Graph,
    weights: WeightMatrix,
    model: LikelihoodModel,
    space: HypothesisSpace,
    priors: Vec<Vec<f64>>,
    horizon: usize,
    epsilon: f64,
    alpha: f64,
    balls: Vec<Ball>,
    pub(crate) warnings: Vec<String>,
}

impl Scenario {
    /// Checks the weights against the graph, the likelihood lower bound and
    /// the priors. `epsilon` defaults to the smallest prior entry; an explicit
    /// value must not exceed it.
    pub fn new(
        graph: Graph,
        weights: WeightMatrix,
        model: LikelihoodModel,
        space: HypothesisSpace,
        priors: Vec<Vec<f64>>,
        horizon: usize,
        epsilon: Option<f64>,
    ) -> Result<Self> {
        let validation = validate_weights(&weights, &graph)?;
        if !validation.all_passed() {
            return Err(Error::InvalidArgument(format!(
                "weight matrix rejected: {}",
                validation.failures().join("; ")
            )));
        }
        if model.n_agents() != graph.n() {
            return Err(Error::Dimension(format!(
                "model has {} agents, graph has {}",
                model.n_agents(),
                graph.n()
            )));
        }
        if space.len() != model.n_hypotheses() {
            return Err(Error::Dimension(format!(
                "hypothesis space has {} points, model has {}",
                space.len(),
                model.n_hypotheses()
            )));
        }
        let alpha = alpha_lower_bound(&model)?;
        // validates shape, positivity and normalization
        BeliefState::from_priors(&priors)?;
        if priors.len() != graph.n() || priors[0].len() != model.n_hypotheses() {
            return Err(Error::Dimension("priors must be one row per agent over every hypothesis".into()));
        }
        let min_prior = priors.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let epsilon = match epsilon {
            None => min_prior,
            Some(e) if e > 0.0 && e <= min_prior => e,
            Some(e) => {
                return Err(Error::InvalidArgument(format!(
                    "epsilon = {e} must lie in (0, {min_prior}], the smallest prior entry"
                )))
            }
        };
        let mut warnings = Vec::new();
        let same = model.unidentifiable();
        if !same.is_empty() {
            warnings.push(format!("{} hypotheses are observationally equivalent to the truth", same.len()));
        }
        Ok(Self {
            graph,
            weights,
            model,
            space,
            priors,
            horizon,
            epsilon,
            alpha,
            balls: Vec::new(),
            warnings,
        })
    }

    pub fn with_ball(mut self, ball: Ball) -> Result<Self> {
        if self.balls.iter().any(|b| b.name == ball.name) {
            return Err(Error::InvalidArgument(format!("duplicate ball name {:?}", ball.name)));
        }
        if let Some(&t) = ball.members.iter().find(|&&t| t >= self.model.n_hypotheses()) {
            return Err(Error::InvalidArgument(format!("ball {:?} contains hypothesis {t} out of range", ball.name)));
        }
        self.balls.push(ball);
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn model(&self) -> &LikelihoodModel {
        &self.model
    }

    pub fn space(&self) -> &HypothesisSpace {
        &self.space
    }

    pub fn priors(&self) -> &[Vec<f64>] {
        &self.priors
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn initial_state(&self) -> BeliefState {
        BeliefState::from_priors(&self.priors).expect("priors validated at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Every snapshot is kept for `k ≤ full_until`.
    pub full_until: usize,
    /// Afterwards only every `thin_every`-th.
    pub thin_every: usize,
    pub keep_observations: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { full_until: 1000, thin_every: 10, keep_observations: true }
    }
}

impl TraceConfig {
    fn keeps(&self, k: usize) -> bool {
        k <= self.full_until || k.is_multiple_of(self.thin_every.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    /// `log_beliefs[i][θ]`.
    pub log_beliefs: Vec<Vec<f64>>,
}

/// One simulation run. Per-step series are indexed by `k = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub theta_star: usize,
    pub ball_names: Vec<String>,
    pub snapshots: Vec<Snapshot>,
    /// `observations[t]` holds the symbols of step `t + 1`.
    pub observations: Vec<Vec<usize>>,
    pub consensus_gap: Vec<f64>,
    /// `ball_mass[b][k][i]`.
    pub ball_mass: Vec<Vec<Vec<f64>>>,
    /// Largest `|log Σ_θ μ_k^i(θ)|` seen.
    pub max_drift: f64,
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.consensus_gap.len() - 1
    }

    pub fn ball_index(&self, name: &str) -> Option<usize> {
        self.ball_names.iter().position(|b| b == name)
    }

    pub fn min_ball_mass(&self, ball: usize, k: usize) -> f64 {
        self.ball_mass[ball][k].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("trace holds the initial state")
    }
}

fn snapshot(state: &BeliefState) -> Snapshot {
    Snapshot {
        k: state.step_index(),
        log_beliefs: (0..state.n_agents()).map(|i| state.log_row(i).to_vec()).collect(),
    }
}

fn record_metrics(trace: &mut Trace, state: &BeliefState, balls: &[Ball]) -> Result<()> {
    trace.consensus_gap.push(consensus_gap(state));
    for (b, ball) in balls.iter().enumerate() {
        let masses = (0..state.n_agents())
            .map(|i| belief_mass(state, i, &ball.members))
            .collect::<Result<Vec<_>>>()?;
        trace.ball_mass[b].push(masses);
    }
    trace.max_drift = trace.max_drift.max(state.normalization_drift());
    Ok(())
}

/// Simulates `scenario.horizon()` steps with observations drawn from the
/// truth on trial 0 of `seed`'s streams.
pub fn run(scenario: &Scenario, seed: u64, config: &TraceConfig) -> Result<Trace> {
    let model = &scenario.model;
    let n = model.n_agents();
    let mut state = scenario.initial_state();
    let mut next = state.clone();
    let mut trace = Trace {
        theta_star: model.theta_star(),
        ball_names: scenario.balls.iter().map(|b| b.name.clone()).collect(),
        snapshots: vec![snapshot(&state)],
        observations: Vec::new(),
        consensus_gap: Vec::with_capacity(scenario.horizon + 1),
        ball_mass: vec![Vec::with_capacity(scenario.horizon + 1); scenario.balls.len()],
        max_drift: 0.0,
    };
    record_metrics(&mut trace, &state, &scenario.balls)?;
    let sampler = ObservationSampler::truth(model);
    let mut streams = TrialStreams::new(seed, 0, n);
    let mut obs = vec![0; n];
    for k in 1..=scenario.horizon {
        streams.draw(&sampler, model.theta_star(), &mut obs);
        step_into(&state, &scenario.weights, model, &obs, &mut next)?;
        std::mem::swap(&mut state, &mut next);
        if config.keep_observations {
            trace.observations.push(obs.clone());
        }
        if config.keeps(k) {
            trace.snapshots.push(snapshot(&state));
        }
        record_metrics(&mut trace, &state, &scenario.balls)?;
    }
    Ok(trace)
}

/// First `k` from which every agent keeps at least `1 − σ` mass on the ball
/// through the end of the trace.
pub fn concentration_time(trace: &Trace, ball: usize, sigma: f64) -> Option<usize> {
    let series = &trace.ball_mass[ball];
    let mut first = None;
    for k in (0..series.len()).rev() {
        if series[k].iter().all(|&m| m >= 1.0 - sigma) {
            first = Some(k);
        } else {
            break;
        }
    }
    first
}

#[derive(Debug, Clone, Serialize)]
pub struct RateSlope {
    pub theta: usize,
    /// Mean of the per-agent slopes.
    pub slope: f64,
    pub per_agent: Vec<f64>,
    pub k_lo: usize,
    pub k_hi: usize,
    pub points: usize,
    /// The window was cut short where a belief was no longer finite.
    pub shrunk: bool,
}

/// Least-squares slope of `log μ_k^i(θ)` against `k` over the stored snapshots
/// in `[k_min, k_max]`.
pub fn rate_slope(trace: &Trace, theta: usize, k_min: usize, k_max: usize) -> Result<RateSlope> {
    if theta == trace.theta_star {
        return Err(Error::InvalidArgument("rate is defined for wrong hypotheses only".into()));
    }
    if k_min >= k_max {
        return Err(Error::InvalidArgument(format!("empty window [{k_min}, {k_max}]")));
    }
    let in_window: Vec<&Snapshot> =
        trace.snapshots.iter().filter(|s| s.k >= k_min && s.k <= k_max).collect();
    let finite = in_window
        .iter()
        .take_while(|s| s.log_beliefs.iter().all(|row| row.get(theta).is_some_and(|v| v.is_finite())))
        .count();
    if in_window.first().is_some_and(|s| theta >= s.log_beliefs[0].len()) {
        return Err(Error::InvalidArgument(format!("hypothesis {theta} out of range")));
    }
    let used = &in_window[..finite];
    if used.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fewer than two usable snapshots in [{k_min}, {k_max}]"
        )));
    }
    let ks: Vec<f64> = used.iter().map(|s| s.k as f64).collect();
    let n = used[0].log_beliefs.len();
    let per_agent: Vec<f64> = (0..n)
        .map(|i| {
            let ys: Vec<f64> = used.iter().map(|s| s.log_beliefs[i][theta]).collect();
            ols_slope(&ks, &ys).expect("distinct k values")
        })
        .collect();
    Ok(RateSlope {
        theta,
        slope: per_agent.iter().sum::<f64>() / n as f64,
        per_agent,
        k_lo: used[0].k,
        k_hi: used[used.len() - 1].k,
        points: used.len(),
        shrunk: finite < in_window.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct McConcentration {
    pub steps: usize,
    pub trials: usize,
    pub sigma: f64,
    pub failures: usize,
    pub failure_frequency: f64,
    /// Smallest ball mass over agents at `steps`, per trial.
    pub min_masses: Vec<f64>,
}

impl McConcentration {
    /// Binomial standard error of a frequency with true value `p`.
    pub fn std_error_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Runs `trials` independent trajectories for `steps` steps and counts those
/// where some agent holds less than `1 − σ` mass on `ball` at the end.
/// Trial `t` uses streams `(seed, t)`; results are in trial order.
pub fn mc_concentration(
    scenario: &Scenario,
    ball: &[usize],
    sigma: f64,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<McConcentration> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let model = &scenario.model;
    if let Some(&t) = ball.iter().find(|&&t| t >= model.n_hypotheses()) {
        return Err(Error::InvalidArgument(format!("hypothesis {t} out of range")));
    }
    let n = model.n_agents();
    let sampler = ObservationSampler::truth(model);
    let min_masses = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let mut state = scenario.initial_state();
            let mut next = state.clone();
            let mut streams = TrialStreams::new(seed, trial, n);
            let mut obs = vec![0; n];
            for _ in 0..steps {
                streams.draw(&sampler, model.theta_star(), &mut obs);
                step_into(&state, &scenario.weights, model, &obs, &mut next)?;
                std::mem::swap(&mut state, &mut next);
            }
            Ok((0..n)
                .map(|i| log_sum_exp_iter(ball.iter().map(|&t| state.log_row(i)[t])).exp())
                .fold(f64::INFINITY, f64::min))
        })
        .collect::<Result<Vec<f64>>>()?;
    let failures = min_masses.iter().filter(|&&m| m < 1.0 - sigma).count();
    Ok(McConcentration {
        steps,
        trials,
        sigma,
        failures,
        failure_frequency: failures as f64 / trials as f64,
        min_masses,
    })
}

/// `k,agent,theta,belief` rows for every stored snapshot, beliefs in linear scale.
pub fn write_trace_csv<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "agent", "theta", "belief"])?;
    for snap in &trace.snapshots {
        for (i, row) in snap.log_beliefs.iter().enumerate() {
            for (t, lb) in row.iter().enumerate() {
                w.write_record(&[snap.k.to_string(), i.to_string(), t.to_string(), lb.exp().to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-step `k,consensus_gap,mass_<ball>...`; each mass is the minimum over agents.
pub fn write_summary_csv<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string(), "consensus_gap".to_string()];
    header.extend(trace.ball_names.iter().map(|b| format!("mass_{b}")));
    w.write_record(&header)?;
    for (k, gap) in trace.consensus_gap.iter().enumerate() {
        let mut row = vec![k.to_string(), gap.to_string()];
        row.extend((0..trace.ball_names.len()).map(|b| trace.min_ball_mass(b, k).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
