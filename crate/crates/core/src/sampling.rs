//! Counter-based random streams and observation sampling.
//!
//! Every `(trial, agent)` pair owns its own ChaCha stream derived from the
//! root seed, and each step consumes exactly one `f64`, so results do not
//! depend on how trials are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::ObservationRecord;
use crate::hypothesis::LikelihoodModel;

const AGENT_BITS: u32 = 20;
/// Stream slot reserved for drawing hypotheses (exact mixture sampling).
pub const HYPOTHESIS_STREAM: usize = (1 << AGENT_BITS) - 1;

/// The stream for `(trial, agent)` under `root`, positioned at step 0.
pub fn stream(root: u64, trial: u64, agent: usize) -> ChaCha8Rng {
    assert!(agent <= HYPOTHESIS_STREAM, "agent index {agent} exceeds stream capacity");
    assert!(trial < 1 << (64 - AGENT_BITS), "trial index {trial} exceeds stream capacity");
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream((trial << AGENT_BITS) | agent as u64);
    rng
}

/// The stream for `(trial, agent)` positioned at `step` (0-based).
pub fn stream_at(root: u64, trial: u64, agent: usize, step: u64) -> ChaCha8Rng {
    let mut rng = stream(root, trial, agent);
    // one f64 = one u64 = two 32-bit words
    rng.set_word_pos(2 * step as u128);
    rng
}

/// Inverse-CDF sampler over a finite distribution.
#[derive(Debug, Clone)]
pub struct CategoricalSampler {
    cdf: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // close the last symbol with positive mass so rounding never falls off the end
        if let Some(last) = probs.iter().rposition(|&p| p > 0.0) {
            cdf[last..].iter_mut().for_each(|c| *c = 1.0);
        }
        Self { cdf }
    }

    /// Symbol for a uniform draw `u ∈ [0, 1)`.
    pub fn symbol_for(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c <= u)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.symbol_for(rng.gen::<f64>())
    }
}

/// Draws per-agent symbols from the rows of a chosen hypothesis.
#[derive(Debug, Clone)]
pub struct ObservationSampler {
    // samplers[i][θ]; only rows that were requested are materialized
    samplers: Vec<Vec<Option<CategoricalSampler>>>,
}

impl ObservationSampler {
    /// Samplers for the data distributions `f^i`.
    pub fn truth(model: &LikelihoodModel) -> Self {
        Self::for_hypotheses(model, &[model.theta_star()])
    }

    pub fn for_hypotheses(model: &LikelihoodModel, thetas: &[usize]) -> Self {
        let samplers = (0..model.n_agents())
            .map(|i| {
                let mut row = vec![None; model.n_hypotheses()];
                for &t in thetas {
                    row[t] = Some(CategoricalSampler::new(model.row(i, t).probs()));
                }
                row
            })
            .collect();
        Self { samplers }
    }

    pub fn sample<R: Rng>(&self, agent: usize, theta: usize, rng: &mut R) -> usize {
        self.samplers[agent][theta]
            .as_ref()
            .expect("sampler built for this hypothesis")
            .sample(rng)
    }
}

/// Sequential per-agent streams for one trial.
pub struct TrialStreams {
    rngs: Vec<ChaCha8Rng>,
}

impl TrialStreams {
    pub fn new(root: u64, trial: u64, n_agents: usize) -> Self {
        Self {
            rngs: (0..n_agents).map(|i| stream(root, trial, i)).collect(),
        }
    }

    /// Fills `out[i]` with agent `i`'s next symbol under hypothesis `theta`.
    pub fn draw(&mut self, sampler: &ObservationSampler, theta: usize, out: &mut [usize]) {
        for (i, (rng, o)) in self.rngs.iter_mut().zip(out.iter_mut()).enumerate() {
            *o = sampler.sample(i, theta, rng);
        }
    }
}

/// `k` steps of observations from the truth on trial `trial`'s streams.
pub fn sample_history(model: &LikelihoodModel, root: u64, trial: u64, k: usize) -> ObservationRecord {
    let sampler = ObservationSampler::truth(model);
    let mut streams = TrialStreams::new(root, trial, model.n_agents());
    let mut record = ObservationRecord::for_model(model);
    let mut obs = vec![0; model.n_agents()];
    for _ in 0..k {
        streams.draw(&sampler, model.theta_star(), &mut obs);
        record.push(&obs).expect("sampled symbols lie in the alphabet");
    }
    record
}
