//! Experiment configuration: JSON schema, parsing and full validation.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use belieflab::bounds::{
    theorem1_n, theorem2_n, BoundReport, ConcentrationParams, NetCellSampling, DEFAULT_K_MAX,
};
use belieflab::hypothesis::{
    build_hellinger_covering, build_kl_covering, default_hellinger_deltas, default_hellinger_radii,
    default_kl_radii, gammas, HellingerCovering, HypothesisSpace, KlCovering, LikelihoodModel,
};
use belieflab::network::{lazy_metropolis, Graph, WeightMatrix};
use belieflab::scenario::{localization_model, Ball, LocalizationSpec, Scenario, TraceConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub graph: GraphConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub priors: PriorsConfig,
    /// Defaults to the smallest prior entry.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub balls: Vec<BallConfig>,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub rates: Option<RatesConfig>,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
    #[serde(default)]
    pub mc: McConfig,
}

fn default_horizon() -> usize {
    1000
}

/// `"ring(8)"`, or an explicit edge list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GraphConfig {
    Generator(String),
    Edges { n: usize, edges: Vec<(usize, usize)> },
}

/// `"lazy-metropolis"`, or an explicit row-major matrix.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum WeightsConfig {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self::Named("lazy-metropolis".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelConfig {
    /// `tables[agent][theta][symbol]`. `truncation` marks a truncated countable family.
    Tables {
        tables: Vec<Vec<Vec<f64>>>,
        theta_star: usize,
        #[serde(default)]
        truncation: bool,
    },
    Localization { localization: LocalizationSpec },
}

/// `"uniform"`, or one row per agent.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PriorsConfig {
    Named(String),
    Explicit(Vec<Vec<f64>>),
}

impl Default for PriorsConfig {
    fn default() -> Self {
        Self::Named("uniform".into())
    }
}

/// `{"name": "truth", "kl": 0.25}`, `{"name": "b", "hellinger": 0.3}` or
/// `{"name": "s", "members": [0, 4]}`.
#[derive(Debug, Clone, Deserialize)]
pub struct BallConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: BallKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallKind {
    Kl(f64),
    Hellinger(f64),
    Members(Vec<usize>),
}

/// Regression window for the per-hypothesis learning rates.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub k_min: usize,
    pub k_max: usize,
    #[serde(default = "default_min_gamma")]
    pub min_gamma: f64,
}

fn default_min_gamma() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub rho: f64,
    pub sigma: f64,
    pub r: f64,
    /// KL radii `r_1 = r < r_2 < ...` or decreasing Hellinger radii; defaults per model kind.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    /// Inner Hellinger radius `R`; required on grids.
    #[serde(default)]
    pub inner_radius: Option<f64>,
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub k_max: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Failure frequency at `min(N, max_steps)` against `ρ`.
    Concentration,
    /// Pathwise tail-mass chain at the uncapped `N`.
    TailChain,
    /// Tail probability of the averaged log-likelihood ratio (countable models).
    TailProbability,
    /// Agent density against the network density.
    DensityComparison,
    /// Per-cell tail events of the Hellinger nets (grid models).
    NetCells,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Self::Concentration => "concentration",
            Self::TailChain => "tail-chain",
            Self::TailProbability => "tail-probability",
            Self::DensityComparison => "density-comparison",
            Self::NetCells => "net-cells",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Defaults to concentration and tail-chain.
    #[serde(default)]
    pub checks: Option<Vec<Check>>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_chain_trajectories")]
    pub chain_trajectories: usize,
    #[serde(default = "default_tail_k")]
    pub tail_k: Vec<usize>,
    #[serde(default = "default_density_k")]
    pub density_k: usize,
    #[serde(default = "default_density_histories")]
    pub density_histories: usize,
    #[serde(default = "default_cells_k")]
    pub cells_k: usize,
    #[serde(default = "default_cells_sampling")]
    pub cells_sampling: NetCellSampling,
}

fn default_trials() -> usize {
    200
}
fn default_max_steps() -> usize {
    100_000
}
fn default_chain_trajectories() -> usize {
    50
}
fn default_tail_k() -> Vec<usize> {
    vec![20, 50, 100]
}
fn default_density_k() -> usize {
    30
}
fn default_density_histories() -> usize {
    20
}
fn default_cells_k() -> usize {
    20
}
fn default_cells_sampling() -> NetCellSampling {
    NetCellSampling::TruthProxy
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            checks: None,
            max_steps: default_max_steps(),
            chain_trajectories: default_chain_trajectories(),
            tail_k: default_tail_k(),
            density_k: default_density_k(),
            density_histories: default_density_histories(),
            cells_k: default_cells_k(),
            cells_sampling: default_cells_sampling(),
        }
    }
}

impl McConfig {
    pub fn checks(&self) -> Vec<Check> {
        self.checks.clone().unwrap_or_else(|| vec![Check::Concentration, Check::TailChain])
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub horizon: Option<usize>,
}

pub fn load(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse(text: &str) -> Result<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if field == "." {
            anyhow!("{inner}")
        } else {
            anyhow!("field `{field}`: {inner}")
        }
    })
}

pub enum Covering {
    Kl(KlCovering),
    Hellinger(HellingerCovering),
}

pub struct BoundsSetup {
    pub params: ConcentrationParams,
    pub covering: Covering,
    pub report: BoundReport,
    /// The ball whose mass the transient time refers to.
    pub ball: Vec<usize>,
}

/// A config checked end to end and turned into library objects.
pub struct Prepared {
    pub config: Config,
    pub scenario: Scenario,
    pub warnings: Vec<String>,
    pub bounds: Option<BoundsSetup>,
}

impl Prepared {
    pub fn bounds(&self) -> Result<&BoundsSetup> {
        self.bounds.as_ref().ok_or_else(|| anyhow!("config has no `bounds` section"))
    }
}

fn build_graph(g: &GraphConfig) -> Result<Graph> {
    Ok(match g {
        GraphConfig::Generator(spec) => Graph::from_generator(spec)?,
        GraphConfig::Edges { n, edges } => Graph::new(*n, edges.iter().copied())?,
    })
}

fn build_weights(w: &WeightsConfig, graph: &Graph) -> Result<WeightMatrix> {
    Ok(match w {
        WeightsConfig::Named(name) if name == "lazy-metropolis" => lazy_metropolis(graph)?,
        WeightsConfig::Named(name) => bail!("field `weights`: unknown scheme {name:?}, expected \"lazy-metropolis\""),
        WeightsConfig::Matrix(rows) => WeightMatrix::new(rows.clone()).context("field `weights`")?,
    })
}

pub fn prepare(mut config: Config, overrides: &Overrides) -> Result<Prepared> {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(trials) = overrides.trials {
        config.mc.trials = trials;
    }
    if let Some(horizon) = overrides.horizon {
        config.horizon = horizon;
    }
    if config.mc.trials == 0 {
        bail!("field `mc.trials`: must be positive");
    }
    if config.mc.max_steps == 0 {
        bail!("field `mc.max_steps`: must be positive");
    }

    let graph = build_graph(&config.graph).context("field `graph`")?;
    let weights = build_weights(&config.weights, &graph)?;
    let mut warnings = Vec::new();
    let (model, space) = match &config.model {
        ModelConfig::Tables { tables, theta_star, truncation } => {
            let model = LikelihoodModel::new(tables.clone(), *theta_star).context("field `model`")?;
            let m = model.n_hypotheses();
            let space = if *truncation { HypothesisSpace::countable(m)? } else { HypothesisSpace::finite(m) };
            (model, space)
        }
        ModelConfig::Localization { localization } => {
            let loc = localization_model(localization).context("field `model.localization`")?;
            warnings.extend(loc.warnings);
            (loc.model, HypothesisSpace::Grid { grid: localization.grid.clone() })
        }
    };
    let priors = match &config.priors {
        PriorsConfig::Named(name) if name == "uniform" => vec![space.uniform_prior(); graph.n()],
        PriorsConfig::Named(name) => bail!("field `priors`: unknown prior {name:?}, expected \"uniform\""),
        PriorsConfig::Explicit(rows) => rows.clone(),
    };
    let mut scenario = Scenario::new(graph, weights, model, space, priors, config.horizon, config.epsilon)?;
    warnings.extend(scenario.warnings().iter().cloned());
    for ball in &config.balls {
        let b = match &ball.kind {
            BallKind::Kl(r) => Ball::kl(ball.name.clone(), scenario.model(), *r)?,
            BallKind::Hellinger(r) => Ball::hellinger(ball.name.clone(), scenario.model(), *r),
            BallKind::Members(m) => Ball::new(ball.name.clone(), m.clone()),
        };
        scenario = scenario.with_ball(b).context("field `balls`")?;
    }
    if let Some(rates) = &config.rates {
        if rates.k_min >= rates.k_max || rates.k_max > config.horizon {
            bail!("field `rates`: need k_min < k_max <= horizon = {}", config.horizon);
        }
    }
    let bounds = match &config.bounds {
        Some(b) => Some(prepare_bounds(b, &scenario).context("field `bounds`")?),
        None => None,
    };
    Ok(Prepared { config, scenario, warnings, bounds })
}

fn prepare_bounds(b: &BoundsConfig, scenario: &Scenario) -> Result<BoundsSetup> {
    let model = scenario.model();
    let space = scenario.space();
    let k_max = b.k_max.unwrap_or(DEFAULT_K_MAX);
    let mut params = ConcentrationParams {
        rho: b.rho,
        sigma: b.sigma,
        r: b.r,
        alpha: scenario.alpha(),
        epsilon: scenario.epsilon(),
        lambda: scenario.weights().lambda_formula(),
        n: model.n_agents(),
        inner_radius: None,
        dimension: None,
    };
    match space.dimension() {
        None => {
            if b.inner_radius.is_some() || b.deltas.is_some() {
                bail!("inner_radius and deltas apply to grid models only");
            }
            params.validate()?;
            let radii = match &b.radii {
                Some(r) => r.clone(),
                None => {
                    let max_gamma = gammas(model)?.into_iter().fold(0.0, f64::max);
                    default_kl_radii(b.r, max_gamma)?
                }
            };
            let cov = build_kl_covering(model, space, &radii)?;
            let report = theorem1_n(&params, &cov, model, scenario.priors(), k_max)?;
            let ball = cov.inner.clone();
            Ok(BoundsSetup { params, covering: Covering::Kl(cov), report, ball })
        }
        Some(d) => {
            let inner = b.inner_radius.ok_or_else(|| anyhow!("grid models need inner_radius"))?;
            params.inner_radius = Some(inner);
            params.dimension = Some(d);
            params.validate()?;
            let radii = match &b.radii {
                Some(r) => r.clone(),
                None => default_hellinger_radii(b.r)?,
            };
            let deltas = match &b.deltas {
                Some(d) => d.clone(),
                None => default_hellinger_deltas(&radii, inner),
            };
            let cov = build_hellinger_covering(model, space, b.r, &radii, &deltas)?;
            let report = theorem2_n(&params, &cov, k_max)?;
            let ball = Ball::hellinger("ball", model, b.r).members;
            Ok(BoundsSetup { params, covering: Covering::Hellinger(cov), report, ball })
        }
    }
}
