//! Hypothesis sets, per-agent likelihood models, divergences and coverings.
//!
//! A [`LikelihoodModel`] holds, for every agent `i`, a row-stochastic table
//! `ℓ^i(s | θ)` over that agent's finite observation alphabet. The row of the
//! true hypothesis `θ*` *is* the data distribution `f^i`, so the realizable
//! case holds by construction.

mod covering;
mod divergence;

pub use covering::{
    covering_series, build_hellinger_covering, build_kl_covering, check_assumption3,
    default_hellinger_deltas, default_hellinger_radii, default_kl_radii, kl_ball,
    max_delta_separated, SeriesReport, HellingerBand, HellingerCovering, KlCovering,
    SeriesVerdict,
};
pub use divergence::{gamma, gammas, hellinger_joint, hellinger_single, kl_divergence};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;

/// A probability mass function over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Entries must be finite, nonnegative and sum to one within `1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some((s, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {s} = {p} is not a finite nonnegative number"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "cannot normalize weights with sum {sum}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(s, _)| s)
    }
}

impl<'de> Deserialize<'de> for Distribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(d)?;
        Distribution::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Uniform grid over a bounded box, using cell midpoints as hypotheses.
///
/// Point `j` along an axis with bounds `[lo, hi]` and `m` points sits at
/// `lo + (j + ½)(hi − lo)/m`; every point carries the cell volume as its
/// quadrature weight, so the weights sum to the box volume. Points are indexed
/// row-major with the last axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    bounds: Vec<(f64, f64)>,
    points_per_axis: Vec<usize>,
}

/// On-disk layout of a [`Grid`]: `{d, bounds: [[lo, hi], ...], points_per_axis: [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub bounds: Vec<[f64; 2]>,
    pub points_per_axis: Vec<usize>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        if spec.d != spec.bounds.len() {
            return Err(Error::Dimension(format!(
                "grid d = {} but {} bounds given",
                spec.d,
                spec.bounds.len()
            )));
        }
        Grid::new(
            spec.bounds.iter().map(|b| (b[0], b[1])).collect(),
            spec.points_per_axis,
        )
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec {
            d: g.dimension(),
            bounds: g.bounds.iter().map(|&(lo, hi)| [lo, hi]).collect(),
            points_per_axis: g.points_per_axis,
        }
    }
}

impl Grid {
    pub fn new(bounds: Vec<(f64, f64)>, points_per_axis: Vec<usize>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one axis".into()));
        }
        if bounds.len() != points_per_axis.len() {
            return Err(Error::Dimension(format!(
                "{} axes of bounds but {} point counts",
                bounds.len(),
                points_per_axis.len()
            )));
        }
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis}: bounds [{lo}, {hi}] do not form a nonempty interval"
                )));
            }
        }
        if let Some(axis) = points_per_axis.iter().position(|&m| m == 0) {
            return Err(Error::InvalidArgument(format!("axis {axis} has zero points")));
        }
        Ok(Self {
            bounds,
            points_per_axis,
        })
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.points_per_axis
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / self.points_per_axis[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dimension()).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    pub fn quadrature_weights(&self) -> Vec<f64> {
        vec![self.cell_volume(); self.len()]
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut rem = index;
        let mut coords = vec![0.0; self.dimension()];
        for axis in (0..self.dimension()).rev() {
            let m = self.points_per_axis[axis];
            let j = rem % m;
            rem /= m;
            coords[axis] = self.bounds[axis].0 + (j as f64 + 0.5) * self.spacing(axis);
        }
        coords
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Index of the grid point equal to `coords` (within a small fraction of the spacing).
    pub fn locate(&self, coords: &[f64]) -> Option<usize> {
        if coords.len() != self.dimension() {
            return None;
        }
        let mut index = 0;
        for (axis, &x) in coords.iter().enumerate() {
            let h = self.spacing(axis);
            let pos = (x - self.bounds[axis].0) / h - 0.5;
            let j = pos.round();
            if (pos - j).abs() > 1e-6 || j < 0.0 || j as usize >= self.points_per_axis[axis] {
                return None;
            }
            index = index * self.points_per_axis[axis] + j as usize;
        }
        Some(index)
    }
}

/// The set of hypotheses a model ranges over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HypothesisSpace {
    Finite { count: usize },
    /// The first `truncation` hypotheses of a countable family. Everything past
    /// the truncation is unmodeled, and reports carry the level.
    CountableTruncated { truncation: usize },
    Grid { grid: Grid },
}

impl HypothesisSpace {
    pub fn finite(count: usize) -> Self {
        Self::Finite { count }
    }

    pub fn countable(truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::InvalidArgument("truncation level must be ≥ 1".into()));
        }
        Ok(Self::CountableTruncated { truncation })
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Finite { count } => *count,
            Self::CountableTruncated { truncation } => *truncation,
            Self::Grid { grid } => grid.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn truncation(&self) -> Option<usize> {
        match self {
            Self::CountableTruncated { truncation } => Some(*truncation),
            _ => None,
        }
    }

    pub fn dimension(&self) -> Option<usize> {
        match self {
            Self::Grid { grid } => Some(grid.dimension()),
            _ => None,
        }
    }

    pub fn grid(&self) -> Option<&Grid> {
        match self {
            Self::Grid { grid } => Some(grid),
            _ => None,
        }
    }

    /// Per-hypothesis quadrature weights: cell volumes on grids, ones otherwise.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        match self {
            Self::Grid { grid } => grid.quadrature_weights(),
            _ => vec![1.0; self.len()],
        }
    }

    /// Uniform prior masses (the normalized quadrature measure).
    pub fn uniform_prior(&self) -> Vec<f64> {
        let w = self.quadrature_weights();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

/// Per-agent likelihood tables `ℓ^i(s | θ)` with a designated true hypothesis.
///
/// Serialized as `{n, alphabets: [...], theta_star, tables: [agent][theta][symbol]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct LikelihoodModel {
    tables: Vec<Vec<Distribution>>,
    theta_star: usize,
    // log_columns[i][s][θ] = log ℓ^i(s | θ)
    log_columns: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    alphabets: Vec<usize>,
    theta_star: usize,
    tables: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<ModelFile> for LikelihoodModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.n != file.tables.len() {
            return Err(Error::Dimension(format!(
                "n = {} but {} tables given",
                file.n,
                file.tables.len()
            )));
        }
        if file.alphabets.len() != file.n {
            return Err(Error::Dimension(format!(
                "n = {} but {} alphabet sizes given",
                file.n,
                file.alphabets.len()
            )));
        }
        for (i, table) in file.tables.iter().enumerate() {
            if let Some(row) = table.iter().position(|r| r.len() != file.alphabets[i]) {
                return Err(Error::Dimension(format!(
                    "agent {i}, hypothesis {row}: row length differs from alphabet size {}",
                    file.alphabets[i]
                )));
            }
        }
        LikelihoodModel::new(file.tables, file.theta_star)
    }
}

impl From<LikelihoodModel> for ModelFile {
    fn from(m: LikelihoodModel) -> Self {
        ModelFile {
            n: m.n_agents(),
            alphabets: (0..m.n_agents()).map(|i| m.alphabet_size(i)).collect(),
            theta_star: m.theta_star,
            tables: m
                .tables
                .into_iter()
                .map(|t| t.into_iter().map(|d| d.0).collect())
                .collect(),
        }
    }
}

impl LikelihoodModel {
    /// `tables[i][θ]` is agent `i`'s distribution over its alphabet under `θ`.
    pub fn new(tables: Vec<Vec<Vec<f64>>>, theta_star: usize) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one agent".into()));
        }
        let m = tables[0].len();
        if m == 0 {
            return Err(Error::InvalidArgument("model needs at least one hypothesis".into()));
        }
        if theta_star >= m {
            return Err(Error::InvalidArgument(format!(
                "theta_star = {theta_star} out of range for {m} hypotheses"
            )));
        }
        let mut dists = Vec::with_capacity(tables.len());
        for (i, table) in tables.into_iter().enumerate() {
            if table.len() != m {
                return Err(Error::Dimension(format!(
                    "agent {i} has {} hypotheses, agent 0 has {m}",
                    table.len()
                )));
            }
            let alphabet = table[0].len();
            let mut rows = Vec::with_capacity(m);
            for (theta, row) in table.into_iter().enumerate() {
                if row.len() != alphabet {
                    return Err(Error::Dimension(format!(
                        "agent {i}, hypothesis {theta}: {} symbols, expected {alphabet}",
                        row.len()
                    )));
                }
                rows.push(Distribution::new(row).map_err(|e| {
                    Error::InvalidDistribution(format!("agent {i}, hypothesis {theta}: {e}"))
                })?);
            }
            dists.push(rows);
        }
        Ok(Self::from_distributions(dists, theta_star))
    }

    fn from_distributions(tables: Vec<Vec<Distribution>>, theta_star: usize) -> Self {
        let log_columns = tables
            .iter()
            .map(|rows| {
                let alphabet = rows[0].len();
                (0..alphabet)
                    .map(|s| rows.iter().map(|d| d.0[s].ln()).collect())
                    .collect()
            })
            .collect();
        Self {
            tables,
            theta_star,
            log_columns,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_agents(&self) -> usize {
        self.tables.len()
    }

    pub fn n_hypotheses(&self) -> usize {
        self.tables[0].len()
    }

    pub fn theta_star(&self) -> usize {
        self.theta_star
    }

    pub fn alphabet_size(&self, agent: usize) -> usize {
        self.tables[agent][0].len()
    }

    pub fn row(&self, agent: usize, theta: usize) -> &Distribution {
        &self.tables[agent][theta]
    }

    /// The data distribution `f^i`, i.e. the row of `θ*`.
    pub fn truth(&self, agent: usize) -> &Distribution {
        &self.tables[agent][self.theta_star]
    }

    pub fn likelihood(&self, agent: usize, theta: usize, symbol: usize) -> f64 {
        self.tables[agent][theta].0[symbol]
    }

    /// `log ℓ^i(symbol | θ)` for every `θ`.
    pub fn log_likelihoods(&self, agent: usize, symbol: usize) -> &[f64] {
        &self.log_columns[agent][symbol]
    }

    /// Hypotheses other than `θ*` that no agent can tell apart from `θ*`.
    pub fn unidentifiable(&self) -> Vec<usize> {
        (0..self.n_hypotheses())
            .filter(|&t| t != self.theta_star)
            .filter(|&t| (0..self.n_agents()).all(|i| self.row(i, t) == self.truth(i)))
            .collect()
    }
}

/// Smallest likelihood any hypothesis assigns to a symbol the truth can emit.
///
/// Fails with every offending `(agent, hypothesis, symbol)` when that minimum is zero.
pub fn alpha_lower_bound(model: &LikelihoodModel) -> Result<f64> {
    let mut alpha = f64::INFINITY;
    let mut offenders = Vec::new();
    for i in 0..model.n_agents() {
        for s in model.truth(i).support() {
            for theta in 0..model.n_hypotheses() {
                let l = model.likelihood(i, theta, s);
                if l <= 0.0 {
                    offenders.push((i, theta, s));
                }
                alpha = alpha.min(l);
            }
        }
    }
    if offenders.is_empty() {
        Ok(alpha)
    } else {
        Err(Error::ZeroLikelihood { offenders })
    }
}
