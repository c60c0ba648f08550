use serde::{Deserialize, Serialize};

use super::{Ball, Scenario};
use crate::error::{Error, Result};
use crate::hypothesis::{Grid, HypothesisSpace, LikelihoodModel};
use crate::network::{lazy_metropolis, Graph};

pub const DEFAULT_FLOOR: f64 = 1e-4;

/// Additive measurement noise with finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub offsets: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Noise {
    pub fn new(offsets: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let noise = Self { offsets, probs };
        noise.validate()?;
        Ok(noise)
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.is_empty() || self.offsets.len() != self.probs.len() {
            return Err(Error::InvalidArgument(
                "noise needs matching, nonempty offset and probability lists".into(),
            ));
        }
        if self.offsets.iter().any(|x| !x.is_finite()) || self.probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidArgument("noise offsets must be finite and probabilities nonnegative".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("noise probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn none() -> Self {
        Self { offsets: vec![0.0], probs: vec![1.0] }
    }

    pub fn symmetric_two_point(a: f64) -> Self {
        Self { offsets: vec![-a, a], probs: vec![0.5, 0.5] }
    }

    /// Gaussian weights on `0, ±step, ±2·step, …` up to `half_width`, renormalized.
    pub fn discretized_gaussian(sd: f64, step: f64, half_width: f64) -> Result<Self> {
        if !(sd > 0.0 && step > 0.0 && half_width >= 0.0) {
            return Err(Error::InvalidArgument("sd and step must be positive".into()));
        }
        let half = (half_width / step + 1e-9).floor() as i64;
        let offsets: Vec<f64> = (-half..=half).map(|j| j as f64 * step).collect();
        let weights: Vec<f64> = offsets.iter().map(|x| (-0.5 * (x / sd).powi(2)).exp()).collect();
        let total: f64 = weights.iter().sum();
        Self::new(offsets, weights.iter().map(|w| w / total).collect())
    }
}

/// Agents measuring their distance to a source on a 2-d grid, with additive
/// noise and quantization into bins `[b·w, (b+1)·w)`. Negative readings clamp to 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationSpec {
    pub positions: Vec<[f64; 2]>,
    pub grid: Grid,
    pub source: [f64; 2],
    pub noise: Noise,
    pub bin_width: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

#[derive(Debug, Clone)]
pub struct Localization {
    pub model: LikelihoodModel,
    /// Bin index of each agent's symbol 0.
    pub first_bin: Vec<i64>,
    pub warnings: Vec<String>,
}

fn quantize(value: f64, width: f64) -> i64 {
    (value.max(0.0) / width).floor() as i64
}

/// Likelihood tables induced by a localization setup.
pub fn localization_model(spec: &LocalizationSpec) -> Result<Localization> {
    spec.noise.validate()?;
    if !(spec.bin_width > 0.0 && spec.bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width {} must be positive", spec.bin_width)));
    }
    if !(spec.floor >= 0.0 && spec.floor.is_finite()) {
        return Err(Error::InvalidArgument(format!("floor {} must be nonnegative", spec.floor)));
    }
    if spec.grid.dimension() != 2 {
        return Err(Error::InvalidArgument("localization needs a 2-d grid".into()));
    }
    if spec.positions.is_empty() {
        return Err(Error::InvalidArgument("no agent positions".into()));
    }
    let theta_star = spec.grid.locate(&spec.source).ok_or_else(|| {
        Error::InvalidArgument(format!("source {:?} is not a grid point", spec.source))
    })?;
    let points = spec.grid.points();
    let mut tables = Vec::with_capacity(spec.positions.len());
    let mut first_bin = Vec::with_capacity(spec.positions.len());
    for x in &spec.positions {
        let bins: Vec<Vec<i64>> = points
            .iter()
            .map(|p| {
                let dist = ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)).sqrt();
                spec.noise.offsets.iter().map(|w| quantize(dist + w, spec.bin_width)).collect()
            })
            .collect();
        let lo = *bins.iter().flatten().min().expect("nonempty grid");
        let hi = *bins.iter().flatten().max().expect("nonempty grid");
        let size = (hi - lo + 1) as usize;
        let norm = 1.0 + spec.floor * size as f64;
        let rows = bins
            .iter()
            .map(|row_bins| {
                let mut row = vec![spec.floor; size];
                for (b, p) in row_bins.iter().zip(&spec.noise.probs) {
                    row[(b - lo) as usize] += p;
                }
                row.iter_mut().for_each(|v| *v /= norm);
                row
            })
            .collect();
        tables.push(rows);
        first_bin.push(lo);
    }
    let model = LikelihoodModel::new(tables, theta_star)?;
    let mut warnings = Vec::new();
    let same = model.unidentifiable();
    if !same.is_empty() {
        warnings.push(format!(
            "{} grid points are indistinguishable from the source for every agent (first: {})",
            same.len(),
            same[0]
        ));
    }
    Ok(Localization { model, first_bin, warnings })
}

/// A localization scenario on `graph` with lazy Metropolis weights and uniform priors.
pub fn build_localization(spec: &LocalizationSpec, graph: Graph, horizon: usize) -> Result<Scenario> {
    if graph.n() != spec.positions.len() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes but {} agent positions were given",
            graph.n(),
            spec.positions.len()
        )));
    }
    let loc = localization_model(spec)?;
    let weights = lazy_metropolis(&graph)?;
    let space = HypothesisSpace::Grid { grid: spec.grid.clone() };
    let prior = space.uniform_prior();
    let n = graph.n();
    let scenario = Scenario::new(graph, weights, loc.model, space, vec![prior; n], horizon, None)?;
    let star = scenario.model().theta_star();
    let mut scenario = scenario.with_ball(Ball::new("source", vec![star]))?;
    scenario.warnings.extend(loc.warnings);
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::gamma;

    fn line_spec(noise: Noise, floor: f64) -> LocalizationSpec {
        LocalizationSpec {
            positions: vec![[0.0, 0.0]],
            // cell centers (1, 0) and (2, 0)
            grid: Grid::new(vec![(0.5, 2.5), (-0.5, 0.5)], vec![2, 1]).unwrap(),
            source: [1.0, 0.0],
            noise,
            bin_width: 0.5,
            floor,
        }
    }

    #[test]
    fn two_candidates_hand_enumeration() {
        let loc = localization_model(&line_spec(Noise::symmetric_two_point(0.1), 0.0)).unwrap();
        // readings 0.9, 1.1 | 1.9, 2.1 fall in bins 1, 2 | 3, 4
        assert_eq!(loc.first_bin, vec![1]);
        assert_eq!(loc.model.row(0, 0).probs(), &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(loc.model.row(0, 1).probs(), &[0.0, 0.0, 0.5, 0.5]);

        let floored = localization_model(&line_spec(Noise::symmetric_two_point(0.1), 1e-4)).unwrap();
        assert!(gamma(&floored.model, 1).unwrap() > 0.0);
        let z = 1.0 + 4e-4;
        assert!((floored.model.likelihood(0, 1, 0) - 1e-4 / z).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_needs_floor() {
        let mut spec = line_spec(Noise::none(), 0.0);
        spec.bin_width = 10.0;
        let g = Graph::new(1, []).unwrap();
        // both candidates land in bin 0: identical point masses, no violation but no information
        let s = build_localization(&spec, g.clone(), 5).unwrap();
        assert!(!s.warnings().is_empty());
        // narrow bins separate the point masses and the zero entries break the lower bound
        spec.bin_width = 0.5;
        assert!(matches!(build_localization(&spec, g.clone(), 5), Err(Error::ZeroLikelihood { .. })));
        spec.floor = 1e-4;
        assert!(build_localization(&spec, g, 5).is_ok());
    }

    #[test]
    fn symmetric_candidates_warn() {
        let spec = LocalizationSpec {
            positions: vec![[1.5, 0.0]],
            grid: Grid::new(vec![(0.5, 2.5), (-0.5, 0.5)], vec![2, 1]).unwrap(),
            source: [1.0, 0.0],
            noise: Noise::symmetric_two_point(0.1),
            bin_width: 0.5,
            floor: 1e-4,
        };
        let loc = localization_model(&spec).unwrap();
        assert_eq!(loc.model.unidentifiable(), vec![1]);
        assert_eq!(gamma(&loc.model, 1).unwrap(), 0.0);
        assert_eq!(loc.warnings.len(), 1);
    }

    #[test]
    fn off_grid_source_rejected() {
        let mut spec = line_spec(Noise::none(), 1e-4);
        spec.source = [1.2, 0.0];
        assert!(localization_model(&spec).is_err());
    }

    #[test]
    fn gaussian_noise_is_symmetric_and_normalized() {
        let noise = Noise::discretized_gaussian(0.5, 0.25, 1.0).unwrap();
        assert_eq!(noise.offsets.len(), 9);
        assert!((noise.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..4 {
            assert!((noise.probs[j] - noise.probs[8 - j]).abs() < 1e-15);
        }
    }
}
