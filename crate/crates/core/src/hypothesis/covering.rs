//! Divergence balls around `θ*` and band coverings of their complements.

use serde::Serialize;

use super::{gammas, hellinger_joint, HypothesisSpace, LikelihoodModel};
use crate::error::{Error, Result};

/// `{θ : γ(θ) ≤ r}`. Always contains `θ*`.
pub fn kl_ball(model: &LikelihoodModel, r: f64) -> Result<Vec<usize>> {
    if r.is_nan() || r < 0.0 {
        return Err(Error::InvalidArgument(format!("ball radius {r} must be ≥ 0")));
    }
    Ok(gammas(model)?
        .into_iter()
        .enumerate()
        .filter(|(_, g)| *g <= r)
        .map(|(t, _)| t)
        .collect())
}

/// Partition of a (truncated) hypothesis set into the KL ball `B_{r_1}`, the
/// bands `B_{r_{l+1}} \ B_{r_l}` and an overflow set beyond the last radius.
#[derive(Debug, Clone, Serialize)]
pub struct KlCovering {
    pub center: usize,
    pub radii: Vec<f64>,
    pub gammas: Vec<f64>,
    pub inner: Vec<usize>,
    /// `bands[l]` holds the hypotheses with `r_l < γ ≤ r_{l+1}`.
    pub bands: Vec<Vec<usize>>,
    /// Hypotheses with `γ > r_L`.
    pub overflow: Vec<usize>,
    pub truncation: Option<usize>,
}

impl KlCovering {
    pub fn cardinalities(&self) -> Vec<usize> {
        self.bands.iter().map(Vec::len).collect()
    }

    pub fn n_hypotheses(&self) -> usize {
        self.gammas.len()
    }

    /// Every hypothesis outside the inner ball, bands first then overflow.
    pub fn outside(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.bands.iter().flatten().copied().collect();
        out.extend(&self.overflow);
        out
    }

    pub fn ball_radius(&self) -> f64 {
        self.radii[0]
    }
}

/// Default radii `r_l = r·l`, extended until the last radius is at least
/// `max_gamma` so that the overflow set is empty.
pub fn default_kl_radii(r: f64, max_gamma: f64) -> Result<Vec<f64>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius {r} must be positive")));
    }
    let levels = ((max_gamma / r).ceil() as usize).max(1) + 1;
    Ok((1..=levels).map(|l| r * l as f64).collect())
}

pub fn build_kl_covering(
    model: &LikelihoodModel,
    space: &HypothesisSpace,
    radii: &[f64],
) -> Result<KlCovering> {
    if space.grid().is_some() {
        return Err(Error::InvalidArgument(
            "KL coverings are built over finite or truncated countable spaces".into(),
        ));
    }
    if space.len() != model.n_hypotheses() {
        return Err(Error::Dimension(format!(
            "space has {} hypotheses, model has {}",
            space.len(),
            model.n_hypotheses()
        )));
    }
    if radii.is_empty() {
        return Err(Error::InvalidArgument("at least one radius is required".into()));
    }
    if radii[0] < 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!(
            "radii must be nonnegative and strictly increasing, got {radii:?}"
        )));
    }
    let gammas = gammas(model)?;
    let mut inner = Vec::new();
    let mut bands = vec![Vec::new(); radii.len() - 1];
    let mut overflow = Vec::new();
    for (theta, &g) in gammas.iter().enumerate() {
        if g <= radii[0] {
            inner.push(theta);
        } else if let Some(l) = radii.windows(2).position(|w| w[0] < g && g <= w[1]) {
            bands[l].push(theta);
        } else {
            overflow.push(theta);
        }
    }
    Ok(KlCovering {
        center: model.theta_star(),
        radii: radii.to_vec(),
        gammas,
        inner,
        bands,
        overflow,
        truncation: space.truncation(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesVerdict {
    Converged,
    Inconclusive,
    Diverging,
}

/// Partial sums of `Σ_l exp(−r_l² + log N_{r_l})` with a heuristic verdict.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    pub increments: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub verdict: SeriesVerdict,
    pub note: &'static str,
}

const SERIES_NOTE: &str =
    "numerical heuristic on finitely many terms; not a proof of convergence or divergence";

/// Evaluates the series from explicit radii and (real-valued) band counts.
///
/// The verdict is `converged` when each of the last `tail_levels` increments is
/// below `tol` and they are non-increasing, `diverging` when they strictly grow,
/// and `inconclusive` otherwise (including when fewer terms are available).
pub fn covering_series(
    radii: &[f64],
    counts: &[f64],
    tail_levels: usize,
    tol: f64,
) -> Result<SeriesReport> {
    if radii.len() != counts.len() {
        return Err(Error::Dimension(format!(
            "{} radii but {} counts",
            radii.len(),
            counts.len()
        )));
    }
    let increments: Vec<f64> = radii
        .iter()
        .zip(counts)
        .map(|(&r, &c)| if c > 0.0 { (c.ln() - r * r).exp() } else { 0.0 })
        .collect();
    let partial_sums = increments
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    let verdict = if tail_levels == 0 || increments.len() < tail_levels {
        SeriesVerdict::Inconclusive
    } else {
        let tail = &increments[increments.len() - tail_levels..];
        let small = tail.iter().all(|&x| x < tol);
        let non_increasing = tail.windows(2).all(|w| w[1] <= w[0]);
        let growing = tail.len() >= 2 && tail.windows(2).all(|w| w[1] > w[0]);
        if small && non_increasing {
            SeriesVerdict::Converged
        } else if growing {
            SeriesVerdict::Diverging
        } else {
            SeriesVerdict::Inconclusive
        }
    };
    Ok(SeriesReport {
        increments,
        partial_sums,
        verdict,
        note: SERIES_NOTE,
    })
}

/// Series check on a built covering, one term per band (band `l` pairs `r_l` with `N_{r_l}`).
pub fn check_assumption3(cov: &KlCovering, tail_levels: usize, tol: f64) -> SeriesReport {
    let radii = &cov.radii[..cov.bands.len()];
    let counts: Vec<f64> = cov.bands.iter().map(|b| b.len() as f64).collect();
    covering_series(radii, &counts, tail_levels, tol).expect("one radius per band")
}

/// Greedy maximal δ-separated subset of `points`, scanned in the given order.
///
/// A point is accepted iff it is at distance `≥ delta` from every accepted point,
/// so the result is δ-separated and every input lies within `< delta` of it.
pub fn max_delta_separated<F>(points: &[usize], delta: f64, metric: F) -> Vec<usize>
where
    F: Fn(usize, usize) -> f64,
{
    let mut net: Vec<usize> = Vec::new();
    for &p in points {
        if net.iter().all(|&z| metric(p, z) >= delta) {
            net.push(p);
        }
    }
    net
}

/// One Hellinger band `{θ : r_{l+1} < h̄(θ*, θ) ≤ r_l}` with its δ-net and cells.
#[derive(Debug, Clone, Serialize)]
pub struct HellingerBand {
    /// 1-based band level `l`.
    pub level: usize,
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub delta: f64,
    pub members: Vec<usize>,
    pub net: Vec<usize>,
    /// `cells[m]` holds the members assigned to `net[m]`.
    pub cells: Vec<Vec<usize>>,
    /// `δ_l^{−d}` for comparison with the measured net size (grids only).
    pub packing_reference: Option<f64>,
}

impl HellingerBand {
    pub fn net_size(&self) -> usize {
        self.net.len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HellingerCovering {
    pub center: usize,
    pub r: f64,
    pub radii: Vec<f64>,
    /// `L_r`, the 1-based index of the first radius `≤ r`.
    pub l_r: usize,
    /// Distances `h̄(θ*, θ)` for every hypothesis.
    pub distances: Vec<f64>,
    /// `B_{r_{L_r}}`, the innermost ball.
    pub inner: Vec<usize>,
    pub bands: Vec<HellingerBand>,
    pub dimension: Option<usize>,
}

impl HellingerCovering {
    pub fn net_sizes(&self) -> Vec<usize> {
        self.bands.iter().map(HellingerBand::net_size).collect()
    }

    /// Deltas actually used, one per band.
    pub fn deltas(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.delta).collect()
    }
}

/// Default radii `r_l = 2^{1−l}`, through the first one `≤ r`.
pub fn default_hellinger_radii(r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Hellinger radius {r} must lie in (0, 1)"
        )));
    }
    let mut radii = vec![1.0];
    while *radii.last().unwrap() > r {
        radii.push(radii.last().unwrap() / 2.0);
    }
    Ok(radii)
}

/// Default `δ_l = (r_{l+1} − R)/2`, clamped to stay positive. One value per band.
pub fn default_hellinger_deltas(radii: &[f64], inner_radius: f64) -> Vec<f64> {
    radii
        .windows(2)
        .map(|w| ((w[1] - inner_radius) / 2.0).max(1e-9))
        .collect()
}

pub fn build_hellinger_covering(
    model: &LikelihoodModel,
    space: &HypothesisSpace,
    r: f64,
    radii: &[f64],
    deltas: &[f64],
) -> Result<HellingerCovering> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Hellinger radius {r} must lie in (0, 1)"
        )));
    }
    if space.len() != model.n_hypotheses() {
        return Err(Error::Dimension(format!(
            "space has {} hypotheses, model has {}",
            space.len(),
            model.n_hypotheses()
        )));
    }
    if radii.first() != Some(&1.0) || radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument(format!(
            "radii must start at 1 and strictly decrease, got {radii:?}"
        )));
    }
    let l_r = radii
        .iter()
        .position(|&x| x <= r)
        .map(|p| p + 1)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("no radius in {radii:?} is ≤ r = {r}"))
        })?;
    let n_bands = l_r - 1;
    if deltas.len() < n_bands {
        return Err(Error::InvalidArgument(format!(
            "{n_bands} bands need {n_bands} deltas, got {}",
            deltas.len()
        )));
    }
    if let Some(bad) = deltas[..n_bands].iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!("delta {bad} must be positive")));
    }

    let center = model.theta_star();
    let distances: Vec<f64> = (0..model.n_hypotheses())
        .map(|t| hellinger_joint(model, center, t))
        .collect();
    let innermost = radii[l_r - 1];
    let inner: Vec<usize> = (0..distances.len())
        .filter(|&t| distances[t] <= innermost)
        .collect();
    let metric = |a: usize, b: usize| hellinger_joint(model, a, b);

    let bands = (0..n_bands)
        .map(|b| {
            let (outer, lower) = (radii[b], radii[b + 1]);
            let delta = deltas[b];
            let members: Vec<usize> = (0..distances.len())
                .filter(|&t| lower < distances[t] && distances[t] <= outer)
                .collect();
            let net = max_delta_separated(&members, delta, metric);
            let mut cells = vec![Vec::new(); net.len()];
            for &t in &members {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (m, &z) in net.iter().enumerate() {
                    let d = metric(t, z);
                    if d < best_d {
                        best = m;
                        best_d = d;
                    }
                }
                cells[best].push(t);
            }
            HellingerBand {
                level: b + 1,
                outer_radius: outer,
                inner_radius: lower,
                delta,
                members,
                net,
                cells,
                packing_reference: space.dimension().map(|d| delta.powi(-(d as i32))),
            }
        })
        .collect();

    Ok(HellingerCovering {
        center,
        r,
        radii: radii.to_vec(),
        l_r,
        distances,
        inner,
        bands,
        dimension: space.dimension(),
    })
}
