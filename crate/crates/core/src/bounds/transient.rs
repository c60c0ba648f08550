use serde::Serialize;

use super::ConcentrationParams;
use crate::error::{Error, Result};
use crate::hypothesis::{HellingerCovering, KlCovering, LikelihoodModel};
use crate::numeric::{first_k_satisfying, log_sum_exp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// Countable hypotheses with KL bands.
    Countable,
    /// Gridded continuum with Hellinger bands.
    Continuum,
}

/// One band's share of the transient-time conditions, evaluated at `k`.
#[derive(Debug, Clone, Serialize)]
pub struct BandContribution {
    /// 1-based band level.
    pub level: usize,
    pub radius: f64,
    /// `N_{r_l}` (countable) or `K_l` (continuum).
    pub count: usize,
    pub k: u64,
    /// Log of this band's term in the probability sum.
    pub log_n1_term: f64,
    /// Log of this band's term in the belief sum (continuum), or the largest
    /// `log C3 − kγ/2 − log(σ G)` over members (countable, ≤ 0 when satisfied).
    pub log_n2_term: f64,
}

/// Transient time `N = max(N1_min, N2_min)` with its ingredients.
///
/// `None` in a `*_min` field means the condition was not met for any
/// `k ≤ k_max`; the `*_log_margin_at_k_max` fields then say by how much
/// (log left side minus log right side at `k_max`).
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub alpha: f64,
    pub lambda: f64,
    pub c2: f64,
    pub log_c2: f64,
    pub log_c3: Option<f64>,
    pub log_c1: Option<f64>,
    pub n1_min: Option<u64>,
    pub n2_min: Option<u64>,
    pub n: Option<u64>,
    /// Countable case: `N2` from the band-wise sufficient condition.
    pub n2_bandwise: Option<u64>,
    pub k_max: u64,
    pub n1_log_margin_at_k_max: f64,
    pub n2_log_margin_at_k_max: f64,
    pub bands: Vec<BandContribution>,
    pub truncation: Option<usize>,
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn reached(&self) -> bool {
        self.n.is_some()
    }
}

fn combine(n1: Option<u64>, n2: Option<u64>) -> Option<u64> {
    Some(n1?.max(n2?))
}

/// Transient time for a countable (truncated) hypothesis set.
///
/// `N2_min` is the exact per-hypothesis condition over the truncation;
/// `n2_bandwise` replaces each `γ(θ)` by its band's lower radius and each
/// prior factor by the smallest one in the band, which is sufficient but looser.
pub fn theorem1_n(
    params: &ConcentrationParams,
    cov: &KlCovering,
    model: &LikelihoodModel,
    priors: &[Vec<f64>],
    k_max: u64,
) -> Result<BoundReport> {
    params.validate()?;
    let n = model.n_agents();
    let m = model.n_hypotheses();
    if params.n != n {
        return Err(Error::Dimension(format!("params.n = {} but model has {n} agents", params.n)));
    }
    if cov.n_hypotheses() != m || cov.center != model.theta_star() {
        return Err(Error::InvalidArgument("covering was built for a different model".into()));
    }
    if (cov.ball_radius() - params.r).abs() > 1e-12 * params.r.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "covering ball radius {} differs from r = {}",
            cov.ball_radius(),
            params.r
        )));
    }
    if priors.len() != n || priors.iter().any(|p| p.len() != m) {
        return Err(Error::Dimension(format!("priors must be {n} rows of {m} masses")));
    }
    if let Some((i, row)) = priors.iter().enumerate().find(|(_, row)| row.iter().any(|&p| !(p > 0.0))) {
        let _ = row;
        return Err(Error::InvalidDistribution(format!("agent {i} prior has a non-positive entry")));
    }
    let star = model.theta_star();
    if let Some(i) = (0..n).find(|&i| priors[i][star] < params.epsilon) {
        return Err(Error::InvalidArgument(format!(
            "agent {i} prior at the true hypothesis is {} < epsilon = {}",
            priors[i][star], params.epsilon
        )));
    }

    let log_c2 = params.log_c2()?;
    let log_c3 = params.log_c3()?;
    let ln_rho = params.rho.ln();
    let ln_sigma = params.sigma.ln();

    // band radius used for each (band or overflow) group
    let last_radius = *cov.radii.last().expect("covering has radii");
    let mut groups: Vec<(usize, f64, &[usize])> = cov
        .bands
        .iter()
        .enumerate()
        .map(|(b, members)| (b + 1, cov.radii[b], members.as_slice()))
        .collect();
    if !cov.overflow.is_empty() {
        groups.push((cov.radii.len(), last_radius, cov.overflow.as_slice()));
    }
    let nonempty: Vec<(usize, f64, &[usize])> =
        groups.iter().copied().filter(|(_, _, mem)| !mem.is_empty()).collect();

    let n1_lhs = |k: u64| -> f64 {
        let terms: Vec<f64> = nonempty
            .iter()
            .map(|&(_, r, mem)| (mem.len() as f64).ln() - k as f64 * r * r)
            .collect();
        log_c2 + log_sum_exp(&terms)
    };

    // log of the geometric mean of the priors, per hypothesis
    let log_g: Vec<f64> = (0..m)
        .map(|t| priors.iter().map(|row| row[t].ln()).sum::<f64>() / n as f64)
        .collect();
    let outside = cov.outside();
    // worst margin log C3 − kγ/2 − log σ − log G over θ; satisfied when ≤ 0
    let n2_margin = |k: u64| -> f64 {
        outside
            .iter()
            .map(|&t| log_c3 - 0.5 * k as f64 * cov.gammas[t] - ln_sigma - log_g[t])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let n2_band_margin = |k: u64| -> f64 {
        nonempty
            .iter()
            .map(|&(_, r, mem)| {
                let g_min = mem.iter().map(|&t| log_g[t]).fold(f64::INFINITY, f64::min);
                log_c3 - 0.5 * k as f64 * r - ln_sigma - g_min
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let n1_min = first_k_satisfying(k_max, |k| n1_lhs(k) <= ln_rho);
    let n2_min = first_k_satisfying(k_max, |k| n2_margin(k) <= 0.0);
    let n2_bandwise = first_k_satisfying(k_max, |k| n2_band_margin(k) <= 0.0);
    let n_total = combine(n1_min, n2_min);
    let k_report = n_total.unwrap_or(k_max);

    let bands = groups
        .iter()
        .map(|&(level, radius, mem)| BandContribution {
            level,
            radius,
            count: mem.len(),
            k: k_report,
            log_n1_term: if mem.is_empty() {
                f64::NEG_INFINITY
            } else {
                log_c2 + (mem.len() as f64).ln() - k_report as f64 * radius * radius
            },
            log_n2_term: mem
                .iter()
                .map(|&t| log_c3 - 0.5 * k_report as f64 * cov.gammas[t] - ln_sigma - log_g[t])
                .fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();

    let mut notes = vec!["N2_min uses the exact per-hypothesis condition over the modeled hypotheses".to_string()];
    if !cov.overflow.is_empty() {
        notes.push(format!(
            "{} hypotheses lie beyond the last radius and are counted at r = {last_radius}",
            cov.overflow.len()
        ));
    }
    if let Some(t) = cov.truncation {
        notes.push(format!("countable set truncated to its first {t} hypotheses; tail mass is not modeled"));
    }

    Ok(BoundReport {
        kind: BoundKind::Countable,
        alpha: params.alpha,
        lambda: params.lambda,
        c2: log_c2.exp(),
        log_c2,
        log_c3: Some(log_c3),
        log_c1: None,
        n1_min,
        n2_min,
        n: n_total,
        n2_bandwise,
        k_max,
        n1_log_margin_at_k_max: n1_lhs(k_max) - ln_rho,
        n2_log_margin_at_k_max: n2_margin(k_max),
        bands,
        truncation: cov.truncation,
        notes,
    })
}

/// One Hellinger band `(r_{l+1}, r_l]` with its net separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuumBand {
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub delta: f64,
    /// Net size `K_l`, reported only.
    pub net_size: usize,
}

/// Continuum transient time from explicit bands.
pub fn continuum_n_from_bands(
    params: &ConcentrationParams,
    dimension: usize,
    bands: &[ContinuumBand],
    k_max: u64,
) -> Result<BoundReport> {
    params.validate()?;
    let big_r = params.inner_radius.ok_or_else(|| {
        Error::InvalidArgument("the continuum bound needs an inner radius R".into())
    })?;
    let d = dimension as f64;
    let log_c1 = params.log_c1()?;
    let log_c2 = params.log_c2()?;
    let mut gaps = Vec::with_capacity(bands.len());
    for (b, band) in bands.iter().enumerate() {
        let gap = band.inner_radius - band.delta - big_r;
        if !(gap > 0.0) {
            return Err(Error::Positivity { band: b + 1, value: gap });
        }
        gaps.push(gap);
    }
    let n1_terms = |k: u64| -> Vec<f64> {
        bands
            .iter()
            .zip(&gaps)
            .map(|(band, gap)| log_c1 - k as f64 * gap - d * band.delta.ln())
            .collect()
    };
    let n2_terms = |k: u64| -> Vec<f64> {
        bands
            .iter()
            .zip(&gaps)
            .map(|(band, gap)| d * (band.outer_radius / big_r).ln() - 2.0 * k as f64 * gap)
            .collect()
    };
    let ln_rho = params.rho.ln();
    let ln_sigma = params.sigma.ln();
    let n1_min = first_k_satisfying(k_max, |k| log_sum_exp(&n1_terms(k)) <= ln_rho);
    let n2_min = first_k_satisfying(k_max, |k| log_sum_exp(&n2_terms(k)) <= ln_sigma);
    let n_total = combine(n1_min, n2_min);
    let k_report = n_total.unwrap_or(k_max);
    let (t1, t2) = (n1_terms(k_report), n2_terms(k_report));
    let contributions = bands
        .iter()
        .enumerate()
        .map(|(b, band)| BandContribution {
            level: b + 1,
            radius: band.outer_radius,
            count: band.net_size,
            k: k_report,
            log_n1_term: t1[b],
            log_n2_term: t2[b],
        })
        .collect();
    Ok(BoundReport {
        kind: BoundKind::Continuum,
        alpha: params.alpha,
        lambda: params.lambda,
        c2: log_c2.exp(),
        log_c2,
        log_c3: None,
        log_c1: Some(log_c1),
        n1_min,
        n2_min,
        n: n_total,
        n2_bandwise: None,
        k_max,
        n1_log_margin_at_k_max: log_sum_exp(&n1_terms(k_max)) - ln_rho,
        n2_log_margin_at_k_max: log_sum_exp(&n2_terms(k_max)) - ln_sigma,
        bands: contributions,
        truncation: None,
        notes: vec![
            "positivity r_(l+1) - delta_l - R > 0 checked for the bands in use only".into(),
            "belief condition uses the volume ratio (r_l / R)^d".into(),
        ],
    })
}

/// Continuum transient time for a built Hellinger covering (uniform priors).
pub fn theorem2_n(params: &ConcentrationParams, cov: &HellingerCovering, k_max: u64) -> Result<BoundReport> {
    if (cov.r - params.r).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "covering radius {} differs from r = {}",
            cov.r, params.r
        )));
    }
    let dimension = cov
        .dimension
        .or(params.dimension)
        .ok_or_else(|| Error::InvalidArgument("the continuum bound needs a grid dimension".into()))?;
    let bands: Vec<ContinuumBand> = cov
        .bands
        .iter()
        .map(|b| ContinuumBand {
            outer_radius: b.outer_radius,
            inner_radius: b.inner_radius,
            delta: b.delta,
            net_size: b.net_size(),
        })
        .collect();
    continuum_n_from_bands(params, dimension, &bands, k_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{build_kl_covering, HypothesisSpace};

    fn params(n: usize, r: f64) -> ConcentrationParams {
        ConcentrationParams {
            rho: 0.1,
            sigma: 0.1,
            r,
            alpha: 0.1,
            epsilon: 0.25,
            lambda: 0.75,
            n,
            inner_radius: None,
            dimension: None,
        }
    }

    /// One agent; truth uniform on two symbols; alternatives move mass to a
    /// third symbol so that `γ` takes the given values exactly.
    fn model_with_gammas(gs: &[f64]) -> LikelihoodModel {
        let rows = gs
            .iter()
            .map(|&g| {
                let keep = (-g).exp();
                vec![0.5 * keep, 0.5 * keep, 1.0 - keep]
            })
            .collect();
        LikelihoodModel::new(vec![rows], 0).unwrap()
    }

    #[test]
    fn empty_complement_gives_one() {
        let model = model_with_gammas(&[0.0, 0.05, 0.1, 0.12]);
        let cov = build_kl_covering(&model, &HypothesisSpace::finite(4), &[0.2, 0.4]).unwrap();
        let rep = theorem1_n(&params(1, 0.2), &cov, &model, &[vec![0.25; 4]], 1000).unwrap();
        assert_eq!((rep.n1_min, rep.n2_min, rep.n), (Some(1), Some(1), Some(1)));
    }

    #[test]
    fn single_band_scan_matches_closed_form() {
        let model = model_with_gammas(&[0.0, 0.05, 0.1, 0.5]);
        let cov = build_kl_covering(&model, &HypothesisSpace::finite(4), &[0.2, 0.6]).unwrap();
        let p = params(1, 0.2);
        let rep = theorem1_n(&p, &cov, &model, &[vec![0.25; 4]], 1_000_000).unwrap();
        let log_c3 = p.log_c3().unwrap();
        let gamma = cov.gammas[3];
        let closed = (2.0 * (log_c3 - (0.1f64 * 0.25).ln()) / gamma).ceil() as u64;
        assert_eq!(rep.n2_min, Some(closed));
        // N1: C2 · 1 · exp(−k r²) ≤ ρ
        let closed_n1 = ((p.log_c2().unwrap() - 0.1f64.ln()) / 0.04).ceil() as u64;
        assert_eq!(rep.n1_min, Some(closed_n1.max(1)));
        assert_eq!(rep.n, Some(closed.max(closed_n1)));
        // band-wise uses γ ≥ 0.2 instead of 0.5, so it is never smaller
        assert!(rep.n2_bandwise.unwrap() >= rep.n2_min.unwrap());
    }

    #[test]
    fn n1_terms_decrease_and_not_reached_reports_margin() {
        let model = model_with_gammas(&[0.0, 0.3, 0.7, 0.9]);
        let cov = build_kl_covering(&model, &HypothesisSpace::finite(4), &[0.2, 0.6, 1.0]).unwrap();
        let rep = theorem1_n(&params(1, 0.2), &cov, &model, &[vec![0.25; 4]], 5).unwrap();
        assert_eq!(rep.n, None);
        assert!(rep.n1_log_margin_at_k_max > 0.0 || rep.n2_log_margin_at_k_max > 0.0);
        let mut prev = f64::INFINITY;
        for k in [1u64, 2, 5, 10, 100] {
            let rep = theorem1_n(&params(1, 0.2), &cov, &model, &[vec![0.25; 4]], k).unwrap();
            let total = log_sum_exp(&rep.bands.iter().map(|b| b.log_n1_term).collect::<Vec<_>>());
            assert!(total < prev);
            prev = total;
        }
    }

    #[test]
    fn monotone_in_tolerances_and_radius() {
        let gs: Vec<f64> = (0..20).map(|t| 0.05 * t as f64).collect();
        let model = model_with_gammas(&gs);
        let space = HypothesisSpace::finite(gs.len());
        let prior = vec![vec![1.0 / gs.len() as f64; gs.len()]];
        let run = |rho: f64, sigma: f64, r: f64| {
            let radii: Vec<f64> = (1..=8).map(|l| r * l as f64).collect();
            let cov = build_kl_covering(&model, &space, &radii).unwrap();
            let p = ConcentrationParams { rho, sigma, r, epsilon: 0.05, ..params(1, r) };
            theorem1_n(&p, &cov, &model, &prior, 10_000_000).unwrap()
        };
        let base = run(0.1, 0.1, 0.2);
        assert!(run(0.2, 0.1, 0.2).n1_min <= base.n1_min);
        assert!(run(0.1, 0.2, 0.2).n2_min <= base.n2_min);
        assert!(run(0.1, 0.1, 0.15).n1_min >= base.n1_min);
        assert!(run(0.1, 0.1, 0.15).n2_min >= base.n2_min);
    }

    #[test]
    fn epsilon_must_not_exceed_true_prior() {
        let model = model_with_gammas(&[0.0, 0.5]);
        let cov = build_kl_covering(&model, &HypothesisSpace::finite(2), &[0.2, 0.6]).unwrap();
        let p = ConcentrationParams { epsilon: 0.6, ..params(1, 0.2) };
        assert!(theorem1_n(&p, &cov, &model, &[vec![0.5, 0.5]], 100).is_err());
    }

    fn continuum_params() -> ConcentrationParams {
        ConcentrationParams {
            rho: 0.1,
            sigma: 0.1,
            r: 0.3,
            alpha: 0.1,
            epsilon: 1.0,
            lambda: 63.0 / 64.0,
            n: 2,
            inner_radius: Some(0.2),
            dimension: Some(2),
        }
    }

    #[test]
    fn continuum_without_bands_is_one() {
        let rep = continuum_n_from_bands(&continuum_params(), 2, &[], 1000).unwrap();
        assert_eq!(rep.n, Some(1));
    }

    #[test]
    fn continuum_single_band_closed_form() {
        let band = ContinuumBand { outer_radius: 1.0, inner_radius: 0.5, delta: 0.1, net_size: 3 };
        let rep = continuum_n_from_bands(&continuum_params(), 2, &[band], 10_000_000).unwrap();
        // 2 log(1/0.2) − 2k(0.5 − 0.1 − 0.2) ≤ log 0.1
        let closed = ((2.0 * 5f64.ln() + 10f64.ln()) / 0.4).ceil() as u64;
        assert_eq!(closed, 14);
        assert_eq!(rep.n2_min, Some(closed));
        // log C1 − 0.2k − 2 log 0.1 ≤ log 0.1
        let log_c1 = continuum_params().log_c1().unwrap();
        let closed_n1 = ((log_c1 - 2.0 * 0.1f64.ln() - 0.1f64.ln()) / 0.2).ceil() as u64;
        assert_eq!(rep.n1_min, Some(closed_n1));

        let doubled = ConcentrationParams { rho: 0.2, ..continuum_params() };
        let rep2 = continuum_n_from_bands(&doubled, 2, &[band], 10_000_000).unwrap();
        assert!(rep.n1_min >= rep2.n1_min);
    }

    #[test]
    fn continuum_positivity_names_band() {
        let ok = ContinuumBand { outer_radius: 1.0, inner_radius: 0.5, delta: 0.1, net_size: 1 };
        let bad = ContinuumBand { outer_radius: 0.5, inner_radius: 0.25, delta: 0.1, net_size: 1 };
        match continuum_n_from_bands(&continuum_params(), 2, &[ok, bad], 100) {
            Err(Error::Positivity { band, value }) => {
                assert_eq!(band, 2);
                assert!((value + 0.05).abs() < 1e-12);
            }
            other => panic!("expected positivity error, got {other:?}"),
        }
    }
}
