//! Non-asymptotic concentration constants, transient times and Monte Carlo
//! checks of the intermediate probability bounds.
//!
//! The constants grow like `exp(log(1/α) log n / (1 − λ))`, which overflows
//! `f64` for ordinary networks, so everything is carried in log-space.

mod checks;
mod transient;

pub use checks::{
    tail_chain, lemma2_mc, lemma3_check, lemma4_mc, log_density_g, log_density_g_i, vbar,
    AgentChain, AgentSlack, TailChainReport, TailProbabilityReport, DensityComparisonReport, NetCell, NetCellReport,
    NetCellSampling,
};
pub use transient::{
    theorem1_n, continuum_n_from_bands, theorem2_n, BandContribution, BoundKind, BoundReport,
    ContinuumBand,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K_MAX: u64 = 1_000_000;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// `log C2 = 1 / (8 log²(1/α))`.
pub fn log_c2(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let l = (1.0 / alpha).ln();
    Ok(1.0 / (8.0 * l * l))
}

pub fn constant_c2(alpha: f64) -> Result<f64> {
    Ok(log_c2(alpha)?.exp())
}

/// `log C1 = 8 log(1/α) log n / (1 − λ)`.
pub fn log_c1(alpha: f64, n: usize, lambda: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(lambda < 1.0) || lambda.is_nan() {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be below 1")));
    }
    Ok(8.0 * (1.0 / alpha).ln() * (n as f64).ln() / (1.0 - lambda))
}

/// `log C3 = log(1/ε) + log C1`.
pub fn log_c3(alpha: f64, n: usize, lambda: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must lie in (0, 1]")));
    }
    Ok(-epsilon.ln() + log_c1(alpha, n, lambda)?)
}

/// Inputs shared by both transient-time computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub rho: f64,
    pub sigma: f64,
    pub r: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub n: usize,
    /// `R`, the inner Hellinger radius (continuum case only).
    #[serde(default)]
    pub inner_radius: Option<f64>,
    /// Grid dimension `d` (continuum case only).
    #[serde(default)]
    pub dimension: Option<usize>,
}

impl ConcentrationParams {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        open_unit("rho", self.rho)?;
        open_unit("sigma", self.sigma)?;
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidArgument(format!("r = {} must be positive", self.r)));
        }
        check_alpha(self.alpha)?;
        log_c3(self.alpha, self.n, self.lambda, self.epsilon)?;
        if let Some(big_r) = self.inner_radius {
            if !(big_r > 0.0 && big_r < self.r) {
                return Err(Error::InvalidArgument(format!(
                    "inner radius R = {big_r} must lie in (0, r = {})",
                    self.r
                )));
            }
        }
        Ok(())
    }

    pub fn log_c1(&self) -> Result<f64> {
        log_c1(self.alpha, self.n, self.lambda)
    }

    pub fn log_c2(&self) -> Result<f64> {
        log_c2(self.alpha)
    }

    pub fn log_c3(&self) -> Result<f64> {
        log_c3(self.alpha, self.n, self.lambda, self.epsilon)
    }
}
