use super::{Distribution, LikelihoodModel};
use crate::error::{Error, Result};

fn check_lengths(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "distributions over {} and {} symbols",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `D_KL(p ‖ q) = Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_lengths(p, q)?;
    let mut total = 0.0;
    for (s, (&ps, &qs)) in p.probs().iter().zip(q.probs()).enumerate() {
        if ps == 0.0 {
            continue;
        }
        if qs == 0.0 {
            return Err(Error::AbsoluteContinuity { symbol: s });
        }
        total += ps * (ps / qs).ln();
    }
    // Rounding can leave a tiny negative value for p ≈ q.
    Ok(total.max(0.0))
}

/// Hellinger distance with `h² = ½ Σ (√p − √q)²`, so `h ∈ [0, 1]`.
pub fn hellinger_single(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_lengths(p, q)?;
    let sq: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((0.5 * sq).min(1.0).sqrt())
}

/// Hellinger distance between the product measures `Π_i ℓ^i(·|a)` and
/// `Π_i ℓ^i(·|b)`, scaled by `1/√n`.
///
/// Uses the product identity `1 − h² = Π_i (1 − h_i²)` instead of enumerating the
/// joint alphabet.
pub fn hellinger_joint(model: &LikelihoodModel, a: usize, b: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = model.n_agents();
    let log_affinity: f64 = (0..n)
        .map(|i| {
            let h = hellinger_single(model.row(i, a), model.row(i, b))
                .expect("rows of one agent share an alphabet");
            (-h * h).ln_1p()
        })
        .sum();
    let joint_sq = -log_affinity.exp_m1();
    joint_sq.clamp(0.0, 1.0).sqrt() / (n as f64).sqrt()
}

/// Network-average KL divergence `γ(θ) = (1/n) Σ_i D_KL(ℓ^i(·|θ*) ‖ ℓ^i(·|θ))`.
pub fn gamma(model: &LikelihoodModel, theta: usize) -> Result<f64> {
    let n = model.n_agents();
    let mut total = 0.0;
    for i in 0..n {
        total += kl_divergence(model.truth(i), model.row(i, theta))?;
    }
    Ok(total / n as f64)
}

/// `γ(θ)` for every hypothesis.
pub fn gammas(model: &LikelihoodModel) -> Result<Vec<f64>> {
    (0..model.n_hypotheses()).map(|t| gamma(model, t)).collect()
}
