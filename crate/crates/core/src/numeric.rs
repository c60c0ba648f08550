//! Small numerical helpers shared across modules.

/// `log(Σ exp(x_i))`, factoring out the maximum. Empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-sum-exp over an iterator, without collecting.
pub fn log_sum_exp_iter<I: IntoIterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Total-variation distance `½ Σ |p_i − q_i|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Ordinary least-squares slope of `ys` against `xs`. `None` for fewer than two
/// distinct abscissae.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Smallest `k` in `1..=k_max` with `holds(k)`, for a predicate that is monotone
/// (once true, true for every larger `k`). Doubling then bisection, so the number
/// of evaluations is logarithmic in the answer.
pub fn first_k_satisfying<F: FnMut(u64) -> bool>(k_max: u64, mut holds: F) -> Option<u64> {
    if k_max == 0 {
        return None;
    }
    if holds(1) {
        return Some(1);
    }
    // invariant: holds(lo) == false
    let mut lo = 1u64;
    let mut hi = loop {
        let next = lo.saturating_mul(2).min(k_max);
        if holds(next) {
            break next;
        }
        if next == k_max {
            return None;
        }
        lo = next;
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}
