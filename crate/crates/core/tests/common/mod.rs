#![allow(dead_code)]

use belieflab::hypothesis::{Grid, LikelihoodModel};
use belieflab::network::Graph;
use belieflab::scenario::{LocalizationSpec, Noise};
use rand::seq::SliceRandom;
use rand::Rng;

/// Row-stochastic row with every entry at least `floor`.
pub fn random_row<R: Rng>(rng: &mut R, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() + floor).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn random_model<R: Rng>(rng: &mut R, n: usize, m: usize) -> LikelihoodModel {
    let tables = (0..n)
        .map(|_| {
            let alphabet = rng.gen_range(2..=5);
            (0..m).map(|_| random_row(rng, alphabet, 0.05)).collect()
        })
        .collect();
    LikelihoodModel::new(tables, rng.gen_range(0..m)).unwrap()
}

pub fn random_priors<R: Rng>(rng: &mut R, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| random_row(rng, m, 0.1)).collect()
}

/// A connected graph: a random spanning tree plus a few extra edges.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize) -> Graph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        edges.push((parent, order[k]));
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && !edges.contains(&(u, v)) && !edges.contains(&(v, u)) {
            edges.push((u, v));
        }
    }
    Graph::new(n, edges).unwrap()
}

/// 3 agents, 12 hypotheses, 3 symbols. Agent `i` sees a code of `θ`
/// (`θ mod 3`, `⌊θ/3⌋ mod 3`, `⌊θ/4⌋`) through a channel that reports it with
/// probability 0.8. `γ(θ)` is `0.7·ln 8` times the fraction of agents whose
/// code differs from that of `θ* = 0`.
pub fn coded_model() -> LikelihoodModel {
    let codes: [fn(usize) -> usize; 3] = [|t| t % 3, |t| (t / 3) % 3, |t| t / 4];
    let tables = codes
        .iter()
        .map(|code| {
            (0..12)
                .map(|t| {
                    let mut row = vec![0.1; 3];
                    row[code(t)] = 0.8;
                    row
                })
                .collect()
        })
        .collect();
    LikelihoodModel::new(tables, 0).unwrap()
}

/// 2 agents, 8 hypotheses, 3 symbols; the truth never emits symbol 2.
/// Hypothesis `t` puts mass `m` on symbol 2 and splits the rest as
/// `(½ + d, ½ − d)`, with `m` chosen so that `γ(t) = targets[t]`.
pub fn tail_probability_model(targets: &[f64], d: [f64; 2]) -> LikelihoodModel {
    let tables = d
        .iter()
        .map(|&d| {
            targets
                .iter()
                .map(|&g| {
                    if g == 0.0 {
                        return vec![0.5, 0.5, 0.0];
                    }
                    // γ = −ln(1 − m) − ½ ln(1 − 4d²)
                    let keep = (-(g + 0.5 * (1.0 - 4.0 * d * d).ln())).exp();
                    vec![keep * (0.5 + d), keep * (0.5 - d), 1.0 - keep]
                })
                .collect()
        })
        .collect();
    LikelihoodModel::new(tables, 0).unwrap()
}

/// Three sensors around a 9×9 grid of candidate sources on `[0, 9]²`.
pub fn localization_spec() -> LocalizationSpec {
    LocalizationSpec {
        positions: vec![[1.3, 2.1], [7.6, 1.4], [4.2, 8.3]],
        grid: Grid::new(vec![(0.0, 9.0), (0.0, 9.0)], vec![9, 9]).unwrap(),
        source: [5.5, 4.5],
        noise: Noise::discretized_gaussian(0.5, 0.25, 1.0).unwrap(),
        bin_width: 0.5,
        floor: 1e-4,
    }
}

/// A coarser grid for the more expensive density checks.
pub fn small_localization_spec() -> LocalizationSpec {
    LocalizationSpec {
        positions: vec![[0.4, 0.6], [3.7, 3.1]],
        grid: Grid::new(vec![(0.0, 4.0), (0.0, 4.0)], vec![4, 4]).unwrap(),
        source: [1.5, 2.5],
        noise: Noise::discretized_gaussian(0.3, 0.25, 0.75).unwrap(),
        bin_width: 0.5,
        floor: 1e-3,
    }
}
