//! Communication graphs, doubly stochastic mixing matrices and the
//! consensus-deviation sums that enter the concentration constants.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    // (u, v) with u < v
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("a graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop at node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &set {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges: set,
            adjacency,
        })
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|v| (v - 1, v)))
    }

    /// Cycle on `n` nodes; a single edge for `n = 2`.
    pub fn ring(n: usize) -> Result<Self> {
        let mut edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
        if n >= 3 {
            edges.push((n - 1, 0));
        }
        Self::new(n, edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))))
    }

    /// Node 0 joined to every other node.
    pub fn star(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|v| (0, v)))
    }

    /// `rows × cols` lattice, node `r·cols + c`.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        Self::new(rows * cols, edges)
    }

    /// Parses a generator call such as `ring(8)` or `grid(3,3)`.
    pub fn from_generator(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let bad = || {
            Error::Graph(format!(
                "unknown generator {spec:?}; expected path(n), ring(n), complete(n), star(n) or grid(rows,cols)"
            ))
        };
        let open = spec.find('(').ok_or_else(bad)?;
        let inner = spec[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<usize> = inner
            .split(',')
            .map(|a| a.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        match (spec[..open].trim(), args.as_slice()) {
            ("path", [n]) => Self::path(*n),
            ("ring", [n]) => Self::ring(*n),
            ("complete", [n]) => Self::complete(*n),
            ("star", [n]) => Self::star(*n),
            ("grid", [r, c]) => Self::grid(*r, *c),
            _ => Err(bad()),
        }
    }

    /// Edge-list text: a header line `n <count>`, then one `u v` pair per line.
    /// Blank lines and `#` comments are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: &str| Error::Graph(format!("line {}: {msg}: {raw:?}", lineno + 1));
            match (n, fields.as_slice()) {
                (None, ["n", count]) => {
                    n = Some(count.parse::<usize>().map_err(|_| err("bad node count"))?);
                }
                (None, _) => return Err(err("expected header `n <count>`")),
                (Some(_), [u, v]) => {
                    let u = u.parse::<usize>().map_err(|_| err("bad node index"))?;
                    let v = v.parse::<usize>().map_err(|_| err("bad node index"))?;
                    edges.push((u, v));
                }
                (Some(_), _) => return Err(err("expected `u v`")),
            }
        }
        let n = n.ok_or_else(|| Error::Graph("missing header `n <count>`".into()))?;
        Self::new(n, edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for (u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn is_connected(&self) -> bool {
        components(self.n, |v| self.adjacency[v].clone()).len() == 1
    }
}

fn components(n: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(v);
            for w in neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Nonnegative `n × n` mixing matrix with its derived contraction quantities.
///
/// `eta` is the smallest positive entry, `lambda_formula = 1 − η/(4n²)`, and
/// `lambda_empirical` the largest singular value of `A − (1/n)11ᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WeightMatrix {
    n: usize,
    entries: Vec<f64>,
    eta: f64,
    lambda_formula: f64,
    lambda_empirical: f64,
}

impl TryFrom<Vec<Vec<f64>>> for WeightMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        WeightMatrix::new(rows)
    }
}

impl From<WeightMatrix> for Vec<Vec<f64>> {
    fn from(a: WeightMatrix) -> Self {
        a.rows()
    }
}

impl WeightMatrix {
    /// Entries must be finite and nonnegative with at least one positive value.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Dimension("weight matrix is empty".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "weight matrix row {i} has {} entries, expected {n}",
                rows[i].len()
            )));
        }
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(k) = entries.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight ({}, {}) = {} is not a finite nonnegative number",
                k / n,
                k % n,
                entries[k]
            )));
        }
        let eta = entries
            .iter()
            .copied()
            .filter(|&x| x > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !eta.is_finite() {
            return Err(Error::InvalidArgument("weight matrix has no positive entry".into()));
        }
        let lambda_formula = 1.0 - eta / (4.0 * (n * n) as f64);
        let lambda_empirical = second_singular_value(n, &entries);
        Ok(Self {
            n,
            entries,
            eta,
            lambda_formula,
            lambda_empirical,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn lambda_formula(&self) -> f64 {
        self.lambda_formula
    }

    pub fn lambda_empirical(&self) -> f64 {
        self.lambda_empirical
    }

    /// `x ↦ xA` for a row vector `x`.
    pub fn left_multiply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
    }

    /// Rows `e_i A^s` for `s = 0..=k`, i.e. row `i` of every power up to `k`.
    pub fn row_powers(&self, i: usize, k: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(k + 1);
        let mut current = vec![0.0; self.n];
        current[i] = 1.0;
        for _ in 0..k {
            let mut next = vec![0.0; self.n];
            self.left_multiply(&current, &mut next);
            out.push(std::mem::replace(&mut current, next));
        }
        out.push(current);
        out
    }
}

/// Largest singular value of `M = A − (1/n)11ᵀ` by power iteration on `MᵀM`.
fn second_singular_value(n: usize, a: &[f64]) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let inv = 1.0 / n as f64;
    // M x = A x − (Σx/n) 1 ; Mᵀ y = Aᵀ y − (Σy/n) 1
    let apply_m = |x: &[f64], y: &mut [f64]| {
        let mean = x.iter().sum::<f64>() * inv;
        for i in 0..n {
            y[i] = a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - mean;
        }
    };
    let apply_mt = |y: &[f64], z: &mut [f64]| {
        let mean = y.iter().sum::<f64>() * inv;
        z.iter_mut().for_each(|v| *v = -mean);
        for i in 0..n {
            for j in 0..n {
                z[j] += a[i * n + j] * y[i];
            }
        }
    };
    // Fixed pseudo-random start, projected off the mean.
    let mut x: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.618_033_988_749_894_9).fract() - 0.5)
        .collect();
    let mean = x.iter().sum::<f64>() * inv;
    x.iter_mut().for_each(|v| *v -= mean);
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..10_000 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        apply_m(&x, &mut y);
        apply_mt(&y, &mut z);
        let next = x.iter().zip(&z).map(|(p, q)| p * q).sum::<f64>();
        std::mem::swap(&mut x, &mut z);
        if (next - estimate).abs() <= 1e-10 * next.max(1e-300) {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate.max(0.0).sqrt()
}

/// Symmetric lazy Metropolis weights: `a_ij = ½ / max(d_i+1, d_j+1)` on edges,
/// diagonal filling each row to one.
pub fn lazy_metropolis(g: &Graph) -> Result<WeightMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.n();
    let mut rows = vec![vec![0.0; n]; n];
    for (u, v) in g.edges() {
        let w = 0.5 / ((g.degree(u) + 1).max(g.degree(v) + 1)) as f64;
        rows[u][v] = w;
        rows[v][u] = w;
    }
    for (i, row) in rows.iter_mut().enumerate() {
        let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, w)| w).sum();
        row[i] = 1.0 - off;
    }
    WeightMatrix::new(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Witness {
    Row { index: usize, sum: f64 },
    Column { index: usize, sum: f64 },
    Entry { i: usize, j: usize, value: f64 },
    Node { index: usize },
    Component { nodes: Vec<usize> },
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub passed: bool,
    pub witnesses: Vec<Witness>,
}

impl ConditionCheck {
    fn from_witnesses(witnesses: Vec<Witness>) -> Self {
        Self {
            passed: witnesses.is_empty(),
            witnesses,
        }
    }
}

/// Per-condition outcome of the mixing-matrix requirements.
#[derive(Debug, Clone, Serialize)]
pub struct WeightValidation {
    /// (a) rows and columns sum to one.
    pub doubly_stochastic: ConditionCheck,
    /// (b) off-diagonal positive entries sit on graph edges.
    pub respects_graph: ConditionCheck,
    /// (c) every diagonal entry is positive.
    pub positive_diagonal: ConditionCheck,
    /// (d) positive entries are at least `eta`, and `eta > 0`.
    pub eta_floor: ConditionCheck,
    /// (e) the graph is connected.
    pub connected: ConditionCheck,
}

impl WeightValidation {
    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|(_, c)| c.passed)
    }

    pub fn checks(&self) -> [(&'static str, &ConditionCheck); 5] {
        [
            ("(a) doubly stochastic", &self.doubly_stochastic),
            ("(b) respects graph", &self.respects_graph),
            ("(c) positive diagonal", &self.positive_diagonal),
            ("(d) eta floor", &self.eta_floor),
            ("(e) connected", &self.connected),
        ]
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks()
            .iter()
            .filter(|(_, c)| !c.passed)
            .map(|(name, c)| format!("{name}: {:?}", c.witnesses))
            .collect()
    }
}

pub fn validate_weights(a: &WeightMatrix, g: &Graph) -> Result<WeightValidation> {
    let n = a.n();
    if n != g.n() {
        return Err(Error::Dimension(format!(
            "weight matrix is {n}×{n} but the graph has {} nodes",
            g.n()
        )));
    }
    let mut stoch = Vec::new();
    for i in 0..n {
        let sum: f64 = a.row(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            stoch.push(Witness::Row { index: i, sum });
        }
    }
    for j in 0..n {
        let sum: f64 = (0..n).map(|i| a.get(i, j)).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            stoch.push(Witness::Column { index: j, sum });
        }
    }
    let mut support = Vec::new();
    let mut floor = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            if i != j && v > 0.0 && !g.has_edge(i, j) {
                support.push(Witness::Entry { i, j, value: v });
            }
            if v > 0.0 && v < a.eta() {
                floor.push(Witness::Entry { i, j, value: v });
            }
        }
    }
    let diagonal = (0..n)
        .filter(|&i| a.get(i, i) <= 0.0)
        .map(|index| Witness::Node { index })
        .collect();
    let connected = components(n, |v| g.neighbors(v).to_vec());
    let connected = if connected.len() == 1 {
        Vec::new()
    } else {
        connected.into_iter().map(|nodes| Witness::Component { nodes }).collect()
    };
    Ok(WeightValidation {
        doubly_stochastic: ConditionCheck::from_witnesses(stoch),
        respects_graph: ConditionCheck::from_witnesses(support),
        positive_diagonal: ConditionCheck::from_witnesses(diagonal),
        eta_floor: ConditionCheck::from_witnesses(floor),
        connected: ConditionCheck::from_witnesses(connected),
    })
}

/// `A^0, A^1, …, A^k` by repeated multiplication.
pub fn matrix_power_rows(a: &WeightMatrix, k: usize) -> Vec<Vec<Vec<f64>>> {
    let n = a.n();
    let mut out = Vec::with_capacity(k + 1);
    let mut current: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..k {
        let next = current
            .iter()
            .map(|row| {
                let mut r = vec![0.0; n];
                a.left_multiply(row, &mut r);
                r
            })
            .collect();
        out.push(std::mem::replace(&mut current, next));
    }
    out.push(current);
    out
}

fn row_deviation(row: &[f64]) -> f64 {
    let inv = 1.0 / row.len() as f64;
    row.iter().map(|x| (x - inv).abs()).sum()
}

/// `Σ_{t=1..k} Σ_j |[A^{k−t}]_ij − 1/n|`.
pub fn consensus_deviation_sum(a: &WeightMatrix, k: usize, i: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    a.row_powers(i, k - 1).iter().map(|r| row_deviation(r)).sum()
}

/// `4 log n / (1 − λ)`.
pub fn deviation_bound(n: usize, lambda: f64) -> f64 {
    4.0 * (n as f64).ln() / (1.0 - lambda)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationViolation {
    pub k: usize,
    pub agent: usize,
    pub value: f64,
    pub bound: f64,
    pub lambda: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub k_max: usize,
    pub bound_formula: f64,
    pub bound_empirical: f64,
    pub max_value: f64,
    /// Largest value/bound ratio, 0 when the bound is 0.
    pub max_ratio_formula: f64,
    pub max_ratio_empirical: f64,
    pub violations: Vec<DeviationViolation>,
}

impl DeviationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the deviation-sum bound for every agent and every `k ≤ k_max`,
/// under both the formula and the measured contraction factor.
pub fn lemma1_check(a: &WeightMatrix, k_max: usize) -> DeviationReport {
    let n = a.n();
    let bound_formula = deviation_bound(n, a.lambda_formula());
    let bound_empirical = deviation_bound(n, a.lambda_empirical());
    let mut report = DeviationReport {
        k_max,
        bound_formula,
        bound_empirical,
        max_value: 0.0,
        max_ratio_formula: 0.0,
        max_ratio_empirical: 0.0,
        violations: Vec::new(),
    };
    let ratio = |v: f64, b: f64| if b > 0.0 { v / b } else if v > 0.0 { f64::INFINITY } else { 0.0 };
    for i in 0..n {
        // running sum: value(k) = value(k−1) + dev(e_i A^{k−1})
        let mut row = vec![0.0; n];
        row[i] = 1.0;
        let mut next = vec![0.0; n];
        let mut value = 0.0;
        for k in 1..=k_max {
            value += row_deviation(&row);
            a.left_multiply(&row, &mut next);
            std::mem::swap(&mut row, &mut next);
            report.max_value = report.max_value.max(value);
            report.max_ratio_formula = report.max_ratio_formula.max(ratio(value, bound_formula));
            report.max_ratio_empirical = report.max_ratio_empirical.max(ratio(value, bound_empirical));
            for (bound, lambda) in [(bound_formula, "formula"), (bound_empirical, "empirical")] {
                if value > bound {
                    report.violations.push(DeviationViolation {
                        k,
                        agent: i,
                        value,
                        bound,
                        lambda,
                    });
                }
            }
        }
    }
    report
}
