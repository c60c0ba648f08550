//! Subcommand bodies. Each one validates everything it needs before it
//! computes, and writes its files only after the computation succeeded.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use belieflab::bounds::{lemma2_mc, lemma3_check, lemma4_mc, tail_chain, BoundReport};
use belieflab::hypothesis::{gamma, LikelihoodModel};
use belieflab::network::{validate_weights, Graph};
use belieflab::sampling::sample_history;
use belieflab::scenario::{
    build_localization, concentration_time, mc_concentration, rate_slope, run, write_summary_csv,
    write_trace_csv, Trace,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Check, Covering, Prepared};

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Verification(Vec<String>),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
            Self::Verification(_) => 4,
        }
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;

pub trait ResultExt<T> {
    fn config(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for std::result::Result<T, E> {
    fn config(self) -> Outcome<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Files produced by a command, written together once every one is rendered.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(&'static str, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: &'static str, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    fn add_json<T: Serialize>(&mut self, name: &'static str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Each file goes to a temporary name in `dir` and is renamed into place.
    pub fn write(self, dir: &Path) -> Result<Vec<PathBuf>> {
        if self.files.is_empty() {
            return Ok(Vec::new());
        }
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let target = dir.join(name);
            let mut builder = tempfile::Builder::new();
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                builder.permissions(std::fs::Permissions::from_mode(0o644));
            }
            let mut tmp = builder.tempfile_in(dir)?;
            tmp.write_all(&bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(&target).map_err(|e| e.error).with_context(|| format!("cannot write {}", target.display()))?;
            written.push(target);
        }
        Ok(written)
    }
}

/// What a command reports on stdout and writes to disk.
pub struct Report {
    pub lines: Vec<String>,
    pub artifacts: Artifacts,
    pub failures: Vec<String>,
}

fn trace_files(trace: &Trace, artifacts: &mut Artifacts) -> Result<()> {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf)?;
    artifacts.add("trace.csv", buf);
    let mut buf = Vec::new();
    write_summary_csv(trace, &mut buf)?;
    artifacts.add("summary.csv", buf);
    Ok(())
}

fn final_beliefs(trace: &Trace, agent: usize) -> Vec<f64> {
    trace.final_snapshot().log_beliefs[agent].iter().map(|l| l.exp()).collect()
}

fn argmax(values: &[f64]) -> usize {
    values.iter().enumerate().fold(0, |best, (i, v)| if *v > values[best] { i } else { best })
}

pub fn run_cmd(p: &Prepared) -> Outcome<Report> {
    let scenario = &p.scenario;
    let sigma = p.config.bounds.as_ref().map_or(0.1, |b| b.sigma);
    let trace = run(scenario, p.config.seed, &p.config.trace).runtime()?;
    let mut balls = Vec::new();
    for (b, ball) in scenario.balls().iter().enumerate() {
        balls.push(json!({
            "name": ball.name,
            "members": ball.members.len(),
            "final_min_mass": trace.min_ball_mass(b, trace.horizon()),
            "concentration_time": concentration_time(&trace, b, sigma),
        }));
    }
    let mut rates = Vec::new();
    if let Some(w) = &p.config.rates {
        let model = scenario.model();
        for theta in (0..model.n_hypotheses()).filter(|&t| t != model.theta_star()) {
            let g = gamma(model, theta).runtime()?;
            if g < w.min_gamma {
                continue;
            }
            let s = rate_slope(&trace, theta, w.k_min, w.k_max).runtime()?;
            rates.push(json!({ "theta": theta, "gamma": g, "slope": s.slope, "per_agent": s.per_agent }));
        }
    }
    let n = scenario.model().n_agents();
    let estimates: Vec<usize> = (0..n).map(|i| argmax(&final_beliefs(&trace, i))).collect();
    let summary = json!({
        "seed": p.config.seed,
        "horizon": trace.horizon(),
        "theta_star": trace.theta_star,
        "sigma": sigma,
        "balls": balls,
        "rate_slopes": rates,
        "final_consensus_gap": trace.consensus_gap[trace.horizon()],
        "max_drift": trace.max_drift,
        "map_estimates": estimates,
        "warnings": p.warnings,
    });
    let mut artifacts = Artifacts::default();
    trace_files(&trace, &mut artifacts).runtime()?;
    artifacts.add_json("summary.json", &summary).runtime()?;
    let mut lines = vec![format!(
        "simulated {} steps, final consensus gap {:.3e}, MAP estimates {:?} (truth {})",
        trace.horizon(),
        trace.consensus_gap[trace.horizon()],
        estimates,
        trace.theta_star
    )];
    for b in &balls {
        lines.push(format!("ball {}: concentration time {}", b["name"], b["concentration_time"]));
    }
    Ok(Report { lines, artifacts, failures: Vec::new() })
}

fn fmt_opt(v: Option<u64>) -> String {
    v.map_or_else(|| "not reached".into(), |x| x.to_string())
}

fn bound_lines(r: &BoundReport) -> Vec<String> {
    let mut lines = vec![
        format!("N1_min = {}", fmt_opt(r.n1_min)),
        format!("N2_min = {}", fmt_opt(r.n2_min)),
        format!("N = {}", fmt_opt(r.n)),
        format!("log C2 = {:.6} (log scale)", r.log_c2),
    ];
    if let Some(c) = r.log_c1 {
        lines.push(format!("log C1 = {c:.6} (log scale)"));
    }
    if let Some(c) = r.log_c3 {
        lines.push(format!("log C3 = {c:.6} (log scale)"));
    }
    if !r.reached() {
        lines.push(format!(
            "not reached by k_max = {}: log margins N1 {:.3}, N2 {:.3}",
            r.k_max, r.n1_log_margin_at_k_max, r.n2_log_margin_at_k_max
        ));
    }
    lines.extend(r.notes.iter().map(|n| format!("note: {n}")));
    lines
}

pub fn bounds_cmd(p: &Prepared) -> Outcome<Report> {
    let b = p.bounds().config()?;
    let mut artifacts = Artifacts::default();
    artifacts
        .add_json("bounds.json", &json!({ "params": b.params, "report": b.report }))
        .runtime()?;
    Ok(Report { lines: bound_lines(&b.report), artifacts, failures: Vec::new() })
}

pub fn covering_cmd(p: &Prepared) -> Outcome<Report> {
    let b = p.bounds().config()?;
    let mut artifacts = Artifacts::default();
    let lines = match &b.covering {
        Covering::Kl(c) => {
            artifacts.add_json("covering.json", c).runtime()?;
            vec![
                format!("KL covering with radii {:?}", c.radii),
                format!("inner ball {:?}", c.inner),
                format!("band sizes {:?}, overflow {}", c.cardinalities(), c.overflow.len()),
            ]
        }
        Covering::Hellinger(c) => {
            artifacts.add_json("covering.json", c).runtime()?;
            vec![
                format!("Hellinger covering with radii {:?}", c.radii),
                format!("inner ball holds {} points", c.inner.len()),
                format!("band sizes {:?}", c.bands.iter().map(|b| b.members.len()).collect::<Vec<_>>()),
                format!("net sizes {:?} at deltas {:?}", c.net_sizes(), c.deltas()),
            ]
        }
    };
    Ok(Report { lines, artifacts, failures: Vec::new() })
}

struct CheckResult {
    name: &'static str,
    passed: bool,
    detail: String,
    report: Value,
}

fn to_value<T: Serialize>(v: &T) -> Outcome<Value> {
    serde_json::to_value(v).runtime()
}

/// Sets compared by the density check: each tracked ball, the concentration
/// ball and its complement.
fn density_sets(p: &Prepared) -> Vec<(String, Vec<usize>)> {
    let m = p.scenario.model().n_hypotheses();
    let mut sets: Vec<(String, Vec<usize>)> =
        p.scenario.balls().iter().map(|b| (b.name.clone(), b.members.clone())).collect();
    if let Some(b) = &p.bounds {
        let outside: Vec<usize> = (0..m).filter(|t| !b.ball.contains(t)).collect();
        sets.push(("ball".into(), b.ball.clone()));
        sets.push(("complement".into(), outside));
    }
    sets.retain(|(_, s)| !s.is_empty());
    sets
}

fn shared_prior(p: &Prepared) -> Option<&[f64]> {
    let priors = p.scenario.priors();
    priors.iter().all(|row| row == &priors[0]).then(|| priors[0].as_slice())
}

/// Rejects checks that cannot run on this config, before any computation.
fn plan_checks(p: &Prepared) -> Outcome<Vec<Check>> {
    let checks = p.config.mc.checks();
    let grid = p.scenario.space().dimension().is_some();
    for &c in &checks {
        let needs_bounds = c != Check::DensityComparison;
        if needs_bounds && p.bounds.is_none() {
            return Err(Failure::Config(anyhow!("check {} needs a `bounds` section", c.name())));
        }
        match c {
            Check::TailProbability if grid => {
                return Err(Failure::Config(anyhow!("check tail-probability needs a countable model")))
            }
            Check::NetCells if !grid => {
                return Err(Failure::Config(anyhow!("check net-cells needs a grid model")))
            }
            Check::DensityComparison | Check::NetCells if shared_prior(p).is_none() => {
                return Err(Failure::Config(anyhow!("check {} needs one prior shared by every agent", c.name())))
            }
            Check::DensityComparison if density_sets(p).is_empty() => {
                return Err(Failure::Config(anyhow!("check density-comparison needs a ball or a bounds section")))
            }
            _ => {}
        }
    }
    Ok(checks)
}

fn transient_time(p: &Prepared) -> Outcome<u64> {
    let b = p.bounds().config()?;
    b.report.n.ok_or_else(|| {
        Failure::Verification(vec![format!("transient time not reached by k_max = {}", b.report.k_max)])
    })
}

fn check_concentration(p: &Prepared, seed: u64) -> Outcome<CheckResult> {
    let b = p.bounds().config()?;
    let n_big = transient_time(p)?;
    let steps = (n_big as usize).min(p.config.mc.max_steps);
    let trials = p.config.mc.trials;
    let mc = mc_concentration(&p.scenario, &b.ball, b.params.sigma, steps, trials, seed).runtime()?;
    let se = mc.std_error_at(b.params.rho);
    let passed = mc.failure_frequency <= b.params.rho + 3.0 * se;
    Ok(CheckResult {
        name: "concentration",
        passed,
        detail: format!(
            "{} of {trials} trials below 1 - sigma at k = {steps} (N = {n_big}); frequency {:.4} vs rho {} + 3 SE {:.4}",
            mc.failures,
            mc.failure_frequency,
            b.params.rho,
            3.0 * se
        ),
        report: to_value(&mc)?,
    })
}

fn check_tail_chain(p: &Prepared, seed: u64) -> Outcome<CheckResult> {
    let b = p.bounds().config()?;
    let n_big = transient_time(p)? as usize;
    let model = p.scenario.model();
    let outside: Vec<usize> = (0..model.n_hypotheses()).filter(|t| !b.ball.contains(t)).collect();
    let mu0 = p.scenario.initial_state();
    let count = p.config.mc.chain_trajectories;
    let mut holds = 0;
    let mut first_failure = None;
    for trial in 0..count as u64 {
        let h = sample_history(model, seed, trial, n_big);
        let rep = tail_chain(model, p.scenario.weights(), &mu0, &h, n_big, &outside, b.params.epsilon).runtime()?;
        if rep.holds() {
            holds += 1;
        } else if first_failure.is_none() {
            first_failure = Some(to_value(&rep)?);
        }
    }
    Ok(CheckResult {
        name: "tail-chain",
        passed: holds == count,
        detail: format!("chain holds on {holds} of {count} trajectories at k = {n_big}"),
        report: json!({ "k": n_big, "trajectories": count, "holds": holds, "first_failure": first_failure }),
    })
}

fn check_tail_probability(p: &Prepared, seed: u64) -> Outcome<CheckResult> {
    let Covering::Kl(cov) = &p.bounds().config()?.covering else {
        return Err(Failure::Config(anyhow!("tail-probability needs a KL covering")));
    };
    let mut reports = Vec::new();
    let mut parts = Vec::new();
    let mut passed = true;
    for (j, &k) in p.config.mc.tail_k.iter().enumerate() {
        let rep = lemma2_mc(p.scenario.model(), cov, k, p.config.mc.trials, seed + j as u64).runtime()?;
        passed &= rep.passed;
        parts.push(format!(
            "k={k}: {:.4} vs {}{:.4}",
            rep.empirical,
            if rep.vacuous { "vacuous " } else { "" },
            rep.bound
        ));
        reports.push(rep);
    }
    Ok(CheckResult { name: "tail-probability", passed, detail: parts.join(", "), report: to_value(&reports)? })
}

fn check_density(p: &Prepared, seed: u64) -> Outcome<CheckResult> {
    let model = p.scenario.model();
    let prior = shared_prior(p).ok_or_else(|| Failure::Config(anyhow!("priors differ across agents")))?;
    let k = p.config.mc.density_k;
    // with one agent the comparison only holds once the prior mass of the set is divided out
    let single = model.n_agents() == 1;
    let mut checked = 0;
    let mut failed = 0;
    let mut min_slack = f64::INFINITY;
    for trial in 0..p.config.mc.density_histories as u64 {
        let h = sample_history(model, seed, trial, k);
        for (_, set) in density_sets(p) {
            let rep = lemma3_check(model, p.scenario.weights(), &set, prior, &h, k).runtime()?;
            checked += 1;
            let ok = if single { rep.corrected_passed } else { rep.passed };
            failed += (!ok) as usize;
            let slack = rep
                .agents
                .iter()
                .map(|a| if single { a.corrected_slack } else { a.slack })
                .fold(f64::INFINITY, f64::min);
            min_slack = min_slack.min(slack);
        }
    }
    let form = if single { "with the prior-mass factor" } else { "as stated" };
    Ok(CheckResult {
        name: "density-comparison",
        passed: failed == 0,
        detail: format!("{failed} of {checked} comparisons fail ({form}); min slack {min_slack:.4}"),
        report: json!({ "k": k, "checked": checked, "failed": failed, "min_slack": min_slack, "single_agent": single }),
    })
}

fn check_net_cells(p: &Prepared, seed: u64) -> Outcome<CheckResult> {
    let b = p.bounds().config()?;
    let Covering::Hellinger(cov) = &b.covering else {
        return Err(Failure::Config(anyhow!("net-cells needs a Hellinger covering")));
    };
    let prior = shared_prior(p).ok_or_else(|| Failure::Config(anyhow!("priors differ across agents")))?;
    let inner = b.params.inner_radius.expect("grid bounds carry an inner radius");
    let mc = &p.config.mc;
    let rep = lemma4_mc(
        p.scenario.model(),
        p.scenario.weights(),
        cov,
        prior,
        inner,
        mc.cells_k,
        mc.trials,
        seed,
        mc.cells_sampling,
    )
    .runtime()?;
    Ok(CheckResult {
        name: "net-cells",
        passed: rep.passed(),
        detail: format!(
            "{} of {} asserted cell bounds fail at k = {} ({} cells vacuous)",
            rep.failures,
            rep.asserted,
            rep.k,
            rep.cells.len() - rep.asserted
        ),
        report: to_value(&rep)?,
    })
}

pub fn mc_verify_cmd(p: &Prepared) -> Outcome<Report> {
    let checks = plan_checks(p)?;
    let seed = p.config.seed;
    let mut results = Vec::new();
    for (j, &c) in checks.iter().enumerate() {
        // distinct root seeds keep the checks' streams apart
        let s = seed.wrapping_add(1000 * j as u64);
        log::info!("running check {}", c.name());
        let r = match c {
            Check::Concentration => check_concentration(p, s),
            Check::TailChain => check_tail_chain(p, s),
            Check::TailProbability => check_tail_probability(p, s),
            Check::DensityComparison => check_density(p, s),
            Check::NetCells => check_net_cells(p, s),
        };
        match r {
            Ok(r) => results.push(r),
            Err(Failure::Verification(msgs)) => results.push(CheckResult {
                name: c.name(),
                passed: false,
                detail: msgs.join("; "),
                report: Value::Null,
            }),
            Err(e) => return Err(e),
        }
    }
    let lines = results
        .iter()
        .map(|r| format!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail))
        .collect();
    let failures = results.iter().filter(|r| !r.passed).map(|r| format!("{}: {}", r.name, r.detail)).collect();
    let doc = json!({
        "seed": seed,
        "trials": p.config.mc.trials,
        "checks": results
            .iter()
            .map(|r| json!({ "name": r.name, "passed": r.passed, "detail": r.detail, "report": r.report }))
            .collect::<Vec<_>>(),
    });
    let mut artifacts = Artifacts::default();
    artifacts.add_json("verify.json", &doc).runtime()?;
    Ok(Report { lines, artifacts, failures })
}

pub fn validate_cmd(p: &Prepared) -> Outcome<Report> {
    let s = &p.scenario;
    let v = validate_weights(s.weights(), s.graph()).runtime()?;
    let mut lines = vec![
        format!(
            "{} agents, {} hypotheses, truth {}",
            s.model().n_agents(),
            s.model().n_hypotheses(),
            s.model().theta_star()
        ),
        format!(
            "weights pass every check: {}; lambda formula {:.6}, empirical {:.6}",
            v.all_passed(),
            s.weights().lambda_formula(),
            s.weights().lambda_empirical()
        ),
        format!("alpha {:.6e}, epsilon {:.6e}", s.alpha(), s.epsilon()),
    ];
    if let Some(b) = &p.bounds {
        lines.push(format!("transient time N = {}", fmt_opt(b.report.n)));
    }
    lines.extend(p.warnings.iter().map(|w| format!("warning: {w}")));
    Ok(Report { lines, artifacts: Artifacts::default(), failures: Vec::new() })
}

/// The built-in 9×9 source-localization demo on a 3-agent ring.
pub fn demo_localization() -> (belieflab::scenario::LocalizationSpec, Graph) {
    use belieflab::hypothesis::Grid;
    use belieflab::scenario::{LocalizationSpec, Noise};
    let spec = LocalizationSpec {
        positions: vec![[1.3, 2.1], [7.6, 1.4], [4.2, 8.3]],
        grid: Grid::new(vec![(0.0, 9.0), (0.0, 9.0)], vec![9, 9]).expect("valid grid"),
        source: [5.5, 4.5],
        noise: Noise::discretized_gaussian(0.5, 0.25, 1.0).expect("valid noise"),
        bin_width: 0.5,
        floor: 1e-4,
    };
    (spec, Graph::ring(3).expect("valid ring"))
}

fn localization_map(trace: &Trace, model: &LikelihoodModel, points: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["agent", "x", "y", "belief"])?;
    for i in 0..model.n_agents() {
        for (t, b) in final_beliefs(trace, i).iter().enumerate() {
            w.write_record([i.to_string(), points[t][0].to_string(), points[t][1].to_string(), b.to_string()])?;
        }
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

/// Runs a localization scenario and reports each agent's source estimate.
/// Without a config the built-in demo is used.
pub fn localize_cmd(p: Option<&Prepared>, seed: u64, horizon: usize) -> Outcome<Report> {
    let owned;
    let (scenario, seed, trace_cfg) = match p {
        Some(p) => {
            if p.scenario.space().grid().is_none() {
                return Err(Failure::Config(anyhow!("localize-demo needs a localization model")));
            }
            (&p.scenario, p.config.seed, p.config.trace)
        }
        None => {
            let (spec, graph) = demo_localization();
            owned = build_localization(&spec, graph, horizon).config()?;
            (&owned, seed, Default::default())
        }
    };
    let grid = scenario.space().grid().expect("checked above");
    let points = grid.points();
    let trace = run(scenario, seed, &trace_cfg).runtime()?;
    let model = scenario.model();
    let truth = &points[model.theta_star()];
    let mut lines = Vec::new();
    let mut agents = Vec::new();
    for i in 0..model.n_agents() {
        let beliefs = final_beliefs(&trace, i);
        let best = argmax(&beliefs);
        let err = ((points[best][0] - truth[0]).powi(2) + (points[best][1] - truth[1]).powi(2)).sqrt();
        lines.push(format!(
            "agent {i}: estimate ({:.2}, {:.2}) with belief {:.4}, error {err:.3}",
            points[best][0], points[best][1], beliefs[best]
        ));
        agents.push(json!({ "agent": i, "estimate": points[best], "belief": beliefs[best], "error": err }));
    }
    lines.insert(0, format!("source at ({:.2}, {:.2}) after {} steps", truth[0], truth[1], trace.horizon()));
    let mut artifacts = Artifacts::default();
    trace_files(&trace, &mut artifacts).runtime()?;
    artifacts.add("localization.csv", localization_map(&trace, model, &points).runtime()?);
    artifacts
        .add_json(
            "localization.json",
            &json!({ "seed": seed, "horizon": trace.horizon(), "source": truth, "agents": agents }),
        )
        .runtime()?;
    Ok(Report { lines, artifacts, failures: Vec::new() })
}
