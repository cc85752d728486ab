use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{QuerySpec, ReadingSpec, Scenario};
use crate::clock::Envelope;
use crate::error::{Error, Result};
use crate::history::{build_history, constraint_operator, constraint_residual, propagator, HistoryState};
use crate::measurement::{
    build_measured_history, conditional_prob, joint_prob, marginal_prob, multi_time_joint,
    Assignments, Observation,
};
use crate::oracle::{oracle_chain_prob, segment_unitary, HamiltonianSpec};
use crate::tensor::{HermitianEigen, HERMITIAN_TOL, KRAUS_TOL, UNITARY_TOL};

/// Deviation allowed by `verify` before scaling.
pub const VERIFY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub tolerance_scale: f64,
    pub substeps: Option<usize>,
    #[doc(hidden)]
    pub inject_fault: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tolerance_scale: 1.0,
            substeps: None,
            inject_fault: None,
        }
    }
}

impl RunOptions {
    fn substeps(&self, scenario: &Scenario) -> usize {
        self.substeps.unwrap_or(scenario.substeps)
    }

    fn check(&self, scenario: &Scenario) -> Result<()> {
        if !(self.tolerance_scale.is_finite() && self.tolerance_scale > 0.0) {
            return Err(Error::InvalidScenario("tolerance scale must be positive".into()));
        }
        if self.substeps == Some(0) {
            return Err(Error::InvalidScenario("substeps must be positive".into()));
        }
        if let Some(k) = self.inject_fault.filter(|&k| k >= scenario.grid.len()) {
            return Err(Error::InvalidScenario(format!(
                "fault index {k} outside the grid"
            )));
        }
        Ok(())
    }
}

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub manifest: serde_json::Value,
}

impl RunOutput {
    /// Writes every artifact and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for a in &self.artifacts {
            std::fs::write(dir.join(&a.name), &a.contents)?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn outcome_label(scenario: &Scenario, memory: u32, outcome: usize) -> String {
    let event = scenario.schedule.event_for(memory).expect("validated memory");
    if outcome == event.memory.outcomes() {
        "r".into()
    } else {
        outcome.to_string()
    }
}

/// `P(M2=b,M1=a)`, later memories first.
fn column_label(scenario: &Scenario, assignments: &Assignments) -> String {
    let parts: Vec<String> = assignments
        .iter()
        .rev()
        .map(|(&m, &a)| format!("M{m}={}", outcome_label(scenario, m, a)))
        .collect();
    format!("P({})", parts.join(","))
}

struct Csv {
    text: String,
    rows: usize,
}

impl Csv {
    fn new(header: &[String]) -> Self {
        Self {
            text: header.join(",") + "\n",
            rows: 0,
        }
    }

    fn row(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| num(v)).collect();
        let _ = writeln!(self.text, "{}", cells.join(","));
        self.rows += 1;
    }
}

struct QueryResult {
    csv: Csv,
    oracle_deviation: Option<f64>,
}

fn assignments_of(scenario: &Scenario, readings: &[ReadingSpec]) -> Result<Assignments> {
    readings
        .iter()
        .map(|r| Ok((scenario.memory_index(&r.memory)?, r.outcome)))
        .collect()
}

/// Grid indices whose clock weight allows conditioning.
fn usable_indices(history: &HistoryState) -> Vec<usize> {
    let cond = history.tolerances().cond;
    (0..history.grid().len())
        .filter(|&k| history.envelope().weight(k).norm() >= cond)
        .collect()
}

fn oracle(scenario: &Scenario, substeps: usize, asg: &Assignments, t: f64) -> Result<f64> {
    oracle_chain_prob(&scenario.schedule, &scenario.psi0, scenario.t0, asg, t, substeps)
}

fn measured_history(scenario: &Scenario, opts: &RunOptions) -> Result<HistoryState> {
    let mut h = build_measured_history(
        &scenario.schedule,
        &scenario.psi0,
        scenario.t0,
        &scenario.envelope,
        opts.substeps(scenario),
    )?;
    if let Some(k) = opts.inject_fault {
        h.inject_fault(k);
    }
    Ok(h)
}

/// Full outcome strings over recorded outcomes (ready indices excluded).
fn recorded_strings(scenario: &Scenario) -> Vec<Assignments> {
    let mut out = vec![Assignments::new()];
    for e in scenario.schedule.events() {
        out = out
            .into_iter()
            .flat_map(|base| {
                (0..e.memory.outcomes()).map(move |a| {
                    let mut next = base.clone();
                    next.insert(e.memory.index(), a);
                    next
                })
            })
            .collect();
    }
    out
}

fn run_query(
    scenario: &Scenario,
    history: Option<&HistoryState>,
    query: &QuerySpec,
    substeps: usize,
) -> Result<QueryResult> {
    let grid = &scenario.grid;
    match query {
        QuerySpec::ProbVsTime { columns } => {
            let history = history.expect("measured history built");
            let columns: Vec<Assignments> = match columns {
                Some(cols) => cols
                    .iter()
                    .map(|c| assignments_of(scenario, c))
                    .collect::<Result<_>>()?,
                None => scenario
                    .schedule
                    .events()
                    .iter()
                    .flat_map(|e| {
                        (0..e.memory.outcomes())
                            .map(move |a| Assignments::from([(e.memory.index(), a)]))
                    })
                    .collect(),
            };
            let mut header = vec!["t".to_string()];
            header.extend(columns.iter().map(|c| column_label(scenario, c)));
            let mut csv = Csv::new(&header);
            let rows = usable_indices(history)
                .into_par_iter()
                .map(|k| {
                    let t = grid.time(k);
                    let mut row = vec![t];
                    let mut dev = 0.0f64;
                    for c in &columns {
                        let p = marginal_prob(history, c, t)?;
                        dev = dev.max((p - oracle(scenario, substeps, c, t)?).abs());
                        row.push(p);
                    }
                    Ok((row, dev))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut worst = 0.0f64;
            for (row, dev) in rows {
                csv.row(&row);
                worst = worst.max(dev);
            }
            Ok(QueryResult {
                csv,
                oracle_deviation: Some(worst),
            })
        }
        QuerySpec::Joint { times } => {
            let history = history.expect("measured history built");
            let strings = recorded_strings(scenario);
            let mut header = vec!["t".to_string()];
            header.extend(strings.iter().map(|s| column_label(scenario, s)));
            let mut csv = Csv::new(&header);
            let mut worst = 0.0f64;
            for &t in times {
                let tk = grid.time(grid.nearest_index(t)?);
                let mut row = vec![tk];
                for s in &strings {
                    let p = joint_prob(history, s, tk)?;
                    worst = worst.max((p - oracle(scenario, substeps, s, tk)?).abs());
                    row.push(p);
                }
                csv.row(&row);
            }
            Ok(QueryResult {
                csv,
                oracle_deviation: Some(worst),
            })
        }
        QuerySpec::Conditional { later, earlier } => {
            let history = history.expect("measured history built");
            let a = scenario.memory_index(&earlier.memory)?;
            let b = scenario.memory_index(&later.memory)?;
            let t1 = grid.time(grid.nearest_index(earlier.t)?);
            let t2 = grid.time(grid.nearest_index(later.t)?);
            let p = conditional_prob(
                history,
                Observation { memory: b, outcome: later.outcome, time: t2 },
                Observation { memory: a, outcome: earlier.outcome, time: t1 },
            )?;
            let prior = oracle(scenario, substeps, &Assignments::from([(a, earlier.outcome)]), t1)?;
            let both = oracle(
                scenario,
                substeps,
                &Assignments::from([(a, earlier.outcome), (b, later.outcome)]),
                t2,
            )?;
            let label = format!(
                "P(M{b}={}|M{a}={})",
                outcome_label(scenario, b, later.outcome),
                outcome_label(scenario, a, earlier.outcome)
            );
            let mut csv = Csv::new(&["t".to_string(), label]);
            csv.row(&[t2, p]);
            Ok(QueryResult {
                csv,
                oracle_deviation: Some((p - both / prior).abs()),
            })
        }
        QuerySpec::Propagator {
            initial,
            t_initial,
            final_state,
            times,
        } => {
            let i = scenario.state(initial)?;
            let f = scenario.state(final_state)?;
            let spec = scenario.hamiltonian();
            let mut csv = Csv::new(&["t".into(), "re".into(), "im".into()]);
            let mut worst = 0.0f64;
            for &t in times {
                let tk = grid.time(grid.nearest_index(t)?);
                let g = propagator(spec, &i, *t_initial, &f, tk, grid, substeps)?;
                let u = segment_unitary(spec, tk, *t_initial, substeps)?;
                let exact = f.amplitudes().dotc(&(u.matrix() * i.amplitudes()));
                worst = worst.max((g - exact).norm());
                csv.row(&[tk, g.re, g.im]);
            }
            Ok(QueryResult {
                csv,
                oracle_deviation: Some(worst),
            })
        }
        QuerySpec::ResidualSweep { widths } => {
            let (csv, dev) = residual_table(scenario, widths, substeps)?;
            Ok(QueryResult {
                csv,
                oracle_deviation: dev,
            })
        }
    }
}

fn sweep_center(scenario: &Scenario) -> f64 {
    match scenario.file.envelope {
        super::EnvelopeSpec::Gaussian {
            center: Some(c), ..
        } => c,
        _ => 0.5 * (scenario.grid.t_min() + scenario.grid.t_max()),
    }
}

/// Residual table; the deviation is against `1/sqrt(n)` when `H = 0` and
/// otherwise the largest regularized residual.
fn residual_table(scenario: &Scenario, widths: &[f64], substeps: usize) -> Result<(Csv, Option<f64>)> {
    let spec = scenario.hamiltonian();
    let center = sweep_center(scenario);
    let rows = widths
        .par_iter()
        .map(|&n| {
            let env = Envelope::gaussian_at(&scenario.grid, n, center)?;
            let h = build_history(spec, &scenario.psi0, scenario.t0, &env, substeps)?;
            Ok((n, constraint_residual(&h, spec)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let free = is_zero(spec);
    let mut csv = Csv::new(&["n".into(), "residual".into(), "regularized".into()]);
    let mut worst = 0.0f64;
    for (n, r) in &rows {
        csv.row(&[*n, r.plain, r.regularized]);
        let dev = if free { (r.plain - n.sqrt().recip()).abs() } else { r.regularized };
        worst = worst.max(dev);
    }
    Ok((csv, Some(worst)))
}

fn is_zero(spec: &HamiltonianSpec) -> bool {
    match spec {
        HamiltonianSpec::Constant(h) => h.matrix().iter().all(|z| *z == crate::tensor::C64::from(0.0)),
        HamiltonianSpec::TimeDependent(_) => false,
    }
}

/// Runs every query, returning CSV artifacts `NN_type.csv` and a manifest.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutput> {
    opts.check(scenario)?;
    let substeps = opts.substeps(scenario);
    let needs_history = scenario.file.queries.iter().any(|q| {
        matches!(
            q,
            QuerySpec::ProbVsTime { .. } | QuerySpec::Joint { .. } | QuerySpec::Conditional { .. }
        )
    });
    let history = if needs_history {
        Some(measured_history(scenario, opts)?)
    } else {
        None
    };
    let results = scenario
        .file
        .queries
        .par_iter()
        .map(|q| run_query(scenario, history.as_ref(), q, substeps))
        .collect::<Result<Vec<_>>>()?;

    let mut artifacts = Vec::new();
    let mut entries = Vec::new();
    for (i, (q, r)) in scenario.file.queries.iter().zip(results).enumerate() {
        let name = format!("{i:02}_{}.csv", q.kind());
        entries.push(json!({
            "index": i,
            "type": q.kind(),
            "file": name,
            "rows": r.csv.rows,
            "oracle_max_deviation": r.oracle_deviation,
        }));
        artifacts.push(Artifact {
            name,
            contents: r.csv.text,
        });
    }
    let manifest = json!({
        "version": super::SCHEMA_VERSION,
        "grid": {
            "N": scenario.grid.len(),
            "t_min": scenario.grid.t_min(),
            "t_max": scenario.grid.t_max(),
            "dt": scenario.grid.dt(),
        },
        "envelope": scenario.file.envelope,
        "t0": scenario.t0,
        "substeps": substeps,
        "tolerances": tolerances_json(opts),
        "queries": entries,
    });
    Ok(RunOutput {
        artifacts,
        manifest,
    })
}

fn tolerances_json(opts: &RunOptions) -> serde_json::Value {
    let c = crate::history::ConditioningTolerances::default();
    json!({
        "hermitian": HERMITIAN_TOL,
        "unitary": UNITARY_TOL,
        "kraus": KRAUS_TOL,
        "cond": c.cond,
        "null": c.null,
        "eig": c.eig,
        "verify": VERIFY_TOL * opts.tolerance_scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub name: &'static str,
    pub description: &'static str,
    pub checks: usize,
    pub max_deviation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub identities: Vec<IdentityReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.identities.iter().all(|i| i.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for i in &self.identities {
            let _ = writeln!(
                s,
                "{} {:<16} max_dev={:.3e} checks={} ({})",
                if i.passed { "PASS" } else { "FAIL" },
                i.name,
                i.max_deviation,
                i.checks,
                i.description
            );
        }
        let _ = writeln!(
            s,
            "{} tolerance={:.1e}",
            if self.passed() { "OK" } else { "VERIFICATION FAILED" },
            self.tolerance
        );
        s
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    checks: usize,
    worst: f64,
}

impl Acc {
    fn add(&mut self, dev: f64) {
        self.checks += 1;
        // NaN counts as a failure
        self.worst = if dev.is_nan() { f64::INFINITY } else { self.worst.max(dev) };
    }

    fn merge(mut self, other: Acc) -> Acc {
        self.checks += other.checks;
        self.worst = self.worst.max(other.worst);
        self
    }
}

const IDENTITIES: [(&str, &str); 5] = [
    ("joint", "P(b,a|t) from the history vs the Kraus-chain oracle"),
    ("marginal_first", "sum_b P(b,a|t) = P(a|t) = oracle"),
    ("marginal_second", "sum_a P(b,a|t) = P(b|t) = oracle"),
    ("two_time_joint", "P[(b|t''),(a|t')] = P[(b|t'')|(a|t')] P(a|t') = oracle"),
    ("conditional", "P(b,a|t'')/P(a|t') vs the oracle ratio"),
];

/// Checks the two-event probability identities for every ordered pair of
/// events, every outcome pair and every usable grid time.
pub fn verify_report(scenario: &Scenario, opts: &RunOptions) -> Result<VerifyReport> {
    opts.check(scenario)?;
    let events = scenario.schedule.events();
    if events.len() < 2 {
        return Err(Error::InvalidScenario(
            "verification needs at least two measurement events".into(),
        ));
    }
    let substeps = opts.substeps(scenario);
    let history = measured_history(scenario, opts)?;
    let grid = &scenario.grid;
    let usable = usable_indices(&history);
    let floor = history.tolerances().cond.powi(2);

    let mut pairs = Vec::new();
    for i in 0..events.len() {
        for j in i + 1..events.len() {
            pairs.push((i, j));
        }
    }

    let per_time = |k: usize| -> Result<[Acc; 5]> {
        let mut acc = [Acc::default(); 5];
        let t = grid.time(k);
        for &(i, j) in &pairs {
            let (ea, eb) = (&events[i], &events[j]);
            let (ma, mb) = (ea.memory.index(), eb.memory.index());
            let (da, db) = (ea.memory.dim(), eb.memory.dim());
            let mut joint = vec![vec![0.0; db]; da];
            for a in 0..da {
                for b in 0..db {
                    let asg = Assignments::from([(ma, a), (mb, b)]);
                    joint[a][b] = marginal_prob(&history, &asg, t)?;
                    acc[0].add((joint[a][b] - oracle(scenario, substeps, &asg, t)?).abs());
                }
            }
            for a in 0..da {
                let asg = Assignments::from([(ma, a)]);
                let direct = marginal_prob(&history, &asg, t)?;
                let summed: f64 = joint[a].iter().sum();
                let o = oracle(scenario, substeps, &asg, t)?;
                acc[1].add((summed - direct).abs().max((direct - o).abs()));
            }
            for b in 0..db {
                let asg = Assignments::from([(mb, b)]);
                let direct = marginal_prob(&history, &asg, t)?;
                let summed: f64 = (0..da).map(|a| joint[a][b]).sum();
                let o = oracle(scenario, substeps, &asg, t)?;
                acc[2].add((summed - direct).abs().max((direct - o).abs()));
            }

            // two-time identities with t' the first grid time after the first event
            let Some(k1) = grid.first_index_at_or_after(ea.time) else {
                continue;
            };
            if k >= k1 && history.envelope().weight(k1).norm() >= history.tolerances().cond {
                let t1 = grid.time(k1);
                for a in 0..da {
                    let prior_o = oracle(scenario, substeps, &Assignments::from([(ma, a)]), t1)?;
                    if prior_o < floor {
                        continue;
                    }
                    let prior = marginal_prob(&history, &Assignments::from([(ma, a)]), t1)?;
                    for b in 0..db {
                        let both_o = oracle(
                            scenario,
                            substeps,
                            &Assignments::from([(ma, a), (mb, b)]),
                            t,
                        )?;
                        let cond = conditional_prob(
                            &history,
                            Observation { memory: mb, outcome: b, time: t },
                            Observation { memory: ma, outcome: a, time: t1 },
                        );
                        let cond = match cond {
                            Ok(c) => c,
                            Err(Error::NullProbabilityOutcome(_)) => f64::NAN,
                            Err(e) => return Err(e),
                        };
                        acc[4].add((cond - both_o / prior_o).abs());

                        if t >= eb.time && k > k1 {
                            let mtj = two_time(&history, &pairs_obs(ma, a, t1, mb, b, t), events.len())?;
                            acc[3].add((mtj - cond * prior).abs().max((mtj - both_o).abs()));
                        }
                    }
                }
            }
        }
        Ok(acc)
    };

    let accs = usable
        .par_iter()
        .map(|&k| per_time(k))
        .collect::<Result<Vec<_>>>()?;
    let total = accs
        .into_iter()
        .fold([Acc::default(); 5], |mut tot, a| {
            for i in 0..5 {
                tot[i] = tot[i].merge(a[i]);
            }
            tot
        });

    let tolerance = VERIFY_TOL * opts.tolerance_scale;
    let identities = IDENTITIES
        .iter()
        .zip(total)
        .map(|(&(name, description), acc)| IdentityReport {
            name,
            description,
            checks: acc.checks,
            max_deviation: acc.worst,
            passed: acc.worst <= tolerance,
        })
        .collect();
    Ok(VerifyReport {
        tolerance,
        identities,
    })
}

fn pairs_obs(ma: u32, a: usize, t1: f64, mb: u32, b: usize, t2: f64) -> [Observation; 2] {
    [
        Observation { memory: ma, outcome: a, time: t1 },
        Observation { memory: mb, outcome: b, time: t2 },
    ]
}

/// Two-time joint of a pair of memories. With more than two memories the
/// others are summed over.
fn two_time(history: &HistoryState, obs: &[Observation; 2], memories: usize) -> Result<f64> {
    if memories == 2 {
        return multi_time_joint(history, obs);
    }
    let asg = Assignments::from([(obs[0].memory, obs[0].outcome), (obs[1].memory, obs[1].outcome)]);
    marginal_prob(history, &asg, obs[1].time)
}

/// Constraint residuals for Gaussian envelopes of the given widths.
pub fn sweep_residual(scenario: &Scenario, widths: &[f64], opts: &RunOptions) -> Result<Artifact> {
    opts.check(scenario)?;
    if widths.is_empty() || widths.iter().any(|&n| !(n.is_finite() && n > 0.0)) {
        return Err(Error::InvalidScenario("residual sweep widths must be positive".into()));
    }
    let (csv, _) = residual_table(scenario, widths, opts.substeps(scenario))?;
    Ok(Artifact {
        name: "residual_sweep.csv".into(),
        contents: csv.text,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    /// `omega_j + E_m` for a constant Hamiltonian.
    pub predicted: Option<Vec<f64>>,
}

impl SpectrumReport {
    pub fn max_deviation(&self) -> Option<f64> {
        self.predicted.as_ref().map(|p| {
            p.iter()
                .zip(&self.eigenvalues)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["index".into(), "eigenvalue".into(), "predicted".into()]);
        for (i, &e) in self.eigenvalues.iter().enumerate() {
            let p = self.predicted.as_ref().map_or(f64::NAN, |p| p[i]);
            csv.row(&[i as f64, e, p]);
        }
        csv.text
    }
}

/// Eigenvalues of the dense constraint operator of the scenario's system.
pub fn spectrum_report(scenario: &Scenario) -> Result<SpectrumReport> {
    let spec = scenario.hamiltonian();
    let j = constraint_operator(spec, &scenario.grid)?;
    let eigenvalues = HermitianEigen::new(&j)?.sorted_eigenvalues();
    let predicted = match spec {
        HamiltonianSpec::Constant(h) => {
            let energies = HermitianEigen::new(h)?.sorted_eigenvalues();
            let mut p: Vec<f64> = scenario
                .grid
                .frequency_indices()
                .flat_map(|jj| {
                    let w = scenario.grid.frequency(jj);
                    energies.iter().map(move |e| w + e)
                })
                .collect();
            p.sort_by(f64::total_cmp);
            Some(p)
        }
        HamiltonianSpec::TimeDependent(_) => None,
    };
    Ok(SpectrumReport {
        eigenvalues,
        predicted,
    })
}
