//! Command-line front end: TOML scenario files, the five subcommands and
//! report emission.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 configuration
//! error, 3 divergence, 4 inconclusive attack.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adversary::{
    audit_gradient_system, audit_gradient_transcript, audit_state_system, audit_state_transcript, infer_gradient,
    AttackOracle, AttackReport, AuditReport,
};
use crate::engine::{
    random_initial_state, run, LambdaSchedule, MetricRow, Mode, RunOptions, RunOutput, Scenario, StepSizes,
};
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::monitor::{estimates_for, theorem1_admissibility, BindingTerm, ProblemConstants, SurrogateKind};
use crate::objective::{make_sensor_scenario, RNG_FAMILY};
use crate::par::map_cells;
use crate::weights::{ScheduleMode, Scheme, WeightSchedule};

pub const SCHEMA_VERSION: u32 = 1;
pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;
/// Offset between an objective seed and the default initial-state seed.
pub const X1_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub graph: GraphConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub lambda: LambdaConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub attack: AttackConfig,
}

/// Either a named preset or an explicit 1-based edge list.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// `sensor_ring6`, `pair` or `cycle` (with `n`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Uniform,
    Dithered,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default = "default_schedule")]
    pub mode: ScheduleMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_min: Option<f64>,
}

fn default_schedule() -> ScheduleMode {
    ScheduleMode::Static
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Uniform,
            jitter: 0.0,
            mode: ScheduleMode::Static,
            seed: 0,
            a_min: None,
            b_min: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Defaults to the graph size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_d() -> usize {
    3
}
fn default_p() -> usize {
    2
}
fn default_r() -> f64 {
    0.01
}
fn default_seed() -> u64 {
    1
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            n: None,
            d: default_d(),
            p: default_p(),
            r: default_r(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Scalar(f64),
    PerAgent(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub mode: Mode,
    pub alpha: AlphaSpec,
    pub iterations: usize,
    /// Defaults to the objective seed plus 1000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    #[serde(default = "default_e")]
    pub e: f64,
    #[serde(default = "default_m")]
    pub m: f64,
    /// Constant weight factor instead of `1/(k^e + m)`. Testing only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
}

fn default_e() -> f64 {
    0.8
}
fn default_m() -> f64 {
    10.0
}

impl Default for LambdaConfig {
    fn default() -> Self {
        Self {
            e: default_e(),
            m: default_m(),
            constant: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub export_matrices: bool,
    #[serde(default)]
    pub export_transcript: bool,
    /// Iterations covered by the step-size admissibility check.
    #[serde(default = "default_adm_horizon")]
    pub admissibility_horizon: usize,
    #[serde(default)]
    pub surrogate: SurrogateKind,
}

fn default_threshold() -> f64 {
    1e-6
}
fn default_adm_horizon() -> usize {
    2000
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            output_dir: None,
            export_matrices: false,
            export_transcript: false,
            admissibility_horizon: default_adm_horizon(),
            surrogate: SurrogateKind::SpectralRadius,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Each seed sets the objective seed and the initial-state seed (+1000).
    pub seeds: Vec<u64>,
    /// Per-cell iteration cap; defaults to `algorithm.iterations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<ExponentGrid>,
}

/// Step sizes at a fixed `(e, m)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaGrid {
    pub values: Vec<f64>,
    pub e: f64,
    pub m: f64,
}

/// Decay exponents at a fixed `m` and step size.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentGrid {
    pub values: Vec<f64>,
    pub m: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "default_target")]
    pub target: usize,
    #[serde(default = "default_audit_horizon")]
    pub audit_horizon: usize,
}

fn default_target() -> usize {
    1
}
fn default_audit_horizon() -> usize {
    10
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            target: default_target(),
            audit_horizon: default_audit_horizon(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn graph(&self) -> Result<DirectedGraph> {
        let g = &self.graph;
        let graph = match (g.preset.as_deref(), &g.edges) {
            (Some(_), Some(_)) => return Err(Error::config("give either graph.preset or graph.edges, not both")),
            (Some("sensor_ring6"), None) => DirectedGraph::sensor_ring6(),
            (Some("pair"), None) => DirectedGraph::pair(),
            (Some("cycle"), None) => {
                DirectedGraph::cycle(g.n.ok_or_else(|| Error::config("cycle preset needs graph.n"))?)?
            }
            (Some(other), None) => return Err(Error::config(format!("unknown graph preset {other:?}"))),
            (None, Some(edges)) => {
                let n = g.n.ok_or_else(|| Error::config("an edge list needs graph.n"))?;
                let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                DirectedGraph::new(n, &pairs).map_err(|e| Error::config(e.to_string()))?
            }
            (None, None) => return Err(Error::config("graph needs a preset or an edge list")),
        };
        if let Some(n) = g.n {
            if n != graph.n() {
                return Err(Error::config(format!("graph.n = {n} but the graph has {} agents", graph.n())));
            }
        }
        graph.require_strongly_connected()?;
        Ok(graph)
    }

    pub fn x1_seed(&self) -> u64 {
        self.algorithm.x1_seed.unwrap_or(self.objective.seed + X1_SEED_OFFSET)
    }

    pub fn lambda_schedule(&self) -> Result<LambdaSchedule> {
        match self.lambda.constant {
            Some(c) => LambdaSchedule::constant(c),
            None => LambdaSchedule::decaying(self.lambda.e, self.lambda.m),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let graph = self.graph()?;
        let n = graph.n();
        let obj = &self.objective;
        if obj.n.is_some_and(|m| m != n) {
            return Err(Error::config(format!("objective.n = {} but the graph has {n} agents", obj.n.unwrap())));
        }
        let scheme = match self.weights.scheme {
            SchemeName::Uniform => Scheme::Uniform,
            SchemeName::Dithered => Scheme::Dithered {
                jitter: self.weights.jitter,
            },
        };
        let weights = WeightSchedule::new(graph, scheme, self.weights.mode, self.weights.seed)?;
        weights.require_floors(self.weights.a_min, self.weights.b_min)?;
        let ensemble =
            make_sensor_scenario(n, obj.d, obj.p, obj.r, obj.seed).map_err(|e| Error::config(e.to_string()))?;
        let steps = match &self.algorithm.alpha {
            AlphaSpec::Scalar(a) => StepSizes::homogeneous(*a, n),
            AlphaSpec::PerAgent(v) if v.len() != n => {
                return Err(Error::config(format!("alpha lists {} values for {n} agents", v.len())))
            }
            AlphaSpec::PerAgent(v) => StepSizes::new(v.clone()),
        }
        .map_err(|e| Error::config(e.to_string()))?;
        let sc = Scenario {
            weights,
            ensemble,
            mode: self.algorithm.mode,
            steps,
            lambda: self.lambda_schedule()?,
            x1: random_initial_state(n, obj.p, self.x1_seed()),
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Full validation, including the sweep section when present.
    pub fn validate(&self) -> Result<Scenario> {
        if self.algorithm.iterations < 1 {
            return Err(Error::config("algorithm.iterations must be at least 1"));
        }
        if !(self.report.threshold > 0.0) {
            return Err(Error::config("report.threshold must be positive"));
        }
        if let Some(sw) = &self.sweep {
            self.sweep_cells(sw)?;
        }
        let sc = self.scenario()?;
        let n = sc.graph().n();
        if self.attack.target == 0 || self.attack.target > n {
            return Err(Error::config(format!("attack.target {} outside 1..={n}", self.attack.target)));
        }
        Ok(sc)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.objective.seed = seed;
        c.algorithm.x1_seed = Some(seed + X1_SEED_OFFSET);
        c
    }

    fn sweep_cells(&self, sw: &SweepConfig) -> Result<Vec<SweepCell>> {
        if sw.seeds.is_empty() {
            return Err(Error::config("sweep.seeds is empty"));
        }
        let mut cells = Vec::new();
        for &seed in &sw.seeds {
            if let Some(g) = &sw.alpha {
                for &a in &g.values {
                    cells.push(SweepCell { grid: Grid::Alpha, alpha: a, e: g.e, m: g.m, seed });
                }
            }
            if let Some(g) = &sw.e {
                for &e in &g.values {
                    cells.push(SweepCell { grid: Grid::E, alpha: g.alpha, e, m: g.m, seed });
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::config("sweep grid is empty"));
        }
        for c in &cells {
            LambdaSchedule::decaying(c.e, c.m)?;
            StepSizes::homogeneous(c.alpha, 1).map_err(|e| Error::config(e.to_string()))?;
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    Alpha,
    E,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct SweepCell {
    grid: Grid,
    alpha: f64,
    e: f64,
    m: f64,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Converged,
    NotReached,
    Diverged,
}

/// One sweep cell. Column order is the `sweep.csv` header.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub grid: Grid,
    pub alpha: f64,
    pub e: f64,
    pub m: f64,
    pub seed: u64,
    pub status: CellStatus,
    /// First `k` with residual at or below the threshold.
    pub iterations_to_threshold: Option<usize>,
    pub terminal_residual: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicitySummary {
    pub grid: Grid,
    /// `nonincreasing` (α) or `nondecreasing` (e).
    pub expected: &'static str,
    pub points: usize,
    pub seeds: usize,
    pub monotone_seeds: usize,
    pub majority: bool,
    /// Iterations per seed in grid order; unreached cells are `null`.
    pub per_seed: Vec<(u64, Vec<Option<usize>>)>,
}

/// Whether `values` (unreached = ∞) are ordered as required.
pub fn is_monotone(values: &[Option<usize>], nonincreasing: bool) -> bool {
    let key = |v: &Option<usize>| v.unwrap_or(usize::MAX);
    values.windows(2).all(|w| {
        let (a, b) = (key(&w[0]), key(&w[1]));
        if nonincreasing {
            b <= a
        } else {
            b >= a
        }
    })
}

fn summarize(rows: &[SweepRow], grid: Grid, seeds: &[u64]) -> Option<MonotonicitySummary> {
    let nonincreasing = grid == Grid::Alpha;
    let mut per_seed = Vec::new();
    let mut points = 0;
    for &s in seeds {
        let mut cells: Vec<&SweepRow> = rows.iter().filter(|r| r.grid == grid && r.seed == s).collect();
        if cells.is_empty() {
            return None;
        }
        cells.sort_by(|a, b| {
            let (x, y) = if nonincreasing { (a.alpha, b.alpha) } else { (a.e, b.e) };
            x.total_cmp(&y)
        });
        points = cells.len();
        per_seed.push((s, cells.iter().map(|r| r.iterations_to_threshold).collect::<Vec<_>>()));
    }
    let monotone_seeds = per_seed.iter().filter(|(_, v)| is_monotone(v, nonincreasing)).count();
    Some(MonotonicitySummary {
        grid,
        expected: if nonincreasing { "nonincreasing" } else { "nondecreasing" },
        points,
        seeds: per_seed.len(),
        monotone_seeds,
        majority: 2 * monotone_seeds > per_seed.len(),
        per_seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<MonotonicitySummary>,
}

/// Runs every sweep cell (concurrently when enabled); rows come back in grid order.
pub fn sweep(cfg: &Config) -> Result<SweepOutcome> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| Error::config("config has no [sweep] section"))?;
    let cells = cfg.sweep_cells(sw)?;
    let cap = sw.iterations.unwrap_or(cfg.algorithm.iterations);
    let thr = cfg.report.threshold;
    let results = map_cells(&cells, |c| -> Result<SweepRow> {
        let mut cc = cfg.with_seed(c.seed);
        cc.algorithm.alpha = AlphaSpec::Scalar(c.alpha);
        cc.lambda = LambdaConfig { e: c.e, m: c.m, constant: None };
        let sc = cc.scenario()?;
        let opts = RunOptions {
            stop_below: Some(thr),
            ..Default::default()
        };
        let (status, hit, terminal, steps) = match run(&sc, cap, opts) {
            Ok(out) => {
                let hit = out.report.iterations_to(thr);
                let status = if hit.is_some() { CellStatus::Converged } else { CellStatus::NotReached };
                (status, hit, Some(out.report.terminal_residual()), out.report.iterations)
            }
            Err(Error::Divergence { k, .. }) => (CellStatus::Diverged, None, None, k - 1),
            Err(e) => return Err(e),
        };
        Ok(SweepRow {
            grid: c.grid,
            alpha: c.alpha,
            e: c.e,
            m: c.m,
            seed: c.seed,
            status,
            iterations_to_threshold: hit,
            terminal_residual: terminal,
            steps,
        })
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries = [Grid::Alpha, Grid::E]
        .into_iter()
        .filter_map(|g| summarize(&rows, g, &sw.seeds))
        .collect();
    Ok(SweepOutcome { rows, summaries })
}

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub rng_family: &'static str,
    pub command: &'static str,
    pub parallel: bool,
    pub config: Config,
}

impl Header {
    fn new(command: &'static str, cfg: &Config) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            rng_family: RNG_FAMILY,
            command,
            parallel: crate::par::is_parallel(),
            config: cfg.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub iterations: usize,
    pub terminal_residual: f64,
    pub threshold: f64,
    pub iterations_to_threshold: Option<usize>,
    pub x_star: Vec<f64>,
    pub averaging: crate::engine::Averaging,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilitySummary {
    pub surrogate: SurrogateKind,
    pub horizon: usize,
    pub window_start: Option<usize>,
    pub alpha_upper_bound: Option<f64>,
    pub binding: Option<BindingTerm>,
    pub alpha_check: f64,
    pub alpha_ok: bool,
    pub lambda_sum_diverges: bool,
    pub lambda_vanishes: bool,
    pub admissible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportJson {
    pub header: Header,
    pub summary: RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub admissibility: Option<AdmissibilitySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub audits: Vec<AuditReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepJson {
    pub header: Header,
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<MonotonicitySummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditJson {
    pub header: Header,
    pub audits: Vec<AuditReport>,
}

fn summary(cfg: &Config, out: &RunOutput) -> RunSummary {
    let r = &out.report;
    RunSummary {
        mode: r.mode,
        iterations: r.iterations,
        terminal_residual: r.terminal_residual(),
        threshold: cfg.report.threshold,
        iterations_to_threshold: r.iterations_to(cfg.report.threshold),
        x_star: r.x_star.clone(),
        averaging: r.averaging,
    }
}

/// Step-size admissibility for WGT on static weights; `None` otherwise.
pub fn admissibility(cfg: &Config, sc: &Scenario) -> Result<Option<AdmissibilitySummary>> {
    if sc.mode != Mode::Wgt || !sc.weights.is_static() || cfg.report.admissibility_horizon == 0 {
        return Ok(None);
    }
    let horizon = cfg.report.admissibility_horizon;
    let ests = estimates_for(sc, horizon, cfg.report.surrogate)?;
    let consts = ProblemConstants::of(sc)?;
    let rep = theorem1_admissibility(&ests, &consts, &sc.lambda, sc.steps.alpha_check());
    Ok(Some(AdmissibilitySummary {
        surrogate: rep.surrogate,
        horizon,
        window_start: rep.window_start,
        alpha_upper_bound: rep.alpha_upper_bound,
        binding: rep.binding,
        alpha_check: rep.alpha_check,
        alpha_ok: rep.alpha_ok,
        lambda_sum_diverges: rep.lambda_sum_diverges,
        lambda_vanishes: rep.lambda_vanishes,
        admissible: rep.admissible(),
    }))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `report.csv` with header `k,residual,consensus_error,tracking_error,lambda_k`.
pub fn write_report_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_matrix(path: &Path, m: &crate::linalg::Mat) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn export_extras(cfg: &Config, sc: &Scenario, out: &RunOutput, dir: &Path) -> Result<()> {
    if cfg.report.export_matrices {
        let (a, b) = sc.weights.matrices_at(1);
        write_matrix(&dir.join("A.csv"), &a)?;
        write_matrix(&dir.join("B.csv"), &b)?;
    }
    if cfg.report.export_transcript {
        if let Some(t) = &out.transcript {
            write_json(&dir.join("transcript.json"), t)?;
        }
    }
    Ok(())
}

/// Result of a subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Inconclusive,
}

fn out_dir(cfg: &Config, flag: Option<&Path>) -> Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.report.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn run_command(cfg: &Config, dir: &Path) -> Result<ReportJson> {
    let sc = cfg.validate()?;
    let out = run(
        &sc,
        cfg.algorithm.iterations,
        RunOptions {
            record_transcript: cfg.report.export_transcript,
            ..Default::default()
        },
    )?;
    write_report_csv(&dir.join("report.csv"), &out.report.rows)?;
    export_extras(cfg, &sc, &out, dir)?;
    let report = ReportJson {
        header: Header::new("run", cfg),
        summary: summary(cfg, &out),
        admissibility: admissibility(cfg, &sc)?,
        attack: None,
        audits: Vec::new(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn sweep_command(cfg: &Config, dir: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let outcome = sweep(cfg)?;
    write_rows(&dir.join("sweep.csv"), &outcome.rows)?;
    write_json(
        &dir.join("sweep.json"),
        &SweepJson {
            header: Header::new("sweep", cfg),
            rows: outcome.rows.clone(),
            summaries: outcome.summaries.clone(),
        },
    )?;
    Ok(outcome)
}

fn transcript_audits(cfg: &Config, sc: &Scenario, out: &RunOutput, target: usize) -> Result<Vec<AuditReport>> {
    let t = out.transcript.as_ref().expect("transcript recorded");
    let p = t.p;
    let horizon = cfg.attack.audit_horizon.min(t.len()).max(1);
    let mut audits = Vec::new();
    if horizon >= 2 {
        audits.push(audit_state_system(horizon, p)?.report);
    }
    audits.push(audit_gradient_system(horizon, p)?.report);
    if sc.mode == Mode::Wgt && horizon >= 2 {
        audits.push(audit_state_transcript(t, target, horizon)?.report);
    }
    // the attacker's working assumption y^{K+1} ≈ 0
    let zeros = vec![0.0; p];
    audits.push(audit_gradient_transcript(t, target, horizon, |k| sc.tracker_weight(k), &zeros)?.report);
    Ok(audits)
}

pub fn attack_command(cfg: &Config, dir: &Path, target: usize) -> Result<(ReportJson, Outcome)> {
    let sc = cfg.validate()?;
    let n = sc.graph().n();
    if target == 0 || target > n {
        return Err(Error::config(format!("target agent {target} outside 1..={n}")));
    }
    let k = cfg.algorithm.iterations;
    let out = run(&sc, k, RunOptions { record_transcript: true, ..Default::default() })?;
    let t = out.transcript.as_ref().expect("transcript recorded");
    let oracle = AttackOracle {
        final_state: &out.final_state,
        ensemble: &sc.ensemble,
        tracker_weight: sc.tracker_weight(k + 1),
    };
    let attack = infer_gradient(t, target, &oracle)?;
    let outcome = if attack.inconclusive() { Outcome::Inconclusive } else { Outcome::Done };
    let audits = transcript_audits(cfg, &sc, &out, target)?;
    write_report_csv(&dir.join("report.csv"), &out.report.rows)?;
    export_extras(cfg, &sc, &out, dir)?;
    let report = ReportJson {
        header: Header::new("attack", cfg),
        summary: summary(cfg, &out),
        admissibility: None,
        attack: Some(attack),
        audits,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok((report, outcome))
}

/// Symbolic audits at `attack.audit_horizon` plus numeric audits on a
/// transcript of that many iterations.
pub fn audit_command(cfg: &Config, dir: &Path, target: usize) -> Result<Vec<AuditReport>> {
    let sc = cfg.validate()?;
    let n = sc.graph().n();
    if target == 0 || target > n {
        return Err(Error::config(format!("target agent {target} outside 1..={n}")));
    }
    let k = cfg.attack.audit_horizon.max(1);
    let out = run(&sc, k, RunOptions { record_transcript: true, ..Default::default() })?;
    let audits = transcript_audits(cfg, &sc, &out, target)?;
    write_json(&dir.join("audit.json"), &AuditJson { header: Header::new("audit", cfg), audits: audits.clone() })?;
    Ok(audits)
}

#[derive(Debug, Parser)]
#[command(name = "wgtrack", version, about = "Weighted gradient tracking simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory (overrides report.output_dir).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Objective seed; the initial state uses seed + 1000.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Residual threshold for iterations-to-threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write report.csv / report.json.
    Run(Common),
    /// Run the [sweep] grid and write sweep.csv / sweep.json.
    Sweep(Common),
    /// Run, then attack the recorded transcript.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Target agent (1-based); defaults to attack.target.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Equation-system audits for the target agent.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<usize>,
    },
    /// Parse and check a config without running it.
    Validate(Common),
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Schedule { .. } | Error::Domain(_) => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Io(_) | Error::Numerical(_) | Error::Audit(_) => EXIT_IO,
    }
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = Config::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(t) = common.threshold {
        cfg.report.threshold = t;
    }
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Run(c) => {
            let cfg = load(&c)?;
            let dir = out_dir(&cfg, c.out.as_deref())?;
            let rep = run_command(&cfg, &dir)?;
            eprintln!(
                "{} iterations, terminal residual {:e}, threshold reached at {:?}",
                rep.summary.iterations, rep.summary.terminal_residual, rep.summary.iterations_to_threshold
            );
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            let dir = out_dir(&cfg, c.out.as_deref())?;
            let sw = sweep_command(&cfg, &dir)?;
            for s in &sw.summaries {
                eprintln!(
                    "{:?}: {} in {}/{} seeds",
                    s.grid, s.expected, s.monotone_seeds, s.seeds
                );
            }
        }
        Command::Attack { common, target } => {
            let cfg = load(&common)?;
            let dir = out_dir(&cfg, common.out.as_deref())?;
            let (rep, outcome) = attack_command(&cfg, &dir, target.unwrap_or(cfg.attack.target))?;
            if let Some(a) = &rep.attack {
                eprintln!(
                    "{} agent {}: relative error {:e}{}",
                    a.mode,
                    a.target,
                    a.relative_error,
                    if a.converged { "" } else { " (messages not stabilized: inconclusive)" }
                );
            }
            return Ok(outcome);
        }
        Command::Audit { common, target } => {
            let cfg = load(&common)?;
            let dir = out_dir(&cfg, common.out.as_deref())?;
            for a in audit_command(&cfg, &dir, target.unwrap_or(cfg.attack.target))? {
                eprintln!(
                    "{} ({:?}): {} equations, {} unknowns, nullity {}",
                    a.system, a.source, a.equations, a.unknowns, a.nullity
                );
            }
        }
        Command::Validate(c) => {
            let cfg = load(&c)?;
            let sc = cfg.validate()?;
            eprintln!(
                "ok: {} agents, {} edges, mode {}, L = {:.4}, mu = {:.4}",
                sc.graph().n(),
                sc.graph().edge_count(),
                sc.mode,
                sc.ensemble.lipschitz(),
                sc.ensemble.mu()
            );
        }
    }
    Ok(Outcome::Done)
}

/// Parses `args` (including the program name) and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Inconclusive) => EXIT_INCONCLUSIVE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
