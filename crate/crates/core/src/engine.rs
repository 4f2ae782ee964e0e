//! AB gradient tracking and weighted gradient tracking (WGT).
//!
//! Both algorithms are simulated as explicit message passing: every
//! iteration each agent puts one state-type and one tracker-type message on
//! each outgoing edge, then aggregates its own term with the messages it
//! received. The [`Transcript`] is exactly that set of messages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::linalg::{Mat, Vector};
use crate::objective::ObjectiveEnsemble;
use crate::weights::{phi_static, WeightSchedule};

/// Runs abort once the relative residual exceeds this.
pub const DIVERGENCE_RESIDUAL: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// AB / push-pull baseline.
    Ab,
    /// Weighted gradient tracking.
    Wgt,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Ab => "AB",
            Mode::Wgt => "WGT",
        })
    }
}

/// Weight factor `λ_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// `λ_k = 1 / (k^e + m)`
    Decaying { e: f64, m: f64 },
    /// `λ_k ≡ c`. Testing only: the tracker never forgets the gradient.
    Constant { c: f64 },
}

impl LambdaSchedule {
    pub fn decaying(e: f64, m: f64) -> Result<Self> {
        if !(e > 0.0) || !(m >= 0.0) || !e.is_finite() || !m.is_finite() {
            return Err(Error::config(format!("need e > 0 and m >= 0, got e = {e}, m = {m}")));
        }
        Ok(LambdaSchedule::Decaying { e, m })
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::config(format!("constant weight factor must be positive, got {c}")));
        }
        Ok(LambdaSchedule::Constant { c })
    }

    /// `λ_k` for `k >= 1`.
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            LambdaSchedule::Decaying { e, m } => 1.0 / ((k as f64).powf(e) + m),
            LambdaSchedule::Constant { c } => c,
        }
    }

    /// Whether `Σ λ_k` diverges.
    pub fn sum_diverges(&self) -> bool {
        match *self {
            LambdaSchedule::Decaying { e, .. } => e <= 1.0,
            LambdaSchedule::Constant { .. } => true,
        }
    }

    /// Whether `λ_k → 0`.
    pub fn vanishes(&self) -> bool {
        matches!(self, LambdaSchedule::Decaying { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSizes {
    alphas: Vec<f64>,
}

impl StepSizes {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::config("step sizes must be positive and finite"));
        }
        Ok(Self { alphas })
    }

    pub fn homogeneous(alpha: f64, n: usize) -> Result<Self> {
        Self::new(vec![alpha; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// `max_i α_i`
    pub fn alpha_check(&self) -> f64 {
        self.alphas.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.alphas.iter().all(|a| *a == self.alphas[0])
    }
}

/// Stacked states `x` and trackers `y` (row `i` belongs to agent `i + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub k: usize,
    pub x: Mat,
    pub y: Mat,
}

impl NetworkState {
    /// Iteration-1 state: `y¹ = w₁ ∇F(x¹)` with `w₁ = 1` (AB) or `λ₁` (WGT).
    pub fn initial(x1: Mat, mode: Mode, lambda: &LambdaSchedule, ens: &ObjectiveEnsemble) -> Result<Self> {
        if x1.shape() != (ens.n(), ens.dim()) {
            return Err(Error::domain(format!(
                "initial state is {:?}, expected {}x{}",
                x1.shape(),
                ens.n(),
                ens.dim()
            )));
        }
        let w = tracker_weight(mode, lambda, 1);
        let y = ens.stacked_gradient(&x1) * w;
        Ok(Self { k: 1, x: x1, y })
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }
}

fn tracker_weight(mode: Mode, lambda: &LambdaSchedule, k: usize) -> f64 {
    match mode {
        Mode::Ab => 1.0,
        Mode::Wgt => lambda.at(k),
    }
}

/// All messages sent during iteration `k`, one pair per directed edge in
/// the graph's sorted edge order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `edges × p`, row-major. AB: `x_i`; WGT: `x_i − α_i y_i`.
    pub x_msgs: Vec<f64>,
    /// `edges × p`, row-major: `[B_k]_{li} y_i` on edge `i → l`.
    pub y_msgs: Vec<f64>,
}

/// The eavesdropper's view of a run. Self-weighted terms never appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub mode: Mode,
    pub n: usize,
    pub p: usize,
    /// 0-based `(from, to)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub records: Vec<IterationRecord>,
}

impl Transcript {
    pub fn new(mode: Mode, graph: &DirectedGraph, p: usize) -> Self {
        Self {
            mode,
            n: graph.n(),
            p,
            edges: graph.edges0().to_vec(),
            records: Vec::new(),
        }
    }

    /// Number of recorded iterations.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn edge_index(&self, from0: usize, to0: usize) -> Option<usize> {
        self.edges.binary_search(&(from0, to0)).ok()
    }

    pub fn x_msg(&self, rec: usize, edge: usize) -> &[f64] {
        &self.records[rec].x_msgs[edge * self.p..(edge + 1) * self.p]
    }

    pub fn y_msg(&self, rec: usize, edge: usize) -> &[f64] {
        &self.records[rec].y_msgs[edge * self.p..(edge + 1) * self.p]
    }

    /// True when records cover `1..=len` consecutively with one message per edge.
    pub fn is_complete(&self) -> bool {
        let want = self.edges.len() * self.p;
        self.records
            .iter()
            .enumerate()
            .all(|(idx, r)| r.k == idx + 1 && r.x_msgs.len() == want && r.y_msgs.len() == want)
    }
}

struct Mixing<'a> {
    graph: &'a DirectedGraph,
    a: &'a Mat,
    b: &'a Mat,
}

impl<'a> Mixing<'a> {
    fn new(graph: &'a DirectedGraph, a: &'a Mat, b: &'a Mat, p: usize, state: &NetworkState) -> Result<Self> {
        let n = graph.n();
        if a.shape() != (n, n) || b.shape() != (n, n) {
            return Err(Error::domain("mixing matrices do not match the graph"));
        }
        if state.x.shape() != (n, p) || state.y.shape() != (n, p) {
            return Err(Error::domain("state dimensions do not match the ensemble"));
        }
        Ok(Self { graph, a, b })
    }
}

/// One iteration of either algorithm with its transcript record.
///
/// `x_update` is `Σ_j [A]_ij m_j − α_i y_i` with `m_j = x_j` for AB and
/// `Σ_j [A]_ij m_j` with `m_j = x_j − α_j y_j` for WGT. The tracker update
/// is `Σ_j [B]_ij y_j + w_{k+1}∇f_i(x_i^{k+1}) − w_k∇f_i(x_i^k)`.
fn step_impl(
    mode: Mode,
    graph: &DirectedGraph,
    state: &NetworkState,
    a: &Mat,
    b: &Mat,
    alphas: &[f64],
    w_now: f64,
    w_next: f64,
    ens: &ObjectiveEnsemble,
) -> Result<(NetworkState, IterationRecord)> {
    let n = graph.n();
    let p = ens.dim();
    if ens.n() != n || alphas.len() != n {
        return Err(Error::domain("agent count mismatch between graph, ensemble and step sizes"));
    }
    let mix = Mixing::new(graph, a, b, p, state)?;

    // state-type message of every agent
    let mut own_msg = vec![0.0; n * p];
    for i in 0..n {
        for c in 0..p {
            own_msg[i * p + c] = match mode {
                Mode::Ab => state.x[(i, c)],
                Mode::Wgt => state.x[(i, c)] - alphas[i] * state.y[(i, c)],
            };
        }
    }

    let edges = graph.edges0();
    let mut x_msgs = vec![0.0; edges.len() * p];
    let mut y_msgs = vec![0.0; edges.len() * p];
    for (e, &(from, to)) in edges.iter().enumerate() {
        let w = mix.b[(to, from)];
        for c in 0..p {
            x_msgs[e * p + c] = own_msg[from * p + c];
            y_msgs[e * p + c] = w * state.y[(from, c)];
        }
    }

    let record = IterationRecord {
        k: state.k,
        x_msgs,
        y_msgs,
    };
    let next = aggregate(
        mode,
        mix.graph,
        state,
        mix.a,
        mix.b,
        alphas,
        w_now,
        w_next,
        ens,
        |i| &own_msg[i * p..(i + 1) * p],
        |e| &record.x_msgs[e * p..(e + 1) * p],
        |e| &record.y_msgs[e * p..(e + 1) * p],
    );
    Ok((next, record))
}

/// Shared aggregation used by both the engine and transcript replay, so the
/// two produce bit-identical floating point results.
#[allow(clippy::too_many_arguments)]
fn aggregate<'m>(
    mode: Mode,
    graph: &DirectedGraph,
    state: &NetworkState,
    a: &Mat,
    b: &Mat,
    alphas: &[f64],
    w_now: f64,
    w_next: f64,
    ens: &ObjectiveEnsemble,
    own_msg: impl Fn(usize) -> &'m [f64],
    x_msg: impl Fn(usize) -> &'m [f64],
    y_msg: impl Fn(usize) -> &'m [f64],
) -> NetworkState {
    let n = graph.n();
    let p = ens.dim();
    let edges = graph.edges0();
    let mut x = Mat::zeros(n, p);
    let mut y = Mat::zeros(n, p);
    let mut xi = vec![0.0; p];
    let mut g_old = vec![0.0; p];
    let mut g_new = vec![0.0; p];
    for i in 0..n {
        // in(i) ∪ {i} in ascending order
        let mut support: Vec<usize> = graph.in0(i).to_vec();
        support.push(i);
        support.sort_unstable();

        let mut acc_x = vec![0.0; p];
        let mut acc_y = vec![0.0; p];
        for &j in &support {
            if j == i {
                let m = own_msg(i);
                for c in 0..p {
                    acc_x[c] += a[(i, i)] * m[c];
                    acc_y[c] += b[(i, i)] * state.y[(i, c)];
                }
            } else {
                let e = edges.binary_search(&(j, i)).expect("in-neighbor edge exists");
                let (mx, my) = (x_msg(e), y_msg(e));
                for c in 0..p {
                    acc_x[c] += a[(i, j)] * mx[c];
                    acc_y[c] += my[c];
                }
            }
        }
        if mode == Mode::Ab {
            for c in 0..p {
                acc_x[c] -= alphas[i] * state.y[(i, c)];
            }
        }
        let agent = &ens.agents()[i];
        for c in 0..p {
            xi[c] = state.x[(i, c)];
        }
        agent.gradient_into(&xi, &mut g_old);
        agent.gradient_into(&acc_x, &mut g_new);
        for c in 0..p {
            x[(i, c)] = acc_x[c];
            y[(i, c)] = acc_y[c] + w_next * g_new[c] - w_now * g_old[c];
        }
    }
    NetworkState { k: state.k + 1, x, y }
}

/// One AB iteration with common step `alpha`.
pub fn ab_step(
    graph: &DirectedGraph,
    state: &NetworkState,
    a: &Mat,
    b: &Mat,
    alpha: f64,
    ens: &ObjectiveEnsemble,
) -> Result<NetworkState> {
    let alphas = vec![alpha; graph.n()];
    step_impl(Mode::Ab, graph, state, a, b, &alphas, 1.0, 1.0, ens).map(|(s, _)| s)
}

/// One weighted gradient tracking iteration from `state.k` to `state.k + 1`.
pub fn wgt_step(
    graph: &DirectedGraph,
    state: &NetworkState,
    a: &Mat,
    b: &Mat,
    steps: &StepSizes,
    lambda: &LambdaSchedule,
    ens: &ObjectiveEnsemble,
) -> Result<NetworkState> {
    let (now, next) = lambda_pair(lambda, state.k)?;
    step_impl(Mode::Wgt, graph, state, a, b, steps.as_slice(), now, next, ens).map(|(s, _)| s)
}

fn lambda_pair(lambda: &LambdaSchedule, k: usize) -> Result<(f64, f64)> {
    let (now, next) = (lambda.at(k), lambda.at(k + 1));
    if next > now {
        return Err(Error::Schedule { k, prev: now, next });
    }
    Ok((now, next))
}

/// A fully specified experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub weights: WeightSchedule,
    pub ensemble: ObjectiveEnsemble,
    pub mode: Mode,
    pub steps: StepSizes,
    pub lambda: LambdaSchedule,
    pub x1: Mat,
}

impl Scenario {
    pub fn graph(&self) -> &DirectedGraph {
        self.weights.graph()
    }

    /// Cross-checks dimensions and the standing assumptions.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph().n();
        self.graph().require_strongly_connected()?;
        if self.ensemble.n() != n {
            return Err(Error::config(format!(
                "ensemble has {} agents, graph has {n}",
                self.ensemble.n()
            )));
        }
        if self.steps.len() != n {
            return Err(Error::config(format!(
                "{} step sizes given for {n} agents",
                self.steps.len()
            )));
        }
        if self.mode == Mode::Ab && !self.steps.is_homogeneous() {
            return Err(Error::config("AB baseline uses one common step size"));
        }
        if self.x1.shape() != (n, self.ensemble.dim()) {
            return Err(Error::config("initial state has the wrong shape"));
        }
        let (a, b) = self.weights.matrices_at(1);
        self.weights.check_admissible(&a, &b)
    }

    /// Tracker weight `w_k`: 1 for AB, `λ_k` for WGT.
    pub fn tracker_weight(&self, k: usize) -> f64 {
        tracker_weight(self.mode, &self.lambda, k)
    }
}

/// `x¹` with i.i.d. `U[0,1]` entries, row-major over agents.
pub fn random_initial_state(n: usize, p: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n * p).map(|_| rng.random::<f64>()).collect();
    Mat::from_row_slice(n, p, &v)
}

/// Steps a scenario one iteration at a time.
pub struct Simulation<'s> {
    scenario: &'s Scenario,
    state: NetworkState,
    static_mats: Option<(Mat, Mat)>,
}

impl<'s> Simulation<'s> {
    pub fn new(scenario: &'s Scenario) -> Result<Self> {
        scenario.validate()?;
        let state = NetworkState::initial(
            scenario.x1.clone(),
            scenario.mode,
            &scenario.lambda,
            &scenario.ensemble,
        )?;
        let static_mats = scenario.weights.is_static().then(|| scenario.weights.matrices_at(1));
        Ok(Self {
            scenario,
            state,
            static_mats,
        })
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    /// `(A_k, B_k)` for the current iteration.
    pub fn matrices(&self) -> (Mat, Mat) {
        match &self.static_mats {
            Some((a, b)) => (a.clone(), b.clone()),
            None => self.scenario.weights.matrices_at(self.state.k),
        }
    }

    pub fn step(&mut self) -> Result<IterationRecord> {
        let sc = self.scenario;
        let k = self.state.k;
        let (w_now, w_next) = match sc.mode {
            Mode::Ab => (1.0, 1.0),
            Mode::Wgt => lambda_pair(&sc.lambda, k)?,
        };
        let owned;
        let (a, b) = match &self.static_mats {
            Some((a, b)) => (a, b),
            None => {
                owned = sc.weights.matrices_at(k);
                (&owned.0, &owned.1)
            }
        };
        let (next, record) = step_impl(
            sc.mode,
            sc.graph(),
            &self.state,
            a,
            b,
            sc.steps.as_slice(),
            w_now,
            w_next,
            &sc.ensemble,
        )?;
        if !next.is_finite() {
            return Err(Error::Divergence {
                k: next.k,
                reason: "non-finite state".into(),
            });
        }
        self.state = next;
        Ok(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// `x̄ = φᵀx` with the left Perron vector of the static `A`.
    Phi,
    /// `x̄ = (1/n) 1ᵀx`, used when `A_k` varies.
    Uniform,
}

/// Per-iteration metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub k: usize,
    /// `‖x^k − 1x*‖² / ‖x¹ − 1x*‖²`
    pub residual: f64,
    /// `‖x^k − 1x̄^k‖`
    pub consensus_error: f64,
    /// `‖y^k − π_k ŷ^k‖`
    pub tracking_error: f64,
    /// `λ_k` (1 for AB)
    pub lambda_k: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub iterations: usize,
    pub averaging: Averaging,
    pub x_star: Vec<f64>,
    pub rows: Vec<MetricRow>,
}

impl RunReport {
    pub fn terminal_residual(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.residual)
    }

    /// First iteration whose residual is at or below `threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.residual <= threshold).map(|r| r.k)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_transcript: bool,
    pub record_states: bool,
    /// Stop early once the residual reaches this value.
    pub stop_below: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub transcript: Option<Transcript>,
    /// `x¹..x^{K+1}` when requested.
    pub states: Vec<NetworkState>,
    pub final_state: NetworkState,
}

/// Tracks `π_k` and `x̄` weights alongside a run to produce [`MetricRow`]s.
pub struct MetricTracker {
    x_star: Vector,
    initial_sq: f64,
    phi: Option<Vector>,
    pi: Vector,
}

impl MetricTracker {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let x_star = scenario.ensemble.global_optimum()?;
        let n = scenario.graph().n();
        let phi = if scenario.weights.is_static() {
            Some(phi_static(&scenario.weights.matrices_at(1).0)?)
        } else {
            None
        };
        let initial_sq = dist_to_optimum_sq(&scenario.x1, &x_star);
        Ok(Self {
            x_star,
            initial_sq,
            phi,
            pi: Vector::from_element(n, 1.0 / n as f64),
        })
    }

    pub fn averaging(&self) -> Averaging {
        if self.phi.is_some() {
            Averaging::Phi
        } else {
            Averaging::Uniform
        }
    }

    pub fn x_star(&self) -> &Vector {
        &self.x_star
    }

    pub fn pi(&self) -> &Vector {
        &self.pi
    }

    pub fn phi(&self) -> Option<&Vector> {
        self.phi.as_ref()
    }

    pub fn row(&self, state: &NetworkState, lambda_k: f64) -> MetricRow {
        let n = state.x.nrows();
        let weights = match &self.phi {
            Some(phi) => phi.clone(),
            None => Vector::from_element(n, 1.0 / n as f64),
        };
        let xbar = state.x.transpose() * &weights;
        let yhat = state.y.row_sum().transpose();
        let ones = Vector::from_element(n, 1.0);
        let consensus = (&state.x - &ones * xbar.transpose()).norm();
        let tracking = (&state.y - &self.pi * yhat.transpose()).norm();
        let residual = if self.initial_sq > 0.0 {
            dist_to_optimum_sq(&state.x, &self.x_star) / self.initial_sq
        } else {
            dist_to_optimum_sq(&state.x, &self.x_star)
        };
        MetricRow {
            k: state.k,
            residual,
            consensus_error: consensus,
            tracking_error: tracking,
            lambda_k,
        }
    }

    /// Advances `π_k → π_{k+1} = B_k π_k`.
    pub fn advance(&mut self, b: &Mat) {
        self.pi = b * &self.pi;
    }
}

fn dist_to_optimum_sq(x: &Mat, x_star: &Vector) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.nrows() {
        for c in 0..x.ncols() {
            let d = x[(i, c)] - x_star[c];
            acc += d * d;
        }
    }
    acc
}

/// Executes `iterations` steps and collects metrics (rows `k = 1..=K+1`).
/// With `stop_below` set the run may end sooner; `report.iterations` is
/// the number of steps actually taken.
pub fn run(scenario: &Scenario, iterations: usize, opts: RunOptions) -> Result<RunOutput> {
    let mut sim = Simulation::new(scenario)?;
    let mut tracker = MetricTracker::new(scenario)?;
    let mut transcript = opts
        .record_transcript
        .then(|| Transcript::new(scenario.mode, scenario.graph(), scenario.ensemble.dim()));
    let mut rows = Vec::with_capacity(iterations + 1);
    let mut states = Vec::new();
    rows.push(tracker.row(sim.state(), scenario.tracker_weight(1)));
    if opts.record_states {
        states.push(sim.state().clone());
    }
    let mut done = 0;
    for _ in 0..iterations {
        if opts.stop_below.is_some_and(|thr| rows.last().is_some_and(|r: &MetricRow| r.residual <= thr)) {
            break;
        }
        done += 1;
        let (_, b) = sim.matrices();
        let record = sim.step()?;
        tracker.advance(&b);
        let k = sim.state().k;
        let row = tracker.row(sim.state(), scenario.tracker_weight(k));
        if !row.residual.is_finite() || row.residual > DIVERGENCE_RESIDUAL {
            return Err(Error::Divergence {
                k,
                reason: format!("relative residual {:e} exceeds {:e}", row.residual, DIVERGENCE_RESIDUAL),
            });
        }
        rows.push(row);
        if let Some(t) = transcript.as_mut() {
            t.records.push(record);
        }
        if opts.record_states {
            states.push(sim.state().clone());
        }
    }
    let report = RunReport {
        mode: scenario.mode,
        iterations: done,
        averaging: tracker.averaging(),
        x_star: tracker.x_star().iter().copied().collect(),
        rows,
    };
    Ok(RunOutput {
        report,
        transcript,
        states,
        final_state: sim.state().clone(),
    })
}

/// Recomputes every state from the transcript plus each agent's private
/// data (its initial state, step size, weights and gradient). Neighbor
/// contributions come only from recorded messages.
pub fn replay(transcript: &Transcript, scenario: &Scenario) -> Result<Vec<NetworkState>> {
    if !transcript.is_complete() {
        return Err(Error::Audit("transcript has gaps".into()));
    }
    let graph = scenario.graph();
    let p = transcript.p;
    if transcript.edges != graph.edges0() || p != scenario.ensemble.dim() {
        return Err(Error::Audit("transcript does not belong to this scenario".into()));
    }
    let mut state = NetworkState::initial(
        scenario.x1.clone(),
        scenario.mode,
        &scenario.lambda,
        &scenario.ensemble,
    )?;
    let mut out = vec![state.clone()];
    for (r, _) in transcript.records.iter().enumerate() {
        let k = state.k;
        let (a, b) = scenario.weights.matrices_at(k);
        let (w_now, w_next) = match scenario.mode {
            Mode::Ab => (1.0, 1.0),
            Mode::Wgt => lambda_pair(&scenario.lambda, k)?,
        };
        // an agent's own state-type message is whatever it put on any outgoing edge
        let own_edges: Vec<usize> = (0..graph.n())
            .map(|i| {
                graph
                    .out0(i)
                    .first()
                    .and_then(|&l| transcript.edge_index(i, l))
                    .ok_or_else(|| Error::Audit(format!("agent {} sends nothing", i + 1)))
            })
            .collect::<Result<_>>()?;
        state = aggregate(
            scenario.mode,
            graph,
            &state,
            &a,
            &b,
            scenario.steps.as_slice(),
            w_now,
            w_next,
            &scenario.ensemble,
            |i| transcript.x_msg(r, own_edges[i]),
            |e| transcript.x_msg(r, e),
            |e| transcript.y_msg(r, e),
        );
        out.push(state.clone());
    }
    Ok(out)
}
