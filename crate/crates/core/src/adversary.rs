//! Attacks on recorded transcripts.
//!
//! Two attacker models: an eavesdropper summing the tracker flow
//! `z_i^k` observed on agent `i`'s channels, and an honest-but-curious
//! neighbor who writes agent `i`'s update law as a linear system in the
//! quantities it cannot observe and asks how many solutions it has.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Mode, NetworkState, Transcript};
use crate::error::{Error, Result};
use crate::linalg::{norm2, rank, Mat, Vector};
use crate::objective::ObjectiveEnsemble;

/// Largest successive message change still counted as converged.
pub const STABLE_DELTA: f64 = 1e-10;
/// Number of consecutive iterations the change must stay below [`STABLE_DELTA`].
pub const STABLE_WINDOW: usize = 50;
/// Below this true-gradient norm the relative error becomes an absolute one.
pub const RELATIVE_FLOOR: f64 = 1e-12;
/// Relative pivot cutoff for audit ranks.
pub const RANK_TOL: f64 = 1e-10;

fn check_agent(t: &Transcript, i: usize) -> Result<usize> {
    if i == 0 || i > t.n {
        return Err(Error::domain(format!("agent {i} outside 1..={}", t.n)));
    }
    if !t.is_complete() {
        return Err(Error::Audit("transcript does not cover 1..K without gaps".into()));
    }
    Ok(i - 1)
}

/// Sum of the y-type messages leaving agent `i0` minus those entering it, for record `r`.
fn flow(t: &Transcript, i0: usize, r: usize) -> Vec<f64> {
    let mut z = vec![0.0; t.p];
    for (e, &(from, to)) in t.edges.iter().enumerate() {
        let sign = if from == i0 {
            1.0
        } else if to == i0 {
            -1.0
        } else {
            continue;
        };
        for (zc, m) in z.iter_mut().zip(t.y_msg(r, e)) {
            *zc += sign * m;
        }
    }
    z
}

/// `z_i^1..z_i^K` from on-channel messages only.
pub fn z_stream(t: &Transcript, i: usize) -> Result<Vec<Vec<f64>>> {
    let i0 = check_agent(t, i)?;
    Ok((0..t.len()).map(|r| flow(t, i0, r)).collect())
}

/// `Σ_{m≤k} z_i^m` for `k = 1..K`.
pub fn cumulative_flow(t: &Transcript, i: usize) -> Result<Vec<Vec<f64>>> {
    let mut acc = vec![0.0; t.p];
    Ok(z_stream(t, i)?
        .into_iter()
        .map(|z| {
            for (a, v) in acc.iter_mut().zip(z) {
                *a += v;
            }
            acc.clone()
        })
        .collect())
}

/// Message stabilization: every message changed by less than
/// [`STABLE_DELTA`] across each of the last [`STABLE_WINDOW`] iterations.
pub fn messages_stabilized(t: &Transcript) -> bool {
    let n = t.len();
    if n <= STABLE_WINDOW {
        return false;
    }
    (n - STABLE_WINDOW..n).all(|r| {
        let (prev, cur) = (&t.records[r - 1], &t.records[r]);
        let dx = prev.x_msgs.iter().zip(&cur.x_msgs);
        let dy = prev.y_msgs.iter().zip(&cur.y_msgs);
        dx.chain(dy).all(|(a, b)| (a - b).abs() < STABLE_DELTA)
    })
}

/// Ground truth the attacker does not have, used only to score it.
#[derive(Debug, Clone, Copy)]
pub struct AttackOracle<'a> {
    /// State `K+1`, the one produced by the last recorded iteration.
    pub final_state: &'a NetworkState,
    pub ensemble: &'a ObjectiveEnsemble,
    /// `w_{K+1}`: 1 for AB, `λ_{K+1}` for WGT.
    pub tracker_weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackReport {
    pub target: usize,
    pub mode: Mode,
    pub iterations: usize,
    pub inferred_gradient: Vec<f64>,
    /// `∇f_i(x_i^{K+1})`
    pub true_gradient_at_final: Vec<f64>,
    pub relative_error: f64,
    /// Error against `∇f_i(x*)`, same normalization.
    pub relative_error_at_optimum: f64,
    /// True when `‖∇f_i(x_i^{K+1})‖` fell below the floor and errors are absolute.
    pub absolute: bool,
    /// `w_{K+1}‖∇f_i(x_i^{K+1})‖ + ‖y_i^{K+1}‖`, which bounds `‖inferred‖`.
    pub identity_bound: f64,
    pub inferred_norm: f64,
    pub converged: bool,
}

impl AttackReport {
    /// Non-converged transcripts give no verdict.
    pub fn inconclusive(&self) -> bool {
        !self.converged
    }
}

fn scored_error(est: &[f64], truth: &[f64]) -> (f64, bool) {
    let diff: Vec<f64> = est.iter().zip(truth).map(|(a, b)| a - b).collect();
    let tn = norm2(truth);
    if tn < RELATIVE_FLOOR {
        (norm2(&diff), true)
    } else {
        (norm2(&diff) / tn, false)
    }
}

/// Eavesdropper estimate `∇f_i ≈ Σ_{m=1}^{K} z_i^m`.
pub fn infer_gradient(t: &Transcript, i: usize, oracle: &AttackOracle) -> Result<AttackReport> {
    let i0 = check_agent(t, i)?;
    if t.is_empty() {
        return Err(Error::Audit("empty transcript".into()));
    }
    let st = oracle.final_state;
    if st.x.shape() != (t.n, t.p) || oracle.ensemble.n() != t.n || oracle.ensemble.dim() != t.p {
        return Err(Error::domain("oracle does not match the transcript"));
    }
    let inferred = cumulative_flow(t, i)?.pop().expect("non-empty transcript");
    let agent = oracle.ensemble.agent(i)?;
    let xi: Vector = st.x.row(i0).transpose();
    let g_final: Vec<f64> = agent.gradient(&xi)?.iter().copied().collect();
    let g_opt: Vec<f64> = agent.gradient(&oracle.ensemble.global_optimum()?)?.iter().copied().collect();
    let (relative_error, absolute) = scored_error(&inferred, &g_final);
    let (relative_error_at_optimum, _) = scored_error(&inferred, &g_opt);
    let yi: Vec<f64> = st.y.row(i0).iter().copied().collect();
    Ok(AttackReport {
        target: i,
        mode: t.mode,
        iterations: t.len(),
        identity_bound: oracle.tracker_weight * norm2(&g_final) + norm2(&yi),
        inferred_norm: norm2(&inferred),
        inferred_gradient: inferred,
        true_gradient_at_final: g_final,
        relative_error,
        relative_error_at_optimum,
        absolute,
        converged: messages_stabilized(t),
    })
}

/// `‖y_i^{k+1} + Σ_{m≤k} z_i^m − w_{k+1}∇f_i(x_i^{k+1})‖` for `k = 1..K`.
///
/// `states` holds states `1..=K+1`; `weight(k)` is `w_k`.
pub fn leakage_residuals(
    t: &Transcript,
    i: usize,
    states: &[NetworkState],
    ens: &ObjectiveEnsemble,
    weight: impl Fn(usize) -> f64,
) -> Result<Vec<f64>> {
    let cum = cumulative_flow(t, i)?;
    if states.len() != t.len() + 1 {
        return Err(Error::domain(format!("need {} states, got {}", t.len() + 1, states.len())));
    }
    let i0 = i - 1;
    let agent = ens.agent(i)?;
    cum.iter()
        .enumerate()
        .map(|(r, s)| {
            let st = &states[r + 1];
            let g = agent.gradient(&st.x.row(i0).transpose())?;
            let w = weight(st.k);
            let res: Vec<f64> = (0..t.p).map(|c| st.y[(i0, c)] + s[c] - w * g[c]).collect();
            Ok(norm2(&res))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditSource {
    /// Generic coefficients; depends on `(K, p)` only.
    Symbolic,
    /// Coefficients read off a recorded transcript.
    Transcript,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub system: &'static str,
    pub source: AuditSource,
    pub target: Option<usize>,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: usize,
    pub equations: usize,
    pub unknowns: usize,
    pub rank: usize,
    pub nullity: usize,
}

/// A stacked system `M u = rhs` in the attacker's unknowns.
#[derive(Debug, Clone)]
pub struct LinearAudit {
    pub matrix: Mat,
    pub rhs: Vector,
    pub report: AuditReport,
}

impl LinearAudit {
    fn new(system: &'static str, source: AuditSource, target: Option<usize>, k: usize, p: usize, m: Mat, rhs: Vector) -> Self {
        let r = rank(&m, RANK_TOL);
        let report = AuditReport {
            system,
            source,
            target,
            k,
            p,
            equations: m.nrows(),
            unknowns: m.ncols(),
            rank: r,
            nullity: m.ncols() - r,
        };
        Self { matrix: m, rhs, report }
    }

    /// `‖M u − rhs‖ / max(1, ‖rhs‖)`.
    pub fn residual(&self, u: &Vector) -> f64 {
        (&self.matrix * u - &self.rhs).norm() / self.rhs.norm().max(1.0)
    }
}

/// State system: block `k` reads `x^{k+1} − Σ_j a_{k,j}(I_{x,j}^k − I_{x,i}^k) = I_{x,i}^k`
/// for `k = 1..K−1`, in unknowns `x^{k+1}` (p each) then the `q` weights
/// `a_{k,j}` of each block.
fn state_system(k_max: usize, p: usize, q: usize, diff: impl Fn(usize, usize, usize) -> f64, own: impl Fn(usize, usize) -> f64) -> (Mat, Vector) {
    let blocks = k_max - 1;
    let mut m = Mat::zeros(blocks * p, blocks * (p + q));
    let mut rhs = Vector::zeros(blocks * p);
    for b in 0..blocks {
        for c in 0..p {
            let row = b * p + c;
            m[(row, b * p + c)] = 1.0;
            for j in 0..q {
                m[(row, blocks * p + b * q + j)] = -diff(b, j, c);
            }
            rhs[row] = own(b, c);
        }
    }
    (m, rhs)
}

/// Gradient system in unknowns `y^2..y^K` then `g^2..g^{K+1}`, with
/// `y^{K+1}` taken as known:
/// `y^{k+1} − y^k − w_{k+1} g^{k+1} + w_k g^k = I_{y,in}^k − I_{y,out}^k`
/// (no `y^1`/`g^1` terms in the first block, since `y^1 = w_1 g^1`).
fn gradient_system(
    k_max: usize,
    p: usize,
    w: impl Fn(usize) -> f64,
    net_in: impl Fn(usize, usize) -> f64,
    y_last: &[f64],
) -> (Mat, Vector) {
    let ny = (k_max - 1) * p;
    let mut m = Mat::zeros(k_max * p, ny + k_max * p);
    let mut rhs = Vector::zeros(k_max * p);
    // y^k lives at (k-2)p, g^k at ny + (k-2)p
    for k in 1..=k_max {
        for c in 0..p {
            let row = (k - 1) * p + c;
            rhs[row] = net_in(k, c);
            if k < k_max {
                m[(row, (k - 1) * p + c)] = 1.0;
            } else {
                rhs[row] -= y_last[c];
            }
            if k >= 2 {
                m[(row, (k - 2) * p + c)] = -1.0;
                m[(row, ny + (k - 2) * p + c)] = w(k);
            }
            m[(row, ny + (k - 1) * p + c)] = -w(k + 1);
        }
    }
    (m, rhs)
}

fn generic_rng(tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0061_7564_6974);
    rng.set_stream(tag);
    rng
}

/// State system for the two-agent reduction with generic coefficients.
pub fn audit_state_system(k: usize, p: usize) -> Result<LinearAudit> {
    if k < 2 || p == 0 {
        return Err(Error::domain("state audit needs K >= 2 and p >= 1"));
    }
    let mut rng = generic_rng(1);
    let diffs: Vec<f64> = (0..(k - 1) * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let owns: Vec<f64> = (0..(k - 1) * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (m, rhs) = state_system(k, p, 1, |b, _, c| diffs[b * p + c], |b, c| owns[b * p + c]);
    Ok(LinearAudit::new("state", AuditSource::Symbolic, None, k, p, m, rhs))
}

/// Gradient system for the two-agent reduction with generic coefficients.
pub fn audit_gradient_system(k: usize, p: usize) -> Result<LinearAudit> {
    if k < 1 || p == 0 {
        return Err(Error::domain("gradient audit needs K >= 1 and p >= 1"));
    }
    let mut rng = generic_rng(2);
    let mut w: Vec<f64> = (0..=k + 1).map(|_| rng.random_range(0.1..1.0)).collect();
    // a non-increasing positive weight sequence
    w.sort_by(|a, b| b.total_cmp(a));
    let flows: Vec<f64> = (0..k * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y_last: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (m, rhs) = gradient_system(k, p, |j| w[j], |j, c| flows[(j - 1) * p + c], &y_last);
    Ok(LinearAudit::new("gradient", AuditSource::Symbolic, None, k, p, m, rhs))
}

/// State system for agent `i` built from the first `K−1` records of a WGT
/// transcript. One unknown weight per in-neighbor per block.
pub fn audit_state_transcript(t: &Transcript, i: usize, k: usize) -> Result<LinearAudit> {
    let i0 = check_agent(t, i)?;
    if t.mode != Mode::Wgt {
        return Err(Error::Audit("in AB the state is sent in the clear; no state system to audit".into()));
    }
    if k < 2 || k > t.len() + 1 {
        return Err(Error::domain(format!("state audit horizon {k} outside 2..={}", t.len() + 1)));
    }
    let ins: Vec<usize> = (0..t.edges.len()).filter(|&e| t.edges[e].1 == i0).collect();
    let out = t
        .edges
        .iter()
        .position(|&(f, _)| f == i0)
        .ok_or_else(|| Error::Audit(format!("agent {i} sends nothing")))?;
    let (m, rhs) = state_system(
        k,
        t.p,
        ins.len(),
        |b, j, c| t.x_msg(b, ins[j])[c] - t.x_msg(b, out)[c],
        |b, c| t.x_msg(b, out)[c],
    );
    Ok(LinearAudit::new("state", AuditSource::Transcript, Some(i), k, t.p, m, rhs))
}

/// Gradient system for agent `i` over the first `K` records, with the
/// attacker's weights `w(k)` and assumed `y_i^{K+1}`.
pub fn audit_gradient_transcript(
    t: &Transcript,
    i: usize,
    k: usize,
    w: impl Fn(usize) -> f64,
    y_last: &[f64],
) -> Result<LinearAudit> {
    let i0 = check_agent(t, i)?;
    if k < 1 || k > t.len() {
        return Err(Error::domain(format!("gradient audit horizon {k} outside 1..={}", t.len())));
    }
    if y_last.len() != t.p {
        return Err(Error::domain("y_last has the wrong dimension"));
    }
    let flows: Vec<Vec<f64>> = (0..k).map(|r| flow(t, i0, r)).collect();
    let (m, rhs) = gradient_system(k, t.p, w, |j, c| -flows[j - 1][c], y_last);
    Ok(LinearAudit::new("gradient", AuditSource::Transcript, Some(i), k, t.p, m, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{random_initial_state, run, LambdaSchedule, RunOptions, Scenario, StepSizes};
    use crate::graph::DirectedGraph;
    use crate::objective::{make_sensor_scenario, QuadraticObjective};
    use crate::weights::WeightSchedule;
    use proptest::prelude::*;

    fn pair_scenario(mode: Mode) -> Scenario {
        let mk = |s: [f64; 4], v: [f64; 2]| {
            QuadraticObjective::new(Mat::from_row_slice(2, 2, &s), Vector::from_row_slice(&v), 0.1).unwrap()
        };
        let ens = ObjectiveEnsemble::new(vec![mk([1.0, 0.2, 0.0, 1.0], [1.0, -1.0]), mk([0.5, 0.0, 0.3, 0.8], [0.0, 2.0])]).unwrap();
        Scenario {
            weights: WeightSchedule::uniform(DirectedGraph::pair()).unwrap(),
            ensemble: ens,
            mode,
            steps: StepSizes::homogeneous(0.1, 2).unwrap(),
            lambda: LambdaSchedule::decaying(0.8, 10.0).unwrap(),
            x1: random_initial_state(2, 2, 3),
        }
    }

    fn ring_scenario(mode: Mode, alpha: f64) -> Scenario {
        Scenario {
            weights: WeightSchedule::uniform(DirectedGraph::sensor_ring6()).unwrap(),
            ensemble: make_sensor_scenario(6, 3, 2, 0.01, 1).unwrap(),
            mode,
            steps: StepSizes::homogeneous(alpha, 6).unwrap(),
            lambda: LambdaSchedule::decaying(0.8, 10.0).unwrap(),
            x1: random_initial_state(6, 2, 1001),
        }
    }

    fn recorded(sc: &Scenario, k: usize) -> crate::engine::RunOutput {
        run(sc, k, RunOptions { record_transcript: true, record_states: true, ..Default::default() }).unwrap()
    }

    // SVD rank as an independent oracle
    fn svd_nullity(m: &Mat) -> usize {
        let sv = m.clone().svd(false, false).singular_values;
        let cut = 1e-9 * sv.max();
        m.ncols() - sv.iter().filter(|&&s| s > cut).count()
    }

    #[test]
    fn symmetric_exchange_cancels() {
        let g = DirectedGraph::pair();
        let mut t = Transcript::new(Mode::Ab, &g, 2);
        t.records.push(crate::engine::IterationRecord { k: 1, x_msgs: vec![0.0; 4], y_msgs: vec![0.3, -1.0, 0.3, -1.0] });
        assert_eq!(z_stream(&t, 1).unwrap(), vec![vec![0.0, 0.0]]);
        assert_eq!(z_stream(&t, 2).unwrap(), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn incomplete_transcript_is_rejected() {
        let g = DirectedGraph::pair();
        let mut t = Transcript::new(Mode::Ab, &g, 2);
        t.records.push(crate::engine::IterationRecord { k: 2, x_msgs: vec![0.0; 4], y_msgs: vec![0.0; 4] });
        assert!(matches!(z_stream(&t, 1), Err(Error::Audit(_))));
        assert!(matches!(z_stream(&Transcript::new(Mode::Ab, &g, 2), 3), Err(Error::Domain(_))));
    }

    #[test]
    fn flow_matches_weights_and_tracker() {
        // z_i^k = Σ_out B_li y_i − Σ_in B_ij y_j from the true B and y
        let sc = ring_scenario(Mode::Wgt, 0.1);
        let out = recorded(&sc, 5);
        let (_, b) = sc.weights.matrices_at(1);
        let t = out.transcript.unwrap();
        for i in 1..=6 {
            let zs = z_stream(&t, i).unwrap();
            for (r, z) in zs.iter().enumerate() {
                let y = &out.states[r].y;
                let i0 = i - 1;
                for c in 0..2 {
                    let mut want = 0.0;
                    for l in 0..6 {
                        if l != i0 && b[(l, i0)] != 0.0 {
                            want += b[(l, i0)] * y[(i0, c)];
                        }
                        if l != i0 && b[(i0, l)] != 0.0 {
                            want -= b[(i0, l)] * y[(l, c)];
                        }
                    }
                    assert!((z[c] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn leakage_identity_both_modes() {
        for (mode, alpha) in [(Mode::Ab, 0.001), (Mode::Wgt, 0.1)] {
            let sc = ring_scenario(mode, alpha);
            let out = recorded(&sc, 300);
            let t = out.transcript.unwrap();
            for i in 1..=6 {
                let res = leakage_residuals(&t, i, &out.states, &sc.ensemble, |k| sc.tracker_weight(k)).unwrap();
                let worst = res.iter().copied().fold(0.0, f64::max);
                assert!(worst <= 1e-9, "{mode} agent {i}: {worst:e}");
            }
        }
    }

    #[test]
    fn constant_unit_weight_wgt_leaks() {
        let mut sc = ring_scenario(Mode::Wgt, 0.001);
        sc.lambda = LambdaSchedule::constant(1.0).unwrap();
        let out = recorded(&sc, 3000);
        let t = out.transcript.unwrap();
        let oracle = AttackOracle { final_state: &out.final_state, ensemble: &sc.ensemble, tracker_weight: 1.0 };
        let rep = infer_gradient(&t, 1, &oracle).unwrap();
        assert!(rep.converged);
        assert!(rep.relative_error <= 1e-4, "{}", rep.relative_error);
    }

    #[test]
    fn unconverged_attack_is_inconclusive() {
        let sc = ring_scenario(Mode::Ab, 0.001);
        let out = recorded(&sc, 40);
        let oracle = AttackOracle { final_state: &out.final_state, ensemble: &sc.ensemble, tracker_weight: 1.0 };
        let rep = infer_gradient(out.transcript.as_ref().unwrap(), 2, &oracle).unwrap();
        assert!(rep.inconclusive());
    }

    #[test]
    fn relative_error_floor() {
        let (e, abs) = scored_error(&[3.0, 4.0], &[0.0, 0.0]);
        assert!(abs);
        assert_eq!(e, 5.0);
        let (e, abs) = scored_error(&[1.0, 1.0], &[2.0, 0.0]);
        assert!(!abs);
        assert!((e - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn symbolic_counts() {
        let a = audit_state_system(3, 2).unwrap().report;
        assert_eq!((a.equations, a.unknowns), (4, 6));
        assert!(a.nullity >= 2);
        let a = audit_state_system(2, 1).unwrap().report;
        assert_eq!((a.equations, a.unknowns), (1, 2));
        assert!(a.nullity >= 1);
        let g = audit_gradient_system(3, 2).unwrap().report;
        assert_eq!((g.equations, g.unknowns), (6, 10));
        assert!(g.nullity >= 4);
        let g = audit_gradient_system(1, 2).unwrap().report;
        assert_eq!((g.equations, g.unknowns), (2, 2));
        assert_eq!(g.nullity, 0);
        assert!(audit_state_system(1, 2).is_err());
        assert!(audit_gradient_system(0, 2).is_err());
    }

    proptest! {
        #[test]
        fn symbolic_nullity_matches_svd(k in 2usize..9, p in 1usize..4) {
            let s = audit_state_system(k, p).unwrap();
            prop_assert_eq!(s.report.nullity, svd_nullity(&s.matrix));
            prop_assert_eq!(s.report.nullity, k - 1);
            let g = audit_gradient_system(k, p).unwrap();
            prop_assert_eq!(g.report.nullity, svd_nullity(&g.matrix));
            prop_assert_eq!(g.report.nullity, (k - 1) * p);
            prop_assert!(g.report.nullity >= g.report.unknowns - g.report.equations);
        }
    }

    #[test]
    fn transcript_audits_on_two_agents() {
        let sc = pair_scenario(Mode::Wgt);
        let out = recorded(&sc, 12);
        let t = out.transcript.as_ref().unwrap();
        let s = audit_state_transcript(t, 1, 10).unwrap();
        assert_eq!((s.report.equations, s.report.unknowns), (18, 27));
        assert_eq!(s.report.nullity, svd_nullity(&s.matrix));
        assert!(s.report.nullity >= 9);

        // the true run satisfies the state system
        let (a, _) = sc.weights.matrices_at(1);
        let mut u = Vec::new();
        for k in 2..=10 {
            u.extend(out.states[k - 1].x.row(0).iter().copied());
        }
        u.extend(std::iter::repeat_n(a[(0, 1)], 9));
        assert!(s.residual(&Vector::from_vec(u)) < 1e-12);

        let k = 10;
        let y_last: Vec<f64> = out.states[k].y.row(0).iter().copied().collect();
        let g = audit_gradient_transcript(t, 1, k, |j| sc.tracker_weight(j), &y_last).unwrap();
        assert_eq!((g.report.equations, g.report.unknowns), (20, 38));
        assert_eq!(g.report.nullity, svd_nullity(&g.matrix));
        assert!(g.report.nullity >= 18);
        let mut u = Vec::new();
        for j in 2..=k {
            u.extend(out.states[j - 1].y.row(0).iter().copied());
        }
        let f = sc.ensemble.agent(1).unwrap();
        for j in 2..=k + 1 {
            u.extend(f.gradient(&out.states[j - 1].x.row(0).transpose()).unwrap().iter().copied());
        }
        assert!(g.residual(&Vector::from_vec(u)) < 1e-12);
    }

    #[test]
    fn state_audit_refuses_ab() {
        let sc = pair_scenario(Mode::Ab);
        let out = recorded(&sc, 4);
        assert!(matches!(audit_state_transcript(out.transcript.as_ref().unwrap(), 1, 3), Err(Error::Audit(_))));
    }

    #[test]
    fn ring_agent_has_one_weight_per_in_neighbor() {
        let sc = ring_scenario(Mode::Wgt, 0.1);
        let out = recorded(&sc, 6);
        let t = out.transcript.as_ref().unwrap();
        // agent 2 hears from 1 and 5
        let s = audit_state_transcript(t, 2, 5).unwrap().report;
        assert_eq!((s.equations, s.unknowns), (8, 16));
        assert_eq!(s.nullity, 8);
    }
}
