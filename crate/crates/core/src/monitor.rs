//! Numerical probes of the convergence theory.
//!
//! The analysis is stated in norms that exist but are not constructive.
//! Everything here evaluates them with spectral surrogates: contraction
//! factors are spectral radii (or spectral norms, on request) and the
//! norm-equivalence constants are set to 1. Conclusions of the form
//! "ρ < 1" survive this substitution; the componentwise inequality
//! `s^{k+1} ≤ C_k s^k + d_k` only holds up to a slack factor, which
//! [`linear_system_check`] measures.

use serde::{Deserialize, Serialize};

use crate::engine::{LambdaSchedule, MetricTracker, NetworkState, Scenario, Simulation, StepSizes};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, spectral_radius, Mat, Vector};
use crate::weights::{deflated, phi_static};

/// `(s1, s2, s3)` at iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricVector {
    pub k: usize,
    /// `‖x̄^k − x*‖`
    pub s1: f64,
    /// `‖x^k − 1x̄^k‖`
    pub s2: f64,
    /// `‖y^k − π_k ŷ^k‖`
    pub s3: f64,
    /// False when `x̄` fell back to the uniform average.
    pub phi_weighted: bool,
}

impl MetricVector {
    pub fn as_vector(&self) -> Vector {
        Vector::from_vec(vec![self.s1, self.s2, self.s3])
    }
}

/// `x̄ = φᵀx` (uniform average when `phi` is `None`), `ŷ = 1ᵀy`.
pub fn metric_vector(state: &NetworkState, x_star: &Vector, phi: Option<&Vector>, pi_k: &Vector) -> MetricVector {
    let n = state.x.nrows();
    let w = phi.cloned().unwrap_or_else(|| Vector::from_element(n, 1.0 / n as f64));
    let xbar = state.x.transpose() * &w;
    let yhat = state.y.row_sum().transpose();
    let ones = Vector::from_element(n, 1.0);
    MetricVector {
        k: state.k,
        s1: (&xbar - x_star).norm(),
        s2: (&state.x - &ones * xbar.transpose()).norm(),
        s3: (&state.y - pi_k * yhat.transpose()).norm(),
        phi_weighted: phi.is_some(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    #[default]
    SpectralRadius,
    SpectralNorm,
}

/// Surrogate values of every matrix constant entering `C_k`.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionEstimates {
    pub kind: SurrogateKind,
    pub sigma_a: f64,
    pub sigma_b: f64,
    /// `‖I − π_{k+1}1ᵀ‖₂`
    pub xi: f64,
    pub delta_ab: f64,
    pub delta_b2: f64,
    pub phi_norm: f64,
    /// `‖π_k‖₂`, also standing in for `‖π_k‖_A`.
    pub pi_norm: f64,
    pub a_norm: f64,
    pub a_minus_i_norm: f64,
    /// `α̃_k / α̌`
    pub theta: f64,
    /// `φᵀ diag(α) π_k`
    pub alpha_tilde: f64,
}

impl ContractionEstimates {
    /// Estimates for a static pair `(A, B)` at iteration `k`, given `π_k`
    /// and `π_{k+1}`.
    pub fn from_static(
        a: &Mat,
        b: &Mat,
        phi: &Vector,
        pi_k: &Vector,
        pi_next: &Vector,
        steps: &StepSizes,
        kind: SurrogateKind,
    ) -> Result<Self> {
        let n = a.nrows();
        if steps.len() != n || phi.len() != n || pi_k.len() != n || pi_next.len() != n {
            return Err(Error::domain("estimate inputs disagree on agent count"));
        }
        let (ta, tb) = deflated(a, phi, b, pi_k);
        let measure = |m: &Mat| match kind {
            SurrogateKind::SpectralRadius => spectral_radius(m),
            SurrogateKind::SpectralNorm => spectral_norm(m),
        };
        let ones = Vector::from_element(n, 1.0);
        let xi = spectral_norm(&(Mat::identity(n, n) - pi_next * ones.transpose()));
        let alpha_tilde: f64 = (0..n).map(|i| phi[i] * steps.as_slice()[i] * pi_k[i]).sum();
        Ok(Self {
            kind,
            sigma_a: measure(&ta),
            sigma_b: measure(&tb),
            xi,
            delta_ab: 1.0,
            delta_b2: 1.0,
            phi_norm: phi.norm(),
            pi_norm: pi_k.norm(),
            a_norm: spectral_norm(a),
            a_minus_i_norm: spectral_norm(&(a - Mat::identity(n, n))),
            theta: alpha_tilde / steps.alpha_check(),
            alpha_tilde,
        })
    }
}

/// Problem constants `n`, `L`, `μ` (with `L̂ = nL`, `μ̂ = nμ`).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProblemConstants {
    pub n: usize,
    pub lipschitz: f64,
    pub mu: f64,
    /// `‖∇F(1x*)‖₂`
    pub grad_norm_at_opt: f64,
}

impl ProblemConstants {
    pub fn of(scenario: &Scenario) -> Result<Self> {
        let ens = &scenario.ensemble;
        let x_star = ens.global_optimum()?;
        let n = ens.n();
        let stacked = Mat::from_fn(n, ens.dim(), |_, c| x_star[c]);
        Ok(Self {
            n,
            lipschitz: ens.lipschitz(),
            mu: ens.mu(),
            grad_norm_at_opt: ens.stacked_gradient(&stacked).norm(),
        })
    }

    pub fn l_hat(&self) -> f64 {
        self.n as f64 * self.lipschitz
    }

    pub fn mu_hat(&self) -> f64 {
        self.n as f64 * self.mu
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearSystem {
    pub c: [[f64; 3]; 3],
    pub d: [f64; 3],
    /// Whether `α̃_k λ_k ≤ 2/(μ̂ + L̂)` held.
    pub precondition_ok: bool,
}

impl LinearSystem {
    pub fn c_matrix(&self) -> Mat {
        Mat::from_fn(3, 3, |i, j| self.c[i][j])
    }

    pub fn bound(&self, s: &MetricVector) -> [f64; 3] {
        let v = [s.s1, s.s2, s.s3];
        let mut out = self.d;
        for (i, o) in out.iter_mut().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                *o += self.c[i][j] * vj;
            }
        }
        out
    }
}

/// Entries of `C_k` and `d_k` from the surrogate constants.
pub fn build_c(
    est: &ContractionEstimates,
    lam_k: f64,
    lam_next: f64,
    consts: &ProblemConstants,
    alpha_check: f64,
) -> LinearSystem {
    let n = consts.n as f64;
    let rn = n.sqrt();
    let l = consts.lipschitz;
    let (mu_hat, l_hat) = (consts.mu_hat(), consts.l_hat());
    let (sa, sb, xi) = (est.sigma_a, est.sigma_b, est.xi);
    let (dab, db2) = (est.delta_ab, est.delta_b2);
    let at = est.alpha_tilde;
    let ac = alpha_check;
    let drop = lam_k - lam_next;
    let cross = rn * ac * l * lam_k * lam_next * est.a_norm * est.pi_norm;

    let c = [
        [1.0 - mu_hat * at * lam_k, rn * l * at * lam_k, ac * est.phi_norm],
        [
            ac * l_hat * sa * est.pi_norm * lam_k,
            sa * (1.0 + rn * ac * l * est.pi_norm * lam_k),
            ac * dab * sa,
        ],
        [
            rn * l * db2 * xi * (cross + drop),
            l * db2 * xi * (cross + lam_next * est.a_minus_i_norm + drop),
            sb + ac * l * db2 * xi * lam_next * est.a_norm,
        ],
    ];
    let d = [0.0, 0.0, db2 * xi * drop * consts.grad_norm_at_opt];
    LinearSystem {
        c,
        d,
        precondition_ok: at * lam_k <= 2.0 / (mu_hat + l_hat),
    }
}

/// Spectral radius of a 3×3 matrix from the roots of its characteristic
/// polynomial.
pub fn spectral_radius_3x3(m: &Mat) -> f64 {
    assert_eq!(m.shape(), (3, 3), "expected a 3x3 matrix");
    let tr = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = det3(m);
    // λ³ − tr λ² + minors λ − det = 0; substitute λ = t + tr/3
    let shift = tr / 3.0;
    let p = minors - tr * tr / 3.0;
    let q = -2.0 * tr.powi(3) / 27.0 + tr * minors / 3.0 - det;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc <= 0.0 {
        // three real roots
        let r = (-p / 3.0).max(0.0).sqrt();
        if r == 0.0 {
            return shift.abs();
        }
        let arg = (-q / (2.0 * r.powi(3))).clamp(-1.0, 1.0);
        let phi = arg.acos();
        (0..3)
            .map(|j| (2.0 * r * ((phi - 2.0 * std::f64::consts::PI * j as f64) / 3.0).cos() + shift).abs())
            .fold(0.0, f64::max)
    } else {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        let real = (u + v + shift).abs();
        let re = -(u + v) / 2.0 + shift;
        let im = 3f64.sqrt() / 2.0 * (u - v);
        real.max(re.hypot(im))
    }
}

fn det3(m: &Mat) -> f64 {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

/// `det(c* I − M) > 0`. For nonnegative irreducible `M` with diagonal
/// below `c*` this is equivalent to `ρ(M) < c*`.
pub fn det_criterion(m: &Mat, c_star: f64) -> bool {
    assert_eq!(m.shape(), (3, 3), "expected a 3x3 matrix");
    det3(&(Mat::identity(3, 3) * c_star - m)) > 0.0
}

/// Nonnegative and irreducible (the directed graph of nonzeros is strongly connected).
pub fn is_nonneg_irreducible(m: &Mat) -> bool {
    let n = m.nrows();
    if m.iter().any(|&v| v < 0.0) {
        return false;
    }
    // (I + M)^{n-1} > 0 elementwise
    let pattern = Mat::from_fn(n, n, |i, j| if i == j || m[(i, j)] > 0.0 { 1.0 } else { 0.0 });
    let reach = pattern.pow((n.max(2) - 1) as u32);
    reach.iter().all(|&v| v > 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingTerm {
    /// `2 / (θ_k λ_k (μ̂ + L̂))`
    Curvature,
    /// `(1 − σ_A) / (2√n L σ_A λ_k ‖π_k‖)`
    ConsensusDiagonal,
    /// `(1 − σ_B) / (2 L δ ξ λ_{k+1} ‖A‖)`
    TrackingDiagonal,
    /// `2e₃ / (e₂ + √(e₂² + 4e₁e₃))`
    Determinant,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityRow {
    pub k: usize,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    /// Lower end of the `λ_{k+1}/λ_k` window.
    pub ratio_floor: f64,
    pub ratio: f64,
    pub window_ok: bool,
    /// `min` of the four step-size bounds (0 when the window fails).
    pub alpha_bound: f64,
    pub binding: BindingTerm,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub rows: Vec<AdmissibilityRow>,
    /// First `k` from which the ratio window holds through the horizon.
    pub window_start: Option<usize>,
    /// `min` of `alpha_bound` over `k >= window_start`.
    pub alpha_upper_bound: Option<f64>,
    pub binding: Option<BindingTerm>,
    pub alpha_check: f64,
    pub alpha_ok: bool,
    pub lambda_sum_diverges: bool,
    pub lambda_vanishes: bool,
    pub surrogate: SurrogateKind,
}

impl AdmissibilityReport {
    /// Step size, ratio window and divergent weight sum all check out.
    pub fn admissible(&self) -> bool {
        self.alpha_ok && self.window_start.is_some() && self.lambda_sum_diverges
    }
}

fn quotient(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Evaluates `e₁, e₂, e₃`, the ratio window and the four-term step-size
/// bound for every `k` covered by `ests` (entry `i` is iteration `i + 1`).
pub fn theorem1_admissibility(
    ests: &[ContractionEstimates],
    consts: &ProblemConstants,
    lam: &LambdaSchedule,
    alpha_check: f64,
) -> AdmissibilityReport {
    let n = consts.n as f64;
    let rn = n.sqrt();
    let (l, mu) = (consts.lipschitz, consts.mu);
    let (mu_hat, l_hat) = (consts.mu_hat(), consts.l_hat());
    let mut rows = Vec::with_capacity(ests.len());
    for (idx, est) in ests.iter().enumerate() {
        let k = idx + 1;
        let (lk, lk1) = (lam.at(k), lam.at(k + 1));
        let (sa, sb, xi, th) = (est.sigma_a, est.sigma_b, est.xi, est.theta);
        let (dab, db2) = (est.delta_ab, est.delta_b2);
        let (phi, pi, an) = (est.phi_norm, est.pi_norm, est.a_norm);
        let drop = lk - lk1;

        let e1 = n * rn * l * l * sa * db2 * xi * an * pi * lk * lk * lk1
            * (l * dab * th + l * phi * pi + mu * dab * th);
        let e2 = n * l * sa * db2 * xi * lk * drop * ((l + mu) * dab * th + l * phi * pi)
            + n * l * db2 * xi * lk * lk1
                * (0.5 * l * phi * (1.0 - sa) * an * pi + (l * sa * phi * pi + mu * dab * sa * th) * (an + 1.0))
            + 0.5 * n * rn * l * l * sa * pi * (1.0 - sb) * th * lk * lk;
        let e3 = 0.25 * mu_hat * (1.0 - sa) * (1.0 - sb) * th * lk - 0.5 * rn * l * db2 * xi * phi * (1.0 - sa) * drop;

        let ratio_floor = 1.0 - rn * mu * (1.0 - sb) * th / (2.0 * l * db2 * xi * phi);
        let ratio = lk1 / lk;
        let window_ok = ratio_floor < ratio && ratio <= 1.0 && e3 > 0.0;

        let candidates = [
            (BindingTerm::Curvature, quotient(2.0, th * lk * (mu_hat + l_hat))),
            (BindingTerm::ConsensusDiagonal, quotient(1.0 - sa, 2.0 * rn * l * sa * lk * pi)),
            (BindingTerm::TrackingDiagonal, quotient(1.0 - sb, 2.0 * l * db2 * xi * lk1 * an)),
            (
                BindingTerm::Determinant,
                if e3 > 0.0 {
                    2.0 * e3 / (e2 + (e2 * e2 + 4.0 * e1 * e3).sqrt())
                } else {
                    0.0
                },
            ),
        ];
        let (binding, alpha_bound) = candidates
            .iter()
            .copied()
            .fold((BindingTerm::Curvature, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        rows.push(AdmissibilityRow {
            k,
            e1,
            e2,
            e3,
            ratio_floor,
            ratio,
            window_ok,
            alpha_bound,
            binding,
        });
    }

    let window_start = match rows.iter().rposition(|r| !r.window_ok) {
        None if !rows.is_empty() => Some(1),
        None => None,
        Some(last_bad) if last_bad + 1 < rows.len() => Some(rows[last_bad + 1].k),
        Some(_) => None,
    };
    let tail = window_start.map(|s| &rows[s - 1..]);
    let best = tail.and_then(|t| {
        t.iter()
            .min_by(|a, b| a.alpha_bound.total_cmp(&b.alpha_bound))
            .map(|r| (r.alpha_bound, r.binding))
    });
    AdmissibilityReport {
        window_start,
        alpha_upper_bound: best.map(|b| b.0),
        binding: best.map(|b| b.1),
        alpha_check,
        alpha_ok: best.is_some_and(|(bound, _)| alpha_check < bound),
        lambda_sum_diverges: lam.sum_diverges(),
        lambda_vanishes: lam.vanishes(),
        surrogate: ests.first().map_or(SurrogateKind::SpectralRadius, |e| e.kind),
        rows,
    }
}

/// Surrogate estimates for iterations `1..=horizon` of a static scenario.
pub fn estimates_for(scenario: &Scenario, horizon: usize, kind: SurrogateKind) -> Result<Vec<ContractionEstimates>> {
    if !scenario.weights.is_static() {
        return Err(Error::config("theory diagnostics need a static weight schedule"));
    }
    let (a, b) = scenario.weights.matrices_at(1);
    let phi = phi_static(&a)?;
    let pis = scenario.weights.pi_sequence(horizon + 1);
    (0..horizon)
        .map(|i| ContractionEstimates::from_static(&a, &b, &phi, &pis[i], &pis[i + 1], &scenario.steps, kind))
        .collect()
}

/// `(Π(1 − cλ_i), Σ_i Π_{j>i}(1 − cλ_j), Σ_i Π_{j>i}(1 − cλ_j) r_i)` over `i = 1..=K`.
pub fn lemma8_sequences(c: f64, lam: &LambdaSchedule, r: &[f64], horizon: usize) -> Result<(f64, f64, f64)> {
    if r.len() < horizon {
        return Err(Error::domain(format!("need {horizon} weights r_i, got {}", r.len())));
    }
    for k in 1..=horizon {
        if 1.0 - c * lam.at(k) < 0.0 {
            return Err(Error::domain(format!("1 - c*lambda_{k} is negative")));
        }
    }
    // walk i = K..1 keeping Π_{j=i+1}^{K}
    let mut suffix = 1.0;
    let mut tail = 0.0;
    let mut weighted = 0.0;
    for i in (1..=horizon).rev() {
        tail += suffix;
        weighted += suffix * r[i - 1];
        suffix *= 1.0 - c * lam.at(i);
    }
    Ok((suffix, tail, weighted))
}

/// Measured metric trajectory against the surrogate linear system.
#[derive(Debug, Clone, Serialize)]
pub struct LinearSystemCheck {
    /// Largest `s_i^{k+1} / [C_k s^k + d_k]_i` over the checked iterations.
    pub max_slack: [f64; 3],
    pub checked: usize,
    pub skipped_precondition: usize,
    /// Largest `ρ(C_k)` over the checked iterations.
    pub max_rho: f64,
    pub first: Option<MetricVector>,
    pub last: Option<MetricVector>,
}

/// Runs `scenario` for `horizon` steps comparing `s^{k+1}` with
/// `C_k s^k + d_k`. Iterations where `α̃_k λ_k ≤ 2/(μ̂ + L̂)` fails are skipped.
pub fn linear_system_check(scenario: &Scenario, horizon: usize, kind: SurrogateKind) -> Result<LinearSystemCheck> {
    let consts = ProblemConstants::of(scenario)?;
    let ests = estimates_for(scenario, horizon, kind)?;
    let mut sim = Simulation::new(scenario)?;
    let tracker = MetricTracker::new(scenario)?;
    let phi = tracker.phi().cloned();
    let x_star = tracker.x_star().clone();
    let pis = scenario.weights.pi_sequence(horizon + 1);
    let alpha_check = scenario.steps.alpha_check();

    let mut out = LinearSystemCheck {
        max_slack: [0.0; 3],
        checked: 0,
        skipped_precondition: 0,
        max_rho: 0.0,
        first: None,
        last: None,
    };
    let mut s_prev = metric_vector(sim.state(), &x_star, phi.as_ref(), &pis[0]);
    out.first = Some(s_prev);
    for k in 1..=horizon {
        sim.step()?;
        let s_next = metric_vector(sim.state(), &x_star, phi.as_ref(), &pis[k]);
        let sys = build_c(&ests[k - 1], scenario.lambda.at(k), scenario.lambda.at(k + 1), &consts, alpha_check);
        if sys.precondition_ok {
            let bound = sys.bound(&s_prev);
            for (i, (&meas, b)) in [s_next.s1, s_next.s2, s_next.s3].iter().zip(bound).enumerate() {
                if b > 0.0 {
                    out.max_slack[i] = out.max_slack[i].max(meas / b);
                }
            }
            out.max_rho = out.max_rho.max(spectral_radius_3x3(&sys.c_matrix()));
            out.checked += 1;
        } else {
            out.skipped_precondition += 1;
        }
        s_prev = s_next;
    }
    out.last = Some(s_prev);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{random_initial_state, Mode};
    use crate::graph::DirectedGraph;
    use crate::objective::make_sensor_scenario;
    use crate::weights::WeightSchedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scenario(alpha: f64, e: f64, m: f64) -> Scenario {
        Scenario {
            weights: WeightSchedule::uniform(DirectedGraph::sensor_ring6()).unwrap(),
            ensemble: make_sensor_scenario(6, 3, 2, 0.01, 1).unwrap(),
            mode: Mode::Wgt,
            steps: StepSizes::homogeneous(alpha, 6).unwrap(),
            lambda: LambdaSchedule::decaying(e, m).unwrap(),
            x1: random_initial_state(6, 2, 1001),
        }
    }

    #[test]
    fn metric_vector_zero_cases() {
        let pi = Vector::from_vec(vec![0.2, 0.3, 0.5]);
        let v = [0.4, -1.0];
        let x = Mat::from_fn(3, 2, |_, c| v[c]);
        let yhat = [1.5, -2.0];
        let y = Mat::from_fn(3, 2, |i, c| pi[i] * yhat[c]);
        let s = NetworkState { k: 4, x, y };
        let x_star = Vector::from_vec(vec![0.4, -1.0]);
        let m = metric_vector(&s, &x_star, None, &pi);
        assert!(m.s1 < 1e-15 && m.s2 < 1e-15 && m.s3 < 1e-15);
        assert!(!m.phi_weighted);
    }

    #[test]
    fn metric_vector_matches_dense_recomputation() {
        let sc = scenario(0.1, 0.8, 10.0);
        let mut sim = Simulation::new(&sc).unwrap();
        for _ in 0..37 {
            sim.step().unwrap();
        }
        let (a, _) = sc.weights.matrices_at(1);
        let phi = phi_static(&a).unwrap();
        let pi = sc.weights.pi_sequence(38).pop().unwrap();
        let x_star = sc.ensemble.global_optimum().unwrap();
        let m = metric_vector(sim.state(), &x_star, Some(&phi), &pi);
        // entry-by-entry recomputation
        let s = sim.state();
        let mut xbar = [0.0; 2];
        let mut yhat = [0.0; 2];
        for i in 0..6 {
            for c in 0..2 {
                xbar[c] += phi[i] * s.x[(i, c)];
                yhat[c] += s.y[(i, c)];
            }
        }
        let s1 = ((xbar[0] - x_star[0]).powi(2) + (xbar[1] - x_star[1]).powi(2)).sqrt();
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for i in 0..6 {
            for c in 0..2 {
                s2 += (s.x[(i, c)] - xbar[c]).powi(2);
                s3 += (s.y[(i, c)] - pi[i] * yhat[c]).powi(2);
            }
        }
        assert!((m.s1 - s1).abs() <= 1e-12 * (1.0 + s1));
        assert!((m.s2 - s2.sqrt()).abs() <= 1e-12 * (1.0 + s2.sqrt()));
        assert!((m.s3 - s3.sqrt()).abs() <= 1e-12 * (1.0 + s3.sqrt()));
    }

    #[test]
    fn c_reduces_to_upper_triangular_limit() {
        let sc = scenario(0.1, 0.8, 10.0);
        let consts = ProblemConstants::of(&sc).unwrap();
        let est = &estimates_for(&sc, 1, SurrogateKind::SpectralRadius).unwrap()[0];
        let sys = build_c(est, 0.0, 0.0, &consts, 0.1);
        let c = sys.c;
        assert_eq!(c[0][0], 1.0);
        assert_eq!(c[1][1], est.sigma_a);
        assert_eq!(c[2][2], est.sigma_b);
        assert_eq!([c[1][0], c[2][0], c[2][1], c[0][1]], [0.0; 4]);
        assert!((c[0][2] - 0.1 * est.phi_norm).abs() < 1e-15);
        assert!((c[1][2] - 0.1 * est.sigma_a).abs() < 1e-15);
        assert_eq!(sys.d, [0.0; 3]);
    }

    #[test]
    fn d_has_only_a_tracking_component() {
        let sc = scenario(0.1, 0.8, 10.0);
        let consts = ProblemConstants::of(&sc).unwrap();
        let ests = estimates_for(&sc, 20, SurrogateKind::SpectralRadius).unwrap();
        for (i, est) in ests.iter().enumerate() {
            let k = i + 1;
            let sys = build_c(est, sc.lambda.at(k), sc.lambda.at(k + 1), &consts, 0.1);
            assert_eq!(sys.d[0], 0.0);
            assert_eq!(sys.d[1], 0.0);
            assert!(sys.d[2] > 0.0);
        }
    }

    #[test]
    fn c_converges_entrywise_to_limit() {
        let sc = scenario(0.1, 0.8, 10.0);
        let consts = ProblemConstants::of(&sc).unwrap();
        let est = estimates_for(&sc, 1, SurrogateKind::SpectralRadius).unwrap().remove(0);
        let limit = build_c(&est, 0.0, 0.0, &consts, 0.1).c_matrix();
        let mut prev = f64::INFINITY;
        for k in [10usize, 1_000, 100_000, 10_000_000, 1_000_000_000] {
            let c = build_c(&est, sc.lambda.at(k), sc.lambda.at(k + 1), &consts, 0.1).c_matrix();
            let gap = (c - &limit).amax();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn cubic_radius_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let m = Mat::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let oracle = spectral_radius(&m);
            assert!((spectral_radius_3x3(&m) - oracle).abs() <= 1e-9 * (1.0 + oracle), "{m}");
        }
        assert_eq!(spectral_radius_3x3(&Mat::zeros(3, 3)), 0.0);
        let rot = Mat::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!((spectral_radius_3x3(&rot) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn det_criterion_boundaries() {
        assert!(det_criterion(&Mat::zeros(3, 3), 1.0));
        let perm = Mat::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(is_nonneg_irreducible(&perm));
        assert!(!det_criterion(&perm, 1.0));
        assert!(!is_nonneg_irreducible(&Mat::identity(3, 3)));
    }

    #[test]
    fn decay_sequences_basic_cases() {
        let one = LambdaSchedule::constant(1.0).unwrap();
        let (prod, tail, _) = lemma8_sequences(1.0, &one, &[1.0; 5], 5).unwrap();
        assert_eq!(prod, 0.0);
        // only the i = K term survives
        assert_eq!(tail, 1.0);
        assert!(lemma8_sequences(2.0, &one, &[1.0; 3], 3).is_err());
        assert!(lemma8_sequences(0.5, &one, &[1.0; 2], 3).is_err());
    }

    #[test]
    fn harmonic_product_decays() {
        let lam = LambdaSchedule::decaying(1.0, 0.0).unwrap();
        let r: Vec<f64> = (1..=10_000).map(|k| lam.at(k)).collect();
        let mut prev = f64::INFINITY;
        for horizon in [100usize, 1_000, 10_000] {
            let (prod, _, _) = lemma8_sequences(0.5, &lam, &r, horizon).unwrap();
            let direct: f64 = (1..=horizon).map(|i| 1.0 - 0.5 / i as f64).product();
            assert!((prod - direct).abs() <= 1e-12);
            assert!(prod < prev);
            prev = prod;
        }
        assert!(prev <= 1e-2);
    }

    #[test]
    fn decay_sums_match_quadratic_oracle() {
        let lam = LambdaSchedule::decaying(0.8, 10.0).unwrap();
        let r: Vec<f64> = (1..=200).map(|k| (k as f64).sqrt()).collect();
        let horizon = 200;
        let (_, tail, weighted) = lemma8_sequences(0.3, &lam, &r, horizon).unwrap();
        let mut t = 0.0;
        let mut w = 0.0;
        for i in 1..=horizon {
            let p: f64 = (i + 1..=horizon).map(|j| 1.0 - 0.3 * lam.at(j)).product();
            t += p;
            w += p * r[i - 1];
        }
        assert!((tail - t).abs() <= 1e-10 * t);
        assert!((weighted - w).abs() <= 1e-10 * w);
    }

    #[test]
    fn admissibility_flags() {
        let sc = scenario(0.1, 0.8, 10.0);
        let consts = ProblemConstants::of(&sc).unwrap();
        let ests = estimates_for(&sc, 2000, SurrogateKind::SpectralRadius).unwrap();

        let constant = LambdaSchedule::constant(0.01).unwrap();
        let rep = theorem1_admissibility(&ests, &consts, &constant, 0.1);
        assert!(rep.rows.iter().all(|r| r.ratio == 1.0 && r.window_ok));
        assert_eq!(rep.window_start, Some(1));

        let fast = LambdaSchedule::decaying(1.4, 0.0).unwrap();
        assert!(!theorem1_admissibility(&ests, &consts, &fast, 0.1).lambda_sum_diverges);

        let rep = theorem1_admissibility(&ests, &consts, &sc.lambda, 0.1);
        assert!(rep.lambda_sum_diverges && rep.lambda_vanishes);
        let start = rep.window_start.expect("window opens before 2000");
        assert!(start > 1);
        let bound = rep.alpha_upper_bound.unwrap();
        assert!(bound > 0.0 && bound.is_finite());
        assert_eq!(rep.alpha_ok, 0.1 < bound);
        // e3 > 0 exactly when the ratio window holds
        for r in &rep.rows {
            assert_eq!(r.e3 > 0.0, r.ratio_floor < r.ratio, "k = {}", r.k);
        }
    }

    #[test]
    fn admissible_step_gives_contracting_c() {
        let probe = scenario(0.1, 0.8, 10.0);
        let consts = ProblemConstants::of(&probe).unwrap();
        let ests = estimates_for(&probe, 3000, SurrogateKind::SpectralRadius).unwrap();
        let rep = theorem1_admissibility(&ests, &consts, &probe.lambda, 0.1);
        let alpha = 0.5 * rep.alpha_upper_bound.unwrap();

        let sc = scenario(alpha, 0.8, 10.0);
        let ests = estimates_for(&sc, 3000, SurrogateKind::SpectralRadius).unwrap();
        let rep = theorem1_admissibility(&ests, &consts, &sc.lambda, alpha);
        assert!(rep.admissible(), "{:?} {:?}", rep.alpha_upper_bound, rep.window_start);
        for k in rep.window_start.unwrap()..=3000 {
            let sys = build_c(&ests[k - 1], sc.lambda.at(k), sc.lambda.at(k + 1), &consts, alpha);
            let rho = spectral_radius_3x3(&sys.c_matrix());
            assert!(rho < 1.0, "k = {k}, rho = {rho}");
            assert!(det_criterion(&sys.c_matrix(), 1.0));
        }
    }
}
