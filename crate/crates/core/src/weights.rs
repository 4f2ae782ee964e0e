//! Per-iteration mixing matrices.
//!
//! `A_k` is row-stochastic on the pattern `in(i) ∪ {i}` and mixes states;
//! `B_k` is column-stochastic on the pattern `out(i) ∪ {i}` and mixes the
//! tracker. Both are pure functions of `(seed, k)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::linalg::{spectral_radius, Mat, Vector};

pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITERS: usize = 100_000;
const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Equal weight on self and every neighbor.
    Uniform,
    /// Convex combination `(1 - jitter) * uniform + jitter * random`, where
    /// the random part is a seeded stochastic vector on the same pattern.
    Dithered { jitter: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Static,
    TimeVarying,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightSchedule {
    graph: DirectedGraph,
    scheme: Scheme,
    mode: ScheduleMode,
    seed: u64,
    a_floor: f64,
    b_floor: f64,
}

impl WeightSchedule {
    pub fn new(graph: DirectedGraph, scheme: Scheme, mode: ScheduleMode, seed: u64) -> Result<Self> {
        graph.require_strongly_connected()?;
        if let Scheme::Dithered { jitter } = scheme {
            if !(0.0..1.0).contains(&jitter) {
                return Err(Error::config(format!("jitter must lie in [0, 1), got {jitter}")));
            }
        }
        let shrink = match scheme {
            Scheme::Uniform => 1.0,
            Scheme::Dithered { jitter } => 1.0 - jitter,
        };
        let n = graph.n();
        let a_floor = (0..n)
            .map(|i| 1.0 / (graph.in0(i).len() + 1) as f64)
            .fold(1.0, f64::min)
            * shrink;
        let b_floor = (0..n)
            .map(|i| 1.0 / (graph.out0(i).len() + 1) as f64)
            .fold(1.0, f64::min)
            * shrink;
        Ok(Self {
            graph,
            scheme,
            mode,
            seed,
            a_floor,
            b_floor,
        })
    }

    pub fn uniform(graph: DirectedGraph) -> Result<Self> {
        Self::new(graph, Scheme::Uniform, ScheduleMode::Static, 0)
    }

    /// Rejects schedules whose guaranteed floors fall below the requested ones.
    pub fn require_floors(&self, a_min: Option<f64>, b_min: Option<f64>) -> Result<()> {
        for (name, want, have) in [("a", a_min, self.a_floor), ("b", b_min, self.b_floor)] {
            if let Some(want) = want {
                if want <= 0.0 {
                    return Err(Error::config(format!("{name}_floor must be positive")));
                }
                if have < want {
                    return Err(Error::config(format!(
                        "scheme guarantees {name}_floor = {have}, below the requested {want}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Lower bound on every positive entry of every `A_k`.
    pub fn a_floor(&self) -> f64 {
        self.a_floor
    }

    /// Lower bound on every positive entry of every `B_k`.
    pub fn b_floor(&self) -> f64 {
        self.b_floor
    }

    pub fn is_static(&self) -> bool {
        self.mode == ScheduleMode::Static || self.scheme == Scheme::Uniform
    }

    /// `(A_k, B_k)` for iteration `k >= 1`.
    pub fn matrices_at(&self, k: usize) -> (Mat, Mat) {
        let n = self.graph.n();
        let stream = if self.is_static() { 0 } else { k as u64 };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);

        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            let support = with_self(self.graph.in0(i), i);
            let w = self.row_weights(&support, &mut rng);
            for (&j, w) in support.iter().zip(w) {
                a[(i, j)] = w;
            }
        }
        let mut b = Mat::zeros(n, n);
        for i in 0..n {
            let support = with_self(self.graph.out0(i), i);
            let w = self.row_weights(&support, &mut rng);
            for (&l, w) in support.iter().zip(w) {
                b[(l, i)] = w;
            }
        }
        (a, b)
    }

    fn row_weights(&self, support: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let m = support.len() as f64;
        match self.scheme {
            Scheme::Uniform => vec![1.0 / m; support.len()],
            Scheme::Dithered { jitter } => {
                let raw: Vec<f64> = support.iter().map(|_| rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                raw.iter()
                    .map(|r| {
                        let rand_part = if total > 0.0 { r / total } else { 1.0 / m };
                        (1.0 - jitter) / m + jitter * rand_part
                    })
                    .collect()
            }
        }
    }

    /// `π_1 = 1/n`, `π_{k+1} = B_k π_k`; returns `π_1..=π_horizon`.
    pub fn pi_sequence(&self, horizon: usize) -> Vec<Vector> {
        let n = self.graph.n();
        let mut out = Vec::with_capacity(horizon);
        if horizon == 0 {
            return out;
        }
        let mut pi = Vector::from_element(n, 1.0 / n as f64);
        out.push(pi.clone());
        for k in 1..horizon {
            let (_, b) = self.matrices_at(k);
            pi = &b * &pi;
            out.push(pi.clone());
        }
        out
    }

    /// Checks both matrices against the graph pattern, stochasticity and floors.
    pub fn check_admissible(&self, a: &Mat, b: &Mat) -> Result<()> {
        check_pattern(&self.graph, a, b, self.a_floor, self.b_floor)
    }
}

fn with_self(nbrs: &[usize], i: usize) -> Vec<usize> {
    let mut s = nbrs.to_vec();
    s.push(i);
    s.sort_unstable();
    s
}

/// Validates `A` row-stochastic on `in(i) ∪ {i}` and `B` column-stochastic
/// on `out(i) ∪ {i}`, with positive entries at least the given floors.
pub fn check_pattern(g: &DirectedGraph, a: &Mat, b: &Mat, a_floor: f64, b_floor: f64) -> Result<()> {
    let n = g.n();
    if a.shape() != (n, n) || b.shape() != (n, n) {
        return Err(Error::domain("weight matrix shape does not match graph"));
    }
    let tol = 1e-15;
    for i in 0..n {
        let row_sum: f64 = a.row(i).iter().sum();
        if (row_sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::config(format!("row {} of A sums to {row_sum}", i + 1)));
        }
        let col_sum: f64 = b.column(i).iter().sum();
        if (col_sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::config(format!("column {} of B sums to {col_sum}", i + 1)));
        }
        for j in 0..n {
            let a_expected = i == j || g.in0(i).contains(&j);
            let b_expected = i == j || g.out0(j).contains(&i);
            let (aij, bij) = (a[(i, j)], b[(i, j)]);
            if a_expected != (aij > 0.0) || aij < 0.0 || (a_expected && aij < a_floor - tol) {
                return Err(Error::config(format!("A[{},{}] = {aij} breaks the pattern", i + 1, j + 1)));
            }
            if b_expected != (bij > 0.0) || bij < 0.0 || (b_expected && bij < b_floor - tol) {
                return Err(Error::config(format!("B[{},{}] = {bij} breaks the pattern", i + 1, j + 1)));
            }
        }
    }
    Ok(())
}

/// Left Perron vector of a row-stochastic `A`: `φᵀA = φᵀ`, `1ᵀφ = 1`.
pub fn phi_static(a: &Mat) -> Result<Vector> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(Error::domain("phi_static needs a non-empty square matrix"));
    }
    let at = a.transpose();
    let mut phi = Vector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_MAX_ITERS {
        let mut next = &at * &phi;
        let s = next.sum();
        next /= s;
        let delta = (&next - &phi).abs().sum();
        phi = next;
        if delta < POWER_TOL {
            return Ok(phi);
        }
    }
    Err(Error::Numerical(format!(
        "left Perron vector did not converge within {POWER_MAX_ITERS} iterations"
    )))
}

/// Spectral radii of `A - 1φᵀ` and `B - π1ᵀ`.
pub fn contraction_radii(a: &Mat, phi: &Vector, b: &Mat, pi: &Vector) -> (f64, f64) {
    let (ta, tb) = deflated(a, phi, b, pi);
    (spectral_radius(&ta), spectral_radius(&tb))
}

/// `(A - 1φᵀ, B - π1ᵀ)`.
pub fn deflated(a: &Mat, phi: &Vector, b: &Mat, pi: &Vector) -> (Mat, Mat) {
    let n = a.nrows();
    let ones = Vector::from_element(n, 1.0);
    (a - &ones * phi.transpose(), b - pi * ones.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;

    fn ring6(seed: u64, mode: ScheduleMode) -> WeightSchedule {
        WeightSchedule::new(
            DirectedGraph::sensor_ring6(),
            Scheme::Dithered { jitter: 0.6 },
            mode,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn uniform_three_cycle_rows_and_columns() {
        let ws = WeightSchedule::uniform(DirectedGraph::cycle(3).unwrap()).unwrap();
        let (a, b) = ws.matrices_at(1);
        // agent 2 (index 1) hears from agent 1 (index 0)
        assert_eq!(a[(1, 1)], 0.5);
        assert_eq!(a[(1, 0)], 0.5);
        assert_eq!(a[(1, 2)], 0.0);
        // agent 2 sends to agent 3 (index 2)
        assert_eq!(b[(1, 1)], 0.5);
        assert_eq!(b[(2, 1)], 0.5);
        assert_eq!(b[(0, 1)], 0.0);
        ws.check_admissible(&a, &b).unwrap();
        assert_eq!(ws.a_floor(), 0.5);
    }

    #[test]
    fn disconnected_graph_is_config_error() {
        let g = DirectedGraph::new(3, &[(1, 2), (2, 3)]).unwrap();
        assert!(matches!(WeightSchedule::uniform(g), Err(Error::Config(_))));
    }

    #[test]
    fn time_varying_is_deterministic_and_varies() {
        let ws = ring6(7, ScheduleMode::TimeVarying);
        let (a1, b1) = ws.matrices_at(3);
        let (a2, b2) = ws.matrices_at(3);
        assert_eq!(a1.as_slice(), a2.as_slice());
        assert_eq!(b1.as_slice(), b2.as_slice());
        let (a4, _) = ws.matrices_at(4);
        assert_ne!(a1.as_slice(), a4.as_slice());
    }

    #[test]
    fn static_dithered_is_constant_in_k() {
        let ws = ring6(7, ScheduleMode::Static);
        assert_eq!(ws.matrices_at(1).0.as_slice(), ws.matrices_at(50).0.as_slice());
    }

    #[test]
    fn generated_matrices_are_admissible() {
        for seed in 0..20 {
            let ws = ring6(seed, ScheduleMode::TimeVarying);
            for k in 1..=30 {
                let (a, b) = ws.matrices_at(k);
                ws.check_admissible(&a, &b).unwrap();
            }
        }
    }

    #[test]
    fn floors_are_validated() {
        let ws = ring6(1, ScheduleMode::Static);
        assert!(ws.require_floors(Some(0.01), Some(0.01)).is_ok());
        assert!(ws.require_floors(Some(0.9), None).is_err());
        assert!(ws.require_floors(Some(0.0), None).is_err());
    }

    #[test]
    fn pi_uniform_fixed_point() {
        let b = Mat::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let pi = Vector::from_element(2, 0.5);
        let next = &b * &pi;
        assert_eq!(next.as_slice(), &[0.5, 0.5]);
        let ws = WeightSchedule::uniform(DirectedGraph::pair()).unwrap();
        let seq = ws.pi_sequence(2);
        assert_eq!(seq[1].as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn pi_lower_bound_three_cycle() {
        let ws = WeightSchedule::uniform(DirectedGraph::cycle(3).unwrap()).unwrap();
        let bound = 0.5f64.powi(3) / 3.0;
        for pi in ws.pi_sequence(10) {
            assert!((pi.sum() - 1.0).abs() < 1e-12);
            assert!(pi.iter().all(|&v| v >= bound));
        }
    }

    /// Oracle: right Perron vector from the linear system (B - I)π = 0, 1ᵀπ = 1.
    fn perron_by_solve(m: &Mat) -> Vector {
        let n = m.nrows();
        let mut sys = m - Mat::identity(n, n);
        let mut rhs = Vector::zeros(n);
        for j in 0..n {
            sys[(n - 1, j)] = 1.0;
        }
        rhs[n - 1] = 1.0;
        sys.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn static_pi_converges_to_perron_vector() {
        let ws = ring6(3, ScheduleMode::Static);
        let (_, b) = ws.matrices_at(1);
        let seq = ws.pi_sequence(3000);
        let target = perron_by_solve(&b);
        assert!((seq.last().unwrap() - &target).amax() < 1e-12);
    }

    #[test]
    fn phi_of_symmetric_pair() {
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let phi = phi_static(&a).unwrap();
        assert!((phi - Vector::from_element(2, 0.5)).amax() < 1e-15);
    }

    #[test]
    fn phi_of_doubly_stochastic_is_uniform() {
        let ws = WeightSchedule::uniform(DirectedGraph::cycle(5).unwrap()).unwrap();
        let (a, _) = ws.matrices_at(1);
        let phi = phi_static(&a).unwrap();
        assert!((phi - Vector::from_element(5, 0.2)).amax() < 1e-12);
    }

    #[test]
    fn phi_matches_eigen_solve_on_transpose() {
        for seed in 0..10 {
            let ws = ring6(seed, ScheduleMode::Static);
            let (a, _) = ws.matrices_at(1);
            let phi = phi_static(&a).unwrap();
            let oracle = perron_by_solve(&a.transpose());
            assert!((&phi - &oracle).amax() < 1e-10);
            let resid = (phi.transpose() * &a - phi.transpose()).norm();
            assert!(resid <= 1e-10);
            let floor = ws.a_floor().powi(6) / 6.0;
            assert!(phi.iter().all(|&v| v >= floor));
        }
    }

    #[test]
    fn rank_one_removal_annihilates() {
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let v = Vector::from_element(2, 0.5);
        let (ra, rb) = contraction_radii(&a, &v, &a, &v);
        assert!(ra.abs() < 1e-15 && rb.abs() < 1e-15);
    }

    /// ρ(M) < 1 iff ‖M^m‖ < 1 for some m (Gelfand); check with m = 256.
    fn power_norm(m: &Mat, pow: u32) -> f64 {
        spectral_norm(&m.pow(pow))
    }

    #[test]
    fn contraction_radii_below_one_against_power_oracle() {
        let three = WeightSchedule::uniform(DirectedGraph::cycle(3).unwrap()).unwrap();
        let mut cases = vec![three];
        for seed in 0..10 {
            cases.push(ring6(seed, ScheduleMode::Static));
        }
        cases.push(WeightSchedule::uniform(DirectedGraph::sensor_ring6()).unwrap());
        for ws in cases {
            let (a, b) = ws.matrices_at(1);
            let phi = phi_static(&a).unwrap();
            let pi = ws.pi_sequence(5000).pop().unwrap();
            let (ra, rb) = contraction_radii(&a, &phi, &b, &pi);
            assert!(ra < 1.0 && rb < 1.0, "radii {ra} {rb}");
            let (ta, tb) = deflated(&a, &phi, &b, &pi);
            assert!(power_norm(&ta, 256) < 1.0);
            assert!(power_norm(&tb, 256) < 1.0);
            // and the radius really is the decay rate
            let g = power_norm(&ta, 256).powf(1.0 / 256.0);
            assert!(g + 1e-9 >= ra);
        }
    }
}
