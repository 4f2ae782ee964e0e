//! Local least-squares objectives `f_i(x) = ‖s_i − S_i x‖² + r_i‖x‖²`.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Generator family used for every seeded draw in this crate.
pub const RNG_FAMILY: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64";

#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    s_mat: Mat,
    s_vec: Vector,
    r: f64,
    /// `2(SᵀS + rI)`
    hessian: Mat,
    /// `2Sᵀs`
    linear: Vector,
    mu: f64,
    lipschitz: f64,
}

impl QuadraticObjective {
    pub fn new(s_mat: Mat, s_vec: Vector, r: f64) -> Result<Self> {
        if s_mat.nrows() != s_vec.len() {
            return Err(Error::domain(format!(
                "measurement matrix has {} rows but vector has {} entries",
                s_mat.nrows(),
                s_vec.len()
            )));
        }
        if !(r >= 0.0) {
            return Err(Error::domain(format!("regularizer must be nonnegative, got {r}")));
        }
        let p = s_mat.ncols();
        let gram = s_mat.transpose() * &s_mat;
        let hessian = (&gram + Mat::identity(p, p) * r) * 2.0;
        let linear = s_mat.transpose() * &s_vec * 2.0;
        let eig = SymmetricEigen::new(gram);
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        Ok(Self {
            s_mat,
            s_vec,
            r,
            hessian,
            linear,
            mu: 2.0 * (lo.max(0.0) + r),
            lipschitz: 2.0 * (hi + r),
        })
    }

    pub fn dim(&self) -> usize {
        self.s_mat.ncols()
    }

    pub fn measurement_matrix(&self) -> &Mat {
        &self.s_mat
    }

    pub fn measurements(&self) -> &Vector {
        &self.s_vec
    }

    pub fn regularizer(&self) -> f64 {
        self.r
    }

    /// Strong convexity modulus `2(λ_min(SᵀS) + r)`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Gradient Lipschitz constant `2(λ_max(SᵀS) + r)`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn hessian(&self) -> &Mat {
        &self.hessian
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x.len())?;
        let resid = &self.s_vec - &self.s_mat * x;
        Ok(resid.norm_squared() + self.r * x.norm_squared())
    }

    /// `2Sᵀ(Sx − s) + 2rx`
    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x.len())?;
        let mut out = Vector::zeros(self.dim());
        self.gradient_into(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Allocation-free gradient for the engine's hot loop. Slices must have length `p`.
    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let p = self.dim();
        for a in 0..p {
            let mut acc = -self.linear[a];
            for b in 0..p {
                acc += self.hessian[(a, b)] * x[b];
            }
            out[a] = acc;
        }
    }

    /// Minimizer of this objective alone.
    pub fn local_minimizer(&self) -> Result<Vector> {
        self.hessian
            .clone()
            .cholesky()
            .map(|c| c.solve(&self.linear))
            .ok_or_else(|| Error::Numerical("local Hessian is singular".into()))
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::domain(format!("expected a {}-vector, got {len}", self.dim())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveEnsemble {
    agents: Vec<QuadraticObjective>,
    lipschitz: f64,
    mu: f64,
    /// The parameter behind the synthetic measurements, when generated.
    truth: Option<Vector>,
}

impl ObjectiveEnsemble {
    pub fn new(agents: Vec<QuadraticObjective>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::domain("ensemble needs at least one agent"))?;
        let p = first.dim();
        if agents.iter().any(|a| a.dim() != p) {
            return Err(Error::domain("agents disagree on decision dimension"));
        }
        let lipschitz = agents.iter().map(|a| a.lipschitz).fold(0.0, f64::max);
        let mu = agents.iter().map(|a| a.mu).fold(f64::INFINITY, f64::min);
        if !(mu > 0.0) {
            return Err(Error::config(
                "some local objective is not strongly convex (use r > 0)",
            ));
        }
        Ok(Self {
            agents,
            lipschitz,
            mu,
            truth: None,
        })
    }

    pub fn agents(&self) -> &[QuadraticObjective] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> Result<&QuadraticObjective> {
        if i == 0 || i > self.agents.len() {
            return Err(Error::domain(format!("unknown agent id {i}")));
        }
        Ok(&self.agents[i - 1])
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.agents[0].dim()
    }

    /// `L = max_i L_i`
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `μ = min_i μ_i`
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lipschitz_hat(&self) -> f64 {
        self.n() as f64 * self.lipschitz
    }

    pub fn mu_hat(&self) -> f64 {
        self.n() as f64 * self.mu
    }

    pub fn truth(&self) -> Option<&Vector> {
        self.truth.as_ref()
    }

    /// Solves `Σ(SᵢᵀSᵢ + rᵢI) x = Σ Sᵢᵀsᵢ`.
    pub fn global_optimum(&self) -> Result<Vector> {
        let p = self.dim();
        let mut h = Mat::zeros(p, p);
        let mut c = Vector::zeros(p);
        for a in &self.agents {
            h += &a.hessian;
            c += &a.linear;
        }
        h.cholesky()
            .map(|ch| ch.solve(&c))
            .ok_or_else(|| Error::Numerical("aggregate Hessian is singular".into()))
    }

    /// Row `i` of `∇F(x)` is `∇f_i(x_i)`; `x` is `n × p`.
    pub fn stacked_gradient(&self, x: &Mat) -> Mat {
        let (n, p) = x.shape();
        let mut out = Mat::zeros(n, p);
        let mut xi = vec![0.0; p];
        let mut gi = vec![0.0; p];
        for (i, a) in self.agents.iter().enumerate() {
            for c in 0..p {
                xi[c] = x[(i, c)];
            }
            a.gradient_into(&xi, &mut gi);
            for c in 0..p {
                out[(i, c)] = gi[c];
            }
        }
        out
    }
}

/// Random sensor network: `S_i ~ U[0,10]^{d×p}`, `x̃ ~ U[0,1]^p`,
/// `s_i = S_i x̃ + ω_i` with `ω_i ~ N(0, I)`.
///
/// Draw order on a single stream: all `S_i` (agent-major, row-major),
/// then `x̃`, then `ω_i` per agent.
pub fn make_sensor_scenario(n: usize, d: usize, p: usize, r: f64, seed: u64) -> Result<ObjectiveEnsemble> {
    if n == 0 || d == 0 || p == 0 {
        return Err(Error::domain("n, d and p must all be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mats: Vec<Mat> = (0..n)
        .map(|_| {
            let entries: Vec<f64> = (0..d * p).map(|_| 10.0 * rng.random::<f64>()).collect();
            Mat::from_row_slice(d, p, &entries)
        })
        .collect();
    let truth = Vector::from_iterator(p, (0..p).map(|_| rng.random::<f64>()));
    let mut agents = Vec::with_capacity(n);
    for s_mat in mats {
        let noise = Vector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let s_vec = &s_mat * &truth + noise;
        agents.push(QuadraticObjective::new(s_mat, s_vec, r)?);
    }
    let mut ens = ObjectiveEnsemble::new(agents)?;
    ens.truth = Some(truth);
    Ok(ens)
}
