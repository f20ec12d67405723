//! Entropy-regularized RL with linear function approximation.
//!
//! Covers the tabular soft Bellman operator, the steady-state triplet
//! distribution of a behaviour policy, the first-order linear system
//! `A theta = b` of the critic regression, truncated-rank solves of that
//! system, and the synthetic Picard systems used to measure how the rank of
//! the solve trades perturbation sensitivity against truncation bias.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::{thin_svd, Matrix};
use crate::rng;
use crate::uncertainty::{sample_kernel, GroundMetric, TabularKernel, WassersteinBall};

/// Finite discounted MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    /// `reward[(s, a)]`, shape `n_states x n_actions`.
    pub reward: Matrix,
    pub kernel: TabularKernel,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
}

impl FiniteMdp {
    pub fn new(
        reward: Matrix,
        kernel: TabularKernel,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if reward.shape() != (kernel.n_states(), kernel.n_actions()) {
            return Err(Error::Dimension(
                "reward shape does not match kernel".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1)")));
        }
        if !reward.is_finite() {
            return Err(Error::Config("reward must be finite".into()));
        }
        if initial_dist.len() != kernel.n_states() {
            return Err(Error::Dimension("initial distribution length".into()));
        }
        Ok(Self {
            reward,
            kernel,
            gamma,
            initial_dist,
        })
    }

    pub fn n_states(&self) -> usize {
        self.kernel.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.kernel.n_actions()
    }
}

/// `log sum exp(x)` with max subtraction.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Boltzmann policy `pi(a) = exp(q(a) - logsumexp(q))`.
pub fn softmax_policy(q_row: &[f64]) -> Vec<f64> {
    let m = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q_row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Soft Bellman backup `R + gamma E_{s'}[logsumexp_a' Q(s', a')]`.
pub fn soft_bellman(mdp: &FiniteMdp, q: &Matrix) -> Matrix {
    let values: Vec<f64> = (0..mdp.n_states()).map(|s| logsumexp(q.row(s))).collect();
    let mut out = mdp.reward.clone();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let ev: f64 = mdp
                .kernel
                .row(s, a)
                .iter()
                .zip(&values)
                .map(|(p, v)| p * v)
                .sum();
            out[(s, a)] += mdp.gamma * ev;
        }
    }
    out
}

/// Iterate the soft Bellman operator from zero until the residual
/// `||BQ - Q||_inf` is at most `tol`.
pub fn soft_value_iteration(mdp: &FiniteMdp, tol: f64) -> Result<Matrix> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be positive")));
    }
    let mut q = Matrix::zeros(mdp.n_states(), mdp.n_actions());
    loop {
        let next = soft_bellman(mdp, &q);
        let residual = next.sub(&q).max_abs();
        if !residual.is_finite() {
            return Err(Error::Numerical("soft value iteration diverged".into()));
        }
        q = next;
        if residual <= tol {
            // q now equals B(previous); its own residual is at most gamma * tol
            return Ok(q);
        }
    }
}

/// Steady-state distribution over `(s, a, s')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletDistribution {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flattened `[s][a][s']`.
    pub probs: Vec<f64>,
    pub state_marginal: Vec<f64>,
}

impl TripletDistribution {
    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.probs[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// Marginal over `(s, a)`.
    pub fn pair_marginal(&self) -> Vec<f64> {
        self.probs
            .chunks(self.n_states)
            .map(|c| c.iter().sum())
            .collect()
    }
}

/// State-to-state matrix of the chain induced by `behavior`.
pub fn induced_chain(kernel: &TabularKernel, behavior: &Matrix) -> Matrix {
    let n = kernel.n_states();
    let mut t = Matrix::zeros(n, n);
    for s in 0..n {
        for a in 0..kernel.n_actions() {
            let pa = behavior[(s, a)];
            for (dst, p) in t.row_mut(s).iter_mut().zip(kernel.row(s, a)) {
                *dst += pa * p;
            }
        }
    }
    t
}

const STATIONARY_TOL: f64 = 1e-10;
const POWER_BUDGET: usize = 1_000_000;

/// Steady-state triplet distribution of the chain induced by a strictly
/// positive behaviour policy (`behavior[(s, a)] = pi_b(a | s)`).
pub fn stationary_distribution(
    kernel: &TabularKernel,
    behavior: &Matrix,
) -> Result<TripletDistribution> {
    let (n, na) = (kernel.n_states(), kernel.n_actions());
    if behavior.shape() != (n, na) {
        return Err(Error::Dimension("behaviour policy shape".into()));
    }
    for s in 0..n {
        let row = behavior.row(s);
        if row.iter().any(|&p| !(p > 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!(
                "behaviour policy at state {s} must be a strictly positive distribution"
            )));
        }
    }
    let t = induced_chain(kernel, behavior);
    if !strongly_connected(&t) {
        return Err(Error::Ergodicity("induced chain is reducible".into()));
    }
    let period = chain_period(&t);
    if period != 1 {
        return Err(Error::Ergodicity(format!(
            "induced chain has period {period}"
        )));
    }
    let mut mu = vec![1.0 / n as f64; n];
    let mut converged = false;
    for _ in 0..POWER_BUDGET {
        let next = t.matvec_t(&mu);
        let z: f64 = next.iter().sum();
        let next: Vec<f64> = next.into_iter().map(|x| x / z).collect();
        let change: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if change <= 1e-14 {
            converged = true;
            break;
        }
    }
    let residual: f64 = t
        .matvec_t(&mu)
        .iter()
        .zip(&mu)
        .map(|(a, b)| (a - b).abs())
        .sum();
    if !converged || residual > STATIONARY_TOL {
        return Err(Error::Ergodicity(format!(
            "power iteration did not settle (residual {residual:.3e}); chain may be periodic"
        )));
    }
    let mut probs = Vec::with_capacity(n * na * n);
    for s in 0..n {
        for a in 0..na {
            let w = mu[s] * behavior[(s, a)];
            probs.extend(kernel.row(s, a).iter().map(|p| w * p));
        }
    }
    Ok(TripletDistribution {
        n_states: n,
        n_actions: na,
        probs,
        state_marginal: mu,
    })
}

fn strongly_connected(t: &Matrix) -> bool {
    let n = t.rows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if forward { t[(u, v)] } else { t[(v, u)] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    reach(true) && reach(false)
}

// gcd of level differences over edges of a BFS from state 0; assumes the
// chain is irreducible.
fn chain_period(t: &Matrix) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let n = t.rows();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if t[(u, v)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0;
    for u in 0..n {
        for v in 0..n {
            if t[(u, v)] > 0.0 {
                g = gcd(g, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    g
}

/// Linear features: `phi` has one row per `(s, a)` (index `s * n_actions + a`),
/// `psi` one row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub phi: Matrix,
    pub psi: Matrix,
}

impl FeatureMap {
    pub fn new(phi: Matrix, psi: Matrix) -> Result<Self> {
        for i in 0..phi.rows() {
            let norm = phi.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "feature row {i} has norm {norm} > 1"
                )));
            }
        }
        Ok(Self { phi, psi })
    }

    /// Gaussian feature directions with norms drawn in `[0.5, 1]`.
    pub fn random(
        n_pairs: usize,
        n_states: usize,
        d: usize,
        d_v: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let phi = normalise_rows(Matrix::random_normal(n_pairs, d, 1.0, rng), rng);
        let psi = normalise_rows(Matrix::random_normal(n_states, d_v, 1.0, rng), rng);
        Self { phi, psi }
    }

    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn value_dim(&self) -> usize {
        self.psi.cols()
    }
}

fn normalise_rows(mut m: Matrix, rng: &mut impl rand::Rng) -> Matrix {
    for i in 0..m.rows() {
        let norm = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        let target = 0.5 + 0.5 * rng.random::<f64>();
        m.row_mut(i).iter_mut().for_each(|x| *x *= target / norm);
    }
    m
}

/// `A theta = b` with the critic weights `omega` used to form `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub omega: Vec<f64>,
}

impl LinearSystem {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Numerical rank of `a`.
    pub fn rank(&self) -> Result<usize> {
        Ok(thin_svd(&self.a)?.rank())
    }
}

/// `A = E[phi phi^T]`, `b = E[phi (R + gamma psi(s')^T omega)]` as exact sums
/// over the triplet distribution.
pub fn build_system(
    dist: &TripletDistribution,
    features: &FeatureMap,
    reward: &Matrix,
    gamma: f64,
    omega: &[f64],
) -> Result<LinearSystem> {
    let (n, na) = (dist.n_states, dist.n_actions);
    if features.phi.rows() != n * na || features.psi.rows() != n {
        return Err(Error::Config(
            "feature map does not cover the state-action space".into(),
        ));
    }
    if reward.shape() != (n, na) {
        return Err(Error::Config(
            "reward shape does not match the distribution".into(),
        ));
    }
    if omega.len() != features.value_dim() {
        return Err(Error::Config(format!(
            "omega has length {}, value features have dimension {}",
            omega.len(),
            features.value_dim()
        )));
    }
    let d = features.dim();
    let next_value = features.psi.matvec(omega);
    let mut a = Matrix::zeros(d, d);
    let mut b = vec![0.0; d];
    for s in 0..n {
        for act in 0..na {
            let pair = s * na + act;
            let phi = features.phi.row(pair);
            let mut w = 0.0;
            let mut target = 0.0;
            for s2 in 0..n {
                let p = dist.prob(s, act, s2);
                w += p;
                target += p * (reward[(s, act)] + gamma * next_value[s2]);
            }
            for i in 0..d {
                b[i] += phi[i] * target;
                for j in 0..d {
                    a[(i, j)] += w * phi[i] * phi[j];
                }
            }
        }
    }
    Ok(LinearSystem {
        a,
        b,
        omega: omega.to_vec(),
    })
}

/// `theta_r = V_r diag(1/sigma_r) U_r^T b`, the rank-`r` truncated
/// pseudo-inverse applied to `b`.
pub fn solve_truncated(sys: &LinearSystem, r: usize) -> Result<Vec<f64>> {
    let f = thin_svd(&sys.a)?;
    if r == 0 || r > f.rank() {
        return Err(Error::RankBounds {
            rank: r,
            max: f.rank(),
        });
    }
    let coeffs = f.u.take_cols(r).matvec_t(&sys.b);
    let scaled: Vec<f64> = coeffs.iter().zip(&f.sigma).map(|(c, s)| c / s).collect();
    Ok(f.vt.take_rows(r).matvec_t(&scaled))
}

/// Synthetic system satisfying the discrete Picard condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardSystem {
    pub system: LinearSystem,
    pub p: f64,
    pub true_rank: usize,
    pub theta_star: Vec<f64>,
    /// Full orthogonal basis `U` with `A = U diag(sigma) U^T`.
    pub basis: Matrix,
    /// All `d` singular values, zeros past `true_rank`.
    pub sigma: Vec<f64>,
}

impl PicardSystem {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// `|u_i^T b|` for every basis vector.
    pub fn coefficients(&self) -> Vec<f64> {
        self.basis
            .matvec_t(&self.system.b)
            .into_iter()
            .map(f64::abs)
            .collect()
    }

    /// Check the Picard inequalities and the basis/spectrum consistency.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let defect = self
            .basis
            .matmul_tn(&self.basis)
            .sub(&Matrix::identity(d))
            .max_abs();
        if defect > 1e-10 {
            return Err(Error::Numerical(format!(
                "basis orthogonality defect {defect:.3e}"
            )));
        }
        let rebuilt = self.basis.scale_cols(&self.sigma).matmul_nt(&self.basis);
        if rebuilt.sub(&self.system.a).max_abs() > 1e-12 {
            return Err(Error::Numerical(
                "A does not match its spectral factors".into(),
            ));
        }
        let r0 = self.true_rank;
        let floor = self.sigma[r0 - 1].powf(self.p);
        for (i, c) in self.coefficients().into_iter().enumerate() {
            let bound = if i < r0 {
                self.sigma[i].powf(self.p)
            } else {
                floor
            };
            if c > bound * (1.0 + 1e-12) {
                return Err(Error::Numerical(format!(
                    "Picard condition fails at index {}: {c:.3e} > {bound:.3e}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Build `A = U diag(sigma) U^T` with `sigma_i = decay^(i-1)` for
/// `i <= r_true` and zero beyond, and a right-hand side whose coefficients
/// `|u_i^T b|` are drawn in `(0, sigma_i^p]` (in `(0, sigma_{r_true}^p]`
/// past the true rank).
pub fn make_picard_system(
    d: usize,
    r_true: usize,
    p: f64,
    decay: f64,
    rng: &mut impl rand::Rng,
) -> Result<PicardSystem> {
    if r_true == 0 || r_true > d {
        return Err(Error::RankBounds {
            rank: r_true,
            max: d,
        });
    }
    if !(p > 1.0) {
        return Err(Error::Config(format!(
            "Picard exponent p = {p} must exceed 1"
        )));
    }
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::Config(format!("decay {decay} outside (0, 1)")));
    }
    let basis = Matrix::random_orthonormal(d, d, rng);
    let sigma: Vec<f64> = (0..d)
        .map(|i| {
            if i < r_true {
                decay.powi(i as i32)
            } else {
                0.0
            }
        })
        .collect();
    let floor = sigma[r_true - 1].powf(p);
    let coeffs: Vec<f64> = (0..d)
        .map(|i| {
            let bound = if i < r_true { sigma[i].powf(p) } else { floor };
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * bound * (1.0 - rng.random::<f64>())
        })
        .collect();
    let b = basis.matvec(&coeffs);
    let a = basis.scale_cols(&sigma).matmul_nt(&basis);
    let theta_coeffs: Vec<f64> = (0..d)
        .map(|i| {
            if i < r_true {
                coeffs[i] / sigma[i]
            } else {
                0.0
            }
        })
        .collect();
    let theta_star = basis.matvec(&theta_coeffs);
    let picard = PicardSystem {
        system: LinearSystem {
            a,
            b,
            omega: Vec::new(),
        },
        p,
        true_rank: r_true,
        theta_star,
        basis,
        sigma,
    };
    picard.validate()?;
    Ok(picard)
}

/// One row of the bias/variance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceRow {
    pub r: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub measured_error: f64,
    pub variance_term: f64,
    pub bias_term: f64,
    /// `max(0, measured - variance - bias)`: the part left to the `O(L eps)` term.
    pub slack: f64,
}

pub const BIAS_VARIANCE_CSV_HEADER: &str =
    "r,seed,epsilon,measured_error,variance_term,bias_term,slack";

impl BiasVarianceRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.r,
            self.seed,
            self.epsilon,
            self.measured_error,
            self.variance_term,
            self.bias_term,
            self.slack
        )
    }
}

/// `(d - r) sigma_r^(p-1) + (d - r) r0 sigma_1^(p-1)` on the ground-truth spectrum.
pub fn bias_bound(picard: &PicardSystem, r: usize) -> f64 {
    let d = picard.dim() as f64;
    let q = picard.p - 1.0;
    let tail = d - r as f64;
    tail * picard.sigma[r - 1].powf(q) + tail * picard.true_rank as f64 * picard.sigma[0].powf(q)
}

/// Measured error and the two bound terms for a rank-`r` solve of `perturbed`.
pub fn bias_variance_terms(
    picard: &PicardSystem,
    perturbed: &LinearSystem,
    r: usize,
) -> Result<BiasVarianceRow> {
    let d = picard.dim();
    if perturbed.dim() != d {
        return Err(Error::Dimension("perturbed system dimension".into()));
    }
    let f = thin_svd(&perturbed.a)?;
    if r == 0 || r > f.rank() || r > d {
        return Err(Error::RankBounds {
            rank: r,
            max: f.rank().min(d),
        });
    }
    let db: f64 = perturbed
        .b
        .iter()
        .zip(&picard.system.b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let variance_term = db / f.sigma[r - 1];
    let bias_term = bias_bound(picard, r);
    let theta = solve_truncated(perturbed, r)?;
    let measured_error = theta
        .iter()
        .zip(&picard.theta_star)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let slack = (measured_error - variance_term - bias_term).max(0.0);
    Ok(BiasVarianceRow {
        r,
        seed: 0,
        epsilon: 0.0,
        measured_error,
        variance_term,
        bias_term,
        slack,
    })
}

/// Least-squares fit `argmin_w sum_s weight(s) (psi(s)^T w - target(s))^2`.
fn weighted_lstsq(psi: &Matrix, weight: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let k = psi.cols();
    let mut g = Matrix::zeros(k, k);
    let mut rhs = vec![0.0; k];
    for s in 0..psi.rows() {
        let row = psi.row(s);
        for i in 0..k {
            rhs[i] += weight[s] * row[i] * target[s];
            for j in 0..k {
                g[(i, j)] += weight[s] * row[i] * row[j];
            }
        }
    }
    let rank = thin_svd(&g)?.rank();
    solve_truncated(
        &LinearSystem {
            a: g,
            b: rhs,
            omega: Vec::new(),
        },
        rank,
    )
}

/// Finite MDP with linear features whose kernel is perturbed inside a
/// Wasserstein ball; used to generate dynamics-driven perturbations
/// `(A_P - A_P0, b_P - b_P0)` of a Picard system.
#[derive(Debug, Clone)]
pub struct PerturbationModel {
    pub mdp: FiniteMdp,
    pub features: FeatureMap,
    pub behavior: Matrix,
    pub metric: GroundMetric,
    /// Ground-truth critic weights, held fixed for perturbed systems.
    pub omega_star: Vec<f64>,
    pub nominal: LinearSystem,
}

/// Shape of the auxiliary MDP behind [`PerturbationModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub value_dim: usize,
    pub gamma: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            n_states: 8,
            n_actions: 2,
            value_dim: 4,
            gamma: 0.9,
        }
    }
}

impl PerturbationModel {
    /// Random chain MDP with `d`-dimensional features and a uniform
    /// behaviour policy.
    pub fn random(spec: PerturbationSpec, d: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        let PerturbationSpec {
            n_states,
            n_actions,
            value_dim,
            gamma,
        } = spec;
        if n_states * n_actions < d {
            return Err(Error::Config(format!(
                "{n_states} states x {n_actions} actions cannot span {d} features"
            )));
        }
        let kernel = TabularKernel::random_chain(n_states, n_actions, rng);
        let reward = Matrix::new(
            n_states,
            n_actions,
            (0..n_states * n_actions)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )?;
        let mdp = FiniteMdp::new(reward, kernel, gamma, vec![1.0 / n_states as f64; n_states])?;
        let features = FeatureMap::random(n_states * n_actions, n_states, d, value_dim, rng);
        let behavior = Matrix::new(
            n_states,
            n_actions,
            vec![1.0 / n_actions as f64; n_states * n_actions],
        )?;
        Self::new(mdp, features, behavior, GroundMetric::line(n_states))
    }

    pub fn new(
        mdp: FiniteMdp,
        features: FeatureMap,
        behavior: Matrix,
        metric: GroundMetric,
    ) -> Result<Self> {
        let dist = stationary_distribution(&mdp.kernel, &behavior)?;
        let omega_star = solve_ground_truth_critic(&mdp, &features, &dist)?;
        let nominal = build_system(&dist, &features, &mdp.reward, mdp.gamma, &omega_star)?;
        Ok(Self {
            mdp,
            features,
            behavior,
            metric,
            omega_star,
            nominal,
        })
    }

    /// System under a kernel drawn from the ball of radius `epsilon`.
    pub fn sampled_system(&self, epsilon: f64, rng: &mut impl rand::Rng) -> Result<LinearSystem> {
        let ball = WassersteinBall::new(self.mdp.kernel.clone(), epsilon, self.metric.clone())?;
        let kernel = sample_kernel(&ball, rng);
        let dist = stationary_distribution(&kernel, &self.behavior)?;
        build_system(
            &dist,
            &self.features,
            &self.mdp.reward,
            self.mdp.gamma,
            &self.omega_star,
        )
    }

    /// Picard system shifted by the dynamics-induced change of this model's
    /// system; `epsilon = 0` returns the Picard system itself.
    pub fn perturb(
        &self,
        picard: &PicardSystem,
        epsilon: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<LinearSystem> {
        if epsilon == 0.0 {
            return Ok(picard.system.clone());
        }
        let sampled = self.sampled_system(epsilon, rng)?;
        let a = picard.system.a.add(&sampled.a.sub(&self.nominal.a));
        let b = picard
            .system
            .b
            .iter()
            .zip(sampled.b.iter().zip(&self.nominal.b))
            .map(|(b0, (bp, bn))| b0 + (bp - bn))
            .collect();
        Ok(LinearSystem {
            a,
            b,
            omega: self.omega_star.clone(),
        })
    }
}

/// Fixed point of the critic-consistency problem under the nominal
/// dynamics: `theta = A^-1 b(omega)` and `omega` the weighted least-squares
/// fit of `psi(s')^T omega` to `logsumexp_a' phi(s', a')^T theta`.
pub fn solve_ground_truth_critic(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    dist: &TripletDistribution,
) -> Result<Vec<f64>> {
    let na = mdp.n_actions();
    let next_marginal: Vec<f64> = (0..mdp.n_states())
        .map(|s2| {
            (0..mdp.n_states())
                .flat_map(|s| (0..na).map(move |a| (s, a)))
                .map(|(s, a)| dist.prob(s, a, s2))
                .sum()
        })
        .collect();
    let mut omega = vec![0.0; features.value_dim()];
    for _ in 0..10_000 {
        let sys = build_system(dist, features, &mdp.reward, mdp.gamma, &omega)?;
        let rank = sys.rank()?;
        let theta = solve_truncated(&sys, rank)?;
        let q = features.phi.matvec(&theta);
        let v: Vec<f64> = q.chunks(na).map(logsumexp).collect();
        let next = weighted_lstsq(&features.psi, &next_marginal, &v)?;
        let change = next
            .iter()
            .zip(&omega)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        omega = next;
        if !change.is_finite() {
            break;
        }
        if change < 1e-13 {
            return Ok(omega);
        }
    }
    Err(Error::Numerical(
        "critic fixed point did not converge".into(),
    ))
}

/// Seeds and rank range for a bias/variance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub ranks: std::ops::RangeInclusive<usize>,
}

/// For each epsilon and seed, draw a kernel from the ball, perturb the
/// Picard system with it and evaluate every rank in range. Ranks above the
/// perturbed system's numerical rank are skipped. Rows come out ordered by
/// `(epsilon, r, seed)`.
pub fn bias_variance_experiment(
    picard: &PicardSystem,
    model: &PerturbationModel,
    sweep: &SweepSpec,
) -> Result<Vec<BiasVarianceRow>> {
    if sweep.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut rows = Vec::new();
    for (ei, &eps) in sweep.epsilons.iter().enumerate() {
        let mut per_seed = Vec::with_capacity(sweep.seeds.len());
        for &seed in &sweep.seeds {
            let mut g = rng::derived(seed, 0xB1A5 + ei as u64);
            let sys = model.perturb(picard, eps, &mut g)?;
            let rank = sys.rank()?;
            per_seed.push((seed, sys, rank));
        }
        for r in sweep.ranks.clone() {
            for (seed, sys, rank) in &per_seed {
                if r > *rank {
                    continue;
                }
                let mut row = bias_variance_terms(picard, sys, r)?;
                row.seed = *seed;
                row.epsilon = eps;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Smallest `C` with `measured <= variance + bias + C eps` on every row
/// with positive epsilon.
pub fn fit_slack_constant(rows: &[BiasVarianceRow]) -> f64 {
    rows.iter()
        .filter(|r| r.epsilon > 0.0)
        .map(|r| r.slack / r.epsilon)
        .fold(0.0, f64::max)
}

/// Mean measured error per rank for one epsilon.
pub fn mean_error_by_rank(rows: &[BiasVarianceRow], epsilon: f64) -> Vec<(usize, f64)> {
    let mut acc: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for row in rows.iter().filter(|r| r.epsilon == epsilon) {
        let e = acc.entry(row.r).or_insert((0.0, 0));
        e.0 += row.measured_error;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(r, (s, n))| (r, s / n as f64))
        .collect()
}
