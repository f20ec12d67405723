//! Soft actor-critic over bottleneck-parameterized networks with periodic
//! rank adaptation.
//!
//! The actor and both critics share the layout `in -> h1 (dense, relu) ->
//! h2 (bottleneck, relu) -> out (dense)`. Every `d_t` optimization steps
//! each bottleneck is re-decomposed and truncated by the configured rank
//! criterion, the optimizers and learning-rate phase are reset and the
//! target critics are re-cloned. With adaptation disabled the same loop is
//! plain fixed-rank SAC.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvKind, EnvParams, EnvState};
use crate::error::{Error, Result};
use crate::lowrank::{Matrix, RankCriterion, RankDecision, RankGate};
use crate::nn::{
    rerank_network, Activation, AdamState, ForwardCache, Gradients, LayerKind, LrSchedule, Mlp,
    RerankRule, ScheduleClock,
};
use crate::rng::derived;
use crate::uncertainty::ParamSchedule;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Number of leading singular values written per rank-trace row.
pub const TRACE_SINGULAR_VALUES: usize = 8;
pub const LEARNING_CURVE_HEADER: &str = "step,return_mean,return_std";

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

// independent random streams per run
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_UPDATE: u64 = 3;
const STREAM_EVAL: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub hidden: [usize; 2],
    pub lr: f64,
    pub buffer_capacity: usize,
    /// Environment steps taken with uniform random actions before the
    /// policy acts.
    pub random_steps: u64,
    /// Environment steps collected before the first update.
    pub update_after: u64,
    pub updates_per_step: u32,
    pub eval_interval: u64,
    pub eval_episodes: u32,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            alpha: 0.2,
            batch_size: 64,
            hidden: [64, 64],
            lr: 3e-3,
            buffer_capacity: 100_000,
            random_steps: 1000,
            update_after: 1000,
            updates_per_step: 1,
            eval_interval: 5000,
            eval_episodes: 5,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.hidden.contains(&0) || self.buffer_capacity == 0 {
            return bad("batch_size, hidden sizes and buffer_capacity must be positive");
        }
        if self.updates_per_step == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("updates_per_step, eval_interval and eval_episodes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaRlConfig {
    /// False runs the fixed-rank baseline through the same loop.
    pub adapt: bool,
    pub beta: f64,
    /// Optimization steps between rank adaptations; also the horizon of the
    /// learning-rate cosine, so each rank epoch completes one decay cycle.
    /// Without adaptation the cosine spans the whole run.
    pub d_t: u64,
    pub criterion: RankCriterion,
    /// Learning-rate warm-up after start and after every adaptation.
    pub warmup_steps: u64,
    /// Environment steps.
    pub total_steps: u64,
    /// Largest relative Frobenius error a single truncation may introduce.
    pub max_truncation_error: f64,
    /// Cuts smaller than this fraction of a layer's rank are skipped; each
    /// adaptation restarts the optimizer, which tiny cuts do not repay.
    pub min_relative_reduction: f64,
}

impl Default for AdaRlConfig {
    fn default() -> Self {
        Self {
            adapt: true,
            beta: 0.98,
            d_t: 20_000,
            criterion: RankCriterion::Energy,
            warmup_steps: 2000,
            total_steps: 100_000,
            max_truncation_error: 0.02,
            min_relative_reduction: 0.1,
        }
    }
}

impl AdaRlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config("beta must lie in (0, 1)".into()));
        }
        if self.d_t == 0 || self.total_steps == 0 {
            return Err(Error::Config(
                "d_t and total_steps must be at least 1".into(),
            ));
        }
        if !(self.max_truncation_error >= 0.0 && self.max_truncation_error <= 1.0) {
            return Err(Error::Config(
                "max_truncation_error must lie in [0, 1]".into(),
            ));
        }
        if !(self.min_relative_reduction >= 0.0 && self.min_relative_reduction < 1.0) {
            return Err(Error::Config(
                "min_relative_reduction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn rule(&self) -> RerankRule {
        RerankRule {
            criterion: self.criterion,
            beta: self.beta,
            gate: RankGate {
                max_truncation_error: self.max_truncation_error,
                min_relative_reduction: self.min_relative_reduction,
            },
        }
    }

    pub fn lr_schedule(&self, lr: f64) -> LrSchedule {
        let horizon = if self.adapt {
            self.d_t.min(self.total_steps)
        } else {
            self.total_steps
        };
        LrSchedule {
            target_lr: lr,
            warmup_steps: self.warmup_steps,
            horizon,
            floor_fraction: 0.1,
        }
    }
}

/// Environment, its base parameters and the episode schedule that
/// perturbs them during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSetup {
    pub kind: EnvKind,
    pub params: EnvParams,
    pub schedule: ParamSchedule,
}

impl EnvSetup {
    pub fn new(kind: EnvKind, schedule: ParamSchedule) -> Self {
        Self {
            kind,
            params: kind.default_params(),
            schedule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.schedule.validate()?;
        self.params_for_episode(0).map(|_| ())
    }

    pub fn params_for_episode(&self, episode: u64) -> Result<EnvParams> {
        self.params.with_values(&self.schedule.values(episode))
    }

    /// Every scheduled parameter at its base value.
    pub fn nominal_params(&self) -> Result<EnvParams> {
        let base = self
            .schedule
            .params
            .iter()
            .map(|(k, p)| (k.clone(), p.base))
            .collect();
        self.params.with_values(&base)
    }
}

/// Mini-batch of transitions as row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub act: Matrix,
    pub rew: Vec<f64>,
    pub next_obs: Matrix,
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rew.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rew.is_empty()
    }
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    act: Vec<f64>,
    rew: Vec<f64>,
    next_obs: Vec<f64>,
    terminal: Vec<bool>,
    len: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: vec![0.0; capacity * obs_dim],
            act: vec![0.0; capacity * act_dim],
            rew: vec![0.0; capacity],
            next_obs: vec![0.0; capacity * obs_dim],
            terminal: vec![false; capacity],
            len: 0,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, obs: &[f64], act: &[f64], rew: f64, next_obs: &[f64], terminal: bool) {
        let i = self.head;
        let (o, a) = (self.obs_dim, self.act_dim);
        self.obs[i * o..(i + 1) * o].copy_from_slice(obs);
        self.act[i * a..(i + 1) * a].copy_from_slice(act);
        self.next_obs[i * o..(i + 1) * o].copy_from_slice(next_obs);
        self.rew[i] = rew;
        self.terminal[i] = terminal;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// Uniform indices with replacement over the stored items.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.len)).collect()
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (o, a) = (self.obs_dim, self.act_dim);
        let pick = |src: &[f64], w: usize| -> Vec<f64> {
            idx.iter()
                .flat_map(|&i| src[i * w..(i + 1) * w].iter().copied())
                .collect()
        };
        Batch {
            obs: Matrix::from_vec_unchecked(idx.len(), o, pick(&self.obs, o)),
            act: Matrix::from_vec_unchecked(idx.len(), a, pick(&self.act, a)),
            rew: idx.iter().map(|&i| self.rew[i]).collect(),
            next_obs: Matrix::from_vec_unchecked(idx.len(), o, pick(&self.next_obs, o)),
            terminal: idx.iter().map(|&i| self.terminal[i]).collect(),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Batch> {
        if self.is_empty() || n == 0 {
            return Err(Error::Config("cannot sample an empty batch".into()));
        }
        Ok(self.gather(&self.sample_indices(n, rng)))
    }
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec_unchecked(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Tanh-squashed diagonal Gaussian. The network emits the mean in its
/// first `action_dim` outputs and the unclamped log-std in the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub action_dim: usize,
}

/// Reparameterized draw `a = tanh(mu + exp(log_std) * xi)`.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub actions: Matrix,
    pub log_probs: Vec<f64>,
    cache: ForwardCache,
    pre_tanh: Matrix,
    noise: Matrix,
}

impl GaussianPolicy {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        hidden: [usize; 2],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let net = Mlp::new(
            &[obs_dim, hidden[0], hidden[1], 2 * action_dim],
            &[LayerKind::Dense, LayerKind::Bottleneck, LayerKind::Dense],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        Ok(Self { net, action_dim })
    }

    fn log_std(raw: f64) -> f64 {
        raw.clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    /// `tanh(mu)` for each row of `obs`.
    pub fn mean_action(&self, obs: &Matrix) -> Result<Matrix> {
        let out = self.net.predict(obs)?;
        let k = self.action_dim;
        let data = (0..out.rows())
            .flat_map(|i| out.row(i)[..k].iter().map(|m| m.tanh()).collect::<Vec<_>>());
        Ok(Matrix::from_vec_unchecked(out.rows(), k, data.collect()))
    }

    /// Draw actions for `obs` using the standard-normal `noise` (same shape
    /// as the action batch).
    pub fn sample(&self, obs: &Matrix, noise: &Matrix) -> Result<PolicySample> {
        let cache = self.net.forward(obs)?;
        let out = cache.output();
        let (n, k) = (obs.rows(), self.action_dim);
        if noise.shape() != (n, k) {
            return Err(Error::Dimension("policy noise shape".into()));
        }
        let mut pre = Matrix::zeros(n, k);
        let mut act = Matrix::zeros(n, k);
        let mut log_probs = vec![0.0; n];
        for i in 0..n {
            let row = out.row(i);
            for j in 0..k {
                let ls = Self::log_std(row[k + j]);
                let xi = noise[(i, j)];
                let u = row[j] + ls.exp() * xi;
                pre[(i, j)] = u;
                act[(i, j)] = u.tanh();
                log_probs[i] += -0.5 * xi * xi - ls - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
            }
        }
        Ok(PolicySample {
            actions: act,
            log_probs,
            cache,
            pre_tanh: pre,
            noise: noise.clone(),
        })
    }

    /// Backpropagate per-sample `d L / d a` and `d L / d log_prob` through
    /// a draw.
    fn backward(&self, s: &PolicySample, d_act: &Matrix, d_logp: &[f64]) -> Result<Gradients> {
        let out = s.cache.output();
        let (n, k) = (out.rows(), self.action_dim);
        let mut g = Matrix::zeros(n, 2 * k);
        for i in 0..n {
            let row = out.row(i);
            for j in 0..k {
                let raw = row[k + j];
                let sd = Self::log_std(raw).exp();
                let xi = s.noise[(i, j)];
                let t = s.pre_tanh[(i, j)].tanh();
                // dL/du from the squashed action and from -ln(1 - tanh^2 u)
                let du = d_act[(i, j)] * (1.0 - t * t) + d_logp[i] * 2.0 * t;
                g[(i, j)] = du;
                let clamped = !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                g[(i, k + j)] = if clamped {
                    0.0
                } else {
                    du * sd * xi - d_logp[i]
                };
            }
        }
        Ok(self.net.backward(&s.cache, &g)?.0)
    }
}

pub fn critic_net(
    obs_dim: usize,
    action_dim: usize,
    hidden: [usize; 2],
    rng: &mut impl Rng,
) -> Result<Mlp> {
    Mlp::new(
        &[obs_dim + action_dim, hidden[0], hidden[1], 1],
        &[LayerKind::Dense, LayerKind::Bottleneck, LayerKind::Dense],
        Activation::Relu,
        Activation::Identity,
        rng,
    )
}

fn critic_input(obs: &Matrix, act: &Matrix) -> Matrix {
    let (n, o, a) = (obs.rows(), obs.cols(), act.cols());
    let mut data = Vec::with_capacity(n * (o + a));
    for i in 0..n {
        data.extend_from_slice(obs.row(i));
        data.extend_from_slice(act.row(i));
    }
    Matrix::from_vec_unchecked(n, o + a, data)
}

/// Soft targets `r + gamma (min_i Qt_i(s', a') - alpha log pi(a'|s'))`
/// with `a'` drawn from the policy using `noise`. Terminal transitions do
/// not bootstrap.
pub fn soft_targets(
    policy: &GaussianPolicy,
    q1_target: &Mlp,
    q2_target: &Mlp,
    batch: &Batch,
    noise: &Matrix,
    cfg: &SacConfig,
) -> Result<Vec<f64>> {
    let next = policy.sample(&batch.next_obs, noise)?;
    let x = critic_input(&batch.next_obs, &next.actions);
    let q1 = q1_target.predict(&x)?;
    let q2 = q2_target.predict(&x)?;
    Ok((0..batch.len())
        .map(|i| {
            let soft_v = q1.as_slice()[i].min(q2.as_slice()[i]) - cfg.alpha * next.log_probs[i];
            let boot = if batch.terminal[i] {
                0.0
            } else {
                cfg.gamma * soft_v
            };
            batch.rew[i] + boot
        })
        .collect())
}

/// Mean squared error of `q` against fixed targets, with its gradient.
pub fn critic_loss_grad(
    q: &Mlp,
    obs: &Matrix,
    act: &Matrix,
    targets: &[f64],
) -> Result<(f64, Gradients)> {
    let cache = q.forward(&critic_input(obs, act))?;
    let pred = cache.output().as_slice();
    let n = targets.len() as f64;
    let resid: Vec<f64> = pred.iter().zip(targets).map(|(p, y)| p - y).collect();
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
    let upstream =
        Matrix::from_vec_unchecked(resid.len(), 1, resid.iter().map(|r| 2.0 * r / n).collect());
    Ok((loss, q.backward(&cache, &upstream)?.0))
}

/// `mean(alpha log pi(a|s) - min_i Q_i(s, a))` over reparameterized draws,
/// with its gradient in the policy parameters. Critics are held fixed.
pub fn actor_loss_grad(
    policy: &GaussianPolicy,
    q1: &Mlp,
    q2: &Mlp,
    obs: &Matrix,
    noise: &Matrix,
    alpha: f64,
) -> Result<(f64, Gradients)> {
    let s = policy.sample(obs, noise)?;
    let x = critic_input(obs, &s.actions);
    let c1 = q1.forward(&x)?;
    let c2 = q2.forward(&x)?;
    let n = obs.rows();
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut up1 = Matrix::zeros(n, 1);
    let mut up2 = Matrix::zeros(n, 1);
    for i in 0..n {
        let (a, b) = (c1.output().as_slice()[i], c2.output().as_slice()[i]);
        loss += (alpha * s.log_probs[i] - a.min(b)) * inv;
        if a <= b {
            up1[(i, 0)] = -inv;
        } else {
            up2[(i, 0)] = -inv;
        }
    }
    let o = obs.cols();
    let dx = q1
        .input_gradient(&c1, &up1)?
        .add(&q2.input_gradient(&c2, &up2)?);
    let k = policy.action_dim;
    let d_act = Matrix::from_vec_unchecked(
        n,
        k,
        (0..n).flat_map(|i| dx.row(i)[o..o + k].to_vec()).collect(),
    );
    let d_logp = vec![alpha * inv; n];
    Ok((loss, policy.backward(&s, &d_act, &d_logp)?))
}

/// Rank decision for one named bottleneck layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDecision {
    pub layer_id: String,
    pub decision: RankDecision,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLosses {
    pub q1: f64,
    pub q2: f64,
}

/// Actor, twin critics, their targets and optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: GaussianPolicy,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub opt_policy: AdamState,
    pub opt_q1: AdamState,
    pub opt_q2: AdamState,
    pub clock: ScheduleClock,
}

impl Agent {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        sac: &SacConfig,
        schedule: LrSchedule,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let policy = GaussianPolicy::new(obs_dim, action_dim, sac.hidden, rng)?;
        let q1 = critic_net(obs_dim, action_dim, sac.hidden, rng)?;
        let q2 = critic_net(obs_dim, action_dim, sac.hidden, rng)?;
        Ok(Self {
            opt_policy: AdamState::new(policy.net.param_shapes()),
            opt_q1: AdamState::new(q1.param_shapes()),
            opt_q2: AdamState::new(q2.param_shapes()),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            clock: ScheduleClock::new(schedule),
        })
    }

    /// One regression step on both critics followed by Polyak averaging of
    /// the targets. `noise` drives the next-state action draw.
    pub fn critic_update(
        &mut self,
        batch: &Batch,
        noise: &Matrix,
        cfg: &SacConfig,
        lr: f64,
    ) -> Result<CriticLosses> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let y = soft_targets(
            &self.policy,
            &self.q1_target,
            &self.q2_target,
            batch,
            noise,
            cfg,
        )?;
        let (l1, g1) = critic_loss_grad(&self.q1, &batch.obs, &batch.act, &y)?;
        let (l2, g2) = critic_loss_grad(&self.q2, &batch.obs, &batch.act, &y)?;
        self.opt_q1.step(self.q1.params_mut(), &g1.as_slices(), lr);
        self.opt_q2.step(self.q2.params_mut(), &g2.as_slices(), lr);
        self.q1_target.soft_update_from(&self.q1, cfg.tau);
        self.q2_target.soft_update_from(&self.q2, cfg.tau);
        Ok(CriticLosses { q1: l1, q2: l2 })
    }

    pub fn actor_update(
        &mut self,
        obs: &Matrix,
        noise: &Matrix,
        cfg: &SacConfig,
        lr: f64,
    ) -> Result<f64> {
        if obs.rows() == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let (loss, g) = actor_loss_grad(&self.policy, &self.q1, &self.q2, obs, noise, cfg.alpha)?;
        self.opt_policy
            .step(self.policy.net.params_mut(), &g.as_slices(), lr);
        Ok(loss)
    }

    /// Re-select every bottleneck rank in the actor and both critics, reset
    /// the optimizers and the learning-rate phase at `global_step`, and
    /// re-clone the targets.
    pub fn rank_adaptation_step(
        &mut self,
        rule: RerankRule,
        global_step: u64,
    ) -> Result<Vec<LayerDecision>> {
        let mut out = Vec::new();
        for (name, net) in [
            ("actor", &mut self.policy.net),
            ("q1", &mut self.q1),
            ("q2", &mut self.q2),
        ] {
            let bottlenecks: Vec<usize> = net
                .layers
                .iter()
                .enumerate()
                .filter(|(_, l)| matches!(l, crate::nn::Layer::Bottleneck(_)))
                .map(|(i, _)| i)
                .collect();
            let decisions = rerank_network(net, rule)?;
            out.extend(
                bottlenecks
                    .into_iter()
                    .zip(decisions)
                    .map(|(i, decision)| LayerDecision {
                        layer_id: format!("{name}.{i}"),
                        decision,
                    }),
            );
        }
        self.opt_policy.reset(self.policy.net.param_shapes());
        self.opt_q1.reset(self.q1.param_shapes());
        self.opt_q2.reset(self.q2.param_shapes());
        self.clock.reset(global_step);
        self.q1_target = self.q1.clone();
        self.q2_target = self.q2.clone();
        Ok(out)
    }

    pub fn bottleneck_ranks(&self) -> Vec<usize> {
        [&self.policy.net, &self.q1, &self.q2]
            .iter()
            .flat_map(|n| n.bottleneck_ranks())
            .collect()
    }
}

/// Where actions come from while collecting.
pub enum ActionSource<'a> {
    Uniform,
    Policy(&'a GaussianPolicy),
}

/// Episode bookkeeping for data collection under the schedule.
#[derive(Debug, Clone)]
pub struct Collector {
    pub setup: EnvSetup,
    pub episode: u64,
    pub params: EnvParams,
    pub state: EnvState,
    pub episode_returns: Vec<f64>,
    running_return: f64,
}

impl Collector {
    pub fn new(setup: EnvSetup, rng: &mut impl Rng) -> Result<Self> {
        setup.validate()?;
        let params = setup.params_for_episode(0)?;
        let state = envs::reset(setup.kind, &params, rng)?;
        Ok(Self {
            setup,
            episode: 0,
            params,
            state,
            episode_returns: Vec::new(),
            running_return: 0.0,
        })
    }

    /// Append `n_steps` transitions; parameters are redrawn from the
    /// schedule at every episode boundary.
    pub fn collect(
        &mut self,
        source: &ActionSource<'_>,
        n_steps: u64,
        buffer: &mut ReplayBuffer,
        rng: &mut impl Rng,
    ) -> Result<()> {
        if n_steps == 0 {
            return Err(Error::Config("collect needs n_steps >= 1".into()));
        }
        let kind = self.setup.kind;
        for _ in 0..n_steps {
            let obs = envs::observe(kind, &self.state);
            let action: Vec<f64> = match source {
                ActionSource::Uniform => (0..kind.action_dim())
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect(),
                ActionSource::Policy(p) => {
                    let noise = standard_normal(1, kind.action_dim(), rng);
                    let x = Matrix::from_vec_unchecked(1, obs.len(), obs.clone());
                    p.sample(&x, &noise)?.actions.into_vec()
                }
            };
            let tr = envs::step(kind, &self.state, &action, &self.params)?;
            let next_obs = envs::observe(kind, &tr.next_state);
            buffer.push(&obs, &tr.action, tr.reward, &next_obs, tr.terminal);
            self.running_return += tr.reward;
            self.state = tr.next_state;
            if tr.done || tr.terminal {
                self.episode_returns.push(self.running_return);
                self.running_return = 0.0;
                self.episode += 1;
                self.params = self.setup.params_for_episode(self.episode)?;
                self.state = envs::reset(kind, &self.params, rng)?;
            }
        }
        Ok(())
    }
}

/// Mean and population standard deviation of deterministic-policy
/// episode returns under `params`.
pub fn evaluate(
    policy: &GaussianPolicy,
    kind: EnvKind,
    params: &EnvParams,
    episodes: u32,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let mut returns = Vec::with_capacity(episodes as usize);
    for _ in 0..episodes {
        let mut s = envs::reset(kind, params, rng)?;
        let mut total = 0.0;
        loop {
            let obs = envs::observe(kind, &s);
            let a = policy.mean_action(&Matrix::from_vec_unchecked(1, obs.len(), obs))?;
            let tr = envs::step(kind, &s, a.as_slice(), params)?;
            total += tr.reward;
            s = tr.next_state;
            if tr.done || tr.terminal {
                break;
            }
        }
        returns.push(total);
    }
    Ok(mean_std(&returns))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub return_mean: f64,
    pub return_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub adaptation_index: usize,
    /// Optimization step at which the adaptation ran.
    pub opt_step: u64,
    /// Environment step at which the adaptation ran.
    pub env_step: u64,
    pub layers: Vec<LayerDecision>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub evals: Vec<EvalPoint>,
    pub adaptations: Vec<AdaptationRecord>,
    pub final_ranks: Vec<usize>,
}

fn push_float(out: &mut String, x: f64) {
    // shortest round-trip representation keeps the CSV deterministic
    write!(out, "{x}").expect("write to string");
}

impl TrainingLog {
    pub fn final_return(&self) -> Option<f64> {
        self.evals.last().map(|e| e.return_mean)
    }

    pub fn learning_curve_csv(&self) -> String {
        let mut s = String::from(LEARNING_CURVE_HEADER);
        s.push('\n');
        for e in &self.evals {
            write!(s, "{},", e.step).unwrap();
            push_float(&mut s, e.return_mean);
            s.push(',');
            push_float(&mut s, e.return_std);
            s.push('\n');
        }
        s
    }

    pub fn rank_trace_header() -> String {
        let mut h = String::from("adaptation_index,layer_id,rank_before,rank_after");
        for i in 1..=TRACE_SINGULAR_VALUES {
            write!(h, ",sv{i}").unwrap();
        }
        h
    }

    /// One row per (adaptation, bottleneck layer); singular values beyond
    /// the layer's spectrum are left empty.
    pub fn rank_trace_csv(&self) -> String {
        let mut s = Self::rank_trace_header();
        s.push('\n');
        for a in &self.adaptations {
            for l in &a.layers {
                let d = &l.decision;
                write!(
                    s,
                    "{},{},{},{}",
                    a.adaptation_index, l.layer_id, d.previous_rank, d.chosen_rank
                )
                .unwrap();
                for i in 0..TRACE_SINGULAR_VALUES {
                    s.push(',');
                    if let Some(&v) = d.spectrum.get(i) {
                        push_float(&mut s, v);
                    }
                }
                s.push('\n');
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub log: TrainingLog,
    pub agent: Agent,
}

/// Full training run. Evaluation happens at step 0 and every
/// `eval_interval` environment steps under the nominal parameters.
pub fn train(
    setup: &EnvSetup,
    sac: &SacConfig,
    ada: &AdaRlConfig,
    seed: u64,
) -> Result<TrainingOutcome> {
    sac.validate()?;
    ada.validate()?;
    setup.validate()?;
    let kind = setup.kind;
    let nominal = setup.nominal_params()?;
    let mut init_rng = derived(seed, STREAM_INIT);
    let mut env_rng = derived(seed, STREAM_ENV);
    let mut act_rng = derived(seed, STREAM_ACT);
    let mut upd_rng = derived(seed, STREAM_UPDATE);

    let mut agent = Agent::new(
        kind.obs_dim(),
        kind.action_dim(),
        sac,
        ada.lr_schedule(sac.lr),
        &mut init_rng,
    )?;
    let mut buffer = ReplayBuffer::new(sac.buffer_capacity, kind.obs_dim(), kind.action_dim());
    let mut collector = Collector::new(setup.clone(), &mut env_rng)?;
    let mut log = TrainingLog::default();
    let rule = ada.rule();

    let mut eval_index = 0u64;
    let mut eval = |policy: &GaussianPolicy, step: u64, log: &mut TrainingLog| -> Result<()> {
        let mut rng = derived(seed, STREAM_EVAL + eval_index);
        eval_index += 1;
        let (m, sd) = evaluate(policy, kind, &nominal, sac.eval_episodes, &mut rng)?;
        log.evals.push(EvalPoint {
            step,
            return_mean: m,
            return_std: sd,
        });
        Ok(())
    };
    eval(&agent.policy, 0, &mut log)?;

    let mut opt_step = 0u64;
    for step in 1..=ada.total_steps {
        let source = if step <= sac.random_steps {
            ActionSource::Uniform
        } else {
            ActionSource::Policy(&agent.policy)
        };
        let rng: &mut crate::rng::Rng = if step <= sac.random_steps {
            &mut env_rng
        } else {
            &mut act_rng
        };
        collector.collect(&source, 1, &mut buffer, rng)?;
        if step >= sac.update_after {
            for _ in 0..sac.updates_per_step {
                let lr = agent.clock.lr(opt_step);
                let batch = buffer.sample(sac.batch_size, &mut upd_rng)?;
                let noise_next = standard_normal(batch.len(), kind.action_dim(), &mut upd_rng);
                agent.critic_update(&batch, &noise_next, sac, lr)?;
                let noise = standard_normal(batch.len(), kind.action_dim(), &mut upd_rng);
                agent.actor_update(&batch.obs, &noise, sac, lr)?;
                opt_step += 1;
                if ada.adapt && opt_step % ada.d_t == 0 {
                    let layers = agent.rank_adaptation_step(rule, opt_step)?;
                    log.adaptations.push(AdaptationRecord {
                        adaptation_index: log.adaptations.len(),
                        opt_step,
                        env_step: step,
                        layers,
                    });
                }
            }
        }
        if step % sac.eval_interval == 0 {
            eval(&agent.policy, step, &mut log)?;
        }
    }
    log.final_ranks = agent.bottleneck_ranks();
    Ok(TrainingOutcome { log, agent })
}

/// Everything `eval` needs to replay a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub env: EnvKind,
    pub nominal_params: EnvParams,
    pub policy: GaussianPolicy,
}

impl PolicyCheckpoint {
    pub const VERSION: u32 = 1;

    pub fn new(setup: &EnvSetup, policy: &GaussianPolicy) -> Result<Self> {
        Ok(Self {
            version: Self::VERSION,
            env: setup.kind,
            nominal_params: setup.nominal_params()?,
            policy: policy.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("checkpoint: {e}")))?;
        if c.version != Self::VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        if c.policy.net.in_dim() != c.env.obs_dim()
            || c.policy.net.out_dim() != 2 * c.env.action_dim()
        {
            return Err(Error::Config(
                "checkpoint policy does not match its environment".into(),
            ));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::project_rank;
    use crate::nn::Layer;
    use crate::rng::seeded;

    fn small_cfg() -> SacConfig {
        SacConfig {
            hidden: [6, 5],
            batch_size: 4,
            ..SacConfig::default()
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn fd_check(
        params_of: impl Fn(&mut Agent) -> Vec<&mut [f64]>,
        loss: impl Fn(&Agent) -> f64,
        grads: &Gradients,
        agent: &Agent,
    ) -> f64 {
        let h = 1e-6;
        let mut worst = 0.0_f64;
        for (t, g) in grads.tensors.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = agent.clone();
                params_of(&mut plus)[t][i] += h;
                let mut minus = agent.clone();
                params_of(&mut minus)[t][i] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(fd, g[i]));
            }
        }
        worst
    }

    fn agent(rng: &mut crate::rng::Rng, cfg: &SacConfig) -> Agent {
        Agent::new(3, 2, cfg, LrSchedule::default(), rng).unwrap()
    }

    fn batch(n: usize, rng: &mut crate::rng::Rng) -> Batch {
        Batch {
            obs: standard_normal(n, 3, rng),
            act: Matrix::from_vec_unchecked(
                n,
                2,
                (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            ),
            rew: (0..n).map(|_| rng.random_range(-2.0..0.0)).collect(),
            next_obs: standard_normal(n, 3, rng),
            terminal: vec![false; n],
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let cfg = small_cfg();
        let mut rng = seeded(1);
        for _ in 0..10 {
            let ag = agent(&mut rng, &cfg);
            let b = batch(3, &mut rng);
            let noise = standard_normal(3, 2, &mut rng);
            let y =
                soft_targets(&ag.policy, &ag.q1_target, &ag.q2_target, &b, &noise, &cfg).unwrap();
            let (_, g) = critic_loss_grad(&ag.q1, &b.obs, &b.act, &y).unwrap();
            let worst = fd_check(
                |a| a.q1.params_mut(),
                |a| critic_loss_grad(&a.q1, &b.obs, &b.act, &y).unwrap().0,
                &g,
                &ag,
            );
            assert!(worst <= 1e-4, "critic relative error {worst}");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let cfg = small_cfg();
        let mut rng = seeded(2);
        for _ in 0..10 {
            let ag = agent(&mut rng, &cfg);
            let obs = standard_normal(3, 3, &mut rng);
            let noise = standard_normal(3, 2, &mut rng);
            let (_, g) = actor_loss_grad(&ag.policy, &ag.q1, &ag.q2, &obs, &noise, 0.2).unwrap();
            let loss = |a: &Agent| {
                actor_loss_grad(&a.policy, &a.q1, &a.q2, &obs, &noise, 0.2)
                    .unwrap()
                    .0
            };
            let worst = fd_check(|a| a.policy.net.params_mut(), loss, &g, &ag);
            assert!(worst <= 1e-4, "actor relative error {worst}");
        }
    }

    #[test]
    fn myopic_target_is_reward() {
        let cfg = SacConfig {
            gamma: 0.0,
            ..small_cfg()
        };
        let mut rng = seeded(3);
        let ag = agent(&mut rng, &cfg);
        let b = batch(5, &mut rng);
        let y = soft_targets(
            &ag.policy,
            &ag.q1_target,
            &ag.q2_target,
            &b,
            &standard_normal(5, 2, &mut rng),
            &cfg,
        )
        .unwrap();
        assert_eq!(y, b.rew);
    }

    #[test]
    fn log_probs_stay_finite_at_clamp_and_saturation() {
        let mut rng = seeded(4);
        let mut p = GaussianPolicy::new(3, 1, [4, 4], &mut rng).unwrap();
        // final layer bias drives log-std to -inf territory and the mean to saturation
        if let Some(Layer::Dense(l)) = p.net.layers.last_mut() {
            l.weight = Matrix::zeros(4, 2);
            l.bias = vec![40.0, -100.0];
        }
        let s = p
            .sample(
                &standard_normal(6, 3, &mut rng),
                &standard_normal(6, 1, &mut rng),
            )
            .unwrap();
        assert!(s.log_probs.iter().all(|x| x.is_finite()));
        assert!(s.actions.as_slice().iter().all(|a| a.abs() <= 1.0));
        // deterministic limit: log pi = -0.5 xi^2 + 20 - ln sqrt(2 pi) - ln(1 - tanh^2 u)
        let xi = s.noise[(0, 0)];
        let u: f64 = 40.0 + (-20.0_f64).exp() * xi;
        let expect = -0.5 * xi * xi + 20.0 - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
        assert!((s.log_probs[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn stable_squash_correction_matches_naive_formula() {
        for u in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let t: f64 = f64::tanh(u);
            assert!((log_one_minus_tanh_sq(u) - (1.0 - t * t).ln()).abs() < 1e-12);
        }
        assert!(log_one_minus_tanh_sq(500.0).is_finite());
    }

    #[test]
    fn constant_critics_leave_only_the_entropy_gradient() {
        let cfg = small_cfg();
        let mut rng = seeded(5);
        let mut ag = agent(&mut rng, &cfg);
        for q in [&mut ag.q1, &mut ag.q2] {
            for p in q.params_mut() {
                p.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let obs = standard_normal(4, 3, &mut rng);
        let noise = standard_normal(4, 2, &mut rng);
        let (loss, g) = actor_loss_grad(&ag.policy, &ag.q1, &ag.q2, &obs, &noise, 0.2).unwrap();
        let s = ag.policy.sample(&obs, &noise).unwrap();
        let entropy_only = ag
            .policy
            .backward(&s, &Matrix::zeros(4, 2), &[0.2 / 4.0; 4])
            .unwrap();
        assert_eq!(g, entropy_only);
        assert!((loss - 0.2 * s.log_probs.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn large_alpha_raises_log_std() {
        let cfg = small_cfg();
        let mut rng = seeded(6);
        let mut ag = agent(&mut rng, &cfg);
        // start narrow: the squashed entropy peaks near unit scale
        if let Some(Layer::Dense(l)) = ag.policy.net.layers.last_mut() {
            l.bias[2] = -3.0;
            l.bias[3] = -3.0;
        }
        let obs = standard_normal(32, 3, &mut rng);
        let before = ag.policy.net.predict(&obs).unwrap();
        let big = SacConfig { alpha: 1e6, ..cfg };
        for _ in 0..20 {
            let noise = standard_normal(32, 2, &mut rng);
            ag.actor_update(&obs, &noise, &big, 1e-3).unwrap();
        }
        let after = ag.policy.net.predict(&obs).unwrap();
        let mean_ls = |m: &Matrix| {
            (0..m.rows())
                .map(|i| m.row(i)[2] + m.row(i)[3])
                .sum::<f64>()
        };
        assert!(mean_ls(&after) > mean_ls(&before));
    }

    #[test]
    fn replay_buffer_ring_and_uniformity() {
        let mut buf = ReplayBuffer::new(50, 1, 1);
        for i in 0..120 {
            buf.push(&[i as f64], &[0.0], i as f64, &[0.0], false);
            assert!(buf.len() <= buf.capacity());
        }
        assert_eq!(buf.len(), 50);
        let b = buf.gather(&(0..50).collect::<Vec<_>>());
        let mut stored: Vec<f64> = b.rew.clone();
        stored.sort_by(f64::total_cmp);
        assert_eq!(stored, (70..120).map(|x| x as f64).collect::<Vec<_>>());
        // chi-square over 50 cells, 49 dof; the 0.01 critical value is 74.92
        let mut counts = [0usize; 50];
        let n = 100_000;
        for i in buf.sample_indices(n, &mut seeded(7)) {
            counts[i] += 1;
        }
        let e = n as f64 / 50.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 74.92, "chi2 {chi2}");
        assert!(ReplayBuffer::new(4, 1, 1)
            .sample(2, &mut seeded(0))
            .is_err());
    }

    fn tiny_run(adapt: bool, d_t: u64, total: u64) -> (AdaRlConfig, SacConfig) {
        let ada = AdaRlConfig {
            adapt,
            d_t,
            total_steps: total,
            warmup_steps: 20,
            ..AdaRlConfig::default()
        };
        let sac = SacConfig {
            hidden: [16, 16],
            batch_size: 16,
            random_steps: 100,
            update_after: 100,
            eval_interval: 200,
            eval_episodes: 1,
            ..SacConfig::default()
        };
        (ada, sac)
    }

    #[test]
    fn training_is_deterministic_and_adapts_on_schedule() {
        let setup = EnvSetup::new(EnvKind::Pendulum, ParamSchedule::pendulum());
        let (ada, sac) = tiny_run(true, 150, 600);
        let a = train(&setup, &sac, &ada, 9).unwrap();
        let b = train(&setup, &sac, &ada, 9).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.learning_curve_csv(), b.log.learning_curve_csv());
        // 501 optimization steps: adaptations at 150, 300, 450
        assert_eq!(a.log.adaptations.len(), 3);
        assert_eq!(
            a.log.evals.iter().map(|e| e.step).collect::<Vec<_>>(),
            vec![0, 200, 400, 600]
        );
        for rec in &a.log.adaptations {
            assert_eq!(rec.layers.len(), 3);
            for l in &rec.layers {
                assert!(l.decision.chosen_rank <= l.decision.previous_rank);
            }
        }
        let csv = a.log.rank_trace_csv();
        assert_eq!(csv.lines().count(), 1 + 9);
        assert!(csv.starts_with("adaptation_index,layer_id,rank_before,rank_after,sv1,"));
    }

    #[test]
    fn interval_beyond_budget_is_plain_sac() {
        let setup = EnvSetup::new(EnvKind::Pendulum, ParamSchedule::pendulum());
        let (ada, sac) = tiny_run(true, 10_000, 400);
        let (off, _) = tiny_run(false, 10_000, 400);
        let a = train(&setup, &sac, &ada, 3).unwrap();
        let b = train(&setup, &sac, &off, 3).unwrap();
        assert!(a.log.adaptations.is_empty());
        assert_eq!(a.log.learning_curve_csv(), b.log.learning_curve_csv());
    }

    #[test]
    fn adaptation_projects_each_bottleneck() {
        let cfg = SacConfig {
            hidden: [12, 10],
            ..SacConfig::default()
        };
        let mut rng = seeded(8);
        let mut ag = agent(&mut rng, &cfg);
        let before: Vec<Matrix> = [&ag.policy.net, &ag.q1, &ag.q2]
            .iter()
            .map(|n| n.layers[1].effective_weight())
            .collect();
        let rule = RerankRule {
            criterion: RankCriterion::Energy,
            beta: 0.9,
            gate: RankGate::OPEN,
        };
        let d = ag.rank_adaptation_step(rule, 77).unwrap();
        assert_eq!(
            d.iter().map(|l| l.layer_id.as_str()).collect::<Vec<_>>(),
            ["actor.1", "q1.1", "q2.1"]
        );
        let after = [&ag.policy.net, &ag.q1, &ag.q2];
        for ((net, old), dec) in after.iter().zip(&before).zip(&d) {
            let oracle = project_rank(old, dec.decision.chosen_rank).unwrap();
            assert!(
                net.layers[1]
                    .effective_weight()
                    .sub(&oracle)
                    .frobenius_norm()
                    < 1e-9 * oracle.frobenius_norm()
            );
            assert!(dec.decision.chosen_rank < 10);
        }
        assert!(ag.opt_q1.is_zeroed() && ag.opt_policy.is_zeroed());
        assert_eq!(ag.clock.reset_at, 77);
        assert_eq!(ag.q1_target, ag.q1);
    }

    #[test]
    fn retain_rule_leaves_weights_untouched() {
        let cfg = SacConfig {
            hidden: [8, 8],
            ..SacConfig::default()
        };
        let mut ag = agent(&mut seeded(9), &cfg);
        let snapshot = (ag.policy.clone(), ag.q1.clone(), ag.q2.clone());
        let rule = RerankRule {
            criterion: RankCriterion::Hard,
            beta: 1e-9,
            gate: RankGate::OPEN,
        };
        ag.rank_adaptation_step(rule, 1).unwrap();
        assert_eq!((ag.policy.clone(), ag.q1.clone(), ag.q2.clone()), snapshot);
    }

    #[test]
    fn collect_follows_schedule() {
        let setup = EnvSetup::new(EnvKind::Pendulum, ParamSchedule::pendulum());
        let mut rng = seeded(10);
        let mut c = Collector::new(setup.clone(), &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(1000, 3, 1);
        let mut seen = vec![c.params.gravity];
        for _ in 0..2 {
            c.collect(
                &ActionSource::Uniform,
                u64::from(envs::HORIZON),
                &mut buf,
                &mut rng,
            )
            .unwrap();
            seen.push(c.params.gravity);
        }
        for (i, g) in seen.iter().enumerate() {
            assert!((g - (9.81 + 3.0 * (0.5 * i as f64).sin())).abs() < 1e-12);
        }
        assert_eq!(buf.len(), 400);
        assert!(c
            .collect(&ActionSource::Uniform, 0, &mut buf, &mut rng)
            .is_err());
    }

    #[test]
    fn flat_schedule_keeps_params() {
        let setup = EnvSetup::new(EnvKind::PointMass, ParamSchedule::default());
        let mut rng = seeded(11);
        let mut c = Collector::new(setup, &mut rng).unwrap();
        let p0 = c.params;
        let mut buf = ReplayBuffer::new(1000, 1, 1);
        c.collect(
            &ActionSource::Uniform,
            3 * u64::from(envs::HORIZON),
            &mut buf,
            &mut rng,
        )
        .unwrap();
        assert_eq!(c.episode, 3);
        assert_eq!(c.params, p0);
    }

    #[test]
    fn collection_is_deterministic() {
        let setup = EnvSetup::new(EnvKind::Pendulum, ParamSchedule::pendulum());
        let run = || {
            let mut rng = seeded(12);
            let mut c = Collector::new(setup.clone(), &mut rng).unwrap();
            let mut buf = ReplayBuffer::new(500, 3, 1);
            c.collect(&ActionSource::Uniform, 200, &mut buf, &mut rng)
                .unwrap();
            buf.gather(&(0..200).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip() {
        let setup = EnvSetup::new(EnvKind::Pendulum, ParamSchedule::pendulum());
        let p = GaussianPolicy::new(3, 1, [8, 8], &mut seeded(13)).unwrap();
        let c = PolicyCheckpoint::new(&setup, &p).unwrap();
        assert_eq!(PolicyCheckpoint::from_json(&c.to_json()).unwrap(), c);
        let wrong = PolicyCheckpoint {
            env: EnvKind::PointMass,
            ..c
        };
        assert!(PolicyCheckpoint::from_json(&wrong.to_json()).is_err());
    }
}
