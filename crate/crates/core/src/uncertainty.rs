//! Epistemic-uncertainty models: Wasserstein balls around a tabular kernel
//! and sinusoidal episode-indexed parameter schedules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::Matrix;

/// Row-sum tolerance for categorical distributions.
pub const SIMPLEX_TOL: f64 = 1e-10;
/// Slack allowed when validating a W1 distance against a radius.
pub const W1_TOL: f64 = 1e-12;

/// Transition kernel over a finite MDP: one categorical per (s, a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularKernel {
    n_states: usize,
    n_actions: usize,
    /// Flattened `[s][a][s']`.
    probs: Vec<f64>,
}

impl TabularKernel {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config(
                "kernel needs at least one state and action".into(),
            ));
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "kernel with {n_states} states and {n_actions} actions needs {} entries, got {}",
                n_states * n_actions * n_states,
                probs.len()
            )));
        }
        let k = Self {
            n_states,
            n_actions,
            probs,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(k.row(s, a))
                    .map_err(|e| Error::Config(format!("row ({s}, {a}): {e}")))?;
            }
        }
        Ok(k)
    }

    /// Random kernel whose rows favour nearby states on a chain; every
    /// entry is strictly positive so any positive behaviour policy induces
    /// an ergodic chain.
    pub fn random_chain(n_states: usize, n_actions: usize, rng: &mut impl rand::Rng) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
        for s in 0..n_states {
            for a in 0..n_actions {
                let drift = a as f64 - (n_actions as f64 - 1.0) / 2.0;
                let centre = s as f64 + drift;
                let w: Vec<f64> = (0..n_states)
                    .map(|t| {
                        let d = t as f64 - centre;
                        (-(d * d) / 2.0).exp() * rng.random_range(0.5..1.5) + 0.02
                    })
                    .collect();
                let z: f64 = w.iter().sum();
                probs.extend(w.iter().map(|x| x / z));
            }
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    pub fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &mut self.probs[start..start + self.n_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Config(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Config(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Symmetric distance matrix over states with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundMetric(Matrix);

impl GroundMetric {
    pub fn new(d: Matrix) -> Result<Self> {
        let n = d.rows();
        if d.cols() != n {
            return Err(Error::Dimension("ground metric must be square".into()));
        }
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(Error::Config(format!("metric({i}, {i}) is not zero")));
            }
            for j in 0..n {
                if d[(i, j)] < 0.0 || d[(i, j)] != d[(j, i)] {
                    return Err(Error::Config(format!(
                        "metric must be non-negative and symmetric at ({i}, {j})"
                    )));
                }
                for k in 0..n {
                    if d[(i, k)] > d[(i, j)] + d[(j, k)] + 1e-12 {
                        return Err(Error::Config(format!(
                            "triangle inequality fails for ({i}, {j}, {k})"
                        )));
                    }
                }
            }
        }
        Ok(Self(d))
    }

    /// `|i - j|` on state indices.
    pub fn line(n: usize) -> Self {
        let mut d = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                d[(i, j)] = (i as f64 - j as f64).abs();
            }
        }
        Self(d)
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn diameter(&self) -> f64 {
        self.0.max_abs()
    }
}

/// Kernels whose every row lies within W1 distance `radius` of the centroid row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WassersteinBall {
    pub centroid: TabularKernel,
    pub radius: f64,
    pub metric: GroundMetric,
}

impl WassersteinBall {
    pub fn new(centroid: TabularKernel, radius: f64, metric: GroundMetric) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!(
                "radius {radius} must be finite and >= 0"
            )));
        }
        if metric.n() != centroid.n_states() {
            return Err(Error::Dimension(format!(
                "metric over {} states for a kernel over {}",
                metric.n(),
                centroid.n_states()
            )));
        }
        Ok(Self {
            centroid,
            radius,
            metric,
        })
    }

    /// Largest row-wise W1 distance between `kernel` and the centroid.
    pub fn max_row_distance(&self, kernel: &TabularKernel) -> Result<f64> {
        let mut worst = 0.0_f64;
        for s in 0..kernel.n_states() {
            for a in 0..kernel.n_actions() {
                let d = w1_distance(self.centroid.row(s, a), kernel.row(s, a), &self.metric)?;
                worst = worst.max(d);
            }
        }
        Ok(worst)
    }

    pub fn contains(&self, kernel: &TabularKernel) -> Result<bool> {
        Ok(self.max_row_distance(kernel)? <= self.radius + W1_TOL)
    }
}

/// Exact 1-Wasserstein distance between two categoricals on the metric's
/// support, via successive shortest augmenting paths on the transport network.
pub fn w1_distance(p: &[f64], q: &[f64], metric: &GroundMetric) -> Result<f64> {
    let n = metric.n();
    if p.len() != n || q.len() != n {
        return Err(Error::Dimension(format!(
            "distributions of length {} and {} on a {n}-point support",
            p.len(),
            q.len()
        )));
    }
    Ok(TransportNetwork::new(p, q, metric).min_cost())
}

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

struct TransportNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
}

// Residual capacities below this are treated as exhausted.
const FLOW_EPS: f64 = 1e-15;

impl TransportNetwork {
    fn new(p: &[f64], q: &[f64], metric: &GroundMetric) -> Self {
        let n = p.len();
        let (source, sink) = (2 * n, 2 * n + 1);
        let mut net = Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); 2 * n + 2],
            source,
            sink,
        };
        for i in 0..n {
            if p[i] > 0.0 {
                net.add_edge(source, i, p[i], 0.0);
            }
            if q[i] > 0.0 {
                net.add_edge(n + i, sink, q[i], 0.0);
            }
        }
        for i in (0..n).filter(|&i| p[i] > 0.0) {
            for j in (0..n).filter(|&j| q[j] > 0.0) {
                net.add_edge(i, n + j, f64::INFINITY, metric.distance(i, j));
            }
        }
        net
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    }

    fn min_cost(mut self) -> f64 {
        let nodes = self.adj.len();
        let mut total = 0.0;
        loop {
            // Bellman-Ford; the residual graph has negative reverse edges.
            let mut dist = vec![f64::INFINITY; nodes];
            let mut via = vec![usize::MAX; nodes];
            dist[self.source] = 0.0;
            for _ in 0..nodes {
                let mut changed = false;
                for u in 0..nodes {
                    if dist[u] == f64::INFINITY {
                        continue;
                    }
                    for &e in &self.adj[u] {
                        let edge = &self.edges[e];
                        if edge.cap > FLOW_EPS && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                            dist[edge.to] = dist[u] + edge.cost;
                            via[edge.to] = e;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[self.sink] == f64::INFINITY {
                return total;
            }
            let mut push = f64::INFINITY;
            let mut v = self.sink;
            while v != self.source {
                let e = via[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = self.sink;
            while v != self.source {
                let e = via[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                total += push * self.edges[e].cost;
                v = self.edges[e ^ 1].to;
            }
        }
    }
}

/// Draw a kernel from the ball.
///
/// Each row gets a budget `c ~ U(0, radius)`; mass is then moved between
/// randomly chosen ordered state pairs until the budget is spent. The
/// accumulated move cost bounds the row's W1 distance from above, so the
/// result is inside the ball by construction. A zero radius returns the
/// centroid unchanged.
pub fn sample_kernel(ball: &WassersteinBall, rng: &mut impl rand::Rng) -> TabularKernel {
    let mut out = ball.centroid.clone();
    if ball.radius == 0.0 {
        return out;
    }
    let n = out.n_states();
    for s in 0..n {
        for a in 0..out.n_actions() {
            let budget = ball.radius * rng.random::<f64>();
            perturb_row(out.row_mut(s, a), budget, &ball.metric, rng);
        }
    }
    out
}

fn perturb_row(row: &mut [f64], budget: f64, metric: &GroundMetric, rng: &mut impl rand::Rng) {
    let n = row.len();
    if n < 2 {
        return;
    }
    let mut remaining = budget;
    for _ in 0..4 * n {
        if remaining <= 0.0 {
            break;
        }
        let from = rng.random_range(0..n);
        let mut to = rng.random_range(0..n - 1);
        if to >= from {
            to += 1;
        }
        if row[from] <= 0.0 {
            continue;
        }
        let d = metric.distance(from, to);
        let cap = if d > 0.0 {
            row[from].min(remaining / d)
        } else {
            row[from]
        };
        // (0, 1]
        let amount = cap * (1.0 - rng.random::<f64>());
        let amount = amount.min(row[from]);
        row[from] -= amount;
        row[to] += amount;
        remaining -= amount * d;
    }
}

/// One sinusoidally varying parameter: `base + amplitude * sin(frequency * i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineParam {
    pub base: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl SineParam {
    pub fn at(&self, episode: u64) -> f64 {
        self.base + self.amplitude * (self.frequency * episode as f64).sin()
    }
}

/// Episode-indexed physical parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSchedule {
    pub params: BTreeMap<String, SineParam>,
}

impl ParamSchedule {
    pub fn new(params: impl IntoIterator<Item = (String, SineParam)>) -> Result<Self> {
        let s = Self {
            params: params.into_iter().collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in &self.params {
            if !(p.amplitude >= 0.0) || !p.base.is_finite() || !p.frequency.is_finite() {
                return Err(Error::Config(format!(
                    "schedule '{name}' needs finite values and amplitude >= 0"
                )));
            }
        }
        Ok(())
    }

    /// All parameter values for episode `i`.
    pub fn values(&self, episode: u64) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.at(episode)))
            .collect()
    }

    pub fn value(&self, name: &str, episode: u64) -> Result<f64> {
        self.params
            .get(name)
            .map(|p| p.at(episode))
            .ok_or_else(|| Error::Config(format!("unknown schedule parameter '{name}'")))
    }

    fn preset(entries: &[(&str, f64, f64, f64)]) -> Self {
        Self {
            params: entries
                .iter()
                .map(|&(n, base, amplitude, frequency)| {
                    (
                        n.to_string(),
                        SineParam {
                            base,
                            amplitude,
                            frequency,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn hopper() -> Self {
        Self::preset(&[
            ("torso_length", 0.4, 0.2, 0.2),
            ("foot_length", 0.39, 0.2, 0.2),
        ])
    }

    pub fn walker2d() -> Self {
        Self::preset(&[
            ("torso_length", 0.2, 0.1, 0.3),
            ("foot_length", 0.1, 0.05, 0.3),
        ])
    }

    pub fn ant() -> Self {
        Self::preset(&[("gravity", 14.715, 4.905, 0.5), ("wind", 1.0, 0.2, 0.5)])
    }

    pub fn humanoid() -> Self {
        Self::preset(&[("gravity", 14.715, 4.905, 0.5), ("wind", 1.0, 0.5, 0.5)])
    }

    /// Default pendulum schedule: gravity 9.81 +- 3 sin(0.5 i).
    pub fn pendulum() -> Self {
        Self::preset(&[("gravity", 9.81, 3.0, 0.5)])
    }

    /// Default point-mass schedule: wind 1 +- 0.5 sin(0.5 i).
    pub fn point_mass() -> Self {
        Self::preset(&[("wind", 1.0, 0.5, 0.5)])
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "hopper" => Self::hopper(),
            "walker2d" => Self::walker2d(),
            "ant" => Self::ant(),
            "humanoid" => Self::humanoid(),
            "pendulum" => Self::pendulum(),
            "point_mass" => Self::point_mass(),
            "none" => Self::default(),
            other => return Err(Error::Config(format!("unknown schedule preset '{other}'"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn cdf_w1(p: &[f64], q: &[f64]) -> f64 {
        let (mut fp, mut fq, mut acc) = (0.0, 0.0, 0.0);
        for i in 0..p.len() - 1 {
            fp += p[i];
            fq += q[i];
            acc += (fp - fq).abs();
        }
        acc
    }

    #[test]
    fn w1_basic_cases() {
        let m = GroundMetric::line(3);
        assert_eq!(
            w1_distance(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], &m).unwrap(),
            0.0
        );
        let two = GroundMetric::line(2);
        assert_eq!(w1_distance(&[1.0, 0.0], &[0.0, 1.0], &two).unwrap(), 1.0);
        let d = w1_distance(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &m).unwrap();
        // half the mass travels two steps: W1 = 1 by the CDF formula
        assert!((cdf_w1(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w1_matches_cdf_formula_on_line() {
        let mut rng = seeded(5);
        for n in 2..9 {
            let m = GroundMetric::line(n);
            for _ in 0..20 {
                let mut p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let (zp, zq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
                p.iter_mut().for_each(|x| *x /= zp);
                q.iter_mut().for_each(|x| *x /= zq);
                let lp = w1_distance(&p, &q, &m).unwrap();
                assert!((lp - cdf_w1(&p, &q)).abs() < 1e-12, "n={n}: {lp}");
            }
        }
    }

    #[test]
    fn w1_dimension_error() {
        let m = GroundMetric::line(3);
        assert!(matches!(
            w1_distance(&[1.0], &[0.0, 1.0, 0.0], &m),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn metric_validation() {
        let mut d = GroundMetric::line(3).matrix().clone();
        d[(0, 2)] = 5.0;
        d[(2, 0)] = 5.0;
        assert!(GroundMetric::new(d).is_err());
        let mut d = Matrix::zeros(2, 2);
        d[(0, 1)] = 1.0;
        assert!(GroundMetric::new(d).is_err());
        assert!(GroundMetric::new(GroundMetric::line(4).matrix().clone()).is_ok());
    }

    #[test]
    fn zero_radius_returns_centroid_bits() {
        let mut rng = seeded(9);
        let c = TabularKernel::random_chain(4, 2, &mut rng);
        let ball = WassersteinBall::new(c.clone(), 0.0, GroundMetric::line(4)).unwrap();
        let k = sample_kernel(&ball, &mut rng);
        assert!(k
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn sampled_kernels_stay_in_ball() {
        let mut rng = seeded(10);
        let c = TabularKernel::random_chain(4, 2, &mut rng);
        let ball = WassersteinBall::new(c, 0.1, GroundMetric::line(4)).unwrap();
        for _ in 0..1000 {
            let k = sample_kernel(&ball, &mut rng);
            assert!(ball.max_row_distance(&k).unwrap() <= 0.1 + W1_TOL);
            TabularKernel::new(4, 2, k.as_slice().to_vec()).unwrap();
        }
    }

    #[test]
    fn large_radius_still_yields_distributions() {
        let mut rng = seeded(12);
        let c = TabularKernel::random_chain(5, 1, &mut rng);
        let ball = WassersteinBall::new(c, 10.0, GroundMetric::line(5)).unwrap();
        for _ in 0..200 {
            let k = sample_kernel(&ball, &mut rng);
            assert!(TabularKernel::new(5, 1, k.as_slice().to_vec()).is_ok());
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(
            ParamSchedule::hopper().value("torso_length", 0).unwrap(),
            0.4
        );
        assert_eq!(ParamSchedule::ant().value("gravity", 0).unwrap(), 14.715);
        let flat = ParamSchedule::new([(
            "g".to_string(),
            SineParam {
                base: 2.0,
                amplitude: 0.0,
                frequency: 0.7,
            },
        )])
        .unwrap();
        assert!((0..50).all(|i| flat.value("g", i).unwrap() == 2.0));
        assert!(matches!(flat.value("h", 0), Err(Error::Config(_))));
        let bad = ParamSchedule::new([(
            "g".to_string(),
            SineParam {
                base: 1.0,
                amplitude: -1.0,
                frequency: 1.0,
            },
        )]);
        assert!(bad.is_err());
    }

    #[test]
    fn kernel_validation() {
        assert!(TabularKernel::new(2, 1, vec![0.5, 0.5, 0.2, 0.7]).is_err());
        assert!(TabularKernel::new(2, 1, vec![1.5, -0.5, 0.3, 0.7]).is_err());
        assert!(TabularKernel::new(2, 1, vec![0.5, 0.5]).is_err());
    }
}
