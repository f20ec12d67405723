//! Experiment runners. Each writes its CSV tables first and derives the
//! SVG figures from that CSV text. Seeds fan out over a bounded rayon pool
//! and results are merged back in config order.

use adarank_core::adarl::{train, AdaRlConfig, PolicyCheckpoint, TrainingLog, TrainingOutcome};
use adarank_core::linear_soft_rl::{
    bias_variance_experiment, fit_slack_constant, make_picard_system, mean_error_by_rank,
    BiasVarianceRow, PerturbationModel, SweepSpec, BIAS_VARIANCE_CSV_HEADER,
};
use adarank_core::lowrank::RankCriterion;
use adarank_core::rng::derived;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::OutputDir;
use crate::plot;

const SYSTEM_STREAM: u64 = 0x5157;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adarl,
    Sac,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Adarl => "adarl",
            Method::Sac => "sac",
        }
    }

    /// The baseline is the same learner with adaptation switched off.
    pub fn adarl_config(self, base: &AdaRlConfig) -> AdaRlConfig {
        match self {
            Method::Adarl => base.clone(),
            Method::Sac => AdaRlConfig {
                adapt: false,
                ..base.clone()
            },
        }
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

fn fan_out<T: Send, J: Sync>(
    threads: usize,
    jobs: &[J],
    f: impl Fn(&J) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    pool(threads)?.install(|| jobs.par_iter().map(f).collect())
}

#[derive(Debug, Clone)]
pub struct BiasVarianceReport {
    pub rows: Vec<BiasVarianceRow>,
    pub fitted_c: f64,
    /// Seed-averaged error curve per epsilon.
    pub mean_curves: Vec<(f64, Vec<(usize, f64)>)>,
}

impl BiasVarianceReport {
    pub fn argmin_rank(&self, epsilon: f64) -> Option<usize> {
        let (_, curve) = self.mean_curves.iter().find(|(e, _)| *e == epsilon)?;
        curve
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|&(r, _)| r)
    }
}

pub fn bias_variance_csv(rows: &[BiasVarianceRow]) -> String {
    let mut s = String::from(BIAS_VARIANCE_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// One Picard system and perturbation model per seed, swept over every
/// epsilon and rank. Rows are ordered by `(epsilon, r, seed)`.
pub fn run_bias_variance(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
) -> Result<BiasVarianceReport> {
    let bv = &cfg.bias_variance;
    let ranks = bv.min_rank..=bv.max_rank.unwrap_or(bv.dim);
    let per_seed = fan_out(cfg.threads(), &cfg.seeds, |&seed| {
        let mut g = derived(seed, SYSTEM_STREAM);
        let pic = make_picard_system(bv.dim, bv.true_rank, bv.p, bv.decay, &mut g)?;
        let model = PerturbationModel::random(bv.perturbation, bv.dim, &mut g)?;
        let sweep = SweepSpec {
            epsilons: bv.epsilons.clone(),
            seeds: vec![seed],
            ranks: ranks.clone(),
        };
        Ok(bias_variance_experiment(&pic, &model, &sweep)?)
    })?;
    let mut rows: Vec<(usize, usize, BiasVarianceRow)> = per_seed
        .into_iter()
        .enumerate()
        .flat_map(|(si, rows)| rows.into_iter().map(move |r| (si, r)))
        .map(|(si, r)| {
            let ei = bv
                .epsilons
                .iter()
                .position(|&e| e == r.epsilon)
                .expect("epsilon from sweep");
            (ei, si, r)
        })
        .collect();
    rows.sort_by_key(|(ei, si, r)| (*ei, r.r, *si));
    let rows: Vec<BiasVarianceRow> = rows.into_iter().map(|(_, _, r)| r).collect();
    let csv = bias_variance_csv(&rows);
    out.write("bias_variance.csv", &csv)?;
    let mut mean_curves = Vec::new();
    for &eps in &bv.epsilons {
        out.write(
            &format!("bias_variance_eps{eps}.svg"),
            &plot::bias_variance_chart(&csv, eps)?.to_svg(),
        )?;
        mean_curves.push((eps, mean_error_by_rank(&rows, eps)));
    }
    Ok(BiasVarianceReport {
        fitted_c: fit_slack_constant(&rows),
        rows,
        mean_curves,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub method: Method,
    pub seed: u64,
    pub log: TrainingLog,
}

fn run_one(
    cfg: &ExperimentConfig,
    method: Method,
    ada: &AdaRlConfig,
    seed: u64,
) -> Result<(TrainingOutcome, PolicyCheckpoint)> {
    let setup = cfg.env.setup()?;
    let outcome = train(&setup, &cfg.sac, &method.adarl_config(ada), seed)?;
    let ckpt = PolicyCheckpoint::new(&setup, &outcome.agent.policy)?;
    Ok((outcome, ckpt))
}

fn write_training(
    out: &mut OutputDir,
    tag: &str,
    method: Method,
    seed: u64,
    log: &TrainingLog,
    ckpt: &PolicyCheckpoint,
) -> Result<()> {
    let curve = log.learning_curve_csv();
    out.write(&format!("learning_curve_{tag}_seed{seed}.csv"), &curve)?;
    if method == Method::Adarl {
        out.write(
            &format!("rank_trace_{tag}_seed{seed}.csv"),
            &log.rank_trace_csv(),
        )?;
    }
    out.write(&format!("policy_{tag}_seed{seed}.json"), &ckpt.to_json())?;
    let chart = plot::learning_curve_chart(&[(format!("{tag} seed {seed}"), curve)], None)?;
    out.write(
        &format!("learning_curve_{tag}_seed{seed}.svg"),
        &chart.to_svg(),
    )?;
    Ok(())
}

/// Single training run for one method and seed.
pub fn run_train(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    out: &mut OutputDir,
) -> Result<TrainReport> {
    let (outcome, ckpt) = run_one(cfg, method, &cfg.adarl, seed)?;
    write_training(out, method.name(), method, seed, &outcome.log, &ckpt)?;
    Ok(TrainReport {
        method,
        seed,
        log: outcome.log,
    })
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub adarl: Vec<TrainReport>,
    pub sac: Vec<TrainReport>,
}

impl ComparisonReport {
    fn finals(runs: &[TrainReport]) -> Vec<f64> {
        runs.iter()
            .map(|r| r.log.final_return().unwrap_or(f64::NAN))
            .collect()
    }

    /// Cross-seed mean and population std of final evaluation returns.
    pub fn final_stats(&self, method: Method) -> (f64, f64) {
        let runs = if method == Method::Adarl {
            &self.adarl
        } else {
            &self.sac
        };
        adarank_core::adarl::mean_std(&Self::finals(runs))
    }
}

pub const SUMMARY_HEADER: &str = "step,adarl_mean,adarl_std,sac_mean,sac_std";
pub const ADAPTATIONS_HEADER: &str = "seed,adaptation_index,opt_step,env_step";

/// AdaRL and the fixed-rank baseline on identical seeds and schedules.
pub fn run_training_comparison(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
) -> Result<ComparisonReport> {
    let jobs: Vec<(Method, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| [(Method::Adarl, s), (Method::Sac, s)])
        .collect();
    let results = fan_out(cfg.threads(), &jobs, |&(m, s)| {
        run_one(cfg, m, &cfg.adarl, s)
    })?;
    let mut report = ComparisonReport {
        adarl: Vec::new(),
        sac: Vec::new(),
    };
    let mut boundaries = String::from(ADAPTATIONS_HEADER);
    boundaries.push('\n');
    for (&(method, seed), (outcome, ckpt)) in jobs.iter().zip(results) {
        write_training(out, method.name(), method, seed, &outcome.log, &ckpt)?;
        for a in &outcome.log.adaptations {
            boundaries.push_str(&format!(
                "{seed},{},{},{}\n",
                a.adaptation_index, a.opt_step, a.env_step
            ));
        }
        let rep = TrainReport {
            method,
            seed,
            log: outcome.log,
        };
        match method {
            Method::Adarl => report.adarl.push(rep),
            Method::Sac => report.sac.push(rep),
        }
    }
    let summary = summary_csv(&report);
    out.write("summary.csv", &summary)?;
    out.write("adaptations.csv", &boundaries)?;
    let mut curves = Vec::new();
    for (label, col) in [("adarl mean", "adarl_mean"), ("sac mean", "sac_mean")] {
        curves.push((label.to_string(), project_summary(&summary, col)?));
    }
    out.write(
        "learning_curves.svg",
        &plot::learning_curve_chart(&curves, Some(&boundaries))?.to_svg(),
    )?;
    Ok(report)
}

fn summary_csv(report: &ComparisonReport) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    let steps: Vec<u64> = report
        .adarl
        .first()
        .map(|r| r.log.evals.iter().map(|e| e.step).collect())
        .unwrap_or_default();
    for (i, step) in steps.iter().enumerate() {
        let at = |runs: &[TrainReport]| {
            let v: Vec<f64> = runs.iter().map(|r| r.log.evals[i].return_mean).collect();
            adarank_core::adarl::mean_std(&v)
        };
        let (am, asd) = at(&report.adarl);
        let (sm, ssd) = at(&report.sac);
        s.push_str(&format!("{step},{am},{asd},{sm},{ssd}\n"));
    }
    s
}

/// `step,return_mean` view of one summary column, for plotting.
fn project_summary(summary: &str, col: &str) -> Result<String> {
    let (h, rows) = plot::parse_csv(summary)?;
    let c = h
        .iter()
        .position(|x| x == col)
        .ok_or_else(|| HarnessError::Config(format!("no column {col}")))?;
    let mut s = String::from("step,return_mean\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r[0], r[c]));
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct RankTraceReport {
    pub seed: u64,
    pub energy: TrainingLog,
    pub hard: TrainingLog,
}

/// AdaRL under both rank criteria on identical seeds.
pub fn run_rank_trace(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<RankTraceReport>> {
    let jobs: Vec<(RankCriterion, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| [(RankCriterion::Energy, s), (RankCriterion::Hard, s)])
        .collect();
    let logs = fan_out(cfg.threads(), &jobs, |&(criterion, seed)| {
        let ada = AdaRlConfig {
            adapt: true,
            criterion,
            ..cfg.adarl.clone()
        };
        Ok(run_one(cfg, Method::Adarl, &ada, seed)?.0.log)
    })?;
    let mut reports: Vec<RankTraceReport> = Vec::new();
    for (&(criterion, seed), log) in jobs.iter().zip(logs) {
        let name = criterion.name();
        let csv = log.rank_trace_csv();
        out.write(&format!("rank_trace_{name}_seed{seed}.csv"), &csv)?;
        out.write(
            &format!("learning_curve_{name}_seed{seed}.csv"),
            &log.learning_curve_csv(),
        )?;
        let chart = plot::rank_trace_chart(&csv, &format!("{name} criterion, seed {seed}"))?;
        out.write(
            &format!("rank_trace_{name}_seed{seed}.svg"),
            &chart.to_svg(),
        )?;
        match criterion {
            RankCriterion::Energy => reports.push(RankTraceReport {
                seed,
                energy: log,
                hard: TrainingLog::default(),
            }),
            RankCriterion::Hard => {
                reports
                    .last_mut()
                    .expect("energy run precedes hard run")
                    .hard = log
            }
        }
    }
    Ok(reports)
}

/// Deterministic-policy returns of a checkpoint under its nominal
/// parameters, one per episode.
pub fn run_eval(checkpoint_json: &str, episodes: u32, seed: u64) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(HarnessError::Config("episodes must be at least 1".into()));
    }
    let ckpt = PolicyCheckpoint::from_json(checkpoint_json)?;
    let mut rng = adarank_core::rng::seeded(seed);
    (0..episodes)
        .map(|_| {
            let (m, _) = adarank_core::adarl::evaluate(
                &ckpt.policy,
                ckpt.env,
                &ckpt.nominal_params,
                1,
                &mut rng,
            )?;
            Ok(m)
        })
        .collect()
}

pub fn eval_csv(returns: &[f64]) -> String {
    let mut s = String::from("episode,return\n");
    for (i, r) in returns.iter().enumerate() {
        s.push_str(&format!("{i},{r}\n"));
    }
    s
}
