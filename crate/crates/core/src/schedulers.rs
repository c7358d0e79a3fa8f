//! Baseline policies, the learned-policy wrapper and the paired evaluation
//! harness.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::ddqn::{argmax, Agent};
use crate::env::{Env, EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::map::ConfidenceMap;
use crate::rng::{self, derive_seed, SimRng};
use crate::scenario::{generate_scenario, ScenarioConfig, ScenarioWorld};

/// What a policy may look at when choosing the link for a slot.
pub struct PolicyContext<'a> {
    pub state: &'a EnvState,
    pub distances: &'a [f64],
    pub slot_start_rates: &'a [f64],
    pub is_rsu: &'a [bool],
    pub slot: usize,
}

pub trait Policy: Send + Sync {
    fn name(&self) -> String;
    fn act(&self, ctx: &PolicyContext<'_>, rng: &mut SimRng) -> usize;
}

/// Index of the smallest value; ties go to the lowest index.
fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v < xs[best] {
            best = i;
        }
    }
    best
}

/// Nearest candidate by distance; ties go to the lowest index.
pub fn nearest_policy(distances: &[f64]) -> usize {
    argmin(distances)
}

pub fn round_robin_policy(slot: usize, n: usize) -> usize {
    slot % n.max(1)
}

/// Highest slot-start rate; ties go to the lowest index.
pub fn max_rate_policy(slot_start_rates: &[f64]) -> usize {
    argmax(slot_start_rates)
}

/// Nearest vehicle. Roadside units are skipped unless `include_rsu`, or
/// unless every collaborator is one.
#[derive(Clone, Copy, Debug, Default)]
pub struct Nearest {
    pub include_rsu: bool,
}

impl Policy for Nearest {
    fn name(&self) -> String {
        "nearest".into()
    }

    fn act(&self, ctx: &PolicyContext<'_>, _rng: &mut SimRng) -> usize {
        let all_rsu = ctx.is_rsu.iter().all(|&r| r);
        let d: Vec<f64> = ctx
            .distances
            .iter()
            .zip(ctx.is_rsu)
            .map(|(&d, &rsu)| {
                if rsu && !self.include_rsu && !all_rsu {
                    f64::INFINITY
                } else {
                    d
                }
            })
            .collect();
        nearest_policy(&d)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RoundRobin;

impl Policy for RoundRobin {
    fn name(&self) -> String {
        "rr".into()
    }

    fn act(&self, ctx: &PolicyContext<'_>, _rng: &mut SimRng) -> usize {
        round_robin_policy(ctx.slot, ctx.distances.len())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MaxRate;

impl Policy for MaxRate {
    fn name(&self) -> String {
        "max_rate".into()
    }

    fn act(&self, ctx: &PolicyContext<'_>, _rng: &mut SimRng) -> usize {
        max_rate_policy(ctx.slot_start_rates)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&self, ctx: &PolicyContext<'_>, rng: &mut SimRng) -> usize {
        rng.gen_range(0..ctx.distances.len())
    }
}

/// Greedy policy of a trained Q-network.
#[derive(Clone, Debug)]
pub struct Learned {
    pub agent: Agent,
    pub label: String,
}

impl Learned {
    pub fn new(agent: Agent) -> Self {
        Self {
            agent,
            label: "schedcp".into(),
        }
    }
}

impl Policy for Learned {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn act(&self, ctx: &PolicyContext<'_>, _rng: &mut SimRng) -> usize {
        self.agent
            .greedy(ctx.state.as_slice())
            .expect("state dimension matches the network")
    }
}

/// Builds a baseline by name: `nearest`, `rr`, `max_rate` or `random`.
pub fn baseline_by_name(name: &str, nearest_includes_rsu: bool) -> Result<Box<dyn Policy>> {
    Ok(match name {
        "nearest" => Box::new(Nearest {
            include_rsu: nearest_includes_rsu,
        }),
        "rr" | "round_robin" => Box::new(RoundRobin),
        "max_rate" | "maxrate" => Box::new(MaxRate),
        "random" => Box::new(RandomPolicy),
        other => return Err(Error::config(format!("unknown policy '{other}'"))),
    })
}

/// Everything that fixes the evaluation episodes. Episode `k` uses the same
/// world and channel/perception draws for every policy.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSetup {
    pub params: ChannelParams,
    pub env_cfg: EnvConfig,
    pub scenario_cfg: ScenarioConfig,
    pub episodes: usize,
    pub seed: u64,
    pub bootstrap_resamples: usize,
}

impl EvalSetup {
    pub fn world_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, "eval-world", k as u64)
    }

    pub fn env_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, "eval-env", k as u64)
    }

    pub fn world(&self, k: usize) -> Result<ScenarioWorld> {
        generate_scenario(&self.scenario_cfg, self.world_seed(k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub final_l_cls: f64,
    pub final_l_det: f64,
    pub mean_rate_mbps: f64,
    pub total_utility: f64,
    /// `Σ_t (L_cls^{t-1} - L_cls^t)`.
    pub total_delta_l_cls: f64,
    pub total_reward: f64,
    pub actions: Vec<usize>,
}

/// Runs one episode of `policy` on `world`.
pub fn run_episode(
    policy: &dyn Policy,
    world: ScenarioWorld,
    env_seed: u64,
    params: &ChannelParams,
    env_cfg: &EnvConfig,
    scenario_cfg: &ScenarioConfig,
) -> Result<EpisodeMetrics> {
    let is_rsu: Vec<bool> = world.units[1..].iter().map(|u| u.is_rsu).collect();
    let (mut env, mut state) = Env::reset(world, env_seed, params, env_cfg, &scenario_cfg.confidence)?;
    let mut prng = rng::stream(env_seed, rng::STREAM_EVAL, 0);
    let distances = env.distances();
    let mut rate_sum = 0.0;
    let mut util = 0.0;
    let mut dl = 0.0;
    let mut reward = 0.0;
    let mut actions = Vec::with_capacity(env_cfg.t_slots);
    loop {
        let rates = env.slot_start_rates();
        let ctx = PolicyContext {
            state: &state,
            distances: &distances,
            slot_start_rates: &rates,
            is_rsu: &is_rsu,
            slot: env.slot(),
        };
        let a = policy.act(&ctx, &mut prng);
        let out = env.step(a)?;
        rate_sum += out.info.rate_bps / 1e6;
        util += out.info.utility;
        dl += out.info.delta_l_cls;
        reward += out.reward;
        actions.push(a);
        state = out.state;
        if out.done {
            break;
        }
    }
    let m = env.metrics();
    Ok(EpisodeMetrics {
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        final_l_cls: env.cls_loss(),
        final_l_det: env.det_loss(),
        mean_rate_mbps: rate_sum / actions.len() as f64,
        total_utility: util,
        total_delta_l_cls: dl,
        total_reward: reward,
        actions,
    })
}

/// Mean with a percentile-bootstrap 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn bootstrap_mean(xs: &[f64], resamples: usize, seed: u64) -> Estimate {
    if xs.is_empty() {
        return Estimate {
            mean: f64::NAN,
            lo: f64::NAN,
            hi: f64::NAN,
        };
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if resamples == 0 {
        return Estimate { mean, lo: mean, hi: mean };
    }
    let mut r = rng::stream(seed, "bootstrap", 0);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[r.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Estimate {
        mean,
        lo: q(0.025),
        hi: q(0.975),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub bandwidth_hz: f64,
    pub episodes: usize,
    pub f1: Estimate,
    pub precision: Estimate,
    pub recall: Estimate,
    pub final_l_cls: Estimate,
    pub final_l_det: Estimate,
    pub mean_rate_mbps: Estimate,
    pub total_utility: Estimate,
    #[serde(skip)]
    pub per_episode: Vec<EpisodeMetrics>,
}

fn summarize(policy: String, setup: &EvalSetup, per_episode: Vec<EpisodeMetrics>) -> MetricsReport {
    let b = setup.bootstrap_resamples;
    let s = derive_seed(setup.seed, "bootstrap", 0);
    let est = |f: fn(&EpisodeMetrics) -> f64| {
        let xs: Vec<f64> = per_episode.iter().map(f).collect();
        bootstrap_mean(&xs, b, s)
    };
    MetricsReport {
        policy,
        bandwidth_hz: setup.params.bandwidth_hz,
        episodes: per_episode.len(),
        f1: est(|m| m.f1),
        precision: est(|m| m.precision),
        recall: est(|m| m.recall),
        final_l_cls: est(|m| m.final_l_cls),
        final_l_det: est(|m| m.final_l_det),
        mean_rate_mbps: est(|m| m.mean_rate_mbps),
        total_utility: est(|m| m.total_utility),
        per_episode,
    }
}

/// Evaluates `policy` on `setup.episodes` paired episodes. `jobs > 1` runs
/// episodes on a thread pool; results are gathered in episode order, so the
/// report does not depend on `jobs`.
pub fn evaluate(policy: &dyn Policy, setup: &EvalSetup, jobs: usize) -> Result<MetricsReport> {
    setup.params.validate()?;
    setup.env_cfg.validate()?;
    setup.scenario_cfg.validate()?;
    let run = |k: usize| -> Result<EpisodeMetrics> {
        run_episode(
            policy,
            setup.world(k)?,
            setup.env_seed(k),
            &setup.params,
            &setup.env_cfg,
            &setup.scenario_cfg,
        )
    };
    let per_episode: Vec<EpisodeMetrics> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| (0..setup.episodes).into_par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        (0..setup.episodes).map(run).collect::<Result<Vec<_>>>()?
    };
    Ok(summarize(policy.name(), setup, per_episode))
}

/// One report per `(policy, bandwidth)`, policy-major.
pub fn bandwidth_sweep(
    policies: &[&dyn Policy],
    bandwidths_hz: &[f64],
    setup: &EvalSetup,
    jobs: usize,
) -> Result<Vec<MetricsReport>> {
    if let Some(w) = bandwidths_hz.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::config(format!("sweep bandwidth must be > 0, got {w}")));
    }
    let mut out = Vec::with_capacity(policies.len() * bandwidths_hz.len());
    for p in policies {
        for &w in bandwidths_hz {
            let s = EvalSetup {
                params: ChannelParams {
                    bandwidth_hz: w,
                    ..setup.params.clone()
                },
                ..setup.clone()
            };
            out.push(evaluate(*p, &s, jobs)?);
        }
    }
    Ok(out)
}

pub const REPORT_CSV_HEADER: &str = "policy,bandwidth_hz,episodes,\
f1,f1_lo,f1_hi,precision,precision_lo,precision_hi,recall,recall_lo,recall_hi,\
final_l_cls,final_l_cls_lo,final_l_cls_hi,final_l_det,final_l_det_lo,final_l_det_hi,\
mean_rate_mbps,mean_rate_mbps_lo,mean_rate_mbps_hi,total_utility,total_utility_lo,total_utility_hi";

pub fn write_reports_csv<W: Write>(mut out: W, reports: &[MetricsReport]) -> std::io::Result<()> {
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        write!(out, "{},{},{}", r.policy, r.bandwidth_hz, r.episodes)?;
        for e in [
            &r.f1,
            &r.precision,
            &r.recall,
            &r.final_l_cls,
            &r.final_l_det,
            &r.mean_rate_mbps,
            &r.total_utility,
        ] {
            write!(out, ",{:.6},{:.6},{:.6}", e.mean, e.lo, e.hi)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Fixed-width table for terminals.
pub fn format_reports(reports: &[MetricsReport]) -> String {
    let mut s = format!(
        "{:<10} {:>9} {:>7} {:>7} {:>7} {:>10} {:>9} {:>9}\n",
        "policy", "W [kHz]", "F1", "prec", "recall", "L_cls", "rate", "utility"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<10} {:>9.0} {:>7.4} {:>7.4} {:>7.4} {:>10.3} {:>9.3} {:>9.2}\n",
            r.policy,
            r.bandwidth_hz / 1e3,
            r.f1.mean,
            r.precision.mean,
            r.recall.mean,
            r.final_l_cls.mean,
            r.mean_rate_mbps.mean,
            r.total_utility.mean
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub t: usize,
    /// Slot-start rate of every link, bps.
    pub rates_bps: Vec<f64>,
    /// `Σ R_j²` of every collaborator before the decision.
    pub remaining_score: Vec<f64>,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTrace {
    pub policy: String,
    pub rows: Vec<CaseRow>,
    /// Ego map before the first slot and after each slot.
    #[serde(skip)]
    pub ego_maps: Vec<ConfidenceMap>,
}

impl CaseTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

pub fn case_study(
    world: ScenarioWorld,
    env_seed: u64,
    policy: &dyn Policy,
    params: &ChannelParams,
    env_cfg: &EnvConfig,
    scenario_cfg: &ScenarioConfig,
) -> Result<CaseTrace> {
    let is_rsu: Vec<bool> = world.units[1..].iter().map(|u| u.is_rsu).collect();
    let (mut env, mut state) = Env::reset(world, env_seed, params, env_cfg, &scenario_cfg.confidence)?;
    let mut prng = rng::stream(env_seed, rng::STREAM_EVAL, 0);
    let distances = env.distances();
    let mut rows = Vec::with_capacity(env_cfg.t_slots);
    let mut maps = vec![env.ego_map().clone()];
    loop {
        let rates = env.slot_start_rates();
        let ctx = PolicyContext {
            state: &state,
            distances: &distances,
            slot_start_rates: &rates,
            is_rsu: &is_rsu,
            slot: env.slot(),
        };
        let a = policy.act(&ctx, &mut prng);
        rows.push(CaseRow {
            t: env.slot(),
            rates_bps: rates.clone(),
            remaining_score: state.features.iter().map(|f| f.sum_r2).collect(),
            action: a,
        });
        let out = env.step(a)?;
        maps.push(env.ego_map().clone());
        state = out.state;
        if out.done {
            break;
        }
    }
    Ok(CaseTrace {
        policy: policy.name(),
        rows,
        ego_maps: maps,
    })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return 0.0;
    }
    pearson(&ranks(a), &ranks(b))
}
