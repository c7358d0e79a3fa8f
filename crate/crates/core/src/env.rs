//! Episodic scheduling environment.
//!
//! One episode is a sensor sampling interval split into `t_slots` scheduling
//! slots. Each slot the agent grants one collaborator the link; the link's
//! accumulated bits over the slot's sub-slots decide how many grid cells it
//! can ship, the cells are chosen by priority against the ego's initial map,
//! and the ego fuses them into its running map.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{grid_budget, ChannelParams, LinkChannel};
use crate::error::{Error, Result};
use crate::map::{BinaryMap, ConfidenceMap, SelectionMask};
use crate::perception::{
    focal_term, fuse_confidence, grid_metrics, mask_out, priority_scores, selection_mask, utility,
    FusionRule, GridMetrics, LossWeights,
};
use crate::rng::{self, SimRng};
use crate::scenario::{initial_confidence, step_mobility, ConfidenceModel, ScenarioWorld};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Rate plus detection-loss reduction (needs ground truth).
    Labeled,
    /// Rate plus the label-free utility over transmitted cells.
    #[default]
    LabelFree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub t_slots: usize,
    pub reward_mode: RewardMode,
    pub lambda_rate_labeled: f64,
    pub lambda_det: f64,
    pub lambda_rate_label_free: f64,
    pub lambda_utility: f64,
    pub loss: LossWeights,
    pub fusion: FusionRule,
    /// Adds an extra action that schedules nobody.
    pub allow_idle: bool,
    pub alpha_db_offset: f64,
    pub alpha_db_scale: f64,
    /// `sum(R²)` is fed as `sum · sum_r2_scale / cells`.
    pub sum_r2_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            t_slots: 40,
            reward_mode: RewardMode::LabelFree,
            lambda_rate_labeled: 0.02,
            lambda_det: 8.0,
            lambda_rate_label_free: 0.04,
            lambda_utility: 0.3,
            loss: LossWeights::default(),
            fusion: FusionRule::NoisyOr,
            allow_idle: false,
            alpha_db_offset: 100.0,
            alpha_db_scale: 50.0,
            sum_r2_scale: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_slots == 0 {
            return Err(Error::config("env.t_slots must be >= 1"));
        }
        let w = [
            self.lambda_rate_labeled,
            self.lambda_det,
            self.lambda_rate_label_free,
            self.lambda_utility,
        ];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("env reward weights must be >= 0"));
        }
        if !(self.alpha_db_scale > 0.0) {
            return Err(Error::config("env.alpha_db_scale must be > 0"));
        }
        self.loss.validate()
    }
}

/// `λ_r,l · C_r + λ_det · ΔL_det`.
pub fn reward_labeled(delta_l_det: f64, rate_term: f64, lambda_rate: f64, lambda_det: f64) -> f64 {
    lambda_rate * rate_term + lambda_det * delta_l_det
}

/// `λ_r,nl · C_r + λ_u · Σ max(T, G)`.
pub fn reward_label_free(utility_val: f64, rate_term: f64, lambda_rate: f64, lambda_u: f64) -> f64 {
    lambda_rate * rate_term + lambda_u * utility_val
}

/// Raw per-collaborator observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollabFeatures {
    pub sum_r2: f64,
    pub max_r2: f64,
    pub alpha_db: f64,
    pub h_mag2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub features: Vec<CollabFeatures>,
    /// Normalised network input, 4 entries per collaborator.
    pub vector: Vec<f64>,
}

impl EnvState {
    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }
}

/// Observation from the current maps and links. `R_j = τ_j² (1 - τ_e)` uses
/// the ego's *current* map; the features are `sum(R_j ⊙ R_j)`,
/// `max(R_j ⊙ R_j)`, the large-scale gain and `|h|²` at the slot start.
pub fn build_state(
    tau_e: &ConfidenceMap,
    tau_js: &[ConfidenceMap],
    links: &[LinkChannel],
    cfg: &EnvConfig,
) -> Result<EnvState> {
    if tau_js.len() != links.len() {
        return Err(Error::LengthMismatch {
            expected: links.len(),
            got: tau_js.len(),
        });
    }
    let cells = tau_e.len().max(1) as f64;
    let mut features = Vec::with_capacity(links.len());
    let mut vector = Vec::with_capacity(4 * links.len());
    for (tau_j, link) in tau_js.iter().zip(links) {
        tau_j.check_dims(tau_e.dims())?;
        let (mut sum, mut max) = (0.0f64, 0.0f64);
        for (&tj, &te) in tau_j.values().iter().zip(tau_e.values()) {
            let r = tj * tj * (1.0 - te);
            let r2 = r * r;
            sum += r2;
            max = max.max(r2);
        }
        let f = CollabFeatures {
            sum_r2: sum,
            max_r2: max,
            alpha_db: link.alpha_db(),
            h_mag2: link.h.norm_sqr(),
        };
        vector.extend_from_slice(&[
            f.sum_r2 * cfg.sum_r2_scale / cells,
            f.max_r2,
            (f.alpha_db + cfg.alpha_db_offset) / cfg.alpha_db_scale,
            f.h_mag2,
        ]);
        features.push(f);
    }
    Ok(EnvState { features, vector })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub slot: usize,
    pub action: usize,
    /// Mean rate of the scheduled link over the slot.
    pub rate_bps: f64,
    /// Per-sub-slot rates of the scheduled link.
    pub subslot_rates_bps: Vec<f64>,
    /// Rates of every link at the slot start.
    pub slot_start_rates_bps: Vec<f64>,
    pub budget: usize,
    pub transmitted: usize,
    pub utility: f64,
    pub l_cls: f64,
    pub l_det: f64,
    pub delta_l_cls: f64,
    pub delta_l_det: f64,
    pub reward: f64,
}

pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub struct Env {
    params: ChannelParams,
    cfg: EnvConfig,
    conf_model: ConfidenceModel,
    world: ScenarioWorld,
    tau_e0: ConfidenceMap,
    tau_e: ConfidenceMap,
    tau_js: Vec<ConfidenceMap>,
    links: Vec<LinkChannel>,
    rng: SimRng,
    slot: usize,
    l_cls: f64,
    transmitted_total: Vec<usize>,
}

impl Env {
    /// Starts an episode on `world`. Confidence noise and channel draws come
    /// from independent streams of `seed`.
    pub fn reset(
        world: ScenarioWorld,
        seed: u64,
        params: &ChannelParams,
        cfg: &EnvConfig,
        conf_model: &ConfidenceModel,
    ) -> Result<(Self, EnvState)> {
        params.validate()?;
        cfg.validate()?;
        if world.units.len() < 2 {
            return Err(Error::config("world needs an ego and at least one collaborator"));
        }
        let mut prng = rng::stream(seed, rng::STREAM_PERCEPTION, 0);
        let maps: Vec<ConfidenceMap> = world
            .units
            .iter()
            .map(|u| initial_confidence(u, &world, conf_model, &mut prng))
            .collect();
        let mut crng = rng::stream(seed, rng::STREAM_CHANNEL, 0);
        let ego = world.ego().clone();
        let links = world.units[1..]
            .iter()
            .map(|u| LinkChannel::new(params, ego.distance_to(u), ego.relative_speed(u), &mut crng))
            .collect();
        Self::from_parts(world, maps, links, crng, params, cfg, conf_model)
    }

    /// Starts an episode from explicit maps (`maps[0]` is the ego) and links.
    pub fn from_parts(
        world: ScenarioWorld,
        mut maps: Vec<ConfidenceMap>,
        links: Vec<LinkChannel>,
        rng: SimRng,
        params: &ChannelParams,
        cfg: &EnvConfig,
        conf_model: &ConfidenceModel,
    ) -> Result<(Self, EnvState)> {
        if maps.len() != links.len() + 1 {
            return Err(Error::LengthMismatch {
                expected: links.len() + 1,
                got: maps.len(),
            });
        }
        let dims = (world.grid_h, world.grid_w);
        for m in &maps {
            m.check_dims(dims)?;
        }
        let tau_js = maps.split_off(1);
        let tau_e0 = maps.pop().expect("ego map");
        let l_cls = full_focal(&tau_e0, &world.gt_map, &cfg.loss);
        let n = links.len();
        let env = Self {
            params: params.clone(),
            cfg: cfg.clone(),
            conf_model: conf_model.clone(),
            world,
            tau_e: tau_e0.clone(),
            tau_e0,
            tau_js,
            links,
            rng,
            slot: 0,
            l_cls,
            transmitted_total: vec![0; n],
        };
        let state = env.observe();
        Ok((env, state))
    }

    pub fn observe(&self) -> EnvState {
        build_state(&self.tau_e, &self.tau_js, &self.links, &self.cfg).expect("consistent dims")
    }

    pub fn n_collaborators(&self) -> usize {
        self.links.len()
    }

    pub fn n_actions(&self) -> usize {
        self.links.len() + usize::from(self.cfg.allow_idle)
    }

    pub fn state_dim(&self) -> usize {
        4 * self.links.len()
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn done(&self) -> bool {
        self.slot >= self.cfg.t_slots
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn channel_params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn world(&self) -> &ScenarioWorld {
        &self.world
    }

    pub fn links(&self) -> &[LinkChannel] {
        &self.links
    }

    pub fn ego_map(&self) -> &ConfidenceMap {
        &self.tau_e
    }

    pub fn ego_initial_map(&self) -> &ConfidenceMap {
        &self.tau_e0
    }

    pub fn collaborator_map(&self, j: usize) -> &ConfidenceMap {
        &self.tau_js[j]
    }

    pub fn gt(&self) -> &BinaryMap {
        &self.world.gt_map
    }

    /// Cells shipped so far by each collaborator.
    pub fn transmitted_totals(&self) -> &[usize] {
        &self.transmitted_total
    }

    /// Collaborator → ego distances in metres.
    pub fn distances(&self) -> Vec<f64> {
        let ego = self.world.ego();
        self.world.units[1..].iter().map(|u| ego.distance_to(u)).collect()
    }

    /// Instantaneous rates of every link from the current (slot-start) fading.
    pub fn slot_start_rates(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.rate_bps(&self.params)).collect()
    }

    /// Remaining confidence score `Σ R_j²` per collaborator.
    pub fn remaining_scores(&self) -> Vec<f64> {
        self.observe().features.iter().map(|f| f.sum_r2).collect()
    }

    pub fn cls_loss(&self) -> f64 {
        self.l_cls
    }

    pub fn det_loss(&self) -> f64 {
        self.cfg.loss.lambda_cls * self.l_cls
    }

    pub fn metrics(&self) -> GridMetrics {
        grid_metrics(&self.tau_e, &self.world.gt_map, self.cfg.loss.zeta).expect("dims")
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done() {
            return Err(Error::EpisodeFinished(self.slot));
        }
        if action >= self.n_actions() {
            return Err(Error::InvalidAction {
                action,
                n_actions: self.n_actions(),
            });
        }
        let scheduled = (action < self.links.len()).then_some(action);
        let slot_start_rates = self.slot_start_rates();

        // The first sub-slot sees the slot-start fading; every link evolves
        // after each sub-slot, so the next slot starts from h^{t+1,0}.
        let ts = self.params.subslots_per_slot;
        let mut rates = Vec::with_capacity(ts);
        for _ in 0..ts {
            if let Some(j) = scheduled {
                rates.push(self.links[j].rate_bps(&self.params));
            }
            for link in &mut self.links {
                link.advance(&mut self.rng);
            }
        }
        let budget = grid_budget(&rates, self.params.subslot_duration_s, self.params.grid_payload_bits);

        let (dims_h, dims_w) = self.tau_e.dims();
        let mask = match scheduled {
            Some(j) => {
                let scores = priority_scores(&self.tau_js[j], &self.tau_e0)?;
                selection_mask(&scores, budget)
            }
            None => SelectionMask::empty(dims_h, dims_w),
        };
        let prev = self.tau_e.clone();
        if let Some(j) = scheduled {
            self.tau_e = fuse_confidence(&self.tau_e, &self.tau_js[j], &mask, self.cfg.fusion)?;
            self.tau_js[j] = mask_out(&self.tau_js[j], &mask)?;
            self.transmitted_total[j] += mask.popcount();
        }
        let util = utility(&prev, &self.tau_e, &mask, &self.cfg.loss)?;

        let gt = self.world.gt_map.bits();
        let delta_l_cls: f64 = mask
            .ones()
            .map(|i| {
                focal_term(prev.values()[i], gt[i], &self.cfg.loss)
                    - focal_term(self.tau_e.values()[i], gt[i], &self.cfg.loss)
            })
            .sum();
        self.l_cls -= delta_l_cls;
        let delta_l_det = self.cfg.loss.lambda_cls * delta_l_cls;

        let rate_bps = if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        };
        let rate_mbps = rate_bps / 1e6;
        let reward = match self.cfg.reward_mode {
            RewardMode::Labeled => reward_labeled(
                delta_l_det,
                rate_mbps,
                self.cfg.lambda_rate_labeled,
                self.cfg.lambda_det,
            ),
            RewardMode::LabelFree => reward_label_free(
                util,
                rate_mbps,
                self.cfg.lambda_rate_label_free,
                self.cfg.lambda_utility,
            ),
        };

        let info = StepInfo {
            slot: self.slot,
            action,
            rate_bps,
            subslot_rates_bps: rates,
            slot_start_rates_bps: slot_start_rates,
            budget,
            transmitted: mask.popcount(),
            utility: util,
            l_cls: self.l_cls,
            l_det: self.det_loss(),
            delta_l_cls,
            delta_l_det,
            reward,
        };
        self.slot += 1;
        Ok(StepOutcome {
            state: self.observe(),
            reward,
            done: self.done(),
            info,
        })
    }

    /// Moves to the next sensor sampling interval: mobility, correlated
    /// shadowing and fresh confidence maps; small-scale fading carries over.
    pub fn advance_interval(&mut self, interval_s: f64) -> Result<EnvState> {
        if !(interval_s > 0.0) {
            return Err(Error::config("interval must be > 0"));
        }
        let next = step_mobility(&self.world, interval_s);
        let ego0 = self.world.ego().clone();
        let ego1 = next.ego().clone();
        for (j, link) in self.links.iter_mut().enumerate() {
            let (u0, u1) = (&self.world.units[j + 1], &next.units[j + 1]);
            let rel0 = (u0.position.0 - ego0.position.0, u0.position.1 - ego0.position.1);
            let rel1 = (u1.position.0 - ego1.position.0, u1.position.1 - ego1.position.1);
            let moved = (rel1.0 - rel0.0).hypot(rel1.1 - rel0.1);
            link.update_large_scale(
                &self.params,
                ego1.distance_to(u1),
                moved,
                ego1.relative_speed(u1),
                &mut self.rng,
            );
        }
        let mut maps: Vec<ConfidenceMap> = next
            .units
            .iter()
            .map(|u| initial_confidence(u, &next, &self.conf_model, &mut self.rng))
            .collect();
        self.tau_js = maps.split_off(1);
        self.tau_e0 = maps.pop().expect("ego map");
        self.tau_e = self.tau_e0.clone();
        self.l_cls = full_focal(&self.tau_e, &next.gt_map, &self.cfg.loss);
        self.world = next;
        self.slot = 0;
        self.transmitted_total.iter_mut().for_each(|c| *c = 0);
        Ok(self.observe())
    }
}

fn full_focal(tau: &ConfidenceMap, gt: &BinaryMap, w: &LossWeights) -> f64 {
    tau.values()
        .iter()
        .zip(gt.bits())
        .map(|(&t, &g)| focal_term(t, g, w))
        .sum()
}

/// One row of a step trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub t: usize,
    pub action: usize,
    pub rate_bps: f64,
    pub budget: usize,
    pub utility: f64,
    pub l_cls: f64,
    pub reward: f64,
}

impl TraceRow {
    pub fn from_info(episode: usize, info: &StepInfo) -> Self {
        Self {
            episode,
            t: info.slot,
            action: info.action,
            rate_bps: info.rate_bps,
            budget: info.budget,
            utility: info.utility,
            l_cls: info.l_cls,
            reward: info.reward,
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "episode,t,action,rate_bps,budget,utility,L_cls,reward";

pub fn write_trace_csv<W: Write>(mut out: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{},{:.9},{:.9},{:.9}",
            r.episode, r.t, r.action, r.rate_bps, r.budget, r.utility, r.l_cls, r.reward
        )?;
    }
    Ok(())
}
