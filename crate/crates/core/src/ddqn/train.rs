//! Training loop: ε-greedy rollouts into replay, one (or more) mini-batch
//! updates at each episode end, periodic target sync and validation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::agent::{Agent, TrainConfig};
use super::replay::{ReplayBuffer, Transition};
use crate::channel::ChannelParams;
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::scenario::{generate_scenario, ScenarioConfig, ScenarioWorld};

/// An episodic task the trainer can roll out.
pub trait EpisodeSource {
    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Starts training episode `episode`.
    fn reset_train(&mut self, episode: usize) -> Result<Vec<f64>>;
    fn n_validation(&self) -> usize;
    /// Starts validation episode `k`; the same `k` always yields the same episode.
    fn reset_validation(&mut self, k: usize) -> Result<Vec<f64>>;
    /// Returns `(next_state, reward, done)`.
    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean_validation_return: f64,
}

pub struct TrainOutcome {
    pub agent: Agent,
    pub curve: Vec<CurvePoint>,
    /// Loss of every mini-batch update, in order.
    pub losses: Vec<f64>,
}

/// Discounted return of the greedy policy averaged over the validation set.
pub fn validation_return<S: EpisodeSource + ?Sized>(
    agent: &Agent,
    src: &mut S,
    gamma: f64,
) -> Result<f64> {
    let n = src.n_validation();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for k in 0..n {
        let mut s = src.reset_validation(k)?;
        let mut disc = 1.0;
        loop {
            let a = agent.greedy(&s)?;
            let (next, r, done) = src.step(a)?;
            total += disc * r;
            disc *= gamma;
            s = next;
            if done {
                break;
            }
        }
    }
    Ok(total / n as f64)
}

/// Runs `cfg.episodes` training episodes. The curve has one point before
/// training and one every `validation_every` episodes.
pub fn train<S: EpisodeSource + ?Sized>(src: &mut S, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let dims = cfg.layer_dims(src.state_dim(), src.n_actions());
    let mut init_rng = rng::stream(cfg.seed, rng::STREAM_AGENT, 0);
    let agent = Agent::new(&dims, cfg, &mut init_rng)?;
    train_agent(src, agent, cfg)
}

pub fn train_agent<S: EpisodeSource + ?Sized>(
    src: &mut S,
    mut agent: Agent,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut act_rng = rng::stream(cfg.seed, rng::STREAM_AGENT, 1);
    let mut batch_rng = rng::stream(cfg.seed, rng::STREAM_AGENT, 2);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut curve = Vec::new();
    let mut losses = Vec::new();
    let validate = cfg.validation_every > 0 && src.n_validation() > 0;
    if validate && cfg.episodes > 0 {
        curve.push(CurvePoint {
            episode: 0,
            mean_validation_return: validation_return(&agent, src, cfg.gamma)?,
        });
    }
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon(ep);
        let mut s = src.reset_train(ep)?;
        loop {
            let a = agent.act(&s, eps, &mut act_rng)?;
            let (next, r, done) = src.step(a)?;
            replay.push(Transition {
                state: s,
                action: a,
                reward: r,
                next_state: next.clone(),
                done,
            });
            s = next;
            if done {
                break;
            }
        }
        if replay.len() >= cfg.batch_size.min(replay.capacity()) {
            for _ in 0..cfg.updates_per_episode {
                let batch = replay.sample(cfg.batch_size, &mut batch_rng);
                losses.push(agent.train_step(&batch)?);
            }
        }
        if (ep + 1) % cfg.target_sync_every == 0 {
            agent.sync_target();
        }
        if validate && (ep + 1) % cfg.validation_every == 0 {
            curve.push(CurvePoint {
                episode: ep + 1,
                mean_validation_return: validation_return(&agent, src, cfg.gamma)?,
            });
        }
    }
    Ok(TrainOutcome {
        agent,
        curve,
        losses,
    })
}

pub const CURVE_CSV_HEADER: &str = "episode,mean_validation_return";

pub fn write_curve_csv<W: Write>(mut out: W, curve: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for p in curve {
        writeln!(out, "{},{:.9}", p.episode, p.mean_validation_return)?;
    }
    Ok(())
}

/// Trailing moving average over `window` points (shorter at the start).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// The scheduling environment as a training task. Training episode `e`
/// draws a fresh world; validation uses a fixed set drawn from a separate
/// stream of the same seed.
pub struct SchedulingTask {
    pub params: ChannelParams,
    pub env_cfg: EnvConfig,
    pub scenario_cfg: ScenarioConfig,
    pub seed: u64,
    validation: Vec<ScenarioWorld>,
    env: Option<Env>,
}

impl SchedulingTask {
    pub fn new(
        params: ChannelParams,
        env_cfg: EnvConfig,
        scenario_cfg: ScenarioConfig,
        seed: u64,
        n_validation: usize,
    ) -> Result<Self> {
        params.validate()?;
        env_cfg.validate()?;
        scenario_cfg.validate()?;
        let validation = (0..n_validation)
            .map(|k| generate_scenario(&scenario_cfg, validation_seed(seed, k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            env_cfg,
            scenario_cfg,
            seed,
            validation,
            env: None,
        })
    }

    pub fn validation_worlds(&self) -> &[ScenarioWorld] {
        &self.validation
    }

    fn start(&mut self, world: ScenarioWorld, env_seed: u64) -> Result<Vec<f64>> {
        let (env, state) = Env::reset(
            world,
            env_seed,
            &self.params,
            &self.env_cfg,
            &self.scenario_cfg.confidence,
        )?;
        self.env = Some(env);
        Ok(state.vector)
    }
}

pub fn train_world_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, "train-world", episode as u64)
}

pub fn validation_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, "validation-world", k as u64)
}

impl EpisodeSource for SchedulingTask {
    fn state_dim(&self) -> usize {
        4 * self.scenario_cfg.n_collaborators
    }

    fn n_actions(&self) -> usize {
        self.scenario_cfg.n_collaborators + usize::from(self.env_cfg.allow_idle)
    }

    fn reset_train(&mut self, episode: usize) -> Result<Vec<f64>> {
        let ws = train_world_seed(self.seed, episode);
        let world = generate_scenario(&self.scenario_cfg, ws)?;
        self.start(world, ws)
    }

    fn n_validation(&self) -> usize {
        self.validation.len()
    }

    fn reset_validation(&mut self, k: usize) -> Result<Vec<f64>> {
        let world = self.validation[k].clone();
        self.start(world, validation_seed(self.seed, k))
    }

    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let env = self
            .env
            .as_mut()
            .ok_or_else(|| Error::config("step before reset"))?;
        let out = env.step(action)?;
        Ok((out.state.vector, out.reward, out.done))
    }
}

/// Contextual bandit: the state is `[x]` with `x = ±1`; arm 0 pays 1 when
/// `x > 0`, arm 1 pays 1 when `x < 0`, everything else pays 0.
pub struct SignBandit {
    n_arms: usize,
    x: f64,
    rng: rng::SimRng,
    validation: Vec<f64>,
}

impl SignBandit {
    pub fn new(n_arms: usize, seed: u64) -> Self {
        assert!(n_arms >= 2);
        Self {
            n_arms,
            x: 0.0,
            rng: rng::stream(seed, "sign-bandit", 0),
            validation: vec![1.0, -1.0],
        }
    }

    pub fn optimal(x: f64) -> usize {
        usize::from(x < 0.0)
    }
}

impl EpisodeSource for SignBandit {
    fn state_dim(&self) -> usize {
        1
    }

    fn n_actions(&self) -> usize {
        self.n_arms
    }

    fn reset_train(&mut self, _episode: usize) -> Result<Vec<f64>> {
        use rand::Rng;
        self.x = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        Ok(vec![self.x])
    }

    fn n_validation(&self) -> usize {
        self.validation.len()
    }

    fn reset_validation(&mut self, k: usize) -> Result<Vec<f64>> {
        self.x = self.validation[k];
        Ok(vec![self.x])
    }

    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let r = if action == Self::optimal(self.x) { 1.0 } else { 0.0 };
        Ok((vec![self.x], r, true))
    }
}

/// Share of states where the greedy action is optimal.
pub fn sign_bandit_accuracy(agent: &Agent) -> Result<f64> {
    let mut ok = 0;
    for x in [1.0, -1.0] {
        ok += usize::from(agent.greedy(&[x])? == SignBandit::optimal(x));
    }
    Ok(ok as f64 / 2.0)
}

/// Small network and schedule suited to the bandit.
pub fn sign_bandit_config(seed: u64) -> TrainConfig {
    TrainConfig {
        episodes: 2000,
        eps_decay_episodes: 1000,
        gamma: 0.0,
        batch_size: 32,
        learning_rate: 1e-3,
        replay_capacity: 2000,
        hidden: vec![16],
        validation_every: 0,
        seed,
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_episodes_leaves_params_unchanged() {
        let mut src = SignBandit::new(3, 0);
        let cfg = TrainConfig {
            episodes: 0,
            ..sign_bandit_config(5)
        };
        let dims = cfg.layer_dims(1, 3);
        let mut r = rng::stream(cfg.seed, rng::STREAM_AGENT, 0);
        let init = Agent::new(&dims, &cfg, &mut r).unwrap();
        let out = train(&mut src, &cfg).unwrap();
        assert_eq!(out.agent.online().flat_params(), init.online().flat_params());
        assert!(out.curve.is_empty() && out.losses.is_empty());
    }

    #[test]
    fn sign_bandit_is_learned() {
        for seed in 0..2 {
            let mut src = SignBandit::new(3, seed);
            let out = train(&mut src, &sign_bandit_config(seed)).unwrap();
            assert_eq!(sign_bandit_accuracy(&out.agent).unwrap(), 1.0, "seed {seed}");
        }
    }

    #[test]
    fn moving_average_trailing() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn short_scheduling_run_is_reproducible() {
        let cfg = TrainConfig {
            episodes: 6,
            batch_size: 32,
            hidden: vec![32, 16],
            validation_every: 3,
            validation_scenarios: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut task = SchedulingTask::new(
                ChannelParams::default(),
                EnvConfig::default(),
                ScenarioConfig::default(),
                9,
                cfg.validation_scenarios,
            )
            .unwrap();
            train(&mut task, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.curve.len(), 3);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.agent.online().flat_params(), b.agent.online().flat_params());
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &a.curve).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(CURVE_CSV_HEADER));
    }
}
