//! ε-greedy DDQN agent: online and target networks, optimizer, checkpoints.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{Gradients, QNetwork};
use super::replay::Transition;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// `y = r + γ max_a' Q(s', a'; θ⁻)`.
    Eq28,
    /// `y = r + γ Q(s', argmax_a' Q(s', a'; θ); θ⁻)`.
    #[default]
    DoubleQ,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_episodes: usize,
    pub target_sync_every: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub replay_capacity: usize,
    pub target_rule: TargetRule,
    pub hidden: Vec<usize>,
    /// Mini-batch updates after each episode.
    pub updates_per_episode: usize,
    pub validation_every: usize,
    pub validation_scenarios: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 30_000,
            eps_start: 1.0,
            eps_end: 0.02,
            eps_decay_episodes: 16_000,
            target_sync_every: 10,
            gamma: 0.9,
            batch_size: 256,
            learning_rate: 1e-4,
            momentum: 0.9,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            replay_capacity: 100_000,
            target_rule: TargetRule::DoubleQ,
            hidden: vec![500, 250, 125],
            updates_per_episode: 1,
            validation_every: 100,
            validation_scenarios: 15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.eps_start) || !unit(self.eps_end) {
            return Err(Error::config("train epsilon values must lie in [0, 1]"));
        }
        if !unit(self.gamma) {
            return Err(Error::config("train.gamma must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.target_sync_every == 0 {
            return Err(Error::config(
                "train.batch_size, replay_capacity and target_sync_every must be >= 1",
            ));
        }
        if !(self.learning_rate > 0.0) || !unit(self.momentum) {
            return Err(Error::config("train.learning_rate must be > 0 and momentum in [0, 1]"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("train.hidden layer widths must be >= 1"));
        }
        Ok(())
    }

    /// Linear from `eps_start` to `eps_end` over `eps_decay_episodes`, flat after.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.eps_decay_episodes == 0 || episode >= self.eps_decay_episodes {
            return self.eps_end;
        }
        let frac = episode as f64 / self.eps_decay_episodes as f64;
        (self.eps_start + (self.eps_end - self.eps_start) * frac).clamp(0.0, 1.0)
    }

    pub fn layer_dims(&self, state_dim: usize, n_actions: usize) -> Vec<usize> {
        let mut d = vec![state_dim];
        d.extend(&self.hidden);
        d.push(n_actions);
        d
    }
}

/// Greedy action; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
enum OptState {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

#[derive(Clone, Debug)]
pub struct Agent {
    online: QNetwork,
    target: QNetwork,
    opt: OptState,
    cfg: TrainConfig,
    seed: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(dims: &[usize], cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let online = QNetwork::he_uniform(dims, rng)?;
        Ok(Self::from_network(online, cfg))
    }

    pub fn from_network(online: QNetwork, cfg: &TrainConfig) -> Self {
        let n = online.n_params();
        let opt = match cfg.optimizer {
            OptimizerKind::SgdMomentum => OptState::Sgd {
                velocity: vec![0.0; n],
            },
            OptimizerKind::Adam => OptState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        };
        Self {
            target: online.clone(),
            online,
            opt,
            cfg: cfg.clone(),
            seed: cfg.seed,
        }
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn online_mut(&mut self) -> &mut QNetwork {
        &mut self.online
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn n_actions(&self) -> usize {
        self.online.output_dim()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    /// Uniform random action with probability `epsilon`, greedy otherwise.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if rng.gen::<f64>() < epsilon {
            Ok(rng.gen_range(0..self.n_actions()))
        } else {
            self.greedy(state)
        }
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    fn stack(rows: impl ExactSizeIterator<Item = Vec<f64>>, dim: usize) -> Result<Array2<f64>> {
        let n = rows.len();
        let flat: Vec<f64> = rows.flatten().collect();
        Array2::from_shape_vec((n, dim), flat).map_err(|_| Error::LengthMismatch {
            expected: n * dim,
            got: 0,
        })
    }

    /// Bootstrapped regression targets for a batch.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let dim = self.online.input_dim();
        let next = Self::stack(batch.iter().map(|t| t.next_state.clone()), dim)?;
        let q_target = self.target.forward_batch(next.view())?;
        let q_online = match self.cfg.target_rule {
            TargetRule::DoubleQ => Some(self.online.forward_batch(next.view())?),
            TargetRule::Eq28 => None,
        };
        let gamma = self.cfg.gamma;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.done || gamma == 0.0 {
                    return t.reward;
                }
                let row = q_target.row(i);
                let boot = match &q_online {
                    None => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Some(qo) => {
                        let a = argmax(&qo.row(i).to_vec());
                        row[a]
                    }
                };
                t.reward + gamma * boot
            })
            .collect())
    }

    /// One optimizer update on the batch; returns the pre-update loss.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let targets = self.td_targets(batch)?;
        let dim = self.online.input_dim();
        let states = Self::stack(batch.iter().map(|t| t.state.clone()), dim)?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, grads) = self.online.loss_and_grad(states.view(), &actions, &targets)?;
        self.apply(&grads);
        Ok(loss)
    }

    fn apply(&mut self, grads: &Gradients) {
        let lr = self.cfg.learning_rate;
        match &mut self.opt {
            OptState::Sgd { velocity } => {
                let mu = self.cfg.momentum;
                let mut k = 0;
                for (l, g) in self.online.layers_mut().iter_mut().zip(&grads.layers) {
                    for (p, gv) in l.w.iter_mut().chain(l.b.iter_mut()).zip(g.w.iter().chain(g.b.iter())) {
                        let v = &mut velocity[k];
                        *v = mu * *v - lr * gv;
                        *p += *v;
                        k += 1;
                    }
                }
            }
            OptState::Adam { m, v, t } => {
                *t += 1;
                let (b1, b2, eps) = (self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps);
                let c1 = 1.0 - b1.powi(*t as i32);
                let c2 = 1.0 - b2.powi(*t as i32);
                let mut k = 0;
                for (l, g) in self.online.layers_mut().iter_mut().zip(&grads.layers) {
                    for (p, gv) in l.w.iter_mut().chain(l.b.iter_mut()).zip(g.w.iter().chain(g.b.iter())) {
                        m[k] = b1 * m[k] + (1.0 - b1) * gv;
                        v[k] = b2 * v[k] + (1.0 - b2) * gv * gv;
                        *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                        k += 1;
                    }
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode_checkpoint(&self.online, &self.target, self.seed);
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint. With `expected_dims`, a different architecture is
    /// a schema error.
    pub fn load(path: &Path, expected_dims: Option<&[usize]>, cfg: &TrainConfig) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let ck = decode_checkpoint(&bytes)?;
        if let Some(d) = expected_dims {
            if d != ck.online.layer_dims() {
                return Err(Error::Schema(format!(
                    "checkpoint layer dims {:?} do not match expected {:?}",
                    ck.online.layer_dims(),
                    d
                )));
            }
        }
        let mut agent = Self::from_network(ck.online, cfg);
        agent.target = ck.target;
        agent.seed = ck.seed;
        Ok(agent)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"V2XQNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub online: QNetwork,
    pub target: QNetwork,
    pub seed: u64,
}

/// Layout: magic, version (u32), layer count (u32), dims (u32 each),
/// seed (u64), then online and target parameters as f64, all little-endian.
pub fn encode_checkpoint(online: &QNetwork, target: &QNetwork, seed: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 16 * online.n_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let dims = online.layer_dims();
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&seed.to_le_bytes());
    for v in online.flat_params().into_iter().chain(target.flat_params()) {
        out.write_all(&v.to_le_bytes()).expect("vec write");
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let schema = |m: &str| Error::Schema(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| schema("checkpoint truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(schema("not a Q-network checkpoint"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!("unsupported checkpoint version {version}")));
    }
    let n = u32_at(take(4)?) as usize;
    if !(2..=64).contains(&n) {
        return Err(schema("bad layer count"));
    }
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        dims.push(u32_at(take(4)?) as usize);
    }
    let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let mut online = QNetwork::zeros(&dims).map_err(|e| Error::Schema(e.to_string()))?;
    let mut target = online.clone();
    let np = online.n_params();
    for net in [&mut online, &mut target] {
        let raw = take(8 * np)?;
        let flat: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        net.set_flat_params(&flat)?;
    }
    if pos != bytes.len() {
        return Err(schema("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint { online, target, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tr(state: Vec<f64>, action: usize, reward: f64, next: Vec<f64>, done: bool) -> Transition {
        Transition {
            state,
            action,
            reward,
            next_state: next,
            done,
        }
    }

    #[test]
    fn epsilon_schedule_is_piecewise_linear() {
        let c = TrainConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(8000) - 0.51).abs() < 1e-12);
        assert_eq!(c.epsilon(16_000), 0.02);
        assert_eq!(c.epsilon(25_000), 0.02);
        for e in (0..20_000).step_by(37) {
            assert!((0.0..=1.0).contains(&c.epsilon(e)));
        }
    }

    #[test]
    fn greedy_tie_break_and_argmax() {
        assert_eq!(argmax(&[1.0, 3.0, 2.0, 0.0]), 1);
        assert_eq!(argmax(&[5.0, 5.0]), 0);
        let mut net = QNetwork::zeros(&[1, 4]).unwrap();
        net.set_flat_params(&[0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 2.0, 0.0]).unwrap();
        let agent = Agent::from_network(net, &TrainConfig::default());
        let mut r = rng::stream(0, "act", 0);
        for _ in 0..10 {
            assert_eq!(agent.act(&[0.0], 0.0, &mut r).unwrap(), 1);
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let agent = Agent::from_network(QNetwork::zeros(&[2, 4]).unwrap(), &TrainConfig::default());
        let mut r = rng::stream(1, "act", 0);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[agent.act(&[0.0, 0.0], 1.0, &mut r).unwrap()] += 1;
        }
        for c in counts {
            // within 2% of the uniform share
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02 * 0.25);
        }
    }

    #[test]
    fn td_target_arithmetic() {
        // target net: Q(s') = [w·s'] with a single output fixed by bias 2
        let mut net = QNetwork::zeros(&[1, 2]).unwrap();
        net.set_flat_params(&[0.0, 0.0, 2.0, 1.0]).unwrap();
        for rule in [TargetRule::Eq28, TargetRule::DoubleQ] {
            let cfg = TrainConfig {
                gamma: 0.9,
                target_rule: rule,
                ..TrainConfig::default()
            };
            let agent = Agent::from_network(net.clone(), &cfg);
            let a = tr(vec![0.0], 0, 1.0, vec![0.3], false);
            let b = tr(vec![0.0], 0, 1.0, vec![0.3], true);
            let y = agent.td_targets(&[&a, &b]).unwrap();
            assert!((y[0] - 2.8).abs() < 1e-12);
            assert_eq!(y[1], 1.0);
        }
        let cfg = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        let agent = Agent::from_network(net, &cfg);
        let a = tr(vec![0.0], 0, -0.7, vec![0.3], false);
        assert_eq!(agent.td_targets(&[&a]).unwrap(), vec![-0.7]);
    }

    #[test]
    fn double_q_uses_online_argmax() {
        let mut online = QNetwork::zeros(&[1, 2]).unwrap();
        online.set_flat_params(&[0.0, 0.0, 0.0, 1.0]).unwrap(); // prefers action 1
        let mut target = QNetwork::zeros(&[1, 2]).unwrap();
        target.set_flat_params(&[0.0, 0.0, 5.0, 1.0]).unwrap(); // max is action 0
        let t = tr(vec![0.0], 0, 0.0, vec![0.0], false);
        for (rule, want) in [(TargetRule::Eq28, 5.0), (TargetRule::DoubleQ, 1.0)] {
            let cfg = TrainConfig {
                gamma: 1.0,
                target_rule: rule,
                ..TrainConfig::default()
            };
            let mut agent = Agent::from_network(online.clone(), &cfg);
            agent.target = target.clone();
            assert_eq!(agent.td_targets(&[&t]).unwrap(), vec![want]);
        }
    }

    #[test]
    fn exact_targets_leave_parameters_unchanged() {
        let cfg = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        let mut r = rng::stream(2, "agent", 0);
        let mut agent = Agent::new(&[2, 6, 3], &cfg, &mut r).unwrap();
        let s = vec![0.3, -0.4];
        let q = agent.q_values(&s).unwrap();
        let t = tr(s.clone(), 2, q[2], s.clone(), false);
        let before = agent.online().flat_params();
        let loss = agent.train_step(&[&t]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(agent.online().flat_params(), before);
    }

    #[test]
    fn sync_makes_networks_agree() {
        let mut r = rng::stream(3, "agent", 0);
        let cfg = TrainConfig::default();
        let mut agent = Agent::new(&[3, 8, 2], &cfg, &mut r).unwrap();
        let t = tr(vec![0.1, 0.2, 0.3], 1, 1.0, vec![0.0; 3], true);
        agent.train_step(&[&t]).unwrap();
        assert_ne!(agent.online().flat_params(), agent.target().flat_params());
        agent.sync_target();
        let s = [0.5, -0.5, 0.25];
        assert_eq!(agent.online().forward(&s).unwrap(), agent.target().forward(&s).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.bin");
        let mut r = rng::stream(4, "agent", 0);
        let cfg = TrainConfig::default();
        let agent = Agent::new(&[4, 10, 7, 3], &cfg, &mut r).unwrap();
        agent.save(&path).unwrap();
        let back = Agent::load(&path, Some(&[4, 10, 7, 3]), &cfg).unwrap();
        for _ in 0..100 {
            let s: Vec<f64> = (0..4).map(|_| r.gen_range(-3.0..3.0)).collect();
            assert_eq!(agent.q_values(&s).unwrap(), back.q_values(&s).unwrap());
        }
        assert_eq!(back.target().flat_params(), agent.target().flat_params());
        assert!(matches!(Agent::load(&path, Some(&[4, 10, 3]), &cfg), Err(Error::Schema(_))));
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Schema(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Schema(_))));
        assert!(matches!(
            Agent::load(&dir.path().join("missing"), None, &cfg),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            gamma: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::default().layer_dims(16, 4), vec![16, 500, 250, 125, 4]);
    }
}
