//! Deep Q-learning agent: state encoding, ε-greedy action selection,
//! replay memory, target network, TD targets, and the per-episode training
//! step.
//!
//! The learner trains between episodes, not within them: transitions are
//! collected while the episode runs, then a single batch is sampled and a
//! single Adam step applied. The target network is a frozen copy of the
//! online parameters refreshed every few episodes by the caller.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AgentConfig, Stage, ARM_COUNT, STAGE_COUNT};
use crate::env::{Frame, JunctionEnv};
use crate::error::{Error, Result};
use crate::neural::{adam_step, backward, td_loss, AdamState, MlpGrads, MlpParams};
use crate::rewards::{compute_reward, RewardKind};
use crate::rng::{stream_rng, streams};

/// Features per sensor slice: one occupancy per arm plus a stage one-hot.
pub const SLICE_FEATURES: usize = ARM_COUNT + STAGE_COUNT;

/// The stages an action index maps to, in action order.
pub const ACTION_STAGES: [Stage; 2] = [Stage::Two, Stage::Four];

pub const N_ACTIONS: usize = ACTION_STAGES.len();

pub fn stage_of_action(action: usize) -> Stage {
    ACTION_STAGES[action]
}

/// Flatten the sensor history into the network input, oldest slice first.
/// Each slice contributes its four occupancies then a 4-dim stage one-hot,
/// all zero while no stage is active.
pub fn encode_state(history: &VecDeque<Frame>) -> Vec<f64> {
    let mut out = Vec::with_capacity(history.len() * SLICE_FEATURES);
    for frame in history {
        out.extend_from_slice(&frame.occupancies);
        let mut hot = [0.0; STAGE_COUNT];
        if let Some(stage) = frame.stage {
            hot[stage.index()] = 1.0;
        }
        out.extend_from_slice(&hot);
    }
    out
}

/// One experienced decision: state, action, the reward its window earned,
/// and the state at the next decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Episode ended at `s_next`; the target bootstraps nothing from it.
    pub terminal: bool,
}

/// Fixed-capacity FIFO experience store.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buf: VecDeque<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self { buf: VecDeque::with_capacity(capacity), capacity, inserted: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// Uniform sample of `batch` distinct transitions, fewer when the
    /// memory holds fewer.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Transition> {
        let n = self.buf.len();
        if n <= batch {
            return self.buf.iter().collect();
        }
        let mut picked = vec![false; n];
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            let i = rng.gen_range(0..n);
            if !picked[i] {
                picked[i] = true;
                out.push(&self.buf[i]);
            }
        }
        out
    }
}

/// Outcome of the exploration coin, split from the forward pass so the
/// caller can skip computing Q-values when the action is random anyway.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionChoice {
    Explore(usize),
    Exploit,
}

/// Flip the ε coin; on explore also draw the uniform action. Exactly the
/// randomness `select_action` consumes, in the same order.
pub fn draw_exploration(epsilon: f64, rng: &mut ChaCha8Rng) -> ActionChoice {
    if rng.gen::<f64>() < epsilon {
        ActionChoice::Explore(rng.gen_range(0..N_ACTIONS))
    } else {
        ActionChoice::Exploit
    }
}

fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy selection over precomputed Q-values: with probability 1−ε the
/// greedy action (ties to the lower index), otherwise uniform.
pub fn select_action(q_values: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
    match draw_exploration(epsilon, rng) {
        ActionChoice::Explore(a) => a,
        ActionChoice::Exploit => argmax(q_values),
    }
}

/// TD targets for a batch: yᵢ = rᵢ + γ·max_a Q_target(s'ᵢ, a), with the
/// bootstrap term dropped on terminal transitions.
pub fn td_targets(batch: &[&Transition], target: &MlpParams, gamma: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len());
    for t in batch {
        let y = if t.terminal {
            t.r
        } else {
            let q = target.forward(&t.s_next)?;
            t.r + gamma * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        out.push(y);
    }
    Ok(out)
}

/// Σ γⁱ·rᵢ over a reward sequence.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut weight = 1.0;
    for &r in rewards {
        acc += weight * r;
        weight *= gamma;
    }
    acc
}

/// The complete learner: online network, frozen target, optimizer state,
/// and replay memory.
pub struct DqnAgent {
    pub params: MlpParams,
    pub target: MlpParams,
    pub opt: AdamState,
    pub memory: ReplayMemory,
    gamma: f64,
    learning_rate: f64,
    batch_size: usize,
    steps_per_episode: usize,
}

impl DqnAgent {
    /// Fresh agent for `state_dim` inputs; weights drawn from the network
    /// initialisation stream of `seed`, target starting as an exact copy.
    pub fn new(cfg: &AgentConfig, state_dim: usize, seed: u64) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend(cfg.hidden_layers.iter().copied());
        sizes.push(N_ACTIONS);
        let mut rng = stream_rng(seed, streams::NET_INIT);
        let params = MlpParams::he_uniform(&sizes, &mut rng);
        let target = params.clone();
        let opt = AdamState::new(&params);
        Self {
            params,
            target,
            opt,
            memory: ReplayMemory::new(cfg.memory_capacity),
            gamma: cfg.gamma,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            steps_per_episode: cfg.steps_per_episode,
        }
    }

    pub fn steps_per_episode(&self) -> usize {
        self.steps_per_episode
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.params.forward(state)
    }

    /// ε-greedy action; the forward pass runs only when exploiting.
    pub fn select(&self, state: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
        match draw_exploration(epsilon, rng) {
            ActionChoice::Explore(a) => Ok(a),
            ActionChoice::Exploit => Ok(argmax(&self.q_values(state)?)),
        }
    }

    pub fn remember(&mut self, t: Transition) {
        self.memory.push(t);
    }

    /// Copy the online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.params.clone();
    }

    /// One batch, one Adam step on the mean TD loss. Returns the loss, or
    /// `None` when the memory is still empty.
    pub fn train_step(&mut self, rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
        if self.memory.is_empty() {
            return Ok(None);
        }
        let batch = self.memory.sample(self.batch_size, rng);
        let targets = td_targets(&batch, &self.target, self.gamma)?;
        let mut grads = MlpGrads::zeros_like(&self.params);
        let mut loss_sum = 0.0;
        for (t, &y) in batch.iter().zip(&targets) {
            let (q, cache) = self.params.forward_cached(&t.s)?;
            let (loss, dout) = td_loss(&q, t.a, y);
            loss_sum += loss;
            backward(&self.params, &cache, &dout, &mut grads)?;
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        adam_step(&mut self.params, &grads, &mut self.opt, self.learning_rate)?;
        Ok(Some(loss_sum * scale))
    }
}

/// Per-episode training record, one row of the learning-curve log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u32,
    pub epsilon: f64,
    pub demand_level: String,
    pub decisions: u32,
    pub cumulative_reward: f64,
    pub loss: f64,
    pub avg_wait_s: f64,
}

/// Run one episode against the junction: act ε-greedily at every decision
/// point, store one transition per action once its reward window closes,
/// then take the single end-of-episode training step. Target syncing stays
/// with the caller.
pub fn run_training_episode(
    env: &mut JunctionEnv,
    agent: &mut DqnAgent,
    kind: RewardKind,
    epsilon: f64,
    explore_rng: &mut ChaCha8Rng,
    replay_rng: &mut ChaCha8Rng,
) -> Result<EpisodeLog> {
    let mut pending: Option<(Vec<f64>, usize)> = None;
    let mut decisions = 0u32;
    let mut cumulative_reward = 0.0;
    loop {
        env.advance_to_decision()?;
        if env.done() {
            break;
        }
        let state = encode_state(env.history());
        let action = agent.select(&state, epsilon, explore_rng)?;
        let outcome = env.apply_action(stage_of_action(action))?;
        decisions += 1;
        if let Some((s, a)) = pending.take() {
            let r = compute_reward(kind, &outcome.stats, &outcome.demand);
            cumulative_reward += r;
            agent.remember(Transition { s, a, r, s_next: state.clone(), terminal: false });
        }
        pending = Some((state, action));
        env.step()?;
    }
    let outcome = env.close_terminal_window()?;
    if let Some((s, a)) = pending.take() {
        let r = compute_reward(kind, &outcome.stats, &outcome.demand);
        cumulative_reward += r;
        let s_next = encode_state(env.history());
        agent.remember(Transition { s, a, r, s_next, terminal: true });
    }
    let mut loss = 0.0;
    for _ in 0..agent.steps_per_episode() {
        if let Some(l) = agent.train_step(replay_rng)? {
            loss = l;
        }
    }
    Ok(EpisodeLog {
        episode: 0,
        epsilon,
        demand_level: String::new(),
        decisions,
        cumulative_reward,
        loss,
        avg_wait_s: env.average_wait(),
    })
}

/// Sidecar metadata stored beside every network checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub reward: RewardKind,
    pub config_hash: String,
    pub episodes: u32,
    pub seed: u64,
    pub state_dim: usize,
}

impl CheckpointMeta {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("metadata encode failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("metadata in {}: {e}", path.display())))
    }
}

/// Render the learning-curve log as CSV.
pub fn training_log_csv(rows: &[EpisodeLog]) -> String {
    let mut out = String::from("episode,epsilon,demand_level,decisions,cumulative_reward,loss,avg_wait_s\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.episode, r.epsilon, r.demand_level, r.decisions, r.cumulative_reward, r.loss, r.avg_wait_s
        );
    }
    out
}
