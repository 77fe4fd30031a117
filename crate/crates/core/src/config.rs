//! Workbench configuration: junction geometry, demand, stage plan, sensing,
//! agent hyperparameters, baselines and evaluation defaults.
//!
//! Everything is loadable from one TOML file; every field has a default so a
//! partial file (or none at all) works. `Config::validate` checks the
//! documented invariants and names the offending field in its error.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARM_COUNT: usize = 4;
pub const ARM_NAMES: [&str; ARM_COUNT] = ["north", "east", "south", "west"];
pub const STAGE_COUNT: usize = 4;

/// Ratio tolerance used by the split/ratio invariants.
pub const RATIO_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

/// Signal stage. Stages are numbered 1..=4 as on the controller faceplate;
/// Stage 3 exists in the plan but serves nothing and is never scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    One,
    Two,
    Three,
    Four,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::One, Stage::Two, Stage::Three, Stage::Four];

    /// Stages the agent may request.
    pub const CHOOSABLE: [Stage; 2] = [Stage::Two, Stage::Four];

    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
            Stage::Four => 4,
        }
    }

    pub fn index(self) -> usize {
        self.number() as usize - 1
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            3 => Ok(Stage::Three),
            4 => Ok(Stage::Four),
            _ => Err(Error::Config(format!("stage number out of range: {n}"))),
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = Error;
    fn try_from(n: u8) -> Result<Self> {
        Stage::from_number(n)
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Turning movement relative to the approach direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Through,
    Left,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Through, Turn::Left, Turn::Right];
}

impl fmt::Display for Turn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Turn::Through => "through",
            Turn::Left => "left",
            Turn::Right => "right",
        };
        f.write_str(s)
    }
}

/// One signalled movement: an approach arm plus the turn taken from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MovementId {
    pub arm: usize,
    pub turn: Turn,
}

impl MovementId {
    pub fn new(arm: usize, turn: Turn) -> Self {
        Self { arm, turn }
    }
}

impl fmt::Display for MovementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", ARM_NAMES[self.arm], self.turn)
    }
}

/// Whether two movements may ever hold green simultaneously.
///
/// Arms 0/2 (north/south) form one axis, arms 1/3 (east/west) the other.
/// Movements from perpendicular arms cross in the junction box and conflict;
/// movements from the same arm or the opposite arm are treated as compatible
/// (opposed turns resolve by gap acceptance inside the box, which the model
/// does not represent).
pub fn movements_conflict(a: MovementId, b: MovementId) -> bool {
    (a.arm % 2) != (b.arm % 2)
}

// ---------------------------------------------------------------------------
// Junction geometry and vehicle dynamics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TurnRatios {
    pub through: f64,
    pub left: f64,
    pub right: f64,
}

impl Default for TurnRatios {
    fn default() -> Self {
        Self { through: 0.70, left: 0.15, right: 0.15 }
    }
}

impl TurnRatios {
    pub fn sum(&self) -> f64 {
        self.through + self.left + self.right
    }

    pub fn get(&self, turn: Turn) -> f64 {
        match turn {
            Turn::Through => self.through,
            Turn::Left => self.left,
            Turn::Right => self.right,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ApproachSpec {
    pub lanes: usize,
    pub length_m: f64,
    pub turn_ratios: TurnRatios,
}

impl Default for ApproachSpec {
    fn default() -> Self {
        Self { lanes: 1, length_m: 200.0, turn_ratios: TurnRatios::default() }
    }
}

/// Geometry plus car-following parameters.
///
/// Defaults: a main road (east/west) of two lanes, the rightmost a
/// right-turn pocket, and single-lane side roads (north/south), all 200 m
/// long; 30 mph urban speed limit; stochastic driver imperfection on top of
/// the random arrival stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct JunctionConfig {
    /// Approach specs in arm order north, east, south, west.
    pub arms: Vec<ApproachSpec>,
    /// Maximum allowed speed, m/s.
    pub v_max: f64,
    /// Vehicle length, m.
    pub vehicle_length: f64,
    /// Standstill gap kept behind a leader, m.
    pub min_gap: f64,
    /// Maximum acceleration, m/s^2.
    pub accel: f64,
    /// Comfortable deceleration, m/s^2 (also the braking rate assumed by the
    /// safe-speed rule).
    pub decel: f64,
    /// Driver reaction/headway time used by the safe-speed rule, s. Sets the
    /// saturation headway together with vehicle length and minimum gap.
    pub headway_s: f64,
    /// Krauss driver imperfection sigma in [0,1]. 0 = deterministic.
    pub driver_imperfection: f64,
    /// Simulation step, s. One step is also one state-buffer slot and one
    /// stage-extension quantum.
    pub sim_step: f64,
    /// Time a vehicle spends crossing the junction box before leaving the
    /// model, s.
    pub box_clear_s: f64,
}

impl Default for JunctionConfig {
    fn default() -> Self {
        let main = ApproachSpec { lanes: 2, ..ApproachSpec::default() };
        let side = ApproachSpec { lanes: 1, ..ApproachSpec::default() };
        Self {
            arms: vec![side.clone(), main.clone(), side, main],
            v_max: 13.4,
            vehicle_length: 4.5,
            min_gap: 2.5,
            accel: 2.6,
            decel: 4.5,
            headway_s: 1.5,
            driver_imperfection: 0.5,
            sim_step: 0.6,
            box_clear_s: 2.0,
        }
    }
}

impl JunctionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms.len() != ARM_COUNT {
            return Err(Error::Config(format!(
                "junction.arms: expected {} arms, got {}",
                ARM_COUNT,
                self.arms.len()
            )));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            if arm.lanes < 1 {
                return Err(Error::Config(format!("junction.arms[{i}].lanes: must be >= 1")));
            }
            if !(arm.length_m > 0.0) {
                return Err(Error::Config(format!(
                    "junction.arms[{i}].length_m: must be positive, got {}",
                    arm.length_m
                )));
            }
            let sum = arm.turn_ratios.sum();
            if (sum - 1.0).abs() > RATIO_TOL {
                return Err(Error::Config(format!(
                    "junction.arms[{i}].turn_ratios: ratios sum to {}",
                    round9(sum)
                )));
            }
            if Turn::ALL.iter().any(|&t| arm.turn_ratios.get(t) < 0.0) {
                return Err(Error::Config(format!(
                    "junction.arms[{i}].turn_ratios: ratios must be non-negative"
                )));
            }
        }
        for (field, v) in [
            ("junction.v_max", self.v_max),
            ("junction.vehicle_length", self.vehicle_length),
            ("junction.accel", self.accel),
            ("junction.decel", self.decel),
            ("junction.sim_step", self.sim_step),
            ("junction.box_clear_s", self.box_clear_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{field}: must be positive, got {v}")));
            }
        }
        if self.min_gap < 0.0 {
            return Err(Error::Config(format!("junction.min_gap: must be >= 0, got {}", self.min_gap)));
        }
        if !(0.0..=1.0).contains(&self.driver_imperfection) {
            return Err(Error::Config(format!(
                "junction.driver_imperfection: must be in [0,1], got {}",
                self.driver_imperfection
            )));
        }
        if self.headway_s < self.sim_step {
            return Err(Error::Config(format!(
                "junction.headway_s: must be >= sim_step ({}), got {}",
                self.sim_step, self.headway_s
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Demand
// ---------------------------------------------------------------------------

/// The three named demand levels with their arrival rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandLevel {
    Low,
    Medium,
    High,
}

impl DemandLevel {
    pub const ALL: [DemandLevel; 3] = [DemandLevel::Low, DemandLevel::Medium, DemandLevel::High];
}

impl fmt::Display for DemandLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DemandLevel::Low => "low",
            DemandLevel::Medium => "medium",
            DemandLevel::High => "high",
        };
        f.write_str(s)
    }
}

impl FromStr for DemandLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(DemandLevel::Low),
            "medium" => Ok(DemandLevel::Medium),
            "high" => Ok(DemandLevel::High),
            other => Err(Error::Config(format!("unknown demand level: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    /// Arrival rates per named level, veh/h.
    pub low_rate: f64,
    pub medium_rate: f64,
    pub high_rate: f64,
    /// Fraction of total demand entering on each arm (north, east, south, west).
    pub arm_split: Vec<f64>,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            low_rate: 1714.0,
            medium_rate: 2117.0,
            high_rate: 2400.0,
            arm_split: vec![0.22, 0.28, 0.22, 0.28],
        }
    }
}

impl DemandConfig {
    pub fn rate_for(&self, level: DemandLevel) -> f64 {
        match level {
            DemandLevel::Low => self.low_rate,
            DemandLevel::Medium => self.medium_rate,
            DemandLevel::High => self.high_rate,
        }
    }

    /// Demand profile for one named level.
    pub fn profile(&self, level: DemandLevel) -> DemandProfile {
        DemandProfile { total_rate_veh_h: self.rate_for(level), arm_split: self.arm_split.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("demand.low_rate", self.low_rate),
            ("demand.medium_rate", self.medium_rate),
            ("demand.high_rate", self.high_rate),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{field}: must be >= 0, got {v}")));
            }
        }
        if self.arm_split.len() != ARM_COUNT {
            return Err(Error::Config(format!(
                "demand.arm_split: expected {} entries, got {}",
                ARM_COUNT,
                self.arm_split.len()
            )));
        }
        if self.arm_split.iter().any(|&s| s < 0.0) {
            return Err(Error::Config("demand.arm_split: entries must be non-negative".into()));
        }
        let sum: f64 = self.arm_split.iter().sum();
        if (sum - 1.0).abs() > RATIO_TOL {
            return Err(Error::Config(format!("demand.arm_split: splits sum to {}", round9(sum))));
        }
        Ok(())
    }
}

/// Arrival process parameters for one episode: Poisson arrivals at a total
/// rate, split across arms.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub total_rate_veh_h: f64,
    pub arm_split: Vec<f64>,
}

impl DemandProfile {
    /// Mean inter-arrival time, s. Infinite when the rate is zero.
    pub fn mean_headway_s(&self) -> f64 {
        3600.0 / self.total_rate_veh_h
    }
}

// ---------------------------------------------------------------------------
// Stage plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StagePlanConfig {
    /// Served movements per stage, as (arm name, turn) pairs.
    pub stage_movements: StageMovements,
    /// Minimum green per stage 1..=4, s.
    pub min_green_s: [f64; 4],
    /// All-red intergreen per ordered (from, to) stage pair, s.
    /// Indexed `[from][to]` by stage index.
    pub intergreen_s: [[f64; 4]; 4],
    /// Amber shown to losing movements at the start of a transition, s.
    pub amber_s: f64,
    /// Green extension granted by a same-stage request, s. Must equal the
    /// simulation step.
    pub extension_quantum_s: f64,
}

/// Movement lists per stage, serialised as arm-name/turn strings so the TOML
/// reads like a controller spec sheet.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StageMovements {
    pub stage1: Vec<String>,
    pub stage2: Vec<String>,
    pub stage3: Vec<String>,
    pub stage4: Vec<String>,
}

impl Default for StageMovements {
    fn default() -> Self {
        Self {
            stage1: vec!["east-right".into(), "west-right".into()],
            stage2: vec![
                "east-through".into(),
                "east-left".into(),
                "west-through".into(),
                "west-left".into(),
            ],
            stage3: vec![],
            stage4: vec![
                "north-through".into(),
                "north-left".into(),
                "north-right".into(),
                "south-through".into(),
                "south-left".into(),
                "south-right".into(),
            ],
        }
    }
}

impl Default for StagePlanConfig {
    fn default() -> Self {
        Self {
            stage_movements: StageMovements::default(),
            min_green_s: [7.0; 4],
            intergreen_s: [[5.0; 4]; 4],
            amber_s: 3.0,
            extension_quantum_s: 0.6,
        }
    }
}

pub fn parse_movement(s: &str) -> Result<MovementId> {
    let (arm_name, turn_name) = s
        .split_once('-')
        .ok_or_else(|| Error::Config(format!("movement must be <arm>-<turn>: {s}")))?;
    let arm = ARM_NAMES
        .iter()
        .position(|&a| a == arm_name)
        .ok_or_else(|| Error::Config(format!("unknown arm name: {arm_name}")))?;
    let turn = match turn_name {
        "through" => Turn::Through,
        "left" => Turn::Left,
        "right" => Turn::Right,
        other => return Err(Error::Config(format!("unknown turn: {other}"))),
    };
    Ok(MovementId::new(arm, turn))
}

impl StagePlanConfig {
    pub fn movements_of(&self, stage: Stage) -> Result<Vec<MovementId>> {
        let raw = match stage {
            Stage::One => &self.stage_movements.stage1,
            Stage::Two => &self.stage_movements.stage2,
            Stage::Three => &self.stage_movements.stage3,
            Stage::Four => &self.stage_movements.stage4,
        };
        raw.iter().map(|s| parse_movement(s)).collect()
    }

    pub fn validate(&self, sim_step: f64) -> Result<()> {
        for stage in Stage::ALL {
            let moves = self.movements_of(stage)?;
            for (i, &a) in moves.iter().enumerate() {
                for &b in &moves[i + 1..] {
                    if movements_conflict(a, b) {
                        return Err(Error::Config(format!(
                            "stages.stage_movements.stage{stage}: {a} conflicts with {b}"
                        )));
                    }
                }
            }
        }
        for (i, &g) in self.min_green_s.iter().enumerate() {
            if !(g > 0.0) {
                return Err(Error::Config(format!(
                    "stages.min_green_s[{}]: must be positive, got {g}",
                    i + 1
                )));
            }
        }
        for row in &self.intergreen_s {
            for &ig in row {
                if !(ig > 0.0) {
                    return Err(Error::Config(format!(
                        "stages.intergreen_s: entries must be positive, got {ig}"
                    )));
                }
            }
        }
        if self.amber_s < 0.0 {
            return Err(Error::Config(format!("stages.amber_s: must be >= 0, got {}", self.amber_s)));
        }
        if (self.extension_quantum_s - sim_step).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "stages.extension_quantum_s: must equal junction.sim_step ({sim_step}), got {}",
                self.extension_quantum_s
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Sensing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    /// Vision detector zone length upstream of each stop line, m.
    pub zone_length_m: f64,
    /// Below this speed a vehicle accrues waiting (stopped) time, m/s.
    pub v_stop_threshold: f64,
    /// Below this speed a vehicle counts as queued, m/s.
    pub v_queue_threshold: f64,
    /// Stop-line presence loop length used by the vehicle-actuated baseline, m.
    pub presence_zone_m: f64,
    /// Trailing window of the demand estimator, s.
    pub demand_window_s: f64,
    /// Demand estimate floor, veh/s.
    pub d_floor: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            zone_length_m: 50.0,
            v_stop_threshold: 0.1,
            v_queue_threshold: 0.5,
            presence_zone_m: 2.0,
            demand_window_s: 300.0,
            d_floor: 0.01,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self, junction: &JunctionConfig) -> Result<()> {
        for (field, v) in [
            ("sensing.zone_length_m", self.zone_length_m),
            ("sensing.v_stop_threshold", self.v_stop_threshold),
            ("sensing.v_queue_threshold", self.v_queue_threshold),
            ("sensing.presence_zone_m", self.presence_zone_m),
            ("sensing.demand_window_s", self.demand_window_s),
            ("sensing.d_floor", self.d_floor),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{field}: must be positive, got {v}")));
            }
        }
        for (i, arm) in junction.arms.iter().enumerate() {
            if self.zone_length_m > arm.length_m {
                return Err(Error::Config(format!(
                    "sensing.zone_length_m: exceeds junction.arms[{i}].length_m ({} > {})",
                    self.zone_length_m, arm.length_m
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Discount factor.
    pub gamma: f64,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Replay memory capacity L.
    pub memory_capacity: usize,
    /// Batch size B sampled after each episode.
    pub batch_size: usize,
    /// Copy online weights to the target network every F episodes.
    pub target_sync_episodes: usize,
    /// Epsilon-greedy schedule: linear from start to end over the first
    /// `decay_frac` of training episodes, then constant.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_frac: f64,
    /// Hidden layer widths.
    pub hidden_layers: Vec<usize>,
    /// Gradient steps performed after each episode.
    pub steps_per_episode: usize,
    /// State buffer length, s. Together with the sim step this fixes the
    /// number of buffer slices.
    pub state_buffer_s: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            learning_rate: 1e-5,
            memory_capacity: 10_000,
            batch_size: 64,
            target_sync_episodes: 10,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_frac: 0.75,
            hidden_layers: vec![500, 1000],
            steps_per_episode: 1,
            state_buffer_s: 12.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("agent.gamma: must be in [0,1], got {}", self.gamma)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "agent.learning_rate: must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.batch_size > self.memory_capacity {
            return Err(Error::Config(format!(
                "agent.batch_size: must be in 1..=memory_capacity, got {}",
                self.batch_size
            )));
        }
        if self.target_sync_episodes == 0 {
            return Err(Error::Config("agent.target_sync_episodes: must be >= 1".into()));
        }
        for (field, v) in [
            ("agent.epsilon_start", self.epsilon_start),
            ("agent.epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{field}: must be in [0,1], got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_frac) {
            return Err(Error::Config(format!(
                "agent.epsilon_decay_frac: must be in [0,1], got {}",
                self.epsilon_decay_frac
            )));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::Config("agent.hidden_layers: need at least one non-empty layer".into()));
        }
        if self.steps_per_episode == 0 {
            return Err(Error::Config("agent.steps_per_episode: must be >= 1".into()));
        }
        if !(self.state_buffer_s > 0.0) {
            return Err(Error::Config(format!(
                "agent.state_buffer_s: must be positive, got {}",
                self.state_buffer_s
            )));
        }
        Ok(())
    }

    /// Epsilon for a given zero-based episode index out of `total` episodes.
    pub fn epsilon_at(&self, episode: usize, total: usize) -> f64 {
        let horizon = (total as f64 * self.epsilon_decay_frac).ceil() as usize;
        if horizon == 0 || episode >= horizon {
            return self.epsilon_end;
        }
        let frac = episode as f64 / horizon as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

// ---------------------------------------------------------------------------
// Training / curriculum
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Episodes per training run.
    pub episodes: usize,
    /// Independent runs per `train` invocation.
    pub runs: usize,
    /// Curriculum: first `low_frac` of episodes at Low demand, next
    /// `medium_frac` at Medium, remainder drawn uniformly from all levels.
    pub curriculum_low_frac: f64,
    pub curriculum_medium_frac: f64,
    /// Episode duration, s.
    pub episode_s: f64,
    /// Seeds per demand level when ranking finished runs against each other.
    pub selection_seeds: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 400,
            runs: 10,
            curriculum_low_frac: 0.4,
            curriculum_medium_frac: 0.3,
            episode_s: 1800.0,
            selection_seeds: 10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("training.episodes: must be >= 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("training.runs: must be >= 1".into()));
        }
        let s = self.curriculum_low_frac + self.curriculum_medium_frac;
        if self.curriculum_low_frac < 0.0 || self.curriculum_medium_frac < 0.0 || s > 1.0 + RATIO_TOL {
            return Err(Error::Config(format!(
                "training.curriculum fractions: must be non-negative and sum to <= 1, got {}",
                round9(s)
            )));
        }
        if !(self.episode_s > 0.0) {
            return Err(Error::Config(format!(
                "training.episode_s: must be positive, got {}",
                self.episode_s
            )));
        }
        if self.selection_seeds == 0 {
            return Err(Error::Config("training.selection_seeds: must be >= 1".into()));
        }
        Ok(())
    }

    /// Demand level scheduled for a zero-based episode index. Episodes in the
    /// mixed tail draw uniformly via `mix_draw` (a uniform float in [0,1)).
    pub fn level_for_episode(&self, episode: usize, mix_draw: f64) -> DemandLevel {
        let frac = episode as f64 / self.episodes as f64;
        if frac < self.curriculum_low_frac {
            DemandLevel::Low
        } else if frac < self.curriculum_low_frac + self.curriculum_medium_frac {
            DemandLevel::Medium
        } else {
            let i = (mix_draw * 3.0).floor().min(2.0) as usize;
            DemandLevel::ALL[i]
        }
    }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SystemDConfig {
    /// Gap timer: extend while a served presence loop was occupied more
    /// recently than this, s.
    pub gap_timeout_s: f64,
    /// Maximum green per stage 1..=4, s.
    pub max_green_s: [f64; 4],
}

impl Default for SystemDConfig {
    fn default() -> Self {
        Self { gap_timeout_s: 1.5, max_green_s: [40.0, 40.0, 40.0, 30.0] }
    }
}

impl SystemDConfig {
    pub fn validate(&self, plan: &StagePlanConfig) -> Result<()> {
        if !(self.gap_timeout_s > 0.0) {
            return Err(Error::Config(format!(
                "system_d.gap_timeout_s: must be positive, got {}",
                self.gap_timeout_s
            )));
        }
        for (i, (&mx, &mn)) in self.max_green_s.iter().zip(plan.min_green_s.iter()).enumerate() {
            if mx < mn {
                return Err(Error::Config(format!(
                    "system_d.max_green_s[{}]: below min_green ({mx} < {mn})",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Episode duration, s.
    pub episode_s: f64,
    /// Default seed range (inclusive) when none is given on the CLI.
    pub seed_from: u64,
    pub seed_to: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { episode_s: 1800.0, seed_from: 0, seed_to: 99 }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.episode_s > 0.0) {
            return Err(Error::Config(format!(
                "evaluation.episode_s: must be positive, got {}",
                self.episode_s
            )));
        }
        if self.seed_to < self.seed_from {
            return Err(Error::Config(format!(
                "evaluation.seed_to: must be >= seed_from ({} < {})",
                self.seed_to, self.seed_from
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Top-level config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub junction: JunctionConfig,
    pub demand: DemandConfig,
    pub stages: StagePlanConfig,
    pub sensing: SensingConfig,
    pub agent: AgentConfig,
    pub training: TrainingConfig,
    pub system_d: SystemDConfig,
    pub evaluation: EvaluationConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.junction.validate()?;
        self.demand.validate()?;
        self.stages.validate(self.junction.sim_step)?;
        self.sensing.validate(&self.junction)?;
        self.agent.validate()?;
        self.training.validate()?;
        self.system_d.validate(&self.stages)?;
        self.evaluation.validate()?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Stable hex digest of the serialised config; embedded in reports and
    /// checkpoint metadata so outputs name the exact inputs that made them.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_toml_string().as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(16);
        for b in &digest[..8] {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// Number of sim steps in an episode of `episode_s` seconds.
    pub fn episode_steps(&self, episode_s: f64) -> usize {
        steps_ceil(episode_s, self.junction.sim_step)
    }

    /// State buffer slices implied by the buffer length and sim step.
    pub fn buffer_slices(&self) -> usize {
        steps_ceil(self.agent.state_buffer_s, self.junction.sim_step)
    }
}

/// Seconds to whole steps, rounding up, with a tolerance for binary rounding
/// in the division (3.0 / 0.6 must give 5 steps, not 6).
pub fn steps_ceil(seconds: f64, dt: f64) -> usize {
    ((seconds / dt) - 1e-9).ceil().max(0.0) as usize
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}
