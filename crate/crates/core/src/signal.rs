//! Stage-based signal controller.
//!
//! The controller owns the only path by which any policy (learned or
//! otherwise) can influence the lights: a policy may request one of the
//! choosable stages at a decision point, and the controller refuses anything
//! that would violate minimum green, skip the amber/all-red interlude, or
//! bypass an intermediate stage. Requesting the stage that is already running
//! extends its green by one step.
//!
//! A stage change plays out as amber for the losing movements, then an
//! all-red period of exactly the configured intergreen, then the new stage.
//! All durations are quantised up to whole simulation steps.

use serde::{Deserialize, Serialize};

use crate::config::{steps_ceil, Config, MovementId, Stage, Turn, ARM_COUNT};
use crate::error::{Error, Result};

/// What a signal head shows during one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indication {
    Green,
    Amber,
    Red,
}

/// Indication per movement for one step, indexed by arm and turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Indications([[Indication; 3]; ARM_COUNT]);

fn turn_idx(turn: Turn) -> usize {
    match turn {
        Turn::Through => 0,
        Turn::Left => 1,
        Turn::Right => 2,
    }
}

impl Indications {
    fn all_red() -> Self {
        Self([[Indication::Red; 3]; ARM_COUNT])
    }

    fn set(&mut self, m: MovementId, ind: Indication) {
        self.0[m.arm][turn_idx(m.turn)] = ind;
    }

    pub fn of(&self, m: MovementId) -> Indication {
        self.0[m.arm][turn_idx(m.turn)]
    }

    pub fn is_green(&self, m: MovementId) -> bool {
        self.of(m) == Indication::Green
    }

    /// True when no movement shows green or amber.
    pub fn fully_red(&self) -> bool {
        self.0
            .iter()
            .all(|arm| arm.iter().all(|&i| i == Indication::Red))
    }
}

/// Stage plan compiled to step units.
#[derive(Debug, Clone)]
pub struct StagePlan {
    movements: [Vec<MovementId>; 4],
    min_green_steps: [u32; 4],
    amber_steps: u32,
    intergreen_steps: [[u32; 4]; 4],
}

impl StagePlan {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let dt = cfg.junction.sim_step;
        let plan = &cfg.stages;
        let movements = [
            plan.movements_of(Stage::One)?,
            plan.movements_of(Stage::Two)?,
            plan.movements_of(Stage::Three)?,
            plan.movements_of(Stage::Four)?,
        ];
        let mut min_green_steps = [0u32; 4];
        for (i, &g) in plan.min_green_s.iter().enumerate() {
            min_green_steps[i] = steps_ceil(g, dt) as u32;
        }
        let mut intergreen_steps = [[0u32; 4]; 4];
        for (i, row) in plan.intergreen_s.iter().enumerate() {
            for (j, &ig) in row.iter().enumerate() {
                intergreen_steps[i][j] = steps_ceil(ig, dt) as u32;
            }
        }
        Ok(Self {
            movements,
            min_green_steps,
            amber_steps: steps_ceil(plan.amber_s, dt) as u32,
            intergreen_steps,
        })
    }

    pub fn movements(&self, stage: Stage) -> &[MovementId] {
        &self.movements[stage.index()]
    }

    pub fn min_green_steps(&self, stage: Stage) -> u32 {
        self.min_green_steps[stage.index()]
    }

    pub fn amber_steps(&self) -> u32 {
        self.amber_steps
    }

    pub fn intergreen_steps(&self, from: Stage, to: Stage) -> u32 {
        self.intergreen_steps[from.index()][to.index()]
    }

    /// Stages that must run between `from` and `to`. The main-road right
    /// turns (stage 1) get a short green whenever control passes from the
    /// side roads back to the main road; every other change is direct.
    pub fn intermediate_path(&self, from: Stage, to: Stage) -> Vec<Stage> {
        if from == Stage::Four && to == Stage::Two {
            vec![Stage::One]
        } else {
            vec![]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum SignalState {
    InStage {
        stage: Stage,
        elapsed_steps: u32,
        /// Stages still to visit, front first. Non-empty only while passing
        /// through an intermediate stage.
        pending: Vec<Stage>,
    },
    Transition {
        from: Stage,
        to: Stage,
        amber_left: u32,
        red_left: u32,
        pending: Vec<Stage>,
    },
}

/// The controller itself: a stage interlock that advances one step per tick.
#[derive(Debug, Clone)]
pub struct SignalController {
    plan: StagePlan,
    state: SignalState,
}

impl SignalController {
    pub fn new(plan: StagePlan, initial: Stage) -> Self {
        Self {
            plan,
            state: SignalState::InStage { stage: initial, elapsed_steps: 0, pending: vec![] },
        }
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    /// The running stage, or `None` mid-transition.
    pub fn current_stage(&self) -> Option<Stage> {
        match &self.state {
            SignalState::InStage { stage, .. } => Some(*stage),
            SignalState::Transition { .. } => None,
        }
    }

    /// Green steps consumed in the running stage (0 mid-transition).
    pub fn elapsed_steps(&self) -> u32 {
        match &self.state {
            SignalState::InStage { elapsed_steps, .. } => *elapsed_steps,
            SignalState::Transition { .. } => 0,
        }
    }

    /// True when the policy may request a stage before the next tick.
    pub fn at_decision_point(&self) -> bool {
        match &self.state {
            SignalState::InStage { stage, elapsed_steps, pending } => {
                pending.is_empty() && *elapsed_steps >= self.plan.min_green_steps(*stage)
            }
            SignalState::Transition { .. } => false,
        }
    }

    /// Stages a policy may request right now. Empty off decision points.
    pub fn legal_actions(&self) -> Vec<Stage> {
        if self.at_decision_point() {
            Stage::CHOOSABLE.to_vec()
        } else {
            vec![]
        }
    }

    /// Request the stage to run next. Only valid at a decision point and only
    /// for choosable stages; requesting the running stage extends it.
    pub fn request_stage(&mut self, target: Stage) -> Result<()> {
        if !Stage::CHOOSABLE.contains(&target) {
            return Err(Error::RejectedRequest(format!("stage {target} is not choosable")));
        }
        if !self.at_decision_point() {
            return Err(Error::RejectedRequest(
                "stage requested outside a decision point".into(),
            ));
        }
        let SignalState::InStage { stage, pending, .. } = &mut self.state else {
            unreachable!("decision points only exist in a stage");
        };
        if *stage == target {
            return Ok(());
        }
        let mut path = self.plan.intermediate_path(*stage, target);
        path.push(target);
        *pending = path;
        Ok(())
    }

    /// Advance one step. Returns the indications in force during the step
    /// just consumed.
    pub fn tick(&mut self) -> Indications {
        if let SignalState::InStage { stage, elapsed_steps, pending } = &mut self.state {
            let stage = *stage;
            let ready = *elapsed_steps >= self.plan.min_green_steps(stage);
            if pending.is_empty() || !ready {
                *elapsed_steps += 1;
                return self.stage_indications(stage);
            }
            let to = pending.remove(0);
            let pending = std::mem::take(pending);
            self.state = SignalState::Transition {
                from: stage,
                to,
                amber_left: self.plan.amber_steps(),
                red_left: self.plan.intergreen_steps(stage, to),
                pending,
            };
        }
        self.transition_step()
    }

    /// Consume one transition step and return its indications.
    fn transition_step(&mut self) -> Indications {
        let (from, to, in_amber_phase) = match &self.state {
            SignalState::Transition { from, to, amber_left, .. } => (*from, *to, *amber_left > 0),
            SignalState::InStage { .. } => unreachable!("caller checked"),
        };
        let ind = self.transition_indications(from, to, in_amber_phase);
        let SignalState::Transition { amber_left, red_left, pending, .. } = &mut self.state else {
            unreachable!();
        };
        if in_amber_phase {
            *amber_left -= 1;
        } else if *red_left > 0 {
            *red_left -= 1;
        }
        if *amber_left == 0 && *red_left == 0 {
            let pending = std::mem::take(pending);
            self.state = SignalState::InStage { stage: to, elapsed_steps: 0, pending };
        }
        ind
    }

    fn stage_indications(&self, stage: Stage) -> Indications {
        let mut ind = Indications::all_red();
        for &m in self.plan.movements(stage) {
            ind.set(m, Indication::Green);
        }
        ind
    }

    /// Movements served by both stages stay green through the change;
    /// movements losing green show amber during the amber phase; everything
    /// else is red.
    fn transition_indications(&self, from: Stage, to: Stage, amber_phase: bool) -> Indications {
        let mut ind = Indications::all_red();
        let to_moves = self.plan.movements(to);
        for &m in self.plan.movements(from) {
            if to_moves.contains(&m) {
                ind.set(m, Indication::Green);
            } else if amber_phase {
                ind.set(m, Indication::Amber);
            }
        }
        ind
    }
}
