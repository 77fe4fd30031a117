//! Closed-loop junction environment.
//!
//! Wires the microsimulator, the signal controller, and the sensor layer
//! into the stepped interface every policy drives: advance to a decision
//! point, pick a stage, and receive the aggregated window statistics that
//! the reward functions consume. The environment also maintains the rolling
//! sensor-slice history from which the learning agent encodes its state.
//!
//! Time is carved into half-open action windows (previous decision, this
//! decision]. Per-step accruals (stopped time, time lost, stop-line
//! crossings) are booked into the open window as they happen; the window is
//! closed and rolled when the policy acts, and once more at the episode end
//! so the final partial window is never dropped.

use std::collections::VecDeque;

use crate::config::{Config, DemandLevel, Stage, ARM_COUNT};
use crate::error::{Error, Result};
use crate::rewards::{estimate_demand, DemandEstimate};
use crate::rng::{stream_rng, streams};
use crate::sensing::{self, ActionWindowStats, DetectorZone};
use crate::signal::{Indications, SignalController, StagePlan};
use crate::sim::{ArrivalSchedule, JunctionSim, SimParams};

/// One sensor slice: the four detector occupancies at the end of a step and
/// the stage that was active during it. `None` through amber and all-red
/// steps, when no stage is active.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub occupancies: [f64; ARM_COUNT],
    pub stage: Option<Stage>,
}

/// Everything handed back when a window closes: the aggregates the reward
/// kinds consume plus the demand estimate current at the closing instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub stats: ActionWindowStats,
    pub demand: DemandEstimate,
}

/// Rolling accumulator for the open action window and a copy of the closed
/// one before it, so differenced reward kinds can look one window back.
#[derive(Debug, Clone)]
struct WindowTracker {
    t_pp: f64,
    t_p: f64,
    queue_at_tp: usize,
    cum_wait_at_tp: f64,
    prev_wait: f64,
    prev_time_lost: f64,
    cur_wait: f64,
    cur_time_lost: f64,
    cur_throughput: usize,
}

impl WindowTracker {
    fn new() -> Self {
        Self {
            t_pp: 0.0,
            t_p: 0.0,
            queue_at_tp: 0,
            cum_wait_at_tp: 0.0,
            prev_wait: 0.0,
            prev_time_lost: 0.0,
            cur_wait: 0.0,
            cur_time_lost: 0.0,
            cur_throughput: 0,
        }
    }

    fn roll(&mut self, t: f64, queue_now: usize, cum_wait_now: f64) {
        self.t_pp = self.t_p;
        self.t_p = t;
        self.queue_at_tp = queue_now;
        self.cum_wait_at_tp = cum_wait_now;
        self.prev_wait = self.cur_wait;
        self.prev_time_lost = self.cur_time_lost;
        self.cur_wait = 0.0;
        self.cur_time_lost = 0.0;
        self.cur_throughput = 0;
    }
}

/// The junction, its lights, and its sensors, stepped as one unit.
pub struct JunctionEnv {
    sim: JunctionSim,
    ctl: SignalController,
    zones: Vec<DetectorZone>,
    /// Last `buffer_slices` frames, oldest first. Seeded at construction
    /// with empty-detector frames carrying the initial stage, as if the
    /// junction had been sitting idle under it.
    frames: VecDeque<Frame>,
    win: WindowTracker,
    episode_steps: u64,
    buffer_slices: usize,
    v_max: f64,
    v_stop: f64,
    v_queue: f64,
    presence_zone_m: f64,
    demand_window_s: f64,
    d_floor: f64,
}

/// The stage every episode opens in: main-road through traffic.
pub const INITIAL_STAGE: Stage = Stage::Two;

impl JunctionEnv {
    /// Build a fresh episode. Arrival and driver randomness derive from
    /// `seed` through fixed independent streams, so one seed pins the whole
    /// scenario.
    pub fn new(cfg: &Config, level: DemandLevel, seed: u64, episode_s: f64) -> Result<Self> {
        cfg.validate()?;
        let profile = cfg.demand.profile(level);
        let mut arrival_rng = stream_rng(seed, streams::ARRIVALS);
        let schedule =
            ArrivalSchedule::generate(&profile, &cfg.junction, episode_s, &mut arrival_rng);
        let sim = JunctionSim::new(
            SimParams::from_config(cfg),
            schedule,
            stream_rng(seed, streams::DRIVERS),
        );
        let ctl = SignalController::new(StagePlan::from_config(cfg)?, INITIAL_STAGE);
        let buffer_slices = cfg.buffer_slices();
        let frames = std::iter::repeat(Frame {
            occupancies: [0.0; ARM_COUNT],
            stage: Some(INITIAL_STAGE),
        })
        .take(buffer_slices)
        .collect();
        Ok(Self {
            sim,
            ctl,
            zones: sensing::zones_from_config(cfg),
            frames,
            win: WindowTracker::new(),
            episode_steps: cfg.episode_steps(episode_s) as u64,
            buffer_slices,
            v_max: cfg.junction.v_max,
            v_stop: cfg.sensing.v_stop_threshold,
            v_queue: cfg.sensing.v_queue_threshold,
            presence_zone_m: cfg.sensing.presence_zone_m,
            demand_window_s: cfg.sensing.demand_window_s,
            d_floor: cfg.sensing.d_floor,
        })
    }

    pub fn done(&self) -> bool {
        self.sim.step_index() >= self.episode_steps
    }

    /// True when the controller will accept a stage request right now.
    pub fn at_decision_point(&self) -> bool {
        !self.done() && self.ctl.at_decision_point()
    }

    pub fn legal_actions(&self) -> Vec<Stage> {
        if self.done() {
            vec![]
        } else {
            self.ctl.legal_actions()
        }
    }

    /// Request `target` for the next stage and close the current action
    /// window. Valid only at a decision point.
    pub fn apply_action(&mut self, target: Stage) -> Result<WindowOutcome> {
        if !self.at_decision_point() {
            return Err(Error::RejectedRequest(
                "action applied outside a decision point".into(),
            ));
        }
        self.ctl.request_stage(target)?;
        Ok(self.close_window())
    }

    /// Close the final, possibly short, window once the episode is over.
    pub fn close_terminal_window(&mut self) -> Result<WindowOutcome> {
        if !self.done() {
            return Err(Error::InvariantViolation(
                "terminal window closed before the episode end".into(),
            ));
        }
        Ok(self.close_window())
    }

    /// Advance one step: tick the lights, move the vehicles, book the
    /// window accruals, and append a sensor frame. Returns the indications
    /// that were in force during the step.
    pub fn step(&mut self) -> Result<Indications> {
        if self.done() {
            return Err(Error::InvariantViolation("step past the episode end".into()));
        }
        let stage_before = self.ctl.current_stage();
        let ind = self.ctl.tick();
        self.sim.step(&ind);
        // The controller flips to the incoming stage on the last all-red
        // tick, so a step only counts as stage time when the stage was the
        // same on both sides of it.
        let stage_after = self.ctl.current_stage();
        let active = if stage_before == stage_after { stage_before } else { None };
        self.accrue_window();
        self.push_frame(active);
        Ok(ind)
    }

    /// Step until the controller offers a decision or the episode ends.
    pub fn advance_to_decision(&mut self) -> Result<()> {
        while !self.done() && !self.ctl.at_decision_point() {
            self.step()?;
        }
        Ok(())
    }

    /// Sensor history, oldest slice first.
    pub fn history(&self) -> &VecDeque<Frame> {
        &self.frames
    }

    pub fn sim(&self) -> &JunctionSim {
        &self.sim
    }

    pub fn controller(&self) -> &SignalController {
        &self.ctl
    }

    pub fn zones(&self) -> &[DetectorZone] {
        &self.zones
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn step_index(&self) -> u64 {
        self.sim.step_index()
    }

    pub fn episode_steps(&self) -> u64 {
        self.episode_steps
    }

    pub fn buffer_slices(&self) -> usize {
        self.buffer_slices
    }

    /// Speed below which a sensed vehicle counts as queued, m/s.
    pub fn v_queue_threshold(&self) -> f64 {
        self.v_queue
    }

    /// Length of the stop-line presence loops actuated control uses, m.
    pub fn presence_zone_m(&self) -> f64 {
        self.presence_zone_m
    }

    /// Mean lifetime stopped time per scheduled vehicle, the episode score.
    pub fn average_wait(&self) -> f64 {
        self.sim.avg_stop_time_per_vehicle()
    }

    fn close_window(&mut self) -> WindowOutcome {
        let t = self.time();
        let (queue_now, cum_wait_now, ratio, count) = self.instant_readings();
        let stats = ActionWindowStats {
            t_pp: self.win.t_pp,
            t_p: self.win.t_p,
            t,
            sum_queue_prev: self.win.queue_at_tp,
            sum_queue_now: queue_now,
            wait_accrued_prev_window: self.win.prev_wait,
            wait_accrued_this_window: self.win.cur_wait,
            cum_wait_at_tp: self.win.cum_wait_at_tp,
            cum_wait_at_t: cum_wait_now,
            time_lost_prev_window: self.win.prev_time_lost,
            time_lost_this_window: self.win.cur_time_lost,
            avg_speed_ratio_at_t: ratio,
            throughput_this_window: self.win.cur_throughput,
            vehicle_count_at_t: count,
        };
        let arrivals = self
            .sim
            .schedule()
            .count_scheduled_in(t - self.demand_window_s, t);
        let demand = estimate_demand(arrivals, self.demand_window_s, self.d_floor);
        self.win.roll(t, queue_now, cum_wait_now);
        WindowOutcome { stats, demand }
    }

    /// Zone-restricted instant readings at the current time: summed queue,
    /// summed lifetime wait, average speed ratio, and vehicle count.
    fn instant_readings(&self) -> (usize, f64, f64, usize) {
        let mut queue = 0usize;
        let mut count = 0usize;
        for z in &self.zones {
            queue += sensing::estimate_queue(z, self.sim.arm_vehicles(z.arm), self.v_queue);
            count += sensing::zone_population(z, self.sim.arm_vehicles(z.arm));
        }
        let cum_wait = sensing::cum_wait(self.zone_vehicles());
        let ratio = sensing::avg_speed_ratio(self.zone_vehicles(), self.v_max);
        (queue, cum_wait, ratio, count)
    }

    fn zone_vehicles(&self) -> impl Iterator<Item = &crate::sim::Vehicle> {
        self.zones
            .iter()
            .flat_map(move |z| self.sim.arm_vehicles(z.arm).filter(move |v| z.contains(v)))
    }

    /// Book this step's stopped time, time lost, and crossings into the
    /// open window. Wait and time lost only count while a vehicle is inside
    /// a detector zone, mirroring what the sensors can see.
    fn accrue_window(&mut self) {
        let dt = self.sim.params().dt;
        let mut wait = 0.0;
        let mut lost = 0.0;
        for v in self.zone_vehicles() {
            if v.speed < self.v_stop {
                wait += dt;
            }
            lost += dt * (1.0 - v.speed / self.v_max);
        }
        self.win.cur_wait += wait;
        self.win.cur_time_lost += lost;
        self.win.cur_throughput += self.sim.crossings_this_step().len();
    }

    fn push_frame(&mut self, active: Option<Stage>) {
        let occ = sensing::occupancies(
            &self.zones,
            |arm| self.sim.arm_vehicles(arm),
            self.sim.params().vehicle_length,
        );
        if self.frames.len() == self.buffer_slices {
            self.frames.pop_front();
        }
        self.frames.push_back(Frame { occupancies: occ, stage: active });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::RewardKind;

    fn env(level: DemandLevel, seed: u64) -> JunctionEnv {
        let cfg = Config::default();
        JunctionEnv::new(&cfg, level, seed, 1800.0).unwrap()
    }

    /// Alternate between the two choosable stages on every decision.
    fn run_scripted(env: &mut JunctionEnv) -> Vec<WindowOutcome> {
        let mut outcomes = Vec::new();
        let mut flip = false;
        loop {
            env.advance_to_decision().unwrap();
            if env.done() {
                break;
            }
            let target = if flip { Stage::Four } else { Stage::Two };
            flip = !flip;
            outcomes.push(env.apply_action(target).unwrap());
            env.step().unwrap();
        }
        outcomes.push(env.close_terminal_window().unwrap());
        outcomes
    }

    #[test]
    fn fresh_history_is_idle_under_the_initial_stage() {
        let e = env(DemandLevel::Low, 1);
        assert_eq!(e.history().len(), 20);
        for f in e.history() {
            assert_eq!(f.stage, Some(Stage::Two));
            assert_eq!(f.occupancies, [0.0; 4]);
        }
    }

    #[test]
    fn first_decision_comes_after_minimum_green() {
        let mut e = env(DemandLevel::Low, 2);
        assert!(!e.at_decision_point());
        e.advance_to_decision().unwrap();
        assert_eq!(e.step_index(), 12);
        assert!((e.time() - 7.2).abs() < 1e-9);
        let out = e.apply_action(Stage::Two).unwrap();
        assert_eq!(out.stats.t_pp, 0.0);
        assert_eq!(out.stats.t_p, 0.0);
        assert!((out.stats.t - 7.2).abs() < 1e-9);
    }

    #[test]
    fn windows_tile_the_episode() {
        let mut e = env(DemandLevel::Medium, 3);
        let outcomes = run_scripted(&mut e);
        assert!(outcomes.len() > 60, "only {} windows", outcomes.len());
        for pair in outcomes.windows(2) {
            let (a, b) = (&pair[0].stats, &pair[1].stats);
            assert_eq!(b.t_p, a.t, "window start must equal previous end");
            assert_eq!(b.t_pp, a.t_p);
            assert_eq!(b.wait_accrued_prev_window, a.wait_accrued_this_window);
            assert_eq!(b.time_lost_prev_window, a.time_lost_this_window);
            assert_eq!(b.sum_queue_prev, a.sum_queue_now);
            assert_eq!(b.cum_wait_at_tp, a.cum_wait_at_t);
            assert!(b.t_pp <= b.t_p && b.t_p <= b.t);
        }
        let last = &outcomes.last().unwrap().stats;
        assert!((last.t - 1800.0).abs() < 1e-6);
    }

    #[test]
    fn throughput_windows_sum_to_total_exits() {
        let mut e = env(DemandLevel::High, 4);
        let outcomes = run_scripted(&mut e);
        let windowed: usize = outcomes.iter().map(|o| o.stats.throughput_this_window).sum();
        let exited = e.sim().boxed_vehicles().len() + e.sim().completed().len();
        assert_eq!(windowed, exited);
        assert!(exited > 200, "high demand should push many vehicles through");
    }

    #[test]
    fn window_accruals_match_a_step_by_step_recount() {
        let cfg = Config::default();
        let mut e = JunctionEnv::new(&cfg, DemandLevel::Medium, 5, 1800.0).unwrap();
        let dt = cfg.junction.sim_step;
        let mut wait = 0.0f64;
        let mut lost = 0.0f64;
        let mut crossed = 0usize;
        let mut checked = 0;
        while !e.done() && checked < 40 {
            if e.at_decision_point() {
                let out = e.apply_action(Stage::Two).unwrap();
                assert!(
                    (out.stats.wait_accrued_this_window - wait).abs() < 1e-9,
                    "window wait {} vs recount {}",
                    out.stats.wait_accrued_this_window,
                    wait
                );
                assert!((out.stats.time_lost_this_window - lost).abs() < 1e-9);
                assert_eq!(out.stats.throughput_this_window, crossed);
                wait = 0.0;
                lost = 0.0;
                crossed = 0;
                checked += 1;
            }
            e.step().unwrap();
            for z in e.zones().to_vec() {
                for v in e.sim().arm_vehicles(z.arm).filter(|v| z.contains(v)) {
                    if v.speed < cfg.sensing.v_stop_threshold {
                        wait += dt;
                    }
                    lost += dt * (1.0 - v.speed / cfg.junction.v_max);
                }
            }
            crossed += e.sim().crossings_this_step().len();
        }
        assert_eq!(checked, 40);
    }

    #[test]
    fn frames_blank_the_stage_through_transitions() {
        let mut e = env(DemandLevel::Low, 6);
        e.advance_to_decision().unwrap();
        e.apply_action(Stage::Four).unwrap();
        // 5 amber + 9 all-red steps follow; each frame must carry no stage.
        for _ in 0..14 {
            e.step().unwrap();
            assert_eq!(e.history().back().unwrap().stage, None);
        }
        e.step().unwrap();
        assert_eq!(e.history().back().unwrap().stage, Some(Stage::Four));
    }

    #[test]
    fn same_stage_extension_offers_a_decision_every_step() {
        let mut e = env(DemandLevel::Low, 7);
        e.advance_to_decision().unwrap();
        let t0 = e.time();
        e.apply_action(Stage::Two).unwrap();
        e.step().unwrap();
        assert!(e.at_decision_point());
        let out = e.apply_action(Stage::Two).unwrap();
        assert!((out.stats.t - out.stats.t_p - 0.6).abs() < 1e-9);
        assert!((out.stats.t_p - t0).abs() < 1e-9);
    }

    #[test]
    fn episodes_are_reproducible() {
        let mut a = env(DemandLevel::Medium, 11);
        let mut b = env(DemandLevel::Medium, 11);
        let oa = run_scripted(&mut a);
        let ob = run_scripted(&mut b);
        assert_eq!(oa, ob);
        assert_eq!(a.average_wait().to_bits(), b.average_wait().to_bits());
        assert_eq!(a.history(), b.history());
    }

    #[test]
    fn rewards_flow_from_outcomes() {
        let mut e = env(DemandLevel::High, 13);
        let outcomes = run_scripted(&mut e);
        let mid = &outcomes[outcomes.len() / 2];
        for kind in RewardKind::ALL {
            let r = crate::rewards::compute_reward(kind, &mid.stats, &mid.demand);
            assert!(r.is_finite(), "{kind} produced a non-finite reward");
        }
        // Under saturated demand the queue reward must eventually go negative.
        assert!(outcomes
            .iter()
            .any(|o| crate::rewards::compute_reward(RewardKind::Queue, &o.stats, &o.demand) < 0.0));
    }

    #[test]
    fn stepping_past_the_end_is_refused() {
        let mut e = env(DemandLevel::Low, 17);
        while !e.done() {
            if e.at_decision_point() {
                e.apply_action(Stage::Two).unwrap();
            }
            e.step().unwrap();
        }
        assert!(e.step().is_err());
        assert!(e.apply_action(Stage::Two).is_err());
        assert!(e.close_terminal_window().is_ok());
    }
}
