//! Episode trace export and replay.
//!
//! A trace is a directory of plain CSV files plus the exact configuration
//! that produced it, written with enough detail that every reward value,
//! the episode score, and the whole simulation can be recomputed or re-run
//! from the files alone. All numbers print in Rust's shortest round-trip
//! form, so identical runs produce byte-identical traces.
//!
//! Files: `config.toml` (snapshot), `meta.json` (seed, level, agent),
//! `vehicles.csv` (one row per vehicle per step, backlogged vehicles with
//! lane −1), `signals.csv` (per-step stage and per-movement indication),
//! `crossings.csv` (stop-line events), `arrivals.csv` (the demand draw),
//! and `decisions.csv` (every closed action window with its aggregates and
//! all twelve reward values).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Config, Stage, Turn, ARM_COUNT, ARM_NAMES};
use crate::env::{JunctionEnv, WindowOutcome};
use crate::error::{Error, Result};
use crate::policy::{Policy, RolloutSummary};
use crate::rewards::{compute_reward, RewardKind};
use crate::signal::{Indication, Indications};
use crate::config::MovementId;

/// Identity of a recorded episode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceMeta {
    pub seed: u64,
    pub demand_level: String,
    pub episode_s: f64,
    pub agent: String,
    pub config_hash: String,
}

fn ind_letter(i: Indication) -> char {
    match i {
        Indication::Green => 'G',
        Indication::Amber => 'A',
        Indication::Red => 'R',
    }
}

fn turn_name(t: Turn) -> &'static str {
    match t {
        Turn::Through => "through",
        Turn::Left => "left",
        Turn::Right => "right",
    }
}

/// Streams one episode into a trace directory.
pub struct TraceRecorder {
    dir: PathBuf,
    vehicles: BufWriter<File>,
    signals: BufWriter<File>,
    crossings: BufWriter<File>,
    decisions: BufWriter<File>,
    v_stop: f64,
    last_decision_step: u64,
}

impl TraceRecorder {
    /// Create the directory, write the config snapshot and metadata, and
    /// open the per-step files.
    pub fn create(dir: &Path, cfg: &Config, meta: &TraceMeta) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
        let meta_json = serde_json::to_string_pretty(meta)
            .map_err(|e| Error::Trace(format!("metadata encode failed: {e}")))?;
        std::fs::write(dir.join("meta.json"), meta_json)?;

        let open = |name: &str| -> Result<BufWriter<File>> {
            Ok(BufWriter::new(File::create(dir.join(name))?))
        };
        let mut vehicles = open("vehicles.csv")?;
        writeln!(vehicles, "step,vehicle_id,arm,lane,position_m,speed_mps,stopped")?;
        let mut signals = open("signals.csv")?;
        let mut head = String::from("step,stage");
        for arm in 0..ARM_COUNT {
            for turn in Turn::ALL {
                head.push(',');
                head.push_str(ARM_NAMES[arm]);
                head.push('_');
                head.push_str(turn_name(turn));
            }
        }
        writeln!(signals, "{head}")?;
        let mut crossings = open("crossings.csv")?;
        writeln!(crossings, "step,vehicle_id,arm,lane,movement")?;
        let mut decisions = open("decisions.csv")?;
        let mut head = String::from(
            "step_p,step,t_p,t,requested_stage,sum_queue_prev,sum_queue_now,\
             wait_accrued_prev_window,wait_accrued_this_window,cum_wait_at_tp,cum_wait_at_t,\
             time_lost_prev_window,time_lost_this_window,avg_speed_ratio_at_t,\
             throughput_this_window,vehicle_count_at_t,d_hat",
        );
        for kind in RewardKind::ALL {
            head.push_str(",r_");
            head.push_str(&kind.name().replace('-', "_"));
        }
        writeln!(decisions, "{head}")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            vehicles,
            signals,
            crossings,
            decisions,
            v_stop: cfg.sensing.v_stop_threshold,
            last_decision_step: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Record the step the environment just completed. `ind` is what
    /// `JunctionEnv::step` returned for it.
    pub fn record_step(&mut self, env: &JunctionEnv, ind: &Indications) -> Result<()> {
        let step = env.step_index();
        for arm in 0..ARM_COUNT {
            for v in env.sim().arm_vehicles(arm) {
                let stopped = u8::from(v.speed < self.v_stop);
                writeln!(
                    self.vehicles,
                    "{step},{},{arm},{},{},{},{stopped}",
                    v.id, v.lane, v.pos, v.speed
                )?;
            }
            for id in env.sim().backlog_ids(arm) {
                writeln!(self.vehicles, "{step},{id},{arm},-1,-1,0,1")?;
            }
        }

        let stage = env.history().back().and_then(|f| f.stage).map_or(0, |s| s.number());
        let mut row = format!("{step},{stage}");
        for arm in 0..ARM_COUNT {
            for turn in Turn::ALL {
                row.push(',');
                row.push(ind_letter(ind.of(MovementId::new(arm, turn))));
            }
        }
        writeln!(self.signals, "{row}")?;

        for c in env.sim().crossings_this_step() {
            writeln!(
                self.crossings,
                "{},{},{},{},{}",
                c.step,
                c.id,
                c.arm,
                c.lane,
                turn_name(c.movement)
            )?;
        }
        Ok(())
    }

    /// Record a closed action window: the request that closed it, or stage
    /// 0 for the terminal window at episode end.
    pub fn record_decision(
        &mut self,
        env: &JunctionEnv,
        outcome: &WindowOutcome,
        requested: Option<Stage>,
    ) -> Result<()> {
        let w = &outcome.stats;
        let step = env.step_index();
        let mut row = format!(
            "{},{step},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.last_decision_step,
            w.t_p,
            w.t,
            requested.map_or(0, |s| s.number()),
            w.sum_queue_prev,
            w.sum_queue_now,
            w.wait_accrued_prev_window,
            w.wait_accrued_this_window,
            w.cum_wait_at_tp,
            w.cum_wait_at_t,
            w.time_lost_prev_window,
            w.time_lost_this_window,
            w.avg_speed_ratio_at_t,
            w.throughput_this_window,
            w.vehicle_count_at_t,
            outcome.demand.d_hat,
        );
        for kind in RewardKind::ALL {
            row.push(',');
            row.push_str(&compute_reward(kind, w, &outcome.demand).to_string());
        }
        writeln!(self.decisions, "{row}")?;
        self.last_decision_step = step;
        Ok(())
    }

    /// Write the arrival schedule with insertion outcomes and flush
    /// everything. Call once, after the episode completes.
    pub fn finish(mut self, env: &JunctionEnv) -> Result<()> {
        let mut arrivals = BufWriter::new(File::create(self.dir.join("arrivals.csv"))?);
        writeln!(arrivals, "vehicle_id,arm,movement,sched_time_s,insert_step")?;
        let mut insert_step = vec![-1i64; env.sim().schedule().len()];
        let on_network = env
            .sim()
            .on_arm_vehicles()
            .chain(env.sim().boxed_vehicles().iter())
            .chain(env.sim().completed().iter());
        for v in on_network {
            insert_step[v.id as usize] = v.insert_step as i64;
        }
        for e in env.sim().schedule().entries() {
            writeln!(
                arrivals,
                "{},{},{},{},{}",
                e.id,
                e.arm,
                turn_name(e.movement),
                e.time,
                insert_step[e.id as usize]
            )?;
        }
        arrivals.flush()?;
        self.vehicles.flush()?;
        self.signals.flush()?;
        self.crossings.flush()?;
        self.decisions.flush()?;
        Ok(())
    }
}

/// Drive a policy through a whole episode while recording the trace.
pub fn run_traced_episode(
    env: &mut JunctionEnv,
    policy: &mut dyn Policy,
    recorder: &mut TraceRecorder,
) -> Result<RolloutSummary> {
    let mut decisions = 0u64;
    while !env.done() {
        if env.at_decision_point() {
            let stage = policy.decide(env)?;
            let outcome = env.apply_action(stage)?;
            recorder.record_decision(env, &outcome, Some(stage))?;
            decisions += 1;
        }
        let ind = env.step()?;
        policy.observe_step(env);
        recorder.record_step(env, &ind)?;
    }
    let outcome = env.close_terminal_window()?;
    recorder.record_decision(env, &outcome, None)?;
    Ok(RolloutSummary {
        avg_wait_s: env.average_wait(),
        decisions,
        scheduled: env.sim().schedule().len(),
        exited: env.sim().boxed_vehicles().len() + env.sim().completed().len(),
    })
}

/// One parsed row of `decisions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub step_p: u64,
    pub step: u64,
    pub t_p: f64,
    pub t: f64,
    /// 0 on the terminal row.
    pub requested_stage: u8,
    pub rewards: Vec<(RewardKind, f64)>,
}

pub fn read_meta(dir: &Path) -> Result<TraceMeta> {
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Trace(format!("meta.json: {e}")))
}

pub fn read_config(dir: &Path) -> Result<Config> {
    Config::from_toml_str(&std::fs::read_to_string(dir.join("config.toml"))?)
}

/// Parse `decisions.csv`, keeping the window bounds, the requested stage,
/// and every recorded reward value.
pub fn read_decisions(dir: &Path) -> Result<Vec<DecisionRow>> {
    let path = dir.join("decisions.csv");
    let file = BufReader::new(File::open(&path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Trace(format!("{}: empty file", path.display())))??;
    let columns: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| Error::Trace(format!("{}: missing column {name}", path.display())))
    };
    let idx_step_p = col("step_p")?;
    let idx_step = col("step")?;
    let idx_tp = col("t_p")?;
    let idx_t = col("t")?;
    let idx_stage = col("requested_stage")?;
    let reward_cols: Vec<(RewardKind, usize)> = RewardKind::ALL
        .into_iter()
        .map(|k| Ok((k, col(&format!("r_{}", k.name().replace('-', "_")))?)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<&str> {
            fields
                .get(i)
                .copied()
                .ok_or_else(|| Error::Trace(format!("{}: row {} truncated", path.display(), n + 2)))
        };
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Trace(format!("{}: bad number {s:?}", path.display())))
        };
        let parse_u = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::Trace(format!("{}: bad integer {s:?}", path.display())))
        };
        let mut rewards = Vec::with_capacity(reward_cols.len());
        for &(kind, i) in &reward_cols {
            rewards.push((kind, parse_f(get(i)?)?));
        }
        rows.push(DecisionRow {
            step_p: parse_u(get(idx_step_p)?)?,
            step: parse_u(get(idx_step)?)?,
            t_p: parse_f(get(idx_tp)?)?,
            t: parse_f(get(idx_t)?)?,
            requested_stage: parse_u(get(idx_stage)?)? as u8,
            rewards,
        });
    }
    Ok(rows)
}

/// Replays the exact stage requests a recorded episode made, keyed by the
/// step each decision fell on.
pub struct ScriptedPolicy {
    requests: std::collections::BTreeMap<u64, Stage>,
}

impl ScriptedPolicy {
    pub fn from_decisions(rows: &[DecisionRow]) -> Result<Self> {
        let mut requests = std::collections::BTreeMap::new();
        for row in rows {
            if row.requested_stage == 0 {
                continue;
            }
            let stage = Stage::from_number(row.requested_stage).map_err(|_| {
                Error::Trace(format!("decision row names stage {}", row.requested_stage))
            })?;
            requests.insert(row.step, stage);
        }
        Ok(Self { requests })
    }
}

impl Policy for ScriptedPolicy {
    fn decide(&mut self, env: &JunctionEnv) -> Result<Stage> {
        self.requests.get(&env.step_index()).copied().ok_or_else(|| {
            Error::Trace(format!(
                "no recorded decision at step {}; trace and replay have diverged",
                env.step_index()
            ))
        })
    }

    fn name(&self) -> String {
        "scripted-replay".into()
    }
}

/// Re-run a recorded episode from its stored config and seed, regenerate
/// the trace into `scratch`, and report whether every file matches the
/// original byte for byte.
pub fn verify_trace(dir: &Path, scratch: &Path) -> Result<Vec<(String, bool)>> {
    let meta = read_meta(dir)?;
    let cfg = read_config(dir)?;
    let level = meta.demand_level.parse()?;
    let rows = read_decisions(dir)?;
    let mut env = JunctionEnv::new(&cfg, level, meta.seed, meta.episode_s)?;
    let mut policy = ScriptedPolicy::from_decisions(&rows)?;
    let mut recorder = TraceRecorder::create(scratch, &cfg, &meta)?;
    run_traced_episode(&mut env, &mut policy, &mut recorder)?;
    recorder.finish(&env)?;

    let mut verdicts = Vec::new();
    for name in ["vehicles.csv", "signals.csv", "crossings.csv", "arrivals.csv", "decisions.csv"] {
        let a = std::fs::read(dir.join(name))?;
        let b = std::fs::read(scratch.join(name))?;
        verdicts.push((name.to_string(), a == b));
    }
    Ok(verdicts)
}
