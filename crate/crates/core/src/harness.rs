//! Experiment orchestration: curriculum training runs, best-of-N selection,
//! paired evaluation across demand levels, and CSV report files.
//!
//! Scenarios are identified by (demand level, seed) and the same scenario
//! list is reused for every agent in a report, so per-scenario differences
//! between agents are always computed on identical traffic. Workers may fan
//! out across threads; results are merged in (agent, level, seed) order, so
//! parallel and serial evaluation emit identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{self, CheckpointMeta, DqnAgent, EpisodeLog, N_ACTIONS, SLICE_FEATURES};
use crate::baselines::{MaxOccupancyPolicy, SystemDPolicy};
use crate::config::{Config, DemandLevel};
use crate::env::JunctionEnv;
use crate::error::{Error, Result};
use crate::neural::{load_checkpoint, save_checkpoint, MlpParams};
use crate::policy::{run_policy_episode, GreedyDqnPolicy, Policy};
use crate::rewards::RewardKind;
use crate::rng::{derive_seed, stream_rng, streams};
use crate::trace::{run_traced_episode, TraceMeta, TraceRecorder};

// ---------------------------------------------------------------------------
// Scenarios and agents
// ---------------------------------------------------------------------------

/// One evaluation episode: a demand level, an arrival seed, and a duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub level: DemandLevel,
    pub seed: u64,
    pub duration_s: f64,
}

/// The full cross product of `levels` and `seeds`, levels outermost.
pub fn scenario_grid(levels: &[DemandLevel], seeds: &[u64], duration_s: f64) -> Vec<ScenarioSpec> {
    let mut out = Vec::with_capacity(levels.len() * seeds.len());
    for &level in levels {
        for &seed in seeds {
            out.push(ScenarioSpec { level, seed, duration_s });
        }
    }
    out
}

/// An agent named on the command line: a baseline keyword or a checkpoint
/// path.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    MaxOccupancy,
    SystemD,
    Checkpoint(PathBuf),
}

impl AgentSpec {
    /// `"max-occupancy"` and `"system-d"` are reserved names; anything else
    /// is read as a checkpoint path.
    pub fn parse(s: &str) -> Self {
        match s {
            "max-occupancy" => AgentSpec::MaxOccupancy,
            "system-d" => AgentSpec::SystemD,
            _ => AgentSpec::Checkpoint(PathBuf::from(s)),
        }
    }
}

enum LoadedKind {
    MaxOccupancy,
    SystemD,
    Dqn(MlpParams),
}

/// An agent resolved against a config: baselines as-is, checkpoints loaded
/// from disk and checked against the state layout the config produces.
pub struct LoadedAgent {
    label: String,
    kind: LoadedKind,
}

impl LoadedAgent {
    pub fn load(spec: &AgentSpec, cfg: &Config) -> Result<Self> {
        match spec {
            AgentSpec::MaxOccupancy => Ok(Self {
                label: "max-occupancy".into(),
                kind: LoadedKind::MaxOccupancy,
            }),
            AgentSpec::SystemD => Ok(Self { label: "system-d".into(), kind: LoadedKind::SystemD }),
            AgentSpec::Checkpoint(path) => {
                let ck = load_checkpoint(path)?;
                let expected = cfg.buffer_slices() * SLICE_FEATURES;
                if ck.params.input_dim() != expected || ck.params.output_dim() != N_ACTIONS {
                    return Err(Error::Checkpoint(format!(
                        "state layout mismatch: {} maps {} -> {} but this config needs {} -> {}",
                        path.display(),
                        ck.params.input_dim(),
                        ck.params.output_dim(),
                        expected,
                        N_ACTIONS
                    )));
                }
                let meta_path = path.with_extension("meta.json");
                if meta_path.exists() {
                    let meta = CheckpointMeta::load(&meta_path)?;
                    if meta.state_dim != ck.params.input_dim() {
                        return Err(Error::Checkpoint(format!(
                            "metadata disagrees with checkpoint: state_dim {} vs {}",
                            meta.state_dim,
                            ck.params.input_dim()
                        )));
                    }
                }
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "checkpoint".into());
                Ok(Self { label, kind: LoadedKind::Dqn(ck.params) })
            }
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Fresh policy instance for one scenario. Each worker gets its own so
    /// stateful policies never share mutable state across episodes.
    fn policy(&self, cfg: &Config, env: &JunctionEnv) -> Result<Box<dyn Policy>> {
        match &self.kind {
            LoadedKind::MaxOccupancy => Ok(Box::new(MaxOccupancyPolicy)),
            LoadedKind::SystemD => Ok(Box::new(SystemDPolicy::new(env, cfg.system_d.clone()))),
            LoadedKind::Dqn(params) => Ok(Box::new(GreedyDqnPolicy::new(
                params.clone(),
                self.label.clone(),
                env.buffer_slices(),
            )?)),
        }
    }
}

// ---------------------------------------------------------------------------
// Scores and summaries
// ---------------------------------------------------------------------------

/// One line of the per-scenario scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub agent: String,
    pub level: DemandLevel,
    pub seed: u64,
    pub avg_wait_s: f64,
}

/// One line of the per-(agent, level) summary file.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub agent: String,
    pub level: DemandLevel,
    pub median_s: f64,
    pub mean_s: f64,
    pub q1_s: f64,
    pub q3_s: f64,
}

/// Linearly interpolated quantile of an ascending-sorted non-empty slice,
/// the same convention most plotting stacks default to.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Collapse per-scenario scores into per-(agent, level) statistics, sorted
/// by agent label then level.
pub fn summarize(rows: &[ScoreRow]) -> Vec<SummaryRow> {
    let mut groups: std::collections::BTreeMap<(String, DemandLevel), Vec<f64>> =
        std::collections::BTreeMap::new();
    for r in rows {
        groups.entry((r.agent.clone(), r.level)).or_default().push(r.avg_wait_s);
    }
    groups
        .into_iter()
        .map(|((agent, level), mut v)| {
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            SummaryRow {
                agent,
                level,
                median_s: quantile_sorted(&v, 0.5),
                mean_s: mean,
                q1_s: quantile_sorted(&v, 0.25),
                q3_s: quantile_sorted(&v, 0.75),
            }
        })
        .collect()
}

/// Every agent in `rows` must have scored exactly the same (level, seed)
/// set, otherwise per-scenario differences would compare different traffic.
pub fn check_pairing(rows: &[ScoreRow]) -> Result<()> {
    let mut keys: std::collections::BTreeMap<&str, Vec<(DemandLevel, u64)>> =
        std::collections::BTreeMap::new();
    for r in rows {
        keys.entry(&r.agent).or_default().push((r.level, r.seed));
    }
    for v in keys.values_mut() {
        v.sort_unstable();
    }
    let mut iter = keys.iter();
    if let Some((first, reference)) = iter.next() {
        for (agent, k) in iter {
            if k != reference {
                return Err(Error::Report(format!(
                    "pairing violated: {agent} scored {} scenarios, {first} scored {}",
                    k.len(),
                    reference.len()
                )));
            }
        }
    }
    Ok(())
}

pub fn scores_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("agent,demand_level,seed,avg_wait_s\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.agent, r.level, r.seed, r.avg_wait_s);
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("agent,demand_level,median_s,mean_s,q1_s,q3_s\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.agent, r.level, r.median_s, r.mean_s, r.q1_s, r.q3_s
        );
    }
    out
}

/// Long-format statistics, one (agent, level, statistic) per row, ready for
/// bar or box rendering without pivoting.
pub fn plot_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("agent,demand_level,statistic,value_s\n");
    for r in rows {
        for (name, v) in [
            ("median", r.median_s),
            ("mean", r.mean_s),
            ("q1", r.q1_s),
            ("q3", r.q3_s),
        ] {
            let _ = writeln!(out, "{},{},{},{}", r.agent, r.level, name, v);
        }
    }
    out
}

/// Reproduction sidecar written next to every report: the exact config and
/// scenario set that produced it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportMeta {
    pub config_hash: String,
    pub duration_s: f64,
    pub agents: Vec<String>,
    pub levels: Vec<String>,
    pub seeds: Vec<u64>,
}

impl ReportMeta {
    pub fn new(agents: &[&LoadedAgent], scenarios: &[ScenarioSpec], cfg: &Config) -> Self {
        let mut levels: Vec<DemandLevel> = scenarios.iter().map(|s| s.level).collect();
        levels.sort_unstable();
        levels.dedup();
        let mut seeds: Vec<u64> = scenarios.iter().map(|s| s.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        Self {
            config_hash: cfg.hash(),
            duration_s: scenarios.first().map(|s| s.duration_s).unwrap_or(0.0),
            agents: agents.iter().map(|a| a.label().to_string()).collect(),
            levels: levels.into_iter().map(|l| l.to_string()).collect(),
            seeds,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Report(format!("meta encode failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn score_scenario(cfg: &Config, agent: &LoadedAgent, sc: &ScenarioSpec) -> Result<ScoreRow> {
    let mut env = JunctionEnv::new(cfg, sc.level, sc.seed, sc.duration_s)?;
    let mut policy = agent.policy(cfg, &env)?;
    let summary = run_policy_episode(&mut env, policy.as_mut())?;
    Ok(ScoreRow {
        agent: agent.label().to_string(),
        level: sc.level,
        seed: sc.seed,
        avg_wait_s: summary.avg_wait_s,
    })
}

/// Greedy rollout of one agent over every scenario, one score per scenario.
/// `parallel` only changes wall-clock time, never the rows.
pub fn evaluate_agent(
    cfg: &Config,
    agent: &LoadedAgent,
    scenarios: &[ScenarioSpec],
    parallel: bool,
) -> Result<Vec<ScoreRow>> {
    if scenarios.is_empty() {
        return Err(Error::Report("no scenarios to evaluate".into()));
    }
    let mut rows = if parallel {
        scenarios
            .par_iter()
            .map(|sc| score_scenario(cfg, agent, sc))
            .collect::<Result<Vec<_>>>()?
    } else {
        scenarios.iter().map(|sc| score_scenario(cfg, agent, sc)).collect::<Result<Vec<_>>>()?
    };
    rows.sort_by(|a, b| (a.level, a.seed).cmp(&(b.level, b.seed)));
    Ok(rows)
}

/// Evaluate while recording a full replayable trace per scenario, one
/// subdirectory per (level, seed).
pub fn record_traces(
    cfg: &Config,
    agent: &LoadedAgent,
    scenarios: &[ScenarioSpec],
    trace_root: &Path,
) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let dir = trace_root.join(format!("{}-seed{:03}", sc.level, sc.seed));
        let meta = TraceMeta {
            seed: sc.seed,
            demand_level: sc.level.to_string(),
            episode_s: sc.duration_s,
            agent: agent.label().to_string(),
            config_hash: cfg.hash(),
        };
        let mut env = JunctionEnv::new(cfg, sc.level, sc.seed, sc.duration_s)?;
        let mut policy = agent.policy(cfg, &env)?;
        let mut recorder = TraceRecorder::create(&dir, cfg, &meta)?;
        let summary = run_traced_episode(&mut env, policy.as_mut(), &mut recorder)?;
        rows.push(ScoreRow {
            agent: agent.label().to_string(),
            level: sc.level,
            seed: sc.seed,
            avg_wait_s: summary.avg_wait_s,
        });
    }
    rows.sort_by(|a, b| (a.level, a.seed).cmp(&(b.level, b.seed)));
    Ok(rows)
}

/// Paired evaluation of several agents over one scenario list, written as
/// scores, summary, plot and meta files under `out_dir`.
pub fn compare_command(
    cfg: &Config,
    specs: &[AgentSpec],
    scenarios: &[ScenarioSpec],
    out_dir: &Path,
    parallel: bool,
) -> Result<Vec<SummaryRow>> {
    if specs.len() < 2 {
        return Err(Error::Report(format!("need at least two agents, got {}", specs.len())));
    }
    let agents = specs.iter().map(|s| LoadedAgent::load(s, cfg)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for agent in &agents {
        rows.extend(evaluate_agent(cfg, agent, scenarios, parallel)?);
    }
    write_report(cfg, &agents, scenarios, rows, out_dir)
}

/// Evaluation of a single agent, same report layout as a comparison. With
/// `trace_out` set, every scenario additionally leaves a replayable trace.
pub fn evaluate_command(
    cfg: &Config,
    spec: &AgentSpec,
    scenarios: &[ScenarioSpec],
    out_dir: &Path,
    parallel: bool,
    trace_out: Option<&Path>,
) -> Result<Vec<SummaryRow>> {
    let agent = LoadedAgent::load(spec, cfg)?;
    let rows = match trace_out {
        Some(root) => record_traces(cfg, &agent, scenarios, root)?,
        None => evaluate_agent(cfg, &agent, scenarios, parallel)?,
    };
    write_report(cfg, &[agent], scenarios, rows, out_dir)
}

fn write_report(
    cfg: &Config,
    agents: &[LoadedAgent],
    scenarios: &[ScenarioSpec],
    rows: Vec<ScoreRow>,
    out_dir: &Path,
) -> Result<Vec<SummaryRow>> {
    check_pairing(&rows)?;
    let summary = summarize(&rows);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("scores.csv"), scores_csv(&rows))?;
    std::fs::write(out_dir.join("summary.csv"), summary_csv(&summary))?;
    std::fs::write(out_dir.join("plot.csv"), plot_csv(&summary))?;
    let agent_refs: Vec<&LoadedAgent> = agents.iter().collect();
    ReportMeta::new(&agent_refs, scenarios, cfg).save(&out_dir.join("meta.json"))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Everything one training run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: u32,
    pub seed: u64,
    pub failed: bool,
    pub episodes_done: u32,
    pub checkpoint: PathBuf,
    pub log: Vec<EpisodeLog>,
}

/// One curriculum training run: Low-demand episodes first, then Medium,
/// then a uniformly mixed tail, with epsilon annealed over the schedule and
/// the target network refreshed every `target_sync_episodes`. A non-finite
/// loss marks the run failed and stops it; the caller carries on with its
/// remaining runs. Deterministic per (config, reward, seed).
pub fn train_run(
    cfg: &Config,
    kind: RewardKind,
    run_seed: u64,
    run_id: u32,
    out_dir: &Path,
) -> Result<RunOutcome> {
    let episodes = cfg.training.episodes;
    let state_dim = cfg.buffer_slices() * SLICE_FEATURES;
    let mut agent = DqnAgent::new(&cfg.agent, state_dim, run_seed);
    let mut explore = stream_rng(run_seed, streams::EXPLORATION);
    let mut replay = stream_rng(run_seed, streams::REPLAY);
    let mut curriculum = stream_rng(run_seed, streams::CURRICULUM);
    let episode_base = derive_seed(run_seed, streams::EPISODE);

    let mut log: Vec<EpisodeLog> = Vec::with_capacity(episodes);
    let mut failed = false;
    for ep in 0..episodes {
        if ep % cfg.agent.target_sync_episodes == 0 {
            agent.sync_target();
        }
        let mix: f64 = curriculum.gen();
        let level = cfg.training.level_for_episode(ep, mix);
        let mut env =
            JunctionEnv::new(cfg, level, derive_seed(episode_base, ep as u64), cfg.training.episode_s)?;
        let epsilon = cfg.agent.epsilon_at(ep, episodes);
        let mut row =
            agent::run_training_episode(&mut env, &mut agent, kind, epsilon, &mut explore, &mut replay)?;
        row.episode = ep as u32;
        row.demand_level = level.to_string();
        let diverged = !row.loss.is_finite();
        log.push(row);
        if diverged {
            failed = true;
            break;
        }
    }

    let stem = format!("{}-run{:02}", kind.name(), run_id);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(format!("{stem}.log.csv")), agent::training_log_csv(&log))?;
    let checkpoint = out_dir.join(format!("{stem}.net"));
    if !failed {
        save_checkpoint(&checkpoint, &agent.params, agent.opt.t)?;
        let meta = CheckpointMeta {
            reward: kind,
            config_hash: cfg.hash(),
            episodes: log.len() as u32,
            seed: run_seed,
            state_dim,
        };
        meta.save(&checkpoint.with_extension("meta.json"))?;
    }
    Ok(RunOutcome {
        run_id,
        seed: run_seed,
        failed,
        episodes_done: log.len() as u32,
        checkpoint,
        log,
    })
}

/// Per-run evaluation scores feeding best-run selection.
#[derive(Debug, Clone)]
pub struct RunEvaluation {
    pub run_id: u32,
    pub failed: bool,
    pub scores: Vec<ScoreRow>,
}

/// Mean of per-level median waits; the ranking key for finished runs.
pub fn selection_score(scores: &[ScoreRow]) -> f64 {
    let mut by_level: std::collections::BTreeMap<DemandLevel, Vec<f64>> =
        std::collections::BTreeMap::new();
    for r in scores {
        by_level.entry(r.level).or_default().push(r.avg_wait_s);
    }
    let medians: Vec<f64> = by_level.values().map(|v| median(v)).collect();
    medians.iter().sum::<f64>() / medians.len() as f64
}

/// The run with the lowest mean of per-level medians; ties go to the lower
/// run id, failed runs never qualify.
pub fn select_best(runs: &[RunEvaluation]) -> Result<u32> {
    runs.iter()
        .filter(|r| !r.failed && !r.scores.is_empty())
        .map(|r| (r.run_id, selection_score(&r.scores)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
        .ok_or_else(|| Error::Report("no successful runs to select from".into()))
}

/// Marker for the selected run, written at the end of a training command.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BestRun {
    pub run_id: u32,
    pub score_s: f64,
    pub checkpoint: String,
    pub config_hash: String,
}

/// What a whole training command leaves behind.
#[derive(Debug)]
pub struct TrainReport {
    pub runs: Vec<RunOutcome>,
    pub best: BestRun,
}

/// Launch `runs` independent training runs of one reward kind, evaluate the
/// survivors on a shared scenario grid, and mark the best. All artifacts
/// land in `out_dir`.
pub fn train_command(
    cfg: &Config,
    kind: RewardKind,
    base_seed: u64,
    runs: usize,
    out_dir: &Path,
    parallel: bool,
) -> Result<TrainReport> {
    if runs == 0 {
        return Err(Error::Report("need at least one training run".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string())?;
    let run_base = derive_seed(base_seed, streams::RUN);

    let train_one = |k: usize| train_run(cfg, kind, derive_seed(run_base, k as u64), k as u32, out_dir);
    let outcomes: Vec<RunOutcome> = if parallel {
        (0..runs).into_par_iter().map(train_one).collect::<Result<Vec<_>>>()?
    } else {
        (0..runs).map(train_one).collect::<Result<Vec<_>>>()?
    };

    let seeds: Vec<u64> = (0..cfg.training.selection_seeds).collect();
    let scenarios = scenario_grid(&DemandLevel::ALL, &seeds, cfg.training.episode_s);
    let mut evals = Vec::with_capacity(outcomes.len());
    let mut selection_rows = Vec::new();
    for o in &outcomes {
        let scores = if o.failed {
            Vec::new()
        } else {
            let agent = LoadedAgent::load(&AgentSpec::Checkpoint(o.checkpoint.clone()), cfg)?;
            evaluate_agent(cfg, &agent, &scenarios, parallel)?
        };
        selection_rows.extend(scores.iter().cloned());
        evals.push(RunEvaluation { run_id: o.run_id, failed: o.failed, scores });
    }
    std::fs::write(out_dir.join("selection.csv"), scores_csv(&selection_rows))?;

    let mut manifest = String::from("run,seed,status,episodes,checkpoint\n");
    for o in &outcomes {
        let status = if o.failed { "failed" } else { "ok" };
        let file = if o.failed {
            String::new()
        } else {
            o.checkpoint.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
        };
        let _ = writeln!(manifest, "{},{},{},{},{}", o.run_id, o.seed, status, o.episodes_done, file);
    }
    std::fs::write(out_dir.join("runs.csv"), manifest)?;

    let best_id = select_best(&evals)?;
    let best_eval = evals.iter().find(|e| e.run_id == best_id).expect("selected run exists");
    let best_outcome = outcomes.iter().find(|o| o.run_id == best_id).expect("selected run exists");
    let best = BestRun {
        run_id: best_id,
        score_s: selection_score(&best_eval.scores),
        checkpoint: best_outcome
            .checkpoint
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config_hash: cfg.hash(),
    };
    let json = serde_json::to_string_pretty(&best)
        .map_err(|e| Error::Report(format!("best-run encode failed: {e}")))?;
    std::fs::write(out_dir.join("best.json"), json)?;
    Ok(TrainReport { runs: outcomes, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(agent: &str, level: DemandLevel, seed: u64, w: f64) -> ScoreRow {
        ScoreRow { agent: agent.into(), level, seed, avg_wait_s: w }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.75), 3.25);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&[7.0], 0.25), 7.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn summaries_group_and_sort_by_agent_and_level() {
        let rows = vec![
            row("b", DemandLevel::Medium, 0, 4.0),
            row("a", DemandLevel::Low, 0, 1.0),
            row("a", DemandLevel::Low, 1, 3.0),
            row("b", DemandLevel::Low, 0, 2.0),
        ];
        let s = summarize(&rows);
        let keys: Vec<(String, DemandLevel)> = s.iter().map(|r| (r.agent.clone(), r.level)).collect();
        assert_eq!(
            keys,
            vec![
                ("a".to_string(), DemandLevel::Low),
                ("b".to_string(), DemandLevel::Low),
                ("b".to_string(), DemandLevel::Medium),
            ]
        );
        assert_eq!(s[0].median_s, 2.0);
        assert_eq!(s[0].mean_s, 2.0);
    }

    #[test]
    fn pairing_rejects_mismatched_seed_sets() {
        let ok = vec![
            row("a", DemandLevel::Low, 0, 1.0),
            row("a", DemandLevel::Low, 1, 1.0),
            row("b", DemandLevel::Low, 0, 1.0),
            row("b", DemandLevel::Low, 1, 1.0),
        ];
        check_pairing(&ok).unwrap();
        let bad = vec![
            row("a", DemandLevel::Low, 0, 1.0),
            row("b", DemandLevel::Low, 1, 1.0),
        ];
        assert!(matches!(check_pairing(&bad), Err(Error::Report(_))));
    }

    #[test]
    fn best_run_selection_follows_mean_of_medians_with_ties_to_lower_id() {
        let runs = vec![
            RunEvaluation {
                run_id: 0,
                failed: false,
                scores: vec![row("r", DemandLevel::Low, 0, 10.0), row("r", DemandLevel::High, 0, 20.0)],
            },
            RunEvaluation {
                run_id: 1,
                failed: false,
                scores: vec![row("r", DemandLevel::Low, 0, 5.0), row("r", DemandLevel::High, 0, 19.0)],
            },
            RunEvaluation {
                run_id: 2,
                failed: true,
                scores: vec![row("r", DemandLevel::Low, 0, 0.0), row("r", DemandLevel::High, 0, 0.0)],
            },
        ];
        assert_eq!(select_best(&runs).unwrap(), 1);

        let tied = vec![
            RunEvaluation { run_id: 3, failed: false, scores: vec![row("r", DemandLevel::Low, 0, 7.0)] },
            RunEvaluation { run_id: 1, failed: false, scores: vec![row("r", DemandLevel::Low, 0, 7.0)] },
        ];
        assert_eq!(select_best(&tied).unwrap(), 1);

        let all_failed =
            vec![RunEvaluation { run_id: 0, failed: true, scores: Vec::new() }];
        assert!(matches!(select_best(&all_failed), Err(Error::Report(_))));
    }

    #[test]
    fn parallel_and_serial_evaluation_agree() {
        let cfg = Config::default();
        let agent = LoadedAgent::load(&AgentSpec::MaxOccupancy, &cfg).unwrap();
        let scenarios = scenario_grid(&[DemandLevel::Low], &[0, 1, 2], 300.0);
        let serial = evaluate_agent(&cfg, &agent, &scenarios, false).unwrap();
        let parallel = evaluate_agent(&cfg, &agent, &scenarios, true).unwrap();
        assert_eq!(serial, parallel);
        assert!(serial.iter().all(|r| r.avg_wait_s.is_finite()));
    }

    #[test]
    fn reports_pair_baselines_over_identical_scenarios() {
        let cfg = Config::default();
        let dir = tempfile::tempdir().unwrap();
        let scenarios = scenario_grid(&[DemandLevel::Low], &[0, 1], 300.0);
        let summary = compare_command(
            &cfg,
            &[AgentSpec::MaxOccupancy, AgentSpec::SystemD],
            &scenarios,
            dir.path(),
            false,
        )
        .unwrap();
        assert_eq!(summary.len(), 2);
        for name in ["scores.csv", "summary.csv", "plot.csv", "meta.json"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert_eq!(scores.lines().count(), 1 + 4);
        assert!(scores.starts_with("agent,demand_level,seed,avg_wait_s\n"));
        let meta: ReportMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap())
                .unwrap();
        assert_eq!(meta.config_hash, cfg.hash());
        assert_eq!(meta.seeds, vec![0, 1]);
    }

    #[test]
    fn traced_evaluation_scores_match_plain_evaluation() {
        let cfg = Config::default();
        let spec = AgentSpec::SystemD;
        let scenarios = scenario_grid(&[DemandLevel::Low], &[4], 300.0);
        let traced_dir = tempfile::tempdir().unwrap();
        let traces = tempfile::tempdir().unwrap();
        let traced =
            evaluate_command(&cfg, &spec, &scenarios, traced_dir.path(), false, Some(traces.path()))
                .unwrap();
        let plain_dir = tempfile::tempdir().unwrap();
        let plain = evaluate_command(&cfg, &spec, &scenarios, plain_dir.path(), false, None).unwrap();
        assert_eq!(traced, plain);
        assert!(traces.path().join("low-seed004").join("decisions.csv").exists());
    }

    fn tiny_training_config() -> Config {
        let mut cfg = Config::default();
        cfg.agent.hidden_layers = vec![8];
        cfg.training.episodes = 5;
        cfg.training.episode_s = 120.0;
        cfg.training.selection_seeds = 1;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn training_runs_leave_checkpoint_log_and_metadata() {
        let cfg = tiny_training_config();
        let dir = tempfile::tempdir().unwrap();
        let out = train_run(&cfg, RewardKind::Queue, 11, 0, dir.path()).unwrap();
        assert!(!out.failed);
        assert_eq!(out.episodes_done, 5);
        assert!(out.checkpoint.exists());
        let meta = CheckpointMeta::load(&out.checkpoint.with_extension("meta.json")).unwrap();
        assert_eq!(meta.reward, RewardKind::Queue);
        assert_eq!(meta.state_dim, cfg.buffer_slices() * SLICE_FEATURES);
        let log = std::fs::read_to_string(dir.path().join("queue-run00.log.csv")).unwrap();
        assert_eq!(log.lines().count(), 1 + 5);
    }

    #[test]
    fn identical_seeds_reproduce_checkpoints_byte_for_byte() {
        let cfg = tiny_training_config();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out_a = train_run(&cfg, RewardKind::AvgSpeed, 42, 0, a.path()).unwrap();
        let out_b = train_run(&cfg, RewardKind::AvgSpeed, 42, 0, b.path()).unwrap();
        let bytes_a = std::fs::read(&out_a.checkpoint).unwrap();
        let bytes_b = std::fs::read(&out_b.checkpoint).unwrap();
        assert_eq!(bytes_a, bytes_b);
        for (ra, rb) in out_a.log.iter().zip(&out_b.log) {
            assert_eq!(ra.cumulative_reward, rb.cumulative_reward);
            assert_eq!(ra.loss, rb.loss);
        }
    }

    #[test]
    fn curriculum_phases_show_up_in_the_log() {
        let mut cfg = tiny_training_config();
        cfg.training.episodes = 10;
        let dir = tempfile::tempdir().unwrap();
        let out = train_run(&cfg, RewardKind::Queue, 3, 0, dir.path()).unwrap();
        let levels: Vec<&str> = out.log.iter().map(|r| r.demand_level.as_str()).collect();
        assert_eq!(&levels[..4], &["low"; 4]);
        assert_eq!(&levels[4..7], &["medium"; 3]);
        for l in &levels[7..] {
            assert!(["low", "medium", "high"].contains(l));
        }
    }

    #[test]
    fn a_training_command_selects_a_best_run() {
        let cfg = tiny_training_config();
        let dir = tempfile::tempdir().unwrap();
        let report = train_command(&cfg, RewardKind::Queue, 7, 2, dir.path(), false).unwrap();
        assert_eq!(report.runs.len(), 2);
        assert!(report.best.run_id < 2);
        assert!(report.best.score_s.is_finite());
        for name in ["config.toml", "runs.csv", "selection.csv", "best.json"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let best_path = dir.path().join(&report.best.checkpoint);
        let loaded = LoadedAgent::load(&AgentSpec::Checkpoint(best_path), &cfg).unwrap();
        assert!(loaded.label().starts_with("queue-run"));
    }

    #[test]
    fn checkpoints_with_foreign_state_layouts_are_refused() {
        let cfg = Config::default();
        let dir = tempfile::tempdir().unwrap();
        let mut rng = stream_rng(5, streams::NET_INIT);
        let params = MlpParams::he_uniform(&[12, 6, N_ACTIONS], &mut rng);
        let path = dir.path().join("foreign.net");
        save_checkpoint(&path, &params, 0).unwrap();
        let Err(err) = LoadedAgent::load(&AgentSpec::Checkpoint(path), &cfg) else {
            panic!("foreign checkpoint was accepted");
        };
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn agent_specs_parse_keywords_and_paths() {
        assert_eq!(AgentSpec::parse("max-occupancy"), AgentSpec::MaxOccupancy);
        assert_eq!(AgentSpec::parse("system-d"), AgentSpec::SystemD);
        assert_eq!(
            AgentSpec::parse("out/avg-speed-run03.net"),
            AgentSpec::Checkpoint(PathBuf::from("out/avg-speed-run03.net"))
        );
    }
}
