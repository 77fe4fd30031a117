//! The one interface every controller implements, learned or not, plus the
//! episode rollout loop that drives it.
//!
//! A policy sees the environment read-only: it may watch every step (the
//! vehicle-actuated baseline needs a gap timer) and must name a stage at
//! every decision point. All its influence flows back through the signal
//! controller's request path, so no policy can bypass the safety interlock.

use crate::agent::{encode_state, stage_of_action, SLICE_FEATURES};
use crate::config::Stage;
use crate::env::JunctionEnv;
use crate::error::{Error, Result};
use crate::neural::MlpParams;

pub trait Policy {
    /// Called once after every simulation step with the fresh state.
    fn observe_step(&mut self, _env: &JunctionEnv) {}

    /// Called at every decision point; the returned stage is requested.
    fn decide(&mut self, env: &JunctionEnv) -> Result<Stage>;

    fn name(&self) -> String;
}

/// Always requests the same stage. Degenerate reference useful in tests.
pub struct FixedStagePolicy(pub Stage);

impl Policy for FixedStagePolicy {
    fn decide(&mut self, _env: &JunctionEnv) -> Result<Stage> {
        Ok(self.0)
    }

    fn name(&self) -> String {
        format!("fixed-{}", self.0)
    }
}

/// A trained network rolled out greedily: encode the sensor history,
/// forward once, take the argmax action.
pub struct GreedyDqnPolicy {
    params: MlpParams,
    label: String,
}

impl GreedyDqnPolicy {
    pub fn new(params: MlpParams, label: String, expected_slices: usize) -> Result<Self> {
        let want = expected_slices * SLICE_FEATURES;
        if params.input_dim() != want {
            return Err(Error::Checkpoint(format!(
                "network expects {} inputs but the state vector has {want}",
                params.input_dim()
            )));
        }
        Ok(Self { params, label })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }
}

impl Policy for GreedyDqnPolicy {
    fn decide(&mut self, env: &JunctionEnv) -> Result<Stage> {
        let state = encode_state(env.history());
        let q = self.params.forward(&state)?;
        let mut best = 0;
        for (i, &v) in q.iter().enumerate().skip(1) {
            if v > q[best] {
                best = i;
            }
        }
        Ok(stage_of_action(best))
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// What one completed rollout amounts to.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSummary {
    pub avg_wait_s: f64,
    pub decisions: u64,
    pub scheduled: usize,
    pub exited: usize,
}

/// Drive `policy` through the whole episode and report the score.
pub fn run_policy_episode(env: &mut JunctionEnv, policy: &mut dyn Policy) -> Result<RolloutSummary> {
    let mut decisions = 0u64;
    while !env.done() {
        if env.at_decision_point() {
            let stage = policy.decide(env)?;
            env.apply_action(stage)?;
            decisions += 1;
        }
        env.step()?;
        policy.observe_step(env);
    }
    Ok(RolloutSummary {
        avg_wait_s: env.average_wait(),
        decisions,
        scheduled: env.sim().schedule().len(),
        exited: env.sim().boxed_vehicles().len() + env.sim().completed().len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Config, DemandLevel};

    #[test]
    fn fixed_policy_keeps_its_stage_green() {
        let cfg = Config::default();
        let mut env = JunctionEnv::new(&cfg, DemandLevel::Low, 3, 300.0).unwrap();
        let mut policy = FixedStagePolicy(Stage::Two);
        let summary = run_policy_episode(&mut env, &mut policy).unwrap();
        // Holding stage 2, a decision precedes every step once the minimum
        // green of 12 steps has elapsed.
        assert_eq!(summary.decisions, env.episode_steps() - 12);
        assert_eq!(env.controller().current_stage(), Some(Stage::Two));
    }

    #[test]
    fn greedy_policy_rejects_mismatched_networks() {
        let params = MlpParams::zeros(&[32, 8, 2]);
        assert!(GreedyDqnPolicy::new(params, "bad".into(), 20).is_err());
        let params = MlpParams::zeros(&[160, 8, 2]);
        assert!(GreedyDqnPolicy::new(params, "ok".into(), 20).is_ok());
    }

    #[test]
    fn greedy_rollouts_are_deterministic() {
        let cfg = Config::default();
        let mut rng = crate::rng::stream_rng(5, crate::rng::streams::NET_INIT);
        let params = MlpParams::he_uniform(&[160, 32, 2], &mut rng);
        let mut a = JunctionEnv::new(&cfg, DemandLevel::Medium, 9, 600.0).unwrap();
        let mut b = JunctionEnv::new(&cfg, DemandLevel::Medium, 9, 600.0).unwrap();
        let mut pa = GreedyDqnPolicy::new(params.clone(), "net".into(), 20).unwrap();
        let mut pb = GreedyDqnPolicy::new(params, "net".into(), 20).unwrap();
        let sa = run_policy_episode(&mut a, &mut pa).unwrap();
        let sb = run_policy_episode(&mut b, &mut pb).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(sa.avg_wait_s.to_bits(), sb.avg_wait_s.to_bits());
    }
}
