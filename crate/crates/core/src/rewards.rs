//! The twelve reward functions and the demand estimator they share.
//!
//! Every function is a pure map from one action window's statistics (and the
//! demand estimate, for the demand-adjusted kinds) to a scalar. The names
//! here are the stable identifiers used on the command line, in config files
//! and in checkpoint metadata.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::ActionWindowStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    Queue,
    QueueSquared,
    DeltaQueue,
    WaitTime,
    DeltaWaitTime,
    WaitTimeOverDemand,
    TimeLost,
    DeltaTimeLost,
    TimeLostOverDemand,
    AvgSpeed,
    AvgSpeedTimesDemand,
    Throughput,
}

impl RewardKind {
    pub const ALL: [RewardKind; 12] = [
        RewardKind::Queue,
        RewardKind::QueueSquared,
        RewardKind::DeltaQueue,
        RewardKind::WaitTime,
        RewardKind::DeltaWaitTime,
        RewardKind::WaitTimeOverDemand,
        RewardKind::TimeLost,
        RewardKind::DeltaTimeLost,
        RewardKind::TimeLostOverDemand,
        RewardKind::AvgSpeed,
        RewardKind::AvgSpeedTimesDemand,
        RewardKind::Throughput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Queue => "queue",
            RewardKind::QueueSquared => "queue-squared",
            RewardKind::DeltaQueue => "delta-queue",
            RewardKind::WaitTime => "wait-time",
            RewardKind::DeltaWaitTime => "delta-wait-time",
            RewardKind::WaitTimeOverDemand => "wait-time-over-demand",
            RewardKind::TimeLost => "time-lost",
            RewardKind::DeltaTimeLost => "delta-time-lost",
            RewardKind::TimeLostOverDemand => "time-lost-over-demand",
            RewardKind::AvgSpeed => "avg-speed",
            RewardKind::AvgSpeedTimesDemand => "avg-speed-times-demand",
            RewardKind::Throughput => "throughput",
        }
    }

    pub fn needs_demand_estimate(self) -> bool {
        matches!(
            self,
            RewardKind::WaitTimeOverDemand
                | RewardKind::TimeLostOverDemand
                | RewardKind::AvgSpeedTimesDemand
        )
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward kind: {s}")))
    }
}

/// Trailing-window arrival-rate estimate, veh/s, floored away from zero so
/// the demand-adjusted rewards cannot divide by vanishing demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandEstimate {
    pub d_hat: f64,
    pub estimation_window: f64,
}

pub fn estimate_demand(arrivals_in_window: usize, window_s: f64, d_floor: f64) -> DemandEstimate {
    DemandEstimate {
        d_hat: (arrivals_in_window as f64 / window_s).max(d_floor),
        estimation_window: window_s,
    }
}

/// One reward value for one completed action window.
pub fn compute_reward(kind: RewardKind, w: &ActionWindowStats, d: &DemandEstimate) -> f64 {
    let q_now = w.sum_queue_now as f64;
    let q_prev = w.sum_queue_prev as f64;
    match kind {
        RewardKind::Queue => -q_now,
        RewardKind::QueueSquared => -(q_now * q_now),
        RewardKind::DeltaQueue => q_prev - q_now,
        RewardKind::WaitTime => -w.wait_accrued_this_window,
        RewardKind::DeltaWaitTime => w.cum_wait_at_tp - w.cum_wait_at_t,
        RewardKind::WaitTimeOverDemand => -w.wait_accrued_this_window / d.d_hat,
        RewardKind::TimeLost => -w.time_lost_this_window,
        RewardKind::DeltaTimeLost => w.time_lost_prev_window - w.time_lost_this_window,
        RewardKind::TimeLostOverDemand => -w.time_lost_this_window / d.d_hat,
        RewardKind::AvgSpeed => w.avg_speed_ratio_at_t,
        RewardKind::AvgSpeedTimesDemand => d.d_hat * w.avg_speed_ratio_at_t,
        RewardKind::Throughput => w.throughput_this_window as f64,
    }
}
