//! Poisson arrival schedule.
//!
//! One episode's demand is drawn up front: exponential headways at the total
//! rate, each arrival then assigned an entry arm and a turning movement by
//! independent categorical draws. The schedule is immutable during the
//! episode; the demand estimator and the per-vehicle benchmark both read it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DemandProfile, JunctionConfig, Turn};

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledVehicle {
    pub id: u64,
    pub arm: usize,
    pub movement: Turn,
    /// Scheduled entry time, s from episode start.
    pub time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ArrivalSchedule {
    entries: Vec<ScheduledVehicle>,
}

impl ArrivalSchedule {
    /// Draw a schedule covering `duration_s` seconds.
    pub fn generate(
        profile: &DemandProfile,
        junction: &JunctionConfig,
        duration_s: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let rate_per_s = profile.total_rate_veh_h / 3600.0;
        let mut entries = Vec::new();
        if rate_per_s <= 0.0 {
            return Self { entries };
        }
        let mut t = 0.0f64;
        let mut id = 0u64;
        loop {
            // Inverse-CDF exponential; 1-U keeps the argument in (0, 1].
            let u: f64 = 1.0 - rng.gen::<f64>();
            t += -u.ln() / rate_per_s;
            if t > duration_s {
                break;
            }
            let arm = categorical(&profile.arm_split, rng.gen::<f64>());
            let ratios = &junction.arms[arm].turn_ratios;
            let weights = [ratios.through, ratios.left, ratios.right];
            let movement = Turn::ALL[categorical(&weights, rng.gen::<f64>())];
            entries.push(ScheduledVehicle { id, arm, movement, time: t });
            id += 1;
        }
        Self { entries }
    }

    /// Build a schedule from explicit entries (scripted scenarios, replay).
    pub fn from_entries(mut entries: Vec<ScheduledVehicle>) -> Self {
        entries.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self { entries }
    }

    pub fn entries(&self) -> &[ScheduledVehicle] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Arrivals scheduled in the half-open window (t0, t1].
    pub fn count_scheduled_in(&self, t0: f64, t1: f64) -> usize {
        let lo = self.entries.partition_point(|e| e.time <= t0);
        let hi = self.entries.partition_point(|e| e.time <= t1);
        hi - lo
    }
}

fn categorical(weights: &[f64], draw: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if draw * total < acc {
            return i;
        }
    }
    weights.len() - 1
}
