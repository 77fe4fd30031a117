//! Krauss car-following update.
//!
//! The safe speed bounds what a follower may drive this step so that it can
//! always stop behind its leader even if the leader brakes as hard as it can.
//! With the leader's already-updated speed and the pre-move gap, the rule
//! additionally guarantees `v <= leader_speed + gap/dt`, so integrating
//! positions afterwards can never close more than the available gap. The
//! whole collision-freedom argument of the simulation rests on that bound.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CarFollowing {
    pub v_max: f64,
    pub accel: f64,
    pub decel: f64,
    pub dt: f64,
    /// Driver reaction/headway time, s. Must be at least `dt`: the safe
    /// speed shrinks as tau grows, so any tau >= dt stays inside the bound
    /// the collision-freedom argument needs.
    pub tau: f64,
    /// Krauss imperfection sigma; 0 disables the stochastic slowdown.
    pub imperfection: f64,
}

impl CarFollowing {
    /// Largest speed that keeps the follower able to stop behind a leader
    /// travelling at `leader_speed` with `gap` metres of free road between
    /// them. Monotone in both arguments; 0 when the gap is 0 and the leader
    /// stands still.
    pub fn v_safe(&self, leader_speed: f64, gap: f64) -> f64 {
        let bt = self.decel * self.tau;
        let g = gap.max(0.0);
        let disc = bt * bt + leader_speed * leader_speed + 2.0 * self.decel * g;
        (-bt + disc.sqrt()).max(0.0)
    }

    /// One speed update: accelerate toward the limit, cap by the safe speed,
    /// optionally subtract the stochastic imperfection slowdown.
    pub fn next_speed(
        &self,
        v: f64,
        leader_speed: f64,
        gap: f64,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let desired = (v + self.accel * self.dt)
            .min(self.v_max)
            .min(self.v_safe(leader_speed, gap));
        let noise = if self.imperfection > 0.0 {
            self.imperfection * self.accel * self.dt * rng.gen::<f64>()
        } else {
            0.0
        };
        (desired - noise).max(0.0)
    }

    /// Speed update with no leader ahead.
    pub fn free_speed(&self, v: f64, rng: &mut ChaCha8Rng) -> f64 {
        let desired = (v + self.accel * self.dt).min(self.v_max);
        let noise = if self.imperfection > 0.0 {
            self.imperfection * self.accel * self.dt * rng.gen::<f64>()
        } else {
            0.0
        };
        (desired - noise).max(0.0)
    }
}
