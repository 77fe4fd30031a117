//! Vision-sensor emulation over the approach arms.
//!
//! One detector zone per arm covers the last stretch of road before the stop
//! line. Everything the controller-side code is allowed to know about
//! traffic (occupancy, queues, speeds, per-vehicle waiting) is derived from
//! vehicles inside these zones; the simulator's full state is never exposed
//! to a policy. A vehicle belongs to a zone when its front bumper is past
//! the zone start, while occupancy weighs the part of the body actually
//! inside the zone.

use serde::{Deserialize, Serialize};

use crate::config::{Config, ARM_COUNT};
use crate::sim::Vehicle;

#[derive(Debug, Clone)]
pub struct DetectorZone {
    pub arm: usize,
    pub lanes: usize,
    pub arm_length: f64,
    pub zone_length: f64,
}

impl DetectorZone {
    /// Zone start position along the arm, m.
    pub fn start(&self) -> f64 {
        self.arm_length - self.zone_length
    }

    pub fn contains(&self, v: &Vehicle) -> bool {
        v.pos >= self.start()
    }
}

/// One zone per arm, in arm order.
pub fn zones_from_config(cfg: &Config) -> Vec<DetectorZone> {
    cfg.junction
        .arms
        .iter()
        .enumerate()
        .map(|(arm, spec)| DetectorZone {
            arm,
            lanes: spec.lanes,
            arm_length: spec.length_m,
            zone_length: cfg.sensing.zone_length_m,
        })
        .collect()
}

/// Snapshot of one detector for one step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectorReading {
    pub occupancy: f64,
    pub queue_count: usize,
    pub mean_speed: f64,
    pub flow_count_in_window: usize,
}

/// Fraction of the zone's road surface covered by vehicle bodies.
pub fn read_occupancy<'a>(
    zone: &DetectorZone,
    vehicles: impl Iterator<Item = &'a Vehicle>,
    vehicle_length: f64,
) -> f64 {
    let start = zone.start();
    let end = zone.arm_length;
    let mut covered = 0.0;
    for v in vehicles {
        let overlap = (v.pos.min(end) - (v.pos - vehicle_length).max(start)).max(0.0);
        covered += overlap;
    }
    (covered / (zone.zone_length * zone.lanes as f64)).clamp(0.0, 1.0)
}

/// Vehicles in the zone moving slower than the queue threshold.
pub fn estimate_queue<'a>(
    zone: &DetectorZone,
    vehicles: impl Iterator<Item = &'a Vehicle>,
    v_queue_threshold: f64,
) -> usize {
    vehicles
        .filter(|v| zone.contains(v) && v.speed < v_queue_threshold)
        .count()
}

pub fn zone_population<'a>(
    zone: &DetectorZone,
    vehicles: impl Iterator<Item = &'a Vehicle>,
) -> usize {
    vehicles.filter(|v| zone.contains(v)).count()
}

/// Mean speed of zone vehicles, m/s; 0 for an empty zone.
pub fn mean_zone_speed<'a>(
    zone: &DetectorZone,
    vehicles: impl Iterator<Item = &'a Vehicle>,
) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in vehicles.filter(|v| zone.contains(v)) {
        sum += v.speed;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean of speed/v_max over every zone vehicle; 1.0 when no vehicle is
/// observed (an empty junction flows freely by definition).
pub fn avg_speed_ratio<'a>(
    vehicles_in_zones: impl Iterator<Item = &'a Vehicle>,
    v_max: f64,
) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in vehicles_in_zones {
        sum += v.speed / v_max;
        n += 1;
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Total lifetime stopped time of the vehicles currently observed, s.
pub fn cum_wait<'a>(vehicles_in_zones: impl Iterator<Item = &'a Vehicle>) -> f64 {
    vehicles_in_zones.map(|v| v.stop_time_s).sum()
}

/// Everything the reward functions consume about one action window, plus the
/// window before it for the differenced kinds. Windows are half-open
/// (previous decision, this decision] so consecutive windows tile the
/// episode exactly.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ActionWindowStats {
    pub t_pp: f64,
    pub t_p: f64,
    pub t: f64,
    pub sum_queue_prev: usize,
    pub sum_queue_now: usize,
    /// Stopped time booked by zone vehicles per step, summed over each window, s.
    pub wait_accrued_prev_window: f64,
    pub wait_accrued_this_window: f64,
    /// Lifetime stopped time summed over the vehicles observed at the two
    /// decision instants, s.
    pub cum_wait_at_tp: f64,
    pub cum_wait_at_t: f64,
    pub time_lost_prev_window: f64,
    pub time_lost_this_window: f64,
    pub avg_speed_ratio_at_t: f64,
    pub throughput_this_window: usize,
    pub vehicle_count_at_t: usize,
}

/// Helper for the per-arm slice the state encoder uses: occupancy of all
/// four detectors at the current instant.
pub fn occupancies<'a, F, I>(zones: &[DetectorZone], arm_vehicles: F, vehicle_length: f64) -> [f64; ARM_COUNT]
where
    F: Fn(usize) -> I,
    I: Iterator<Item = &'a Vehicle>,
{
    let mut out = [0.0; ARM_COUNT];
    for zone in zones {
        out[zone.arm] = read_occupancy(zone, arm_vehicles(zone.arm), vehicle_length);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Turn;

    fn zone() -> DetectorZone {
        DetectorZone { arm: 0, lanes: 1, arm_length: 200.0, zone_length: 50.0 }
    }

    fn veh(pos: f64, speed: f64) -> Vehicle {
        Vehicle {
            id: 0,
            arm: 0,
            lane: 0,
            movement: Turn::Through,
            pos,
            speed,
            sched_time: 0.0,
            insert_step: 0,
            stop_time_s: 0.0,
            time_lost_s: 0.0,
            crossed_step: None,
        }
    }

    #[test]
    fn occupancy_of_empty_zone_is_zero() {
        assert_eq!(read_occupancy(&zone(), [].iter(), 4.5), 0.0);
    }

    #[test]
    fn occupancy_of_one_vehicle() {
        let vs = [veh(180.0, 10.0)];
        let occ = read_occupancy(&zone(), vs.iter(), 4.5);
        assert!((occ - 0.09).abs() < 1e-12);
    }

    #[test]
    fn occupancy_clips_at_zone_edges_and_saturates() {
        // Vehicle straddling the zone start: only the inside part counts.
        let vs = [veh(151.0, 10.0)];
        let occ = read_occupancy(&zone(), vs.iter(), 4.5);
        assert!((occ - 1.0 / 50.0).abs() < 1e-12);

        // Bumper-to-bumper full zone clamps to 1.
        let vs: Vec<Vehicle> = (0..12).map(|i| veh(200.0 - i as f64 * 4.5, 0.0)).collect();
        assert_eq!(read_occupancy(&zone(), vs.iter(), 4.5), 1.0);
    }

    #[test]
    fn occupancy_is_monotone_in_vehicles() {
        let mut vs = vec![veh(190.0, 3.0)];
        let a = read_occupancy(&zone(), vs.iter(), 4.5);
        vs.push(veh(170.0, 3.0));
        let b = read_occupancy(&zone(), vs.iter(), 4.5);
        assert!(b >= a);
    }

    #[test]
    fn queue_counts_slow_zone_vehicles_only() {
        let vs = [veh(190.0, 0.2), veh(180.0, 0.3), veh(170.0, 5.0), veh(100.0, 0.0)];
        // The last vehicle idles outside the zone and must not count.
        assert_eq!(estimate_queue(&zone(), vs.iter(), 0.5), 2);
        assert!(estimate_queue(&zone(), vs.iter(), 0.5) <= zone_population(&zone(), vs.iter()));
    }

    #[test]
    fn queue_of_free_flow_is_zero() {
        let vs = [veh(190.0, 13.4), veh(180.0, 13.4)];
        assert_eq!(estimate_queue(&zone(), vs.iter(), 0.5), 0);
    }

    #[test]
    fn speed_ratio_bounds_and_empty_convention() {
        assert_eq!(avg_speed_ratio([].iter(), 13.4), 1.0);
        let stopped = [veh(190.0, 0.0), veh(185.0, 0.0)];
        assert_eq!(avg_speed_ratio(stopped.iter(), 13.4), 0.0);
        let full = [veh(190.0, 13.4)];
        assert_eq!(avg_speed_ratio(full.iter(), 13.4), 1.0);
        let half = [veh(190.0, 13.4), veh(180.0, 0.0)];
        assert!((avg_speed_ratio(half.iter(), 13.4) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mean_zone_speed_ignores_outside_vehicles() {
        let vs = [veh(190.0, 10.0), veh(10.0, 2.0)];
        assert!((mean_zone_speed(&zone(), vs.iter()) - 10.0).abs() < 1e-12);
    }
}
