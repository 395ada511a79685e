//! Nightly roost choice for each node.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::node::SECONDS_PER_DAY;

pub type CampId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityParams {
    /// Probability that a node roosts at a gateway camp after a night out.
    pub p_return: f64,
    /// Probability of moving to a different gateway camp on a returning night.
    pub camp_switch_prob: f64,
    /// Foraging starts at this time of day (motion on, node leaves camp).
    pub forage_start_s: u32,
    /// Foraging ends at this time of day (node arrives at its roost).
    pub forage_end_s: u32,
    /// On a non-returning night, chance of a multi-day trip away.
    pub long_trip_prob: f64,
    /// Inclusive bounds on a long trip's length in days.
    pub long_trip_days: (u32, u32),
    /// Nodes never leave their home camp and never move.
    pub stationary: bool,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            p_return: 1.0,
            camp_switch_prob: 0.0,
            forage_start_s: 19 * 3600,
            forage_end_s: 5 * 3600,
            long_trip_prob: 0.0,
            long_trip_days: (14, 45),
            stationary: false,
        }
    }
}

impl MobilityParams {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, p) in [
            ("p_return", self.p_return),
            ("camp_switch_prob", self.camp_switch_prob),
            ("long_trip_prob", self.long_trip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err((name, format!("probability {p} outside [0, 1]")));
            }
        }
        if self.forage_start_s as u64 >= SECONDS_PER_DAY || self.forage_end_s as u64 >= SECONDS_PER_DAY {
            return Err(("forage_start_s", "foraging times must fall within one day".into()));
        }
        let (lo, hi) = self.long_trip_days;
        if lo == 0 || lo > hi {
            return Err(("long_trip_days", format!("bad range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Per-node mobility state carried from night to night.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMobility {
    /// Gateway camp the node last roosted at (its home at the start).
    pub camp: CampId,
    /// Days before this one are spent away on a long trip.
    pub away_until_day: u64,
}

impl NodeMobility {
    pub fn new(home: CampId) -> Self {
        Self {
            camp: home,
            away_until_day: 0,
        }
    }
}

/// Where the node roosts on the morning of `day`. `None` means outside the
/// reach of every gateway.
pub fn mobility_step<R: Rng>(
    rng: &mut R,
    params: &MobilityParams,
    m: &mut NodeMobility,
    gateway_camps: &[CampId],
    day: u64,
) -> Option<CampId> {
    if day < m.away_until_day {
        return None;
    }
    if rng.random::<f64>() < params.p_return {
        if gateway_camps.len() > 1 && rng.random::<f64>() < params.camp_switch_prob {
            let others: Vec<CampId> = gateway_camps.iter().copied().filter(|c| *c != m.camp).collect();
            m.camp = others[rng.random_range(0..others.len())];
        } else if !gateway_camps.contains(&m.camp) && !gateway_camps.is_empty() {
            m.camp = gateway_camps[0];
        }
        return gateway_camps.contains(&m.camp).then_some(m.camp);
    }
    if params.long_trip_prob > 0.0 && rng.random::<f64>() < params.long_trip_prob {
        let (lo, hi) = params.long_trip_days;
        m.away_until_day = day + rng.random_range(lo..=hi) as u64;
    }
    None
}
