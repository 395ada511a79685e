//! Browser demo: three small experiments over the simulator, exported to
//! JavaScript as functions returning JSON strings. See `www/index.html`.

use std::collections::BTreeMap;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tracknet::node::SECONDS_PER_DAY;
use tracknet::sim::scenario::{standard, DaySpan};
use tracknet::sim::{self, InvalidScenario, RunOptions, Scenario, SimOutput};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HysteresisTrace {
    pub time_h: Vec<f64>,
    pub battery_mv: Vec<u16>,
    pub gps_high: Vec<bool>,
    pub low_mv: u16,
    pub high_mv: u16,
    pub drought_from_day: u32,
    pub drought_days: u32,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntercontactCdf {
    pub days: Vec<u64>,
    pub cdf: Vec<f64>,
    pub intervals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacklogDip {
    pub return_day: u64,
    pub pages: u64,
    pub time_h: Vec<f64>,
    /// State of charge in percent, with the absence and without it.
    pub absent_pct: Vec<f64>,
    pub control_pct: Vec<f64>,
    pub max_dip_pct: f64,
}

fn run(sc: &Scenario) -> Result<SimOutput, InvalidScenario> {
    sim::run(sc, &RunOptions::default())
}

fn bundled(name: &str) -> Scenario {
    Scenario::bundled(name).expect("bundled scenarios parse")
}

/// Battery voltage over a harvest drought and whether the high-rate GPS
/// task was running at each trace point.
pub fn hysteresis_trace(drought_factor: f64, capacity_mj: f64, seed: u64) -> Result<HysteresisTrace, InvalidScenario> {
    let mut sc = bundled("drought");
    sc.seed = seed;
    sc.harvest.droughts[0].factor = drought_factor;
    sc.nodes[0].battery.capacity_mj = capacity_mj;
    let out = run(&sc)?;
    let watch = sc.metrics.hysteresis_watch.expect("drought scenario watches a task");
    let high = standard::GPS_HIGH.to_string();
    let trace = &out.metrics.trace;
    Ok(HysteresisTrace {
        time_h: trace.iter().map(|r| r.time as f64 / 3600.0).collect(),
        battery_mv: trace.iter().map(|r| r.battery_mv).collect(),
        gps_high: trace.iter().map(|r| r.running.split(' ').any(|t| t == high)).collect(),
        low_mv: watch.low_mv,
        high_mv: watch.high_mv,
        drought_from_day: sc.harvest.droughts[0].from_day,
        drought_days: sc.harvest.droughts[0].days,
        violations: out.metrics.hysteresis.map_or(0, |h| h.violations),
    })
}

/// Empirical CDF of days between gateway contacts.
pub fn intercontact_cdf(
    p_return: f64,
    long_trip_prob: f64,
    nodes: u32,
    days: u32,
    seed: u64,
) -> Result<IntercontactCdf, InvalidScenario> {
    let mut sc = bundled("intercontact");
    sc.seed = seed;
    sc.mobility.p_return = p_return;
    sc.mobility.long_trip_prob = long_trip_prob;
    sc.nodes[0].count = nodes;
    sc.duration_days = days;
    let out = run(&sc)?;
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for r in &out.metrics.intercontacts {
        *hist.entry(r.days).or_default() += 1;
    }
    let total = out.metrics.intercontacts.len() as u64;
    let mut acc = 0;
    let mut cdf = Vec::with_capacity(hist.len());
    for n in hist.values() {
        acc += n;
        cdf.push(acc as f64 / total as f64);
    }
    Ok(IntercontactCdf {
        days: hist.into_keys().collect(),
        cdf,
        intervals: total,
    })
}

/// State of charge on the day a node returns from an absence, against the
/// same node that never left.
pub fn backlog_dip(absence_days: u32, seed: u64) -> Result<BacklogDip, InvalidScenario> {
    let mut sc = bundled("long_absence");
    sc.seed = seed;
    sc.nodes[0].absences = vec![DaySpan { from_day: 1, days: absence_days }];
    sc.duration_days = sc.duration_days.max(absence_days + 3);
    let mut control = sc.clone();
    control.nodes[0].absences.clear();
    let absent = run(&sc)?;
    let ctrl = run(&control)?;

    let return_day = 1 + absence_days as u64;
    let capacity = sc.nodes[0].battery.capacity_mj;
    let on_day = |t: u64| t / SECONDS_PER_DAY == return_day;
    let ctrl_at: BTreeMap<u64, f64> = ctrl
        .metrics
        .trace
        .iter()
        .filter(|r| on_day(r.time))
        .map(|r| (r.time, r.charge_mj))
        .collect();
    let mut res = BacklogDip {
        return_day,
        pages: absent.metrics.sessions.iter().filter(|s| on_day(s.time)).map(|s| s.pages).sum(),
        time_h: Vec::new(),
        absent_pct: Vec::new(),
        control_pct: Vec::new(),
        max_dip_pct: 0.0,
    };
    for r in absent.metrics.trace.iter().filter(|r| on_day(r.time)) {
        let Some(c) = ctrl_at.get(&r.time) else { continue };
        let (a, c) = (100.0 * r.charge_mj / capacity, 100.0 * c / capacity);
        res.time_h.push((r.time % SECONDS_PER_DAY) as f64 / 3600.0);
        res.absent_pct.push(a);
        res.control_pct.push(c);
        res.max_dip_pct = res.max_dip_pct.max(c - a);
    }
    Ok(res)
}

fn to_js<T: Serialize>(r: Result<T, InvalidScenario>) -> Result<String, JsError> {
    match r {
        Ok(v) => Ok(serde_json::to_string(&v).expect("results serialize")),
        Err(e) => Err(JsError::new(&e.to_string())),
    }
}

#[wasm_bindgen(js_name = hysteresisTrace)]
pub fn hysteresis_trace_js(drought_factor: f64, capacity_mj: f64, seed: u32) -> Result<String, JsError> {
    to_js(hysteresis_trace(drought_factor, capacity_mj, seed as u64))
}

#[wasm_bindgen(js_name = intercontactCdf)]
pub fn intercontact_cdf_js(p_return: f64, long_trip_prob: f64, nodes: u32, days: u32, seed: u32) -> Result<String, JsError> {
    to_js(intercontact_cdf(p_return, long_trip_prob, nodes, days, seed as u64))
}

#[wasm_bindgen(js_name = backlogDip)]
pub fn backlog_dip_js(absence_days: u32, seed: u32) -> Result<String, JsError> {
    to_js(backlog_dip(absence_days, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gps_high_never_starts_below_the_high_threshold() {
        let t = hysteresis_trace(0.1, 2.3e6, 3).unwrap();
        assert_eq!(t.violations, 0);
        assert!(t.battery_mv.iter().any(|&v| v < t.low_mv));
        for i in 1..t.time_h.len() {
            if t.gps_high[i] && !t.gps_high[i - 1] {
                assert!(t.battery_mv[i - 1] >= t.low_mv, "start at {} h", t.time_h[i]);
            }
        }
        let in_drought = |h: f64| {
            let d = (h / 24.0) as u32;
            d >= t.drought_from_day && d < t.drought_from_day + t.drought_days
        };
        assert!(t.time_h.iter().zip(&t.gps_high).any(|(h, on)| !on && in_drought(*h)));
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let c = intercontact_cdf(0.7, 0.03, 5, 60, 1).unwrap();
        assert!(c.intervals > 0);
        assert!(c.days.windows(2).all(|w| w[0] < w[1]));
        assert!(c.cdf.windows(2).all(|w| w[0] <= w[1]));
        assert!((c.cdf.last().unwrap() - 1.0).abs() < 1e-12);

        let always = intercontact_cdf(1.0, 0.0, 2, 10, 1).unwrap();
        assert_eq!(always.days, vec![1]);
    }

    #[test]
    fn backlog_day_sits_below_control() {
        let d = backlog_dip(23, 5).unwrap();
        assert_eq!(d.return_day, 24);
        assert!(d.pages > 0);
        assert!(d.max_dip_pct > 10.0, "{}", d.max_dip_pct);
        assert_eq!(d.time_h.len(), d.absent_pct.len());
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let err = intercontact_cdf(1.5, 0.0, 1, 10, 1).unwrap_err();
        assert!(err.to_string().contains("mobility.p_return"));
        assert!(backlog_dip(5, 1).is_ok());
        assert!(hysteresis_trace(0.1, -1.0, 1).is_err());
    }
}
