use serde::{Deserialize, Serialize};

pub const SECONDS_PER_DAY: u64 = 86_400;

/// Power-drawing activities of a mobile node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Sleep,
    Beacon,
    RadioRx,
    GpsHigh,
    GpsLow,
    SensorSample,
    PageTx,
}

impl Activity {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        use Activity::*;
        [Sleep, Beacon, RadioRx, GpsHigh, GpsLow, SensorSample, PageTx]
            .get(code as usize)
            .copied()
    }
}

/// Power draw in milliwatts per activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadTable {
    pub sleep: f64,
    pub beacon: f64,
    pub radio_rx: f64,
    pub gps_high: f64,
    pub gps_low: f64,
    pub sensor_sample: f64,
    pub page_tx: f64,
}

impl Default for LoadTable {
    fn default() -> Self {
        Self {
            sleep: 0.1,
            beacon: 80.0,
            radio_rx: 30.0,
            gps_high: 25.0,
            gps_low: 2.0,
            sensor_sample: 0.5,
            page_tx: 70.0,
        }
    }
}

impl LoadTable {
    pub fn power_mw(&self, a: Activity) -> f64 {
        match a {
            Activity::Sleep => self.sleep,
            Activity::Beacon => self.beacon,
            Activity::RadioRx => self.radio_rx,
            Activity::GpsHigh => self.gps_high,
            Activity::GpsLow => self.gps_low,
            Activity::SensorSample => self.sensor_sample,
            Activity::PageTx => self.page_tx,
        }
    }

    pub fn zero() -> Self {
        Self {
            sleep: 0.0,
            beacon: 0.0,
            radio_rx: 0.0,
            gps_high: 0.0,
            gps_low: 0.0,
            sensor_sample: 0.0,
            page_tx: 0.0,
        }
    }
}

/// Piecewise-linear map from state-of-charge fraction to millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageCurve {
    /// `(fraction, millivolts)` knots sorted by fraction.
    pub points: Vec<(f64, f64)>,
}

impl Default for VoltageCurve {
    fn default() -> Self {
        Self {
            points: vec![(0.0, 3300.0), (1.0, 4100.0)],
        }
    }
}

impl VoltageCurve {
    pub fn is_monotone(&self) -> bool {
        !self.points.is_empty()
            && self
                .points
                .windows(2)
                .all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
    }

    pub fn millivolts(&self, fraction: f64) -> f64 {
        let pts = &self.points;
        let x = fraction.clamp(0.0, 1.0);
        if x <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        pts[pts.len() - 1].1
    }
}

/// Half-sine solar input between sunrise and sunset, scaled per day by a
/// weather factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestProfile {
    pub peak_mw: f64,
    pub sunrise_s: u32,
    pub sunset_s: u32,
    /// Weather-independent trickle input.
    #[serde(default)]
    pub constant_mw: f64,
    /// Factor for day `i`; days past the end use 1.0.
    #[serde(default)]
    pub weather: Vec<f64>,
}

impl Default for HarvestProfile {
    fn default() -> Self {
        Self {
            peak_mw: 200.0,
            sunrise_s: 6 * 3600,
            sunset_s: 18 * 3600,
            constant_mw: 0.0,
            weather: Vec::new(),
        }
    }
}

impl HarvestProfile {
    pub fn none() -> Self {
        Self {
            peak_mw: 0.0,
            ..Self::default()
        }
    }

    pub fn weather_factor(&self, day: u64) -> f64 {
        self.weather.get(day as usize).copied().unwrap_or(1.0)
    }

    fn day_length(&self) -> f64 {
        self.sunset_s.saturating_sub(self.sunrise_s) as f64
    }

    /// Instantaneous harvest at absolute time `t` (seconds since day 0 midnight).
    pub fn power_mw(&self, t: f64) -> f64 {
        let len = self.day_length();
        if len <= 0.0 || self.peak_mw == 0.0 {
            return self.constant_mw;
        }
        let day = (t / SECONDS_PER_DAY as f64).floor();
        let tod = t - day * SECONDS_PER_DAY as f64;
        let x = tod - self.sunrise_s as f64;
        if x <= 0.0 || x >= len {
            return self.constant_mw;
        }
        self.constant_mw + self.peak_mw * self.weather_factor(day as u64) * (std::f64::consts::PI * x / len).sin()
    }

    /// Harvested energy in millijoules over `[t0, t1]`, integrated in closed form.
    pub fn energy_mj(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let trickle = self.constant_mw * (t1 - t0);
        let len = self.day_length();
        if len <= 0.0 || self.peak_mw == 0.0 {
            return trickle;
        }
        let day_s = SECONDS_PER_DAY as f64;
        let first = (t0 / day_s).floor() as u64;
        let last = (t1 / day_s).floor() as u64;
        let k = std::f64::consts::PI / len;
        let mut total = 0.0;
        for day in first..=last {
            let rise = day as f64 * day_s + self.sunrise_s as f64;
            let a = t0.max(rise);
            let b = t1.min(rise + len);
            if b <= a {
                continue;
            }
            let amp = self.peak_mw * self.weather_factor(day);
            total += amp / k * ((k * (a - rise)).cos() - (k * (b - rise)).cos());
        }
        total + trickle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub charge_mj: f64,
    pub capacity_mj: f64,
    pub curve: VoltageCurve,
    pub harvest: HarvestProfile,
    pub loads: LoadTable,
}

impl BatteryModel {
    pub fn new(capacity_mj: f64, initial_fraction: f64) -> Self {
        Self {
            charge_mj: capacity_mj * initial_fraction.clamp(0.0, 1.0),
            capacity_mj,
            curve: VoltageCurve::default(),
            harvest: HarvestProfile::default(),
            loads: LoadTable::default(),
        }
    }

    pub fn fraction(&self) -> f64 {
        if self.capacity_mj <= 0.0 {
            0.0
        } else {
            self.charge_mj / self.capacity_mj
        }
    }

    pub fn millivolts(&self) -> u16 {
        self.curve.millivolts(self.fraction()).round() as u16
    }

    /// Applies a net energy change and clamps to `[0, capacity]`.
    pub fn apply(&mut self, delta_mj: f64) {
        self.charge_mj = (self.charge_mj + delta_mj).clamp(0.0, self.capacity_mj);
    }

    /// Deducts the energy of running `activity` for `seconds`.
    pub fn drain(&mut self, activity: Activity, seconds: f64) -> f64 {
        let e = self.loads.power_mw(activity) * seconds;
        self.apply(-e);
        e
    }
}
