use serde::{Deserialize, Serialize};

use crate::node::SECONDS_PER_DAY;

/// Daily wake window `[from_s, to_s)` in seconds after midnight; wraps past
/// midnight when `from_s > to_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutyWindow {
    pub from_s: u32,
    pub to_s: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DutySchedule {
    /// Awake around the clock; the quiet timeout does not apply.
    pub always_on: bool,
    pub windows: Vec<DutyWindow>,
}

impl DutySchedule {
    pub fn always_on() -> Self {
        Self {
            always_on: true,
            windows: Vec::new(),
        }
    }

    pub fn windows(windows: impl IntoIterator<Item = (u32, u32)>) -> Self {
        Self {
            always_on: false,
            windows: windows
                .into_iter()
                .map(|(from_s, to_s)| DutyWindow { from_s, to_s })
                .collect(),
        }
    }

    /// Absolute start time of the window containing `now`, if any.
    pub fn window_start(&self, now: u64) -> Option<u64> {
        if self.always_on {
            return Some(0);
        }
        let day = now / SECONDS_PER_DAY;
        let tod = now % SECONDS_PER_DAY;
        self.windows.iter().find_map(|w| {
            let (from, to) = (w.from_s as u64, w.to_s as u64);
            if from <= to {
                (from <= tod && tod < to).then_some(day * SECONDS_PER_DAY + from)
            } else if tod >= from {
                Some(day * SECONDS_PER_DAY + from)
            } else if tod < to {
                Some((day * SECONDS_PER_DAY + from).saturating_sub(SECONDS_PER_DAY))
            } else {
                None
            }
        })
    }

    pub fn scheduled_awake(&self, now: u64) -> bool {
        self.window_start(now).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_and_wrap() {
        let d = DutySchedule::windows([(5 * 3600, 8 * 3600), (22 * 3600, 2 * 3600)]);
        assert_eq!(d.window_start(6 * 3600), Some(5 * 3600));
        assert_eq!(d.window_start(9 * 3600), None);
        assert_eq!(d.window_start(SECONDS_PER_DAY + 3600), Some(22 * 3600));
        assert_eq!(d.window_start(23 * 3600), Some(22 * 3600));
        assert_eq!(d.window_start(8 * 3600), None);
        assert!(DutySchedule::always_on().scheduled_awake(12345));
    }
}
