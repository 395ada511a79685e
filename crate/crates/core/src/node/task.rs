//! Rule-based sensing tasks.
//!
//! A task starts when every entry condition holds and stops when any exit
//! condition holds. Hysteresis comes from choosing asymmetric thresholds for
//! the two lists; the scheduler itself keeps no memory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::battery::{Activity, SECONDS_PER_DAY};
use crate::tdf::PADDING_TYPE_ID;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    /// Time of day in `[from_s, to_s)`; wraps past midnight when `from_s > to_s`.
    TimeOfDay { from_s: u32, to_s: u32 },
    BatteryAtLeast { mv: u16 },
    BatteryBelow { mv: u16 },
    Motion { moving: bool },
    SamplesAtLeast { count: u32 },
}

/// Inputs a condition is evaluated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskContext {
    pub time_of_day_s: u32,
    pub battery_mv: u16,
    pub motion: bool,
    /// Samples taken since the task started; zero for tasks not running.
    pub samples_taken: u32,
}

impl Condition {
    pub fn holds(&self, ctx: &TaskContext) -> bool {
        match *self {
            Condition::TimeOfDay { from_s, to_s } => {
                let t = ctx.time_of_day_s;
                if from_s <= to_s {
                    from_s <= t && t < to_s
                } else {
                    t >= from_s || t < to_s
                }
            }
            Condition::BatteryAtLeast { mv } => ctx.battery_mv >= mv,
            Condition::BatteryBelow { mv } => ctx.battery_mv < mv,
            Condition::Motion { moving } => ctx.motion == moving,
            Condition::SamplesAtLeast { count } => ctx.samples_taken >= count,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            Condition::TimeOfDay { from_s, to_s }
                if from_s as u64 >= SECONDS_PER_DAY || to_s as u64 > SECONDS_PER_DAY =>
            {
                Err(format!("time window {from_s}..{to_s} outside one day"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task_id: u16,
    pub type_id: u16,
    pub sample_period_s: u32,
    #[serde(default)]
    pub entry: Vec<Condition>,
    #[serde(default)]
    pub exit: Vec<Condition>,
    #[serde(default)]
    pub priority: u8,
    /// Power draw while the task runs.
    #[serde(default = "default_activity")]
    pub activity: Activity,
}

fn default_activity() -> Activity {
    Activity::SensorSample
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid task config {task_id}: {reason}")]
pub struct InvalidTaskConfig {
    pub task_id: u16,
    pub reason: String,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), InvalidTaskConfig> {
        let bad = |reason: String| InvalidTaskConfig {
            task_id: self.task_id,
            reason,
        };
        if self.sample_period_s == 0 {
            return Err(bad("sample period must be positive".into()));
        }
        if self.type_id == PADDING_TYPE_ID {
            return Err(bad("type id 0xffff is reserved".into()));
        }
        if self.entry.len() > u8::MAX as usize || self.exit.len() > u8::MAX as usize {
            return Err(bad("too many conditions".into()));
        }
        for c in self.entry.iter().chain(&self.exit) {
            c.validate().map_err(bad)?;
        }
        Ok(())
    }

    pub fn entry_holds(&self, ctx: &TaskContext) -> bool {
        self.entry.iter().all(|c| c.holds(ctx))
    }

    pub fn exit_holds(&self, ctx: &TaskContext) -> bool {
        self.exit.iter().any(|c| c.holds(ctx))
    }

    /// FNV-1a over the task's radio encoding.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        super::rpc::write_task(&mut bytes, self);
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// Checks a task set for per-task validity and unique ids.
pub fn validate_task_set(tasks: &[TaskConfig]) -> Result<(), InvalidTaskConfig> {
    let mut seen = std::collections::BTreeSet::new();
    for t in tasks {
        t.validate()?;
        if !seen.insert(t.task_id) {
            return Err(InvalidTaskConfig {
                task_id: t.task_id,
                reason: "duplicate task id".into(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskTransition {
    Start(u16),
    Stop(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunningTask {
    pub samples_taken: u32,
    pub next_sample_at: u64,
}

/// Computes transitions for one scheduler pass. Stops come first, then
/// starts, each in ascending task id order.
pub fn evaluate(
    tasks: &BTreeMap<u16, TaskConfig>,
    running: &BTreeMap<u16, RunningTask>,
    base: TaskContext,
) -> Vec<TaskTransition> {
    let mut stops = Vec::new();
    let mut starts = Vec::new();
    for (id, task) in tasks {
        match running.get(id) {
            Some(r) => {
                let ctx = TaskContext {
                    samples_taken: r.samples_taken,
                    ..base
                };
                if task.exit_holds(&ctx) {
                    stops.push(TaskTransition::Stop(*id));
                }
            }
            None => {
                let ctx = TaskContext {
                    samples_taken: 0,
                    ..base
                };
                if task.entry_holds(&ctx) {
                    starts.push(TaskTransition::Start(*id));
                }
            }
        }
    }
    stops.extend(starts);
    stops
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(mv: u16, motion: bool) -> TaskContext {
        TaskContext {
            time_of_day_s: 0,
            battery_mv: mv,
            motion,
            samples_taken: 0,
        }
    }

    #[test]
    fn time_window_wraps() {
        let night = Condition::TimeOfDay {
            from_s: 18 * 3600,
            to_s: 6 * 3600,
        };
        let at = |h: u32| TaskContext {
            time_of_day_s: h * 3600,
            ..ctx(4000, false)
        };
        assert!(night.holds(&at(20)));
        assert!(night.holds(&at(2)));
        assert!(!night.holds(&at(12)));
        assert!(!night.holds(&at(6)));
    }

    #[test]
    fn night_task_not_started_at_noon() {
        let mut tasks = BTreeMap::new();
        tasks.insert(
            1,
            TaskConfig {
                task_id: 1,
                type_id: 1,
                sample_period_s: 60,
                entry: vec![Condition::TimeOfDay {
                    from_s: 18 * 3600,
                    to_s: 6 * 3600,
                }],
                exit: vec![],
                priority: 0,
                activity: Activity::SensorSample,
            },
        );
        let c = TaskContext {
            time_of_day_s: 12 * 3600,
            ..ctx(4000, false)
        };
        assert!(evaluate(&tasks, &BTreeMap::new(), c).is_empty());
    }

    #[test]
    fn stops_before_starts() {
        let mk = |id, entry, exit| TaskConfig {
            task_id: id,
            type_id: 2,
            sample_period_s: 1,
            entry,
            exit,
            priority: 0,
            activity: Activity::GpsLow,
        };
        let mut tasks = BTreeMap::new();
        tasks.insert(1, mk(1, vec![], vec![]));
        tasks.insert(2, mk(2, vec![], vec![Condition::BatteryBelow { mv: 3700 }]));
        let mut running = BTreeMap::new();
        running.insert(2, RunningTask::default());
        assert_eq!(
            evaluate(&tasks, &running, ctx(3600, true)),
            vec![TaskTransition::Stop(2), TaskTransition::Start(1)]
        );
    }

    #[test]
    fn validation() {
        let mut t = TaskConfig {
            task_id: 1,
            type_id: 1,
            sample_period_s: 0,
            entry: vec![],
            exit: vec![],
            priority: 0,
            activity: Activity::Sleep,
        };
        assert!(t.validate().is_err());
        t.sample_period_s = 5;
        assert!(t.validate().is_ok());
        t.entry.push(Condition::TimeOfDay {
            from_s: 90_000,
            to_s: 10,
        });
        assert!(t.validate().is_err());
        t.entry.clear();
        assert!(validate_task_set(&[t.clone(), t]).is_err());
    }
}
