use serde::{Deserialize, Serialize};

/// Linear warm-up from zero to `target_lr`, then cosine decay to
/// `floor_fraction * target_lr`, restarted on every optimizer reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub target_lr: f64,
    pub warmup_steps: u64,
    /// Steps from a reset to the end of the cosine decay.
    pub horizon: u64,
    #[serde(default = "default_floor")]
    pub floor_fraction: f64,
}

fn default_floor() -> f64 {
    0.1
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            target_lr: 3e-3,
            warmup_steps: 2000,
            horizon: 20_000,
            floor_fraction: 0.1,
        }
    }
}

impl LrSchedule {
    /// Learning rate `phase` steps after the most recent reset.
    pub fn lr_at(&self, phase: u64) -> f64 {
        if phase < self.warmup_steps {
            return self.target_lr * phase as f64 / self.warmup_steps as f64;
        }
        let floor = self.floor_fraction * self.target_lr;
        let span = self.horizon.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.target_lr;
        }
        let t = ((phase - self.warmup_steps) as f64 / span as f64).min(1.0);
        floor + (self.target_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Schedule plus the global step of its last reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleClock {
    pub schedule: LrSchedule,
    pub reset_at: u64,
}

impl ScheduleClock {
    pub fn new(schedule: LrSchedule) -> Self {
        Self {
            schedule,
            reset_at: 0,
        }
    }

    pub fn reset(&mut self, global_step: u64) {
        self.reset_at = global_step;
    }

    pub fn lr(&self, global_step: u64) -> f64 {
        self.schedule
            .lr_at(global_step.saturating_sub(self.reset_at))
    }
}
