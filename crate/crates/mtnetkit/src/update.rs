//! State-aware template update policy.
//!
//! Tracking confidence (the raw classification-times-localization product)
//! classifies every frame into one of three states, and the state history
//! decides when the matching template is replaced or rolled back:
//!
//! * **steady** — confidence above `hi`. After `m` *consecutive* steady
//!   frames the template is replaced with the current prediction.
//! * **transient steady** — confidence in `[lo, hi]`. The template is left
//!   alone; the steady run resets, but the unstable count is kept so the
//!   rollback safeguard stays armed.
//! * **unstable** — confidence below `lo`. Once `n` such frames accumulate
//!   (cumulatively, not necessarily consecutively) since the last template
//!   change, the first-frame template is restored. `n = 0` restores on the
//!   first unstable frame.
//!
//! Counters reset only when the template actually changes.

use serde::{Deserialize, Serialize};

/// Thresholds and intervals for the update policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateConfig {
    /// Consecutive steady frames required before the template is replaced.
    pub m: usize,
    /// Accumulated unstable frames tolerated before rollback (0 = rollback
    /// immediately).
    pub n: usize,
    /// Steady threshold: a frame is steady when confidence exceeds this.
    pub hi: f64,
    /// Unstable threshold: a frame is unstable when confidence is below this.
    pub lo: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig { m: 70, n: 2, hi: 0.9, lo: 0.7 }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.m == 0 {
            return Err("update interval m must be at least 1".into());
        }
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0) {
            return Err(format!(
                "thresholds must satisfy 0 < lo < hi < 1, got lo={} hi={}",
                self.lo, self.hi
            ));
        }
        Ok(())
    }
}

/// Classification of the most recent frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Steady,
    TransientSteady,
    Unstable,
}

/// Which template the matcher is currently using.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveTemplate {
    /// The first-frame template.
    Initial,
    /// A template captured from the given frame index.
    Current(usize),
}

/// What the tracker must do with its template after a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Keep,
    ReplaceWithCurrent,
    RestoreInitial,
}

/// Mutable policy state carried across frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateState {
    pub mode: Mode,
    /// Consecutive frames with confidence above `hi`.
    pub steady_run: usize,
    /// Frames with confidence below `lo` since the last template change.
    pub unstable_acc: usize,
    pub active_template: ActiveTemplate,
}

impl Default for UpdateState {
    fn default() -> Self {
        UpdateState {
            mode: Mode::Steady,
            steady_run: 0,
            unstable_acc: 0,
            active_template: ActiveTemplate::Initial,
        }
    }
}

/// Advances the policy by one frame. `frame` is the index recorded when the
/// template is replaced. Confidence outside [0,1] is a caller bug.
pub fn update_step(
    st: &UpdateState,
    conf: f64,
    frame: usize,
    cfg: &UpdateConfig,
) -> (UpdateState, Action) {
    debug_assert!((0.0..=1.0).contains(&conf), "confidence {conf} outside [0,1]");
    let mut next = *st;
    if conf > cfg.hi {
        next.mode = Mode::Steady;
        next.steady_run += 1;
        if next.steady_run == cfg.m {
            next.steady_run = 0;
            next.unstable_acc = 0;
            next.active_template = ActiveTemplate::Current(frame);
            return (next, Action::ReplaceWithCurrent);
        }
        (next, Action::Keep)
    } else if conf >= cfg.lo {
        next.mode = Mode::TransientSteady;
        next.steady_run = 0;
        // unstable_acc deliberately kept: a lukewarm frame pauses the
        // rollback countdown without disarming it.
        (next, Action::Keep)
    } else {
        next.mode = Mode::Unstable;
        next.steady_run = 0;
        next.unstable_acc += 1;
        if next.unstable_acc >= cfg.n.max(1) {
            next.steady_run = 0;
            next.unstable_acc = 0;
            next.active_template = ActiveTemplate::Initial;
            return (next, Action::RestoreInitial);
        }
        (next, Action::Keep)
    }
}

/// Runs [`update_step`] over a whole confidence trace, returning the action
/// at every frame. Frame indices are 0-based positions in the trace.
pub fn run_trace(confs: &[f64], cfg: &UpdateConfig) -> Vec<Action> {
    let mut st = UpdateState::default();
    confs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let (next, action) = update_step(&st, c, i, cfg);
            st = next;
            action
        })
        .collect()
}
