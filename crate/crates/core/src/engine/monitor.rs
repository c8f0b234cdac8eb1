use serde::{Deserialize, Serialize};

use crate::engine::StepRecord;

/// Slack allowed when comparing C-step objectives, relative to their size.
pub const C_STEP_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    /// An L step ended with a higher penalized loss than it started with.
    Warning,
    /// A C step returned a worse point than the one it started from.
    Violation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub step: usize,
    pub task: Option<usize>,
    pub severity: Severity,
    pub message: String,
}

impl std::fmt::Display for MonitorEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "WARNING",
            Severity::Violation => "VIOLATION",
        };
        match self.task {
            Some(t) => write!(f, "{sev} step {} task {t}: {}", self.step, self.message),
            None => write!(f, "{sev} step {}: {}", self.step, self.message),
        }
    }
}

/// Checks the two descent properties of a run.
///
/// The L step must not increase its own objective. Every C step must end at an
/// objective no larger than that of the previous Θ evaluated on the new input;
/// the solvers are exact (or warm-started) so this never fails on a healthy
/// run. The comparison allows `C_STEP_SLACK · max(1, before)` for rounding.
pub fn monitor_check(history: &[StepRecord]) -> Vec<MonitorEvent> {
    let mut events = Vec::new();
    for rec in history {
        if let (Some(before), Some(after)) = (rec.l_loss_before, rec.l_loss_after) {
            if !(after <= before) {
                events.push(MonitorEvent {
                    step: rec.step,
                    task: None,
                    severity: Severity::Warning,
                    message: format!("L step raised the penalized loss from {before:.6e} to {after:.6e}"),
                });
            }
        }
        for (t, (before, after)) in rec.c_objective_before.iter().zip(&rec.c_objective).enumerate() {
            if let Some(before) = *before {
                if !(*after <= before + C_STEP_SLACK * before.abs().max(1.0)) {
                    events.push(MonitorEvent {
                        step: rec.step,
                        task: Some(t),
                        severity: Severity::Violation,
                        message: format!("C step objective rose from {before:.17e} to {after:.17e}"),
                    });
                }
            }
        }
    }
    events
}

pub fn violations(events: &[MonitorEvent]) -> usize {
    events.iter().filter(|e| e.severity == Severity::Violation).count()
}
