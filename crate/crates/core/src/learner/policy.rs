use crate::gcc::{GccConfig, GccController};
use crate::sim::{FeedbackReport, RateController, TickRecord};
use crate::telemetry::{state_from_prefix, WINDOW};

use super::ModelBundle;

/// Runs a trained encoder and actor as the session's rate controller.
///
/// Training states always hold a full window of real ticks, so until the
/// session has `WINDOW` ticks of telemetry the default GCC (which produced
/// the logs) drives, and the policy takes over from there.
#[derive(Debug, Clone)]
pub struct PolicyController {
    model: ModelBundle,
    warmup: GccController,
}

impl PolicyController {
    pub fn new(model: &ModelBundle) -> Self {
        Self::with_warmup(model, GccConfig::default())
    }

    pub fn with_warmup(model: &ModelBundle, gcc: GccConfig) -> Self {
        Self {
            model: model.policy_only(),
            warmup: GccController::new(gcc),
        }
    }
}

impl RateController for PolicyController {
    fn on_feedback(&mut self, report: &FeedbackReport) {
        self.warmup.on_feedback(report);
    }

    fn decide(&mut self, now_ms: u64, telemetry: &[TickRecord]) -> f64 {
        if telemetry.len() < WINDOW {
            return self.warmup.decide(now_ms, telemetry);
        }
        let state = state_from_prefix(telemetry, &self.model.normalizers);
        self.model.act_kbps(&state)
    }
}
