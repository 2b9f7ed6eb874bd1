//! Approximate oracle: a controller that sees the true future capacity but
//! may only pick bitrates that appear in a reference GCC log, bounding what
//! rearranging logged actions could achieve.

use serde::{Deserialize, Serialize};

use crate::sim::{FeedbackReport, RateController, SessionLog, TickRecord};
use crate::trace::BandwidthTrace;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("oracle action set is empty")]
    EmptyActionSet,
    #[error("safety factor must be in (0, 1], got {0}")]
    BadSafetyFactor(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub horizon_ms: u64,
    pub safety_factor: f64,
    /// Sorted, unique.
    pub action_set: Vec<f64>,
}

impl OracleConfig {
    pub fn new(action_set: Vec<f64>) -> Result<Self, OracleError> {
        let cfg = Self {
            horizon_ms: 1000,
            safety_factor: 0.95,
            action_set: normalize_actions(action_set),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Action set taken from every decision in `log`.
    pub fn from_log(log: &SessionLog) -> Result<Self, OracleError> {
        Self::new(log.ticks.iter().map(|t| t.action_kbps).collect())
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.action_set.is_empty() {
            return Err(OracleError::EmptyActionSet);
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            return Err(OracleError::BadSafetyFactor(self.safety_factor));
        }
        Ok(())
    }
}

fn normalize_actions(mut a: Vec<f64>) -> Vec<f64> {
    a.retain(|v| v.is_finite());
    a.sort_by(f64::total_cmp);
    a.dedup();
    a
}

/// Largest action not above `safety_factor` times the minimum capacity over
/// `[now, now + horizon)`; the smallest action when none fits.
pub fn oracle_decide(trace: &BandwidthTrace, now_ms: u64, cfg: &OracleConfig) -> Result<f64, OracleError> {
    let first = *cfg.action_set.first().ok_or(OracleError::EmptyActionSet)?;
    let budget = cfg.safety_factor * trace.min_capacity(now_ms, now_ms + cfg.horizon_ms);
    let i = cfg.action_set.partition_point(|&a| a <= budget);
    Ok(if i == 0 { first } else { cfg.action_set[i - 1] })
}

#[derive(Debug, Clone)]
pub struct OracleController {
    trace: BandwidthTrace,
    config: OracleConfig,
}

impl OracleController {
    pub fn new(trace: BandwidthTrace, config: OracleConfig) -> Result<Self, OracleError> {
        config.validate()?;
        Ok(Self { trace, config })
    }
}

impl RateController for OracleController {
    fn on_feedback(&mut self, _report: &FeedbackReport) {}

    fn decide(&mut self, now_ms: u64, _telemetry: &[TickRecord]) -> f64 {
        oracle_decide(&self.trace, now_ms, &self.config).expect("validated at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_session, SimConfig};
    use crate::trace::TraceSample;

    #[test]
    fn picks_largest_fitting_action() {
        let trace = BandwidthTrace::constant("c", 2000.0, 10_000).unwrap();
        let cfg = OracleConfig::new(vec![2500.0, 500.0, 1800.0, 1000.0, 1000.0]).unwrap();
        assert_eq!(cfg.action_set, vec![500.0, 1000.0, 1800.0, 2500.0]);
        assert_eq!(oracle_decide(&trace, 0, &cfg).unwrap(), 1800.0);
    }

    #[test]
    fn falls_back_to_smallest() {
        let trace = BandwidthTrace::constant("c", 300.0, 10_000).unwrap();
        let cfg = OracleConfig::new(vec![500.0, 1000.0]).unwrap();
        assert_eq!(oracle_decide(&trace, 0, &cfg).unwrap(), 500.0);
    }

    #[test]
    fn looks_ahead_over_the_horizon() {
        let trace = BandwidthTrace::new(
            "drop",
            vec![
                TraceSample { t_ms: 0, capacity_kbps: 3000.0 },
                TraceSample { t_ms: 5000, capacity_kbps: 600.0 },
            ],
            10_000,
        )
        .unwrap();
        let cfg = OracleConfig::new(vec![500.0, 1000.0, 2500.0]).unwrap();
        assert_eq!(oracle_decide(&trace, 3900, &cfg).unwrap(), 2500.0);
        assert_eq!(oracle_decide(&trace, 4001, &cfg).unwrap(), 500.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert_eq!(OracleConfig::new(vec![]).unwrap_err(), OracleError::EmptyActionSet);
        let mut cfg = OracleConfig::new(vec![1.0]).unwrap();
        cfg.safety_factor = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dense_actions_utilize_constant_link() {
        let cap = 2000.0;
        let trace = BandwidthTrace::constant("c", cap, 60_000).unwrap();
        let cfg = OracleConfig::new((1..=120).map(|i| i as f64 * 50.0).collect()).unwrap();
        let sim = SimConfig {
            codec_noise_sigma: 0.0,
            ..SimConfig::default()
        };
        let mut ctl = OracleController::new(trace.clone(), cfg.clone()).unwrap();
        let log = run_session(&trace, &mut ctl, &sim).unwrap();
        let tail = &log.ticks[log.ticks.len() / 4..];
        let acked = tail.iter().map(|t| t.acked_kbps).sum::<f64>() / tail.len() as f64;
        assert!(acked >= cfg.safety_factor * cap - 50.0, "acked {acked}");
    }
}
