//! From session logs to learning-ready transitions.
//!
//! A state is the last [`WINDOW`] decision ticks, each reduced to
//! [`N_FEATURES`] normalized features in a fixed order (see
//! [`FEATURE_NAMES`]). Rewards score the second of ticks that follows an
//! action.

mod dataset;
mod drift;

pub use dataset::{read_dataset, read_dataset_file, write_dataset, write_dataset_file, Dataset, Provenance, DATASET_FORMAT_VERSION};
pub use drift::{drift_score, ks_statistic, DriftReport, DEFAULT_DRIFT_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::sim::{SessionLog, TickRecord};

pub const WINDOW: usize = 20;
pub const N_FEATURES: usize = 11;
pub const STATE_LEN: usize = WINDOW * N_FEATURES;
/// Ticks scored by the reward after each action (1 s at 50 ms ticks).
pub const REWARD_HORIZON: usize = 20;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "sent_bitrate",
    "acked_bitrate",
    "prev_action",
    "owd_ms",
    "owd_jitter_ms",
    "interarrival_delay_var",
    "rtt_ms",
    "min_rtt_ms",
    "ticks_since_feedback",
    "loss_fraction",
    "ticks_since_loss_report",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TelemetryError {
    #[error("tick {t} is beyond the end of a {len}-tick log")]
    OutOfRange { t: usize, len: usize },
    #[error("drift needs two non-empty datasets")]
    EmptyInput,
}

/// Fixed per-feature scales; every feature is divided and clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalizers {
    pub bitrate_kbps: f64,
    pub delay_ms: f64,
    pub variance_ms2: f64,
    pub counter_ticks: f64,
}

impl Default for Normalizers {
    fn default() -> Self {
        Self {
            bitrate_kbps: 6000.0,
            delay_ms: 1000.0,
            variance_ms2: 1000.0,
            counter_ticks: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub throughput_norm_kbps: f64,
    pub delay_norm_ms: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 1.0,
            gamma: 1.0,
            throughput_norm_kbps: 6000.0,
            delay_norm_ms: 1000.0,
        }
    }
}

/// `WINDOW x N_FEATURES` row-major, oldest row first, every entry in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<f32>);

impl StateVector {
    pub fn row(&self, k: usize) -> &[f32] {
        &self.0[k * N_FEATURES..(k + 1) * N_FEATURES]
    }

    pub fn last_row(&self) -> &[f32] {
        self.row(WINDOW - 1)
    }

    pub fn is_valid(&self) -> bool {
        self.0.len() == STATE_LEN && self.0.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action_kbps: f32,
    pub reward: f32,
    pub next_state: StateVector,
    pub done: bool,
}

fn unit(x: f64) -> f32 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0) as f32
    }
}

const PADDING_ROW: [f32; N_FEATURES] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];

fn feature_row(rec: &TickRecord, prev_action_kbps: f64, n: &Normalizers) -> [f32; N_FEATURES] {
    [
        unit(rec.sent_kbps / n.bitrate_kbps),
        unit(rec.acked_kbps / n.bitrate_kbps),
        unit(prev_action_kbps / n.bitrate_kbps),
        unit(rec.owd_ms / n.delay_ms),
        unit(rec.owd_jitter_ms / n.delay_ms),
        unit(rec.interarrival_var_ms2 / n.variance_ms2),
        unit(rec.rtt_ms / n.delay_ms),
        unit(rec.min_rtt_ms / n.delay_ms),
        unit(rec.ticks_since_feedback as f64 / n.counter_ticks),
        unit(rec.loss_fraction),
        unit(rec.ticks_since_loss_report as f64 / n.counter_ticks),
    ]
}

/// State at the last tick of `prefix`.
///
/// Only `prefix` is read, so the sender can call this on its live telemetry
/// and get exactly what [`build_state`] gives on the finished log. The
/// `prev_action` feature of a row is the action chosen on the tick before it.
pub fn state_from_prefix(prefix: &[TickRecord], norm: &Normalizers) -> StateVector {
    let mut out = Vec::with_capacity(STATE_LEN);
    let t = prefix.len() as isize - 1;
    for k in (t - WINDOW as isize + 1)..=t {
        if k < 0 {
            out.extend_from_slice(&PADDING_ROW);
        } else {
            let k = k as usize;
            let prev = if k == 0 { 0.0 } else { prefix[k - 1].action_kbps };
            out.extend_from_slice(&feature_row(&prefix[k], prev, norm));
        }
    }
    StateVector(out)
}

pub fn build_state(log: &SessionLog, t: usize, norm: &Normalizers) -> Result<StateVector, TelemetryError> {
    if t >= log.ticks.len() {
        return Err(TelemetryError::OutOfRange { t, len: log.ticks.len() });
    }
    Ok(state_from_prefix(&log.ticks[..=t], norm))
}

/// `alpha * throughput - beta * delay - gamma * loss` over `window`, each
/// term a window mean normalized into [0, 1]. Delay is the RTT.
pub fn compute_reward(window: &[TickRecord], p: &RewardParams) -> f64 {
    assert!(!window.is_empty(), "reward window must be non-empty");
    let n = window.len() as f64;
    let acked = window.iter().map(|r| r.acked_kbps).sum::<f64>() / n;
    let rtt = window.iter().map(|r| r.rtt_ms).sum::<f64>() / n;
    let loss = window.iter().map(|r| r.loss_fraction).sum::<f64>() / n;
    let throughput = (acked / p.throughput_norm_kbps).clamp(0.0, 1.0);
    let delay = (rtt / p.delay_norm_ms).clamp(0.0, 1.0);
    let loss = loss.clamp(0.0, 1.0);
    p.alpha * throughput - p.beta * delay - p.gamma * loss
}

/// One transition per tick `t` in `WINDOW-1 ..= len-1-REWARD_HORIZON`.
pub fn extract_transitions(log: &SessionLog, norm: &Normalizers, reward: &RewardParams) -> Vec<Transition> {
    let len = log.ticks.len();
    if len < WINDOW + REWARD_HORIZON {
        log::warn!("log {} has {len} ticks, too short for any transition", log.trace_id);
        return Vec::new();
    }
    let last = len - 1 - REWARD_HORIZON;
    (WINDOW - 1..=last)
        .map(|t| Transition {
            state: state_from_prefix(&log.ticks[..=t], norm),
            action_kbps: log.ticks[t].action_kbps as f32,
            reward: compute_reward(&log.ticks[t + 1..=t + REWARD_HORIZON], reward) as f32,
            next_state: state_from_prefix(&log.ticks[..=t + 1], norm),
            done: t == last,
        })
        .collect()
}
