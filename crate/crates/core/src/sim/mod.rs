//! Discrete-time simulator of a one-way video call over a trace-driven
//! bottleneck.
//!
//! Every `tick_ms` the simulator moves packets through this pipeline:
//!
//! ```text
//! codec -> pacer -> drop-tail queue -> link (trace capacity) -> propagation -> receiver
//!                                                                              |
//! controller <------------- feedback (lossless, one-way delay) <---------------+
//! ```
//!
//! The controller is consulted once per decision interval and sees the
//! telemetry the sender has accumulated so far.

mod codec;
mod freeze;
mod log;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trace::BandwidthTrace;

pub use codec::Codec;
pub use freeze::{detect_freezes, frozen_ms, FreezeSpan};
pub use log::{read_session_log, read_session_log_file, write_session_log, write_session_log_file, LOG_FORMAT_VERSION};

/// Lowest target bitrate any controller may command.
pub const MIN_KBPS: f64 = 50.0;
/// Highest target bitrate any controller may command.
pub const MAX_KBPS: f64 = 6000.0;
/// Sessions shorter than this are rejected.
pub const MIN_SESSION_MS: u64 = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("trace {id} is {duration_ms} ms long; sessions need at least {MIN_SESSION_MS} ms")]
    TraceTooShort { id: String, duration_ms: u64 },
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub tick_ms: u64,
    pub rtt_ms: u64,
    pub queue_capacity_pkts: usize,
    pub mtu_bytes: u32,
    pub fps: u32,
    pub decision_interval_ms: u64,
    pub feedback_interval_ms: u64,
    pub loss_report_interval_ms: u64,
    pub codec_noise_sigma: f64,
    pub keyframe_interval_frames: u64,
    pub keyframe_size_multiplier: f64,
    pub codec_lag_ms: u64,
    /// Pacer drain rate as a multiple of the commanded target.
    pub pacing_factor: f64,
    /// Independent per-packet loss on top of queue drops.
    pub random_loss: f64,
    pub session_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tick_ms: 5,
            rtt_ms: 100,
            queue_capacity_pkts: 50,
            mtu_bytes: 1200,
            fps: 30,
            decision_interval_ms: 50,
            feedback_interval_ms: 50,
            loss_report_interval_ms: 1000,
            codec_noise_sigma: 0.15,
            keyframe_interval_frames: 300,
            keyframe_size_multiplier: 3.0,
            codec_lag_ms: 100,
            pacing_factor: 2.5,
            random_loss: 0.0,
            session_seed: 0,
        }
    }
}

/// RTT classes a trace can be assigned to.
pub const RTT_CLASSES_MS: [u64; 3] = [40, 100, 160];

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.tick_ms == 0 {
            return bad("tick_ms must be positive");
        }
        for (name, v) in [
            ("feedback_interval_ms", self.feedback_interval_ms),
            ("decision_interval_ms", self.decision_interval_ms),
            ("loss_report_interval_ms", self.loss_report_interval_ms),
        ] {
            if v == 0 || v % self.tick_ms != 0 {
                return Err(SimError::Config(format!("tick_ms must divide {name}")));
            }
        }
        if self.queue_capacity_pkts == 0 {
            return bad("queue_capacity_pkts must be positive");
        }
        if self.mtu_bytes == 0 || self.fps == 0 {
            return bad("mtu_bytes and fps must be positive");
        }
        if !(self.codec_noise_sigma >= 0.0 && self.keyframe_size_multiplier > 0.0 && self.pacing_factor > 0.0) {
            return bad("codec/pacer parameters must be positive");
        }
        if !(0.0..=1.0).contains(&self.random_loss) {
            return bad("random_loss must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn one_way_ms(&self) -> u64 {
        self.rtt_ms / 2
    }
}

/// Per-packet transport feedback as the sender sees it (receiver arrival
/// times joined with the sender's own send history).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketFeedback {
    pub seq: u64,
    pub size_bytes: u32,
    pub send_ts_ms: u64,
    pub arrive_ts_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub gen_ts_ms: u64,
    /// Covered sequence range `[base_seq, end_seq)`. Missing numbers inside
    /// the range were lost.
    pub base_seq: u64,
    pub end_seq: u64,
    pub packets: Vec<PacketFeedback>,
    pub received_bitrate_kbps: f64,
    /// Present only on loss-report boundaries.
    pub loss_fraction: Option<f64>,
    pub rtt_sample_ms: Option<f64>,
}

/// Sender-side statistics for one decision interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t_ms: u64,
    pub sent_kbps: f64,
    pub acked_kbps: f64,
    /// Target chosen at this tick.
    pub action_kbps: f64,
    pub owd_ms: f64,
    pub owd_jitter_ms: f64,
    pub interarrival_var_ms2: f64,
    pub rtt_ms: f64,
    pub min_rtt_ms: f64,
    pub ticks_since_feedback: u32,
    pub loss_fraction: f64,
    pub ticks_since_loss_report: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub capture_ts_ms: u64,
    pub size_bytes: u32,
    pub complete_arrival_ts_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub config: SimConfig,
    pub trace_id: String,
    pub duration_ms: u64,
    pub ticks: Vec<TickRecord>,
    pub frames: Vec<FrameRecord>,
    /// Decisions that were non-finite or out of range and got clamped.
    pub clamped_actions: u32,
}

impl SessionLog {
    pub fn delivered_arrivals(&self) -> Vec<u64> {
        self.frames.iter().filter_map(|f| f.complete_arrival_ts_ms).collect()
    }
}

/// Anything that can steer the sender's target bitrate.
///
/// `telemetry` holds every record so far; the last entry is the current
/// tick, whose `action_kbps` still carries the previous decision.
pub trait RateController {
    fn on_feedback(&mut self, report: &FeedbackReport);
    fn decide(&mut self, now_ms: u64, telemetry: &[TickRecord]) -> f64;
}

impl<C: RateController + ?Sized> RateController for Box<C> {
    fn on_feedback(&mut self, report: &FeedbackReport) {
        (**self).on_feedback(report)
    }
    fn decide(&mut self, now_ms: u64, telemetry: &[TickRecord]) -> f64 {
        (**self).decide(now_ms, telemetry)
    }
}

/// Fixed-rate controller.
#[derive(Debug, Clone, Copy)]
pub struct ConstantController(pub f64);

impl RateController for ConstantController {
    fn on_feedback(&mut self, _report: &FeedbackReport) {}
    fn decide(&mut self, _now_ms: u64, _telemetry: &[TickRecord]) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub seq: u64,
    pub frame_id: u64,
    pub size_bytes: u32,
    pub send_ts_ms: u64,
    pub depart_ts_ms: Option<u64>,
    pub arrive_ts_ms: Option<u64>,
}

/// Cumulative link counters at the end of a simulator tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSnapshot {
    pub t_ms: u64,
    pub sent_bytes: u64,
    pub departed_bytes: u64,
    pub dropped_bytes: u64,
    pub queued_bytes: u64,
    pub queued_pkts: usize,
}

/// Packet-level view of a session, for invariant checks.
#[derive(Debug, Clone, Default)]
pub struct SessionDetail {
    pub packets: Vec<Packet>,
    pub link: Vec<LinkSnapshot>,
}

pub fn run_session<C: RateController + ?Sized>(
    trace: &BandwidthTrace,
    controller: &mut C,
    config: &SimConfig,
) -> Result<SessionLog, SimError> {
    Simulator::new(trace, config)?.run(controller, false).map(|(log, _)| log)
}

pub fn run_session_detailed<C: RateController + ?Sized>(
    trace: &BandwidthTrace,
    controller: &mut C,
    config: &SimConfig,
) -> Result<(SessionLog, SessionDetail), SimError> {
    Simulator::new(trace, config)?.run(controller, true)
}

struct PendingPacket {
    frame_id: u64,
    size_bytes: u32,
}

struct FrameProgress {
    packets_left: u32,
    lost: bool,
}

/// Sender-side accumulators between two decisions.
#[derive(Default)]
struct TelemetryState {
    sent_bytes: u64,
    acked_bytes: u64,
    owd_sum: f64,
    owd_n: u32,
    jitter_sum: f64,
    jitter_n: u32,
    last_owd: Option<f64>,
    gaps: Vec<f64>,
    last_arrival: Option<u64>,
    feedback_seen: bool,
    loss_seen: bool,
    // carried across intervals
    min_owd: f64,
    owd_ms: f64,
    jitter_ms: f64,
    ia_var: f64,
    rtt_ms: f64,
    min_rtt_ms: f64,
    loss: f64,
    since_feedback: u32,
    since_loss: u32,
}

struct Receiver {
    highest_seq: Option<u64>,
    report_base: u64,
    report_packets: Vec<PacketFeedback>,
    report_bytes: u64,
    last_report_ms: u64,
    loss_base: u64,
    loss_received: u64,
}

struct Simulator<'a> {
    trace: &'a BandwidthTrace,
    cfg: &'a SimConfig,
}

impl<'a> Simulator<'a> {
    fn new(trace: &'a BandwidthTrace, cfg: &'a SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        if trace.duration_ms < MIN_SESSION_MS {
            return Err(SimError::TraceTooShort {
                id: trace.id.clone(),
                duration_ms: trace.duration_ms,
            });
        }
        Ok(Self { trace, cfg })
    }

    fn run<C: RateController + ?Sized>(
        &self,
        controller: &mut C,
        keep_detail: bool,
    ) -> Result<(SessionLog, SessionDetail), SimError> {
        let cfg = self.cfg;
        let tick = cfg.tick_ms;
        let one_way = cfg.one_way_ms();
        let duration = self.trace.duration_ms;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.session_seed);
        let mut codec = Codec::new(
            cfg.fps,
            cfg.codec_noise_sigma,
            cfg.keyframe_interval_frames,
            cfg.keyframe_size_multiplier,
            cfg.codec_lag_ms,
        );

        let mut packets: Vec<Packet> = Vec::new();
        let mut frames: Vec<FrameRecord> = Vec::new();
        let mut progress: Vec<FrameProgress> = Vec::new();
        let mut ticks: Vec<TickRecord> = Vec::new();
        let mut link_log = Vec::new();

        let mut pacer: VecDeque<PendingPacket> = VecDeque::new();
        let mut pacer_budget = 0.0f64;
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut queue_bytes = 0u64;
        let mut link_budget = 0.0f64;
        let mut in_flight: VecDeque<usize> = VecDeque::new();
        let mut feedback_channel: VecDeque<(u64, FeedbackReport)> = VecDeque::new();

        let (mut sent_total, mut departed_total, mut dropped_total) = (0u64, 0u64, 0u64);
        let mut target = f64::NAN;
        let mut clamped_actions = 0u32;
        let mut next_frame = 0u64;
        let mut tel = TelemetryState {
            min_owd: f64::INFINITY,
            min_rtt_ms: f64::INFINITY,
            ..Default::default()
        };
        let mut rx = Receiver {
            highest_seq: None,
            report_base: 0,
            report_packets: Vec::new(),
            report_bytes: 0,
            last_report_ms: 0,
            loss_base: 0,
            loss_received: 0,
        };

        let mut t = 0u64;
        while t < duration {
            // Receiver: take delivered packets.
            while let Some(&idx) = in_flight.front() {
                let p = packets[idx];
                let Some(arrive) = p.arrive_ts_ms.filter(|a| *a <= t) else {
                    break;
                };
                in_flight.pop_front();
                let fp = &mut progress[p.frame_id as usize];
                fp.packets_left -= 1;
                if fp.packets_left == 0 && !fp.lost {
                    frames[p.frame_id as usize].complete_arrival_ts_ms = Some(arrive);
                }
                rx.highest_seq = Some(p.seq);
                rx.loss_received += 1;
                rx.report_bytes += p.size_bytes as u64;
                rx.report_packets.push(PacketFeedback {
                    seq: p.seq,
                    size_bytes: p.size_bytes,
                    send_ts_ms: p.send_ts_ms,
                    arrive_ts_ms: arrive,
                });
            }

            // Receiver: transport feedback and loss reports.
            if t > 0 && t % cfg.feedback_interval_ms == 0 {
                let loss_due = t % cfg.loss_report_interval_ms == 0;
                let end_seq = rx.highest_seq.map_or(0, |s| s + 1);
                let loss_fraction = if loss_due && end_seq > rx.loss_base {
                    let expected = end_seq - rx.loss_base;
                    let lf = 1.0 - rx.loss_received as f64 / expected as f64;
                    rx.loss_base = end_seq;
                    rx.loss_received = 0;
                    Some(lf.clamp(0.0, 1.0))
                } else {
                    None
                };
                if !rx.report_packets.is_empty() || loss_fraction.is_some() {
                    let span = (t - rx.last_report_ms).max(1);
                    let pkts = std::mem::take(&mut rx.report_packets);
                    let rtt_sample_ms = pkts.last().map(|p| (p.arrive_ts_ms - p.send_ts_ms + one_way) as f64);
                    let report = FeedbackReport {
                        gen_ts_ms: t,
                        base_seq: rx.report_base,
                        end_seq: end_seq.max(rx.report_base),
                        packets: pkts,
                        received_bitrate_kbps: rx.report_bytes as f64 * 8.0 / span as f64,
                        loss_fraction,
                        rtt_sample_ms,
                    };
                    rx.report_base = report.end_seq;
                    rx.report_bytes = 0;
                    rx.last_report_ms = t;
                    feedback_channel.push_back((t + one_way, report));
                }
            }

            // Sender: consume feedback that has arrived.
            while feedback_channel.front().is_some_and(|(at, _)| *at <= t) {
                let (_, report) = feedback_channel.pop_front().unwrap();
                tel.absorb(&report);
                controller.on_feedback(&report);
            }

            // Sender: decide.
            if t % cfg.decision_interval_ms == 0 {
                let record = tel.close_interval(t, cfg.decision_interval_ms, if target.is_nan() { 0.0 } else { target });
                ticks.push(record);
                let raw = controller.decide(t, &ticks);
                let chosen = if raw.is_finite() && raw > 0.0 {
                    raw.clamp(MIN_KBPS, MAX_KBPS)
                } else {
                    MIN_KBPS
                };
                if chosen != raw {
                    clamped_actions += 1;
                    ::log::debug!("clamped controller output {raw} to {chosen} at {t} ms");
                }
                target = chosen;
                ticks.last_mut().unwrap().action_kbps = chosen;
            }

            // Encoder: frames captured by now.
            while capture_ts(next_frame, cfg.fps) <= t {
                let size = codec.frame_size(target, next_frame, &mut rng);
                let n_pkts = size.div_ceil(cfg.mtu_bytes);
                for k in 0..n_pkts {
                    let sz = if k + 1 == n_pkts { size - k * cfg.mtu_bytes } else { cfg.mtu_bytes };
                    pacer.push_back(PendingPacket {
                        frame_id: next_frame,
                        size_bytes: sz,
                    });
                }
                frames.push(FrameRecord {
                    frame_id: next_frame,
                    capture_ts_ms: capture_ts(next_frame, cfg.fps),
                    size_bytes: size,
                    complete_arrival_ts_ms: None,
                });
                progress.push(FrameProgress {
                    packets_left: n_pkts,
                    lost: false,
                });
                next_frame += 1;
            }

            // Pacer: release onto the network.
            pacer_budget += cfg.pacing_factor * target * tick as f64 / 8.0;
            while pacer_budget > 0.0 {
                let Some(pp) = pacer.pop_front() else { break };
                pacer_budget -= pp.size_bytes as f64;
                let idx = packets.len();
                packets.push(Packet {
                    seq: idx as u64,
                    frame_id: pp.frame_id,
                    size_bytes: pp.size_bytes,
                    send_ts_ms: t,
                    depart_ts_ms: None,
                    arrive_ts_ms: None,
                });
                sent_total += pp.size_bytes as u64;
                tel.sent_bytes += pp.size_bytes as u64;
                let randomly_lost = cfg.random_loss > 0.0 && rng.random::<f64>() < cfg.random_loss;
                if queue.len() >= cfg.queue_capacity_pkts || randomly_lost {
                    dropped_total += pp.size_bytes as u64;
                    progress[pp.frame_id as usize].lost = true;
                    progress[pp.frame_id as usize].packets_left -= 1;
                } else {
                    queue.push_back(idx);
                    queue_bytes += pp.size_bytes as u64;
                }
            }
            if pacer.is_empty() {
                pacer_budget = pacer_budget.min(0.0);
            }

            // Link: serve this tick's capacity.
            link_budget += self.trace.integrate_bits(t, t + tick) / 8.0;
            while let Some(&idx) = queue.front() {
                let size = packets[idx].size_bytes as f64;
                if link_budget < size {
                    break;
                }
                link_budget -= size;
                queue.pop_front();
                queue_bytes -= packets[idx].size_bytes as u64;
                departed_total += packets[idx].size_bytes as u64;
                packets[idx].depart_ts_ms = Some(t + tick);
                packets[idx].arrive_ts_ms = Some(t + tick + one_way);
                in_flight.push_back(idx);
            }
            link_budget = link_budget.min(cfg.mtu_bytes as f64);

            if keep_detail {
                link_log.push(LinkSnapshot {
                    t_ms: t,
                    sent_bytes: sent_total,
                    departed_bytes: departed_total,
                    dropped_bytes: dropped_total,
                    queued_bytes: queue_bytes,
                    queued_pkts: queue.len(),
                });
            }
            t += tick;
        }

        let log = SessionLog {
            config: cfg.clone(),
            trace_id: self.trace.id.clone(),
            duration_ms: duration,
            ticks,
            frames,
            clamped_actions,
        };
        let detail = if keep_detail {
            SessionDetail {
                packets,
                link: link_log,
            }
        } else {
            SessionDetail::default()
        };
        Ok((log, detail))
    }
}

fn capture_ts(frame: u64, fps: u32) -> u64 {
    frame * 1000 / fps as u64
}

impl TelemetryState {
    fn absorb(&mut self, report: &FeedbackReport) {
        self.feedback_seen = true;
        for p in &report.packets {
            self.acked_bytes += p.size_bytes as u64;
            let owd = (p.arrive_ts_ms - p.send_ts_ms) as f64;
            self.min_owd = self.min_owd.min(owd);
            self.owd_sum += owd;
            self.owd_n += 1;
            if let Some(prev) = self.last_owd {
                self.jitter_sum += (owd - prev).abs();
                self.jitter_n += 1;
            }
            self.last_owd = Some(owd);
            if let Some(prev) = self.last_arrival {
                self.gaps.push((p.arrive_ts_ms - prev) as f64);
            }
            self.last_arrival = Some(p.arrive_ts_ms);
        }
        if let Some(rtt) = report.rtt_sample_ms {
            self.rtt_ms = rtt;
            self.min_rtt_ms = self.min_rtt_ms.min(rtt);
        }
        if let Some(lf) = report.loss_fraction {
            self.loss = lf;
            self.loss_seen = true;
        }
    }

    fn close_interval(&mut self, t_ms: u64, interval_ms: u64, prev_action: f64) -> TickRecord {
        let span = interval_ms as f64;
        if self.owd_n > 0 {
            self.owd_ms = self.owd_sum / self.owd_n as f64 - self.min_owd;
        }
        if self.jitter_n > 0 {
            self.jitter_ms = self.jitter_sum / self.jitter_n as f64;
        }
        if self.gaps.len() >= 2 {
            let n = self.gaps.len() as f64;
            let mean = self.gaps.iter().sum::<f64>() / n;
            self.ia_var = self.gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
        }
        // First interval starts the counters at zero.
        if t_ms > 0 {
            self.since_feedback = if self.feedback_seen { 0 } else { self.since_feedback.saturating_add(1) };
            self.since_loss = if self.loss_seen { 0 } else { self.since_loss.saturating_add(1) };
        }
        let rec = TickRecord {
            t_ms,
            sent_kbps: if t_ms > 0 { self.sent_bytes as f64 * 8.0 / span } else { 0.0 },
            acked_kbps: if t_ms > 0 { self.acked_bytes as f64 * 8.0 / span } else { 0.0 },
            action_kbps: prev_action,
            owd_ms: self.owd_ms,
            owd_jitter_ms: self.jitter_ms,
            interarrival_var_ms2: self.ia_var,
            rtt_ms: self.rtt_ms,
            min_rtt_ms: if self.min_rtt_ms.is_finite() { self.min_rtt_ms } else { 0.0 },
            ticks_since_feedback: self.since_feedback,
            loss_fraction: self.loss,
            ticks_since_loss_report: self.since_loss,
        };
        self.sent_bytes = 0;
        self.acked_bytes = 0;
        self.owd_sum = 0.0;
        self.owd_n = 0;
        self.jitter_sum = 0.0;
        self.jitter_n = 0;
        self.gaps.clear();
        self.feedback_seen = false;
        self.loss_seen = false;
        rec
    }
}
