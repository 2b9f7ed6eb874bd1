//! GCC-style heuristic rate controller.
//!
//! A trendline estimator turns per-group one-way-delay deltas into a delay
//! gradient; an adaptive-threshold detector classifies it as normal,
//! overuse or underuse; an AIMD state machine plus loss rules then move the
//! target bitrate. This is the incumbent whose logs feed the learner and
//! the baseline it is judged against.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::sim::{FeedbackReport, RateController, TickRecord, MAX_KBPS, MIN_KBPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GccConfig {
    pub initial_kbps: f64,
    /// Number of smoothed-delay points in the trendline regression.
    pub window: usize,
    /// Packets sent within this span form one arrival group.
    pub group_ms: u64,
    pub delay_smoothing: f64,
    pub threshold_gain: f64,
    pub initial_threshold: f64,
    pub threshold_k_up: f64,
    pub threshold_k_down: f64,
    pub overuse_time_ms: f64,
    /// Multiplicative increase per second while in the increase state.
    pub increase_per_s: f64,
    /// Decrease target as a fraction of the smoothed acked rate.
    pub decrease_factor: f64,
    pub loss_high: f64,
    pub loss_low: f64,
    /// Target may not exceed this multiple of the smoothed acked rate.
    pub max_acked_ratio: f64,
    pub acked_smoothing: f64,
    pub decision_interval_ms: u64,
}

impl Default for GccConfig {
    fn default() -> Self {
        Self {
            initial_kbps: 300.0,
            window: 20,
            group_ms: 5,
            delay_smoothing: 0.9,
            threshold_gain: 4.0,
            initial_threshold: 12.5,
            threshold_k_up: 0.01,
            threshold_k_down: 0.00018,
            overuse_time_ms: 10.0,
            increase_per_s: 1.05,
            decrease_factor: 0.85,
            loss_high: 0.10,
            loss_low: 0.02,
            max_acked_ratio: 1.5,
            acked_smoothing: 0.2,
            decision_interval_ms: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorState {
    Normal,
    Overuse,
    Underuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateState {
    Increase,
    Hold,
    Decrease,
}

/// Least-squares slope of `y` over `x`. `None` for fewer than two points or
/// degenerate `x`.
pub fn linear_regression_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    (den > 0.0).then(|| num / den)
}

#[derive(Debug, Clone, Copy)]
struct Group {
    first_send: u64,
    last_send: u64,
    last_arrival: u64,
}

#[derive(Debug, Clone)]
pub struct GccState {
    // trendline
    current_group: Option<Group>,
    prev_group: Option<Group>,
    first_arrival: Option<u64>,
    accumulated_delay: f64,
    smoothed_delay: f64,
    num_deltas: u32,
    window: VecDeque<(f64, f64)>,
    pub slope: f64,
    pub modified_trend: f64,
    prev_modified_trend: f64,
    // detector
    pub threshold: f64,
    last_threshold_update: Option<u64>,
    time_over_using: f64,
    overuse_counter: u32,
    pub detector: DetectorState,
    // rate control
    pub rate_state: RateState,
    pub target_kbps: f64,
    pub last_decrease_ms: Option<u64>,
    pub smoothed_acked_kbps: Option<f64>,
    pub loss_ewma: f64,
    pub last_loss: f64,
    pending_loss: Option<f64>,
    pub rtt_ms: f64,
    last_decide_ms: Option<u64>,
}

impl GccState {
    pub fn new(config: &GccConfig) -> Self {
        Self {
            current_group: None,
            prev_group: None,
            first_arrival: None,
            accumulated_delay: 0.0,
            smoothed_delay: 0.0,
            num_deltas: 0,
            window: VecDeque::with_capacity(config.window),
            slope: 0.0,
            modified_trend: 0.0,
            prev_modified_trend: 0.0,
            threshold: config.initial_threshold,
            last_threshold_update: None,
            time_over_using: -1.0,
            overuse_counter: 0,
            detector: DetectorState::Normal,
            rate_state: RateState::Hold,
            target_kbps: config.initial_kbps.clamp(MIN_KBPS, MAX_KBPS),
            last_decrease_ms: None,
            smoothed_acked_kbps: None,
            loss_ewma: 0.0,
            last_loss: 0.0,
            pending_loss: None,
            rtt_ms: 100.0,
            last_decide_ms: None,
        }
    }

    /// Folds one transport feedback report into the delay-gradient
    /// estimate, the detector, the acked-rate estimate and the loss state.
    pub fn on_feedback(&mut self, cfg: &GccConfig, report: &FeedbackReport) {
        for p in &report.packets {
            match self.current_group.as_mut() {
                Some(g) if p.send_ts_ms.saturating_sub(g.first_send) < cfg.group_ms => {
                    g.last_send = p.send_ts_ms;
                    g.last_arrival = g.last_arrival.max(p.arrive_ts_ms);
                }
                _ => {
                    if let Some(done) = self.current_group.take() {
                        self.complete_group(cfg, done);
                    }
                    self.current_group = Some(Group {
                        first_send: p.send_ts_ms,
                        last_send: p.send_ts_ms,
                        last_arrival: p.arrive_ts_ms,
                    });
                }
            }
        }
        if !report.packets.is_empty() {
            let a = cfg.acked_smoothing;
            let sample = report.received_bitrate_kbps;
            self.smoothed_acked_kbps = Some(match self.smoothed_acked_kbps {
                None => sample,
                Some(prev) => (1.0 - a) * prev + a * sample,
            });
        }
        if let Some(rtt) = report.rtt_sample_ms {
            self.rtt_ms = rtt;
        }
        if let Some(lf) = report.loss_fraction {
            self.loss_ewma = 0.9 * self.loss_ewma + 0.1 * lf;
            self.pending_loss = Some(lf);
        }
    }

    fn complete_group(&mut self, cfg: &GccConfig, g: Group) {
        let first_arrival = *self.first_arrival.get_or_insert(g.last_arrival);
        let Some(prev) = self.prev_group.replace(g) else {
            return;
        };
        let send_delta = g.last_send as f64 - prev.last_send as f64;
        let arrival_delta = g.last_arrival as f64 - prev.last_arrival as f64;
        let delta = arrival_delta - send_delta;
        self.num_deltas = self.num_deltas.saturating_add(1);
        self.accumulated_delay += delta;
        self.smoothed_delay =
            cfg.delay_smoothing * self.smoothed_delay + (1.0 - cfg.delay_smoothing) * self.accumulated_delay;
        if self.window.len() == cfg.window {
            self.window.pop_front();
        }
        self.window
            .push_back(((g.last_arrival - first_arrival) as f64, self.smoothed_delay));
        if self.window.len() == cfg.window {
            let pts: Vec<(f64, f64)> = self.window.iter().copied().collect();
            if let Some(s) = linear_regression_slope(&pts) {
                self.slope = s;
            }
        }
        self.modified_trend = self.num_deltas.min(60) as f64 * self.slope * cfg.threshold_gain;
        self.detect(cfg, send_delta, g.last_arrival);
    }

    fn detect(&mut self, cfg: &GccConfig, send_delta: f64, now: u64) {
        let mt = self.modified_trend;
        if mt > self.threshold {
            if self.time_over_using < 0.0 {
                self.time_over_using = send_delta / 2.0;
            } else {
                self.time_over_using += send_delta;
            }
            self.overuse_counter += 1;
            if self.time_over_using > cfg.overuse_time_ms
                && self.overuse_counter > 1
                && mt >= self.prev_modified_trend
            {
                self.time_over_using = 0.0;
                self.overuse_counter = 0;
                self.detector = DetectorState::Overuse;
            }
        } else if mt < -self.threshold {
            self.time_over_using = -1.0;
            self.overuse_counter = 0;
            self.detector = DetectorState::Underuse;
        } else {
            self.time_over_using = -1.0;
            self.overuse_counter = 0;
            self.detector = DetectorState::Normal;
        }
        self.prev_modified_trend = mt;
        self.update_threshold(cfg, mt, now);
    }

    fn update_threshold(&mut self, cfg: &GccConfig, mt: f64, now: u64) {
        let last = *self.last_threshold_update.get_or_insert(now);
        // Large spikes (e.g. route changes) do not drag the threshold along.
        if mt.abs() > self.threshold + 15.0 {
            self.last_threshold_update = Some(now);
            return;
        }
        let k = if mt.abs() < self.threshold {
            cfg.threshold_k_down
        } else {
            cfg.threshold_k_up
        };
        let dt = (now.saturating_sub(last) as f64).min(100.0);
        self.threshold = (self.threshold + k * (mt.abs() - self.threshold) * dt).clamp(6.0, 600.0);
        self.last_threshold_update = Some(now);
    }

    /// Advances the rate state machine and returns the new target.
    pub fn decide(&mut self, cfg: &GccConfig, now_ms: u64) -> f64 {
        let dt = self
            .last_decide_ms
            .map_or(cfg.decision_interval_ms, |l| now_ms.saturating_sub(l));
        self.last_decide_ms = Some(now_ms);

        if let Some(loss) = self.pending_loss.take() {
            self.last_loss = loss;
            if loss > cfg.loss_high {
                self.target_kbps *= 1.0 - 0.5 * loss;
            }
        }

        self.rate_state = match (self.detector, self.rate_state) {
            (DetectorState::Overuse, _) => RateState::Decrease,
            (DetectorState::Underuse, _) => RateState::Hold,
            (DetectorState::Normal, RateState::Hold) => RateState::Increase,
            (DetectorState::Normal, s) => s,
        };

        match self.rate_state {
            RateState::Increase => {
                if self.last_loss < cfg.loss_low {
                    self.target_kbps *= cfg.increase_per_s.powf(dt as f64 / 1000.0);
                }
            }
            RateState::Hold => {}
            RateState::Decrease => {
                let allowed = self
                    .last_decrease_ms
                    .is_none_or(|l| (now_ms.saturating_sub(l)) as f64 >= self.rtt_ms);
                if allowed {
                    let acked = self.smoothed_acked_kbps.unwrap_or(self.target_kbps);
                    self.target_kbps = (cfg.decrease_factor * acked).min(self.target_kbps);
                    self.last_decrease_ms = Some(now_ms);
                }
                self.rate_state = RateState::Hold;
            }
        }

        if let Some(acked) = self.smoothed_acked_kbps {
            self.target_kbps = self.target_kbps.min(cfg.max_acked_ratio * acked.max(MIN_KBPS));
        }
        self.target_kbps = self.target_kbps.clamp(MIN_KBPS, MAX_KBPS);
        self.target_kbps
    }
}

#[derive(Debug, Clone)]
pub struct GccController {
    pub config: GccConfig,
    pub state: GccState,
}

impl GccController {
    pub fn new(config: GccConfig) -> Self {
        let state = GccState::new(&config);
        Self { config, state }
    }
}

impl Default for GccController {
    fn default() -> Self {
        Self::new(GccConfig::default())
    }
}

impl RateController for GccController {
    fn on_feedback(&mut self, report: &FeedbackReport) {
        self.state.on_feedback(&self.config, report);
    }

    fn decide(&mut self, now_ms: u64, _telemetry: &[TickRecord]) -> f64 {
        self.state.decide(&self.config, now_ms)
    }
}

/// A fleet of GCC deployments, used to produce training logs. Each session
/// draws its own tunables from the ranges below, and each decision is scaled
/// by a log-normal factor (median 1) that is redrawn after a random hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub increase_per_s: (f64, f64),
    pub decrease_factor: (f64, f64),
    /// Drawn log-uniformly.
    pub initial_kbps: (f64, f64),
    pub max_acked_ratio: (f64, f64),
    pub threshold_gain: (f64, f64),
    /// Standard deviation of the log of the action factor.
    pub action_sigma: f64,
    pub hold_min_ms: u64,
    pub hold_max_ms: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            increase_per_s: (1.02, 1.25),
            decrease_factor: (0.7, 0.95),
            initial_kbps: (150.0, 1500.0),
            max_acked_ratio: (1.2, 2.5),
            threshold_gain: (2.0, 8.0),
            action_sigma: 0.3,
            hold_min_ms: 200,
            hold_max_ms: 2000,
        }
    }
}

impl PopulationSpec {
    /// Every member runs `base` unperturbed.
    pub fn pinned(base: &GccConfig) -> Self {
        Self {
            increase_per_s: (base.increase_per_s, base.increase_per_s),
            decrease_factor: (base.decrease_factor, base.decrease_factor),
            initial_kbps: (base.initial_kbps, base.initial_kbps),
            max_acked_ratio: (base.max_acked_ratio, base.max_acked_ratio),
            threshold_gain: (base.threshold_gain, base.threshold_gain),
            action_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ranges = [
            ("increase_per_s", self.increase_per_s, 1.0, f64::INFINITY),
            ("decrease_factor", self.decrease_factor, 0.0, 1.0),
            ("initial_kbps", self.initial_kbps, MIN_KBPS, MAX_KBPS),
            ("max_acked_ratio", self.max_acked_ratio, 1.0, f64::INFINITY),
            ("threshold_gain", self.threshold_gain, 0.0, f64::INFINITY),
        ];
        for (name, (lo, hi), min, max) in ranges {
            if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
                return Err(format!("{name} range [{lo}, {hi}] must be ordered and within [{min}, {max}]"));
            }
        }
        if !(self.action_sigma >= 0.0 && self.action_sigma.is_finite()) {
            return Err(format!("action_sigma must be >= 0, got {}", self.action_sigma));
        }
        if self.hold_min_ms == 0 || self.hold_min_ms > self.hold_max_ms {
            return Err("need 0 < hold_min_ms <= hold_max_ms".into());
        }
        Ok(())
    }

    /// One member's configuration; fields without a range come from `base`.
    pub fn draw_config<R: Rng + ?Sized>(&self, base: &GccConfig, rng: &mut R) -> GccConfig {
        let mut uniform = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let (ilo, ihi) = self.initial_kbps;
        let initial_kbps = if ihi > ilo { uniform((ilo.ln(), ihi.ln())).exp().clamp(ilo, ihi) } else { ilo };
        GccConfig {
            increase_per_s: uniform(self.increase_per_s),
            decrease_factor: uniform(self.decrease_factor),
            initial_kbps,
            max_acked_ratio: uniform(self.max_acked_ratio),
            threshold_gain: uniform(self.threshold_gain),
            ..base.clone()
        }
    }
}

/// One population member for one session.
#[derive(Debug, Clone)]
pub struct PopulationGcc {
    inner: GccController,
    spec: PopulationSpec,
    rng: ChaCha8Rng,
    factor: f64,
    next_draw_ms: u64,
}

impl PopulationGcc {
    pub fn new(base: &GccConfig, spec: &PopulationSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = spec.draw_config(base, &mut rng);
        Self {
            inner: GccController::new(config),
            spec: spec.clone(),
            rng,
            factor: 1.0,
            next_draw_ms: 0,
        }
    }

    pub fn config(&self) -> &GccConfig {
        &self.inner.config
    }
}

impl RateController for PopulationGcc {
    fn on_feedback(&mut self, report: &FeedbackReport) {
        self.inner.on_feedback(report);
    }

    fn decide(&mut self, now_ms: u64, telemetry: &[TickRecord]) -> f64 {
        let target = self.inner.decide(now_ms, telemetry);
        if now_ms >= self.next_draw_ms {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.factor = (self.spec.action_sigma * z).exp();
            self.next_draw_ms = now_ms + self.rng.random_range(self.spec.hold_min_ms..=self.spec.hold_max_ms);
        }
        (target * self.factor).clamp(MIN_KBPS, MAX_KBPS)
    }
}
