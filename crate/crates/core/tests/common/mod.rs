//! Helpers shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratelab::learner::grad_check::{grad_check_actor, grad_check_bc, grad_check_critic, GradCheckReport};
use ratelab::learner::{critic_targets, Batch, ModelBundle, TrainHyper};
use ratelab::sim::{
    run_session_detailed, FeedbackReport, RateController, SessionDetail, SessionLog, SimConfig, TickRecord,
};
use ratelab::telemetry::{Dataset, Normalizers, StateVector, Transition, STATE_LEN};
use ratelab::trace::{BandwidthTrace, TraceSample};

/// Picks a fresh random rate every decision, so queues fill and drain.
pub struct Jittery(pub ChaCha8Rng);

impl RateController for Jittery {
    fn on_feedback(&mut self, _report: &FeedbackReport) {}

    fn decide(&mut self, _now_ms: u64, _telemetry: &[TickRecord]) -> f64 {
        self.0.random_range(50.0..6000.0)
    }
}

#[derive(Debug, Clone)]
pub struct SimCase {
    pub trace: BandwidthTrace,
    pub cfg: SimConfig,
    pub controller_seed: u64,
}

/// A random piecewise-constant link, path and codec setup.
pub fn sim_case(seed: u64) -> SimCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration_ms = rng.random_range(10_000..16_000);
    let mut samples = Vec::new();
    let mut t = 0;
    for _ in 0..rng.random_range(1..8) {
        if t >= duration_ms {
            break;
        }
        samples.push(TraceSample {
            t_ms: t,
            capacity_kbps: rng.random_range(100.0..8000.0),
        });
        t += rng.random_range(200..4000);
    }
    SimCase {
        trace: BandwidthTrace::new("case", samples, duration_ms).unwrap(),
        cfg: SimConfig {
            rtt_ms: [40, 100, 160][rng.random_range(0..3)],
            queue_capacity_pkts: rng.random_range(5..80),
            codec_noise_sigma: rng.random_range(0.0..0.3),
            random_loss: rng.random_range(0.0..0.03),
            session_seed: rng.random(),
            ..SimConfig::default()
        },
        controller_seed: rng.random(),
    }
}

pub fn run_case(c: &SimCase) -> (SessionLog, SessionDetail) {
    let mut ctl = Jittery(ChaCha8Rng::seed_from_u64(c.controller_seed));
    run_session_detailed(&c.trace, &mut ctl, &c.cfg).unwrap()
}

/// Conservation, queue bound, FIFO, delay floor and capacity bound.
pub fn check_sim_invariants(c: &SimCase, detail: &SessionDetail) -> Result<(), String> {
    let one_way = c.cfg.one_way_ms();
    for s in &detail.link {
        if s.departed_bytes + s.dropped_bytes + s.queued_bytes != s.sent_bytes {
            return Err(format!("conservation broken at t={}: {s:?}", s.t_ms));
        }
        if s.queued_pkts > c.cfg.queue_capacity_pkts {
            return Err(format!("queue over capacity at t={}: {}", s.t_ms, s.queued_pkts));
        }
    }
    let (mut last_depart, mut last_arrive) = (0, 0);
    for (i, p) in detail.packets.iter().enumerate() {
        if p.seq != i as u64 {
            return Err(format!("packet {i} has seq {}", p.seq));
        }
        if let (Some(d), Some(a)) = (p.depart_ts_ms, p.arrive_ts_ms) {
            if d < last_depart || a < last_arrive {
                return Err(format!("packet {i} overtook an earlier one"));
            }
            if d < p.send_ts_ms || a != d + one_way {
                return Err(format!("packet {i} beat the propagation floor: {p:?}"));
            }
            last_depart = d;
            last_arrive = a;
        }
    }
    // Snapshot k counts departures through the end of tick k, so the bytes
    // between two snapshots were served one tick later than their stamps.
    let link = &detail.link;
    let tick = c.cfg.tick_ms;
    for w in [1usize, 2, 10, 50, 200, link.len() - 1] {
        for i in 0..link.len().saturating_sub(w) {
            let (a, b) = (&link[i], &link[i + w]);
            let bytes = (b.departed_bytes - a.departed_bytes) as f64;
            let budget = c.trace.integrate_bits(a.t_ms + tick, b.t_ms + tick) / 8.0 + c.cfg.mtu_bytes as f64;
            if bytes > budget + 1e-6 {
                return Err(format!("window {}..{} moved {bytes} bytes, budget {budget}", a.t_ms, b.t_ms));
            }
        }
    }
    Ok(())
}

/// Textbook pinball-Huber: `|tau_i - 1{u < 0}| * L_kappa(u) / kappa`,
/// averaged over every pair, evaluated term by term.
pub fn reference_quantile_huber(pred: &[f64], target: &[f64], kappa: f64) -> f64 {
    let n = pred.len();
    let mut terms = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        let tau = (i as f64 + 0.5) / n as f64;
        for y in target {
            let u = y - p;
            let l = if u.abs() <= kappa {
                u * u / 2.0
            } else {
                kappa * u.abs() - kappa * kappa / 2.0
            };
            let indicator = if u < 0.0 { 1.0 } else { 0.0 };
            terms.push((tau - indicator).abs() * l / kappa);
        }
    }
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Largest absolute gap to the reference over `cases` random instances
/// with `N, M <= 16`.
pub fn quantile_huber_worst_gap(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.random_range(1..=16);
        let m = rng.random_range(1..=16);
        let kappa = rng.random_range(0.1..3.0);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let target: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = ratelab::learner::quantile_huber_loss(&pred, &target, kappa);
        worst = worst.max((got - reference_quantile_huber(&pred, &target, kappa)).abs());
    }
    worst
}

pub fn random_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = || StateVector((0..STATE_LEN).map(|_| rng.random::<f32>()).collect());
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let transitions = (0..n)
        .map(|i| Transition {
            state: state(),
            action_kbps: rng2.random_range(50.0..6000.0),
            reward: rng2.random_range(-1.0..1.0),
            next_state: state(),
            done: i % 7 == 6,
        })
        .collect();
    Dataset {
        transitions,
        ..Dataset::default()
    }
}

pub const GRAD_EPS: f64 = 1e-5;

pub fn reduced_hyper() -> TrainHyper {
    TrainHyper {
        n_quantiles: 6,
        gru_hidden: 5,
        hidden_layers: vec![8, 7],
        cql_alpha: 0.3,
        twin_critic: true,
        ..TrainHyper::default()
    }
}

/// Critic (encoder and critic weights), actor and BC gradient checks on
/// `n` random transitions; every parameter when `sample` is `None`.
pub fn grad_check_model(hyper: &TrainHyper, n: usize, sample: Option<usize>) -> Vec<(&'static str, GradCheckReport)> {
    let ds = random_dataset(n, 5);
    let idx: Vec<usize> = (0..n).collect();
    let batch = Batch::from_indices(&ds, &idx);
    let mut m = ModelBundle::new(hyper, Normalizers::default(), true);
    // Decorrelate online and target critics.
    for c in &mut m.critics {
        for (k, p) in c.params.iter_mut().enumerate() {
            *p += 1e-2 * ((k % 13) as f64 - 6.0) / 6.0;
        }
    }
    let targets = critic_targets(&m, &batch);
    let emb = m.embed(&batch.states, n);
    vec![
        ("critic", grad_check_critic(&m, &batch, &targets, GRAD_EPS, sample)),
        ("actor", grad_check_actor(&m, &emb, n, GRAD_EPS, sample)),
        ("bc", grad_check_bc(&m, &batch, GRAD_EPS, sample)),
    ]
}
