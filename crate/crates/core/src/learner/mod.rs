//! Offline conservative distributional actor-critic.
//!
//! A GRU encodes the telemetry window into a 32-wide embedding shared by a
//! deterministic actor and a quantile critic. The critic is fitted to
//! bootstrapped quantile targets with the quantile Huber loss plus a
//! conservative penalty `Q(s, pi(s)) - Q(s, a_data)`; the actor then climbs
//! the critic's mean. The encoder is trained by the critic loss only.
//! Behavior cloning of the logged actions is provided as a baseline.

pub mod grad_check;
mod io;
mod loss;
pub mod nn;
mod policy;

pub use io::{load_model, load_model_file, save_model, save_model_file, MODEL_FORMAT_VERSION};
pub use loss::{huber, near_kink, quantile_huber_loss, quantile_huber_loss_grad, quantile_taus};
pub use policy::PolicyController;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sim::{run_session, SimConfig, MAX_KBPS, MIN_KBPS};
use crate::telemetry::{compute_reward, Dataset, Normalizers, RewardParams, StateVector, N_FEATURES, STATE_LEN};
use crate::trace::BandwidthTrace;
use nn::{polyak_update, sigmoid, Adam, Gru, Mlp};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LearnerError {
    #[error("non-finite {what} at step {step}: critic_loss={critic_loss} cql={cql} actor_loss={actor_loss}")]
    NonFinite {
        step: usize,
        what: &'static str,
        critic_loss: f64,
        cql: f64,
        actor_loss: f64,
    },
    #[error("training needs a non-empty dataset")]
    EmptyDataset,
    #[error("model has no critic")]
    NoCritic,
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub cql_alpha: f64,
    pub n_quantiles: usize,
    pub discount_gamma: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Learning rate for behavior cloning (encoder and actor).
    pub bc_lr: f64,
    pub polyak_tau: f64,
    pub huber_kappa: f64,
    pub grad_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub gru_hidden: usize,
    pub hidden_layers: Vec<usize>,
    /// Two critics; bootstrap from the one with the lower mean target.
    pub twin_critic: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            cql_alpha: 0.01,
            n_quantiles: 128,
            discount_gamma: 0.99,
            batch_size: 256,
            actor_lr: 1e-4,
            critic_lr: 3e-4,
            bc_lr: 3e-4,
            polyak_tau: 0.005,
            huber_kappa: 1.0,
            grad_steps: 50_000,
            eval_every: 5_000,
            seed: 0,
            gru_hidden: 32,
            hidden_layers: vec![256, 256],
            twin_critic: true,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::Hyper(m.to_string()));
        if !(self.cql_alpha >= 0.0) {
            return bad("cql_alpha must be >= 0");
        }
        if !(0.0..1.0).contains(&self.discount_gamma) {
            return bad("discount_gamma must be in [0, 1)");
        }
        if self.n_quantiles == 0 || self.batch_size == 0 || self.gru_hidden == 0 {
            return bad("n_quantiles, batch_size and gru_hidden must be positive");
        }
        if !(self.polyak_tau > 0.0 && self.polyak_tau <= 1.0) || !(self.huber_kappa > 0.0) {
            return bad("polyak_tau must be in (0, 1] and huber_kappa positive");
        }
        Ok(())
    }

    fn actor_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.gru_hidden];
        s.extend(&self.hidden_layers);
        s.push(1);
        s
    }

    fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.gru_hidden + 1];
        s.extend(&self.hidden_layers);
        s.push(self.n_quantiles);
        s
    }
}

pub fn action_to_unit(kbps: f64) -> f64 {
    ((kbps - MIN_KBPS) / (MAX_KBPS - MIN_KBPS)).clamp(0.0, 1.0)
}

pub fn unit_to_action(a: f64) -> f64 {
    MIN_KBPS + (MAX_KBPS - MIN_KBPS) * a
}

/// Encoder, actor and (optionally) critics with their target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub gru: Gru,
    pub actor: Mlp,
    pub critics: Vec<Mlp>,
    pub target_critics: Vec<Mlp>,
    pub normalizers: Normalizers,
    pub hyper: TrainHyper,
}

impl ModelBundle {
    pub fn new(hyper: &TrainHyper, normalizers: Normalizers, with_critic: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let gru = Gru::new(N_FEATURES, hyper.gru_hidden, &mut rng);
        let actor = Mlp::new(&hyper.actor_sizes(), &mut rng);
        let n_critics = match (with_critic, hyper.twin_critic) {
            (false, _) => 0,
            (true, false) => 1,
            (true, true) => 2,
        };
        let critics: Vec<Mlp> = (0..n_critics).map(|_| Mlp::new(&hyper.critic_sizes(), &mut rng)).collect();
        Self {
            gru,
            actor,
            target_critics: critics.clone(),
            critics,
            normalizers,
            hyper: hyper.clone(),
        }
    }

    /// Parameters needed to act: encoder plus actor.
    pub fn policy_param_count(&self) -> usize {
        self.gru.params.len() + self.actor.params.len()
    }

    pub fn total_param_count(&self) -> usize {
        self.policy_param_count()
            + self.critics.iter().chain(&self.target_critics).map(|c| c.params.len()).sum::<usize>()
    }

    pub fn embed(&self, states: &[f64], batch: usize) -> Vec<f64> {
        self.gru.forward(states, batch).output().to_vec()
    }

    /// Actor output in [0, 1] for each embedding row.
    pub fn act_unit(&self, emb: &[f64], batch: usize) -> Vec<f64> {
        self.actor.forward(emb, batch).output().iter().map(|&x| sigmoid(x)).collect()
    }

    /// Target bitrate for one state.
    pub fn act_kbps(&self, state: &StateVector) -> f64 {
        let x: Vec<f64> = state.0.iter().map(|&v| v as f64).collect();
        let e = self.embed(&x, 1);
        unit_to_action(self.act_unit(&e, 1)[0])
    }

    /// Mean critic quantile for each `(embedding, unit action)` row.
    pub fn q_mean(&self, critic: usize, emb: &[f64], actions: &[f64]) -> Vec<f64> {
        let b = actions.len();
        let out = self.critics[critic].forward(&critic_input(emb, actions, self.hyper.gru_hidden), b);
        row_means(out.output(), self.hyper.n_quantiles)
    }

    /// A policy-only copy (no critics).
    pub fn policy_only(&self) -> Self {
        Self {
            critics: Vec::new(),
            target_critics: Vec::new(),
            ..self.clone()
        }
    }
}

fn critic_input(emb: &[f64], actions: &[f64], hidden: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(actions.len() * (hidden + 1));
    for (e, a) in emb.chunks_exact(hidden).zip(actions) {
        x.extend_from_slice(e);
        x.push(*a);
    }
    x
}

fn row_means(m: &[f64], width: usize) -> Vec<f64> {
    m.chunks_exact(width).map(|r| r.iter().sum::<f64>() / width as f64).collect()
}

/// Transitions gathered into dense `f64` arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub states: Vec<f64>,
    pub next_states: Vec<f64>,
    /// Logged actions mapped into [0, 1].
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn from_indices(ds: &Dataset, idx: &[usize]) -> Self {
        let mut b = Batch {
            size: idx.len(),
            states: Vec::with_capacity(idx.len() * STATE_LEN),
            next_states: Vec::with_capacity(idx.len() * STATE_LEN),
            actions: Vec::with_capacity(idx.len()),
            rewards: Vec::with_capacity(idx.len()),
            dones: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            let t = &ds.transitions[i];
            b.states.extend(t.state.0.iter().map(|&v| v as f64));
            b.next_states.extend(t.next_state.0.iter().map(|&v| v as f64));
            b.actions.push(action_to_unit(t.action_kbps as f64));
            b.rewards.push(t.reward as f64);
            b.dones.push(if t.done { 1.0 } else { 0.0 });
        }
        b
    }

    fn sample<R: Rng>(ds: &Dataset, size: usize, rng: &mut R) -> Self {
        let idx: Vec<usize> = if size >= ds.len() {
            (0..ds.len()).collect()
        } else {
            (0..size).map(|_| rng.random_range(0..ds.len())).collect()
        };
        Self::from_indices(ds, &idx)
    }
}

/// Per-sample target quantiles `r + gamma * (1 - done) * Z'(s', pi(s'))`
/// from the target critic(s), shaped `batch x N`. With two critics each
/// row comes from the one whose target mean is lower.
pub fn critic_targets(model: &ModelBundle, batch: &Batch) -> Vec<f64> {
    let h = &model.hyper;
    let n = h.n_quantiles;
    let e_next = model.embed(&batch.next_states, batch.size);
    let a_next = model.act_unit(&e_next, batch.size);
    let x = critic_input(&e_next, &a_next, h.gru_hidden);
    let outs: Vec<Vec<f64>> = model
        .target_critics
        .iter()
        .map(|c| c.forward(&x, batch.size).acts.pop().unwrap())
        .collect();
    let mut y = vec![0.0; batch.size * n];
    for b in 0..batch.size {
        let pick = outs
            .iter()
            .map(|o| &o[b * n..(b + 1) * n])
            .min_by(|p, q| p.iter().sum::<f64>().total_cmp(&q.iter().sum::<f64>()))
            .expect("at least one target critic");
        let scale = h.discount_gamma * (1.0 - batch.dones[b]);
        for (dst, &z) in y[b * n..(b + 1) * n].iter_mut().zip(pick) {
            *dst = batch.rewards[b] + scale * z;
        }
    }
    y
}

/// Mean over the batch of `Q(s, pi(s)) - Q(s, a_data)` for critic 0, with
/// `Q` the mean of the critic's quantiles.
pub fn cql_penalty(model: &ModelBundle, batch: &Batch) -> f64 {
    let e = model.embed(&batch.states, batch.size);
    let a_pi = model.act_unit(&e, batch.size);
    let q_pi = model.q_mean(0, &e, &a_pi);
    let q_data = model.q_mean(0, &e, &batch.actions);
    q_pi.iter().zip(&q_data).map(|(p, d)| p - d).sum::<f64>() / batch.size as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub critic_loss: f64,
    pub cql_term: f64,
    pub actor_loss: f64,
}

/// Optimizer state for one training run.
#[derive(Debug, Clone)]
pub struct Optimizers {
    gru: Adam,
    critics: Vec<Adam>,
    actor: Adam,
}

impl Optimizers {
    pub fn new(model: &ModelBundle) -> Self {
        let h = &model.hyper;
        Self {
            gru: Adam::new(model.gru.params.len(), h.critic_lr),
            critics: model.critics.iter().map(|c| Adam::new(c.params.len(), h.critic_lr)).collect(),
            actor: Adam::new(model.actor.params.len(), h.actor_lr),
        }
    }
}

/// Critic-step gradients. `quantile_loss` and `cql` are for critic 0.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub quantile_loss: f64,
    pub cql: f64,
    pub gru: Vec<f64>,
    pub critics: Vec<Vec<f64>>,
    pub embedding: Vec<f64>,
}

/// Loss and gradients of the critic objective (quantile Huber plus the
/// scaled conservative penalty, summed over critics) w.r.t. the encoder
/// and every critic.
pub fn critic_loss_and_grad(model: &ModelBundle, batch: &Batch, targets: &[f64]) -> CriticGrads {
    let h = &model.hyper;
    let (bsz, n, hid) = (batch.size, h.n_quantiles, h.gru_hidden);
    let gcache = model.gru.forward(&batch.states, bsz);
    let e = gcache.output();
    let a_pi = model.act_unit(e, bsz);
    let x_data = critic_input(e, &batch.actions, hid);
    let x_pi = critic_input(e, &a_pi, hid);

    let mut de = vec![0.0; bsz * hid];
    let mut critic_grads = Vec::with_capacity(model.critics.len());
    let (mut qh0, mut cql0) = (0.0, 0.0);
    for (ci, critic) in model.critics.iter().enumerate() {
        let c_data = critic.forward(&x_data, bsz);
        let c_pi = critic.forward(&x_pi, bsz);
        let pred = c_data.output();
        let mut dpred = vec![0.0; bsz * n];
        let mut qh = 0.0;
        for b in 0..bsz {
            let r = b * n..(b + 1) * n;
            qh += quantile_huber_loss_grad(&pred[r.clone()], &targets[r.clone()], h.huber_kappa, Some(&mut dpred[r]));
        }
        qh /= bsz as f64;
        let q_pi = row_means(c_pi.output(), n);
        let q_data = row_means(pred, n);
        let cql = q_pi.iter().zip(&q_data).map(|(p, d)| p - d).sum::<f64>() / bsz as f64;
        let k = h.cql_alpha / (bsz * n) as f64;
        for d in &mut dpred {
            *d = *d / bsz as f64 - k;
        }
        let dpi = vec![k; bsz * n];
        let mut g = vec![0.0; critic.params.len()];
        let dx_data = critic.backward(&c_data, &dpred, Some(&mut g));
        let dx_pi = critic.backward(&c_pi, &dpi, Some(&mut g));
        for b in 0..bsz {
            for j in 0..hid {
                de[b * hid + j] += dx_data[b * (hid + 1) + j] + dx_pi[b * (hid + 1) + j];
            }
        }
        critic_grads.push(g);
        if ci == 0 {
            qh0 = qh;
            cql0 = cql;
        }
    }
    let mut g_gru = vec![0.0; model.gru.params.len()];
    model.gru.backward(&batch.states, &gcache, &de, &mut g_gru);
    CriticGrads {
        quantile_loss: qh0,
        cql: cql0,
        gru: g_gru,
        critics: critic_grads,
        embedding: e.to_vec(),
    }
}

/// Actor objective `-mean Q(s, pi(s))` under critic 0 with the embedding
/// held fixed, and its gradient w.r.t. the actor.
pub fn actor_loss_and_grad(model: &ModelBundle, emb: &[f64], batch_size: usize) -> (f64, Vec<f64>) {
    let h = &model.hyper;
    let (n, hid) = (h.n_quantiles, h.gru_hidden);
    let acache = model.actor.forward(emb, batch_size);
    let a: Vec<f64> = acache.output().iter().map(|&x| sigmoid(x)).collect();
    let ccache = model.critics[0].forward(&critic_input(emb, &a, hid), batch_size);
    let loss = -row_means(ccache.output(), n).iter().sum::<f64>() / batch_size as f64;
    let dq = vec![-1.0 / (batch_size * n) as f64; batch_size * n];
    let dx = model.critics[0].backward(&ccache, &dq, None);
    let dlogit: Vec<f64> = (0..batch_size).map(|b| dx[b * (hid + 1) + hid] * a[b] * (1.0 - a[b])).collect();
    let mut g = vec![0.0; model.actor.params.len()];
    model.actor.backward(&acache, &dlogit, Some(&mut g));
    (loss, g)
}

/// Critic half of a training step. The returned embedding is the one
/// computed before the encoder update.
pub fn critic_update(model: &mut ModelBundle, opt: &mut Optimizers, batch: &Batch) -> CriticGrads {
    let targets = critic_targets(model, batch);
    let g = critic_loss_and_grad(model, batch, &targets);
    opt.gru.step(&mut model.gru.params, &g.gru);
    for ((c, o), cg) in model.critics.iter_mut().zip(&mut opt.critics).zip(&g.critics) {
        o.step(&mut c.params, cg);
    }
    g
}

/// Actor half of a training step on precomputed embeddings.
pub fn actor_update(model: &mut ModelBundle, opt: &mut Optimizers, emb: &[f64], batch_size: usize) -> f64 {
    let (loss, g) = actor_loss_and_grad(model, emb, batch_size);
    opt.actor.step(&mut model.actor.params, &g);
    loss
}

/// One full step: critic, then actor, then target-critic averaging.
pub fn train_step(
    model: &mut ModelBundle,
    opt: &mut Optimizers,
    batch: &Batch,
    step: usize,
) -> Result<StepStats, LearnerError> {
    if model.critics.is_empty() {
        return Err(LearnerError::NoCritic);
    }
    let cg = critic_update(model, opt, batch);
    let (critic_loss, cql_term) = (cg.quantile_loss, cg.cql);
    let actor_loss = actor_update(model, opt, &cg.embedding, batch.size);
    let stats = StepStats {
        critic_loss,
        cql_term,
        actor_loss,
    };
    if !(critic_loss.is_finite() && cql_term.is_finite() && actor_loss.is_finite()) {
        return Err(LearnerError::NonFinite {
            step,
            what: "loss",
            critic_loss,
            cql: cql_term,
            actor_loss,
        });
    }
    let tau = model.hyper.polyak_tau;
    for (t, c) in model.target_critics.iter_mut().zip(&model.critics) {
        polyak_update(&mut t.params, &c.params, tau);
    }
    Ok(stats)
}

/// Sessions replayed to pick the best checkpoint.
#[derive(Debug, Clone, Default)]
pub struct Validation {
    pub sessions: Vec<(BandwidthTrace, SimConfig)>,
    pub reward: RewardParams,
}

impl Validation {
    /// Median over sessions of the session's reward (all ticks as one
    /// window).
    pub fn score(&self, model: &ModelBundle) -> f64 {
        let mut scores: Vec<f64> = self
            .sessions
            .par_iter()
            .map(|(trace, cfg)| {
                let mut ctl = PolicyController::new(model);
                match run_session(trace, &mut ctl, cfg) {
                    Ok(log) if !log.ticks.is_empty() => compute_reward(&log.ticks, &self.reward),
                    _ => f64::NEG_INFINITY,
                }
            })
            .collect();
        scores.sort_by(f64::total_cmp);
        if scores.is_empty() {
            return f64::NAN;
        }
        let m = scores.len() / 2;
        if scores.len() % 2 == 1 {
            scores[m]
        } else {
            0.5 * (scores[m - 1] + scores[m])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub critic_loss: f64,
    pub cql_term: f64,
    pub actor_loss: f64,
    pub val_median_reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelBundle,
    pub curve: Vec<CurvePoint>,
    pub best_step: usize,
    pub best_val: Option<f64>,
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,critic_loss,cql_term,actor_loss,val_median_reward")?;
    for p in curve {
        let val = p.val_median_reward.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", p.step, p.critic_loss, p.cql_term, p.actor_loss, val)?;
    }
    Ok(())
}

/// Interval bookkeeping shared by both trainers.
struct Tracker<'a> {
    validation: Option<&'a Validation>,
    curve: Vec<CurvePoint>,
    sums: [f64; 3],
    count: usize,
    best: Option<(f64, usize, ModelBundle)>,
}

impl<'a> Tracker<'a> {
    fn new(validation: Option<&'a Validation>) -> Self {
        Self {
            validation: validation.filter(|v| !v.sessions.is_empty()),
            curve: Vec::new(),
            sums: [0.0; 3],
            count: 0,
            best: None,
        }
    }

    fn add(&mut self, s: StepStats) {
        self.sums[0] += s.critic_loss;
        self.sums[1] += s.cql_term;
        self.sums[2] += s.actor_loss;
        self.count += 1;
    }

    fn checkpoint(&mut self, step: usize, model: &ModelBundle) {
        let val = self.validation.map(|v| v.score(model));
        let c = self.count.max(1) as f64;
        self.curve.push(CurvePoint {
            step,
            critic_loss: self.sums[0] / c,
            cql_term: self.sums[1] / c,
            actor_loss: self.sums[2] / c,
            val_median_reward: val,
        });
        self.sums = [0.0; 3];
        self.count = 0;
        if let Some(v) = val {
            if self.best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                self.best = Some((v, step, model.clone()));
            }
        }
        log::info!("step {step}: {:?}", self.curve.last().unwrap());
    }

    fn finish(self, model: ModelBundle, steps: usize) -> TrainOutcome {
        match self.best {
            Some((v, s, m)) => TrainOutcome {
                model: m,
                curve: self.curve,
                best_step: s,
                best_val: Some(v),
            },
            None => TrainOutcome {
                model,
                curve: self.curve,
                best_step: steps,
                best_val: None,
            },
        }
    }
}

/// Offline actor-critic training. With a validation set, the checkpoint
/// (including the initial model) with the best median validation reward
/// is returned; otherwise the final one.
pub fn train(ds: &Dataset, hyper: &TrainHyper, validation: Option<&Validation>) -> Result<TrainOutcome, LearnerError> {
    hyper.validate()?;
    if ds.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let mut model = ModelBundle::new(hyper, ds.normalizers, true);
    let mut opt = Optimizers::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut tracker = Tracker::new(validation);
    if hyper.grad_steps > 0 && hyper.eval_every > 0 {
        tracker.checkpoint(0, &model);
    }
    for step in 1..=hyper.grad_steps {
        let batch = Batch::sample(ds, hyper.batch_size, &mut rng);
        tracker.add(train_step(&mut model, &mut opt, &batch, step)?);
        if hyper.eval_every > 0 && (step % hyper.eval_every == 0 || step == hyper.grad_steps) {
            tracker.checkpoint(step, &model);
        }
    }
    Ok(tracker.finish(model, hyper.grad_steps))
}

/// Mean squared error between the actor's unit action and the logged one,
/// with gradients for encoder and actor.
pub fn bc_loss_and_grad(model: &ModelBundle, batch: &Batch) -> (f64, Vec<f64>, Vec<f64>) {
    let (bsz, hid) = (batch.size, model.hyper.gru_hidden);
    let gcache = model.gru.forward(&batch.states, bsz);
    let acache = model.actor.forward(gcache.output(), bsz);
    let mut loss = 0.0;
    let mut dlogit = vec![0.0; bsz];
    for b in 0..bsz {
        let a = sigmoid(acache.output()[b]);
        let d = a - batch.actions[b];
        loss += d * d;
        dlogit[b] = 2.0 * d * a * (1.0 - a) / bsz as f64;
    }
    let mut g_actor = vec![0.0; model.actor.params.len()];
    let de = model.actor.backward(&acache, &dlogit, Some(&mut g_actor));
    debug_assert_eq!(de.len(), bsz * hid);
    let mut g_gru = vec![0.0; model.gru.params.len()];
    model.gru.backward(&batch.states, &gcache, &de, &mut g_gru);
    (loss / bsz as f64, g_gru, g_actor)
}

/// Behavior cloning: encoder and actor regress the logged actions.
pub fn bc_train(ds: &Dataset, hyper: &TrainHyper, validation: Option<&Validation>) -> Result<TrainOutcome, LearnerError> {
    hyper.validate()?;
    if ds.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let mut model = ModelBundle::new(hyper, ds.normalizers, false);
    let mut opt_gru = Adam::new(model.gru.params.len(), hyper.bc_lr);
    let mut opt_actor = Adam::new(model.actor.params.len(), hyper.bc_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut tracker = Tracker::new(validation);
    if hyper.grad_steps > 0 && hyper.eval_every > 0 {
        tracker.checkpoint(0, &model);
    }
    for step in 1..=hyper.grad_steps {
        let batch = Batch::sample(ds, hyper.batch_size, &mut rng);
        let (loss, g_gru, g_actor) = bc_loss_and_grad(&model, &batch);
        if !loss.is_finite() {
            return Err(LearnerError::NonFinite {
                step,
                what: "bc loss",
                critic_loss: f64::NAN,
                cql: f64::NAN,
                actor_loss: loss,
            });
        }
        opt_gru.step(&mut model.gru.params, &g_gru);
        opt_actor.step(&mut model.actor.params, &g_actor);
        tracker.add(StepStats {
            critic_loss: 0.0,
            cql_term: 0.0,
            actor_loss: loss,
        });
        if hyper.eval_every > 0 && (step % hyper.eval_every == 0 || step == hyper.grad_steps) {
            tracker.checkpoint(step, &model);
        }
    }
    Ok(tracker.finish(model, hyper.grad_steps))
}

#[cfg(test)]
mod tests;
