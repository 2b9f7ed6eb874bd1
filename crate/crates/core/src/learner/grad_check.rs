//! Central finite-difference checks of the hand-written gradients.
//!
//! Every objective also reports a signature of its non-smooth branch
//! choices (ReLU masks, Huber regimes, indicator signs). A parameter whose
//! `+eps` and `-eps` evaluations land on different branches straddles a
//! kink and is skipped rather than compared.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nn::{sigmoid, Gru, Mlp, MlpCache};
use super::{
    actor_loss_and_grad, bc_loss_and_grad, critic_input, critic_loss_and_grad, quantile_huber_loss_grad, row_means,
    Batch, ModelBundle,
};

/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn merge(self, o: Self) -> Self {
        Self {
            max_rel_error: self.max_rel_error.max(o.max_rel_error),
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
        }
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[i]` to `(f(p + eps e_i) - f(p - eps e_i)) / 2 eps`
/// for each `i` in `indices`. `f` returns the objective and its branch
/// signature.
pub fn check_params<F>(params: &[f64], analytic: &[f64], indices: &[usize], eps: f64, mut f: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, u64),
{
    let mut p = params.to_vec();
    let (_, base_sig) = f(&p);
    let mut rep = GradCheckReport::default();
    for &i in indices {
        let orig = p[i];
        p[i] = orig + eps;
        let (fp, sp) = f(&p);
        p[i] = orig - eps;
        let (fm, sm) = f(&p);
        p[i] = orig;
        if sp != sm || sp != base_sig {
            rep.skipped += 1;
            continue;
        }
        rep.checked += 1;
        rep.max_rel_error = rep.max_rel_error.max(rel_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
    rep
}

/// All indices when `sample` is `None`, otherwise `sample` distinct-ish
/// random ones drawn with `seed`.
pub fn pick_indices(len: usize, sample: Option<usize>, seed: u64) -> Vec<usize> {
    match sample {
        None => (0..len).collect(),
        Some(k) if k >= len => (0..len).collect(),
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..k).map(|_| rng.random_range(0..len)).collect()
        }
    }
}

fn relu_signature(c: &MlpCache, h: &mut DefaultHasher) {
    for a in &c.acts[1..c.acts.len() - 1] {
        for v in a {
            (*v > 0.0).hash(h);
        }
    }
}

fn qh_signature(pred: &[f64], target: &[f64], kappa: f64, h: &mut DefaultHasher) {
    for p in pred {
        for y in target {
            let u = y - p;
            (u < 0.0).hash(h);
            (u.abs() <= kappa).hash(h);
        }
    }
}

fn weights(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `sum_k c_k y_k` for fixed random `c` through an MLP.
pub fn grad_check_mlp(net: &Mlp, x: &[f64], batch: usize, eps: f64, sample: Option<usize>) -> GradCheckReport {
    let c = weights(batch * net.output_dim(), 11);
    let cache = net.forward(x, batch);
    let mut g = vec![0.0; net.params.len()];
    net.backward(&cache, &c, Some(&mut g));
    let idx = pick_indices(g.len(), sample, 12);
    let mut probe = net.clone();
    check_params(&net.params, &g, &idx, eps, |p| {
        probe.params.copy_from_slice(p);
        let cache = probe.forward(x, batch);
        let mut h = DefaultHasher::new();
        relu_signature(&cache, &mut h);
        (cache.output().iter().zip(&c).map(|(y, c)| y * c).sum(), h.finish())
    })
}

/// Gradient of an MLP w.r.t. its input.
pub fn grad_check_mlp_input(net: &Mlp, x: &[f64], batch: usize, eps: f64) -> GradCheckReport {
    let c = weights(batch * net.output_dim(), 13);
    let cache = net.forward(x, batch);
    let dx = net.backward(&cache, &c, None);
    let idx: Vec<usize> = (0..x.len()).collect();
    check_params(x, &dx, &idx, eps, |xp| {
        let cache = net.forward(xp, batch);
        let mut h = DefaultHasher::new();
        relu_signature(&cache, &mut h);
        (cache.output().iter().zip(&c).map(|(y, c)| y * c).sum(), h.finish())
    })
}

/// `sum_k c_k h_k` of the final hidden state, w.r.t. parameters and inputs.
pub fn grad_check_gru(gru: &Gru, xs: &[f64], batch: usize, eps: f64, sample: Option<usize>) -> GradCheckReport {
    let c = weights(batch * gru.hidden, 14);
    let cache = gru.forward(xs, batch);
    let mut g = vec![0.0; gru.params.len()];
    let dx = gru.backward(xs, &cache, &c, &mut g);
    let objective = |g: &Gru, x: &[f64]| -> f64 { g.forward(x, batch).output().iter().zip(&c).map(|(h, c)| h * c).sum() };
    let idx = pick_indices(g.len(), sample, 15);
    let mut probe = gru.clone();
    let rp = check_params(&gru.params, &g, &idx, eps, |p| {
        probe.params.copy_from_slice(p);
        (objective(&probe, xs), 0)
    });
    let idx_x = pick_indices(xs.len(), sample, 16);
    let rx = check_params(xs, &dx, &idx_x, eps, |xp| (objective(gru, xp), 0));
    rp.merge(rx)
}

/// Quantile Huber loss w.r.t. the predicted quantiles.
pub fn grad_check_quantile_huber(pred: &[f64], target: &[f64], kappa: f64, eps: f64) -> GradCheckReport {
    let mut g = vec![0.0; pred.len()];
    quantile_huber_loss_grad(pred, target, kappa, Some(&mut g));
    let idx: Vec<usize> = (0..pred.len()).collect();
    check_params(pred, &g, &idx, eps, |p| {
        let mut h = DefaultHasher::new();
        qh_signature(p, target, kappa, &mut h);
        (quantile_huber_loss_grad(p, target, kappa, None), h.finish())
    })
}

/// Critic objective (quantile Huber + `alpha` * penalty, summed over
/// critics) with the actor's action and the targets held fixed, as in the
/// update.
fn critic_objective(m: &ModelBundle, batch: &Batch, targets: &[f64], a_pi: &[f64]) -> (f64, u64) {
    let hy = &m.hyper;
    let (bsz, n) = (batch.size, hy.n_quantiles);
    let e = m.embed(&batch.states, bsz);
    let mut h = DefaultHasher::new();
    let mut total = 0.0;
    for c in &m.critics {
        let cd = c.forward(&critic_input(&e, &batch.actions, hy.gru_hidden), bsz);
        let cp = c.forward(&critic_input(&e, a_pi, hy.gru_hidden), bsz);
        relu_signature(&cd, &mut h);
        relu_signature(&cp, &mut h);
        let mut qh = 0.0;
        for b in 0..bsz {
            let r = b * n..(b + 1) * n;
            qh_signature(&cd.output()[r.clone()], &targets[r.clone()], hy.huber_kappa, &mut h);
            qh += quantile_huber_loss_grad(&cd.output()[r.clone()], &targets[r], hy.huber_kappa, None);
        }
        let qp = row_means(cp.output(), n);
        let qd = row_means(cd.output(), n);
        let cql = qp.iter().zip(&qd).map(|(p, d)| p - d).sum::<f64>() / bsz as f64;
        total += qh / bsz as f64 + hy.cql_alpha * cql;
    }
    (total, h.finish())
}

/// Full encoder + critic + quantile Huber + penalty composite, checked
/// over the encoder and every critic parameter (or a sample of each).
pub fn grad_check_critic(m: &ModelBundle, batch: &Batch, targets: &[f64], eps: f64, sample: Option<usize>) -> GradCheckReport {
    let e = m.embed(&batch.states, batch.size);
    let a_pi = m.act_unit(&e, batch.size);
    let cg = critic_loss_and_grad(m, batch, targets);
    let (g_gru, g_critics) = (cg.gru, cg.critics);
    let mut probe = m.clone();
    let idx = pick_indices(m.gru.params.len(), sample, 21);
    let mut rep = check_params(&m.gru.params, &g_gru, &idx, eps, |p| {
        probe.gru.params.copy_from_slice(p);
        critic_objective(&probe, batch, targets, &a_pi)
    });
    probe.gru.params.copy_from_slice(&m.gru.params);
    for (ci, g) in g_critics.iter().enumerate() {
        let idx = pick_indices(g.len(), sample, 22 + ci as u64);
        rep = rep.merge(check_params(&m.critics[ci].params, g, &idx, eps, |p| {
            probe.critics[ci].params.copy_from_slice(p);
            critic_objective(&probe, batch, targets, &a_pi)
        }));
        probe.critics[ci].params.copy_from_slice(&m.critics[ci].params);
    }
    rep
}

/// Actor objective through critic 0 with the embedding fixed.
pub fn grad_check_actor(m: &ModelBundle, emb: &[f64], batch: usize, eps: f64, sample: Option<usize>) -> GradCheckReport {
    let (_, g) = actor_loss_and_grad(m, emb, batch);
    let hy = &m.hyper;
    let idx = pick_indices(g.len(), sample, 31);
    let mut probe = m.actor.clone();
    check_params(&m.actor.params, &g, &idx, eps, |p| {
        probe.params.copy_from_slice(p);
        let ac = probe.forward(emb, batch);
        let a: Vec<f64> = ac.output().iter().map(|&x| sigmoid(x)).collect();
        let cc = m.critics[0].forward(&critic_input(emb, &a, hy.gru_hidden), batch);
        let mut h = DefaultHasher::new();
        relu_signature(&ac, &mut h);
        relu_signature(&cc, &mut h);
        (-row_means(cc.output(), hy.n_quantiles).iter().sum::<f64>() / batch as f64, h.finish())
    })
}

/// Behavior-cloning objective over encoder and actor.
pub fn grad_check_bc(m: &ModelBundle, batch: &Batch, eps: f64, sample: Option<usize>) -> GradCheckReport {
    let (_, g_gru, g_actor) = bc_loss_and_grad(m, batch);
    let objective = |p: &ModelBundle| -> (f64, u64) {
        let e = p.embed(&batch.states, batch.size);
        let ac = p.actor.forward(&e, batch.size);
        let mut h = DefaultHasher::new();
        relu_signature(&ac, &mut h);
        let l = ac
            .output()
            .iter()
            .zip(&batch.actions)
            .map(|(&x, &a)| (sigmoid(x) - a).powi(2))
            .sum::<f64>();
        (l / batch.size as f64, h.finish())
    };
    let mut probe = m.clone();
    let idx = pick_indices(g_gru.len(), sample, 41);
    let r1 = check_params(&m.gru.params, &g_gru, &idx, eps, |p| {
        probe.gru.params.copy_from_slice(p);
        objective(&probe)
    });
    probe.gru.params.copy_from_slice(&m.gru.params);
    let idx = pick_indices(g_actor.len(), sample, 42);
    let r2 = check_params(&m.actor.params, &g_actor, &idx, eps, |p| {
        probe.actor.params.copy_from_slice(p);
        objective(&probe)
    });
    r1.merge(r2)
}
