/// Quantile midpoints `(2i + 1) / (2N)` for `i = 0..N`.
pub fn quantile_taus(n: usize) -> Vec<f64> {
    (0..n).map(|i| (2 * i + 1) as f64 / (2 * n) as f64).collect()
}

pub fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

/// Quantile Huber loss averaged over all `N x M` pairs, with
/// `u_ij = target_j - pred_i`.
pub fn quantile_huber_loss(pred: &[f64], target: &[f64], kappa: f64) -> f64 {
    quantile_huber_loss_grad(pred, target, kappa, None)
}

/// Same as [`quantile_huber_loss`]; also writes `dL/dpred` when `grad` is
/// given.
pub fn quantile_huber_loss_grad(pred: &[f64], target: &[f64], kappa: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let (n, m) = (pred.len(), target.len());
    let scale = 1.0 / (n * m) as f64;
    let inv_k = 1.0 / kappa;
    let mut loss = 0.0;
    for (i, &p) in pred.iter().enumerate() {
        let tau = (2 * i + 1) as f64 / (2 * n) as f64;
        let flip = 1.0 - 2.0 * tau;
        // Four independent lanes so the loop vectorizes.
        let mut l = [0.0; 4];
        let mut g = [0.0; 4];
        let mut pair = |lane: usize, y: f64| {
            let u = y - p;
            let a = u.abs();
            let c = a.min(kappa);
            let w = tau + ((u < 0.0) as u8 as f64) * flip;
            l[lane] += w * c * (a - 0.5 * c);
            g[lane] -= w * u.clamp(-kappa, kappa);
        };
        let chunks = target.chunks_exact(4);
        let rest = chunks.remainder();
        for c in chunks {
            for lane in 0..4 {
                pair(lane, c[lane]);
            }
        }
        for &y in rest {
            pair(0, y);
        }
        loss += (l[0] + l[1]) + (l[2] + l[3]);
        if let Some(d) = grad.as_deref_mut() {
            d[i] = ((g[0] + g[1]) + (g[2] + g[3])) * inv_k * scale;
        }
    }
    loss * inv_k * scale
}

/// Whether any pair sits exactly on a point where the loss is not twice
/// differentiable (`|u| = kappa`) or not differentiable in the indicator
/// (`u = 0`), up to `tol`.
pub fn near_kink(pred: &[f64], target: &[f64], kappa: f64, tol: f64) -> bool {
    pred.iter()
        .any(|p| target.iter().any(|y| ((y - p).abs() - kappa).abs() <= tol || (y - p).abs() <= tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_point_masses_are_zero() {
        let v = [0.4; 4];
        assert_eq!(quantile_huber_loss(&v, &v, 1.0), 0.0);
        // Every pair is compared, so distinct sorted values do not cancel.
        assert!(quantile_huber_loss(&[0.1, 0.5, 2.0], &[0.1, 0.5, 2.0], 1.0) > 0.0);
    }

    #[test]
    fn single_quantile_hand_value() {
        assert!((quantile_huber_loss(&[0.0], &[2.0], 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn asymmetry_ratio_nine() {
        // N = 5 gives a top quantile of 0.9.
        let taus = quantile_taus(5);
        assert!((taus[4] - 0.9).abs() < 1e-15);
        let mut under = [0.0; 5];
        let mut over = [0.0; 5];
        under[4] = -3.0;
        over[4] = 3.0;
        let mut gu = [0.0; 5];
        let mut go = [0.0; 5];
        quantile_huber_loss_grad(&under, &[0.0], 1.0, Some(&mut gu));
        quantile_huber_loss_grad(&over, &[0.0], 1.0, Some(&mut go));
        // Undershooting the target by 3 at tau = 0.9 costs 9x overshooting.
        assert!((gu[4].abs() / go[4].abs() - 9.0).abs() < 1e-12);
    }
}
