//! Minimal dense networks with hand-written backprop, batched over rows.
//!
//! All matrices are row-major `f64`. Each network keeps its parameters in
//! one flat vector so optimizers, target updates and serialization work on
//! plain slices.

use rand::Rng;

/// `C = A * B + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, c: usize, rs: usize, cs: usize| (r - 1) * rs + (c - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above keep every addressed element inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `y = x W^T + b` for `x` of shape `batch x in` with row stride `ldx`.
fn linear_forward(x: &[f64], ldx: usize, batch: usize, w: &[f64], b: &[f64], inp: usize, out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(b);
    }
    gemm(batch, inp, out, x, (ldx, 1), w, (1, inp), 1.0, &mut y, (out, 1));
    y
}

/// Accumulates `dW += dy^T x` and `db += sum(dy)`.
#[allow(clippy::too_many_arguments)]
fn linear_param_grad(
    x: &[f64],
    ldx: usize,
    dy: &[f64],
    batch: usize,
    inp: usize,
    out: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    gemm(out, batch, inp, dy, (1, out), x, (ldx, 1), 1.0, dw, (inp, 1));
    for row in dy.chunks_exact(out) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

/// `dx = dy W`.
fn linear_input_grad(dy: &[f64], batch: usize, w: &[f64], inp: usize, out: usize) -> Vec<f64> {
    let mut dx = vec![0.0; batch * inp];
    gemm(batch, out, inp, dy, (out, 1), w, (inp, 1), 0.0, &mut dx, (inp, 1));
    dx
}

fn uniform_fill<R: Rng + ?Sized>(dst: &mut [f64], bound: f64, rng: &mut R) {
    for v in dst {
        *v = rng.random_range(-bound..=bound);
    }
}

/// Branch-free `exp`: reduction to `|r| <= ln2 / 2` and a degree-12 Taylor
/// polynomial, relative error around 1e-16. Unlike the libm call it
/// vectorizes inside the gate loops.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 709.0);
    let shifted = x * std::f64::consts::LOG2_E + SHIFT;
    let k = shifted - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for d in [39_916_800.0, 3_628_800.0, 362_880.0, 40_320.0, 5_040.0, 720.0, 120.0, 24.0, 6.0, 2.0, 1.0, 1.0] {
        p = p * r + 1.0 / d;
    }
    let ki = shifted.to_bits().wrapping_sub(SHIFT.to_bits()) as i64;
    p * f64::from_bits(((ki + 1023) as u64) << 52)
}

#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline(always)]
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / (exp(2.0 * x) + 1.0)
}

/// Fully connected net with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

pub struct MlpCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    pub batch: usize,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2);
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count_for(sizes)],
        }
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for l in 0..net.layers() {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            let (w, b) = net.layer_range(l);
            uniform_fill(&mut net.params[w], bound, rng);
            uniform_fill(&mut net.params[b], bound, rng);
        }
        net
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Index ranges of layer `l`'s weight (`out x in`) and bias.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for i in 0..l {
            off += self.sizes[i] * self.sizes[i + 1] + self.sizes[i + 1];
        }
        let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
        (off..off + inp * out, off + inp * out..off + inp * out + out)
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> MlpCache {
        assert_eq!(x.len(), batch * self.input_dim());
        let mut acts = vec![x.to_vec()];
        for l in 0..self.layers() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_range(l);
            let mut y = linear_forward(acts.last().unwrap(), inp, batch, &self.params[w], &self.params[b], inp, out);
            if l + 1 < self.layers() {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            acts.push(y);
        }
        MlpCache { acts, batch }
    }

    /// Backpropagates `dout` and returns the gradient w.r.t. the input.
    /// Parameter gradients are accumulated into `grad` when given.
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let batch = cache.batch;
        let mut dy = dout.to_vec();
        for l in (0..self.layers()).rev() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < self.layers() {
                for (d, a) in dy.iter_mut().zip(&cache.acts[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (wr, br) = self.layer_range(l);
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g.split_at_mut(br.start);
                linear_param_grad(&cache.acts[l], inp, &dy, batch, inp, out, &mut gw[wr.clone()], &mut gb[..out]);
            }
            dy = linear_input_grad(&dy, batch, &self.params[wr], inp, out);
        }
        dy
    }
}

/// Single-layer GRU (gate order reset, update, new) run over a fixed
/// window. Parameter layout: `W_ih (3H x I)`, `W_hh (3H x H)`, `b_ih`, `b_hh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

pub struct GruCache {
    batch: usize,
    steps: usize,
    /// `h[t]` is the state entering step `t`; `h[steps]` is the output.
    h: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    ghn: Vec<Vec<f64>>,
}

impl GruCache {
    pub fn output(&self) -> &[f64] {
        &self.h[self.steps]
    }
}

impl Gru {
    pub fn param_count_for(input: usize, hidden: usize) -> usize {
        3 * hidden * (input + hidden) + 6 * hidden
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            params: vec![0.0; Self::param_count_for(input, hidden)],
        }
    }

    /// All parameters drawn from `U(-1/sqrt(H), 1/sqrt(H))`.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut g = Self::zeros(input, hidden);
        uniform_fill(&mut g.params, 1.0 / (hidden as f64).sqrt(), rng);
        g
    }

    fn offsets(&self) -> [std::ops::Range<usize>; 4] {
        let (i, h) = (self.input, self.hidden);
        let a = 3 * h * i;
        let b = a + 3 * h * h;
        let c = b + 3 * h;
        [0..a, a..b, b..c, c..c + 3 * h]
    }

    /// Runs the recurrence from a zero state over `xs`, shaped
    /// `batch x (steps * input)` with the oldest step first.
    pub fn forward(&self, xs: &[f64], batch: usize) -> GruCache {
        let (inp, hid) = (self.input, self.hidden);
        let steps = xs.len() / (batch.max(1) * inp);
        assert_eq!(xs.len(), batch * steps * inp);
        let [wih, whh, bih, bhh] = self.offsets();
        let (wih, whh) = (&self.params[wih], &self.params[whh]);
        let (bih, bhh) = (&self.params[bih], &self.params[bhh]);
        let mut cache = GruCache {
            batch,
            steps,
            h: vec![vec![0.0; batch * hid]],
            r: Vec::with_capacity(steps),
            z: Vec::with_capacity(steps),
            n: Vec::with_capacity(steps),
            ghn: Vec::with_capacity(steps),
        };
        let g3 = 3 * hid;
        for t in 0..steps {
            let gi = linear_forward(&xs[t * inp..], steps * inp, batch, wih, bih, inp, g3);
            let hprev = cache.h.last().unwrap();
            let gh = linear_forward(hprev, hid, batch, whh, bhh, hid, g3);
            let mut r = vec![0.0; batch * hid];
            let mut z = vec![0.0; batch * hid];
            let mut n = vec![0.0; batch * hid];
            let mut ghn = vec![0.0; batch * hid];
            let mut h = vec![0.0; batch * hid];
            for b in 0..batch {
                let rows = b * hid..(b + 1) * hid;
                let (gi_r, rest) = gi[b * g3..(b + 1) * g3].split_at(hid);
                let (gi_z, gi_n) = rest.split_at(hid);
                let (gh_r, rest) = gh[b * g3..(b + 1) * g3].split_at(hid);
                let (gh_z, gh_n) = rest.split_at(hid);
                let (r, z, n) = (&mut r[rows.clone()], &mut z[rows.clone()], &mut n[rows.clone()]);
                let (ghn, h, hprev) = (&mut ghn[rows.clone()], &mut h[rows.clone()], &hprev[rows]);
                for j in 0..hid {
                    r[j] = sigmoid(gi_r[j] + gh_r[j]);
                    z[j] = sigmoid(gi_z[j] + gh_z[j]);
                    ghn[j] = gh_n[j];
                    n[j] = tanh(gi_n[j] + r[j] * gh_n[j]);
                    h[j] = (1.0 - z[j]) * n[j] + z[j] * hprev[j];
                }
            }
            cache.r.push(r);
            cache.z.push(z);
            cache.n.push(n);
            cache.ghn.push(ghn);
            cache.h.push(h);
        }
        cache
    }

    /// Accumulates parameter gradients for `dh_out`, the gradient w.r.t.
    /// the final hidden state. Returns the gradient w.r.t. `xs`.
    pub fn backward(&self, xs: &[f64], cache: &GruCache, dh_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (inp, hid, batch, steps) = (self.input, self.hidden, cache.batch, cache.steps);
        let g3 = 3 * hid;
        let [owih, owhh, obih, obhh] = self.offsets();
        let mut dxs = vec![0.0; xs.len()];
        let mut dh = dh_out.to_vec();
        let mut dgi = vec![0.0; batch * g3];
        let mut dgh = vec![0.0; batch * g3];
        for t in (0..steps).rev() {
            let (r, z, n, ghn, hprev) = (&cache.r[t], &cache.z[t], &cache.n[t], &cache.ghn[t], &cache.h[t]);
            for b in 0..batch {
                for j in 0..hid {
                    let k = b * hid + j;
                    let d = dh[k];
                    let dn = d * (1.0 - z[k]) * (1.0 - n[k] * n[k]);
                    let dz = d * (hprev[k] - n[k]) * z[k] * (1.0 - z[k]);
                    let dr = dn * ghn[k] * r[k] * (1.0 - r[k]);
                    let o = b * g3;
                    dgi[o + j] = dr;
                    dgi[o + hid + j] = dz;
                    dgi[o + 2 * hid + j] = dn;
                    dgh[o + j] = dr;
                    dgh[o + hid + j] = dz;
                    dgh[o + 2 * hid + j] = dn * r[k];
                    dh[k] = d * z[k];
                }
            }
            let x_t = &xs[t * inp..];
            {
                let (lo, hi) = grad.split_at_mut(obih.start);
                linear_param_grad(x_t, steps * inp, &dgi, batch, inp, g3, &mut lo[owih.clone()], &mut hi[..g3]);
            }
            {
                let (lo, hi) = grad.split_at_mut(obhh.start);
                linear_param_grad(hprev, hid, &dgh, batch, hid, g3, &mut lo[owhh.clone()], &mut hi[..g3]);
            }
            let dx = linear_input_grad(&dgi, batch, &self.params[owih.clone()], inp, g3);
            for b in 0..batch {
                let dst = &mut dxs[b * steps * inp + t * inp..b * steps * inp + (t + 1) * inp];
                dst.copy_from_slice(&dx[b * inp..(b + 1) * inp]);
            }
            let dhp = linear_input_grad(&dgh, batch, &self.params[owhh.clone()], hid, g3);
            for (a, b) in dh.iter_mut().zip(&dhp) {
                *a += b;
            }
        }
        dxs
    }
}

/// Adam optimizer over one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len());
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_mlp(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in 0..net.layers() {
            let (inp, out) = (net.sizes[l], net.sizes[l + 1]);
            let (wr, br) = net.layer_range(l);
            let (w, b) = (&net.params[wr], &net.params[br]);
            let mut y: Vec<f64> = (0..out)
                .map(|o| b[o] + (0..inp).map(|i| w[o * inp + i] * a[i]).sum::<f64>())
                .collect();
            if l + 1 < net.layers() {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = y;
        }
        a
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn exp_matches_libm() {
        let mut x = -700.0;
        while x < 700.0 {
            let (a, b) = (exp(x), x.exp());
            assert!(((a - b) / b).abs() < 4e-16, "{x}: {a} vs {b}");
            x += 0.0137;
        }
        assert_eq!(exp(0.0), 1.0);
        assert!(exp(-1e5) > 0.0 && exp(1e5).is_finite());
    }

    fn naive_gru(g: &Gru, xs: &[f64]) -> Vec<f64> {
        let (i, h) = (g.input, g.hidden);
        let [wih, whh, bih, bhh] = g.offsets();
        let (wih, whh, bih, bhh) = (&g.params[wih], &g.params[whh], &g.params[bih], &g.params[bhh]);
        let mut hs = vec![0.0; h];
        for x in xs.chunks_exact(i) {
            let gi: Vec<f64> = (0..3 * h).map(|o| bih[o] + (0..i).map(|k| wih[o * i + k] * x[k]).sum::<f64>()).collect();
            let gh: Vec<f64> = (0..3 * h).map(|o| bhh[o] + (0..h).map(|k| whh[o * h + k] * hs[k]).sum::<f64>()).collect();
            hs = (0..h)
                .map(|j| {
                    let r = sigmoid(gi[j] + gh[j]);
                    let z = sigmoid(gi[h + j] + gh[h + j]);
                    let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
                    (1.0 - z) * n + z * hs[j]
                })
                .collect();
        }
        hs
    }

    #[test]
    fn batched_mlp_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[5, 7, 6, 3], &mut rng);
        let x: Vec<f64> = (0..4 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = net.forward(&x, 4);
        for b in 0..4 {
            let want = naive_mlp(&net, &x[b * 5..(b + 1) * 5]);
            for (a, w) in c.output()[b * 3..(b + 1) * 3].iter().zip(&want) {
                assert!((a - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_gru_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Gru::new(4, 6, &mut rng);
        let xs: Vec<f64> = (0..3 * 5 * 4).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = g.forward(&xs, 3);
        for b in 0..3 {
            let want = naive_gru(&g, &xs[b * 20..(b + 1) * 20]);
            for (a, w) in c.output()[b * 6..(b + 1) * 6].iter().zip(&want) {
                assert!((a - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Gru::param_count_for(11, 32), 4320);
        assert_eq!(Mlp::param_count_for(&[32, 256, 256, 1]), 74_497);
        assert_eq!(Mlp::param_count_for(&[33, 256, 256, 128]), 107_392);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn polyak_contracts() {
        let mut t = vec![0.0, 10.0];
        let o = vec![1.0, 0.0];
        polyak_update(&mut t, &o, 0.5);
        assert_eq!(t, vec![0.5, 5.0]);
    }
}
