use rand::Rng;
use rand_distr::StandardNormal;

/// Frame-size model standing in for a real encoder: the achieved rate lags
/// the commanded target, wobbles with mean-one lognormal noise and spikes
/// on keyframes.
#[derive(Debug, Clone)]
pub struct Codec {
    fps: u32,
    noise_sigma: f64,
    keyframe_interval: u64,
    keyframe_multiplier: f64,
    lag_ms: u64,
    effective_kbps: Option<f64>,
}

impl Codec {
    pub fn new(
        fps: u32,
        noise_sigma: f64,
        keyframe_interval: u64,
        keyframe_multiplier: f64,
        lag_ms: u64,
    ) -> Self {
        Self {
            fps,
            noise_sigma,
            keyframe_interval,
            keyframe_multiplier,
            lag_ms,
            effective_kbps: None,
        }
    }

    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.fps as f64
    }

    /// Rate the encoder is currently tracking.
    pub fn effective_kbps(&self) -> Option<f64> {
        self.effective_kbps
    }

    /// Size in bytes of frame `frame_index` encoded against `target_kbps`.
    pub fn frame_size<R: Rng + ?Sized>(&mut self, target_kbps: f64, frame_index: u64, rng: &mut R) -> u32 {
        let dt = self.frame_interval_ms();
        let eff = match self.effective_kbps {
            Some(prev) if self.lag_ms > 0 => {
                prev + (target_kbps - prev) * (1.0 - (-dt / self.lag_ms as f64).exp())
            }
            _ => target_kbps,
        };
        self.effective_kbps = Some(eff);

        let mut bytes = eff * dt / 8.0;
        if self.noise_sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            bytes *= (self.noise_sigma * z - 0.5 * self.noise_sigma * self.noise_sigma).exp();
        }
        if self.keyframe_interval > 0 && frame_index % self.keyframe_interval == 0 {
            bytes *= self.keyframe_multiplier;
        }
        bytes.round().max(1.0) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_frame_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Codec::new(30, 0.0, 300, 3.0, 0);
        assert_eq!(c.frame_size(2400.0, 1, &mut rng), 10_000);
        assert_eq!(c.frame_size(2400.0, 300, &mut rng), 30_000);
    }

    #[test]
    fn lag_is_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Codec::new(30, 0.0, 0, 1.0, 100);
        c.frame_size(1000.0, 1, &mut rng);
        c.frame_size(2000.0, 2, &mut rng);
        let expect = 1000.0 + 1000.0 * (1.0 - (-(1000.0 / 30.0) / 100.0f64).exp());
        assert!((c.effective_kbps().unwrap() - expect).abs() < 1e-9);
        for i in 3..200 {
            c.frame_size(2000.0, i, &mut rng);
        }
        assert!((c.effective_kbps().unwrap() - 2000.0).abs() < 1e-6);
    }

    #[test]
    fn lognormal_noise_has_unit_mean() {
        // Monte-Carlo check of the mean-one parameterization.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut c = Codec::new(30, 0.15, 0, 1.0, 0);
        let n = 100_000;
        let mean = (1..=n).map(|i| c.frame_size(2400.0, i, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean / 10_000.0 - 1.0).abs() < 0.01, "mean {mean}");
    }
}
