//! Bandwidth traces: parsing, synthetic generation, characterization and
//! corpus handling.
//!
//! A trace is a piecewise-constant capacity schedule. Each sample holds its
//! capacity from its timestamp until the next sample (or the end of the
//! trace).

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Traces below this mean capacity are dropped from a corpus.
pub const MIN_MEAN_KBPS: f64 = 200.0;
/// Traces above this mean capacity are dropped from a corpus.
pub const MAX_MEAN_KBPS: f64 = 6000.0;

const DYNAMISM_CHUNK_MS: u64 = 1000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace is empty")]
    Empty,
    #[error("invalid trace: {0}")]
    Invalid(String),
    #[error("trace too short: {duration_ms} ms (need at least {min_ms} ms)")]
    TooShort { duration_ms: u64, min_ms: u64 },
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("split ratios must sum to 1 (got {0})")]
    BadRatios(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t_ms: u64,
    pub capacity_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    pub id: String,
    pub samples: Vec<TraceSample>,
    pub duration_ms: u64,
}

impl BandwidthTrace {
    /// Builds a trace, checking every invariant.
    pub fn new(
        id: impl Into<String>,
        samples: Vec<TraceSample>,
        duration_ms: u64,
    ) -> Result<Self, TraceError> {
        let first = samples.first().ok_or(TraceError::Empty)?;
        if first.t_ms != 0 {
            return Err(TraceError::Invalid("first sample must be at t=0".into()));
        }
        for w in samples.windows(2) {
            if w[1].t_ms <= w[0].t_ms {
                return Err(TraceError::Invalid(format!(
                    "non-monotonic time at {} ms",
                    w[1].t_ms
                )));
            }
        }
        if let Some(s) = samples
            .iter()
            .find(|s| !(s.capacity_kbps.is_finite() && s.capacity_kbps > 0.0))
        {
            return Err(TraceError::Invalid(format!(
                "non-positive capacity at {} ms",
                s.t_ms
            )));
        }
        let last = samples.last().unwrap().t_ms;
        if duration_ms < last || duration_ms == 0 {
            return Err(TraceError::Invalid(format!(
                "duration {duration_ms} ms does not cover last sample at {last} ms"
            )));
        }
        Ok(Self {
            id: id.into(),
            samples,
            duration_ms,
        })
    }

    /// A single-rate trace.
    pub fn constant(id: impl Into<String>, kbps: f64, duration_ms: u64) -> Result<Self, TraceError> {
        Self::new(
            id,
            vec![TraceSample {
                t_ms: 0,
                capacity_kbps: kbps,
            }],
            duration_ms,
        )
    }

    fn segment_index(&self, t_ms: u64) -> usize {
        self.samples.partition_point(|s| s.t_ms <= t_ms).saturating_sub(1)
    }

    /// Capacity in force at `t_ms`. Times past the end hold the last value.
    pub fn capacity_at(&self, t_ms: u64) -> f64 {
        self.samples[self.segment_index(t_ms)].capacity_kbps
    }

    /// Integral of capacity over `[from_ms, to_ms)` in kilobits-per-second
    /// times milliseconds, i.e. bits.
    pub fn integrate_bits(&self, from_ms: u64, to_ms: u64) -> f64 {
        if to_ms <= from_ms {
            return 0.0;
        }
        let mut bits = 0.0;
        let mut i = self.segment_index(from_ms);
        let mut t = from_ms;
        while t < to_ms {
            let seg_end = self
                .samples
                .get(i + 1)
                .map_or(u64::MAX, |s| s.t_ms)
                .min(to_ms);
            bits += self.samples[i].capacity_kbps * (seg_end - t) as f64;
            t = seg_end;
            i += 1;
        }
        bits
    }

    /// Minimum capacity over `[from_ms, to_ms)`, truncated to the trace end.
    pub fn min_capacity(&self, from_ms: u64, to_ms: u64) -> f64 {
        let to_ms = to_ms.min(self.duration_ms).max(from_ms + 1);
        let lo = self.segment_index(from_ms);
        let hi = self.segment_index(to_ms - 1);
        self.samples[lo..=hi]
            .iter()
            .map(|s| s.capacity_kbps)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean_kbps(&self) -> f64 {
        self.integrate_bits(0, self.duration_ms) / self.duration_ms as f64
    }

    /// Serializes in the `t_ms,capacity_kbps` CSV form.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# id={} duration_ms={}\n", self.id, self.duration_ms);
        for s in &self.samples {
            out.push_str(&format!("{},{}\n", s.t_ms, s.capacity_kbps));
        }
        out
    }
}

/// Parses `t_ms,capacity_kbps` lines. Blank lines and `#` comments are
/// skipped. A `duration_ms=N` token in a comment (as written by
/// [`BandwidthTrace::to_csv`]) sets the duration; otherwise it extends the
/// last sample by the last inter-sample gap (or 1000 ms for single-sample
/// traces).
pub fn parse_trace_csv(id: &str, text: &str) -> Result<BandwidthTrace, TraceError> {
    let mut samples: Vec<TraceSample> = Vec::new();
    let mut declared: Option<u64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let (content, comment) = raw.split_once('#').unwrap_or((raw, ""));
        let content = content.trim();
        if let Some(d) = comment.split_whitespace().find_map(|w| w.strip_prefix("duration_ms=")) {
            declared = Some(d.parse().map_err(|_| TraceError::Parse {
                line,
                msg: "bad duration_ms".into(),
            })?);
        }
        if content.is_empty() {
            continue;
        }
        let err = |msg: &str| TraceError::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut parts = content.split(',');
        let (Some(t), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected `t_ms,capacity_kbps`"));
        };
        let t_ms: u64 = t.trim().parse().map_err(|_| err("bad timestamp"))?;
        let capacity_kbps: f64 = c.trim().parse().map_err(|_| err("bad capacity"))?;
        if !(capacity_kbps.is_finite() && capacity_kbps > 0.0) {
            return Err(err("non-positive capacity"));
        }
        match samples.last() {
            None if t_ms != 0 => return Err(err("first sample must be at t=0")),
            Some(prev) if t_ms <= prev.t_ms => return Err(err("non-monotonic time")),
            _ => {}
        }
        samples.push(TraceSample { t_ms, capacity_kbps });
    }
    let duration_ms = match (samples.as_slice(), declared) {
        ([], _) => return Err(TraceError::Empty),
        (_, Some(d)) => d,
        ([only], None) => only.t_ms + 1000,
        ([.., a, b], None) => b.t_ms + (b.t_ms - a.t_ms),
    };
    BandwidthTrace::new(id, samples, duration_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Constant,
    Step,
    Dip,
    RandomWalk,
    Sawtooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub low_kbps: f64,
    pub high_kbps: f64,
    pub period_ms: u64,
    pub duration_ms: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        if !(self.low_kbps > 0.0 && self.low_kbps <= self.high_kbps && self.high_kbps.is_finite()) {
            return Err(TraceError::BadSpec(format!(
                "need 0 < low <= high, got {}..{}",
                self.low_kbps, self.high_kbps
            )));
        }
        if self.period_ms == 0 {
            return Err(TraceError::BadSpec("period_ms must be positive".into()));
        }
        if self.duration_ms == 0 {
            return Err(TraceError::BadSpec("duration_ms must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step multiplicative bound of the random walk, in log space.
const WALK_LOG_STEP: f64 = 0.35;
const SAWTOOTH_STEPS: u64 = 10;

/// Generates a synthetic trace. Output is a pure function of `(spec, seed)`.
///
/// `step` starts low and alternates every period; `dip` holds high except
/// for one seed-chosen period at low; `random_walk` takes a bounded
/// log-uniform multiplicative step each period, reflected into
/// `[low, high]`; `sawtooth` ramps low to high over each period.
pub fn gen_synthetic_trace(spec: &SyntheticSpec, seed: u64) -> Result<BandwidthTrace, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi, period, dur) = (spec.low_kbps, spec.high_kbps, spec.period_ms, spec.duration_ms);
    let starts = || (0..).map(move |k| k * period).take_while(move |t| *t < dur);
    let samples: Vec<TraceSample> = match spec.kind {
        SyntheticKind::Constant => vec![TraceSample {
            t_ms: 0,
            capacity_kbps: hi,
        }],
        SyntheticKind::Step => starts()
            .enumerate()
            .map(|(k, t_ms)| TraceSample {
                t_ms,
                capacity_kbps: if k % 2 == 0 { lo } else { hi },
            })
            .collect(),
        SyntheticKind::Dip => {
            let n = starts().count() as u64;
            let dip = if n > 2 { rng.random_range(1..n - 1) } else { n - 1 };
            let mut out = Vec::new();
            for (k, t_ms) in starts().enumerate() {
                let c = if k as u64 == dip { lo } else { hi };
                // Collapse equal neighbours so the trace stays minimal.
                if out.last().is_none_or(|s: &TraceSample| s.capacity_kbps != c) {
                    out.push(TraceSample { t_ms, capacity_kbps: c });
                }
            }
            out
        }
        SyntheticKind::RandomWalk => {
            let (llo, lhi) = (lo.ln(), hi.ln());
            let mut x = if lhi > llo { rng.random_range(llo..=lhi) } else { llo };
            starts()
                .map(|t_ms| {
                    let s = TraceSample {
                        t_ms,
                        capacity_kbps: x.exp().clamp(lo, hi),
                    };
                    x += rng.random_range(-WALK_LOG_STEP..=WALK_LOG_STEP);
                    if x > lhi {
                        x = 2.0 * lhi - x;
                    }
                    if x < llo {
                        x = 2.0 * llo - x;
                    }
                    x = x.clamp(llo, lhi);
                    s
                })
                .collect()
        }
        SyntheticKind::Sawtooth => {
            let step = (period / SAWTOOTH_STEPS).max(1);
            (0..)
                .map(|k| k * step)
                .take_while(|t| *t < dur)
                .map(|t_ms| {
                    let phase = ((t_ms % period) / step) as f64 / (SAWTOOTH_STEPS - 1).max(1) as f64;
                    TraceSample {
                        t_ms,
                        capacity_kbps: lo + (hi - lo) * phase.min(1.0),
                    }
                })
                .collect()
        }
    };
    let id = format!("{:?}-{seed}", spec.kind).to_lowercase();
    BandwidthTrace::new(id, samples, dur)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub mean_kbps: f64,
    /// Population standard deviation of the 1-second mean capacities.
    pub dynamism_kbps: f64,
}

/// Mean capacity and dynamism. Chunks are aligned to t=0 and a trailing
/// partial chunk is dropped.
pub fn trace_stats(trace: &BandwidthTrace) -> Result<TraceStats, TraceError> {
    if trace.duration_ms < DYNAMISM_CHUNK_MS {
        return Err(TraceError::TooShort {
            duration_ms: trace.duration_ms,
            min_ms: DYNAMISM_CHUNK_MS,
        });
    }
    let chunks: Vec<f64> = (0..trace.duration_ms / DYNAMISM_CHUNK_MS)
        .map(|k| {
            let t = k * DYNAMISM_CHUNK_MS;
            trace.integrate_bits(t, t + DYNAMISM_CHUNK_MS) / DYNAMISM_CHUNK_MS as f64
        })
        .collect();
    let n = chunks.len() as f64;
    let mu = chunks.iter().sum::<f64>() / n;
    let var = chunks.iter().map(|c| (c - mu) * (c - mu)).sum::<f64>() / n;
    Ok(TraceStats {
        mean_kbps: trace.mean_kbps(),
        dynamism_kbps: var.sqrt(),
    })
}

/// Keeps traces whose mean capacity lies in `[200, 6000]` kbps, in order.
pub fn filter_corpus(traces: Vec<BandwidthTrace>) -> Vec<BandwidthTrace> {
    traces
        .into_iter()
        .filter(|t| {
            let m = t.mean_kbps();
            (MIN_MEAN_KBPS..=MAX_MEAN_KBPS).contains(&m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// Split sizes: floor each share, then hand leftovers out by largest
/// fractional remainder (earlier split wins ties).
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3], TraceError> {
    let r = [ratios.0, ratios.1, ratios.2];
    let sum: f64 = r.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || r.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(TraceError::BadRatios(sum));
    }
    let exact: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = (e + 1e-9).floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Deterministic shuffled partition into train/val/test.
pub fn split_corpus<T>(
    mut items: Vec<T>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<CorpusSplit<T>, TraceError> {
    let [n_train, n_val, _] = split_sizes(items.len(), ratios)?;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = items.split_off(n_train + n_val);
    let val = items.split_off(n_train);
    Ok(CorpusSplit {
        train: items,
        val,
        test,
    })
}

/// One entry of a corpus manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub rtt_ms: u64,
    pub seed: u64,
    #[serde(default)]
    pub tag: String,
}

pub fn read_manifest(text: &str) -> Result<Vec<ManifestEntry>, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    serde_json::to_string_pretty(entries).expect("manifest serializes")
}
