//! Glue between the stages: synthetic corpora, log collection, dataset
//! construction and corpus-wide evaluation. Sessions run in parallel and
//! results keep the order of the input entries.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{qoe, EvalReport, SessionLabel, TraceResult};
use crate::gcc::{GccConfig, GccController, PopulationGcc, PopulationSpec};
use crate::learner::{ModelBundle, PolicyController};
use crate::oracle::{OracleConfig, OracleController};
use crate::sim::{run_session, SessionLog, SimConfig};
use crate::telemetry::{extract_transitions, Dataset, Normalizers, RewardParams};
use crate::trace::{filter_corpus, gen_synthetic_trace, trace_stats, BandwidthTrace, SyntheticKind, SyntheticSpec};
use crate::{config_digest, Error};

/// Recipe for a randomized synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_traces: usize,
    pub duration_ms: u64,
    pub min_kbps: f64,
    pub max_kbps: f64,
    pub rtts_ms: Vec<u64>,
    /// Assigned round-robin.
    pub kinds: Vec<SyntheticKind>,
    pub tag: String,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_traces: 200,
            duration_ms: 60_000,
            min_kbps: 200.0,
            max_kbps: 6000.0,
            rtts_ms: vec![40, 100, 160],
            kinds: vec![SyntheticKind::Step, SyntheticKind::Dip, SyntheticKind::RandomWalk],
            tag: "synthetic".into(),
        }
    }
}

/// A trace plus the path conditions it is replayed under.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub trace: BandwidthTrace,
    pub rtt_ms: u64,
    /// Session seed (codec noise, random loss).
    pub seed: u64,
    pub tag: String,
}

impl CorpusEntry {
    pub fn sim_config(&self, base: &SimConfig) -> SimConfig {
        SimConfig {
            rtt_ms: self.rtt_ms,
            session_seed: self.seed,
            ..base.clone()
        }
    }

    pub fn label(&self) -> SessionLabel {
        SessionLabel {
            trace_id: self.trace.id.clone(),
            rtt_ms: self.rtt_ms,
            dynamism_kbps: trace_stats(&self.trace).map_or(0.0, |s| s.dynamism_kbps),
            tag: self.tag.clone(),
        }
    }
}

/// Draws a corpus from `spec`. Capacity ranges are log-uniform; traces
/// whose mean falls outside the accepted range are dropped.
pub fn gen_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<CorpusEntry>, Error> {
    if spec.kinds.is_empty() || spec.rtts_ms.is_empty() {
        return Err(Error::Format("corpus spec needs at least one kind and one rtt".into()));
    }
    if !(spec.min_kbps > 0.0 && spec.min_kbps < spec.max_kbps) {
        return Err(Error::Format(format!(
            "corpus spec needs 0 < min_kbps < max_kbps, got {}..{}",
            spec.min_kbps, spec.max_kbps
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lmin, lmax) = (spec.min_kbps.ln(), spec.max_kbps.ln());
    let mut entries = Vec::with_capacity(spec.n_traces);
    for i in 0..spec.n_traces {
        let kind = spec.kinds[i % spec.kinds.len()];
        let low = rng.random_range(lmin..lmin + 0.75 * (lmax - lmin)).exp();
        let high = (low * rng.random_range(2.0..8.0)).min(spec.max_kbps);
        let period_s: f64 = match kind {
            SyntheticKind::Step => rng.random_range(8.0..20.0),
            SyntheticKind::Dip => rng.random_range(3.0..8.0),
            SyntheticKind::RandomWalk => rng.random_range(0.5..2.0),
            SyntheticKind::Constant | SyntheticKind::Sawtooth => rng.random_range(5.0..20.0),
        };
        let synth = SyntheticSpec {
            kind,
            low_kbps: low,
            high_kbps: high,
            period_ms: (period_s * 1000.0) as u64,
            duration_ms: spec.duration_ms,
        };
        let mut trace = gen_synthetic_trace(&synth, rng.next_u64())?;
        trace.id = format!("{}_{i:04}", spec.tag);
        let rtt_ms = spec.rtts_ms[rng.random_range(0..spec.rtts_ms.len())];
        entries.push((trace, rtt_ms, rng.next_u64()));
    }
    let kept = filter_corpus(entries.iter().map(|e| e.0.clone()).collect());
    Ok(entries
        .into_iter()
        .filter(|(t, _, _)| kept.iter().any(|k| k.id == t.id))
        .map(|(trace, rtt_ms, seed)| CorpusEntry {
            trace,
            rtt_ms,
            seed,
            tag: spec.tag.clone(),
        })
        .collect())
}

/// Which controller drives a session.
#[derive(Debug, Clone)]
pub enum ControllerSpec {
    Gcc(GccConfig),
    /// Action set taken from a GCC run on the same entry.
    Oracle {
        gcc: GccConfig,
        horizon_ms: u64,
        safety_factor: f64,
    },
    /// Randomized GCC fleet that produces training logs.
    Population { gcc: GccConfig, population: PopulationSpec },
    Policy(Box<ModelBundle>),
}

impl ControllerSpec {
    pub fn oracle(gcc: GccConfig) -> Self {
        Self::Oracle {
            gcc,
            horizon_ms: 1000,
            safety_factor: 0.95,
        }
    }

    pub fn population(gcc: GccConfig) -> Self {
        Self::Population {
            gcc,
            population: PopulationSpec::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gcc(_) => "gcc",
            Self::Oracle { .. } => "oracle",
            Self::Population { .. } => "gcc-population",
            Self::Policy(_) => "policy",
        }
    }

    fn digest(&self, base: &SimConfig) -> String {
        match self {
            Self::Gcc(g) => config_digest(&("gcc", g, base)),
            Self::Oracle {
                gcc,
                horizon_ms,
                safety_factor,
            } => config_digest(&("oracle", gcc, horizon_ms, safety_factor, base)),
            Self::Population { gcc, population } => config_digest(&("gcc-population", gcc, population, base)),
            Self::Policy(m) => config_digest(&("policy", &m.hyper, base)),
        }
    }
}

/// Replays one entry under `spec`.
pub fn run_entry(spec: &ControllerSpec, entry: &CorpusEntry, base: &SimConfig) -> Result<SessionLog, Error> {
    let cfg = entry.sim_config(base);
    let log = match spec {
        ControllerSpec::Gcc(g) => run_session(&entry.trace, &mut GccController::new(g.clone()), &cfg)?,
        ControllerSpec::Oracle {
            gcc,
            horizon_ms,
            safety_factor,
        } => {
            let reference = run_session(&entry.trace, &mut GccController::new(gcc.clone()), &cfg)?;
            let mut oc = OracleConfig::from_log(&reference)?;
            oc.horizon_ms = *horizon_ms;
            oc.safety_factor = *safety_factor;
            run_session(&entry.trace, &mut OracleController::new(entry.trace.clone(), oc)?, &cfg)?
        }
        ControllerSpec::Population { gcc, population } => {
            // Decorrelated from the session seed, which drives codec noise.
            let seed = entry.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
            run_session(&entry.trace, &mut PopulationGcc::new(gcc, population, seed), &cfg)?
        }
        ControllerSpec::Policy(m) => run_session(&entry.trace, &mut PolicyController::new(m), &cfg)?,
    };
    Ok(log)
}

pub fn run_corpus(spec: &ControllerSpec, entries: &[CorpusEntry], base: &SimConfig) -> Result<Vec<SessionLog>, Error> {
    entries.par_iter().map(|e| run_entry(spec, e, base)).collect()
}

/// Transitions of every log, in log order, with provenance.
pub fn build_dataset(logs: &[SessionLog], norm: &Normalizers, reward: &RewardParams) -> Dataset {
    let per_log: Vec<_> = logs.par_iter().map(|l| extract_transitions(l, norm, reward)).collect();
    let mut ds = Dataset {
        normalizers: *norm,
        reward: *reward,
        ..Dataset::default()
    };
    for (log, tr) in logs.iter().zip(per_log) {
        ds.push_session(&log.trace_id, &config_digest(&log.config), tr);
    }
    ds
}

/// Runs `spec` over the corpus and summarizes the QoE.
pub fn evaluate(spec: &ControllerSpec, entries: &[CorpusEntry], base: &SimConfig) -> Result<EvalReport, Error> {
    let per_trace = entries
        .par_iter()
        .map(|e| {
            run_entry(spec, e, base).map(|log| TraceResult {
                label: e.label(),
                qoe: qoe(&log),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(EvalReport::new(spec.name(), &spec.digest(base), per_trace)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec {
            n_traces: 6,
            duration_ms: 10_000,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let a = gen_corpus(&small(), 9).unwrap();
        assert_eq!(a, gen_corpus(&small(), 9).unwrap());
        assert_ne!(a, gen_corpus(&small(), 10).unwrap());
        for e in &a {
            assert!([40, 100, 160].contains(&e.rtt_ms));
            let m = e.trace.mean_kbps();
            assert!((200.0..=6000.0).contains(&m), "{m}");
        }
    }

    #[test]
    fn collect_build_and_evaluate() {
        let entries = gen_corpus(&small(), 1).unwrap();
        let base = SimConfig::default();
        let gcc = ControllerSpec::Gcc(GccConfig::default());
        let logs = run_corpus(&gcc, &entries, &base).unwrap();
        let ds = build_dataset(&logs, &Normalizers::default(), &RewardParams::default());
        assert_eq!(ds.provenance.len(), entries.len());
        assert_eq!(ds.len(), ds.provenance.iter().map(|p| p.count).sum::<usize>());
        let report = evaluate(&ControllerSpec::oracle(GccConfig::default()), &entries, &base).unwrap();
        assert_eq!(report.per_trace.len(), entries.len());
        assert_eq!(report.controller, "oracle");
    }
}
