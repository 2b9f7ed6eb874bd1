//! QoE metrics per session, percentile summaries across a corpus and
//! percentage comparisons between two summaries.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::sim::{detect_freezes, frozen_ms, SessionLog};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("cannot summarize an empty set of reports")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoEReport {
    /// Delivered (decodable) frame bits over the session length.
    pub avg_video_bitrate_kbps: f64,
    /// Frozen time over session time.
    pub freeze_rate: f64,
    pub frame_rate_fps: f64,
    pub mean_frame_delay_ms: f64,
}

pub fn qoe(log: &SessionLog) -> QoEReport {
    let dur = log.duration_ms.max(1) as f64;
    let delivered: Vec<_> = log.frames.iter().filter(|f| f.complete_arrival_ts_ms.is_some()).collect();
    let bits: f64 = delivered.iter().map(|f| f.size_bytes as f64 * 8.0).sum();
    let delay = if delivered.is_empty() {
        0.0
    } else {
        delivered
            .iter()
            .map(|f| (f.complete_arrival_ts_ms.unwrap() - f.capture_ts_ms) as f64)
            .sum::<f64>()
            / delivered.len() as f64
    };
    let mut arrivals = log.delivered_arrivals();
    arrivals.sort_unstable();
    let spans = detect_freezes(&arrivals, log.duration_ms, 1000.0 / log.config.fps as f64);
    QoEReport {
        avg_video_bitrate_kbps: bits / dur,
        freeze_rate: (frozen_ms(&spans) as f64 / dur).clamp(0.0, 1.0),
        frame_rate_fps: delivered.len() as f64 * 1000.0 / dur,
        mean_frame_delay_ms: delay,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

impl Percentiles {
    pub const LEVELS: [(&'static str, f64); 5] = [("p10", 10.0), ("p25", 25.0), ("p50", 50.0), ("p75", 75.0), ("p90", 90.0)];

    pub fn of(values: &[f64]) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p| nearest_rank(&v, p);
        Ok(Self {
            p10: q(10.0),
            p25: q(25.0),
            p50: q(50.0),
            p75: q(75.0),
            p90: q(90.0),
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "p10" => Some(self.p10),
            "p25" => Some(self.p25),
            "p50" => Some(self.p50),
            "p75" => Some(self.p75),
            "p90" => Some(self.p90),
            _ => None,
        }
    }
}

/// Nearest-rank percentile of sorted, non-empty `v`: the value at rank
/// `ceil(p / 100 * n)`.
pub fn nearest_rank(v: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub avg_video_bitrate_kbps: Percentiles,
    pub freeze_rate: Percentiles,
    pub frame_rate_fps: Percentiles,
    pub mean_frame_delay_ms: Percentiles,
}

impl MetricSummary {
    pub const METRICS: [&'static str; 4] = ["avg_video_bitrate_kbps", "freeze_rate", "frame_rate_fps", "mean_frame_delay_ms"];

    fn of(reports: &[&QoEReport]) -> Result<Self, EvalError> {
        let col = |f: fn(&QoEReport) -> f64| Percentiles::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Ok(Self {
            count: reports.len(),
            avg_video_bitrate_kbps: col(|r| r.avg_video_bitrate_kbps)?,
            freeze_rate: col(|r| r.freeze_rate)?,
            frame_rate_fps: col(|r| r.frame_rate_fps)?,
            mean_frame_delay_ms: col(|r| r.mean_frame_delay_ms)?,
        })
    }

    pub fn metric(&self, name: &str) -> Option<&Percentiles> {
        match name {
            "avg_video_bitrate_kbps" => Some(&self.avg_video_bitrate_kbps),
            "freeze_rate" => Some(&self.freeze_rate),
            "frame_rate_fps" => Some(&self.frame_rate_fps),
            "mean_frame_delay_ms" => Some(&self.mean_frame_delay_ms),
            _ => None,
        }
    }
}

/// What a session is grouped by in the breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLabel {
    pub trace_id: String,
    pub rtt_ms: u64,
    /// Standard deviation of the trace's 1-second mean capacities.
    pub dynamism_kbps: f64,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub overall: MetricSummary,
    /// Keyed `rtt=<ms>`, `dynamism=low|high` and `tag=<tag>`.
    pub subsets: BTreeMap<String, MetricSummary>,
    pub mean_dynamism_kbps: f64,
}

/// Percentile summary of the whole corpus and of each subset. Dynamism is
/// `high` when above the corpus mean.
pub fn summarize(reports: &[QoEReport], labels: &[SessionLabel]) -> Result<CorpusSummary, EvalError> {
    assert_eq!(reports.len(), labels.len(), "one label per report");
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let mean_dyn = labels.iter().map(|l| l.dynamism_kbps).sum::<f64>() / labels.len() as f64;
    let mut groups: BTreeMap<String, Vec<&QoEReport>> = BTreeMap::new();
    for (r, l) in reports.iter().zip(labels) {
        let class = if l.dynamism_kbps > mean_dyn { "high" } else { "low" };
        for key in [format!("rtt={}", l.rtt_ms), format!("dynamism={class}"), format!("tag={}", l.tag)] {
            groups.entry(key).or_default().push(r);
        }
    }
    let all: Vec<&QoEReport> = reports.iter().collect();
    Ok(CorpusSummary {
        overall: MetricSummary::of(&all)?,
        subsets: groups
            .into_iter()
            .map(|(k, v)| MetricSummary::of(&v).map(|s| (k, s)))
            .collect::<Result<_, _>>()?,
        mean_dynamism_kbps: mean_dyn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub subset: String,
    pub metric: String,
    pub percentile: String,
    pub a: f64,
    pub b: f64,
    /// Percent `(a - b) / b * 100`, or `a - b` when `relative` is false.
    pub delta: f64,
    pub relative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub format_version: u32,
    pub deltas: Vec<Delta>,
}

impl Comparison {
    pub fn find(&self, subset: &str, metric: &str, percentile: &str) -> Option<&Delta> {
        self.deltas
            .iter()
            .find(|d| d.subset == subset && d.metric == metric && d.percentile == percentile)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "subset,metric,percentile,a,b,delta,relative")?;
        for d in &self.deltas {
            writeln!(out, "{},{},{},{},{},{},{}", d.subset, d.metric, d.percentile, d.a, d.b, d.delta, d.relative)?;
        }
        Ok(())
    }
}

fn delta_rows(subset: &str, a: &MetricSummary, b: &MetricSummary, out: &mut Vec<Delta>) {
    for metric in MetricSummary::METRICS {
        let (pa, pb) = (a.metric(metric).unwrap(), b.metric(metric).unwrap());
        for (name, _) in Percentiles::LEVELS {
            let (va, vb) = (pa.get(name).unwrap(), pb.get(name).unwrap());
            let (delta, relative) = if vb != 0.0 { ((va - vb) / vb * 100.0, true) } else { (va - vb, false) };
            out.push(Delta {
                subset: subset.to_string(),
                metric: metric.to_string(),
                percentile: name.to_string(),
                a: va,
                b: vb,
                delta,
                relative,
            });
        }
    }
}

/// Per-metric, per-percentile change of `a` relative to `b`, overall and
/// for every subset present in both.
pub fn compare(a: &CorpusSummary, b: &CorpusSummary) -> Comparison {
    let mut deltas = Vec::new();
    delta_rows("overall", &a.overall, &b.overall, &mut deltas);
    for (k, sa) in &a.subsets {
        if let Some(sb) = b.subsets.get(k) {
            delta_rows(k, sa, sb, &mut deltas);
        }
    }
    Comparison {
        format_version: REPORT_FORMAT_VERSION,
        deltas,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub label: SessionLabel,
    pub qoe: QoEReport,
}

/// Evaluation of one controller over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub controller: String,
    pub config_digest: String,
    pub per_trace: Vec<TraceResult>,
    pub summary: CorpusSummary,
}

impl EvalReport {
    pub fn new(controller: &str, config_digest: &str, mut per_trace: Vec<TraceResult>) -> Result<Self, EvalError> {
        per_trace.sort_by(|a, b| a.label.trace_id.cmp(&b.label.trace_id));
        let reports: Vec<QoEReport> = per_trace.iter().map(|t| t.qoe).collect();
        let labels: Vec<SessionLabel> = per_trace.iter().map(|t| t.label.clone()).collect();
        let summary = summarize(&reports, &labels)?;
        Ok(Self {
            format_version: REPORT_FORMAT_VERSION,
            controller: controller.to_string(),
            config_digest: config_digest.to_string(),
            per_trace,
            summary,
        })
    }

    pub fn write_per_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "trace_id,rtt_ms,dynamism_kbps,tag,avg_video_bitrate_kbps,freeze_rate,frame_rate_fps,mean_frame_delay_ms"
        )?;
        for t in &self.per_trace {
            let (l, q) = (&t.label, &t.qoe);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                l.trace_id,
                l.rtt_ms,
                l.dynamism_kbps,
                l.tag,
                q.avg_video_bitrate_kbps,
                q.freeze_rate,
                q.frame_rate_fps,
                q.mean_frame_delay_ms
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{FrameRecord, SimConfig};

    fn log_with_arrivals(arrivals: &[Option<u64>], size: u32, duration_ms: u64) -> SessionLog {
        SessionLog {
            config: SimConfig::default(),
            trace_id: "t".into(),
            duration_ms,
            ticks: Vec::new(),
            frames: arrivals
                .iter()
                .enumerate()
                .map(|(i, a)| FrameRecord {
                    frame_id: i as u64,
                    capture_ts_ms: a.map_or(0, |a| a.saturating_sub(10)),
                    size_bytes: size,
                    complete_arrival_ts_ms: *a,
                })
                .collect(),
            clamped_actions: 0,
        }
    }

    #[test]
    fn periodic_delivery() {
        let arr: Vec<Option<u64>> = (0..1800).map(|i| Some((i * 1000 + 999) / 30)).collect();
        let q = qoe(&log_with_arrivals(&arr, 10_000, 60_000));
        assert!((q.avg_video_bitrate_kbps - 2400.0).abs() < 1e-9);
        assert_eq!(q.freeze_rate, 0.0);
        assert!((q.frame_rate_fps - 30.0).abs() < 1e-9);
        assert!((q.mean_frame_delay_ms - 10.0).abs() < 1e-9);
    }

    #[test]
    fn nothing_delivered() {
        let q = qoe(&log_with_arrivals(&[None; 100], 1000, 60_000));
        assert_eq!(q.freeze_rate, 1.0);
        assert_eq!(q.frame_rate_fps, 0.0);
        assert_eq!(q.avg_video_bitrate_kbps, 0.0);
    }

    #[test]
    fn one_long_gap() {
        let mut arr: Vec<u64> = (0..900).map(|i| i * 33).collect();
        let resume = arr.last().unwrap() + 500;
        arr.extend((0..).map(|i| resume + i * 33).take_while(|t| *t < 60_000));
        let end = arr.last().unwrap() + 33;
        let arr: Vec<Option<u64>> = arr.into_iter().map(Some).collect();
        let q = qoe(&log_with_arrivals(&arr, 1000, end));
        assert!((q.freeze_rate - 467.0 / end as f64).abs() < 1e-12);
        assert!((q.freeze_rate - (500.0 - 33.0) / 60_000.0).abs() < 1e-5);
    }

    #[test]
    fn nearest_rank_hand_values() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64 * 100.0).collect();
        let p = Percentiles::of(&v).unwrap();
        assert_eq!((p.p10, p.p25, p.p50, p.p75, p.p90), (100.0, 300.0, 500.0, 800.0, 900.0));
        assert_eq!(Percentiles::of(&[]).unwrap_err(), EvalError::Empty);
    }

    fn report(b: f64, f: f64) -> QoEReport {
        QoEReport {
            avg_video_bitrate_kbps: b,
            freeze_rate: f,
            frame_rate_fps: 30.0,
            mean_frame_delay_ms: 100.0,
        }
    }

    fn label(i: usize) -> SessionLabel {
        SessionLabel {
            trace_id: format!("t{i}"),
            rtt_ms: [40, 100, 160][i % 3],
            dynamism_kbps: i as f64,
            tag: "test".into(),
        }
    }

    #[test]
    fn summary_partitions_and_identical_reports() {
        let reports: Vec<QoEReport> = (0..10).map(|i| report(100.0 * i as f64, 0.01)).collect();
        let labels: Vec<SessionLabel> = (0..10).map(label).collect();
        let s = summarize(&reports, &labels).unwrap();
        let count = |prefix: &str| s.subsets.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.count).sum::<usize>();
        assert_eq!(count("rtt="), 10);
        assert_eq!(count("dynamism="), 10);
        assert_eq!(count("tag="), 10);
        let f = s.overall.freeze_rate;
        assert!(f.p10 == f.p90 && f.p50 == 0.01);
    }

    #[test]
    fn comparisons() {
        let labels: Vec<SessionLabel> = (0..3).map(label).collect();
        let a = summarize(&[report(1150.0, 0.0); 3], &labels).unwrap();
        let b = summarize(&[report(1000.0, 0.0); 3], &labels).unwrap();
        let same = compare(&a, &a);
        assert!(same.deltas.iter().all(|d| d.delta == 0.0));
        let c = compare(&a, &b);
        let d = c.find("overall", "avg_video_bitrate_kbps", "p50").unwrap();
        assert!((d.delta - 15.0).abs() < 1e-9 && d.relative);
        let f = c.find("overall", "freeze_rate", "p50").unwrap();
        assert!(!f.relative);
        assert_eq!(f.delta, 0.0);
        let mut csv = Vec::new();
        c.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), c.deltas.len() + 1);
    }
}
