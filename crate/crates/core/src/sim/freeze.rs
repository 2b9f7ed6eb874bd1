use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Number of past rendered-frame durations averaged by the freeze rule.
const FREEZE_HISTORY: usize = 30;
const FREEZE_EXTRA_MS: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSpan {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl FreezeSpan {
    pub fn len_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// WebRTC-style freeze detection over sorted render (complete-arrival)
/// times.
///
/// A gap `g` is a freeze when `g > max(3 * avg, avg + 150 ms)`, `avg` being
/// the mean of up to the last 30 rendered durations (`nominal_frame_ms`
/// before any exist). The frozen part is the excess of `g` over `avg`. The
/// gap from the last frame to the session end is judged the same way.
pub fn detect_freezes(arrivals_ms: &[u64], session_duration_ms: u64, nominal_frame_ms: f64) -> Vec<FreezeSpan> {
    if arrivals_ms.len() < 2 {
        return vec![FreezeSpan {
            start_ms: 0,
            end_ms: session_duration_ms.max(1),
        }];
    }
    let mut spans = Vec::new();
    let mut history: VecDeque<f64> = VecDeque::with_capacity(FREEZE_HISTORY);
    let judge = |prev: u64, next: u64, history: &VecDeque<f64>, spans: &mut Vec<FreezeSpan>| {
        let gap = next.saturating_sub(prev) as f64;
        let avg = if history.is_empty() {
            nominal_frame_ms
        } else {
            history.iter().sum::<f64>() / history.len() as f64
        };
        if gap > (3.0 * avg).max(avg + FREEZE_EXTRA_MS) {
            let start_ms = prev + avg.round() as u64;
            if next > start_ms {
                spans.push(FreezeSpan { start_ms, end_ms: next });
            }
        }
        gap
    };
    for w in arrivals_ms.windows(2) {
        let gap = judge(w[0], w[1], &history, &mut spans);
        if history.len() == FREEZE_HISTORY {
            history.pop_front();
        }
        history.push_back(gap);
    }
    let last = *arrivals_ms.last().unwrap();
    if session_duration_ms > last {
        judge(last, session_duration_ms, &history, &mut spans);
    }
    spans
}

pub fn frozen_ms(spans: &[FreezeSpan]) -> u64 {
    spans.iter().map(FreezeSpan::len_ms).sum()
}
