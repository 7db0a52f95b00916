//! Slow, obviously-correct reference implementations.

use mediator_core::metrics::Alternative;
use mediator_core::{CaptureLog, UserId, VoiceEventKind};

/// Σᵢ Σⱼ |xᵢ − xⱼ| / (2 n² μ).
pub fn gini(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut s = 0.0;
    for a in x {
        for b in x {
            s += (a - b).abs();
        }
    }
    s / (2.0 * n * n * mean)
}

/// One-tailed p of the signed-rank statistic by listing all 2ⁿ sign vectors.
/// `abs_ranks[i]` is the rank of |dᵢ|; `v` is the observed sum of positive ranks.
pub fn signed_rank_p(abs_ranks: &[f64], v: f64, alternative: Alternative) -> f64 {
    let n = abs_ranks.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| abs_ranks[i]).sum();
        let extreme = match alternative {
            Alternative::TreatmentGreater => s >= v - 1e-9,
            Alternative::TreatmentLess => s <= v + 1e-9,
        };
        hits += extreme as u64;
    }
    hits as f64 / (1u64 << n) as f64
}

/// Ranks 1..n of distinct values.
pub fn distinct_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| 1.0 + values.iter().filter(|w| *w < v).count() as f64)
        .collect()
}

/// Per-user (speaking_ms, present_ms, joined) from 1 ms boolean timelines.
pub fn timeline(log: &CaptureLog, members: &[UserId], duration_ms: u64) -> Vec<(u64, u64, bool)> {
    members
        .iter()
        .map(|u| {
            let mut evs: Vec<_> = log.events.iter().filter(|e| &e.user_id == u).collect();
            evs.sort_by_key(|e| e.ts_ms);
            let mut speaking_line = vec![false; duration_ms as usize];
            let mut present_line = vec![false; duration_ms as usize];
            let (mut speaking, mut present) = (false, false);
            let mut next = 0;
            for ms in 0..duration_ms {
                while next < evs.len() && evs[next].ts_ms.min(duration_ms) == ms {
                    match evs[next].kind {
                        VoiceEventKind::SpeakStart => speaking = true,
                        VoiceEventKind::SpeakStop => speaking = false,
                        VoiceEventKind::Join => present = true,
                        VoiceEventKind::Leave => present = false,
                    }
                    next += 1;
                }
                speaking_line[ms as usize] = speaking;
                present_line[ms as usize] = present;
            }
            let joined = evs.iter().any(|e| e.kind == VoiceEventKind::Join);
            (
                speaking_line.iter().filter(|b| **b).count() as u64,
                present_line.iter().filter(|b| **b).count() as u64,
                joined,
            )
        })
        .collect()
}
