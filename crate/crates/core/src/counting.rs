//! Counting errors: instantaneous (MOE, MPE), cumulative over the whole
//! video (COE, CPE) and cumulative over sliding segments (TCOE).
//!
//! All series are indexed by position in the kept-frame list, so a decimated
//! video is evaluated only on the frames it actually saw.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{EstStream, GtStream};
use crate::model::PersonId;
use crate::stats;

/// Per-kept-frame counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSeries {
    pub kept: Vec<u32>,
    /// People with OTS (`n_t`).
    pub n_gt_ots: Vec<u32>,
    /// All visible people (`p_t`).
    pub n_gt_all: Vec<u32>,
    /// Estimations (`n̂_t`).
    pub n_est: Vec<u32>,
}

fn counts_on(kept: &[u32], frames: impl Iterator<Item = u32>) -> Vec<u32> {
    let pos: HashMap<u32, usize> = kept.iter().enumerate().map(|(i, &f)| (f, i)).collect();
    let mut out = vec![0u32; kept.len()];
    for f in frames {
        if let Some(&i) = pos.get(&f) {
            out[i] += 1;
        }
    }
    out
}

impl CountSeries {
    pub fn build(gt_ots: &GtStream, gt_all: &GtStream, est: &EstStream, kept: &[u32]) -> Self {
        Self {
            kept: kept.to_vec(),
            n_gt_ots: counts_on(kept, gt_ots.records.iter().map(|r| r.frame)),
            n_gt_all: counts_on(kept, gt_all.records.iter().map(|r| r.frame)),
            n_est: counts_on(kept, est.records.iter().map(|r| r.frame)),
        }
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

fn mean_abs_diff(est: &[u32], actual: &[u32]) -> Result<f64> {
    if est.is_empty() {
        return Err(Error::EmptySeries);
    }
    let total: u64 = est.iter().zip(actual).map(|(&e, &a)| u64::from(e.abs_diff(a))).sum();
    Ok(total as f64 / est.len() as f64)
}

/// Mean Opportunity Error: mean over kept frames of `|n̂_t - n_t|`.
pub fn moe(series: &CountSeries) -> Result<f64> {
    mean_abs_diff(&series.n_est, &series.n_gt_ots)
}

/// Mean People Error: mean over kept frames of `|n̂_t - p_t|`.
pub fn mpe(series: &CountSeries) -> Result<f64> {
    mean_abs_diff(&series.n_est, &series.n_gt_all)
}

/// Kept-frame positions at which each identity is present.
///
/// Identities are anonymous here; only the number of distinct tracks and
/// where they appear matter for counting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdentityPresence {
    /// One strictly increasing, non-empty position list per identity.
    pub tracks: Vec<Vec<usize>>,
    /// Number of kept frames the positions index into.
    pub kept_len: usize,
}

impl IdentityPresence {
    pub fn from_tracks(tracks: Vec<Vec<usize>>, kept_len: usize) -> Self {
        let tracks = tracks
            .into_iter()
            .filter(|t| !t.is_empty())
            .map(|mut t| {
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        Self { tracks, kept_len }
    }

    fn build<K: Ord>(kept: &[u32], items: impl Iterator<Item = (u32, K)>) -> Self {
        let pos: HashMap<u32, usize> = kept.iter().enumerate().map(|(i, &f)| (f, i)).collect();
        let mut map: BTreeMap<K, Vec<usize>> = BTreeMap::new();
        for (frame, key) in items {
            if let Some(&i) = pos.get(&frame) {
                map.entry(key).or_default().push(i);
            }
        }
        Self::from_tracks(map.into_values().collect(), kept.len())
    }

    pub fn from_gt(gt: &GtStream, kept: &[u32]) -> Self {
        Self::build::<&PersonId>(kept, gt.records.iter().map(|r| (r.frame, &r.person_id)))
    }

    pub fn from_est(est: &EstStream, kept: &[u32]) -> Self {
        Self::build::<&str>(kept, est.records.iter().map(|r| (r.frame, r.est_id.as_str())))
    }

    /// Number of distinct identities seen at least once.
    pub fn unique_count(&self) -> usize {
        self.tracks.len()
    }
}

fn cumulative_error(actual: usize, estimated: usize) -> f64 {
    actual.abs_diff(estimated) as f64 / actual.max(1) as f64
}

/// Cumulative Opportunity Error: `|n̂_{1:T} - n_{1:T}| / max(n_{1:T}, 1)`.
pub fn coe(gt_ots: &IdentityPresence, est: &IdentityPresence) -> f64 {
    cumulative_error(gt_ots.unique_count(), est.unique_count())
}

/// Cumulative Person Error: COE measured against every visible person.
pub fn cpe(gt_all: &IdentityPresence, est: &IdentityPresence) -> f64 {
    cumulative_error(gt_all.unique_count(), est.unique_count())
}

/// Number of segment starts for segments spanning `d + 1` kept frames.
pub fn segment_count(kept_len: usize, d: usize) -> usize {
    kept_len.saturating_sub(d)
}

/// Distinct identities inside each window `[s, s + d]`, for every start
/// `s` in `0..kept_len - d`.
///
/// An identity present at position `p` is inside the windows starting in
/// `[p - d, p]`. Those start intervals are merged per identity and added to
/// a difference array, so the cost is linear in presence plus `kept_len`.
pub fn unique_per_window(presence: &IdentityPresence, d: usize) -> Vec<u32> {
    let starts = segment_count(presence.kept_len, d);
    if starts == 0 {
        return Vec::new();
    }
    let mut diff = vec![0i64; starts + 1];
    for track in &presence.tracks {
        let mut current: Option<(usize, usize)> = None;
        for &p in track {
            let lo = p.saturating_sub(d);
            if lo >= starts {
                break;
            }
            let hi = p.min(starts - 1);
            current = match current {
                Some((clo, chi)) if lo <= chi + 1 => Some((clo, chi.max(hi))),
                Some((clo, chi)) => {
                    diff[clo] += 1;
                    diff[chi + 1] -= 1;
                    Some((lo, hi))
                }
                None => Some((lo, hi)),
            };
        }
        if let Some((clo, chi)) = current {
            diff[clo] += 1;
            diff[chi + 1] -= 1;
        }
    }
    let mut acc = 0i64;
    diff[..starts]
        .iter()
        .map(|d| {
            acc += d;
            acc as u32
        })
        .collect()
}

/// Per-window absolute unique-count error for segments of `d` frames.
pub fn window_errors(gt: &IdentityPresence, est: &IdentityPresence, d: usize) -> Vec<u32> {
    let g = unique_per_window(gt, d);
    let e = unique_per_window(est, d);
    g.iter().zip(&e).map(|(a, b)| a.abs_diff(*b)).collect()
}

/// Reference implementation of [`window_errors`]: rebuilds each window's
/// identity sets from scratch. Quadratic; meant for verification.
pub fn tcoe_oracle(gt: &IdentityPresence, est: &IdentityPresence, d: usize) -> Vec<u32> {
    use std::collections::HashSet;
    let kept_len = gt.kept_len.max(est.kept_len);
    let at_frame = |presence: &IdentityPresence| {
        let mut frames: Vec<Vec<usize>> = vec![Vec::new(); kept_len];
        for (id, track) in presence.tracks.iter().enumerate() {
            for &t in track {
                frames[t].push(id);
            }
        }
        frames
    };
    let (gt_frames, est_frames) = (at_frame(gt), at_frame(est));
    let distinct = |frames: &[Vec<usize>], s: usize| -> usize {
        let mut seen = HashSet::new();
        for ids in &frames[s..=s + d] {
            seen.extend(ids.iter().copied());
        }
        seen.len()
    };
    (0..segment_count(kept_len, d)).map(|s| distinct(&gt_frames, s).abs_diff(distinct(&est_frames, s)) as u32).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcoeResult {
    pub duration_s: f64,
    /// Segment length `D` in kept frames.
    pub frames: usize,
    /// `|𝒯_{D,T}|`; 0 when the video is too short for this duration.
    pub segment_count: usize,
    pub mean_abs_error: Option<f64>,
    pub std_abs_error: Option<f64>,
}

impl TcoeResult {
    pub fn skipped(&self) -> bool {
        self.segment_count == 0
    }
}

/// Segment length in kept frames for a duration at the effective frame rate.
pub fn segment_frames(duration_s: f64, effective_fps: f64) -> usize {
    ((duration_s * effective_fps).round() as usize).max(1)
}

pub fn summarize_windows(duration_s: f64, d: usize, errors: &[u32]) -> TcoeResult {
    let values: Vec<f64> = errors.iter().map(|&e| f64::from(e)).collect();
    let (mean, std) = if values.is_empty() {
        (None, None)
    } else {
        (Some(stats::mean(&values)), Some(stats::std_population(&values)))
    };
    TcoeResult { duration_s, frames: d, segment_count: errors.len(), mean_abs_error: mean, std_abs_error: std }
}

/// TCOE for each requested duration. Durations whose segment does not fit
/// in the kept frames are reported with `segment_count == 0`.
pub fn tcoe(gt: &IdentityPresence, est: &IdentityPresence, durations_s: &[f64], effective_fps: f64) -> Vec<TcoeResult> {
    durations_s
        .iter()
        .map(|&dur| {
            let d = segment_frames(dur, effective_fps);
            summarize_windows(dur, d, &window_errors(gt, est, d))
        })
        .collect()
}

/// CSV with columns `start_frame,D,error`; `start_frame` is the video frame
/// index of each window's first kept frame.
pub fn write_window_dump<W: Write>(out: W, kept: &[u32], windows: &[(usize, Vec<u32>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["start_frame", "D", "error"])?;
    for (d, errors) in windows {
        for (s, e) in errors.iter().enumerate() {
            w.write_record([kept[s].to_string(), d.to_string(), e.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<tcoe windows>", e))?;
    Ok(())
}
