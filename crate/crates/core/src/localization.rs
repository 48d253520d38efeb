//! Precision, recall and F1 for localization, plus recall stratified by
//! person-signage distance and by occlusion level.
//!
//! Precision is never stratified: an estimation that misses every "far"
//! annotation may still be a correct "close" detection, so per-stratum false
//! positives are not well defined.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GtStream;
use crate::matching::FrameMatch;
use crate::model::{EvalConfig, Occlusion, PersonId};
use crate::stats::percentile_lower;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfResult {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub vacuous: bool,
}

impl PrfResult {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let precision = p.unwrap_or(0.0);
        let recall = r.unwrap_or(0.0);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { tp, fp, fn_, precision, recall, f1, vacuous: p.is_none() || r.is_none() }
    }
}

pub fn prf(matches: &[FrameMatch]) -> PrfResult {
    let (tp, fp, fn_) = matches.iter().fold((0u64, 0u64, 0u64), |(tp, fp, fn_), m| {
        (tp + m.tp.len() as u64, fp + m.fp.len() as u64, fn_ + m.fn_.len() as u64)
    });
    PrfResult::from_counts(tp, fp, fn_)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceBand {
    Close,
    Far,
}

pub type RecordKey = (u32, PersonId);

#[derive(Debug, Clone)]
pub struct DistanceBands {
    /// Median target-box area over all annotations of the video.
    pub p50_area: f64,
    pub bands: HashMap<RecordKey, DistanceBand>,
}

/// Splits annotations into close (`area >= p50`) and far (`area < p50`).
pub fn distance_bands(gt: &GtStream, cfg: &EvalConfig) -> Result<DistanceBands> {
    if gt.records.is_empty() {
        return Err(Error::EmptyGt);
    }
    let mut areas = Vec::with_capacity(gt.records.len());
    for r in &gt.records {
        let b = r.target_box(cfg.target).ok_or_else(|| Error::TargetMissing {
            frame: r.frame,
            person_id: r.person_id.to_string(),
            target: match cfg.target {
                crate::model::Target::Face => "face",
                crate::model::Target::Person => "person",
            },
        })?;
        areas.push(((r.frame, r.person_id.clone()), b.area()));
    }
    let sorted = crate::stats::sorted(&areas.iter().map(|(_, a)| *a).collect::<Vec<_>>());
    let p50_area = percentile_lower(&sorted, 0.5);
    let bands = areas
        .into_iter()
        .map(|(k, a)| (k, if a >= p50_area { DistanceBand::Close } else { DistanceBand::Far }))
        .collect();
    Ok(DistanceBands { p50_area, bands })
}

pub fn occlusion_index(gt: &GtStream) -> HashMap<RecordKey, Occlusion> {
    gt.records.iter().map(|r| ((r.frame, r.person_id.clone()), r.occlusion)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StratumRecall {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// `None` when the stratum holds no annotations.
    pub recall: Option<f64>,
}

impl StratumRecall {
    fn add(&mut self, matched: bool) {
        if matched {
            self.tp += 1;
        } else {
            self.fn_ += 1;
        }
    }

    fn finish(mut self) -> Self {
        let n = self.tp + self.fn_;
        self.recall = (n > 0).then(|| self.tp as f64 / n as f64);
        self
    }

    pub fn gt_count(&self) -> u64 {
        self.tp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratifiedRecall {
    pub close: StratumRecall,
    pub far: StratumRecall,
    pub occ_none: StratumRecall,
    pub occ_partial: StratumRecall,
    pub occ_heavy: StratumRecall,
    pub p50_area: f64,
}

impl StratifiedRecall {
    pub fn occlusion(&self, o: Occlusion) -> &StratumRecall {
        match o {
            Occlusion::None => &self.occ_none,
            Occlusion::Partial => &self.occ_partial,
            Occlusion::Heavy => &self.occ_heavy,
        }
    }
}

/// Recall per distance band and per occlusion level; each annotation counts
/// as TP when matched and FN otherwise.
pub fn stratified_recall(
    matches: &[FrameMatch],
    bands: &DistanceBands,
    occlusion: &HashMap<RecordKey, Occlusion>,
) -> StratifiedRecall {
    let mut close = StratumRecall::default();
    let mut far = StratumRecall::default();
    let mut occ = [StratumRecall::default(); 3];
    let mut visit = |frame: u32, id: &PersonId, matched: bool| {
        let key = (frame, id.clone());
        match bands.bands.get(&key) {
            Some(DistanceBand::Close) => close.add(matched),
            Some(DistanceBand::Far) => far.add(matched),
            None => {}
        }
        if let Some(o) = occlusion.get(&key) {
            occ[*o as usize].add(matched);
        }
    };
    for m in matches {
        for p in &m.tp {
            visit(m.frame, &p.gt_id, true);
        }
        for id in &m.fn_ {
            visit(m.frame, id, false);
        }
    }
    StratifiedRecall {
        close: close.finish(),
        far: far.finish(),
        occ_none: occ[0].finish(),
        occ_partial: occ[1].finish(),
        occ_heavy: occ[2].finish(),
        p50_area: bands.p50_area,
    }
}
