//! Per-frame one-to-one association of estimations with annotations.

use std::collections::BTreeMap;
use std::io::Write;

use pathfinding::matrix::Matrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{EstStream, GtStream};
use crate::model::{BBox, EstRecord, EvalConfig, GtRecord, MatchMode, PersonId, Target};

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub gt_id: PersonId,
    pub est_id: String,
    pub iou: f64,
}

/// Outcome of matching one frame.
///
/// `neutral` holds estimations that matched no OTS annotation but do cover a
/// person without OTS; they count neither as TP nor as FP.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub frame: u32,
    pub tp: Vec<MatchedPair>,
    pub fp: Vec<String>,
    pub fn_: Vec<PersonId>,
    pub neutral: Vec<String>,
}

impl FrameMatch {
    pub fn empty(frame: u32) -> Self {
        Self { frame, ..Default::default() }
    }
}

fn target_name(t: Target) -> &'static str {
    match t {
        Target::Face => "face",
        Target::Person => "person",
    }
}

fn target_boxes<'a>(gt: &[&'a GtRecord], cfg: &EvalConfig) -> Result<Vec<&'a BBox>> {
    gt.iter()
        .map(|r| {
            r.target_box(cfg.target).ok_or_else(|| Error::TargetMissing {
                frame: r.frame,
                person_id: r.person_id.to_string(),
                target: target_name(cfg.target),
            })
        })
        .collect()
}

/// Matches the annotations and estimations of a single frame.
///
/// Greedy mode accepts eligible pairs (IOU at or above the threshold) by
/// decreasing IOU, ties going to the lexicographically smallest
/// `(gt_id, est_id)`. Max-sum mode picks the assignment of eligible pairs
/// with the largest total IOU.
pub fn match_frame(frame: u32, gt: &[&GtRecord], est: &[&EstRecord], cfg: &EvalConfig) -> Result<FrameMatch> {
    let gt_boxes = target_boxes(gt, cfg)?;
    let thr = cfg.iou_threshold;
    let ious: Vec<Vec<f64>> = gt_boxes.iter().map(|g| est.iter().map(|e| g.iou(&e.bbox)).collect()).collect();

    let pairs = match cfg.match_mode {
        MatchMode::Greedy => greedy_pairs(gt, est, &ious, thr),
        MatchMode::MaxSum => max_sum_pairs(&ious, thr),
    };

    let mut gt_used = vec![false; gt.len()];
    let mut est_used = vec![false; est.len()];
    let mut tp = Vec::with_capacity(pairs.len());
    for (gi, ei) in pairs {
        gt_used[gi] = true;
        est_used[ei] = true;
        tp.push(MatchedPair { gt_id: gt[gi].person_id.clone(), est_id: est[ei].est_id.clone(), iou: ious[gi][ei] });
    }
    tp.sort_by(|a, b| a.gt_id.cmp(&b.gt_id));
    let fp = est.iter().zip(&est_used).filter(|(_, u)| !**u).map(|(e, _)| e.est_id.clone()).collect();
    let fn_ = gt.iter().zip(&gt_used).filter(|(_, u)| !**u).map(|(g, _)| g.person_id.clone()).collect();
    Ok(FrameMatch { frame, tp, fp, fn_, neutral: Vec::new() })
}

fn greedy_pairs(gt: &[&GtRecord], est: &[&EstRecord], ious: &[Vec<f64>], thr: f64) -> Vec<(usize, usize)> {
    let mut cands: Vec<(usize, usize)> = Vec::new();
    for (gi, row) in ious.iter().enumerate() {
        for (ei, &v) in row.iter().enumerate() {
            if v >= thr {
                cands.push((gi, ei));
            }
        }
    }
    cands.sort_by(|&(g1, e1), &(g2, e2)| {
        ious[g2][e2]
            .total_cmp(&ious[g1][e1])
            .then_with(|| gt[g1].person_id.cmp(&gt[g2].person_id))
            .then_with(|| est[e1].est_id.cmp(&est[e2].est_id))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut est_used = vec![false; est.len()];
    let mut out = Vec::new();
    for (gi, ei) in cands {
        if !gt_used[gi] && !est_used[ei] {
            gt_used[gi] = true;
            est_used[ei] = true;
            out.push((gi, ei));
        }
    }
    out
}

const WEIGHT_SCALE: f64 = 1e12;

fn max_sum_pairs(ious: &[Vec<f64>], thr: f64) -> Vec<(usize, usize)> {
    let n_gt = ious.len();
    let n_est = ious.first().map_or(0, Vec::len);
    if n_gt == 0 || n_est == 0 {
        return Vec::new();
    }
    let weight = |gi: usize, ei: usize| {
        let v = ious[gi][ei];
        if v >= thr {
            (v * WEIGHT_SCALE).round() as i64
        } else {
            0
        }
    };
    // The solver needs rows <= columns.
    let transposed = n_gt > n_est;
    let (rows, cols) = if transposed { (n_est, n_gt) } else { (n_gt, n_est) };
    let data: Vec<i64> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| if transposed { (c, r) } else { (r, c) }))
        .map(|(gi, ei)| weight(gi, ei))
        .collect();
    let matrix = Matrix::from_vec(rows, cols, data).expect("matrix dimensions");
    let (_, assignment) = pathfinding::kuhn_munkres::kuhn_munkres(&matrix);
    assignment
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .filter(|&(gi, ei)| ious[gi][ei] >= thr)
        .collect()
}

fn group_gt(records: &[GtRecord]) -> BTreeMap<u32, Vec<&GtRecord>> {
    let mut map: BTreeMap<u32, Vec<&GtRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.frame).or_default().push(r);
    }
    map
}

fn group_est(records: &[EstRecord]) -> BTreeMap<u32, Vec<&EstRecord>> {
    let mut map: BTreeMap<u32, Vec<&EstRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.frame).or_default().push(r);
    }
    map
}

/// Matches every kept frame, in frame order.
pub fn match_video(gt: &GtStream, est: &EstStream, cfg: &EvalConfig, kept_frames: &[u32]) -> Result<Vec<FrameMatch>> {
    let gt_by = group_gt(&gt.records);
    let est_by = group_est(&est.records);
    kept_frames
        .iter()
        .map(|&t| {
            let g = gt_by.get(&t).map_or(&[][..], Vec::as_slice);
            let e = est_by.get(&t).map_or(&[][..], Vec::as_slice);
            match_frame(t, g, e, cfg)
        })
        .collect()
}

/// Matches estimations against the OTS annotations only.
///
/// With `cfg.non_ots_neutral`, an unmatched estimation overlapping a person
/// without OTS at or above the IOU threshold is moved from `fp` to
/// `neutral`.
pub fn match_video_ots(
    gt_all: &GtStream,
    est: &EstStream,
    cfg: &EvalConfig,
    kept_frames: &[u32],
) -> Result<Vec<FrameMatch>> {
    let gt_by = group_gt(&gt_all.records);
    let est_by = group_est(&est.records);
    kept_frames
        .iter()
        .map(|&t| {
            let all = gt_by.get(&t).map_or(&[][..], Vec::as_slice);
            let e = est_by.get(&t).map_or(&[][..], Vec::as_slice);
            let (ots, non_ots): (Vec<&GtRecord>, Vec<&GtRecord>) = all.iter().partition(|r| r.ots);
            let mut m = match_frame(t, &ots, e, cfg)?;
            if cfg.non_ots_neutral && !non_ots.is_empty() {
                let others: Vec<&BBox> = non_ots.iter().filter_map(|r| r.target_box(cfg.target)).collect();
                let (neutral, fp): (Vec<String>, Vec<String>) = m.fp.into_iter().partition(|id| {
                    let b = &e.iter().find(|r| &r.est_id == id).expect("fp id from frame").bbox;
                    others.iter().any(|o| o.iou(b) >= cfg.iou_threshold)
                });
                m.fp = fp;
                m.neutral = neutral;
            }
            Ok(m)
        })
        .collect()
}

#[derive(Serialize)]
struct DumpLine<'a> {
    frame: u32,
    tp: Vec<(String, &'a str, f64)>,
    fp: &'a [String],
    #[serde(rename = "fn")]
    fn_: Vec<String>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    neutral: &'a [String],
}

/// Writes one JSON object per frame: `{"frame":t,"tp":[[g,e,iou]...],"fp":[...],"fn":[...]}`.
pub fn write_match_dump<W: Write>(matches: &[FrameMatch], mut out: W) -> Result<()> {
    for m in matches {
        let line = DumpLine {
            frame: m.frame,
            tp: m.tp.iter().map(|p| (p.gt_id.to_string(), p.est_id.as_str(), p.iou)).collect(),
            fp: &m.fp,
            fn_: m.fn_.iter().map(ToString::to_string).collect(),
            neutral: &m.neutral,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<match dump>", e))?;
    }
    Ok(())
}
