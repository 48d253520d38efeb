//! Per-video evaluation, dataset aggregation and report rendering.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attributes::{self, ClassCounts};
use crate::counting::{self, IdentityPresence, TcoeResult};
use crate::error::{Error, Result};
use crate::ingest::{self, EstStream, GtStream};
use crate::localization::{self, DistanceBands, PrfResult, StratifiedRecall};
use crate::matching::{self, FrameMatch};
use crate::model::{AgeClass, EvalConfig, Gender, VideoMeta};
use crate::stats;

pub const SCHEMA_VERSION: u32 = 1;

/// Parsed files of one video.
#[derive(Debug, Clone)]
pub struct VideoInput {
    pub meta: VideoMeta,
    pub gt: GtStream,
    pub est: EstStream,
}

pub fn load_video(gt_path: &Path, est_path: &Path, meta_path: &Path) -> Result<VideoInput> {
    let meta = ingest::load_meta(meta_path)?;
    let name = meta.name.clone();
    let load = || -> Result<VideoInput> {
        let gt = ingest::parse_gt(gt_path, &meta)?;
        let est = ingest::parse_est(est_path, &meta)?;
        Ok(VideoInput { meta: meta.clone(), gt, est })
    };
    load().map_err(|e| e.in_video(&name))
}

/// Streams after preprocessing, restricted to the frames seen at the
/// configured input rate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kept: Vec<u32>,
    pub effective_fps: f64,
    /// All annotated people after ignore areas and re-entry splitting.
    pub gt_all: GtStream,
    pub gt_ots: GtStream,
    pub est: EstStream,
}

pub fn prepare(input: &VideoInput, cfg: &EvalConfig) -> Result<Prepared> {
    cfg.validate()?;
    let meta = &input.meta;
    let gt = ingest::interpolate_keyframes(&input.gt, cfg.reentry_gap_frames(meta.fps));
    let (gt, est) = ingest::apply_ignore_areas(&gt, &input.est, meta, cfg);
    let gt = ingest::split_reentries(&gt, meta, cfg);
    let (kept, effective_fps) = match cfg.target_fps {
        Some(target) => {
            let stride = ingest::decimation_stride(meta.fps, target)?;
            (ingest::decimate(meta.frame_count, meta.fps, target)?, meta.fps / f64::from(stride))
        }
        None => ((1..=meta.frame_count).collect(), meta.fps),
    };
    let gt_all = ingest::restrict_gt(&gt, &kept);
    let gt_ots = ingest::filter_ots(&gt_all);
    let est = ingest::restrict_est(&est, &kept);
    Ok(Prepared { kept, effective_fps, gt_all, gt_ots, est })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    #[serde(flatten)]
    pub prf: PrfResult,
    /// Unmatched estimations that overlap a person without OTS.
    pub neutral: u64,
    pub stratified: StratifiedRecall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingReport {
    pub moe: f64,
    pub mpe: f64,
    pub coe: f64,
    pub cpe: f64,
    pub unique_gt_ots: usize,
    pub unique_gt_all: usize,
    pub unique_est: usize,
    pub tcoe: Vec<TcoeResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub age: ClassCounts<AgeClass>,
    pub age_prf: BTreeMap<AgeClass, PrfResult>,
    pub gender: ClassCounts<Gender>,
    pub gender_prf: BTreeMap<Gender, PrfResult>,
    pub stratified: attributes::StratifiedF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video: String,
    pub frame_count: u32,
    pub fps: f64,
    pub effective_fps: f64,
    pub kept_frames: usize,
    pub localization: LocalizationReport,
    pub counting: CountingReport,
    pub attributes: AttributeReport,
}

/// Everything computed for one video, including intermediate results that
/// the CLI can dump.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: VideoReport,
    pub matches: Vec<FrameMatch>,
    pub gt_presence: IdentityPresence,
    pub est_presence: IdentityPresence,
    pub kept: Vec<u32>,
}

pub fn evaluate_prepared(meta: &VideoMeta, p: &Prepared, cfg: &EvalConfig) -> Result<Evaluation> {
    let matches = matching::match_video_ots(&p.gt_all, &p.est, cfg, &p.kept)?;
    let prf = localization::prf(&matches);
    let neutral = matches.iter().map(|m| m.neutral.len() as u64).sum();
    let bands = if p.gt_ots.is_empty() {
        DistanceBands { p50_area: 0.0, bands: Default::default() }
    } else {
        localization::distance_bands(&p.gt_ots, cfg)?
    };
    let occ = localization::occlusion_index(&p.gt_ots);
    let stratified = localization::stratified_recall(&matches, &bands, &occ);

    let series = counting::CountSeries::build(&p.gt_ots, &p.gt_all, &p.est, &p.kept);
    let gt_presence = IdentityPresence::from_gt(&p.gt_ots, &p.kept);
    let all_presence = IdentityPresence::from_gt(&p.gt_all, &p.kept);
    let est_presence = IdentityPresence::from_est(&p.est, &p.kept);
    let counting = CountingReport {
        moe: counting::moe(&series)?,
        mpe: counting::mpe(&series)?,
        coe: counting::coe(&gt_presence, &est_presence),
        cpe: counting::cpe(&all_presence, &est_presence),
        unique_gt_ots: gt_presence.unique_count(),
        unique_gt_all: all_presence.unique_count(),
        unique_est: est_presence.unique_count(),
        tcoe: counting::tcoe(&gt_presence, &est_presence, &cfg.segment_durations_s, p.effective_fps),
    };

    let pairs = attributes::matched_pairs(&matches, &p.gt_ots, &p.est);
    let age = attributes::score_age(&pairs, cfg);
    let gender = attributes::score_gender(&pairs);
    let attrs = AttributeReport {
        age_prf: attributes::per_class_prf(&age),
        gender_prf: attributes::per_class_prf(&gender),
        stratified: attributes::stratified_attribute_f1(&pairs, &bands, &occ, cfg),
        age,
        gender,
    };

    let report = VideoReport {
        video: meta.name.clone(),
        frame_count: meta.frame_count,
        fps: meta.fps,
        effective_fps: p.effective_fps,
        kept_frames: p.kept.len(),
        localization: LocalizationReport { prf, neutral, stratified },
        counting,
        attributes: attrs,
    };
    Ok(Evaluation { report, matches, gt_presence, est_presence, kept: p.kept.clone() })
}

pub fn evaluate_input(input: &VideoInput, cfg: &EvalConfig) -> Result<Evaluation> {
    let run = || evaluate_prepared(&input.meta, &prepare(input, cfg)?, cfg);
    run().map_err(|e| e.in_video(&input.meta.name))
}

pub fn evaluate_video(gt_path: &Path, est_path: &Path, meta_path: &Path, cfg: &EvalConfig) -> Result<VideoReport> {
    Ok(evaluate_input(&load_video(gt_path, est_path, meta_path)?, cfg)?.report)
}

/// Five-number summary plus mean and population std of one metric across
/// videos. Quartiles use the lower-interpolated percentile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Summary> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        let s = stats::sorted(values);
        Ok(Summary {
            count: s.len(),
            mean: stats::mean(&s),
            std: stats::std_population(&s),
            min: s[0],
            p25: stats::percentile_lower(&s, 0.25),
            median: stats::percentile_lower(&s, 0.5),
            p75: stats::percentile_lower(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub videos: Vec<VideoReport>,
    /// Keyed by metric name; metrics absent from every video are omitted.
    pub overall: BTreeMap<String, Summary>,
}

fn class_f1(p: &PrfResult) -> Option<f64> {
    (p.tp + p.fp + p.fn_ > 0).then_some(p.f1)
}

pub fn tcoe_key(duration_s: f64) -> String {
    format!("tcoe_{duration_s}s")
}

/// Scalar metrics of a video report, by name. Undefined values are `None`.
pub fn metric_values(r: &VideoReport) -> Vec<(String, Option<f64>)> {
    let l = &r.localization;
    let s = &l.stratified;
    let mut v = vec![
        ("precision".to_string(), Some(l.prf.precision)),
        ("recall".into(), Some(l.prf.recall)),
        ("f1".into(), Some(l.prf.f1)),
        ("recall_close".into(), s.close.recall),
        ("recall_far".into(), s.far.recall),
        ("recall_occ_none".into(), s.occ_none.recall),
        ("recall_occ_partial".into(), s.occ_partial.recall),
        ("recall_occ_heavy".into(), s.occ_heavy.recall),
        ("moe".into(), Some(r.counting.moe)),
        ("mpe".into(), Some(r.counting.mpe)),
        ("coe".into(), Some(r.counting.coe)),
        ("cpe".into(), Some(r.counting.cpe)),
    ];
    for t in &r.counting.tcoe {
        v.push((tcoe_key(t.duration_s), t.mean_abs_error));
    }
    for (c, p) in &r.attributes.age_prf {
        v.push((format!("age_f1_{c}"), class_f1(p)));
    }
    for (g, p) in &r.attributes.gender_prf {
        v.push((format!("gender_f1_{}", g.as_str()), class_f1(p)));
    }
    v
}

/// Sorts reports by video name and summarises every metric across them.
pub fn aggregate(mut reports: Vec<VideoReport>) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    reports.sort_by(|a, b| a.video.cmp(&b.video));
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &reports {
        for (k, v) in metric_values(r) {
            let col = columns.entry(k).or_default();
            if let Some(v) = v {
                col.push(v);
            }
        }
    }
    let mut overall = BTreeMap::new();
    for (k, vals) in columns {
        if !vals.is_empty() {
            overall.insert(k, Summary::of(&vals)?);
        }
    }
    Ok(MetricReport { schema_version: SCHEMA_VERSION, videos: reports, overall })
}

pub fn to_json(report: &MetricReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(s: &str) -> Result<MetricReport> {
    let r: MetricReport = serde_json::from_str(s)?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!("unsupported report schema_version {}", r.schema_version)));
    }
    Ok(r)
}

/// One point of a frame-rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub fps: f64,
    pub report: VideoReport,
}

/// Evaluates the video at each requested input rate. Rates that are not
/// valid for the video are returned as errors alongside the points.
pub fn run_fps_sweep(input: &VideoInput, cfg: &EvalConfig, fps_list: &[f64]) -> (Vec<SweepPoint>, Vec<(f64, Error)>) {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &fps in fps_list {
        let c = EvalConfig { target_fps: Some(fps), ..cfg.clone() };
        match evaluate_input(input, &c) {
            Ok(e) => points.push(SweepPoint { fps, report: e.report }),
            Err(e) => skipped.push((fps, e)),
        }
    }
    (points, skipped)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn fmt_overall(s: Option<&Summary>) -> String {
    s.map_or_else(|| "-±-".to_string(), |s| format!("{:.4}±{:.4}", s.mean, s.std))
}

fn lookup(values: &[(String, Option<f64>)], key: &str) -> Option<f64> {
    values.iter().find(|(k, _)| k == key).and_then(|(_, v)| *v)
}

fn csv_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes `rows` with a per-video row and a final `Overall` row of
/// `mean±std` cells.
fn write_table(path: &Path, report: &MetricReport, columns: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = std::iter::once("Video").chain(columns.iter().map(|(h, _)| h.as_str())).collect();
    w.write_record(&header)?;
    for r in &report.videos {
        let values = metric_values(r);
        let row: Vec<String> = std::iter::once(r.video.clone())
            .chain(columns.iter().map(|(_, k)| fmt_value(lookup(&values, k))))
            .collect();
        w.write_record(&row)?;
    }
    let row: Vec<String> = std::iter::once("Overall".to_string())
        .chain(columns.iter().map(|(_, k)| fmt_overall(report.overall.get(k))))
        .collect();
    w.write_record(&row)?;
    w.flush().map_err(csv_err(path))
}

fn cols(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(h, k)| (h.to_string(), k.to_string())).collect()
}

fn tcoe_durations(report: &MetricReport) -> Vec<f64> {
    let mut d: Vec<f64> = Vec::new();
    for r in &report.videos {
        for t in &r.counting.tcoe {
            if !d.contains(&t.duration_s) {
                d.push(t.duration_s);
            }
        }
    }
    d
}

/// Writes localization.csv, counting.csv, age.csv, gender.csv and
/// quartiles.csv into `dir`.
pub fn write_csv_tables(report: &MetricReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut counting_cols = cols(&[("MOE", "moe"), ("COE", "coe"), ("MPE", "mpe"), ("CPE", "cpe")]);
    for d in tcoe_durations(report) {
        counting_cols.push((format!("TCOE {d}s"), tcoe_key(d)));
    }
    let mut age_cols = Vec::new();
    for c in AgeClass::ALL {
        age_cols.push((format!("F {c}"), format!("age_f1_{c}")));
    }
    let tables = [
        (
            "localization.csv",
            cols(&[
                ("P", "precision"),
                ("R", "recall"),
                ("F", "f1"),
                ("Recall distance Close", "recall_close"),
                ("Recall distance Far", "recall_far"),
                ("Recall occlusion No", "recall_occ_none"),
                ("Recall occlusion Partial", "recall_occ_partial"),
                ("Recall occlusion Heavy", "recall_occ_heavy"),
            ]),
        ),
        ("counting.csv", counting_cols),
        ("age.csv", age_cols),
        ("gender.csv", cols(&[("F Male", "gender_f1_male"), ("F Female", "gender_f1_female")])),
    ];
    let mut written = Vec::new();
    for (name, columns) in tables {
        let path = dir.join(name);
        write_table(&path, report, &columns)?;
        written.push(path);
    }

    let path = dir.join("quartiles.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["metric", "count", "mean", "std", "min", "p25", "median", "p75", "max"])?;
    for (k, s) in &report.overall {
        let mut row = vec![k.clone(), s.count.to_string()];
        row.extend([s.mean, s.std, s.min, s.p25, s.median, s.p75, s.max].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv_err(&path))?;
    written.push(path);
    Ok(written)
}

/// CSV with one row per swept frame rate.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let durations: Vec<f64> =
        points.first().map(|p| p.report.counting.tcoe.iter().map(|t| t.duration_s).collect()).unwrap_or_default();
    let mut header: Vec<String> =
        ["fps", "effective_fps", "kept_frames", "MOE", "MPE", "COE", "CPE"].iter().map(|s| s.to_string()).collect();
    header.extend(durations.iter().map(|d| format!("TCOE {d}s")));
    w.write_record(&header)?;
    for p in points {
        let c = &p.report.counting;
        let mut row = vec![
            p.fps.to_string(),
            p.report.effective_fps.to_string(),
            p.report.kept_frames.to_string(),
            c.moe.to_string(),
            c.mpe.to_string(),
            c.coe.to_string(),
            c.cpe.to_string(),
        ];
        row.extend(c.tcoe.iter().map(|t| t.mean_abs_error.map_or_else(String::new, |v| v.to_string())));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<sweep>", e))
}
