//! Readers, writers and preprocessing for annotation and estimation streams.
//!
//! Ground truth and estimations are JSON Lines files, one record per line.
//! A CSV variant of both formats is accepted with the same semantics.
//! Preprocessing follows a fixed order: key-frame interpolation, ignore
//! areas, re-entry splitting, OTS filtering and frame decimation.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{
    AgeClass, AgeEstimate, BBox, EstRecord, EvalConfig, Gender, GenderEstimate, GtRecord, Occlusion, PersonId,
    VideoMeta,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GtStream {
    pub meta: VideoMeta,
    /// Sorted by `(frame, person_id)`, no duplicates.
    pub records: Vec<GtRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstStream {
    pub video: String,
    /// Sorted by `(frame, est_id)`, no duplicates.
    pub records: Vec<EstRecord>,
}

impl GtStream {
    pub fn new(meta: VideoMeta, mut records: Vec<GtRecord>) -> Self {
        sort_gt(&mut records);
        Self { meta, records }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl EstStream {
    pub fn new(video: impl Into<String>, mut records: Vec<EstRecord>) -> Self {
        sort_est(&mut records);
        Self { video: video.into(), records }
    }
}

fn sort_gt(records: &mut [GtRecord]) {
    records.sort_by(|a, b| (a.frame, &a.person_id).cmp(&(b.frame, &b.person_id)));
}

fn sort_est(records: &mut [EstRecord]) {
    records.sort_by(|a, b| (a.frame, &a.est_id).cmp(&(b.frame, &b.est_id)));
}

// ---------------------------------------------------------------------------
// Video metadata
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    name: String,
    frames: u32,
    fps: f64,
    width: u32,
    height: u32,
    #[serde(default)]
    ignore: Vec<BBox>,
}

pub fn parse_meta_str(s: &str) -> Result<VideoMeta> {
    let m: MetaFile = serde_json::from_str(s)?;
    let meta = VideoMeta {
        name: m.name,
        frame_count: m.frames,
        fps: m.fps,
        width: m.width,
        height: m.height,
        ignore_regions: m.ignore,
    };
    meta.validate()?;
    Ok(meta)
}

pub fn load_meta(path: &Path) -> Result<VideoMeta> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_meta_str(&s)
}

pub fn meta_to_json(meta: &VideoMeta) -> Result<String> {
    let m = MetaFile {
        name: meta.name.clone(),
        frames: meta.frame_count,
        fps: meta.fps,
        width: meta.width,
        height: meta.height,
        ignore: meta.ignore_regions.clone(),
    };
    Ok(serde_json::to_string_pretty(&m)?)
}

// ---------------------------------------------------------------------------
// Field extraction helpers
// ---------------------------------------------------------------------------

struct Fields<'a> {
    line: usize,
    obj: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Option<&'a Value> {
        match self.obj.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v),
        }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::schema(self.line, key, message)
    }

    fn frame(&self) -> Result<u32> {
        let v = self.get("frame").ok_or_else(|| self.err("frame", "missing"))?;
        v.as_u64()
            .and_then(|f| u32::try_from(f).ok())
            .ok_or_else(|| self.err("frame", format!("expected a non-negative integer, got {v}")))
    }

    fn string(&self, key: &str) -> Result<&'a str> {
        match self.get(key) {
            Some(Value::String(s)) if !s.is_empty() => Ok(s),
            Some(v) => Err(self.err(key, format!("expected a non-empty string, got {v}"))),
            None => Err(self.err(key, "missing")),
        }
    }

    fn opt_string(&self, key: &str) -> Result<Option<&'a str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(self.err(key, format!("expected a string, got {v}"))),
        }
    }

    fn opt_box(&self, key: &str) -> Result<Option<BBox>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let arr = v
            .as_array()
            .filter(|a| a.len() == 4)
            .ok_or_else(|| self.err(key, format!("expected [x, y, w, h], got {v}")))?;
        let mut xs = [0.0; 4];
        for (slot, item) in xs.iter_mut().zip(arr) {
            *slot = item.as_f64().ok_or_else(|| self.err(key, format!("non-numeric coordinate {item}")))?;
        }
        BBox::try_from(xs).map(Some).map_err(|e| self.err(key, e.to_string()))
    }

    fn opt_u32(&self, key: &str) -> Result<Option<u32>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .map(Some)
            .ok_or_else(|| self.err(key, format!("expected a non-negative integer, got {v}")))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            Some(Value::Bool(b)) => Ok(*b),
            Some(v) => Err(self.err(key, format!("expected a boolean, got {v}"))),
            None => Err(self.err(key, "missing")),
        }
    }
}

fn parse_occlusion(s: &str) -> Option<Occlusion> {
    Occlusion::ALL.into_iter().find(|o| o.as_str() == s)
}

fn parse_gender(s: &str) -> Option<Gender> {
    Gender::ALL.into_iter().find(|g| g.as_str() == s)
}

fn parse_gender_estimate(s: &str) -> Option<GenderEstimate> {
    match s {
        "unknown" => Some(GenderEstimate::Unknown),
        other => parse_gender(other).map(GenderEstimate::from),
    }
}

fn check_frame(line: usize, frame: u32, meta: &VideoMeta) -> Result<()> {
    if frame < 1 || frame > meta.frame_count {
        return Err(Error::Range { line, frame, frame_count: meta.frame_count });
    }
    Ok(())
}

fn gt_from_fields(f: &Fields<'_>, meta: &VideoMeta) -> Result<GtRecord> {
    let frame = f.frame()?;
    check_frame(f.line, frame, meta)?;
    let id = f.string("id")?;
    let person_box = f.opt_box("person_box")?;
    let face_box = f.opt_box("face_box")?;
    if person_box.is_none() && face_box.is_none() {
        return Err(f.err("person_box", "at least one of person_box/face_box is required"));
    }
    let ots = f.bool("ots")?;
    let occ = f.string("occlusion")?;
    let occlusion = parse_occlusion(occ).ok_or_else(|| f.err("occlusion", format!("unknown level `{occ}`")))?;
    let age_years = f.opt_u32("age")?;
    let gender = match f.opt_string("gender")? {
        None => None,
        Some(g) => Some(parse_gender(g).ok_or_else(|| f.err("gender", format!("unknown gender `{g}`")))?),
    };
    Ok(GtRecord { frame, person_id: PersonId::new(id), person_box, face_box, ots, occlusion, age_years, gender })
}

fn est_from_fields(f: &Fields<'_>, meta: &VideoMeta) -> Result<EstRecord> {
    let frame = f.frame()?;
    check_frame(f.line, frame, meta)?;
    let est_id = f.string("id")?.to_string();
    let bbox = f.opt_box("box")?.ok_or_else(|| f.err("box", "missing"))?;
    let years = f.opt_u32("age_years")?;
    let class = f.opt_string("age_class")?;
    let age = match (years, class) {
        (Some(_), Some(_)) => return Err(f.err("age_class", "age_years and age_class are mutually exclusive")),
        (Some(y), None) => Some(AgeEstimate::Years(y)),
        (None, Some("unknown")) => Some(AgeEstimate::Unknown),
        (None, Some(c)) => Some(AgeEstimate::Class(
            AgeClass::parse(c).ok_or_else(|| f.err("age_class", format!("unknown age class `{c}`")))?,
        )),
        (None, None) => None,
    };
    let gender = match f.opt_string("gender")? {
        None => None,
        Some(g) => Some(parse_gender_estimate(g).ok_or_else(|| f.err("gender", format!("unknown gender `{g}`")))?),
    };
    Ok(EstRecord { frame, est_id, bbox, age, gender })
}

fn for_each_json_line<R: Read>(
    reader: R,
    mut f: impl FnMut(usize, &Map<String, Value>) -> Result<()>,
    path: &Path,
) -> Result<()> {
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| Error::schema(line_no, "<line>", format!("invalid JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| Error::schema(line_no, "<line>", "expected a JSON object"))?;
        f(line_no, obj)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

pub fn parse_gt_reader<R: Read>(reader: R, meta: &VideoMeta) -> Result<GtStream> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for_each_json_line(
        reader,
        |line, obj| {
            records.push(gt_from_fields(&Fields { line, obj }, meta)?);
            lines.push(line);
            Ok(())
        },
        Path::new("<gt>"),
    )?;
    finish_gt(records, lines, meta)
}

pub fn parse_gt(path: &Path, meta: &VideoMeta) -> Result<GtStream> {
    if is_csv(path) {
        return parse_gt_csv(path, meta);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_gt_reader(file, meta)
}

fn finish_gt(records: Vec<GtRecord>, lines: Vec<usize>, meta: &VideoMeta) -> Result<GtStream> {
    let mut seen = HashSet::new();
    for (r, line) in records.iter().zip(&lines) {
        if !seen.insert((r.frame, r.person_id.clone())) {
            return Err(Error::schema(
                *line,
                "id",
                format!("duplicate identity `{}` at frame {}", r.person_id, r.frame),
            ));
        }
    }
    Ok(GtStream::new(meta.clone(), records))
}

#[derive(Serialize)]
struct GtLineOut<'a> {
    frame: u32,
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    person_box: Option<&'a BBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    face_box: Option<&'a BBox>,
    ots: bool,
    occlusion: Occlusion,
    #[serde(skip_serializing_if = "Option::is_none")]
    age: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gender: Option<Gender>,
}

pub fn write_gt<W: Write>(stream: &GtStream, mut out: W) -> Result<()> {
    for r in &stream.records {
        let line = GtLineOut {
            frame: r.frame,
            id: r.person_id.to_string(),
            person_box: r.person_box.as_ref(),
            face_box: r.face_box.as_ref(),
            ots: r.ots,
            occlusion: r.occlusion,
            age: r.age_years,
            gender: r.gender,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<gt output>", e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Estimations
// ---------------------------------------------------------------------------

pub fn parse_est_reader<R: Read>(reader: R, meta: &VideoMeta) -> Result<EstStream> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for_each_json_line(
        reader,
        |line, obj| {
            records.push(est_from_fields(&Fields { line, obj }, meta)?);
            lines.push(line);
            Ok(())
        },
        Path::new("<est>"),
    )?;
    finish_est(records, lines, meta)
}

pub fn parse_est(path: &Path, meta: &VideoMeta) -> Result<EstStream> {
    if is_csv(path) {
        return parse_est_csv(path, meta);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_est_reader(file, meta)
}

fn finish_est(records: Vec<EstRecord>, lines: Vec<usize>, meta: &VideoMeta) -> Result<EstStream> {
    let mut seen = HashSet::new();
    for (r, line) in records.iter().zip(&lines) {
        if !seen.insert((r.frame, r.est_id.clone())) {
            return Err(Error::schema(
                *line,
                "id",
                format!("duplicate estimation `{}` at frame {}", r.est_id, r.frame),
            ));
        }
    }
    Ok(EstStream::new(meta.name.clone(), records))
}

#[derive(Serialize)]
struct EstLineOut<'a> {
    frame: u32,
    id: &'a str,
    #[serde(rename = "box")]
    bbox: &'a BBox,
    #[serde(skip_serializing_if = "Option::is_none")]
    age_years: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    age_class: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gender: Option<GenderEstimate>,
}

pub fn write_est<W: Write>(stream: &EstStream, mut out: W) -> Result<()> {
    for r in &stream.records {
        let (age_years, age_class) = match r.age {
            None => (None, None),
            Some(AgeEstimate::Years(y)) => (Some(y), None),
            Some(AgeEstimate::Class(c)) => (None, Some(c.as_str())),
            Some(AgeEstimate::Unknown) => (None, Some("unknown")),
        };
        let line = EstLineOut { frame: r.frame, id: &r.est_id, bbox: &r.bbox, age_years, age_class, gender: r.gender };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<est output>", e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV variant
// ---------------------------------------------------------------------------

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Converts a CSV row into the JSON object the line parser expects.
///
/// Box columns come in groups of four (`<prefix>_x`, `_y`, `_w`, `_h`); a
/// group left entirely empty means the box is absent.
fn csv_row_to_object(headers: &csv::StringRecord, row: &csv::StringRecord, line: usize) -> Result<Map<String, Value>> {
    let mut obj = Map::new();
    let mut boxes: BTreeMap<String, [Option<f64>; 4]> = BTreeMap::new();
    for (h, v) in headers.iter().zip(row.iter()) {
        let v = v.trim();
        let slot = ["_x", "_y", "_w", "_h"].iter().position(|s| h.ends_with(s));
        if let (Some(i), true) = (slot, h.contains("box")) {
            let prefix = &h[..h.len() - 2];
            let entry = boxes.entry(prefix.to_string()).or_default();
            if !v.is_empty() {
                entry[i] = Some(v.parse().map_err(|_| Error::schema(line, h, format!("invalid number `{v}`")))?);
            }
            continue;
        }
        if v.is_empty() {
            continue;
        }
        let value = match h {
            "frame" | "age" | "age_years" => {
                Value::from(v.parse::<u64>().map_err(|_| Error::schema(line, h, format!("invalid integer `{v}`")))?)
            }
            "ots" => Value::Bool(match v {
                "true" | "1" => true,
                "false" | "0" => false,
                _ => return Err(Error::schema(line, h, format!("invalid boolean `{v}`"))),
            }),
            _ => Value::String(v.to_string()),
        };
        obj.insert(h.to_string(), value);
    }
    for (prefix, coords) in boxes {
        match coords {
            [None, None, None, None] => {}
            [Some(x), Some(y), Some(w), Some(h)] => {
                obj.insert(prefix, Value::from(vec![x, y, w, h]));
            }
            _ => return Err(Error::schema(line, &prefix, "incomplete box columns")),
        }
    }
    Ok(obj)
}

fn read_csv_objects(path: &Path) -> Result<Vec<(usize, Map<String, Value>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_objects_from(file)
}

fn read_csv_objects_from<R: Read>(reader: R) -> Result<Vec<(usize, Map<String, Value>)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let line = idx + 2;
        let row = row?;
        out.push((line, csv_row_to_object(&headers, &row, line)?));
    }
    Ok(out)
}

/// GT CSV columns: `frame,id,person_box_x,person_box_y,person_box_w,person_box_h,
/// face_box_x,face_box_y,face_box_w,face_box_h,ots,occlusion,age,gender`.
pub fn parse_gt_csv(path: &Path, meta: &VideoMeta) -> Result<GtStream> {
    parse_gt_csv_reader(File::open(path).map_err(|e| Error::io(path, e))?, meta)
}

pub fn parse_gt_csv_reader<R: Read>(reader: R, meta: &VideoMeta) -> Result<GtStream> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (line, obj) in read_csv_objects_from(reader)? {
        records.push(gt_from_fields(&Fields { line, obj: &obj }, meta)?);
        lines.push(line);
    }
    finish_gt(records, lines, meta)
}

/// EST CSV columns: `frame,id,box_x,box_y,box_w,box_h,age_years,age_class,gender`.
pub fn parse_est_csv(path: &Path, meta: &VideoMeta) -> Result<EstStream> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (line, obj) in read_csv_objects(path)? {
        records.push(est_from_fields(&Fields { line, obj: &obj }, meta)?);
        lines.push(line);
    }
    finish_est(records, lines, meta)
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

fn by_identity(records: &[GtRecord]) -> BTreeMap<&PersonId, Vec<&GtRecord>> {
    let mut map: BTreeMap<&PersonId, Vec<&GtRecord>> = BTreeMap::new();
    for r in records {
        map.entry(&r.person_id).or_default().push(r);
    }
    for v in map.values_mut() {
        v.sort_by_key(|r| r.frame);
    }
    map
}

fn lerp_box(a: &BBox, b: &BBox, alpha: f64) -> BBox {
    let l = |p: f64, q: f64| p + (q - p) * alpha;
    // Convex combinations of valid boxes stay valid.
    BBox::new(l(a.x(), b.x()), l(a.y(), b.y()), l(a.w(), b.w()), l(a.h(), b.h()))
        .expect("interpolated box between two valid boxes")
}

/// Densifies sparse key-frame annotations.
///
/// Between consecutive key-frames of one identity that are at most
/// `max_gap_frames` apart, every intermediate frame receives a record whose
/// boxes are linearly interpolated and whose labels are copied from the
/// earlier key-frame. A box kind is only interpolated when both key-frames
/// carry it.
pub fn interpolate_keyframes(gt: &GtStream, max_gap_frames: f64) -> GtStream {
    let mut out = gt.records.clone();
    for keys in by_identity(&gt.records).values() {
        for pair in keys.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let gap = b.frame - a.frame;
            if gap <= 1 || gap as f64 > max_gap_frames {
                continue;
            }
            for f in a.frame + 1..b.frame {
                let alpha = (f - a.frame) as f64 / gap as f64;
                let interp = |p: Option<&BBox>, q: Option<&BBox>| match (p, q) {
                    (Some(p), Some(q)) => Some(lerp_box(p, q, alpha)),
                    _ => None,
                };
                let person_box = interp(a.person_box.as_ref(), b.person_box.as_ref());
                let face_box = interp(a.face_box.as_ref(), b.face_box.as_ref());
                if person_box.is_none() && face_box.is_none() {
                    continue;
                }
                out.push(GtRecord { frame: f, person_box, face_box, ..(*a).clone() });
            }
        }
    }
    GtStream::new(gt.meta.clone(), out)
}

fn overlaps_ignore(b: &BBox, meta: &VideoMeta, ratio: f64) -> bool {
    meta.ignore_regions.iter().any(|r| b.intersection_area(r) / b.area() >= ratio)
}

/// Drops every record whose evaluation box has at least
/// `cfg.ignore_overlap_ratio` of its own area inside one ignore region.
pub fn apply_ignore_areas(gt: &GtStream, est: &EstStream, meta: &VideoMeta, cfg: &EvalConfig) -> (GtStream, EstStream) {
    let ratio = cfg.ignore_overlap_ratio;
    let gt_records = gt
        .records
        .iter()
        .filter(|r| {
            let b = r.target_box(cfg.target).or(r.person_box.as_ref()).or(r.face_box.as_ref());
            !b.is_some_and(|b| overlaps_ignore(b, meta, ratio))
        })
        .cloned()
        .collect();
    let est_records = est.records.iter().filter(|r| !overlaps_ignore(&r.bbox, meta, ratio)).cloned().collect();
    (
        GtStream { meta: gt.meta.clone(), records: gt_records },
        EstStream { video: est.video.clone(), records: est_records },
    )
}

/// Gives a fresh identity to a person each time they reappear after an
/// absence longer than the re-entry gap.
pub fn split_reentries(gt: &GtStream, meta: &VideoMeta, cfg: &EvalConfig) -> GtStream {
    let max_gap = cfg.reentry_gap_frames(meta.fps);
    let mut out = Vec::with_capacity(gt.records.len());
    for (id, recs) in by_identity(&gt.records) {
        let mut occurrence = id.occurrence;
        let mut prev: Option<u32> = None;
        for r in recs {
            if let Some(p) = prev {
                if (r.frame - p) as f64 > max_gap {
                    occurrence += 1;
                }
            }
            prev = Some(r.frame);
            out.push(GtRecord { person_id: id.with_occurrence(occurrence), ..r.clone() });
        }
    }
    GtStream::new(gt.meta.clone(), out)
}

pub fn filter_ots(gt: &GtStream) -> GtStream {
    GtStream { meta: gt.meta.clone(), records: gt.records.iter().filter(|r| r.ots).cloned().collect() }
}

/// Frame stride used to reach `target_fps` from a `fps` source.
pub fn decimation_stride(fps: f64, target_fps: f64) -> Result<u32> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(Error::Config(format!("target fps must be > 0, got {target_fps}")));
    }
    if target_fps > fps * (1.0 + 1e-9) {
        return Err(Error::Config(format!("target fps {target_fps} exceeds video fps {fps}")));
    }
    Ok(((fps / target_fps).round() as u32).max(1))
}

/// Frames seen at a reduced input rate: `t` is kept when `(t - 1) % stride == 0`.
pub fn decimate(frame_count: u32, fps: f64, target_fps: f64) -> Result<Vec<u32>> {
    let stride = decimation_stride(fps, target_fps)?;
    Ok((1..=frame_count).step_by(stride as usize).collect())
}

pub fn restrict_gt(gt: &GtStream, kept: &[u32]) -> GtStream {
    let keep: HashSet<u32> = kept.iter().copied().collect();
    GtStream {
        meta: gt.meta.clone(),
        records: gt.records.iter().filter(|r| keep.contains(&r.frame)).cloned().collect(),
    }
}

pub fn restrict_est(est: &EstStream, kept: &[u32]) -> EstStream {
    let keep: HashSet<u32> = kept.iter().copied().collect();
    EstStream {
        video: est.video.clone(),
        records: est.records.iter().filter(|r| keep.contains(&r.frame)).cloned().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(frames: u32, fps: f64) -> VideoMeta {
        VideoMeta { name: "v".into(), frame_count: frames, fps, width: 1920, height: 1080, ignore_regions: vec![] }
    }

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn gt(frame: u32, id: &str, b: BBox) -> GtRecord {
        GtRecord {
            frame,
            person_id: PersonId::new(id),
            person_box: Some(b),
            face_box: Some(b),
            ots: true,
            occlusion: Occlusion::None,
            age_years: Some(30),
            gender: Some(Gender::Female),
        }
    }

    fn est(frame: u32, id: &str, b: BBox) -> EstRecord {
        EstRecord { frame, est_id: id.into(), bbox: b, age: None, gender: None }
    }

    #[test]
    fn parse_single_line() {
        let s = r#"{"frame":1,"id":"a","face_box":[1,2,3,4],"ots":true,"occlusion":"none","age":30,"gender":"male"}"#;
        let stream = parse_gt_reader(s.as_bytes(), &meta(10, 30.0)).unwrap();
        assert_eq!(stream.records.len(), 1);
        assert_eq!(stream.records[0].face_box, Some(bb(1.0, 2.0, 3.0, 4.0)));
        assert_eq!(stream.records[0].person_box, None);
    }

    #[test]
    fn zero_width_is_schema_error() {
        let s = r#"{"frame":1,"id":"a","face_box":[1,2,0,4],"ots":true,"occlusion":"none"}"#;
        match parse_gt_reader(s.as_bytes(), &meta(10, 30.0)) {
            Err(Error::Schema { line: 1, field, .. }) => assert_eq!(field, "face_box"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn records_are_sorted() {
        let s = [
            r#"{"frame":3,"id":"b","face_box":[1,2,3,4],"ots":true,"occlusion":"none"}"#,
            r#"{"frame":1,"id":"z","face_box":[1,2,3,4],"ots":true,"occlusion":"none"}"#,
            r#"{"frame":1,"id":"a","face_box":[1,2,3,4],"ots":false,"occlusion":"heavy"}"#,
        ]
        .join("\n");
        let stream = parse_gt_reader(s.as_bytes(), &meta(10, 30.0)).unwrap();
        let keys: Vec<_> = stream.records.iter().map(|r| (r.frame, r.person_id.name.as_str())).collect();
        assert_eq!(keys, vec![(1, "a"), (1, "z"), (3, "b")]);
    }

    #[test]
    fn frame_out_of_range() {
        let s = "\n".to_string() + r#"{"frame":11,"id":"a","face_box":[1,2,3,4],"ots":true,"occlusion":"none"}"#;
        assert!(matches!(
            parse_gt_reader(s.as_bytes(), &meta(10, 30.0)),
            Err(Error::Range { line: 2, frame: 11, frame_count: 10 })
        ));
        let s = r#"{"frame":0,"id":"a","box":[1,2,3,4]}"#;
        assert!(matches!(parse_est_reader(s.as_bytes(), &meta(10, 30.0)), Err(Error::Range { .. })));
    }

    #[test]
    fn gt_requires_a_box() {
        let s = r#"{"frame":1,"id":"a","ots":true,"occlusion":"none"}"#;
        assert!(matches!(parse_gt_reader(s.as_bytes(), &meta(10, 30.0)), Err(Error::Schema { .. })));
    }

    #[test]
    fn duplicate_estimation_rejected() {
        let s = "{\"frame\":1,\"id\":\"e\",\"box\":[1,2,3,4]}\n{\"frame\":1,\"id\":\"e\",\"box\":[5,2,3,4]}";
        match parse_est_reader(s.as_bytes(), &meta(10, 30.0)) {
            Err(Error::Schema { line: 2, field, .. }) => assert_eq!(field, "id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_est_file_is_valid() {
        let stream = parse_est_reader("".as_bytes(), &meta(10, 30.0)).unwrap();
        assert!(stream.records.is_empty());
    }

    #[test]
    fn est_attributes() {
        let s = [
            r#"{"frame":1,"id":"a","box":[1,2,3,4],"gender":"unknown","age_class":"19-34"}"#,
            r#"{"frame":1,"id":"b","box":[1,2,3,4],"age_years":44}"#,
            r#"{"frame":1,"id":"c","box":[1,2,3,4],"age_class":"unknown","gender":"female"}"#,
        ]
        .join("\n");
        let stream = parse_est_reader(s.as_bytes(), &meta(10, 30.0)).unwrap();
        assert_eq!(stream.records[0].gender, Some(GenderEstimate::Unknown));
        assert_eq!(stream.records[0].age, Some(AgeEstimate::Class(AgeClass::Age19To34)));
        assert_eq!(stream.records[1].age, Some(AgeEstimate::Years(44)));
        assert_eq!(stream.records[2].age, Some(AgeEstimate::Unknown));
        let both = r#"{"frame":1,"id":"a","box":[1,2,3,4],"age_years":3,"age_class":"0-18"}"#;
        assert!(parse_est_reader(both.as_bytes(), &meta(10, 30.0)).is_err());
    }

    #[test]
    fn meta_parsing() {
        let m =
            parse_meta_str(r#"{"name":"v1","frames":100,"fps":30,"width":640,"height":480,"ignore":[[0,0,10,10]]}"#)
                .unwrap();
        assert_eq!(m.frame_count, 100);
        assert_eq!(m.ignore_regions.len(), 1);
        assert!(parse_meta_str(
            r#"{"name":"v1","frames":100,"fps":30,"width":640,"height":480,"ignore":[[0,0,700,10]]}"#
        )
        .is_err());
        assert!(parse_meta_str(r#"{"name":"v1","frames":0,"fps":30,"width":640,"height":480}"#).is_err());
    }

    #[test]
    fn csv_reader_matches_json_semantics() {
        let csv = "frame,id,person_box_x,person_box_y,person_box_w,person_box_h,face_box_x,face_box_y,face_box_w,face_box_h,ots,occlusion,age,gender\n\
                   2,p,,,,,1,2,3,4,true,partial,40,female\n\
                   1,p,0,0,10,20,1,2,3,4,false,none,,\n";
        let stream = parse_gt_csv_reader(csv.as_bytes(), &meta(10, 30.0)).unwrap();
        assert_eq!(stream.records.len(), 2);
        assert_eq!(stream.records[0].frame, 1);
        assert_eq!(stream.records[0].person_box, Some(bb(0.0, 0.0, 10.0, 20.0)));
        assert_eq!(stream.records[1].person_box, None);
        assert_eq!(stream.records[1].occlusion, Occlusion::Partial);
        assert_eq!(stream.records[1].gender, Some(Gender::Female));
        assert_eq!(stream.records[0].age_years, None);
    }

    #[test]
    fn interpolation_midpoint() {
        let m = meta(10, 30.0);
        let g = GtStream::new(m.clone(), vec![gt(1, "1", bb(0.0, 0.0, 4.0, 4.0)), gt(3, "1", bb(10.0, 0.0, 4.0, 4.0))]);
        let dense = interpolate_keyframes(&g, 300.0);
        assert_eq!(dense.records.len(), 3);
        assert_eq!(dense.records[1].frame, 2);
        assert_eq!(dense.records[1].face_box.unwrap().x(), 5.0);
    }

    #[test]
    fn interpolation_linear() {
        let m = meta(10, 30.0);
        let g = GtStream::new(m, vec![gt(1, "1", bb(0.0, 0.0, 10.0, 10.0)), gt(5, "1", bb(20.0, 0.0, 10.0, 10.0))]);
        let dense = interpolate_keyframes(&g, 300.0);
        let f3 = dense.records.iter().find(|r| r.frame == 3).unwrap();
        assert_eq!(f3.person_box, Some(bb(10.0, 0.0, 10.0, 10.0)));
    }

    #[test]
    fn interpolation_fixed_point_and_gap_limit() {
        let m = meta(1000, 30.0);
        let dense = GtStream::new(m.clone(), (1..=5).map(|f| gt(f, "1", bb(f as f64, 0.0, 4.0, 4.0))).collect());
        assert_eq!(interpolate_keyframes(&dense, 300.0), dense);
        let far = GtStream::new(m, vec![gt(1, "1", bb(0.0, 0.0, 4.0, 4.0)), gt(400, "1", bb(0.0, 0.0, 4.0, 4.0))]);
        assert_eq!(interpolate_keyframes(&far, 300.0).records.len(), 2);
    }

    #[test]
    fn interpolation_copies_labels_from_earlier_key() {
        let m = meta(10, 30.0);
        let mut a = gt(1, "1", bb(0.0, 0.0, 4.0, 4.0));
        a.occlusion = Occlusion::Heavy;
        let mut b = gt(3, "1", bb(2.0, 0.0, 4.0, 4.0));
        b.ots = false;
        let dense = interpolate_keyframes(&GtStream::new(m, vec![a, b]), 300.0);
        assert_eq!(dense.records[1].occlusion, Occlusion::Heavy);
        assert!(dense.records[1].ots);
    }

    #[test]
    fn ignore_area_rules() {
        let mut m = meta(10, 30.0);
        m.ignore_regions = vec![bb(0.0, 0.0, 100.0, 100.0)];
        let cfg = EvalConfig::default();
        let g = GtStream::new(
            m.clone(),
            vec![
                gt(1, "inside", bb(10.0, 10.0, 10.0, 10.0)),
                gt(1, "outside", bb(200.0, 200.0, 10.0, 10.0)),
                gt(1, "half", bb(95.0, 10.0, 10.0, 10.0)),
                gt(1, "less", bb(96.0, 10.0, 10.0, 10.0)),
            ],
        );
        let e =
            EstStream::new("v", vec![est(1, "e1", bb(10.0, 10.0, 5.0, 5.0)), est(1, "e2", bb(300.0, 10.0, 5.0, 5.0))]);
        let (g2, e2) = apply_ignore_areas(&g, &e, &m, &cfg);
        let names: Vec<_> = g2.records.iter().map(|r| r.person_id.name.as_str()).collect();
        assert_eq!(names, vec!["less", "outside"]);
        assert_eq!(e2.records.len(), 1);
        assert_eq!(e2.records[0].est_id, "e2");
        let (g3, e3) = apply_ignore_areas(&g2, &e2, &m, &cfg);
        assert_eq!((g3, e3), (g2, e2));
    }

    #[test]
    fn reentry_split() {
        let m = meta(1000, 30.0);
        let cfg = EvalConfig::default();
        let b = bb(0.0, 0.0, 5.0, 5.0);
        let recs: Vec<_> = (1..=30).chain(400..=450).map(|f| gt(f, "7", b)).collect();
        let split = split_reentries(&GtStream::new(m.clone(), recs), &m, &cfg);
        let ids: HashSet<_> = split.records.iter().map(|r| r.person_id.clone()).collect();
        assert_eq!(ids.len(), 2);
        assert!(split.records.iter().filter(|r| r.frame >= 400).all(|r| r.person_id.occurrence == 1));

        let boundary = GtStream::new(m.clone(), vec![gt(1, "7", b), gt(301, "7", b)]);
        let same = split_reentries(&boundary, &m, &cfg);
        assert!(same.records.iter().all(|r| r.person_id.occurrence == 0));

        let continuous = GtStream::new(m.clone(), (1..=500).map(|f| gt(f, "7", b)).collect());
        assert_eq!(split_reentries(&continuous, &m, &cfg), continuous);
    }

    #[test]
    fn ots_filter() {
        let m = meta(10, 30.0);
        let b = bb(0.0, 0.0, 5.0, 5.0);
        let mut recs: Vec<_> = (0..5).map(|i| gt(1, &i.to_string(), b)).collect();
        recs[1].ots = false;
        recs[3].ots = false;
        let filtered = filter_ots(&GtStream::new(m.clone(), recs.clone()));
        assert_eq!(filtered.records.iter().filter(|r| r.frame == 1).count(), 3);
        let all = GtStream::new(m.clone(), vec![gt(1, "a", b), gt(2, "a", b)]);
        assert_eq!(filter_ots(&all), all);
        assert!(filter_ots(&GtStream::new(m, vec![])).is_empty());
    }

    #[test]
    fn decimation_examples() {
        assert_eq!(decimate(10, 30.0, 30.0).unwrap(), (1..=10).collect::<Vec<_>>());
        assert_eq!(decimate(10, 30.0, 3.0).unwrap(), vec![1]);
        assert_eq!(decimate(90, 30.0, 1.0).unwrap(), vec![1, 31, 61]);
        assert_eq!(decimation_stride(30.0, 7.5).unwrap(), 4);
        assert_eq!(decimation_stride(30.0, 0.25).unwrap(), 120);
        assert!(matches!(decimate(90, 30.0, 60.0), Err(Error::Config(_))));
    }

    fn arb_gt_stream() -> impl Strategy<Value = GtStream> {
        let rec = (
            1u32..50,
            0u8..6,
            0.0..100.0f64,
            0.0..100.0f64,
            1.0..50.0f64,
            1.0..50.0f64,
            any::<bool>(),
            0usize..3,
            proptest::option::of(0u32..90),
            proptest::option::of(any::<bool>()),
            0u8..3,
        );
        proptest::collection::vec(rec, 0..40).prop_map(|rows| {
            let mut seen = HashSet::new();
            let records = rows
                .into_iter()
                .filter(|r| seen.insert((r.0, r.1)))
                .map(|(frame, id, x, y, w, h, ots, occ, age, gender, boxes)| {
                    let b = bb(x, y, w, h);
                    GtRecord {
                        frame,
                        person_id: PersonId::new(format!("p{id}")),
                        person_box: (boxes != 1).then_some(b),
                        face_box: (boxes != 2).then(|| bb(x + 0.5, y, w / 3.0, h / 3.0)),
                        ots,
                        occlusion: Occlusion::ALL[occ],
                        age_years: age,
                        gender: gender.map(|g| if g { Gender::Male } else { Gender::Female }),
                    }
                })
                .collect();
            GtStream::new(meta(50, 10.0), records)
        })
    }

    proptest! {
        #[test]
        fn gt_round_trip(stream in arb_gt_stream()) {
            let mut buf = Vec::new();
            write_gt(&stream, &mut buf).unwrap();
            let back = parse_gt_reader(buf.as_slice(), &stream.meta).unwrap();
            prop_assert_eq!(back, stream);
        }

        #[test]
        fn reentry_split_preserves_frame_box_multiset(stream in arb_gt_stream(), gap in 0.1..3.0f64) {
            let cfg = EvalConfig { reentry_gap_s: gap, ..EvalConfig::default() };
            let split = split_reentries(&stream, &stream.meta, &cfg);
            let key = |s: &GtStream| {
                let mut v: Vec<_> = s.records.iter().map(|r| (r.frame, r.person_id.name.clone(), format!("{:?}{:?}", r.person_box, r.face_box))).collect();
                v.sort();
                v
            };
            prop_assert_eq!(key(&split), key(&stream));
        }

        #[test]
        fn interpolation_stays_within_span(stream in arb_gt_stream()) {
            let dense = interpolate_keyframes(&stream, 20.0);
            for r in &dense.records {
                let frames: Vec<u32> = stream.records.iter().filter(|k| k.person_id == r.person_id).map(|k| k.frame).collect();
                prop_assert!(*frames.iter().min().unwrap() <= r.frame && r.frame <= *frames.iter().max().unwrap());
            }
        }

        #[test]
        fn decimation_is_increasing_subset(frames in 1u32..2000, fps in 1.0..60.0f64, ratio in 0.01..1.0f64) {
            let kept = decimate(frames, fps, fps * ratio).unwrap();
            prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(kept.iter().all(|f| (1..=frames).contains(f)));
            prop_assert_eq!(kept[0], 1);
        }
    }
}
