//! Domain types shared by every stage of the evaluation pipeline.
//!
//! Frames are 1-based (`1..=T`). Boxes live in continuous pixel coordinates;
//! intersections are computed on edges, never on rasterized pixels.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `(x, y, w, h)` in pixels, `(x, y)` being the
/// top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite values, negative corners and
    /// empty extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite box [{x}, {y}, {w}, {h}]")));
        }
        if x < 0.0 || y < 0.0 {
            return Err(Error::InvalidBox(format!("negative corner [{x}, {y}, {w}, {h}]")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!("empty extent [{x}, {y}, {w}, {h}]")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Area of the overlap with `other`, 0 when disjoint or only touching.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Intersection over union.
    pub fn iou(&self, other: &BBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 4]>::deserialize(d)?;
        BBox::try_from(v).map_err(serde::de::Error::custom)
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Identity of an annotated person.
///
/// `occurrence` is 0 for the identity as written in the annotation file and
/// counts up each time the person re-enters the scene after a long absence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PersonId {
    pub name: String,
    pub occurrence: u32,
}

impl PersonId {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), occurrence: 0 }
    }

    pub fn with_occurrence(&self, occurrence: u32) -> Self {
        Self { name: self.name.clone(), occurrence }
    }
}

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.occurrence == 0 {
            write!(f, "{}", self.name)
        } else {
            write!(f, "{}#{}", self.name, self.occurrence)
        }
    }
}

impl From<&str> for PersonId {
    fn from(s: &str) -> Self {
        PersonId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occlusion {
    None,
    /// Less than half of the annotated area is occluded.
    Partial,
    /// Half or more of the annotated area is occluded.
    Heavy,
}

impl Occlusion {
    pub const ALL: [Occlusion; 3] = [Occlusion::None, Occlusion::Partial, Occlusion::Heavy];

    pub fn as_str(&self) -> &'static str {
        match self {
            Occlusion::None => "none",
            Occlusion::Partial => "partial",
            Occlusion::Heavy => "heavy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

/// Gender as output by an estimator, which may abstain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderEstimate {
    Male,
    Female,
    Unknown,
}

impl GenderEstimate {
    pub fn known(&self) -> Option<Gender> {
        match self {
            GenderEstimate::Male => Some(Gender::Male),
            GenderEstimate::Female => Some(Gender::Female),
            GenderEstimate::Unknown => None,
        }
    }
}

impl From<Gender> for GenderEstimate {
    fn from(g: Gender) -> Self {
        match g {
            Gender::Male => GenderEstimate::Male,
            Gender::Female => GenderEstimate::Female,
        }
    }
}

/// Audience-analytics age ranges: `[0,18]`, `[19,34]`, `[35,65]`, `65+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeClass {
    #[serde(rename = "0-18")]
    Age0To18,
    #[serde(rename = "19-34")]
    Age19To34,
    #[serde(rename = "35-65")]
    Age35To65,
    #[serde(rename = "65+")]
    Age65Plus,
}

impl AgeClass {
    pub const ALL: [AgeClass; 4] = [AgeClass::Age0To18, AgeClass::Age19To34, AgeClass::Age35To65, AgeClass::Age65Plus];

    /// Inclusive year bounds; the open-ended class has no upper bound.
    pub fn bounds(&self) -> (u32, Option<u32>) {
        match self {
            AgeClass::Age0To18 => (0, Some(18)),
            AgeClass::Age19To34 => (19, Some(34)),
            AgeClass::Age35To65 => (35, Some(65)),
            AgeClass::Age65Plus => (66, None),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AgeClass::Age0To18 => "0-18",
            AgeClass::Age19To34 => "19-34",
            AgeClass::Age35To65 => "35-65",
            AgeClass::Age65Plus => "65+",
        }
    }

    pub fn parse(s: &str) -> Option<AgeClass> {
        AgeClass::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for AgeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Age output by an estimator: either an age in years or a class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgeEstimate {
    Years(u32),
    Class(AgeClass),
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub name: String,
    pub frame_count: u32,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub ignore_regions: Vec<BBox>,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 1 {
            return Err(Error::Config(format!("video {}: frame count must be >= 1", self.name)));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("video {}: fps must be > 0", self.name)));
        }
        for r in &self.ignore_regions {
            if !r.within(self.width as f64, self.height as f64) {
                return Err(Error::Config(format!(
                    "video {}: ignore region {:?} exceeds {}x{}",
                    self.name,
                    r.to_array(),
                    self.width,
                    self.height
                )));
            }
        }
        Ok(())
    }
}

/// One annotated person at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtRecord {
    pub frame: u32,
    pub person_id: PersonId,
    pub person_box: Option<BBox>,
    pub face_box: Option<BBox>,
    pub ots: bool,
    pub occlusion: Occlusion,
    pub age_years: Option<u32>,
    pub gender: Option<Gender>,
}

impl GtRecord {
    pub fn target_box(&self, target: Target) -> Option<&BBox> {
        match target {
            Target::Face => self.face_box.as_ref(),
            Target::Person => self.person_box.as_ref(),
        }
    }
}

/// One algorithm output at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EstRecord {
    pub frame: u32,
    pub est_id: String,
    pub bbox: BBox,
    pub age: Option<AgeEstimate>,
    pub gender: Option<GenderEstimate>,
}

/// Which annotated box estimations are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Face,
    Person,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Descending-IOU greedy assignment.
    #[default]
    Greedy,
    /// Assignment maximizing the summed IOU of eligible pairs.
    MaxSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub target: Target,
    pub segment_durations_s: Vec<f64>,
    pub reentry_gap_s: f64,
    pub ignore_overlap_ratio: f64,
    pub age_overlap_years: u32,
    pub target_fps: Option<f64>,
    pub match_mode: MatchMode,
    /// Estimations that overlap a person without OTS are neither TP nor FP.
    pub non_ots_neutral: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            target: Target::Face,
            segment_durations_s: vec![10.0, 20.0, 30.0, 60.0, 90.0, 120.0],
            reentry_gap_s: 10.0,
            ignore_overlap_ratio: 0.5,
            age_overlap_years: 2,
            target_fps: None,
            match_mode: MatchMode::Greedy,
            non_ots_neutral: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!("iou_threshold must be in (0, 1], got {}", self.iou_threshold)));
        }
        if let Some(d) = self.segment_durations_s.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::Config(format!("segment durations must be > 0, got {d}")));
        }
        if !(self.reentry_gap_s.is_finite() && self.reentry_gap_s > 0.0) {
            return Err(Error::Config(format!("reentry_gap_s must be > 0, got {}", self.reentry_gap_s)));
        }
        if !(self.ignore_overlap_ratio > 0.0 && self.ignore_overlap_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "ignore_overlap_ratio must be in (0, 1], got {}",
                self.ignore_overlap_ratio
            )));
        }
        if let Some(fps) = self.target_fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(Error::Config(format!("target_fps must be > 0, got {fps}")));
            }
        }
        Ok(())
    }

    /// Re-entry gap expressed in frames at the given frame rate.
    pub fn reentry_gap_frames(&self, fps: f64) -> f64 {
        self.reentry_gap_s * fps
    }
}
