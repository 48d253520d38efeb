//! Synthetic ground truth and controllably degraded estimations.
//!
//! People walk on straight lines at constant velocity. Estimations are
//! derived from the OTS annotations by deleting boxes (misses), adding
//! spurious boxes (false positives), relabelling tracks (identity switches),
//! jittering box corners and corrupting attributes. With every noise source
//! at zero the estimation stream reproduces the OTS ground truth exactly.
//!
//! Generation is a pure function of the spec. Randomness comes from
//! [`SplitMix64`], defined below by its algorithm so fixtures can be
//! regenerated bit for bit by any implementation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, EstStream, GtStream};
use crate::model::{
    AgeEstimate, BBox, EstRecord, Gender, GenderEstimate, GtRecord, Occlusion, PersonId, Target, VideoMeta,
};

/// SplitMix64 (Steele, Lea, Flood 2014).
///
/// ```text
/// state = state + 0x9E3779B97F4A7C15            (wrapping)
/// z = state
/// z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9      (wrapping)
/// z = (z ^ (z >> 27)) * 0x94D049BB133111EB      (wrapping)
/// return z ^ (z >> 31)
/// ```
///
/// Uniform doubles take the top 53 bits: `(next >> 11) * 2^-53`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        lo + ((hi - lo + 1) as f64 * self.next_f64()) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Poisson sample by multiplying uniforms until the product drops below
    /// `exp(-lambda)`.
    pub fn poisson(&mut self, lambda: f64) -> u32 {
        if lambda <= 0.0 {
            return 0;
        }
        let limit = (-lambda).exp();
        let mut k = 0;
        let mut p = 1.0;
        loop {
            p *= self.next_f64();
            if p <= limit {
                return k;
            }
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresenceModel {
    /// Shortest and longest time a person stays in view.
    pub dwell_min_s: f64,
    pub dwell_max_s: f64,
}

impl Default for PresenceModel {
    fn default() -> Self {
        Self { dwell_min_s: 5.0, dwell_max_s: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeConfusion {
    pub gender_flip_prob: f64,
    pub gender_unknown_prob: f64,
    pub age_unknown_prob: f64,
    /// Estimated age is the true age plus a uniform integer offset in
    /// `[-age_noise_years, age_noise_years]`.
    pub age_noise_years: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub name: String,
    pub seed: u64,
    pub frames: u32,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub n_identities: u32,
    pub presence: PresenceModel,
    pub ots_prob: f64,
    pub partial_occlusion_prob: f64,
    pub heavy_occlusion_prob: f64,
    pub miss_prob: f64,
    /// Expected spurious estimations per frame.
    pub fp_rate: f64,
    /// Per-frame probability that a track's estimated identity changes.
    pub id_switch_prob: f64,
    pub jitter_px: f64,
    /// Maximum speed in pixels per frame along each axis.
    pub max_speed_px: f64,
    pub target: Target,
    pub age_min: u32,
    pub age_max: u32,
    pub female_prob: f64,
    pub attribute_confusion: AttributeConfusion,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            seed: 0,
            frames: 900,
            fps: 30.0,
            width: 1920,
            height: 1080,
            n_identities: 10,
            presence: PresenceModel::default(),
            ots_prob: 1.0,
            partial_occlusion_prob: 0.0,
            heavy_occlusion_prob: 0.0,
            miss_prob: 0.0,
            fp_rate: 0.0,
            id_switch_prob: 0.0,
            jitter_px: 0.0,
            max_speed_px: 2.0,
            target: Target::Face,
            age_min: 10,
            age_max: 80,
            female_prob: 0.5,
            attribute_confusion: AttributeConfusion::default(),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid video name `{}`", self.name)));
        }
        if self.frames < 1 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.width < 200 || self.height < 400 {
            return Err(Error::Config("frame must be at least 200x400 pixels".into()));
        }
        for (n, p) in [
            ("ots_prob", self.ots_prob),
            ("partial_occlusion_prob", self.partial_occlusion_prob),
            ("heavy_occlusion_prob", self.heavy_occlusion_prob),
            ("miss_prob", self.miss_prob),
            ("id_switch_prob", self.id_switch_prob),
            ("female_prob", self.female_prob),
            ("gender_flip_prob", self.attribute_confusion.gender_flip_prob),
            ("gender_unknown_prob", self.attribute_confusion.gender_unknown_prob),
            ("age_unknown_prob", self.attribute_confusion.age_unknown_prob),
        ] {
            check_prob(n, p)?;
        }
        check_prob("partial + heavy occlusion", self.partial_occlusion_prob + self.heavy_occlusion_prob)?;
        if !(self.fp_rate.is_finite() && self.fp_rate >= 0.0) {
            return Err(Error::Config(format!("fp_rate must be >= 0, got {}", self.fp_rate)));
        }
        if !(self.jitter_px >= 0.0 && self.max_speed_px >= 0.0) {
            return Err(Error::Config("jitter_px and max_speed_px must be >= 0".into()));
        }
        let p = &self.presence;
        if !(p.dwell_min_s > 0.0 && p.dwell_min_s <= p.dwell_max_s) {
            return Err(Error::Config("presence requires 0 < dwell_min_s <= dwell_max_s".into()));
        }
        if self.age_min > self.age_max {
            return Err(Error::Config("age_min must not exceed age_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub meta: VideoMeta,
    pub gt: GtStream,
    pub est: EstStream,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn make_box(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(round2(x).max(0.0), round2(y).max(0.0), round2(w).max(0.01), round2(h).max(0.01)).expect("synthetic box")
}

struct Person {
    id: PersonId,
    entry: u32,
    dwell: u32,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    w: f64,
    h: f64,
    ots: bool,
    occlusion: Occlusion,
    age: u32,
    gender: Gender,
}

impl Person {
    /// Person box at `frame`, bouncing off the image borders.
    fn person_box(&self, frame: u32, width: f64, height: f64) -> BBox {
        let steps = f64::from(frame - self.entry);
        let reflect = |start: f64, v: f64, span: f64| {
            if span <= 0.0 {
                return 0.0;
            }
            let p = (start + v * steps).rem_euclid(2.0 * span);
            if p > span {
                2.0 * span - p
            } else {
                p
            }
        };
        let x = reflect(self.x0, self.vx, width - self.w);
        let y = reflect(self.y0, self.vy, height - self.h);
        make_box(x, y, self.w, self.h)
    }
}

fn face_of(person: &BBox) -> BBox {
    let fw = person.w() * 0.4;
    let fh = person.h() * 0.16;
    make_box(person.x() + (person.w() - fw) / 2.0, person.y() + person.h() * 0.02, fw, fh)
}

pub fn generate(spec: &SynthSpec) -> Result<SyntheticVideo> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let (width, height) = (f64::from(spec.width), f64::from(spec.height));
    let meta = VideoMeta {
        name: spec.name.clone(),
        frame_count: spec.frames,
        fps: spec.fps,
        width: spec.width,
        height: spec.height,
        ignore_regions: Vec::new(),
    };

    let dwell_lo = ((spec.presence.dwell_min_s * spec.fps).round() as u64).clamp(1, u64::from(spec.frames));
    let dwell_hi = ((spec.presence.dwell_max_s * spec.fps).round() as u64).clamp(dwell_lo, u64::from(spec.frames));
    let people: Vec<Person> = (0..spec.n_identities)
        .map(|i| {
            let dwell = rng.range_inclusive(dwell_lo, dwell_hi) as u32;
            let entry = rng.range_inclusive(1, u64::from(spec.frames - dwell + 1)) as u32;
            let w = rng.uniform(40.0, 160.0);
            let h = w * 2.5;
            let x0 = rng.uniform(0.0, width - w);
            let y0 = rng.uniform(0.0, height - h);
            let vx = rng.uniform(-spec.max_speed_px, spec.max_speed_px);
            let vy = rng.uniform(-spec.max_speed_px, spec.max_speed_px) * 0.25;
            let ots = rng.bernoulli(spec.ots_prob);
            let u = rng.next_f64();
            let occlusion = if u < spec.heavy_occlusion_prob {
                Occlusion::Heavy
            } else if u < spec.heavy_occlusion_prob + spec.partial_occlusion_prob {
                Occlusion::Partial
            } else {
                Occlusion::None
            };
            let age = rng.range_inclusive(u64::from(spec.age_min), u64::from(spec.age_max)) as u32;
            let gender = if rng.bernoulli(spec.female_prob) { Gender::Female } else { Gender::Male };
            Person {
                id: PersonId::new(format!("p{i:04}")),
                entry,
                dwell,
                x0,
                y0,
                vx,
                vy,
                w,
                h,
                ots,
                occlusion,
                age,
                gender,
            }
        })
        .collect();

    let mut gt_records = Vec::new();
    for p in &people {
        for f in p.entry..p.entry + p.dwell {
            let pb = p.person_box(f, width, height);
            gt_records.push(GtRecord {
                frame: f,
                person_id: p.id.clone(),
                person_box: Some(pb),
                face_box: Some(face_of(&pb)),
                ots: p.ots,
                occlusion: p.occlusion,
                age_years: Some(p.age),
                gender: Some(p.gender),
            });
        }
    }
    let gt = GtStream::new(meta.clone(), gt_records);

    // Current estimated label and switch count per person.
    let mut labels: Vec<(String, u32)> = people.iter().map(|p| (p.id.name.clone(), 0)).collect();
    let index_of: std::collections::HashMap<&PersonId, usize> =
        people.iter().enumerate().map(|(i, p)| (&p.id, i)).collect();
    let conf = &spec.attribute_confusion;
    let mut est_records = Vec::new();
    let mut start = 0;
    for frame in 1..=spec.frames {
        let end = start + gt.records[start..].iter().take_while(|r| r.frame == frame).count();
        for r in gt.records[start..end].iter().filter(|r| r.ots) {
            let pi = index_of[&r.person_id];
            let missed = rng.bernoulli(spec.miss_prob);
            let switched = rng.bernoulli(spec.id_switch_prob);
            let (jx, jy) = (rng.uniform(-1.0, 1.0) * spec.jitter_px, rng.uniform(-1.0, 1.0) * spec.jitter_px);
            let gender_unknown = rng.bernoulli(conf.gender_unknown_prob);
            let gender_flip = rng.bernoulli(conf.gender_flip_prob);
            let age_unknown = rng.bernoulli(conf.age_unknown_prob);
            let age_offset =
                rng.range_inclusive(0, 2 * u64::from(conf.age_noise_years)) as i64 - i64::from(conf.age_noise_years);
            if switched {
                let (name, k) = &mut labels[pi];
                *k += 1;
                *name = format!("{}~{}", people[pi].id.name, k);
            }
            if missed {
                continue;
            }
            let b = *r.target_box(spec.target).expect("synthetic records carry both boxes");
            let bbox = if spec.jitter_px > 0.0 { make_box(b.x() + jx, b.y() + jy, b.w(), b.h()) } else { b };
            let truth = r.gender.expect("synthetic gender");
            let gender = if gender_unknown {
                GenderEstimate::Unknown
            } else if gender_flip {
                match truth {
                    Gender::Male => GenderEstimate::Female,
                    Gender::Female => GenderEstimate::Male,
                }
            } else {
                truth.into()
            };
            let true_age = r.age_years.expect("synthetic age");
            let age = if age_unknown {
                AgeEstimate::Unknown
            } else {
                AgeEstimate::Years((i64::from(true_age) + age_offset).max(0) as u32)
            };
            est_records.push(EstRecord {
                frame,
                est_id: labels[pi].0.clone(),
                bbox,
                age: Some(age),
                gender: Some(gender),
            });
        }
        for k in 0..rng.poisson(spec.fp_rate) {
            let w = rng.uniform(16.0, 64.0);
            let h = rng.uniform(16.0, 64.0);
            let x = rng.uniform(0.0, width - w);
            let y = rng.uniform(0.0, height - h);
            est_records.push(EstRecord {
                frame,
                est_id: format!("fp{frame}_{k}"),
                bbox: make_box(x, y, w, h),
                age: Some(AgeEstimate::Unknown),
                gender: Some(GenderEstimate::Unknown),
            });
        }
        start = end;
    }
    let est = EstStream::new(spec.name.clone(), est_records);
    Ok(SyntheticVideo { meta, gt, est })
}

/// File names used for one video inside a dataset directory.
pub fn dataset_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(format!("{name}.meta.json")), dir.join(format!("{name}.gt.jsonl")), dir.join(format!("{name}.est.jsonl")))
}

/// Writes `<name>.meta.json`, `<name>.gt.jsonl` and `<name>.est.jsonl`.
pub fn write_video(dir: &Path, video: &SyntheticVideo) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (meta_path, gt_path, est_path) = dataset_paths(dir, &video.meta.name);
    let mut meta = ingest::meta_to_json(&video.meta)?;
    meta.push('\n');
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    let mut buf = Vec::new();
    ingest::write_gt(&video.gt, &mut buf)?;
    fs::write(&gt_path, &buf).map_err(|e| Error::io(&gt_path, e))?;
    buf.clear();
    ingest::write_est(&video.est, &mut buf)?;
    fs::write(&est_path, &buf).map_err(|e| Error::io(&est_path, e))?;
    Ok(())
}

/// Spec files hold either one spec object or an array of them.
pub fn parse_specs(s: &str) -> Result<Vec<SynthSpec>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<SynthSpec>),
        One(Box<SynthSpec>),
    }
    let specs = match serde_json::from_str::<OneOrMany>(s).map_err(|e| Error::Config(format!("synth spec: {e}")))? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(s) => vec![*s],
    };
    let mut names = std::collections::HashSet::new();
    for s in &specs {
        if !names.insert(s.name.as_str()) {
            return Err(Error::Config(format!("duplicate video name `{}`", s.name)));
        }
    }
    Ok(specs)
}
