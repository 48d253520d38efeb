//! Age and gender scoring on true-positive detections.
//!
//! Every matched pair at every frame is one sample. An estimator may abstain
//! with `unknown`; such samples are tallied but add no TP, FP or FN. Age
//! estimates given in years get a tolerance band around each interior class
//! boundary, so a 17-year estimate is correct for both `0-18` and `19-34`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ingest::{EstStream, GtStream};
use crate::localization::{DistanceBand, DistanceBands, PrfResult, RecordKey};
use crate::matching::FrameMatch;
use crate::model::{AgeClass, AgeEstimate, EstRecord, EvalConfig, Gender, GtRecord, Occlusion, PersonId};

pub fn age_class_of(years: u32) -> AgeClass {
    match years {
        0..=18 => AgeClass::Age0To18,
        19..=34 => AgeClass::Age19To34,
        35..=65 => AgeClass::Age35To65,
        _ => AgeClass::Age65Plus,
    }
}

/// Class bounds widened by `overlap_years` at every interior boundary.
pub fn extended_bounds(class: AgeClass, overlap_years: u32) -> (u32, Option<u32>) {
    let (lo, hi) = class.bounds();
    let lo = if lo == 0 { 0 } else { lo.saturating_sub(overlap_years) };
    (lo, hi.map(|h| h + overlap_years))
}

pub fn age_matches(estimate: AgeEstimate, actual: AgeClass, overlap_years: u32) -> bool {
    match estimate {
        AgeEstimate::Years(y) => {
            let (lo, hi) = extended_bounds(actual, overlap_years);
            y >= lo && hi.is_none_or(|h| y <= h)
        }
        AgeEstimate::Class(c) => c == actual,
        AgeEstimate::Unknown => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Per-class confusion tallies for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts<C: Ord> {
    pub classes: BTreeMap<C, Counts>,
    /// Samples where the estimator answered `unknown`.
    pub unknown: u64,
    /// Samples where the estimator gave no value for the attribute.
    pub no_estimate: u64,
    /// Samples skipped because the annotation lacks the attribute.
    pub skipped: u64,
}

impl<C: Ord + Copy> ClassCounts<C> {
    pub fn new(all: &[C]) -> Self {
        Self { classes: all.iter().map(|&c| (c, Counts::default())).collect(), unknown: 0, no_estimate: 0, skipped: 0 }
    }

    fn entry(&mut self, c: C) -> &mut Counts {
        self.classes.entry(c).or_default()
    }

    /// Records one sample: a hit for `actual`, or a miss charged as FN to
    /// `actual` and FP to `predicted`.
    pub fn record(&mut self, actual: C, predicted: C, correct: bool) {
        if correct {
            self.entry(actual).tp += 1;
        } else {
            self.entry(actual).fn_ += 1;
            self.entry(predicted).fp += 1;
        }
    }

    pub fn scored(&self) -> u64 {
        self.classes.values().map(|c| c.tp + c.fn_).sum()
    }
}

pub type Pair<'a> = (&'a GtRecord, &'a EstRecord);

/// Annotation/estimation records behind the TP pairs of `matches`.
pub fn matched_pairs<'a>(matches: &[FrameMatch], gt: &'a GtStream, est: &'a EstStream) -> Vec<Pair<'a>> {
    let gt_by: HashMap<(u32, &PersonId), &GtRecord> = gt.records.iter().map(|r| ((r.frame, &r.person_id), r)).collect();
    let est_by: HashMap<(u32, &str), &EstRecord> =
        est.records.iter().map(|r| ((r.frame, r.est_id.as_str()), r)).collect();
    matches
        .iter()
        .flat_map(|m| m.tp.iter().map(move |p| (m.frame, p)))
        .filter_map(|(f, p)| Some((*gt_by.get(&(f, &p.gt_id))?, *est_by.get(&(f, p.est_id.as_str()))?)))
        .collect()
}

pub fn score_age(pairs: &[Pair<'_>], cfg: &EvalConfig) -> ClassCounts<AgeClass> {
    let mut counts = ClassCounts::new(&AgeClass::ALL);
    for (g, e) in pairs {
        let Some(years) = g.age_years else {
            counts.skipped += 1;
            continue;
        };
        let actual = age_class_of(years);
        match e.age {
            None => counts.no_estimate += 1,
            Some(AgeEstimate::Unknown) => counts.unknown += 1,
            Some(est @ AgeEstimate::Years(y)) => {
                counts.record(actual, age_class_of(y), age_matches(est, actual, cfg.age_overlap_years))
            }
            Some(AgeEstimate::Class(c)) => counts.record(actual, c, c == actual),
        }
    }
    counts
}

pub fn score_gender(pairs: &[Pair<'_>]) -> ClassCounts<Gender> {
    let mut counts = ClassCounts::new(&Gender::ALL);
    for (g, e) in pairs {
        let Some(actual) = g.gender else {
            counts.skipped += 1;
            continue;
        };
        match e.gender.map(|x| x.known()) {
            None => counts.no_estimate += 1,
            Some(None) => counts.unknown += 1,
            Some(Some(predicted)) => counts.record(actual, predicted, predicted == actual),
        }
    }
    counts
}

pub fn per_class_prf<C: Ord + Copy>(counts: &ClassCounts<C>) -> BTreeMap<C, PrfResult> {
    counts.classes.iter().map(|(&c, k)| (c, PrfResult::from_counts(k.tp, k.fp, k.fn_))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Close,
    Far,
    OccNone,
    OccPartial,
    OccHeavy,
}

impl Stratum {
    pub const ALL: [Stratum; 5] =
        [Stratum::Close, Stratum::Far, Stratum::OccNone, Stratum::OccPartial, Stratum::OccHeavy];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stratum::Close => "close",
            Stratum::Far => "far",
            Stratum::OccNone => "occ_none",
            Stratum::OccPartial => "occ_partial",
            Stratum::OccHeavy => "occ_heavy",
        }
    }

    fn of_occlusion(o: Occlusion) -> Stratum {
        match o {
            Occlusion::None => Stratum::OccNone,
            Occlusion::Partial => Stratum::OccPartial,
            Occlusion::Heavy => Stratum::OccHeavy,
        }
    }
}

/// F1 per class within each stratum; `None` where the class has no
/// samples in that stratum.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StratifiedF1 {
    pub age: BTreeMap<Stratum, BTreeMap<AgeClass, Option<f64>>>,
    pub gender: BTreeMap<Stratum, BTreeMap<Gender, Option<f64>>>,
}

fn f1_or_absent<C: Ord + Copy>(counts: &ClassCounts<C>) -> BTreeMap<C, Option<f64>> {
    counts
        .classes
        .iter()
        .map(|(&c, k)| {
            let f = (k.tp + k.fp + k.fn_ > 0).then(|| PrfResult::from_counts(k.tp, k.fp, k.fn_).f1);
            (c, f)
        })
        .collect()
}

pub fn stratified_attribute_f1(
    pairs: &[Pair<'_>],
    bands: &DistanceBands,
    occlusion: &HashMap<RecordKey, Occlusion>,
    cfg: &EvalConfig,
) -> StratifiedF1 {
    let mut buckets: BTreeMap<Stratum, Vec<Pair<'_>>> = Stratum::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for &(g, e) in pairs {
        let key = (g.frame, g.person_id.clone());
        match bands.bands.get(&key) {
            Some(DistanceBand::Close) => buckets.get_mut(&Stratum::Close).unwrap().push((g, e)),
            Some(DistanceBand::Far) => buckets.get_mut(&Stratum::Far).unwrap().push((g, e)),
            None => {}
        }
        if let Some(&o) = occlusion.get(&key) {
            buckets.get_mut(&Stratum::of_occlusion(o)).unwrap().push((g, e));
        }
    }
    let mut out = StratifiedF1::default();
    for (stratum, ps) in buckets {
        out.age.insert(stratum, f1_or_absent(&score_age(&ps, cfg)));
        out.gender.insert(stratum, f1_or_absent(&score_gender(&ps)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, GenderEstimate};
    use proptest::prelude::*;

    fn gt(age: Option<u32>, gender: Option<Gender>) -> GtRecord {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        GtRecord {
            frame: 1,
            person_id: PersonId::new("g"),
            person_box: Some(b),
            face_box: Some(b),
            ots: true,
            occlusion: Occlusion::None,
            age_years: age,
            gender,
        }
    }

    fn est(age: Option<AgeEstimate>, gender: Option<GenderEstimate>) -> EstRecord {
        EstRecord { frame: 1, est_id: "e".into(), bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), age, gender }
    }

    #[test]
    fn class_boundaries() {
        assert_eq!(age_class_of(18), AgeClass::Age0To18);
        assert_eq!(age_class_of(19), AgeClass::Age19To34);
        assert_eq!(age_class_of(65), AgeClass::Age35To65);
        assert_eq!(age_class_of(66), AgeClass::Age65Plus);
        assert_eq!(age_class_of(80), AgeClass::Age65Plus);
    }

    #[test]
    fn overlapping_ranges() {
        let y17 = AgeEstimate::Years(17);
        assert!(age_matches(y17, AgeClass::Age19To34, 2));
        assert!(age_matches(y17, AgeClass::Age0To18, 2));
        assert!(!age_matches(y17, AgeClass::Age35To65, 2));
        assert!(!age_matches(y17, AgeClass::Age65Plus, 2));
        assert_eq!(extended_bounds(AgeClass::Age19To34, 2), (17, Some(36)));
        assert_eq!(extended_bounds(AgeClass::Age0To18, 2), (0, Some(20)));
        assert!(!age_matches(y17, AgeClass::Age19To34, 0));
        assert!(age_matches(AgeEstimate::Class(AgeClass::Age0To18), AgeClass::Age0To18, 2));
        assert!(!age_matches(AgeEstimate::Class(AgeClass::Age19To34), AgeClass::Age0To18, 2));
    }

    #[test]
    fn age_scoring_rules() {
        let cfg = EvalConfig::default();
        let (g, e) = (gt(Some(25), None), est(Some(AgeEstimate::Years(26)), None));
        let c = score_age(&[(&g, &e)], &cfg);
        assert_eq!(c.classes[&AgeClass::Age19To34].tp, 1);

        let e = est(Some(AgeEstimate::Unknown), None);
        let c = score_age(&[(&g, &e)], &cfg);
        assert_eq!(c.unknown, 1);
        assert_eq!(c.scored(), 0);
        assert!(c.classes.values().all(|k| k.fp == 0));

        let (g, e) = (gt(Some(10), None), est(Some(AgeEstimate::Years(40)), None));
        let c = score_age(&[(&g, &e)], &cfg);
        assert_eq!(c.classes[&AgeClass::Age0To18].fn_, 1);
        assert_eq!(c.classes[&AgeClass::Age35To65].fp, 1);

        // Wrong estimate inside an overlap zone charges the FP to the
        // unextended class of the estimate.
        let (g, e) = (gt(Some(40), None), est(Some(AgeEstimate::Years(33)), None));
        let c = score_age(&[(&g, &e)], &cfg);
        assert_eq!(c.classes[&AgeClass::Age35To65].tp, 1);
        let (g, e) = (gt(Some(10), None), est(Some(AgeEstimate::Years(34)), None));
        let c = score_age(&[(&g, &e)], &cfg);
        assert_eq!(c.classes[&AgeClass::Age19To34].fp, 1);

        let (g, e) = (gt(None, None), est(Some(AgeEstimate::Years(30)), None));
        assert_eq!(score_age(&[(&g, &e)], &cfg).skipped, 1);
    }

    #[test]
    fn gender_scoring_rules() {
        let f = gt(None, Some(Gender::Female));
        let m = gt(None, Some(Gender::Male));
        let as_f = est(None, Some(GenderEstimate::Female));
        let unk = est(None, Some(GenderEstimate::Unknown));
        let c = score_gender(&[(&f, &as_f)]);
        assert_eq!(c.classes[&Gender::Female].tp, 1);
        let c = score_gender(&[(&m, &as_f)]);
        assert_eq!(c.classes[&Gender::Female].fp, 1);
        assert_eq!(c.classes[&Gender::Male].fn_, 1);
        let c = score_gender(&[(&f, &unk)]);
        assert_eq!(c.unknown, 1);
        assert_eq!(c.classes.values().map(|k| k.tp + k.fp + k.fn_).sum::<u64>(), 0);
    }

    #[test]
    fn per_class_prf_arithmetic() {
        let mut c = ClassCounts::new(&Gender::ALL);
        c.classes.insert(Gender::Female, Counts { tp: 100, fp: 14, fn_: 51 });
        c.unknown = 10;
        let prf = per_class_prf(&c);
        let f = prf[&Gender::Female];
        assert!((f.precision - 100.0 / 114.0).abs() < 1e-12);
        assert!((f.recall - 100.0 / 151.0).abs() < 1e-12);
        assert!((f.f1 - 200.0 / 265.0).abs() < 1e-12);
        assert!(prf[&Gender::Male].vacuous);
        assert_eq!(prf[&Gender::Male].f1, 0.0);
    }

    #[test]
    fn stratified_f1_examples() {
        let cfg = EvalConfig::default();
        let mut near = gt(Some(30), Some(Gender::Female));
        near.person_id = PersonId::new("near");
        let mut heavy = gt(Some(30), Some(Gender::Male));
        heavy.person_id = PersonId::new("heavy");
        heavy.occlusion = Occlusion::Heavy;
        let good = est(Some(AgeEstimate::Years(30)), Some(GenderEstimate::Female));
        let mut bands = DistanceBands { p50_area: 100.0, bands: HashMap::new() };
        bands.bands.insert((1, near.person_id.clone()), DistanceBand::Close);
        bands.bands.insert((1, heavy.person_id.clone()), DistanceBand::Close);
        let occ: HashMap<_, _> =
            [near.clone(), heavy.clone()].iter().map(|r| ((r.frame, r.person_id.clone()), r.occlusion)).collect();

        let s = stratified_attribute_f1(&[(&near, &good)], &bands, &occ, &cfg);
        assert_eq!(s.gender[&Stratum::Close][&Gender::Female], Some(1.0));
        assert_eq!(s.gender[&Stratum::Far][&Gender::Female], None);
        assert_eq!(s.age[&Stratum::Far][&AgeClass::Age19To34], None);

        let s = stratified_attribute_f1(&[(&near, &good), (&heavy, &good)], &bands, &occ, &cfg);
        let heavy_f = s.gender[&Stratum::OccHeavy][&Gender::Female].unwrap_or(0.0);
        let none_f = s.gender[&Stratum::OccNone][&Gender::Female].unwrap();
        assert!(heavy_f < none_f);
    }

    fn arb_gender() -> impl Strategy<Value = Gender> {
        prop_oneof![Just(Gender::Male), Just(Gender::Female)]
    }

    fn arb_gender_est() -> impl Strategy<Value = Option<GenderEstimate>> {
        prop_oneof![
            Just(None),
            Just(Some(GenderEstimate::Male)),
            Just(Some(GenderEstimate::Female)),
            Just(Some(GenderEstimate::Unknown))
        ]
    }

    proptest! {
        #[test]
        fn gender_confusion_decomposes(samples in proptest::collection::vec((proptest::option::of(arb_gender()), arb_gender_est()), 0..60)) {
            let gts: Vec<GtRecord> = samples.iter().map(|s| gt(None, s.0)).collect();
            let ests: Vec<EstRecord> = samples.iter().map(|s| est(None, s.1)).collect();
            let pairs: Vec<Pair<'_>> = gts.iter().zip(&ests).collect();
            let c = score_gender(&pairs);
            let tp: u64 = c.classes.values().map(|k| k.tp).sum();
            let fn_: u64 = c.classes.values().map(|k| k.fn_).sum();
            let fp: u64 = c.classes.values().map(|k| k.fp).sum();
            prop_assert_eq!(tp + fn_ + c.unknown + c.no_estimate + c.skipped, samples.len() as u64);
            prop_assert_eq!(fp, fn_);
            for g in Gender::ALL {
                let other = if g == Gender::Male { Gender::Female } else { Gender::Male };
                let wrong = samples.iter().filter(|s| s.0 == Some(g) && s.1.and_then(|e| e.known()) == Some(other)).count() as u64;
                prop_assert_eq!(c.classes[&g].fn_, wrong);
            }
        }

        #[test]
        fn abstaining_never_scores_worse(samples in proptest::collection::vec((arb_gender(), arb_gender_est()), 1..60)) {
            let gts: Vec<GtRecord> = samples.iter().map(|s| gt(None, Some(s.0))).collect();
            let ests: Vec<EstRecord> = samples.iter().map(|s| est(None, s.1)).collect();
            let forced: Vec<EstRecord> = samples
                .iter()
                .map(|s| match s.1 {
                    Some(GenderEstimate::Unknown) => {
                        let wrong = if s.0 == Gender::Male { GenderEstimate::Female } else { GenderEstimate::Male };
                        est(None, Some(wrong))
                    }
                    other => est(None, other),
                })
                .collect();
            let a = per_class_prf(&score_gender(&gts.iter().zip(&ests).collect::<Vec<_>>()));
            let b = per_class_prf(&score_gender(&gts.iter().zip(&forced).collect::<Vec<_>>()));
            for g in Gender::ALL {
                prop_assert!(a[&g].precision >= b[&g].precision - 1e-12);
                prop_assert!(a[&g].recall >= b[&g].recall - 1e-12);
            }
        }

        #[test]
        fn years_match_one_or_two_classes(y in 0u32..120) {
            let n = AgeClass::ALL.iter().filter(|&&c| age_matches(AgeEstimate::Years(y), c, 2)).count();
            prop_assert!((1..=2).contains(&n));
            let strict: Vec<AgeClass> = AgeClass::ALL.into_iter().filter(|&c| age_matches(AgeEstimate::Years(y), c, 0)).collect();
            prop_assert_eq!(strict, vec![age_class_of(y)]);
        }
    }
}
