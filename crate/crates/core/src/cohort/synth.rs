//! Shape-matched synthetic cohorts with a planted, documented risk signal.
//!
//! Each subject gets a latent injury severity `s ~ N(0, 1)` that drives GCS,
//! ICU admission and stay, cranial surgery, acute seizures, CT findings and
//! lab shifts. Labels follow a latent-variable logistic risk model:
//!
//! ```text
//! liability = b_seizure * acute_seizure
//!           + b_gcs * (15 - worst GCS total)
//!           + b_surgery * surgery_performed
//!           + b_icu * icu_days
//!           + noise_scale * e,      e ~ logistic-variance-matched noise
//! ```
//!
//! and the `round(prevalence * n)` subjects with the highest liability are
//! labelled positive, which fixes the intercept implicitly. Operative notes
//! and imaging reports are assembled from keyword pools; the chance of
//! drawing from the high-risk pool grows with the subject's liability rank,
//! so the free text carries signal beyond the structured fields.
//!
//! All arithmetic is IEEE-754 add/mul/div/sqrt/round on `f64` over a ChaCha
//! stream, so a seed reproduces the same cohort bit-for-bit on any platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{
    aggregate_series, Analyte, Cohort, CtFindings, GcsRecord, HistoryDemographics,
    HospitalCourse, ImagingNotes, LabPanel, Provenance, Sex, Subject, TriState,
};

/// Where the label signal lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    /// Labels follow the structured risk model; free text echoes it.
    #[default]
    Planted,
    /// Labels depend only on a latent factor expressed in note text; every
    /// subject gets an imaging report and structured fields carry no signal.
    TextOnly,
}

/// Weights of the latent risk model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskCoefficients {
    pub acute_seizure: f64,
    /// Per point of `15 - worst GCS total`.
    pub gcs_deficit: f64,
    pub surgery: f64,
    /// Per ICU day.
    pub icu_days: f64,
    /// Scale of the logistic-variance-matched noise term.
    pub noise_scale: f64,
}

impl Default for RiskCoefficients {
    fn default() -> Self {
        RiskCoefficients {
            acute_seizure: 1.6,
            gcs_deficit: 0.25,
            surgery: 1.0,
            icu_days: 0.08,
            noise_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n: usize,
    pub prevalence: f64,
    /// Probability that each maskable field is replaced by a missing value.
    pub missing_fraction: f64,
    /// Probability that a subject has imaging notes (planted mode only).
    pub imaging_availability: f64,
    pub signal_mode: SignalMode,
    pub coefficients: RiskCoefficients,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            n: 256,
            prevalence: 58.0 / 256.0,
            missing_fraction: 0.05,
            imaging_availability: 0.41,
            signal_mode: SignalMode::Planted,
            coefficients: RiskCoefficients::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn new(seed: u64, n: usize, prevalence: f64) -> Self {
        SyntheticConfig {
            seed,
            n,
            prevalence,
            ..Default::default()
        }
    }

    pub fn positives(&self) -> usize {
        (self.prevalence * self.n as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prevalence must lie in (0, 1), got {}",
                self.prevalence
            )));
        }
        if self.n < 20 {
            return Err(Error::InvalidParameter(format!(
                "synthetic cohort needs n >= 20, got {}",
                self.n
            )));
        }
        if self.prevalence * (self.n as f64) < 5.0 || self.n - self.positives() < 5 {
            return Err(Error::InvalidParameter(format!(
                "prevalence {} with n = {} leaves fewer than 5 subjects in a class",
                self.prevalence, self.n
            )));
        }
        for (name, p) in [
            ("missing_fraction", self.missing_fraction),
            ("imaging_availability", self.imaging_availability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

const SURGERY_TYPES: [&str; 5] = [
    "Decompressive craniectomy",
    "Craniotomy for hematoma evacuation",
    "Burr hole evacuation",
    "Elevation of depressed skull fracture",
    "Intracranial pressure monitor placement",
];

const RACES: [(&str, f64); 6] = [
    ("White", 0.72),
    ("Black", 0.15),
    ("Asian", 0.05),
    ("American Indian or Alaska Native", 0.02),
    ("Native Hawaiian or Pacific Islander", 0.01),
    ("Other", 0.05),
];

const OPERATIVE_HIGH: [&str; 6] = [
    "Dural tear with herniated contused cortex identified.",
    "Brain was tense and swollen after clot evacuation.",
    "Hemorrhagic temporal lobe contusion was debrided.",
    "Depressed fracture fragments penetrated the dura and cortex.",
    "Significant cortical laceration with active bleeding.",
    "Subpial hemorrhage and cortical disruption noted.",
];

const OPERATIVE_LOW: [&str; 6] = [
    "Hematoma evacuated without difficulty.",
    "Dura intact with no underlying cortical injury.",
    "Brain relaxed well after decompression.",
    "Hemostasis obtained and bone flap replaced.",
    "Minimal subdural collection without parenchymal injury.",
    "Procedure uncomplicated and well tolerated.",
];

const IMAGING_HIGH: [&str; 6] = [
    "Multiple foci of susceptibility artifact consistent with diffuse axonal injury.",
    "Encephalomalacia in the left frontal lobe.",
    "Hemosiderin deposition along the cortical surface.",
    "Gliosis surrounding prior contusion.",
    "Cortical laminar necrosis in the temporal lobe.",
    "Residual hemorrhagic contusion with surrounding edema.",
];

const IMAGING_LOW: [&str; 6] = [
    "No acute intracranial abnormality.",
    "Ventricles and sulci are normal in size.",
    "No evidence of parenchymal injury.",
    "Small scalp hematoma without underlying fracture.",
    "Gray-white matter differentiation is preserved.",
    "No midline shift or mass effect.",
];

/// `(baseline, shift per unit severity, noise sd)` per analyte.
fn lab_profile(analyte: Analyte) -> (f64, f64, f64) {
    match analyte {
        Analyte::Creatinine => (0.9, 0.08, 0.2),
        Analyte::Lactate => (1.8, 0.6, 0.7),
        Analyte::Hemoglobin => (13.0, -0.8, 1.2),
        Analyte::Paco2 => (38.0, 1.5, 3.0),
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Irwin-Hall approximation of a standard normal (sum of 12 uniforms - 6).
fn normal(rng: &mut impl Rng) -> f64 {
    let mut s = 0.0;
    for _ in 0..12 {
        s += rng.random::<f64>();
    }
    s - 6.0
}

/// Zero-mean noise with the variance of a standard logistic variable.
fn logistic_like(rng: &mut impl Rng) -> f64 {
    // sqrt(pi^2 / 3)
    1.813_799_364_234_217_8 * normal(rng)
}

fn bernoulli(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn round_to(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

fn clamp_score(x: f64, lo: u8, hi: u8) -> u8 {
    x.round().clamp(lo as f64, hi as f64) as u8
}

fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn gcs_record(rng: &mut impl Rng, severity: f64) -> GcsRecord {
    let worst = clamp_score(11.0 - 4.0 * severity + 1.2 * normal(rng), 3, 15);
    let best = clamp_score(worst as f64 + (3.0 * normal(rng)).abs(), worst, 15);
    let components = |total: u8| {
        let t = total as f64;
        let eye = clamp_score(t * 4.0 / 15.0, 1, 4);
        let motor = clamp_score(t * 6.0 / 15.0, 1, 6);
        let verbal = clamp_score(t - eye as f64 - motor as f64, 1, 5);
        (eye, verbal, motor)
    };
    let (ew, vw, mw) = components(worst);
    let (eb, vb, mb) = components(best);
    GcsRecord {
        total_worst: Some(worst),
        total_best: Some(best),
        eye_worst: Some(ew),
        eye_best: Some(eb.max(ew)),
        verbal_worst: Some(vw),
        verbal_best: Some(vb.max(vw)),
        motor_worst: Some(mw),
        motor_best: Some(mb.max(mw)),
    }
}

fn hospital_course(rng: &mut impl Rng, severity: f64) -> HospitalCourse {
    let icu_admitted = severity + 0.7 * normal(rng) > 0.0;
    let icu_noise = normal(rng);
    let icu_days = icu_admitted
        .then(|| round_to((1.0 + 2.5 * (severity + 1.0) + 1.5 * icu_noise).clamp(0.5, 30.0), 10.0));
    let surgery_performed = severity + 0.8 * normal(rng) > 0.45;
    let surgery_type = pick(rng, &SURGERY_TYPES).to_string();
    let hours = round_to((3.0 + 10.0 * rng.random::<f64>()).clamp(0.5, 72.0), 10.0);
    let acute_seizure_7d = 0.6 * severity + normal(rng) > 0.55;
    HospitalCourse {
        icu_admitted,
        icu_days,
        surgery_performed,
        surgery_type: surgery_performed.then_some(surgery_type),
        hours_to_surgery: surgery_performed.then_some(hours),
        acute_seizure_7d,
        operative_note: None,
    }
}

fn ct_findings(rng: &mut impl Rng, severity: f64) -> CtFindings {
    let mut finding = |offset: f64| {
        let u = rng.random::<f64>();
        if u < 0.04 {
            TriState::Indeterminate
        } else if severity + 0.9 * normal(rng) > offset {
            TriState::Present
        } else {
            TriState::Absent
        }
    };
    let contusion = finding(0.2);
    let epidural_hematoma = finding(1.2);
    let intracerebral_hemorrhage = finding(0.8);
    let skull_fracture = finding(0.4);
    let subarachnoid_hemorrhage = finding(0.0);
    CtFindings {
        contusion,
        epidural_hematoma,
        intracerebral_hemorrhage,
        skull_fracture,
        subarachnoid_hemorrhage,
        marshall_score: Some(clamp_score(2.0 + 1.2 * severity + 0.6 * normal(rng), 1, 6)),
    }
}

fn lab_panel(rng: &mut impl Rng, severity: f64) -> LabPanel {
    let mut panel = LabPanel::default();
    for analyte in Analyte::ALL {
        if !bernoulli(rng, 0.9) {
            continue;
        }
        let (base, shift, sd) = lab_profile(analyte);
        let count = 1 + rng.random_range(0..6usize);
        let points: Vec<(f64, f64)> = (0..count)
            .map(|_| {
                let t = round_to(7.0 * rng.random::<f64>(), 100.0);
                let v = round_to((base + shift * severity + sd * normal(rng)).max(0.0), 100.0);
                (t, v)
            })
            .collect();
        *panel.slot(analyte) = Some(aggregate_series(&points).expect("generated series is valid"));
    }
    panel
}

fn history(rng: &mut impl Rng) -> HistoryDemographics {
    let age_years = (40.0 + 17.0 * normal(rng)).round().clamp(16.0, 90.0) as u32;
    let sex = Some(if bernoulli(rng, 0.7) { Sex::Male } else { Sex::Female });
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let mut race = RACES[RACES.len() - 1].0;
    for (name, p) in RACES {
        acc += p;
        if u < acc {
            race = name;
            break;
        }
    }
    let mut flag = |p: f64| Some(bernoulli(rng, p));
    HistoryDemographics {
        age_years,
        sex,
        race: Some(race.to_string()),
        prior_epilepsy: Some(false),
        prior_seizures: flag(0.05),
        neurodegenerative: flag(0.02),
        prior_neuro_illness: flag(0.08),
        tia_stroke: flag(0.03),
        anticoagulant: flag(0.05),
        antiplatelet: flag(0.08),
    }
}

fn mask_fields(rng: &mut impl Rng, s: &mut Subject, p: f64) {
    let mut drop = || bernoulli(rng, p);
    let g = &mut s.gcs;
    for slot in [
        &mut g.eye_worst,
        &mut g.eye_best,
        &mut g.verbal_worst,
        &mut g.verbal_best,
        &mut g.motor_worst,
        &mut g.motor_best,
    ] {
        if drop() {
            *slot = None;
        }
    }
    if drop() {
        s.course.icu_days = None;
    }
    if drop() {
        s.course.hours_to_surgery = None;
    }
    if drop() {
        s.course.surgery_type = None;
    }
    let ct = &mut s.ct;
    for slot in [
        &mut ct.contusion,
        &mut ct.epidural_hematoma,
        &mut ct.intracerebral_hemorrhage,
        &mut ct.skull_fracture,
        &mut ct.subarachnoid_hemorrhage,
    ] {
        if drop() {
            *slot = TriState::NotReported;
        }
    }
    if drop() {
        ct.marshall_score = None;
    }
    for analyte in Analyte::ALL {
        if drop() {
            *s.labs.slot(analyte) = None;
        }
    }
    let h = &mut s.history;
    if drop() {
        h.sex = None;
    }
    if drop() {
        h.race = None;
    }
    for slot in [
        &mut h.prior_seizures,
        &mut h.neurodegenerative,
        &mut h.prior_neuro_illness,
        &mut h.tia_stroke,
        &mut h.anticoagulant,
        &mut h.antiplatelet,
    ] {
        if drop() {
            *slot = None;
        }
    }
}

/// Draws 2-3 sentences; each comes from the high-risk pool with probability
/// `0.15 + 0.7 * rank`, `rank` being the liability percentile in [0, 1].
fn compose(rng: &mut impl Rng, rank: f64, high: &[&str], low: &[&str]) -> String {
    let count = 2 + rng.random_range(0..2usize);
    let q = 0.15 + 0.7 * rank;
    let mut sentences: Vec<&str> = Vec::with_capacity(count);
    while sentences.len() < count {
        let pool = if bernoulli(rng, q) { high } else { low };
        let s = *pick(rng, pool);
        if !sentences.contains(&s) {
            sentences.push(s);
        }
    }
    sentences.join(" ")
}

/// Generates a deterministic synthetic cohort; see the module docs for the
/// risk model.
pub fn generate_synthetic_cohort(config: &SyntheticConfig) -> Result<Cohort> {
    config.validate()?;
    let n = config.n;
    let width = n.to_string().len().max(4);
    let mut structural = rng_for(config.seed, 0);

    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let severity = normal(&mut structural);
        let mut subject = Subject {
            subject_id: format!("SYN-{:0width$}", i + 1),
            gcs: gcs_record(&mut structural, severity),
            course: hospital_course(&mut structural, severity),
            ct: ct_findings(&mut structural, severity),
            labs: lab_panel(&mut structural, severity),
            history: history(&mut structural),
            imaging: ImagingNotes::default(),
            label: false,
        };
        mask_fields(&mut structural, &mut subject, config.missing_fraction);
        subjects.push(subject);
    }

    let mut noise_rng = rng_for(config.seed, 1);
    let c = &config.coefficients;
    let liability: Vec<f64> = subjects
        .iter()
        .map(|s| {
            let noise = c.noise_scale * logistic_like(&mut noise_rng);
            match config.signal_mode {
                SignalMode::Planted => {
                    let gcs_deficit = 15.0 - s.gcs.total_worst.unwrap_or(15) as f64;
                    let seizure = if s.course.acute_seizure_7d { 1.0 } else { 0.0 };
                    let surgery = if s.course.surgery_performed { 1.0 } else { 0.0 };
                    c.acute_seizure * seizure
                        + c.gcs_deficit * gcs_deficit
                        + c.surgery * surgery
                        + c.icu_days * s.course.icu_days.unwrap_or(0.0)
                        + noise
                }
                // Independent of every structured field.
                SignalMode::TextOnly => 2.5 * normal(&mut noise_rng) + noise,
            }
        })
        .collect();

    // Rank by liability, ties by index; top `positives` are PTE.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| liability[b].total_cmp(&liability[a]).then(a.cmp(&b)));
    let mut rank = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = 1.0 - pos as f64 / (n - 1) as f64;
    }
    for &i in order.iter().take(config.positives()) {
        subjects[i].label = true;
    }

    let mut text_rng = rng_for(config.seed, 2);
    let availability = match config.signal_mode {
        SignalMode::Planted => config.imaging_availability,
        SignalMode::TextOnly => 1.0,
    };
    for (s, &r) in subjects.iter_mut().zip(&rank) {
        if s.course.surgery_performed && bernoulli(&mut text_rng, 0.85) {
            s.course.operative_note =
                Some(compose(&mut text_rng, r, &OPERATIVE_HIGH, &OPERATIVE_LOW));
        }
        if bernoulli(&mut text_rng, availability) {
            s.imaging.ct_report = Some(compose(&mut text_rng, r, &IMAGING_HIGH, &IMAGING_LOW));
            if bernoulli(&mut text_rng, 0.5) {
                s.imaging.mri_report =
                    Some(compose(&mut text_rng, r, &IMAGING_HIGH, &IMAGING_LOW));
            }
        }
    }

    Cohort::new(subjects, Provenance::Synthetic, Some(config.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::write_cohort_jsonl;
    use proptest::prelude::*;

    #[test]
    fn matches_reference_class_counts() {
        let c = generate_synthetic_cohort(&SyntheticConfig::new(7, 256, 58.0 / 256.0)).unwrap();
        assert_eq!(c.class_counts(), (58, 198));
        assert_eq!(c.provenance, Provenance::Synthetic);
        assert_eq!(c.generator_seed, Some(7));
    }

    #[test]
    fn byte_identical_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig::default();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        write_cohort_jsonl(&a, &generate_synthetic_cohort(&cfg).unwrap()).unwrap();
        write_cohort_jsonl(&b, &generate_synthetic_cohort(&cfg).unwrap()).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn rejects_bad_prevalence() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(generate_synthetic_cohort(&SyntheticConfig::new(1, 100, p)).is_err());
        }
        assert!(generate_synthetic_cohort(&SyntheticConfig::new(1, 10, 0.5)).is_err());
        assert!(generate_synthetic_cohort(&SyntheticConfig::new(1, 40, 0.1)).is_err());
    }

    #[test]
    fn imaging_availability_near_forty_percent() {
        let c = generate_synthetic_cohort(&SyntheticConfig::default()).unwrap();
        let with = c.subjects.iter().filter(|s| s.imaging.any_present()).count();
        let frac = with as f64 / c.len() as f64;
        assert!((0.3..0.5).contains(&frac), "{frac}");
    }

    #[test]
    fn text_only_mode_gives_everyone_imaging() {
        let cfg = SyntheticConfig {
            signal_mode: SignalMode::TextOnly,
            ..SyntheticConfig::default()
        };
        let c = generate_synthetic_cohort(&cfg).unwrap();
        assert!(c.subjects.iter().all(|s| s.imaging.ct_report.is_some()));
        assert_eq!(c.class_counts(), (58, 198));
    }

    #[test]
    fn planted_risk_factors_are_enriched_in_positives() {
        let c = generate_synthetic_cohort(&SyntheticConfig::default()).unwrap();
        let rate = |label: bool, f: &dyn Fn(&Subject) -> bool| {
            let group: Vec<_> = c.subjects.iter().filter(|s| s.label == label).collect();
            group.iter().filter(|s| f(s)).count() as f64 / group.len() as f64
        };
        let seizure = |s: &Subject| s.course.acute_seizure_7d;
        let surgery = |s: &Subject| s.course.surgery_performed;
        assert!(rate(true, &seizure) > rate(false, &seizure) + 0.2);
        assert!(rate(true, &surgery) > rate(false, &surgery) + 0.2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn generated_subjects_satisfy_invariants(seed in any::<u64>(), n in 20usize..120) {
            let cfg = SyntheticConfig { seed, n, prevalence: 0.3, missing_fraction: 0.2, ..Default::default() };
            let c = generate_synthetic_cohort(&cfg).unwrap();
            prop_assert_eq!(c.len(), n);
            prop_assert_eq!(c.class_counts().0, cfg.positives());
            for s in &c.subjects {
                prop_assert!(s.validate().is_ok());
                prop_assert_eq!(s.history.prior_epilepsy, Some(false));
            }
        }
    }
}
