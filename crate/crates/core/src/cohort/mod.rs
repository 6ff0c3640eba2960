//! Clinical data model, ingestion, inclusion filtering and synthetic cohorts.
//!
//! A [`Subject`] holds one patient's acute record grouped into the six
//! clinical aspects used throughout the pipeline, plus the binary outcome.
//! Real data enters through [`load_cohort`] (flattened CSV table or JSON
//! lines) and passes through [`apply_inclusion`]; synthetic cohorts come from
//! [`generate_synthetic_cohort`].

mod inclusion;
mod io;
mod series;
mod synth;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inclusion::{apply_inclusion, Outcome, RawCohort, SubjectRecord};
pub use io::{
    load_cohort, load_lab_table, load_raw_cohort, merge_lab_table, write_cohort, write_cohort_csv,
    write_cohort_jsonl, CohortFormat, COHORT_CSV_COLUMNS,
};
pub use series::aggregate_series;
pub use synth::{generate_synthetic_cohort, RiskCoefficients, SignalMode, SyntheticConfig};

/// Three-valued CT finding plus an explicit "not reported" state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TriState {
    Present,
    Absent,
    Indeterminate,
    #[default]
    #[serde(alias = "NOT_REPORTED")]
    NotReported,
}

impl TriState {
    /// Parses a table cell. Empty cells and the missingness token map to
    /// [`TriState::NotReported`].
    pub fn parse_cell(cell: &str) -> Option<TriState> {
        match cell.trim().to_ascii_lowercase().as_str() {
            "" | "not_reported" => Some(TriState::NotReported),
            "present" | "yes" | "1" => Some(TriState::Present),
            "absent" | "no" | "0" => Some(TriState::Absent),
            "indeterminate" => Some(TriState::Indeterminate),
            _ => None,
        }
    }

    pub fn as_cell(self) -> &'static str {
        match self {
            TriState::Present => "present",
            TriState::Absent => "absent",
            TriState::Indeterminate => "indeterminate",
            TriState::NotReported => "NOT_REPORTED",
        }
    }
}

/// Summary statistics of a repeated measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub first: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Days after injury of the first occurrence of the maximum.
    pub time_of_max: f64,
}

impl SeriesSummary {
    pub fn check(&self) -> std::result::Result<(), String> {
        let fields = [
            self.first,
            self.last,
            self.min,
            self.max,
            self.mean,
            self.std,
            self.time_of_max,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err("non-finite summary field".into());
        }
        if !(self.min <= self.mean && self.mean <= self.max) {
            return Err(format!(
                "mean {} outside [{}, {}]",
                self.mean, self.min, self.max
            ));
        }
        for (name, v) in [("first", self.first), ("last", self.last)] {
            if v < self.min || v > self.max {
                return Err(format!("{name} {v} outside [{}, {}]", self.min, self.max));
            }
        }
        if self.std < 0.0 {
            return Err("negative std".into());
        }
        if self.time_of_max < 0.0 {
            return Err("negative time_of_max".into());
        }
        Ok(())
    }
}

/// Glasgow Coma Scale worst/best totals and components.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GcsRecord {
    pub total_worst: Option<u8>,
    pub total_best: Option<u8>,
    pub eye_worst: Option<u8>,
    pub eye_best: Option<u8>,
    pub verbal_worst: Option<u8>,
    pub verbal_best: Option<u8>,
    pub motor_worst: Option<u8>,
    pub motor_best: Option<u8>,
}

impl GcsRecord {
    fn check(&self) -> std::result::Result<(), String> {
        let pairs = [
            ("total", self.total_worst, self.total_best, 3, 15),
            ("eye", self.eye_worst, self.eye_best, 1, 4),
            ("verbal", self.verbal_worst, self.verbal_best, 1, 5),
            ("motor", self.motor_worst, self.motor_best, 1, 6),
        ];
        for (name, worst, best, lo, hi) in pairs {
            for v in [worst, best].into_iter().flatten() {
                if v < lo || v > hi {
                    return Err(format!("gcs {name} {v} outside {lo}-{hi}"));
                }
            }
            if let (Some(w), Some(b)) = (worst, best) {
                if w > b {
                    return Err(format!("gcs {name} worst {w} exceeds best {b}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HospitalCourse {
    pub icu_admitted: bool,
    pub icu_days: Option<f64>,
    pub surgery_performed: bool,
    pub surgery_type: Option<String>,
    pub hours_to_surgery: Option<f64>,
    pub acute_seizure_7d: bool,
    pub operative_note: Option<String>,
}

impl HospitalCourse {
    fn check(&self) -> std::result::Result<(), String> {
        if let Some(d) = self.icu_days {
            if !d.is_finite() || d < 0.0 {
                return Err(format!("icu_days {d} invalid"));
            }
            if !self.icu_admitted {
                return Err("icu_days present without ICU admission".into());
            }
        }
        if let Some(h) = self.hours_to_surgery {
            if !h.is_finite() || h < 0.0 {
                return Err(format!("hours_to_surgery {h} invalid"));
            }
        }
        if (self.hours_to_surgery.is_some() || self.surgery_type.is_some())
            && !self.surgery_performed
        {
            return Err("surgery details present without surgery".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CtFindings {
    pub contusion: TriState,
    pub epidural_hematoma: TriState,
    pub intracerebral_hemorrhage: TriState,
    pub skull_fracture: TriState,
    pub subarachnoid_hemorrhage: TriState,
    pub marshall_score: Option<u8>,
}

impl CtFindings {
    /// Findings in fixed order with their display names.
    pub fn findings(&self) -> [(&'static str, TriState); 5] {
        [
            ("Contusion", self.contusion),
            ("Epidural Hematoma", self.epidural_hematoma),
            ("Intracerebral Hemorrhage", self.intracerebral_hemorrhage),
            ("Skull Fracture", self.skull_fracture),
            ("Subarachnoid Hemorrhage", self.subarachnoid_hemorrhage),
        ]
    }

    fn check(&self) -> std::result::Result<(), String> {
        match self.marshall_score {
            Some(m) if !(1..=6).contains(&m) => Err(format!("marshall score {m} outside 1-6")),
            _ => Ok(()),
        }
    }
}

/// The four tracked analytes, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analyte {
    Creatinine,
    Lactate,
    Hemoglobin,
    Paco2,
}

impl Analyte {
    pub const ALL: [Analyte; 4] = [
        Analyte::Creatinine,
        Analyte::Lactate,
        Analyte::Hemoglobin,
        Analyte::Paco2,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Analyte::Creatinine => "creatinine",
            Analyte::Lactate => "lactate",
            Analyte::Hemoglobin => "hemoglobin",
            Analyte::Paco2 => "paco2",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            Analyte::Creatinine => "Creatinine",
            Analyte::Lactate => "Lactate",
            Analyte::Hemoglobin => "Hemoglobin",
            Analyte::Paco2 => "PaCO2",
        }
    }

    pub fn parse(s: &str) -> Option<Analyte> {
        Analyte::ALL
            .into_iter()
            .find(|a| a.key().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabPanel {
    pub creatinine: Option<SeriesSummary>,
    pub lactate: Option<SeriesSummary>,
    pub hemoglobin: Option<SeriesSummary>,
    pub paco2: Option<SeriesSummary>,
}

impl LabPanel {
    pub fn get(&self, analyte: Analyte) -> Option<&SeriesSummary> {
        match analyte {
            Analyte::Creatinine => self.creatinine.as_ref(),
            Analyte::Lactate => self.lactate.as_ref(),
            Analyte::Hemoglobin => self.hemoglobin.as_ref(),
            Analyte::Paco2 => self.paco2.as_ref(),
        }
    }

    pub fn slot(&mut self, analyte: Analyte) -> &mut Option<SeriesSummary> {
        match analyte {
            Analyte::Creatinine => &mut self.creatinine,
            Analyte::Lactate => &mut self.lactate,
            Analyte::Hemoglobin => &mut self.hemoglobin,
            Analyte::Paco2 => &mut self.paco2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn parse(s: &str) -> Option<Sex> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Some(Sex::Female),
            "m" | "male" => Some(Sex::Male),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryDemographics {
    pub age_years: u32,
    pub sex: Option<Sex>,
    pub race: Option<String>,
    pub prior_epilepsy: Option<bool>,
    pub prior_seizures: Option<bool>,
    pub neurodegenerative: Option<bool>,
    pub prior_neuro_illness: Option<bool>,
    pub tia_stroke: Option<bool>,
    pub anticoagulant: Option<bool>,
    pub antiplatelet: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImagingNotes {
    pub ct_report: Option<String>,
    pub mri_report: Option<String>,
}

impl ImagingNotes {
    pub fn any_present(&self) -> bool {
        self.ct_report.is_some() || self.mri_report.is_some()
    }
}

/// One patient's acute clinical record and outcome (`label = true` for PTE).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub gcs: GcsRecord,
    pub course: HospitalCourse,
    pub ct: CtFindings,
    pub labs: LabPanel,
    pub history: HistoryDemographics,
    pub imaging: ImagingNotes,
    pub label: bool,
}

impl Subject {
    /// An otherwise empty record with every optional field missing.
    pub fn blank(subject_id: impl Into<String>, label: bool) -> Subject {
        Subject {
            subject_id: subject_id.into(),
            gcs: GcsRecord::default(),
            course: HospitalCourse::default(),
            ct: CtFindings::default(),
            labs: LabPanel::default(),
            history: HistoryDemographics::default(),
            imaging: ImagingNotes::default(),
            label,
        }
    }

    /// Checks every field-level invariant of the data model.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidSubject {
            subject_id: self.subject_id.clone(),
            reason,
        };
        if self.subject_id.trim().is_empty() {
            return Err(fail("empty subject_id".into()));
        }
        self.gcs.check().map_err(fail)?;
        self.course.check().map_err(fail)?;
        self.ct.check().map_err(fail)?;
        for analyte in Analyte::ALL {
            if let Some(s) = self.labs.get(analyte) {
                s.check()
                    .map_err(|e| fail(format!("{}: {e}", analyte.key())))?;
            }
        }
        Ok(())
    }

    /// Lowest recorded GCS total, if any.
    pub fn min_gcs(&self) -> Option<u8> {
        match (self.gcs.total_worst, self.gcs.total_best) {
            (Some(w), Some(b)) => Some(w.min(b)),
            (w, b) => w.or(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ingested,
    Synthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Ingested => f.write_str("ingested"),
            Provenance::Synthetic => f.write_str("synthetic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    pub provenance: Provenance,
    pub generator_seed: Option<u64>,
}

impl Cohort {
    /// Builds a cohort after checking subject invariants and id uniqueness.
    pub fn new(
        subjects: Vec<Subject>,
        provenance: Provenance,
        generator_seed: Option<u64>,
    ) -> Result<Cohort> {
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            s.validate()?;
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::DuplicateSubject(s.subject_id.clone()));
            }
        }
        Ok(Cohort {
            subjects,
            provenance,
            generator_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    /// (positives, negatives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.subjects.iter().filter(|s| s.label).count();
        (pos, self.subjects.len() - pos)
    }

    /// Fails unless the cohort is non-empty and both classes are present.
    pub fn ensure_trainable(&self) -> Result<()> {
        let (pos, neg) = self.class_counts();
        if pos == 0 || neg == 0 {
            return Err(Error::InvalidCohort(format!(
                "both classes required, got {pos} positive / {neg} negative"
            )));
        }
        Ok(())
    }

    /// Subset keeping cohort order.
    pub fn filter(&self, mut keep: impl FnMut(&Subject) -> bool) -> Cohort {
        Cohort {
            subjects: self.subjects.iter().filter(|s| keep(s)).cloned().collect(),
            provenance: self.provenance,
            generator_seed: self.generator_seed,
        }
    }
}
