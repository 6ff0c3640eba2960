//! Renders each clinical aspect of a [`Subject`] as a templated paragraph.
//!
//! Every paragraph starts with a fixed context tag followed by `": "`, and
//! absent entries are spelled with the missingness token [`MISSING_TOKEN`].
//! Free-text notes pass through with whitespace collapsed to single spaces.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{Analyte, Sex, Subject, TriState};
use crate::error::{Error, Result};
use crate::util::write_atomic;

pub const MISSING_TOKEN: &str = "NOT_REPORTED";

/// Context tag of the concatenated single-paragraph variant.
pub const COMBINED_TAG: &str = "Combined Clinical Record";

/// The six clinical aspects, in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectId {
    Gcs,
    HospitalCourse,
    CtFindings,
    ImagingNotes,
    Labs,
    HistoryDemographics,
}

impl AspectId {
    pub const ALL: [AspectId; 6] = [
        AspectId::Gcs,
        AspectId::HospitalCourse,
        AspectId::CtFindings,
        AspectId::ImagingNotes,
        AspectId::Labs,
        AspectId::HistoryDemographics,
    ];

    pub fn context_tag(self) -> &'static str {
        match self {
            AspectId::Gcs => "Neurological Exam (GCS)",
            AspectId::HospitalCourse => "Hospital Course",
            AspectId::CtFindings => "Radiology Report (CT)",
            AspectId::ImagingNotes => "Radiology Report (Brain)",
            AspectId::Labs => "Laboratory results",
            AspectId::HistoryDemographics => "Patient Demographics",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AspectId::Gcs => "gcs",
            AspectId::HospitalCourse => "hospital_course",
            AspectId::CtFindings => "ct_findings",
            AspectId::ImagingNotes => "imaging_notes",
            AspectId::Labs => "labs",
            AspectId::HistoryDemographics => "history_demographics",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AspectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AspectId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AspectId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown aspect {s:?}")))
    }
}

/// Which text a paragraph (and its embedding) covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParagraphKey {
    Aspect(AspectId),
    /// All six aspects joined into one paragraph.
    Combined,
}

impl ParagraphKey {
    pub fn as_str(self) -> &'static str {
        match self {
            ParagraphKey::Aspect(a) => a.as_str(),
            ParagraphKey::Combined => "combined",
        }
    }
}

impl fmt::Display for ParagraphKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParagraphKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "combined" {
            Ok(ParagraphKey::Combined)
        } else {
            s.parse().map(ParagraphKey::Aspect)
        }
    }
}

impl Serialize for ParagraphKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ParagraphKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<AspectId> for ParagraphKey {
    fn from(a: AspectId) -> Self {
        ParagraphKey::Aspect(a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectParagraph {
    pub aspect: ParagraphKey,
    pub context_tag: String,
    pub text: String,
}

impl AspectParagraph {
    fn new(aspect: ParagraphKey, context_tag: &str, body: &str) -> Self {
        AspectParagraph {
            aspect,
            context_tag: context_tag.to_string(),
            text: format!("{context_tag}: {body}"),
        }
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One decimal, used for durations (days, hours).
fn fmt_duration(x: f64) -> String {
    format!("{:.1}", x + 0.0)
}

/// Lab values and lab times: two decimals, with one trailing zero dropped
/// below magnitude 10 (`23.70`, `61.01`, `1.7`, `0.2`, `0.0`).
fn fmt_lab(x: f64) -> String {
    let rounded = (x * 100.0).round() / 100.0 + 0.0;
    let s = format!("{rounded:.2}");
    if rounded.abs() < 10.0 && s.ends_with('0') {
        s[..s.len() - 1].to_string()
    } else {
        s
    }
}

fn opt_score(v: Option<u8>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| MISSING_TOKEN.into())
}

/// Qualitative descriptor for a GCS total, where one is defined.
fn gcs_descriptor(total: u8) -> Option<&'static str> {
    match total {
        3 => Some("Deep Coma"),
        _ => None,
    }
}

fn gcs_body(s: &Subject) -> String {
    let g = &s.gcs;
    let all = [
        g.total_worst,
        g.total_best,
        g.eye_worst,
        g.eye_best,
        g.verbal_worst,
        g.verbal_best,
        g.motor_worst,
        g.motor_best,
    ];
    if all.iter().all(Option::is_none) {
        return format!("{MISSING_TOKEN}.");
    }
    let worst = match g.total_worst {
        Some(t) => match gcs_descriptor(t) {
            Some(d) => format!("{t}-{d}"),
            None => t.to_string(),
        },
        None => MISSING_TOKEN.into(),
    };
    format!(
        "Worst Total {worst}, Best {}. Components (Worst-Best): Eye {}-{}, Motor {}-{}, Verbal {}-{}.",
        opt_score(g.total_best),
        opt_score(g.eye_worst),
        opt_score(g.eye_best),
        opt_score(g.motor_worst),
        opt_score(g.motor_best),
        opt_score(g.verbal_worst),
        opt_score(g.verbal_best),
    )
}

fn course_body(s: &Subject) -> String {
    let c = &s.course;
    let mut parts = Vec::new();
    parts.push(match (c.icu_admitted, c.icu_days) {
        (true, Some(d)) => format!("ICU stay {} days.", fmt_duration(d)),
        (true, None) => format!("ICU stay {MISSING_TOKEN}."),
        (false, _) => "No ICU admission.".to_string(),
    });
    if c.surgery_performed {
        let kind = c
            .surgery_type
            .as_deref()
            .map(collapse_whitespace)
            .unwrap_or_else(|| MISSING_TOKEN.into());
        parts.push(format!("Cranial surgery performed ({kind})."));
        parts.push(match c.hours_to_surgery {
            Some(h) => format!("Time to surgery {} hours.", fmt_duration(h)),
            None => format!("Time to surgery {MISSING_TOKEN}."),
        });
    } else {
        parts.push("No cranial surgery.".to_string());
    }
    parts.push(if c.acute_seizure_7d {
        "Had seizure within 7 days of injury.".to_string()
    } else {
        "No seizure within 7 days of injury.".to_string()
    });
    if let Some(note) = c.operative_note.as_deref() {
        let note = collapse_whitespace(note);
        if !note.is_empty() {
            parts.push(format!("Operative note: {note}"));
        }
    }
    parts.join(" ")
}

fn ct_body(s: &Subject) -> String {
    let findings = s.ct.findings();
    let names = |state: TriState| -> Vec<&str> {
        findings
            .iter()
            .filter(|(_, t)| *t == state)
            .map(|(n, _)| *n)
            .collect()
    };
    let present = names(TriState::Present);
    let absent = names(TriState::Absent);
    let indeterminate = names(TriState::Indeterminate);
    let unreported = names(TriState::NotReported);

    let mut parts = Vec::new();
    if unreported.len() == findings.len() {
        parts.push(format!("Findings: {MISSING_TOKEN}."));
    } else {
        if present.is_empty() {
            parts.push("Findings: None.".to_string());
        } else {
            parts.push(format!("Findings: {}.", present.join(", ")));
        }
        if !absent.is_empty() {
            parts.push(format!("Absent: {}.", absent.join(", ")));
        }
        if !indeterminate.is_empty() {
            parts.push(format!("Indeterminate: {}.", indeterminate.join(", ")));
        }
        if !unreported.is_empty() {
            parts.push(format!("{MISSING_TOKEN}: {}.", unreported.join(", ")));
        }
    }
    if let Some(m) = s.ct.marshall_score {
        parts.push(format!("Marshall score {m}."));
    }
    parts.join(" ")
}

fn imaging_body(s: &Subject) -> String {
    let notes: Vec<String> = [&s.imaging.ct_report, &s.imaging.mri_report]
        .into_iter()
        .flatten()
        .map(|n| collapse_whitespace(n))
        .filter(|n| !n.is_empty())
        .collect();
    if notes.is_empty() {
        format!("{MISSING_TOKEN}.")
    } else {
        notes.join(" ")
    }
}

/// Order in which analytes appear in the lab paragraph.
const LAB_TEXT_ORDER: [Analyte; 4] = [
    Analyte::Creatinine,
    Analyte::Hemoglobin,
    Analyte::Lactate,
    Analyte::Paco2,
];

fn labs_body(s: &Subject) -> String {
    if Analyte::ALL.iter().all(|&a| s.labs.get(a).is_none()) {
        return format!("{MISSING_TOKEN}.");
    }
    LAB_TEXT_ORDER
        .iter()
        .map(|&a| match s.labs.get(a) {
            Some(x) => format!(
                "{} max value {} occurred {} days after injury, last measurement {}, std is {}.",
                a.display(),
                fmt_lab(x.max),
                fmt_lab(x.time_of_max),
                fmt_lab(x.last),
                fmt_lab(x.std)
            ),
            None => format!("{} {MISSING_TOKEN}.", a.display()),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn history_body(s: &Subject) -> String {
    let h = &s.history;
    let race = h
        .race
        .as_deref()
        .map(collapse_whitespace)
        .unwrap_or_else(|| format!("race {MISSING_TOKEN}"));
    let sex = h
        .sex
        .map(|x| match x {
            Sex::Female => "female".to_string(),
            Sex::Male => "male".to_string(),
        })
        .unwrap_or_else(|| format!("sex {MISSING_TOKEN}"));
    let demographics = format!("{}-year-old {race} {sex}.", h.age_years);

    let items = [
        ("prior epilepsy", h.prior_epilepsy),
        ("prior seizures", h.prior_seizures),
        ("neurodegenerative disease", h.neurodegenerative),
        ("prior neurological illness", h.prior_neuro_illness),
        ("TIA or stroke", h.tia_stroke),
        ("anticoagulant use", h.anticoagulant),
        ("antiplatelet use", h.antiplatelet),
    ];
    let positive: Vec<&str> = items.iter().filter(|(_, v)| *v == Some(true)).map(|(n, _)| *n).collect();
    let missing: Vec<&str> = items.iter().filter(|(_, v)| v.is_none()).map(|(n, _)| *n).collect();

    let history = if missing.len() == items.len() {
        format!("{MISSING_TOKEN}.")
    } else {
        let mut text = if !positive.is_empty() {
            format!("History of {}.", positive.join(", "))
        } else if missing.is_empty() {
            "No neurological history or anticoagulant/antiplatelet use.".to_string()
        } else {
            "No reported neurological history or anticoagulant/antiplatelet use.".to_string()
        };
        if !missing.is_empty() {
            text.push_str(&format!(" {MISSING_TOKEN}: {}.", missing.join(", ")));
        }
        text
    };
    format!("{demographics} Medical History: {history}")
}

/// Renders one aspect of a subject.
pub fn serialize_aspect(subject: &Subject, aspect: AspectId) -> AspectParagraph {
    let body = match aspect {
        AspectId::Gcs => gcs_body(subject),
        AspectId::HospitalCourse => course_body(subject),
        AspectId::CtFindings => ct_body(subject),
        AspectId::ImagingNotes => imaging_body(subject),
        AspectId::Labs => labs_body(subject),
        AspectId::HistoryDemographics => history_body(subject),
    };
    AspectParagraph::new(aspect.into(), aspect.context_tag(), &body)
}

/// All six aspect paragraphs in [`AspectId::ALL`] order.
pub fn serialize_all(subject: &Subject) -> Vec<AspectParagraph> {
    AspectId::ALL
        .iter()
        .map(|&a| serialize_aspect(subject, a))
        .collect()
}

/// Joins the six aspect paragraphs, in aspect order, into one paragraph
/// tagged [`COMBINED_TAG`].
pub fn concatenate_paragraphs(paragraphs: &[AspectParagraph]) -> Result<AspectParagraph> {
    if paragraphs.len() != AspectId::ALL.len() {
        return Err(Error::InvalidParagraphs(format!(
            "expected {} paragraphs, got {}",
            AspectId::ALL.len(),
            paragraphs.len()
        )));
    }
    let mut slots: [Option<&AspectParagraph>; 6] = [None; 6];
    for p in paragraphs {
        let ParagraphKey::Aspect(a) = p.aspect else {
            return Err(Error::InvalidParagraphs("combined paragraph given as input".into()));
        };
        if slots[a.index()].replace(p).is_some() {
            return Err(Error::InvalidParagraphs(format!("duplicate aspect {a}")));
        }
    }
    let body = slots
        .iter()
        .map(|p| p.expect("six distinct aspects").text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(AspectParagraph::new(ParagraphKey::Combined, COMBINED_TAG, &body))
}

/// A row of the paragraph export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphRecord {
    pub subject_id: String,
    pub aspect: ParagraphKey,
    pub context_tag: String,
    pub text: String,
}

/// Writes one JSON record per (subject, paragraph).
pub fn write_paragraphs(path: &Path, records: &[ParagraphRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

pub fn read_paragraphs(path: &Path) -> Result<Vec<ParagraphRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row: i + 1,
            column: "record".into(),
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Paragraph records for every subject, six per subject, plus the
/// concatenated variant when `include_combined` is set.
pub fn paragraph_records(subjects: &[Subject], include_combined: bool) -> Vec<ParagraphRecord> {
    let mut out = Vec::with_capacity(subjects.len() * 7);
    for s in subjects {
        let paragraphs = serialize_all(s);
        if include_combined {
            let combined = concatenate_paragraphs(&paragraphs).expect("six aspects");
            out.extend(paragraphs.into_iter().chain([combined]).map(|p| ParagraphRecord {
                subject_id: s.subject_id.clone(),
                aspect: p.aspect,
                context_tag: p.context_tag,
                text: p.text,
            }));
        } else {
            out.extend(paragraphs.into_iter().map(|p| ParagraphRecord {
                subject_id: s.subject_id.clone(),
                aspect: p.aspect,
                context_tag: p.context_tag,
                text: p.text,
            }));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic_cohort, SyntheticConfig};
    use proptest::prelude::*;

    #[test]
    fn lab_number_format() {
        let cases = [
            (61.01, "61.01"),
            (0.02, "0.02"),
            (0.0, "0.0"),
            (23.70, "23.70"),
            (7.14, "7.14"),
            (0.2, "0.2"),
            (5.15, "5.15"),
            (2.92, "2.92"),
            (4.79, "4.79"),
            (1.7, "1.7"),
            (-0.0, "0.0"),
            (10.5, "10.50"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_lab(x), want, "{x}");
        }
    }

    #[test]
    fn all_ct_unreported() {
        let s = Subject::blank("a", false);
        assert_eq!(
            serialize_aspect(&s, AspectId::CtFindings).text,
            "Radiology Report (CT): Findings: NOT_REPORTED."
        );
    }

    #[test]
    fn indeterminate_findings_get_their_own_clause() {
        let mut s = Subject::blank("a", false);
        s.ct.contusion = TriState::Indeterminate;
        s.ct.skull_fracture = TriState::Absent;
        s.ct.marshall_score = Some(2);
        assert_eq!(
            serialize_aspect(&s, AspectId::CtFindings).text,
            "Radiology Report (CT): Findings: None. Absent: Skull Fracture. Indeterminate: Contusion. \
             NOT_REPORTED: Epidural Hematoma, Intracerebral Hemorrhage, Subarachnoid Hemorrhage. Marshall score 2."
        );
    }

    #[test]
    fn missing_imaging_is_reported() {
        let s = Subject::blank("a", false);
        let all = serialize_all(&s);
        assert_eq!(all.len(), 6);
        assert!(all[AspectId::ImagingNotes.index()].text.contains(MISSING_TOKEN));
    }

    #[test]
    fn operative_note_appended_verbatim() {
        let mut s = Subject::blank("a", false);
        s.course.surgery_performed = true;
        s.course.operative_note = Some("Dura  opened.\nClot removed.".into());
        let text = serialize_aspect(&s, AspectId::HospitalCourse).text;
        assert_eq!(
            text,
            "Hospital Course: No ICU admission. Cranial surgery performed (NOT_REPORTED). \
             Time to surgery NOT_REPORTED. No seizure within 7 days of injury. Operative note: Dura opened. Clot removed."
        );
    }

    #[test]
    fn concatenation_lengths_and_errors() {
        let c = generate_synthetic_cohort(&SyntheticConfig::default()).unwrap();
        let ps = serialize_all(&c.subjects[0]);
        let combined = concatenate_paragraphs(&ps).unwrap();
        let total: usize = ps.iter().map(|p| p.text.len()).sum();
        assert_eq!(combined.text.len(), total + 5 + COMBINED_TAG.len() + 2);
        assert_eq!(combined.context_tag, COMBINED_TAG);
        assert_eq!(concatenate_paragraphs(&ps).unwrap(), combined);

        let mut reversed = ps.clone();
        reversed.reverse();
        assert_eq!(concatenate_paragraphs(&reversed).unwrap(), combined);

        assert!(concatenate_paragraphs(&ps[..5]).is_err());
        let mut dup = ps.clone();
        dup[1] = dup[0].clone();
        assert!(concatenate_paragraphs(&dup).is_err());
    }

    #[test]
    fn history_variants() {
        let mut s = Subject::blank("a", false);
        s.history.age_years = 70;
        s.history.sex = Some(Sex::Male);
        s.history.race = Some("Black".into());
        assert_eq!(
            serialize_aspect(&s, AspectId::HistoryDemographics).text,
            "Patient Demographics: 70-year-old Black male. Medical History: NOT_REPORTED."
        );
        s.history.anticoagulant = Some(true);
        s.history.prior_seizures = Some(false);
        let text = serialize_aspect(&s, AspectId::HistoryDemographics).text;
        assert!(text.contains("History of anticoagulant use."), "{text}");
        assert!(text.contains("NOT_REPORTED: prior epilepsy, neurodegenerative disease"), "{text}");
    }

    fn arb_subject() -> impl Strategy<Value = Subject> {
        let tri = prop_oneof![
            Just(TriState::Present),
            Just(TriState::Absent),
            Just(TriState::Indeterminate),
            Just(TriState::NotReported)
        ];
        (
            prop::option::of(3u8..=15),
            prop::option::of(0.0f64..40.0),
            any::<bool>(),
            prop::collection::vec(tri, 5),
            prop::option::of(0u32..100),
            prop::option::of(any::<bool>()),
        )
            .prop_map(|(gcs, icu, seizure, ct, age, anticoag)| {
                let mut s = Subject::blank("p", false);
                s.gcs.total_worst = gcs;
                s.gcs.total_best = gcs;
                s.course.icu_admitted = icu.is_some();
                s.course.icu_days = icu;
                s.course.acute_seizure_7d = seizure;
                s.ct.contusion = ct[0];
                s.ct.epidural_hematoma = ct[1];
                s.ct.intracerebral_hemorrhage = ct[2];
                s.ct.skull_fracture = ct[3];
                s.ct.subarachnoid_hemorrhage = ct[4];
                s.history.age_years = age.unwrap_or(40);
                s.history.anticoagulant = anticoag;
                s
            })
    }

    proptest! {
        #[test]
        fn paragraphs_are_well_formed(s in arb_subject()) {
            for p in serialize_all(&s) {
                let prefix = format!("{}: ", p.context_tag);
                prop_assert!(p.text.starts_with(&prefix));
                prop_assert!(!p.text.contains('\n'));
                prop_assert!(!p.text.contains("  "));
                prop_assert!(!p.text.contains("()"));
                prop_assert!(!p.text.ends_with(": "));
            }
            prop_assert_eq!(serialize_all(&s), serialize_all(&s.clone()));
        }

        #[test]
        fn rendered_fields_are_injective(a in arb_subject(), b in arb_subject()) {
            for aspect in [AspectId::Gcs, AspectId::HospitalCourse, AspectId::CtFindings, AspectId::HistoryDemographics] {
                let same_fields = match aspect {
                    AspectId::Gcs => a.gcs == b.gcs,
                    AspectId::HospitalCourse => {
                        a.course.icu_admitted == b.course.icu_admitted
                            && a.course.icu_days.map(fmt_duration) == b.course.icu_days.map(fmt_duration)
                            && a.course.acute_seizure_7d == b.course.acute_seizure_7d
                    }
                    AspectId::CtFindings => a.ct == b.ct,
                    _ => a.history == b.history,
                };
                let same_text = serialize_aspect(&a, aspect) == serialize_aspect(&b, aspect);
                prop_assert_eq!(same_fields, same_text, "aspect {}", aspect);
            }
        }
    }
}
