use serde::{Deserialize, Serialize};

use super::{
    Cohort, CtFindings, GcsRecord, HistoryDemographics, HospitalCourse, ImagingNotes, LabPanel,
    Provenance, Subject,
};

/// Raw post-injury epilepsy diagnosis as recorded during follow-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Yes,
    No,
    Indeterminate,
    #[serde(alias = "NOT_REPORTED")]
    NotReported,
}

impl Outcome {
    pub fn parse_cell(cell: &str) -> Option<Outcome> {
        match cell.trim().to_ascii_lowercase().as_str() {
            "yes" | "true" | "1" | "pte" => Some(Outcome::Yes),
            "no" | "false" | "0" | "non-pte" => Some(Outcome::No),
            "indeterminate" => Some(Outcome::Indeterminate),
            "" | "not_reported" => Some(Outcome::NotReported),
            _ => None,
        }
    }

    pub fn as_cell(self) -> &'static str {
        match self {
            Outcome::Yes => "yes",
            Outcome::No => "no",
            Outcome::Indeterminate => "indeterminate",
            Outcome::NotReported => "NOT_REPORTED",
        }
    }

    pub fn definite(self) -> Option<bool> {
        match self {
            Outcome::Yes => Some(true),
            Outcome::No => Some(false),
            _ => None,
        }
    }
}

/// One line of the structured-records format: a [`Subject`] with its raw
/// outcome in place of the resolved label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    #[serde(default)]
    pub gcs: GcsRecord,
    pub course: HospitalCourse,
    #[serde(default)]
    pub ct: CtFindings,
    #[serde(default)]
    pub labs: LabPanel,
    pub history: HistoryDemographics,
    #[serde(default)]
    pub imaging: ImagingNotes,
    pub pte_outcome: Outcome,
}

impl SubjectRecord {
    pub fn into_subject(self, label: bool) -> Subject {
        Subject {
            subject_id: self.subject_id,
            gcs: self.gcs,
            course: self.course,
            ct: self.ct,
            labs: self.labs,
            history: self.history,
            imaging: self.imaging,
            label,
        }
    }
}

impl From<&Subject> for SubjectRecord {
    fn from(s: &Subject) -> Self {
        SubjectRecord {
            subject_id: s.subject_id.clone(),
            gcs: s.gcs.clone(),
            course: s.course.clone(),
            ct: s.ct.clone(),
            labs: s.labs.clone(),
            history: s.history.clone(),
            imaging: s.imaging.clone(),
            pte_outcome: if s.label { Outcome::Yes } else { Outcome::No },
        }
    }
}

/// Records as loaded, before inclusion criteria are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCohort {
    pub records: Vec<SubjectRecord>,
    pub provenance: Provenance,
    pub generator_seed: Option<u64>,
}

impl From<&Cohort> for RawCohort {
    fn from(c: &Cohort) -> Self {
        RawCohort {
            records: c.subjects.iter().map(SubjectRecord::from).collect(),
            provenance: c.provenance,
            generator_seed: c.generator_seed,
        }
    }
}

/// Keeps subjects with no prior epilepsy and a definite outcome, in order.
///
/// A missing `prior_epilepsy` entry does not establish the absence of prior
/// epilepsy and is excluded as well.
pub fn apply_inclusion(raw: RawCohort) -> Cohort {
    let subjects = raw
        .records
        .into_iter()
        .filter(|r| r.history.prior_epilepsy == Some(false))
        .filter_map(|r| {
            let label = r.pte_outcome.definite()?;
            Some(r.into_subject(label))
        })
        .collect();
    Cohort {
        subjects,
        provenance: raw.provenance,
        generator_seed: raw.generator_seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, prior: Option<bool>, outcome: Outcome) -> SubjectRecord {
        let mut r = SubjectRecord::from(&Subject::blank(id, false));
        r.history.prior_epilepsy = prior;
        r.pte_outcome = outcome;
        r
    }

    fn raw(records: Vec<SubjectRecord>) -> RawCohort {
        RawCohort {
            records,
            provenance: Provenance::Ingested,
            generator_seed: None,
        }
    }

    #[test]
    fn prior_epilepsy_excluded() {
        let c = apply_inclusion(raw(vec![record("a", Some(true), Outcome::Yes)]));
        assert!(c.is_empty());
    }

    #[test]
    fn unreported_or_indeterminate_outcome_excluded() {
        let c = apply_inclusion(raw(vec![
            record("a", Some(false), Outcome::NotReported),
            record("b", Some(false), Outcome::Indeterminate),
        ]));
        assert!(c.is_empty());
    }

    #[test]
    fn definite_negative_retained() {
        let c = apply_inclusion(raw(vec![
            record("a", Some(false), Outcome::No),
            record("b", None, Outcome::Yes),
            record("c", Some(false), Outcome::Yes),
        ]));
        let ids: Vec<_> = c.subjects.iter().map(|s| (s.subject_id.as_str(), s.label)).collect();
        assert_eq!(ids, vec![("a", false), ("c", true)]);
    }

    #[test]
    fn idempotent() {
        let once = apply_inclusion(raw(vec![
            record("a", Some(false), Outcome::No),
            record("b", Some(true), Outcome::Yes),
            record("c", Some(false), Outcome::Yes),
            record("d", Some(false), Outcome::Indeterminate),
        ]));
        let twice = apply_inclusion(RawCohort::from(&once));
        assert_eq!(once, twice);
    }
}
