use serde::{Deserialize, Serialize};

use crate::cohort::Subject;
use crate::error::{Error, Result};

use super::{auroc, ExperimentRun, MeanStd};

/// Subject predicates used for subgroup analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgroup {
    All,
    AgeAtMost65,
    AgeOver65,
    IcuYes,
    IcuNo,
    SurgeryYes,
    SurgeryNo,
    /// Lowest recorded GCS below 9; subjects without a GCS are excluded.
    GcsBelow9,
    GcsAtLeast9,
    AcuteSeizureYes,
    AcuteSeizureNo,
}

impl Subgroup {
    pub const STANDARD: [Subgroup; 10] = [
        Subgroup::AgeAtMost65,
        Subgroup::AgeOver65,
        Subgroup::IcuYes,
        Subgroup::IcuNo,
        Subgroup::SurgeryYes,
        Subgroup::SurgeryNo,
        Subgroup::GcsBelow9,
        Subgroup::GcsAtLeast9,
        Subgroup::AcuteSeizureYes,
        Subgroup::AcuteSeizureNo,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Subgroup::All => "all",
            Subgroup::AgeAtMost65 => "age <= 65",
            Subgroup::AgeOver65 => "age > 65",
            Subgroup::IcuYes => "icu: yes",
            Subgroup::IcuNo => "icu: no",
            Subgroup::SurgeryYes => "surgery: yes",
            Subgroup::SurgeryNo => "surgery: no",
            Subgroup::GcsBelow9 => "gcs < 9",
            Subgroup::GcsAtLeast9 => "gcs >= 9",
            Subgroup::AcuteSeizureYes => "acute seizure: yes",
            Subgroup::AcuteSeizureNo => "acute seizure: no",
        }
    }

    pub fn matches(self, s: &Subject) -> bool {
        match self {
            Subgroup::All => true,
            Subgroup::AgeAtMost65 => s.history.age_years <= 65,
            Subgroup::AgeOver65 => s.history.age_years > 65,
            Subgroup::IcuYes => s.course.icu_admitted,
            Subgroup::IcuNo => !s.course.icu_admitted,
            Subgroup::SurgeryYes => s.course.surgery_performed,
            Subgroup::SurgeryNo => !s.course.surgery_performed,
            Subgroup::GcsBelow9 => s.min_gcs().is_some_and(|g| g < 9),
            Subgroup::GcsAtLeast9 => s.min_gcs().is_some_and(|g| g >= 9),
            Subgroup::AcuteSeizureYes => s.course.acute_seizure_7d,
            Subgroup::AcuteSeizureNo => !s.course.acute_seizure_7d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub subgroup: Subgroup,
    pub label: String,
    pub n: usize,
    pub n_positive: usize,
    /// `None` when some seed leaves the subgroup with a single class.
    pub auroc: Option<MeanStd>,
}

/// AUROC within each subgroup of out-of-fold predictions pooled across
/// folds, computed per seed and then averaged over seeds.
pub fn subgroup_eval(subjects: &[Subject], run: &ExperimentRun, groups: &[Subgroup]) -> Result<Vec<SubgroupResult>> {
    if run.oof.iter().any(|o| o.len() != subjects.len()) {
        return Err(Error::InvalidParameter("predictions do not match the subject list".into()));
    }
    groups
        .iter()
        .map(|&g| {
            let rows: Vec<usize> = (0..subjects.len()).filter(|&i| g.matches(&subjects[i])).collect();
            let base_labels = &run.labels[0];
            let mut per_seed = Vec::with_capacity(run.oof.len());
            let mut defined = true;
            for (scores, labels) in run.oof.iter().zip(&run.labels) {
                let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
                let y: Vec<bool> = rows.iter().map(|&i| labels[i]).collect();
                match auroc(&s, &y) {
                    Ok(v) => per_seed.push(v),
                    Err(Error::UndefinedMetric(_)) => {
                        defined = false;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(SubgroupResult {
                subgroup: g,
                label: g.label().to_string(),
                n: rows.len(),
                n_positive: rows.iter().filter(|&&i| base_labels[i]).count(),
                auroc: defined.then(|| MeanStd::of(&per_seed)),
            })
        })
        .collect()
}
