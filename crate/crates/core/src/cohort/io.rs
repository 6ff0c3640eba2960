use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::write_atomic;

use super::{
    aggregate_series, apply_inclusion, Analyte, Cohort, Outcome, Provenance, RawCohort,
    SeriesSummary, Sex, Subject, SubjectRecord, TriState,
};

/// On-disk cohort layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CohortFormat {
    /// Comma-separated table, UTF-8, header row, one subject per row.
    DelimitedTable,
    /// One JSON object per line mirroring [`SubjectRecord`].
    StructuredRecords,
}

impl CohortFormat {
    /// `.csv` selects the table layout; anything else is JSON lines.
    pub fn from_path(path: &Path) -> CohortFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CohortFormat::DelimitedTable,
            _ => CohortFormat::StructuredRecords,
        }
    }
}

const SUMMARY_FIELDS: [&str; 7] = ["first", "last", "min", "max", "mean", "std", "time_of_max"];

/// Column names of the flattened cohort table, in export order.
pub const COHORT_CSV_COLUMNS: &[&str] = &[
    "subject_id",
    "pte_outcome",
    "gcs_total_worst",
    "gcs_total_best",
    "gcs_eye_worst",
    "gcs_eye_best",
    "gcs_verbal_worst",
    "gcs_verbal_best",
    "gcs_motor_worst",
    "gcs_motor_best",
    "icu_admitted",
    "icu_days",
    "surgery_performed",
    "surgery_type",
    "hours_to_surgery",
    "acute_seizure_7d",
    "operative_note",
    "ct_contusion",
    "ct_epidural_hematoma",
    "ct_intracerebral_hemorrhage",
    "ct_skull_fracture",
    "ct_subarachnoid_hemorrhage",
    "ct_marshall_score",
    "creatinine_first",
    "creatinine_last",
    "creatinine_min",
    "creatinine_max",
    "creatinine_mean",
    "creatinine_std",
    "creatinine_time_of_max",
    "lactate_first",
    "lactate_last",
    "lactate_min",
    "lactate_max",
    "lactate_mean",
    "lactate_std",
    "lactate_time_of_max",
    "hemoglobin_first",
    "hemoglobin_last",
    "hemoglobin_min",
    "hemoglobin_max",
    "hemoglobin_mean",
    "hemoglobin_std",
    "hemoglobin_time_of_max",
    "paco2_first",
    "paco2_last",
    "paco2_min",
    "paco2_max",
    "paco2_mean",
    "paco2_std",
    "paco2_time_of_max",
    "age_years",
    "sex",
    "race",
    "prior_epilepsy",
    "prior_seizures",
    "neurodegenerative",
    "prior_neuro_illness",
    "tia_stroke",
    "anticoagulant",
    "antiplatelet",
    "ct_report",
    "mri_report",
];

const MISSING_TOKEN: &str = "NOT_REPORTED";

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case(MISSING_TOKEN)
}

struct Row<'a> {
    row: usize,
    index: &'a HashMap<&'a str, usize>,
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn cell(&self, column: &str) -> &str {
        self.index
            .get(column)
            .and_then(|&i| self.record.get(i))
            .unwrap_or("")
    }

    fn err(&self, column: &str, reason: impl Into<String>) -> Error {
        Error::MalformedRow {
            row: self.row,
            column: column.to_string(),
            reason: reason.into(),
        }
    }

    fn text(&self, column: &str) -> Option<String> {
        let c = self.cell(column);
        (!is_missing(c)).then(|| c.trim().to_string())
    }

    fn number<T: std::str::FromStr>(&self, column: &str) -> Result<Option<T>> {
        let c = self.cell(column);
        if is_missing(c) {
            return Ok(None);
        }
        c.trim()
            .parse()
            .map(Some)
            .map_err(|_| self.err(column, format!("cannot parse {c:?}")))
    }

    fn real(&self, column: &str) -> Result<Option<f64>> {
        match self.number::<f64>(column)? {
            Some(v) if !v.is_finite() => Err(self.err(column, "non-finite value")),
            v => Ok(v),
        }
    }

    fn flag(&self, column: &str) -> Result<Option<bool>> {
        let c = self.cell(column);
        if is_missing(c) {
            return Ok(None);
        }
        match c.trim().to_ascii_lowercase().as_str() {
            "yes" | "y" | "true" | "1" => Ok(Some(true)),
            "no" | "n" | "false" | "0" => Ok(Some(false)),
            _ => Err(self.err(column, format!("expected yes/no, got {c:?}"))),
        }
    }

    fn required_flag(&self, column: &str) -> Result<bool> {
        self.flag(column)?
            .ok_or_else(|| self.err(column, "required value missing"))
    }

    fn tristate(&self, column: &str) -> Result<TriState> {
        let c = self.cell(column);
        TriState::parse_cell(c).ok_or_else(|| {
            self.err(
                column,
                format!("expected present/absent/indeterminate/NOT_REPORTED, got {c:?}"),
            )
        })
    }

    fn summary(&self, analyte: Analyte) -> Result<Option<SeriesSummary>> {
        let mut vals = [0.0; 7];
        let mut present = 0;
        for (slot, field) in vals.iter_mut().zip(SUMMARY_FIELDS) {
            let column = format!("{}_{field}", analyte.key());
            if let Some(v) = self.real(&column)? {
                *slot = v;
                present += 1;
            }
        }
        match present {
            0 => Ok(None),
            7 => Ok(Some(SeriesSummary {
                first: vals[0],
                last: vals[1],
                min: vals[2],
                max: vals[3],
                mean: vals[4],
                std: vals[5],
                time_of_max: vals[6],
            })),
            _ => Err(self.err(
                &format!("{}_*", analyte.key()),
                "lab summary columns must be all present or all missing",
            )),
        }
    }

    fn record(&self) -> Result<SubjectRecord> {
        let subject_id = self
            .text("subject_id")
            .ok_or_else(|| self.err("subject_id", "required value missing"))?;
        let outcome_cell = self.cell("pte_outcome");
        let pte_outcome = Outcome::parse_cell(outcome_cell)
            .ok_or_else(|| self.err("pte_outcome", format!("unknown outcome {outcome_cell:?}")))?;
        let age_years = self
            .number::<u32>("age_years")?
            .ok_or_else(|| self.err("age_years", "required value missing"))?;
        let sex = match self.text("sex") {
            None => None,
            Some(s) => Some(Sex::parse(&s).ok_or_else(|| self.err("sex", format!("unknown sex {s:?}")))?),
        };

        let mut labs = super::LabPanel::default();
        for analyte in Analyte::ALL {
            *labs.slot(analyte) = self.summary(analyte)?;
        }

        Ok(SubjectRecord {
            subject_id,
            gcs: super::GcsRecord {
                total_worst: self.number("gcs_total_worst")?,
                total_best: self.number("gcs_total_best")?,
                eye_worst: self.number("gcs_eye_worst")?,
                eye_best: self.number("gcs_eye_best")?,
                verbal_worst: self.number("gcs_verbal_worst")?,
                verbal_best: self.number("gcs_verbal_best")?,
                motor_worst: self.number("gcs_motor_worst")?,
                motor_best: self.number("gcs_motor_best")?,
            },
            course: super::HospitalCourse {
                icu_admitted: self.required_flag("icu_admitted")?,
                icu_days: self.real("icu_days")?,
                surgery_performed: self.required_flag("surgery_performed")?,
                surgery_type: self.text("surgery_type"),
                hours_to_surgery: self.real("hours_to_surgery")?,
                acute_seizure_7d: self.required_flag("acute_seizure_7d")?,
                operative_note: self.text("operative_note"),
            },
            ct: super::CtFindings {
                contusion: self.tristate("ct_contusion")?,
                epidural_hematoma: self.tristate("ct_epidural_hematoma")?,
                intracerebral_hemorrhage: self.tristate("ct_intracerebral_hemorrhage")?,
                skull_fracture: self.tristate("ct_skull_fracture")?,
                subarachnoid_hemorrhage: self.tristate("ct_subarachnoid_hemorrhage")?,
                marshall_score: self.number("ct_marshall_score")?,
            },
            labs,
            history: super::HistoryDemographics {
                age_years,
                sex,
                race: self.text("race"),
                prior_epilepsy: self.flag("prior_epilepsy")?,
                prior_seizures: self.flag("prior_seizures")?,
                neurodegenerative: self.flag("neurodegenerative")?,
                prior_neuro_illness: self.flag("prior_neuro_illness")?,
                tia_stroke: self.flag("tia_stroke")?,
                anticoagulant: self.flag("anticoagulant")?,
                antiplatelet: self.flag("antiplatelet")?,
            },
            imaging: super::ImagingNotes {
                ct_report: self.text("ct_report"),
                mri_report: self.text("mri_report"),
            },
            pte_outcome,
        })
    }
}

fn read_csv_records(path: &Path) -> Result<Vec<SubjectRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = reader.headers()?.clone();
    let known: HashSet<&str> = COHORT_CSV_COLUMNS.iter().copied().collect();
    let mut index = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if known.contains(h) {
            index.insert(h, i);
        } else {
            log::warn!("{}: ignoring unknown column {h:?}", path.display());
        }
    }
    for required in ["subject_id", "pte_outcome", "age_years"] {
        if !index.contains_key(required) {
            return Err(Error::MalformedRow {
                row: 0,
                column: required.to_string(),
                reason: "required column absent from header".into(),
            });
        }
    }

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let record = rec?;
        let row = Row {
            row: i + 1,
            index: &index,
            record: &record,
        };
        out.push(row.record()?);
    }
    Ok(out)
}

fn read_jsonl_records(path: &Path) -> Result<Vec<SubjectRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SubjectRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row: i + 1,
            column: "record".into(),
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads every record without applying inclusion criteria.
pub fn load_raw_cohort(path: &Path, format: CohortFormat) -> Result<RawCohort> {
    let records = match format {
        CohortFormat::DelimitedTable => read_csv_records(path)?,
        CohortFormat::StructuredRecords => read_jsonl_records(path)?,
    };
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.subject_id.as_str()) {
            return Err(Error::DuplicateSubject(r.subject_id.clone()));
        }
    }
    Ok(RawCohort {
        records,
        provenance: Provenance::Ingested,
        generator_seed: None,
    })
}

/// Loads a cohort file, applies inclusion criteria and validates subjects.
pub fn load_cohort(path: &Path, format: CohortFormat) -> Result<Cohort> {
    let raw = load_raw_cohort(path, format)?;
    let included = apply_inclusion(raw);
    Cohort::new(included.subjects, Provenance::Ingested, None)
}

/// Reads the long-format lab table (`subject_id, analyte, time_days, value`).
pub fn load_lab_table(path: &Path) -> Result<BTreeMap<String, BTreeMap<Analyte, Vec<(f64, f64)>>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MalformedRow {
                row: 0,
                column: name.to_string(),
                reason: "required column absent from header".into(),
            })
    };
    let (c_id, c_an, c_t, c_v) = (col("subject_id")?, col("analyte")?, col("time_days")?, col("value")?);

    let mut out: BTreeMap<String, BTreeMap<Analyte, Vec<(f64, f64)>>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |c: usize| rec.get(c).unwrap_or("").trim();
        let bad = |column: &str, reason: String| Error::MalformedRow {
            row,
            column: column.to_string(),
            reason,
        };
        let id = get(c_id);
        if id.is_empty() {
            return Err(bad("subject_id", "required value missing".into()));
        }
        let analyte =
            Analyte::parse(get(c_an)).ok_or_else(|| bad("analyte", format!("unknown analyte {:?}", get(c_an))))?;
        let t: f64 = get(c_t)
            .parse()
            .map_err(|_| bad("time_days", format!("cannot parse {:?}", get(c_t))))?;
        let v: f64 = get(c_v)
            .parse()
            .map_err(|_| bad("value", format!("cannot parse {:?}", get(c_v))))?;
        out.entry(id.to_string()).or_default().entry(analyte).or_default().push((t, v));
    }
    Ok(out)
}

/// Replaces wide-format lab summaries with ones aggregated from the long table.
pub fn merge_lab_table(
    raw: &mut RawCohort,
    labs: &BTreeMap<String, BTreeMap<Analyte, Vec<(f64, f64)>>>,
) -> Result<()> {
    let ids: HashSet<&str> = raw.records.iter().map(|r| r.subject_id.as_str()).collect();
    for id in labs.keys() {
        if !ids.contains(id.as_str()) {
            log::warn!("lab table references unknown subject {id:?}");
        }
    }
    for record in &mut raw.records {
        if let Some(series) = labs.get(&record.subject_id) {
            for (&analyte, points) in series {
                *record.labs.slot(analyte) = Some(aggregate_series(points)?);
            }
        }
    }
    Ok(())
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn flag(v: bool) -> String {
    if v { "yes" } else { "no" }.to_string()
}

fn opt_flag(v: Option<bool>) -> String {
    v.map(flag).unwrap_or_default()
}

fn csv_row(s: &Subject) -> Vec<String> {
    let mut row = vec![
        s.subject_id.clone(),
        if s.label { "yes" } else { "no" }.to_string(),
        opt(&s.gcs.total_worst),
        opt(&s.gcs.total_best),
        opt(&s.gcs.eye_worst),
        opt(&s.gcs.eye_best),
        opt(&s.gcs.verbal_worst),
        opt(&s.gcs.verbal_best),
        opt(&s.gcs.motor_worst),
        opt(&s.gcs.motor_best),
        flag(s.course.icu_admitted),
        opt(&s.course.icu_days),
        flag(s.course.surgery_performed),
        opt(&s.course.surgery_type),
        opt(&s.course.hours_to_surgery),
        flag(s.course.acute_seizure_7d),
        opt(&s.course.operative_note),
    ];
    for (_, t) in s.ct.findings() {
        row.push(t.as_cell().to_string());
    }
    row.push(opt(&s.ct.marshall_score));
    for analyte in Analyte::ALL {
        match s.labs.get(analyte) {
            Some(x) => row.extend(
                [x.first, x.last, x.min, x.max, x.mean, x.std, x.time_of_max].map(|v| v.to_string()),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
    }
    let h = &s.history;
    row.push(h.age_years.to_string());
    row.push(h.sex.map(|x| x.as_str().to_string()).unwrap_or_default());
    row.push(opt(&h.race));
    for f in [
        h.prior_epilepsy,
        h.prior_seizures,
        h.neurodegenerative,
        h.prior_neuro_illness,
        h.tia_stroke,
        h.anticoagulant,
        h.antiplatelet,
    ] {
        row.push(opt_flag(f));
    }
    row.push(opt(&s.imaging.ct_report));
    row.push(opt(&s.imaging.mri_report));
    debug_assert_eq!(row.len(), COHORT_CSV_COLUMNS.len());
    row
}

/// Writes the flattened table layout.
pub fn write_cohort_csv(path: &Path, cohort: &Cohort) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(COHORT_CSV_COLUMNS)?;
    for s in &cohort.subjects {
        writer.write_record(csv_row(s))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Writes one [`SubjectRecord`] per line.
pub fn write_cohort_jsonl(path: &Path, cohort: &Cohort) -> Result<()> {
    let mut buf = Vec::new();
    for s in &cohort.subjects {
        serde_json::to_writer(&mut buf, &SubjectRecord::from(s))?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

/// Writes a cohort in the layout implied by the file extension.
pub fn write_cohort(path: &Path, cohort: &Cohort) -> Result<()> {
    match CohortFormat::from_path(path) {
        CohortFormat::DelimitedTable => write_cohort_csv(path, cohort),
        CohortFormat::StructuredRecords => write_cohort_jsonl(path, cohort),
    }
}
