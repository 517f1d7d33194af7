//! Files: cohort CSV with its JSON schema sidecar, JSON documents, model
//! bundles and curve CSVs. Every write goes to a temporary file in the target
//! directory and is renamed into place.
//!
//! Cohort CSV columns, in order:
//!
//! ```text
//! case_id, age, weight, sex, asa_class, surgery_duration, surgery_type,
//! chronic_opioid_use, comorbidity_score, treatment, administered_dose,
//! pain_arrival, pain_pre_dosing, pain_discharge, nausea, vomiting, sedation,
//! dizziness, itching, urinary_retention, confusion, hallucinations,
//! respiratory_depression, rescue_naloxone, rescue_antiemetic, impact_score,
//! rescue_analgesia_meq, pacu_los, ambulation_cas
//! ```
//!
//! Enums are lowercase strings, booleans `true`/`false`, `treatment` is the
//! opiate name, `pain_pre_dosing` joins scores with `;` and an absent
//! `impact_score` is empty.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cadr::{CadrCurve, CadrModel, CADR_ARTIFACT_VERSION};
use crate::diagnostics::DiagnosticsContext;
use crate::domain::{
    validate_pain, CaseFeatures, ConversionTable, EncounterRecord, Nausea, OradeRecord, PainScore,
    Sedation, Sex, TreatmentRegistry,
};
use crate::synthgen::{Cohort, ScmGroundTruth, GENERATOR_VERSION};
use crate::{Error, Result};

pub const COHORT_CSV: &str = "cohort.csv";
pub const COHORT_SCHEMA: &str = "cohort.schema.json";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const COHORT_SCHEMA_VERSION: u64 = 1;

pub const COHORT_HEADER: [&str; 29] = [
    "case_id",
    "age",
    "weight",
    "sex",
    "asa_class",
    "surgery_duration",
    "surgery_type",
    "chronic_opioid_use",
    "comorbidity_score",
    "treatment",
    "administered_dose",
    "pain_arrival",
    "pain_pre_dosing",
    "pain_discharge",
    "nausea",
    "vomiting",
    "sedation",
    "dizziness",
    "itching",
    "urinary_retention",
    "confusion",
    "hallucinations",
    "respiratory_depression",
    "rescue_naloxone",
    "rescue_antiemetic",
    "impact_score",
    "rescue_analgesia_meq",
    "pacu_los",
    "ambulation_cas",
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

/// Versions the cohort CSV was written against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    pub schema_version: u64,
    pub generator_version: String,
    pub columns: Vec<String>,
    pub registry: TreatmentRegistry,
    pub conversion_table: ConversionTable,
    pub n_records: usize,
    pub n_surgery_types: u32,
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn record_row(r: &EncounterRecord, registry: &TreatmentRegistry) -> Vec<String> {
    let x = &r.features;
    let o = &r.orades;
    vec![
        r.case_id.to_string(),
        x.age.to_string(),
        x.weight.to_string(),
        x.sex.as_str().into(),
        x.asa_class.to_string(),
        x.surgery_duration.to_string(),
        x.surgery_type.to_string(),
        bool_str(x.chronic_opioid_use).into(),
        x.comorbidity_score.to_string(),
        registry.name(r.treatment).unwrap_or("unknown").into(),
        r.administered_dose.to_string(),
        r.pain_arrival.to_string(),
        r.pain_pre_dosing
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(";"),
        r.pain_discharge.to_string(),
        o.nausea.as_str().into(),
        bool_str(o.vomiting).into(),
        o.sedation.as_str().into(),
        bool_str(o.dizziness).into(),
        bool_str(o.itching).into(),
        bool_str(o.urinary_retention).into(),
        bool_str(o.confusion).into(),
        bool_str(o.hallucinations).into(),
        bool_str(o.respiratory_depression).into(),
        bool_str(o.rescue_naloxone).into(),
        bool_str(o.rescue_antiemetic).into(),
        o.impact_score.map(|s| s.to_string()).unwrap_or_default(),
        r.rescue_analgesia_meq.to_string(),
        r.pacu_los.to_string(),
        r.ambulation_cas.to_string(),
    ]
}

pub fn cohort_csv_bytes(records: &[EncounterRecord], registry: &TreatmentRegistry) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COHORT_HEADER)?;
    for r in records {
        w.write_record(record_row(r, registry))?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))
}

struct Fields<'a> {
    row: usize,
    rec: &'a csv::StringRecord,
    i: usize,
}

impl Fields<'_> {
    fn next_str(&mut self) -> &str {
        let s = self.rec.get(self.i).unwrap_or("");
        self.i += 1;
        s
    }

    fn err(&self, reason: String) -> Error {
        Error::MalformedRecord {
            row: self.row,
            reason: format!("{}: {reason}", COHORT_HEADER[self.i - 1]),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let s = self.next_str().to_string();
        s.parse().map_err(|_| self.err(format!("cannot parse `{s}`")))
    }

    fn boolean(&mut self) -> Result<bool> {
        match self.next_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            s => {
                let s = s.to_string();
                Err(self.err(format!("expected true/false, got `{s}`")))
            }
        }
    }

    fn pain(&mut self) -> Result<PainScore> {
        let v: i64 = self.parse()?;
        validate_pain(v).map_err(|e| self.err(e.to_string()))
    }

    fn pain_list(&mut self) -> Result<Vec<PainScore>> {
        let s = self.next_str().to_string();
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|p| {
                p.parse::<i64>()
                    .ok()
                    .and_then(|v| validate_pain(v).ok())
                    .ok_or_else(|| self.err(format!("bad pain score `{p}`")))
            })
            .collect()
    }

    fn with<T>(&mut self, f: impl Fn(&str) -> Option<T>) -> Result<T> {
        let s = self.next_str().to_string();
        f(&s).ok_or_else(|| self.err(format!("unexpected value `{s}`")))
    }
}

fn parse_row(row: usize, rec: &csv::StringRecord, registry: &TreatmentRegistry) -> Result<EncounterRecord> {
    if rec.len() != COHORT_HEADER.len() {
        return Err(Error::MalformedRecord {
            row,
            reason: format!("expected {} fields, got {}", COHORT_HEADER.len(), rec.len()),
        });
    }
    let mut f = Fields { row, rec, i: 0 };
    let case_id = f.parse()?;
    let features = CaseFeatures {
        age: f.parse()?,
        weight: f.parse()?,
        sex: f.with(Sex::parse)?,
        asa_class: f.parse()?,
        surgery_duration: f.parse()?,
        surgery_type: f.parse()?,
        chronic_opioid_use: f.boolean()?,
        comorbidity_score: f.parse()?,
    };
    let treatment = f.with(|s| registry.id_of(s))?;
    let administered_dose = f.parse()?;
    let pain_arrival = f.pain()?;
    let pain_pre_dosing = f.pain_list()?;
    let pain_discharge = f.pain()?;
    let orades = OradeRecord {
        nausea: f.with(Nausea::parse)?,
        vomiting: f.boolean()?,
        sedation: f.with(Sedation::parse)?,
        dizziness: f.boolean()?,
        itching: f.boolean()?,
        urinary_retention: f.boolean()?,
        confusion: f.boolean()?,
        hallucinations: f.boolean()?,
        respiratory_depression: f.boolean()?,
        rescue_naloxone: f.boolean()?,
        rescue_antiemetic: f.boolean()?,
        impact_score: {
            let s = f.next_str().to_string();
            if s.is_empty() {
                None
            } else {
                Some(s.parse().map_err(|_| f.err(format!("cannot parse `{s}`")))?)
            }
        },
    };
    Ok(EncounterRecord {
        case_id,
        features,
        treatment,
        administered_dose,
        pain_arrival,
        pain_pre_dosing,
        pain_discharge,
        orades,
        rescue_analgesia_meq: f.parse()?,
        pacu_los: f.parse()?,
        ambulation_cas: f.parse()?,
    })
}

/// Parses and validates cohort CSV bytes.
pub fn parse_cohort_csv(bytes: &[u8], schema: &CohortSchema) -> Result<Vec<EncounterRecord>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != COHORT_HEADER {
        return Err(Error::MalformedRecord {
            row: 0,
            reason: "header does not match the cohort columns".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let r = parse_row(row, &rec?, &schema.registry)?;
        r.validate(schema.n_surgery_types, &schema.registry)
            .map_err(|e| Error::MalformedRecord {
                row,
                reason: e.to_string(),
            })?;
        out.push(r);
    }
    Ok(out)
}

pub fn cohort_schema(cohort: &Cohort) -> CohortSchema {
    CohortSchema {
        schema_version: COHORT_SCHEMA_VERSION,
        generator_version: cohort.generator_version.clone(),
        columns: COHORT_HEADER.iter().map(|s| s.to_string()).collect(),
        registry: cohort.ground_truth.registry.clone(),
        conversion_table: ConversionTable::default(),
        n_records: cohort.records.len(),
        n_surgery_types: cohort.ground_truth.n_surgery_types(),
    }
}

/// Writes `cohort.csv`, `cohort.schema.json` and `ground_truth.json` into `dir`.
pub fn write_cohort(dir: &Path, cohort: &Cohort) -> Result<()> {
    let registry = &cohort.ground_truth.registry;
    write_atomic(&dir.join(COHORT_CSV), &cohort_csv_bytes(&cohort.records, registry)?)?;
    write_json(&dir.join(COHORT_SCHEMA), &cohort_schema(cohort))?;
    write_json(&dir.join(GROUND_TRUTH), &cohort.ground_truth)
}

pub fn read_cohort(dir: &Path) -> Result<Cohort> {
    let schema: CohortSchema = read_json(&dir.join(COHORT_SCHEMA))?;
    if schema.schema_version != COHORT_SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "cohort schema version {} (supported: {COHORT_SCHEMA_VERSION})",
            schema.schema_version
        )));
    }
    if schema.generator_version != GENERATOR_VERSION {
        return Err(Error::InvalidConfig(format!(
            "cohort generator `{}` (supported: `{GENERATOR_VERSION}`)",
            schema.generator_version
        )));
    }
    let ground_truth: ScmGroundTruth = read_json(&dir.join(GROUND_TRUTH))?;
    ground_truth.validate()?;
    let records = parse_cohort_csv(&read_bytes(&dir.join(COHORT_CSV))?, &schema)?;
    if records.len() != schema.n_records {
        return Err(Error::InvalidConfig(format!(
            "schema lists {} records, csv holds {}",
            schema.n_records,
            records.len()
        )));
    }
    Ok(Cohort {
        generator_version: schema.generator_version,
        ground_truth,
        records,
    })
}

/// A dose-response model plus the diagnostics its recommendations are
/// checked against; the unit a recommendation service loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u64,
    pub id: String,
    pub cadr: CadrModel,
    pub diagnostics: DiagnosticsContext,
}

impl ModelBundle {
    pub fn new(id: impl Into<String>, cadr: CadrModel, diagnostics: DiagnosticsContext) -> Self {
        ModelBundle {
            version: CADR_ARTIFACT_VERSION,
            id: id.into(),
            cadr,
            diagnostics,
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let b: ModelBundle = serde_json::from_slice(bytes)?;
        if b.version != CADR_ARTIFACT_VERSION || b.cadr.version != CADR_ARTIFACT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "model bundle version {} (supported: {CADR_ARTIFACT_VERSION})",
                b.version
            )));
        }
        Ok(b)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        to_json_bytes(self)
    }
}

pub fn read_bundle(path: &Path) -> Result<ModelBundle> {
    ModelBundle::from_bytes(&read_bytes(path)?)
}

pub fn curve_csv_bytes(curve: &CadrCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dose", "pain_hat", "orade_hat", "utility", "spread"])?;
    for i in 0..curve.len() {
        let spread = curve
            .spread
            .as_ref()
            .map(|s| s[i].to_string())
            .unwrap_or_default();
        w.write_record([
            curve.doses[i].to_string(),
            curve.pain_hat[i].to_string(),
            curve.orade_hat[i].to_string(),
            curve.utility[i].to_string(),
            spread,
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_cohort;

    #[test]
    fn csv_round_trip() {
        let cohort = generate_cohort(&ScmGroundTruth::default().with_seed(3), 200).unwrap();
        let bytes = cohort_csv_bytes(&cohort.records, &cohort.ground_truth.registry).unwrap();
        let back = parse_cohort_csv(&bytes, &cohort_schema(&cohort)).unwrap();
        assert_eq!(back, cohort.records);
        assert!(cohort.records.iter().any(|r| r.orades.impact_score.is_none()));
        assert!(cohort.records.iter().any(|r| r.pain_pre_dosing.len() > 1));
    }

    #[test]
    fn malformed_rows_name_the_row() {
        let cohort = generate_cohort(&ScmGroundTruth::default(), 3).unwrap();
        let text = String::from_utf8(cohort_csv_bytes(&cohort.records, &cohort.ground_truth.registry).unwrap())
            .unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replacen(",female,", ",other,", 1).replacen(",male,", ",other,", 1);
        let err = parse_cohort_csv(lines.join("\n").as_bytes(), &cohort_schema(&cohort)).unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { row: 2, .. }), "{err}");
    }
}
