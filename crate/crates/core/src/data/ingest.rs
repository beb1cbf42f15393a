use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Biomarker, Dataset, Observation, Outcome, ProvenanceEntry, SubjectRecord, Variable};
use crate::{Error, Result};

/// CSV column name for each field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub subject: String,
    pub time: String,
    #[serde(rename = "FVC")]
    pub fvc: String,
    #[serde(rename = "TLC")]
    pub tlc: String,
    #[serde(rename = "DLCO")]
    pub dlco: String,
    #[serde(rename = "TIMP")]
    pub timp: String,
    #[serde(rename = "P3NP")]
    pub p3np: String,
    #[serde(rename = "HA")]
    pub ha: String,
    #[serde(rename = "NT")]
    pub nt: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            subject: "subject".into(),
            time: "time".into(),
            fvc: "FVC".into(),
            tlc: "TLC".into(),
            dlco: "DLCO".into(),
            timp: "TIMP".into(),
            p3np: "P3NP".into(),
            ha: "HA".into(),
            nt: "NT".into(),
        }
    }
}

impl ColumnMap {
    pub fn column(&self, v: Variable) -> &str {
        match v {
            Variable::Outcome(Outcome::Fvc) => &self.fvc,
            Variable::Outcome(Outcome::Tlc) => &self.tlc,
            Variable::Outcome(Outcome::Dlco) => &self.dlco,
            Variable::Biomarker(Biomarker::Timp) => &self.timp,
            Variable::Biomarker(Biomarker::P3np) => &self.p3np,
            Variable::Biomarker(Biomarker::Ha) => &self.ha,
            Variable::Biomarker(Biomarker::Nt) => &self.nt,
        }
    }
}

/// Reads a visit-per-row CSV file. No cleaning is applied.
pub fn ingest_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, columns)
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::ParseNumber {
            row,
            column: column.to_string(),
            value: s.to_string(),
        }),
    }
}

/// Same as [`ingest_csv`] over any reader. Subjects keep the order of their
/// first appearance; visits are sorted by time.
pub fn read_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str, label: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                variable: label.to_string(),
                column: name.to_string(),
            })
    };
    let subject_col = find(&columns.subject, "subject")?;
    let time_col = find(&columns.time, "time")?;
    let var_cols: Vec<(Variable, usize)> = Variable::ALL
        .iter()
        .map(|&v| find(columns.column(v), v.name()).map(|i| (v, i)))
        .collect::<Result<_>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Observation>> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // Header is line 1.
        let row = i + 2;
        let id = record.get(subject_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::ParseNumber {
                row,
                column: columns.subject.clone(),
                value: String::new(),
            });
        }
        let time = parse_cell(record.get(time_col).unwrap_or(""), row, &columns.time)?.ok_or_else(|| {
            Error::ParseNumber {
                row,
                column: columns.time.clone(),
                value: String::new(),
            }
        })?;
        let mut obs = Observation::new(time);
        for &(v, c) in &var_cols {
            obs.set(v, parse_cell(record.get(c).unwrap_or(""), row, columns.column(v))?);
        }
        if !grouped.contains_key(&id) {
            order.push(id.clone());
        }
        grouped.entry(id).or_default().push(obs);
    }

    let subjects = order
        .into_iter()
        .map(|id| {
            let obs = grouped.remove(&id).unwrap_or_default();
            SubjectRecord::new(id, obs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(subjects)?;
    let (p, n) = ds.counts();
    ds.provenance.push(ProvenanceEntry {
        step: "ingest".into(),
        patients_before: p,
        observations_before: n,
        patients_after: p,
        observations_after: n,
    });
    Ok(ds)
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the dataset in the ingestion schema, with times in months.
pub fn write_csv<W: Write>(ds: &Dataset, columns: &ColumnMap, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![columns.subject.as_str(), columns.time.as_str()];
    header.extend(Variable::ALL.iter().map(|&v| columns.column(v)));
    w.write_record(&header)?;
    for s in &ds.subjects {
        for o in &s.observations {
            let mut row = vec![s.id.clone(), ds.to_months(o.time).to_string()];
            row.extend(Variable::ALL.iter().map(|&v| fmt_cell(o.get(v))));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
