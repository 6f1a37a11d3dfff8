//! CSV ingestion and export. Omics files are patients × features with a
//! `patient_id` first column; the clinical file carries `patient_id`,
//! `overall_survival` and `status`; the optional subtype file carries
//! `patient_id` and `subtype`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use omicscl_core::dataio::{parse_status, Cohort, DEFAULT_MODALITIES};
use omicscl_core::survmetrics::KMCurve;
use omicscl_core::Matrix;

use crate::CliError;

pub const CLINICAL_FILE: &str = "clinical.csv";
pub const SUBTYPE_FILE: &str = "subtype.csv";
const UNKNOWN: &str = "Unknown";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| io_err(path, format!("missing column `{name}`")))
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

/// Rows of one omics file keyed by patient id.
pub struct OmicsTable {
    pub features: Vec<String>,
    pub rows: HashMap<String, Vec<f64>>,
}

pub fn read_omics(path: &Path) -> Result<OmicsTable, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("patient_id") {
        return Err(io_err(path, "first column must be `patient_id` followed by features"));
    }
    let features: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let row = line + 2;
        let rec = rec.map_err(|e| io_err(path, format!("row {row}: {e}")))?;
        let id = rec[0].to_string();
        let values = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| io_err(path, format!("row {row} ({id}): invalid value `{v}`")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if rows.insert(id.clone(), values).is_some() {
            return Err(io_err(path, format!("row {row}: duplicate patient_id `{id}`")));
        }
    }
    Ok(OmicsTable { features, rows })
}

/// Survival per patient; patients with a missing time or status are left
/// out.
pub fn read_clinical(path: &Path) -> Result<HashMap<String, (f64, bool)>, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let id_col = column(&headers, "patient_id", path)?;
    let t_col = column(&headers, "overall_survival", path)?;
    let e_col = column(&headers, "status", path)?;
    let mut out = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let row = line + 2;
        let rec = rec.map_err(|e| io_err(path, format!("row {row}: {e}")))?;
        let id = rec[id_col].to_string();
        let (t_raw, e_raw) = (&rec[t_col], &rec[e_col]);
        if is_missing(t_raw) || is_missing(e_raw) {
            continue;
        }
        let t = t_raw
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| io_err(path, format!("row {row} ({id}): invalid overall_survival `{t_raw}`")))?;
        let e = parse_status(e_raw)
            .ok_or_else(|| io_err(path, format!("row {row} ({id}): invalid status `{e_raw}`")))?;
        if out.insert(id.clone(), (t, e)).is_some() {
            return Err(io_err(path, format!("row {row}: duplicate patient_id `{id}`")));
        }
    }
    Ok(out)
}

pub fn read_subtypes(path: &Path) -> Result<HashMap<String, Option<String>>, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let id_col = column(&headers, "patient_id", path)?;
    let s_col = column(&headers, "subtype", path)?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let label = &rec[s_col];
        let label = (!is_missing(label) && !label.eq_ignore_ascii_case(UNKNOWN)).then(|| label.to_string());
        out.insert(rec[id_col].to_string(), label);
    }
    Ok(out)
}

/// Inner join of all sources on patient id, rows sorted by id.
pub fn load_cohort_files(
    views: &[(String, PathBuf)],
    clinical: &Path,
    subtypes: Option<&Path>,
) -> Result<Cohort, CliError> {
    let tables = views
        .iter()
        .map(|(_, p)| read_omics(p))
        .collect::<Result<Vec<_>, _>>()?;
    let clin = read_clinical(clinical)?;
    let labels = subtypes.map(read_subtypes).transpose()?.unwrap_or_default();

    let mut ids: BTreeSet<&String> = clin.keys().collect();
    for t in &tables {
        ids.retain(|id| t.rows.contains_key(*id));
    }
    if ids.is_empty() {
        return Err(CliError::Data("no patient appears in every input file".into()));
    }
    let ids: Vec<String> = ids.into_iter().cloned().collect();
    let matrices = tables
        .iter()
        .map(|t| {
            let data = ids.iter().flat_map(|id| t.rows[id].iter().copied()).collect();
            Matrix::from_vec(ids.len(), t.features.len(), data)
        })
        .collect::<omicscl_core::Result<Vec<_>>>()?;
    Ok(Cohort::new(
        ids.clone(),
        views.iter().map(|(n, _)| n.clone()).collect(),
        matrices,
        ids.iter().map(|id| clin[id].0).collect(),
        ids.iter().map(|id| clin[id].1).collect(),
        ids.iter().map(|id| labels.get(id).cloned().flatten()).collect(),
    )?)
}

/// Loads `<name>.csv` for each default modality plus the clinical and
/// (when present) subtype files from `dir`.
pub fn load_cohort_dir(dir: &Path) -> Result<Cohort, CliError> {
    let views: Vec<(String, PathBuf)> = DEFAULT_MODALITIES
        .iter()
        .map(|m| (m.to_string(), dir.join(format!("{m}.csv"))))
        .collect();
    let subtype = dir.join(SUBTYPE_FILE);
    load_cohort_files(&views, &dir.join(CLINICAL_FILE), subtype.exists().then_some(subtype.as_path()))
}

/// Writes the cohort in the layout [`load_cohort_dir`] reads.
pub fn write_cohort_dir(dir: &Path, cohort: &Cohort) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, view) in cohort.modalities.iter().zip(&cohort.views) {
        let path = dir.join(format!("{name}.csv"));
        let mut w = writer(&path)?;
        let mut header = vec!["patient_id".to_string()];
        header.extend((0..view.cols()).map(|j| format!("{name}_{j}")));
        w.write_record(&header).map_err(|e| io_err(&path, e))?;
        for (id, row) in cohort.patient_ids.iter().zip(view.row_iter()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }

    let path = dir.join(CLINICAL_FILE);
    let mut w = writer(&path)?;
    w.write_record(["patient_id", "overall_survival", "status"]).map_err(|e| io_err(&path, e))?;
    for i in 0..cohort.len() {
        let status = if cohort.events[i] { "1" } else { "0" };
        w.write_record([cohort.patient_ids[i].as_str(), &cohort.times[i].to_string(), status])
            .map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let path = dir.join(SUBTYPE_FILE);
    let mut w = writer(&path)?;
    w.write_record(["patient_id", "subtype"]).map_err(|e| io_err(&path, e))?;
    for (id, s) in cohort.patient_ids.iter().zip(&cohort.subtypes) {
        w.write_record([id.as_str(), s.as_deref().unwrap_or(UNKNOWN)])
            .map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

/// `patient_id,split,e0,e1,...`
pub fn write_embeddings(path: &Path, rows: &[(&str, &str, &[f64])]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut header = vec!["patient_id".to_string(), "split".to_string()];
    header.extend((0..dim).map(|j| format!("e{j}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (id, split, values) in rows {
        let mut rec = vec![id.to_string(), split.to_string()];
        rec.extend(values.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// `time,survival,at_risk,events,group` with one block per curve.
pub fn write_km_curves(path: &Path, curves: &[(String, KMCurve)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["time", "survival", "at_risk", "events", "group"])
        .map_err(|e| io_err(path, e))?;
    for (group, c) in curves {
        for i in 0..c.times.len() {
            w.write_record([
                c.times[i].to_string(),
                c.survival[i].to_string(),
                c.at_risk[i].to_string(),
                c.events[i].to_string(),
                group.clone(),
            ])
            .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_clusters(path: &Path, ids: &[String], labels: &[usize]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["patient_id", "cluster"]).map_err(|e| io_err(path, e))?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()]).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Rows of a CSV as header → value maps; used by tests and tooling.
pub fn read_records(path: &Path) -> Result<Vec<BTreeMap<String, String>>, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| io_err(path, e))?;
            Ok(headers.iter().map(str::to_string).zip(rec.iter().map(str::to_string)).collect())
        })
        .collect()
}
