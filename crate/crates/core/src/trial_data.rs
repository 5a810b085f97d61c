//! Sequential-trial data model: per-subject, per-trial eligible records,
//! long-format CSV ingestion/export, the pooled eligible subject-trial
//! dataset, and subject-level sample splitting.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const RESERVED_COLUMNS: [&str; 5] = ["subject_id", "trial", "eligible", "treatment", "outcome"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Numeric,
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl Covariate {
    pub fn numeric(name: &str) -> Self {
        Self { name: name.into(), kind: CovariateKind::Numeric }
    }

    pub fn binary(name: &str) -> Self {
        Self { name: name.into(), kind: CovariateKind::Binary }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    /// Width of this covariate after one-hot encoding with the first level as reference.
    pub fn encoded_width(&self) -> usize {
        match &self.kind {
            CovariateKind::Categorical { levels } => levels.len() - 1,
            _ => 1,
        }
    }
}

/// Ordered covariate schema shared by every trial.
///
/// Record values are stored as `f64`: numeric values as-is, binary values as
/// 0/1, and categorical values as the index of their level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Covariate>", into = "Vec<Covariate>")]
pub struct CovariateSchema {
    covariates: Vec<Covariate>,
}

impl TryFrom<Vec<Covariate>> for CovariateSchema {
    type Error = Error;

    fn try_from(v: Vec<Covariate>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CovariateSchema> for Vec<Covariate> {
    fn from(s: CovariateSchema) -> Self {
        s.covariates
    }
}

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &covariates {
            if c.name.is_empty() {
                return Err(Error::InvalidInput("covariate names must be non-empty".into()));
            }
            if RESERVED_COLUMNS.contains(&c.name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "covariate name `{}` collides with a reserved column",
                    c.name
                )));
            }
            if !seen.insert(c.name.clone()) {
                return Err(Error::InvalidInput(format!("duplicate covariate name `{}`", c.name)));
            }
            if let CovariateKind::Categorical { levels } = &c.kind {
                if levels.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "categorical covariate `{}` has no levels",
                        c.name
                    )));
                }
                let distinct: std::collections::HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::InvalidInput(format!(
                        "categorical covariate `{}` repeats a level",
                        c.name
                    )));
                }
            }
        }
        Ok(Self { covariates })
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn encoded_width(&self) -> usize {
        self.covariates.iter().map(Covariate::encoded_width).sum()
    }

    pub fn encoded_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.encoded_width());
        for c in &self.covariates {
            match &c.kind {
                CovariateKind::Categorical { levels } => {
                    for l in &levels[1..] {
                        names.push(format!("{}[{}]", c.name, l));
                    }
                }
                _ => names.push(c.name.clone()),
            }
        }
        names
    }

    /// One-hot encode a raw record (first level is the reference).
    pub fn encode_into(&self, values: &[f64], out: &mut Vec<f64>) {
        for (c, &v) in self.covariates.iter().zip(values) {
            match &c.kind {
                CovariateKind::Categorical { levels } => {
                    let level = v as usize;
                    for l in 1..levels.len() {
                        out.push(if l == level { 1.0 } else { 0.0 });
                    }
                }
                _ => out.push(v),
            }
        }
    }

    fn parse_value(&self, idx: usize, raw: &str) -> std::result::Result<f64, String> {
        let c = &self.covariates[idx];
        match &c.kind {
            CovariateKind::Numeric => {
                let v: f64 = raw.parse().map_err(|_| format!("cannot parse `{raw}` as a number"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("non-finite value `{raw}`"))
                }
            }
            CovariateKind::Binary => match raw {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                _ => Err(format!("binary value must be 0 or 1, got `{raw}`")),
            },
            CovariateKind::Categorical { levels } => levels
                .iter()
                .position(|l| l == raw)
                .map(|p| p as f64)
                .ok_or_else(|| format!("`{raw}` is not a declared level of `{}`", c.name)),
        }
    }

    fn format_value(&self, idx: usize, v: f64) -> String {
        match &self.covariates[idx].kind {
            CovariateKind::Numeric => format!("{v}"),
            CovariateKind::Binary => format!("{}", v as u8),
            CovariateKind::Categorical { levels } => levels[v as usize].clone(),
        }
    }
}

/// Covariates, treatment and outcome of one eligible subject-trial.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibleRecord {
    pub covariates: Vec<f64>,
    pub treatment: u8,
    pub outcome: f64,
}

/// Coarsened sequential-trial data: one optional record per (subject, trial).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPanel {
    schema: CovariateSchema,
    subject_ids: Vec<String>,
    n_trials: usize,
    // subject-major: records[i * n_trials + (m - 1)]
    records: Vec<Option<EligibleRecord>>,
}

impl TrialPanel {
    pub fn new(
        schema: CovariateSchema,
        subject_ids: Vec<String>,
        n_trials: usize,
        records: Vec<Option<EligibleRecord>>,
    ) -> Result<Self> {
        if subject_ids.is_empty() {
            return Err(Error::InvalidInput("panel has no subjects".into()));
        }
        if n_trials == 0 {
            return Err(Error::InvalidInput("panel has no trials".into()));
        }
        if records.len() != subject_ids.len() * n_trials {
            return Err(Error::InvalidInput(format!(
                "expected {} records, got {}",
                subject_ids.len() * n_trials,
                records.len()
            )));
        }
        for rec in records.iter().flatten() {
            if rec.covariates.len() != schema.len() {
                return Err(Error::InvalidInput("record width does not match schema".into()));
            }
            if rec.treatment > 1 || !rec.outcome.is_finite() {
                return Err(Error::InvalidInput(
                    "records need a binary treatment and a finite outcome".into(),
                ));
            }
            if rec.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("records need finite covariates".into()));
            }
        }
        Ok(Self { schema, subject_ids, n_trials, records })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    /// Record of subject `i` (0-based) at trial `m` (1-based).
    pub fn record(&self, i: usize, m: usize) -> Option<&EligibleRecord> {
        self.records[i * self.n_trials + (m - 1)].as_ref()
    }

    pub fn is_eligible(&self, i: usize, m: usize) -> bool {
        self.record(i, m).is_some()
    }

    pub fn eligible_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_trials];
        for (k, r) in self.records.iter().enumerate() {
            if r.is_some() {
                counts[k % self.n_trials] += 1;
            }
        }
        counts
    }

    /// Empirical eligible fractions, eligible count / n.
    pub fn eligible_fractions(&self) -> Vec<f64> {
        let n = self.n_subjects() as f64;
        self.eligible_counts().into_iter().map(|c| c as f64 / n).collect()
    }

    /// Panel restricted to the given subjects (in the given order).
    pub fn subset(&self, subjects: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(subjects.len());
        let mut records = Vec::with_capacity(subjects.len() * self.n_trials);
        for &i in subjects {
            if i >= self.n_subjects() {
                return Err(Error::Index(format!("subject {i} out of range")));
            }
            ids.push(self.subject_ids[i].clone());
            records.extend_from_slice(&self.records[i * self.n_trials..(i + 1) * self.n_trials]);
        }
        Self::new(self.schema.clone(), ids, self.n_trials, records)
    }

    /// Write the long-format CSV: one line per (subject, trial), ineligible
    /// pairs carry `eligible = 0` and empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = RESERVED_COLUMNS.to_vec();
        header.extend(self.schema.covariates.iter().map(|c| c.name.as_str()));
        w.write_record(&header)?;
        let mut line: Vec<String> = Vec::with_capacity(header.len());
        for (i, id) in self.subject_ids.iter().enumerate() {
            for m in 1..=self.n_trials {
                line.clear();
                line.push(id.clone());
                line.push(m.to_string());
                match self.record(i, m) {
                    Some(rec) => {
                        line.push("1".into());
                        line.push(rec.treatment.to_string());
                        line.push(format!("{}", rec.outcome));
                        for (k, v) in rec.covariates.iter().enumerate() {
                            line.push(self.schema.format_value(k, *v));
                        }
                    }
                    None => {
                        line.push("0".into());
                        line.extend(std::iter::repeat_n(String::new(), 2 + self.schema.len()));
                    }
                }
                w.write_record(&line)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Audit counts produced by ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub eligible_rows: usize,
    /// Rows flagged eligible but with a missing field, recorded as ineligible.
    pub coerced_rows: usize,
}

fn is_missing(raw: &str) -> bool {
    raw.is_empty() || raw == "NA"
}

pub fn ingest_csv(path: &Path, schema: &CovariateSchema) -> Result<(TrialPanel, IngestReport)> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema, path)
}

/// Parse a long-format sequential-trial table.
///
/// Subjects are ordered by identifier so that the panel does not depend on the
/// row order of the file.
pub fn read_csv<R: Read>(
    input: R,
    schema: &CovariateSchema,
    label: &Path,
) -> Result<(TrialPanel, IngestReport)> {
    let err = |row: usize, column: &str, message: String| Error::Ingest {
        path: PathBuf::from(label),
        row,
        column: column.to_string(),
        message,
    };

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();

    let mut reserved_pos = [usize::MAX; 5];
    let mut cov_pos = vec![usize::MAX; schema.len()];
    for (k, h) in headers.iter().enumerate() {
        if let Some(r) = RESERVED_COLUMNS.iter().position(|c| *c == h) {
            reserved_pos[r] = k;
        } else if let Some(c) = schema.position(h) {
            cov_pos[c] = k;
        } else {
            return Err(err(1, h, "unknown column".into()));
        }
    }
    for (r, name) in RESERVED_COLUMNS.iter().enumerate() {
        if reserved_pos[r] == usize::MAX {
            return Err(err(1, name, "required column is missing".into()));
        }
    }
    for (c, cov) in schema.covariates.iter().enumerate() {
        if cov_pos[c] == usize::MAX {
            return Err(err(1, &cov.name, "schema covariate column is missing".into()));
        }
    }
    let [p_id, p_trial, p_elig, p_treat, p_out] = reserved_pos;

    let mut report = IngestReport::default();
    let mut cells: BTreeMap<String, HashMap<usize, Option<EligibleRecord>>> = BTreeMap::new();
    let mut max_trial = 0usize;
    let mut seen_trials = std::collections::BTreeSet::new();

    for (k, result) in reader.records().enumerate() {
        let row = k + 2; // 1-based line number including the header
        let record = result?;
        report.rows_read += 1;
        let field = |p: usize| record.get(p).unwrap_or("").trim();

        let id = field(p_id);
        if id.is_empty() {
            return Err(err(row, "subject_id", "empty subject identifier".into()));
        }
        let trial: usize = field(p_trial)
            .parse()
            .ok()
            .filter(|t| *t >= 1)
            .ok_or_else(|| err(row, "trial", format!("`{}` is not a positive integer", field(p_trial))))?;
        max_trial = max_trial.max(trial);
        seen_trials.insert(trial);

        let eligible = match field(p_elig) {
            "0" => false,
            "1" => true,
            other => return Err(err(row, "eligible", format!("must be 0 or 1, got `{other}`"))),
        };

        let entry = cells.entry(id.to_string()).or_default();
        if entry.contains_key(&trial) {
            return Err(err(row, "trial", format!("duplicate row for subject `{id}` at trial {trial}")));
        }

        let mut parsed = None;
        if eligible {
            let mut missing = false;
            let treatment = match field(p_treat) {
                t if is_missing(t) => {
                    missing = true;
                    0
                }
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(err(row, "treatment", format!("must be 0 or 1, got `{other}`")))
                }
            };
            let raw_out = field(p_out);
            let outcome = if is_missing(raw_out) {
                missing = true;
                0.0
            } else {
                let v: f64 = raw_out
                    .parse()
                    .map_err(|_| err(row, "outcome", format!("cannot parse `{raw_out}` as a number")))?;
                if !v.is_finite() {
                    return Err(err(row, "outcome", format!("non-finite outcome `{raw_out}`")));
                }
                v
            };
            let mut covariates = Vec::with_capacity(schema.len());
            for (c, cov) in schema.covariates.iter().enumerate() {
                let raw = field(cov_pos[c]);
                if is_missing(raw) {
                    missing = true;
                    covariates.push(0.0);
                } else {
                    covariates.push(schema.parse_value(c, raw).map_err(|m| err(row, &cov.name, m))?);
                }
            }
            if missing {
                report.coerced_rows += 1;
            } else {
                report.eligible_rows += 1;
                parsed = Some(EligibleRecord { covariates, treatment, outcome });
            }
        }
        entry.insert(trial, parsed);
    }

    if cells.is_empty() {
        return Err(err(1, "subject_id", "file has no data rows".into()));
    }
    if seen_trials.len() != max_trial {
        let missing: Vec<usize> = (1..=max_trial).filter(|t| !seen_trials.contains(t)).collect();
        return Err(err(
            0,
            "trial",
            format!("trial indices must be contiguous 1..{max_trial}; missing {missing:?}"),
        ));
    }

    let mut ids = Vec::with_capacity(cells.len());
    let mut records = Vec::with_capacity(cells.len() * max_trial);
    for (id, mut by_trial) in cells {
        for m in 1..=max_trial {
            records.push(by_trial.remove(&m).flatten());
        }
        ids.push(id);
    }
    if report.coerced_rows > 0 {
        tracing::warn!(
            coerced = report.coerced_rows,
            "eligible rows with missing fields were recorded as ineligible"
        );
    }
    let panel = TrialPanel::new(schema.clone(), ids, max_trial, records)?;
    Ok((panel, report))
}

/// Pooled eligible subject-trials, stored column-wise, subject-major then trial.
#[derive(Debug, Clone)]
pub struct PooledDataset {
    n_covariates: usize,
    pub subject: Vec<usize>,
    pub trial: Vec<usize>,
    covariates: Vec<f64>,
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    pub eligible_counts: Vec<usize>,
}

impl PooledDataset {
    pub fn len(&self) -> usize {
        self.subject.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject.is_empty()
    }

    pub fn covariates(&self, r: usize) -> &[f64] {
        &self.covariates[r * self.n_covariates..(r + 1) * self.n_covariates]
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }
}

pub fn build_pooled(panel: &TrialPanel) -> PooledDataset {
    let total: usize = panel.eligible_counts().iter().sum();
    let p = panel.schema.len();
    let mut d = PooledDataset {
        n_covariates: p,
        subject: Vec::with_capacity(total),
        trial: Vec::with_capacity(total),
        covariates: Vec::with_capacity(total * p),
        treatment: Vec::with_capacity(total),
        outcome: Vec::with_capacity(total),
        eligible_counts: panel.eligible_counts(),
    };
    for i in 0..panel.n_subjects() {
        for m in 1..=panel.n_trials {
            if let Some(rec) = panel.record(i, m) {
                d.subject.push(i);
                d.trial.push(m);
                d.covariates.extend_from_slice(&rec.covariates);
                d.treatment.push(rec.treatment);
                d.outcome.push(rec.outcome);
            }
        }
    }
    d
}

/// Two disjoint subject-level folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectSplit {
    /// Fold (0 or 1) of each subject.
    pub fold: Vec<u8>,
}

impl SubjectSplit {
    pub fn members(&self, fold: u8) -> Vec<usize> {
        self.fold
            .iter()
            .enumerate()
            .filter(|(_, f)| **f == fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Split subjects into near-equal halves; the first fold gets `floor(n / 2)`.
pub fn split_subjects(n_subjects: usize, seed: u64) -> Result<SubjectSplit> {
    if n_subjects < 2 {
        return Err(Error::InvalidInput(format!(
            "sample splitting needs at least 2 subjects, got {n_subjects}"
        )));
    }
    let mut order: Vec<usize> = (0..n_subjects).collect();
    order.shuffle(&mut rng::stream(seed, "subject-split"));
    let mut fold = vec![1u8; n_subjects];
    for &i in &order[..n_subjects / 2] {
        fold[i] = 0;
    }
    Ok(SubjectSplit { fold })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CovariateSchema {
        CovariateSchema::new(vec![
            Covariate::numeric("age"),
            Covariate::binary("t2dm"),
            Covariate::categorical("site", &["WA", "NC", "SC"]),
        ])
        .unwrap()
    }

    fn parse(text: &str) -> Result<(TrialPanel, IngestReport)> {
        read_csv(text.as_bytes(), &schema(), Path::new("mem.csv"))
    }

    const SMALL: &str = "subject_id,trial,eligible,treatment,outcome,age,t2dm,site
a,1,1,0,0.5,40,0,WA
a,2,1,1,-0.25,41,1,NC
b,1,1,1,0.1,50,0,SC
b,2,1,0,0.2,50.5,0,SC
c,1,1,0,0.3,33,1,WA
c,2,1,1,0.4,34,1,NC
";

    #[test]
    fn all_eligible_file_gives_six_records() {
        let (panel, report) = parse(SMALL).unwrap();
        assert_eq!(panel.n_subjects(), 3);
        assert_eq!(panel.n_trials(), 2);
        assert_eq!(panel.eligible_counts(), vec![3, 3]);
        assert_eq!(report.coerced_rows, 0);
        assert_eq!(panel.record(0, 2).unwrap().covariates, vec![41.0, 1.0, 1.0]);
    }

    #[test]
    fn empty_outcome_is_coerced() {
        let text = SMALL.replace("b,2,1,0,0.2,", "b,2,1,0,,");
        let (panel, report) = parse(&text).unwrap();
        assert_eq!(report.coerced_rows, 1);
        assert!(!panel.is_eligible(1, 2));
        assert_eq!(panel.eligible_counts(), vec![3, 2]);
    }

    #[test]
    fn error_cases_name_row_and_column() {
        let unknown = SMALL.replace("site\n", "site,extra\n");
        assert!(matches!(parse(&unknown), Err(Error::Ingest { column, .. }) if column == "extra"));

        let bad_treat = SMALL.replace("c,1,1,0,", "c,1,1,2,");
        match parse(&bad_treat) {
            Err(Error::Ingest { row, column, .. }) => {
                assert_eq!(row, 6);
                assert_eq!(column, "treatment");
            }
            other => panic!("{other:?}"),
        }

        let bad_num = SMALL.replace("50.5", "fifty");
        assert!(matches!(parse(&bad_num), Err(Error::Ingest { column, .. }) if column == "age"));

        let gap = SMALL.replace("a,2,", "a,3,").replace("b,2,", "b,3,").replace("c,2,", "c,3,");
        assert!(matches!(parse(&gap), Err(Error::Ingest { column, .. }) if column == "trial"));

        let bad_level = SMALL.replace("33,1,WA", "33,1,XX");
        assert!(matches!(parse(&bad_level), Err(Error::Ingest { column, .. }) if column == "site"));
    }

    #[test]
    fn export_then_ingest_is_identity() {
        let text = SMALL.replace("b,2,1,0,0.2,", "b,2,1,0,,");
        let (panel, _) = parse(&text).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let (again, _) = read_csv(buf.as_slice(), &schema(), Path::new("x")).unwrap();
        assert_eq!(panel, again);
        let mut buf2 = Vec::new();
        again.write_csv(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn pooled_rows_follow_eligibility() {
        let schema = CovariateSchema::new(vec![Covariate::numeric("x")]).unwrap();
        let rec = |x: f64| Some(EligibleRecord { covariates: vec![x], treatment: 0, outcome: 0.0 });
        // subject 1 eligible at trials 1 and 3; subject 2 only at 2
        let panel = TrialPanel::new(
            schema,
            vec!["s1".into(), "s2".into()],
            3,
            vec![rec(1.0), None, rec(3.0), None, rec(5.0), None],
        )
        .unwrap();
        let pooled = build_pooled(&panel);
        assert_eq!(pooled.len(), 3);
        assert_eq!(pooled.subject, vec![0, 0, 1]);
        assert_eq!(pooled.trial, vec![1, 3, 2]);
        assert_eq!(pooled.covariates(1), &[3.0]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split_subjects(4, 11).unwrap();
        assert_eq!(s.members(0).len(), 2);
        assert_eq!(s.members(1).len(), 2);
        assert_eq!(s, split_subjects(4, 11).unwrap());
        let odd = split_subjects(101, 3).unwrap();
        assert_eq!((odd.members(0).len(), odd.members(1).len()), (50, 51));
        assert!(split_subjects(1, 0).is_err());
    }

    #[test]
    fn schema_validation() {
        assert!(CovariateSchema::new(vec![Covariate::numeric("a"), Covariate::numeric("a")]).is_err());
        assert!(CovariateSchema::new(vec![Covariate::categorical("s", &[])]).is_err());
        assert!(CovariateSchema::new(vec![Covariate::numeric("trial")]).is_err());
        let s = schema();
        assert_eq!(s.encoded_width(), 4);
        let mut out = Vec::new();
        s.encode_into(&[40.0, 1.0, 2.0], &mut out);
        assert_eq!(out, vec![40.0, 1.0, 0.0, 1.0]);
    }
}
