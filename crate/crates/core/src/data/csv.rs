use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cohort, Demographics, Session};
use crate::error::{Error, Result};
use crate::types::{Label, TaskKind};

pub const ID_COLUMNS: [&str; 3] = ["subject_id", "session_id", "label"];
pub const DEMOGRAPHIC_COLUMNS: [&str; 5] = ["sex", "age", "ethnicity", "cohort", "disease_duration"];
const UNKNOWN: [&str; 5] = ["", "na", "nan", "unknown", "?"];

/// Renames source columns to the canonical schema.
///
/// `columns` maps canonical names (`subject_id`, `label`, `age`, ...) to the
/// header names used by the file. Columns listed in `ignore` are skipped;
/// every remaining column is a feature, in file order, unless
/// `feature_prefix` restricts features to columns starting with it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub ignore: Vec<String>,
    #[serde(default)]
    pub feature_prefix: Option<String>,
}

impl ColumnMapping {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn source<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.columns.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

/// One row of a task table.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFragment {
    pub subject_id: String,
    pub session_id: String,
    pub label: Label,
    pub demographics: Demographics,
    pub features: Vec<f64>,
    pub line: u64,
}

fn unknown(s: &str) -> bool {
    UNKNOWN.contains(&s.trim().to_ascii_lowercase().as_str())
}

/// Reads one task's feature table.
///
/// When `width` is given the header must declare exactly that many feature
/// columns. Every row must carry as many features as the header.
pub fn load_task_csv(
    path: &Path,
    task: TaskKind,
    width: Option<usize>,
    mapping: Option<&ColumnMapping>,
) -> Result<Vec<TaskFragment>> {
    let default = ColumnMapping::default();
    let mapping = mapping.unwrap_or(&default);
    let mut reader = ::csv::ReaderBuilder::new()
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            ::csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
            _ => Error::from(e),
        })?;
    let header = reader.headers()?.clone();
    let position = |canonical: &str| header.iter().position(|h| h == mapping.source(canonical));
    let row_err = |line: u64, message: String| Error::Row {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut ids = Vec::new();
    for c in ID_COLUMNS {
        ids.push(position(c).ok_or_else(|| {
            row_err(1, format!("missing required column {:?}", mapping.source(c)))
        })?);
    }
    let demo: Vec<Option<usize>> = DEMOGRAPHIC_COLUMNS.iter().map(|c| position(c)).collect();
    let reserved: BTreeSet<usize> = ids.iter().copied().chain(demo.iter().flatten().copied()).collect();
    let feature_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(i, h)| {
            !reserved.contains(i)
                && !mapping.ignore.iter().any(|x| x == h)
                && mapping.feature_prefix.as_deref().is_none_or(|p| h.starts_with(p))
        })
        .map(|(i, _)| i)
        .collect();
    if let Some(w) = width {
        if feature_cols.len() != w {
            return Err(row_err(
                1,
                format!("{task} table declares {} feature columns, expected {w}", feature_cols.len()),
            ));
        }
    }
    if feature_cols.is_empty() {
        return Err(row_err(1, "no feature columns".into()));
    }

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            let found = record.len() as i64 - (header.len() - feature_cols.len()) as i64;
            return Err(row_err(
                line,
                format!("expected {} {task} features, found {found}", feature_cols.len()),
            ));
        }
        let subject_id = record[ids[0]].to_string();
        let session_id = record[ids[1]].to_string();
        if subject_id.is_empty() || session_id.is_empty() {
            return Err(row_err(line, "empty subject or session id".into()));
        }
        let label: Label = record[ids[2]].parse().map_err(|e: Error| row_err(line, e.to_string()))?;
        let text = |k: usize| demo[k].map(|i| &record[i]).filter(|s| !unknown(s)).map(str::to_string);
        let number = |k: usize| -> Result<Option<f64>> {
            match text(k) {
                None => Ok(None),
                Some(s) => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| row_err(line, format!("{} is not a number: {s:?}", DEMOGRAPHIC_COLUMNS[k]))),
            }
        };
        let demographics = Demographics {
            sex: text(0),
            age: number(1)?,
            ethnicity: text(2),
            cohort: text(3),
            disease_duration: number(4)?,
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v: f64 = record[c]
                .parse()
                .map_err(|_| row_err(line, format!("column {:?}: cannot parse {:?}", &header[c], &record[c])))?;
            if !v.is_finite() {
                return Err(row_err(line, format!("column {:?}: non-finite value", &header[c])));
            }
            features.push(v);
        }
        if !seen.insert((subject_id.clone(), session_id.clone())) {
            return Err(row_err(
                line,
                format!("duplicate {task} row for subject {subject_id:?} session {session_id:?}"),
            ));
        }
        out.push(TaskFragment {
            subject_id,
            session_id,
            label,
            demographics,
            features,
            line,
        });
    }
    Ok(out)
}

/// Outer join of task tables on (subject, session). Labels must agree.
pub fn join_fragments(tables: BTreeMap<TaskKind, Vec<TaskFragment>>) -> Result<Cohort> {
    let mut widths = BTreeMap::new();
    let mut sessions: BTreeMap<(String, String), Session> = BTreeMap::new();
    for (task, rows) in tables {
        if let Some(first) = rows.first() {
            widths.insert(task, first.features.len());
        }
        for f in rows {
            let key = (f.subject_id.clone(), f.session_id.clone());
            let s = sessions.entry(key).or_insert_with(|| Session {
                subject_id: f.subject_id.clone(),
                session_id: f.session_id.clone(),
                label: f.label,
                demographics: Demographics::default(),
                features: BTreeMap::new(),
            });
            if s.label != f.label {
                return Err(Error::data(format!(
                    "session {:?} of subject {:?} has conflicting labels",
                    f.session_id, f.subject_id
                )));
            }
            s.demographics.merge(&f.demographics);
            s.features.insert(task, f.features);
        }
    }
    let cohort = Cohort {
        widths,
        sessions: sessions.into_values().collect(),
    };
    cohort.validate()?;
    Ok(cohort)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes every session that has `task`, in cohort order.
pub fn write_task_csv(path: &Path, cohort: &Cohort, task: TaskKind) -> Result<()> {
    let width = cohort.widths.get(&task).copied().unwrap_or(task.default_width());
    let mut w = ::csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = ID_COLUMNS.iter().chain(&DEMOGRAPHIC_COLUMNS).map(|s| s.to_string()).collect();
    header.extend((0..width).map(|i| format!("{task}_{i}")));
    w.write_record(&header)?;
    for s in &cohort.sessions {
        let Some(f) = s.features.get(&task) else { continue };
        let d = &s.demographics;
        let mut row = vec![
            s.subject_id.clone(),
            s.session_id.clone(),
            s.label.to_string(),
            d.sex.clone().unwrap_or_default(),
            fmt_opt(d.age),
            d.ethnicity.clone().unwrap_or_default(),
            d.cohort.clone().unwrap_or_default(),
            fmt_opt(d.disease_duration),
        ];
        row.extend(f.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One row per subject with label and demographics.
pub fn write_subjects_csv(path: &Path, cohort: &Cohort) -> Result<()> {
    let mut w = ::csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["subject_id", "label"];
    header.extend(DEMOGRAPHIC_COLUMNS);
    w.write_record(&header)?;
    let mut done = BTreeSet::new();
    for s in &cohort.sessions {
        if !done.insert(&s.subject_id) {
            continue;
        }
        let d = &s.demographics;
        w.write_record([
            s.subject_id.clone(),
            s.label.to_string(),
            d.sex.clone().unwrap_or_default(),
            fmt_opt(d.age),
            d.ethnicity.clone().unwrap_or_default(),
            d.cohort.clone().unwrap_or_default(),
            fmt_opt(d.disease_duration),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Loads `<dir>/<task>.csv` for every task whose file exists.
pub fn load_cohort_dir(
    dir: &Path,
    widths: &BTreeMap<TaskKind, usize>,
    mapping: Option<&ColumnMapping>,
) -> Result<Cohort> {
    let mut tables = BTreeMap::new();
    for task in TaskKind::ALL {
        let path = dir.join(format!("{task}.csv"));
        if path.exists() {
            let width = widths.get(&task).copied();
            tables.insert(task, load_task_csv(&path, task, width, mapping)?);
        }
    }
    if tables.is_empty() {
        return Err(Error::data(format!("no task tables found in {}", dir.display())));
    }
    join_fragments(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn minimal_file_gives_one_fragment() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "smile.csv", "subject_id,session_id,label,age,f0,f1\na,a1,pd,NA,0.5,1e-3\n");
        let rows = load_task_csv(&p, TaskKind::Smile, Some(2), None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].features, vec![0.5, 1e-3]);
        assert_eq!(rows[0].demographics.age, None);
        assert_eq!(rows[0].label, Label::Pd);
    }

    #[test]
    fn short_row_reports_line_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("subject_id,session_id,label");
        for i in 0..130 {
            body.push_str(&format!(",t{i}"));
        }
        body.push('\n');
        body.push_str("a,a1,0");
        body.push_str(&",1".repeat(130));
        body.push('\n');
        body.push_str("b,b1,1");
        body.push_str(&",1".repeat(129));
        body.push('\n');
        let p = write(dir.path(), "tapping.csv", &body);
        let err = load_task_csv(&p, TaskKind::Tapping, Some(130), None).unwrap_err();
        match err {
            Error::Row { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("expected 130") && message.contains("found 129"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_and_duplicates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "subject_id,session_id,label,f0\na,1,pd,x\n");
        assert!(matches!(load_task_csv(&p, TaskKind::Smile, None, None), Err(Error::Row { line: 2, .. })));
        let p = write(dir.path(), "b.csv", "subject_id,session_id,label,f0\na,1,pd,1\na,1,pd,2\n");
        assert!(load_task_csv(&p, TaskKind::Smile, None, None).is_err());
    }

    #[test]
    fn mapping_renames_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.csv",
            "pid,visit,dx,note,feat_a,feat_b\np1,v1,1,hello,0.1,0.2\n",
        );
        let mapping = ColumnMapping {
            columns: [("subject_id", "pid"), ("session_id", "visit"), ("label", "dx")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            ignore: vec![],
            feature_prefix: Some("feat_".into()),
        };
        let rows = load_task_csv(&p, TaskKind::Smile, Some(2), Some(&mapping)).unwrap();
        assert_eq!(rows[0].subject_id, "p1");
        assert_eq!(rows[0].features, vec![0.1, 0.2]);
    }

    #[test]
    fn join_counts_complete_sessions_like_an_inner_join() {
        let frag = |subj: &str, sess: &str| TaskFragment {
            subject_id: subj.into(),
            session_id: sess.into(),
            label: Label::Pd,
            demographics: Demographics::default(),
            features: vec![0.0],
            line: 0,
        };
        let mut tables = BTreeMap::new();
        tables.insert(TaskKind::Tapping, vec![frag("a", "1"), frag("b", "1"), frag("c", "1")]);
        tables.insert(TaskKind::Smile, vec![frag("a", "1"), frag("c", "1"), frag("c", "2")]);
        tables.insert(TaskKind::Speech, vec![frag("c", "1"), frag("a", "1"), frag("d", "9")]);
        let cohort = join_fragments(tables).unwrap();
        let complete = cohort.sessions.iter().filter(|s| s.has_tasks(&TaskKind::ALL)).count();
        assert_eq!(complete, 2);
        assert_eq!(cohort.sessions.len(), 5);
    }
}
