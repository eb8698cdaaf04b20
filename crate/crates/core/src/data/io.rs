//! Tab-separated dataset files.
//!
//! * records: `visit_id<TAB>label_spec<TAB>code_id,code_id,...` where
//!   `label_spec` is `0`/`1` or 25 binary digits
//! * codes: `code_id<TAB>system<TAB>concept_name`
//! * notes: `visit_id<TAB>note_text`, newlines escaped as `\n`
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::{Dataset, MedicalCode, TaskKind, VisitRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub records: PathBuf,
    pub codes: PathBuf,
    pub notes: Option<PathBuf>,
}

impl DatasetFiles {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetFiles {
            records: dir.join("records.tsv"),
            codes: dir.join("codes.tsv"),
            notes: Some(dir.join("notes.tsv")),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub(crate) fn escape_note(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape_note(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn parse_label(spec: &str) -> Option<Vec<bool>> {
    spec.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
}

fn format_label(label: &[bool]) -> String {
    label.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn load_codes(path: &Path) -> Result<Vec<MedicalCode>> {
    let text = read(path)?;
    let mut seen = HashSet::new();
    let mut codes = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        let [code_id, system, name] = fields[..] else {
            return Err(Error::parse(path, line_no, "expected code_id<TAB>system<TAB>concept_name"));
        };
        if code_id.is_empty() {
            return Err(Error::parse(path, line_no, "empty code_id"));
        }
        if name.trim().is_empty() {
            return Err(Error::parse(path, line_no, format!("code '{code_id}' has an empty concept name")));
        }
        if !seen.insert(code_id.to_string()) {
            return Err(Error::parse(path, line_no, format!("duplicate code_id '{code_id}'")));
        }
        codes.push(MedicalCode {
            code_id: code_id.into(),
            system: system.into(),
            concept_name: name.into(),
        });
    }
    Ok(codes)
}

fn load_notes(path: &Path) -> Result<HashMap<String, String>> {
    let text = read(path)?;
    let mut notes = HashMap::new();
    for (line_no, line) in data_lines(&text) {
        let (id, note) = line.split_once('\t').unwrap_or((line, ""));
        if notes.insert(id.to_string(), unescape_note(note)).is_some() {
            return Err(Error::parse(path, line_no, format!("duplicate visit_id '{id}'")));
        }
    }
    Ok(notes)
}

/// Loads a dataset. A missing or absent notes file leaves every note empty.
pub fn load_dataset(files: &DatasetFiles) -> Result<Dataset> {
    let codes = load_codes(&files.codes)?;
    let known: HashSet<&str> = codes.iter().map(|c| c.code_id.as_str()).collect();
    let mut notes = match &files.notes {
        Some(p) if p.exists() => load_notes(p)?,
        _ => HashMap::new(),
    };

    let path = files.records.as_path();
    let text = read(path)?;
    let mut visits = Vec::new();
    let mut seen = HashSet::new();
    let mut task_kind: Option<TaskKind> = None;
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [visit_id, label_spec, code_list] = fields[..] else {
            return Err(Error::parse(path, line_no, "expected visit_id<TAB>label<TAB>codes"));
        };
        if !seen.insert(visit_id.to_string()) {
            return Err(Error::parse(path, line_no, format!("duplicate visit_id '{visit_id}'")));
        }
        let label = parse_label(label_spec)
            .ok_or_else(|| Error::parse(path, line_no, format!("bad label '{label_spec}'")))?;
        let kind = TaskKind::from_arity(label.len()).ok_or_else(|| {
            Error::parse(path, line_no, format!("label arity {} is neither 1 nor 25", label.len()))
        })?;
        match task_kind {
            None => task_kind = Some(kind),
            Some(k) if k != kind => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("label arity {} differs from earlier rows ({})", label.len(), k.n_labels()),
                ))
            }
            _ => {}
        }
        let codes: Vec<String> = code_list
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(String::from)
            .collect();
        if codes.is_empty() {
            return Err(Error::parse(path, line_no, format!("empty visit '{visit_id}'")));
        }
        if let Some(bad) = codes.iter().find(|c| !known.contains(c.as_str())) {
            return Err(Error::parse(path, line_no, format!("unresolvable code_id '{bad}'")));
        }
        visits.push(VisitRecord {
            visit_id: visit_id.into(),
            codes,
            note_text: notes.remove(visit_id).unwrap_or_default(),
            label,
        });
    }
    if !notes.is_empty() {
        warn!("{} note(s) reference unknown visits and were ignored", notes.len());
    }
    let used: HashSet<&str> = visits.iter().flat_map(|v| v.codes.iter().map(String::as_str)).collect();
    let unused = known.len() - used.len();
    if unused > 0 {
        warn!("{unused} registered code(s) never appear in a visit");
    }
    Dataset::new(codes, visits, task_kind.unwrap_or(TaskKind::Binary))
}

/// Writes records, codes and notes files. Output is byte-deterministic.
pub fn write_dataset(ds: &Dataset, files: &DatasetFiles) -> Result<()> {
    let mut records = String::new();
    for v in ds.visits() {
        records.push_str(&format!("{}\t{}\t{}\n", v.visit_id, format_label(&v.label), v.codes.join(",")));
    }
    let mut codes = String::new();
    for c in ds.codes() {
        codes.push_str(&format!("{}\t{}\t{}\n", c.code_id, c.system, c.concept_name));
    }
    write(&files.records, &records)?;
    write(&files.codes, &codes)?;
    if let Some(p) = &files.notes {
        let mut notes = String::new();
        for v in ds.visits() {
            notes.push_str(&format!("{}\t{}\n", v.visit_id, escape_note(&v.note_text)));
        }
        write(p, &notes)?;
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
