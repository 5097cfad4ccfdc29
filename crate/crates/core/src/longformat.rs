//! The era-level "long format": one tab-separated row per era,
//! `subject_id  length_days  event_count  exposures`, where `exposures` is a
//! space-separated list of drug labels (possibly empty).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{build_dataset_with_labels, Dataset, Era, SubjectRecord};
use crate::error::{Error, Result};

pub const HEADER: &str = "subject_id\tlength_days\tevent_count\texposures";

/// Maps drug labels to column indices.
#[derive(Debug, Clone, Default)]
pub struct DrugDictionary {
    labels: Vec<String>,
    index: HashMap<String, u32>,
    frozen: bool,
}

impl DrugDictionary {
    /// Empty dictionary that assigns indices in first-appearance order.
    pub fn growing() -> Self {
        Self::default()
    }

    /// Fixed dictionary; unknown labels are rejected.
    pub fn fixed(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (j, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), j as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate drug label `{label}`")));
            }
        }
        Ok(DrugDictionary {
            labels,
            index,
            frozen: true,
        })
    }

    /// Reads one label per line; the line number is the index.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        Self::fixed(labels)
    }

    pub fn lookup(&mut self, label: &str) -> Option<u32> {
        if let Some(&j) = self.index.get(label) {
            return Some(j);
        }
        if self.frozen {
            return None;
        }
        let j = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), j);
        Some(j)
    }

    pub fn index_of(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<String> {
        self.labels
    }
}

/// Parses long-format text into subject records grouped in first-appearance
/// order. `file` is only used in error messages.
pub fn parse_records(
    text: &str,
    file: &str,
    dict: &mut DrugDictionary,
) -> Result<Vec<SubjectRecord>> {
    let mut records: Vec<SubjectRecord> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() || (lineno == 1 && line.starts_with("subject_id\t")) {
            continue;
        }
        let err = |reason: String| Error::Parse {
            file: file.to_owned(),
            line: lineno,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let subject = fields[0];
        if subject.is_empty() {
            return Err(err("empty subject id".into()));
        }
        let length_days: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("length_days `{}` is not an integer", fields[1])))?;
        let event_count: u32 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("event_count `{}` is not a non-negative integer", fields[2])))?;
        let mut exposures = Vec::new();
        for label in fields.get(3).copied().unwrap_or("").split_whitespace() {
            let j = dict
                .lookup(label)
                .ok_or_else(|| err(format!("drug `{label}` is not in the drug dictionary")))?;
            exposures.push(j);
        }
        exposures.sort_unstable();
        if exposures.windows(2).any(|w| w[0] == w[1]) {
            return Err(err("drug listed twice in one era".into()));
        }
        let slot = *by_id.entry(subject.to_owned()).or_insert_with(|| {
            records.push(SubjectRecord::new(subject, Vec::new()));
            records.len() - 1
        });
        records[slot].eras.push(Era::new(length_days, event_count, exposures));
    }
    Ok(records)
}

/// Reads a long-format file and builds the dataset. Without a dictionary,
/// drug labels are indexed in first-appearance order.
pub fn read_dataset(path: &Path, dictionary: Option<DrugDictionary>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dict = dictionary.unwrap_or_else(DrugDictionary::growing);
    let records = parse_records(&text, &path.display().to_string(), &mut dict)?;
    if dict.labels().is_empty() {
        return Err(Error::Invalid(format!(
            "{}: no drug appears in any era",
            path.display()
        )));
    }
    build_dataset_with_labels(&records, dict.into_labels())
}

/// Renders records as long-format text, header included.
pub fn format_records(records: &[SubjectRecord], drug_ids: &[String]) -> String {
    let mut out = String::with_capacity(64 * records.len());
    out.push_str(HEADER);
    out.push('\n');
    for rec in records {
        for era in &rec.eras {
            let _ = write!(out, "{}\t{}\t{}\t", rec.subject_id, era.length_days, era.event_count);
            for (n, &d) in era.exposures.iter().enumerate() {
                if n > 0 {
                    out.push(' ');
                }
                out.push_str(&drug_ids[d as usize]);
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let text = format_records(&ds.to_records(), ds.drug_ids());
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_first_appearance_labels() {
        let text = "subject_id\tlength_days\tevent_count\texposures\n\
                    s1\t5\t1\tB A\n\
                    s1\t3\t0\t\n\
                    s2\t2\t2\tA\n";
        let mut dict = DrugDictionary::growing();
        let recs = parse_records(text, "t.tsv", &mut dict).unwrap();
        assert_eq!(dict.labels(), &["B".to_string(), "A".to_string()]);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].eras[0].exposures, vec![0, 1]);
        assert!(recs[0].eras[1].exposures.is_empty());
        assert_eq!(recs[1].eras[0].exposures, vec![1]);
    }

    #[test]
    fn fixed_dictionary_rejects_unknown() {
        let mut dict = DrugDictionary::fixed(vec!["A".into()]).unwrap();
        let err = parse_records("s\t1\t1\tZ\n", "f.tsv", &mut dict).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn malformed_lines_cite_line_numbers() {
        let mut dict = DrugDictionary::growing();
        let err = parse_records("s\t1\t1\tA\ns\tx\t0\t\n", "f.tsv", &mut dict).unwrap_err();
        match err {
            Error::Parse { file, line, .. } => {
                assert_eq!(file, "f.tsv");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn format_then_parse_is_identity() {
        let recs = vec![
            SubjectRecord::new("a", vec![Era::new(3, 2, vec![0, 1]), Era::new(1, 0, vec![])]),
            SubjectRecord::new("b", vec![Era::new(5, 1, vec![1])]),
        ];
        let labels = vec!["X".to_string(), "Y".to_string()];
        let text = format_records(&recs, &labels);
        let mut dict = DrugDictionary::fixed(labels.clone()).unwrap();
        assert_eq!(parse_records(&text, "f", &mut dict).unwrap(), recs);
    }
}
