//! Immutable, indexed case-series data.
//!
//! Rows are eras, laid out subject by subject. The design matrix holds 0/1
//! indicators only, so it is stored twice as index lists: compressed-column
//! (`col_ptr`/`col_rows`) for the coordinate-wise updates and compressed-row
//! (`row_ptr`/`row_drugs`) for from-scratch evaluation of the linear
//! predictor. Each column additionally carries the subject of every nonzero,
//! which is the coordinate form of the loading-matrix product `M X_j`.

use crate::error::{Error, Result};

/// A stretch of observation time with constant exposure status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Era {
    pub length_days: i64,
    pub event_count: u32,
    /// Strictly ascending drug indices.
    pub exposures: Vec<u32>,
}

impl Era {
    pub fn new(length_days: i64, event_count: u32, exposures: Vec<u32>) -> Self {
        Era {
            length_days,
            event_count,
            exposures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub eras: Vec<Era>,
}

impl SubjectRecord {
    pub fn new(subject_id: impl Into<String>, eras: Vec<Era>) -> Self {
        SubjectRecord {
            subject_id: subject_id.into(),
            eras,
        }
    }

    pub fn total_events(&self) -> u64 {
        self.eras.iter().map(|e| u64::from(e.event_count)).sum()
    }
}

/// One design-matrix column: ascending row indices and, aligned with them,
/// the subject owning each row.
#[derive(Debug, Clone, Copy)]
pub struct Column<'a> {
    pub rows: &'a [u32],
    pub subjects: &'a [u32],
}

impl Column<'_> {
    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    drug_ids: Vec<String>,
    subject_ids: Vec<String>,
    events: Vec<u32>,
    lengths: Vec<u32>,
    subject_offsets: Vec<usize>,
    subject_totals: Vec<u64>,
    row_subject: Vec<u32>,
    row_ptr: Vec<usize>,
    row_drugs: Vec<u32>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
    col_subjects: Vec<u32>,
    y_dot_x: Vec<u64>,
    x_max: usize,
}

/// Builds a dataset with drugs labelled `"0"`, `"1"`, ...
pub fn build_dataset(records: &[SubjectRecord], num_drugs: usize) -> Result<Dataset> {
    let labels = (0..num_drugs).map(|j| j.to_string()).collect();
    build_dataset_with_labels(records, labels)
}

/// Validates the records, drops subjects without events and lays out the
/// remaining ones contiguously in input order.
pub fn build_dataset_with_labels(
    records: &[SubjectRecord],
    drug_ids: Vec<String>,
) -> Result<Dataset> {
    let num_drugs = drug_ids.len();
    if num_drugs == 0 {
        return Err(Error::Invalid("drug count must be at least 1".into()));
    }
    for record in records {
        validate_record(record, num_drugs)?;
    }
    let kept = records.iter().filter(|r| r.total_events() > 0);
    Dataset::assemble(kept, drug_ids)
}

fn validate_record(record: &SubjectRecord, num_drugs: usize) -> Result<()> {
    let fail = |reason: String| Error::InvalidSubject {
        subject: record.subject_id.clone(),
        reason,
    };
    if record.eras.is_empty() {
        return Err(fail("subject has no eras".into()));
    }
    for (k, era) in record.eras.iter().enumerate() {
        if era.length_days <= 0 {
            return Err(fail(format!(
                "era {k} has non-positive length {}",
                era.length_days
            )));
        }
        if era.length_days > i64::from(u32::MAX) {
            return Err(fail(format!("era {k} length {} is too large", era.length_days)));
        }
        if let Some(&bad) = era.exposures.iter().find(|&&d| d as usize >= num_drugs) {
            return Err(fail(format!(
                "era {k} exposure index {bad} is out of range for {num_drugs} drugs"
            )));
        }
        if era.exposures.windows(2).any(|w| w[0] >= w[1]) {
            return Err(fail(format!(
                "era {k} exposures are not strictly ascending"
            )));
        }
    }
    Ok(())
}

impl Dataset {
    fn assemble<'a>(
        subjects: impl Iterator<Item = &'a SubjectRecord>,
        drug_ids: Vec<String>,
    ) -> Result<Dataset> {
        let mut builder = Builder::new(drug_ids.len());
        for record in subjects {
            builder.push_subject(
                &record.subject_id,
                record.eras.iter().map(|e| {
                    (e.length_days as u32, e.event_count, e.exposures.as_slice())
                }),
            );
        }
        builder.finish(drug_ids)
    }

    /// Number of drugs, `J`.
    pub fn num_drugs(&self) -> usize {
        self.drug_ids.len()
    }

    /// Number of subjects, `N`.
    pub fn num_subjects(&self) -> usize {
        self.subject_offsets.len() - 1
    }

    /// Number of eras over all subjects, `K`.
    pub fn num_rows(&self) -> usize {
        self.events.len()
    }

    pub fn drug_ids(&self) -> &[String] {
        &self.drug_ids
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn events(&self) -> &[u32] {
        &self.events
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    pub fn subject_offsets(&self) -> &[usize] {
        &self.subject_offsets
    }

    /// Row range of subject `i`.
    pub fn subject_rows(&self, i: usize) -> std::ops::Range<usize> {
        self.subject_offsets[i]..self.subject_offsets[i + 1]
    }

    /// Per-subject event totals `n_i`.
    pub fn subject_totals(&self) -> &[u64] {
        &self.subject_totals
    }

    pub fn row_subject(&self) -> &[u32] {
        &self.row_subject
    }

    /// Drugs active in row `k`, ascending.
    pub fn row_exposures(&self, k: usize) -> &[u32] {
        &self.row_drugs[self.row_ptr[k]..self.row_ptr[k + 1]]
    }

    pub fn column(&self, j: usize) -> Column<'_> {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        Column {
            rows: &self.col_rows[range.clone()],
            subjects: &self.col_subjects[range],
        }
    }

    /// Precomputed `Y'X_j`.
    pub fn y_dot_x(&self) -> &[u64] {
        &self.y_dot_x
    }

    /// Largest column nonzero count.
    pub fn x_max(&self) -> usize {
        self.x_max
    }

    /// Total nonzeros in the design matrix.
    pub fn nnz(&self) -> usize {
        self.col_rows.len()
    }

    /// Dataset holding the selected subjects in the given order. Repeated
    /// indices yield independent copies of the subject.
    pub fn subset(&self, subject_indices: &[usize]) -> Result<Dataset> {
        let n = self.num_subjects();
        if let Some(&bad) = subject_indices.iter().find(|&&i| i >= n) {
            return Err(Error::Invalid(format!(
                "subject index {bad} out of range for {n} subjects"
            )));
        }
        let mut builder = Builder::new(self.num_drugs());
        for &i in subject_indices {
            let rows = self.subject_rows(i);
            builder.push_subject(
                &self.subject_ids[i],
                rows.map(|k| (self.lengths[k], self.events[k], self.row_exposures(k))),
            );
        }
        builder.finish(self.drug_ids.clone())
    }

    /// Rebuilds the subject records this dataset was assembled from.
    pub fn to_records(&self) -> Vec<SubjectRecord> {
        (0..self.num_subjects())
            .map(|i| SubjectRecord {
                subject_id: self.subject_ids[i].clone(),
                eras: self
                    .subject_rows(i)
                    .map(|k| Era {
                        length_days: i64::from(self.lengths[k]),
                        event_count: self.events[k],
                        exposures: self.row_exposures(k).to_vec(),
                    })
                    .collect(),
            })
            .collect()
    }

    /// Re-derives every precomputed quantity and checks it against the stored
    /// one.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Internal(format!("dataset invariant: {what}")));
        let k_total = self.num_rows();
        if self.subject_offsets.first() != Some(&0)
            || self.subject_offsets.last() != Some(&k_total)
        {
            return bad("subject offsets must span [0, K]");
        }
        if self.subject_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return bad("subject offsets must be strictly increasing");
        }
        for i in 0..self.num_subjects() {
            let total: u64 = self.subject_rows(i).map(|k| u64::from(self.events[k])).sum();
            if total == 0 || total != self.subject_totals[i] {
                return bad("subject totals");
            }
            if self.subject_rows(i).any(|k| self.row_subject[k] as usize != i) {
                return bad("row subject map");
            }
        }
        let mut x_max = 0;
        for j in 0..self.num_drugs() {
            let col = self.column(j);
            if col.rows.windows(2).any(|w| w[0] >= w[1]) {
                return bad("column rows must be ascending");
            }
            let ydx: u64 = col.rows.iter().map(|&k| u64::from(self.events[k as usize])).sum();
            if ydx != self.y_dot_x[j] {
                return bad("y_dot_x");
            }
            for (&k, &s) in col.rows.iter().zip(col.subjects) {
                if !self.subject_rows(s as usize).contains(&(k as usize)) {
                    return bad("column subject pairs");
                }
                if self.row_exposures(k as usize).binary_search(&(j as u32)).is_err() {
                    return bad("row/column storage disagree");
                }
            }
            x_max = x_max.max(col.nnz());
        }
        if x_max != self.x_max || self.row_drugs.len() != self.col_rows.len() {
            return bad("nonzero counts");
        }
        Ok(())
    }
}

struct Builder {
    num_drugs: usize,
    subject_ids: Vec<String>,
    events: Vec<u32>,
    lengths: Vec<u32>,
    subject_offsets: Vec<usize>,
    subject_totals: Vec<u64>,
    row_subject: Vec<u32>,
    row_ptr: Vec<usize>,
    row_drugs: Vec<u32>,
}

impl Builder {
    fn new(num_drugs: usize) -> Self {
        Builder {
            num_drugs,
            subject_ids: Vec::new(),
            events: Vec::new(),
            lengths: Vec::new(),
            subject_offsets: vec![0],
            subject_totals: Vec::new(),
            row_subject: Vec::new(),
            row_ptr: vec![0],
            row_drugs: Vec::new(),
        }
    }

    fn push_subject<'a>(
        &mut self,
        id: &str,
        rows: impl Iterator<Item = (u32, u32, &'a [u32])>,
    ) {
        let subject = self.subject_ids.len() as u32;
        let mut total = 0u64;
        for (length, events, exposures) in rows {
            self.lengths.push(length);
            self.events.push(events);
            self.row_subject.push(subject);
            self.row_drugs.extend_from_slice(exposures);
            self.row_ptr.push(self.row_drugs.len());
            total += u64::from(events);
        }
        self.subject_ids.push(id.to_owned());
        self.subject_totals.push(total);
        self.subject_offsets.push(self.events.len());
    }

    fn finish(self, drug_ids: Vec<String>) -> Result<Dataset> {
        if self.subject_ids.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let num_rows = self.events.len();
        if num_rows > u32::MAX as usize {
            return Err(Error::Invalid(format!("{num_rows} eras exceed the row index range")));
        }

        // counting sort into compressed-column form; rows come out ascending
        let mut col_ptr = vec![0usize; self.num_drugs + 1];
        for &d in &self.row_drugs {
            col_ptr[d as usize + 1] += 1;
        }
        for j in 0..self.num_drugs {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut cursor = col_ptr.clone();
        let mut col_rows = vec![0u32; self.row_drugs.len()];
        let mut col_subjects = vec![0u32; self.row_drugs.len()];
        let mut y_dot_x = vec![0u64; self.num_drugs];
        for k in 0..num_rows {
            for &d in &self.row_drugs[self.row_ptr[k]..self.row_ptr[k + 1]] {
                let d = d as usize;
                col_rows[cursor[d]] = k as u32;
                col_subjects[cursor[d]] = self.row_subject[k];
                cursor[d] += 1;
                y_dot_x[d] += u64::from(self.events[k]);
            }
        }
        let x_max = col_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0);

        Ok(Dataset {
            drug_ids,
            subject_ids: self.subject_ids,
            events: self.events,
            lengths: self.lengths,
            subject_offsets: self.subject_offsets,
            subject_totals: self.subject_totals,
            row_subject: self.row_subject,
            row_ptr: self.row_ptr,
            row_drugs: self.row_drugs,
            col_ptr,
            col_rows,
            col_subjects,
            y_dot_x,
            x_max,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// One subject, two unit-length eras, the event in the exposed one.
    pub(crate) fn toy() -> Dataset {
        let rec = SubjectRecord::new(
            "s1",
            vec![Era::new(1, 1, vec![0]), Era::new(1, 0, vec![])],
        );
        build_dataset(&[rec], 1).unwrap()
    }

    #[test]
    fn toy_layout() {
        let ds = toy();
        assert_eq!(ds.num_subjects(), 1);
        assert_eq!(ds.num_rows(), 2);
        assert_eq!(ds.y_dot_x(), &[1]);
        assert_eq!(ds.x_max(), 1);
        assert_eq!(ds.subject_offsets(), &[0, 2]);
        assert_eq!(ds.column(0).rows, &[0]);
        assert_eq!(ds.column(0).subjects, &[0]);
        ds.check_invariants().unwrap();
    }

    #[test]
    fn subjects_without_events_are_dropped() {
        let with = SubjectRecord::new("a", vec![Era::new(3, 1, vec![])]);
        let without = SubjectRecord::new("b", vec![Era::new(3, 0, vec![0]), Era::new(2, 0, vec![])]);
        let ds = build_dataset(&[with.clone(), without], 1).unwrap();
        let alone = build_dataset(&[with], 1).unwrap();
        assert_eq!(ds, alone);
        assert_eq!(ds.num_subjects(), 1);
    }

    #[test]
    fn unexposed_drug_keeps_an_empty_column() {
        let rec = SubjectRecord::new("a", vec![Era::new(3, 2, vec![0]), Era::new(1, 1, vec![])]);
        let ds = build_dataset(&[rec], 3).unwrap();
        assert!(ds.column(1).is_empty());
        assert!(ds.column(2).is_empty());
        assert_eq!(ds.y_dot_x(), &[2, 0, 0]);
    }

    #[test]
    fn validation_errors() {
        let bad_len = SubjectRecord::new("zero", vec![Era::new(0, 1, vec![])]);
        match build_dataset(&[bad_len], 1) {
            Err(Error::InvalidSubject { subject, .. }) => assert_eq!(subject, "zero"),
            other => panic!("unexpected {other:?}"),
        }
        let bad_drug = SubjectRecord::new("x", vec![Era::new(1, 1, vec![5])]);
        assert!(matches!(
            build_dataset(&[bad_drug], 2),
            Err(Error::InvalidSubject { .. })
        ));
        let unsorted = SubjectRecord::new("u", vec![Era::new(1, 1, vec![1, 0])]);
        assert!(build_dataset(&[unsorted], 2).is_err());
        let none = SubjectRecord::new("n", vec![Era::new(4, 0, vec![])]);
        assert!(matches!(build_dataset(&[none], 1), Err(Error::EmptyDataset)));
        assert!(matches!(build_dataset(&[], 1), Err(Error::EmptyDataset)));
        assert!(build_dataset(&[], 0).is_err());
    }

    #[test]
    fn subset_semantics() {
        let ds = toy();
        assert_eq!(ds.subset(&[0]).unwrap(), ds);

        let doubled = ds.subset(&[0, 0]).unwrap();
        assert_eq!(doubled.num_subjects(), 2);
        assert_eq!(doubled.num_rows(), 4);
        assert_eq!(doubled.y_dot_x(), &[2]);
        doubled.check_invariants().unwrap();

        assert!(matches!(ds.subset(&[]), Err(Error::EmptyDataset)));
        assert!(matches!(ds.subset(&[1]), Err(Error::Invalid(_))));
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![
            SubjectRecord::new("a", vec![Era::new(3, 2, vec![0, 2]), Era::new(1, 0, vec![1])]),
            SubjectRecord::new("b", vec![Era::new(5, 1, vec![])]),
        ];
        let ds = build_dataset(&recs, 3).unwrap();
        assert_eq!(ds.to_records(), recs);
    }
}
