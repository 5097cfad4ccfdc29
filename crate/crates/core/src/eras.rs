//! Conversion of raw longitudinal records (exposure intervals, event days,
//! observation periods) into constant-exposure eras.
//!
//! All day ranges are half-open `[start, end)`. An era's exposure set is the
//! set of drugs whose clipped interval covers it; adjacent eras with the same
//! set are merged, so eras are maximal constant-exposure stretches. Events
//! are counted as recorded, same-day duplicates included.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{Era, SubjectRecord};
use crate::error::{Error, Result};
use crate::longformat::DrugDictionary;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureInterval {
    pub subject_id: String,
    pub drug_id: String,
    pub start_day: i64,
    pub end_day: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub subject_id: String,
    pub day: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationPeriod {
    pub subject_id: String,
    pub start_day: i64,
    pub end_day: i64,
}

/// An era together with the days it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatedEra {
    pub start_day: i64,
    pub end_day: i64,
    pub event_count: u32,
    pub exposures: Vec<u32>,
}

impl From<DatedEra> for Era {
    fn from(e: DatedEra) -> Era {
        Era::new(e.end_day - e.start_day, e.event_count, e.exposures)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EraBuild {
    pub eras: Vec<DatedEra>,
    /// Intervals lying entirely outside the observation period.
    pub dropped_intervals: usize,
}

/// Partitions one subject's observation period into eras.
pub fn build_eras(
    obs: &ObservationPeriod,
    intervals: &[ExposureInterval],
    events: &[EventRecord],
    dict: &DrugDictionary,
) -> Result<EraBuild> {
    let subject = &obs.subject_id;
    let invalid = |reason: String| Error::InvalidSubject {
        subject: subject.clone(),
        reason,
    };
    if obs.start_day >= obs.end_day {
        return Err(invalid(format!(
            "observation period [{}, {}) is empty",
            obs.start_day, obs.end_day
        )));
    }
    let mut clipped: Vec<(u32, i64, i64)> = Vec::with_capacity(intervals.len());
    let mut dropped = 0;
    for iv in intervals {
        if iv.subject_id != *subject || iv.start_day >= iv.end_day {
            return Err(invalid(format!(
                "bad exposure interval for `{}` on [{}, {})",
                iv.drug_id, iv.start_day, iv.end_day
            )));
        }
        let drug = dict
            .index_of(&iv.drug_id)
            .ok_or_else(|| invalid(format!("unknown drug `{}`", iv.drug_id)))?;
        let start = iv.start_day.max(obs.start_day);
        let end = iv.end_day.min(obs.end_day);
        if start >= end {
            dropped += 1;
        } else {
            clipped.push((drug, start, end));
        }
    }
    let mut days = Vec::with_capacity(events.len());
    for ev in events {
        if ev.subject_id != *subject {
            return Err(invalid(format!("event record belongs to `{}`", ev.subject_id)));
        }
        if ev.day < obs.start_day || ev.day >= obs.end_day {
            return Err(Error::EventOutsidePeriod {
                subject: subject.clone(),
                day: ev.day,
                start: obs.start_day,
                end: obs.end_day,
            });
        }
        days.push(ev.day);
    }
    days.sort_unstable();

    // sweep over breakpoints with per-drug coverage counts; overlapping
    // intervals of one drug simply stack their counts
    let mut deltas: BTreeMap<i64, Vec<(u32, i32)>> = BTreeMap::new();
    deltas.entry(obs.start_day).or_default();
    deltas.entry(obs.end_day).or_default();
    for &(drug, start, end) in &clipped {
        deltas.entry(start).or_default().push((drug, 1));
        deltas.entry(end).or_default().push((drug, -1));
    }
    let mut coverage: BTreeMap<u32, i32> = BTreeMap::new();
    let mut eras: Vec<DatedEra> = Vec::new();
    let mut points = deltas.into_iter().peekable();
    while let Some((day, changes)) = points.next() {
        for (drug, d) in changes {
            let c = coverage.entry(drug).or_insert(0);
            *c += d;
            if *c == 0 {
                coverage.remove(&drug);
            }
        }
        let Some(&(next, _)) = points.peek() else {
            break;
        };
        let exposures: Vec<u32> = coverage.keys().copied().collect();
        let lo = days.partition_point(|&d| d < day);
        let hi = days.partition_point(|&d| d < next);
        let event_count = (hi - lo) as u32;
        match eras.last_mut() {
            Some(prev) if prev.exposures == exposures => {
                prev.end_day = next;
                prev.event_count += event_count;
            }
            _ => eras.push(DatedEra {
                start_day: day,
                end_day: next,
                event_count,
                exposures,
            }),
        }
    }
    Ok(EraBuild {
        eras,
        dropped_intervals: dropped,
    })
}

/// All raw records of one subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSubject {
    pub observation: ObservationPeriod,
    pub intervals: Vec<ExposureInterval>,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawData {
    /// Subjects in observation-file order.
    pub subjects: Vec<RawSubject>,
    /// Drug labels in index order.
    pub drugs: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Splits non-empty, non-header lines into fields, checking the arity.
fn rows<'a>(
    text: &'a str,
    file: &'a str,
    arity: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>)>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(n, l)| !l.trim().is_empty() && !(*n == 0 && l.starts_with("subject_id\t")))
        .map(move |(n, l)| {
            let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
            if fields.len() != arity {
                return Err(Error::Parse {
                    file: file.to_owned(),
                    line: n + 1,
                    reason: format!("expected {arity} tab-separated fields, found {}", fields.len()),
                });
            }
            Ok((n + 1, fields))
        })
}

fn day(field: &str, file: &str, line: usize) -> Result<i64> {
    field.parse().map_err(|_| Error::Parse {
        file: file.to_owned(),
        line,
        reason: format!("day `{field}` is not an integer"),
    })
}

/// Parses the three raw files and groups their records by subject. Drug
/// labels are indexed in first-appearance order of the exposures file unless
/// `dict` is fixed.
pub fn parse_raw_files(
    exposures_path: &Path,
    events_path: &Path,
    observation_path: &Path,
    dict: &mut DrugDictionary,
) -> Result<RawData> {
    let obs_file = observation_path.display().to_string();
    let obs_text = read_text(observation_path)?;
    let mut subjects: Vec<RawSubject> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for row in rows(&obs_text, &obs_file, 3) {
        let (line, f) = row?;
        let (start, end) = (day(f[1], &obs_file, line)?, day(f[2], &obs_file, line)?);
        if start >= end {
            return Err(Error::Parse {
                file: obs_file.clone(),
                line,
                reason: format!("observation period [{start}, {end}) is empty"),
            });
        }
        if slot.insert(f[0].to_owned(), subjects.len()).is_some() {
            return Err(Error::Parse {
                file: obs_file.clone(),
                line,
                reason: format!("duplicate observation period for subject `{}`", f[0]),
            });
        }
        subjects.push(RawSubject {
            observation: ObservationPeriod {
                subject_id: f[0].to_owned(),
                start_day: start,
                end_day: end,
            },
            intervals: Vec::new(),
            events: Vec::new(),
        });
    }

    let exp_file = exposures_path.display().to_string();
    let exp_text = read_text(exposures_path)?;
    for row in rows(&exp_text, &exp_file, 4) {
        let (line, f) = row?;
        let parse_err = |reason: String| Error::Parse {
            file: exp_file.clone(),
            line,
            reason,
        };
        let (start, end) = (day(f[2], &exp_file, line)?, day(f[3], &exp_file, line)?);
        if start >= end {
            return Err(parse_err(format!("exposure interval [{start}, {end}) is empty")));
        }
        let &s = slot
            .get(f[0])
            .ok_or_else(|| parse_err(format!("subject `{}` has no observation period", f[0])))?;
        dict.lookup(f[1])
            .ok_or_else(|| parse_err(format!("drug `{}` is not in the drug dictionary", f[1])))?;
        subjects[s].intervals.push(ExposureInterval {
            subject_id: f[0].to_owned(),
            drug_id: f[1].to_owned(),
            start_day: start,
            end_day: end,
        });
    }

    let ev_file = events_path.display().to_string();
    let ev_text = read_text(events_path)?;
    for row in rows(&ev_text, &ev_file, 2) {
        let (line, f) = row?;
        let d = day(f[1], &ev_file, line)?;
        let &s = slot.get(f[0]).ok_or_else(|| Error::Parse {
            file: ev_file.clone(),
            line,
            reason: format!("subject `{}` has no observation period", f[0]),
        })?;
        subjects[s].events.push(EventRecord {
            subject_id: f[0].to_owned(),
            day: d,
        });
    }
    Ok(RawData {
        subjects,
        drugs: dict.labels().to_vec(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub subjects: usize,
    pub eras: usize,
    pub dropped_intervals: usize,
}

/// Builds eras for every subject, concurrently, preserving subject order.
pub fn ingest(raw: &RawData) -> Result<(Vec<SubjectRecord>, IngestSummary)> {
    let dict = DrugDictionary::fixed(raw.drugs.clone())?;
    let built: Vec<EraBuild> = raw
        .subjects
        .par_iter()
        .map(|s| build_eras(&s.observation, &s.intervals, &s.events, &dict))
        .collect::<Result<_>>()?;
    let mut summary = IngestSummary {
        subjects: built.len(),
        ..Default::default()
    };
    let records = raw
        .subjects
        .iter()
        .zip(built)
        .map(|(s, b)| {
            summary.eras += b.eras.len();
            summary.dropped_intervals += b.dropped_intervals;
            SubjectRecord::new(
                s.observation.subject_id.clone(),
                b.eras.into_iter().map(Era::from).collect(),
            )
        })
        .collect();
    if summary.dropped_intervals > 0 {
        log::warn!(
            "dropped {} exposure intervals outside their observation period",
            summary.dropped_intervals
        );
    }
    Ok((records, summary))
}
