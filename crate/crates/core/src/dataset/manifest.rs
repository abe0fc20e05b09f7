use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{phrases, Annotation, Sex, SpeechSample, MAX_DURATION_S};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 10] = [
    "sample_id",
    "subject_id",
    "age",
    "sex",
    "phrase_id",
    "char_index",
    "audio_path",
    "slp1",
    "slp2",
    "duration_s",
];

fn parse_err(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

/// Parses a manifest. Row numbers in errors count data rows from 1, header
/// excluded. Schema problems are [`Error::Parse`]; well-formed rows that break
/// corpus rules (unknown phrase, over-long recording) are [`Error::Validation`].
pub fn parse_manifest<R: Read>(reader: R) -> Result<Vec<SpeechSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(0, e.to_string()))?.clone();
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(parse_err(
            0,
            format!(
                "header must be {:?}, found {:?}",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let non_empty = |j: usize| {
            let v = field(j);
            if v.is_empty() {
                Err(parse_err(row, format!("{} is empty", MANIFEST_HEADER[j])))
            } else {
                Ok(v.to_string())
            }
        };
        let sample_id = non_empty(0)?;
        if !seen.insert(sample_id.clone()) {
            return Err(parse_err(row, format!("duplicate sample_id {sample_id:?}")));
        }
        let subject_id = non_empty(1)?;
        let subject_age: u32 = field(2)
            .parse()
            .map_err(|_| parse_err(row, format!("age {:?} is not an integer", field(2))))?;
        let subject_sex: Sex = field(3).parse().map_err(|e: Error| parse_err(row, e.to_string()))?;
        let phrase_id = non_empty(4)?;
        if !phrases::is_known_phrase(&phrase_id) {
            return Err(Error::Validation(format!("row {row}: unknown phrase_id {phrase_id:?}")));
        }
        let char_index = match field(5) {
            "" => None,
            v => Some(
                v.parse()
                    .map_err(|_| parse_err(row, format!("char_index {v:?} is not an integer")))?,
            ),
        };
        let audio_path = PathBuf::from(non_empty(6)?);
        let label = |j: usize| -> Result<Annotation> {
            field(j).parse().map_err(|e: Error| parse_err(row, e.to_string()))
        };
        let annotations = [label(7)?, label(8)?];
        let duration_s: f64 = field(9)
            .parse()
            .map_err(|_| parse_err(row, format!("duration_s {:?} is not a number", field(9))))?;
        if !(duration_s > 0.0 && duration_s < MAX_DURATION_S) {
            return Err(Error::Validation(format!(
                "row {row}: duration_s {duration_s} outside (0, {MAX_DURATION_S})"
            )));
        }
        samples.push(SpeechSample {
            sample_id,
            subject_id,
            subject_age,
            subject_sex,
            phrase_id,
            char_index,
            audio_path,
            annotations,
            duration_s,
        });
    }
    Ok(samples)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SpeechSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(std::io::BufReader::new(file))
}

pub fn write_manifest<W: Write>(samples: &[SpeechSample], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(ser)?;
    for s in samples {
        w.write_record([
            s.sample_id.clone(),
            s.subject_id.clone(),
            s.subject_age.to_string(),
            s.subject_sex.to_string(),
            s.phrase_id.clone(),
            s.char_index.map(|c| c.to_string()).unwrap_or_default(),
            s.audio_path.to_string_lossy().into_owned(),
            s.annotations[0].to_string(),
            s.annotations[1].to_string(),
            format!("{}", s.duration_s),
        ])
        .map_err(ser)?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}

/// Per-subject demographic summary. Each subject counts once, with the age and
/// sex of their first row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Demographics {
    pub subjects: usize,
    pub female: usize,
    pub male: usize,
    /// age -> (female, male)
    pub by_age: BTreeMap<u32, (usize, usize)>,
}

impl Demographics {
    pub fn from_samples(samples: &[SpeechSample]) -> Self {
        let mut subjects: BTreeMap<&str, (u32, Sex)> = BTreeMap::new();
        for s in samples {
            subjects
                .entry(s.subject_id.as_str())
                .or_insert((s.subject_age, s.subject_sex));
        }
        let mut by_age: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for &(age, sex) in subjects.values() {
            let e = by_age.entry(age).or_default();
            match sex {
                Sex::F => e.0 += 1,
                Sex::M => e.1 += 1,
            }
        }
        Demographics {
            subjects: subjects.len(),
            female: by_age.values().map(|e| e.0).sum(),
            male: by_age.values().map(|e| e.1).sum(),
            by_age,
        }
    }
}
