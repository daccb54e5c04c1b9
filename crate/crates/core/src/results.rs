//! Results and ground-truth CSV files.
//!
//! Results: header `scene_id,rank,object_id,score`, ranks dense from 1, score
//! with six decimals, rows ordered by scene then rank. Ground truth: header
//! `scene_id,object_id`, one row per scene. Both use LF line endings.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::retrieval::RankedList;

pub const RESULTS_HEADER: &str = "scene_id,rank,object_id,score";
pub const TRUTH_HEADER: &str = "scene_id,object_id";

/// Scene id to ranked object ids, best first.
pub type Rankings = BTreeMap<String, Vec<String>>;

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected header {expected:?}, found {found:?}")]
    BadHeader { expected: &'static str, found: String },
    #[error("scene {scene_id}: expected rank {expected}, found {found}")]
    NonDenseRank {
        scene_id: String,
        expected: usize,
        found: usize,
    },
    #[error("scene {scene_id}: rows are not contiguous")]
    InterleavedScene { scene_id: String },
    #[error("scene {scene_id}: object {object_id} listed twice")]
    DuplicateObject { scene_id: String, object_id: String },
    #[error("duplicate ground-truth row for scene {0}")]
    DuplicateScene(String),
    #[error("identifier {0:?} cannot be written without quoting")]
    UnsafeId(String),
}

fn check_id(id: &str) -> Result<(), CsvError> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
        return Err(CsvError::UnsafeId(id.to_owned()));
    }
    Ok(())
}

/// Writes the results CSV; lists are sorted by scene id first.
pub fn write_results_csv<W: Write>(mut out: W, lists: &[RankedList]) -> Result<(), CsvError> {
    let mut sorted: Vec<&RankedList> = lists.iter().collect();
    sorted.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    out.write_all(RESULTS_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for list in sorted {
        check_id(&list.scene_id)?;
        for (i, e) in list.entries.iter().enumerate() {
            check_id(&e.object_id)?;
            writeln!(out, "{},{},{},{:.6}", list.scene_id, i + 1, e.object_id, e.score)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn results_to_string(lists: &[RankedList]) -> Result<String, CsvError> {
    let mut buf = Vec::new();
    write_results_csv(&mut buf, lists)?;
    Ok(String::from_utf8(buf).expect("ids are checked UTF-8 strings"))
}

#[derive(Deserialize)]
struct ResultRow {
    scene_id: String,
    rank: usize,
    object_id: String,
    #[allow(dead_code)]
    score: f64,
}

fn reader<R: Read>(input: R, expected: &'static str) -> Result<csv::Reader<R>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if found != expected {
        return Err(CsvError::BadHeader { expected, found });
    }
    Ok(rdr)
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Rankings, CsvError> {
    let mut rdr = reader(input, RESULTS_HEADER)?;
    let mut out = Rankings::new();
    let mut current: Option<String> = None;
    for row in rdr.deserialize() {
        let row: ResultRow = row?;
        if current.as_deref() != Some(row.scene_id.as_str()) {
            if out.contains_key(&row.scene_id) {
                return Err(CsvError::InterleavedScene { scene_id: row.scene_id });
            }
            current = Some(row.scene_id.clone());
        }
        let list = out.entry(row.scene_id.clone()).or_default();
        if row.rank != list.len() + 1 {
            return Err(CsvError::NonDenseRank {
                scene_id: row.scene_id,
                expected: list.len() + 1,
                found: row.rank,
            });
        }
        if list.contains(&row.object_id) {
            return Err(CsvError::DuplicateObject {
                scene_id: row.scene_id,
                object_id: row.object_id,
            });
        }
        list.push(row.object_id);
    }
    Ok(out)
}

pub fn rankings_from_lists(lists: &[RankedList]) -> Rankings {
    lists
        .iter()
        .map(|l| (l.scene_id.clone(), l.ids().map(str::to_owned).collect()))
        .collect()
}

pub fn read_truth_csv<R: Read>(input: R) -> Result<BTreeMap<String, String>, CsvError> {
    let mut rdr = reader(input, TRUTH_HEADER)?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let (scene_id, object_id): (String, String) = row?;
        if out.insert(scene_id.clone(), object_id).is_some() {
            return Err(CsvError::DuplicateScene(scene_id));
        }
    }
    Ok(out)
}

pub fn write_truth_csv<W: Write>(mut out: W, truth: &BTreeMap<String, String>) -> Result<(), CsvError> {
    out.write_all(TRUTH_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for (scene, object) in truth {
        check_id(scene)?;
        check_id(object)?;
        writeln!(out, "{scene},{object}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{RankedEntry, Strategy};

    fn list(scene: &str, entries: &[(&str, f64)]) -> RankedList {
        RankedList {
            scene_id: scene.into(),
            strategy: Strategy::TextOnly,
            entries: entries
                .iter()
                .map(|(id, s)| RankedEntry {
                    object_id: id.to_string(),
                    score: *s,
                })
                .collect(),
        }
    }

    #[test]
    fn exact_results_layout() {
        let lists = [
            list("s2", &[("b", 0.5)]),
            list("s1", &[("a", 0.9), ("c", -0.123_456_78)]),
        ];
        let text = results_to_string(&lists).unwrap();
        assert_eq!(
            text,
            "scene_id,rank,object_id,score\n\
             s1,1,a,0.900000\n\
             s1,2,c,-0.123457\n\
             s2,1,b,0.500000\n"
        );
        let parsed = read_results_csv(text.as_bytes()).unwrap();
        assert_eq!(parsed, rankings_from_lists(&lists));
    }

    #[test]
    fn results_reader_validates() {
        let bad_header = "scene,rank,object_id,score\n";
        assert!(matches!(
            read_results_csv(bad_header.as_bytes()),
            Err(CsvError::BadHeader { .. })
        ));
        let gap = "scene_id,rank,object_id,score\ns1,1,a,1.0\ns1,3,b,0.5\n";
        assert!(matches!(
            read_results_csv(gap.as_bytes()),
            Err(CsvError::NonDenseRank { .. })
        ));
        let interleaved = "scene_id,rank,object_id,score\ns1,1,a,1\ns2,1,a,1\ns1,2,b,1\n";
        assert!(matches!(
            read_results_csv(interleaved.as_bytes()),
            Err(CsvError::InterleavedScene { .. })
        ));
        let dup = "scene_id,rank,object_id,score\ns1,1,a,1\ns1,2,a,1\n";
        assert!(matches!(
            read_results_csv(dup.as_bytes()),
            Err(CsvError::DuplicateObject { .. })
        ));
    }

    #[test]
    fn truth_round_trip_and_duplicates() {
        let truth: BTreeMap<String, String> = [("s1", "a"), ("s2", "b")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut buf = Vec::new();
        write_truth_csv(&mut buf, &truth).unwrap();
        assert_eq!(buf, b"scene_id,object_id\ns1,a\ns2,b\n");
        assert_eq!(read_truth_csv(&buf[..]).unwrap(), truth);
        let dup = "scene_id,object_id\ns1,a\ns1,b\n";
        assert!(matches!(
            read_truth_csv(dup.as_bytes()),
            Err(CsvError::DuplicateScene(_))
        ));
    }

    #[test]
    fn ids_needing_quotes_are_rejected() {
        assert!(matches!(
            results_to_string(&[list("s,1", &[("a", 1.0)])]),
            Err(CsvError::UnsafeId(_))
        ));
    }
}
