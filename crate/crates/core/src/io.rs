//! On-disk formats.
//!
//! A dataset directory holds:
//!
//! * `labels.json`: `{"names": [...], "o_index": n}`
//! * `embeddings.bin`: `GLDE` magic, `u32` version 1, `u64` row count,
//!   `u32` dim, then `count × dim` little-endian `f32`, rows in ascending id
//!   order. No trailing bytes.
//! * `records.jsonl`: one `{"id", "split", "gold", "pseudo"}` object per line,
//!   ids strictly ascending, unknown keys rejected.
//! * `truth.json` (synthetic datasets): generator parameters and gold labels.
//! * `run.json` (optional): run settings recommended for this dataset.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::EpochMetrics;
use crate::refine::DirectionStats;
use crate::types::{Dataset, Embedding, LabelSpace, Record, SoftLabel, Split};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"GLDE";
pub const EMBEDDING_VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 20;

pub const LABELS_FILE: &str = "labels.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const TRUTH_FILE: &str = "truth.json";
pub const RUN_CONFIG_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Writes through a sibling temp file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

// ---------------------------------------------------------------- embeddings

pub fn encode_embeddings<'a, I>(rows: I, dim: usize) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut payload = Vec::new();
    let mut count = 0u64;
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        for v in row {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        count += 1;
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::ConfigInvalid("dim exceeds u32".into()))?;
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + payload.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parsed embedding matrix, widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub count: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let fail = |offset: usize, msg: String| Error::format(path, offset as u64, msg);
    if bytes.len() < EMBEDDING_HEADER_LEN {
        return Err(fail(
            bytes.len(),
            format!("truncated header ({} bytes)", bytes.len()),
        ));
    }
    if &bytes[0..4] != EMBEDDING_MAGIC {
        return Err(fail(0, "bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != EMBEDDING_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let dim = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as u64;
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(8, "payload size overflows".into()))?;
    let actual = (bytes.len() - EMBEDDING_HEADER_LEN) as u64;
    if actual < expected {
        return Err(fail(
            bytes.len(),
            format!("payload truncated: {actual} of {expected} bytes"),
        ));
    }
    if actual > expected {
        return Err(fail(
            EMBEDDING_HEADER_LEN + expected as usize,
            format!("{} trailing bytes", actual - expected),
        ));
    }
    let payload = &bytes[EMBEDDING_HEADER_LEN..];
    let mut values = Vec::with_capacity((count * dim) as usize);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(fail(
                EMBEDDING_HEADER_LEN + 4 * i,
                "non-finite value".into(),
            ));
        }
        values.push(f64::from(v));
    }
    Ok(EmbeddingMatrix {
        count: count as usize,
        dim: dim as usize,
        values,
    })
}

// ------------------------------------------------------------------- records

/// One line of a records file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub id: u64,
    pub split: Split,
    pub gold: Option<usize>,
    pub pseudo: Option<Vec<f64>>,
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        let line = RecordLine {
            id: r.id,
            split: r.split,
            gold: r.gold,
            pseudo: r.pseudo.as_ref().map(|p| p.probs().to_vec()),
        };
        serde_json::to_writer(&mut out, &line).expect("record line serializes");
        out.push(b'\n');
    }
    Ok(out)
}

/// Strict parse; `n_classes` bounds gold labels and fixes pseudo length.
pub fn decode_records(path: &Path, bytes: &[u8], n_classes: usize) -> Result<Vec<RecordLine>> {
    let mut lines = Vec::new();
    let mut offset = 0usize;
    let mut prev: Option<u64> = None;
    for raw in bytes.split_inclusive(|b| *b == b'\n') {
        let start = offset;
        offset += raw.len();
        let text = raw.strip_suffix(b"\n").unwrap_or(raw);
        if text.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let line: RecordLine = serde_json::from_slice(text).map_err(|e| {
            let col = e.column().saturating_sub(1);
            Error::format(path, (start + col) as u64, e.to_string())
        })?;
        let fail = |msg: String| Error::format(path, start as u64, msg);
        if let Some(p) = prev {
            if line.id <= p {
                return Err(fail(format!(
                    "id {} not strictly ascending after {p}",
                    line.id
                )));
            }
        }
        if let Some(g) = line.gold {
            if g >= n_classes {
                return Err(fail(format!(
                    "gold {g} out of range for {n_classes} classes"
                )));
            }
        }
        if let Some(p) = &line.pseudo {
            if p.len() != n_classes {
                return Err(fail(format!(
                    "pseudo has {} entries, expected {n_classes}",
                    p.len()
                )));
            }
            SoftLabel::new(p.clone()).map_err(|e| fail(e.to_string()))?;
        }
        prev = Some(line.id);
        lines.push(line);
    }
    Ok(lines)
}

// ------------------------------------------------------------------- dataset

pub fn write_labels(path: &Path, labels: &LabelSpace) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(labels).expect("labels serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_labels(path: &Path) -> Result<LabelSpace> {
    let bytes = read_bytes(path)?;
    let labels: LabelSpace =
        serde_json::from_slice(&bytes).map_err(|e| json_error(path, &bytes, &e))?;
    labels.validate()?;
    Ok(labels)
}

fn json_error(path: &Path, bytes: &[u8], e: &serde_json::Error) -> Error {
    // serde_json reports 1-based line/column; convert to a byte offset.
    let line_start: usize = bytes
        .split_inclusive(|b| *b == b'\n')
        .take(e.line().saturating_sub(1))
        .map(<[u8]>::len)
        .sum();
    Error::format(
        path,
        (line_start + e.column().saturating_sub(1)) as u64,
        e.to_string(),
    )
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| json_error(path, &bytes, &e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_labels(&dir.join(LABELS_FILE), &dataset.labels)?;
    let emb = encode_embeddings(
        dataset.records.iter().map(|r| r.embedding.values()),
        dataset.dim(),
    )?;
    write_atomic(&dir.join(EMBEDDINGS_FILE), &emb)?;
    write_atomic(&dir.join(RECORDS_FILE), &encode_records(&dataset.records)?)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    let rec_path = dir.join(RECORDS_FILE);
    let lines = decode_records(&rec_path, &read_bytes(&rec_path)?, labels.len())?;
    let emb_path = dir.join(EMBEDDINGS_FILE);
    let matrix = decode_embeddings(&emb_path, &read_bytes(&emb_path)?)?;
    if matrix.count != lines.len() {
        return Err(Error::format(
            &emb_path,
            8,
            format!(
                "{} embedding rows for {} records",
                matrix.count,
                lines.len()
            ),
        ));
    }
    let records = lines
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            Ok(Record {
                id: line.id,
                split: line.split,
                gold: line.gold,
                pseudo: line.pseudo.map(SoftLabel::new).transpose()?,
                embedding: Embedding::new(matrix.row(i).to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(labels, records)
}

// ------------------------------------------------------------------- metrics

#[derive(Serialize)]
struct MetricsLine<'a> {
    epoch: usize,
    pseudo_f1: f64,
    probe_test_f1: f64,
    beta: f64,
    thresholds_global: Vec<f64>,
    thresholds_local: Vec<f64>,
    direction_stats: &'a DirectionStats,
}

/// One JSON object per line, reals rounded to 9 significant digits.
pub fn encode_metrics(metrics: &[EpochMetrics]) -> Vec<u8> {
    let round = |v: &[f64]| v.iter().copied().map(round_sig9).collect::<Vec<_>>();
    let mut out = Vec::new();
    for m in metrics {
        let line = MetricsLine {
            epoch: m.epoch,
            pseudo_f1: round_sig9(m.pseudo_f1),
            probe_test_f1: round_sig9(m.probe_test_f1),
            beta: round_sig9(m.beta),
            thresholds_global: round(&m.thresholds_global),
            thresholds_local: round(&m.thresholds_local),
            direction_stats: &m.direction_stats,
        };
        serde_json::to_writer(&mut out, &line).expect("metrics serialize");
        out.push(b'\n');
    }
    out
}

pub fn decode_metrics(path: &Path, bytes: &[u8]) -> Result<Vec<EpochMetrics>> {
    let mut out: Vec<EpochMetrics> = Vec::new();
    let mut offset = 0usize;
    for raw in bytes.split_inclusive(|b| *b == b'\n') {
        let start = offset;
        offset += raw.len();
        let text = raw.strip_suffix(b"\n").unwrap_or(raw);
        if text.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let m: EpochMetrics = serde_json::from_slice(text).map_err(|e| {
            Error::format(
                path,
                (start + e.column().saturating_sub(1)) as u64,
                e.to_string(),
            )
        })?;
        if out.last().is_some_and(|p| p.epoch >= m.epoch) {
            return Err(Error::format(
                path,
                start as u64,
                "epochs not strictly ascending",
            ));
        }
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn embedding_header_layout() {
        let rows = [vec![1.0, -0.5], vec![0.25, 2.0]];
        let bytes = encode_embeddings(rows.iter().map(Vec::as_slice), 2).unwrap();
        assert_eq!(bytes.len(), 20 + 16);
        assert_eq!(&bytes[..4], b"GLDE");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[2, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        let m = decode_embeddings(Path::new("x"), &bytes).unwrap();
        assert_eq!(m.row(1), &[0.25, 2.0]);
    }

    #[test]
    fn payload_size_for_3500_rows() {
        let row = vec![0.5; 32];
        let bytes = encode_embeddings(std::iter::repeat_n(row.as_slice(), 3500), 32).unwrap();
        assert_eq!(bytes.len(), 448_000 + 20);
    }

    #[test]
    fn embedding_format_errors_carry_offsets() {
        let good = encode_embeddings([&[1.0, 2.0][..]], 2).unwrap();
        let p = Path::new("e.bin");
        let offset = |b: &[u8]| match decode_embeddings(p, b) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected format error, got {other:?}"),
        };
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(offset(&bad), 4);
        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(offset(&bad), 28);
        assert_eq!(offset(&good[..25]), 25);
        assert_eq!(offset(&good[..10]), 10);
        let mut bad = good.clone();
        bad[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset(&bad), 24);
    }

    #[test]
    fn records_parse_is_strict() {
        let p = Path::new("r.jsonl");
        let ok = b"{\"id\":0,\"split\":\"source\",\"gold\":1,\"pseudo\":null}\n{\"id\":2,\"split\":\"target\",\"gold\":null,\"pseudo\":[0.25,0.75]}\n";
        let lines = decode_records(p, ok, 2).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].pseudo, Some(vec![0.25, 0.75]));

        let unknown = b"{\"id\":0,\"split\":\"source\",\"gold\":1,\"pseudo\":null,\"x\":1}\n";
        assert!(matches!(
            decode_records(p, unknown, 2),
            Err(Error::Format { .. })
        ));
        let descending = b"{\"id\":3,\"split\":\"source\",\"gold\":1,\"pseudo\":null}\n{\"id\":3,\"split\":\"source\",\"gold\":1,\"pseudo\":null}\n";
        match decode_records(p, descending, 2) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 49),
            other => panic!("{other:?}"),
        }
        let wrong_len = b"{\"id\":0,\"split\":\"target\",\"gold\":null,\"pseudo\":[1.0]}\n";
        assert!(decode_records(p, wrong_len, 2).is_err());
        let bad_split = b"{\"id\":0,\"split\":\"dev\",\"gold\":null,\"pseudo\":null}\n";
        assert!(decode_records(p, bad_split, 2).is_err());
        let bad_gold = b"{\"id\":0,\"split\":\"source\",\"gold\":5,\"pseudo\":null}\n";
        assert!(decode_records(p, bad_gold, 2).is_err());
    }

    #[test]
    fn sig9_rounding() {
        assert_eq!(round_sig9(0.95 - 0.15 / 7.0), 0.928571429);
        assert_eq!(round_sig9(0.0), 0.0);
        assert_eq!(round_sig9(123456789.4), 123456789.0);
        assert_eq!(round_sig9(-1.0 / 3.0), -0.333333333);
    }

    proptest! {
        #[test]
        fn records_round_trip(raw in prop::collection::vec((0u8..3, prop::option::of(0usize..3), prop::option::of(prop::collection::vec(0.01f64..1.0, 3))), 0..20)) {
            let records: Vec<Record> = raw.iter().enumerate().map(|(i, (s, g, p))| Record {
                id: (i * 3) as u64,
                split: [Split::Source, Split::Target, Split::TargetTest][*s as usize],
                gold: *g,
                pseudo: p.as_ref().map(|v| {
                    let sum: f64 = v.iter().sum();
                    SoftLabel::new(v.iter().map(|x| x / sum).collect()).unwrap()
                }),
                embedding: Embedding::new(vec![0.0]).unwrap(),
            }).collect();
            let bytes = encode_records(&records).unwrap();
            let lines = decode_records(Path::new("r"), &bytes, 3).unwrap();
            prop_assert_eq!(lines.len(), records.len());
            for (l, r) in lines.iter().zip(&records) {
                prop_assert_eq!(l.id, r.id);
                prop_assert_eq!(l.split, r.split);
                prop_assert_eq!(l.gold, r.gold);
                prop_assert_eq!(l.pseudo.as_deref(), r.pseudo.as_ref().map(|p| p.probs()));
            }
        }

        #[test]
        fn f32_embeddings_round_trip(rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 5), 0..10)) {
            let wide: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| f64::from(*v)).collect()).collect();
            let bytes = encode_embeddings(wide.iter().map(Vec::as_slice), 5).unwrap();
            let m = decode_embeddings(Path::new("e"), &bytes).unwrap();
            prop_assert_eq!(m.count, rows.len());
            prop_assert_eq!(m.values, wide.concat());
        }
    }
}
