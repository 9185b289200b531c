//! Corpus file formats.
//!
//! JSONL: one `{"id": u64, "vector": [..], "labels": [..]?}` object per line.
//!
//! Binary (little-endian throughout):
//!
//! | offset | size | field                 |
//! |--------|------|-----------------------|
//! | 0      | 4    | magic `VSRE`          |
//! | 4      | 4    | format version, `1`   |
//! | 8      | 4    | dimension `D`         |
//! | 12     | 8    | record count          |
//! | 20     | ...  | records: `u64` id, `D` x `f32` |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{normalize_slice, Corpus, EmbeddingRecord, FeatureVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"VSRE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// One JSONL line, before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlRecord<T> {
    pub id: u64,
    pub vector: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
}

pub fn write_jsonl_records<T, W>(records: &[JsonlRecord<T>], mut out: W) -> Result<()>
where
    T: Serialize,
    W: Write,
{
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl_records<T, R>(input: R) -> Result<Vec<JsonlRecord<T>>>
where
    T: DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format {
            location: format!("line {}", i + 1),
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T, W>(corpus: &Corpus<T>, out: W) -> Result<()>
where
    T: Scalar + Serialize,
    W: Write,
{
    let records: Vec<JsonlRecord<T>> = corpus
        .records()
        .iter()
        .map(|r| JsonlRecord {
            id: r.id,
            vector: r.values().to_vec(),
            labels: corpus.labels_of(r.id).map(<[u32]>::to_vec),
        })
        .collect();
    write_jsonl_records(&records, out)
}

/// Reads a JSONL corpus, normalizing every vector.
pub fn read_jsonl<T, R>(input: R) -> Result<Corpus<T>>
where
    T: Scalar + DeserializeOwned,
    R: BufRead,
{
    let raw = read_jsonl_records::<T, _>(input)?;
    let mut records = Vec::with_capacity(raw.len());
    let mut labels = BTreeMap::new();
    for (i, r) in raw.into_iter().enumerate() {
        let at = |e: Error| Error::Format {
            location: format!("record {i} (id {})", r.id),
            reason: e.to_string(),
        };
        let v = FeatureVector::new(r.vector.clone()).map_err(at)?;
        let v = normalize_slice(v.as_slice()).map_err(at)?;
        records.push(EmbeddingRecord::new(r.id, v).map_err(at)?);
        if let Some(l) = r.labels {
            labels.insert(r.id, l);
        }
    }
    Corpus::with_labels(records, labels)
}

pub fn write_binary<T, W>(corpus: &Corpus<T>, out: W) -> Result<()>
where
    T: Scalar,
    W: Write,
{
    let mut out = BufWriter::new(out);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(corpus.dim() as u32).to_le_bytes())?;
    out.write_all(&(corpus.len() as u64).to_le_bytes())?;
    for r in corpus.records() {
        out.write_all(&r.id.to_le_bytes())?;
        for v in r.values() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact_at<R: Read>(input: &mut R, buf: &mut [u8], location: impl Fn() -> String) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format {
                location: location(),
                reason: "unexpected end of file".into(),
            }
        } else {
            Error::Io(e)
        }
    })
}

/// Reads a binary corpus. Vectors are normalized on load.
pub fn read_binary<T, R>(input: R) -> Result<Corpus<T>>
where
    T: Scalar,
    R: Read,
{
    let mut input = BufReader::new(input);
    let mut header = [0u8; HEADER_LEN];
    read_exact_at(&mut input, &mut header, || "header (byte 0)".into())?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format {
            location: "byte 0".into(),
            reason: "bad magic, expected VSRE".into(),
        });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            location: "byte 4".into(),
            reason: format!("unsupported format version {version}"),
        });
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if dim == 0 && count > 0 {
        return Err(Error::Format {
            location: "byte 8".into(),
            reason: "dimension 0".into(),
        });
    }
    let rec_len = 8 + 4 * dim;
    let mut buf = vec![0u8; rec_len];
    let mut records = Vec::new();
    for idx in 0..count {
        let offset = HEADER_LEN as u64 + idx * rec_len as u64;
        let loc = || format!("record {idx} (byte {offset})");
        read_exact_at(&mut input, &mut buf, loc)?;
        let id = u64::from_le_bytes(buf[0..8].try_into().unwrap());
        let values: Vec<T> = buf[8..]
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let rec = EmbeddingRecord::new(id, values).map_err(|e| Error::Format {
            location: loc(),
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format {
            location: format!("byte {}", HEADER_LEN as u64 + count * rec_len as u64),
            reason: "trailing bytes after last record".into(),
        });
    }
    Corpus::new(records)
}

/// Loads a corpus file, detecting the binary format by its magic bytes.
pub fn load_corpus<T>(path: &Path) -> Result<Corpus<T>>
where
    T: Scalar + DeserializeOwned,
{
    let mut f = File::open(path)?;
    let mut magic = [0u8; 4];
    let n = f.read(&mut magic)?;
    drop(f);
    let f = File::open(path)?;
    if n == 4 && &magic == MAGIC {
        read_binary(f)
    } else {
        read_jsonl(BufReader::new(f))
    }
}

/// Writes binary when the extension is `.bin` or `.vsre`, JSONL otherwise.
pub fn save_corpus<T>(corpus: &Corpus<T>, path: &Path) -> Result<()>
where
    T: Scalar + Serialize,
{
    let f = File::create(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("vsre") => write_binary(corpus, f),
        _ => write_jsonl(corpus, BufWriter::new(f)),
    }
}
