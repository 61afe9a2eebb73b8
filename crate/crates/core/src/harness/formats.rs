//! On-disk record and tensor formats.
//!
//! JSONL files hold one JSON object per line; blank lines are skipped.
//!
//! - captions: `{"id": "...", "caption": "...", "ground_truth": ["dog", ...]}`
//! - ground truth: `{"id": "...", "ground_truth": [...]}`
//! - POPE answers: `{"id": "...", "predicted": "yes", "gold": "no"}`
//!
//! Tensors use a little-endian container:
//!
//! ```text
//! magic   b"MFPB"
//! version u32 = 1
//! kind    u32   (1 = token sequence, 2 = fusion parameters)
//! blocks  u32   (1 for tokens: L x dim; 3 for parameters: Wq, Wk, Wv)
//! per block: rows u64, cols u64, rows*cols f64 row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::linalg::{Matrix, TokenSequence};
use crate::metrics::{CaptionRecord, PopeRecord, SynonymTable};

pub const MAGIC: &[u8; 4] = b"MFPB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum TensorKind {
    Tokens = 1,
    Params = 2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub id: String,
    pub caption: String,
    #[serde(default)]
    pub ground_truth: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLine {
    pub id: String,
    pub ground_truth: Vec<String>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses JSONL, reporting the 1-based line number of the first bad line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::data(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&read_text(path)?, path)
}

pub fn read_synonyms(path: &Path) -> Result<SynonymTable> {
    SynonymTable::from_json(&read_text(path)?).map_err(|e| Error::data(path, e.to_string()))
}

/// Loads captions and turns each into a scored record.
pub fn read_caption_records(path: &Path, table: &SynonymTable) -> Result<Vec<CaptionRecord>> {
    let lines: Vec<CaptionLine> = read_jsonl(path)?;
    lines
        .iter()
        .map(|l| {
            CaptionRecord::from_caption(l.id.clone(), &l.caption, &l.ground_truth, table)
                .map_err(|e| Error::data(path, e.to_string()))
        })
        .collect()
}

pub fn read_pope(path: &Path) -> Result<Vec<PopeRecord>> {
    read_jsonl(path)
}

/// Ground truth keyed by id; duplicate ids are rejected.
pub fn read_ground_truth(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let lines: Vec<GroundTruthLine> = read_jsonl(path)?;
    let mut map = BTreeMap::new();
    for l in lines {
        if map.insert(l.id.clone(), l.ground_truth).is_some() {
            return Err(Error::data(path, format!("duplicate id {:?}", l.id)));
        }
    }
    Ok(map)
}

fn encode_blocks(kind: TensorKind, blocks: &[&Matrix<f64>]) -> Vec<u8> {
    let payload: usize = blocks.iter().map(|m| 16 + 8 * m.as_slice().len()).sum();
    let mut out = Vec::with_capacity(16 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for m in blocks {
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_blocks(bytes: &[u8], kind: TensorKind) -> std::result::Result<Vec<Matrix<f64>>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let found = r.u32()?;
    if found != kind as u32 {
        return Err(format!("expected kind {}, found {found}", kind as u32));
    }
    let n = r.u32()?;
    let mut blocks = Vec::new();
    for _ in 0..n {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let count = rows.checked_mul(cols).ok_or("block size overflow")?;
        let raw = r.take(count.checked_mul(8).ok_or("block size overflow")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        blocks.push(Matrix::new(rows, cols, data).map_err(|e| e.to_string())?);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(blocks)
}

pub fn encode_tokens(tokens: &TokenSequence<f64>) -> Vec<u8> {
    encode_blocks(TensorKind::Tokens, &[tokens.as_matrix()])
}

pub fn decode_tokens(bytes: &[u8]) -> std::result::Result<TokenSequence<f64>, String> {
    let mut blocks = decode_blocks(bytes, TensorKind::Tokens)?;
    if blocks.len() != 1 {
        return Err(format!("token file holds {} blocks, expected 1", blocks.len()));
    }
    let m = blocks.pop().unwrap();
    TokenSequence::new(m.rows(), m.cols(), m.as_slice().to_vec()).map_err(|e| e.to_string())
}

pub fn encode_params(params: &FusionParams<f64>) -> Vec<u8> {
    encode_blocks(TensorKind::Params, &params.matrices())
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<FusionParams<f64>, String> {
    let blocks = decode_blocks(bytes, TensorKind::Params)?;
    let [q, k, v]: [Matrix<f64>; 3] = blocks
        .try_into()
        .map_err(|b: Vec<_>| format!("parameter file holds {} blocks, expected 3", b.len()))?;
    FusionParams::new(q, k, v).map_err(|e| e.to_string())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tokens(path: &Path) -> Result<TokenSequence<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tokens(&bytes).map_err(|m| Error::data(path, m))
}

pub fn read_params(path: &Path) -> Result<FusionParams<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes).map_err(|m| Error::data(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::init_params;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn token_container_round_trips(len in 1usize..6, dim in 1usize..6, seed in any::<u64>()) {
            let mut r = crate::rng::seeded(seed);
            let data = (0..len * dim).map(|_| crate::rng::uniform::<f64, _>(&mut r, -1e6, 1e6)).collect();
            let t = TokenSequence::new(len, dim, data).unwrap();
            let bytes = encode_tokens(&t);
            prop_assert_eq!(bytes.len(), 16 + 16 + 8 * len * dim);
            prop_assert_eq!(decode_tokens(&bytes).unwrap(), t);
        }
    }

    #[test]
    fn params_round_trip_and_kind_check() {
        let p = init_params::<f64>(3, 4).unwrap();
        let bytes = encode_params(&p);
        assert_eq!(decode_params(&bytes).unwrap(), p);
        assert!(decode_tokens(&bytes).unwrap_err().contains("expected kind 1"));
    }

    #[test]
    fn corrupt_containers_rejected() {
        let t = TokenSequence::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_tokens(&t);
        assert!(decode_tokens(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_tokens(&bad).unwrap_err(), "bad magic");
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_tokens(&extra).unwrap_err().contains("trailing"));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode_tokens(&v2).unwrap_err().contains("version"));
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let text = "{\"id\":\"a\",\"predicted\":\"yes\",\"gold\":\"yes\"}\n\nnot json\n";
        let err = parse_jsonl::<PopeRecord>(text, Path::new("answers.jsonl")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
