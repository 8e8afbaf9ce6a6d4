//! Binary model artifact.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config and vocabularies), then both embedding tables as
//! little-endian `f64` in row-major order. Floats are stored bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nbow::{Matrix, RetrievalModel, TrainConfig};
use super::vocab::Vocabulary;
use super::EngineError;

pub const MAGIC: &[u8; 8] = b"AUGCMDL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    vocab_x: Vocabulary,
    vocab_y: Vocabulary,
    rows_x: usize,
    rows_y: usize,
    dim: usize,
}

pub fn to_bytes(model: &RetrievalModel) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        vocab_x: model.vocab_x.clone(),
        vocab_y: model.vocab_y.clone(),
        rows_x: model.emb_x.rows,
        rows_y: model.emb_y.rows,
        dim: model.config.dim,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + 8 * (model.emb_x.data.len() + model.emb_y.data.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in model.emb_x.data.iter().chain(&model.emb_y.data) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> EngineError {
    EngineError::ModelFile(msg.into())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], EngineError> {
    if bytes.len() < n {
        return Err(bad("truncated model file"));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_matrix(bytes: &mut &[u8], rows: usize, cols: usize) -> Result<Matrix, EngineError> {
    let raw = take(bytes, rows * cols * 8)?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("embedding table holds non-finite values"));
    }
    Ok(Matrix { rows, cols, data })
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<RetrievalModel, EngineError> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(bad("not an augcode model file"));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(take(&mut bytes, len)?).map_err(|e| bad(format!("header: {e}")))?;
    if header.rows_x != header.vocab_x.len() || header.rows_y != header.vocab_y.len() || header.dim != header.config.dim {
        return Err(bad("header dimensions disagree with vocabularies"));
    }
    let emb_x = read_matrix(&mut bytes, header.rows_x, header.dim)?;
    let emb_y = read_matrix(&mut bytes, header.rows_y, header.dim)?;
    if !bytes.is_empty() {
        return Err(bad("trailing bytes after embedding tables"));
    }
    Ok(RetrievalModel {
        vocab_x: header.vocab_x,
        vocab_y: header.vocab_y,
        emb_x,
        emb_y,
        config: header.config,
    })
}

pub fn save(model: &RetrievalModel, path: &Path) -> Result<(), EngineError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<RetrievalModel, EngineError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RetrievalModel {
        let v = Vocabulary::from_tokens(vec!["<unk>".into(), "a".into()], 1);
        RetrievalModel::initialize(
            v.clone(),
            v,
            TrainConfig {
                dim: 3,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = tiny();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), to_bytes(&m));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = to_bytes(&tiny());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(from_bytes(b"NOTMODEL....").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
