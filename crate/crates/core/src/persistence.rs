//! Versioned model files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                        |
//! |------------------|------------------------------------------------|
//! | 4                | magic `KDGM`                                   |
//! | 4                | format version, `u32`                          |
//! | 8                | header length `h`, `u64`                       |
//! | `h`              | UTF-8 JSON header (see [`Header`])             |
//! | 8                | weight count `n`, `u64`                        |
//! | `8 n`            | weights, `f64`, blocks in declared order       |
//! | 32               | SHA-256 of every preceding byte                |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, FormatError, Result};
use crate::net::{NetworkParams, NetworkShape};
use crate::pde::PdeModel;
use crate::trainer::{Provenance, TrainedModel};

pub const MAGIC: &[u8; 4] = b"KDGM";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Metadata stored ahead of the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model_name: String,
    pub layout: Vec<String>,
    pub model: PdeModel,
    pub shape: NetworkShape,
    pub provenance: Provenance,
    pub blocks: Vec<BlockInfo>,
}

impl Header {
    fn of(tm: &TrainedModel) -> Self {
        Header {
            model_name: tm.model.name().to_string(),
            layout: tm.model.layout().iter().map(|s| s.to_string()).collect(),
            model: tm.model.clone(),
            shape: tm.params.shape(),
            provenance: tm.provenance.clone(),
            blocks: tm
                .params
                .shape()
                .blocks()
                .into_iter()
                .map(|(name, rows, cols)| BlockInfo { name, rows, cols })
                .collect(),
        }
    }
}

pub fn to_bytes(tm: &TrainedModel) -> Vec<u8> {
    let header = serde_json::to_vec(&Header::of(tm)).expect("header serialises");
    let count: usize = tm.params.blocks().iter().map(Tensor::len).sum();
    let mut out = Vec::with_capacity(4 + 4 + 8 + header.len() + 8 + 8 * count + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for b in tm.params.blocks() {
        for w in b.data() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or(FormatError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Parses and validates a model file image. Nothing is returned unless
/// every check passes.
pub fn from_bytes(bytes: &[u8]) -> std::result::Result<TrainedModel, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| FormatError::Magic)? != MAGIC {
        return Err(FormatError::Magic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let header_len = usize::try_from(r.u64()?).map_err(|_| FormatError::Truncated)?;
    let header_bytes = r.take(header_len)?;
    let count = usize::try_from(r.u64()?).map_err(|_| FormatError::Truncated)?;
    let weight_bytes = r.take(count.checked_mul(8).ok_or(FormatError::Truncated)?)?;
    let body_end = r.pos;
    let digest = r.take(CHECKSUM_LEN)?;
    if r.pos != bytes.len() {
        return Err(FormatError::Header(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(FormatError::Checksum);
    }

    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| FormatError::Header(e.to_string()))?;
    let layout: Vec<String> = header
        .model
        .layout()
        .iter()
        .map(|s| s.to_string())
        .collect();
    if header.layout != layout
        || header.model.domain.names() != layout
        || header.model_name != header.model.name()
    {
        return Err(FormatError::Header(
            "declared layout disagrees with the model".into(),
        ));
    }
    if header.shape.input_dim != layout.len() {
        return Err(FormatError::Header(format!(
            "network takes {} inputs but the layout has {}",
            header.shape.input_dim,
            layout.len()
        )));
    }
    let expected_blocks: Vec<BlockInfo> = header
        .shape
        .blocks()
        .into_iter()
        .map(|(name, rows, cols)| BlockInfo { name, rows, cols })
        .collect();
    if header.blocks != expected_blocks {
        return Err(FormatError::Header(
            "block table disagrees with the network shape".into(),
        ));
    }
    let expected = header.shape.param_count();
    if count != expected {
        return Err(FormatError::WeightCount {
            expected,
            found: count,
        });
    }

    let mut weights = weight_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut blocks = Vec::with_capacity(expected_blocks.len());
    for b in &expected_blocks {
        let data: Vec<f64> = weights.by_ref().take(b.rows * b.cols).collect();
        if data.iter().any(|w| !w.is_finite()) {
            return Err(FormatError::NonFiniteWeight(b.name.clone()));
        }
        blocks.push(
            Tensor::new(vec![b.rows, b.cols], data)
                .map_err(|e| FormatError::Header(e.to_string()))?,
        );
    }
    let params = NetworkParams::from_blocks(header.shape, blocks)
        .map_err(|e| FormatError::Header(e.to_string()))?;
    header
        .model
        .domain
        .validate()
        .map_err(|e| FormatError::Header(e.to_string()))?;
    Ok(TrainedModel {
        model: header.model,
        params,
        provenance: header.provenance,
    })
}

/// Writes `tm` to `path`, replacing any existing file only once the new
/// contents are fully on disk.
pub fn save(tm: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(tm);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|k| Error::format(path, k))
}

/// Fails unless `tm` was trained on the input layout `expected`.
pub fn expect_layout(tm: &TrainedModel, expected: &[&str]) -> Result<()> {
    if tm.model.layout() != expected {
        return Err(Error::LayoutMismatch {
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: tm.model.layout().iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::PdeModel;

    fn sample() -> TrainedModel {
        let model = PdeModel::gbm_default();
        TrainedModel {
            params: NetworkParams::init_xavier(NetworkShape::new(4, 5, 2).unwrap(), 9),
            model,
            provenance: Provenance {
                config_hash: "abc".into(),
                best_loss: Some(0.125),
                best_epoch: Some(3),
                epochs_run: 4,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let tm = sample();
        let bytes = to_bytes(&tm);
        assert_eq!(&bytes[..4], b"KDGM");
        assert_eq!(from_bytes(&bytes).unwrap(), tm);
        assert_eq!(to_bytes(&from_bytes(&bytes).unwrap()), bytes);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = to_bytes(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(from_bytes(&bad), Err(FormatError::Magic));
        let mut newer = bytes.clone();
        newer[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert_eq!(
            from_bytes(&newer),
            Err(FormatError::Version {
                found: FORMAT_VERSION + 1,
                supported: FORMAT_VERSION
            })
        );
        assert_eq!(
            from_bytes(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated)
        );
        assert_eq!(from_bytes(&bytes[..2]), Err(FormatError::Magic));
    }

    #[test]
    fn flipped_weight_bit_fails_checksum() {
        let mut bytes = to_bytes(&sample());
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        assert_eq!(from_bytes(&bytes), Err(FormatError::Checksum));
    }

    #[test]
    fn layout_guard() {
        let tm = sample();
        assert!(expect_layout(&tm, PdeModel::gbm_default().layout()).is_ok());
        assert!(matches!(
            expect_layout(&tm, PdeModel::heston_default().layout()),
            Err(Error::LayoutMismatch { .. })
        ));
    }
}
