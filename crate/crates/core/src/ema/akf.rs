//! AKF binary interchange format.
//!
//! Little-endian layout:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `AKF1` (the trailing digit is the format version) |
//! | 1 | kind: 0 = features, 1 = EMA |
//! | 4 | `u32` frame count T |
//! | 4 | `u32` dimension D |
//! | 8 | `f64` frame rate (EMA) or frame hop in seconds (features) |
//! | 4 | `u32` metadata length |
//! | n | UTF-8 JSON metadata |
//! | 4·T·D | `f32` values, row-major |

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::channel::{ArticulatorChannel, N_CHANNELS};
use super::{EmaError, EmaTrajectory, FeatureMatrix};
use crate::Scalar;

pub const MAGIC_PREFIX: &[u8; 3] = b"AKF";
pub const VERSION: u8 = b'1';
const FIXED_HEADER: usize = 4 + 1 + 4 + 4 + 8 + 4;

#[derive(Debug, thiserror::Error)]
pub enum AkfError {
    #[error("bad magic {0:?}, not an AKF file")]
    BadMagic([u8; 4]),
    #[error("unsupported AKF version `{}`", *.0 as char)]
    UnsupportedVersion(u8),
    #[error("unknown record kind {0}")]
    UnknownKind(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] EmaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AkfKind {
    Features = 0,
    Ema = 1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    speaker_id: String,
    utterance_id: String,
    #[serde(default)]
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel_order: Option<Vec<ArticulatorChannel>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AkfRecord<F> {
    Features(FeatureMatrix<F>),
    Ema(EmaTrajectory<F>),
}

impl<F: Scalar> AkfRecord<F> {
    pub fn kind(&self) -> AkfKind {
        match self {
            AkfRecord::Features(_) => AkfKind::Features,
            AkfRecord::Ema(_) => AkfKind::Ema,
        }
    }

    pub fn into_features(self) -> Result<FeatureMatrix<F>, AkfError> {
        match self {
            AkfRecord::Features(f) => Ok(f),
            AkfRecord::Ema(e) => Err(AkfError::DimensionMismatch(format!(
                "{}: expected a feature record, found EMA",
                e.utterance_id
            ))),
        }
    }

    pub fn into_ema(self) -> Result<EmaTrajectory<F>, AkfError> {
        match self {
            AkfRecord::Ema(e) => Ok(e),
            AkfRecord::Features(f) => Err(AkfError::DimensionMismatch(format!(
                "{}: expected an EMA record, found features",
                f.utterance_id
            ))),
        }
    }
}

impl<F> From<FeatureMatrix<F>> for AkfRecord<F> {
    fn from(f: FeatureMatrix<F>) -> Self {
        AkfRecord::Features(f)
    }
}

impl<F> From<EmaTrajectory<F>> for AkfRecord<F> {
    fn from(e: EmaTrajectory<F>) -> Self {
        AkfRecord::Ema(e)
    }
}

pub fn encode_akf<F: Scalar>(record: &AkfRecord<F>) -> Result<Vec<u8>, AkfError> {
    let (kind, rate, values, meta) = match record {
        AkfRecord::Features(f) => (
            AkfKind::Features,
            f.frame_hop,
            &f.values,
            Metadata {
                speaker_id: f.speaker_id.clone(),
                utterance_id: f.utterance_id.clone(),
                source: f.source.clone(),
                channel_order: None,
            },
        ),
        AkfRecord::Ema(e) => (
            AkfKind::Ema,
            e.frame_rate,
            &e.samples,
            Metadata {
                speaker_id: e.speaker_id.clone(),
                utterance_id: e.utterance_id.clone(),
                source: "ema".into(),
                channel_order: Some(e.channel_order.clone()),
            },
        ),
    };
    let meta = serde_json::to_vec(&meta)?;
    let (t, d) = values.dim();
    let to_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| AkfError::DimensionMismatch(format!("{what} {n} exceeds u32")))
    };
    let mut out = Vec::with_capacity(FIXED_HEADER + meta.len() + 4 * t * d);
    out.extend_from_slice(MAGIC_PREFIX);
    out.push(VERSION);
    out.push(kind as u8);
    out.extend_from_slice(&to_u32(t, "frame count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&to_u32(meta.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(&meta);
    for v in values.iter() {
        let v = v.to_f32().unwrap_or(f32::NAN);
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, expected_total: usize) -> Result<&'a [u8], AkfError> {
        if self.buf.len() < self.pos + n {
            return Err(AkfError::TruncatedPayload {
                expected: expected_total.max(self.pos + n),
                found: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, AkfError> {
        Ok(u32::from_le_bytes(self.take(4, 0)?.try_into().unwrap()))
    }
}

pub fn decode_akf<F: Scalar>(bytes: &[u8]) -> Result<AkfRecord<F>, AkfError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(AkfError::TruncatedPayload {
            expected: FIXED_HEADER,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = r.take(4, FIXED_HEADER)?.try_into().unwrap();
    if &magic[..3] != MAGIC_PREFIX {
        return Err(AkfError::BadMagic(magic));
    }
    if magic[3] != VERSION {
        return Err(AkfError::UnsupportedVersion(magic[3]));
    }
    let kind = match r.take(1, FIXED_HEADER)?[0] {
        0 => AkfKind::Features,
        1 => AkfKind::Ema,
        other => return Err(AkfError::UnknownKind(other)),
    };
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    let rate = f64::from_le_bytes(r.take(8, FIXED_HEADER)?.try_into().unwrap());
    let meta_len = r.u32()? as usize;
    if d == 0 {
        return Err(AkfError::DimensionMismatch("dimension field is 0".into()));
    }
    if t == 0 {
        return Err(AkfError::DimensionMismatch("frame count field is 0".into()));
    }
    if kind == AkfKind::Ema && d != N_CHANNELS {
        return Err(AkfError::DimensionMismatch(format!(
            "EMA record must have {N_CHANNELS} channels, header says {d}"
        )));
    }
    let payload = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| AkfError::DimensionMismatch(format!("{t}×{d} overflows")))?;
    let expected_total = FIXED_HEADER + meta_len + payload;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, expected_total)?)?;
    let raw = r.take(payload, expected_total)?;
    if r.pos != bytes.len() {
        return Err(AkfError::DimensionMismatch(format!(
            "header declares {t}×{d} values but payload has {} extra bytes",
            bytes.len() - r.pos
        )));
    }
    let values = Array2::from_shape_vec(
        (t, d),
        raw.chunks_exact(4)
            .map(|c| F::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
    )
    .expect("payload length checked");
    Ok(match kind {
        AkfKind::Features => AkfRecord::Features(FeatureMatrix::new(
            meta.speaker_id,
            meta.utterance_id,
            meta.source,
            rate,
            values,
        )?),
        AkfKind::Ema => AkfRecord::Ema(EmaTrajectory::new(
            meta.speaker_id,
            meta.utterance_id,
            rate,
            values,
            meta.channel_order
                .unwrap_or_else(|| ArticulatorChannel::CANONICAL.to_vec()),
        )?),
    })
}

pub fn read_akf<F: Scalar>(path: impl AsRef<Path>) -> Result<AkfRecord<F>, AkfError> {
    decode_akf(&fs::read(path)?)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_akf<F: Scalar>(record: &AkfRecord<F>, path: impl AsRef<Path>) -> Result<(), AkfError> {
    let path = path.as_ref();
    let bytes = encode_akf(record)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("akf.tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
