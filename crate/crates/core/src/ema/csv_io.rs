//! EMA CSV interchange: 12 headed columns in canonical order, plus a JSON
//! sidecar (`<stem>.json`) with the frame rate and speaker metadata.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::channel::{ArticulatorChannel, N_CHANNELS};
use super::{EmaError, EmaTrajectory, Gender, Group};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSidecar {
    pub frame_rate: f64,
    pub speaker_id: String,
    pub utterance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("sidecar {path}: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Invalid(#[from] EmaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_ema_csv<F: Scalar>(
    traj: &EmaTrajectory<F>,
    path: impl AsRef<Path>,
    extra: Option<&CsvSidecar>,
) -> Result<(), CsvError> {
    let path = path.as_ref();
    let canonical = traj.clone().into_canonical();
    let mut writer = csv::Writer::from_path(path).map_err(|source| CsvError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let wrap = |source| CsvError::Csv {
        path: path.to_path_buf(),
        source,
    };
    writer
        .write_record(ArticulatorChannel::CANONICAL.iter().map(|c| c.to_string()))
        .map_err(wrap)?;
    for row in canonical.samples.rows() {
        writer
            .write_record(row.iter().map(|v| format!("{v:e}")))
            .map_err(wrap)?;
    }
    writer.flush()?;
    let sidecar = CsvSidecar {
        frame_rate: traj.frame_rate,
        speaker_id: traj.speaker_id.clone(),
        utterance_id: traj.utterance_id.clone(),
        corpus: extra.and_then(|e| e.corpus.clone()),
        group: extra.and_then(|e| e.group),
        gender: extra.and_then(|e| e.gender),
    };
    let side = sidecar_path(path);
    fs::write(
        &side,
        serde_json::to_vec_pretty(&sidecar).map_err(|source| CsvError::Sidecar {
            path: side.clone(),
            source,
        })?,
    )?;
    Ok(())
}

/// Reads an EMA CSV and its sidecar. Columns may appear in any order as long
/// as all 12 channels are present; empty or NaN cells reject the utterance.
pub fn read_ema_csv<F: Scalar>(path: impl AsRef<Path>) -> Result<(EmaTrajectory<F>, CsvSidecar), CsvError> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let sidecar: CsvSidecar =
        serde_json::from_slice(&fs::read(&side)?).map_err(|source| CsvError::Sidecar {
            path: side.clone(),
            source,
        })?;
    let wrap = |source| CsvError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(wrap)?;
    let order: Vec<ArticulatorChannel> = reader
        .headers()
        .map_err(wrap)?
        .iter()
        .map(|h| h.parse())
        .collect::<Result<_, _>>()
        .map_err(|e| CsvError::Format {
            path: path.to_path_buf(),
            message: format!("{e}"),
        })?;
    if order.len() != N_CHANNELS {
        return Err(CsvError::Format {
            path: path.to_path_buf(),
            message: format!("expected {N_CHANNELS} columns, found {}", order.len()),
        });
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(wrap)?;
        for (col, cell) in record.iter().enumerate() {
            let v = cell.trim().parse::<f64>().unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(EmaError::NonFinite {
                    utterance_id: sidecar.utterance_id.clone(),
                    frame: rows,
                    channel: order[col].to_string(),
                }
                .into());
            }
            values.push(F::lit(v));
        }
        rows += 1;
    }
    let samples = Array2::from_shape_vec((rows, N_CHANNELS), values).map_err(|e| CsvError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let traj = EmaTrajectory::new(
        sidecar.speaker_id.clone(),
        sidecar.utterance_id.clone(),
        sidecar.frame_rate,
        samples,
        order,
    )?;
    Ok((traj.into_canonical(), sidecar))
}
