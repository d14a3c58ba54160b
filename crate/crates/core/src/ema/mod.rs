//! EMA data model, preprocessing and interchange formats.

mod akf;
mod channel;
mod csv_io;
mod data;
mod filter;
mod manifest;

pub use akf::{decode_akf, encode_akf, read_akf, write_akf, AkfError, AkfKind, AkfRecord};
pub use channel::{
    canonical_names, is_permutation, Articulator, ArticulatorChannel, Axis, ParseChannelError,
    N_ARTICULATORS, N_CHANNELS,
};
pub use csv_io::{read_ema_csv, sidecar_path, write_ema_csv, CsvError, CsvSidecar};
pub use data::{
    align_frames, aligned_len, normalize_ema, EmaTrajectory, FeatureMatrix, Gender, Group,
    SpeakerMeta,
};
pub use filter::{lowpass_filter, Biquad, ButterworthLowpass, DEFAULT_CUTOFF_HZ, DEFAULT_ORDER};
pub use manifest::{Manifest, ManifestEntry, ManifestError, SOURCE_PLACEHOLDER};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmaError {
    #[error("{utterance_id}: channel {channel} is constant within the clip")]
    ZeroVarianceChannel {
        utterance_id: String,
        channel: ArticulatorChannel,
    },
    #[error("clip has {frames} frame(s); at least 2 are needed")]
    DegenerateClip { frames: usize },
    #[error("cutoff {cutoff} Hz is not below the Nyquist frequency {nyquist} Hz")]
    CutoffAboveNyquist { cutoff: f64, nyquist: f64 },
    #[error("clip has {frames} frames; the filter needs at least {required}")]
    ClipTooShortForFilter { frames: usize, required: usize },
    #[error("{utterance_id}: EMA and feature streams share no time support")]
    EmptyOverlap { utterance_id: String },
    #[error("{utterance_id}: non-finite value at frame {frame}, channel {channel}")]
    NonFinite {
        utterance_id: String,
        frame: usize,
        channel: String,
    },
    #[error("{0}")]
    Invalid(String),
}
