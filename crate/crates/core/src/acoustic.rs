//! Baseline acoustic features: power spectrogram, mel filter bank and MFCC.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::ema::{EmaError, FeatureMatrix};

/// Floor applied before taking logarithms of mel energies.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum AcousticError {
    #[error("clip has {len} samples, shorter than n_fft = {n_fft}")]
    ClipTooShort { len: usize, n_fft: usize },
    #[error("invalid mel config: {0}")]
    InvalidConfig(String),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("audio is {found} Hz, expected {expected} Hz; resample it first")]
    SampleRateMismatch { found: u32, expected: u32 },
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Ema(#[from] EmaError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub speaker_id: String,
    pub utterance_id: String,
    /// Mono samples in `[-1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(
        speaker_id: impl Into<String>,
        utterance_id: impl Into<String>,
        samples: Vec<f64>,
        sample_rate: u32,
    ) -> Result<Self, AcousticError> {
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(AcousticError::NonFinite { index });
        }
        Ok(Self {
            speaker_id: speaker_id.into(),
            utterance_id: utterance_id.into(),
            samples,
            sample_rate,
        })
    }
}

/// Reads 16-bit PCM or 32-bit float WAV. Multi-channel audio is averaged
/// down to mono.
pub fn read_wav(
    path: impl AsRef<Path>,
    expected_rate: u32,
    speaker_id: &str,
    utterance_id: &str,
) -> Result<AudioClip, AcousticError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != expected_rate {
        return Err(AcousticError::SampleRateMismatch {
            found: spec.sample_rate,
            expected: expected_rate,
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => return Err(AcousticError::UnsupportedFormat(format!("{fmt:?} {bits}-bit"))),
    };
    let ch = spec.channels.max(1) as usize;
    let mono = interleaved
        .chunks(ch)
        .map(|frame| frame.iter().sum::<f64>() / ch as f64)
        .collect();
    AudioClip::new(speaker_id, utterance_id, mono, spec.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub window: Window,
    /// Append first and second order deltas to the MFCCs.
    pub deltas: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 400,
            hop: 320,
            n_mels: 80,
            n_mfcc: 13,
            fmin: 0.0,
            fmax: 8000.0,
            window: Window::Hann,
            deltas: true,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<(), AcousticError> {
        let bad = |m: String| Err(AcousticError::InvalidConfig(m));
        if self.n_fft < 2 || self.hop == 0 || self.n_mels == 0 {
            return bad("n_fft, hop and n_mels must be positive".into());
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return bad(format!("n_mfcc must be in 1..={}", self.n_mels));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!("need 0 <= fmin < fmax <= {nyquist}"));
        }
        let hop_ms = 1000.0 * self.hop as f64 / self.sample_rate as f64;
        if (hop_ms - 20.0).abs() > 1e-9 {
            return bad(format!("hop must be 20 ms, got {hop_ms} ms"));
        }
        Ok(())
    }

    pub fn frame_hop(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.n_fft {
            0
        } else {
            1 + (n_samples - self.n_fft) / self.hop
        }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

fn check_clip(clip: &AudioClip, cfg: &MelConfig) -> Result<(), AcousticError> {
    cfg.validate()?;
    if clip.sample_rate != cfg.sample_rate {
        return Err(AcousticError::SampleRateMismatch {
            found: clip.sample_rate,
            expected: cfg.sample_rate,
        });
    }
    if clip.samples.len() < cfg.n_fft {
        return Err(AcousticError::ClipTooShort {
            len: clip.samples.len(),
            n_fft: cfg.n_fft,
        });
    }
    Ok(())
}

/// `|STFT|²` without centering, `T_f × (n_fft/2 + 1)`.
pub fn power_spectrogram(clip: &AudioClip, cfg: &MelConfig) -> Result<Array2<f64>, AcousticError> {
    check_clip(clip, cfg)?;
    let window = hann(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;
    let n_frames = cfg.n_frames(clip.samples.len());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut out = Array2::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(clip.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (dst, c) in row.iter_mut().zip(&buf[..n_bins]) {
            *dst = c.norm_sqr();
        }
    }
    Ok(out)
}

pub fn stft_power(clip: &AudioClip, cfg: &MelConfig) -> Result<FeatureMatrix<f64>, AcousticError> {
    let values = power_spectrogram(clip, cfg)?;
    Ok(FeatureMatrix::new(&clip.speaker_id, &clip.utterance_id, "stft", cfg.frame_hop(), values)?)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, each scaled to unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterBank {
    /// `n_mels + 2` edge frequencies in Hz; filter `m` spans
    /// `edges[m]..edges[m + 2]` and peaks at `edges[m + 1]`.
    pub edges: Vec<f64>,
    /// `n_mels × (n_fft/2 + 1)`, sampled at the FFT bin frequencies.
    pub weights: Array2<f64>,
}

impl MelFilterBank {
    pub fn new(cfg: &MelConfig) -> Result<Self, AcousticError> {
        cfg.validate()?;
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let n_bins = cfg.n_fft / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let mut bank = Self {
            edges,
            weights: Array2::zeros((cfg.n_mels, n_bins)),
        };
        for m in 0..cfg.n_mels {
            for k in 0..n_bins {
                bank.weights[[m, k]] = bank.response(m, k as f64 * bin_hz);
            }
        }
        Ok(bank)
    }

    pub fn n_mels(&self) -> usize {
        self.edges.len() - 2
    }

    pub fn center(&self, m: usize) -> f64 {
        self.edges[m + 1]
    }

    /// Continuous response of filter `m` at `freq` Hz.
    pub fn response(&self, m: usize, freq: f64) -> f64 {
        let (l, c, r) = (self.edges[m], self.edges[m + 1], self.edges[m + 2]);
        let peak = 2.0 / (r - l);
        if freq <= l || freq >= r {
            0.0
        } else if freq <= c {
            peak * (freq - l) / (c - l)
        } else {
            peak * (r - freq) / (r - c)
        }
    }

    pub fn apply(&self, power: &Array2<f64>) -> Array2<f64> {
        power.dot(&self.weights.t())
    }
}

pub fn mel_spectrogram(clip: &AudioClip, cfg: &MelConfig) -> Result<FeatureMatrix<f64>, AcousticError> {
    let bank = MelFilterBank::new(cfg)?;
    let values = bank.apply(&power_spectrogram(clip, cfg)?);
    Ok(FeatureMatrix::new(&clip.speaker_id, &clip.utterance_id, "mel", cfg.frame_hop(), values)?)
}

fn log_mel(clip: &AudioClip, cfg: &MelConfig) -> Result<Array2<f64>, AcousticError> {
    let bank = MelFilterBank::new(cfg)?;
    Ok(bank.apply(&power_spectrogram(clip, cfg)?).mapv(|v| v.max(LOG_FLOOR).ln()))
}

pub fn log_filter_bank(clip: &AudioClip, cfg: &MelConfig) -> Result<FeatureMatrix<f64>, AcousticError> {
    let values = log_mel(clip, cfg)?;
    Ok(FeatureMatrix::new(&clip.speaker_id, &clip.utterance_id, "fbank", cfg.frame_hop(), values)?)
}

/// Orthonormal DCT-II matrix, `n × n`; row `k` is basis function `k`.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(k, i)| {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
    })
}

/// Orthonormal DCT-II of each row.
pub fn dct2(x: &Array2<f64>) -> Array2<f64> {
    x.dot(&dct_matrix(x.ncols()).t())
}

/// Inverse of [`dct2`].
pub fn idct2(x: &Array2<f64>) -> Array2<f64> {
    x.dot(&dct_matrix(x.ncols()))
}

/// Regression deltas over `±width` frames with edge replication.
pub fn deltas(x: &Array2<f64>, width: usize) -> Array2<f64> {
    let t = x.nrows() as isize;
    let denom: f64 = 2.0 * (1..=width).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros(x.raw_dim());
    for i in 0..t {
        let mut acc = Array1::<f64>::zeros(x.ncols());
        for n in 1..=width as isize {
            let fwd = x.row((i + n).clamp(0, t - 1) as usize);
            let back = x.row((i - n).clamp(0, t - 1) as usize);
            acc += &((&fwd - &back) * n as f64);
        }
        out.row_mut(i as usize).assign(&(acc / denom));
    }
    out
}

pub fn mfcc(clip: &AudioClip, cfg: &MelConfig) -> Result<FeatureMatrix<f64>, AcousticError> {
    let coeffs = dct2(&log_mel(clip, cfg)?).slice(s![.., ..cfg.n_mfcc]).to_owned();
    let values = if cfg.deltas {
        let d1 = deltas(&coeffs, 2);
        let d2 = deltas(&d1, 2);
        ndarray::concatenate(Axis(1), &[coeffs.view(), d1.view(), d2.view()]).expect("same rows")
    } else {
        coeffs
    };
    Ok(FeatureMatrix::new(&clip.speaker_id, &clip.utterance_id, "mfcc", cfg.frame_hop(), values)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Fbank,
    Mel,
    Mfcc,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Fbank => "fbank",
            BaselineKind::Mel => "mel",
            BaselineKind::Mfcc => "mfcc",
        }
    }

    pub fn compute(self, clip: &AudioClip, cfg: &MelConfig) -> Result<FeatureMatrix<f64>, AcousticError> {
        match self {
            BaselineKind::Fbank => log_filter_bank(clip, cfg),
            BaselineKind::Mel => mel_spectrogram(clip, cfg),
            BaselineKind::Mfcc => mfcc(clip, cfg),
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = AcousticError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fbank" => Ok(BaselineKind::Fbank),
            "mel" => Ok(BaselineKind::Mel),
            "mfcc" => Ok(BaselineKind::Mfcc),
            other => Err(AcousticError::InvalidConfig(format!("unknown baseline {other:?}"))),
        }
    }
}
