use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView1, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use super::channel::{is_permutation, ArticulatorChannel, N_CHANNELS};
use super::EmaError;
use crate::Scalar;

/// Articulatory traces for one utterance of one speaker, `T × 12`.
///
/// Column `j` of `samples` holds the trace of `channel_order[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaTrajectory<F> {
    pub speaker_id: String,
    pub utterance_id: String,
    /// Frames per second.
    pub frame_rate: f64,
    pub samples: Array2<F>,
    pub channel_order: Vec<ArticulatorChannel>,
}

impl<F: Scalar> EmaTrajectory<F> {
    /// Validates shape, channel order and finiteness. Samples containing NaN
    /// are rejected rather than imputed.
    pub fn new(
        speaker_id: impl Into<String>,
        utterance_id: impl Into<String>,
        frame_rate: f64,
        samples: Array2<F>,
        channel_order: Vec<ArticulatorChannel>,
    ) -> Result<Self, EmaError> {
        let utterance_id = utterance_id.into();
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(EmaError::Invalid(format!(
                "{utterance_id}: frame rate must be positive, got {frame_rate}"
            )));
        }
        if samples.nrows() == 0 {
            return Err(EmaError::Invalid(format!("{utterance_id}: no frames")));
        }
        if samples.ncols() != N_CHANNELS {
            return Err(EmaError::Invalid(format!(
                "{utterance_id}: expected {N_CHANNELS} channels, got {}",
                samples.ncols()
            )));
        }
        if !is_permutation(&channel_order) {
            return Err(EmaError::Invalid(format!(
                "{utterance_id}: channel order is not a permutation of the canonical channels"
            )));
        }
        if let Some((frame, col)) = first_non_finite(&samples) {
            return Err(EmaError::NonFinite {
                utterance_id,
                frame,
                channel: channel_order[col].to_string(),
            });
        }
        Ok(Self {
            speaker_id: speaker_id.into(),
            utterance_id,
            frame_rate,
            samples,
            channel_order,
        })
    }

    /// Same as [`EmaTrajectory::new`] with canonical channel order.
    pub fn canonical(
        speaker_id: impl Into<String>,
        utterance_id: impl Into<String>,
        frame_rate: f64,
        samples: Array2<F>,
    ) -> Result<Self, EmaError> {
        Self::new(
            speaker_id,
            utterance_id,
            frame_rate,
            samples,
            ArticulatorChannel::CANONICAL.to_vec(),
        )
    }

    pub fn n_frames(&self) -> usize {
        self.samples.nrows()
    }

    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 / self.frame_rate
    }

    /// Column of `channel`, regardless of storage order.
    pub fn channel(&self, channel: ArticulatorChannel) -> ArrayView1<'_, F> {
        let col = self
            .channel_order
            .iter()
            .position(|c| *c == channel)
            .expect("channel order is a permutation");
        self.samples.column(col)
    }

    /// Reorders columns into canonical order.
    pub fn into_canonical(self) -> Self {
        if self.channel_order == ArticulatorChannel::CANONICAL {
            return self;
        }
        let mut samples = Array2::zeros(self.samples.raw_dim());
        for (col, ch) in self.channel_order.iter().enumerate() {
            samples
                .column_mut(ch.canonical_index())
                .assign(&self.samples.column(col));
        }
        Self {
            samples,
            channel_order: ArticulatorChannel::CANONICAL.to_vec(),
            ..self
        }
    }

    pub(crate) fn with_samples(&self, samples: Array2<F>) -> Self {
        Self {
            speaker_id: self.speaker_id.clone(),
            utterance_id: self.utterance_id.clone(),
            frame_rate: self.frame_rate,
            samples,
            channel_order: self.channel_order.clone(),
        }
    }
}

/// Frame-level representation matrix `T × D` from one feature source.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<F> {
    pub speaker_id: String,
    pub utterance_id: String,
    /// Model name plus layer index (`xlsr-layer17`) or a baseline name (`mfcc`).
    pub source: String,
    /// Seconds between consecutive frames.
    pub frame_hop: f64,
    pub values: Array2<F>,
}

impl<F: Scalar> FeatureMatrix<F> {
    pub fn new(
        speaker_id: impl Into<String>,
        utterance_id: impl Into<String>,
        source: impl Into<String>,
        frame_hop: f64,
        values: Array2<F>,
    ) -> Result<Self, EmaError> {
        let utterance_id = utterance_id.into();
        if !(frame_hop.is_finite() && frame_hop > 0.0) {
            return Err(EmaError::Invalid(format!(
                "{utterance_id}: frame hop must be positive, got {frame_hop}"
            )));
        }
        if values.ncols() == 0 {
            return Err(EmaError::Invalid(format!(
                "{utterance_id}: feature dimension must be at least 1"
            )));
        }
        if let Some((frame, col)) = first_non_finite(&values) {
            return Err(EmaError::NonFinite {
                utterance_id,
                frame,
                channel: format!("feature[{col}]"),
            });
        }
        Ok(Self {
            speaker_id: speaker_id.into(),
            utterance_id,
            source: source.into(),
            frame_hop,
            values,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 * self.frame_hop
    }
}

fn first_non_finite<F: Scalar>(m: &Array2<F>) -> Option<(usize, usize)> {
    m.indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(idx, _)| idx)
}

/// Language-dialect cohort label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "EN.UK")]
    EnUk,
    #[serde(rename = "EN.US")]
    EnUs,
    #[serde(rename = "EN.BJ")]
    EnBj,
    #[serde(rename = "EN.SH")]
    EnSh,
    #[serde(rename = "MAN")]
    Man,
    #[serde(rename = "IT")]
    It,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::EnUk,
        Group::EnUs,
        Group::EnBj,
        Group::EnSh,
        Group::Man,
        Group::It,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::EnUk => "EN.UK",
            Group::EnUs => "EN.US",
            Group::EnBj => "EN.BJ",
            Group::EnSh => "EN.SH",
            Group::Man => "MAN",
            Group::It => "IT",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = EmaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| EmaError::Invalid(format!("unknown language-dialect group `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    #[default]
    #[serde(rename = "unknown")]
    Unknown,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::Unknown => "unknown",
        })
    }
}

impl FromStr for Gender {
    type Err = EmaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "M" | "m" | "male" => Ok(Gender::M),
            "F" | "f" | "female" => Ok(Gender::F),
            "" | "unknown" | "U" | "u" => Ok(Gender::Unknown),
            other => Err(EmaError::Invalid(format!("unknown gender `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerMeta {
    pub speaker_id: String,
    pub corpus: String,
    pub group: Group,
    #[serde(default)]
    pub gender: Gender,
    #[serde(default)]
    pub minutes: f64,
}

/// Per-channel, per-clip standardization to zero mean and unit population
/// variance.
pub fn normalize_ema<F: Scalar>(traj: &EmaTrajectory<F>) -> Result<EmaTrajectory<F>, EmaError> {
    let t = traj.n_frames();
    if t < 2 {
        return Err(EmaError::DegenerateClip { frames: t });
    }
    let n = F::from_usize_lossy(t);
    let mut out = traj.samples.clone();
    for (col, mut column) in out.axis_iter_mut(NdAxis(1)).enumerate() {
        let mean = column.sum() / n;
        let var = column.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
        let std = var.sqrt();
        let scale = column.iter().fold(F::zero(), |m, &x| m.max(x.abs()));
        if !(std > F::epsilon() * F::lit(64.0) * scale) {
            return Err(EmaError::ZeroVarianceChannel {
                utterance_id: traj.utterance_id.clone(),
                channel: traj.channel_order[col],
            });
        }
        column.mapv_inplace(|x| (x - mean) / std);
    }
    Ok(traj.with_samples(out))
}

/// Resamples the EMA stream onto feature frame centers by linear
/// interpolation and truncates both streams to their common support.
///
/// Frame `i` of a stream with rate `r` covers `[i/r, (i+1)/r)`; its value is
/// placed at the center `(i + 0.5)/r`. Feature frame `k` is kept while its
/// center `k·hop + hop/2` lies within both streams' spans. Values between the
/// first (last) EMA center and the start (end) of the span hold the edge
/// sample.
pub fn align_frames<F: Scalar>(
    traj: &EmaTrajectory<F>,
    feat: &FeatureMatrix<F>,
) -> Result<(EmaTrajectory<F>, FeatureMatrix<F>), EmaError> {
    let hop = feat.frame_hop;
    let n = aligned_len(traj.duration(), feat.n_frames(), hop);
    if n == 0 {
        return Err(EmaError::EmptyOverlap {
            utterance_id: traj.utterance_id.clone(),
        });
    }
    let rate = traj.frame_rate;
    let t_ema = traj.n_frames();
    let mut out = Array2::<F>::zeros((n, traj.samples.ncols()));
    for k in 0..n {
        let center = k as f64 * hop + 0.5 * hop;
        // fractional EMA frame index of this time
        let pos = (center * rate - 0.5).clamp(0.0, (t_ema - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t_ema - 1);
        let frac = F::lit(pos - lo as f64);
        let row_lo = traj.samples.row(lo);
        let row_hi = traj.samples.row(hi);
        let mut dst = out.row_mut(k);
        for c in 0..dst.len() {
            dst[c] = row_lo[c] + (row_hi[c] - row_lo[c]) * frac;
        }
    }
    let ema = EmaTrajectory {
        speaker_id: traj.speaker_id.clone(),
        utterance_id: traj.utterance_id.clone(),
        frame_rate: 1.0 / hop,
        samples: out,
        channel_order: traj.channel_order.clone(),
    };
    let features = FeatureMatrix {
        speaker_id: feat.speaker_id.clone(),
        utterance_id: feat.utterance_id.clone(),
        source: feat.source.clone(),
        frame_hop: hop,
        values: feat.values.slice(s![..n, ..]).to_owned(),
    };
    Ok((ema, features))
}

/// Number of feature frame centers inside the common time support.
pub fn aligned_len(ema_duration: f64, feature_frames: usize, hop: f64) -> usize {
    let span = ema_duration.min(feature_frames as f64 * hop);
    let eps = 1e-9 * hop;
    if span + eps < 0.5 * hop {
        return 0;
    }
    let fit = ((span - 0.5 * hop + eps) / hop).floor() as usize + 1;
    fit.min(feature_frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(t: usize, seed: u64) -> EmaTrajectory<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = Array2::from_shape_fn((t, N_CHANNELS), |(_, c)| {
            rng.random_range(-5.0..5.0) * (c + 1) as f64 + c as f64
        });
        EmaTrajectory::canonical("s", "u", 50.0, samples).unwrap()
    }

    #[test]
    fn two_frame_channel_becomes_plus_minus_one() {
        let mut samples = Array2::from_shape_fn((2, 12), |(r, c)| (r * 7 + c) as f64);
        samples[[0, 0]] = 1.0;
        samples[[1, 0]] = 3.0;
        let traj = EmaTrajectory::canonical("s", "u", 100.0, samples).unwrap();
        let out = normalize_ema(&traj).unwrap();
        assert_eq!(out.samples[[0, 0]], -1.0);
        assert_eq!(out.samples[[1, 0]], 1.0);
    }

    #[test]
    fn normalized_moments() {
        let out = normalize_ema(&random_traj(100, 3)).unwrap();
        for col in out.samples.columns() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let once = normalize_ema(&random_traj(64, 9)).unwrap();
        let twice = normalize_ema(&once).unwrap();
        let max_diff = (&once.samples - &twice.samples)
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(max_diff < 1e-9, "{max_diff}");
    }

    #[test]
    fn constant_channel_is_reported() {
        let mut traj = random_traj(10, 1);
        traj.samples.column_mut(7).fill(0.3);
        match normalize_ema(&traj) {
            Err(EmaError::ZeroVarianceChannel { channel, .. }) => {
                assert_eq!(channel.to_string(), "TT.Y")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_frame_is_degenerate() {
        let traj = random_traj(1, 1);
        assert!(matches!(
            normalize_ema(&traj),
            Err(EmaError::DegenerateClip { frames: 1 })
        ));
    }

    #[test]
    fn nan_rejected_at_construction() {
        let mut samples = Array2::<f64>::zeros((5, 12));
        samples[[3, 4]] = f64::NAN;
        let err = EmaTrajectory::canonical("s", "u", 100.0, samples).unwrap_err();
        assert!(matches!(err, EmaError::NonFinite { frame: 3, .. }));
    }

    #[test]
    fn canonicalization_reorders_columns() {
        let traj = random_traj(4, 2);
        let mut order = ArticulatorChannel::CANONICAL.to_vec();
        order.reverse();
        let mut rev = traj.samples.clone();
        for c in 0..12 {
            rev.column_mut(c).assign(&traj.samples.column(11 - c));
        }
        let shuffled = EmaTrajectory::new("s", "u", 50.0, rev, order).unwrap();
        for ch in ArticulatorChannel::CANONICAL {
            assert_eq!(shuffled.channel(ch), traj.channel(ch));
        }
        assert_eq!(shuffled.into_canonical().samples, traj.samples);
    }

    fn features(t: usize, hop: f64) -> FeatureMatrix<f64> {
        FeatureMatrix::new("s", "u", "src", hop, Array2::from_shape_fn((t, 3), |(r, c)| (r + c) as f64))
            .unwrap()
    }

    #[test]
    fn equal_rates_align_to_identity() {
        let traj = random_traj(80, 5);
        let (ema, feat) = align_frames(&traj, &features(80, 0.02)).unwrap();
        assert_eq!(ema.n_frames(), 80);
        assert_eq!(feat.n_frames(), 80);
        let max_diff = (&ema.samples - &traj.samples)
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(max_diff < 1e-12);
    }

    #[test]
    fn linear_ramp_survives_resampling() {
        let t = 100;
        let ramp = Array1::linspace(0.0, 1.0, t);
        let samples = Array2::from_shape_fn((t, 12), |(r, c)| ramp[r] * (c + 1) as f64 - 0.5);
        let traj = EmaTrajectory::canonical("s", "u", 100.0, samples).unwrap();
        let (ema, _) = align_frames(&traj, &features(50, 0.02)).unwrap();
        // EMA center (i + 0.5)/100 carries value i/(t-1)
        for (k, row) in ema.samples.rows().into_iter().enumerate() {
            let time = k as f64 * 0.02 + 0.01;
            let idx = time * 100.0 - 0.5;
            for c in 0..12 {
                let expected = idx / (t - 1) as f64 * (c + 1) as f64 - 0.5;
                assert!((row[c] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_durations_truncate_to_overlap() {
        // 2.0 s of EMA at 100 Hz against 2.4 s of features at 50 Hz
        let traj = random_traj(200, 4);
        let traj = EmaTrajectory { frame_rate: 100.0, ..traj };
        let (ema, feat) = align_frames(&traj, &features(120, 0.02)).unwrap();
        assert_eq!(ema.n_frames(), 100);
        assert_eq!(feat.n_frames(), 100);
        assert_eq!(ema.frame_rate, 50.0);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let traj = random_traj(1, 4);
        let traj = EmaTrajectory { frame_rate: 1000.0, ..traj };
        assert!(matches!(
            align_frames(&traj, &features(10, 0.02)),
            Err(EmaError::EmptyOverlap { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn aligned_length_ignores_which_stream_is_longer(
            t_ema in 1usize..400, t_feat in 1usize..400, rate_idx in 0usize..4
        ) {
            let rate = [25.0, 50.0, 100.0, 200.0][rate_idx];
            let hop = 0.02;
            let dur_ema = t_ema as f64 / rate;
            let dur_feat = t_feat as f64 * hop;
            let n = aligned_len(dur_ema, t_feat, hop);
            // symmetric in the two durations
            let common = dur_ema.min(dur_feat);
            let expected = (0..t_feat.max(1000))
                .take_while(|k| *k as f64 * hop + 0.5 * hop <= common + 1e-12)
                .count()
                .min(t_feat);
            proptest::prop_assert_eq!(n, expected);
        }
    }
}
