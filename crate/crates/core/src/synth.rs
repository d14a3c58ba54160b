//! Synthetic multi-speaker cohorts with a known linear generative structure.
//!
//! Every utterance draws a band-limited latent `x = [z; u]` (12 shared
//! articulatory dimensions plus `extra_latent_dim` optional ones), whitened
//! per clip so the clip covariance is exactly the identity. A speaker in
//! group `g` then produces
//!
//! ```text
//! EMA_s  = K_s x + c_s + ε      K_s = M_s D_g (+ private channel terms)
//! feats  = P x + η
//! ```
//!
//! `M_s` is a 12×12 anatomy map (block-dominant per articulator), `D_g` a
//! 12×(12+k) group distortion `[I + δA_g | δB_g]`, and `P` a shared full-rank
//! lift. `ε` is Gaussian with per-channel standard deviation
//! `noise_sigma · std(signal_c)`. Group distortion only reduces
//! transferability when `extra_latent_dim > 0`; with `k = 0` every speaker
//! is an exact affine image of every other.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ema::{
    write_akf, AkfError, AkfRecord, ArticulatorChannel, ButterworthLowpass, EmaError, EmaTrajectory,
    FeatureMatrix, Gender, Group, Manifest, ManifestEntry, ManifestError, SpeakerMeta, DEFAULT_ORDER,
    N_ARTICULATORS, N_CHANNELS,
};
use crate::linalg::{cholesky, cholesky_solve, condition_number, AffineMap};

pub const SYNTH_FRAME_RATE: f64 = 50.0;
pub const MAX_SINUSOIDS: usize = 6;
pub const MAX_ANATOMY_CONDITION: f64 = 100.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ema(#[from] EmaError),
    #[error(transparent)]
    Akf(#[from] AkfError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group: Group,
    /// Magnitude `δ` of the group's latent distortion.
    #[serde(default)]
    pub distortion: f64,
}

/// Speaker-specific component mixed into one EMA channel from the extra
/// latent dimensions. Speakers disagree on it, so it does not transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateChannel {
    pub channel: ArticulatorChannel,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_speakers: usize,
    /// Speakers are dealt to groups round-robin.
    pub groups: Vec<GroupSpec>,
    pub frames_per_utt: usize,
    pub utts_per_speaker: usize,
    pub latent_dim: usize,
    pub extra_latent_dim: usize,
    pub feature_dim: usize,
    /// EMA noise standard deviation relative to each channel's signal std.
    pub noise_sigma: f64,
    /// Absolute standard deviation of the feature noise `η`.
    pub feature_noise: f64,
    pub anatomy_scale_range: (f64, f64),
    /// Standard deviation of the cross-articulator entries of `M_s`.
    pub anatomy_coupling: f64,
    /// Extra anatomy scale for male speakers.
    pub male_scale: f64,
    pub offset_scale: f64,
    pub n_sinusoids: usize,
    pub freq_range: (f64, f64),
    pub private_channels: Vec<PrivateChannel>,
    /// Number of feature dumps per utterance; only one carries the latent.
    pub layers: usize,
    pub informative_layer: usize,
    pub source_prefix: String,
    pub corpus: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            groups: vec![GroupSpec {
                group: Group::EnUs,
                distortion: 0.0,
            }],
            frames_per_utt: 250,
            utts_per_speaker: 20,
            latent_dim: N_CHANNELS,
            extra_latent_dim: 0,
            feature_dim: 64,
            noise_sigma: 0.0,
            feature_noise: 0.01,
            anatomy_scale_range: (0.5, 2.0),
            anatomy_coupling: 0.1,
            male_scale: 1.2,
            offset_scale: 1.0,
            n_sinusoids: MAX_SINUSOIDS,
            freq_range: (0.3, 3.0),
            private_channels: Vec::new(),
            layers: 1,
            informative_layer: 0,
            source_prefix: "synth-layer".into(),
            corpus: "SYNTH".into(),
            seed: 0,
        }
    }
}

/// Power gain of white noise through the zero-phase low-pass (1 without one).
pub fn noise_gain(lowpass_hz: Option<f64>) -> Result<f64, SynthError> {
    match lowpass_hz {
        None => Ok(1.0),
        Some(c) => Ok(ButterworthLowpass::<f64>::design(DEFAULT_ORDER, c, SYNTH_FRAME_RATE)?.noise_power_gain()),
    }
}

/// Probe correlation reachable on a channel with relative noise `sigma`,
/// `1/√(1 + σ²·gain)`.
pub fn theoretical_corr(sigma: f64, lowpass_hz: Option<f64>) -> Result<f64, SynthError> {
    Ok(1.0 / (1.0 + sigma * sigma * noise_gain(lowpass_hz)?).sqrt())
}

/// Inverse of [`theoretical_corr`].
pub fn noise_sigma_for_corr(corr: f64, lowpass_hz: Option<f64>) -> Result<f64, SynthError> {
    if !(corr > 0.0 && corr <= 1.0) {
        return Err(invalid(format!("target correlation {corr} outside (0, 1]")));
    }
    Ok(((1.0 / (corr * corr) - 1.0) / noise_gain(lowpass_hz)?).sqrt())
}

impl SynthSpec {
    pub fn full_latent_dim(&self) -> usize {
        self.latent_dim + self.extra_latent_dim
    }

    pub fn source_name(&self, layer: usize) -> String {
        format!("{}{}", self.source_prefix, layer)
    }

    pub fn sources(&self) -> Vec<String> {
        (0..self.layers).map(|l| self.source_name(l)).collect()
    }

    pub fn informative_source(&self) -> String {
        self.source_name(self.informative_layer)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let k = self.full_latent_dim();
        if self.n_speakers == 0 || self.utts_per_speaker == 0 {
            return Err(invalid("need at least one speaker and one utterance"));
        }
        if self.groups.is_empty() {
            return Err(invalid("no groups"));
        }
        if self.latent_dim != N_CHANNELS {
            return Err(invalid(format!("latent_dim must be {N_CHANNELS}")));
        }
        if self.feature_dim < k {
            return Err(invalid(format!("feature_dim {} below latent dimension {k}", self.feature_dim)));
        }
        if self.frames_per_utt < 4 * k {
            return Err(invalid(format!("frames_per_utt must be at least {}", 4 * k)));
        }
        let (lo, hi) = self.anatomy_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid("anatomy_scale_range must satisfy 0 < lo <= hi"));
        }
        let (flo, fhi) = self.freq_range;
        if !(flo > 0.0 && flo <= fhi && fhi < 6.0) {
            return Err(invalid("freq_range must satisfy 0 < lo <= hi < 6 Hz"));
        }
        if self.n_sinusoids == 0 || self.n_sinusoids > MAX_SINUSOIDS {
            return Err(invalid(format!("n_sinusoids must be in 1..={MAX_SINUSOIDS}")));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("feature_noise", self.feature_noise),
            ("anatomy_coupling", self.anatomy_coupling),
            ("offset_scale", self.offset_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.male_scale > 0.0) {
            return Err(invalid("male_scale must be positive"));
        }
        if self.groups.iter().any(|g| !(g.distortion >= 0.0 && g.distortion.is_finite())) {
            return Err(invalid("group distortion must be finite and nonnegative"));
        }
        if !self.private_channels.is_empty() && self.extra_latent_dim == 0 {
            return Err(invalid("private channels need extra_latent_dim >= 1"));
        }
        if self.layers == 0 || self.informative_layer >= self.layers {
            return Err(invalid("informative_layer must index one of the layers"));
        }
        Ok(())
    }

    fn group_of(&self, speaker: usize) -> Group {
        self.groups[speaker % self.groups.len()].group
    }

    /// Alternates M/F within each group.
    fn gender_of(&self, speaker: usize) -> Gender {
        if (speaker / self.groups.len()) % 2 == 0 {
            Gender::M
        } else {
            Gender::F
        }
    }
}

/// Serializes `Array2<f64>` as a list of rows.
mod rows {
    use ndarray::Array2;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Array2::from_shape_vec((rows.len(), ncols), flat).map_err(D::Error::custom)
    }
}

mod row_map {
    use std::collections::BTreeMap;

    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::ema::Group;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::rows")] Array2<f64>);

    pub fn serialize<S: Serializer>(m: &BTreeMap<Group, Array2<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let w: BTreeMap<&Group, Wrap> = m.iter().map(|(k, v)| (k, Wrap(v.clone()))).collect();
        w.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Group, Array2<f64>>, D::Error> {
        let w: BTreeMap<Group, Wrap> = BTreeMap::deserialize(d)?;
        Ok(w.into_iter().map(|(k, v)| (k, v.0)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTruth {
    pub speaker_id: String,
    pub group: Group,
    pub gender: Gender,
    /// `M_s`, 12×12.
    #[serde(with = "rows")]
    pub anatomy: Array2<f64>,
    pub offset: Vec<f64>,
    /// Full signal mixing `K_s`, 12×(12+k).
    #[serde(with = "rows")]
    pub mixing: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    /// Shared feature lift `P`, D×(12+k).
    #[serde(with = "rows")]
    pub projection: Array2<f64>,
    /// `D_g` per group, 12×(12+k).
    #[serde(with = "row_map")]
    pub distortions: BTreeMap<Group, Array2<f64>>,
    pub speakers: Vec<SpeakerTruth>,
}

impl GroundTruth {
    pub fn speaker(&self, id: &str) -> Option<&SpeakerTruth> {
        self.speakers.iter().find(|s| s.speaker_id == id)
    }

    /// Per-channel signal std, `sqrt(diag(K Kᵀ))`, exact because the latent
    /// is whitened.
    pub fn signal_std(&self, id: &str) -> Option<Array1<f64>> {
        let k = &self.speaker(id)?.mixing;
        Some(k.dot(&k.t()).diag().mapv(f64::sqrt))
    }

    /// Population-optimal `12 → 12` alignment between the normalized EMA
    /// spaces of `a` and `b`. When both share a group and carry no private
    /// channels this is exactly `S_B⁻¹ M_B M_A⁻¹ S_A`.
    pub fn ideal_alignment(&self, a: &str, b: &str) -> Option<AffineMap<f64>> {
        // normalized output in row form: y_s = x · K_sᵀ S_s⁻¹
        let norm = |id: &str| -> Option<Array2<f64>> {
            let s = self.signal_std(id)?;
            let kt = self.speaker(id)?.mixing.t().to_owned();
            Some(kt / &s.insert_axis(Axis(0)))
        };
        let (ya, yb) = (norm(a)?, norm(b)?);
        let gram = ya.t().dot(&ya);
        let l = cholesky(&gram, 1e-12)?;
        let w = cholesky_solve(&l, &ya.t().dot(&yb));
        AffineMap::new(w, Array1::zeros(N_CHANNELS)).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub ema: EmaTrajectory<f64>,
    /// One matrix per layer, in layer order.
    pub features: Vec<FeatureMatrix<f64>>,
    /// Whitened latent `x`, T×(12+k).
    pub latent: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub speakers: Vec<SpeakerMeta>,
    pub utterances: Vec<SynthUtterance>,
    pub truth: GroundTruth,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = StandardNormal.sample(rng);
        scale * v
    })
}

fn sample_anatomy(spec: &SynthSpec, gender: Gender, rng: &mut ChaCha8Rng) -> Result<Array2<f64>, SynthError> {
    let (lo, hi) = spec.anatomy_scale_range;
    let g = if gender == Gender::M { spec.male_scale } else { 1.0 };
    for _ in 0..1000 {
        let mut scales = [0.0; N_ARTICULATORS];
        for sc in scales.iter_mut() {
            *sc = g * if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
        let mean_scale = scales.iter().sum::<f64>() / N_ARTICULATORS as f64;
        let mut m = gaussian(N_CHANNELS, N_CHANNELS, spec.anatomy_coupling * mean_scale, rng);
        for (a, &sc) in scales.iter().enumerate() {
            let theta: f64 = rng.random_range(-0.3..0.3);
            let aspect: f64 = rng.random_range(0.7..1.3);
            let (c, s) = (theta.cos(), theta.sin());
            let block = [[sc * c, -sc * aspect * s], [sc * s, sc * aspect * c]];
            for (i, row) in block.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    m[[2 * a + i, 2 * a + j]] = *v;
                }
            }
        }
        if condition_number(&m) <= MAX_ANATOMY_CONDITION {
            return Ok(m);
        }
    }
    Err(invalid("could not sample an anatomy map with condition number <= 100"))
}

/// Band-limited latent whitened to zero mean and identity covariance.
fn sample_latent(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Array2<f64>, SynthError> {
    let (t, k) = (spec.frames_per_utt, spec.full_latent_dim());
    let (flo, fhi) = spec.freq_range;
    let mut x = Array2::<f64>::zeros((t, k));
    for mut col in x.columns_mut() {
        for _ in 0..spec.n_sinusoids {
            let amp: f64 = rng.random_range(0.5..1.5);
            let freq: f64 = if fhi > flo { rng.random_range(flo..fhi) } else { flo };
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            for (i, v) in col.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * freq * i as f64 / SYNTH_FRAME_RATE + phase).sin();
            }
        }
    }
    let mean = x.mean_axis(Axis(0)).expect("t > 0");
    x -= &mean.insert_axis(Axis(0));
    let cov = x.t().dot(&x) / t as f64;
    let l = cholesky(&cov, 1e-10).ok_or_else(|| invalid("latent clip is rank-deficient; use longer clips"))?;
    // x L⁻ᵀ, by forward substitution on the rows of x
    let mut w = x;
    for mut row in w.rows_mut() {
        for j in 0..k {
            let mut v = row[j];
            for p in 0..j {
                v -= l[[j, p]] * row[p];
            }
            row[j] = v / l[[j, j]];
        }
    }
    Ok(w)
}

struct Shared {
    projection: Array2<f64>,
    distortions: BTreeMap<Group, Array2<f64>>,
}

fn sample_shared(spec: &SynthSpec) -> Shared {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.full_latent_dim();
    let mut projection = gaussian(spec.feature_dim, k, 1.0, &mut rng);
    for mut row in projection.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    let mut distortions = BTreeMap::new();
    for g in &spec.groups {
        let a = gaussian(N_CHANNELS, k, g.distortion / (k as f64).sqrt(), &mut rng);
        let mut d = a;
        for c in 0..N_CHANNELS {
            d[[c, c]] += 1.0;
        }
        distortions.entry(g.group).or_insert(d);
    }
    Shared {
        projection,
        distortions,
    }
}

fn speaker_id(i: usize) -> String {
    format!("spk{i:02}")
}

fn generate_speaker(
    spec: &SynthSpec,
    shared: &Shared,
    index: usize,
) -> Result<(SpeakerTruth, Vec<SynthUtterance>), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let id = speaker_id(index);
    let (group, gender) = (spec.group_of(index), spec.gender_of(index));
    let k = spec.full_latent_dim();

    let anatomy = sample_anatomy(spec, gender, &mut rng)?;
    let offset: Vec<f64> = (0..N_CHANNELS)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            spec.offset_scale * v
        })
        .collect();
    let mut mixing = anatomy.dot(&shared.distortions[&group]);
    for pc in &spec.private_channels {
        let w = gaussian(1, spec.extra_latent_dim, 1.0, &mut rng);
        let w = &w / w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut tail = mixing.slice_mut(s![pc.channel.canonical_index(), N_CHANNELS..k]);
        tail += &(w.row(0).to_owned() * pc.magnitude);
    }

    let offset_row = Array1::from(offset.clone()).insert_axis(Axis(0));
    let mut utterances = Vec::with_capacity(spec.utts_per_speaker);
    for u in 0..spec.utts_per_speaker {
        let utt = format!("{id}_u{u:03}");
        let latent = sample_latent(spec, &mut rng)?;
        let signal = latent.dot(&mixing.t());
        let mut ema = signal.clone() + &offset_row;
        if spec.noise_sigma > 0.0 {
            for (c, mut col) in ema.columns_mut().into_iter().enumerate() {
                let sd = signal.column(c).std(0.0);
                for v in col.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v += spec.noise_sigma * sd * e;
                }
            }
        }
        let ema = EmaTrajectory::canonical(&id, &utt, SYNTH_FRAME_RATE, ema)?;
        let features = (0..spec.layers)
            .map(|layer| {
                let values = if layer == spec.informative_layer {
                    latent.dot(&shared.projection.t()) + gaussian(spec.frames_per_utt, spec.feature_dim, spec.feature_noise, &mut rng)
                } else {
                    gaussian(spec.frames_per_utt, spec.feature_dim, 1.0, &mut rng)
                };
                FeatureMatrix::new(&id, &utt, &spec.source_name(layer), 1.0 / SYNTH_FRAME_RATE, values)
            })
            .collect::<Result<_, _>>()?;
        utterances.push(SynthUtterance { ema, features, latent });
    }
    Ok((
        SpeakerTruth {
            speaker_id: id,
            group,
            gender,
            anatomy,
            offset,
            mixing,
        },
        utterances,
    ))
}

/// Generates a cohort. Speakers use independent substreams of the seeded
/// generator, so output is identical regardless of thread count.
pub fn generate(spec: &SynthSpec) -> Result<SynthCohort, SynthError> {
    spec.validate()?;
    let shared = sample_shared(spec);
    let per_speaker: Vec<(SpeakerTruth, Vec<SynthUtterance>)> = (0..spec.n_speakers)
        .into_par_iter()
        .map(|i| generate_speaker(spec, &shared, i))
        .collect::<Result<_, _>>()?;
    let minutes = (spec.utts_per_speaker * spec.frames_per_utt) as f64 / SYNTH_FRAME_RATE / 60.0;
    let mut speakers = Vec::with_capacity(spec.n_speakers);
    let mut truths = Vec::with_capacity(spec.n_speakers);
    let mut utterances = Vec::new();
    for (truth, utts) in per_speaker {
        speakers.push(SpeakerMeta {
            speaker_id: truth.speaker_id.clone(),
            corpus: spec.corpus.clone(),
            group: truth.group,
            gender: truth.gender,
            minutes,
        });
        truths.push(truth);
        utterances.extend(utts);
    }
    Ok(SynthCohort {
        speakers,
        utterances,
        truth: GroundTruth {
            spec: spec.clone(),
            projection: shared.projection,
            distortions: shared.distortions,
            speakers: truths,
        },
    })
}

impl SynthCohort {
    pub fn utterances_of<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = &'a SynthUtterance> + 'a {
        self.utterances.iter().filter(move |u| u.ema.speaker_id == speaker)
    }

    /// Writes `ema/`, `features/<source>/`, `latent/`, `manifest.json` and
    /// `ground_truth.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Manifest, SynthError> {
        let dir = dir.as_ref();
        let spec = &self.truth.spec;
        let mkdir = |p: &Path| {
            fs::create_dir_all(p).map_err(|source| SynthError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        mkdir(&dir.join("ema"))?;
        mkdir(&dir.join("latent"))?;
        for source in spec.sources() {
            mkdir(&dir.join("features").join(source))?;
        }
        self.utterances.par_iter().try_for_each(|u| -> Result<(), SynthError> {
            let utt = &u.ema.utterance_id;
            write_akf(&AkfRecord::Ema(u.ema.clone()), dir.join("ema").join(format!("{utt}.akf")))?;
            for f in &u.features {
                write_akf(
                    &AkfRecord::Features(f.clone()),
                    dir.join("features").join(&f.source).join(format!("{utt}.akf")),
                )?;
            }
            let latent = FeatureMatrix::new(&u.ema.speaker_id, utt, "latent", 1.0 / SYNTH_FRAME_RATE, u.latent.clone())?;
            write_akf(&AkfRecord::Features(latent), dir.join("latent").join(format!("{utt}.akf")))?;
            Ok(())
        })?;

        let meta: BTreeMap<&str, &SpeakerMeta> = self.speakers.iter().map(|m| (m.speaker_id.as_str(), m)).collect();
        let entries = self
            .utterances
            .iter()
            .map(|u| {
                let m = meta[u.ema.speaker_id.as_str()];
                ManifestEntry {
                    speaker_id: m.speaker_id.clone(),
                    group: m.group,
                    gender: m.gender,
                    utterance_id: u.ema.utterance_id.clone(),
                    feature_path: format!("features/{{source}}/{}.akf", u.ema.utterance_id),
                    ema_path: format!("ema/{}.akf", u.ema.utterance_id),
                    corpus: Some(m.corpus.clone()),
                }
            })
            .collect();
        let manifest = Manifest::new(entries, dir)?;
        manifest.save(dir.join("manifest.json"))?;
        let truth_path = dir.join("ground_truth.json");
        fs::write(&truth_path, serde_json::to_vec_pretty(&self.truth)?).map_err(|source| SynthError::Io {
            path: truth_path.display().to_string(),
            source,
        })?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ema::{lowpass_filter, read_akf};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            n_speakers: 3,
            utts_per_speaker: 3,
            frames_per_utt: 200,
            feature_dim: 20,
            seed: 5,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn latent_is_whitened() {
        let cohort = generate(&small_spec()).unwrap();
        let x = &cohort.utterances[0].latent;
        let cov = x.t().dot(x) / x.nrows() as f64;
        for ((i, j), v) in cov.indexed_iter() {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-9);
        }
        assert!(x.mean_axis(Axis(0)).unwrap().iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 6, ..small_spec() }).unwrap();
        assert_ne!(a.utterances[0].ema.samples, c.utterances[0].ema.samples);
    }

    #[test]
    fn signals_are_in_band() {
        let cohort = generate(&small_spec()).unwrap();
        for u in &cohort.utterances {
            let filtered = lowpass_filter(&u.ema, 6.0).unwrap();
            let centered = |a: &Array2<f64>| a - &a.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
            let x = centered(&u.ema.samples);
            let diff = &filtered.samples - &u.ema.samples;
            let rel = (diff.mapv(|v| v * v).sum() / x.mapv(|v| v * v).sum()).sqrt();
            assert!(rel < 0.01, "{rel}");
        }
    }

    #[test]
    fn anatomy_is_well_conditioned() {
        let spec = SynthSpec {
            anatomy_scale_range: (0.2, 5.0),
            anatomy_coupling: 0.5,
            ..small_spec()
        };
        let cohort = generate(&spec).unwrap();
        for s in &cohort.truth.speakers {
            assert!(condition_number(&s.anatomy) <= MAX_ANATOMY_CONDITION);
        }
    }

    #[test]
    fn noise_matches_relative_sigma() {
        let spec = SynthSpec {
            noise_sigma: 0.5,
            utts_per_speaker: 2,
            frames_per_utt: 2000,
            ..small_spec()
        };
        let cohort = generate(&spec).unwrap();
        let u = &cohort.utterances[0];
        let truth = cohort.truth.speaker(&u.ema.speaker_id).unwrap();
        let signal = u.latent.dot(&truth.mixing.t()) + &Array1::from(truth.offset.clone()).insert_axis(Axis(0));
        let noise = &u.ema.samples - &signal;
        let std = cohort.truth.signal_std(&u.ema.speaker_id).unwrap();
        for c in 0..N_CHANNELS {
            let ratio = noise.column(c).std(0.0) / std[c];
            assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
        }
    }

    #[test]
    fn ideal_alignment_maps_normalized_signals() {
        let cohort = generate(&small_spec()).unwrap();
        let (a, b) = ("spk00", "spk01");
        let g = cohort.truth.ideal_alignment(a, b).unwrap();
        let x = &cohort.utterances[0].latent;
        let norm = |id: &str| {
            let k = &cohort.truth.speaker(id).unwrap().mixing;
            x.dot(&k.t()) / &cohort.truth.signal_std(id).unwrap().insert_axis(Axis(0))
        };
        let mapped = g.apply(norm(a).view()).unwrap();
        assert!((&mapped - &norm(b)).iter().all(|v| v.abs() < 1e-9));
        // column-vector form S_B⁻¹ M_B M_A⁻¹ S_A
        let ma = &cohort.truth.speaker(a).unwrap().anatomy;
        let l = cholesky(&ma.t().dot(ma), 0.0).unwrap();
        let ma_inv = cholesky_solve(&l, &ma.t().to_owned());
        let sa = Array2::from_diag(&cohort.truth.signal_std(a).unwrap());
        let sb_inv = Array2::from_diag(&cohort.truth.signal_std(b).unwrap().mapv(|v| 1.0 / v));
        let mb = &cohort.truth.speaker(b).unwrap().anatomy;
        let expected = sb_inv.dot(mb).dot(&ma_inv).dot(&sa);
        assert!((&g.weights.t() - &expected).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn theoretical_corr_roundtrip() {
        let sigma = noise_sigma_for_corr(0.9, Some(6.0)).unwrap();
        assert!((theoretical_corr(sigma, Some(6.0)).unwrap() - 0.9).abs() < 1e-12);
        assert!((noise_sigma_for_corr(0.9, None).unwrap() - (1.0f64 / 0.81 - 1.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SynthSpec { feature_dim: 8, ..small_spec() },
            SynthSpec { freq_range: (1.0, 7.0), ..small_spec() },
            SynthSpec { n_sinusoids: 7, ..small_spec() },
            SynthSpec { anatomy_scale_range: (2.0, 1.0), ..small_spec() },
            SynthSpec { groups: vec![], ..small_spec() },
            SynthSpec { informative_layer: 1, ..small_spec() },
            SynthSpec {
                private_channels: vec![PrivateChannel { channel: "LL.X".parse().unwrap(), magnitude: 1.0 }],
                ..small_spec()
            },
        ] {
            assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn groups_and_genders_are_dealt() {
        let spec = SynthSpec {
            n_speakers: 8,
            groups: vec![
                GroupSpec { group: Group::EnBj, distortion: 0.5 },
                GroupSpec { group: Group::EnUs, distortion: 0.5 },
            ],
            extra_latent_dim: 4,
            ..small_spec()
        };
        let cohort = generate(&spec).unwrap();
        let groups: Vec<Group> = cohort.speakers.iter().map(|s| s.group).collect();
        assert_eq!(groups.iter().filter(|g| **g == Group::EnBj).count(), 4);
        let genders: Vec<Gender> = cohort.speakers.iter().map(|s| s.gender).collect();
        assert_eq!(genders.iter().filter(|g| **g == Gender::M).count(), 4);
        assert_eq!(cohort.truth.distortions[&Group::EnBj].dim(), (12, 16));
    }

    #[test]
    fn written_cohort_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { layers: 2, ..small_spec() };
        let cohort = generate(&spec).unwrap();
        let manifest = cohort.write(dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 9);
        let loaded = Manifest::load(dir.path().join("manifest.json")).unwrap();
        let e = &loaded.entries[4];
        let ema = read_akf::<f64>(loaded.ema_path(e)).unwrap().into_ema().unwrap();
        let orig = &cohort.utterances[4];
        assert_eq!(ema.samples, orig.ema.samples.mapv(|v| v as f32 as f64));
        let f = read_akf::<f64>(loaded.feature_path(e, "synth-layer1")).unwrap().into_features().unwrap();
        assert_eq!(f.source, "synth-layer1");
        let truth: GroundTruth =
            serde_json::from_slice(&fs::read(dir.path().join("ground_truth.json")).unwrap()).unwrap();
        assert_eq!(truth, cohort.truth);
    }
}
