//! Cross-speaker affine alignment of inversion probes and the
//! transferability analyses built on it.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ema::{Group, N_ARTICULATORS, N_CHANNELS};
use crate::linalg::{fit_lasso, AffineMap, LassoConfig, SolverError};
use crate::probing::{pearson, AlignedUtterance, InversionProbe, ProbeError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignmentError {
    #[error("probes come from different feature sources: {0} vs {1}")]
    SourceMismatch(String, String),
    #[error("no data for target speaker {0}")]
    MissingTarget(String),
    #[error("{speaker}: need at least 2 utterances for a train/test split, got {found}")]
    TooFewUtterances { speaker: String, found: usize },
    #[error("need at least 2 speakers, got {0}")]
    TooFewSpeakers(usize),
    #[error("no speaker pair for groups ({0}, {1})")]
    EmptyGroupPair(String, String),
    #[error("speaker {0} has no group label")]
    MissingGroup(String),
    #[error("no alignments to summarize")]
    Empty,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Fit `g` so that `g ∘ f_A` matches `f_B` on B's features.
    #[default]
    ToPredictions,
    /// Fit `g` so that `g ∘ f_A` matches B's measured EMA.
    ToGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub lasso: LassoConfig,
    pub train_mode: TrainMode,
    /// Fraction of the target's utterances held out for scoring.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            lasso: LassoConfig::default(),
            train_mode: TrainMode::default(),
            test_fraction: 0.2,
            seed: 17,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic train/test split. Utterances are ranked by a seeded hash of
/// their id; the first `max(1, round(n·test_fraction))` form the test set.
pub fn split_utterances<'a>(ids: &[&'a str], test_fraction: f64, seed: u64) -> (Vec<&'a str>, Vec<&'a str>) {
    let mut ranked: Vec<(u64, &str)> = ids
        .iter()
        .map(|id| (mix(fnv1a(id.as_bytes()) ^ mix(seed)), *id))
        .collect();
    ranked.sort();
    let n = ranked.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let test = ranked[..n_test].iter().map(|(_, id)| *id).collect();
    let train = ranked[n_test..].iter().map(|(_, id)| *id).collect();
    (train, test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineAlignment<F> {
    pub source_speaker: String,
    pub target_speaker: String,
    /// `12 → 12`.
    pub map: AffineMap<F>,
    pub train_mode: TrainMode,
    /// Per-channel `corr(g∘f_A, f_B)` on the target's test split.
    pub transfer_corr: Vec<f64>,
    pub mean: f64,
    pub converged: bool,
}

/// Target-speaker data split once and shared across all sources.
#[derive(Debug, Clone)]
pub struct TargetSplit<F> {
    pub speaker: String,
    pub x_train: Array2<F>,
    pub ema_train: Array2<F>,
    pub x_test: Array2<F>,
}

impl<F: Scalar> TargetSplit<F> {
    pub fn new(target_data: &[AlignedUtterance<F>], cfg: &AlignmentConfig) -> Result<Self, AlignmentError> {
        let speaker = target_data
            .first()
            .map(|u| u.features.speaker_id.clone())
            .unwrap_or_default();
        if target_data.len() < 2 {
            return Err(AlignmentError::TooFewUtterances {
                speaker,
                found: target_data.len(),
            });
        }
        let ids: Vec<&str> = target_data.iter().map(|u| u.utterance_id()).collect();
        let (train, _) = split_utterances(&ids, cfg.test_fraction, cfg.seed);
        let is_train = |u: &AlignedUtterance<F>| train.contains(&u.utterance_id());
        let gather = |pick: bool, f: fn(&AlignedUtterance<F>) -> ArrayView2<'_, F>| {
            let views: Vec<_> = target_data.iter().filter(|u| is_train(u) == pick).map(f).collect();
            concatenate(Axis(0), &views).expect("consistent widths")
        };
        Ok(Self {
            speaker,
            x_train: gather(true, |u| u.features.values.view()),
            ema_train: gather(true, |u| u.ema.samples.view()),
            x_test: gather(false, |u| u.features.values.view()),
        })
    }
}

/// Pearson, reading a constant prediction as zero correlation.
fn transfer_pearson<F: Scalar>(pred: ndarray::ArrayView1<'_, F>, target: ndarray::ArrayView1<'_, F>) -> Result<f64, ProbeError> {
    match pearson(pred, target) {
        Ok(r) => Ok(r.to_f64_lossy()),
        Err(ProbeError::ZeroVarianceInput) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Scores an arbitrary `12 → 12` alignment on the target's test split.
pub fn score_alignment<F: Scalar>(
    f_a: &InversionProbe<F>,
    f_b: &InversionProbe<F>,
    g: &AffineMap<F>,
    split: &TargetSplit<F>,
) -> Result<Vec<f64>, AlignmentError> {
    let aligned = g.apply(f_a.map.apply(split.x_test.view())?.view())?;
    let reference = f_b.map.apply(split.x_test.view())?;
    (0..N_CHANNELS)
        .map(|c| Ok(transfer_pearson(aligned.column(c), reference.column(c))?))
        .collect()
}

pub fn fit_alignment_on_split<F: Scalar>(
    f_a: &InversionProbe<F>,
    f_b: &InversionProbe<F>,
    split: &TargetSplit<F>,
    cfg: &AlignmentConfig,
) -> Result<AffineAlignment<F>, AlignmentError> {
    if f_a.source != f_b.source {
        return Err(AlignmentError::SourceMismatch(f_a.source.clone(), f_b.source.clone()));
    }
    let inputs = f_a.map.apply(split.x_train.view())?;
    let targets = match cfg.train_mode {
        TrainMode::ToPredictions => f_b.map.apply(split.x_train.view())?,
        TrainMode::ToGroundTruth => split.ema_train.clone(),
    };
    let fit = fit_lasso(inputs.view(), targets.view(), &cfg.lasso)?;
    let transfer_corr = score_alignment(f_a, f_b, &fit.map, split)?;
    let mean = transfer_corr.iter().sum::<f64>() / transfer_corr.len() as f64;
    Ok(AffineAlignment {
        source_speaker: f_a.speaker_id.clone(),
        target_speaker: f_b.speaker_id.clone(),
        converged: fit.converged(),
        map: fit.map,
        train_mode: cfg.train_mode,
        transfer_corr,
        mean,
    })
}

/// Fits `g_{A→B}` on B's training utterances and scores
/// `corr(g∘f_A, f_B)` on B's held-out utterances.
pub fn fit_alignment<F: Scalar>(
    f_a: &InversionProbe<F>,
    f_b: &InversionProbe<F>,
    target_data: &[AlignedUtterance<F>],
    cfg: &AlignmentConfig,
) -> Result<AffineAlignment<F>, AlignmentError> {
    if f_a.source != f_b.source {
        return Err(AlignmentError::SourceMismatch(f_a.source.clone(), f_b.source.clone()));
    }
    let split = TargetSplit::new(target_data, cfg)?;
    fit_alignment_on_split(f_a, f_b, &split, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub source: String,
    pub target: String,
    pub error: String,
}

/// Directed speaker×speaker transferability. Row = source, column = target.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix<F> {
    pub speakers: Vec<String>,
    /// NaN where the pair fit failed.
    pub values: Array2<f64>,
    /// Successful alignments in row-major pair order.
    pub alignments: Vec<AffineAlignment<F>>,
    pub failures: Vec<PairFailure>,
}

impl<F> TransferMatrix<F> {
    pub fn index_of(&self, speaker: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == speaker)
    }

    /// Off-diagonal entries only.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let s = self.speakers.len();
        (0..s)
            .flat_map(|i| (0..s).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.values[[i, j]])
            .filter(|v| v.is_finite())
            .collect()
    }

    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = self.values.iter().copied().filter(|v| v.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }
}

/// All `S²` directed alignments, self-transfer included. Pair failures are
/// collected rather than aborting the matrix.
pub fn transferability_matrix<F: Scalar>(
    probes: &[InversionProbe<F>],
    data_by_speaker: &BTreeMap<String, Vec<AlignedUtterance<F>>>,
    cfg: &AlignmentConfig,
) -> Result<TransferMatrix<F>, AlignmentError> {
    let s = probes.len();
    if s < 2 {
        return Err(AlignmentError::TooFewSpeakers(s));
    }
    let splits: Vec<TargetSplit<F>> = probes
        .par_iter()
        .map(|p| {
            let data = data_by_speaker
                .get(&p.speaker_id)
                .ok_or_else(|| AlignmentError::MissingTarget(p.speaker_id.clone()))?;
            TargetSplit::new(data, cfg)
        })
        .collect::<Result<_, _>>()?;
    let results: Vec<Result<AffineAlignment<F>, AlignmentError>> = (0..s * s)
        .into_par_iter()
        .map(|k| fit_alignment_on_split(&probes[k / s], &probes[k % s], &splits[k % s], cfg))
        .collect();

    let mut values = Array2::from_elem((s, s), f64::NAN);
    let mut alignments = Vec::with_capacity(s * s);
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        let (i, j) = (k / s, k % s);
        match r {
            Ok(a) => {
                values[[i, j]] = a.mean;
                alignments.push(a);
            }
            Err(e) => failures.push(PairFailure {
                source: probes[i].speaker_id.clone(),
                target: probes[j].speaker_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(TransferMatrix {
        speakers: probes.iter().map(|p| p.speaker_id.clone()).collect(),
        values,
        alignments,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMatrix {
    /// Sorted group labels.
    pub groups: Vec<Group>,
    /// `None` where no pair of distinct speakers exists.
    pub values: Array2<Option<f64>>,
}

/// Mean over ordered pairs `(A∈G1, B∈G2, A≠B)` for every group pair. Cells
/// without a pair are `None`.
pub fn group_matrix_partial(values: &Array2<f64>, speaker_groups: &[Group]) -> GroupMatrix {
    let mut groups: Vec<Group> = speaker_groups.to_vec();
    groups.sort();
    groups.dedup();
    let g = groups.len();
    let pos = |x: Group| groups.iter().position(|&y| y == x).expect("present");
    let mut sums = Array2::<f64>::zeros((g, g));
    let mut counts = Array2::<usize>::zeros((g, g));
    for (a, &ga) in speaker_groups.iter().enumerate() {
        for (b, &gb) in speaker_groups.iter().enumerate() {
            let v = values[[a, b]];
            if a != b && v.is_finite() {
                sums[[pos(ga), pos(gb)]] += v;
                counts[[pos(ga), pos(gb)]] += 1;
            }
        }
    }
    let values = Array2::from_shape_fn((g, g), |ij| (counts[ij] > 0).then(|| sums[ij] / counts[ij] as f64));
    GroupMatrix { groups, values }
}

/// Like [`group_matrix_partial`], failing with `EmptyGroupPair` when any cell
/// has no pair.
pub fn group_matrix(values: &Array2<f64>, speaker_groups: &[Group]) -> Result<GroupMatrix, AlignmentError> {
    if speaker_groups.len() != values.nrows() {
        return Err(AlignmentError::MissingGroup(format!(
            "{} labels for {} speakers",
            speaker_groups.len(),
            values.nrows()
        )));
    }
    let gm = group_matrix_partial(values, speaker_groups);
    if let Some(((i, j), _)) = gm.values.indexed_iter().find(|(_, v)| v.is_none()) {
        return Err(AlignmentError::EmptyGroupPair(
            gm.groups[i].to_string(),
            gm.groups[j].to_string(),
        ));
    }
    Ok(gm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSummary {
    /// Mean `|w|`, row = input channel, column = output channel.
    pub channels: Array2<f64>,
    /// 2×2 block means of `channels` per (input, output) articulator.
    pub articulators: Array2<f64>,
}

pub fn coefficient_matrix<F: Scalar>(alignments: &[AffineAlignment<F>]) -> Result<CoefficientSummary, AlignmentError> {
    if alignments.is_empty() {
        return Err(AlignmentError::Empty);
    }
    let mut channels = Array2::<f64>::zeros((N_CHANNELS, N_CHANNELS));
    for a in alignments {
        channels.zip_mut_with(&a.map.weights, |acc, w| *acc += w.to_f64_lossy().abs());
    }
    channels /= alignments.len() as f64;
    let articulators = Array2::from_shape_fn((N_ARTICULATORS, N_ARTICULATORS), |(i, j)| {
        let block = channels.slice(ndarray::s![2 * i..2 * i + 2, 2 * j..2 * j + 2]);
        block.sum() / 4.0
    });
    Ok(CoefficientSummary {
        channels,
        articulators,
    })
}

/// Per-channel mean of `transfer_corr`, canonical channel order.
pub fn articulator_scores<F>(alignments: &[AffineAlignment<F>]) -> Result<Vec<f64>, AlignmentError> {
    if alignments.is_empty() {
        return Err(AlignmentError::Empty);
    }
    let mut acc = Array1::<f64>::zeros(N_CHANNELS);
    for a in alignments {
        acc += &Array1::from(a.transfer_corr.clone());
    }
    Ok((acc / alignments.len() as f64).to_vec())
}
