//! Linear inversion probes: per-speaker affine maps from a feature source to
//! the 12 EMA channels, scored by cross-validated Pearson correlation.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ema::{
    align_frames, lowpass_filter, normalize_ema, EmaError, EmaTrajectory, FeatureMatrix, N_CHANNELS,
};
use crate::linalg::{fit_least_squares, mean_column_energy, AffineMap, SolverError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("input has zero variance")]
    ZeroVarianceInput,
    #[error("correlation needs two equal-length inputs of length ≥ 2, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("{speaker}: {found} utterance(s), at least {needed} required")]
    TooFewUtterances {
        speaker: String,
        found: usize,
        needed: usize,
    },
    #[error("utterance {utterance} is missing from source {source_name}")]
    InconsistentCoverage {
        utterance: String,
        source_name: String,
    },
    #[error("{0}")]
    Unaligned(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Ema(#[from] EmaError),
}

/// Pearson product-moment correlation, clamped to `[-1, 1]`.
pub fn pearson<F: Scalar>(x: ArrayView1<'_, F>, y: ArrayView1<'_, F>) -> Result<F, ProbeError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(ProbeError::LengthMismatch(x.len(), y.len()));
    }
    let n = F::from_usize_lossy(x.len());
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if !(sxx > F::zero() && syy > F::zero()) {
        return Err(ProbeError::ZeroVarianceInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).max(-F::one()).min(F::one()))
}

/// Utterance-level fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub n_folds: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl CvPlan {
    /// Shuffles the sorted, deduplicated ids with a seeded generator and deals
    /// them round-robin, so fold sizes differ by at most one.
    pub fn new<'a>(
        utterance_ids: impl IntoIterator<Item = &'a str>,
        n_folds: usize,
        seed: u64,
    ) -> Result<Self, ProbeError> {
        let mut ids: Vec<&str> = utterance_ids
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if n_folds < 2 || ids.len() < n_folds {
            return Err(ProbeError::TooFewUtterances {
                speaker: String::new(),
                found: ids.len(),
                needed: n_folds.max(2),
            });
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let assignment = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), i % n_folds))
            .collect();
        Ok(Self {
            n_folds,
            seed,
            assignment,
        })
    }

    pub fn for_data<F: Scalar>(data: &[AlignedUtterance<F>], n_folds: usize, seed: u64) -> Result<Self, ProbeError> {
        Self::new(data.iter().map(|u| u.utterance_id()), n_folds, seed).map_err(|e| match e {
            ProbeError::TooFewUtterances { found, needed, .. } => ProbeError::TooFewUtterances {
                speaker: data.first().map(|u| u.features.speaker_id.clone()).unwrap_or_default(),
                found,
                needed,
            },
            other => other,
        })
    }

    pub fn fold_of(&self, utterance_id: &str) -> Option<usize> {
        self.assignment.get(utterance_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Frame-aligned features and preprocessed EMA for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedUtterance<F> {
    pub features: FeatureMatrix<F>,
    /// Canonical channel order.
    pub ema: EmaTrajectory<F>,
}

impl<F: Scalar> AlignedUtterance<F> {
    pub fn new(features: FeatureMatrix<F>, ema: EmaTrajectory<F>) -> Result<Self, ProbeError> {
        if features.n_frames() != ema.n_frames() {
            return Err(ProbeError::Unaligned(format!(
                "{}: {} feature frames vs {} EMA frames",
                features.utterance_id,
                features.n_frames(),
                ema.n_frames()
            )));
        }
        if features.utterance_id != ema.utterance_id {
            return Err(ProbeError::Unaligned(format!(
                "utterance ids differ: {} vs {}",
                features.utterance_id, ema.utterance_id
            )));
        }
        Ok(Self {
            features,
            ema: ema.into_canonical(),
        })
    }

    pub fn utterance_id(&self) -> &str {
        &self.features.utterance_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationOrder {
    #[default]
    FilterThenNormalize,
    NormalizeThenFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// `None` disables low-pass filtering.
    pub lowpass_hz: Option<f64>,
    pub order: NormalizationOrder,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            lowpass_hz: Some(crate::ema::DEFAULT_CUTOFF_HZ),
            order: NormalizationOrder::default(),
        }
    }
}

/// Low-pass, standardize and frame-align one utterance.
///
/// Filtering runs at the native EMA rate. With `FilterThenNormalize` the
/// standardization happens after resampling, so the aligned targets have
/// exact zero mean and unit variance.
pub fn preprocess<F: Scalar>(
    ema: &EmaTrajectory<F>,
    features: &FeatureMatrix<F>,
    cfg: &PreprocessConfig,
) -> Result<AlignedUtterance<F>, ProbeError> {
    let filt = |t: &EmaTrajectory<F>| match cfg.lowpass_hz {
        Some(cut) => lowpass_filter(t, cut),
        None => Ok(t.clone()),
    };
    let (ema, feat) = match cfg.order {
        NormalizationOrder::FilterThenNormalize => {
            let (e, f) = align_frames(&filt(ema)?, features)?;
            (normalize_ema(&e)?, f)
        }
        NormalizationOrder::NormalizeThenFilter => {
            align_frames(&filt(&normalize_ema(ema)?)?, features)?
        }
    };
    AlignedUtterance::new(feat, ema)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum RidgeMode {
    /// `factor · trace(XcᵀXc)/D` on the training frames.
    Relative(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Pearson over the concatenated held-out frames of a fold.
    #[default]
    FoldConcat,
    /// Pearson per held-out utterance, averaged within the fold.
    PerUtterance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub ridge: RidgeMode,
    pub correlation: CorrelationMode,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            ridge: RidgeMode::Relative(1e-4),
            correlation: CorrelationMode::FoldConcat,
        }
    }
}

impl ProbeConfig {
    fn ridge_for<F: Scalar>(&self, x: ArrayView2<'_, F>) -> F {
        match self.ridge {
            RidgeMode::Relative(factor) => F::lit(factor) * mean_column_energy(x),
            RidgeMode::Absolute(r) => F::lit(r),
        }
    }

    pub fn fit<F: Scalar>(&self, x: ArrayView2<'_, F>, y: ArrayView2<'_, F>) -> Result<AffineMap<F>, SolverError> {
        fit_least_squares(x, y, self.ridge_for(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionProbe<F> {
    pub speaker_id: String,
    pub source: String,
    /// Refit on all utterances; `D → 12`.
    pub map: AffineMap<F>,
    /// `n_folds × 12` held-out correlations.
    pub cv_scores: Array2<f64>,
    pub mean_corr: f64,
}

impl<F> InversionProbe<F> {
    pub fn channel_means(&self) -> Vec<f64> {
        self.cv_scores
            .mean_axis(Axis(0))
            .map(|m| m.to_vec())
            .unwrap_or_default()
    }
}

/// Held-out predictions for every utterance plus per-fold scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome<F> {
    /// Indexed like the input data.
    pub predictions: Vec<Array2<F>>,
    pub cv_scores: Array2<f64>,
}

fn stack<'a, F: Scalar>(mats: impl Iterator<Item = ArrayView2<'a, F>>) -> Array2<F> {
    let views: Vec<_> = mats.collect();
    concatenate(Axis(0), &views).expect("consistent column counts")
}

fn check_speaker<F: Scalar>(data: &[AlignedUtterance<F>], plan: &CvPlan) -> Result<(), ProbeError> {
    let speaker = data.first().map(|u| u.features.speaker_id.clone()).unwrap_or_default();
    if data.len() < plan.n_folds {
        return Err(ProbeError::TooFewUtterances {
            speaker,
            found: data.len(),
            needed: plan.n_folds,
        });
    }
    let dim = data[0].features.dim();
    for u in data {
        if plan.fold_of(u.utterance_id()).is_none() {
            return Err(ProbeError::InconsistentCoverage {
                utterance: u.utterance_id().to_string(),
                source_name: "cv plan".into(),
            });
        }
        if u.features.dim() != dim {
            return Err(ProbeError::Unaligned(format!(
                "{}: feature dimension {} differs from {dim}",
                u.utterance_id(),
                u.features.dim()
            )));
        }
    }
    Ok(())
}

/// Cross-validated predictions and scores without the final refit.
pub fn cross_validate<F: Scalar>(
    data: &[AlignedUtterance<F>],
    plan: &CvPlan,
    cfg: &ProbeConfig,
) -> Result<CvOutcome<F>, ProbeError> {
    check_speaker(data, plan)?;
    let folds: Vec<usize> = data
        .iter()
        .map(|u| plan.fold_of(u.utterance_id()).expect("checked"))
        .collect();

    let per_fold: Vec<(Vec<(usize, Array2<F>)>, Vec<f64>)> = (0..plan.n_folds)
        .into_par_iter()
        .map(|fold| -> Result<_, ProbeError> {
            let train: Vec<&AlignedUtterance<F>> =
                data.iter().zip(&folds).filter(|(_, &f)| f != fold).map(|(u, _)| u).collect();
            let held: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == fold).collect();
            let x = stack(train.iter().map(|u| u.features.values.view()));
            let y = stack(train.iter().map(|u| u.ema.samples.view()));
            let map = cfg.fit(x.view(), y.view())?;
            let preds: Vec<(usize, Array2<F>)> = held
                .iter()
                .map(|&i| Ok((i, map.apply(data[i].features.values.view())?)))
                .collect::<Result<_, SolverError>>()?;
            let scores = score_fold(data, &preds, cfg.correlation)?;
            Ok((preds, scores))
        })
        .collect::<Result<_, _>>()?;

    let mut predictions = vec![Array2::zeros((0, N_CHANNELS)); data.len()];
    let mut cv_scores = Array2::zeros((plan.n_folds, N_CHANNELS));
    for (fold, (preds, scores)) in per_fold.into_iter().enumerate() {
        for (i, p) in preds {
            predictions[i] = p;
        }
        cv_scores.row_mut(fold).assign(&ndarray::Array1::from(scores));
    }
    Ok(CvOutcome {
        predictions,
        cv_scores,
    })
}

fn score_fold<F: Scalar>(
    data: &[AlignedUtterance<F>],
    preds: &[(usize, Array2<F>)],
    mode: CorrelationMode,
) -> Result<Vec<f64>, ProbeError> {
    match mode {
        CorrelationMode::FoldConcat => {
            let p = stack(preds.iter().map(|(_, p)| p.view()));
            let t = stack(preds.iter().map(|(i, _)| data[*i].ema.samples.view()));
            (0..N_CHANNELS)
                .map(|c| Ok(pearson(p.column(c), t.column(c))?.to_f64_lossy()))
                .collect()
        }
        CorrelationMode::PerUtterance => {
            let mut sums = vec![0.0; N_CHANNELS];
            for (i, p) in preds {
                for (c, s) in sums.iter_mut().enumerate() {
                    *s += pearson(p.column(c), data[*i].ema.samples.column(c))?.to_f64_lossy();
                }
            }
            Ok(sums.into_iter().map(|s| s / preds.len() as f64).collect())
        }
    }
}

/// Cross-validated probe for one speaker and one feature source. The returned
/// map is refit on all utterances.
pub fn fit_probe<F: Scalar>(
    data: &[AlignedUtterance<F>],
    plan: &CvPlan,
    cfg: &ProbeConfig,
) -> Result<InversionProbe<F>, ProbeError> {
    let outcome = cross_validate(data, plan, cfg)?;
    let x = stack(data.iter().map(|u| u.features.values.view()));
    let y = stack(data.iter().map(|u| u.ema.samples.view()));
    let map = cfg.fit(x.view(), y.view())?;
    let mean_corr = outcome.cv_scores.mean().unwrap_or(f64::NAN);
    Ok(InversionProbe {
        speaker_id: data[0].features.speaker_id.clone(),
        source: data[0].features.source.clone(),
        map,
        cv_scores: outcome.cv_scores,
        mean_corr,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSweep<F> {
    pub probes: Vec<InversionProbe<F>>,
    /// Index into `probes` of the highest `mean_corr`; ties go to the lower
    /// index.
    pub best: usize,
}

impl<F> LayerSweep<F> {
    pub fn best_probe(&self) -> &InversionProbe<F> {
        &self.probes[self.best]
    }
}

/// One probe per feature source, all sharing the same fold plan.
pub fn layer_sweep<F: Scalar>(
    layers: &[Vec<AlignedUtterance<F>>],
    plan: &CvPlan,
    cfg: &ProbeConfig,
) -> Result<LayerSweep<F>, ProbeError> {
    let reference: BTreeSet<&str> = layers
        .first()
        .ok_or_else(|| ProbeError::Unaligned("layer sweep needs at least one source".into()))?
        .iter()
        .map(|u| u.utterance_id())
        .collect();
    for layer in layers {
        let ids: BTreeSet<&str> = layer.iter().map(|u| u.utterance_id()).collect();
        let source = layer.first().map(|u| u.features.source.clone()).unwrap_or_default();
        if let Some(missing) = reference.symmetric_difference(&ids).next() {
            return Err(ProbeError::InconsistentCoverage {
                utterance: missing.to_string(),
                source_name: source,
            });
        }
    }
    let probes = layers
        .par_iter()
        .map(|layer| fit_probe(layer, plan, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let best = best_index(probes.iter().map(|p| p.mean_corr));
    Ok(LayerSweep { probes, best })
}

pub(crate) fn best_index(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.enumerate() {
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Speakers whose probe reaches `threshold` (inclusive), in input order.
pub fn filter_speakers<F>(probes: &[InversionProbe<F>], threshold: f64) -> Vec<String> {
    probes
        .iter()
        .filter(|p| p.mean_corr >= threshold)
        .map(|p| p.speaker_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn pearson_examples() {
        let x: Array1<f64> = array![1.0, 2.0, 3.0, 4.0];
        assert!((pearson(x.view(), x.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(x.view(), (-&x).view()).unwrap() + 1.0).abs() < 1e-15);
        let y = array![1.0, 2.0, 3.0, 10.0];
        // sums about the means: Sxy = 14, Sxx = 5, Syy = 50
        let oracle = 14.0 / (5.0f64 * 50.0).sqrt();
        let r = pearson(x.view(), y.view()).unwrap();
        assert!((r - oracle).abs() < 1e-12);
        assert!((r - 0.88544).abs() < 5e-4);
    }

    #[test]
    fn pearson_errors() {
        let x = array![1.0, 1.0, 1.0];
        let y = array![1.0, 2.0, 3.0];
        assert_eq!(pearson(x.view(), y.view()), Err(ProbeError::ZeroVarianceInput));
        assert!(matches!(
            pearson(y.view(), array![1.0, 2.0].view()),
            Err(ProbeError::LengthMismatch(3, 2))
        ));
    }

    #[test]
    fn plan_partitions_evenly_and_deterministically() {
        let ids: Vec<String> = (0..23).map(|i| format!("utt{i:02}")).collect();
        let plan = CvPlan::new(ids.iter().map(String::as_str), 5, 17).unwrap();
        let sizes = plan.fold_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut shuffled = ids.clone();
        shuffled.reverse();
        let again = CvPlan::new(shuffled.iter().map(String::as_str), 5, 17).unwrap();
        assert_eq!(plan, again);
        let other = CvPlan::new(ids.iter().map(String::as_str), 5, 18).unwrap();
        assert_ne!(plan.assignment, other.assignment);
    }

    #[test]
    fn plan_needs_enough_utterances() {
        assert!(matches!(
            CvPlan::new(["a", "b", "c"], 5, 0),
            Err(ProbeError::TooFewUtterances { found: 3, needed: 5, .. })
        ));
    }

    fn smooth_ema(t: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let mut out = Array2::zeros((t, N_CHANNELS));
        for c in 0..N_CHANNELS {
            let f = rng.random_range(0.3..3.0);
            let ph = rng.random_range(0.0..6.28);
            let f2 = rng.random_range(0.3..3.0);
            for i in 0..t {
                let time = i as f64 / 50.0;
                out[[i, c]] = (6.283 * f * time + ph).sin() + 0.5 * (6.283 * f2 * time).cos();
            }
        }
        out
    }

    fn dataset(n_utts: usize, informative: bool, seed: u64) -> Vec<AlignedUtterance<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_utts)
            .map(|u| {
                let id = format!("u{u}");
                let ema = normalize_ema(
                    &EmaTrajectory::canonical("spk", &id, 50.0, smooth_ema(100, &mut rng)).unwrap(),
                )
                .unwrap();
                let extra: Array2<f64> = Array2::from_shape_fn((100, 4), |_| StandardNormal.sample(&mut rng));
                let feats = if informative {
                    concatenate(Axis(1), &[ema.samples.view(), extra.view()]).unwrap()
                } else {
                    Array2::from_shape_fn((100, 16), |_| StandardNormal.sample(&mut rng))
                };
                let feat = FeatureMatrix::new("spk", &id, "src", 0.02, feats).unwrap();
                AlignedUtterance::new(feat, ema).unwrap()
            })
            .collect()
    }

    #[test]
    fn features_containing_targets_probe_perfectly() {
        let data = dataset(10, true, 1);
        let plan = CvPlan::for_data(&data, 5, 3).unwrap();
        let probe = fit_probe(&data, &plan, &ProbeConfig::default()).unwrap();
        assert!(probe.mean_corr >= 0.999, "{}", probe.mean_corr);
        assert_eq!(probe.cv_scores.dim(), (5, 12));
        assert!((probe.mean_corr - probe.cv_scores.mean().unwrap()).abs() < 1e-9);
        assert!((probe.channel_means().iter().sum::<f64>() / 12.0 - probe.mean_corr).abs() < 1e-9);
    }

    #[test]
    fn independent_features_score_near_zero() {
        let data = dataset(20, false, 2);
        let plan = CvPlan::for_data(&data, 5, 3).unwrap();
        let probe = fit_probe(&data, &plan, &ProbeConfig::default()).unwrap();
        assert!(probe.mean_corr.abs() < 0.1, "{}", probe.mean_corr);
        assert!(probe.cv_scores.iter().all(|r| (-1.0..=1.0).contains(r)));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let data = dataset(10, false, 3);
        let plan = CvPlan::for_data(&data, 5, 9).unwrap();
        let a = fit_probe(&data, &plan, &ProbeConfig::default()).unwrap();
        let b = fit_probe(&data, &plan, &ProbeConfig::default()).unwrap();
        assert_eq!(a.cv_scores, b.cv_scores);
        assert_eq!(a.map, b.map);
    }

    #[test]
    fn held_out_targets_never_reach_their_own_fold() {
        let data = dataset(10, true, 4);
        let plan = CvPlan::for_data(&data, 5, 5).unwrap();
        let cfg = ProbeConfig::default();
        let clean = cross_validate(&data, &plan, &cfg).unwrap();
        let target_fold = 2;
        let mut corrupted = data.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for u in corrupted.iter_mut() {
            if plan.fold_of(u.utterance_id()) == Some(target_fold) {
                u.ema.samples.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            }
        }
        let dirty = cross_validate(&corrupted, &plan, &cfg).unwrap();
        for (i, u) in data.iter().enumerate() {
            if plan.fold_of(u.utterance_id()) == Some(target_fold) {
                assert_eq!(clean.predictions[i], dirty.predictions[i]);
            }
        }
        assert_ne!(clean.cv_scores.row(target_fold), dirty.cv_scores.row(target_fold));
    }

    #[test]
    fn scaling_features_leaves_scores_unchanged() {
        let data = dataset(10, true, 5);
        let plan = CvPlan::for_data(&data, 5, 1).unwrap();
        let scaled: Vec<_> = data
            .iter()
            .map(|u| {
                let mut u = u.clone();
                u.features.values *= 37.5;
                u
            })
            .collect();
        let a = fit_probe(&data, &plan, &ProbeConfig::default()).unwrap();
        let b = fit_probe(&scaled, &plan, &ProbeConfig::default()).unwrap();
        for (x, y) in a.cv_scores.iter().zip(b.cv_scores.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn per_utterance_mode_differs_but_stays_bounded() {
        let data = dataset(10, true, 6);
        let plan = CvPlan::for_data(&data, 5, 1).unwrap();
        let cfg = ProbeConfig {
            correlation: CorrelationMode::PerUtterance,
            ..ProbeConfig::default()
        };
        let probe = fit_probe(&data, &plan, &cfg).unwrap();
        assert!(probe.mean_corr > 0.99);
    }

    fn with_source(data: &[AlignedUtterance<f64>], source: &str) -> Vec<AlignedUtterance<f64>> {
        data.iter()
            .map(|u| {
                let mut u = u.clone();
                u.features.source = source.into();
                u
            })
            .collect()
    }

    #[test]
    fn sweep_picks_informative_layer() {
        let informative = dataset(10, true, 7);
        let noise_a = dataset(10, false, 8);
        let noise_b = dataset(10, false, 9);
        let layers = vec![
            with_source(&noise_a, "l0"),
            with_source(&informative, "l1"),
            with_source(&noise_b, "l2"),
        ];
        let plan = CvPlan::for_data(&informative, 5, 2).unwrap();
        let sweep = layer_sweep(&layers, &plan, &ProbeConfig::default()).unwrap();
        assert_eq!(sweep.best, 1);
        assert_eq!(sweep.best_probe().source, "l1");
    }

    #[test]
    fn sweep_ties_go_to_lower_index_and_single_layer_wins() {
        let data = dataset(10, true, 10);
        let plan = CvPlan::for_data(&data, 5, 2).unwrap();
        let layers = vec![with_source(&data, "a"), with_source(&data, "b")];
        let sweep = layer_sweep(&layers, &plan, &ProbeConfig::default()).unwrap();
        assert_eq!(sweep.probes[0].mean_corr, sweep.probes[1].mean_corr);
        assert_eq!(sweep.best, 0);
        let single = layer_sweep(&layers[..1], &plan, &ProbeConfig::default()).unwrap();
        assert_eq!(single.best, 0);
    }

    #[test]
    fn sweep_detects_missing_utterance() {
        let data = dataset(10, true, 11);
        let plan = CvPlan::for_data(&data, 5, 2).unwrap();
        let layers = vec![with_source(&data, "a"), with_source(&data[1..], "b")];
        assert!(matches!(
            layer_sweep(&layers, &plan, &ProbeConfig::default()),
            Err(ProbeError::InconsistentCoverage { .. })
        ));
    }

    fn probe_with(speaker: &str, corr: f64) -> InversionProbe<f64> {
        InversionProbe {
            speaker_id: speaker.into(),
            source: "s".into(),
            map: AffineMap::identity(12),
            cv_scores: Array2::from_elem((5, 12), corr),
            mean_corr: corr,
        }
    }

    #[test]
    fn filter_is_inclusive_and_stable() {
        let probes = vec![
            probe_with("c", 0.85),
            probe_with("a", 0.8),
            probe_with("b", 0.79999),
            probe_with("d", 0.9),
        ];
        assert_eq!(filter_speakers(&probes, 0.8), ["c", "a", "d"]);
        let all: Vec<_> = ["x", "y"].iter().map(|s| probe_with(s, 0.85)).collect();
        assert_eq!(filter_speakers(&all, 0.8).len(), 2);
    }

    #[test]
    fn preprocessing_yields_standardized_aligned_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let raw = smooth_ema(300, &mut rng) * 4.0 + 2.0;
        let ema = EmaTrajectory::canonical("s", "u", 100.0, raw).unwrap();
        let feat = FeatureMatrix::new("s", "u", "src", 0.02, Array2::<f64>::ones((160, 3))).unwrap();
        for order in [NormalizationOrder::FilterThenNormalize, NormalizationOrder::NormalizeThenFilter] {
            let cfg = PreprocessConfig { lowpass_hz: Some(6.0), order };
            let u = preprocess(&ema, &feat, &cfg).unwrap();
            assert_eq!(u.ema.n_frames(), 150);
            assert_eq!(u.features.n_frames(), 150);
            let mean: Array1<f64> = u.ema.samples.mean_axis(Axis(0)).unwrap();
            if order == NormalizationOrder::FilterThenNormalize {
                assert!(mean.iter().all(|m| m.abs() < 1e-9));
            } else {
                assert!(mean.iter().all(|m| m.abs() < 0.1));
            }
        }
    }
}
