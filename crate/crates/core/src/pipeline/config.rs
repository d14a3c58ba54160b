use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::alignment::{AlignmentConfig, TrainMode};
use crate::linalg::LassoConfig;
use crate::probing::{CorrelationMode, NormalizationOrder, PreprocessConfig, ProbeConfig, RidgeMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest_path: PathBuf,
    pub feature_sources: Vec<String>,
    /// Source whose probes feed the transfer analysis. Unset: `xlsr-layer17`
    /// when listed, otherwise the source with the best cohort-mean score.
    pub transfer_source: Option<String>,
    /// `None` disables the low-pass.
    pub lowpass_hz: Option<f64>,
    pub normalization_order: NormalizationOrder,
    pub n_folds: usize,
    /// Probe ridge as a multiple of `trace(XᵀX)/D`.
    pub ridge_factor: f64,
    pub correlation: CorrelationMode,
    pub lasso_alpha: f64,
    pub lasso_max_iter: usize,
    pub lasso_tol: f64,
    pub train_mode: TrainMode,
    pub test_fraction: f64,
    pub min_corr: f64,
    pub seed: u64,
    /// Restricts the dialect comparison to one corpus.
    pub dialect_corpus: Option<String>,
    /// Restricts the gender comparison to one corpus.
    pub gender_corpus: Option<String>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest_path: PathBuf::from("manifest.json"),
            feature_sources: Vec::new(),
            transfer_source: None,
            lowpass_hz: Some(6.0),
            normalization_order: NormalizationOrder::FilterThenNormalize,
            n_folds: 5,
            ridge_factor: 1e-4,
            correlation: CorrelationMode::FoldConcat,
            lasso_alpha: 0.01,
            lasso_max_iter: 1000,
            lasso_tol: 1e-6,
            train_mode: TrainMode::ToPredictions,
            test_fraction: 0.2,
            min_corr: 0.8,
            seed: 17,
            dialect_corpus: None,
            gender_corpus: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.feature_sources.is_empty() {
            return bad("feature_sources is empty".into());
        }
        let mut sorted = self.feature_sources.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("feature_sources has duplicates".into());
        }
        if let Some(t) = &self.transfer_source {
            if !self.feature_sources.contains(t) {
                return bad(format!("transfer_source {t:?} is not among feature_sources"));
            }
        }
        if let Some(hz) = self.lowpass_hz {
            if !(hz > 0.0 && hz.is_finite()) {
                return bad(format!("lowpass_hz must be positive, got {hz}"));
            }
        }
        if self.n_folds < 2 {
            return bad("n_folds must be at least 2".into());
        }
        if !(self.ridge_factor >= 0.0 && self.ridge_factor.is_finite()) {
            return bad("ridge_factor must be finite and nonnegative".into());
        }
        if !(self.lasso_alpha >= 0.0 && self.lasso_alpha.is_finite()) {
            return bad("lasso_alpha must be finite and nonnegative".into());
        }
        if self.lasso_max_iter == 0 || !(self.lasso_tol >= 0.0) {
            return bad("lasso_max_iter must be >= 1 and lasso_tol >= 0".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must be in (0, 1)".into());
        }
        if !(-1.0..=1.0).contains(&self.min_corr) {
            return bad("min_corr must be in [-1, 1]".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            lowpass_hz: self.lowpass_hz,
            order: self.normalization_order,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            ridge: RidgeMode::Relative(self.ridge_factor),
            correlation: self.correlation,
        }
    }

    pub fn alignment_config(&self) -> AlignmentConfig {
        AlignmentConfig {
            lasso: LassoConfig {
                alpha: self.lasso_alpha,
                max_iter: self.lasso_max_iter,
                tol: self.lasso_tol,
                fit_intercept: true,
            },
            train_mode: self.train_mode,
            test_fraction: self.test_fraction,
            seed: self.seed,
        }
    }
}
