use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cohort, PipelineError, RunConfig};
use crate::alignment::{
    articulator_scores, coefficient_matrix, group_matrix_partial, transferability_matrix, AlignmentError,
    CoefficientSummary, GroupMatrix, TransferMatrix,
};
use crate::ema::SpeakerMeta;
use crate::probing::{filter_speakers, layer_sweep, AlignedUtterance, CvPlan, InversionProbe};
use crate::stats::{within_across, Partition, WithinAcross};

/// Source used for transfer when none is configured and it is available.
pub const DEFAULT_TRANSFER_SOURCE: &str = "xlsr-layer17";

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerSweep {
    pub speaker: SpeakerMeta,
    /// One probe per configured source, in configuration order.
    pub probes: Vec<InversionProbe<f64>>,
    pub best: usize,
}

impl SpeakerSweep {
    pub fn best_probe(&self) -> &InversionProbe<f64> {
        &self.probes[self.best]
    }

    pub fn probe_for(&self, source: &str) -> Option<&InversionProbe<f64>> {
        self.probes.iter().find(|p| p.source == source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSpeaker {
    pub speaker_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferAnalysis {
    pub source: String,
    /// Row/column labels of `matrix`.
    pub speakers: Vec<SpeakerMeta>,
    pub matrix: TransferMatrix<f64>,
    pub groups: GroupMatrix,
    pub coefficients: Option<CoefficientSummary>,
    pub articulator_scores: Option<Vec<f64>>,
    pub dialect: Option<WithinAcross>,
    pub gender: Option<WithinAcross>,
    /// Speakers whose self-transfer falls below the matrix median.
    pub self_transfer_violations: Vec<String>,
    pub issues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub sources: Vec<String>,
    pub speakers: Vec<SpeakerMeta>,
    /// Speakers whose probes all fit, in cohort order.
    pub sweeps: Vec<SpeakerSweep>,
    pub dropped: Vec<DroppedSpeaker>,
    /// Speakers passing the correlation threshold on their best source.
    pub retained: Vec<String>,
    pub transfer_source: String,
    pub transfer: Option<TransferAnalysis>,
    pub issues: Vec<String>,
}

/// Probes every source for one speaker on a shared fold plan.
fn sweep_speaker(
    cohort: &Cohort,
    meta: &SpeakerMeta,
    cfg: &RunConfig,
) -> Result<(SpeakerSweep, Vec<Vec<AlignedUtterance<f64>>>), String> {
    let pre = cfg.preprocess_config();
    let layers = cfg
        .feature_sources
        .iter()
        .map(|s| cohort.prepare(&meta.speaker_id, s, &pre))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let plan = CvPlan::for_data(&layers[0], cfg.n_folds, cfg.seed).map_err(|e| e.to_string())?;
    let sweep = layer_sweep(&layers, &plan, &cfg.probe_config()).map_err(|e| e.to_string())?;
    if let Some(p) = sweep.probes.iter().find(|p| !p.mean_corr.is_finite()) {
        return Err(format!("non-finite probe score for {}", p.source));
    }
    Ok((
        SpeakerSweep {
            speaker: meta.clone(),
            probes: sweep.probes,
            best: sweep.best,
        },
        layers,
    ))
}

type LayerData = Vec<Vec<AlignedUtterance<f64>>>;

fn sweep_with_data(cohort: &Cohort, cfg: &RunConfig) -> (Vec<SpeakerSweep>, Vec<LayerData>, Vec<DroppedSpeaker>) {
    let results: Vec<_> = cohort
        .speakers
        .par_iter()
        .map(|m| (m.speaker_id.clone(), sweep_speaker(cohort, m, cfg)))
        .collect();
    let mut sweeps = Vec::new();
    let mut layer_data = Vec::new();
    let mut dropped = Vec::new();
    for (id, r) in results {
        match r {
            Ok((s, d)) => {
                sweeps.push(s);
                layer_data.push(d);
            }
            Err(reason) => {
                warn!("dropping speaker {id}: {reason}");
                dropped.push(DroppedSpeaker { speaker_id: id, reason });
            }
        }
    }
    (sweeps, layer_data, dropped)
}

/// Probes every configured source for every speaker. Speakers whose data or
/// probes fail are dropped and reported.
pub fn sweep_cohort(cohort: &Cohort, cfg: &RunConfig) -> (Vec<SpeakerSweep>, Vec<DroppedSpeaker>) {
    let (sweeps, _, dropped) = sweep_with_data(cohort, cfg);
    (sweeps, dropped)
}

/// Probes a single source for every speaker. Failing speakers are dropped.
pub fn probe_source(
    cohort: &Cohort,
    source: &str,
    cfg: &RunConfig,
) -> (Vec<(InversionProbe<f64>, Vec<AlignedUtterance<f64>>)>, Vec<DroppedSpeaker>) {
    let single = RunConfig {
        feature_sources: vec![source.to_string()],
        ..cfg.clone()
    };
    let (sweeps, data, dropped) = sweep_with_data(cohort, &single);
    let ok = sweeps
        .into_iter()
        .zip(data)
        .map(|(mut s, mut d)| (s.probes.remove(0), d.remove(0)))
        .collect();
    (ok, dropped)
}

/// The configured transfer source, else [`DEFAULT_TRANSFER_SOURCE`] when
/// listed, else the source with the highest cohort-mean probe score.
pub fn resolve_transfer_source(cfg: &RunConfig, sweeps: &[SpeakerSweep]) -> String {
    if let Some(s) = &cfg.transfer_source {
        return s.clone();
    }
    if cfg.feature_sources.iter().any(|s| s == DEFAULT_TRANSFER_SOURCE) {
        return DEFAULT_TRANSFER_SOURCE.to_string();
    }
    let mut best = (cfg.feature_sources[0].clone(), f64::NEG_INFINITY);
    for (i, source) in cfg.feature_sources.iter().enumerate() {
        let scores: Vec<f64> = sweeps.iter().map(|s| s.probes[i].mean_corr).collect();
        if scores.is_empty() {
            continue;
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        if mean > best.1 {
            best = (source.clone(), mean);
        }
    }
    best.0
}

/// Transferability, group, coefficient, articulator and partition analyses
/// for one set of probes. Only a failure to build the matrix at all is an
/// error; everything downstream is recorded as an issue.
pub fn analyze_transfer(
    probes: &[InversionProbe<f64>],
    data: &BTreeMap<String, Vec<AlignedUtterance<f64>>>,
    metas: &[SpeakerMeta],
    cfg: &RunConfig,
) -> Result<TransferAnalysis, PipelineError> {
    let speakers: Vec<SpeakerMeta> = probes
        .iter()
        .map(|p| {
            metas
                .iter()
                .find(|m| m.speaker_id == p.speaker_id)
                .cloned()
                .ok_or_else(|| PipelineError::data(&p.speaker_id, "speaker missing from manifest"))
        })
        .collect::<Result<_, _>>()?;
    let source = probes.first().map(|p| p.source.clone()).unwrap_or_default();
    let matrix = transferability_matrix(probes, data, &cfg.alignment_config()).map_err(|e| match e {
        AlignmentError::TooFewSpeakers(_) | AlignmentError::MissingTarget(_) | AlignmentError::SourceMismatch(..) => {
            PipelineError::data("transfer", e)
        }
        AlignmentError::TooFewUtterances { ref speaker, .. } => PipelineError::data(speaker.clone(), e),
        other => PipelineError::Numerical(other.to_string()),
    })?;

    let mut issues: Vec<String> = matrix
        .failures
        .iter()
        .map(|f| format!("pair {} -> {} failed: {}", f.source, f.target, f.error))
        .collect();
    let groups = group_matrix_partial(&matrix.values, &speakers.iter().map(|m| m.group).collect::<Vec<_>>());
    for ((i, j), v) in groups.values.indexed_iter() {
        if v.is_none() {
            issues.push(format!("group pair ({}, {}) has no speaker pair", groups.groups[i], groups.groups[j]));
        }
    }
    let coefficients = coefficient_matrix(&matrix.alignments)
        .map_err(|e| issues.push(format!("coefficient matrix: {e}")))
        .ok();
    let articulator_scores = articulator_scores(&matrix.alignments)
        .map_err(|e| issues.push(format!("articulator scores: {e}")))
        .ok();
    let mut partition = |p: Partition, corpus: Option<&str>| {
        within_across(&matrix.values, &speakers, p, corpus)
            .map_err(|e| issues.push(format!("{p:?} comparison: {e}")))
            .ok()
    };
    let dialect = partition(Partition::Dialect, cfg.dialect_corpus.as_deref());
    let gender = partition(Partition::Gender, cfg.gender_corpus.as_deref());

    let median = matrix.median();
    let self_transfer_violations: Vec<String> = (0..speakers.len())
        .filter(|&i| matrix.values[[i, i]].is_finite() && matrix.values[[i, i]] < median)
        .map(|i| matrix.speakers[i].clone())
        .collect();
    for s in &self_transfer_violations {
        issues.push(format!("self-transfer of {s} is below the matrix median"));
    }
    for i in &issues {
        warn!("{i}");
    }
    Ok(TransferAnalysis {
        source,
        speakers,
        matrix,
        groups,
        coefficients,
        articulator_scores,
        dialect,
        gender,
        self_transfer_violations,
        issues,
    })
}

/// Probe sweep, layer selection, speaker filtering and transfer analysis.
pub fn run_analysis(cohort: &Cohort, cfg: &RunConfig) -> Result<Analysis, PipelineError> {
    cfg.validate()?;
    let (sweeps, layer_data, dropped) = sweep_with_data(cohort, cfg);
    let mut issues: Vec<String> = dropped
        .iter()
        .map(|d| format!("speaker {} dropped: {}", d.speaker_id, d.reason))
        .collect();

    let best: Vec<InversionProbe<f64>> = sweeps.iter().map(|s| s.best_probe().clone()).collect();
    let retained = filter_speakers(&best, cfg.min_corr);
    let transfer_source = resolve_transfer_source(cfg, &sweeps);
    let src_idx = cfg
        .feature_sources
        .iter()
        .position(|s| *s == transfer_source)
        .expect("transfer source is validated against feature_sources");

    let mut probes = Vec::new();
    let mut data = BTreeMap::new();
    for (sweep, layers) in sweeps.iter().zip(layer_data) {
        if retained.contains(&sweep.speaker.speaker_id) {
            probes.push(sweep.probes[src_idx].clone());
            data.insert(sweep.speaker.speaker_id.clone(), layers.into_iter().nth(src_idx).expect("one per source"));
        }
    }
    let transfer = if probes.len() < 2 {
        issues.push(format!(
            "transfer analysis skipped: {} speaker(s) retained at min_corr {}",
            probes.len(),
            cfg.min_corr
        ));
        None
    } else {
        let t = analyze_transfer(&probes, &data, &cohort.speakers, cfg)?;
        issues.extend(t.issues.iter().cloned());
        Some(t)
    };
    Ok(Analysis {
        sources: cfg.feature_sources.clone(),
        speakers: cohort.speakers.clone(),
        sweeps,
        dropped,
        retained,
        transfer_source,
        transfer,
        issues,
    })
}
