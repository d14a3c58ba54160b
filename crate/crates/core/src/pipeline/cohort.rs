use std::collections::BTreeMap;

use rayon::prelude::*;

use super::PipelineError;
use crate::ema::{read_akf, EmaTrajectory, FeatureMatrix, Manifest, SpeakerMeta};
use crate::probing::{preprocess, AlignedUtterance, PreprocessConfig};
use crate::synth::SynthCohort;

/// One utterance as ingested, before any preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawUtterance {
    pub ema: EmaTrajectory<f64>,
    pub features: BTreeMap<String, FeatureMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    /// Speakers in manifest order.
    pub speakers: Vec<SpeakerMeta>,
    pub utterances: BTreeMap<String, Vec<RawUtterance>>,
}

impl Cohort {
    /// Reads every EMA file and, for each source, every feature file listed
    /// in the manifest. Identifiers come from the manifest.
    pub fn load(manifest: &Manifest, sources: &[String]) -> Result<Self, PipelineError> {
        let loaded: Vec<RawUtterance> = manifest
            .entries
            .par_iter()
            .map(|e| {
                let ema_path = manifest.ema_path(e);
                let mut ema = read_akf::<f64>(&ema_path)
                    .and_then(|r| r.into_ema())
                    .map_err(|err| PipelineError::data(ema_path.display().to_string(), err))?;
                ema.speaker_id.clone_from(&e.speaker_id);
                ema.utterance_id.clone_from(&e.utterance_id);
                let mut features = BTreeMap::new();
                for source in sources {
                    let path = manifest.feature_path(e, source);
                    let mut f = read_akf::<f64>(&path)
                        .and_then(|r| r.into_features())
                        .map_err(|err| PipelineError::data(path.display().to_string(), err))?;
                    f.speaker_id.clone_from(&e.speaker_id);
                    f.utterance_id.clone_from(&e.utterance_id);
                    f.source.clone_from(source);
                    features.insert(source.clone(), f);
                }
                Ok(RawUtterance {
                    ema: ema.into_canonical(),
                    features,
                })
            })
            .collect::<Result<_, PipelineError>>()?;

        let mut utterances: BTreeMap<String, Vec<RawUtterance>> = BTreeMap::new();
        for u in loaded {
            utterances.entry(u.ema.speaker_id.clone()).or_default().push(u);
        }
        let speakers = manifest
            .speakers()
            .into_iter()
            .map(|mut s| {
                let seconds: f64 = utterances[&s.speaker_id].iter().map(|u| u.ema.duration()).sum();
                s.minutes = seconds / 60.0;
                s
            })
            .collect();
        Ok(Self { speakers, utterances })
    }

    pub fn from_synth(cohort: &SynthCohort) -> Self {
        let mut utterances: BTreeMap<String, Vec<RawUtterance>> = BTreeMap::new();
        for u in &cohort.utterances {
            utterances.entry(u.ema.speaker_id.clone()).or_default().push(RawUtterance {
                ema: u.ema.clone(),
                features: u.features.iter().map(|f| (f.source.clone(), f.clone())).collect(),
            });
        }
        Self {
            speakers: cohort.speakers.clone(),
            utterances,
        }
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerMeta> {
        self.speakers.iter().find(|s| s.speaker_id == id)
    }

    /// Filters, normalizes and aligns one speaker's utterances for `source`.
    pub fn prepare(
        &self,
        speaker: &str,
        source: &str,
        cfg: &PreprocessConfig,
    ) -> Result<Vec<AlignedUtterance<f64>>, PipelineError> {
        let utts = self
            .utterances
            .get(speaker)
            .ok_or_else(|| PipelineError::data(speaker, "no utterances"))?;
        utts.iter()
            .map(|u| {
                let ctx = format!("{speaker}/{}", u.ema.utterance_id);
                let f = u
                    .features
                    .get(source)
                    .ok_or_else(|| PipelineError::data(&ctx, format!("no features for source {source:?}")))?;
                preprocess(&u.ema, f, cfg).map_err(|e| PipelineError::data(&ctx, e))
            })
            .collect()
    }
}
