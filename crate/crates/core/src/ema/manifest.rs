//! Corpus manifest: a JSON array of utterance entries.
//!
//! `feature_path` may contain the placeholder `{source}`, which is replaced by
//! the feature source name so one manifest can address several layers.
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Gender, Group, SpeakerMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub group: Group,
    #[serde(default)]
    pub gender: Gender,
    pub utterance_id: String,
    pub feature_path: String,
    pub ema_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest: speaker {speaker} has inconsistent metadata")]
    InconsistentSpeaker { speaker: String },
    #[error("manifest: duplicate utterance {speaker}/{utterance}")]
    DuplicateUtterance { speaker: String, utterance: String },
    #[error("manifest is empty")]
    Empty,
}

pub const SOURCE_PLACEHOLDER: &str = "{source}";

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        if entries.is_empty() {
            return Err(ManifestError::Empty);
        }
        let mut seen = BTreeMap::new();
        let mut meta: BTreeMap<&str, (Group, Gender, &Option<String>)> = BTreeMap::new();
        for e in &entries {
            if seen
                .insert((e.speaker_id.as_str(), e.utterance_id.as_str()), ())
                .is_some()
            {
                return Err(ManifestError::DuplicateUtterance {
                    speaker: e.speaker_id.clone(),
                    utterance: e.utterance_id.clone(),
                });
            }
            let m = meta
                .entry(e.speaker_id.as_str())
                .or_insert((e.group, e.gender, &e.corpus));
            if *m != (e.group, e.gender, &e.corpus) {
                return Err(ManifestError::InconsistentSpeaker {
                    speaker: e.speaker_id.clone(),
                });
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_slice(&bytes).map_err(|source| ManifestError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, base)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(&self.entries).map_err(|source| ManifestError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, json).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<SpeakerMeta> {
        let mut out: Vec<SpeakerMeta> = Vec::new();
        for e in &self.entries {
            if !out.iter().any(|s| s.speaker_id == e.speaker_id) {
                out.push(SpeakerMeta {
                    speaker_id: e.speaker_id.clone(),
                    corpus: e.corpus.clone().unwrap_or_default(),
                    group: e.group,
                    gender: e.gender,
                    minutes: 0.0,
                });
            }
        }
        out
    }

    pub fn utterances_of<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.speaker_id == speaker)
    }

    pub fn feature_path(&self, entry: &ManifestEntry, source: &str) -> PathBuf {
        self.resolve(&entry.feature_path.replace(SOURCE_PLACEHOLDER, source))
    }

    pub fn ema_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.resolve(&entry.ema_path)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(spk: &str, utt: &str, group: Group) -> ManifestEntry {
        ManifestEntry {
            speaker_id: spk.into(),
            group,
            gender: Gender::M,
            utterance_id: utt.into(),
            feature_path: format!("feats/{{source}}/{spk}_{utt}.akf"),
            ema_path: format!("ema/{spk}_{utt}.akf"),
            corpus: None,
        }
    }

    #[test]
    fn parses_documented_schema() {
        let json = r#"[{"speaker_id":"s1","group":"EN.US","gender":"F","utterance_id":"u1",
            "feature_path":"f/{source}/u1.akf","ema_path":"/abs/u1.akf"}]"#;
        let entries: Vec<ManifestEntry> = serde_json::from_str(json).unwrap();
        let m = Manifest::new(entries, "/data").unwrap();
        assert_eq!(m.entries[0].group, Group::EnUs);
        assert_eq!(
            m.feature_path(&m.entries[0], "xlsr-layer17"),
            PathBuf::from("/data/f/xlsr-layer17/u1.akf")
        );
        assert_eq!(m.ema_path(&m.entries[0]), PathBuf::from("/abs/u1.akf"));
    }

    #[test]
    fn rejects_conflicting_speaker_groups() {
        let entries = vec![entry("a", "1", Group::EnUs), entry("a", "2", Group::EnUk)];
        assert!(matches!(
            Manifest::new(entries, "."),
            Err(ManifestError::InconsistentSpeaker { .. })
        ));
    }

    #[test]
    fn rejects_duplicates() {
        let entries = vec![entry("a", "1", Group::It), entry("a", "1", Group::It)];
        assert!(matches!(
            Manifest::new(entries, "."),
            Err(ManifestError::DuplicateUtterance { .. })
        ));
    }

    #[test]
    fn speakers_in_first_appearance_order() {
        let entries = vec![
            entry("b", "1", Group::It),
            entry("a", "1", Group::Man),
            entry("b", "2", Group::It),
        ];
        let m = Manifest::new(entries, ".").unwrap();
        let ids: Vec<_> = m.speakers().into_iter().map(|s| s.speaker_id).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(m.utterances_of("b").count(), 2);
    }
}
