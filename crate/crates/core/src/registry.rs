//! Metadata for the public EMA corpora the analysis was designed around.

use serde::Serialize;

use crate::ema::Group;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusGroup {
    pub corpus: &'static str,
    pub group: Group,
    pub speakers: usize,
    /// Speakers passing the inversion threshold used for transfer analysis.
    pub retained: usize,
    pub minutes_per_speaker: f64,
    pub gender_balanced: bool,
}

const fn row(
    corpus: &'static str,
    group: Group,
    speakers: usize,
    retained: usize,
    minutes_per_speaker: f64,
    gender_balanced: bool,
) -> CorpusGroup {
    CorpusGroup {
        corpus,
        group,
        speakers,
        retained,
        minutes_per_speaker,
        gender_balanced,
    }
}

pub const CORPORA: [CorpusGroup; 8] = [
    row("MNGU0", Group::EnUk, 1, 1, 75.0, false),
    row("MOCHA-TIMIT", Group::EnUk, 7, 7, 27.0, true),
    row("HPRC", Group::EnUs, 8, 8, 59.0, true),
    row("EMA-MAE", Group::EnUs, 20, 18, 12.0, true),
    row("EMA-MAE", Group::EnBj, 10, 9, 17.0, true),
    row("EMA-MAE", Group::EnSh, 9, 5, 16.0, true),
    row("DKU-JNU-EMA", Group::Man, 4, 2, 20.0, false),
    row("MSPKA", Group::It, 3, 2, 47.0, false),
];

/// Case-insensitive lookup; a corpus may span several groups.
pub fn lookup(corpus: &str) -> Vec<&'static CorpusGroup> {
    CORPORA
        .iter()
        .filter(|c| c.corpus.eq_ignore_ascii_case(corpus))
        .collect()
}

pub fn total_speakers() -> (usize, usize) {
    CORPORA
        .iter()
        .fold((0, 0), |(s, r), c| (s + c.speakers, r + c.retained))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hprc() {
        let rows = lookup("hprc");
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].group, Group::EnUs);
        assert_eq!(rows[0].speakers, 8);
        assert_eq!(rows[0].minutes_per_speaker, 59.0);
    }

    #[test]
    fn totals() {
        assert_eq!(total_speakers(), (62, 52));
        assert_eq!(lookup("EMA-MAE").len(), 3);
        assert_eq!(lookup("MSPKA")[0].group, Group::It);
        assert!(lookup("TIMIT").is_empty());
    }
}
