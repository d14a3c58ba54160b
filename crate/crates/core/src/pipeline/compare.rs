use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::PipelineError;
use crate::ema::SpeakerMeta;
use crate::stats::{paired_test, within_across, PairedComparison, PairedTest, Partition, WithinAcross};

fn reader(path: &Path) -> Result<(csv::Reader<std::fs::File>, Vec<String>), PipelineError> {
    let ctx = || path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| PipelineError::data(ctx(), e))?;
    let header = r.headers().map_err(|e| PipelineError::data(ctx(), e))?.iter().map(String::from).collect();
    Ok((r, header))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize, PipelineError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| PipelineError::data(path.display().to_string(), format!("missing column `{name}`")))
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64, PipelineError> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse()
        .map_err(|_| PipelineError::data(format!("{}:{line}", path.display()), format!("not a number: `{s}`")))
}

/// Per-speaker score from a CSV with `speaker` and `mean_corr` columns. With
/// several rows per speaker (a layer sweep) the maximum is kept.
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>, PipelineError> {
    let path = path.as_ref();
    let (mut r, header) = reader(path)?;
    let (si, ci) = (column(&header, "speaker", path)?, column(&header, "mean_corr", path)?);
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| PipelineError::data(path.display().to_string(), e))?;
        let v = parse_f64(&rec[ci], path, line + 2)?;
        let slot = out.entry(rec[si].to_string()).or_insert(f64::NEG_INFINITY);
        if v > *slot {
            *slot = v;
        }
    }
    Ok(out)
}

/// Paired test over the speakers present in both score sets.
pub fn compare_preference(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
    test: PairedTest,
) -> Result<PairedComparison, PipelineError> {
    let labels: Vec<String> = a.keys().filter(|k| b.contains_key(*k)).cloned().collect();
    let xa: Vec<f64> = labels.iter().map(|k| a[k]).collect();
    let xb: Vec<f64> = labels.iter().map(|k| b[k]).collect();
    paired_test(&labels, &xa, &xb, test).map_err(|e| PipelineError::data("preference", e))
}

/// A square speaker matrix as written to `matrix.csv`. Empty cells read as
/// NaN.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Array2<f64>), PipelineError> {
    let path = path.as_ref();
    let (mut r, header) = reader(path)?;
    let speakers: Vec<String> = header.iter().skip(1).cloned().collect();
    let s = speakers.len();
    let mut values = Array2::from_elem((s, s), f64::NAN);
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| PipelineError::data(path.display().to_string(), e))?;
        if i >= s || rec.len() != s + 1 || rec[0] != speakers[i] {
            return Err(PipelineError::data(
                format!("{}:{}", path.display(), i + 2),
                "matrix rows must follow the header's speaker order",
            ));
        }
        for j in 0..s {
            values[[i, j]] = parse_f64(&rec[j + 1], path, i + 2)?;
        }
        n += 1;
    }
    if n != s {
        return Err(PipelineError::data(path.display().to_string(), format!("{n} rows for {s} speakers")));
    }
    Ok((speakers, values))
}

/// Speaker metadata from a CSV with `speaker`, `group`, `gender` and
/// `corpus` columns (`best_layers.csv`).
pub fn read_speakers_csv(path: impl AsRef<Path>) -> Result<Vec<SpeakerMeta>, PipelineError> {
    let path = path.as_ref();
    let (mut r, header) = reader(path)?;
    let idx = ["speaker", "group", "gender", "corpus"]
        .map(|c| column(&header, c, path))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    r.records()
        .enumerate()
        .map(|(line, rec)| {
            let ctx = || format!("{}:{}", path.display(), line + 2);
            let rec = rec.map_err(|e| PipelineError::data(ctx(), e))?;
            Ok(SpeakerMeta {
                speaker_id: rec[idx[0]].to_string(),
                group: rec[idx[1]].parse().map_err(|e| PipelineError::data(ctx(), e))?,
                gender: rec[idx[2]].parse().map_err(|e| PipelineError::data(ctx(), e))?,
                corpus: rec[idx[3]].to_string(),
                minutes: 0.0,
            })
        })
        .collect()
}

/// Within/across comparison on a stored matrix. `metas` may list speakers in
/// any order and may include speakers absent from the matrix.
pub fn compare_partition(
    speakers: &[String],
    matrix: &Array2<f64>,
    metas: &[SpeakerMeta],
    partition: Partition,
    corpus: Option<&str>,
) -> Result<WithinAcross, PipelineError> {
    let ordered: Vec<SpeakerMeta> = speakers
        .iter()
        .map(|s| {
            metas
                .iter()
                .find(|m| &m.speaker_id == s)
                .cloned()
                .ok_or_else(|| PipelineError::data(s.clone(), "no metadata for matrix speaker"))
        })
        .collect::<Result<_, _>>()?;
    within_across(matrix, &ordered, partition, corpus).map_err(|e| PipelineError::data(format!("{partition:?}"), e))
}
