use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    run_analysis, Analysis, Cohort, DroppedSpeaker, PipelineError, RunConfig, SpeakerSweep, TransferAnalysis,
};
use crate::alignment::PairFailure;
use crate::charts::{bar_chart_svg, heatmap_svg};
use crate::ema::{canonical_names, Articulator, Gender, Group, Manifest, SpeakerMeta, N_CHANNELS};
use crate::linalg::MapFile;
use crate::probing::InversionProbe;
use crate::stats::WithinAcross;

/// `%g`-style rendering with 6 significant digits.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        trim_zeros(format!("{:.*}", (5 - exp) as usize, v))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(fmt_float).unwrap_or_default()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::data(path.display().to_string(), e))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PipelineError::data(path.display().to_string(), e);
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::data(path.display().to_string(), e.to_string()))?;
    write_bytes(path, &bytes)
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub speaker: String,
    pub group: Group,
    pub source: String,
    pub mean_corr: f64,
}

impl SweepRow {
    pub fn from_sweeps(sweeps: &[SpeakerSweep]) -> Vec<Self> {
        sweeps
            .iter()
            .flat_map(|s| {
                s.probes.iter().map(move |p| SweepRow {
                    speaker: s.speaker.speaker_id.clone(),
                    group: s.speaker.group,
                    source: p.source.clone(),
                    mean_corr: p.mean_corr,
                })
            })
            .collect()
    }
}

/// One row of `best_layers.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub speaker: String,
    pub group: Group,
    pub gender: Gender,
    pub corpus: String,
    pub best_source: String,
    pub mean_corr: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub source: String,
    pub speakers: Vec<String>,
    /// `None` for failed pairs.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub median: Option<f64>,
    pub groups: Vec<Group>,
    pub group_matrix: Vec<Vec<Option<f64>>>,
    pub coef_channels: Option<Vec<Vec<f64>>>,
    pub coef_articulators: Option<Vec<Vec<f64>>>,
    /// Per channel, canonical order.
    pub articulator_scores: Option<Vec<f64>>,
    pub dialect: Option<WithinAcross>,
    pub gender: Option<WithinAcross>,
    pub self_transfer_violations: Vec<String>,
    pub failures: Vec<PairFailure>,
}

impl TransferReport {
    pub fn from_analysis(t: &TransferAnalysis) -> Self {
        Self {
            source: t.source.clone(),
            speakers: t.matrix.speakers.clone(),
            matrix: t.matrix.values.rows().into_iter().map(|r| r.iter().map(|&v| finite(v)).collect()).collect(),
            median: finite(t.matrix.median()),
            groups: t.groups.groups.clone(),
            group_matrix: t.groups.values.rows().into_iter().map(|r| r.to_vec()).collect(),
            coef_channels: t.coefficients.as_ref().map(|c| rows_of(&c.channels)),
            coef_articulators: t.coefficients.as_ref().map(|c| rows_of(&c.articulators)),
            articulator_scores: t.articulator_scores.clone(),
            dialect: t.dialect.clone(),
            gender: t.gender.clone(),
            self_transfer_violations: t.self_transfer_violations.clone(),
            failures: t.matrix.failures.clone(),
        }
    }
}

/// Everything a run produces, in the form stored as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub version: String,
    pub config_hash: String,
    pub sources: Vec<String>,
    pub speakers: Vec<SpeakerMeta>,
    pub sweep: Vec<SweepRow>,
    pub best: Vec<BestRow>,
    pub dropped: Vec<DroppedSpeaker>,
    pub transfer_source: String,
    pub transfer: Option<TransferReport>,
    pub issues: Vec<String>,
}

impl ReportBundle {
    pub fn from_analysis(a: &Analysis, cfg: &RunConfig) -> Self {
        let sweep = SweepRow::from_sweeps(&a.sweeps);
        let best = a
            .sweeps
            .iter()
            .map(|s| BestRow {
                speaker: s.speaker.speaker_id.clone(),
                group: s.speaker.group,
                gender: s.speaker.gender,
                corpus: s.speaker.corpus.clone(),
                best_source: s.best_probe().source.clone(),
                mean_corr: s.best_probe().mean_corr,
                retained: a.retained.contains(&s.speaker.speaker_id),
            })
            .collect();
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.config_hash(),
            sources: a.sources.clone(),
            speakers: a.speakers.clone(),
            sweep,
            best,
            dropped: a.dropped.clone(),
            transfer_source: a.transfer_source.clone(),
            transfer: a.transfer.as_ref().map(TransferReport::from_analysis),
            issues: a.issues.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::data(path.display().to_string(), e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        write_json(path.as_ref(), self)
    }
}

/// `speaker,group,source,mean_corr`.
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<(), PipelineError> {
    write_csv(
        path.as_ref(),
        &["speaker", "group", "source", "mean_corr"].map(String::from),
        rows.iter()
            .map(|r| vec![r.speaker.clone(), r.group.to_string(), r.source.clone(), fmt_float(r.mean_corr)]),
    )
}

fn write_best_csv(path: &Path, rows: &[BestRow]) -> Result<(), PipelineError> {
    write_csv(
        path,
        &["speaker", "group", "gender", "corpus", "best_source", "mean_corr", "retained"].map(String::from),
        rows.iter().map(|r| {
            vec![
                r.speaker.clone(),
                r.group.to_string(),
                r.gender.to_string(),
                r.corpus.clone(),
                r.best_source.clone(),
                fmt_float(r.mean_corr),
                r.retained.to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub source: String,
    pub channels: Vec<String>,
    pub speakers: Vec<ProbeReportEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReportEntry {
    pub speaker_id: String,
    pub group: Option<Group>,
    pub mean_corr: f64,
    pub channel_means: Vec<f64>,
    /// `n_folds × 12`.
    pub cv_scores: Vec<Vec<f64>>,
}

/// `<speaker>.map.json` per probe plus `probe_report.json` and
/// `summary.csv` (`speaker,group,source,mean_corr`).
pub fn write_probe_dir(
    dir: impl AsRef<Path>,
    probes: &[InversionProbe<f64>],
    metas: &[SpeakerMeta],
    cfg: &RunConfig,
) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let group_of = |id: &str| metas.iter().find(|m| m.speaker_id == id).map(|m| m.group);
    let mut entries = Vec::new();
    for p in probes {
        let meta = json!({
            "speaker_id": p.speaker_id,
            "mean_corr": p.mean_corr,
            "cv_scores": rows_of(&p.cv_scores),
            "n_folds": cfg.n_folds,
            "seed": cfg.seed,
            "lowpass_hz": cfg.lowpass_hz,
            "ridge_factor": cfg.ridge_factor,
        });
        let path = dir.join(format!("{}.map.json", p.speaker_id));
        MapFile::from_map(&p.map, &p.source, meta)
            .save(&path)
            .map_err(|e| PipelineError::io(&path, e))?;
        entries.push(ProbeReportEntry {
            speaker_id: p.speaker_id.clone(),
            group: group_of(&p.speaker_id),
            mean_corr: p.mean_corr,
            channel_means: p.channel_means(),
            cv_scores: rows_of(&p.cv_scores),
        });
    }
    let report = ProbeReport {
        source: probes.first().map(|p| p.source.clone()).unwrap_or_default(),
        channels: canonical_names(),
        speakers: entries,
    };
    write_json(&dir.join("probe_report.json"), &report)?;
    write_csv(
        &dir.join("summary.csv"),
        &["speaker", "group", "source", "mean_corr"].map(String::from),
        probes.iter().map(|p| {
            vec![
                p.speaker_id.clone(),
                group_of(&p.speaker_id).map(|g| g.to_string()).unwrap_or_default(),
                p.source.clone(),
                fmt_float(p.mean_corr),
            ]
        }),
    )
}

/// Reads every `*.map.json` written by [`write_probe_dir`], sorted by file
/// name.
pub fn load_probe_dir(dir: impl AsRef<Path>) -> Result<Vec<InversionProbe<f64>>, PipelineError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".map.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::data(dir.display().to_string(), "no .map.json probe files"));
    }
    paths
        .iter()
        .map(|path| {
            let ctx = || path.display().to_string();
            let file = MapFile::load(path).map_err(|e| PipelineError::data(ctx(), e))?;
            let map = file.to_map::<f64>().map_err(|e| PipelineError::data(ctx(), e))?;
            #[derive(Deserialize)]
            struct Meta {
                speaker_id: String,
                mean_corr: f64,
                cv_scores: Vec<Vec<f64>>,
            }
            let meta: Meta =
                serde_json::from_value(file.training_meta.clone()).map_err(|e| PipelineError::data(ctx(), e))?;
            let cols = meta.cv_scores.first().map_or(N_CHANNELS, Vec::len);
            let flat: Vec<f64> = meta.cv_scores.concat();
            let cv_scores = Array2::from_shape_vec((meta.cv_scores.len(), cols), flat)
                .map_err(|e| PipelineError::data(ctx(), e))?;
            Ok(InversionProbe {
                speaker_id: meta.speaker_id,
                source: file.source,
                map,
                cv_scores,
                mean_corr: meta.mean_corr,
            })
        })
        .collect()
}

fn articulator_names() -> Vec<String> {
    Articulator::ALL.iter().map(|a| a.as_str().to_string()).collect()
}

fn matrix_rows(labels: &[String], values: &[Vec<Option<f64>>]) -> Vec<Vec<String>> {
    labels
        .iter()
        .zip(values)
        .map(|(l, row)| std::iter::once(l.clone()).chain(row.iter().map(|v| fmt_opt(*v))).collect())
        .collect()
}

fn header(first: &str, rest: &[String]) -> Vec<String> {
    std::iter::once(first.to_string()).chain(rest.iter().cloned()).collect()
}

/// `matrix.csv`, `group_matrix.csv`, coefficient and articulator CSVs, and
/// `pairs/<A>__<B>.map.json`.
pub fn write_transfer_dir(dir: impl AsRef<Path>, t: &TransferAnalysis, cfg: &RunConfig) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let report = TransferReport::from_analysis(t);
    write_csv(&dir.join("matrix.csv"), &header("speaker", &report.speakers), matrix_rows(&report.speakers, &report.matrix))?;
    let group_names: Vec<String> = report.groups.iter().map(|g| g.to_string()).collect();
    write_csv(
        &dir.join("group_matrix.csv"),
        &header("group", &group_names),
        matrix_rows(&group_names, &report.group_matrix),
    )?;
    let channels = canonical_names();
    if let Some(c) = &t.coefficients {
        let some = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect::<Vec<_>>();
        write_csv(&dir.join("coef_matrix.csv"), &header("channel", &channels), matrix_rows(&channels, &some(&c.channels)))?;
        let arts = articulator_names();
        write_csv(
            &dir.join("articulator_coef_matrix.csv"),
            &header("articulator", &arts),
            matrix_rows(&arts, &some(&c.articulators)),
        )?;
    }
    if let Some(scores) = &t.articulator_scores {
        write_csv(
            &dir.join("articulator_scores.csv"),
            &["channel", "score"].map(String::from),
            channels.iter().zip(scores).map(|(c, s)| vec![c.clone(), fmt_float(*s)]),
        )?;
    }
    let pairs = dir.join("pairs");
    create_dir(&pairs)?;
    for a in &t.matrix.alignments {
        let meta = json!({
            "source_speaker": a.source_speaker,
            "target_speaker": a.target_speaker,
            "train_mode": a.train_mode,
            "alpha": cfg.lasso_alpha,
            "test_fraction": cfg.test_fraction,
            "seed": cfg.seed,
            "transfer_corr": a.transfer_corr,
            "mean": a.mean,
            "converged": a.converged,
        });
        let path = pairs.join(format!("{}__{}.map.json", a.source_speaker, a.target_speaker));
        MapFile::from_map(&a.map, &t.source, meta)
            .save(&path)
            .map_err(|e| PipelineError::io(&path, e))?;
    }
    Ok(())
}

fn opt_rows(values: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    values.iter().map(|r| r.iter().map(|&v| finite(v)).collect()).collect()
}

/// Renders the bundle's charts into `dir`; returns the written paths.
pub fn emit_charts(bundle: &ReportBundle, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, PipelineError> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, svg: String| -> Result<(), PipelineError> {
        let path = dir.join(name);
        write_bytes(&path, svg.as_bytes())?;
        written.push(path);
        Ok(())
    };

    let mut per_source: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &bundle.sweep {
        per_source.entry(&r.source).or_default().push(r.mean_corr);
    }
    let sources: Vec<String> = bundle.sources.iter().filter(|s| per_source.contains_key(s.as_str())).cloned().collect();
    if !sources.is_empty() {
        let means: Vec<f64> = sources
            .iter()
            .map(|s| {
                let v = &per_source[s.as_str()];
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        emit("layer_scores.svg", bar_chart_svg("Mean probe correlation per source", &sources, &means)?)?;
    }

    if let Some(t) = &bundle.transfer {
        emit(
            "speaker_matrix.svg",
            heatmap_svg("Speaker transferability", &t.speakers, &t.speakers, &t.matrix)?,
        )?;
        let groups: Vec<String> = t.groups.iter().map(|g| g.to_string()).collect();
        emit("group_matrix.svg", heatmap_svg("Group transferability", &groups, &groups, &t.group_matrix)?)?;
        if let Some(c) = &t.coef_articulators {
            let arts = articulator_names();
            emit(
                "articulator_coef_matrix.svg",
                heatmap_svg("Mean |coefficient| by articulator", &arts, &arts, &opt_rows(c))?,
            )?;
        }
        if let Some(scores) = &t.articulator_scores {
            emit(
                "articulator_scores.svg",
                bar_chart_svg("Transferability per channel", &canonical_names(), scores)?,
            )?;
        }
    }
    Ok(written)
}

/// Writes every artifact of an analysis under `cfg.output_dir` and returns
/// the bundle stored as `report.json`.
pub fn write_analysis(
    analysis: &Analysis,
    cfg: &RunConfig,
    timings: &[(String, f64)],
) -> Result<ReportBundle, PipelineError> {
    let out = &cfg.output_dir;
    create_dir(out)?;
    let bundle = ReportBundle::from_analysis(analysis, cfg);
    write_sweep_csv(out.join("sweep.csv"), &bundle.sweep)?;
    write_best_csv(&out.join("best_layers.csv"), &bundle.best)?;
    let probes: Vec<InversionProbe<f64>> = analysis
        .sweeps
        .iter()
        .filter_map(|s| s.probe_for(&analysis.transfer_source).cloned())
        .collect();
    write_probe_dir(out.join("probes").join(&analysis.transfer_source), &probes, &analysis.speakers, cfg)?;
    if let Some(t) = &analysis.transfer {
        write_transfer_dir(out.join("transfer"), t, cfg)?;
    }
    bundle.save(out.join("report.json"))?;
    let charts = Instant::now();
    emit_charts(&bundle, out.join("charts"))?;
    let mut timings: BTreeMap<String, f64> = timings.iter().cloned().collect();
    timings.insert("charts".into(), charts.elapsed().as_secs_f64());
    let meta = json!({
        "artikit_version": env!("CARGO_PKG_VERSION"),
        "config_hash": bundle.config_hash,
        "config": cfg,
        "threads": rayon::current_num_threads(),
        "timings_s": timings,
        "n_speakers": analysis.speakers.len(),
        "n_probed": analysis.sweeps.len(),
        "n_retained": analysis.retained.len(),
        "transfer_source": analysis.transfer_source,
        "issues": analysis.issues,
    });
    write_json(&out.join("run_meta.json"), &meta)?;
    Ok(bundle)
}

/// Loads the manifest, runs the full analysis and writes all artifacts.
pub fn run_full_pipeline(cfg: &RunConfig) -> Result<ReportBundle, PipelineError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let manifest = Manifest::load(&cfg.manifest_path)
        .map_err(|e| PipelineError::data(cfg.manifest_path.display().to_string(), e))?;
    let cohort = Cohort::load(&manifest, &cfg.feature_sources)?;
    let load = t0.elapsed().as_secs_f64();
    info!("loaded {} speakers in {load:.2}s", cohort.speakers.len());
    let t1 = Instant::now();
    let analysis = run_analysis(&cohort, cfg)?;
    let analyze = t1.elapsed().as_secs_f64();
    info!(
        "probed {} speakers, retained {}, in {analyze:.2}s",
        analysis.sweeps.len(),
        analysis.retained.len()
    );
    let t2 = Instant::now();
    let bundle = write_analysis(&analysis, cfg, &[("load".into(), load), ("analysis".into(), analyze)])?;
    info!("wrote reports in {:.2}s", t2.elapsed().as_secs_f64());
    Ok(bundle)
}
