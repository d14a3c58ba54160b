use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use artikit::acoustic::{read_wav, BaselineKind, MelConfig};
use artikit::alignment::TrainMode;
use artikit::charts::scatter_svg;
use artikit::ema::{write_akf, AkfRecord, Manifest};
use artikit::pipeline::{
    analyze_transfer, compare_partition, compare_preference, emit_charts, load_probe_dir, probe_source,
    read_matrix_csv, read_scores_csv, read_speakers_csv, run_full_pipeline, sweep_cohort, write_probe_dir,
    write_sweep_csv, write_transfer_dir, Cohort, PipelineError, ReportBundle, RunConfig, SweepRow,
    TransferReport,
};
use artikit::probing::{filter_speakers, NormalizationOrder};
use artikit::stats::{PairedTest, Partition};
use artikit::synth::{generate, SynthSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

/// Articulatory probing and cross-speaker transferability toolkit.
#[derive(Parser)]
#[command(name = "artikit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Synth {
        /// SynthSpec JSON; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a baseline acoustic feature set from a WAV file.
    Baseline {
        #[arg(long = "type", value_enum)]
        kind: Kind,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// MelConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "unknown")]
        speaker: String,
        /// Defaults to the audio file stem.
        #[arg(long)]
        utterance: Option<String>,
    },
    /// Fit per-speaker inversion probes for one feature source.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe several sources per speaker and tabulate the scores.
    LayerSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        sources: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Speaker×speaker transferability from stored probes.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        min_corr: Option<f64>,
        #[arg(long, value_enum)]
        train_mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Statistical comparison of stored results.
    Compare {
        #[arg(long, value_enum)]
        mode: CompareMode,
        /// preference: two score CSVs; dialect/gender: matrix.csv then a
        /// speaker table such as best_layers.csv.
        #[arg(long, num_args = 2, required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "paired-t")]
        test: Test,
        /// Restrict dialect/gender comparisons to one corpus.
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: probe, select, filter, transfer, analyze, report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
        #[arg(long)]
        transfer_source: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        min_corr: Option<f64>,
        #[arg(long, value_enum)]
        train_mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render charts from a stored report.json.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Settings shared by the commands that read a manifest.
#[derive(Args)]
struct Common {
    /// RunConfig JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    /// Low-pass cutoff in Hz.
    #[arg(long, conflicts_with = "no_lowpass")]
    lowpass: Option<f64>,
    #[arg(long)]
    no_lowpass: bool,
    #[arg(long, value_enum)]
    order: Option<Order>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fbank,
    Mel,
    Mfcc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    ToPredictions,
    ToGroundTruth,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    FilterThenNormalize,
    NormalizeThenFilter,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompareMode {
    Preference,
    Dialect,
    Gender,
}

#[derive(Clone, Copy, ValueEnum)]
enum Test {
    PairedT,
    Wilcoxon,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: e.into() }
    }

    fn data(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: e.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.manifest {
            cfg.manifest_path.clone_from(m);
        }
        if let Some(f) = self.folds {
            cfg.n_folds = f;
        }
        if self.no_lowpass {
            cfg.lowpass_hz = None;
        } else if let Some(hz) = self.lowpass {
            cfg.lowpass_hz = Some(hz);
        }
        if let Some(o) = self.order {
            cfg.normalization_order = match o {
                Order::FilterThenNormalize => NormalizationOrder::FilterThenNormalize,
                Order::NormalizeThenFilter => NormalizationOrder::NormalizeThenFilter,
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn apply_transfer_flags(cfg: &mut RunConfig, alpha: Option<f64>, min_corr: Option<f64>, mode: Option<Mode>) {
    if let Some(a) = alpha {
        cfg.lasso_alpha = a;
    }
    if let Some(m) = min_corr {
        cfg.min_corr = m;
    }
    if let Some(m) = mode {
        cfg.train_mode = match m {
            Mode::ToPredictions => TrainMode::ToPredictions,
            Mode::ToGroundTruth => TrainMode::ToGroundTruth,
        };
    }
}

fn load_cohort(cfg: &RunConfig) -> Result<Cohort, Failure> {
    let manifest = Manifest::load(&cfg.manifest_path)
        .with_context(|| format!("loading manifest {}", cfg.manifest_path.display()))
        .map_err(Failure::data)?;
    Ok(Cohort::load(&manifest, &cfg.feature_sources)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| parent.display().to_string()).map_err(Failure::data)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Failure::data)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| path.display().to_string()).map_err(Failure::data)
}

fn synth(spec: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Outcome {
    let mut spec: SynthSpec = match spec {
        Some(p) => {
            let bytes = fs::read(&p).with_context(|| p.display().to_string()).map_err(Failure::config)?;
            serde_json::from_slice(&bytes)
                .with_context(|| p.display().to_string())
                .map_err(Failure::config)?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(Failure::config)?;
    let cohort = generate(&spec).map_err(Failure::data)?;
    let manifest = cohort.write(&out).map_err(Failure::data)?;
    println!(
        "wrote {} utterances from {} speakers to {} (sources: {})",
        manifest.entries.len(),
        cohort.speakers.len(),
        out.display(),
        spec.sources().join(",")
    );
    Ok(())
}

fn baseline(
    kind: Kind,
    audio: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    speaker: String,
    utterance: Option<String>,
) -> Outcome {
    let cfg: MelConfig = match config {
        Some(p) => {
            let bytes = fs::read(&p).with_context(|| p.display().to_string()).map_err(Failure::config)?;
            serde_json::from_slice(&bytes)
                .with_context(|| p.display().to_string())
                .map_err(Failure::config)?
        }
        None => MelConfig::default(),
    };
    cfg.validate().map_err(Failure::config)?;
    let utterance = utterance.unwrap_or_else(|| {
        audio.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let clip = read_wav(&audio, cfg.sample_rate, &speaker, &utterance)
        .with_context(|| audio.display().to_string())
        .map_err(Failure::data)?;
    let kind = match kind {
        Kind::Fbank => BaselineKind::Fbank,
        Kind::Mel => BaselineKind::Mel,
        Kind::Mfcc => BaselineKind::Mfcc,
    };
    let features = kind.compute(&clip, &cfg).map_err(Failure::data)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| parent.display().to_string()).map_err(Failure::data)?;
    }
    println!("{}: {} frames × {} dims", out.display(), features.n_frames(), features.dim());
    write_akf(&AkfRecord::Features(features), &out)
        .with_context(|| out.display().to_string())
        .map_err(Failure::data)
}

fn probe(common: Common, source: String, out: PathBuf) -> Outcome {
    let mut cfg = common.resolve()?;
    cfg.feature_sources = vec![source.clone()];
    cfg.transfer_source = None;
    cfg.validate()?;
    let cohort = load_cohort(&cfg)?;
    let (fitted, dropped) = probe_source(&cohort, &source, &cfg);
    if fitted.is_empty() {
        return Err(Failure::data(anyhow!("no speaker could be probed ({} dropped)", dropped.len())));
    }
    let probes: Vec<_> = fitted.into_iter().map(|(p, _)| p).collect();
    write_probe_dir(&out, &probes, &cohort.speakers, &cfg)?;
    for p in &probes {
        println!("{}\t{:.4}", p.speaker_id, p.mean_corr);
    }
    Ok(())
}

fn layer_sweep(common: Common, sources: Vec<String>, out: PathBuf) -> Outcome {
    let mut cfg = common.resolve()?;
    cfg.feature_sources = sources;
    cfg.transfer_source = None;
    cfg.validate()?;
    let cohort = load_cohort(&cfg)?;
    let (sweeps, dropped) = sweep_cohort(&cohort, &cfg);
    if sweeps.is_empty() {
        return Err(Failure::data(anyhow!("no speaker could be probed ({} dropped)", dropped.len())));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| parent.display().to_string()).map_err(Failure::data)?;
    }
    write_sweep_csv(&out, &SweepRow::from_sweeps(&sweeps))?;
    for s in &sweeps {
        let best = s.best_probe();
        println!("{}\t{}\t{:.4}", s.speaker.speaker_id, best.source, best.mean_corr);
    }
    Ok(())
}

fn transfer(
    common: Common,
    probes_dir: PathBuf,
    alpha: Option<f64>,
    min_corr: Option<f64>,
    mode: Option<Mode>,
    out: PathBuf,
) -> Outcome {
    let mut cfg = common.resolve()?;
    apply_transfer_flags(&mut cfg, alpha, min_corr, mode);
    let probes = load_probe_dir(&probes_dir)?;
    let source = probes[0].source.clone();
    if let Some(other) = probes.iter().find(|p| p.source != source) {
        return Err(Failure::data(anyhow!(
            "{}: probes mix sources {source} and {}",
            probes_dir.display(),
            other.source
        )));
    }
    cfg.feature_sources = vec![source.clone()];
    cfg.transfer_source = None;
    cfg.validate()?;
    let keep = filter_speakers(&probes, cfg.min_corr);
    let probes: Vec<_> = probes.into_iter().filter(|p| keep.contains(&p.speaker_id)).collect();
    info!("{} speakers at min_corr {}", probes.len(), cfg.min_corr);
    let cohort = load_cohort(&cfg)?;
    let pre = cfg.preprocess_config();
    let data: BTreeMap<_, _> = probes
        .iter()
        .map(|p| Ok((p.speaker_id.clone(), cohort.prepare(&p.speaker_id, &source, &pre)?)))
        .collect::<Result<_, PipelineError>>()?;
    let analysis = analyze_transfer(&probes, &data, &cohort.speakers, &cfg)?;
    write_transfer_dir(&out, &analysis, &cfg)?;
    write_json(&out.join("transfer_report.json"), &TransferReport::from_analysis(&analysis))?;
    println!(
        "{} speakers, median transferability {:.4}, {} pair failures",
        analysis.speakers.len(),
        analysis.matrix.median(),
        analysis.matrix.failures.len()
    );
    Ok(())
}

fn compare(mode: CompareMode, inputs: Vec<PathBuf>, test: Test, corpus: Option<String>, out: PathBuf) -> Outcome {
    match mode {
        CompareMode::Preference => {
            let a = read_scores_csv(&inputs[0])?;
            let b = read_scores_csv(&inputs[1])?;
            let test = match test {
                Test::PairedT => PairedTest::PairedT,
                Test::Wilcoxon => PairedTest::WilcoxonSignedRank,
            };
            let cmp = compare_preference(&a, &b, test)?;
            write_json(&out, &cmp)?;
            let points: Vec<(f64, f64)> = cmp.b_scores.iter().copied().zip(cmp.a_scores.iter().copied()).collect();
            let label = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let svg = scatter_svg("Per-speaker probe correlation", &label(&inputs[1]), &label(&inputs[0]), &points)
                .map_err(Failure::data)?;
            let svg_path = out.with_extension("svg");
            fs::write(&svg_path, svg).with_context(|| svg_path.display().to_string()).map_err(Failure::data)?;
            println!("n={} mean_diff={:.6} p={:.3e}", cmp.labels.len(), cmp.mean_diff, cmp.p_value);
        }
        CompareMode::Dialect | CompareMode::Gender => {
            let (speakers, matrix) = read_matrix_csv(&inputs[0])?;
            let metas = read_speakers_csv(&inputs[1])?;
            let partition = match mode {
                CompareMode::Dialect => Partition::Dialect,
                _ => Partition::Gender,
            };
            let wa = compare_partition(&speakers, &matrix, &metas, partition, corpus.as_deref())?;
            write_json(&out, &wa)?;
            println!(
                "within={:.4} across={:.4} diff={:.4} p={:.3e}",
                wa.within_mean, wa.across_mean, wa.difference, wa.test.p_value
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    common: Common,
    sources: Vec<String>,
    transfer_source: Option<String>,
    alpha: Option<f64>,
    min_corr: Option<f64>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
) -> Outcome {
    let mut cfg = common.resolve()?;
    if !sources.is_empty() {
        cfg.feature_sources = sources;
    }
    if transfer_source.is_some() {
        cfg.transfer_source = transfer_source;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    apply_transfer_flags(&mut cfg, alpha, min_corr, mode);
    let bundle = run_full_pipeline(&cfg)?;
    for issue in &bundle.issues {
        warn!("{issue}");
    }
    let retained = bundle.best.iter().filter(|b| b.retained).count();
    println!(
        "{} speakers probed, {} retained, transfer source {}; reports in {}",
        bundle.best.len(),
        retained,
        bundle.transfer_source,
        cfg.output_dir.display()
    );
    Ok(())
}

fn report(report: PathBuf, out: PathBuf) -> Outcome {
    let bundle = ReportBundle::load(&report)?;
    for path in emit_charts(&bundle, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn configure_threads() -> Outcome {
    let Ok(raw) = std::env::var("ARTIKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(anyhow!("ARTIKIT_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Failure::config)
}

fn dispatch(cli: Cli) -> Outcome {
    configure_threads()?;
    match cli.command {
        Command::Synth { spec, seed, out } => synth(spec, seed, out),
        Command::Baseline {
            kind,
            audio,
            out,
            config,
            speaker,
            utterance,
        } => baseline(kind, audio, out, config, speaker, utterance),
        Command::Probe { common, source, out } => probe(common, source, out),
        Command::LayerSweep { common, sources, out } => layer_sweep(common, sources, out),
        Command::Transfer {
            common,
            probes,
            alpha,
            min_corr,
            train_mode,
            out,
        } => transfer(common, probes, alpha, min_corr, train_mode, out),
        Command::Compare {
            mode,
            inputs,
            test,
            corpus,
            out,
        } => compare(mode, inputs, test, corpus, out),
        Command::Run {
            common,
            sources,
            transfer_source,
            alpha,
            min_corr,
            train_mode,
            out,
        } => run(common, sources, transfer_source, alpha, min_corr, train_mode, out),
        Command::Report { report: r, out } => report(r, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
