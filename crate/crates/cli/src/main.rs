use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use floss::aggregate;
use floss::epoching::{balance_rus, epochs_from_recording, read_annotations, write_annotations};
use floss::features::MobilityFeatureMode;
use floss::gbt::{GbtModel, TrainConfig};
use floss::mobility::{self, MobilityLabel, TibResult, MOBILITY_EPOCH_S};
use floss::report::{self, NightStatus, ReportConfig};
use floss::signal_io::{read_recording, write_recording};
use floss::sleepstats::{self, StatsError};
use floss::spiky_filter;
use floss::synth::{derive_seed, gen_night, NightSpec};
use floss::training::{self, SyntheticTraining};
use floss::usability::{self, UsabilityScores, Variant};

#[derive(Parser)]
#[command(name = "floss", version, about = "Artifact scoring and sleep statistics for sleep EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a recording and report its layout, or list problems.
    Check(CheckArgs),
    /// Classify mobility from ACC and detect time in bed.
    Tib(TibArgs),
    /// Remove spiky noise with the zero-phase Butterworth and notch cascade.
    Despike(DespikeArgs),
    /// Sleep statistics from sleep scores, optionally after artifact rejection.
    Stats(StatsArgs),
    /// Fit a usability or mobility model.
    Train(TrainArgs),
    /// Write synthetic nights with annotations, sleep scores and mobility truth.
    Synth(SynthArgs),
    /// Process a directory of nights.
    Report(ReportArgs),
}

#[derive(Args)]
struct CheckArgs {
    recording: PathBuf,
    /// Also score usability with this model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    epoch_len: f64,
}

#[derive(Args)]
struct TibArgs {
    recording: PathBuf,
    /// Mobility model; a synthetic one is fitted when absent.
    #[arg(long)]
    mobility_model: Option<PathBuf>,
    #[arg(long, default_value_t = mobility::DEFAULT_RUN_EPOCHS)]
    tib_run_epochs: usize,
    /// Directory for mobility.csv and tib.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DespikeArgs {
    input: PathBuf,
    output: PathBuf,
    /// Also write the magnitude response as CSV.
    #[arg(long)]
    response: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    response_points: usize,
}

#[derive(Args)]
struct StatsArgs {
    /// Sleep scores, one stage per line.
    scores: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    sleep_epoch_len: f64,
    /// Usability CSV (channel,epoch_index,label) for artifact rejection.
    #[arg(long)]
    usability: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    epoch_len: f64,
    /// tib.json with Lights Out and Lights On.
    #[arg(long)]
    tib: Option<PathBuf>,
    /// Write the statistics here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the artifact-rejected scores here.
    #[arg(long)]
    rejected: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Usability,
    Mobility,
}

#[derive(Clone, Copy, ValueEnum)]
enum MobilityMode {
    Stat,
    Welch,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Task::Usability)]
    task: Task,
    /// Directory of `<name>.edf` recordings with `<name>.annotations.csv`
    /// (usability) or `<name>.mobility.txt` (mobility). Synthetic data is
    /// used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    variant: String,
    #[arg(long, value_enum, default_value_t = MobilityMode::Stat)]
    mobility_mode: MobilityMode,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 10.0)]
    epoch_len: f64,
    /// Synthetic subjects.
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    /// Synthetic epochs per class and subject.
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    nights: usize,
    #[arg(long, default_value_t = 3600.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    mobility_model: Option<PathBuf>,
    #[arg(long)]
    epoch_len: Option<f64>,
    #[arg(long)]
    sleep_epoch_len: Option<f64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    despike: bool,
    #[arg(long)]
    tib_run_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Check(a) => check(a),
        Command::Tib(a) => tib(a),
        Command::Despike(a) => despike(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => run_report(a),
    }
}

fn load_model(path: &Path) -> Result<GbtModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GbtModel::from_json(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn write_json(path: &Path, value: &TibResult) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn check(a: CheckArgs) -> Result<()> {
    let rec = read_recording(&a.recording).with_context(|| format!("reading {}", a.recording.display()))?;
    rec.validate()?;
    println!("sampling rate: {} Hz", rec.fs);
    println!("start: {}", rec.start_time);
    println!("duration: {:.1} s", rec.duration_s());
    for ch in &rec.channels {
        let p = usability::amplitude_percentile(&ch.samples);
        let flag = if p > usability::AMPLITUDE_WARN_UV { "  (above the native range)" } else { "" };
        println!("channel {}: 99.9th percentile |x| = {p:.1} uV{flag}", ch.label);
    }
    println!("accelerometer: {}", if rec.acc.is_some() { "yes" } else { "no" });
    if let Some(m) = a.model {
        let model = load_model(&m)?;
        let scores = usability::score_recording(&rec, &model, a.epoch_len)?;
        for (name, labels) in scores.channels.iter().zip(&scores.labels) {
            let usable = labels.iter().filter(|&&l| l == 0).count();
            println!("{name}: {usable}/{} epochs usable", labels.len());
        }
    }
    Ok(())
}

fn tib(a: TibArgs) -> Result<()> {
    let rec = read_recording(&a.recording).with_context(|| format!("reading {}", a.recording.display()))?;
    let acc = rec.acc.as_ref().context("recording has no accelerometer")?;
    let model = match &a.mobility_model {
        Some(p) => load_model(p)?,
        None => training::synthetic_mobility_model(rec.fs, MobilityFeatureMode::Stat, 80, 60, a.seed)?,
    };
    let mode = model
        .layout
        .as_ref()
        .and_then(|l| l.mobility_mode())
        .context("model is not a mobility model")?;
    let labels = mobility::classify_mobility(acc, rec.fs, &model, MOBILITY_EPOCH_S, mode)?;
    let tib = mobility::detect_tib(&labels, a.tib_run_epochs)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("mobility.csv"), mobility::mobility_csv(&labels, MOBILITY_EPOCH_S))?;
        write_json(&dir.join("tib.json"), &tib)?;
    }
    println!("{}", serde_json::to_string_pretty(&tib)?);
    Ok(())
}

fn despike(a: DespikeArgs) -> Result<()> {
    let mut rec = read_recording(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let cascade = spiky_filter::default_cascade(f64::from(rec.fs))?;
    for ch in &mut rec.channels {
        ch.samples = spiky_filter::apply_zero_phase(&cascade, &ch.samples)?;
        ch.scale = None;
    }
    write_recording(&a.output, &rec).with_context(|| format!("writing {}", a.output.display()))?;
    if let Some(p) = a.response {
        fs::write(&p, spiky_filter::response_csv(&cascade, a.response_points))?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let text = fs::read_to_string(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let mut scores = aggregate::parse_scores(&text)?;
    if let Some(u) = &a.usability {
        let us = UsabilityScores::from_csv(&fs::read_to_string(u)?, a.epoch_len)?;
        let s_f = aggregate::scaling_factor(a.sleep_epoch_len, a.epoch_len)?;
        let agg = aggregate::aggregate(&us.labels, &scores, s_f)?;
        if agg.truncated {
            log::warn!("sleep scores and usability differ by one epoch; truncated");
        }
        scores = agg.s_ar;
    }
    if let Some(p) = &a.rejected {
        fs::write(p, aggregate::scores_to_lines(&scores))?;
    }
    let tib: Option<TibResult> = match &a.tib {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?).context("parsing tib json")?),
        None => None,
    };
    let st = match sleepstats::compute_stats(&scores, a.sleep_epoch_len, tib.as_ref()) {
        Ok(s) => s,
        Err(StatsError::NoSleepDetected(s)) => {
            log::warn!("no sleep epoch detected");
            *s
        }
        Err(e) => return Err(e.into()),
    };
    match &a.out {
        Some(p) => fs::write(p, st.to_json())?,
        None => println!("{}", st.to_json()),
    }
    Ok(())
}

fn recordings_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("edf")))
        .collect();
    out.sort();
    Ok(out)
}

fn sidecar(rec: &Path, suffix: &str) -> PathBuf {
    let stem = rec.file_stem().unwrap_or_default().to_string_lossy();
    rec.with_file_name(format!("{stem}{suffix}"))
}

fn train(a: TrainArgs) -> Result<()> {
    let model = match a.task {
        Task::Usability => {
            let variant: Variant = a.variant.parse()?;
            match &a.data {
                None => {
                    let opts = SyntheticTraining {
                        subjects: a.subjects,
                        per_class: a.per_class,
                        epoch_len_s: a.epoch_len,
                        iterations: a.iterations,
                        eta: a.eta,
                        ..SyntheticTraining::new(a.seed)
                    };
                    training::synthetic_usability_model(variant, &opts)?
                }
                Some(dir) => {
                    let mut samples = Vec::new();
                    let mut fs_seen = None;
                    for path in recordings_in(dir)? {
                        let ann = sidecar(&path, ".annotations.csv");
                        if !ann.is_file() {
                            log::warn!("{} has no annotations; skipped", path.display());
                            continue;
                        }
                        let rec = read_recording(&path)?;
                        if *fs_seen.get_or_insert(rec.fs) != rec.fs {
                            bail!("{} is at {} Hz, other recordings differ", path.display(), rec.fs);
                        }
                        let spans = read_annotations(&fs::read_to_string(&ann)?)?;
                        let subject = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                        samples.extend(epochs_from_recording(&rec, &spans, &subject, a.epoch_len)?);
                    }
                    let fs_hz = fs_seen.context("no annotated recordings found")?;
                    let samples = balance_rus(&samples, derive_seed(a.seed, &[7]));
                    let mut base = TrainConfig::new(variant.num_classes(), a.iterations);
                    base.eta = a.eta;
                    base.seed = a.seed;
                    usability::train_usability(&samples, variant, fs_hz, a.epoch_len, &base)?
                }
            }
        }
        Task::Mobility => {
            let mode = match a.mobility_mode {
                MobilityMode::Stat => MobilityFeatureMode::Stat,
                MobilityMode::Welch => MobilityFeatureMode::Welch,
            };
            match &a.data {
                None => training::synthetic_mobility_model(256, mode, 80, a.iterations, a.seed)?,
                Some(dir) => {
                    let mut ax = Vec::new();
                    let mut ay = Vec::new();
                    let mut az = Vec::new();
                    let mut labels = Vec::new();
                    let mut fs_seen = None;
                    for path in recordings_in(dir)? {
                        let lab = sidecar(&path, ".mobility.txt");
                        if !lab.is_file() {
                            continue;
                        }
                        let rec = read_recording(&path)?;
                        let acc = rec.acc.with_context(|| format!("{} has no ACC", path.display()))?;
                        if *fs_seen.get_or_insert(rec.fs) != rec.fs {
                            bail!("{} is at {} Hz, other recordings differ", path.display(), rec.fs);
                        }
                        let l: Vec<MobilityLabel> = fs::read_to_string(&lab)?
                            .lines()
                            .filter(|s| !s.trim().is_empty())
                            .map(str::parse)
                            .collect::<Result<_, _>>()?;
                        let w = (MOBILITY_EPOCH_S * f64::from(rec.fs)).round() as usize;
                        let n = l.len().min(acc.len() / w);
                        ax.extend_from_slice(&acc.ax[..n * w]);
                        ay.extend_from_slice(&acc.ay[..n * w]);
                        az.extend_from_slice(&acc.az[..n * w]);
                        labels.extend_from_slice(&l[..n]);
                    }
                    let fs_hz = fs_seen.context("no labelled recordings found")?;
                    let acc = floss::signal_io::TriAxialAcc::new(ax, ay, az);
                    training::train_mobility(&acc, &labels, fs_hz, mode, a.iterations, a.seed)?
                }
            }
        }
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, model.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} ({} trees per class)", a.out.display(), model.n_iterations());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    for i in 0..a.nights {
        let spec = NightSpec::new(a.duration_s, derive_seed(a.seed, &[i as u64]));
        let night = gen_night(&spec)?;
        let base = a.out.join(format!("night_{:02}", i + 1));
        let p = |suffix: &str| PathBuf::from(format!("{}{suffix}", base.display()));
        write_recording(&p(".edf"), &night.recording)?;
        fs::write(p(".annotations.csv"), write_annotations(&night.annotations))?;
        fs::write(p(report::SCORES_SUFFIX), aggregate::scores_to_lines(&night.sleep_scores))?;
        let mob: String = night.mobility.iter().map(|m| format!("{}\n", m.name())).collect();
        fs::write(p(".mobility.txt"), mob)?;
    }
    eprintln!("wrote {} nights to {}", a.nights, a.out.display());
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    let mut cfg = ReportConfig::default();
    if let Some(p) = &a.config {
        cfg.apply_text(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?;
    }
    if let Some(v) = a.input {
        cfg.input = v;
    }
    if let Some(v) = a.out {
        cfg.out = v;
    }
    if a.model.is_some() {
        cfg.model = a.model;
    }
    if a.mobility_model.is_some() {
        cfg.mobility_model = a.mobility_model;
    }
    if let Some(v) = a.epoch_len {
        cfg.epoch_len_s = v;
    }
    if let Some(v) = a.sleep_epoch_len {
        cfg.sleep_epoch_len_s = v;
    }
    if let Some(v) = &a.variant {
        cfg.set("variant", v)?;
    }
    if a.despike {
        cfg.despike = true;
    }
    if let Some(v) = a.tib_run_epochs {
        cfg.tib_run_epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    let batch = report::run_pipeline(&cfg)?;
    println!("{} nights processed, {} skipped", batch.processed, batch.skipped);
    for n in batch.nights.iter().filter(|n| n.status == NightStatus::Skipped) {
        println!(
            "  {}: {} ({})",
            n.night_id,
            n.error_code.map(|c| c.to_string()).unwrap_or_default(),
            n.error.as_deref().unwrap_or("")
        );
    }
    println!("summary: {}", cfg.out.join(report::REPORT_FILE).display());
    Ok(())
}
