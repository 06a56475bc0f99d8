use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use avcrn::audio::{read_wav, waveform_log_mel, write_wav, MelFilterbank, SpectrumScale};
use avcrn::data::{load_dataset, read_index, synth_dataset, to_examples, write_dataset, SynthSpec, INDEX_FILE};
use avcrn::enhance::{enhance, score_enhanced, score_unprocessed, Scores};
use avcrn::manifest::RunManifest;
use avcrn::metrics::{build_report, ItemScore, UNPROCESSED};
use avcrn::model::{Avcrn, Checkpoint, Variant};
use avcrn::train::{train, write_loss_csv, RunConfig, TrainOutcome};
use avcrn::visual::{load_segments, NoiseKind, Utterance};
use avcrn::{spectrogram, Error, Result};

#[derive(Parser)]
#[command(name = "avcrn", version, about = "Audio-visual speech enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic audio-visual dataset.
    Synth(SynthArgs),
    /// Train a model and keep the best checkpoint.
    Train(TrainArgs),
    /// Enhance one noisy recording.
    Enhance(EnhanceArgs),
    /// Score checkpoints against a dataset.
    Evaluate(EvaluateArgs),
    /// Train and score the four attention variants under one seed.
    Ablate(AblateArgs),
    /// Export the log-mel spectrogram of a recording as CSV and PGM.
    Spectrogram(SpectrogramArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; falls back to AVSE_SEED, then 0.
    #[arg(long, env = "AVSE_SEED")]
    seed: Option<u64>,
}

impl SeedArg {
    fn get(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// SNRs cycled over the utterances.
    #[arg(
        long = "snr-db",
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-5,0"
    )]
    snr_db: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "white")]
    noise: Vec<NoiseKind>,
    /// Utterance length, rounded to whole 200 ms segments.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    data: PathBuf,
    /// Held-out set for checkpoint selection.
    #[arg(long)]
    val_data: Option<PathBuf>,
    /// JSON with optional `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint's weights, optimizer state and epoch.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    /// Segment file with one segment per 200 ms.
    #[arg(long)]
    video: Option<PathBuf>,
    /// Feed black frames to a video model instead of failing without video.
    #[arg(long)]
    zero_video: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the predicted log-mel matrix as CSV.
    #[arg(long)]
    mel_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, required = true, num_args = 1..)]
    ckpt: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(
        long = "snr-db",
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-5,0"
    )]
    snr_db: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    seed: SeedArg,
    /// Training set.
    #[arg(long)]
    data: PathBuf,
    /// Evaluation set; defaults to the training set.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(
        long = "snr-db",
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-5,0"
    )]
    snr_db: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrogramArgs {
    #[arg(long)]
    wav: PathBuf,
    /// Output prefix; writes `<out>.csv` and `<out>.pgm`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Spectrogram(a) => cmd_spectrogram(a),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_config(path: Option<&Path>, seed: u64) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    cfg.train.seed = seed;
    Ok(cfg)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let start = Instant::now();
    let seed = a.seed.get();
    let spec = SynthSpec {
        seed,
        count: a.count,
        duration_s: a.duration,
        snrs_db: a.snr_db.clone(),
        noises: a.noise.clone(),
    };
    let utts = synth_dataset(&spec)?;
    let outputs = write_dataset(&a.out, seed, &utts)?;
    let config = json!({
        "count": a.count,
        "snr_db": a.snr_db,
        "noise": a.noise,
        "duration_s": a.duration,
    });
    RunManifest::new("synth", Some(seed), config, &[], &outputs, start.elapsed())?.write(&a.out.join("manifest.json"))
}

fn train_model(
    cfg: &RunConfig,
    start: Checkpoint,
    train_set: &[Utterance],
    val_set: &[Utterance],
    out: &Path,
    stem: &str,
) -> Result<(TrainOutcome, Vec<PathBuf>)> {
    let outcome = train(start, &to_examples(train_set)?, &to_examples(val_set)?, &cfg.train)?;
    let best = out.join(format!("{stem}best.avck"));
    let last = out.join(format!("{stem}last.avck"));
    let losses = out.join(format!("{stem}loss.csv"));
    outcome.best.save(&best)?;
    outcome.last.save(&last)?;
    write_loss_csv(fs::File::create(&losses)?, &outcome.history)?;
    Ok((outcome, vec![best, last, losses]))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let seed = a.seed.get();
    let mut cfg = read_config(a.config.as_deref(), seed)?;
    let start = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if a.config.is_some() && ck.model.config != cfg.model {
                return Err(Error::config("model", "differs from the resumed checkpoint's model"));
            }
            cfg.model = ck.model.config.clone();
            ck
        }
        None => Checkpoint::new(Avcrn::new(cfg.model.clone(), seed)?),
    };
    let train_set = load_dataset(&a.data)?;
    let val_set = match &a.val_data {
        Some(d) => load_dataset(d)?,
        None => Vec::new(),
    };
    fs::create_dir_all(&a.out)?;
    let (outcome, outputs) = train_model(&cfg, start, &train_set, &val_set, &a.out, "")?;
    let last = outcome.history.last().map(|r| r.train_loss);
    eprintln!(
        "trained {} steps, final loss {:.6e}, best epoch {}",
        outcome.history.len(),
        last.unwrap_or(f64::NAN),
        outcome.best.epoch
    );
    let mut inputs = vec![a.data.join(INDEX_FILE)];
    inputs.extend(a.val_data.iter().map(|d| d.join(INDEX_FILE)));
    inputs.extend(a.config.clone());
    inputs.extend(a.resume.clone());
    RunManifest::new(
        "train",
        Some(seed),
        serde_json::to_value(&cfg)?,
        &inputs,
        &outputs,
        started.elapsed(),
    )?
    .write(&a.out.join("manifest.json"))
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let started = Instant::now();
    let ck = Checkpoint::load(&a.ckpt)?;
    let mixture = read_wav(&a.wav)?;
    let video = match (&a.video, ck.model.config.disable_video, a.zero_video) {
        (Some(p), _, _) => Some(load_segments(p)?),
        (None, true, _) | (None, false, true) => None,
        (None, false, false) => {
            return Err(Error::config(
                "video",
                "this checkpoint was trained with video; pass --video or --zero-video",
            ))
        }
    };
    let out = enhance(&ck.model, &mixture, video.as_deref())?;
    write_wav(&a.out, &out.samples)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.mel_csv {
        fs::write(p, spectrogram::to_csv(&out.log_mel))?;
        outputs.push(p.clone());
    }
    let mut inputs = vec![a.ckpt.clone(), a.wav.clone()];
    inputs.extend(a.video.clone());
    let config = json!({"model": ck.model.config, "zero_video": video.is_none()});
    RunManifest::new("enhance", None, config, &inputs, &outputs, started.elapsed())?
        .write(&with_suffix(&a.out, ".manifest.json"))
}

/// Runs `f` over `items` on all cores, keeping the input order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    let per = items.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

fn item(variant: &str, u: &Utterance, s: Scores) -> ItemScore {
    ItemScore {
        variant: variant.into(),
        snr_db: u.snr_db,
        noise: u.noise_kind.label().into(),
        stoi: s.stoi,
        si_sdr_db: s.si_sdr_db,
        lsd_db: s.lsd_db,
    }
}

fn score_all(models: &[(String, Avcrn)], utts: &[Utterance]) -> Result<Vec<ItemScore>> {
    let mut items: Vec<ItemScore> = par_map(utts, |u| {
        Ok(item(UNPROCESSED, u, score_unprocessed(&u.clean, &u.mixture)?))
    })?;
    for (label, model) in models {
        let video = |u: &Utterance| (!model.config.disable_video).then(|| u.video.clone());
        items.extend(par_map(utts, |u| {
            Ok(item(
                label,
                u,
                score_enhanced(model, &u.clean, &u.mixture, video(u).as_deref())?,
            ))
        })?);
    }
    Ok(items)
}

fn eval_set(dir: &Path, snrs: &[f64]) -> Result<Vec<Utterance>> {
    let utts: Vec<Utterance> = load_dataset(dir)?
        .into_iter()
        .filter(|u| snrs.contains(&u.snr_db))
        .collect();
    if utts.is_empty() {
        return Err(Error::config(
            "snr_db",
            format!("no utterances in {} at {snrs:?} dB", dir.display()),
        ));
    }
    Ok(utts)
}

fn write_report(out: &Path, items: &[ItemScore]) -> Result<Vec<PathBuf>> {
    let report = build_report(items)?;
    let csv = out.join("report.csv");
    let txt = out.join("report.txt");
    report.write_csv(fs::File::create(&csv)?)?;
    let table = report.to_table();
    fs::write(&txt, &table)?;
    print!("{table}");
    Ok(vec![csv, txt])
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let mut models: Vec<(String, Avcrn)> = Vec::new();
    for p in &a.ckpt {
        let m = Checkpoint::load(p)?.model;
        let label = m.config.label();
        if models.iter().any(|(l, _)| *l == label) {
            return Err(Error::config(
                "ckpt",
                format!("two checkpoints share the label {label}"),
            ));
        }
        models.push((label, m));
    }
    let utts = eval_set(&a.data, &a.snr_db)?;
    fs::create_dir_all(&a.out)?;
    let outputs = write_report(&a.out, &score_all(&models, &utts)?)?;
    let mut inputs = a.ckpt.clone();
    inputs.push(a.data.join(INDEX_FILE));
    let labels: Vec<&String> = models.iter().map(|(l, _)| l).collect();
    let config = json!({"snr_db": a.snr_db, "variants": labels});
    RunManifest::new("evaluate", None, config, &inputs, &outputs, started.elapsed())?
        .write(&a.out.join("manifest.json"))
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let started = Instant::now();
    let seed = a.seed.get();
    let cfg = read_config(a.config.as_deref(), seed)?;
    let train_set = load_dataset(&a.data)?;
    let eval_dir = a.eval_data.clone().unwrap_or_else(|| a.data.clone());
    let utts = eval_set(&eval_dir, &a.snr_db)?;
    let data_seed = read_index(&a.data)?.seed;
    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    let mut models = Vec::new();
    for v in Variant::ALL {
        let mut vc = cfg.clone();
        vc.model = vc.model.with_variant(v);
        let start = Checkpoint::new(Avcrn::new(vc.model.clone(), seed)?);
        let (outcome, files) = train_model(&vc, start, &train_set, &[], &a.out, &format!("{}_", v.label()))?;
        eprintln!(
            "{}: {} parameters, {} steps",
            v.label(),
            outcome.best.model.num_params(),
            outcome.history.len()
        );
        outputs.extend(files);
        models.push((v.label().to_string(), outcome.best.model));
    }
    outputs.extend(write_report(&a.out, &score_all(&models, &utts)?)?);
    let inputs = vec![a.data.join(INDEX_FILE), eval_dir.join(INDEX_FILE)];
    let config = json!({"run": cfg, "snr_db": a.snr_db, "data_seed": data_seed});
    RunManifest::new("ablate", Some(seed), config, &inputs, &outputs, started.elapsed())?
        .write(&a.out.join("manifest.json"))
}

fn cmd_spectrogram(a: SpectrogramArgs) -> Result<()> {
    let started = Instant::now();
    let samples = read_wav(&a.wav)?;
    let mel = waveform_log_mel(&samples, &MelFilterbank::new(), SpectrumScale::Power)?;
    let csv = with_suffix(&a.out, ".csv");
    let pgm = with_suffix(&a.out, ".pgm");
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&csv, spectrogram::to_csv(&mel))?;
    fs::write(&pgm, spectrogram::to_pgm(&mel))?;
    let config = json!({"frames": mel.frames, "scale": "power"});
    RunManifest::new(
        "spectrogram",
        None,
        config,
        std::slice::from_ref(&a.wav),
        &[csv, pgm],
        started.elapsed(),
    )?
    .write(&with_suffix(&a.out, ".manifest.json"))
}
