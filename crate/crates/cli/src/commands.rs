use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use deepvox::ablation;
use deepvox::audio::{frames_from_audio, mix_noise, DegradationSpec, NoiseKind};
use deepvox::container::encode_frame;
use deepvox::corpus::{load_utterances, split_by_speaker, FrameSet, Manifest, ManifestEntry};
use deepvox::deepvox_net::{effective_filterbank, extract_features, layer_frequency_response};
use deepvox::evalkit::{self, format_det_csv, MetricsReport, Scores};
use deepvox::mining::MiningConfig;
use deepvox::model::{self, ModelConfig};
use deepvox::ndcore::par::Exec;
use deepvox::ndcore::rng::substream_seed;
use deepvox::ndcore::{OptimizerKind, ParamStore};
use deepvox::objective::TripletLossConfig;
use deepvox::synth::{write_corpus, CorpusSpec};
use deepvox::trainer::{self, Checkpoint, TrainConfig};
use deepvox::wav::{read_wav, write_wav};

use crate::{Command, Common};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for <speaker>/<utt>.wav and manifest.txt
    #[arg(long)]
    pub out: PathBuf,
    /// Number of synthetic speakers
    #[arg(long, default_value_t = 20)]
    pub speakers: usize,
    /// Utterances per speaker
    #[arg(long, default_value_t = 10)]
    pub utts: usize,
    /// Utterance length in seconds
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    /// Manifest of the clean corpus
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; mirrors the input layout
    #[arg(long)]
    pub out: PathBuf,
    /// white or harmonic_babble
    #[arg(long, default_value = "white")]
    pub noise: NoiseKind,
    /// Target signal-to-noise ratio in dB
    #[arg(long, default_value_t = 10.0)]
    pub snr: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for parameters, checkpoint, log and held-out trials
    #[arg(long)]
    pub out: PathBuf,
    /// Speakers (last in sorted id order) kept out of training
    #[arg(long, default_value_t = 5)]
    pub held_out: usize,
    /// Multiplies both epoch counts and the mining ramp
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Identification epochs, before scaling
    #[arg(long, default_value_t = 50)]
    pub pretrain_epochs: usize,
    /// Verification epochs, before scaling
    #[arg(long, default_value_t = 800)]
    pub verify_epochs: usize,
    /// Learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// adam or sgd_momentum
    #[arg(long, default_value = "adam")]
    pub optimizer: OptimizerKind,
    /// Frames per identification step
    #[arg(long, default_value_t = 16)]
    pub pretrain_batch: usize,
    /// Subjects per verification batch
    #[arg(long, default_value_t = 25)]
    pub subjects: usize,
    /// Frames per subject in a verification batch
    #[arg(long, default_value_t = 6)]
    pub samples: usize,
    /// Mining quantile at the first verification epoch
    #[arg(long, default_value_t = 0.4)]
    pub tau_start: f64,
    /// Mining quantile at the end of the ramp
    #[arg(long, default_value_t = 1.0)]
    pub tau_end: f64,
    /// Epochs for tau to reach tau_end, before scaling
    #[arg(long, default_value_t = 800)]
    pub ramp_epochs: usize,
    /// Triplet loss margin
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    /// Checkpoint to resume from (optional)
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Trained parameters
    #[arg(long)]
    pub params: PathBuf,
    /// Corpus manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; one .dvfr per frame
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one .dvem utterance embedding per file
    #[arg(long)]
    pub embeddings: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Trained parameters
    #[arg(long)]
    pub params: PathBuf,
    /// Manifest holding every utterance the trials mention
    #[arg(long)]
    pub manifest: PathBuf,
    /// Trial list: enroll_id,probe_id,label
    #[arg(long)]
    pub trials: PathBuf,
    /// Scored trial list
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Scored trial list: enroll_id,probe_id,label,score
    #[arg(long)]
    pub scored: PathBuf,
    /// Report file (optional; the report is always printed)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// DET points CSV (optional)
    #[arg(long)]
    pub det: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Trained parameters
    #[arg(long)]
    pub params: PathBuf,
    /// Utterance to analyse
    #[arg(long)]
    pub wav: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Frame of the utterance to analyse
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Pitch search range, low end in Hz
    #[arg(long, default_value_t = 80.0)]
    pub f0_min: f64,
    /// Pitch search range, high end in Hz
    #[arg(long, default_value_t = 400.0)]
    pub f0_max: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct FbankArgs {
    /// Trained parameters
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Degrade(a) => degrade(a),
        Command::Train(a) => train(a),
        Command::Extract(a) => extract(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Fbank(a) => fbank(a),
    }
}

fn exec(common: &Common) -> Exec {
    if common.threads <= 1 {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn load_params(path: &Path) -> Result<ParamStore<f32>> {
    trainer::load_params(path).with_context(|| format!("loading parameters from {}", path.display()))
}

fn utterances(manifest: &Path) -> Result<Vec<deepvox::corpus::Utterance>> {
    load_utterances(manifest).with_context(|| format!("loading the corpus of {}", manifest.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = CorpusSpec {
        speakers: a.speakers,
        utterances: a.utts,
        duration_s: a.duration,
        seed: a.common.seed,
    };
    fs::create_dir_all(&a.out)?;
    let m = write_corpus(&a.out, &spec)?;
    log::info!("wrote {} utterances to {}", m.entries.len(), a.out.display());
    Ok(())
}

fn degrade(a: DegradeArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let root = a.manifest.parent().unwrap_or(Path::new("."));
    let spec = DegradationSpec {
        noise_kind: a.noise,
        snr_db: a.snr,
    };
    let mut out = Manifest::default();
    for (i, e) in manifest.entries.iter().enumerate() {
        let clean = read_wav(root.join(&e.path)).with_context(|| format!("reading {}", e.path.display()))?;
        let noisy = mix_noise(&clean, &spec, substream_seed(a.common.seed, "degrade", &[i as u64]))?;
        let dest = a.out.join(&e.path);
        if let Some(dir) = dest.parent() {
            fs::create_dir_all(dir)?;
        }
        write_wav(&dest, &noisy)?;
        out.entries.push(ManifestEntry {
            duration_s: noisy.duration_s(),
            ..e.clone()
        });
    }
    out.write(&a.out.join("manifest.txt"))?;
    log::info!("degraded {} files at {} dB", out.entries.len(), a.snr);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let utts = utterances(&a.manifest)?;
    let (train_utts, test_utts) = split_by_speaker(&utts, a.held_out)?;
    let set = FrameSet::from_utterances(&train_utts);
    if set.is_empty() {
        bail!("no speech frames in the training speakers");
    }
    let cfg = TrainConfig {
        pretrain_epochs: a.pretrain_epochs,
        verify_epochs: a.verify_epochs,
        learning_rate: a.lr,
        optimizer: a.optimizer,
        seed: a.common.seed,
        scale_factor: a.scale,
        pretrain_batch: a.pretrain_batch,
        mining: MiningConfig {
            subjects_per_batch: a.subjects,
            samples_per_subject: a.samples,
            tau_start: a.tau_start,
            tau_end: a.tau_end,
            ramp_epochs: a.ramp_epochs,
            margin_alpha: a.margin,
        },
        loss: TripletLossConfig {
            margin_alpha: a.margin,
            ..TripletLossConfig::default()
        },
        exec: exec(&a.common),
    };
    cfg.validate()?;
    let model_cfg = ModelConfig::default();
    let resume = a
        .resume
        .as_deref()
        .map(|p| Checkpoint::load(p, a.lr).with_context(|| format!("loading checkpoint {}", p.display())))
        .transpose()?;
    fs::create_dir_all(&a.out)?;
    let ck_path = a.out.join("checkpoint.dvck");
    log::info!(
        "training on {} frames from {} speakers; {} held out",
        set.len(),
        set.num_subjects(),
        a.held_out
    );
    let init = model::init_params(&model_cfg, a.common.seed);
    let outcome = trainer::train(&init, &model_cfg, &set, &cfg, resume, &mut |c| c.save(&ck_path))?;
    trainer::save_params(&outcome.pretrained, &a.out.join("pretrained.dvck"))?;
    trainer::save_params(&outcome.params, &a.out.join("params.dvck"))?;
    write(&a.out.join("train_log.txt"), outcome.log.to_text())?;
    write(
        &a.out.join("trials.csv"),
        evalkit::format_trials(&evalkit::all_pairs(&test_utts)),
    )?;
    log::info!("wrote parameters, log and held-out trials to {}", a.out.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let params = load_params(&a.params)?;
    let cfg = ModelConfig::default();
    let utts = utterances(&a.manifest)?;
    let mut frames = 0;
    for u in &utts {
        for (i, f) in u.frames.iter().enumerate() {
            let feat = extract_features(f, &params, &cfg.deepvox)?;
            write(&a.out.join(format!("{}.{i}.dvfr", u.id)), feat.to_bytes())?;
            frames += 1;
        }
        if a.embeddings && !u.frames.is_empty() {
            let e = model::utterance_embedding(&u.frames, &params, &cfg)?;
            write(&a.out.join(format!("{}.dvem", u.id)), e.to_bytes(&u.id))?;
        }
    }
    log::info!("extracted {frames} frames from {} utterances", utts.len());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let params = load_params(&a.params)?;
    let trials = evalkit::read_trials(&a.trials).with_context(|| format!("reading {}", a.trials.display()))?;
    let utts = utterances(&a.manifest)?;
    let scored = evalkit::score_trials(&params, &ModelConfig::default(), &trials, &utts)?;
    write(&a.out, evalkit::format_trials(&scored))?;
    log::info!("scored {} trials", scored.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let trials = evalkit::read_trials(&a.scored).with_context(|| format!("reading {}", a.scored.display()))?;
    let report = MetricsReport::compute(&Scores::from_trials(&trials)?)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &a.out {
        write(p, &text)?;
    }
    if let Some(p) = &a.det {
        write(p, format_det_csv(&report.det))?;
    }
    Ok(())
}

fn f0_line(name: &str, sig: &[f64], a: &AblateArgs) -> String {
    match ablation::estimate_f0(sig, deepvox::audio::SAMPLE_RATE, a.f0_min, a.f0_max) {
        Ok(f) => format!("{name}_f0_hz={f:.2}\n"),
        Err(deepvox::DvError::Unvoiced) => format!("{name}_f0_hz=unvoiced\n"),
        Err(e) => format!("{name}_f0_hz=error: {e}\n"),
    }
}

fn ablate(a: AblateArgs) -> Result<()> {
    let params = load_params(&a.params)?;
    let cfg = ModelConfig::default();
    let audio = read_wav(&a.wav).with_context(|| format!("reading {}", a.wav.display()))?;
    let id = a
        .wav
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let frames = frames_from_audio(&audio, &id, &id)?;
    let Some(frame) = frames.get(a.frame) else {
        bail!(
            "{} has {} frames; frame {} requested",
            a.wav.display(),
            frames.len(),
            a.frame
        );
    };
    let rel = ablation::mean_relevance(&params, &cfg.deepvox, frame)?;
    let input = ablation::frame_to_signal(frame)?;
    let rel_sig = ablation::relevance_to_signal(&rel)?;
    let report = ablation::psd_overlap(&input, &rel_sig)?;
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("relevance.dvfr"), encode_frame(&rel.to_frame(&id)))?;
    write(&a.out.join("psd.csv"), report.psd_csv())?;
    write(&a.out.join("overlap.csv"), report.overlap_csv())?;
    let pitch = f0_line("input", &input, &a) + &f0_line("relevance", &rel_sig, &a);
    write(&a.out.join("pitch.txt"), &pitch)?;
    print!("{pitch}");
    Ok(())
}

fn fbank(a: FbankArgs) -> Result<()> {
    let params = load_params(&a.params)?;
    let cfg = ModelConfig::default().deepvox;
    let filters = effective_filterbank(&params, &cfg)?;
    let mut taps = String::from("filter,taps\n");
    for (i, h) in filters.iter().enumerate() {
        let row: Vec<String> = h.iter().map(|v| format!("{v:.6e}")).collect();
        taps.push_str(&format!("{i},{}\n", row.join(" ")));
    }
    write(&a.out.join("filters.csv"), taps)?;
    // the last layer's cumulative response is the effective filterbank's
    for l in 0..cfg.layers.len() {
        let r = layer_frequency_response(&params, &cfg, l)?;
        let mut csv = String::from("freq_hz,magnitude\n");
        for (f, m) in r.freqs_hz.iter().zip(&r.magnitude) {
            csv.push_str(&format!("{f:.4},{m:.6e}\n"));
        }
        write(&a.out.join(format!("response_layer{l}.csv")), csv)?;
    }
    log::info!("{} filters of {} taps", filters.len(), cfg.receptive_field());
    Ok(())
}
