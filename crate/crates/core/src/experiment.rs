//! In-memory end-to-end run: synthetic corpus, speaker split, both training
//! phases and held-out scoring.

use ndcore::ParamStore;

use crate::audio::{mix_noise, DegradationSpec};
use crate::corpus::{split_by_speaker, utterance_from_audio, FrameSet, Utterance};
use crate::error::Result;
use crate::evalkit::{self, MetricsReport, Scores, Trial};
use crate::model::{self, ModelConfig};
use crate::synth::{generate_corpus, CorpusSpec};
use crate::trainer::{self, Checkpoint, TrainConfig, TrainOutcome};

#[derive(Clone, Debug)]
pub struct Experiment {
    pub corpus: CorpusSpec,
    pub held_out: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Experiment {
    /// 20 speakers x 10 two-second utterances, 5 speakers held out, epochs
    /// scaled by 0.05.
    pub fn desk(seed: u64) -> Self {
        Self {
            corpus: CorpusSpec {
                speakers: 20,
                utterances: 10,
                duration_s: 2.0,
                seed,
            },
            held_out: 5,
            model: ModelConfig::default(),
            train: TrainConfig {
                seed,
                scale_factor: 0.05,
                ..TrainConfig::default()
            },
        }
    }
}

pub fn synth_utterances(spec: &CorpusSpec) -> Result<Vec<Utterance>> {
    generate_corpus(spec)?
        .iter()
        .map(|(spk, utt, audio)| utterance_from_audio(&format!("{spk}/{utt}"), spk, audio))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub trials: Vec<Trial>,
}

pub fn prepare(exp: &Experiment) -> Result<Prepared> {
    let utts = synth_utterances(&exp.corpus)?;
    let (train, test) = split_by_speaker(&utts, exp.held_out)?;
    let trials = evalkit::all_pairs(&test);
    Ok(Prepared { train, test, trials })
}

pub fn evaluate(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    trials: &[Trial],
    store: &[Utterance],
) -> Result<(Vec<Trial>, MetricsReport)> {
    let scored = evalkit::score_trials(params, cfg, trials, store)?;
    let report = MetricsReport::compute(&Scores::from_trials(&scored)?)?;
    Ok((scored, report))
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: TrainOutcome,
    pub pretrain_report: MetricsReport,
    pub final_report: MetricsReport,
    pub scored: Vec<Trial>,
}

pub fn run(
    exp: &Experiment,
    data: &Prepared,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<RunResult> {
    let set = FrameSet::from_utterances(&data.train);
    let init = model::init_params(&exp.model, exp.train.seed);
    let outcome = trainer::train(&init, &exp.model, &set, &exp.train, None, on_epoch)?;
    let (_, pretrain_report) = evaluate(&outcome.pretrained, &exp.model, &data.trials, &data.test)?;
    let (scored, final_report) = evaluate(&outcome.params, &exp.model, &data.trials, &data.test)?;
    Ok(RunResult {
        outcome,
        pretrain_report,
        final_report,
        scored,
    })
}

/// Re-frames every utterance of `utts` after mixing noise into its audio.
/// Needs the original audio, so works from the corpus spec.
pub fn degraded_utterances(spec: &CorpusSpec, keep: &[Utterance], noise: &DegradationSpec) -> Result<Vec<Utterance>> {
    let ids: std::collections::HashSet<&str> = keep.iter().map(|u| u.id.as_str()).collect();
    generate_corpus(spec)?
        .iter()
        .enumerate()
        .filter(|(_, (spk, utt, _))| ids.contains(format!("{spk}/{utt}").as_str()))
        .map(|(i, (spk, utt, audio))| {
            let seed = ndcore::rng::substream_seed(spec.seed, "degrade", &[i as u64]);
            let noisy = mix_noise(audio, noise, seed)?;
            utterance_from_audio(&format!("{spk}/{utt}"), spk, &noisy)
        })
        .collect()
}
