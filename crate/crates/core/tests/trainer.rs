mod common;

use common::small_model;
use deepvox::corpus::FrameSet;
use deepvox::experiment::synth_utterances;
use deepvox::mining::{tau_schedule, MiningConfig};
use deepvox::model::{self, ModelConfig};
use deepvox::ndcore::par::Exec;
use deepvox::ndcore::ParamStore;
use deepvox::objective::TripletLossConfig;
use deepvox::synth::CorpusSpec;
use deepvox::trainer::*;

fn corpus(speakers: usize, utterances: usize, seed: u64) -> FrameSet {
    let utts = synth_utterances(&CorpusSpec {
        speakers,
        utterances,
        duration_s: 2.0,
        seed,
    })
    .unwrap();
    FrameSet::from_utterances(&utts)
}

fn small_train(pretrain: usize, verify: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        pretrain_epochs: pretrain,
        verify_epochs: verify,
        seed,
        mining: MiningConfig {
            subjects_per_batch: 4,
            samples_per_subject: 3,
            ramp_epochs: verify,
            ..MiningConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn noop(_: &Checkpoint) -> deepvox::Result<()> {
    Ok(())
}

#[test]
fn identification_pretraining_learns_five_speakers() {
    let cfg = ModelConfig::default();
    let set = corpus(5, 6, 1);
    let init = model::init_params(&cfg, 1);
    let train = small_train(20, 0, 1);
    let mut log = TrainLog::default();
    let (params, head) = pretrain_identification(&init, &cfg, &set, &train, None, &mut log, &mut noop).unwrap();
    assert_eq!(log.losses(Phase::Identification).len(), 20);
    let acc = identification_accuracy(&params, &head, &cfg, &set).unwrap();
    assert!(acc > 0.8, "training accuracy {acc}");
    assert!(params.names().all(|n| !n.starts_with("head.")));
}

#[test]
fn zero_scale_leaves_parameters_untouched() {
    let cfg = small_model();
    let set = corpus(4, 3, 2);
    let init = model::init_params(&cfg, 2);
    let train = TrainConfig {
        scale_factor: 0.0,
        ..small_train(5, 5, 2)
    };
    let out = train_run(&init, &cfg, &set, &train);
    assert_eq!(out.pretrained, init);
    assert_eq!(out.params, init);
    assert!(out.log.entries.is_empty());
}

fn train_run(init: &ParamStore<f32>, cfg: &ModelConfig, set: &FrameSet, train: &TrainConfig) -> TrainOutcome {
    deepvox::trainer::train(init, cfg, set, train, None, &mut noop).unwrap()
}

#[test]
fn same_seed_reproduces_the_log_bitwise() {
    let cfg = small_model();
    let set = corpus(4, 3, 3);
    let init = model::init_params(&cfg, 3);
    let train = small_train(2, 3, 3);
    let a = train_run(&init, &cfg, &set, &train);
    let b = train_run(&init, &cfg, &set, &train);
    let bits = |o: &TrainOutcome| o.log.entries.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.params, b.params);
    let other = train_run(&init, &cfg, &set, &TrainConfig { seed: 4, ..train });
    assert_ne!(bits(&a), bits(&other));
}

#[test]
fn sequential_and_parallel_execution_agree_bitwise() {
    let cfg = small_model();
    let set = corpus(4, 3, 6);
    let init = model::init_params(&cfg, 6);
    let train = small_train(2, 2, 6);
    let seq = train_run(
        &init,
        &cfg,
        &set,
        &TrainConfig {
            exec: Exec::Sequential,
            ..train.clone()
        },
    );
    let par = train_run(
        &init,
        &cfg,
        &set,
        &TrainConfig {
            exec: Exec::Parallel,
            ..train
        },
    );
    assert_eq!(seq.log.to_text(), par.log.to_text());
    assert_eq!(seq.params, par.params);
}

#[test]
fn logged_tau_follows_the_schedule() {
    let cfg = small_model();
    let set = corpus(4, 3, 5);
    let train = small_train(1, 4, 5);
    let out = train_run(&model::init_params(&cfg, 5), &cfg, &set, &train);
    let mining = train.mining_for(set.num_subjects());
    let ver: Vec<&LogEntry> = out
        .log
        .entries
        .iter()
        .filter(|e| e.phase == Phase::Verification)
        .collect();
    assert_eq!(ver.len(), 4);
    for e in ver {
        assert_eq!(e.tau, tau_schedule(e.epoch, &mining));
        assert_eq!(e.triplets, 4 * 3 * 2);
        assert!(e.loss >= 0.0);
    }
    assert_eq!(
        TrainLog::parse(&out.log.to_text()).unwrap().entries.len(),
        out.log.entries.len()
    );
}

#[test]
fn cloned_utterance_with_zero_margin_has_zero_loss() {
    let mut cfg = small_model();
    cfg.embed.dropout_p = 0.0;
    let one = corpus(1, 1, 6);
    let frame = one.frames[0].clone();
    let set = FrameSet {
        frames: vec![frame; 12],
        labels: (0..12).map(|i| i / 4).collect(),
        subjects: vec!["a".into(), "b".into(), "c".into()],
    };
    let train = TrainConfig {
        loss: TripletLossConfig {
            margin_alpha: 0.0,
            ..TripletLossConfig::default()
        },
        mining: MiningConfig {
            subjects_per_batch: 3,
            samples_per_subject: 4,
            ..MiningConfig::default()
        },
        ..small_train(0, 3, 6)
    };
    let out = train_run(&model::init_params(&cfg, 6), &cfg, &set, &train);
    let losses = out.log.losses(Phase::Verification);
    assert_eq!(losses, vec![0.0; 3]);
}

#[test]
fn resume_matches_the_uninterrupted_run() {
    let cfg = small_model();
    let set = corpus(4, 3, 7);
    let init = model::init_params(&cfg, 7);
    let train = small_train(3, 4, 7);
    let mut checkpoints = Vec::new();
    let full = deepvox::trainer::train(&init, &cfg, &set, &train, None, &mut |c: &Checkpoint| {
        checkpoints.push(c.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(checkpoints.len(), 7);
    let bits = |l: &TrainLog| {
        l.entries
            .iter()
            .map(|e| (e.phase, e.epoch, e.loss.to_bits()))
            .collect::<Vec<_>>()
    };

    // midway through verification, through a file
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.dvck");
    let mid = &checkpoints[3 + 1];
    assert_eq!((mid.phase, mid.epoch), (Phase::Verification, 2));
    mid.save(&path).unwrap();
    let loaded = Checkpoint::load(&path, train.learning_rate).unwrap();
    assert_eq!(loaded.params, mid.params);
    assert_eq!(loaded.optimizer, mid.optimizer);
    assert_eq!(
        (loaded.phase, loaded.epoch, loaded.seed),
        (mid.phase, mid.epoch, mid.seed)
    );
    assert_eq!(loaded.tau.to_bits(), mid.tau.to_bits());
    let resumed = deepvox::trainer::train(&init, &cfg, &set, &train, Some(loaded), &mut noop).unwrap();
    assert_eq!(resumed.params, full.params);
    assert_eq!(bits(&resumed.log)[..], bits(&full.log)[3 + 2..]);

    // midway through identification
    let id = checkpoints[1].clone();
    assert_eq!((id.phase, id.epoch), (Phase::Identification, 2));
    let resumed = deepvox::trainer::train(&init, &cfg, &set, &train, Some(id), &mut noop).unwrap();
    assert_eq!(resumed.params, full.params);
    assert_eq!(resumed.pretrained, full.pretrained);
    assert_eq!(bits(&resumed.log)[..], bits(&full.log)[2..]);
}

#[test]
fn parameter_files_drop_the_head() {
    let cfg = small_model();
    let mut p = model::init_params(&cfg, 8);
    let n = p.len();
    p.merge(&model::init_head(32, 3, &mut common::rng(8)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.dvck");
    save_params(&p, &path).unwrap();
    let back = load_params(&path).unwrap();
    assert_eq!(back.len(), n);
    assert_eq!(back, model::init_params(&cfg, 8));
}

#[test]
fn config_validation() {
    assert!(TrainConfig {
        scale_factor: 1.5,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig::default().validate().is_ok());
    let m = TrainConfig {
        scale_factor: 0.05,
        ..TrainConfig::default()
    }
    .mining_for(15);
    assert_eq!((m.subjects_per_batch, m.ramp_epochs), (15, 40));
}
