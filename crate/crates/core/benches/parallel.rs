use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deepvox::audio::SpeechFrame;
use deepvox::corpus::FrameSet;
use deepvox::experiment::synth_utterances;
use deepvox::mining::MiningConfig;
use deepvox::model::{self, ModelConfig};
use deepvox::ndcore::par::Exec;
use deepvox::synth::CorpusSpec;
use deepvox::trainer::{self, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn frames(n: usize) -> Vec<SpeechFrame> {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            let data = (0..160 * 200).map(|_| r.random_range(-1.0..1.0)).collect();
            SpeechFrame::new(data, 160, 200, "bench", format!("f{i}")).unwrap()
        })
        .collect()
}

fn embedding(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let params = model::init_params(&cfg, 1);
    let batch = frames(8);
    let mut g = c.benchmark_group("embed_frames");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| model::embed_frames_with(exec, &batch, &params, &cfg).unwrap())
        });
    }
    g.finish();
}

fn verification_epoch(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let init = model::init_params(&cfg, 2);
    let spec = CorpusSpec {
        speakers: 4,
        utterances: 3,
        duration_s: 2.0,
        seed: 3,
    };
    let set = FrameSet::from_utterances(&synth_utterances(&spec).unwrap());
    let mut g = c.benchmark_group("verification_epoch");
    g.sample_size(10);
    for (name, exec) in MODES {
        let train = TrainConfig {
            pretrain_epochs: 0,
            verify_epochs: 1,
            mining: MiningConfig {
                subjects_per_batch: 4,
                samples_per_subject: 3,
                ramp_epochs: 1,
                ..MiningConfig::default()
            },
            exec,
            ..TrainConfig::default()
        };
        g.bench_function(name, |b| {
            b.iter(|| trainer::train(&init, &cfg, &set, &train, None, &mut |_| Ok(())).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, embedding, verification_epoch);
criterion_main!(benches);
