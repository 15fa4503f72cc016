//! Two-phase training: identification pretraining with a temporary softmax
//! head, then verification training on mined cosine triplets.
//!
//! A verification step runs in two passes so only one frame's tape is alive
//! per worker: every batch frame is first embedded, the triplet loss yields a
//! gradient per embedding, and each frame is then re-run with its dropout seed
//! and back-propagated from that embedding gradient. Per-frame parameter
//! gradients are summed in batch order, so results do not depend on the
//! worker count.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndcore::checkpoint::{self, Block};
use ndcore::par::{self, Exec};
use ndcore::{BackwardMode, Optimizer, OptimizerKind, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;

use crate::corpus::FrameSet;
use crate::deepvox_net;
use crate::error::{invalid, DvError, Result};
use crate::mining::{self, MiningConfig};
use crate::model::{self, ModelConfig, HEAD_BIAS, HEAD_WEIGHT};
use crate::objective::{self, TripletLossConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub verify_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Multiplies both epoch counts and the tau ramp length.
    pub scale_factor: f64,
    /// Frames per identification step.
    pub pretrain_batch: usize,
    pub mining: MiningConfig,
    pub loss: TripletLossConfig,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 50,
            verify_epochs: 800,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            scale_factor: 1.0,
            pretrain_batch: 16,
            mining: MiningConfig::default(),
            loss: TripletLossConfig::default(),
            exec: Exec::default(),
        }
    }
}

/// `round(epochs * scale)`, at least 1 unless the scale is zero.
pub fn scaled_epochs(epochs: usize, scale: f64) -> usize {
    if scale == 0.0 || epochs == 0 {
        0
    } else {
        ((epochs as f64 * scale).round() as usize).max(1)
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.scale_factor) {
            return Err(invalid(format!(
                "scale_factor must lie in [0, 1], got {}",
                self.scale_factor
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.pretrain_batch == 0 {
            return Err(invalid("pretrain_batch must be positive"));
        }
        self.mining.validate()?;
        self.loss.validate()
    }

    pub fn pretrain_epochs_scaled(&self) -> usize {
        scaled_epochs(self.pretrain_epochs, self.scale_factor)
    }

    pub fn verify_epochs_scaled(&self) -> usize {
        scaled_epochs(self.verify_epochs, self.scale_factor)
    }

    /// Mining settings for a set with `subjects` training subjects: the ramp
    /// is scaled and the subject count clamped to what the set offers.
    pub fn mining_for(&self, subjects: usize) -> MiningConfig {
        let mut m = self.mining.clone();
        m.ramp_epochs = scaled_epochs(m.ramp_epochs, self.scale_factor);
        m.subjects_per_batch = m.subjects_per_batch.min(subjects);
        m.margin_alpha = self.loss.margin_alpha;
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Identification,
    Verification,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Identification => "id",
            Self::Verification => "ver",
        }
    }
}

impl FromStr for Phase {
    type Err = DvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id" => Ok(Self::Identification),
            "ver" => Ok(Self::Verification),
            _ => Err(DvError::Format(format!("unknown phase `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub tau: f64,
    pub mean_neg_sim: f64,
    pub triplets: usize,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} phase={} loss={} tau={} mean_neg_sim={} triplets={}",
            self.epoch,
            self.phase.as_str(),
            self.loss,
            self.tau,
            self.mean_neg_sim,
            self.triplets
        )
    }
}

impl FromStr for LogEntry {
    type Err = DvError;

    fn from_str(line: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for part in line.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| DvError::Format(format!("log field without `=`: {part}")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| DvError::Format(format!("log line missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| DvError::Format(format!("{k}: {e}"))) };
        Ok(Self {
            epoch: get("epoch")?
                .parse()
                .map_err(|e| DvError::Format(format!("epoch: {e}")))?,
            phase: get("phase")?.parse()?,
            loss: num("loss")?,
            tau: num("tau")?,
            mean_neg_sim: num("mean_neg_sim")?,
            triplets: match kv.get("triplets") {
                Some(v) => v.parse().map_err(|e| DvError::Format(format!("triplets: {e}")))?,
                None => 0,
            },
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn push(&mut self, e: LogEntry) {
        log::info!("{e}");
        self.entries.push(e);
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self {
            entries: text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::parse)
                .collect::<Result<_>>()?,
        })
    }

    pub fn losses(&self, phase: Phase) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.phase == phase)
            .map(|e| e.loss)
            .collect()
    }
}

/// Training state at the end of an epoch. In the identification phase
/// `params` also holds the classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Completed epochs within `phase`.
    pub epoch: usize,
    pub tau: f64,
    pub seed: u64,
    pub params: ParamStore<f32>,
    pub optimizer: Optimizer<f32>,
}

fn u64_block(name: &str, v: u64) -> Block {
    let chunks = (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f32).collect();
    (name.to_owned(), Tensor::vector(chunks))
}

fn block_u64(t: &Tensor<f32>) -> Result<u64> {
    if t.len() != 4 {
        return Err(DvError::Format("integer block must hold 4 chunks".into()));
    }
    Ok(t.data()
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &c)| acc | ((c as u64) << (16 * i))))
}

impl Checkpoint {
    pub fn to_blocks(&self) -> Vec<Block> {
        let mut blocks: Vec<Block> = self
            .params
            .iter()
            .map(|(n, t)| (format!("param.{n}"), t.clone()))
            .collect();
        for (i, (m, v)) in self.optimizer.m.iter().zip(&self.optimizer.v).enumerate() {
            blocks.push((format!("opt.m.{i}"), m.clone()));
            blocks.push((format!("opt.v.{i}"), v.clone()));
        }
        blocks.push(u64_block("meta.epoch", self.epoch as u64));
        blocks.push(u64_block(
            "meta.phase",
            match self.phase {
                Phase::Identification => 0,
                Phase::Verification => 1,
            },
        ));
        blocks.push(u64_block("meta.step", self.optimizer.step));
        blocks.push(u64_block("meta.seed", self.seed));
        blocks.push(u64_block(
            "meta.optimizer",
            match self.optimizer.kind {
                OptimizerKind::Adam => 0,
                OptimizerKind::SgdMomentum => 1,
            },
        ));
        blocks.push(u64_block("meta.tau", self.tau.to_bits()));
        blocks
    }

    /// Rebuilds a checkpoint; the learning rate comes from `lr` since it is
    /// not stored at full precision.
    pub fn from_blocks(blocks: Vec<Block>, lr: f64) -> Result<Self> {
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        let mut meta = std::collections::HashMap::new();
        for (name, t) in blocks {
            if let Some(n) = name.strip_prefix("param.") {
                params.insert(n, t);
            } else if let Some(i) = name.strip_prefix("opt.m.") {
                m.push((i.parse::<usize>().map_err(|e| DvError::Format(e.to_string()))?, t));
            } else if let Some(i) = name.strip_prefix("opt.v.") {
                v.push((i.parse::<usize>().map_err(|e| DvError::Format(e.to_string()))?, t));
            } else if let Some(k) = name.strip_prefix("meta.") {
                meta.insert(k.to_owned(), t);
            } else {
                return Err(DvError::Format(format!("unexpected checkpoint block `{name}`")));
            }
        }
        m.sort_by_key(|p| p.0);
        v.sort_by_key(|p| p.0);
        if m.len() != params.len() || v.len() != params.len() {
            return Err(DvError::Format("optimizer state does not match parameters".into()));
        }
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| DvError::Format(format!("checkpoint lacks meta.{k}")))
        };
        let kind = match block_u64(get("optimizer")?)? {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::SgdMomentum,
            k => return Err(DvError::Format(format!("unknown optimizer code {k}"))),
        };
        let mut optimizer = Optimizer::new(kind, lr, &params);
        optimizer.m = m.into_iter().map(|p| p.1).collect();
        optimizer.v = v.into_iter().map(|p| p.1).collect();
        optimizer.step = block_u64(get("step")?)?;
        Ok(Self {
            phase: match block_u64(get("phase")?)? {
                0 => Phase::Identification,
                1 => Phase::Verification,
                p => return Err(DvError::Format(format!("unknown phase code {p}"))),
            },
            epoch: block_u64(get("epoch")?)? as usize,
            tau: f64::from_bits(block_u64(get("tau")?)?),
            seed: block_u64(get("seed")?)?,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        checkpoint::write_blocks(file, &self.to_blocks())?;
        Ok(())
    }

    pub fn load(path: &Path, lr: f64) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_blocks(checkpoint::read_blocks(file)?, lr)
    }
}

/// Writes a bare parameter store (no optimizer state) as a checkpoint container.
pub fn save_params(params: &ParamStore<f32>, path: &Path) -> Result<()> {
    let blocks: Vec<Block> = params.iter().map(|(n, t)| (format!("param.{n}"), t.clone())).collect();
    checkpoint::write_blocks(std::io::BufWriter::new(std::fs::File::create(path)?), &blocks)?;
    Ok(())
}

/// Reads the parameters of any checkpoint container, dropping head and optimizer blocks.
pub fn load_params(path: &Path) -> Result<ParamStore<f32>> {
    let blocks = checkpoint::read_blocks(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let mut p = ParamStore::new();
    for (name, t) in blocks {
        if let Some(n) = name.strip_prefix("param.") {
            if !n.starts_with("head.") {
                p.insert(n, t);
            }
        }
    }
    if p.is_empty() {
        return Err(DvError::Format("checkpoint holds no parameters".into()));
    }
    Ok(p)
}

fn network_params(all: &ParamStore<f32>) -> ParamStore<f32> {
    let mut p = all.filter_prefix("deepvox.");
    p.merge(&all.filter_prefix("embed."));
    p
}

fn sum_gradients(acc: &mut Option<Vec<Tensor<f32>>>, g: Vec<Tensor<f32>>) -> Result<()> {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for (a, g) in a.iter_mut().zip(&g) {
                a.add_assign(g)?;
            }
        }
    }
    Ok(())
}

fn all_finite(grads: &[Tensor<f32>]) -> bool {
    grads.iter().all(|g| g.is_finite())
}

fn check_set(set: &FrameSet, model_cfg: &ModelConfig) -> Result<()> {
    if set.is_empty() {
        return Err(DvError::Insufficient("training set has no frames".into()));
    }
    model_cfg.validate(set.frames[0].cols)
}

type EpochHook<'a> = &'a mut dyn FnMut(&Checkpoint) -> Result<()>;

/// Per-frame work items are processed in chunks so at most this many
/// gradient sets are alive before being folded into the running sum.
const GRAD_CHUNK: usize = 16;

struct FrameResult {
    grads: Vec<Tensor<f32>>,
    loss: f64,
    correct: bool,
}

/// Identification pretraining. Returns the network parameters and the
/// trained (discarded by callers) classification head.
pub fn pretrain_identification(
    params: &ParamStore<f32>,
    model_cfg: &ModelConfig,
    set: &FrameSet,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    log: &mut TrainLog,
    on_epoch: EpochHook<'_>,
) -> Result<(ParamStore<f32>, ParamStore<f32>)> {
    cfg.validate()?;
    check_set(set, model_cfg)?;
    let classes = set.num_subjects();
    let epochs = cfg.pretrain_epochs_scaled();
    let (mut all, mut opt, start) = match resume {
        Some(c) if c.phase == Phase::Identification => (c.params, c.optimizer, c.epoch),
        Some(_) => return Err(invalid("resume checkpoint is not from the identification phase")),
        None => {
            let mut all = params.clone();
            let mut rng = ndcore::rng::substream(cfg.seed, "head-init", &[]);
            all.merge(&model::init_head(model_cfg.embed.embedding_dim, classes, &mut rng));
            let opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &all);
            (all, opt, 0)
        }
    };
    opt.lr = cfg.learning_rate;
    if all.get(HEAD_WEIGHT).map(|w| w.shape()[0]) != Some(classes) {
        return Err(invalid(format!(
            "classification head does not match {classes} subjects"
        )));
    }
    let mut last_good = Checkpoint {
        phase: Phase::Identification,
        epoch: start,
        tau: f64::NAN,
        seed: cfg.seed,
        params: all.clone(),
        optimizer: opt.clone(),
    };
    for epoch in start..epochs {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut ndcore::rng::substream(cfg.seed, "id-shuffle", &[epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, batch) in order.chunks(cfg.pretrain_batch).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut acc = None;
            for (c, chunk) in batch.chunks(GRAD_CHUNK).enumerate() {
                let results = par::try_map_indexed_with(cfg.exec, chunk.len(), |k| {
                    let slot = c * GRAD_CHUNK + k;
                    let fi = chunk[k];
                    let seed =
                        ndcore::rng::substream_seed(cfg.seed, "id-dropout", &[epoch as u64, step as u64, slot as u64]);
                    let mut tape = Tape::<f32>::new();
                    let bound = all.bind(&mut tape, true);
                    let x = deepvox_net::frame_input(&mut tape, &set.frames[fi], false)?;
                    let emb = model::forward(&mut tape, &bound, model_cfg, x, true, seed)?;
                    let logits = tape.linear(emb, bound.var(HEAD_WEIGHT)?, Some(bound.var(HEAD_BIAS)?))?;
                    let logits = tape.reshape(logits, &[1, classes])?;
                    let xent = tape.softmax_cross_entropy(logits, &[set.labels[fi]])?;
                    let loss = tape.value(xent).item() as f64;
                    let lv = tape.value(logits).data();
                    let argmax = (0..classes).fold(0, |b, j| if lv[j] > lv[b] { j } else { b });
                    let scaled = tape.scale(xent, scale)?;
                    let mut g = tape.backward(scaled)?;
                    let grads = bound
                        .vars()
                        .iter()
                        .zip(all.iter())
                        .map(|(&v, (_, t))| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
                        .collect();
                    Ok::<_, DvError>(FrameResult {
                        grads,
                        loss,
                        correct: argmax == set.labels[fi],
                    })
                })?;
                for r in results {
                    loss_sum += r.loss;
                    correct += r.correct as usize;
                    sum_gradients(&mut acc, r.grads)?;
                }
            }
            let grads = acc.expect("non-empty batch");
            if !loss_sum.is_finite() || !all_finite(&grads) {
                return Err(DvError::Diverged {
                    epoch,
                    phase: "id",
                    last_good: Some(Box::new(last_good)),
                });
            }
            opt.step(&mut all, &grads)?;
        }
        log.push(LogEntry {
            epoch,
            phase: Phase::Identification,
            loss: loss_sum / set.len() as f64,
            tau: f64::NAN,
            mean_neg_sim: f64::NAN,
            triplets: 0,
        });
        log::debug!(
            "id epoch {epoch}: running accuracy {:.3}",
            correct as f64 / set.len() as f64
        );
        last_good = Checkpoint {
            phase: Phase::Identification,
            epoch: epoch + 1,
            tau: f64::NAN,
            seed: cfg.seed,
            params: all.clone(),
            optimizer: opt.clone(),
        };
        on_epoch(&last_good)?;
    }
    let head = all.filter_prefix("head.");
    Ok((network_params(&all), head))
}

/// Evaluation-mode classification accuracy of a network plus head.
pub fn identification_accuracy(
    params: &ParamStore<f32>,
    head: &ParamStore<f32>,
    model_cfg: &ModelConfig,
    set: &FrameSet,
) -> Result<f64> {
    let embs = model::embed_frames(&set.frames, params, model_cfg)?;
    let w = head.require(HEAD_WEIGHT)?;
    let b = head.require(HEAD_BIAS)?;
    let (classes, dim) = (w.shape()[0], w.shape()[1]);
    let mut correct = 0;
    for (e, &label) in embs.iter().zip(&set.labels) {
        let logits: Vec<f64> = (0..classes)
            .map(|c| {
                let row = &w.data()[c * dim..(c + 1) * dim];
                b.data()[c] as f64 + row.iter().zip(&e.values).map(|(&w, &x)| w as f64 * x).sum::<f64>()
            })
            .collect();
        let argmax = (0..classes).fold(0, |m, j| if logits[j] > logits[m] { j } else { m });
        correct += (argmax == label) as usize;
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Verification training with curriculum triplet mining.
pub fn train_verification(
    params: &ParamStore<f32>,
    model_cfg: &ModelConfig,
    set: &FrameSet,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    log: &mut TrainLog,
    on_epoch: EpochHook<'_>,
) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    check_set(set, model_cfg)?;
    let mining_cfg = cfg.mining_for(set.num_subjects());
    let epochs = cfg.verify_epochs_scaled();
    let batches = (set.len() / mining_cfg.batch_frames()).max(1);
    let (mut params, mut opt, start) = match resume {
        Some(c) if c.phase == Phase::Verification => (c.params, c.optimizer, c.epoch),
        Some(_) => return Err(invalid("resume checkpoint is not from the verification phase")),
        None => {
            let p = network_params(params);
            let opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &p);
            (p, opt, 0)
        }
    };
    opt.lr = cfg.learning_rate;
    let mut last_good = Checkpoint {
        phase: Phase::Verification,
        epoch: start,
        tau: mining::tau_schedule(start, &mining_cfg),
        seed: cfg.seed,
        params: params.clone(),
        optimizer: opt.clone(),
    };
    for epoch in start..epochs {
        let tau = mining::tau_schedule(epoch, &mining_cfg);
        let (mut loss_sum, mut neg_sum, mut triplet_count) = (0.0, 0.0, 0usize);
        for b in 0..batches {
            let batch_seed = ndcore::rng::substream_seed(cfg.seed, "ver-batch", &[epoch as u64, b as u64]);
            let batch = mining::build_batch(set, &mining_cfg, batch_seed)?;
            let n = batch.indices.len();
            let dropout = |slot: usize| {
                ndcore::rng::substream_seed(cfg.seed, "ver-dropout", &[epoch as u64, b as u64, slot as u64])
            };
            let embs: Vec<Vec<f64>> = par::try_map_indexed_with(cfg.exec, n, |i| {
                let mut tape = Tape::<f32>::new();
                let bound = params.bind(&mut tape, false);
                let x = deepvox_net::frame_input(&mut tape, &set.frames[batch.indices[i]], false)?;
                let y = model::forward(&mut tape, &bound, model_cfg, x, true, dropout(i))?;
                Ok::<_, DvError>(tape.value(y).data().iter().map(|&v| v as f64).collect())
            })?;
            let triplets = mining::mine_triplets(&embs, &batch.labels, tau, cfg.loss.margin_alpha)?;
            if triplets.is_empty() {
                log::warn!("epoch {epoch} batch {b}: no triplets mined");
                continue;
            }
            let mut tape = Tape::<f64>::new();
            let leaves: Vec<_> = embs
                .iter()
                .map(|e| tape.leaf(Tensor::vector(e.clone()), true))
                .collect();
            let idx: Vec<[ndcore::Var; 3]> = triplets
                .iter()
                .map(|t| [leaves[t.anchor_idx], leaves[t.positive_idx], leaves[t.negative_idx]])
                .collect();
            let loss = objective::triplet_loss_tape(&mut tape, &idx, &cfg.loss)?;
            let loss_value = tape.value(loss).item();
            let mut g = tape.backward(loss)?;
            let emb_grads: Vec<Option<Tensor<f32>>> = leaves
                .iter()
                .map(|&l| {
                    g.take(l)
                        .filter(|t| t.data().iter().any(|&v| v != 0.0))
                        .map(|t| t.cast())
                })
                .collect();
            let active: Vec<usize> = (0..n).filter(|&i| emb_grads[i].is_some()).collect();
            let mut acc = None;
            for chunk in active.chunks(GRAD_CHUNK) {
                let results = par::try_map_indexed_with(cfg.exec, chunk.len(), |k| {
                    let i = chunk[k];
                    let mut tape = Tape::<f32>::new();
                    let bound = params.bind(&mut tape, true);
                    let x = deepvox_net::frame_input(&mut tape, &set.frames[batch.indices[i]], false)?;
                    let y = model::forward(&mut tape, &bound, model_cfg, x, true, dropout(i))?;
                    let seed_grad = emb_grads[i].clone().expect("active frame");
                    let mut g = tape.backward_with(vec![(y, seed_grad)], BackwardMode::Plain)?;
                    Ok::<_, DvError>(
                        bound
                            .vars()
                            .iter()
                            .zip(params.iter())
                            .map(|(&v, (_, t))| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
                            .collect::<Vec<_>>(),
                    )
                })?;
                for r in results {
                    sum_gradients(&mut acc, r)?;
                }
            }
            let grads = match acc {
                Some(g) => g,
                None => params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            };
            if !loss_value.is_finite() || !all_finite(&grads) {
                return Err(DvError::Diverged {
                    epoch,
                    phase: "ver",
                    last_good: Some(Box::new(last_good)),
                });
            }
            opt.step(&mut params, &grads)?;
            loss_sum += loss_value;
            neg_sum += triplets.iter().map(|t| t.negative_similarity).sum::<f64>();
            triplet_count += triplets.len();
        }
        log.push(LogEntry {
            epoch,
            phase: Phase::Verification,
            loss: loss_sum / batches as f64,
            tau,
            mean_neg_sim: if triplet_count > 0 {
                neg_sum / triplet_count as f64
            } else {
                f64::NAN
            },
            triplets: triplet_count,
        });
        last_good = Checkpoint {
            phase: Phase::Verification,
            epoch: epoch + 1,
            tau,
            seed: cfg.seed,
            params: params.clone(),
            optimizer: opt.clone(),
        };
        on_epoch(&last_good)?;
    }
    Ok(params)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub pretrained: ParamStore<f32>,
    pub params: ParamStore<f32>,
    pub log: TrainLog,
}

/// Both phases from `init`, or from `resume` onwards.
pub fn train(
    init: &ParamStore<f32>,
    model_cfg: &ModelConfig,
    set: &FrameSet,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    on_epoch: EpochHook<'_>,
) -> Result<TrainOutcome> {
    let mut log = TrainLog::default();
    let (pretrained, ver_resume) = match resume {
        Some(c) if c.phase == Phase::Verification => (network_params(&c.params), Some(c)),
        other => {
            let (p, _head) = pretrain_identification(init, model_cfg, set, cfg, other, &mut log, on_epoch)?;
            (p, None)
        }
    };
    let params = train_verification(&pretrained, model_cfg, set, cfg, ver_resume, &mut log, on_epoch)?;
    Ok(TrainOutcome {
        pretrained,
        params,
        log,
    })
}
