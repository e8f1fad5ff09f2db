//! Toy per-frame linear acoustic model trained with CTC and AdamW.
//!
//! The model maps each `F`-dimensional frame to `V` logits with one affine
//! map and has no temporal context. It exists to drive the CTC loss, the
//! optimizer and the phase schedule end to end at desk scale.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{shuffled_split, CorpusError, SplitSpec};
use crate::ctc::{self, collapse, greedy_decode, CtcError, LabelSequence, LogitMatrix};
use crate::metrics::edit_distance;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TACM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const PHASE1_LR: f64 = 5e-4;
pub const PHASE1_WEIGHT_DECAY: f64 = 2.5e-6;
pub const PHASE2_LR: f64 = 5e-6;
pub const PHASE2_WEIGHT_DECAY: f64 = 2.5e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TrainerError {
    #[error("feature matrix has {got} columns, model expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("gradient entry {index} is not finite")]
    NonFiniteGradient { index: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("utterance {index} cannot be aligned: {source}")]
    Infeasible { index: usize, source: CtcError },
    #[error("phase plan: {0}")]
    BadPlan(String),
    #[error("invalid optimizer setting: {0}")]
    BadHyperparameter(String),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// `frames x dim` input features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    frames: usize,
    dim: usize,
    values: Vec<f64>,
}

impl Features {
    pub fn new(frames: usize, dim: usize, values: Vec<f64>) -> Result<Self, TrainerError> {
        if values.len() != frames * dim {
            return Err(TrainerError::ShapeMismatch {
                expected: frames * dim,
                got: values.len(),
            });
        }
        Ok(Self {
            frames,
            dim,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: Features,
    pub labels: LabelSequence,
}

/// Parameters are stored flat: `W` row-major (`F x V`) followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAcousticModel {
    features: usize,
    classes: usize,
    params: Vec<f64>,
}

impl ToyAcousticModel {
    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            features,
            classes,
            params: vec![0.0; features * classes + classes],
        }
    }

    /// Entries drawn uniformly from `[-scale, scale)`.
    pub fn random(features: usize, classes: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(features, classes);
        for p in &mut m.params {
            *p = rng.gen_range(-scale..scale);
        }
        m
    }

    pub fn from_parts(
        features: usize,
        classes: usize,
        w: &[f64],
        b: &[f64],
    ) -> Result<Self, TrainerError> {
        if w.len() != features * classes {
            return Err(TrainerError::ShapeMismatch {
                expected: features * classes,
                got: w.len(),
            });
        }
        if b.len() != classes {
            return Err(TrainerError::ShapeMismatch {
                expected: classes,
                got: b.len(),
            });
        }
        let mut params = w.to_vec();
        params.extend_from_slice(b);
        Ok(Self {
            features,
            classes,
            params,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.features * self.classes]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.features * self.classes..]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Row `t` of the output is `x[t] . W + b`.
    pub fn forward(&self, x: &Features) -> Result<LogitMatrix, TrainerError> {
        if x.dim != self.features {
            return Err(TrainerError::FeatureDim {
                expected: self.features,
                got: x.dim,
            });
        }
        let (w, b) = (self.weights(), self.bias());
        let mut out = Vec::with_capacity(x.frames * self.classes);
        for t in 0..x.frames {
            let mut logits = b.to_vec();
            for (f, &xf) in x.row(t).iter().enumerate() {
                if xf == 0.0 {
                    continue;
                }
                for (l, &wk) in logits
                    .iter_mut()
                    .zip(&w[f * self.classes..(f + 1) * self.classes])
                {
                    *l += xf * wk;
                }
            }
            out.extend(logits);
        }
        Ok(LogitMatrix::new(x.frames, self.classes, out)?)
    }

    /// CTC loss of one utterance and its gradient with respect to the
    /// flat parameter vector.
    pub fn loss_and_grad(
        &self,
        u: &Utterance,
        blank_id: u32,
    ) -> Result<(f64, Vec<f64>), TrainerError> {
        let logits = self.forward(&u.features)?;
        let (loss, dlogits) = ctc::ctc_loss_and_grad(&logits, &u.labels, blank_id)?;
        let v = self.classes;
        let mut grad = vec![0.0; self.params.len()];
        let (gw, gb) = grad.split_at_mut(self.features * v);
        for t in 0..u.features.frames {
            let g = &dlogits[t * v..(t + 1) * v];
            for (f, &xf) in u.features.row(t).iter().enumerate() {
                if xf == 0.0 {
                    continue;
                }
                for (dst, &gk) in gw[f * v..(f + 1) * v].iter_mut().zip(g) {
                    *dst += xf * gk;
                }
            }
            for (dst, &gk) in gb.iter_mut().zip(g) {
                *dst += gk;
            }
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, u: &Utterance, blank_id: u32) -> Result<f64, TrainerError> {
        let logits = self.forward(&u.features)?;
        Ok(ctc::ctc_loss(&logits, &u.labels, blank_id)?.loss)
    }

    /// Checkpoint bytes: magic, u32 version, u32 F, u32 V, then `W` and `b`
    /// as little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for n in [
            CHECKPOINT_VERSION,
            self.features as u32,
            self.classes as u32,
        ] {
            out.extend_from_slice(&n.to_le_bytes());
        }
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainerError> {
        let bad = |msg: &str| TrainerError::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing TACM header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if word(4) != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {}", word(4))));
        }
        let (features, classes) = (word(8) as usize, word(12) as usize);
        let n = features * classes + classes;
        if bytes.len() != 16 + 4 * n {
            return Err(bad(&format!(
                "expected {} payload bytes, found {}",
                4 * n,
                bytes.len() - 16
            )));
        }
        let params = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            features,
            classes,
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Result<Self, TrainerError> {
        check_hyper(lr, weight_decay)?;
        Ok(Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        })
    }

    /// One AdamW update in place, with weight decay decoupled from the
    /// adaptive step.
    pub fn adamw_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), TrainerError> {
        for len in [params.len(), grads.len()] {
            if len != self.m.len() {
                return Err(TrainerError::ShapeMismatch {
                    expected: self.m.len(),
                    got: len,
                });
            }
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(TrainerError::NonFiniteGradient { index });
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -=
                self.lr * (m_hat / (v_hat.sqrt() + self.epsilon) + self.weight_decay * params[i]);
        }
        Ok(())
    }
}

fn check_hyper(lr: f64, weight_decay: f64) -> Result<(), TrainerError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(TrainerError::BadHyperparameter(format!("lr {lr}")));
    }
    if !(weight_decay.is_finite() && weight_decay >= 0.0) {
        return Err(TrainerError::BadHyperparameter(format!(
            "weight decay {weight_decay}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan {
    phases: Vec<Phase>,
}

impl PhasePlan {
    pub fn new(phases: Vec<Phase>) -> Result<Self, TrainerError> {
        if phases.is_empty() {
            return Err(TrainerError::BadPlan("no phases".into()));
        }
        for (i, p) in phases.iter().enumerate() {
            if p.epochs == 0 {
                return Err(TrainerError::BadPlan(format!(
                    "phase {} has zero epochs",
                    i + 1
                )));
            }
            check_hyper(p.lr, p.weight_decay)?;
        }
        Ok(Self { phases })
    }

    /// Long high-rate phase followed by a short low-rate one.
    pub fn two_phase(first_epochs: usize, second_epochs: usize) -> Result<Self, TrainerError> {
        Self::new(vec![
            Phase {
                epochs: first_epochs,
                lr: PHASE1_LR,
                weight_decay: PHASE1_WEIGHT_DECAY,
            },
            Phase {
                epochs: second_epochs,
                lr: PHASE2_LR,
                weight_decay: PHASE2_WEIGHT_DECAY,
            },
        ])
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Share of the data used for training in each phase; the rest is the
    /// held-out set scored by greedy-decode WER.
    pub train_fraction: f64,
    pub seed: u64,
    pub blank_id: u32,
    pub word_delim_id: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            train_fraction: 0.85,
            seed: 0,
            blank_id: 0,
            word_delim_id: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub phase: usize,
    /// 1-based, counted across phases.
    pub epoch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Optimizer steps taken so far.
    pub steps: u64,
    /// Mean CTC loss over the phase's training split, after the epoch.
    pub train_loss: f64,
    /// Corpus WER of greedy decoding on the held-out split, if non-empty.
    pub eval_wer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyAcousticModel,
    /// Mean loss over the whole dataset before the first step.
    pub initial_loss: f64,
    pub log: Vec<EpochLog>,
}

pub const LOG_HEADER: &str = "phase\tepoch\tlr\tweight_decay\ttrain_loss\teval_wer";

impl EpochLog {
    pub fn tsv_row(&self) -> String {
        let wer = self
            .eval_wer
            .map_or_else(|| "NA".to_string(), |w| format!("{w:.6}"));
        format!(
            "{}\t{}\t{:e}\t{:e}\t{:.6}\t{}",
            self.phase, self.epoch, self.lr, self.weight_decay, self.train_loss, wer
        )
    }
}

pub fn log_to_tsv(log: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.tsv_row());
        out.push('\n');
    }
    out
}

/// Mean CTC loss over `data`, evaluated in parallel and summed in order.
pub fn mean_loss(
    model: &ToyAcousticModel,
    data: &[&Utterance],
    blank_id: u32,
) -> Result<f64, TrainerError> {
    let losses = data
        .par_iter()
        .map(|u| model.loss(u, blank_id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean loss and gradient over `batch`. Per-utterance work runs in
/// parallel; the reduction is sequential in batch order.
pub fn batch_loss_and_grad(
    model: &ToyAcousticModel,
    batch: &[&Utterance],
    blank_id: u32,
) -> Result<(f64, Vec<f64>), TrainerError> {
    let parts = batch
        .par_iter()
        .map(|u| model.loss_and_grad(u, blank_id))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l * scale;
        for (dst, gi) in grad.iter_mut().zip(g) {
            *dst += gi * scale;
        }
    }
    Ok((loss, grad))
}

fn words(labels: &[u32], delim: u32) -> Vec<&[u32]> {
    labels
        .split(|&id| id == delim)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Micro-averaged word error rate of greedy decoding, comparing label-id
/// words. `None` when the set has no reference words.
pub fn greedy_wer(
    model: &ToyAcousticModel,
    data: &[&Utterance],
    cfg: &TrainConfig,
) -> Result<Option<f64>, TrainerError> {
    let counts = data
        .par_iter()
        .map(|u| {
            let hyp = greedy_decode(&model.forward(&u.features)?, cfg.blank_id);
            let r = words(u.labels.ids(), cfg.word_delim_id);
            let h = words(hyp.ids(), cfg.word_delim_id);
            Ok((edit_distance(&r, &h), r.len()))
        })
        .collect::<Result<Vec<_>, TrainerError>>()?;
    let (edits, total) = counts
        .iter()
        .fold((0, 0), |(e, n), (de, dn)| (e + de, n + dn));
    Ok((total > 0).then(|| edits as f64 / total as f64))
}

/// Runs every phase of `plan`. Each phase draws a fresh seeded train /
/// held-out split; optimizer moments carry across phases and only the
/// learning rate and weight decay change at the boundary.
pub fn train(
    mut model: ToyAcousticModel,
    dataset: &[Utterance],
    plan: &PhasePlan,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainerError> {
    if dataset.is_empty() {
        return Err(TrainerError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(TrainerError::ZeroBatch);
    }
    for (index, u) in dataset.iter().enumerate() {
        let (frames, required) = (u.features.frames, u.labels.min_frames());
        if required > frames {
            return Err(TrainerError::Infeasible {
                index,
                source: CtcError::Infeasible { frames, required },
            });
        }
    }
    let all: Vec<&Utterance> = dataset.iter().collect();
    let initial_loss = mean_loss(&model, &all, cfg.blank_id)?;

    let first = plan.phases[0];
    let mut opt = OptimizerState::new(model.params.len(), first.lr, first.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(plan.total_epochs());
    let mut epoch = 0;

    for (p, phase) in plan.phases.iter().enumerate() {
        opt.lr = phase.lr;
        opt.weight_decay = phase.weight_decay;
        let spec = SplitSpec::new(cfg.train_fraction, cfg.seed.wrapping_add(p as u64))?;
        let (train_set, held_out) = shuffled_split(all.clone(), &spec);
        if train_set.is_empty() {
            return Err(TrainerError::EmptyDataset);
        }
        let mut order = train_set.clone();
        for _ in 0..phase.epochs {
            epoch += 1;
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let (_, grad) = batch_loss_and_grad(&model, batch, cfg.blank_id)?;
                opt.adamw_step(&mut model.params, &grad)?;
            }
            log.push(EpochLog {
                phase: p + 1,
                epoch,
                lr: phase.lr,
                weight_decay: phase.weight_decay,
                steps: opt.step_count,
                train_loss: mean_loss(&model, &train_set, cfg.blank_id)?,
                eval_wer: greedy_wer(&model, &held_out, cfg)?,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        initial_loss,
        log,
    })
}

/// Linearly separable toy corpus. Each utterance is a random frame-level
/// path over `classes` symbols (blank included); frame `t` is the one-hot
/// code of its path symbol times `scale`, and the target is the collapsed
/// path. Every utterance has at least one non-delimiter label.
pub fn synthetic_dataset(
    utterances: usize,
    classes: usize,
    frames: usize,
    scale: f64,
    seed: u64,
    blank_id: u32,
    word_delim_id: u32,
) -> Vec<Utterance> {
    assert!(
        classes >= 3 && frames >= 1,
        "need a blank, a delimiter and a symbol"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(utterances);
    while out.len() < utterances {
        let path: Vec<u32> = (0..frames)
            .map(|_| rng.gen_range(0..classes as u32))
            .collect();
        let labels = collapse(&path, blank_id);
        if !labels.ids().iter().any(|&id| id != word_delim_id) {
            continue;
        }
        let mut values = vec![0.0; frames * classes];
        for (t, &k) in path.iter().enumerate() {
            values[t * classes + k as usize] = scale;
        }
        out.push(Utterance {
            features: Features::new(frames, classes, values).expect("shape is consistent"),
            labels,
        });
    }
    out
}
