//! Training: length-bucketed batching with padding masks, AdamW with linear
//! warmup and exponential decay, gradient accumulation, checkpointing, and
//! the train/dev loop.
//!
//! All randomness (epoch shuffles, dropout) is derived from the config seed
//! plus the epoch and batch indices, so a run can be checkpointed at any
//! batch boundary and resumed bit-identically.

use crate::autodiff::Tape;
use crate::dsp::{DspError, MelConfig};
use crate::eval::{aggregate, argmax, count_errors, EvalError, UtteranceScore};
use crate::labels::{
    boundaries_to_samples, downsample_labels, LabelError, Manifest, Split, TaskTaxonomy,
};
use crate::loss::{bilstm_loss, ce_label_smoothing, xsa_loss, LossError, LossValue};
use crate::models::{bool_mask, ModelConfig, ModelError, ParamSet};
use crate::synth::derive_seed;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CKPT_MAGIC: &[u8; 4] = b"CKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("split {0} has no utterances")]
    EmptySplit(Split),
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("loss diverged at step {step}: {loss}")]
    DivergedLoss { step: u64, loss: f64 },
    #[error("model has {model} classes but task expects {task}")]
    ClassCountMismatch { model: usize, task: usize },
    #[error("checkpoint version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint {path}: {message}")]
    CorruptFile { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Per-step decay factor after warmup; 0 means "anchor so the rate
    /// reaches 1% of peak at the final scheduled step".
    pub decay_gamma: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub alpha: f64,
    pub seed: u64,
    pub task: TaskTaxonomy,
    /// Stop after the epoch whose dev GER drops below this; 0 disables.
    pub early_stop_dev_ger: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            warmup_steps: 1000,
            decay_gamma: 0.0,
            batch_size: 64,
            grad_accum: 1,
            epochs: 30,
            label_smoothing: 0.1,
            alpha: 0.5,
            seed: 0,
            task: TaskTaxonomy::Task3,
            early_stop_dev_ger: 0.0,
        }
    }
}

/// Decay factor that brings the rate from `lr` to `0.01 * lr` across the
/// post-warmup steps.
pub fn anchored_gamma(total_steps: u64, warmup_steps: u64) -> f64 {
    if total_steps <= warmup_steps + 1 {
        return 1.0;
    }
    0.01f64.powf(1.0 / (total_steps - warmup_steps) as f64)
}

/// Learning rate at 1-based `step`: linear warmup, then exponential decay.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    assert!(step >= 1, "steps are 1-based");
    assert!(cfg.decay_gamma > 0.0, "decay_gamma must be resolved first");
    if step <= cfg.warmup_steps {
        cfg.lr * step as f64 / cfg.warmup_steps as f64
    } else {
        cfg.lr * cfg.decay_gamma.powi((step - cfg.warmup_steps) as i32)
    }
}

/// One utterance with features and labels at the model's output rate.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub utt_id: String,
    /// [T_in, d] model input frames.
    pub features: Array2<f32>,
    /// One label per model output position.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
}

/// Load and cache one split: model inputs plus ground truth downsampled to
/// the model's prediction rate under `task`.
pub fn load_dataset(
    model_cfg: &ModelConfig,
    manifest: &Manifest,
    split: Split,
    task: TaskTaxonomy,
    mel: &MelConfig,
) -> Result<Dataset, TrainError> {
    let mut items = Vec::new();
    for entry in manifest.split(split) {
        let features = crate::eval::load_model_input(model_cfg, entry, mel)?;
        let t_out = model_cfg.output_len(features.nrows());
        let track = boundaries_to_samples(&entry.boundaries, entry.num_samples(), task)?;
        let labels = downsample_labels(&track, t_out)?.labels;
        items.push(DatasetItem {
            utt_id: entry.utt_id.clone(),
            features,
            labels,
        });
    }
    if items.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    Ok(Dataset { items })
}

/// A padded time-major batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// [T_in_max, B, d], zero-padded.
    pub features: ArrayD<f32>,
    /// Input frames per utterance.
    pub in_lengths: Vec<usize>,
    /// [T_out_max, B], zero-padded.
    pub labels: Array2<usize>,
    /// [T_out_max, B], true exactly below each output length.
    pub mask: Array2<bool>,
}

/// Deterministic per-epoch batch plan: shuffle by seed, sort buckets of 64
/// by length to limit padding, then cut into batches.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>, TrainError> {
    assert!(batch_size >= 1);
    if dataset.items.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let mut order: Vec<usize> = (0..dataset.items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
    order.shuffle(&mut rng);
    for bucket in order.chunks_mut(64) {
        bucket.sort_by_key(|&i| dataset.items[i].features.nrows());
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Materialize one batch with zero padding and masks.
pub fn assemble_batch(dataset: &Dataset, indices: &[usize]) -> Batch {
    let items: Vec<&DatasetItem> = indices.iter().map(|&i| &dataset.items[i]).collect();
    let b = items.len();
    let d = items[0].features.ncols();
    let t_in = items.iter().map(|it| it.features.nrows()).max().unwrap();
    let t_out = items.iter().map(|it| it.labels.len()).max().unwrap();

    let mut features = ArrayD::zeros(IxDyn(&[t_in, b, d]));
    let mut labels = Array2::zeros((t_out, b));
    let mut out_lengths = Vec::with_capacity(b);
    let mut in_lengths = Vec::with_capacity(b);
    for (j, it) in items.iter().enumerate() {
        for t in 0..it.features.nrows() {
            for k in 0..d {
                features[[t, j, k]] = it.features[[t, k]];
            }
        }
        for (t, &c) in it.labels.iter().enumerate() {
            labels[[t, j]] = c;
        }
        in_lengths.push(it.features.nrows());
        out_lengths.push(it.labels.len());
    }
    Batch {
        features,
        in_lengths,
        labels,
        mask: bool_mask(t_out, &out_lengths),
    }
}

/// Adam first/second moments plus the shared step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: BTreeMap<String, ArrayD<f32>>,
    pub v: BTreeMap<String, ArrayD<f32>>,
    pub step: u64,
}

/// One AdamW update with decoupled weight decay. Parameters without a
/// gradient entry still decay.
pub fn adamw_step(
    params: &mut ParamSet<f32>,
    grads: &BTreeMap<String, ArrayD<f32>>,
    state: &mut AdamState,
    lr_t: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient { name: name.clone() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in params.tensors.iter_mut() {
        let zero = || ArrayD::zeros(p.raw_dim());
        let m = state.m.entry(name.clone()).or_insert_with(zero);
        let v = state.v.entry(name.clone()).or_insert_with(zero);
        let g = grads.get(name);
        let p_slice = p.as_slice_mut().expect("parameters are standard layout");
        let m_slice = m.as_slice_mut().expect("moments are standard layout");
        let v_slice = v.as_slice_mut().expect("moments are standard layout");
        let g_slice = g.map(|g| g.as_slice().expect("gradients are standard layout"));
        for i in 0..p_slice.len() {
            let gi = g_slice.map_or(0.0f64, |g| g[i] as f64);
            let mi = ADAM_BETA1 * m_slice[i] as f64 + (1.0 - ADAM_BETA1) * gi;
            let vi = ADAM_BETA2 * v_slice[i] as f64 + (1.0 - ADAM_BETA2) * gi * gi;
            m_slice[i] = mi as f32;
            v_slice[i] = vi as f32;
            let update = (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
            let pi = p_slice[i] as f64;
            p_slice[i] = (pi - lr_t * update - lr_t * weight_decay * pi) as f32;
        }
    }
    Ok(())
}

/// Training loss for one batch, dispatched on the architecture.
pub fn batch_loss(
    tape: &mut Tape<f32>,
    model_cfg: &ModelConfig,
    out: crate::models::ModelOutput,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<LossValue<f32>, LossError> {
    let alpha = cfg.alpha;
    let smoothing = cfg.label_smoothing;
    match model_cfg {
        ModelConfig::Bilstm(_) => bilstm_loss(
            tape,
            out.logits_main,
            out.embeddings.expect("bilstm emits embeddings"),
            &batch.labels,
            &batch.mask,
            alpha,
            smoothing,
        ),
        ModelConfig::Xsa(_) => xsa_loss(
            tape,
            out.logits_main,
            out.logits_aux,
            &batch.labels,
            &batch.mask,
            alpha,
            smoothing,
        ),
        ModelConfig::EncoderHead(_) => {
            let total =
                ce_label_smoothing(tape, out.logits_main, &batch.labels, &batch.mask, smoothing)?;
            let mut components = BTreeMap::new();
            components.insert("ce", tape.scalar_value(total));
            Ok(LossValue { total, components })
        }
    }
}

/// One metric-log row, written per epoch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_ger: f64,
    pub dev_mer: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,lr,train_loss,dev_ger,dev_mer\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.step, r.lr, r.train_loss, r.dev_ger, r.dev_mer
            ));
        }
        out
    }
}

/// Serializable training state between batches.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub params: ParamSet<f32>,
    pub opt: AdamState,
    /// Epoch of the next batch to run.
    pub epoch: usize,
    /// Index of the next batch within that epoch.
    pub batch_in_epoch: usize,
    pub log: TrainLog,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    opt_step: u64,
    epoch: usize,
    batch_in_epoch: usize,
    log: TrainLog,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let meta = serde_json::to_vec(&CheckpointMeta {
        model_cfg: ckpt.model_cfg.clone(),
        train_cfg: ckpt.train_cfg.clone(),
        opt_step: ckpt.opt.step,
        epoch: ckpt.epoch,
        batch_in_epoch: ckpt.batch_in_epoch,
        log: ckpt.log.clone(),
    })?;

    let mut body = Vec::new();
    body.write_u32::<LittleEndian>(meta.len() as u32)?;
    body.extend_from_slice(&meta);
    let named: Vec<(String, &ArrayD<f32>)> = ckpt
        .params
        .tensors
        .iter()
        .map(|(n, t)| (format!("param.{n}"), t))
        .chain(ckpt.opt.m.iter().map(|(n, t)| (format!("adam.m.{n}"), t)))
        .chain(ckpt.opt.v.iter().map(|(n, t)| (format!("adam.v.{n}"), t)))
        .collect();
    body.write_u32::<LittleEndian>(named.len() as u32)?;
    for (name, tensor) in named {
        body.write_u32::<LittleEndian>(name.len() as u32)?;
        body.extend_from_slice(name.as_bytes());
        body.write_u32::<LittleEndian>(tensor.ndim() as u32)?;
        for &d in tensor.shape() {
            body.write_u32::<LittleEndian>(d as u32)?;
        }
        for &x in tensor.iter() {
            body.write_f32::<LittleEndian>(x)?;
        }
    }

    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(CKPT_VERSION)?;
    w.write_u32::<LittleEndian>(crc32fast::hash(&body))?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let corrupt = |message: &str| TrainError::CorruptFile {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
    if &magic != CKPT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated header"))?;
    if version != CKPT_VERSION {
        return Err(TrainError::VersionMismatch {
            found: version,
            expected: CKPT_VERSION,
        });
    }
    let crc = r.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated header"))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if crc32fast::hash(&body) != crc {
        return Err(corrupt("checksum mismatch"));
    }

    let mut c = std::io::Cursor::new(body);
    let meta_len = c.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated meta"))? as usize;
    let mut meta = vec![0u8; meta_len];
    c.read_exact(&mut meta).map_err(|_| corrupt("truncated meta"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta)?;

    let count = c.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated table"))?;
    let mut params = ParamSet::new();
    let mut opt = AdamState {
        step: meta.opt_step,
        ..AdamState::default()
    };
    for _ in 0..count {
        let name_len = c.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated table"))? as usize;
        let mut name = vec![0u8; name_len];
        c.read_exact(&mut name).map_err(|_| corrupt("truncated table"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("non-utf8 tensor name"))?;
        let rank = c.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated table"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated table"))? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(c.read_f32::<LittleEndian>().map_err(|_| corrupt("truncated tensor data"))?);
        }
        let tensor = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|_| corrupt("bad tensor shape"))?;
        if let Some(rest) = name.strip_prefix("param.") {
            params.insert(rest, tensor);
        } else if let Some(rest) = name.strip_prefix("adam.m.") {
            opt.m.insert(rest.to_string(), tensor);
        } else if let Some(rest) = name.strip_prefix("adam.v.") {
            opt.v.insert(rest.to_string(), tensor);
        } else {
            return Err(corrupt(&format!("unknown tensor {name}")));
        }
    }
    Ok(Checkpoint {
        model_cfg: meta.model_cfg,
        train_cfg: meta.train_cfg,
        params,
        opt,
        epoch: meta.epoch,
        batch_in_epoch: meta.batch_in_epoch,
        log: meta.log,
    })
}

/// Incremental trainer; [`train`] drives it epoch by epoch.
pub struct Trainer {
    pub model_cfg: ModelConfig,
    /// Resolved config: `decay_gamma` is always concrete here.
    pub cfg: TrainConfig,
    pub params: ParamSet<f32>,
    pub opt: AdamState,
    pub epoch: usize,
    pub batch_in_epoch: usize,
    pub log: TrainLog,
    train_set: Dataset,
    dev_set: Dataset,
    accum: BTreeMap<String, ArrayD<f32>>,
    accum_count: usize,
    steps_per_epoch: u64,
}

impl Trainer {
    pub fn new(
        model_cfg: &ModelConfig,
        manifest: &Manifest,
        cfg: &TrainConfig,
        init: ParamSet<f32>,
        mel: &MelConfig,
    ) -> Result<Trainer, TrainError> {
        if model_cfg.num_classes() != cfg.task.num_classes() {
            return Err(TrainError::ClassCountMismatch {
                model: model_cfg.num_classes(),
                task: cfg.task.num_classes(),
            });
        }
        let filtered = manifest.filter_training(cfg.task);
        let train_set = load_dataset(model_cfg, &filtered, Split::Train, cfg.task, mel)?;
        let dev_set = load_dataset(model_cfg, &filtered, Split::Dev, cfg.task, mel)?;

        let mut cfg = cfg.clone();
        let batches_per_epoch = train_set.items.len().div_ceil(cfg.batch_size) as u64;
        let steps_per_epoch = batches_per_epoch.div_ceil(cfg.grad_accum as u64);
        if cfg.decay_gamma <= 0.0 {
            cfg.decay_gamma =
                anchored_gamma(steps_per_epoch * cfg.epochs as u64, cfg.warmup_steps);
        }
        Ok(Trainer {
            model_cfg: model_cfg.clone(),
            cfg,
            params: init,
            opt: AdamState::default(),
            epoch: 0,
            batch_in_epoch: 0,
            log: TrainLog::default(),
            train_set,
            dev_set,
            accum: BTreeMap::new(),
            accum_count: 0,
            steps_per_epoch,
        })
    }

    pub fn resume(
        ckpt: Checkpoint,
        manifest: &Manifest,
        mel: &MelConfig,
    ) -> Result<Trainer, TrainError> {
        let mut t = Trainer::new(
            &ckpt.model_cfg,
            manifest,
            &ckpt.train_cfg,
            ckpt.params,
            mel,
        )?;
        t.opt = ckpt.opt;
        t.epoch = ckpt.epoch;
        t.batch_in_epoch = ckpt.batch_in_epoch;
        t.log = ckpt.log;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        assert_eq!(
            self.accum_count, 0,
            "checkpoint only at optimizer-step boundaries"
        );
        Checkpoint {
            model_cfg: self.model_cfg.clone(),
            train_cfg: self.cfg.clone(),
            params: self.params.clone(),
            opt: self.opt.clone(),
            epoch: self.epoch,
            batch_in_epoch: self.batch_in_epoch,
            log: self.log.clone(),
        }
    }

    /// Forward/backward on one micro-batch; steps the optimizer every
    /// `grad_accum` calls. Returns the unscaled batch loss.
    fn micro_step(&mut self, batch: &Batch, batch_index: usize) -> Result<f64, TrainError> {
        let mut tape: Tape<f32> = Tape::new();
        let vars = self.params.register(&mut tape);
        let input = tape.constant(batch.features.clone());
        let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.cfg.seed ^ 0x5eed_d807,
            (self.epoch as u64) << 32 | batch_index as u64,
        ));
        let out = self.model_cfg.forward(
            &mut tape,
            &vars,
            input,
            &batch.in_lengths,
            true,
            &mut drop_rng,
        )?;
        let lv = batch_loss(&mut tape, &self.model_cfg, out, batch, &self.cfg)?;
        let loss = tape.scalar_value(lv.total) as f64;
        if !loss.is_finite() {
            return Err(TrainError::DivergedLoss {
                step: self.opt.step,
                loss,
            });
        }
        let scaled = tape.scale(lv.total, 1.0 / self.cfg.grad_accum as f32);
        let grads = tape.backward(scaled);
        for (name, var) in &vars {
            if let Some(g) = grads.get(*var) {
                match self.accum.get_mut(name) {
                    Some(acc) => *acc += g,
                    None => {
                        self.accum
                            .insert(name.clone(), g.as_standard_layout().to_owned());
                    }
                }
            }
        }
        self.accum_count += 1;
        if self.accum_count == self.cfg.grad_accum {
            self.apply_step()?;
        }
        Ok(loss)
    }

    fn apply_step(&mut self) -> Result<(), TrainError> {
        let lr_t = lr_at(self.opt.step + 1, &self.cfg);
        let grads = std::mem::take(&mut self.accum);
        self.accum_count = 0;
        adamw_step(
            &mut self.params,
            &grads,
            &mut self.opt,
            lr_t,
            self.cfg.weight_decay,
        )
    }

    /// Run at most `max` batches of the current epoch without closing it.
    /// Returns the per-batch losses.
    pub fn run_batches(&mut self, max: usize) -> Result<Vec<f64>, TrainError> {
        let plan = make_batches(
            &self.train_set,
            self.cfg.batch_size,
            self.cfg.seed,
            self.epoch,
        )?;
        let mut losses = Vec::new();
        while self.batch_in_epoch < plan.len() && losses.len() < max {
            let idx = self.batch_in_epoch;
            let batch = assemble_batch(&self.train_set, &plan[idx]);
            losses.push(self.micro_step(&batch, idx)?);
            self.batch_in_epoch += 1;
        }
        Ok(losses)
    }

    /// Run the remainder of the current epoch, then score the dev split and
    /// append a log row. Returns that row.
    pub fn run_epoch(&mut self) -> Result<LogRow, TrainError> {
        let losses = self.run_batches(usize::MAX)?;
        if self.accum_count > 0 {
            // leftover micro-batches at the end of the epoch
            self.apply_step()?;
        }
        let (dev_ger, dev_mer) = self.dev_scores()?;
        let row = LogRow {
            epoch: self.epoch,
            step: self.opt.step,
            lr: lr_at(self.opt.step.max(1), &self.cfg),
            train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            dev_ger,
            dev_mer,
        };
        self.log.rows.push(row.clone());
        self.epoch += 1;
        self.batch_in_epoch = 0;
        Ok(row)
    }

    /// GER/MER over the dev split with the current parameters.
    pub fn dev_scores(&self) -> Result<(f64, f64), TrainError> {
        score_dataset(&self.model_cfg, &self.params, &self.dev_set).map_err(TrainError::from)
    }

    pub fn total_scheduled_steps(&self) -> u64 {
        self.steps_per_epoch * self.cfg.epochs as u64
    }
}

/// Batched forward-only scoring of a cached dataset.
pub fn score_dataset(
    model_cfg: &ModelConfig,
    params: &ParamSet<f32>,
    dataset: &Dataset,
) -> Result<(f64, f64), EvalError> {
    let mut scores = Vec::new();
    let mut order: Vec<usize> = (0..dataset.items.len()).collect();
    order.sort_by_key(|&i| dataset.items[i].features.nrows());
    for group in order.chunks(16) {
        let batch = assemble_batch(dataset, group);
        let mut tape: Tape<f32> = Tape::new();
        let vars = params.register(&mut tape);
        let input = tape.constant(batch.features.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model_cfg.forward(&mut tape, &vars, input, &batch.in_lengths, false, &mut rng)?;
        let logits = tape.value(out.logits_main);
        let c = model_cfg.num_classes();
        for (j, &item_idx) in group.iter().enumerate() {
            let item = &dataset.items[item_idx];
            let preds: Vec<usize> = (0..item.labels.len())
                .map(|s| {
                    let row: Vec<f32> = (0..c).map(|k| logits[[s, j, k]]).collect();
                    argmax(&row)
                })
                .collect();
            let mask = vec![true; preds.len()];
            let (errors, valid) = count_errors(&preds, &item.labels, &mask)?;
            scores.push(UtteranceScore {
                utt_id: item.utt_id.clone(),
                error_rate: errors as f64 / valid as f64,
                errors,
                valid,
            });
        }
    }
    aggregate(&scores)
}

/// Outcome of a full run: best-dev parameters plus the metric log.
pub struct TrainOutcome {
    pub best_params: ParamSet<f32>,
    pub best_dev_ger: f64,
    pub final_state: Checkpoint,
    pub log: TrainLog,
}

/// Full training run; best parameters are selected by dev GER.
pub fn train(
    model_cfg: &ModelConfig,
    manifest: &Manifest,
    cfg: &TrainConfig,
    init: Option<ParamSet<f32>>,
    mel: &MelConfig,
) -> Result<TrainOutcome, TrainError> {
    let init = init.unwrap_or_else(|| model_cfg.init_params(cfg.seed));
    let mut trainer = Trainer::new(model_cfg, manifest, cfg, init, mel)?;
    let mut best_params = trainer.params.clone();
    let mut best_dev_ger = f64::INFINITY;
    for _ in trainer.epoch..cfg.epochs {
        let row = trainer.run_epoch()?;
        if row.dev_ger < best_dev_ger {
            best_dev_ger = row.dev_ger;
            best_params = trainer.params.clone();
        }
        if cfg.early_stop_dev_ger > 0.0 && row.dev_ger < cfg.early_stop_dev_ger {
            break;
        }
    }
    let log = trainer.log.clone();
    Ok(TrainOutcome {
        best_params,
        best_dev_ger,
        final_state: trainer.checkpoint(),
        log,
    })
}
