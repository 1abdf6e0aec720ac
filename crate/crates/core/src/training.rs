//! Optimization and the two training stages.
//!
//! Pre-training reconstructs masked windows with MSE loss; fine-tuning
//! trains a classifier head (encoder frozen by default) with BCE loss and
//! selects the best epoch by validation AUC. AdamW with decoupled weight
//! decay and a cosine learning-rate schedule drive both stages. Checkpoints
//! are bit-exact: save → load → save produces identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::data::{random_crops, sliding_windows, CropSample, LoadedSubject};
use crate::evaluation::auc;
use crate::masking::{apply_mask, make_mask, sample_ratio, MaskSpec, MaskStrategy};
use crate::matrix::Matrix;
use crate::model::{
    classify, encoder_forward, reconstruct, BoundModel, Model, ModelConfig, Trainable,
};
use crate::rng::Rng;
use crate::{Error, Result};

// ── AdamW ──────────────────────────────────────────────────────────────

/// Decoupled-weight-decay Adam. Moment buffers parallel the ParamSet order.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamWState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamWState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_model(model: &Model) -> Self {
        let sizes: Vec<usize> = model.params.tensors().iter().map(|t| t.data.len()).collect();
        Self::new(&sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One AdamW update on a single parameter array:
/// m ← β1·m + (1−β1)·g, v ← β2·v + (1−β2)·g², bias-corrected m̂ and v̂,
/// θ ← θ − lr·(m̂/(√v̂+eps) + wd·θ).
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    wd: f64,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[i]);
    }
}

/// Apply one optimizer step to every parameter that received a gradient.
/// Parameters without a gradient (frozen, or unreachable) are untouched.
pub fn adamw_step(
    model: &mut Model,
    grads: &[Option<Vec<f64>>],
    state: &mut AdamWState,
    lr: f64,
    wd: f64,
) -> Result<()> {
    if grads.len() != model.params.tensors().len() {
        return Err(Error::Shape(format!(
            "adamw_step: {} gradients for {} parameters",
            grads.len(),
            model.params.tensors().len()
        )));
    }
    state.t += 1;
    let (beta1, beta2, eps, t) = (state.beta1, state.beta2, state.eps, state.t);
    for (i, tensor) in model.params.tensors_mut().iter_mut().enumerate() {
        let Some(grad) = &grads[i] else { continue };
        if grad.len() != tensor.data.len() {
            return Err(Error::Shape(format!(
                "adamw_step: gradient len {} for `{}` len {}",
                grad.len(),
                tensor.name,
                tensor.data.len()
            )));
        }
        adamw_update(
            &mut tensor.data,
            grad,
            &mut state.m[i],
            &mut state.v[i],
            t,
            beta1,
            beta2,
            eps,
            lr,
            wd,
        );
    }
    Ok(())
}

/// Cosine schedule without warmup: lr0·½(1+cos(π·step/total)), clamped to 0
/// past `total`.
pub fn cosine_lr(step: u64, total: u64, lr0: f64) -> f64 {
    debug_assert!(total >= 1);
    if step >= total {
        return 0.0;
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

// ── Losses ─────────────────────────────────────────────────────────────

/// Mean squared error over all cells, or over masked cells only when a mask
/// restriction is supplied.
pub fn mse_loss(
    tape: &mut Tape,
    pred: TensorId,
    target: &Matrix,
    masked_only: Option<&MaskSpec>,
) -> Result<TensorId> {
    if tape.shape(pred) != [target.rows(), target.cols()] {
        return Err(Error::Shape(format!(
            "mse_loss: prediction {:?} vs target [{}, {}]",
            tape.shape(pred),
            target.rows(),
            target.cols()
        )));
    }
    let target_id = tape.leaf_matrix(target, false);
    let diff = tape.sub(pred, target_id)?;
    let sq = tape.mul(diff, diff)?;
    match masked_only {
        None => Ok(tape.mean_all(sq)),
        Some(spec) => {
            let count = spec.masked_count();
            if count == 0 {
                return Err(Error::Param("masked-only MSE with an empty mask".into()));
            }
            let w = tape.leaf(spec.weights(), vec![spec.t(), spec.r()], false)?;
            let weighted = tape.mul(sq, w)?;
            let s = tape.sum_all(weighted);
            Ok(tape.affine(s, 1.0 / count as f64, 0.0))
        }
    }
}

/// Numeric MSE for evaluation paths that never need gradients.
pub fn mse_value(pred: &Matrix, target: &Matrix, masked_only: Option<&MaskSpec>) -> Result<f64> {
    if (pred.rows(), pred.cols()) != (target.rows(), target.cols()) {
        return Err(Error::Shape(format!(
            "mse_value: [{}, {}] vs [{}, {}]",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    match masked_only {
        None => {
            let n = pred.data().len() as f64;
            Ok(pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n)
        }
        Some(spec) => {
            let count = spec.masked_count();
            if count == 0 {
                return Err(Error::Param("masked-only MSE with an empty mask".into()));
            }
            let mut s = 0.0;
            for time in 0..pred.rows() {
                for roi in 0..pred.cols() {
                    if spec.is_masked(time, roi) {
                        let d = pred.get(time, roi) - target.get(time, roi);
                        s += d * d;
                    }
                }
            }
            Ok(s / count as f64)
        }
    }
}

pub const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of a probability tensor (shape [1]) against a
/// binary label. The probability is clamped to [1e-12, 1-1e-12] first.
pub fn bce_loss(tape: &mut Tape, p: TensorId, y: u8) -> Result<TensorId> {
    if tape.len(p) != 1 {
        return Err(Error::Shape(format!("bce_loss: probability shape {:?}", tape.shape(p))));
    }
    let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let term = if y == 1 {
        tape.ln(pc)
    } else {
        let q = tape.affine(pc, -1.0, 1.0);
        tape.ln(q)
    };
    Ok(tape.affine(term, -1.0, 0.0))
}

pub fn bce_value(p: f64, y: u8) -> f64 {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -pc.ln()
    } else {
        -(1.0 - pc).ln()
    }
}

// ── Configs ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub strategy: MaskStrategy,
    pub ratio_set: Vec<f64>,
    pub crops_per_subject: usize,
    pub window: usize,
    /// Compute the reconstruction loss on masked cells only.
    pub loss_on_masked_only: bool,
    /// Emit a `step,lr,loss` log row every this many steps.
    pub log_interval: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 50_000,
            batch: 64,
            lr0: 1e-4,
            weight_decay: 1e-5,
            dropout: 0.1,
            strategy: MaskStrategy::MaskRoi,
            ratio_set: vec![0.25, 0.5],
            crops_per_subject: 10,
            window: 64,
            loss_on_masked_only: false,
            log_interval: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub batch: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    /// Early-stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub freeze_encoder: bool,
    pub crops_per_subject: usize,
    pub window: usize,
    /// Sliding-window stride for validation-time subject prediction.
    pub stride: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            batch: 16,
            lr0: 1e-4,
            weight_decay: 1e-3,
            dropout: 0.1,
            max_epochs: 100,
            patience: 20,
            freeze_encoder: true,
            crops_per_subject: 10,
            window: 64,
            stride: 32,
        }
    }
}

// ── Checkpoints ────────────────────────────────────────────────────────

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ROIMAE01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub seed: u64,
    pub strategy: Option<MaskStrategy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub model: Model,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in f64 units from the start of the data section.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(model: Model, meta: CheckpointMeta) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, model, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut offset = 0usize;
        for t in self.model.params.tensors() {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.data.len(),
            });
            offset += t.data.len();
        }
        let header = CheckpointHeader {
            version: self.version,
            config: self.model.cfg.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header_bytes = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(16 + header_bytes.len() + offset * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for t in self.model.params.tensors() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data_start = 16 + header_len;
        if bytes.len() < data_start {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} != supported {CHECKPOINT_VERSION}",
                header.version
            )));
        }
        let data = &bytes[data_start..];
        let total: usize = header.tensors.iter().map(|t| t.len).sum();
        if data.len() != total * 8 {
            return Err(Error::Format(format!(
                "checkpoint data section {} bytes, directory expects {}",
                data.len(),
                total * 8
            )));
        }
        let mut model = Model { cfg: header.config, params: Default::default() };
        model.cfg.validate()?;
        for e in &header.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Format(format!(
                    "tensor `{}` shape {:?} inconsistent with len {}",
                    e.name, e.shape, e.len
                )));
            }
            let mut values = Vec::with_capacity(e.len);
            for i in 0..e.len {
                let at = (e.offset + i) * 8;
                values.push(f64::from_le_bytes(data[at..at + 8].try_into().unwrap()));
            }
            model.params.push(e.name.clone(), e.shape.clone(), values);
        }
        verify_layout(&model)?;
        Ok(Checkpoint { version: header.version, model, meta: header.meta })
    }

    /// The loaded ROI width must match the dataset it is applied to.
    pub fn check_num_rois(&self, data_r: usize) -> Result<()> {
        if self.model.cfg.num_rois != data_r {
            return Err(Error::Format(format!(
                "checkpoint has {} ROIs, dataset has {data_r}",
                self.model.cfg.num_rois
            )));
        }
        Ok(())
    }
}

/// Every encoder tensor named by the config must be present with the shape
/// the config implies (binding performs the name lookups; here we check the
/// cheap global invariant).
fn verify_layout(model: &Model) -> Result<()> {
    let expected = model.cfg.encoder_param_count();
    let actual: usize = model.encoder_params().map(|t| t.data.len()).sum();
    if actual != expected {
        return Err(Error::Format(format!(
            "encoder parameters hold {actual} values, config implies {expected}"
        )));
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

// ── Pre-training ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossLogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossLogRow>,
}

/// Masked-reconstruction pre-training. Runs exactly `cfg.steps` optimizer
/// steps; the crop pool is regenerated after each full pass (one "epoch"),
/// the masking ratio is drawn per sample, and the loss is full-sequence MSE
/// unless `loss_on_masked_only` is set.
pub fn pretrain(
    subjects: &[LoadedSubject],
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    seed: u64,
    resume: Option<Checkpoint>,
) -> Result<PretrainOutcome> {
    if subjects.is_empty() {
        return Err(Error::Data("pre-training dataset is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("pretrain batch must be >= 1".into()));
    }
    let mut model_cfg = model_cfg.clone();
    model_cfg.dropout_p = cfg.dropout;
    model_cfg.window_len = cfg.window;

    let root = Rng::new(seed);
    let (mut model, start_step) = match resume {
        Some(ckpt) => {
            if ckpt.model.cfg != model_cfg {
                return Err(Error::Config(
                    "resume checkpoint was trained with a different model config".into(),
                ));
            }
            let step = ckpt.meta.step;
            (ckpt.model, step)
        }
        None => (Model::init_pretrain(model_cfg.clone(), &mut root.derive_str("init"))?, 0),
    };

    let mut state = AdamWState::for_model(&model);
    let mut crop_rng = root.derive_str("crops");
    let mut mask_rng = root.derive_str("masks");
    let mut drop_rng = root.derive_str("dropout");
    let mut shuffle_rng = root.derive_str("shuffle");
    let mut log = Vec::new();
    let mut step = start_step;

    'training: while step < cfg.steps {
        // Re-crop once per pass over the pool.
        let mut pool: Vec<CropSample> = Vec::with_capacity(subjects.len() * cfg.crops_per_subject);
        for s in subjects {
            pool.extend(random_crops(s, cfg.crops_per_subject, cfg.window, &mut crop_rng)?);
        }
        shuffle_rng.shuffle(&mut pool);

        for batch in pool.chunks(cfg.batch) {
            if step >= cfg.steps {
                break 'training;
            }
            let lr = cosine_lr(step, cfg.steps, cfg.lr0);
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &model, Trainable::All)?;
            let recon_head = bound.recon.expect("pretrain model has a recon head");
            let mut batch_loss: Option<TensorId> = None;
            for sample in batch {
                let ratio = sample_ratio(&mut mask_rng, &cfg.ratio_set)?;
                let spec = make_mask(
                    cfg.strategy,
                    cfg.window,
                    model_cfg.num_rois,
                    ratio,
                    &mut mask_rng,
                )?;
                let masked = apply_mask(&sample.window, &spec)?;
                let z = encoder_forward(&mut tape, &masked, &bound, &model_cfg, true, &mut drop_rng)?;
                let pred = reconstruct(&mut tape, z, &recon_head)?;
                let restriction = cfg.loss_on_masked_only.then_some(&spec);
                let loss = mse_loss(&mut tape, pred, &sample.window, restriction)?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let mean_loss = tape.affine(total, 1.0 / batch.len() as f64, 0.0);
            tape.backward(mean_loss)?;
            let grads: Vec<Option<Vec<f64>>> =
                (0..bound.ids.len()).map(|i| bound.grad(&tape, i).map(<[f64]>::to_vec)).collect();
            adamw_step(&mut model, &grads, &mut state, lr, cfg.weight_decay)?;
            step += 1;
            if step % cfg.log_interval == 0 || step == cfg.steps {
                log.push(LossLogRow { step, lr, loss: tape.scalar_value(mean_loss) });
            }
        }
    }

    let meta = CheckpointMeta { step, seed, strategy: Some(cfg.strategy) };
    Ok(PretrainOutcome { checkpoint: Checkpoint::new(model, meta), log })
}

// ── Fine-tuning ────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub model: Model,
    /// Validation metric (AUC when defined) of the selected epoch.
    pub best_val_metric: f64,
    pub epochs_run: usize,
}

/// Mean window probability of each subject under eval mode.
fn subject_scores(model: &Model, subjects: &[LoadedSubject], window: usize, stride: usize) -> Result<Vec<f64>> {
    subjects
        .iter()
        .map(|s| {
            let windows = sliding_windows(&s.series, window, stride)?;
            let mut acc = 0.0;
            for w in &windows {
                acc += crate::model::predict_window(model, w)?;
            }
            Ok(acc / windows.len() as f64)
        })
        .collect()
}

/// Validation metric: AUC when both classes are present, otherwise accuracy
/// at the 0.5 threshold (degenerate single-class validation sets).
fn validation_metric(scores: &[f64], labels: &[u8]) -> f64 {
    match auc(scores, labels) {
        Ok(result) => result.auc,
        Err(_) => {
            let correct = scores
                .iter()
                .zip(labels)
                .filter(|(s, &l)| (**s > 0.5) == (l == 1))
                .count();
            correct as f64 / scores.len().max(1) as f64
        }
    }
}

/// Train the classifier head (and the encoder too unless frozen) with BCE,
/// selecting the epoch with the best validation metric.
fn fit_classifier(
    mut model: Model,
    train: &[LoadedSubject],
    val: &[LoadedSubject],
    cfg: &FinetuneConfig,
    rng: &Rng,
) -> Result<FinetuneOutcome> {
    if train.is_empty() {
        return Err(Error::Data("fine-tuning training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("fine-tuning validation set is empty".into()));
    }
    model.cfg.dropout_p = cfg.dropout;
    model.cfg.window_len = cfg.window;
    let trainable = if cfg.freeze_encoder { Trainable::HeadsOnly } else { Trainable::All };
    let mut state = AdamWState::for_model(&model);
    let mut crop_rng = rng.derive_str("crops");
    let mut drop_rng = rng.derive_str("dropout");
    let mut shuffle_rng = rng.derive_str("shuffle");
    let val_labels: Vec<u8> = val.iter().map(|s| s.record.label).collect();

    let total_steps = {
        let per_epoch = (train.len() * cfg.crops_per_subject).div_ceil(cfg.batch) as u64;
        (cfg.max_epochs as u64 * per_epoch).max(1)
    };

    let mut best = model.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut epochs_since_best = 0usize;
    let mut epochs_run = 0usize;
    let mut step = 0u64;

    for _epoch in 0..cfg.max_epochs {
        let mut pool: Vec<CropSample> = Vec::with_capacity(train.len() * cfg.crops_per_subject);
        for s in train {
            pool.extend(random_crops(s, cfg.crops_per_subject, cfg.window, &mut crop_rng)?);
        }
        shuffle_rng.shuffle(&mut pool);

        for batch in pool.chunks(cfg.batch) {
            let lr = cosine_lr(step, total_steps, cfg.lr0);
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &model, trainable)?;
            let head = bound.clf.ok_or_else(|| Error::Format("model has no classifier head".into()))?;
            let mut batch_loss: Option<TensorId> = None;
            for sample in batch {
                let z = encoder_forward(&mut tape, &sample.window, &bound, &model.cfg, true, &mut drop_rng)?;
                let p = classify(&mut tape, z, &head)?;
                let loss = bce_loss(&mut tape, p, sample.label)?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let mean_loss = tape.affine(total, 1.0 / batch.len() as f64, 0.0);
            tape.backward(mean_loss)?;
            let grads: Vec<Option<Vec<f64>>> =
                (0..bound.ids.len()).map(|i| bound.grad(&tape, i).map(<[f64]>::to_vec)).collect();
            adamw_step(&mut model, &grads, &mut state, lr, cfg.weight_decay)?;
            step += 1;
        }
        epochs_run += 1;

        let scores = subject_scores(&model, val, cfg.window, cfg.stride)?;
        let metric = validation_metric(&scores, &val_labels);
        if metric > best_metric {
            best_metric = metric;
            best = model.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }
    }

    if best_metric == f64::NEG_INFINITY {
        // max_epochs = 0: return the initialized model.
        best_metric = f64::NAN;
    }
    Ok(FinetuneOutcome { model: best, best_val_metric: best_metric, epochs_run })
}

/// Fine-tune from a pre-trained checkpoint: the encoder is copied over, a
/// fresh classifier head is attached, and (with `freeze_encoder`, the
/// default) only the head's parameters change.
pub fn finetune(
    ckpt: &Checkpoint,
    train: &[LoadedSubject],
    val: &[LoadedSubject],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    if let Some(s) = train.first() {
        ckpt.check_num_rois(s.series.num_rois())?;
    }
    let root = Rng::new(seed);
    let model = ckpt.model.with_fresh_classifier(&mut root.derive_str("clf-init"));
    fit_classifier(model, train, val, cfg, &root)
}

/// Train a classifier from random initialization (no pre-training). The
/// encoder is always trainable here regardless of `cfg.freeze_encoder`.
pub fn train_scratch(
    model_cfg: &ModelConfig,
    train: &[LoadedSubject],
    val: &[LoadedSubject],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    let root = Rng::new(seed);
    let model = Model::init_classifier(model_cfg.clone(), &mut root.derive_str("init"))?;
    let cfg = FinetuneConfig { freeze_encoder: false, ..cfg.clone() };
    fit_classifier(model, train, val, &cfg, &root)
}
