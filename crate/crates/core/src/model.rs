//! Time-series transformer encoder with reconstruction and classification
//! heads.
//!
//! Tokens are time points: a T×R window (R ROI values per time point) is
//! linearly projected to the hidden dimension, summed with sinusoidal
//! positional encoding over the time axis, and passed through N post-norm
//! encoder layers (multi-head self-attention, position-wise feed-forward,
//! residual adds, layer norm). The reconstruction head maps each token back
//! to R values; the classification head pools token scores over time into a
//! single probability.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::{Error, Result};

fn default_ln_eps() -> f64 {
    1e-5
}

/// Architecture hyperparameters. Everything downstream (parameter layout,
/// checkpoint compatibility, forward shapes) is a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_rois: usize,
    pub window_len: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ffn_dim: usize,
    pub dropout_p: f64,
    pub recon_hidden: usize,
    pub clf_hidden: usize,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_rois: 116,
            window_len: 64,
            hidden_dim: 128,
            num_heads: 8,
            num_layers: 6,
            ffn_dim: 512,
            dropout_p: 0.1,
            recon_hidden: 128,
            clf_hidden: 64,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_rois == 0 || self.window_len == 0 {
            return Err(Error::Config("num_rois and window_len must be >= 1".into()));
        }
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        if self.ffn_dim == 0 || self.recon_hidden == 0 || self.clf_hidden == 0 {
            return Err(Error::Config("hidden sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Per-head key/value dimension d_k = d_v = d_m / h.
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn encoder_param_count(&self) -> usize {
        let d = self.hidden_dim;
        let f = self.ffn_dim;
        let per_layer = 4 * d * d + (d * f + f) + (f * d + d) + 4 * d;
        self.num_rois * d + d + self.num_layers * per_layer
    }

    pub fn recon_param_count(&self) -> usize {
        let (d, h, r) = (self.hidden_dim, self.recon_hidden, self.num_rois);
        d * h + h + h * r + r
    }

    pub fn clf_param_count(&self) -> usize {
        let (d, h) = (self.hidden_dim, self.clf_hidden);
        d * h + h + h + 1
    }
}

/// Named parameter array; the unit of checkpointing and optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of parameters. Order is the canonical layout order and
/// is part of the checkpoint contract.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(ParamTensor { name: name.into(), shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }
}

/// Encoder parameters belong to the `embed.*` / `layers.*` groups; heads are
/// `recon.*` and `clf.*`.
pub fn is_encoder_param(name: &str) -> bool {
    !name.starts_with("recon.") && !name.starts_with("clf.")
}

/// A model is a config plus its parameters; which heads are present depends
/// on the training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Vec<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect()
}

fn push_affine(params: &mut ParamSet, prefix: &str, rows: usize, cols: usize, rng: &mut Rng) {
    params.push(format!("{prefix}.w"), vec![rows, cols], glorot(rng, rows, cols));
    params.push(format!("{prefix}.b"), vec![cols], vec![0.0; cols]);
}

fn push_encoder(params: &mut ParamSet, cfg: &ModelConfig, rng: &mut Rng) {
    let d = cfg.hidden_dim;
    push_affine(params, "embed", cfg.num_rois, d, rng);
    for i in 0..cfg.num_layers {
        for proj in ["wq", "wk", "wv", "wo"] {
            params.push(format!("layers.{i}.attn.{proj}"), vec![d, d], glorot(rng, d, d));
        }
        params.push(format!("layers.{i}.ln1.g"), vec![d], vec![1.0; d]);
        params.push(format!("layers.{i}.ln1.b"), vec![d], vec![0.0; d]);
        push_affine(params, &format!("layers.{i}.ffn.l1"), d, cfg.ffn_dim, rng);
        push_affine(params, &format!("layers.{i}.ffn.l2"), cfg.ffn_dim, d, rng);
        params.push(format!("layers.{i}.ln2.g"), vec![d], vec![1.0; d]);
        params.push(format!("layers.{i}.ln2.b"), vec![d], vec![0.0; d]);
    }
}

fn push_head(params: &mut ParamSet, prefix: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut Rng) {
    push_affine(params, &format!("{prefix}.l1"), d_in, hidden, rng);
    push_affine(params, &format!("{prefix}.l2"), hidden, d_out, rng);
}

impl Model {
    /// Encoder + reconstruction head, freshly initialized.
    pub fn init_pretrain(cfg: ModelConfig, rng: &mut Rng) -> Result<Model> {
        cfg.validate()?;
        let mut params = ParamSet::default();
        push_encoder(&mut params, &cfg, rng);
        push_head(&mut params, "recon", cfg.hidden_dim, cfg.recon_hidden, cfg.num_rois, rng);
        Ok(Model { cfg, params })
    }

    /// Encoder + classification head, freshly initialized (scratch model).
    pub fn init_classifier(cfg: ModelConfig, rng: &mut Rng) -> Result<Model> {
        cfg.validate()?;
        let mut params = ParamSet::default();
        push_encoder(&mut params, &cfg, rng);
        push_head(&mut params, "clf", cfg.hidden_dim, cfg.clf_hidden, 1, rng);
        Ok(Model { cfg, params })
    }

    /// Keep the encoder, drop any existing head, attach a fresh classifier.
    pub fn with_fresh_classifier(&self, rng: &mut Rng) -> Model {
        let mut params = ParamSet::default();
        for t in self.params.tensors() {
            if is_encoder_param(&t.name) {
                params.tensors.push(t.clone());
            }
        }
        push_head(&mut params, "clf", self.cfg.hidden_dim, self.cfg.clf_hidden, 1, rng);
        Model { cfg: self.cfg.clone(), params }
    }

    pub fn has_head(&self, prefix: &str) -> bool {
        self.params.names().any(|n| n.starts_with(prefix))
    }

    /// Encoder parameters in layout order, for freeze checks.
    pub fn encoder_params(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.tensors().iter().filter(|t| is_encoder_param(&t.name))
    }
}

/// Sinusoidal positional encoding over `t` positions and `d` dimensions:
/// even dimensions get sin(pos / 10000^(k/d)), odd ones the matching cosine.
pub fn positional_encoding(t: usize, d: usize) -> Matrix {
    let mut pe = Matrix::zeros(t, d);
    for pos in 0..t {
        for k in 0..d {
            let pair = (k / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(pair as f64 / d as f64);
            pe.set(pos, k, if k % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

// ── Tape bindings ──────────────────────────────────────────────────────

/// Which parameters receive gradients when the model is bound to a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    /// Inference only.
    None,
    /// Everything (pre-training, scratch training).
    All,
    /// Heads only; the encoder stays frozen (fine-tuning).
    HeadsOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadIds {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub wq: TensorId,
    pub wk: TensorId,
    pub wv: TensorId,
    pub wo: TensorId,
    pub ln1_g: TensorId,
    pub ln1_b: TensorId,
    pub ffn_w1: TensorId,
    pub ffn_b1: TensorId,
    pub ffn_w2: TensorId,
    pub ffn_b2: TensorId,
    pub ln2_g: TensorId,
    pub ln2_b: TensorId,
}

#[derive(Debug, Clone)]
pub struct EncoderIds {
    pub w_in: TensorId,
    pub b_in: TensorId,
    pub layers: Vec<LayerIds>,
}

/// Model parameters registered as leaves on one tape, in layout order.
pub struct BoundModel {
    /// One id per ParamSet tensor, same order.
    pub ids: Vec<TensorId>,
    pub encoder: EncoderIds,
    pub recon: Option<HeadIds>,
    pub clf: Option<HeadIds>,
}

impl BoundModel {
    pub fn bind(tape: &mut Tape, model: &Model, trainable: Trainable) -> Result<BoundModel> {
        let mut ids = Vec::with_capacity(model.params.tensors().len());
        for t in model.params.tensors() {
            let rg = match trainable {
                Trainable::None => false,
                Trainable::All => true,
                Trainable::HeadsOnly => !is_encoder_param(&t.name),
            };
            ids.push(tape.leaf(t.data.clone(), t.shape.clone(), rg)?);
        }
        let find = |name: &str| -> Result<TensorId> {
            model
                .params
                .tensors()
                .iter()
                .position(|t| t.name == name)
                .map(|i| ids[i])
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
        };
        let head = |prefix: &str| -> Result<Option<HeadIds>> {
            if !model.has_head(prefix) {
                return Ok(None);
            }
            Ok(Some(HeadIds {
                w1: find(&format!("{prefix}.l1.w"))?,
                b1: find(&format!("{prefix}.l1.b"))?,
                w2: find(&format!("{prefix}.l2.w"))?,
                b2: find(&format!("{prefix}.l2.b"))?,
            }))
        };
        let mut layers = Vec::with_capacity(model.cfg.num_layers);
        for i in 0..model.cfg.num_layers {
            layers.push(LayerIds {
                wq: find(&format!("layers.{i}.attn.wq"))?,
                wk: find(&format!("layers.{i}.attn.wk"))?,
                wv: find(&format!("layers.{i}.attn.wv"))?,
                wo: find(&format!("layers.{i}.attn.wo"))?,
                ln1_g: find(&format!("layers.{i}.ln1.g"))?,
                ln1_b: find(&format!("layers.{i}.ln1.b"))?,
                ffn_w1: find(&format!("layers.{i}.ffn.l1.w"))?,
                ffn_b1: find(&format!("layers.{i}.ffn.l1.b"))?,
                ffn_w2: find(&format!("layers.{i}.ffn.l2.w"))?,
                ffn_b2: find(&format!("layers.{i}.ffn.l2.b"))?,
                ln2_g: find(&format!("layers.{i}.ln2.g"))?,
                ln2_b: find(&format!("layers.{i}.ln2.b"))?,
            });
        }
        Ok(BoundModel {
            encoder: EncoderIds { w_in: find("embed.w")?, b_in: find("embed.b")?, layers },
            recon: head("recon")?,
            clf: head("clf")?,
            ids,
        })
    }

    /// Gradient for the i-th ParamSet tensor, if any flowed.
    pub fn grad<'t>(&self, tape: &'t Tape, i: usize) -> Option<&'t [f64]> {
        tape.grad(self.ids[i])
    }
}

// ── Forward passes ─────────────────────────────────────────────────────

/// Input projection plus positional encoding: x·W_in + b_in + PE.
pub fn embed(tape: &mut Tape, x: TensorId, enc: &EncoderIds, cfg: &ModelConfig) -> Result<TensorId> {
    let shape = tape.shape(x).to_vec();
    if shape != [cfg.window_len, cfg.num_rois] {
        return Err(Error::Shape(format!(
            "embed input {shape:?}, config expects [{}, {}]",
            cfg.window_len, cfg.num_rois
        )));
    }
    let proj = tape.matmul(x, enc.w_in)?;
    let proj = tape.add_bias(proj, enc.b_in)?;
    let pe = positional_encoding(cfg.window_len, cfg.hidden_dim);
    let pe = tape.leaf_matrix(&pe, false);
    tape.add(proj, pe)
}

/// Scaled dot-product attention: softmax(Q·Kᵀ/√d_k)·V, full bidirectional.
pub fn attention(tape: &mut Tape, q: TensorId, k: TensorId, v: TensorId) -> Result<TensorId> {
    let (tq, dk) = match *tape.shape(q) {
        [a, b] => (a, b),
        ref s => return Err(Error::Shape(format!("attention Q shape {s:?}"))),
    };
    if tape.shape(k) != [tq, dk] || tape.shape(v).first() != Some(&tq) {
        return Err(Error::Shape(format!(
            "attention shapes Q {:?}, K {:?}, V {:?}",
            tape.shape(q),
            tape.shape(k),
            tape.shape(v)
        )));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.affine(scores, 1.0 / (dk as f64).sqrt(), 0.0);
    let weights = tape.softmax(scaled, 1)?;
    tape.matmul(weights, v)
}

/// Multi-head self-attention block: project, split into h heads, attend,
/// concatenate, project by W_O.
pub fn multi_head(tape: &mut Tape, x: TensorId, layer: &LayerIds, num_heads: usize) -> Result<TensorId> {
    let d_m = tape.shape(x)[1];
    let d_k = d_m / num_heads;
    let q = tape.matmul(x, layer.wq)?;
    let k = tape.matmul(x, layer.wk)?;
    let v = tape.matmul(x, layer.wv)?;
    let mut heads = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = tape.slice_cols(q, h * d_k, d_k)?;
        let kh = tape.slice_cols(k, h * d_k, d_k)?;
        let vh = tape.slice_cols(v, h * d_k, d_k)?;
        heads.push(attention(tape, qh, kh, vh)?);
    }
    let cat = tape.concat_cols(&heads)?;
    tape.matmul(cat, layer.wo)
}

fn encoder_layer(
    tape: &mut Tape,
    x: TensorId,
    layer: &LayerIds,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<TensorId> {
    let attn = multi_head(tape, x, layer, cfg.num_heads)?;
    let attn = tape.dropout(attn, cfg.dropout_p, training, rng)?;
    let x = tape.add(x, attn)?;
    let x = tape.layer_norm(x, layer.ln1_g, layer.ln1_b, cfg.ln_eps)?;

    let h = tape.matmul(x, layer.ffn_w1)?;
    let h = tape.add_bias(h, layer.ffn_b1)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, layer.ffn_w2)?;
    let h = tape.add_bias(h, layer.ffn_b2)?;
    let h = tape.dropout(h, cfg.dropout_p, training, rng)?;
    let x = tape.add(x, h)?;
    tape.layer_norm(x, layer.ln2_g, layer.ln2_b, cfg.ln_eps)
}

/// Full encoder: embed, dropout on the embedding sum, then N layers.
pub fn encoder_forward(
    tape: &mut Tape,
    x: &Matrix,
    bound: &BoundModel,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<TensorId> {
    let x = tape.leaf_matrix(x, false);
    let mut z = embed(tape, x, &bound.encoder, cfg)?;
    z = tape.dropout(z, cfg.dropout_p, training, rng)?;
    for layer in &bound.encoder.layers {
        z = encoder_layer(tape, z, layer, cfg, training, rng)?;
    }
    Ok(z)
}

/// Per-token two-layer MLP back to R outputs.
pub fn reconstruct(tape: &mut Tape, z: TensorId, head: &HeadIds) -> Result<TensorId> {
    let h = tape.matmul(z, head.w1)?;
    let h = tape.add_bias(h, head.b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, head.w2)?;
    tape.add_bias(out, head.b2)
}

/// Per-token score MLP, mean over time, sigmoid. Returns a [1] tensor whose
/// value is strictly inside (0, 1) for finite inputs.
pub fn classify(tape: &mut Tape, z: TensorId, head: &HeadIds) -> Result<TensorId> {
    let h = tape.matmul(z, head.w1)?;
    let h = tape.add_bias(h, head.b1)?;
    let h = tape.relu(h);
    let scores = tape.matmul(h, head.w2)?;
    let scores = tape.add_bias(scores, head.b2)?;
    let pooled = tape.mean_axis(scores, 0)?;
    Ok(tape.sigmoid(pooled))
}

/// Eval-mode subject-window probability for a frozen model.
pub fn predict_window(model: &Model, window: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, model, Trainable::None)?;
    let head = bound
        .clf
        .ok_or_else(|| Error::Format("model has no classifier head".into()))?;
    let mut rng = Rng::new(0); // eval mode draws nothing
    let z = encoder_forward(&mut tape, window, &bound, &model.cfg, false, &mut rng)?;
    let p = classify(&mut tape, z, &head)?;
    Ok(tape.scalar_value(p))
}

/// Eval-mode reconstruction of one (typically masked) window.
pub fn reconstruct_window(model: &Model, window: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, model, Trainable::None)?;
    let head = bound
        .recon
        .ok_or_else(|| Error::Format("model has no reconstruction head".into()))?;
    let mut rng = Rng::new(0);
    let z = encoder_forward(&mut tape, window, &bound, &model.cfg, false, &mut rng)?;
    let out = reconstruct(&mut tape, z, &head)?;
    Matrix::from_vec(window.rows(), window.cols(), tape.value(out).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            num_rois: 3,
            window_len: 4,
            hidden_dim: 4,
            num_heads: 2,
            num_layers: 1,
            ffn_dim: 8,
            dropout_p: 0.0,
            recon_hidden: 4,
            clf_hidden: 4,
            ln_eps: 1e-5,
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_cfg();
        assert!(cfg.validate().is_ok());
        cfg.num_heads = 3; // 4 % 3 != 0
        assert!(cfg.validate().is_err());
        cfg.num_heads = 2;
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn positional_encoding_reference_values() {
        let pe = positional_encoding(8, 8);
        assert_eq!(pe.get(0, 0), 0.0); // sin(0)
        assert_eq!(pe.get(0, 1), 1.0); // cos(0)
        let expected = (3.0f64 / 10000f64.powf(4.0 / 8.0)).sin();
        assert!((pe.get(3, 4) - expected).abs() < 1e-15);
        assert!((expected - 0.0299955).abs() < 1e-7);
    }

    #[test]
    fn param_count_formula_matches_enumeration() {
        for cfg in [tiny_cfg(), ModelConfig { num_layers: 3, hidden_dim: 8, num_heads: 4, ffn_dim: 16, ..tiny_cfg() }] {
            let mut rng = Rng::new(1);
            let pre = Model::init_pretrain(cfg.clone(), &mut rng).unwrap();
            let enc: usize = pre
                .params
                .tensors()
                .iter()
                .filter(|t| is_encoder_param(&t.name))
                .map(|t| t.data.len())
                .sum();
            assert_eq!(enc, cfg.encoder_param_count());
            assert_eq!(pre.params.total_len(), cfg.encoder_param_count() + cfg.recon_param_count());

            let clf = Model::init_classifier(cfg.clone(), &mut rng).unwrap();
            assert_eq!(clf.params.total_len(), cfg.encoder_param_count() + cfg.clf_param_count());
        }
    }

    #[test]
    fn embed_zero_input_gives_positional_encoding() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(2);
        let model = Model::init_pretrain(cfg.clone(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &model, Trainable::None).unwrap();
        let x = Matrix::zeros(cfg.window_len, cfg.num_rois);
        let xid = tape.leaf_matrix(&x, false);
        let z = embed(&mut tape, xid, &bound.encoder, &cfg).unwrap();
        let pe = positional_encoding(cfg.window_len, cfg.hidden_dim);
        for (a, b) in tape.value(z).iter().zip(pe.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn embed_rejects_wrong_width() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(2);
        let model = Model::init_pretrain(cfg.clone(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &model, Trainable::None).unwrap();
        let x = Matrix::zeros(cfg.window_len, cfg.num_rois + 1);
        let xid = tape.leaf_matrix(&x, false);
        assert!(embed(&mut tape, xid, &bound.encoder, &cfg).is_err());
    }

    #[test]
    fn attention_single_token_returns_value() {
        let mut tape = Tape::new();
        let q = tape.leaf(vec![0.3, -0.7], vec![1, 2], false).unwrap();
        let k = tape.leaf(vec![1.1, 0.2], vec![1, 2], false).unwrap();
        let v = tape.leaf(vec![5.0, -2.0, 3.0], vec![1, 3], false).unwrap();
        let out = attention(&mut tape, q, k, v).unwrap();
        assert_eq!(tape.value(out), &[5.0, -2.0, 3.0]);
    }

    #[test]
    fn attention_zero_query_averages_values() {
        let mut tape = Tape::new();
        let q = tape.leaf(vec![0.0; 6], vec![3, 2], false).unwrap();
        let k = tape.leaf(vec![0.5, 1.0, -1.0, 0.1, 0.7, 0.9], vec![3, 2], false).unwrap();
        let v = tape.leaf(vec![3.0, 6.0, 9.0], vec![3, 1], false).unwrap();
        let out = attention(&mut tape, q, k, v).unwrap();
        for &o in tape.value(out) {
            assert!((o - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_two_token_hand_example() {
        let mut tape = Tape::new();
        let q = tape.leaf(vec![1.0, 0.0], vec![2, 1], false).unwrap();
        let k = tape.leaf(vec![1.0, 0.0], vec![2, 1], false).unwrap();
        let v = tape.leaf(vec![1.0, 0.0], vec![2, 1], false).unwrap();
        let out = attention(&mut tape, q, k, v).unwrap();
        let e = std::f64::consts::E;
        assert!((tape.value(out)[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((tape.value(out)[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_head_equals_plain_attention() {
        let cfg = ModelConfig { num_heads: 1, ..tiny_cfg() };
        let mut rng = Rng::new(3);
        let model = Model::init_pretrain(cfg.clone(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &model, Trainable::None).unwrap();
        let layer = &bound.encoder.layers[0];
        let xdata: Vec<f64> = (0..cfg.window_len * cfg.hidden_dim)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let x = tape.leaf(xdata, vec![cfg.window_len, cfg.hidden_dim], false).unwrap();

        let mh = multi_head(&mut tape, x, layer, 1).unwrap();

        let q = tape.matmul(x, layer.wq).unwrap();
        let k = tape.matmul(x, layer.wk).unwrap();
        let v = tape.matmul(x, layer.wv).unwrap();
        let att = attention(&mut tape, q, k, v).unwrap();
        let reference = tape.matmul(att, layer.wo).unwrap();

        for (a, b) in tape.value(mh).iter().zip(tape.value(reference)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_heads_equal_independent_block_attentions() {
        let cfg = tiny_cfg(); // d_m=4, h=2 -> d_k=2
        let mut rng = Rng::new(4);
        let model = Model::init_pretrain(cfg.clone(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &model, Trainable::None).unwrap();
        let layer = &bound.encoder.layers[0];
        let xdata: Vec<f64> = (0..cfg.window_len * cfg.hidden_dim)
            .map(|i| ((i * 23 % 13) as f64 - 6.0) / 4.0)
            .collect();
        let x = tape.leaf(xdata, vec![cfg.window_len, cfg.hidden_dim], false).unwrap();

        let mh = multi_head(&mut tape, x, layer, 2).unwrap();

        // Manual block computation: each head works on its own column slice
        // of the projected Q, K, V.
        let q = tape.matmul(x, layer.wq).unwrap();
        let k = tape.matmul(x, layer.wk).unwrap();
        let v = tape.matmul(x, layer.wv).unwrap();
        let mut blocks = Vec::new();
        for h in 0..2 {
            let qh = tape.slice_cols(q, h * 2, 2).unwrap();
            let kh = tape.slice_cols(k, h * 2, 2).unwrap();
            let vh = tape.slice_cols(v, h * 2, 2).unwrap();
            blocks.push(attention(&mut tape, qh, kh, vh).unwrap());
        }
        let cat = tape.concat_cols(&blocks).unwrap();
        let reference = tape.matmul(cat, layer.wo).unwrap();

        assert_eq!(tape.shape(mh), &[cfg.window_len, cfg.hidden_dim]);
        for (a, b) in tape.value(mh).iter().zip(tape.value(reference)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_zero_layers_is_embedding() {
        let cfg = ModelConfig { num_layers: 0, ..tiny_cfg() };
        let mut rng = Rng::new(5);
        let model = Model::init_pretrain(cfg.clone(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &model, Trainable::None).unwrap();
        let x = Matrix::zeros(cfg.window_len, cfg.num_rois);
        let z = encoder_forward(&mut tape, &x, &bound, &cfg, false, &mut Rng::new(0)).unwrap();
        let xid = tape.leaf_matrix(&x, false);
        let e = embed(&mut tape, xid, &bound.encoder, &cfg).unwrap();
        assert_eq!(tape.value(z), tape.value(e));
    }

    #[test]
    fn encoder_eval_mode_is_deterministic_and_finite() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(6);
        let model = Model::init_pretrain(cfg.clone(), &mut rng).unwrap();
        let mut data_rng = Rng::new(99);
        let mut x = Matrix::zeros(cfg.window_len, cfg.num_rois);
        for v in x.data_mut() {
            *v = data_rng.uniform(-3.0, 3.0);
        }
        let run = |model: &Model| {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, model, Trainable::None).unwrap();
            let z = encoder_forward(&mut tape, &x, &bound, &cfg, false, &mut Rng::new(1)).unwrap();
            tape.value(z).to_vec()
        };
        let a = run(&model);
        let b = run(&model);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reconstruct_zero_head_is_zero_and_shaped() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(7);
        let mut model = Model::init_pretrain(cfg.clone(), &mut rng).unwrap();
        for t in model.params.tensors_mut() {
            if t.name.starts_with("recon.") {
                t.data.fill(0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &model, Trainable::None).unwrap();
        let z = tape.leaf(vec![0.5; cfg.window_len * cfg.hidden_dim], vec![cfg.window_len, cfg.hidden_dim], false).unwrap();
        let out = reconstruct(&mut tape, z, &bound.recon.unwrap()).unwrap();
        assert_eq!(tape.shape(out), &[cfg.window_len, cfg.num_rois]);
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_hand_affine_chain() {
        // 1 token, d_m=2, hidden=2, R=1 with hand-set weights:
        // h = relu([1,2]·[[1,0],[0,1]] + [0.5,-3]) = relu([1.5,-1]) = [1.5,0]
        // out = [1.5,0]·[[2],[7]] + [0.25] = 3.25
        let mut tape = Tape::new();
        let z = tape.leaf(vec![1.0, 2.0], vec![1, 2], false).unwrap();
        let w1 = tape.leaf(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2], false).unwrap();
        let b1 = tape.leaf(vec![0.5, -3.0], vec![2], false).unwrap();
        let w2 = tape.leaf(vec![2.0, 7.0], vec![2, 1], false).unwrap();
        let b2 = tape.leaf(vec![0.25], vec![1], false).unwrap();
        let head = HeadIds { w1, b1, w2, b2 };
        let out = reconstruct(&mut tape, z, &head).unwrap();
        assert!((tape.value(out)[0] - 3.25).abs() < 1e-15);
    }

    #[test]
    fn classify_zero_weights_gives_half() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(8);
        let mut model = Model::init_classifier(cfg.clone(), &mut rng).unwrap();
        for t in model.params.tensors_mut() {
            if t.name.starts_with("clf.") {
                t.data.fill(0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &model, Trainable::None).unwrap();
        let z = tape.leaf(vec![0.3; cfg.window_len * cfg.hidden_dim], vec![cfg.window_len, cfg.hidden_dim], false).unwrap();
        let p = classify(&mut tape, z, &bound.clf.unwrap()).unwrap();
        assert_eq!(tape.value(p), &[0.5]);
    }

    #[test]
    fn classify_invariant_under_row_permutation() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(9);
        let model = Model::init_classifier(cfg.clone(), &mut rng).unwrap();
        let t = cfg.window_len;
        let d = cfg.hidden_dim;
        let mut data_rng = Rng::new(10);
        let rows: Vec<Vec<f64>> =
            (0..t).map(|_| (0..d).map(|_| data_rng.uniform(-2.0, 2.0)).collect()).collect();
        let prob = |order: &[usize]| {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &model, Trainable::None).unwrap();
            let flat: Vec<f64> = order.iter().flat_map(|&i| rows[i].clone()).collect();
            let z = tape.leaf(flat, vec![t, d], false).unwrap();
            let p = classify(&mut tape, z, &bound.clf.unwrap()).unwrap();
            tape.scalar_value(p)
        };
        let base = prob(&[0, 1, 2, 3]);
        assert!((base - prob(&[3, 1, 0, 2])).abs() < 1e-12);
        assert!((base - prob(&[2, 3, 1, 0])).abs() < 1e-12);
        assert!(base > 0.0 && base < 1.0);
    }
}
