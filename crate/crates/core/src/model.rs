//! Encoder, attention, decoder cell, and readout wired into one translation
//! model, with teacher-forced loss, exact backprop, and a binary file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{self, AlignCache, AttentionKeys, AttentionParams, AttentionStep};
use crate::cells::{
    cell_backward, count_parameters, CellCache, CellKind, CellParams, CellStep, GateConfig, GateValue, ScaleConfig,
};
use crate::corpus::{SequencePair, TokenId, BOS};
use crate::encoder::{self, Annotations, EncoderCache, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{axpy, log_softmax, softmax, Matrix, Param, ParamSet, Vector};
use crate::rng::XorShift64Star;

pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Word embedding size `m`.
    pub emb_dim: usize,
    /// Decoder (and per-direction encoder) state size `n`.
    pub hidden_dim: usize,
    /// Attention hidden size `d_a`.
    pub att_dim: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub cell: CellKind,
    pub gate: GateConfig,
    pub scale: ScaleConfig,
    pub seed: u64,
}

impl ModelConfig {
    /// Annotation size `n' = 2n`.
    pub fn annotation_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("emb_dim", self.emb_dim),
            ("hidden_dim", self.hidden_dim),
            ("att_dim", self.att_dim),
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        self.gate.validate()?;
        self.scale.validate()
    }

    /// Total entries across every parameter matrix.
    pub fn parameter_count(&self) -> u64 {
        let (m, n, na, d) = (
            self.emb_dim as u64,
            self.hidden_dim as u64,
            self.annotation_dim() as u64,
            self.att_dim as u64,
        );
        let (vs, vt) = (self.src_vocab as u64, self.tgt_vocab as u64);
        let encoder = vs * m + 2 * 3 * (n * m + n * n);
        let attention = d * n + d * na + d;
        let cell = count_parameters(m, n, na, self.cell, &self.gate);
        let readout = vt * (n + m + na);
        encoder + attention + cell + vt * m + readout + n * n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub attention: AttentionParams,
    pub cell: CellParams,
    pub tgt_embedding: Param,
    /// `|V_tgt| × n`
    pub w_o: Param,
    /// `|V_tgt| × m`
    pub v_o: Param,
    /// `|V_tgt| × n'`
    pub c_o: Param,
    /// `n × n`, maps the first backward encoder state to `t_0`.
    pub w_init: Param,
}

impl ModelParams {
    fn new(cfg: &ModelConfig, scale: f64) -> Self {
        let mut rng = XorShift64Star::new(cfg.seed);
        let (m, n, na) = (cfg.emb_dim, cfg.hidden_dim, cfg.annotation_dim());
        let encoder = EncoderParams::new(cfg.src_vocab, m, n, scale, &mut rng);
        let attention = AttentionParams::new(cfg.att_dim, n, na, scale, &mut rng);
        let cell = CellParams::new(m, n, na, cfg.cell, &cfg.gate, scale, &mut rng);
        let tgt_embedding = Param::uniform(cfg.tgt_vocab, m, scale, &mut rng);
        let w_o = Param::uniform(cfg.tgt_vocab, n, scale, &mut rng);
        let v_o = Param::uniform(cfg.tgt_vocab, m, scale, &mut rng);
        let c_o = Param::uniform(cfg.tgt_vocab, na, scale, &mut rng);
        let w_init = Param::uniform(n, n, scale, &mut rng);
        ModelParams {
            encoder,
            attention,
            cell,
            tgt_embedding,
            w_o,
            v_o,
            c_o,
            w_init,
        }
    }

    pub fn names(&self) -> Vec<String> {
        let gru = |dir: &str| {
            ["w_r", "w_u", "w_c", "u_r", "u_u", "u_c"].map(move |p| format!("encoder.{dir}.{p}"))
        };
        let mut v = vec!["encoder.embedding".to_string()];
        v.extend(gru("forward"));
        v.extend(gru("backward"));
        v.extend(["attention.w_a", "attention.u_a", "attention.v_a"].map(String::from));
        v.extend(self.cell.names());
        v.extend(
            ["decoder.embedding", "readout.w_o", "readout.v_o", "readout.c_o", "decoder.w_init"].map(String::from),
        );
        v
    }
}

impl ParamSet for ModelParams {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.attention.params());
        v.extend(self.cell.params());
        v.extend([&self.tgt_embedding, &self.w_o, &self.v_o, &self.c_o, &self.w_init]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.attention.params_mut());
        v.extend(self.cell.params_mut());
        v.extend([
            &mut self.tgt_embedding,
            &mut self.w_o,
            &mut self.v_o,
            &mut self.c_o,
            &mut self.w_init,
        ]);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl ParamSet for Model {
    fn params(&self) -> Vec<&Param> {
        self.params.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params.params_mut()
    }
}

/// A source sentence prepared for decoding.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    pub annotations: Annotations,
    keys: AttentionKeys,
    /// Pre-tanh value of `t_0`.
    init_pre: Vec<f64>,
    pub t0: Vec<f64>,
    cache: EncoderCache,
}

/// One decoding step's activations.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub y_prev: TokenId,
    pub attention: AttentionStep,
    align: AlignCache,
    pub cell: CellCache,
    pub log_probs: Vector,
}

impl StepCache {
    pub fn state(&self) -> &[f64] {
        &self.cell.t_new
    }

    pub fn gate(&self) -> Option<&GateValue> {
        self.cell.gate.as_ref()
    }
}

/// Teacher-forced pass over one sentence pair.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub loss: f64,
    pub encoded: EncodedSource,
    pub steps: Vec<StepCache>,
    pub target: Vec<TokenId>,
}

impl ForwardPass {
    pub fn loss_per_token(&self) -> f64 {
        self.loss / self.steps.len() as f64
    }
}

/// Initialises every weight uniformly in `[-0.08, 0.08]` from `config.seed`.
pub fn init_model(config: ModelConfig) -> Result<Model> {
    config.validate()?;
    let params = ModelParams::new(&config, INIT_SCALE);
    Ok(Model { config, params })
}

/// Like [`init_model`] with a custom half-width for the uniform draw.
pub fn init_model_with_scale(config: ModelConfig, scale: f64) -> Result<Model> {
    config.validate()?;
    let params = ModelParams::new(&config, scale);
    Ok(Model { config, params })
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        init_model(config)
    }

    /// Same shapes as [`init_model`], all weights zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::new(&config, 0.0);
        Ok(Model { config, params })
    }

    pub fn with_scale(&self, scale: ScaleConfig) -> Model {
        let mut m = self.clone();
        m.config.scale = scale;
        m
    }

    fn cell_step(&self) -> CellStep<'_> {
        CellStep {
            kind: self.config.cell,
            cfg: &self.config.gate,
            scale: self.config.scale,
            params: &self.params.cell,
        }
    }

    pub fn encode_source(&self, source: &[TokenId]) -> Result<EncodedSource> {
        let (annotations, cache) = encoder::encode_cached(source, &self.params.encoder)?;
        let n = self.config.hidden_dim;
        let keys = attention::precompute_keys(&annotations, &self.params.attention);
        let mut init_pre = vec![0.0; n];
        self.params.w_init.value.gemv_acc(&annotations.states[0][n..], &mut init_pre);
        let t0 = init_pre.iter().map(|v| v.tanh()).collect();
        Ok(EncodedSource {
            annotations,
            keys,
            init_pre,
            t0,
            cache,
        })
    }

    /// Output distribution `softmax(W_o t + V_o e(y_prev) + C_o s)`.
    pub fn readout(&self, y_emb: &[f64], t: &[f64], s: &[f64]) -> Vector {
        softmax(&self.logits(y_emb, t, s))
    }

    fn logits(&self, y_emb: &[f64], t: &[f64], s: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.config.tgt_vocab];
        self.params.w_o.value.gemv_acc(t, &mut logits);
        self.params.v_o.value.gemv_acc(y_emb, &mut logits);
        self.params.c_o.value.gemv_acc(s, &mut logits);
        logits
    }

    pub fn target_embedding(&self, token: TokenId) -> &[f64] {
        self.params.tgt_embedding.value.row(token)
    }

    /// Advances the decoder by one word.
    pub fn step(&self, enc: &EncodedSource, y_prev: TokenId, t_prev: &[f64]) -> Result<StepCache> {
        if y_prev >= self.config.tgt_vocab {
            return Err(Error::Input(format!(
                "target token id {y_prev} outside vocabulary of {}",
                self.config.tgt_vocab
            )));
        }
        let (attention, align) =
            attention::align_with_keys(t_prev, &enc.annotations, &enc.keys, &self.params.attention);
        let y_emb = self.target_embedding(y_prev);
        let cell = self.cell_step().forward(y_emb, t_prev, &attention.context)?;
        let log_probs = log_softmax(&self.logits(y_emb, &cell.t_new, &attention.context));
        Ok(StepCache {
            y_prev,
            attention,
            align,
            cell,
            log_probs,
        })
    }

    pub fn forward(&self, pair: &SequencePair) -> Result<ForwardPass> {
        pair.validate()?;
        let encoded = self.encode_source(&pair.source)?;
        let mut steps = Vec::with_capacity(pair.target.len());
        let mut loss = 0.0;
        let mut y_prev = BOS;
        for &y in &pair.target {
            if y >= self.config.tgt_vocab {
                return Err(Error::Input(format!("target token id {y} outside vocabulary")));
            }
            let t_prev = steps.last().map_or(&encoded.t0[..], |s: &StepCache| s.state());
            let step = self.step(&encoded, y_prev, t_prev)?;
            loss -= step.log_probs[y];
            steps.push(step);
            y_prev = y;
        }
        Ok(ForwardPass {
            loss,
            encoded,
            steps,
            target: pair.target.clone(),
        })
    }

    pub fn loss(&self, pair: &SequencePair) -> Result<f64> {
        self.forward(pair).map(|f| f.loss)
    }

    /// Accumulates the exact gradient of `pass.loss` into every parameter.
    pub fn backward(&mut self, pass: &ForwardPass) -> Result<()> {
        let n = self.config.hidden_dim;
        let na = self.config.annotation_dim();
        let d = self.config.att_dim;
        let j_len = pass.encoded.annotations.len();
        if pass.steps.len() != pass.target.len()
            || pass.encoded.t0.len() != n
            || pass.encoded.annotations.dim() != na
            || pass.steps.iter().any(|s| s.log_probs.dim() != self.config.tgt_vocab)
        {
            return Err(Error::Contract("forward cache does not match model parameters".into()));
        }
        let kind = self.config.cell;
        let gate = self.config.gate;
        let scale = self.config.scale;

        let mut d_ann = vec![vec![0.0; na]; j_len];
        let mut d_keys = vec![vec![0.0; d]; j_len];
        let mut d_t_next = vec![0.0; n];

        for (i, step) in pass.steps.iter().enumerate().rev() {
            let y = pass.target[i];
            let mut d_logits: Vec<f64> = step.log_probs.iter().map(|lp| lp.exp()).collect();
            d_logits[y] -= 1.0;
            let t = step.state();
            let s = &step.attention.context;
            let y_emb = self.params.tgt_embedding.value.row(step.y_prev).to_vec();

            let p = &mut self.params;
            let mut dt = d_t_next.clone();
            p.w_o.grad.outer_acc(&d_logits, t);
            p.w_o.value.gemv_t_acc(&d_logits, &mut dt);
            let mut d_emb = vec![0.0; self.config.emb_dim];
            p.v_o.grad.outer_acc(&d_logits, &y_emb);
            p.v_o.value.gemv_t_acc(&d_logits, &mut d_emb);
            let mut ds = vec![0.0; na];
            p.c_o.grad.outer_acc(&d_logits, s);
            p.c_o.value.gemv_t_acc(&d_logits, &mut ds);

            let g = cell_backward(kind, &gate, scale, &mut p.cell, &step.cell, &dt);
            axpy(1.0, &g.y_emb, &mut d_emb);
            axpy(1.0, &g.s, &mut ds);
            axpy(1.0, &d_emb, p.tgt_embedding.grad.row_mut(step.y_prev));

            let mut dt_prev = g.t_prev;
            attention::align_backward(
                &mut p.attention,
                &step.cell.t_prev,
                &pass.encoded.annotations,
                &step.attention,
                &step.align,
                &ds,
                &mut dt_prev,
                &mut d_ann,
                &mut d_keys,
            );
            d_t_next = dt_prev;
        }

        let p = &mut self.params;
        attention::keys_backward(&mut p.attention, &pass.encoded.annotations, &d_keys, &mut d_ann);
        let t0 = &pass.encoded.t0;
        let d_pre: Vec<f64> = (0..n).map(|i| d_t_next[i] * (1.0 - t0[i] * t0[i])).collect();
        debug_assert_eq!(pass.encoded.init_pre.len(), n);
        p.w_init.grad.outer_acc(&d_pre, &pass.encoded.annotations.states[0][n..]);
        p.w_init.value.gemv_t_acc(&d_pre, &mut d_ann[0][n..]);
        encoder::encode_backward(&mut p.encoder, &pass.encoded.cache, &d_ann);
        Ok(())
    }

    /// Forward plus backward; returns the sentence loss.
    pub fn accumulate_gradients(&mut self, pair: &SequencePair) -> Result<f64> {
        let pass = self.forward(pair)?;
        self.backward(&pass)?;
        Ok(pass.loss)
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.params.names().into_iter().zip(self.params.params()).collect()
    }
}

const MAGIC: &[u8; 4] = b"CGNM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the payload that follows the manifest.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Layout: `CGNM`, u32 version, u32 manifest length, JSON manifest, then
/// every tensor as little-endian f64 in row-major order.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut offset = 0;
    let tensors: Vec<TensorEntry> = model
        .named_params()
        .into_iter()
        .map(|(name, p)| {
            let e = TensorEntry {
                name,
                rows: p.value.rows(),
                cols: p.value.cols(),
                offset,
            };
            offset += 8 * p.len();
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        config: model.config.clone(),
        tensors,
    })
    .expect("manifest serializes");
    let mut out = Vec::with_capacity(12 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.write_all(&manifest).unwrap();
    for p in model.params.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_bytes(&fs::read(path)?)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 {
        return Err(Error::format("header", "file shorter than 12-byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("magic", "expected CGNM"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let manifest_bytes = bytes
        .get(12..12 + mlen)
        .ok_or_else(|| Error::format("manifest", "truncated"))?;
    let manifest: Manifest =
        serde_json::from_slice(manifest_bytes).map_err(|e| Error::format("manifest", e.to_string()))?;
    let mut model = Model::zeros(manifest.config).map_err(|e| Error::format("config", e.to_string()))?;
    let payload = &bytes[12 + mlen..];

    let names = model.params.names();
    if names.len() != manifest.tensors.len() {
        return Err(Error::format(
            "tensors",
            format!("expected {} tensors, manifest lists {}", names.len(), manifest.tensors.len()),
        ));
    }
    let mut expected_offset = 0;
    for ((name, p), entry) in names.iter().zip(model.params.params_mut()).zip(&manifest.tensors) {
        if &entry.name != name {
            return Err(Error::format(name.clone(), format!("manifest has `{}` in its place", entry.name)));
        }
        if (entry.rows, entry.cols) != p.value.shape() {
            return Err(Error::format(
                name.clone(),
                format!(
                    "shape {}x{} does not match config shape {}x{}",
                    entry.rows,
                    entry.cols,
                    p.value.rows(),
                    p.value.cols()
                ),
            ));
        }
        if entry.offset != expected_offset {
            return Err(Error::format(name.clone(), format!("offset {} != {expected_offset}", entry.offset)));
        }
        let end = entry.offset + 8 * p.len();
        let raw = payload
            .get(entry.offset..end)
            .ok_or_else(|| Error::format(name.clone(), "payload truncated"))?;
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        expected_offset = end;
    }
    if payload.len() != expected_offset {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes", payload.len() as isize - expected_offset as isize),
        ));
    }
    Ok(model)
}

/// Replaces a parameter matrix; used by tests and the demo to rig weights.
pub fn set_matrix(param: &mut Param, value: Matrix) -> Result<()> {
    if value.shape() != param.value.shape() {
        return Err(Error::shape(
            format!("{}x{}", param.value.rows(), param.value.cols()),
            format!("{}x{}", value.rows(), value.cols()),
        ));
    }
    param.value = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::GateVariant;
    use crate::corpus::EOS;

    pub(crate) fn small_config(cell: CellKind, variant: GateVariant, seed: u64) -> ModelConfig {
        ModelConfig {
            emb_dim: 4,
            hidden_dim: 6,
            att_dim: 6,
            src_vocab: 11,
            tgt_vocab: 11,
            cell,
            gate: GateConfig::new(variant),
            scale: ScaleConfig::IDENTITY,
            seed,
        }
    }

    fn pair() -> SequencePair {
        SequencePair::new(vec![3, 4, 5, 6, 7], vec![8, 9, 10, 3])
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let cfg = small_config(CellKind::Gru, GateVariant::Both, 5);
        let a = init_model(cfg.clone()).unwrap();
        let b = init_model(cfg.clone()).unwrap();
        assert_eq!(a, b);
        let c = init_model(ModelConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a, c);
        assert!(a
            .params
            .params()
            .iter()
            .flat_map(|p| p.value.data().iter())
            .all(|v| v.abs() <= INIT_SCALE));
    }

    #[test]
    fn parameter_count_matches_allocation() {
        for cell in CellKind::ALL {
            for v in GateVariant::ALL {
                let m = init_model(small_config(cell, v, 1)).unwrap();
                assert_eq!(m.num_entries() as u64, m.config.parameter_count());
                assert_eq!(m.params.names().len(), m.params.params().len());
            }
        }
    }

    #[test]
    fn zero_model_loss_is_uniform() {
        let m = Model::zeros(small_config(CellKind::Vanilla, GateVariant::None, 1)).unwrap();
        let p = pair();
        let loss = m.loss(&p).unwrap();
        let expected = p.target.len() as f64 * 11f64.ln();
        assert!((loss - expected).abs() < 1e-12);
        let probs = m.readout(&[0.0; 4], &[0.1; 6], &[0.2; 12]);
        assert!(probs.iter().all(|&q| (q - 1.0 / 11.0).abs() < 1e-15));
    }

    #[test]
    fn readout_hand_logits() {
        let mut cfg = small_config(CellKind::Vanilla, GateVariant::None, 1);
        cfg.tgt_vocab = 2;
        let mut m = Model::zeros(cfg).unwrap();
        let mut w = Matrix::zeros(2, 6);
        w.set(0, 0, 3f64.ln());
        set_matrix(&mut m.params.w_o, w).unwrap();
        let mut t = [0.0; 6];
        t[0] = 1.0;
        let p = m.readout(&[0.0; 4], &t, &[0.0; 12]);
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_positive_and_target_needs_eos() {
        let m = init_model(small_config(CellKind::Gru, GateVariant::Target, 2)).unwrap();
        assert!(m.loss(&pair()).unwrap() > 0.0);
        let bad = SequencePair {
            source: vec![3],
            target: vec![4, 5],
        };
        assert!(matches!(m.forward(&bad), Err(Error::Input(_))));
        let ok = SequencePair {
            source: vec![3],
            target: vec![EOS],
        };
        assert!(m.loss(&ok).unwrap() > 0.0);
    }

    #[test]
    fn save_load_roundtrip_and_errors() {
        let m = init_model(small_config(CellKind::Gru, GateVariant::GatingScalar, 3)).unwrap();
        let bytes = model_to_bytes(&m);
        assert_eq!(&bytes[..4], b"CGNM");
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        for (a, b) in back.params.params().iter().zip(m.params.params()) {
            let same = a
                .value
                .data()
                .iter()
                .zip(b.value.data())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same);
        }

        let err = model_from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(Error::Format { field, .. }) if field == "magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(model_from_bytes(&bad), Err(Error::Format { field, .. }) if field == "version"));

        // Header claims a bigger hidden size than the payload carries.
        let other = ModelConfig {
            hidden_dim: 7,
            ..m.config.clone()
        };
        let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut manifest: serde_json::Value = serde_json::from_slice(&bytes[12..12 + mlen]).unwrap();
        manifest["config"] = serde_json::to_value(&other).unwrap();
        let new_manifest = serde_json::to_vec(&manifest).unwrap();
        let mut forged = Vec::new();
        forged.extend_from_slice(&bytes[..8]);
        forged.extend_from_slice(&(new_manifest.len() as u32).to_le_bytes());
        forged.extend_from_slice(&new_manifest);
        forged.extend_from_slice(&bytes[12 + mlen..]);
        assert!(matches!(model_from_bytes(&forged), Err(Error::Format { .. })));
    }
}
