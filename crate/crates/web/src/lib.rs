//! In-browser playground: trains a small gated model on the lexicon toy task
//! and exposes its attention, the `(a, b)` context scaling, and gate values
//! as JSON for `www/index.html`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cgnmt::cells::{CellKind, GateConfig, GateVariant, ScaleConfig};
use cgnmt::corpus::{numberize, synthesize_splits, TaskKind, TokenId, RESERVED};
use cgnmt::inference::{beam_decode, length_cap};
use cgnmt::rng::XorShift64Star;
use cgnmt::training::{train, TrainConfig};
use cgnmt::{init_model, Model, ModelConfig, Result, SequencePair, ToyTaskSpec, Vocabulary};

const BEAM: usize = 5;
const SETTINGS: [(f64, f64); 5] = [(1.0, 1.0), (1.0, 0.8), (1.0, 0.5), (0.8, 1.0), (0.5, 1.0)];

pub fn toy_task(seed: u64) -> ToyTaskSpec {
    ToyTaskSpec {
        kind: TaskKind::Lexicon,
        vocab_size: 16,
        min_len: 3,
        max_len: 8,
        function_rate: 0.3,
        seed,
    }
}

#[derive(Serialize)]
struct EpochReport {
    epoch: usize,
    train_loss_per_token: f64,
    dev_bleu: f64,
}

#[derive(Serialize)]
struct Translation {
    source: Vec<String>,
    output: Vec<String>,
    /// Lexicon translation of the source without function words.
    expected: Vec<String>,
    /// Per output token: inserted function word rather than a lexicon word.
    function_word: Vec<bool>,
    /// Emitted token per decoding step, EOS included; labels `alpha` rows.
    steps: Vec<String>,
    alpha: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
    z_mean_per_step: Vec<f64>,
    sentence_gate_weight: Option<f64>,
    a: f64,
    b: f64,
    cap: usize,
    hit_cap: bool,
}

#[derive(Serialize)]
struct SweepRow {
    a: f64,
    b: f64,
    length: usize,
    hit_cap: bool,
    output: Vec<String>,
}

#[wasm_bindgen]
pub struct Playground {
    task: ToyTaskSpec,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    train: Vec<SequencePair>,
    dev: Vec<SequencePair>,
    model: Model,
    epoch: usize,
    rng: XorShift64Star,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("report serializes")
}

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> std::result::Result<Playground, JsError> {
        Ok(Playground::create(seed)?)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn train_epoch(&mut self) -> std::result::Result<String, JsError> {
        Ok(self.run_epoch()?)
    }

    pub fn sample_source(&mut self) -> String {
        self.sample()
    }

    pub fn translate(&self, source: &str, a: f64, b: f64) -> std::result::Result<String, JsError> {
        Ok(self.translate_json(source, a, b)?)
    }

    pub fn scale_sweep(&self, source: &str) -> std::result::Result<String, JsError> {
        Ok(self.sweep_json(source)?)
    }
}

impl Playground {
    /// Fresh GRU decoder with the `both` context gate and its corpora.
    pub fn create(seed: u64) -> Result<Self> {
        let task = toy_task(seed);
        let [train, dev, _] = synthesize_splits(&task, [1500, 60, 1])?;
        let src_vocab = task.source_vocabulary();
        let tgt_vocab = task.target_vocabulary();
        let model = init_model(ModelConfig {
            emb_dim: 16,
            hidden_dim: 16,
            att_dim: 16,
            src_vocab: src_vocab.len(),
            tgt_vocab: tgt_vocab.len(),
            cell: CellKind::Gru,
            gate: GateConfig::new(GateVariant::Both),
            scale: ScaleConfig::IDENTITY,
            seed,
        })?;
        Ok(Playground {
            task,
            src_vocab,
            tgt_vocab,
            train,
            dev,
            model,
            epoch: 0,
            rng: XorShift64Star::new(seed ^ 0xdeed),
        })
    }

    /// One pass of SGD over the training split; returns
    /// `{epoch, train_loss_per_token, dev_bleu}`.
    pub fn run_epoch(&mut self) -> Result<String> {
        let cfg = TrainConfig {
            max_epochs: 1,
            shuffle_seed: self.task.seed.wrapping_add(self.epoch as u64 + 1),
            ..Default::default()
        };
        let log = train(&mut self.model, &self.train, &self.dev, &cfg)?;
        self.epoch += 1;
        Ok(to_json(&EpochReport {
            epoch: self.epoch,
            train_loss_per_token: log.epochs[0].train_loss_per_token,
            dev_bleu: log.epochs[0].dev_bleu,
        }))
    }

    /// A random source sentence from the task's generator.
    pub fn sample(&mut self) -> String {
        let len = self.rng.range_inclusive(self.task.min_len, self.task.max_len);
        (0..len)
            .map(|_| format!("s{}", self.rng.below(self.task.vocab_size as u64)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Beam translation of `source` under context scaling `(a, b)` with the
    /// attention matrix and gate values of the output.
    pub fn translate_json(&self, source: &str, a: f64, b: f64) -> Result<String> {
        Ok(to_json(&self.translation(source, a, b)?))
    }

    /// Output lengths under the five standard `(a, b)` settings.
    pub fn sweep_json(&self, source: &str) -> Result<String> {
        let rows = SETTINGS
            .iter()
            .map(|&(a, b)| {
                let t = self.translation(source, a, b)?;
                Ok(SweepRow {
                    a,
                    b,
                    length: t.output.len(),
                    hit_cap: t.hit_cap,
                    output: t.output,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(to_json(&rows))
    }

    fn source_ids(&self, source: &str) -> Result<Vec<TokenId>> {
        let words: Vec<&str> = source.split_whitespace().collect();
        if words.is_empty() {
            return Err(cgnmt::Error::Input("type a source sentence such as `s3 s7 s1`".into()));
        }
        Ok(numberize(&words, &self.src_vocab))
    }

    fn translation(&self, source: &str, a: f64, b: f64) -> Result<Translation> {
        let ids = self.source_ids(source)?;
        let model = self.model.with_scale(ScaleConfig::new(a, b)?);
        let (hyp, trace) = beam_decode(&model, &ids, BEAM)?;
        let lexicon = self.task.lexicon();
        let expected: Vec<TokenId> = ids.iter().map(|&s| lexicon.get(s).copied().unwrap_or(0)).collect();
        let first_function = RESERVED.len() + self.task.vocab_size;
        let words = hyp.surface();
        let cap = length_cap(ids.len());
        Ok(Translation {
            source: self.src_vocab.decode(&ids),
            output: self.tgt_vocab.decode(words),
            expected: self.tgt_vocab.decode(&expected),
            function_word: words.iter().map(|&y| y >= first_function).collect(),
            steps: self.tgt_vocab.decode(&trace.tokens),
            z_mean_per_step: trace.z_mean_per_step(),
            sentence_gate_weight: trace.sentence_gate_weight(),
            alpha: trace.alpha,
            gates: trace.gates,
            a,
            b,
            cap,
            hit_cap: hyp.live && hyp.tokens.len() >= cap,
        })
    }
}
