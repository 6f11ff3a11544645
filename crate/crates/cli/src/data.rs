//! Corpora and vocabularies for a run, from files or the toy generator.

use std::path::{Path, PathBuf};

use cgnmt::corpus::{build_vocabulary, numberize, read_parallel, read_sentences, synthesize_splits, TokenId};
use cgnmt::{ModelConfig, Result, SequencePair, Vocabulary};

use crate::config::RunConfig;

pub struct Corpora {
    pub train: Vec<SequencePair>,
    pub dev: Vec<SequencePair>,
    pub test: Vec<SequencePair>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

pub fn load_corpora(cfg: &RunConfig) -> Result<Corpora> {
    if let (Some(ts), Some(tt)) = (&cfg.train_source, &cfg.train_target) {
        let src_vocab = build_vocabulary(&read_sentences(ts)?, cfg.src_vocab_size)?;
        let tgt_vocab = build_vocabulary(&read_sentences(tt)?, cfg.tgt_vocab_size)?;
        let read = |s: &Option<PathBuf>, t: &Option<PathBuf>| -> Result<Vec<SequencePair>> {
            match (s, t) {
                (Some(s), Some(t)) => read_parallel(s, t, &src_vocab, &tgt_vocab),
                _ => Ok(Vec::new()),
            }
        };
        let train = read_parallel(ts, tt, &src_vocab, &tgt_vocab)?;
        let dev = read(&cfg.dev_source, &cfg.dev_target)?;
        let test = read(&cfg.test_source, &cfg.test_target)?;
        return Ok(Corpora {
            train,
            dev,
            test,
            src_vocab,
            tgt_vocab,
        });
    }
    let [train, dev, test] = synthesize_splits(&cfg.task, cfg.sizes)?;
    Ok(Corpora {
        train,
        dev,
        test,
        src_vocab: cfg.task.source_vocabulary(),
        tgt_vocab: cfg.task.target_vocabulary(),
    })
}

pub fn model_config(cfg: &RunConfig, corpora: &Corpora) -> ModelConfig {
    ModelConfig {
        emb_dim: cfg.emb_dim,
        hidden_dim: cfg.hidden_dim,
        att_dim: cfg.att_dim(),
        src_vocab: corpora.src_vocab.len(),
        tgt_vocab: corpora.tgt_vocab.len(),
        cell: cfg.cell,
        gate: cfg.gate,
        scale: cfg.scale,
        seed: cfg.init_seed,
    }
}

/// Vocabulary files stored next to a model file.
pub fn vocab_paths(model: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut p = model.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    (with(".src.vocab"), with(".tgt.vocab"))
}

pub fn save_vocabularies(model: &Path, src: &Vocabulary, tgt: &Vocabulary) -> Result<()> {
    let (s, t) = vocab_paths(model);
    src.save(&s)?;
    tgt.save(&t)
}

pub fn load_vocabularies(model: &Path) -> Result<(Vocabulary, Vocabulary)> {
    let (s, t) = vocab_paths(model);
    Ok((Vocabulary::load(&s)?, Vocabulary::load(&t)?))
}

/// Source sentences to translate: `input` if given, else the test split.
pub fn test_sources(cfg: &RunConfig, input: Option<&Path>, src_vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>> {
    if let Some(path) = input.or(cfg.test_source.as_deref()) {
        return Ok(read_sentences(path)?
            .iter()
            .map(|s| numberize(s, src_vocab))
            .collect());
    }
    let [_, _, test] = synthesize_splits(&cfg.task, cfg.sizes)?;
    Ok(test.into_iter().map(|p| p.source).collect())
}

/// Reference sentences: the `reference` key, `test_target`, or the
/// synthesized test split.
pub fn references(cfg: &RunConfig, tgt_vocab: &Vocabulary) -> Result<Vec<Vec<String>>> {
    if let Some(path) = cfg.reference.as_deref().or(cfg.test_target.as_deref()) {
        return read_sentences(path);
    }
    let [_, _, test] = synthesize_splits(&cfg.task, cfg.sizes)?;
    Ok(test.iter().map(|p| tgt_vocab.decode(p.target_words())).collect())
}

/// Bitext for forced decoding: `input` as source with the configured
/// test target, or the synthesized test split.
pub fn test_pairs(
    cfg: &RunConfig,
    input: Option<&Path>,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<Vec<SequencePair>> {
    match (input.or(cfg.test_source.as_deref()), cfg.reference.as_deref().or(cfg.test_target.as_deref())) {
        (Some(s), Some(t)) => read_parallel(s, t, src_vocab, tgt_vocab),
        (None, None) => Ok(synthesize_splits(&cfg.task, cfg.sizes)?[2].clone()),
        _ => Err(cgnmt::Error::Config(
            "forced decoding needs both a source and a target file".into(),
        )),
    }
}

/// Gold alignment of a toy pair: every content word links (sure) to the
/// source word it came from; inserted function words stay unaligned.
pub fn toy_alignment(task: &cgnmt::ToyTaskSpec, pair: &SequencePair) -> cgnmt::evaluation::AlignmentSets {
    use cgnmt::corpus::{TaskKind, RESERVED};
    let j_len = pair.source.len();
    let mut sure = Vec::new();
    let mut next_source = 0;
    for (i, &y) in pair.target_words().iter().enumerate() {
        let is_function = task.kind == TaskKind::Lexicon && y >= RESERVED.len() + task.vocab_size;
        if is_function || next_source >= j_len {
            continue;
        }
        let j = match task.kind {
            TaskKind::Reverse => j_len - next_source,
            _ => next_source + 1,
        };
        sure.push((i + 1, j));
        next_source += 1;
    }
    cgnmt::evaluation::AlignmentSets::from_links(&sure, &[])
}
