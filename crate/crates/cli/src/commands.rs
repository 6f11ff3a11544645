use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use cgnmt::corpus::read_sentences;
use cgnmt::evaluation::{
    bleu, bucket_report, corpus_aer, corpus_saer, format_links, pearson, read_alignments, sign_test, AlignmentSets,
    BleuStats,
};
use cgnmt::inference::{extract_alignment, score_sequence, DecodeTrace};
use cgnmt::numerics::Matrix;
use cgnmt::training::train_with;
use cgnmt::{init_model, load_model, save_model, Error, Model, Vocabulary};

use crate::config::RunConfig;
use crate::data::{
    load_corpora, load_vocabularies, model_config, references, save_vocabularies, test_pairs, test_sources,
    toy_alignment,
};
use crate::experiments::{ablation_csv, ablation_grid, run_systems, scale_csv, scale_experiment, threads_from_env, translate_all};

#[derive(Parser)]
#[command(name = "cgnmt", version, about = "Context-gated attention NMT toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes the model, its vocabularies, and a log CSV.
    Train(Common),
    /// Translate a source file (or the test split) with beam search.
    Translate(Common),
    /// Score a hypothesis file: BLEU, length buckets, sign test, gate correlation, AER.
    Evaluate(Common),
    /// Forced-decode a bitext and write hard alignments plus AER/SAER.
    Align(Common),
    /// Decode with each (a, b) context scaling on one trained model.
    ScaleExperiment(Common),
    /// Train the gate ablation grid and write a comparison CSV.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Emit decode traces (attention and gate values) as JSON lines.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    beam: Option<usize>,
    /// Overrides `init_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Runs the command line `args` (program name first). Returns the exit
/// code: 0 success, 1 usage error, 2 data or format error.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(c) => with_config(c).and_then(|cfg| train(c, &cfg)),
        Command::Translate(c) => with_config(c).and_then(|cfg| translate(c, &cfg)),
        Command::Evaluate(c) => with_config(c).and_then(|cfg| evaluate(c, &cfg)),
        Command::Align(c) => with_config(c).and_then(|cfg| align(c, &cfg)),
        Command::ScaleExperiment(c) => with_config(c).and_then(|cfg| scale(c, &cfg)),
        Command::Ablate(c) => with_config(c).and_then(|cfg| ablate(c, &cfg)),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", usage());
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn usage() -> String {
    use clap::CommandFactory;
    Cli::command().render_usage().to_string()
}

fn with_config(c: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.init_seed = seed;
    }
    if let Some(beam) = c.beam {
        if beam == 0 {
            return Err(Failure::Usage("--beam must be at least 1".into()));
        }
        cfg.beam = beam;
    }
    if let Some(m) = &c.model {
        cfg.model = Some(m.clone());
    }
    Ok(cfg)
}

fn model_path(cfg: &RunConfig) -> std::result::Result<&Path, Failure> {
    cfg.model
        .as_deref()
        .ok_or_else(|| Failure::Usage("no model path: pass --model or set `model` in the config".into()))
}

fn load_with_vocabularies(cfg: &RunConfig) -> std::result::Result<(Model, Vocabulary, Vocabulary), Failure> {
    let path = model_path(cfg)?;
    let model = load_model(path)?;
    let (src, tgt) = load_vocabularies(path)?;
    if src.len() != model.config.src_vocab || tgt.len() != model.config.tgt_vocab {
        return Err(Error::format("vocabulary", "vocabulary files do not match the model dimensions").into());
    }
    Ok((model, src, tgt))
}

/// Writes `text` to `path`, or to stdout.
fn emit(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Writes `text` next to `output` with `suffix` appended, or to stderr.
fn emit_side(output: Option<&Path>, suffix: &str, text: &str) -> Outcome {
    match output {
        Some(p) => fs::write(with_suffix(p, suffix), text)?,
        None => std::io::stderr().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn lines<S: AsRef<str>>(sentences: &[Vec<S>]) -> String {
    let mut out = String::new();
    for s in sentences {
        let words: Vec<&str> = s.iter().map(AsRef::as_ref).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

fn trace_lines(traces: &[DecodeTrace], vocab: &Vocabulary) -> String {
    traces.iter().map(|t| t.to_json(Some(vocab)) + "\n").collect()
}

fn train(c: &Common, cfg: &RunConfig) -> Outcome {
    let path = model_path(cfg)?.to_path_buf();
    let corpora = load_corpora(cfg)?;
    let mut model = init_model(model_config(cfg, &corpora))?;
    let log = train_with(&mut model, &corpora.train, &corpora.dev, &cfg.train, |e| {
        eprintln!(
            "epoch {}: loss/token {:.4}, dev BLEU {:.4}, clipped {:.3}",
            e.epoch, e.train_loss_per_token, e.dev_bleu, e.clipped_fraction
        )
    })?;
    save_model(&model, &path)?;
    save_vocabularies(&path, &corpora.src_vocab, &corpora.tgt_vocab)?;
    let log_path = cfg.log.clone().unwrap_or_else(|| with_suffix(&path, ".log.csv"));
    fs::write(&log_path, log.to_csv())?;
    if let Some(out) = &c.output {
        fs::write(out, log.to_csv())?;
    }
    eprintln!(
        "best epoch {} (dev BLEU {:.4}); model written to {}",
        log.best_epoch,
        log.best_dev_bleu(),
        path.display()
    );
    Ok(())
}

fn translate(c: &Common, cfg: &RunConfig) -> Outcome {
    let (model, src_vocab, tgt_vocab) = load_with_vocabularies(cfg)?;
    let sources = test_sources(cfg, c.input.as_deref(), &src_vocab)?;
    let results = translate_all(&model, &sources, cfg.beam, threads_from_env()?)?;
    let words: Vec<Vec<String>> = results.iter().map(|(h, _)| tgt_vocab.decode(h.surface())).collect();
    emit(c.output.as_deref(), &lines(&words))?;
    if c.trace {
        let traces: Vec<DecodeTrace> = results.into_iter().map(|(_, t)| t).collect();
        emit_side(c.output.as_deref(), ".trace.jsonl", &trace_lines(&traces, &tgt_vocab))?;
    }
    Ok(())
}

fn sentence_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Vec<f64> {
    hyps.iter()
        .zip(refs)
        .map(|(h, r)| {
            let h: Vec<String> = h.iter().map(|w| w.to_lowercase()).collect();
            let r: Vec<String> = r.iter().map(|w| w.to_lowercase()).collect();
            BleuStats::sentence(&h, &r).score()
        })
        .collect()
}

/// Per-sentence gate weights from a `translate --trace` file.
fn read_gate_weights(path: &Path) -> std::result::Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(k, line)| {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| Error::format(format!("gate trace line {}", k + 1), e.to_string()))?;
            v.get("sentence_gate_weight")
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| Error::format(format!("gate trace line {}", k + 1), "no sentence_gate_weight").into())
        })
        .collect()
}

fn check_len(what: &str, got: usize, want: usize) -> Outcome {
    if got != want {
        return Err(Error::Input(format!("{what} has {got} sentences, expected {want}")).into());
    }
    Ok(())
}

fn evaluate(c: &Common, cfg: &RunConfig) -> Outcome {
    let hyp_path = c
        .input
        .as_deref()
        .ok_or_else(|| Failure::Usage("evaluate needs --input <hypothesis file>".into()))?;
    let hyps = read_sentences(hyp_path)?;
    if cfg.uses_files() && cfg.reference.is_none() && cfg.test_target.is_none() {
        return Err(Error::Config("evaluate needs `reference` or `test_target` when corpora come from files".into()).into());
    }
    let refs = references(cfg, &cfg.task.target_vocabulary())?;
    check_len("hypothesis file", hyps.len(), refs.len())?;

    let mut csv = String::from("metric,value\n");
    let mut stats = BleuStats::default();
    for (h, r) in hyps.iter().zip(&refs) {
        let h: Vec<String> = h.iter().map(|w| w.to_lowercase()).collect();
        let r: Vec<String> = r.iter().map(|w| w.to_lowercase()).collect();
        stats.add(&BleuStats::sentence(&h, &r));
    }
    writeln!(csv, "bleu,{:.6}", bleu(&hyps, &refs)?).unwrap();
    writeln!(csv, "brevity_penalty,{:.6}", stats.brevity_penalty()).unwrap();
    writeln!(csv, "hyp_length,{}", stats.hyp_len).unwrap();
    writeln!(csv, "ref_length,{}", stats.ref_len).unwrap();
    writeln!(csv, "sentences,{}", hyps.len()).unwrap();

    if let Some(base_path) = &cfg.baseline_hyp {
        let base = read_sentences(base_path)?;
        check_len("baseline_hyp", base.len(), refs.len())?;
        let ours = sentence_bleu(&hyps, &refs);
        let theirs = sentence_bleu(&base, &refs);
        writeln!(csv, "baseline_bleu,{:.6}", bleu(&base, &refs)?).unwrap();
        writeln!(csv, "sign_test_p,{}", sign_test(&ours, &theirs)?).unwrap();
        if let Some(trace_path) = &cfg.gate_trace {
            let weights = read_gate_weights(trace_path)?;
            check_len("gate_trace", weights.len(), refs.len())?;
            let gain: Vec<f64> = ours.iter().zip(&theirs).map(|(a, b)| a - b).collect();
            match pearson(&weights, &gain) {
                Ok(r) => writeln!(csv, "gate_weight_pearson,{r:.6}").unwrap(),
                Err(Error::Undefined(msg)) => eprintln!("gate_weight_pearson undefined: {msg}"),
                Err(e) => return Err(e.into()),
            }
        }
    } else if cfg.gate_trace.is_some() {
        eprintln!("gate_trace ignored: the correlation needs baseline_hyp");
    }

    if let (Some(gold_path), Some(hyp_path)) = (&cfg.test_alignments, &cfg.alignment_hyp) {
        let gold = read_alignments(gold_path)?;
        let hard: Vec<_> = read_alignments(hyp_path)?.into_iter().map(|a| a.possible).collect();
        writeln!(csv, "aer,{:.6}", corpus_aer(&hard, &gold)?).unwrap();
    }
    emit(c.output.as_deref(), &csv)?;

    let source_lens: Vec<usize> = match &cfg.test_source {
        Some(p) => read_sentences(p)?.iter().map(Vec::len).collect(),
        None => test_sources(cfg, None, &cfg.task.source_vocabulary())?.iter().map(Vec::len).collect(),
    };
    check_len("test source", source_lens.len(), refs.len())?;
    let report = bucket_report(&source_lens, &hyps, &refs, cfg.bucket_width)?;
    emit_side(c.output.as_deref(), ".buckets.csv", &report.to_csv())
}

fn align(c: &Common, cfg: &RunConfig) -> Outcome {
    let (model, src_vocab, tgt_vocab) = load_with_vocabularies(cfg)?;
    let pairs = test_pairs(cfg, c.input.as_deref(), &src_vocab, &tgt_vocab)?;
    let mut links = String::new();
    let mut hard = Vec::with_capacity(pairs.len());
    let mut soft = Vec::with_capacity(pairs.len());
    let mut traces = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let (_, mut trace) = score_sequence(&model, &p.source, &p.target)?;
        // the EOS row aligns nothing
        let words = p.target_words().len();
        trace.alpha.truncate(words);
        trace.tokens.truncate(words);
        trace.gates.truncate(words);
        let a = if words == 0 { Vec::new() } else { extract_alignment(&trace)? };
        links.push_str(&format_links(&a));
        links.push('\n');
        soft.push(if words == 0 {
            Matrix::zeros(0, p.source.len())
        } else {
            trace.alignment_matrix()
        });
        hard.push(a.into_iter().collect());
        traces.push(trace);
    }
    emit(c.output.as_deref(), &links)?;
    if c.trace {
        emit_side(c.output.as_deref(), ".trace.jsonl", &trace_lines(&traces, &tgt_vocab))?;
    }

    let gold: Option<Vec<AlignmentSets>> = match &cfg.test_alignments {
        Some(p) => Some(read_alignments(p)?),
        None if cfg.test_source.is_none() && c.input.is_none() => {
            Some(pairs.iter().map(|p| toy_alignment(&cfg.task, p)).collect())
        }
        None => None,
    };
    if let Some(gold) = gold {
        check_len("test_alignments", gold.len(), pairs.len())?;
        let mut csv = String::from("metric,value\n");
        writeln!(csv, "aer,{:.6}", corpus_aer(&hard, &gold)?).unwrap();
        writeln!(csv, "saer,{:.6}", corpus_saer(&soft, &gold)?).unwrap();
        emit_side(c.output.as_deref(), ".metrics.csv", &csv)?;
    }
    Ok(())
}

fn scale(c: &Common, cfg: &RunConfig) -> Outcome {
    let (model, src_vocab, tgt_vocab) = load_with_vocabularies(cfg)?;
    let pairs = test_pairs(cfg, c.input.as_deref(), &src_vocab, &tgt_vocab)?;
    let results = scale_experiment(&model, &pairs, &cfg.scales, cfg.beam, threads_from_env()?)?;
    let rows: Vec<_> = results.iter().map(|r| r.row.clone()).collect();
    emit(c.output.as_deref(), &scale_csv(&rows))?;

    let dir = cfg
        .output_dir
        .clone()
        .or_else(|| c.output.as_deref().and_then(Path::parent).map(Path::to_path_buf));
    if let Some(dir) = dir {
        fs::create_dir_all(&dir)?;
        for r in &results {
            let words: Vec<Vec<String>> = r.outputs.iter().map(|h| tgt_vocab.decode(h.surface())).collect();
            fs::write(dir.join(scale_file_name(r.row.a, r.row.b)), lines(&words))?;
        }
    }
    Ok(())
}

/// Translation file for one `(a, b)` setting, e.g. `scale_1_0.5.txt`.
pub fn scale_file_name(a: f64, b: f64) -> String {
    format!("scale_{a}_{b}.txt")
}

fn ablate(c: &Common, cfg: &RunConfig) -> Outcome {
    let corpora = load_corpora(cfg)?;
    let grid = ablation_grid();
    let results = run_systems(cfg, &corpora, &grid, threads_from_env()?)?;
    emit(c.output.as_deref(), &ablation_csv(&results))?;
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir)?;
        for r in &results {
            let path = dir.join(format!("{}.cgnm", r.name.replace(['[', ']', '+'], "_")));
            save_model(&r.model, &path)?;
            save_vocabularies(&path, &corpora.src_vocab, &corpora.tgt_vocab)?;
        }
    }
    Ok(())
}
