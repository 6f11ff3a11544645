//! Multi-sentence decoding, the `(a, b)` scaling sweep, and the ablation
//! grid, shared by the subcommands and the acceptance suite.

use std::fmt::Write as _;

use rayon::prelude::*;

use cgnmt::cells::{CellKind, GateConfig, GateInputs, GateVariant, ScaleConfig};
use cgnmt::corpus::TokenId;
use cgnmt::evaluation::bleu_tokens;
use cgnmt::inference::{beam_decode, length_cap, DecodeTrace, Hypothesis};
use cgnmt::training::{train, TrainLog};
use cgnmt::{init_model, Error, Model, Result, SequencePair};

use crate::config::RunConfig;
use crate::data::{model_config, Corpora};

/// Sentence-level parallelism from `CGNMT_THREADS` (default 1).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("CGNMT_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("CGNMT_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Decodes every source with beam search; results keep input order.
pub fn translate_all(
    model: &Model,
    sources: &[Vec<TokenId>],
    beam: usize,
    threads: usize,
) -> Result<Vec<(Hypothesis, DecodeTrace)>> {
    pool(threads)?.install(|| {
        sources
            .par_iter()
            .map(|s| beam_decode(model, s, beam))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleRow {
    pub a: f64,
    pub b: f64,
    pub mean_length: f64,
    pub bleu: f64,
    /// Share of outputs that stopped at the `3·J` cap without EOS.
    pub cap_fraction: f64,
}

pub struct ScaleResult {
    pub row: ScaleRow,
    pub outputs: Vec<Hypothesis>,
}

/// Decodes `pairs` once per `(a, b)` with the trained weights unchanged.
pub fn scale_experiment(
    model: &Model,
    pairs: &[SequencePair],
    settings: &[(f64, f64)],
    beam: usize,
    threads: usize,
) -> Result<Vec<ScaleResult>> {
    let sources: Vec<Vec<TokenId>> = pairs.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<Vec<TokenId>> = pairs.iter().map(|p| p.target_words().to_vec()).collect();
    settings
        .iter()
        .map(|&(a, b)| {
            let probe = model.with_scale(ScaleConfig::new(a, b)?);
            let outputs: Vec<Hypothesis> = translate_all(&probe, &sources, beam, threads)?
                .into_iter()
                .map(|(h, _)| h)
                .collect();
            let hyps: Vec<Vec<TokenId>> = outputs.iter().map(|h| h.surface().to_vec()).collect();
            let n = outputs.len().max(1) as f64;
            let capped = outputs
                .iter()
                .zip(&sources)
                .filter(|(h, s)| h.live && h.tokens.len() >= length_cap(s.len()))
                .count();
            Ok(ScaleResult {
                row: ScaleRow {
                    a,
                    b,
                    mean_length: hyps.iter().map(Vec::len).sum::<usize>() as f64 / n,
                    bleu: bleu_tokens(&hyps, &refs)?,
                    cap_fraction: capped as f64 / n,
                },
                outputs,
            })
        })
        .collect()
}

pub fn scale_csv(rows: &[ScaleRow]) -> String {
    let mut out = String::from("a,b,mean_length,bleu,cap_fraction\n");
    for r in rows {
        writeln!(out, "{},{},{:.4},{:.6},{:.4}", r.a, r.b, r.mean_length, r.bleu, r.cap_fraction).unwrap();
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct System {
    pub name: &'static str,
    pub cell: CellKind,
    pub gate: GateConfig,
}

/// Gate-input and granularity variants on GRU, then the decoder variants.
/// GRU + both with inputs `{t, s, y}` belongs to both groups and is listed
/// once.
pub fn ablation_grid() -> Vec<System> {
    let both = GateConfig::new(GateVariant::Both);
    vec![
        System {
            name: "gru+gating_scalar",
            cell: CellKind::Gru,
            gate: GateConfig::new(GateVariant::GatingScalar),
        },
        System {
            name: "gru+both[t]",
            cell: CellKind::Gru,
            gate: both.with_inputs(GateInputs::STATE_ONLY),
        },
        System {
            name: "gru+both[t+s]",
            cell: CellKind::Gru,
            gate: both.with_inputs(GateInputs::STATE_AND_SOURCE),
        },
        System {
            name: "gru+both[t+s+y]",
            cell: CellKind::Gru,
            gate: both,
        },
        System {
            name: "vanilla",
            cell: CellKind::Vanilla,
            gate: GateConfig::none(),
        },
        System {
            name: "vanilla+both",
            cell: CellKind::Vanilla,
            gate: both,
        },
        System {
            name: "gru",
            cell: CellKind::Gru,
            gate: GateConfig::none(),
        },
        System {
            name: "gru+source",
            cell: CellKind::Gru,
            gate: GateConfig::new(GateVariant::Source),
        },
        System {
            name: "gru+target",
            cell: CellKind::Gru,
            gate: GateConfig::new(GateVariant::Target),
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemResult {
    pub name: String,
    pub parameters: u64,
    pub log: TrainLog,
    pub test_bleu: f64,
    pub model: Model,
}

/// Trains one system from the run's settings with `cell`/`gate` swapped in.
pub fn train_system(cfg: &RunConfig, corpora: &Corpora, name: &str, cell: CellKind, gate: GateConfig) -> Result<SystemResult> {
    let mut mc = model_config(cfg, corpora);
    mc.cell = cell;
    mc.gate = gate;
    mc.scale = ScaleConfig::IDENTITY;
    let mut model = init_model(mc)?;
    let log = train(&mut model, &corpora.train, &corpora.dev, &cfg.train)?;
    let sources: Vec<Vec<TokenId>> = corpora.test.iter().map(|p| p.source.clone()).collect();
    let hyps: Vec<Vec<TokenId>> = translate_all(&model, &sources, cfg.beam, 1)?
        .into_iter()
        .map(|(h, _)| h.surface().to_vec())
        .collect();
    let refs: Vec<Vec<TokenId>> = corpora.test.iter().map(|p| p.target_words().to_vec()).collect();
    Ok(SystemResult {
        name: name.to_string(),
        parameters: model.config.parameter_count(),
        test_bleu: bleu_tokens(&hyps, &refs)?,
        log,
        model,
    })
}

/// Trains `systems` (in parallel across systems) and returns them in order.
pub fn run_systems(cfg: &RunConfig, corpora: &Corpora, systems: &[System], threads: usize) -> Result<Vec<SystemResult>> {
    pool(threads)?.install(|| {
        systems
            .par_iter()
            .map(|s| train_system(cfg, corpora, s.name, s.cell, s.gate))
            .collect()
    })
}

pub fn ablation_csv(results: &[SystemResult]) -> String {
    let mut out = String::from("system,parameters,epochs,best_epoch,dev_bleu,test_bleu\n");
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6}",
            r.name,
            r.parameters,
            r.log.stop_epoch,
            r.log.best_epoch,
            r.log.best_dev_bleu(),
            r.test_bleu
        )
        .unwrap();
    }
    out
}
