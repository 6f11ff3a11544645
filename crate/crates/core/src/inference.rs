//! Greedy and beam search, forced rescoring, gate/attention traces, and hard
//! alignments read off the attention matrix.
//!
//! Every search stops at `3·J` emitted tokens (EOS included) for a source of
//! length `J`.

use serde::Serialize;

use crate::corpus::{TokenId, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::evaluation::Link;
use crate::model::{EncodedSource, Model};
use crate::numerics::Matrix;

pub const LENGTH_FACTOR: usize = 3;

pub fn length_cap(source_len: usize) -> usize {
    LENGTH_FACTOR * source_len
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids; a finished hypothesis ends with EOS.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub live: bool,
}

impl Hypothesis {
    /// Tokens without the trailing EOS.
    pub fn surface(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DecodeTrace {
    /// Emitted ids including EOS when it was produced.
    pub tokens: Vec<TokenId>,
    /// One attention row per emitted token.
    pub alpha: Vec<Vec<f64>>,
    /// Gate values per step; empty for an ungated model.
    pub gates: Vec<Vec<f64>>,
}

impl DecodeTrace {
    pub fn z_mean_per_step(&self) -> Vec<f64> {
        self.gates
            .iter()
            .map(|z| z.iter().sum::<f64>() / z.len() as f64)
            .collect()
    }

    /// Mean over steps of the per-step mean gate value.
    pub fn sentence_gate_weight(&self) -> Option<f64> {
        let means = self.z_mean_per_step();
        if means.is_empty() {
            return None;
        }
        Some(means.iter().sum::<f64>() / means.len() as f64)
    }

    /// The soft alignment matrix, rows = target positions.
    pub fn alignment_matrix(&self) -> Matrix {
        let cols = self.alpha.first().map_or(0, Vec::len);
        Matrix::from_vec(self.alpha.len(), cols, self.alpha.concat()).expect("alpha rows share one length")
    }

    /// One JSON object with `tokens`, `alpha`, `z_mean_per_step`,
    /// `sentence_gate_weight`. Tokens are spelled with `vocab` when given.
    pub fn to_json(&self, vocab: Option<&Vocabulary>) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            tokens: Vec<String>,
            alpha: &'a [Vec<f64>],
            z_mean_per_step: Vec<f64>,
            sentence_gate_weight: Option<f64>,
        }
        let tokens = self
            .tokens
            .iter()
            .map(|&t| vocab.map_or_else(|| t.to_string(), |v| v.token(t).to_string()))
            .collect();
        serde_json::to_string(&Line {
            tokens,
            alpha: &self.alpha,
            z_mean_per_step: self.z_mean_per_step(),
            sentence_gate_weight: self.sentence_gate_weight(),
        })
        .expect("trace serializes")
    }
}

fn check_source(source: &[TokenId]) -> Result<()> {
    if source.is_empty() {
        return Err(Error::Input("cannot decode an empty source sentence".into()));
    }
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Argmax decoding, ties to the lowest id. The returned tokens drop EOS;
/// the trace keeps it.
pub fn greedy_decode(model: &Model, source: &[TokenId]) -> Result<(Hypothesis, DecodeTrace)> {
    check_source(source)?;
    let enc = model.encode_source(source)?;
    let cap = length_cap(source.len());
    let mut trace = DecodeTrace::default();
    let mut t = enc.t0.clone();
    let mut y = BOS;
    let mut log_prob = 0.0;
    while trace.tokens.len() < cap {
        let step = model.step(&enc, y, &t)?;
        y = argmax(&step.log_probs);
        log_prob += step.log_probs[y];
        record(&mut trace, y, &step);
        t = step.cell.t_new;
        if y == EOS {
            break;
        }
    }
    let hyp = Hypothesis {
        live: y != EOS,
        tokens: trace.tokens.clone(),
        log_prob,
    };
    Ok((hyp, trace))
}

fn record(trace: &mut DecodeTrace, y: TokenId, step: &crate::model::StepCache) {
    trace.tokens.push(y);
    trace.alpha.push(step.attention.alpha.0.clone());
    if let Some(z) = step.gate() {
        trace.gates.push(z.values());
    }
}

/// Teacher-forced pass over `tokens`; returns their total log probability
/// and the trace of that pass.
pub fn score_sequence(model: &Model, source: &[TokenId], tokens: &[TokenId]) -> Result<(f64, DecodeTrace)> {
    check_source(source)?;
    let enc = model.encode_source(source)?;
    score_encoded(model, &enc, tokens)
}

fn score_encoded(model: &Model, enc: &EncodedSource, tokens: &[TokenId]) -> Result<(f64, DecodeTrace)> {
    let mut trace = DecodeTrace::default();
    let mut t = enc.t0.clone();
    let mut y_prev = BOS;
    let mut log_prob = 0.0;
    for &y in tokens {
        let step = model.step(enc, y_prev, &t)?;
        if y >= step.log_probs.dim() {
            return Err(Error::Input(format!("token id {y} outside target vocabulary")));
        }
        log_prob += step.log_probs[y];
        record(&mut trace, y, &step);
        t = step.cell.t_new;
        y_prev = y;
    }
    Ok((log_prob, trace))
}

struct Beam {
    hyp: Hypothesis,
    state: Vec<f64>,
}

/// Beam search of `width` with the standard `3·J` cap.
pub fn beam_decode(model: &Model, source: &[TokenId], width: usize) -> Result<(Hypothesis, DecodeTrace)> {
    beam_decode_with_cap(model, source, width, length_cap(source.len()))
}

/// Beam search with an explicit cap on emitted tokens. Each step keeps the
/// `width` best extensions by total log probability (ties: earlier beam,
/// then lower id); extensions ending in EOS are set aside as finished.
/// Search ends when nothing is live, the cap is reached, or the best
/// finished score already beats every live one.
pub fn beam_decode_with_cap(
    model: &Model,
    source: &[TokenId],
    width: usize,
    cap: usize,
) -> Result<(Hypothesis, DecodeTrace)> {
    check_source(source)?;
    if width == 0 {
        return Err(Error::Config("beam width must be >= 1".into()));
    }
    if cap == 0 {
        return Err(Error::Config("length cap must be >= 1".into()));
    }
    let enc = model.encode_source(source)?;
    let mut live = vec![Beam {
        hyp: Hypothesis {
            tokens: vec![],
            log_prob: 0.0,
            live: true,
        },
        state: enc.t0.clone(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..cap {
        let mut cand: Vec<(f64, usize, TokenId)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (b, beam) in live.iter().enumerate() {
            let y_prev = beam.hyp.tokens.last().copied().unwrap_or(BOS);
            let step = model.step(&enc, y_prev, &beam.state)?;
            for (y, lp) in step.log_probs.iter().enumerate() {
                cand.push((beam.hyp.log_prob + lp, b, y));
            }
            states.push(step.cell.t_new);
        }
        cand.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        cand.truncate(width);

        let mut next = Vec::with_capacity(width);
        for (score, b, y) in cand {
            let mut tokens = live[b].hyp.tokens.clone();
            tokens.push(y);
            let hyp = Hypothesis {
                tokens,
                log_prob: score,
                live: y != EOS,
            };
            if y == EOS {
                finished.push(hyp);
            } else {
                next.push(Beam {
                    hyp,
                    state: states[b].clone(),
                });
            }
        }
        live = next;
        let best_finished = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|b| b.hyp.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || best_finished >= best_live {
            break;
        }
    }

    let best = pick_best(finished).or_else(|| pick_best(live.into_iter().map(|b| b.hyp).collect()));
    let best = best.expect("beam search keeps at least one hypothesis");
    let (_, trace) = score_encoded(model, &enc, &best.tokens)?;
    Ok((best, trace))
}

/// Highest log probability; earliest on ties.
fn pick_best(hyps: Vec<Hypothesis>) -> Option<Hypothesis> {
    let mut best: Option<Hypothesis> = None;
    for h in hyps {
        if best.as_ref().is_none_or(|b| h.log_prob > b.log_prob) {
            best = Some(h);
        }
    }
    best
}

/// One link per target row: the argmax source position, lowest on ties.
/// Links are 1-based `(target_pos, source_pos)`.
pub fn extract_alignment(trace: &DecodeTrace) -> Result<Vec<Link>> {
    if trace.alpha.is_empty() {
        return Err(Error::Input("alignment of an empty trace".into()));
    }
    Ok(trace
        .alpha
        .iter()
        .enumerate()
        .map(|(i, row)| (i + 1, argmax(row) + 1))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellKind, GateConfig, GateVariant, ScaleConfig};
    use crate::model::{init_model, set_matrix, ModelConfig};

    fn config(variant: GateVariant, seed: u64) -> ModelConfig {
        ModelConfig {
            emb_dim: 4,
            hidden_dim: 5,
            att_dim: 5,
            src_vocab: 9,
            tgt_vocab: 9,
            cell: CellKind::Gru,
            gate: GateConfig::new(variant),
            scale: ScaleConfig::IDENTITY,
            seed,
        }
    }

    #[test]
    fn rigged_eos_gives_empty_translation() {
        let mut m = init_model(config(GateVariant::None, 1)).unwrap();
        // Only the first step matters: push the EOS logit up along e(BOS).
        let mut v = Matrix::zeros(9, 4);
        let bos = m.target_embedding(BOS).to_vec();
        for k in 0..4 {
            v.set(EOS, k, 1e4 * bos[k].signum());
        }
        set_matrix(&mut m.params.v_o, v).unwrap();
        let (h, trace) = greedy_decode(&m, &[3, 4, 5]).unwrap();
        assert!(h.surface().is_empty());
        assert_eq!(trace.tokens, vec![EOS]);
        assert!(!h.live);
    }

    #[test]
    fn greedy_respects_cap() {
        for seed in 0..30 {
            let m = init_model(config(GateVariant::Both, seed)).unwrap();
            let src = vec![3, 4, 5, 6, 7];
            let (h, trace) = greedy_decode(&m, &src).unwrap();
            assert!(h.tokens.len() <= 15);
            assert_eq!(trace.alpha.len(), trace.tokens.len());
            assert_eq!(trace.gates.len(), trace.tokens.len());
        }
    }

    #[test]
    fn alignment_examples() {
        let t = DecodeTrace {
            tokens: vec![3, 4],
            alpha: vec![vec![1.0], vec![1.0]],
            gates: vec![],
        };
        assert_eq!(extract_alignment(&t).unwrap(), vec![(1, 1), (2, 1)]);
        let t = DecodeTrace {
            tokens: vec![3, 4, 5],
            alpha: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            gates: vec![],
        };
        assert_eq!(extract_alignment(&t).unwrap(), vec![(1, 1), (2, 2), (3, 3)]);
        let t = DecodeTrace {
            tokens: vec![3],
            alpha: vec![vec![0.2, 0.5, 0.3]],
            gates: vec![],
        };
        assert_eq!(extract_alignment(&t).unwrap(), vec![(1, 2)]);
        let tie = DecodeTrace {
            tokens: vec![3],
            alpha: vec![vec![0.4, 0.4, 0.2]],
            gates: vec![],
        };
        assert_eq!(extract_alignment(&tie).unwrap(), vec![(1, 1)]);
        assert!(extract_alignment(&DecodeTrace::default()).is_err());
    }

    #[test]
    fn trace_json_fields() {
        let t = DecodeTrace {
            tokens: vec![3, EOS],
            alpha: vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            gates: vec![vec![0.2, 0.4], vec![0.6, 0.8]],
        };
        let v: serde_json::Value = serde_json::from_str(&t.to_json(None)).unwrap();
        assert_eq!(v["tokens"], serde_json::json!(["3", "2"]));
        assert_eq!(v["z_mean_per_step"], serde_json::json!([0.30000000000000004, 0.7]));
        assert!((v["sentence_gate_weight"].as_f64().unwrap() - 0.5).abs() < 1e-12);
        let ungated = DecodeTrace {
            gates: vec![],
            ..t
        };
        let v: serde_json::Value = serde_json::from_str(&ungated.to_json(None)).unwrap();
        assert!(v["sentence_gate_weight"].is_null());
    }

    #[test]
    fn errors() {
        let m = init_model(config(GateVariant::None, 1)).unwrap();
        assert!(greedy_decode(&m, &[]).is_err());
        assert!(beam_decode(&m, &[3], 0).is_err());
        assert!(score_sequence(&m, &[3], &[42]).is_err());
    }
}
