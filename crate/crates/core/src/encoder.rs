//! Bidirectional GRU encoder. Each source position gets the concatenation of
//! the forward state after reading `x_1..x_j` and the backward state after
//! reading `x_J..x_j`.

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Param, Vector};
use crate::rng::XorShift64Star;

const RESET: usize = 0;
const UPDATE: usize = 1;
const CANDIDATE: usize = 2;

/// GRU without biases. Index 0/1/2 of each array is reset/update/candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w: [Param; 3],
    pub u: [Param; 3],
}

impl GruParams {
    pub fn new(input: usize, hidden: usize, scale: f64, rng: &mut XorShift64Star) -> Self {
        let mut mk = |c| Param::uniform(hidden, c, scale, rng);
        let w = [mk(input), mk(input), mk(input)];
        let u = [mk(hidden), mk(hidden), mk(hidden)];
        GruParams { w, u }
    }

    pub fn hidden(&self) -> usize {
        self.u[0].value.rows()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.w.iter().chain(self.u.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.w.iter_mut().chain(self.u.iter_mut()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embedding: Param,
    pub forward: GruParams,
    pub backward: GruParams,
}

impl EncoderParams {
    pub fn new(vocab: usize, emb: usize, hidden: usize, scale: f64, rng: &mut XorShift64Star) -> Self {
        let embedding = Param::uniform(vocab, emb, scale, rng);
        let forward = GruParams::new(emb, hidden, scale, rng);
        let backward = GruParams::new(emb, hidden, scale, rng);
        EncoderParams {
            embedding,
            forward,
            backward,
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.embedding];
        v.extend(self.forward.params());
        v.extend(self.backward.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.forward.params_mut());
        v.extend(self.backward.params_mut());
        v
    }
}

/// One annotation `h_j` of dimension `2n` per source word.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotations {
    pub states: Vec<Vector>,
}

impl Annotations {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |h| h.dim())
    }
}

#[derive(Clone, Debug)]
struct GruStep {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    c: Vec<f64>,
}

fn gru_step(p: &GruParams, x: &[f64], h: &[f64]) -> (Vec<f64>, GruStep) {
    let n = p.hidden();
    let mut pre = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in [RESET, UPDATE, CANDIDATE] {
        p.w[k].value.gemv_acc(x, &mut pre[k]);
    }
    p.u[RESET].value.gemv_acc(h, &mut pre[RESET]);
    p.u[UPDATE].value.gemv_acc(h, &mut pre[UPDATE]);
    let r: Vec<f64> = pre[RESET].iter().map(|&v| sigmoid(v)).collect();
    let u: Vec<f64> = pre[UPDATE].iter().map(|&v| sigmoid(v)).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    p.u[CANDIDATE].value.gemv_acc(&rh, &mut pre[CANDIDATE]);
    let c: Vec<f64> = pre[CANDIDATE].iter().map(|v| v.tanh()).collect();
    let h_new = (0..n).map(|i| u[i] * h[i] + (1.0 - u[i]) * c[i]).collect();
    let step = GruStep {
        h_prev: h.to_vec(),
        r,
        u,
        c,
    };
    (h_new, step)
}

/// Backprop of one GRU step. Accumulates parameter gradients, adds the input
/// gradient to `dx`, and returns the gradient w.r.t. the previous state.
fn gru_step_backward(p: &mut GruParams, x: &[f64], s: &GruStep, dh_new: &[f64], dx: &mut [f64]) -> Vec<f64> {
    let n = dh_new.len();
    let mut dh: Vec<f64> = (0..n).map(|i| dh_new[i] * s.u[i]).collect();
    let dpu: Vec<f64> = (0..n)
        .map(|i| dh_new[i] * (s.h_prev[i] - s.c[i]) * s.u[i] * (1.0 - s.u[i]))
        .collect();
    let dpc: Vec<f64> = (0..n)
        .map(|i| dh_new[i] * (1.0 - s.u[i]) * (1.0 - s.c[i] * s.c[i]))
        .collect();

    let rh: Vec<f64> = s.r.iter().zip(&s.h_prev).map(|(a, b)| a * b).collect();
    p.w[CANDIDATE].grad.outer_acc(&dpc, x);
    p.u[CANDIDATE].grad.outer_acc(&dpc, &rh);
    p.w[CANDIDATE].value.gemv_t_acc(&dpc, dx);
    let mut drh = vec![0.0; n];
    p.u[CANDIDATE].value.gemv_t_acc(&dpc, &mut drh);
    let dpr: Vec<f64> = (0..n)
        .map(|i| drh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]))
        .collect();
    for i in 0..n {
        dh[i] += drh[i] * s.r[i];
    }

    for (k, dp) in [(UPDATE, &dpu), (RESET, &dpr)] {
        p.w[k].grad.outer_acc(dp, x);
        p.u[k].grad.outer_acc(dp, &s.h_prev);
        p.w[k].value.gemv_t_acc(dp, dx);
        p.u[k].value.gemv_t_acc(dp, &mut dh);
    }
    dh
}

/// Activations kept from [`encode_cached`] for [`encode_backward`].
#[derive(Clone, Debug)]
pub struct EncoderCache {
    source: Vec<TokenId>,
    forward: Vec<GruStep>,
    /// Indexed by source position, not by processing order.
    backward: Vec<GruStep>,
}

fn check_source(source: &[TokenId], params: &EncoderParams) -> Result<()> {
    if source.is_empty() {
        return Err(Error::Input("cannot encode an empty source sentence".into()));
    }
    let vocab = params.embedding.value.rows();
    if let Some(&bad) = source.iter().find(|&&t| t >= vocab) {
        return Err(Error::Input(format!(
            "source token id {bad} outside embedding table of {vocab} rows"
        )));
    }
    Ok(())
}

pub fn encode(source: &[TokenId], params: &EncoderParams) -> Result<Annotations> {
    encode_cached(source, params).map(|(a, _)| a)
}

pub fn encode_cached(source: &[TokenId], params: &EncoderParams) -> Result<(Annotations, EncoderCache)> {
    check_source(source, params)?;
    let n = params.hidden();
    let len = source.len();
    let emb = &params.embedding.value;

    let mut fwd_states = Vec::with_capacity(len);
    let mut fwd_steps = Vec::with_capacity(len);
    let mut h = vec![0.0; n];
    for &tok in source {
        let (h_new, step) = gru_step(&params.forward, emb.row(tok), &h);
        fwd_steps.push(step);
        fwd_states.push(h_new.clone());
        h = h_new;
    }

    let mut bwd_states = vec![Vec::new(); len];
    let mut bwd_steps: Vec<Option<GruStep>> = vec![None; len];
    let mut h = vec![0.0; n];
    for j in (0..len).rev() {
        let (h_new, step) = gru_step(&params.backward, emb.row(source[j]), &h);
        bwd_steps[j] = Some(step);
        bwd_states[j] = h_new.clone();
        h = h_new;
    }

    let states = fwd_states
        .into_iter()
        .zip(bwd_states)
        .map(|(mut f, b)| {
            f.extend_from_slice(&b);
            Vector(f)
        })
        .collect();
    let cache = EncoderCache {
        source: source.to_vec(),
        forward: fwd_steps,
        backward: bwd_steps.into_iter().map(Option::unwrap).collect(),
    };
    Ok((Annotations { states }, cache))
}

/// Accumulates encoder gradients given `d_annotations[j]` (dim `2n`).
pub fn encode_backward(params: &mut EncoderParams, cache: &EncoderCache, d_annotations: &[Vec<f64>]) {
    let n = params.hidden();
    let m = params.embedding.value.cols();
    let len = cache.source.len();
    debug_assert_eq!(d_annotations.len(), len);

    let mut dh = vec![0.0; n];
    for j in (0..len).rev() {
        for i in 0..n {
            dh[i] += d_annotations[j][i];
        }
        let tok = cache.source[j];
        let x = params.embedding.value.row(tok).to_vec();
        let mut dx = vec![0.0; m];
        dh = gru_step_backward(&mut params.forward, &x, &cache.forward[j], &dh, &mut dx);
        crate::numerics::axpy(1.0, &dx, params.embedding.grad.row_mut(tok));
    }

    let mut dh = vec![0.0; n];
    for j in 0..len {
        for i in 0..n {
            dh[i] += d_annotations[j][n + i];
        }
        let tok = cache.source[j];
        let x = params.embedding.value.row(tok).to_vec();
        let mut dx = vec![0.0; m];
        dh = gru_step_backward(&mut params.backward, &x, &cache.backward[j], &dh, &mut dx);
        crate::numerics::axpy(1.0, &dx, params.embedding.grad.row_mut(tok));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, ParamSet};

    fn params(seed: u64, scale: f64) -> EncoderParams {
        EncoderParams::new(9, 4, 5, scale, &mut XorShift64Star::new(seed))
    }

    impl ParamSet for EncoderParams {
        fn params(&self) -> Vec<&Param> {
            EncoderParams::params(self)
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            EncoderParams::params_mut(self)
        }
    }

    #[test]
    fn shape() {
        let a = encode(&[3, 4, 5], &params(1, 0.08)).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.states.iter().all(|h| h.dim() == 10));
    }

    #[test]
    fn zero_parameters_give_zero_annotations() {
        let a = encode(&[3, 4, 5, 6], &params(1, 0.0)).unwrap();
        assert!(a.states.iter().all(|h| h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn reversal_swaps_directions() {
        let p = params(2, 0.5);
        let src = [3, 7, 4, 8];
        let rev: Vec<_> = src.iter().rev().copied().collect();
        let mut q = p.clone();
        std::mem::swap(&mut q.forward, &mut q.backward);
        let a = encode(&src, &p).unwrap();
        let b = encode(&rev, &q).unwrap();
        let j = src.len();
        for k in 0..j {
            let (af, ab) = a.states[k].split_at(5);
            let (bf, bb) = b.states[j - 1 - k].split_at(5);
            assert_eq!(af, bb);
            assert_eq!(ab, bf);
        }
    }

    #[test]
    fn bounded_and_deterministic() {
        let p = params(3, 2.0);
        let a = encode(&[3, 4, 5, 6, 7, 8], &p).unwrap();
        assert_eq!(a, encode(&[3, 4, 5, 6, 7, 8], &p).unwrap());
        assert!(a.states.iter().flat_map(|h| h.iter()).all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn rejects_bad_input() {
        let p = params(1, 0.08);
        assert!(encode(&[], &p).is_err());
        assert!(encode(&[3, 9], &p).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Loss: a fixed random linear functional of all annotations.
        let mut p = params(5, 0.5);
        let src = [3, 5, 3, 8];
        let mut rng = XorShift64Star::new(11);
        let weights: Vec<Vec<f64>> = (0..src.len())
            .map(|_| (0..10).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let loss = |p: &EncoderParams| -> f64 {
            let a = encode(&src, p).unwrap();
            a.states
                .iter()
                .zip(&weights)
                .map(|(h, w)| crate::numerics::dot(h, w))
                .sum()
        };
        let (_, cache) = encode_cached(&src, &p).unwrap();
        encode_backward(&mut p, &cache, &weights);
        let err = grad_check(&mut p, loss, 1e-5).unwrap();
        assert!(err <= 1e-6, "max relative error {err}");
    }
}
