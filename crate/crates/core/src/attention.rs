//! Additive attention: `e_j = v · tanh(W_a t_prev + U_a h_j)`, `α = softmax(e)`,
//! and the source context `s = Σ_j α_j h_j`.

use crate::encoder::Annotations;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, softmax, Param, Vector};
use crate::rng::XorShift64Star;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `d_a × n`, applied to the previous decoder state.
    pub w_a: Param,
    /// `d_a × n'`, applied to each annotation.
    pub u_a: Param,
    /// `d_a × 1` energy vector.
    pub v_a: Param,
}

impl AttentionParams {
    pub fn new(att: usize, state: usize, annotation: usize, scale: f64, rng: &mut XorShift64Star) -> Self {
        AttentionParams {
            w_a: Param::uniform(att, state, scale, rng),
            u_a: Param::uniform(att, annotation, scale, rng),
            v_a: Param::uniform(att, 1, scale, rng),
        }
    }

    pub fn att_dim(&self) -> usize {
        self.w_a.value.rows()
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w_a, &self.u_a, &self.v_a]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_a, &mut self.u_a, &mut self.v_a]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStep {
    pub alpha: Vector,
    pub context: Vector,
}

/// `U_a h_j` for every source position; independent of the decoding step.
#[derive(Clone, Debug)]
pub struct AttentionKeys(pub Vec<Vec<f64>>);

pub fn precompute_keys(annotations: &Annotations, params: &AttentionParams) -> AttentionKeys {
    let d = params.att_dim();
    AttentionKeys(
        annotations
            .states
            .iter()
            .map(|h| {
                let mut k = vec![0.0; d];
                params.u_a.value.gemv_acc(h, &mut k);
                k
            })
            .collect(),
    )
}

/// Per-step activations for [`align_backward`].
#[derive(Clone, Debug)]
pub struct AlignCache {
    /// `tanh(W_a t_prev + U_a h_j)` per position.
    act: Vec<Vec<f64>>,
}

fn check(t_prev: &[f64], annotations: &Annotations, params: &AttentionParams) -> Result<()> {
    if annotations.is_empty() {
        return Err(Error::Input("attention over zero annotations".into()));
    }
    if t_prev.len() != params.w_a.value.cols() {
        return Err(Error::shape(
            format!("W_a {}x{}", params.w_a.value.rows(), params.w_a.value.cols()),
            format!("state of dim {}", t_prev.len()),
        ));
    }
    if annotations.dim() != params.u_a.value.cols() {
        return Err(Error::shape(
            format!("U_a {}x{}", params.u_a.value.rows(), params.u_a.value.cols()),
            format!("annotation of dim {}", annotations.dim()),
        ));
    }
    Ok(())
}

pub fn align(t_prev: &[f64], annotations: &Annotations, params: &AttentionParams) -> Result<AttentionStep> {
    check(t_prev, annotations, params)?;
    let keys = precompute_keys(annotations, params);
    Ok(align_with_keys(t_prev, annotations, &keys, params).0)
}

pub fn align_with_keys(
    t_prev: &[f64],
    annotations: &Annotations,
    keys: &AttentionKeys,
    params: &AttentionParams,
) -> (AttentionStep, AlignCache) {
    let d = params.att_dim();
    let mut query = vec![0.0; d];
    params.w_a.value.gemv_acc(t_prev, &mut query);
    let v = params.v_a.value.data();
    let act: Vec<Vec<f64>> = keys
        .0
        .iter()
        .map(|k| k.iter().zip(&query).map(|(a, b)| (a + b).tanh()).collect())
        .collect();
    let energies: Vec<f64> = act.iter().map(|a: &Vec<f64>| dot(a, v)).collect();
    let alpha = softmax(&energies);
    let mut context = Vector::zeros(annotations.dim());
    for (a, h) in alpha.iter().zip(&annotations.states) {
        axpy(*a, h, &mut context);
    }
    (AttentionStep { alpha, context }, AlignCache { act })
}

/// Backprop of one alignment step given the context gradient `ds`.
/// Accumulates into `W_a`, `v_a`, `dt_prev`, `d_annotations`, and `d_keys`;
/// the `U_a` part is finished once per sentence by [`keys_backward`].
#[allow(clippy::too_many_arguments)]
pub fn align_backward(
    params: &mut AttentionParams,
    t_prev: &[f64],
    annotations: &Annotations,
    step: &AttentionStep,
    cache: &AlignCache,
    ds: &[f64],
    dt_prev: &mut [f64],
    d_annotations: &mut [Vec<f64>],
    d_keys: &mut [Vec<f64>],
) {
    let d = params.att_dim();
    let alpha = &step.alpha;
    let d_alpha: Vec<f64> = annotations.states.iter().map(|h| dot(h, ds)).collect();
    for (dh, &a) in d_annotations.iter_mut().zip(alpha.iter()) {
        axpy(a, ds, dh);
    }
    let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
    let mut d_query = vec![0.0; d];
    let v = params.v_a.value.data().to_vec();
    for j in 0..alpha.len() {
        let de = alpha[j] * (d_alpha[j] - mean);
        if de == 0.0 {
            continue;
        }
        let act = &cache.act[j];
        axpy(de, act, params.v_a.grad.data_mut());
        for k in 0..d {
            let g = de * v[k] * (1.0 - act[k] * act[k]);
            d_query[k] += g;
            d_keys[j][k] += g;
        }
    }
    params.w_a.grad.outer_acc(&d_query, t_prev);
    params.w_a.value.gemv_t_acc(&d_query, dt_prev);
}

pub fn keys_backward(
    params: &mut AttentionParams,
    annotations: &Annotations,
    d_keys: &[Vec<f64>],
    d_annotations: &mut [Vec<f64>],
) {
    for ((h, dk), dh) in annotations.states.iter().zip(d_keys).zip(d_annotations.iter_mut()) {
        params.u_a.grad.outer_acc(dk, h);
        params.u_a.value.gemv_t_acc(dk, dh);
    }
}
