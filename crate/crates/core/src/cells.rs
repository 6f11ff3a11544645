//! Decoder state updates.
//!
//! Every cell splits its preactivation into a target part
//! `T = W e(y_prev) + U t_prev` and a source part `S = C s`. The `(a, b)`
//! scaling probe multiplies them first (`b·T`, `a·S`), then the context gate
//! (if any) reweights them, then the activation is applied:
//!
//! | variant         | preactivation            |
//! |-----------------|--------------------------|
//! | none            | `T + S`                  |
//! | source          | `T + z∘S`                |
//! | target          | `z∘T + S`                |
//! | both            | `(1-z)∘T + z∘S`          |
//! | gating scalar   | `T + z·S` (scalar `z`)   |
//!
//! The gate is `z = σ(W_z e(y_prev) + U_z t_prev + C_z s)`, with the `W_z`
//! and `C_z` terms dropped when their input is switched off. The gating
//! scalar is `σ(u_z·t_prev + b_z)`.
//!
//! A GRU cell has three preactivations (reset, update, candidate); the single
//! gate value of the step is applied to the `T`/`S` split of each of them.
//! The candidate's target part uses `U_c (r∘t_prev)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, Param, Vector};
use crate::rng::XorShift64Star;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Vanilla,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 2] = [CellKind::Vanilla, CellKind::Gru];

    /// Number of `(W, U, C)` blocks the cell owns.
    pub fn blocks(self) -> usize {
        match self {
            CellKind::Vanilla => 1,
            CellKind::Gru => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Vanilla => "vanilla",
            CellKind::Gru => "gru",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(CellKind::Vanilla),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVariant {
    None,
    Source,
    Target,
    Both,
    GatingScalar,
}

impl GateVariant {
    pub const ALL: [GateVariant; 5] = [
        GateVariant::None,
        GateVariant::Source,
        GateVariant::Target,
        GateVariant::Both,
        GateVariant::GatingScalar,
    ];
}

impl fmt::Display for GateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateVariant::None => "none",
            GateVariant::Source => "source",
            GateVariant::Target => "target",
            GateVariant::Both => "both",
            GateVariant::GatingScalar => "gating_scalar",
        })
    }
}

impl FromStr for GateVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GateVariant::None),
            "source" => Ok(GateVariant::Source),
            "target" => Ok(GateVariant::Target),
            "both" => Ok(GateVariant::Both),
            "gating_scalar" => Ok(GateVariant::GatingScalar),
            other => Err(Error::Config(format!("unknown gate variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Elementwise,
    Scalar,
}

/// Which gate inputs are wired in besides `t_prev`, which always is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateInputs {
    pub source: bool,
    pub prev_word: bool,
}

impl GateInputs {
    pub const ALL: GateInputs = GateInputs {
        source: true,
        prev_word: true,
    };
    pub const STATE_ONLY: GateInputs = GateInputs {
        source: false,
        prev_word: false,
    };
    pub const STATE_AND_SOURCE: GateInputs = GateInputs {
        source: true,
        prev_word: false,
    };
}

impl fmt::Display for GateInputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("t")?;
        if self.source {
            f.write_str("+s")?;
        }
        if self.prev_word {
            f.write_str("+y")?;
        }
        Ok(())
    }
}

impl FromStr for GateInputs {
    type Err = Error;
    /// Comma or plus separated subset of `t`, `s`, `y`; `t` is mandatory.
    fn from_str(s: &str) -> Result<Self> {
        let mut inputs = GateInputs::STATE_ONLY;
        let mut has_state = false;
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "t" => has_state = true,
                "s" => inputs.source = true,
                "y" => inputs.prev_word = true,
                other => return Err(Error::Config(format!("unknown gate input `{other}`"))),
            }
        }
        if !has_state {
            return Err(Error::Config("gate inputs must include `t`".into()));
        }
        Ok(inputs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateConfig {
    pub variant: GateVariant,
    pub inputs: GateInputs,
    pub granularity: Granularity,
}

impl GateConfig {
    pub fn new(variant: GateVariant) -> Self {
        match variant {
            GateVariant::GatingScalar => GateConfig {
                variant,
                inputs: GateInputs::STATE_ONLY,
                granularity: Granularity::Scalar,
            },
            _ => GateConfig {
                variant,
                inputs: GateInputs::ALL,
                granularity: Granularity::Elementwise,
            },
        }
    }

    pub fn none() -> Self {
        GateConfig::new(GateVariant::None)
    }

    pub fn with_inputs(mut self, inputs: GateInputs) -> Self {
        self.inputs = inputs;
        self
    }

    pub fn is_gated(&self) -> bool {
        self.variant != GateVariant::None
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant {
            GateVariant::GatingScalar => {
                if self.granularity != Granularity::Scalar || self.inputs != GateInputs::STATE_ONLY {
                    return Err(Error::Config(
                        "gating scalar must be scalar-valued with inputs {t}".into(),
                    ));
                }
            }
            GateVariant::Source | GateVariant::Target | GateVariant::Both => {
                if self.granularity != Granularity::Elementwise {
                    return Err(Error::Config(format!(
                        "context gate ({}) must be elementwise",
                        self.variant
                    )));
                }
            }
            GateVariant::None => {}
        }
        Ok(())
    }
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig::none()
    }
}

impl fmt::Display for GateConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            GateVariant::None | GateVariant::GatingScalar => write!(f, "{}", self.variant),
            v => write!(f, "{v}[{}]", self.inputs),
        }
    }
}

/// Ratios `a` (source) and `b` (target) applied before gating.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub a: f64,
    pub b: f64,
}

impl ScaleConfig {
    pub const IDENTITY: ScaleConfig = ScaleConfig { a: 1.0, b: 1.0 };

    pub fn new(a: f64, b: f64) -> Result<Self> {
        let s = ScaleConfig { a, b };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "scale ratios must lie in [0, 1], got ({}, {})",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig::IDENTITY
    }
}

/// One `(W, U, C)` triple feeding a single preactivation.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextBlock {
    /// `n × m`
    pub w: Param,
    /// `n × n`
    pub u: Param,
    /// `n × n'`
    pub c: Param,
}

impl ContextBlock {
    fn new(m: usize, n: usize, n_src: usize, scale: f64, rng: &mut XorShift64Star) -> Self {
        ContextBlock {
            w: Param::uniform(n, m, scale, rng),
            u: Param::uniform(n, n, scale, rng),
            c: Param::uniform(n, n_src, scale, rng),
        }
    }

    fn params(&self) -> [&Param; 3] {
        [&self.w, &self.u, &self.c]
    }

    fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.w, &mut self.u, &mut self.c]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateParams {
    Elementwise {
        w_z: Param,
        u_z: Param,
        c_z: Param,
    },
    Scalar {
        /// `1 × n`
        u_z: Param,
        /// `1 × 1`
        b_z: Param,
    },
}

impl GateParams {
    fn params(&self) -> Vec<&Param> {
        match self {
            GateParams::Elementwise { w_z, u_z, c_z } => vec![w_z, u_z, c_z],
            GateParams::Scalar { u_z, b_z } => vec![u_z, b_z],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            GateParams::Elementwise { w_z, u_z, c_z } => vec![w_z, u_z, c_z],
            GateParams::Scalar { u_z, b_z } => vec![u_z, b_z],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    /// One block for vanilla; reset, update, candidate for GRU.
    pub blocks: Vec<ContextBlock>,
    /// Present iff the gate variant is not `none`.
    pub gate: Option<GateParams>,
}

pub const RESET: usize = 0;
pub const UPDATE: usize = 1;
pub const CANDIDATE: usize = 2;

impl CellParams {
    pub fn new(
        m: usize,
        n: usize,
        n_src: usize,
        kind: CellKind,
        cfg: &GateConfig,
        scale: f64,
        rng: &mut XorShift64Star,
    ) -> Self {
        let blocks = (0..kind.blocks())
            .map(|_| ContextBlock::new(m, n, n_src, scale, rng))
            .collect();
        let gate = match cfg.variant {
            GateVariant::None => None,
            GateVariant::GatingScalar => Some(GateParams::Scalar {
                u_z: Param::uniform(1, n, scale, rng),
                b_z: Param::uniform(1, 1, scale, rng),
            }),
            _ => Some(GateParams::Elementwise {
                w_z: Param::uniform(n, m, scale, rng),
                u_z: Param::uniform(n, n, scale, rng),
                c_z: Param::uniform(n, n_src, scale, rng),
            }),
        };
        CellParams { kind, blocks, gate }
    }

    /// `(m, n, n')`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let b = &self.blocks[0];
        (b.w.value.cols(), b.u.value.rows(), b.c.value.cols())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        if let Some(g) = &self.gate {
            v.extend(g.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        if let Some(g) = &mut self.gate {
            v.extend(g.params_mut());
        }
        v
    }

    pub fn names(&self) -> Vec<String> {
        let tags: &[&str] = match self.kind {
            CellKind::Vanilla => &[""],
            CellKind::Gru => &["_r", "_u", "_c"],
        };
        let mut v: Vec<String> = tags
            .iter()
            .flat_map(|t| ["w", "u", "c"].map(|m| format!("cell.{m}{t}")))
            .collect();
        match &self.gate {
            Some(GateParams::Elementwise { .. }) => {
                v.extend(["gate.w_z", "gate.u_z", "gate.c_z"].map(String::from))
            }
            Some(GateParams::Scalar { .. }) => v.extend(["gate.u_z", "gate.b_z"].map(String::from)),
            None => {}
        }
        v
    }
}

/// Gate output: one weight per state coordinate, or a single scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GateValue {
    Vector(Vector),
    Scalar(f64),
}

impl GateValue {
    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        match self {
            GateValue::Vector(v) => v[i],
            GateValue::Scalar(z) => *z,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            GateValue::Vector(v) => v.iter().sum::<f64>() / v.len() as f64,
            GateValue::Scalar(z) => *z,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            GateValue::Vector(v) => v.0.clone(),
            GateValue::Scalar(z) => vec![*z],
        }
    }

    /// Constant gate of `n` coordinates (or a scalar), used to pin `z` in
    /// equivalence checks.
    pub fn constant(cfg: &GateConfig, n: usize, z: f64) -> Self {
        match cfg.granularity {
            Granularity::Elementwise => GateValue::Vector(Vector(vec![z; n])),
            Granularity::Scalar => GateValue::Scalar(z),
        }
    }
}

fn check_dims(y_emb: &[f64], t_prev: &[f64], s: &[f64], params: &CellParams) -> Result<()> {
    let (m, n, n_src) = params.dims();
    for (name, got, want) in [
        ("e(y_prev)", y_emb.len(), m),
        ("t_prev", t_prev.len(), n),
        ("s", s.len(), n_src),
    ] {
        if got != want {
            return Err(Error::shape(
                format!("cell expecting {name} of dim {want}"),
                format!("{name} of dim {got}"),
            ));
        }
    }
    Ok(())
}

fn gate_preactivation(y_emb: &[f64], t_prev: &[f64], s: &[f64], cfg: &GateConfig, params: &CellParams) -> Result<Vec<f64>> {
    match (&params.gate, cfg.variant) {
        (_, GateVariant::None) => Err(Error::Contract("compute_gate with gate variant `none`".into())),
        (Some(GateParams::Scalar { u_z, b_z }), GateVariant::GatingScalar) => {
            Ok(vec![dot(u_z.value.data(), t_prev) + b_z.value.get(0, 0)])
        }
        (Some(GateParams::Elementwise { w_z, u_z, c_z }), _) if cfg.variant != GateVariant::GatingScalar => {
            let mut g = vec![0.0; t_prev.len()];
            u_z.value.gemv_acc(t_prev, &mut g);
            if cfg.inputs.prev_word {
                w_z.value.gemv_acc(y_emb, &mut g);
            }
            if cfg.inputs.source {
                c_z.value.gemv_acc(s, &mut g);
            }
            Ok(g)
        }
        _ => Err(Error::Contract(format!(
            "gate parameters do not match gate variant `{}`",
            cfg.variant
        ))),
    }
}

pub fn compute_gate(
    y_emb: &[f64],
    t_prev: &[f64],
    s: &[f64],
    cfg: &GateConfig,
    params: &CellParams,
) -> Result<GateValue> {
    check_dims(y_emb, t_prev, s, params)?;
    let pre = gate_preactivation(y_emb, t_prev, s, cfg, params)?;
    Ok(match cfg.granularity {
        Granularity::Scalar => GateValue::Scalar(sigmoid(pre[0])),
        Granularity::Elementwise => GateValue::Vector(pre.iter().map(|&v| sigmoid(v)).collect::<Vec<_>>().into()),
    })
}

/// Coefficients `(c_T, c_S)` so that the mixed preactivation is
/// `c_T·T + c_S·S` at coordinate `i`.
#[inline]
fn mix_coefficients(variant: GateVariant, scale: ScaleConfig, z: Option<&GateValue>, i: usize) -> (f64, f64) {
    let (a, b) = (scale.a, scale.b);
    match (variant, z) {
        (GateVariant::None, _) | (_, None) => (b, a),
        (GateVariant::Source, Some(z)) | (GateVariant::GatingScalar, Some(z)) => (b, a * z.at(i)),
        (GateVariant::Target, Some(z)) => (b * z.at(i), a),
        (GateVariant::Both, Some(z)) => {
            let zi = z.at(i);
            (b * (1.0 - zi), a * zi)
        }
    }
}

/// d(preactivation_i)/d(z) per unit `dP_i`.
#[inline]
fn mix_gate_partial(variant: GateVariant, scale: ScaleConfig, t: f64, s: f64) -> f64 {
    match variant {
        GateVariant::None => 0.0,
        GateVariant::Source | GateVariant::GatingScalar => scale.a * s,
        GateVariant::Target => scale.b * t,
        GateVariant::Both => scale.a * s - scale.b * t,
    }
}

/// Everything one step needs for backprop.
#[derive(Clone, Debug)]
pub struct CellCache {
    pub y_emb: Vec<f64>,
    pub t_prev: Vec<f64>,
    pub s: Vec<f64>,
    pub gate: Option<GateValue>,
    /// Unscaled target/source parts per block.
    t_parts: Vec<Vec<f64>>,
    s_parts: Vec<Vec<f64>>,
    /// Activation of each block: `t` for vanilla, `r`, `u`, `c` for GRU.
    acts: Vec<Vec<f64>>,
    pub t_new: Vec<f64>,
}

/// Gradients flowing out of a cell step into its inputs.
#[derive(Clone, Debug)]
pub struct CellInputGrads {
    pub y_emb: Vec<f64>,
    pub t_prev: Vec<f64>,
    pub s: Vec<f64>,
}

pub struct CellStep<'a> {
    pub kind: CellKind,
    pub cfg: &'a GateConfig,
    pub scale: ScaleConfig,
    pub params: &'a CellParams,
}

impl CellStep<'_> {
    /// Forward step with `gate` supplied by the caller.
    pub fn forward_with_gate(&self, y_emb: &[f64], t_prev: &[f64], s: &[f64], gate: Option<GateValue>) -> CellCache {
        let (_, n, _) = self.params.dims();
        let variant = self.cfg.variant;
        let z = gate.as_ref();
        let mut t_parts = Vec::with_capacity(self.kind.blocks());
        let mut s_parts = Vec::with_capacity(self.kind.blocks());
        let mut acts = Vec::with_capacity(self.kind.blocks());

        let part = |block: &ContextBlock, state: &[f64]| {
            let mut tp = vec![0.0; n];
            block.w.value.gemv_acc(y_emb, &mut tp);
            block.u.value.gemv_acc(state, &mut tp);
            let mut sp = vec![0.0; n];
            block.c.value.gemv_acc(s, &mut sp);
            (tp, sp)
        };
        let mixed = |tp: &[f64], sp: &[f64], i: usize| {
            let (ct, cs) = mix_coefficients(variant, self.scale, z, i);
            ct * tp[i] + cs * sp[i]
        };

        let t_new = match self.kind {
            CellKind::Vanilla => {
                let (tp, sp) = part(&self.params.blocks[0], t_prev);
                let t: Vec<f64> = (0..n).map(|i| mixed(&tp, &sp, i).tanh()).collect();
                t_parts.push(tp);
                s_parts.push(sp);
                acts.push(t.clone());
                t
            }
            CellKind::Gru => {
                let mut gates = Vec::with_capacity(2);
                for k in [RESET, UPDATE] {
                    let (tp, sp) = part(&self.params.blocks[k], t_prev);
                    gates.push((0..n).map(|i| sigmoid(mixed(&tp, &sp, i))).collect::<Vec<f64>>());
                    t_parts.push(tp);
                    s_parts.push(sp);
                }
                let r = &gates[0];
                let rt: Vec<f64> = r.iter().zip(t_prev).map(|(a, b)| a * b).collect();
                let (tp, sp) = part(&self.params.blocks[CANDIDATE], &rt);
                let c: Vec<f64> = (0..n).map(|i| mixed(&tp, &sp, i).tanh()).collect();
                t_parts.push(tp);
                s_parts.push(sp);
                let u = &gates[1];
                let t: Vec<f64> = (0..n).map(|i| u[i] * t_prev[i] + (1.0 - u[i]) * c[i]).collect();
                acts.extend(gates);
                acts.push(c);
                t
            }
        };
        CellCache {
            y_emb: y_emb.to_vec(),
            t_prev: t_prev.to_vec(),
            s: s.to_vec(),
            gate,
            t_parts,
            s_parts,
            acts,
            t_new,
        }
    }

    pub fn forward(&self, y_emb: &[f64], t_prev: &[f64], s: &[f64]) -> Result<CellCache> {
        check_dims(y_emb, t_prev, s, self.params)?;
        let gate = if self.cfg.is_gated() {
            Some(compute_gate(y_emb, t_prev, s, self.cfg, self.params)?)
        } else {
            None
        };
        Ok(self.forward_with_gate(y_emb, t_prev, s, gate))
    }
}

/// Backprop of one step from `dt` (gradient w.r.t. the new state).
/// Parameter gradients accumulate into `params`; gradients w.r.t. the step
/// inputs are returned. The gate is treated as computed from the inputs.
pub fn cell_backward(
    kind: CellKind,
    cfg: &GateConfig,
    scale: ScaleConfig,
    params: &mut CellParams,
    cache: &CellCache,
    dt: &[f64],
) -> CellInputGrads {
    let (m, n, n_src) = params.dims();
    let variant = cfg.variant;
    let z = cache.gate.as_ref();
    let mut d_y = vec![0.0; m];
    let mut d_t = vec![0.0; n];
    let mut d_s = vec![0.0; n_src];
    let mut d_z = vec![0.0; n];

    // Splits dP into dT/dS, collects dz, and pushes through the block.
    let mut through_block = |block: &mut ContextBlock, k: usize, dp: &[f64], state: &[f64], d_state: &mut [f64], d_z: &mut [f64]| {
        let tp = &cache.t_parts[k];
        let sp = &cache.s_parts[k];
        let mut dtp = vec![0.0; n];
        let mut dsp = vec![0.0; n];
        for i in 0..n {
            let (ct, cs) = mix_coefficients(variant, scale, z, i);
            dtp[i] = dp[i] * ct;
            dsp[i] = dp[i] * cs;
            d_z[i] += dp[i] * mix_gate_partial(variant, scale, tp[i], sp[i]);
        }
        block.w.grad.outer_acc(&dtp, &cache.y_emb);
        block.w.value.gemv_t_acc(&dtp, &mut d_y);
        block.u.grad.outer_acc(&dtp, state);
        block.u.value.gemv_t_acc(&dtp, d_state);
        block.c.grad.outer_acc(&dsp, &cache.s);
        block.c.value.gemv_t_acc(&dsp, &mut d_s);
    };

    match kind {
        CellKind::Vanilla => {
            let t = &cache.acts[0];
            let dp: Vec<f64> = (0..n).map(|i| dt[i] * (1.0 - t[i] * t[i])).collect();
            through_block(&mut params.blocks[0], 0, &dp, &cache.t_prev, &mut d_t, &mut d_z);
        }
        CellKind::Gru => {
            let (r, u, c) = (&cache.acts[RESET], &cache.acts[UPDATE], &cache.acts[CANDIDATE]);
            let tp = &cache.t_prev;
            for i in 0..n {
                d_t[i] += dt[i] * u[i];
            }
            let dpc: Vec<f64> = (0..n).map(|i| dt[i] * (1.0 - u[i]) * (1.0 - c[i] * c[i])).collect();
            let dpu: Vec<f64> = (0..n)
                .map(|i| dt[i] * (tp[i] - c[i]) * u[i] * (1.0 - u[i]))
                .collect();
            let rt: Vec<f64> = r.iter().zip(tp).map(|(a, b)| a * b).collect();
            let mut d_rt = vec![0.0; n];
            through_block(&mut params.blocks[CANDIDATE], CANDIDATE, &dpc, &rt, &mut d_rt, &mut d_z);
            let dpr: Vec<f64> = (0..n).map(|i| d_rt[i] * tp[i] * r[i] * (1.0 - r[i])).collect();
            for i in 0..n {
                d_t[i] += d_rt[i] * r[i];
            }
            through_block(&mut params.blocks[UPDATE], UPDATE, &dpu, tp, &mut d_t, &mut d_z);
            through_block(&mut params.blocks[RESET], RESET, &dpr, tp, &mut d_t, &mut d_z);
        }
    }

    match (&mut params.gate, z) {
        (Some(GateParams::Elementwise { w_z, u_z, c_z }), Some(GateValue::Vector(zv))) => {
            let dg: Vec<f64> = (0..n).map(|i| d_z[i] * zv[i] * (1.0 - zv[i])).collect();
            u_z.grad.outer_acc(&dg, &cache.t_prev);
            u_z.value.gemv_t_acc(&dg, &mut d_t);
            if cfg.inputs.prev_word {
                w_z.grad.outer_acc(&dg, &cache.y_emb);
                w_z.value.gemv_t_acc(&dg, &mut d_y);
            }
            if cfg.inputs.source {
                c_z.grad.outer_acc(&dg, &cache.s);
                c_z.value.gemv_t_acc(&dg, &mut d_s);
            }
        }
        (Some(GateParams::Scalar { u_z, b_z }), Some(GateValue::Scalar(zs))) => {
            let dg = d_z.iter().sum::<f64>() * zs * (1.0 - zs);
            u_z.grad.outer_acc(&[dg], &cache.t_prev);
            u_z.value.gemv_t_acc(&[dg], &mut d_t);
            b_z.grad.data_mut()[0] += dg;
        }
        _ => {}
    }

    CellInputGrads {
        y_emb: d_y,
        t_prev: d_t,
        s: d_s,
    }
}

/// One decoder state update. Returns the new state and the gate value used
/// (absent for the ungated cell).
pub fn cell_step(
    y_emb: &[f64],
    t_prev: &[f64],
    s: &[f64],
    kind: CellKind,
    cfg: &GateConfig,
    scale: ScaleConfig,
    params: &CellParams,
) -> Result<(Vector, Option<GateValue>)> {
    let step = CellStep { kind, cfg, scale, params };
    let cache = step.forward(y_emb, t_prev, s)?;
    Ok((Vector(cache.t_new), cache.gate))
}

/// Like [`cell_step`] but with the gate value pinned by the caller.
pub fn cell_step_with_gate(
    y_emb: &[f64],
    t_prev: &[f64],
    s: &[f64],
    kind: CellKind,
    cfg: &GateConfig,
    scale: ScaleConfig,
    params: &CellParams,
    gate: Option<GateValue>,
) -> Result<Vector> {
    check_dims(y_emb, t_prev, s, params)?;
    let step = CellStep { kind, cfg, scale, params };
    Ok(Vector(step.forward_with_gate(y_emb, t_prev, s, gate).t_new))
}

/// Entries in one `(W, U, C)` block.
pub fn block_parameters(m: u64, n: u64, n_src: u64) -> u64 {
    n * m + n * n + n * n_src
}

/// Cell plus gate parameters. An elementwise gate adds one full block, the
/// gating scalar adds `n + 1`.
pub fn count_parameters(m: u64, n: u64, n_src: u64, kind: CellKind, cfg: &GateConfig) -> u64 {
    let block = block_parameters(m, n, n_src);
    let cell = kind.blocks() as u64 * block;
    let gate = match cfg.variant {
        GateVariant::None => 0,
        GateVariant::GatingScalar => n + 1,
        _ => block,
    };
    cell + gate
}

/// Parameters in the reset and update gates of a GRU decoder.
pub fn gru_gate_parameters(m: u64, n: u64, n_src: u64) -> u64 {
    count_parameters(m, n, n_src, CellKind::Gru, &GateConfig::none())
        - count_parameters(m, n, n_src, CellKind::Vanilla, &GateConfig::none())
}
