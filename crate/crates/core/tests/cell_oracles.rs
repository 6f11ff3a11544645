//! Decoder cells against a loop-by-loop reference and the identities that
//! tie the gated variants back to the plain cell.

use cgnmt::cells::{
    cell_step, cell_step_with_gate, compute_gate, CellKind, CellParams, GateConfig, GateParams, GateValue,
    GateVariant, ScaleConfig, CANDIDATE, RESET, UPDATE,
};
use cgnmt::numerics::Matrix;
use cgnmt::rng::XorShift64Star;

const M: usize = 3;
const N: usize = 4;
const NS: usize = 6;
const TRIALS: u64 = 1000;

fn mv(w: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| (0..w.cols()).map(|k| w.get(i, k) * x[k]).sum())
        .collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Inputs {
    y: Vec<f64>,
    t: Vec<f64>,
    s: Vec<f64>,
}

fn draw(rng: &mut XorShift64Star, kind: CellKind, cfg: &GateConfig) -> (CellParams, Inputs) {
    let p = CellParams::new(M, N, NS, kind, cfg, 0.8, rng);
    let mut v = |k: usize| (0..k).map(|_| rng.uniform(-1.5, 1.5)).collect::<Vec<_>>();
    let inputs = Inputs { y: v(M), t: v(N), s: v(NS) };
    (p, inputs)
}

/// Reference step with every multiplier spelled out per coordinate.
fn reference(kind: CellKind, variant: GateVariant, scale: ScaleConfig, p: &CellParams, x: &Inputs, z: &[f64]) -> Vec<f64> {
    let zi = |i: usize| if z.len() == 1 { z[0] } else { z[i] };
    let pre = |k: usize, state: &[f64]| -> Vec<f64> {
        let b = &p.blocks[k];
        let wy = mv(&b.w.value, &x.y);
        let ut = mv(&b.u.value, state);
        let cs = mv(&b.c.value, &x.s);
        (0..N)
            .map(|i| {
                let t = scale.b * (wy[i] + ut[i]);
                let s = scale.a * cs[i];
                match variant {
                    GateVariant::None => t + s,
                    GateVariant::Source | GateVariant::GatingScalar => t + zi(i) * s,
                    GateVariant::Target => zi(i) * t + s,
                    GateVariant::Both => (1.0 - zi(i)) * t + zi(i) * s,
                }
            })
            .collect()
    };
    match kind {
        CellKind::Vanilla => pre(0, &x.t).iter().map(|v| v.tanh()).collect(),
        CellKind::Gru => {
            let r: Vec<f64> = pre(RESET, &x.t).into_iter().map(sig).collect();
            let u: Vec<f64> = pre(UPDATE, &x.t).into_iter().map(sig).collect();
            let rt: Vec<f64> = (0..N).map(|i| r[i] * x.t[i]).collect();
            let c: Vec<f64> = pre(CANDIDATE, &rt).iter().map(|v| v.tanh()).collect();
            (0..N).map(|i| u[i] * x.t[i] + (1.0 - u[i]) * c[i]).collect()
        }
    }
}

fn reference_gate(cfg: &GateConfig, p: &CellParams, x: &Inputs) -> Vec<f64> {
    match p.gate.as_ref().unwrap() {
        GateParams::Elementwise { w_z, u_z, c_z } => {
            let mut g = mv(&u_z.value, &x.t);
            if cfg.inputs.prev_word {
                g.iter_mut().zip(mv(&w_z.value, &x.y)).for_each(|(a, b)| *a += b);
            }
            if cfg.inputs.source {
                g.iter_mut().zip(mv(&c_z.value, &x.s)).for_each(|(a, b)| *a += b);
            }
            g.into_iter().map(sig).collect()
        }
        GateParams::Scalar { u_z, b_z } => {
            vec![sig(mv(&u_z.value, &x.t)[0] + b_z.value.get(0, 0))]
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn matches_reference_for_every_variant_and_scale() {
    let mut rng = XorShift64Star::new(11);
    for kind in CellKind::ALL {
        for variant in GateVariant::ALL {
            let cfg = GateConfig::new(variant);
            for trial in 0..200 {
                let (p, x) = draw(&mut rng, kind, &cfg);
                let scale = if trial % 2 == 0 {
                    ScaleConfig::IDENTITY
                } else {
                    ScaleConfig::new(rng.next_f64(), rng.next_f64()).unwrap()
                };
                let (t, z) = cell_step(&x.y, &x.t, &x.s, kind, &cfg, scale, &p).unwrap();
                let z_ref = if cfg.is_gated() { reference_gate(&cfg, &p, &x) } else { vec![] };
                if let Some(z) = &z {
                    assert!(max_diff(&z.values(), &z_ref) <= 1e-12);
                }
                let want = reference(kind, variant, scale, &p, &x, &z_ref);
                assert!(max_diff(&t, &want) <= 1e-12, "{kind}/{variant}");
            }
        }
    }
}

/// Runs `variant` with a pinned gate and compares with the plain cell under
/// `scale`.
fn pinned_equivalence(variant: GateVariant, z: f64, scale: ScaleConfig) {
    let mut rng = XorShift64Star::new(variant as u64 * 31 + z.to_bits() % 97);
    let cfg = GateConfig::new(variant);
    let none = GateConfig::none();
    for kind in CellKind::ALL {
        let mut worst = 0.0f64;
        for _ in 0..TRIALS {
            let (p, x) = draw(&mut rng, kind, &cfg);
            let gate = GateValue::constant(&cfg, N, z);
            let gated = cell_step_with_gate(&x.y, &x.t, &x.s, kind, &cfg, ScaleConfig::IDENTITY, &p, Some(gate)).unwrap();
            let plain = cell_step_with_gate(&x.y, &x.t, &x.s, kind, &none, scale, &p, None).unwrap();
            worst = worst.max(max_diff(&gated, &plain));
        }
        assert!(worst <= 1e-12, "{kind}/{variant} z={z}: {worst:e}");
    }
}

#[test]
fn source_gate_open_is_baseline() {
    pinned_equivalence(GateVariant::Source, 1.0, ScaleConfig::IDENTITY);
}

#[test]
fn target_gate_open_is_baseline() {
    pinned_equivalence(GateVariant::Target, 1.0, ScaleConfig::IDENTITY);
}

#[test]
fn gating_scalar_open_is_baseline() {
    pinned_equivalence(GateVariant::GatingScalar, 1.0, ScaleConfig::IDENTITY);
}

#[test]
fn both_gate_at_one_is_source_only() {
    pinned_equivalence(GateVariant::Both, 1.0, ScaleConfig::new(1.0, 0.0).unwrap());
}

#[test]
fn both_gate_at_zero_is_target_only() {
    pinned_equivalence(GateVariant::Both, 0.0, ScaleConfig::new(0.0, 1.0).unwrap());
}

#[test]
fn source_only_preactivation_is_tanh_of_cs() {
    let mut rng = XorShift64Star::new(5);
    let none = GateConfig::none();
    for _ in 0..TRIALS {
        let (p, x) = draw(&mut rng, CellKind::Vanilla, &none);
        let t = cell_step(&x.y, &x.t, &x.s, CellKind::Vanilla, &none, ScaleConfig::new(1.0, 0.0).unwrap(), &p)
            .unwrap()
            .0;
        let want: Vec<f64> = mv(&p.blocks[0].c.value, &x.s).iter().map(|v| v.tanh()).collect();
        assert!(max_diff(&t, &want) <= 1e-12);
    }
}

#[test]
fn identity_scale_is_exactly_baseline() {
    let mut rng = XorShift64Star::new(6);
    for kind in CellKind::ALL {
        for variant in GateVariant::ALL {
            let cfg = GateConfig::new(variant);
            for _ in 0..TRIALS / 5 {
                let (p, x) = draw(&mut rng, kind, &cfg);
                let a = cell_step(&x.y, &x.t, &x.s, kind, &cfg, ScaleConfig::IDENTITY, &p).unwrap();
                let b = cell_step(&x.y, &x.t, &x.s, kind, &cfg, ScaleConfig::new(1.0, 1.0).unwrap(), &p).unwrap();
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn gate_outputs_in_open_interval() {
    let mut rng = XorShift64Star::new(7);
    for variant in [GateVariant::Both, GateVariant::GatingScalar] {
        let cfg = GateConfig::new(variant);
        for _ in 0..TRIALS {
            let (mut p, x) = draw(&mut rng, CellKind::Vanilla, &cfg);
            let blow = rng.uniform(-1e4, 1e4);
            for q in p.params_mut() {
                q.value.data_mut().iter_mut().for_each(|v| *v *= blow);
            }
            let z = compute_gate(&x.y, &x.t, &x.s, &cfg, &p).unwrap();
            assert!(z.values().iter().all(|&v| v > 0.0 && v < 1.0), "{z:?}");
        }
    }
}

#[test]
fn gate_is_monotone_in_its_preactivation() {
    let mut rng = XorShift64Star::new(8);
    let cfg = GateConfig::new(GateVariant::Both);
    for _ in 0..TRIALS / 4 {
        let (p, x) = draw(&mut rng, CellKind::Gru, &cfg);
        let z0 = compute_gate(&x.y, &x.t, &x.s, &cfg, &p).unwrap().values();
        for i in 0..N {
            // Raise row i of U_z along sign(t) so preactivation i grows by
            // 0.01·Σ|t_k| and nothing else moves.
            let mut q = p.clone();
            if let Some(GateParams::Elementwise { u_z, .. }) = &mut q.gate {
                for k in 0..N {
                    let v = u_z.value.get(i, k) + 0.01 * x.t[k].signum();
                    u_z.value.set(i, k, v);
                }
            }
            let z1 = compute_gate(&x.y, &x.t, &x.s, &cfg, &q).unwrap().values();
            for k in 0..N {
                if k == i {
                    assert!(z1[k] > z0[k]);
                } else {
                    assert_eq!(z1[k], z0[k]);
                }
            }
        }
    }
}

#[test]
fn vanilla_both_preactivation_lies_between_parts() {
    let mut rng = XorShift64Star::new(9);
    let cfg = GateConfig::new(GateVariant::Both);
    for _ in 0..TRIALS {
        let (p, x) = draw(&mut rng, CellKind::Vanilla, &cfg);
        let b = &p.blocks[0];
        let tp: Vec<f64> = mv(&b.w.value, &x.y).iter().zip(mv(&b.u.value, &x.t)).map(|(a, c)| a + c).collect();
        let sp = mv(&b.c.value, &x.s);
        let t = cell_step(&x.y, &x.t, &x.s, CellKind::Vanilla, &cfg, ScaleConfig::IDENTITY, &p).unwrap().0;
        for i in 0..N {
            let pre = t[i].atanh();
            let (lo, hi) = (tp[i].min(sp[i]), tp[i].max(sp[i]));
            assert!(pre >= lo - 1e-9 && pre <= hi + 1e-9, "{pre} not in [{lo}, {hi}]");
        }
    }
}
