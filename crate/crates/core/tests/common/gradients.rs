//! Tape gradients against central finite differences at 64-bit, grouped by
//! operation family.

use dsnet::losses::{ce_loss, re_loss, total_loss, LossConfig};
use dsnet::model::{self, DecoderKind, DsnetConfig, ReluPlacement};
use dsnet::tensor::ops::{self, BnConfig, ConvSpec, Mode, RunningStats};
use dsnet::tensor::{ParamStore, Session, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

/// One finite-difference comparison.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub seed: u64,
    pub err: f64,
}

pub type Checks = Vec<Check>;

fn record(out: &mut Checks, name: &str, seed: u64, err: f64) {
    out.push(Check {
        name: name.to_string(),
        seed,
        err,
    });
}

pub fn conv2d_every_geometry(seeds: u64) -> Checks {
    let mut out = Checks::new();
    for seed in 0..seeds {
        let mut r = rng(seed);
        for (k, s, p) in [(1, 1, 0), (3, 1, 0), (3, 2, 1), (3, 1, 1), (3, 2, 0), (1, 2, 0), (1, 1, 1)] {
            let spec = ConvSpec::new(k, s, p).unwrap();
            let (b, cin, cout) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
            let (h, w) = (r.gen_range(k..7), r.gen_range(k..7));
            let inputs = [
                random(&[b, cin, h, w], &mut r, -1.0, 1.0),
                random(&[cout, cin, k, k], &mut r, -1.0, 1.0),
                random(&[cout], &mut r, -1.0, 1.0),
            ];
            let err = check_op(seed, &inputs, |t, v| ops::conv2d(t, v[0], v[1], Some(v[2]), spec));
            record(&mut out, &format!("conv2d k{k} s{s} p{p}"), seed, err);
        }
    }
    out
}

pub fn linear_and_elementwise(seeds: u64) -> Checks {
    let mut out = Checks::new();
    for seed in 0..seeds {
        let mut r = rng(seed);
        let (b, din, dout) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..6));
        let inputs = [
            random(&[b, din], &mut r, -1.0, 1.0),
            random(&[dout, din], &mut r, -1.0, 1.0),
            random(&[dout], &mut r, -1.0, 1.0),
        ];
        record(&mut out, "linear", seed, check_op(seed, &inputs, |t, v| ops::linear(t, v[0], v[1], Some(v[2]))));

        let x = [away_from_zero(&[3, 4], &mut r, 1e-3)];
        record(&mut out, "relu", seed, check_op(seed, &x, |t, v| Ok(ops::relu(t, v[0]))));
        let x = [random(&[3, 4], &mut r, -8.0, 8.0)];
        record(&mut out, "sigmoid", seed, check_op(seed, &x, |t, v| Ok(ops::sigmoid(t, v[0]))));
        let xy = [random(&[2, 5], &mut r, -2.0, 2.0), random(&[2, 5], &mut r, -2.0, 2.0)];
        record(&mut out, "add", seed, check_op(seed, &xy, |t, v| ops::add(t, v[0], v[1])));
        record(&mut out, "mul", seed, check_op(seed, &xy, |t, v| ops::mul(t, v[0], v[1])));
        record(&mut out, "scale", seed, check_op(seed, &xy[..1], |t, v| Ok(ops::scale(t, v[0], -1.7))));
        let sum_mean = |t: &mut dsnet::tensor::Tape<f64>, v: &[dsnet::tensor::Var]| {
            let s = ops::sum(t, v[0]);
            let m = ops::mean(t, v[1]);
            ops::add(t, s, m)
        };
        record(&mut out, "sum+mean", seed, check_op(seed, &xy, sum_mean));
    }
    out
}

pub fn shape_ops(seeds: u64) -> Checks {
    let mut out = Checks::new();
    for seed in 0..seeds {
        let mut r = rng(seed);
        let a = random(&[2, 3, 2, 2], &mut r, -1.0, 1.0);
        let b = random(&[2, 1, 2, 2], &mut r, -1.0, 1.0);
        let both = [a.clone(), b];
        record(&mut out, "concat", seed, check_op(seed, &both, |t, v| ops::concat(t, &[v[0], v[1]], 1)));
        record(&mut out, "flatten", seed, check_op(seed, &both[..1], |t, v| ops::flatten(t, v[0])));
        record(&mut out, "narrow", seed, check_op(seed, &both[..1], |t, v| ops::narrow(t, v[0], 1, 1, 2)));
        let split_then_mix = |t: &mut dsnet::tensor::Tape<f64>, v: &[dsnet::tensor::Var]| {
            let parts = ops::split(t, v[0], 1, &[1, 2])?;
            let s = ops::sum(t, parts[0]);
            let f = ops::flatten(t, parts[1])?;
            let q = ops::mul(t, f, f)?;
            let q = ops::sum(t, q);
            ops::add(t, s, q)
        };
        record(&mut out, "split", seed, check_op(seed, &both[..1], split_then_mix));
        let k = r.gen_range(1..4);
        let c = [random(&[2, 3 * k, 2, 3], &mut r, -1.0, 1.0)];
        record(&mut out, "chunk_sum", seed, check_op(seed, &c, |t, v| ops::chunk_sum(t, v[0], k)));
    }
    out
}

pub fn batch_norm_both_modes(seeds: u64) -> Checks {
    let mut out = Checks::new();
    for seed in 0..seeds {
        let mut r = rng(seed);
        let c = r.gen_range(1..4);
        let inputs = [
            random(&[3, c, 2, 2], &mut r, -2.0, 2.0),
            random(&[c], &mut r, 0.5, 1.5),
            random(&[c], &mut r, -0.5, 0.5),
        ];
        for mode in [Mode::Train, Mode::Eval] {
            let stats = RunningStats {
                mean: (0..c).map(|i| 0.1 * i as f64).collect(),
                var: (0..c).map(|i| 0.5 + i as f64).collect(),
            };
            let err = check_op(seed, &inputs, |t, v| {
                let mut s = stats.clone();
                ops::batch_norm(t, v[0], v[1], v[2], &mut s, mode, BnConfig::default())
            });
            record(&mut out, &format!("batch_norm {mode:?}"), seed, err);
        }
    }
    out
}

pub fn abundance_normalization(seeds: u64) -> Checks {
    let mut out = Checks::new();
    for seed in 0..seeds {
        let mut r = rng(seed);
        let p = r.gen_range(2..6);
        let x = [away_from_zero(&[2, p, 2, 3], &mut r, 1e-3)];
        record(&mut out, "normalize_abundance", seed, check_op(seed, &x, |t, v| model::normalize_abundance(t, v[0])));
    }
    out
}

pub fn losses(seeds: u64) -> Checks {
    let mut out = Checks::new();
    for seed in 0..seeds {
        let mut r = rng(seed);
        let xy = [random(&[2, 4, 2, 2], &mut r, 0.1, 1.0), random(&[2, 4, 2, 2], &mut r, 0.1, 1.0)];
        record(&mut out, "re_loss", seed, check_op(seed, &xy, |t, v| re_loss(t, v[0], v[1])));
        let classes = r.gen_range(2..6);
        let labels: Vec<usize> = (0..3).map(|_| r.gen_range(0..classes)).collect();
        let z = [random(&[3, classes], &mut r, -3.0, 3.0)];
        record(&mut out, "ce_loss", seed, check_op(seed, &z, |t, v| ce_loss(t, v[0], &labels)));
        let lambda = r.gen_range(0.0..1.0);
        let blended = |t: &mut dsnet::tensor::Tape<f64>, v: &[dsnet::tensor::Var]| {
            let re = re_loss(t, v[0], v[1])?;
            let ce = ce_loss(t, v[2], &labels)?;
            total_loss(t, re, ce, LossConfig { lambda })
        };
        let all = [xy[0].clone(), xy[1].clone(), z[0].clone()];
        record(&mut out, "total_loss", seed, check_op(seed, &all, blended));
    }
    out
}

struct Case {
    cfg: DsnetConfig,
    lambda: f64,
    x: Tensor<f64>,
    labels: Vec<usize>,
    store: ParamStore<f64>,
}

fn case(seed: u64) -> Case {
    let mut r = rng(1000 + seed);
    let classes = r.gen_range(2..4);
    let cfg = DsnetConfig {
        bands: r.gen_range(4..9),
        endmembers: r.gen_range(2..4),
        classes,
        patch: *[5, 7].choose(&mut r).unwrap(),
        decoder_layers: r.gen_range(1..4),
        fusion: seed % 4 != 3,
        decoder: if seed % 5 == 4 { DecoderKind::Linear } else { DecoderKind::Nonlinear },
        relu: if seed % 3 == 2 { ReluPlacement::NonlinearOnly } else { ReluPlacement::Shared },
    };
    let b = r.gen_range(2..4);
    let x = random(&[b, cfg.bands, cfg.patch, cfg.patch], &mut r, 0.05, 1.0);
    let labels = (0..b).map(|_| r.gen_range(0..classes)).collect();
    let mut store = model::init_params(&cfg, seed).unwrap();
    // Clamped initialization leaves whole rows of G at zero, which puts the
    // decoder ReLU exactly on its kink where no derivative exists.
    for w in store.get_mut("unmixing.decoder.g.weight").unwrap().data_mut() {
        *w = r.gen_range(0.05..0.5);
    }
    Case {
        lambda: r.gen_range(0.1..0.9),
        cfg,
        x,
        labels,
        store,
    }
}

fn composite_loss(c: &Case, store: &ParamStore<f64>) -> (f64, Vec<(String, Tensor<f64>)>) {
    let mut store = store.clone();
    let mut s = Session::new(&mut store, true);
    let x = s.input(c.x.clone());
    let out = model::forward(&mut s, &c.cfg, x, Mode::Train, true).unwrap();
    let re = re_loss(&mut s.tape, x, out.reconstruction.unwrap()).unwrap();
    let ce = ce_loss(&mut s.tape, out.logits, &c.labels).unwrap();
    let loss = total_loss(&mut s.tape, re, ce, LossConfig { lambda: c.lambda }).unwrap();
    s.tape.backward(loss).unwrap();
    (s.tape.value(loss).item(), s.gradients())
}

/// Sampled coordinates of every parameter tensor, plus random directional
/// derivatives through all parameters at once.
pub fn full_network_composite(seeds: u64) -> Checks {
    let mut out = Checks::new();
    for seed in 0..seeds {
        let c = case(seed);
        let (_, grads) = composite_loss(&c, &c.store);
        let mut r = rng(seed);
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for (name, g) in &grads {
            let picks: Vec<usize> = (0..3.min(g.numel())).map(|_| r.gen_range(0..g.numel())).collect();
            for i in picks {
                let eval = |delta: f64| {
                    let mut s = c.store.clone();
                    s.get_mut(name).unwrap().data_mut()[i] += delta;
                    composite_loss(&c, &s).0
                };
                analytic.push(g.data()[i]);
                numeric.push((eval(STEP) - eval(-STEP)) / (2.0 * STEP));
            }
        }
        record(&mut out, &format!("composite coordinates {:?}", c.cfg), seed, normwise(&analytic, &numeric));

        for _ in 0..3 {
            let dirs: Vec<(String, Vec<f64>)> = grads
                .iter()
                .map(|(n, g)| (n.clone(), (0..g.numel()).map(|_| r.gen_range(-1.0..1.0)).collect()))
                .collect();
            let along: f64 = grads
                .iter()
                .zip(&dirs)
                .map(|((_, g), (_, d))| g.data().iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let eval = |delta: f64| {
                let mut s = c.store.clone();
                for (n, d) in &dirs {
                    for (p, di) in s.get_mut(n).unwrap().data_mut().iter_mut().zip(d) {
                        *p += delta * di;
                    }
                }
                composite_loss(&c, &s).0
            };
            let fd = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            record(&mut out, "composite direction", seed, normwise(&[along], &[fd]));
        }
    }
    out
}


pub fn all(seeds: u64) -> Checks {
    let families: [fn(u64) -> Checks; 7] = [
        conv2d_every_geometry,
        linear_and_elementwise,
        shape_ops,
        batch_norm_both_modes,
        abundance_normalization,
        losses,
        full_network_composite,
    ];
    families.iter().flat_map(|f| f(seeds)).collect()
}
