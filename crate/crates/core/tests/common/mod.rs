#![allow(dead_code)]

pub mod gradients;
pub mod oracles;

use dsnet::tensor::ops;
use dsnet::tensor::{Tape, Tensor, Var};
use dsnet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform values with magnitude at least `gap`, to keep clear of kinks at 0.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `||a - n|| / max(||a||, ||n||)`, or the absolute difference when both
/// vanish.
pub fn normwise(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Worst normwise relative error over all inputs of `f`, comparing tape
/// gradients of `sum(w * f(inputs))` (random fixed `w`) against central
/// differences on every coordinate.
pub fn check_op(
    seed: u64,
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> f64 {
    let projection = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&mut tape, &vars).unwrap();
        let shape = tape.shape(y).to_vec();
        random(&shape, &mut rng(seed ^ 0xabcdef), -1.0, 1.0)
    };
    let scalar = |tape: &mut Tape<f64>, vars: &[Var]| -> Var {
        let y = f(tape, vars).unwrap();
        let w = tape.constant(projection.clone());
        let p = ops::mul(tape, y, w).unwrap();
        ops::sum(tape, p)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = scalar(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap().into_data();
        let numeric: Vec<f64> = (0..input.numel())
            .map(|i| {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == k {
                                x.data_mut()[i] += delta;
                            }
                            t.constant(x)
                        })
                        .collect();
                    let l = scalar(&mut t, &vs);
                    t.value(l).item()
                };
                (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
            })
            .collect();
        worst = worst.max(normwise(&analytic, &numeric));
    }
    worst
}
