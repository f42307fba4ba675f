//! Independent reference computations shared by the property and acceptance
//! suites.

use dsnet::model;
use dsnet::tensor::{Scalar, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng;

#[derive(Debug, Clone, Copy)]
pub struct SimplexStats {
    pub codes: usize,
    pub negatives: usize,
    pub worst_sum_error: f64,
}

/// Normalizes `count` random codes heavy in zeros, negatives, huge and tiny
/// values, including whole all-zero pixels.
pub fn simplex_sweep<T: Scalar>(count: usize, seed: u64) -> SimplexStats {
    let mut r = rng(seed);
    let mut stats = SimplexStats {
        codes: 0,
        negatives: 0,
        worst_sum_error: 0.0,
    };
    while stats.codes < count {
        let p = r.gen_range(2..9);
        let n = 1000.min(count - stats.codes);
        let mut data: Vec<f64> = (0..n * p)
            .map(|_| match r.gen_range(0..6) {
                0 => 0.0,
                1 => -r.gen_range(0.0..10.0),
                2 => r.gen_range(-1e6..1e6),
                3 => r.gen_range(-1e-30..1e-30),
                4 => -0.0,
                _ => r.gen_range(-1.0..1.0),
            })
            .collect();
        for i in (0..n).step_by(17) {
            data[i * p..(i + 1) * p].iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::<T>::new();
        let h = tape.constant(Tensor::from_f64(&[n, p, 1, 1], &data).unwrap());
        let v = model::normalize_abundance(&mut tape, h).unwrap();
        for pixel in tape.value(v).data().chunks(p) {
            stats.negatives += pixel.iter().filter(|&&a| !(a >= T::zero())).count();
            let s: f64 = pixel.iter().map(|a| a.as_f64()).sum();
            stats.worst_sum_error = stats.worst_sum_error.max((s - 1.0).abs());
        }
        stats.codes += n;
    }
    stats
}

/// Random `k x k` counts, 1 to 8 classes, every row nonempty.
pub fn random_counts(r: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    let k = r.gen_range(1..9);
    (0..k)
        .map(|t| {
            (0..k)
                .map(|p| {
                    let v = r.gen_range(0..200u64);
                    if t == p {
                        v + 1
                    } else {
                        v * r.gen_range(0..2)
                    }
                })
                .collect()
        })
        .collect()
}

/// Direct evaluation of OA, AA and Kappa on a row-major count matrix.
pub fn brute_force_metrics(counts: &[Vec<u64>]) -> (f64, f64, f64) {
    let k = counts.len();
    let mut total = 0u64;
    let mut trace = 0u64;
    let mut rows = vec![0u64; k];
    let mut cols = vec![0u64; k];
    for t in 0..k {
        for p in 0..k {
            total += counts[t][p];
            rows[t] += counts[t][p];
            cols[p] += counts[t][p];
            if t == p {
                trace += counts[t][p];
            }
        }
    }
    let n = total as f64;
    let oa = trace as f64 / n;
    let aa = (0..k).map(|c| counts[c][c] as f64 / rows[c] as f64).sum::<f64>() / k as f64;
    let chance: u128 = (0..k).map(|c| rows[c] as u128 * cols[c] as u128).sum();
    let scaled_total = total as i128 * total as i128;
    let numerator = total as i128 * trace as i128 - chance as i128;
    let denominator = scaled_total - chance as i128;
    let kappa = if denominator == 0 { 1.0 } else { numerator as f64 / denominator as f64 };
    (oa, aa, kappa)
}
