//! Spectral-angle reconstruction loss, softmax cross-entropy and their
//! blend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{add, scale};
use crate::tensor::{dims2, dims4, Scalar, Tape, Tensor, Var};

/// Distance from ±1 the cosine is clamped to before `acos`. Never below the
/// precision's machine epsilon, where `1 - margin` would round back to 1.
pub fn cosine_clamp<T: Scalar>() -> T {
    T::of(1e-12).max(T::epsilon())
}

fn clamp_cos<T: Scalar>(c: T) -> (T, bool) {
    let m = cosine_clamp::<T>();
    let hi = T::one() - m;
    if c > hi {
        (hi, true)
    } else if c < -hi {
        (-hi, true)
    } else {
        (c, false)
    }
}

/// Spectral angle between two spectra, in radians.
pub fn sad(u: &[f64], w: &[f64]) -> Result<f64> {
    if u.len() != w.len() {
        return Err(Error::Dimension {
            op: "sad",
            axis: "bands",
            expected: u.len(),
            actual: w.len(),
        });
    }
    if u.len() < 2 {
        return Err(Error::shape("sad", format!("spectra need at least 2 bands, got {}", u.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nw == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok(clamp_cos(dot / (nu * nw)).0.acos())
}

/// Mean spectral angle over every pixel of every patch.
///
/// `target` and `recon` are `[B, L, H, W]`; the angle is taken between the
/// `L`-vectors at each `(b, y, x)`, averaged over `H*W` per patch and then
/// over the batch (equivalently over all `B*H*W` pixels).
pub fn re_loss<T: Scalar>(tape: &mut Tape<T>, target: Var, recon: Var) -> Result<Var> {
    if tape.shape(target) != tape.shape(recon) {
        return Err(Error::shape(
            "re_loss",
            format!("{:?} vs {:?}", tape.shape(target), tape.shape(recon)),
        ));
    }
    let [b, l, h, w] = dims4("re_loss", tape.shape(target))?;
    let hw = h * w;
    let pixels = b * hw;
    let x = tape.value(target).data();
    let y = tape.value(recon).data();
    let idx = move |n: usize, band: usize, p: usize| (n * l + band) * hw + p;

    // per pixel: dot, |x|, |y|, clamped cosine, whether clamped
    let mut stats = Vec::with_capacity(pixels);
    let mut total = T::zero();
    for n in 0..b {
        for p in 0..hw {
            let (mut dot, mut xx, mut yy) = (T::zero(), T::zero(), T::zero());
            for band in 0..l {
                let (xv, yv) = (x[idx(n, band, p)], y[idx(n, band, p)]);
                dot = dot + xv * yv;
                xx = xx + xv * xv;
                yy = yy + yv * yv;
            }
            if xx == T::zero() || yy == T::zero() {
                return Err(Error::UndefinedAngle);
            }
            let (nx, ny) = (xx.sqrt(), yy.sqrt());
            let (c, clamped) = clamp_cos(dot / (nx * ny));
            total = total + c.acos();
            stats.push((nx, ny, c, clamped));
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite { what: "reconstruction loss".into() });
    }
    let inv = T::one() / T::of(pixels as f64);
    Ok(tape.push(
        Tensor::scalar(total * inv),
        vec![target, recon],
        Box::new(move |a| {
            let g = a.grad_out[0] * inv;
            let (x, y) = (a.inputs[0].data(), a.inputs[1].data());
            let mut gx = a.needs[0].then(|| vec![T::zero(); x.len()]);
            let mut gy = a.needs[1].then(|| vec![T::zero(); y.len()]);
            for n in 0..b {
                for p in 0..hw {
                    let (nx, ny, c, clamped) = stats[n * hw + p];
                    if clamped {
                        continue;
                    }
                    // d acos(c) = -dc / sqrt(1 - c^2)
                    let k = -g / (T::one() - c * c).sqrt();
                    for band in 0..l {
                        let i = idx(n, band, p);
                        if let Some(gx) = gx.as_mut() {
                            gx[i] = k * (y[i] / (nx * ny) - c * x[i] / (nx * nx));
                        }
                        if let Some(gy) = gy.as_mut() {
                            gy[i] = k * (x[i] / (nx * ny) - c * y[i] / (ny * ny));
                        }
                    }
                }
            }
            vec![gx, gy]
        }),
    ))
}

/// Mean softmax cross-entropy. `labels` are 0-based class indices.
pub fn ce_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let [b, classes] = dims2("ce_loss", tape.shape(logits))?;
    if labels.len() != b {
        return Err(Error::Dimension {
            op: "ce_loss",
            axis: "batch",
            expected: b,
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label: bad + 1, classes });
    }
    let z = tape.value(logits).data();
    let mut probs = Vec::with_capacity(z.len());
    let mut total = T::zero();
    for (row, &label) in z.chunks(classes).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let se: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + se.ln();
        total = total + (lse - row[label]);
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    if !total.is_finite() {
        return Err(Error::NonFinite { what: "cross-entropy loss".into() });
    }
    let inv = T::one() / T::of(b as f64);
    let labels = labels.to_vec();
    Ok(tape.push(
        Tensor::scalar(total * inv),
        vec![logits],
        Box::new(move |a| {
            let g = a.grad_out[0] * inv;
            let mut grad: Vec<T> = probs.iter().map(|&p| p * g).collect();
            for (n, &label) in labels.iter().enumerate() {
                grad[n * classes + label] = grad[n * classes + label] - g;
            }
            vec![Some(grad)]
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the reconstruction term, in `[0, 1]`.
    pub lambda: f64,
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.5 }
    }
}

/// `lambda * re + (1 - lambda) * ce`.
pub fn total_loss_value(re: f64, ce: f64, cfg: LossConfig) -> f64 {
    cfg.lambda * re + (1.0 - cfg.lambda) * ce
}

pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, re: Var, ce: Var, cfg: LossConfig) -> Result<Var> {
    let a = scale(tape, re, T::of(cfg.lambda));
    let b = scale(tape, ce, T::of(1.0 - cfg.lambda));
    add(tape, a, b)
}
