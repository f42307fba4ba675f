use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnConfig {
    /// Weight kept on the old running statistic per update.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// Per-channel running statistics, updated in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Channel extent and the `(outer, inner)` sweep of a `[B, C, ...]` tensor.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape("batchnorm", format!("expected [B, C, ...], got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Batch normalization over every axis except the channel axis 1.
///
/// Train mode normalizes with batch moments and folds them into `stats`
/// (`running <- momentum * running + (1 - momentum) * batch`, unbiased
/// variance). Eval mode uses `stats` unchanged.
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut RunningStats<T>,
    mode: Mode,
    cfg: BnConfig,
) -> Result<Var> {
    let (batch, channels, inner) = layout(tape.shape(x))?;
    for (v, axis) in [(gamma, "gamma"), (beta, "beta")] {
        if tape.shape(v) != [channels] {
            return Err(Error::Dimension {
                op: "batchnorm",
                axis,
                expected: channels,
                actual: tape.value(v).numel(),
            });
        }
    }
    if stats.mean.len() != channels || stats.var.len() != channels {
        return Err(Error::Dimension {
            op: "batchnorm",
            axis: "running statistics",
            expected: channels,
            actual: stats.mean.len(),
        });
    }
    let count = batch * inner;
    let eps = T::of(cfg.eps);
    let xd = tape.value(x).data();
    let g = tape.value(gamma).data();
    let bt = tape.value(beta).data();
    let at = move |b: usize, c: usize| (b * channels + c) * inner;

    let (mean, inv_std): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::VarianceDegenerate { count });
            }
            let n = T::of(count as f64);
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            for c in 0..channels {
                let mut s = T::zero();
                for b in 0..batch {
                    s = s + xd[at(b, c)..][..inner].iter().copied().sum::<T>();
                }
                let m = s / n;
                let mut ss = T::zero();
                for b in 0..batch {
                    ss = ss + xd[at(b, c)..][..inner].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
                mean[c] = m;
                var[c] = ss / n;
            }
            let keep = T::of(cfg.momentum);
            let fold = T::one() - keep;
            let unbias = n / (n - T::one());
            for c in 0..channels {
                stats.mean[c] = keep * stats.mean[c] + fold * mean[c];
                stats.var[c] = keep * stats.var[c] + fold * var[c] * unbias;
            }
            let inv = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (mean, inv)
        }
        Mode::Eval => (
            stats.mean.clone(),
            stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect(),
        ),
    };

    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..batch {
        for c in 0..channels {
            let o = at(b, c);
            for i in o..o + inner {
                let h = (xd[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                out[i] = g[c] * h + bt[c];
            }
        }
    }
    let out = Tensor::new(tape.shape(x), out)?;
    Ok(tape.push(
        out,
        vec![x, gamma, beta],
        Box::new(move |a| {
            let dy = a.grad_out;
            let g = a.inputs[1].data();
            let mut sum_dy = vec![T::zero(); channels];
            let mut sum_dy_xhat = vec![T::zero(); channels];
            for b in 0..batch {
                for c in 0..channels {
                    let o = at(b, c);
                    for i in o..o + inner {
                        sum_dy[c] = sum_dy[c] + dy[i];
                        sum_dy_xhat[c] = sum_dy_xhat[c] + dy[i] * xhat[i];
                    }
                }
            }
            let gx = a.needs[0].then(|| {
                let mut gx = vec![T::zero(); dy.len()];
                let n = T::of(count as f64);
                for b in 0..batch {
                    for c in 0..channels {
                        let o = at(b, c);
                        for i in o..o + inner {
                            gx[i] = match mode {
                                Mode::Train => {
                                    g[c] * inv_std[c] / n * (n * dy[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c])
                                }
                                Mode::Eval => g[c] * inv_std[c] * dy[i],
                            };
                        }
                    }
                }
                gx
            });
            vec![gx, a.needs[1].then_some(sum_dy_xhat), a.needs[2].then_some(sum_dy)]
        }),
    ))
}
