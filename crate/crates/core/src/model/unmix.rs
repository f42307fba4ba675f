//! Autoencoder unmixing branch: a pointwise encoder down to `P` codes per
//! pixel, sum-to-one normalization, and the `K`-layer mixing decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{self, conv2d, ConvSpec, Mode};
use crate::tensor::{Scalar, Session, Tape, Tensor, Var};

/// Guard added to every absolute code before sum normalization.
pub const ABUNDANCE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Chunk-sum path only.
    Linear,
    /// Chunk-sum path plus the two-layer sigmoid path.
    #[default]
    Nonlinear,
}

/// Where the decoder's ReLU sits relative to the linear path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReluPlacement {
    /// `z = ReLU(G v)` feeds both the chunk sum and the sigmoid path.
    #[default]
    Shared,
    /// The chunk sum uses `G v` directly; only the sigmoid path sees the ReLU.
    NonlinearOnly,
}

/// Channel widths of the three encoder blocks for `bands` inputs.
pub fn encoder_widths(bands: usize, endmembers: usize) -> [usize; 3] {
    [(bands / 2).max(1), (bands / 4).max(1), endmembers]
}

/// Raw codes `[B, P, H, W]`: two conv-BN-ReLU blocks and a bare conv.
pub fn encode<T: Scalar>(s: &mut Session<'_, T>, x: Var, mode: Mode) -> Result<Var> {
    let mut h = x;
    for block in 1..=3 {
        let p = format!("unmixing.encoder.block{block}");
        let w = s.param(&format!("{p}.conv.weight"))?;
        let b = s.param(&format!("{p}.conv.bias"))?;
        h = conv2d(&mut s.tape, h, w, Some(b), ConvSpec::pointwise())?;
        if block < 3 {
            h = s.batch_norm(&format!("{p}.bn"), h, mode)?;
            h = ops::relu(&mut s.tape, h);
        }
    }
    Ok(h)
}

/// Per pixel, `v_p = (|h_p| + eps) / (sum_q |h_q| + P * eps)` over axis 1.
pub fn normalize_abundance<T: Scalar>(tape: &mut Tape<T>, h: Var) -> Result<Var> {
    let [b, p, hh, ww] = crate::tensor::dims4("normalize_abundance", tape.shape(h))?;
    let hw = hh * ww;
    let eps = T::of(ABUNDANCE_EPS);
    let x = tape.value(h).data();
    let mut out = vec![T::zero(); x.len()];
    let mut denom = vec![T::zero(); b * hw];
    for n in 0..b {
        for i in 0..hw {
            let at = |q: usize| (n * p + q) * hw + i;
            let d = (0..p).map(|q| x[at(q)].abs()).sum::<T>() + T::of(p as f64) * eps;
            for q in 0..p {
                out[at(q)] = (x[at(q)].abs() + eps) / d;
            }
            denom[n * hw + i] = d;
        }
    }
    let shape = tape.shape(h).to_vec();
    Ok(tape.push(
        Tensor::new(&shape, out)?,
        vec![h],
        Box::new(move |a| {
            let (g, x, v) = (a.grad_out, a.inputs[0].data(), a.out.data());
            let mut dx = vec![T::zero(); x.len()];
            for n in 0..b {
                for i in 0..hw {
                    let at = |q: usize| (n * p + q) * hw + i;
                    let dot = (0..p).map(|q| g[at(q)] * v[at(q)]).sum::<T>();
                    let d = denom[n * hw + i];
                    for q in 0..p {
                        let s = x[at(q)].signum();
                        let s = if x[at(q)] == T::zero() { T::zero() } else { s };
                        dx[at(q)] = s * (g[at(q)] - dot) / d;
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Reconstruction `[B, L, H, W]` from abundances `[B, P, H, W]`.
pub fn decode<T: Scalar>(
    s: &mut Session<'_, T>,
    v: Var,
    layers: usize,
    kind: DecoderKind,
    relu: ReluPlacement,
) -> Result<Var> {
    let g = s.param("unmixing.decoder.g.weight")?;
    let lk = s.tape.shape(g)[0];
    if layers == 0 || !lk.is_multiple_of(layers) {
        return Err(Error::Dimension {
            op: "decode",
            axis: "decoder chunks",
            expected: layers,
            actual: lk,
        });
    }
    let gv = conv2d(&mut s.tape, v, g, None, ConvSpec::pointwise())?;
    let z = ops::relu(&mut s.tape, gv);
    let linear_in = match relu {
        ReluPlacement::Shared => z,
        ReluPlacement::NonlinearOnly => gv,
    };
    let linear = ops::chunk_sum(&mut s.tape, linear_in, layers)?;
    if kind == DecoderKind::Linear {
        return Ok(linear);
    }
    let mut t = z;
    for i in 1..=2 {
        let w = s.param(&format!("unmixing.decoder.nonlinear{i}.weight"))?;
        let b = s.param(&format!("unmixing.decoder.nonlinear{i}.bias"))?;
        t = conv2d(&mut s.tape, t, w, Some(b), ConvSpec::pointwise())?;
        t = ops::sigmoid(&mut s.tape, t);
    }
    ops::add(&mut s.tape, linear, t)
}

/// Encoder, normalization and decoder: returns `(v, x_hat)`.
pub fn unmix_forward<T: Scalar>(
    s: &mut Session<'_, T>,
    x: Var,
    layers: usize,
    kind: DecoderKind,
    relu: ReluPlacement,
    mode: Mode,
) -> Result<(Var, Var)> {
    let h = encode(s, x, mode)?;
    let v = normalize_abundance(&mut s.tape, h)?;
    let xhat = decode(s, v, layers, kind, relu)?;
    Ok((v, xhat))
}
