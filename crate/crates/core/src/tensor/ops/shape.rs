use crate::error::{Error, Result};
use crate::tensor::dense::dims4;
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub fn reshape<T: Scalar>(tape: &mut Tape<T>, x: Var, shape: &[usize]) -> Result<Var> {
    let out = tape.value(x).clone().reshape(shape)?;
    Ok(tape.push(out, vec![x], Box::new(|a| vec![Some(a.grad_out.to_vec())])))
}

/// `[B, ...] -> [B, prod(...)]`, row-major.
pub fn flatten<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let shape = tape.shape(x);
    let Some((&b, rest)) = shape.split_first() else {
        return Err(Error::shape("flatten", "cannot flatten a scalar"));
    };
    let d = rest.iter().product();
    reshape(tape, x, &[b, d])
}

/// `(outer, axis extent, inner)` split of a shape around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat<T: Scalar>(tape: &mut Tape<T>, xs: &[Var], axis: usize) -> Result<Var> {
    let Some(&first) = xs.first() else {
        return Err(Error::shape("concat", "no inputs"));
    };
    let base = tape.shape(first).to_vec();
    if axis >= base.len() {
        return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
    }
    let mut extents = Vec::with_capacity(xs.len());
    for &x in xs {
        let s = tape.shape(x);
        let agrees = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !agrees {
            return Err(Error::shape(
                "concat",
                format!("inputs disagree off axis {axis}: {base:?} vs {s:?}"),
            ));
        }
        extents.push(s[axis]);
    }
    let total: usize = extents.iter().sum();
    let (outer, _, inner) = around(&base, axis);
    let mut shape = base.clone();
    shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (&x, &e) in xs.iter().zip(&extents) {
            let src = tape.value(x).data();
            data.extend_from_slice(&src[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let out = Tensor::new(&shape, data)?;
    Ok(tape.push(
        out,
        xs.to_vec(),
        Box::new(move |a| {
            let mut grads: Vec<Vec<T>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (g, &e) in grads.iter_mut().zip(&extents) {
                    g.extend_from_slice(&a.grad_out[pos..pos + e * inner]);
                    pos += e * inner;
                }
            }
            grads.into_iter().zip(a.needs).map(|(g, &n)| n.then_some(g)).collect()
        }),
    ))
}

/// Elements `start..start+len` along `axis`.
pub fn narrow<T: Scalar>(tape: &mut Tape<T>, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(Error::shape(
            "narrow",
            format!("range {start}..{} on axis {axis} exceeds {shape:?}", start + len),
        ));
    }
    let (outer, extent, inner) = around(&shape, axis);
    let src = tape.value(x).data();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&src[base..base + len * inner]);
    }
    let mut out_shape = shape;
    out_shape[axis] = len;
    let out = Tensor::new(&out_shape, data)?;
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |a| {
            let mut g = vec![T::zero(); outer * extent * inner];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                g[base..base + len * inner].copy_from_slice(&a.grad_out[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        }),
    ))
}

/// Inverse of [`concat`]: consecutive pieces of the given extents.
pub fn split<T: Scalar>(tape: &mut Tape<T>, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
    let extent = tape.shape(x).get(axis).copied().unwrap_or(0);
    let total: usize = sizes.iter().sum();
    if total != extent {
        return Err(Error::Dimension {
            op: "split",
            axis: "split axis",
            expected: extent,
            actual: total,
        });
    }
    let mut start = 0;
    let mut parts = Vec::with_capacity(sizes.len());
    for &len in sizes {
        parts.push(narrow(tape, x, axis, start, len)?);
        start += len;
    }
    Ok(parts)
}

/// Sum of `chunks` equal channel blocks: `[B, K*C, H, W] -> [B, C, H, W]`.
pub fn chunk_sum<T: Scalar>(tape: &mut Tape<T>, x: Var, chunks: usize) -> Result<Var> {
    let [b, kc, h, w] = dims4("chunk_sum", tape.shape(x))?;
    if chunks == 0 || kc % chunks != 0 {
        return Err(Error::shape(
            "chunk_sum",
            format!("{kc} channels do not split into {chunks} equal chunks"),
        ));
    }
    let c = kc / chunks;
    let plane = c * h * w;
    let src = tape.value(x).data();
    let mut data = vec![T::zero(); b * plane];
    for bi in 0..b {
        let dst = &mut data[bi * plane..(bi + 1) * plane];
        for k in 0..chunks {
            let s = &src[bi * kc * h * w + k * plane..][..plane];
            dst.iter_mut().zip(s).for_each(|(d, &v)| *d = *d + v);
        }
    }
    let out = Tensor::new(&[b, c, h, w], data)?;
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |a| {
            let mut g = Vec::with_capacity(b * chunks * plane);
            for bi in 0..b {
                let go = &a.grad_out[bi * plane..(bi + 1) * plane];
                for _ in 0..chunks {
                    g.extend_from_slice(go);
                }
            }
            vec![Some(g)]
        }),
    ))
}
