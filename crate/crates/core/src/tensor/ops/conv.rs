use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::dense::dims4;
use crate::tensor::scalar::{gemm, MatRef};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Square-kernel convolution geometry. Only the combinations the network
/// uses are accepted: kernel 1 or 3, stride 1 or 2, padding 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if !matches!(kernel, 1 | 3) || !matches!(stride, 1 | 2) || !matches!(padding, 0 | 1) {
            return Err(Error::shape(
                "conv2d",
                format!("unsupported geometry kernel={kernel} stride={stride} padding={padding}"),
            ));
        }
        Ok(Self { kernel, stride, padding })
    }

    pub const fn pointwise() -> Self {
        Self { kernel: 1, stride: 1, padding: 0 }
    }

    pub const fn valid3() -> Self {
        Self { kernel: 3, stride: 1, padding: 0 }
    }

    pub const fn down3() -> Self {
        Self { kernel: 3, stride: 2, padding: 1 }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    /// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
    pub fn out_extent(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.cin * self.spec.kernel * self.spec.kernel
    }

    fn columns(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    /// Input offset feeding column `(b, oy, ox)` at row `(ci, ky, kx)`.
    fn source(&self, b: usize, ci: usize, iy: isize, ix: isize) -> Option<usize> {
        (iy >= 0 && ix >= 0 && (iy as usize) < self.h && (ix as usize) < self.w)
            .then(|| ((b * self.cin + ci) * self.h + iy as usize) * self.w + ix as usize)
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, Option<usize>)) {
        let (k, s, p) = (self.spec.kernel, self.spec.stride as isize, self.spec.padding as isize);
        let ncols = self.columns();
        let hw = self.ho * self.wo;
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for b in 0..self.batch {
                        for oy in 0..self.ho {
                            let iy = oy as isize * s - p + ky as isize;
                            for ox in 0..self.wo {
                                let ix = ox as isize * s - p + kx as isize;
                                let col = b * hw + oy * self.wo + ox;
                                f(row * ncols + col, row, self.source(b, ci, iy, ix));
                            }
                        }
                    }
                }
            }
        }
    }

    /// `[Cin*k*k, B*Ho*Wo]` lowering of the input.
    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.patch_len() * self.columns()];
        self.for_each_tap(|dst, _, src| {
            if let Some(s) = src {
                cols[dst] = x[s];
            }
        });
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.batch * self.cin * self.h * self.w];
        self.for_each_tap(|src, _, dst| {
            if let Some(d) = dst {
                x[d] = x[d] + cols[src];
            }
        });
        x
    }
}

/// 2-D cross-correlation. `weight` is `[Cout, Cin, k, k]`, `bias` `[Cout]`.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    spec: ConvSpec,
) -> Result<Var> {
    let [batch, cin, h, w] = dims4("conv2d", tape.shape(x))?;
    let [cout, wcin, kh, kw] = dims4("conv2d", tape.shape(weight))?;
    if wcin != cin {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: "input channels",
            expected: wcin,
            actual: cin,
        });
    }
    if kh != spec.kernel || kw != spec.kernel {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: "kernel",
            expected: spec.kernel,
            actual: if kh != spec.kernel { kh } else { kw },
        });
    }
    if let Some(b) = bias {
        if tape.shape(b) != [cout] {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "bias",
                expected: cout,
                actual: tape.value(b).numel(),
            });
        }
    }
    let ho = spec.out_extent(h).ok_or(Error::Dimension {
        op: "conv2d",
        axis: "height",
        expected: spec.kernel,
        actual: h + 2 * spec.padding,
    })?;
    let wo = spec.out_extent(w).ok_or(Error::Dimension {
        op: "conv2d",
        axis: "width",
        expected: spec.kernel,
        actual: w + 2 * spec.padding,
    })?;
    let geo = Geometry { batch, cin, h, w, ho, wo, spec };
    let kk = geo.patch_len();
    let ncols = geo.columns();
    let hw = ho * wo;

    let cols = geo.im2col(tape.value(x).data());
    let mut prod = vec![T::zero(); cout * ncols];
    gemm(
        MatRef::row_major(tape.value(weight).data(), cout, kk),
        MatRef::row_major(&cols, kk, ncols),
        T::zero(),
        &mut prod,
    );
    let bias_data = bias.map(|b| tape.value(b).data().to_vec());
    let mut out = vec![T::zero(); batch * cout * hw];
    for co in 0..cout {
        let bv = bias_data.as_ref().map_or(T::zero(), |b| b[co]);
        for b in 0..batch {
            let src = &prod[co * ncols + b * hw..][..hw];
            let dst = &mut out[(b * cout + co) * hw..][..hw];
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + bv);
        }
    }
    let out = Tensor::new(&[batch, cout, ho, wo], out)?;

    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    Ok(tape.push(
        out,
        inputs,
        Box::new(move |a| {
            // [Cout, B*Ho*Wo] view of the output gradient
            let mut gy = vec![T::zero(); cout * ncols];
            for b in 0..batch {
                for co in 0..cout {
                    gy[co * ncols + b * hw..][..hw].copy_from_slice(&a.grad_out[(b * cout + co) * hw..][..hw]);
                }
            }
            let gx = a.needs[0].then(|| {
                let mut gcols = vec![T::zero(); kk * ncols];
                gemm(
                    MatRef::row_major(a.inputs[1].data(), cout, kk).t(),
                    MatRef::row_major(&gy, cout, ncols),
                    T::zero(),
                    &mut gcols,
                );
                geo.col2im(&gcols)
            });
            let gw = a.needs[1].then(|| {
                let mut gw = vec![T::zero(); cout * kk];
                gemm(
                    MatRef::row_major(&gy, cout, ncols),
                    MatRef::row_major(&cols, kk, ncols).t(),
                    T::zero(),
                    &mut gw,
                );
                gw
            });
            let mut grads = vec![gx, gw];
            if a.needs.len() == 3 {
                grads.push(a.needs[2].then(|| gy.chunks(ncols).map(|r| r.iter().copied().sum()).collect()));
            }
            grads
        }),
    ))
}

/// Affine map `x @ W^T + b`; `weight` is `[Dout, Din]`.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let (batch, din) = match tape.shape(x) {
        &[b, d] => (b, d),
        s => return Err(Error::shape("linear", format!("expected [B, Din], got {s:?}"))),
    };
    let (dout, wdin) = match tape.shape(weight) {
        &[o, i] => (o, i),
        s => return Err(Error::shape("linear", format!("expected weight [Dout, Din], got {s:?}"))),
    };
    if wdin != din {
        return Err(Error::Dimension {
            op: "linear",
            axis: "input features",
            expected: wdin,
            actual: din,
        });
    }
    if let Some(b) = bias {
        if tape.shape(b) != [dout] {
            return Err(Error::Dimension {
                op: "linear",
                axis: "bias",
                expected: dout,
                actual: tape.value(b).numel(),
            });
        }
    }
    let mut out = vec![T::zero(); batch * dout];
    if let Some(b) = bias {
        let bv = tape.value(b).data();
        out.chunks_mut(dout).for_each(|row| row.copy_from_slice(bv));
    }
    gemm(
        MatRef::row_major(tape.value(x).data(), batch, din),
        MatRef::row_major(tape.value(weight).data(), dout, din).t(),
        T::one(),
        &mut out,
    );
    let out = Tensor::new(&[batch, dout], out)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    Ok(tape.push(
        out,
        inputs,
        Box::new(move |a| {
            let gy = MatRef::row_major(a.grad_out, batch, dout);
            let gx = a.needs[0].then(|| {
                let mut g = vec![T::zero(); batch * din];
                gemm(gy, MatRef::row_major(a.inputs[1].data(), dout, din), T::zero(), &mut g);
                g
            });
            let gw = a.needs[1].then(|| {
                let mut g = vec![T::zero(); dout * din];
                gemm(gy.t(), MatRef::row_major(a.inputs[0].data(), batch, din), T::zero(), &mut g);
                g
            });
            let mut grads = vec![gx, gw];
            if a.needs.len() == 3 {
                grads.push(a.needs[2].then(|| {
                    let mut g = vec![T::zero(); dout];
                    for row in a.grad_out.chunks(dout) {
                        g.iter_mut().zip(row).for_each(|(s, &v)| *s = *s + v);
                    }
                    g
                }));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_shape(input: [usize; 4], cout: usize, spec: ConvSpec) -> Result<Vec<usize>> {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&input));
        let k = spec.kernel();
        let w = tape.constant(Tensor::zeros(&[cout, input[1], k, k]));
        let y = conv2d(&mut tape, x, w, None, spec)?;
        Ok(tape.shape(y).to_vec())
    }

    #[test]
    fn documented_output_shapes() {
        assert_eq!(conv_shape([2, 200, 7, 7], 100, ConvSpec::pointwise()).unwrap(), [2, 100, 7, 7]);
        assert_eq!(conv_shape([2, 64, 7, 7], 10, ConvSpec::valid3()).unwrap(), [2, 10, 5, 5]);
        assert_eq!(conv_shape([2, 5, 7, 7], 5, ConvSpec::down3()).unwrap(), [2, 5, 4, 4]);
    }

    #[test]
    fn unsupported_geometry_rejected() {
        assert!(ConvSpec::new(5, 1, 0).is_err());
        assert!(ConvSpec::new(3, 3, 0).is_err());
        assert!(ConvSpec::new(3, 1, 2).is_err());
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 5, 5]));
        let w = tape.constant(Tensor::zeros(&[2, 3, 1, 1]));
        match conv2d(&mut tape, x, w, None, ConvSpec::pointwise()) {
            Err(Error::Dimension { axis, expected: 3, actual: 4, .. }) => assert_eq!(axis, "input channels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conv_matches_direct_loop() {
        let spec = ConvSpec::down3();
        let (b, cin, h, w, cout) = (2, 3, 5, 4, 2);
        let xs = Tensor::<f64>::from_fn(&[b, cin, h, w], |i| ((i * 37) % 11) as f64 - 5.0);
        let ws = Tensor::<f64>::from_fn(&[cout, cin, 3, 3], |i| ((i * 13) % 7) as f64 * 0.25 - 0.7);
        let bs = Tensor::<f64>::new(&[cout], vec![0.5, -1.5]).unwrap();
        let mut tape = Tape::new();
        let (x, wv, bv) = (tape.constant(xs.clone()), tape.constant(ws.clone()), tape.constant(bs.clone()));
        let y = conv2d(&mut tape, x, wv, Some(bv), spec).unwrap();
        let (ho, wo) = (3, 2);
        assert_eq!(tape.shape(y), &[b, cout, ho, wo]);
        for n in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bs.data()[co];
                        for ci in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xs.data()[((n * cin + ci) * h + iy as usize) * w + ix as usize]
                                        * ws.data()[((co * cin + ci) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        let got = tape.value(y).data()[((n * cout + co) * ho + oy) * wo + ox];
                        assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn linear_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[3, 4], |i| i as f64));
        let zero_w = tape.constant(Tensor::zeros(&[2, 4]));
        let b = tape.constant(Tensor::new(&[2], vec![0.25, -4.0]).unwrap());
        let y = linear(&mut tape, x, zero_w, Some(b)).unwrap();
        for row in tape.value(y).data().chunks(2) {
            assert_eq!(row, &[0.25, -4.0]);
        }
        let eye = tape.constant(Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }));
        let y = linear(&mut tape, x, eye, None).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let bad = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(
            linear(&mut tape, x, bad, None),
            Err(Error::Dimension { expected: 5, actual: 4, .. })
        ));
    }
}
