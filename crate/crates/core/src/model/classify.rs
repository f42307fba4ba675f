//! Patch CNN classifier and the subpixel fusion head.

use crate::error::{Error, Result};
use crate::tensor::ops::{self, conv2d, linear, ConvSpec, Mode};
use crate::tensor::{Scalar, Session, Var};

pub const CONV1_CHANNELS: usize = 64;
pub const CONV2_CHANNELS: usize = 100;
pub const HIDDEN_UNITS: usize = 100;

/// Smallest patch the two valid 3x3 convolutions accept.
pub const MIN_PATCH: usize = 5;

/// Flattened width after the two valid convolutions.
pub fn flatten_width(patch: usize) -> usize {
    CONV2_CHANNELS * (patch - 4) * (patch - 4)
}

/// Width of the fused vector: reduced abundances then class features.
pub fn fused_width(endmembers: usize, classes: usize, patch: usize) -> usize {
    let reduced = patch.div_ceil(2);
    endmembers * reduced * reduced + classes
}

fn layer<T: Scalar>(s: &mut Session<'_, T>, name: &str) -> Result<(Var, Var)> {
    Ok((s.param(&format!("{name}.weight"))?, s.param(&format!("{name}.bias"))?))
}

/// Class features `[B, P_cls]` from patches `[B, L, H, H]`.
pub fn classify_features<T: Scalar>(s: &mut Session<'_, T>, x: Var) -> Result<Var> {
    let h = s.tape.shape(x).get(2).copied().unwrap_or(0);
    if h < MIN_PATCH {
        return Err(Error::shape(
            "classify_features",
            format!("patch size {h} is below the minimum {MIN_PATCH}"),
        ));
    }
    let mut t = x;
    for name in ["classifier.conv1", "classifier.conv2"] {
        let (w, b) = layer(s, name)?;
        t = conv2d(&mut s.tape, t, w, Some(b), ConvSpec::valid3())?;
        t = ops::relu(&mut s.tape, t);
    }
    t = ops::flatten(&mut s.tape, t)?;
    let (w, b) = layer(s, "classifier.fc1")?;
    t = linear(&mut s.tape, t, w, Some(b))?;
    t = ops::relu(&mut s.tape, t);
    let (w, b) = layer(s, "classifier.fc2")?;
    linear(&mut s.tape, t, w, Some(b))
}

/// `[flatten(ReLU(BN(conv_s2(v)))), c]`.
pub fn fuse<T: Scalar>(s: &mut Session<'_, T>, v: Var, c: Var, mode: Mode) -> Result<Var> {
    let (w, b) = layer(s, "fusion.conv")?;
    let mut t = conv2d(&mut s.tape, v, w, Some(b), ConvSpec::down3())?;
    t = s.batch_norm("fusion.bn", t, mode)?;
    t = ops::relu(&mut s.tape, t);
    t = ops::flatten(&mut s.tape, t)?;
    ops::concat(&mut s.tape, &[t, c], 1)
}

/// Logits `[B, P_cls]` from the fused vector.
pub fn predict<T: Scalar>(s: &mut Session<'_, T>, fused: Var) -> Result<Var> {
    let (w, b) = layer(s, "fusion.out")?;
    linear(&mut s.tape, fused, w, Some(b))
}

/// Logits without fusion: the class features themselves.
pub fn classifier_only_predict(c: Var) -> Var {
    c
}
