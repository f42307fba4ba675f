use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn activate<T: Scalar>(tape: &mut Tape<T>, x: Var, kind: Activation) -> Var {
    match kind {
        Activation::Relu => relu(tape, x),
        Activation::Sigmoid => sigmoid(tape, x),
    }
}

/// `max(x, 0)`; the derivative at exactly 0 is 0.
pub fn relu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let out = tape.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
    tape.push(
        out,
        vec![x],
        Box::new(|a| {
            let g = a
                .grad_out
                .iter()
                .zip(a.inputs[0].data())
                .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                .collect();
            vec![Some(g)]
        }),
    )
}

/// Logistic function in branch form: no `exp` of a positive argument.
pub fn sigmoid_value<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let out = tape.value(x).map(sigmoid_value);
    tape.push(
        out,
        vec![x],
        Box::new(|a| {
            let g = a
                .grad_out
                .iter()
                .zip(a.out.data())
                .map(|(&g, &s)| g * s * (T::one() - s))
                .collect();
            vec![Some(g)]
        }),
    )
}

fn same_shape(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operand shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn add<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape("add", tape.value(a), tape.value(b))?;
    let data = tape
        .value(a)
        .data()
        .iter()
        .zip(tape.value(b).data())
        .map(|(&x, &y)| x + y)
        .collect();
    let out = Tensor::new(tape.shape(a), data)?;
    Ok(tape.push(
        out,
        vec![a, b],
        Box::new(|a| {
            let g = a.grad_out.to_vec();
            vec![a.needs[0].then(|| g.clone()), a.needs[1].then_some(g)]
        }),
    ))
}

pub fn mul<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape("mul", tape.value(a), tape.value(b))?;
    let data = tape
        .value(a)
        .data()
        .iter()
        .zip(tape.value(b).data())
        .map(|(&x, &y)| x * y)
        .collect();
    let out = Tensor::new(tape.shape(a), data)?;
    Ok(tape.push(
        out,
        vec![a, b],
        Box::new(|a| {
            let (x, y) = (a.inputs[0].data(), a.inputs[1].data());
            let gx = a.needs[0].then(|| a.grad_out.iter().zip(y).map(|(&g, &v)| g * v).collect());
            let gy = a.needs[1].then(|| a.grad_out.iter().zip(x).map(|(&g, &v)| g * v).collect());
            vec![gx, gy]
        }),
    ))
}

pub fn scale<T: Scalar>(tape: &mut Tape<T>, x: Var, factor: T) -> Var {
    let out = tape.value(x).map(|v| v * factor);
    tape.push(
        out,
        vec![x],
        Box::new(move |a| vec![Some(a.grad_out.iter().map(|&g| g * factor).collect())]),
    )
}

/// Sum of all elements, as a scalar.
pub fn sum<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let total = tape.value(x).data().iter().copied().sum();
    tape.push(
        Tensor::scalar(total),
        vec![x],
        Box::new(|a| vec![Some(vec![a.grad_out[0]; a.inputs[0].numel()])]),
    )
}

pub fn mean<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let n = tape.value(x).numel().max(1);
    let s = sum(tape, x);
    scale(tape, s, T::one() / T::of(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = relu(&mut tape, x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = sum(&mut tape, y);
        tape.backward(s).unwrap();
        // subgradient at exactly zero is zero
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_range() {
        assert_eq!(sigmoid_value(0.0f64), 0.5);
        for &v in &[-30.0f64, -5.0, 5.0, 30.0] {
            let s = sigmoid_value(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s}");
        }
        // far tails round to the boundary but never leave [0, 1] or go NaN
        for &v in &[-1e4f64, 1e4, f64::MAX, -f64::MAX] {
            let s = sigmoid_value(v);
            assert!((0.0..=1.0).contains(&s), "sigmoid({v}) = {s}");
        }
        assert!(sigmoid_value(-700.0f64) > 0.0);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[3], vec![4.0, -1.0, 0.5]).unwrap());
        let s = sum(&mut tape, x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let sq = mul(&mut tape, x, x).unwrap();
        let s = sum(&mut tape, sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_accumulates_and_zero_grad_resets() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let s = sum(&mut tape, x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0]);
        tape.zero_grad();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn unused_leaf_gets_exact_zero_and_constants_no_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let unused = tape.leaf(Tensor::new(&[3], vec![5.0, 6.0, 7.0]).unwrap());
        let c = tape.constant(Tensor::new(&[2], vec![3.0, 3.0]).unwrap());
        let p = mul(&mut tape, x, c).unwrap();
        let s = sum(&mut tape, p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap().data(), &[0.0; 3]);
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss { .. })));
    }
}
