//! Training losses, all reduced by the mean over every element.
//!
//! The default loss compares predictions and targets after tanh
//! compression: HDR targets span a wide brightness range, and the
//! compression keeps highlight errors from drowning out the
//! well-exposed regions that dominate perceived quality.

use std::fmt;
use std::str::FromStr;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Mean absolute difference.
pub fn l1<E: Element>(tape: &Tape<E>, yhat: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    let d = tape.sub(yhat, target)?;
    tape.mean_all(&tape.abs(&d)?)
}

/// Mean squared difference.
pub fn l2<E: Element>(tape: &Tape<E>, yhat: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    let d = tape.sub(yhat, target)?;
    tape.mean_all(&tape.mul(&d, &d)?)
}

/// Mean absolute difference of tanh-compressed values.
pub fn tanh_l1<E: Element>(
    tape: &Tape<E>,
    yhat: &Tensor<E>,
    target: &Tensor<E>,
) -> Result<Tensor<E>> {
    let d = tape.sub(&tape.tanh(yhat)?, &tape.tanh(target)?)?;
    tape.mean_all(&tape.abs(&d)?)
}

/// Mean squared difference of tanh-compressed values.
pub fn tanh_l2<E: Element>(
    tape: &Tape<E>,
    yhat: &Tensor<E>,
    target: &Tensor<E>,
) -> Result<Tensor<E>> {
    let d = tape.sub(&tape.tanh(yhat)?, &tape.tanh(target)?)?;
    tape.mean_all(&tape.mul(&d, &d)?)
}

/// Selectable training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
    TanhL1,
    TanhL2,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::L1, LossKind::L2, LossKind::TanhL1, LossKind::TanhL2];

    pub fn evaluate<E: Element>(
        self,
        tape: &Tape<E>,
        yhat: &Tensor<E>,
        target: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        match self {
            LossKind::L1 => l1(tape, yhat, target),
            LossKind::L2 => l2(tape, yhat, target),
            LossKind::TanhL1 => tanh_l1(tape, yhat, target),
            LossKind::TanhL2 => tanh_l2(tape, yhat, target),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::TanhL1 => "tanh_l1",
            LossKind::TanhL2 => "tanh_l2",
        };
        f.write_str(s)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<LossKind> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "tanh_l1" => Ok(LossKind::TanhL1),
            "tanh_l2" => Ok(LossKind::TanhL2),
            other => Err(Error::config(format!(
                "unknown loss `{other}` (expected l1, l2, tanh_l1, or tanh_l2)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Shape;

    fn t(values: Vec<f64>) -> Tensor<f64> {
        Tensor::from_data(Shape::new(1, 1, 1, values.len()), values).unwrap()
    }

    #[test]
    fn identical_inputs_give_exactly_zero() {
        let a = t(vec![0.0, 0.5, 2.0, -1.0]);
        let tape = Tape::new();
        for kind in LossKind::ALL {
            let loss = kind.evaluate(&tape, &a, &a).unwrap();
            assert_eq!(loss.item().unwrap(), 0.0, "{kind}");
        }
    }

    #[test]
    fn tanh_l1_closed_form_single_element() {
        let tape = Tape::new();
        let loss = tanh_l1(&tape, &t(vec![0.0]), &t(vec![1.0])).unwrap();
        let expected = 1.0f64.tanh(); // ≈ 0.7615942
        assert!((loss.item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn l2_of_constant_difference() {
        let a = t(vec![0.1; 6]);
        let b = t(vec![0.0; 6]);
        let tape = Tape::new();
        let loss = l2(&tape, &a, &b).unwrap();
        assert!((loss.item().unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn l1_is_symmetric() {
        let a = t(vec![0.3, -0.2, 1.7]);
        let b = t(vec![-0.5, 0.9, 0.4]);
        let tape = Tape::new();
        let ab = l1(&tape, &a, &b).unwrap().item().unwrap();
        let ba = l1(&tape, &b, &a).unwrap().item().unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn tanh_l2_never_exceeds_l2_on_nonnegative_range() {
        // tanh is a contraction: |tanh a − tanh b| ≤ |a − b|.
        let mut vals_a = Vec::new();
        let mut vals_b = Vec::new();
        for i in 0..100 {
            vals_a.push(i as f64 * 0.04); // [0, 4)
            vals_b.push((i as f64 * 0.04 + 1.3) % 4.0);
        }
        let tape = Tape::new();
        let a = t(vals_a);
        let b = t(vals_b);
        let tl2 = tanh_l2(&tape, &a, &b).unwrap().item().unwrap();
        let plain = l2(&tape, &a, &b).unwrap().item().unwrap();
        assert!(tl2 <= plain, "{tl2} > {plain}");
    }

    #[test]
    fn tanh_l1_gradient_at_origin_is_minus_one() {
        let yhat = t(vec![0.0]);
        yhat.set_requires_grad(true);
        let target = t(vec![1.0]);
        let tape = Tape::new();
        let loss = tanh_l1(&tape, &yhat, &target).unwrap();
        tape.backward(&loss).unwrap();
        let g = yhat.grad().unwrap()[0];
        assert!((g - (-1.0)).abs() < 1e-12, "gradient {g}");
    }

    #[test]
    fn loss_names_round_trip() {
        for kind in LossKind::ALL {
            assert_eq!(kind.to_string().parse::<LossKind>().unwrap(), kind);
        }
        assert!("huber".parse::<LossKind>().is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let tape = Tape::new();
        let a = t(vec![1.0, 2.0]);
        let b = t(vec![1.0, 2.0, 3.0]);
        assert!(matches!(l1(&tape, &a, &b), Err(Error::Shape(_))));
    }
}
