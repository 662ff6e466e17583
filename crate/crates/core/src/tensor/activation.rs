use rand::Rng as _;

use super::{Real, Tensor4};
use crate::{Error, Result};

pub fn relu<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient gated on `input > 0`; the gradient at exactly 0 is 0.
pub fn relu_backward<T: Real>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu_backward", input.shape(), grad_out.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::new(input.shape(), data)
}

/// Inverted dropout. In training mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1 − rate)`; the returned mask holds
/// those per-element multipliers. Eval mode and `rate == 0` are the identity
/// and draw nothing from `rng`.
pub fn dropout<T: Real>(
    input: &Tensor4<T>,
    rate: f64,
    training: bool,
    rng: &mut crate::Rng,
) -> Result<(Tensor4<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.data().len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let out = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((Tensor4::new(input.shape(), out)?, Some(mask)))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let Some(mask) = mask else {
        return Ok(grad_out.clone());
    };
    if mask.len() != grad_out.data().len() {
        return Err(Error::shape(
            "dropout_backward",
            format!("{} mask elements", mask.len()),
            grad_out.shape(),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &m)| g * m)
        .collect();
    Tensor4::new(grad_out.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use crate::tensor::Shape4;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Tensor4<f64> {
        Tensor4::new(Shape4::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn relu_values_and_gate() {
        let x = row(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &row(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn relu_split_identity(v in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let x = row(&v);
            let pos = relu(&x);
            let neg = relu(&x.map(|a| -a));
            for ((p, n), a) in pos.data().iter().zip(neg.data()).zip(&v) {
                prop_assert_eq!(p + n, a.abs());
            }
        }
    }

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let mut rng = rng_from_seed(1);
        let x = Tensor4::<f64>::randn(Shape4::new(2, 3, 4, 4), 1.0, &mut rng);
        let (y, m) = dropout(&x, 0.0, true, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, m) = dropout(&x, 0.9, false, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.is_none());
    }

    #[test]
    fn rate_of_one_is_a_config_error() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 1, 1, 1));
        assert!(matches!(
            dropout(&x, 1.0, true, &mut rng_from_seed(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = rng_from_seed(42);
        let x = Tensor4::<f64>::randn(Shape4::new(1, 1, 1, 100_000), 0.5, &mut rng).map(|v| v + 1.0);
        let (y, mask) = dropout(&x, 0.5, true, &mut rng).unwrap();
        let mask = mask.unwrap();
        let survivors = mask.iter().filter(|&&m| m > 0.0).count() as f64 / 1e5;
        assert!((survivors - 0.5).abs() <= 0.01, "survivor fraction {survivors}");
        let mi = x.data().iter().sum::<f64>() / 1e5;
        let mo = y.data().iter().sum::<f64>() / 1e5;
        assert!(((mo - mi) / mi).abs() <= 0.01, "{mo} vs {mi}");
    }

    #[test]
    fn backward_applies_mask() {
        let g = row(&[1.0, 2.0, 3.0]);
        let out = dropout_backward(Some(&[0.0, 2.0, 2.0]), &g).unwrap();
        assert_eq!(out.data(), &[0.0, 4.0, 6.0]);
        assert_eq!(dropout_backward(None, &g).unwrap(), g);
    }
}
