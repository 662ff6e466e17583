use super::{Real, Shape4, Tensor4};
use crate::{Error, Result};

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot) / n` with respect to the logits `(n, classes, 1, 1)`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor4<T>,
    labels: &[usize],
) -> Result<(f64, Tensor4<T>)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 || labels.len() != s.n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("({}, classes, 1, 1) logits for {} labels", labels.len(), labels.len()),
            s,
        ));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= s.c) {
        return Err(Error::Data(format!(
            "label {l} at batch index {i} out of range for {} classes",
            s.c
        )));
    }
    let n = s.n as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor4::zeros(Shape4::new(s.n, s.c, 1, 1));
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.sample(b);
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[label].f64() - max);
        for (c, e) in exps.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad.set(b, c, 0, 0, T::of((e / z - onehot) / n));
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor4::<f64>::zeros(Shape4::new(3, 4, 1, 1));
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_true_logit_gives_zero_loss() {
        let mut logits = Tensor4::<f64>::zeros(Shape4::new(1, 3, 1, 1));
        logits.set(0, 2, 0, 0, 1e9);
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.is_finite());
    }

    #[test]
    fn out_of_range_label_is_a_data_error() {
        let logits = Tensor4::<f32>::zeros(Shape4::new(2, 3, 1, 1));
        let err = softmax_cross_entropy(&logits, &[0, 3]).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("index 1")), "{err}");
    }
}
