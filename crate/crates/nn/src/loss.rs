//! Loss functions. Each returns the scalar loss together with its exact
//! gradient with respect to the prediction tensor, ready to feed into
//! [`crate::graph::ModelGraph::backward`].

use crate::error::NnError;
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking the log, so a confidently
/// wrong prediction yields a large finite loss instead of infinity.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean squared error over all elements. Prediction and target must have
/// identical shapes; regression heads use `[batch, 1]`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::shape("mse", target.shape(), pred.shape()));
    }
    if pred.is_empty() {
        return Err(NnError::InvalidConfig("mse on an empty batch".into()));
    }
    let n = pred.len() as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Cross-entropy against integer class labels on `[batch, classes]`
/// probabilities (softmax output, not logits).
///
/// With `class_weights`, each sample contributes `w[label] * -ln(p)` and the
/// total is divided by the sum of the weights actually used, so the loss
/// stays a weighted mean. Probabilities below [`PROB_FLOOR`] are clamped;
/// in that region the gradient is zero, matching the computed loss exactly.
pub fn cross_entropy(
    probs: &Tensor,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Tensor), NnError> {
    if probs.rank() != 2 {
        return Err(NnError::shape("cross_entropy", &[0, 0], probs.shape()));
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(NnError::shape("cross_entropy labels", &[n], &[labels.len()]));
    }
    if n == 0 {
        return Err(NnError::InvalidConfig("cross_entropy on an empty batch".into()));
    }
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(NnError::shape("class weights", &[k], &[w.len()]));
        }
        if w.iter().any(|v| *v < 0.0) {
            return Err(NnError::InvalidConfig("class weights must be non-negative".into()));
        }
    }
    let mut weight_sum = 0.0;
    for (i, label) in labels.iter().enumerate() {
        if *label >= k {
            return Err(NnError::InvalidConfig(format!(
                "label {label} out of range for {k} classes (sample {i})"
            )));
        }
        weight_sum += class_weights.map_or(1.0, |w| w[*label]);
    }
    if weight_sum == 0.0 {
        return Err(NnError::InvalidConfig(
            "all samples have zero class weight".into(),
        ));
    }
    let mut grad = Tensor::zeros(probs.shape());
    let mut loss = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let w = class_weights.map_or(1.0, |w| w[*label]);
        let p = probs.at2(i, *label);
        if p < PROB_FLOOR {
            loss += w * -(PROB_FLOOR.ln());
        } else {
            loss += w * -(p.ln());
            let at = grad.idx2(i, *label);
            grad.data_mut()[at] = -w / (p * weight_sum);
        }
    }
    Ok((loss / weight_sum, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_exact_prediction_is_zero() {
        let p = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let (loss, grad) = mse(&p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mse_matches_hand_computation() {
        let p = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let t = Tensor::from_vec(&[2, 1], vec![0.0, 1.0]).unwrap();
        let (loss, grad) = mse(&p, &t).unwrap();
        assert!((loss - (1.0 + 4.0) / 2.0).abs() < 1e-12);
        assert!((grad.data()[0] - 1.0).abs() < 1e-12, "2*(1-0)/2");
        assert!((grad.data()[1] - 2.0).abs() < 1e-12, "2*(3-1)/2");
    }

    #[test]
    fn cross_entropy_prefers_confident_correct_predictions() {
        let good = Tensor::from_vec(&[1, 3], vec![0.8, 0.1, 0.1]).unwrap();
        let bad = Tensor::from_vec(&[1, 3], vec![0.1, 0.8, 0.1]).unwrap();
        let (l_good, _) = cross_entropy(&good, &[0], None).unwrap();
        let (l_bad, _) = cross_entropy(&bad, &[0], None).unwrap();
        assert!(l_good < l_bad);
        assert!((l_good - (-0.8f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_stays_finite_at_zero_probability() {
        let p = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let (loss, grad) = cross_entropy(&p, &[0], None).unwrap();
        assert!(loss.is_finite());
        assert!((loss - -(PROB_FLOOR.ln())).abs() < 1e-9);
        assert_eq!(grad.data()[0], 0.0, "clamped region has zero slope");
    }

    #[test]
    fn class_weights_rebalance_the_mean() {
        let p = Tensor::from_vec(&[2, 2], vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        // Sample 0 has label 0 (p=0.5), sample 1 label 1 (p=0.75).
        let (unweighted, _) = cross_entropy(&p, &[0, 1], None).unwrap();
        let expect = (-(0.5f64.ln()) - 0.75f64.ln()) / 2.0;
        assert!((unweighted - expect).abs() < 1e-12);
        // Weighting class 0 by 3 shifts the mean toward its loss.
        let (weighted, _) = cross_entropy(&p, &[0, 1], Some(&[3.0, 1.0])).unwrap();
        let expect_w = (3.0 * -(0.5f64.ln()) + -(0.75f64.ln())) / 4.0;
        assert!((weighted - expect_w).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let p = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert!(cross_entropy(&p, &[2], None).is_err(), "label out of range");
        assert!(cross_entropy(&p, &[0, 1], None).is_err(), "label count mismatch");
        assert!(cross_entropy(&p, &[0], Some(&[1.0])).is_err(), "weight count mismatch");
    }
}
