//! Softmax cross-entropy and its per-class first and second derivatives.

/// Probabilities clipped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-15;

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Gradient `p - y` and Hessian `p (1 - p)` per class, both scaled by the
/// sample weight.
pub fn grad_hess(p: &[f64], label: usize, weight: f64) -> (Vec<f64>, Vec<f64>) {
    p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let y = if k == label { 1.0 } else { 0.0 };
            (weight * (pk - y), weight * pk * (1.0 - pk))
        })
        .unzip()
}

/// Summed categorical cross-entropy over rows of `probs` (row-major,
/// `num_classes` per row).
pub fn ce_loss(probs: &[f64], labels: &[usize], num_classes: usize) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[i * num_classes + y].clamp(PROB_EPS, 1.0 - PROB_EPS).ln())
        .sum()
}

/// Cross-entropy of a single row given logits.
pub fn ce_from_logits(logits: &[f64], label: usize) -> f64 {
    let p = softmax(logits);
    ce_loss(&p, &[label], logits.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 5]);
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let z: Vec<f64> = (0..5).map(|_| rng.random_range(-50.0..50.0)).collect();
            assert!((softmax(&z).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradient_examples() {
        let (g, h) = grad_hess(&[0.2; 5], 0, 1.0);
        let expected = [-0.8, 0.2, 0.2, 0.2, 0.2];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(h.iter().all(|v| (v - 0.16).abs() < 1e-15));
        let (g, _) = grad_hess(&[0.0, 1.0, 0.0], 1, 1.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let (_, h) = grad_hess(&[0.5, 0.5], 0, 1.0);
        assert_eq!(h, vec![0.25, 0.25]);
        let (g, h) = grad_hess(&[0.2; 5], 0, 3.0);
        assert!((g[0] + 2.4).abs() < 1e-15 && (h[1] - 0.48).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let perfect = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(ce_loss(&perfect, &[0, 1], 3) <= 2.0 * 1e-14);
        assert!((ce_loss(&[0.2; 5], &[3], 5) - 5f64.ln()).abs() < 1e-12);
        assert!((ce_loss(&[0.2; 5], &[3], 5) - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-6;
        for _ in 0..100 {
            let z: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = rng.random_range(0..5);
            let (g, _) = grad_hess(&softmax(&z), y, 1.0);
            for k in 0..5 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += eps;
                zm[k] -= eps;
                let fd = (ce_from_logits(&zp, y) - ce_from_logits(&zm, y)) / (2.0 * eps);
                let rel = (g[k] - fd).abs() / g[k].abs().max(1e-3);
                assert!(rel < 1e-5, "class {k}: analytic {} vs fd {fd}", g[k]);
            }
        }
    }
}
