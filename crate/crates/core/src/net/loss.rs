//! Hybrid shape and magnitude loss: `0.5 (1 - cos(p, g)) + 0.5 mean|p - g|`.

use std::sync::atomic::{AtomicBool, Ordering};

static ZERO_NORM_WARNED: AtomicBool = AtomicBool::new(false);

fn norms(p: &[f64], g: &[f64]) -> (f64, f64, f64) {
    let dot = p.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ng = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    (dot, np, ng)
}

/// Cosine similarity, or `None` when either vector is zero.
fn cosine(p: &[f64], g: &[f64]) -> Option<f64> {
    let (dot, np, ng) = norms(p, g);
    if np == 0.0 || ng == 0.0 {
        if !ZERO_NORM_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("zero-norm vector in cosine loss; using cosine term 1");
        }
        return None;
    }
    Some(dot / (np * ng))
}

pub fn hybrid_loss(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "loss operands differ in length");
    let cos_term = match cosine(pred, truth) {
        Some(c) => 1.0 - c,
        None => 1.0,
    };
    let mae = pred.iter().zip(truth).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64;
    0.5 * cos_term + 0.5 * mae
}

/// Gradient of [`hybrid_loss`] with respect to `pred` (sign(0) taken as 0).
pub fn hybrid_loss_grad(pred: &[f64], truth: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    let mut grad: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, g)| {
            let r = p - g;
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            0.5 * s / n
        })
        .collect();
    let (dot, np, ng) = norms(pred, truth);
    if np > 0.0 && ng > 0.0 {
        let cos = dot / (np * ng);
        for ((d, p), g) in grad.iter_mut().zip(pred).zip(truth) {
            *d -= 0.5 * (g / (np * ng) - cos * p / (np * np));
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defining_cases() {
        assert!(hybrid_loss(&[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0]).abs() < 1e-12);
        assert!((hybrid_loss(&[-1.0, 0.0], &[1.0, 0.0]) - 1.5).abs() < 1e-12);
        let truth = [1.0, -2.0, 0.5, 3.0];
        let pred: Vec<f64> = truth.iter().map(|v| 2.0 * v).collect();
        let mean_abs = truth.iter().map(|v: &f64| v.abs()).sum::<f64>() / 4.0;
        assert!((hybrid_loss(&pred, &truth) - 0.5 * mean_abs).abs() < 1e-12);
    }

    #[test]
    fn zero_vectors_take_cosine_term_one() {
        assert_eq!(hybrid_loss(&[0.0, 0.0], &[0.0, 0.0]), 0.5);
        assert!((hybrid_loss(&[0.0, 0.0], &[1.0, -1.0]) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn gradient_matches_differences(
            pred in prop::collection::vec(-3.0f64..3.0, 2..12),
            seed in prop::collection::vec(-3.0f64..3.0, 12),
        ) {
            let truth: Vec<f64> = seed[..pred.len()].to_vec();
            // keep away from the kinks of |p - g|
            prop_assume!(pred.iter().zip(&truth).all(|(p, g)| (p - g).abs() > 1e-3));
            prop_assume!(truth.iter().any(|g| g.abs() > 1e-2));
            let an = hybrid_loss_grad(&pred, &truth);
            let h = 1e-7;
            for i in 0..pred.len() {
                let mut up = pred.clone();
                up[i] += h;
                let mut down = pred.clone();
                down[i] -= h;
                let fd = (hybrid_loss(&up, &truth) - hybrid_loss(&down, &truth)) / (2.0 * h);
                prop_assert!((fd - an[i]).abs() < 1e-5 * (1.0 + an[i].abs()), "{} vs {}", fd, an[i]);
            }
        }

        #[test]
        fn loss_is_bounded_below_and_symmetric_under_mirroring(
            pred in prop::collection::vec(-3.0f64..3.0, 1..10),
            seed in prop::collection::vec(-3.0f64..3.0, 10),
        ) {
            let truth = &seed[..pred.len()];
            let l = hybrid_loss(&pred, truth);
            prop_assert!(l >= -1e-15);
            let np: Vec<f64> = pred.iter().map(|v| -v).collect();
            let nt: Vec<f64> = truth.iter().map(|v| -v).collect();
            prop_assert!((hybrid_loss(&np, &nt) - l).abs() < 1e-12);
        }
    }
}
