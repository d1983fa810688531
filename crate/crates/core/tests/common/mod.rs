//! Test-only oracles shared by the integration suites.

#![allow(dead_code)]

use kglm_core::linearize::LinearizedFact;
use kglm_core::model::{build_mask, forward, lm_loss, Dropout, MaskMode, ModelParams};

/// Mean LM loss over `batch`, computed with full forward passes only.
pub fn batch_loss(p: &ModelParams, batch: &[LinearizedFact], mode: MaskMode) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|f| {
            let out = forward(p, &f.ids, &build_mask(f, mode), Dropout::Off).unwrap();
            lm_loss(&out.logits, f).unwrap()
        })
        .sum();
    total / batch.len() as f64
}

/// Central finite differences of the mean batch loss for every scalar
/// parameter, grouped by tensor name.
pub fn finite_difference_grad(
    p: &ModelParams,
    batch: &[LinearizedFact],
    mode: MaskMode,
    h: f64,
) -> Vec<(String, Vec<f64>)> {
    let shapes: Vec<(String, usize)> = p.slices().into_iter().map(|(n, t)| (n, t.len())).collect();
    let mut out = Vec::new();
    for (gi, (name, len)) in shapes.into_iter().enumerate() {
        let mut g = Vec::with_capacity(len);
        for k in 0..len {
            let mut plus = p.clone();
            plus.slices_mut()[gi].1[k] += h;
            let mut minus = p.clone();
            minus.slices_mut()[gi].1[k] -= h;
            g.push((batch_loss(&plus, batch, mode) - batch_loss(&minus, batch, mode)) / (2.0 * h));
        }
        out.push((name, g));
    }
    out
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb == 0.0 {
        0.0
    } else {
        diff / (na + nb)
    }
}
