use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{backward, build_mask, forward_hidden, Dropout, Gradients, MaskMode, ModelParams};
use crate::error::{Error, Result};
use crate::linearize::LinearizedFact;

pub fn log_softmax_row(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

/// Summed negative log-likelihood of the object span and `[EOS]`, where the
/// token at `t` is scored by logits row `t - 1`.
pub fn lm_loss(logits: &Array2<f64>, f: &LinearizedFact) -> Result<f64> {
    let region = f.object_region();
    if region.is_empty() {
        return Err(Error::InvalidArgument("fact has no loss targets".into()));
    }
    if logits.nrows() < region.end {
        return Err(Error::InvalidArgument("logits shorter than the fact".into()));
    }
    Ok(region
        .map(|t| -log_softmax_row(logits.row(t - 1))[f.ids[t] as usize])
        .sum())
}

/// Loss and its gradient w.r.t. the logits rows `region.start - 1 .. region.end - 1`,
/// which must be exactly the rows of `logit_rows`.
pub fn lm_loss_and_grad(logit_rows: ArrayView2<'_, f64>, f: &LinearizedFact) -> Result<(f64, Array2<f64>)> {
    let region = f.object_region();
    if region.is_empty() {
        return Err(Error::InvalidArgument("fact has no loss targets".into()));
    }
    let mut loss = 0.0;
    let mut d = Array2::zeros(logit_rows.dim());
    for (r, t) in region.enumerate() {
        let lsm = log_softmax_row(logit_rows.row(r));
        let target = f.ids[t] as usize;
        loss -= lsm[target];
        let mut drow = d.row_mut(r);
        drow.assign(&lsm.mapv(f64::exp));
        drow[target] -= 1.0;
    }
    Ok((loss, d))
}

fn fact_grad(
    p: &ModelParams,
    f: &LinearizedFact,
    mode: MaskMode,
    dropout_seed: Option<u64>,
) -> Result<(f64, Gradients)> {
    let mask = build_mask(f, mode);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let dropout = match rng.as_mut() {
        Some(r) => Dropout::On(r),
        None => Dropout::Off,
    };
    let (hidden, cache) = forward_hidden(p, &f.ids, &mask, dropout)?;
    let region = f.object_region();
    let row0 = region.start - 1;
    let rows = hidden.slice(s![row0..region.end - 1, ..]);
    let logit_rows = rows.dot(&p.output_projection());
    let (loss, d_logits) = lm_loss_and_grad(logit_rows.view(), f)?;
    let mut g = p.zeros_like();
    let d_hidden = Array2::zeros(hidden.dim());
    backward(p, &cache, hidden.view(), d_hidden, Some((row0, d_logits.view())), &mut g);
    Ok((loss, g))
}

/// Per-fact dropout stream derived from the step seed.
fn example_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mean loss over the batch and its exact gradient. Per-fact work runs in
/// parallel; results are reduced in batch order so the sum is reproducible.
pub fn grad(
    p: &ModelParams,
    batch: &[LinearizedFact],
    mode: MaskMode,
    dropout_seed: Option<u64>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let parts: Vec<(f64, Gradients)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, f)| fact_grad(p, f, mode, dropout_seed.map(|s| example_seed(s, i))))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut iter = parts.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty");
    for (l, g) in iter {
        loss += l;
        total.add_assign(&g);
    }
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::{FactKind, Role};

    fn fact_with_object(n_obj: usize, vocab: u32) -> LinearizedFact {
        // <s> [O] o.. [EOS] </s>
        let mut ids = vec![1, 5];
        let mut roles = vec![Role::Bos, Role::OMark];
        for i in 0..n_obj {
            ids.push(7 + (i as u32 % (vocab - 7)));
            roles.push(Role::OTok);
        }
        ids.push(6);
        roles.push(Role::EosTok);
        ids.push(2);
        roles.push(Role::Sep);
        LinearizedFact {
            ids,
            roles,
            object_start: 1,
            kind: FactKind::Mono,
        }
    }

    #[test]
    fn uniform_logits_loss() {
        let f = fact_with_object(3, 8);
        let logits = Array2::zeros((f.len(), 8));
        let loss = lm_loss(&logits, &f).unwrap();
        assert!((loss - 4.0 * 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_near_zero_loss() {
        let f = fact_with_object(2, 10);
        let mut logits = Array2::zeros((f.len(), 10));
        for t in f.object_region() {
            logits[[t - 1, f.ids[t] as usize]] = 100.0;
        }
        assert!(lm_loss(&logits, &f).unwrap() < 1e-30);
    }

    #[test]
    fn matches_direct_softmax() {
        // Independent oracle: explicit exp / sum / ln per row.
        let f = fact_with_object(2, 9);
        let logits = Array2::from_shape_fn((f.len(), 9), |(i, j)| ((i * 7 + j * 3) % 11) as f64 * 0.37 - 1.0);
        let mut expected = 0.0;
        for t in f.object_region() {
            let row: Vec<f64> = logits.row(t - 1).to_vec();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -(row[f.ids[t] as usize].exp() / z).ln();
        }
        let got = lm_loss(&logits, &f).unwrap();
        assert!((got - expected).abs() < 1e-10);
        let region = f.object_region();
        let (l2, _) = lm_loss_and_grad(logits.slice(s![region.start - 1..region.end - 1, ..]), &f).unwrap();
        assert!((l2 - expected).abs() < 1e-10);
    }

    #[test]
    fn role_labels_outside_region_do_not_matter() {
        let f = fact_with_object(2, 9);
        let mut g = f.clone();
        g.roles[0] = Role::Sep;
        let last = g.len() - 1;
        g.roles[last] = Role::PTok;
        let logits = Array2::from_shape_fn((f.len(), 9), |(i, j)| (i as f64 - j as f64).sin());
        assert_eq!(lm_loss(&logits, &f).unwrap().to_bits(), lm_loss(&logits, &g).unwrap().to_bits());
    }

    #[test]
    fn empty_batch_is_an_error() {
        let p = ModelParams::init(&crate::model::ModelConfig::new(10), 0).unwrap();
        assert!(grad(&p, &[], MaskMode::StrictPrefix, None).is_err());
    }
}
