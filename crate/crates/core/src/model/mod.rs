//! A small pre-layer-norm transformer trained with a causal objective on the
//! object span of linearized facts.

mod loss;
mod mask;
mod transformer;

pub use loss::{grad, lm_loss, lm_loss_and_grad, log_softmax_row};
pub use mask::{build_mask, build_mask_for, AttentionMask, MaskMode};
pub use transformer::{backward, forward, forward_hidden, Dropout, Forward, ForwardCache};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// Reuse the token embedding matrix as the output projection.
    pub tie_output: bool,
    pub init_std: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 256,
            max_len: 30,
            dropout: 0.1,
            tie_output: false,
            init_std: 0.02,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    /// No key bias: a per-row constant shift cannot change the softmax.
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable tensors. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    /// `d × |V|`; absent when tied to `tok_emb`.
    pub out_w: Option<Array2<f64>>,
}

pub type Gradients = ModelParams;

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|e| Error::InvalidArgument(format!("init_std: {e}")))?;
        let mut mat = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| normal.sample(&mut rng));
        let (d, f, v) = (config.d_model, config.ffn_dim, config.vocab_size);
        let tok_emb = mat(v, d);
        let pos_emb = mat(config.max_len, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                wq: mat(d, d),
                bq: Array1::zeros(d),
                wk: mat(d, d),
                wv: mat(d, d),
                bv: Array1::zeros(d),
                wo: mat(d, d),
                bo: Array1::zeros(d),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
                w1: mat(d, f),
                b1: Array1::zeros(f),
                w2: mat(f, d),
                b2: Array1::zeros(d),
            })
            .collect();
        let out_w = (!config.tie_output).then(|| mat(d, v));
        Ok(ModelParams {
            config: config.clone(),
            tok_emb,
            pos_emb,
            layers,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
            out_w,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn slices(&self) -> Vec<(String, &[f64])> {
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("contiguous")
        }
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("contiguous")
        }
        let mut out = vec![("tok_emb".to_owned(), s2(&self.tok_emb)), ("pos_emb".to_owned(), s2(&self.pos_emb))];
        for (i, l) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("layer{i}.{s}");
            out.extend([
                (n("ln1_g"), s1(&l.ln1_g)),
                (n("ln1_b"), s1(&l.ln1_b)),
                (n("wq"), s2(&l.wq)),
                (n("bq"), s1(&l.bq)),
                (n("wk"), s2(&l.wk)),
                (n("wv"), s2(&l.wv)),
                (n("bv"), s1(&l.bv)),
                (n("wo"), s2(&l.wo)),
                (n("bo"), s1(&l.bo)),
                (n("ln2_g"), s1(&l.ln2_g)),
                (n("ln2_b"), s1(&l.ln2_b)),
                (n("w1"), s2(&l.w1)),
                (n("b1"), s1(&l.b1)),
                (n("w2"), s2(&l.w2)),
                (n("b2"), s1(&l.b2)),
            ]);
        }
        out.push(("lnf_g".to_owned(), s1(&self.lnf_g)));
        out.push(("lnf_b".to_owned(), s1(&self.lnf_b)));
        if let Some(w) = &self.out_w {
            out.push(("out_w".to_owned(), s2(w)));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("contiguous")
        }
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("contiguous")
        }
        let mut out = vec![
            ("tok_emb".to_owned(), s2(&mut self.tok_emb)),
            ("pos_emb".to_owned(), s2(&mut self.pos_emb)),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let n = |s: &str| format!("layer{i}.{s}");
            out.extend([
                (n("ln1_g"), s1(&mut l.ln1_g)),
                (n("ln1_b"), s1(&mut l.ln1_b)),
                (n("wq"), s2(&mut l.wq)),
                (n("bq"), s1(&mut l.bq)),
                (n("wk"), s2(&mut l.wk)),
                (n("wv"), s2(&mut l.wv)),
                (n("bv"), s1(&mut l.bv)),
                (n("wo"), s2(&mut l.wo)),
                (n("bo"), s1(&mut l.bo)),
                (n("ln2_g"), s1(&mut l.ln2_g)),
                (n("ln2_b"), s1(&mut l.ln2_b)),
                (n("w1"), s2(&mut l.w1)),
                (n("b1"), s1(&mut l.b1)),
                (n("w2"), s2(&mut l.w2)),
                (n("b2"), s1(&mut l.b2)),
            ]);
        }
        out.push(("lnf_g".to_owned(), s1(&mut self.lnf_g)));
        out.push(("lnf_b".to_owned(), s1(&mut self.lnf_b)));
        if let Some(w) = &mut self.out_w {
            out.push(("out_w".to_owned(), s2(w)));
        }
        out
    }

    pub fn for_each(&self, mut f: impl FnMut(&str, &[f64])) {
        for (n, t) in self.slices() {
            f(&n, t);
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for (n, t) in self.slices_mut() {
            f(&n, t);
        }
    }

    /// Pairwise visit of two identically shaped parameter sets.
    pub fn zip_mut(&mut self, other: &ModelParams, mut f: impl FnMut(&str, &mut [f64], &[f64])) {
        for ((n, a), (_, b)) in self.slices_mut().into_iter().zip(other.slices()) {
            f(&n, a, b);
        }
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each(|n, _| names.push(n.to_owned()));
        names
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, t| n += t.len());
        n
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &ModelParams) {
        self.zip_mut(other, |_, a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        });
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x *= s));
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.for_each(|_, t| sq += t.iter().map(|x| x * x).sum::<f64>());
        sq.sqrt()
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, t| ok &= t.iter().all(|x| x.is_finite()));
        ok
    }

    /// Output projection as `d × |V|` (the transposed embedding when tied).
    pub fn output_projection(&self) -> ndarray::ArrayView2<'_, f64> {
        match &self.out_w {
            Some(w) => w.view(),
            None => self.tok_emb.t(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_finite() {
        let cfg = ModelConfig::new(20);
        let a = ModelParams::init(&cfg, 3).unwrap();
        let b = ModelParams::init(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.all_finite());
        assert!(a.out_w.is_some());
        assert_ne!(a, ModelParams::init(&cfg, 4).unwrap());
    }

    #[test]
    fn tensor_visit_order_is_stable() {
        let mut cfg = ModelConfig::new(10);
        cfg.n_layers = 1;
        let p = ModelParams::init(&cfg, 0).unwrap();
        let names = p.tensor_names();
        assert_eq!(names.first().unwrap(), "tok_emb");
        assert_eq!(names.last().unwrap(), "out_w");
        assert_eq!(names.len(), 2 + 15 + 2 + 1);
        let mut z = p.zeros_like();
        z.add_assign(&p);
        assert_eq!(z, p);
    }

    #[test]
    fn rejects_bad_head_split() {
        let mut cfg = ModelConfig::new(10);
        cfg.n_heads = 3;
        assert!(ModelParams::init(&cfg, 0).is_err());
    }
}
