use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AttentionMask, ModelParams};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Dropout source for a forward pass.
pub enum Dropout<'a> {
    Off,
    On(&'a mut ChaCha8Rng),
}

impl Dropout<'_> {
    /// Inverted-dropout multiplier matrix, or `None` when disabled.
    fn mask(&mut self, rows: usize, cols: usize, p: f64) -> Option<Array2<f64>> {
        match self {
            Dropout::On(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                Some(Array2::from_shape_fn((rows, cols), |_| {
                    if rng.gen::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        }
    }
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn_drop: Vec<Option<Array2<f64>>>,
    ctx: Array2<f64>,
    resid1_drop: Option<Array2<f64>>,
    ln2: LnCache,
    b: Array2<f64>,
    f_pre: Array2<f64>,
    f_act: Array2<f64>,
    resid2_drop: Option<Array2<f64>>,
}

/// Intermediate activations needed by [`backward`].
pub struct ForwardCache {
    ids: Vec<TokenId>,
    emb_drop: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

pub struct Forward {
    /// Final-layer hidden states, `l × d`.
    pub hidden: Array2<f64>,
    /// `l × |V|`; row `t` scores the token at `t + 1`.
    pub logits: Array2<f64>,
    pub cache: ForwardCache,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx`, accumulating parameter gradients into `dg`/`db`.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xhat), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row)
            .and(&xhat)
            .for_each(|r, &xh| *r = inv * (*r - mean_d - xh * mean_dx));
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn apply_drop(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// Row-wise softmax over the masked scores. Entries at `-inf` come out as exactly 0.
fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Forward pass producing hidden states only.
pub fn forward_hidden(
    p: &ModelParams,
    ids: &[TokenId],
    mask: &AttentionMask,
    mut dropout: Dropout<'_>,
) -> Result<(Array2<f64>, ForwardCache)> {
    let cfg = &p.config;
    let l = ids.len();
    if l > cfg.max_len {
        return Err(Error::TooLong {
            len: l,
            max: cfg.max_len,
        });
    }
    if l == 0 {
        return Err(Error::InvalidArgument("empty input sequence".into()));
    }
    if mask.len() != l {
        return Err(Error::InvalidArgument(format!(
            "mask is {}x{} for a sequence of length {l}",
            mask.len(),
            mask.len()
        )));
    }
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let pdrop = cfg.dropout;

    let mut x = Array2::zeros((l, d));
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                id,
                size: cfg.vocab_size,
            });
        }
        let mut row = x.row_mut(i);
        row += &p.tok_emb.row(id as usize);
        row += &p.pos_emb.row(i);
    }
    let emb_drop = dropout.mask(l, d, pdrop);
    apply_drop(&mut x, &emb_drop);

    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let (a, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
        let q = a.dot(&lp.wq) + &lp.bq;
        let k = a.dot(&lp.wk);
        let v = a.dot(&lp.wv) + &lp.bv;
        let mut ctx = Array2::zeros((l, d));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        let mut attn_drop = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let mut sc = qh.dot(&kh.t()) * scale + &mask.m;
            softmax_rows(&mut sc);
            let dm = dropout.mask(l, l, pdrop);
            let pd = match &dm {
                Some(m) => &sc * m,
                None => sc.clone(),
            };
            ctx.slice_mut(cols).assign(&pd.dot(&v.slice(cols)));
            probs.push(sc);
            attn_drop.push(dm);
        }
        let mut o = ctx.dot(&lp.wo) + &lp.bo;
        let resid1_drop = dropout.mask(l, d, pdrop);
        apply_drop(&mut o, &resid1_drop);
        let x_mid = &x + &o;

        let (b, ln2) = layer_norm(&x_mid, &lp.ln2_g, &lp.ln2_b);
        let f_pre = b.dot(&lp.w1) + &lp.b1;
        let f_act = f_pre.mapv(gelu);
        let mut f_out = f_act.dot(&lp.w2) + &lp.b2;
        let resid2_drop = dropout.mask(l, d, pdrop);
        apply_drop(&mut f_out, &resid2_drop);
        x = x_mid + f_out;

        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn_drop,
            ctx,
            resid1_drop,
            ln2,
            b,
            f_pre,
            f_act,
            resid2_drop,
        });
    }
    let (hidden, lnf) = layer_norm(&x, &p.lnf_g, &p.lnf_b);
    Ok((
        hidden,
        ForwardCache {
            ids: ids.to_vec(),
            emb_drop,
            layers,
            lnf,
        },
    ))
}

/// Full forward pass: hidden states and logits `H · W`.
pub fn forward(p: &ModelParams, ids: &[TokenId], mask: &AttentionMask, dropout: Dropout<'_>) -> Result<Forward> {
    let (hidden, cache) = forward_hidden(p, ids, mask, dropout)?;
    let logits = hidden.dot(&p.output_projection());
    Ok(Forward {
        hidden,
        logits,
        cache,
    })
}

/// Back-propagates `d_hidden` (and optionally gradients of logits for the
/// hidden rows starting at `logit_row0`) into `grads`.
pub fn backward(
    p: &ModelParams,
    cache: &ForwardCache,
    hidden: ArrayView2<'_, f64>,
    mut d_hidden: Array2<f64>,
    d_logits: Option<(usize, ArrayView2<'_, f64>)>,
    grads: &mut ModelParams,
) {
    let cfg = &p.config;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    if let Some((row0, dl)) = d_logits {
        let rows = s![row0..row0 + dl.nrows(), ..];
        let h = hidden.slice(rows);
        match (&p.out_w, &mut grads.out_w) {
            (Some(w), Some(gw)) => {
                *gw += &h.t().dot(&dl);
                let mut dhr = d_hidden.slice_mut(rows);
                dhr += &dl.dot(&w.t());
            }
            _ => {
                grads.tok_emb += &dl.t().dot(&h);
                let mut dhr = d_hidden.slice_mut(rows);
                dhr += &dl.dot(&p.tok_emb);
            }
        }
    }

    let mut dx = layer_norm_backward(&d_hidden, &cache.lnf, &p.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

    for (li, (lp, lc)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[li];

        let mut d_fout = dx.clone();
        apply_drop(&mut d_fout, &lc.resid2_drop);
        g.b2 += &d_fout.sum_axis(Axis(0));
        g.w2 += &lc.f_act.t().dot(&d_fout);
        let mut d_f = d_fout.dot(&lp.w2.t());
        Zip::from(&mut d_f).and(&lc.f_pre).for_each(|df, &x| *df *= gelu_grad(x));
        g.b1 += &d_f.sum_axis(Axis(0));
        g.w1 += &lc.b.t().dot(&d_f);
        let d_b = d_f.dot(&lp.w1.t());
        let d_xmid = dx + layer_norm_backward(&d_b, &lc.ln2, &lp.ln2_g, &mut g.ln2_g, &mut g.ln2_b);

        let mut d_o = d_xmid.clone();
        apply_drop(&mut d_o, &lc.resid1_drop);
        g.bo += &d_o.sum_axis(Axis(0));
        g.wo += &lc.ctx.t().dot(&d_o);
        let d_ctx = d_o.dot(&lp.wo.t());

        let l = d_ctx.nrows();
        let mut dq = Array2::zeros((l, cfg.d_model));
        let mut dk = Array2::zeros((l, cfg.d_model));
        let mut dv = Array2::zeros((l, cfg.d_model));
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let probs = &lc.probs[h];
            let d_ctx_h = d_ctx.slice(cols);
            let (pd, mut d_p) = match &lc.attn_drop[h] {
                Some(m) => {
                    let pd = probs * m;
                    let d_pd = d_ctx_h.dot(&lc.v.slice(cols).t());
                    (pd, d_pd * m)
                }
                None => (probs.clone(), d_ctx_h.dot(&lc.v.slice(cols).t())),
            };
            dv.slice_mut(cols).assign(&pd.t().dot(&d_ctx_h));
            // softmax backward: dS = P * (dP - rowsum(dP * P))
            for (mut drow, prow) in d_p.rows_mut().into_iter().zip(probs.rows()) {
                let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut drow).and(&prow).for_each(|ds, &pv| *ds = pv * (*ds - dot));
            }
            let d_s = d_p;
            dq.slice_mut(cols).assign(&(d_s.dot(&lc.k.slice(cols)) * scale));
            dk.slice_mut(cols).assign(&(d_s.t().dot(&lc.q.slice(cols)) * scale));
        }
        g.bq += &dq.sum_axis(Axis(0));
        g.bv += &dv.sum_axis(Axis(0));
        g.wq += &lc.a.t().dot(&dq);
        g.wk += &lc.a.t().dot(&dk);
        g.wv += &lc.a.t().dot(&dv);
        let d_a = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
        dx = d_xmid + layer_norm_backward(&d_a, &lc.ln1, &lp.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    }

    apply_drop(&mut dx, &cache.emb_drop);
    for (i, &id) in cache.ids.iter().enumerate() {
        let row = dx.row(i);
        let mut te = grads.tok_emb.row_mut(id as usize);
        te += &row;
        let mut pe = grads.pos_emb.row_mut(i);
        pe += &row;
    }
}
