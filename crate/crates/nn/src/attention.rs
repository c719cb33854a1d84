//! Multi-head scaled dot-product attention over 2-D token matrices.
//!
//! Inputs are `(tokens, dim)` matrices for one sequence; batching is the
//! caller's loop. Query and key/value sources may differ, which covers
//! both self-attention and cross-attention.

use crate::layers::{softmax_backward, softmax_rows, Dropout, Linear, LinearGrads};
use crate::tensor::Tensor2;
use crate::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Attention block: four projections plus optional attention-weight dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub dropout: Dropout,
}

/// Everything backward needs from the forward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    q_in: Tensor2,
    kv_in: Tensor2,
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    /// Per-head softmax outputs before dropout.
    probs: Vec<Tensor2>,
    /// Per-head dropout masks; `None` in eval mode.
    masks: Option<Vec<Tensor2>>,
    /// Concatenated head outputs, the input to `wo`.
    ctx: Tensor2,
}

/// Gradients for every projection in the block.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub wq: LinearGrads,
    pub wk: LinearGrads,
    pub wv: LinearGrads,
    pub wo: LinearGrads,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(rng: &mut R, dim: usize, heads: usize, dropout_rate: Real) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim must divide evenly into heads");
        MultiHeadAttention {
            heads,
            wq: Linear::new(rng, dim, dim),
            wk: Linear::new(rng, dim, dim),
            wv: Linear::new(rng, dim, dim),
            wo: Linear::new(rng, dim, dim),
            dropout: Dropout::new(dropout_rate),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.in_dim()
    }

    fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// Eval-mode or externally masked forward pass. `masks`, when given,
    /// must hold one `(q_tokens, kv_tokens)` mask per head.
    pub fn forward_with_masks(
        &self,
        q_in: &Tensor2,
        kv_in: &Tensor2,
        masks: Option<Vec<Tensor2>>,
    ) -> (Tensor2, AttentionCache) {
        let dim = self.dim();
        assert_eq!(q_in.cols, dim, "query width mismatch");
        assert_eq!(kv_in.cols, dim, "key/value width mismatch");
        let dh = self.head_dim();
        let scale = 1.0 / (dh as Real).sqrt();

        let q = self.wq.forward(q_in);
        let k = self.wk.forward(kv_in);
        let v = self.wv.forward(kv_in);

        let mut ctx = Tensor2::zeros(q_in.rows, dim);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = take_cols(&q, h * dh, dh);
            let kh = take_cols(&k, h * dh, dh);
            let vh = take_cols(&v, h * dh, dh);
            let scores = qh.matmul_t(&kh).scale(scale);
            let p = softmax_rows(&scores);
            let applied = match &masks {
                Some(ms) => Dropout::apply(&p, &ms[h]),
                None => p.clone(),
            };
            put_cols(&mut ctx, h * dh, &applied.matmul(&vh));
            probs.push(p);
        }
        let out = self.wo.forward(&ctx);
        let cache = AttentionCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            probs,
            masks,
            ctx,
        };
        (out, cache)
    }

    /// Training forward samples one dropout mask per head; eval mode skips
    /// dropout entirely.
    pub fn forward<R: Rng>(
        &self,
        q_in: &Tensor2,
        kv_in: &Tensor2,
        train: bool,
        rng: &mut R,
    ) -> (Tensor2, AttentionCache) {
        let masks = if train && self.dropout.rate > 0.0 {
            Some(
                (0..self.heads)
                    .map(|_| self.dropout.sample_mask(rng, q_in.rows, kv_in.rows))
                    .collect(),
            )
        } else {
            None
        };
        self.forward_with_masks(q_in, kv_in, masks)
    }

    /// Returns projection gradients plus gradients for both inputs.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        upstream: &Tensor2,
    ) -> (AttentionGrads, Tensor2, Tensor2) {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as Real).sqrt();

        let (wo_grads, d_ctx) = self.wo.backward(&cache.ctx, upstream);

        let mut dq = Tensor2::zeros(cache.q.rows, cache.q.cols);
        let mut dk = Tensor2::zeros(cache.k.rows, cache.k.cols);
        let mut dv = Tensor2::zeros(cache.v.rows, cache.v.cols);
        for h in 0..self.heads {
            let qh = take_cols(&cache.q, h * dh, dh);
            let kh = take_cols(&cache.k, h * dh, dh);
            let vh = take_cols(&cache.v, h * dh, dh);
            let d_ctx_h = take_cols(&d_ctx, h * dh, dh);
            let p = &cache.probs[h];
            let applied = match &cache.masks {
                Some(ms) => Dropout::apply(p, &ms[h]),
                None => p.clone(),
            };
            put_cols(&mut dv, h * dh, &applied.t_matmul(&d_ctx_h));
            let d_applied = d_ctx_h.matmul_t(&vh);
            let d_p = match &cache.masks {
                Some(ms) => Dropout::backward(&d_applied, &ms[h]),
                None => d_applied,
            };
            let d_scores = softmax_backward(p, &d_p).scale(scale);
            put_cols(&mut dq, h * dh, &d_scores.matmul(&kh));
            put_cols(&mut dk, h * dh, &d_scores.t_matmul(&qh));
        }

        let (wq_grads, dq_in) = self.wq.backward(&cache.q_in, &dq);
        let (wk_grads, dk_in) = self.wk.backward(&cache.kv_in, &dk);
        let (wv_grads, dv_in) = self.wv.backward(&cache.kv_in, &dv);
        let dkv_in = dk_in.add(&dv_in);
        let grads = AttentionGrads { wq: wq_grads, wk: wk_grads, wv: wv_grads, wo: wo_grads };
        (grads, dq_in, dkv_in)
    }
}

/// Copies a `(rows, width)` column slice starting at `start`.
fn take_cols(x: &Tensor2, start: usize, width: usize) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows, width);
    for r in 0..x.rows {
        out.row_mut(r).copy_from_slice(&x.row(r)[start..start + width]);
    }
    out
}

/// Writes `src` into the column slice of `dst` starting at `start`.
fn put_cols(dst: &mut Tensor2, start: usize, src: &Tensor2) {
    assert_eq!(dst.rows, src.rows);
    for r in 0..src.rows {
        dst.row_mut(r)[start..start + src.cols].copy_from_slice(src.row(r));
    }
}
