//! Denoising backbones: a chunk transformer and a flat MLP, behind one
//! batched forward/backward interface.
//!
//! The transformer embeds noised action tokens with learned positions and
//! decodes them through pre-norm blocks of bidirectional self-attention,
//! cross-attention into [time token, observation tokens], and a GELU MLP.
//! Conditioning tokens are plain linear projections. The MLP variant eats
//! the flattened chunk, a sinusoidal time embedding, and the flattened
//! observation stack as one row.

use crate::Real;
use pianoforte_nn::{
    sinusoidal_embedding, Activation, AttentionCache, LayerNorm, Linear, Mlp, MlpCache, MlpSpec,
    MultiHeadAttention, Tensor2,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One pre-norm decoder block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone)]
struct BlockCache {
    x1: Tensor2,
    sa: AttentionCache,
    x2: Tensor2,
    ca: AttentionCache,
    x3: Tensor2,
    t3: Tensor2,
    h_pre: Tensor2,
    h: Tensor2,
}

impl DecoderBlock {
    fn new<R: Rng>(rng: &mut R, embed: usize, heads: usize, dropout: Real) -> Self {
        DecoderBlock {
            ln1: LayerNorm::new(embed),
            self_attn: MultiHeadAttention::new(rng, embed, heads, dropout),
            ln2: LayerNorm::new(embed),
            cross_attn: MultiHeadAttention::new(rng, embed, heads, dropout),
            ln3: LayerNorm::new(embed),
            ff1: Linear::new(rng, embed, 4 * embed),
            ff2: Linear::new(rng, 4 * embed, embed),
        }
    }

    fn forward<R: Rng>(
        &self,
        x: &Tensor2,
        cond: &Tensor2,
        train: bool,
        rng: &mut R,
    ) -> (Tensor2, BlockCache) {
        let x1 = x.clone();
        let t1 = self.ln1.forward(&x1);
        let (sa_out, sa) = self.self_attn.forward(&t1, &t1, train, rng);
        let x2 = x1.add(&sa_out);
        let t2 = self.ln2.forward(&x2);
        let (ca_out, ca) = self.cross_attn.forward(&t2, cond, train, rng);
        let x3 = x2.add(&ca_out);
        let t3 = self.ln3.forward(&x3);
        let h_pre = self.ff1.forward(&t3);
        let h = Activation::Gelu.forward(&h_pre);
        let y = self.ff2.forward(&h);
        let x4 = x3.add(&y);
        (x4, BlockCache { x1, sa, x2, ca, x3, t3, h_pre, h })
    }

    /// Returns (grads in canonical block order, dx, dcond).
    fn backward(
        &self,
        cache: &BlockCache,
        upstream: &Tensor2,
    ) -> (Vec<Tensor2>, Tensor2, Tensor2) {
        // Feed-forward residual.
        let (ff2_g, dh) = self.ff2.backward(&cache.h, upstream);
        let dh_pre = Activation::Gelu.backward(&cache.h_pre, &dh);
        let (ff1_g, dt3) = self.ff1.backward(&cache.t3, &dh_pre);
        let (ln3_g, dx3_ff) = self.ln3.backward(&cache.x3, &dt3);
        let dx3 = upstream.add(&dx3_ff);

        // Cross-attention residual; key/value gradients flow to cond.
        let (ca_g, dt2, dcond) = self.cross_attn.backward(&cache.ca, &dx3);
        let (ln2_g, dx2_ca) = self.ln2.backward(&cache.x2, &dt2);
        let dx2 = dx3.add(&dx2_ca);

        // Self-attention residual; query and key/value share one input.
        let (sa_g, dq1, dkv1) = self.self_attn.backward(&cache.sa, &dx2);
        let dt1 = dq1.add(&dkv1);
        let (ln1_g, dx1_sa) = self.ln1.backward(&cache.x1, &dt1);
        let dx1 = dx2.add(&dx1_sa);

        let grads = vec![
            ln1_g.gain,
            ln1_g.shift,
            sa_g.wq.weight,
            sa_g.wq.bias,
            sa_g.wk.weight,
            sa_g.wk.bias,
            sa_g.wv.weight,
            sa_g.wv.bias,
            sa_g.wo.weight,
            sa_g.wo.bias,
            ln2_g.gain,
            ln2_g.shift,
            ca_g.wq.weight,
            ca_g.wq.bias,
            ca_g.wk.weight,
            ca_g.wk.bias,
            ca_g.wv.weight,
            ca_g.wv.bias,
            ca_g.wo.weight,
            ca_g.wo.bias,
            ln3_g.gain,
            ln3_g.shift,
            ff1_g.weight,
            ff1_g.bias,
            ff2_g.weight,
            ff2_g.bias,
        ];
        (grads, dx1, dcond)
    }

    fn param_names(i: usize) -> Vec<String> {
        fn attn(names: &mut Vec<String>, i: usize, p: &str) {
            for w in ["wq", "wk", "wv", "wo"] {
                names.push(format!("block{i}.{p}.{w}.weight"));
                names.push(format!("block{i}.{p}.{w}.bias"));
            }
        }
        let mut names = vec![format!("block{i}.ln1.gain"), format!("block{i}.ln1.shift")];
        attn(&mut names, i, "self_attn");
        names.push(format!("block{i}.ln2.gain"));
        names.push(format!("block{i}.ln2.shift"));
        attn(&mut names, i, "cross_attn");
        names.push(format!("block{i}.ln3.gain"));
        names.push(format!("block{i}.ln3.shift"));
        names.push(format!("block{i}.ff1.weight"));
        names.push(format!("block{i}.ff1.bias"));
        names.push(format!("block{i}.ff2.weight"));
        names.push(format!("block{i}.ff2.bias"));
        names
    }

    fn params(&self) -> Vec<&Tensor2> {
        vec![
            &self.ln1.gain,
            &self.ln1.shift,
            &self.self_attn.wq.weight,
            &self.self_attn.wq.bias,
            &self.self_attn.wk.weight,
            &self.self_attn.wk.bias,
            &self.self_attn.wv.weight,
            &self.self_attn.wv.bias,
            &self.self_attn.wo.weight,
            &self.self_attn.wo.bias,
            &self.ln2.gain,
            &self.ln2.shift,
            &self.cross_attn.wq.weight,
            &self.cross_attn.wq.bias,
            &self.cross_attn.wk.weight,
            &self.cross_attn.wk.bias,
            &self.cross_attn.wv.weight,
            &self.cross_attn.wv.bias,
            &self.cross_attn.wo.weight,
            &self.cross_attn.wo.bias,
            &self.ln3.gain,
            &self.ln3.shift,
            &self.ff1.weight,
            &self.ff1.bias,
            &self.ff2.weight,
            &self.ff2.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![
            &mut self.ln1.gain,
            &mut self.ln1.shift,
            &mut self.self_attn.wq.weight,
            &mut self.self_attn.wq.bias,
            &mut self.self_attn.wk.weight,
            &mut self.self_attn.wk.bias,
            &mut self.self_attn.wv.weight,
            &mut self.self_attn.wv.bias,
            &mut self.self_attn.wo.weight,
            &mut self.self_attn.wo.bias,
            &mut self.ln2.gain,
            &mut self.ln2.shift,
            &mut self.cross_attn.wq.weight,
            &mut self.cross_attn.wq.bias,
            &mut self.cross_attn.wk.weight,
            &mut self.cross_attn.wk.bias,
            &mut self.cross_attn.wv.weight,
            &mut self.cross_attn.wv.bias,
            &mut self.cross_attn.wo.weight,
            &mut self.cross_attn.wo.bias,
            &mut self.ln3.gain,
            &mut self.ln3.shift,
            &mut self.ff1.weight,
            &mut self.ff1.bias,
            &mut self.ff2.weight,
            &mut self.ff2.bias,
        ]
    }
}

/// Decoder-only transformer over one action chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkTransformer {
    pub act_dim: usize,
    pub obs_dim: usize,
    pub pred_horizon: usize,
    pub obs_horizon: usize,
    pub embed: usize,
    pub action_embed: Linear,
    /// Learned position embedding, one row per chunk slot.
    pub pos_emb: Tensor2,
    pub time_proj: Linear,
    pub obs_proj: Linear,
    pub blocks: Vec<DecoderBlock>,
    pub final_ln: LayerNorm,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct TransformerCache {
    time_emb: Tensor2,
    obs: Tensor2,
    chunk: Tensor2,
    blocks: Vec<BlockCache>,
    x_final: Tensor2,
    normed: Tensor2,
}

impl ChunkTransformer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        rng: &mut R,
        act_dim: usize,
        obs_dim: usize,
        pred_horizon: usize,
        obs_horizon: usize,
        layers: usize,
        heads: usize,
        embed: usize,
        dropout: Real,
    ) -> Self {
        assert!(layers >= 1 && pred_horizon >= 1 && obs_horizon >= 1);
        let mut pos_emb = Tensor2::zeros(pred_horizon, embed);
        for v in pos_emb.data.iter_mut() {
            *v = pianoforte_nn::truncated_normal(rng, 0.02);
        }
        ChunkTransformer {
            act_dim,
            obs_dim,
            pred_horizon,
            obs_horizon,
            embed,
            action_embed: Linear::new(rng, act_dim, embed),
            pos_emb,
            time_proj: Linear::new(rng, embed, embed),
            obs_proj: Linear::new(rng, obs_dim, embed),
            blocks: (0..layers).map(|_| DecoderBlock::new(rng, embed, heads, dropout)).collect(),
            final_ln: LayerNorm::new(embed),
            head: Linear::new(rng, embed, act_dim),
        }
    }

    /// One sample: chunk is (H_p, act_dim), obs is (H_o, obs_dim), t is the
    /// flow or diffusion time. Returns the (H_p, act_dim) prediction.
    pub fn forward_sample<R: Rng>(
        &self,
        chunk: &Tensor2,
        t: Real,
        obs: &Tensor2,
        train: bool,
        rng: &mut R,
    ) -> (Tensor2, TransformerCache) {
        assert_eq!(chunk.shape(), (self.pred_horizon, self.act_dim));
        assert_eq!(obs.shape(), (self.obs_horizon, self.obs_dim));
        let time_emb = Tensor2::row_vector(sinusoidal_embedding(t, self.embed));
        let time_tok = self.time_proj.forward(&time_emb);
        let obs_toks = self.obs_proj.forward(obs);
        let mut cond = Tensor2::zeros(1 + self.obs_horizon, self.embed);
        cond.row_mut(0).copy_from_slice(time_tok.row(0));
        for r in 0..self.obs_horizon {
            cond.row_mut(1 + r).copy_from_slice(obs_toks.row(r));
        }
        let mut x = self.action_embed.forward(chunk).add(&self.pos_emb);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&x, &cond, train, rng);
            x = next;
            blocks.push(cache);
        }
        let normed = self.final_ln.forward(&x);
        let out = self.head.forward(&normed);
        let cache = TransformerCache {
            time_emb,
            obs: obs.clone(),
            chunk: chunk.clone(),
            blocks,
            x_final: x,
            normed,
        };
        (out, cache)
    }

    /// Gradients for one sample in canonical parameter order.
    pub fn backward_sample(&self, cache: &TransformerCache, upstream: &Tensor2) -> Vec<Tensor2> {
        let (head_g, d_normed) = self.head.backward(&cache.normed, upstream);
        let (final_ln_g, mut dx) = self.final_ln.backward(&cache.x_final, &d_normed);
        let mut dcond = Tensor2::zeros(1 + self.obs_horizon, self.embed);
        let mut block_grads: Vec<Vec<Tensor2>> = Vec::with_capacity(self.blocks.len());
        for (block, bcache) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (grads, dx_prev, dcond_b) = block.backward(bcache, &dx);
            dx = dx_prev;
            dcond.add_assign(&dcond_b);
            block_grads.push(grads);
        }
        block_grads.reverse();

        // Split conditioning gradients back into their projections.
        let mut d_time_tok = Tensor2::zeros(1, self.embed);
        d_time_tok.row_mut(0).copy_from_slice(dcond.row(0));
        let mut d_obs_toks = Tensor2::zeros(self.obs_horizon, self.embed);
        for r in 0..self.obs_horizon {
            d_obs_toks.row_mut(r).copy_from_slice(dcond.row(1 + r));
        }
        let (time_g, _) = self.time_proj.backward(&cache.time_emb, &d_time_tok);
        let (obs_g, _) = self.obs_proj.backward(&cache.obs, &d_obs_toks);

        // dx at the top is both the action-embedding upstream and the
        // position-embedding gradient.
        let (embed_g, _) = self.action_embed.backward(&cache.chunk, &dx);
        let d_pos = dx;

        let mut grads = vec![
            embed_g.weight,
            embed_g.bias,
            d_pos,
            time_g.weight,
            time_g.bias,
            obs_g.weight,
            obs_g.bias,
        ];
        for g in block_grads {
            grads.extend(g);
        }
        grads.push(final_ln_g.gain);
        grads.push(final_ln_g.shift);
        grads.push(head_g.weight);
        grads.push(head_g.bias);
        grads
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "action_embed.weight".to_string(),
            "action_embed.bias".to_string(),
            "pos_emb".to_string(),
            "time_proj.weight".to_string(),
            "time_proj.bias".to_string(),
            "obs_proj.weight".to_string(),
            "obs_proj.bias".to_string(),
        ];
        for i in 0..self.blocks.len() {
            names.extend(DecoderBlock::param_names(i));
        }
        names.push("final_ln.gain".to_string());
        names.push("final_ln.shift".to_string());
        names.push("head.weight".to_string());
        names.push("head.bias".to_string());
        names
    }

    pub fn params(&self) -> Vec<&Tensor2> {
        let mut out = vec![
            &self.action_embed.weight,
            &self.action_embed.bias,
            &self.pos_emb,
            &self.time_proj.weight,
            &self.time_proj.bias,
            &self.obs_proj.weight,
            &self.obs_proj.bias,
        ];
        for block in &self.blocks {
            out.extend(block.params());
        }
        out.push(&self.final_ln.gain);
        out.push(&self.final_ln.shift);
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = vec![
            &mut self.action_embed.weight,
            &mut self.action_embed.bias,
            &mut self.pos_emb,
            &mut self.time_proj.weight,
            &mut self.time_proj.bias,
            &mut self.obs_proj.weight,
            &mut self.obs_proj.bias,
        ];
        for block in &mut self.blocks {
            out.extend(block.params_mut());
        }
        out.push(&mut self.final_ln.gain);
        out.push(&mut self.final_ln.shift);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}

/// Width of the sinusoidal time feature fed to the MLP backbone.
pub const MLP_TIME_DIM: usize = 32;

/// A denoising backbone: maps (noised chunk, time, observation stack) to a
/// chunk-shaped prediction, with hand-written gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Backbone {
    Mlp { net: Mlp, act_dim: usize, pred_horizon: usize, obs_horizon: usize, obs_dim: usize },
    Transformer(Box<ChunkTransformer>),
}

/// Forward state for one batch.
pub enum BackboneCache {
    Mlp(MlpCache),
    Transformer(Vec<TransformerCache>),
}

impl Backbone {
    pub fn new_mlp<R: Rng>(
        rng: &mut R,
        act_dim: usize,
        obs_dim: usize,
        pred_horizon: usize,
        obs_horizon: usize,
        hidden: &[usize],
    ) -> Self {
        let in_dim = pred_horizon * act_dim + MLP_TIME_DIM + obs_horizon * obs_dim;
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(pred_horizon * act_dim);
        Backbone::Mlp {
            net: Mlp::new(rng, MlpSpec::new(sizes, Activation::Gelu)),
            act_dim,
            pred_horizon,
            obs_horizon,
            obs_dim,
        }
    }

    pub fn chunk_width(&self) -> usize {
        match self {
            Backbone::Mlp { act_dim, pred_horizon, .. } => act_dim * pred_horizon,
            Backbone::Transformer(t) => t.act_dim * t.pred_horizon,
        }
    }

    pub fn obs_width(&self) -> usize {
        match self {
            Backbone::Mlp { obs_dim, obs_horizon, .. } => obs_dim * obs_horizon,
            Backbone::Transformer(t) => t.obs_dim * t.obs_horizon,
        }
    }

    /// Batched prediction: `chunks` is (B, H_p*act_dim), `obs` is
    /// (B, H_o*obs_dim), one time value per row.
    pub fn forward_batch<R: Rng>(
        &self,
        chunks: &Tensor2,
        ts: &[Real],
        obs: &Tensor2,
        train: bool,
        rng: &mut R,
    ) -> (Tensor2, BackboneCache) {
        assert_eq!(chunks.rows, ts.len());
        assert_eq!(chunks.rows, obs.rows);
        assert_eq!(chunks.cols, self.chunk_width());
        assert_eq!(obs.cols, self.obs_width());
        match self {
            Backbone::Mlp { net, .. } => {
                let mut input =
                    Tensor2::zeros(chunks.rows, chunks.cols + MLP_TIME_DIM + obs.cols);
                for (r, &t_r) in ts.iter().enumerate() {
                    let row = input.row_mut(r);
                    row[..chunks.cols].copy_from_slice(chunks.row(r));
                    row[chunks.cols..chunks.cols + MLP_TIME_DIM]
                        .copy_from_slice(&sinusoidal_embedding(t_r, MLP_TIME_DIM));
                    row[chunks.cols + MLP_TIME_DIM..].copy_from_slice(obs.row(r));
                }
                let (out, cache) = net.forward(&input, train, rng);
                (out, BackboneCache::Mlp(cache))
            }
            Backbone::Transformer(t) => {
                let mut out = Tensor2::zeros(chunks.rows, chunks.cols);
                let mut caches = Vec::with_capacity(chunks.rows);
                for (r, &t_r) in ts.iter().enumerate() {
                    let chunk =
                        Tensor2::from_vec(t.pred_horizon, t.act_dim, chunks.row(r).to_vec());
                    let obs_stack =
                        Tensor2::from_vec(t.obs_horizon, t.obs_dim, obs.row(r).to_vec());
                    let (pred, cache) = t.forward_sample(&chunk, t_r, &obs_stack, train, rng);
                    out.row_mut(r).copy_from_slice(&pred.data);
                    caches.push(cache);
                }
                (out, BackboneCache::Transformer(caches))
            }
        }
    }

    /// Batch gradients in `param_names` order; input gradients are dropped.
    pub fn backward_batch(&self, cache: &BackboneCache, upstream: &Tensor2) -> Vec<Tensor2> {
        match (self, cache) {
            (Backbone::Mlp { net, .. }, BackboneCache::Mlp(c)) => {
                let (grads, _) = net.backward(c, upstream);
                grads.named().into_iter().map(|(_, g)| g.clone()).collect()
            }
            (Backbone::Transformer(t), BackboneCache::Transformer(caches)) => {
                assert_eq!(upstream.rows, caches.len());
                let mut total: Option<Vec<Tensor2>> = None;
                for (r, c) in caches.iter().enumerate() {
                    let up = Tensor2::from_vec(
                        t.pred_horizon,
                        t.act_dim,
                        upstream.row(r).to_vec(),
                    );
                    let grads = t.backward_sample(c, &up);
                    total = Some(match total {
                        None => grads,
                        Some(mut acc) => {
                            for (a, g) in acc.iter_mut().zip(&grads) {
                                a.add_assign(g);
                            }
                            acc
                        }
                    });
                }
                total.expect("batch must be non-empty")
            }
            _ => panic!("cache does not belong to this backbone"),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Backbone::Mlp { net, .. } => {
                net.named_params().into_iter().map(|(n, _)| n).collect()
            }
            Backbone::Transformer(t) => t.param_names(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        match self {
            Backbone::Mlp { net, .. } => {
                net.named_params_mut().into_iter().map(|(_, p)| p).collect()
            }
            Backbone::Transformer(t) => t.params_mut(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor2> {
        match self {
            Backbone::Mlp { net, .. } => net.named_params().into_iter().map(|(_, p)| p).collect(),
            Backbone::Transformer(t) => t.params(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
