//! Multi-layer perceptron assembled from the primitive layers.
//!
//! Hidden layers run linear, then dropout (train mode only), then layer
//! norm when enabled, then the activation. The output layer is a bare
//! linear map. Rows of the input are independent samples, so one forward
//! call handles a whole batch.

use crate::layers::{Activation, Dropout, LayerNorm, LayerNormGrads, Linear, LinearGrads};
use crate::tensor::Tensor2;
use crate::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Architecture description; serializable so checkpoints can rebuild the
/// network before loading weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Widths from input to output, at least `[in, out]`.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
    pub dropout_rate: Real,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Self {
        MlpSpec { layer_sizes, activation, layer_norm: false, dropout_rate: 0.0 }
    }

    pub fn with_layer_norm(mut self) -> Self {
        self.layer_norm = true;
        self
    }

    pub fn with_dropout(mut self, rate: Real) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn hidden_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub linears: Vec<Linear>,
    /// One per hidden layer when the spec enables layer norm, else empty.
    pub norms: Vec<LayerNorm>,
}

/// Intermediate tensors from one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each linear layer.
    inputs: Vec<Tensor2>,
    /// Dropout masks per hidden layer; `None` means identity.
    masks: Vec<Option<Tensor2>>,
    /// Input to each layer norm (the post-dropout linear output).
    pre_norm: Vec<Tensor2>,
    /// Input to each activation.
    pre_act: Vec<Tensor2>,
}

/// Gradients ordered exactly like [`Mlp::named_params`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub linears: Vec<LinearGrads>,
    pub norms: Vec<LayerNormGrads>,
}

impl Mlp {
    pub fn new<R: Rng>(rng: &mut R, spec: MlpSpec) -> Self {
        assert!(spec.layer_sizes.len() >= 2, "need at least input and output widths");
        let linears = spec
            .layer_sizes
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect();
        let norms = if spec.layer_norm {
            spec.layer_sizes[1..spec.layer_sizes.len() - 1]
                .iter()
                .map(|&d| LayerNorm::new(d))
                .collect()
        } else {
            Vec::new()
        };
        Mlp { spec, linears, norms }
    }

    pub fn in_dim(&self) -> usize {
        self.spec.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim()
    }

    /// Forward pass with caller-supplied dropout masks, one slot per
    /// hidden layer. Used directly by gradient checks; `forward` samples
    /// the masks.
    pub fn forward_with_masks(
        &self,
        x: &Tensor2,
        masks: Vec<Option<Tensor2>>,
    ) -> (Tensor2, MlpCache) {
        assert_eq!(x.cols, self.in_dim(), "mlp input width mismatch");
        assert_eq!(masks.len(), self.spec.hidden_count(), "one mask slot per hidden layer");
        let hidden = self.spec.hidden_count();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(hidden + 1),
            masks,
            pre_norm: Vec::with_capacity(hidden),
            pre_act: Vec::with_capacity(hidden),
        };
        let mut cur = x.clone();
        for i in 0..hidden {
            cache.inputs.push(cur.clone());
            let z = self.linears[i].forward(&cur);
            let dropped = match &cache.masks[i] {
                Some(mask) => Dropout::apply(&z, mask),
                None => z,
            };
            cache.pre_norm.push(dropped.clone());
            let normed = if self.spec.layer_norm {
                self.norms[i].forward(&dropped)
            } else {
                dropped
            };
            cache.pre_act.push(normed.clone());
            cur = self.spec.activation.forward(&normed);
        }
        cache.inputs.push(cur.clone());
        let out = self.linears[hidden].forward(&cur);
        (out, cache)
    }

    pub fn forward<R: Rng>(&self, x: &Tensor2, train: bool, rng: &mut R) -> (Tensor2, MlpCache) {
        let dropout = Dropout::new(self.spec.dropout_rate);
        let masks = (0..self.spec.hidden_count())
            .map(|i| {
                if train && self.spec.dropout_rate > 0.0 {
                    Some(dropout.sample_mask(rng, x.rows, self.spec.layer_sizes[i + 1]))
                } else {
                    None
                }
            })
            .collect();
        self.forward_with_masks(x, masks)
    }

    /// Deterministic inference pass; the cache is discarded.
    pub fn forward_eval(&self, x: &Tensor2) -> Tensor2 {
        self.forward_eval_cached(x).0
    }

    /// Eval-mode pass that keeps the cache, for gradients without dropout.
    pub fn forward_eval_cached(&self, x: &Tensor2) -> (Tensor2, MlpCache) {
        self.forward_with_masks(x, vec![None; self.spec.hidden_count()])
    }

    pub fn backward(&self, cache: &MlpCache, upstream: &Tensor2) -> (MlpGrads, Tensor2) {
        let hidden = self.spec.hidden_count();
        let mut linear_grads: Vec<Option<LinearGrads>> = vec![None; hidden + 1];
        let mut norm_grads: Vec<LayerNormGrads> = Vec::new();

        let (lg, mut d) = self.linears[hidden].backward(&cache.inputs[hidden], upstream);
        linear_grads[hidden] = Some(lg);

        for i in (0..hidden).rev() {
            d = self.spec.activation.backward(&cache.pre_act[i], &d);
            if self.spec.layer_norm {
                let (ng, dn) = self.norms[i].backward(&cache.pre_norm[i], &d);
                norm_grads.push(ng);
                d = dn;
            }
            if let Some(mask) = &cache.masks[i] {
                d = Dropout::backward(&d, mask);
            }
            let (lg, dl) = self.linears[i].backward(&cache.inputs[i], &d);
            linear_grads[i] = Some(lg);
            d = dl;
        }
        norm_grads.reverse();
        let grads = MlpGrads {
            linears: linear_grads.into_iter().map(|g| g.unwrap()).collect(),
            norms: norm_grads,
        };
        (grads, d)
    }

    /// Stable `(name, tensor)` listing used by optimizers, EMA copies, and
    /// checkpoints; `named_params_mut` and [`MlpGrads::named`] follow the
    /// same order.
    pub fn named_params(&self) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::new();
        for (i, l) in self.linears.iter().enumerate() {
            out.push((format!("linear{i}.weight"), &l.weight));
            out.push((format!("linear{i}.bias"), &l.bias));
        }
        for (i, n) in self.norms.iter().enumerate() {
            out.push((format!("norm{i}.gain"), &n.gain));
            out.push((format!("norm{i}.shift"), &n.shift));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out = Vec::new();
        for (i, l) in self.linears.iter_mut().enumerate() {
            out.push((format!("linear{i}.weight"), &mut l.weight));
            out.push((format!("linear{i}.bias"), &mut l.bias));
        }
        for (i, n) in self.norms.iter_mut().enumerate() {
            out.push((format!("norm{i}.gain"), &mut n.gain));
            out.push((format!("norm{i}.shift"), &mut n.shift));
        }
        out
    }
}

impl MlpGrads {
    /// Same order as [`Mlp::named_params`].
    pub fn named(&self) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::new();
        for (i, g) in self.linears.iter().enumerate() {
            out.push((format!("linear{i}.weight"), &g.weight));
            out.push((format!("linear{i}.bias"), &g.bias));
        }
        for (i, g) in self.norms.iter().enumerate() {
            out.push((format!("norm{i}.gain"), &g.gain));
            out.push((format!("norm{i}.shift"), &g.shift));
        }
        out
    }

    /// Element-wise sum, used to accumulate per-sample gradients.
    pub fn accumulate(&mut self, other: &MlpGrads) {
        assert_eq!(self.linears.len(), other.linears.len());
        assert_eq!(self.norms.len(), other.norms.len());
        for (a, b) in self.linears.iter_mut().zip(&other.linears) {
            a.weight.add_assign(&b.weight);
            a.bias.add_assign(&b.bias);
        }
        for (a, b) in self.norms.iter_mut().zip(&other.norms) {
            a.gain.add_assign(&b.gain);
            a.shift.add_assign(&b.shift);
        }
    }
}
