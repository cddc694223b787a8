//! Pre-norm Transformer encoder with a value head and a masked policy head.
//!
//! All parameters live in one flat buffer, in the order of [`Model::specs`].
//! Forward and backward passes are written out by hand over that buffer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{add_bias, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul, softmax, sum_rows, Real};
use super::NnError;
use crate::encode::{TokenSequence, ACTIONS, MAX_TOKENS, VOCAB};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    /// Shared component and position table size.
    pub vocab: usize,
    pub max_tokens: usize,
    /// Action vocabulary size of the policy head.
    pub actions: usize,
    pub dropout: f32,
}

impl ModelConfig {
    /// 12 layers, 12 heads, width 768, feed-forward 3072.
    pub fn paper() -> ModelConfig {
        ModelConfig {
            layers: 12,
            heads: 12,
            model_dim: 768,
            ff_dim: 3072,
            vocab: VOCAB,
            max_tokens: MAX_TOKENS,
            actions: ACTIONS,
            dropout: 0.1,
        }
    }

    /// 2 layers, 4 heads, width 64, feed-forward 256.
    pub fn toy() -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 4,
            model_dim: 64,
            ff_dim: 256,
            vocab: VOCAB,
            max_tokens: MAX_TOKENS,
            actions: ACTIONS,
            dropout: 0.0,
        }
    }

    pub fn preset(name: &str) -> Option<ModelConfig> {
        match name {
            "paper" => Some(Self::paper()),
            "toy" => Some(Self::toy()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad("model_dim must be a positive multiple of heads");
        }
        if self.ff_dim == 0 || self.vocab == 0 || self.actions == 0 || self.max_tokens == 0 {
            return bad("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Closed-form number of trainable parameters.
pub fn count_parameters(c: &ModelConfig) -> usize {
    let (d, f) = (c.model_dim, c.ff_dim);
    let per_layer = 4 * d * d + 2 * d * f + 9 * d + f;
    c.vocab * d + c.layers * per_layer + 2 * d + (d * d + 2 * d + 1) + c.actions * (d + 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Included in the weight-decay term.
    pub decay: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn build_specs(c: &ModelConfig) -> Vec<TensorSpec> {
    let (d, f) = (c.model_dim, c.ff_dim);
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>, decay: bool| {
        let len: usize = shape.iter().product();
        specs.push(TensorSpec { name, shape, offset, decay });
        offset += len;
    };
    push("embed".into(), vec![c.vocab, d], true);
    for l in 0..c.layers {
        push(format!("layer{l}.ln1.gain"), vec![d], false);
        push(format!("layer{l}.ln1.bias"), vec![d], false);
        push(format!("layer{l}.attn.qkv"), vec![d, 3 * d], true);
        push(format!("layer{l}.attn.qkv_bias"), vec![3 * d], false);
        push(format!("layer{l}.attn.out"), vec![d, d], true);
        push(format!("layer{l}.attn.out_bias"), vec![d], false);
        push(format!("layer{l}.ln2.gain"), vec![d], false);
        push(format!("layer{l}.ln2.bias"), vec![d], false);
        push(format!("layer{l}.ff.in"), vec![d, f], true);
        push(format!("layer{l}.ff.in_bias"), vec![f], false);
        push(format!("layer{l}.ff.out"), vec![f, d], true);
        push(format!("layer{l}.ff.out_bias"), vec![d], false);
    }
    push("final_ln.gain".into(), vec![d], false);
    push("final_ln.bias".into(), vec![d], false);
    push("value.hidden".into(), vec![d, d], true);
    push("value.hidden_bias".into(), vec![d], false);
    push("value.out".into(), vec![d], true);
    push("value.out_bias".into(), vec![1], false);
    push("policy.out".into(), vec![d, c.actions], true);
    push("policy.out_bias".into(), vec![c.actions], false);
    specs
}

/// Offsets of one layer's tensors, in spec order.
#[derive(Clone, Copy, Debug)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    qkv: usize,
    qkv_b: usize,
    out: usize,
    out_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    ff_in: usize,
    ff_in_b: usize,
    ff_out: usize,
    ff_out_b: usize,
}

#[derive(Clone, Copy, Debug)]
struct HeadIdx {
    lnf_g: usize,
    lnf_b: usize,
    v_hidden: usize,
    v_hidden_b: usize,
    v_out: usize,
    v_out_b: usize,
    p_out: usize,
    p_out_b: usize,
}

/// Value and policy for one position.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// In [-1, 1], for the player to move.
    pub value: f32,
    /// Over the whole action vocabulary; zero off the mask.
    pub policy: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Model<F: Real = f32> {
    config: ModelConfig,
    specs: Vec<TensorSpec>,
    layers: Vec<LayerIdx>,
    head: HeadIdx,
    pub params: Vec<F>,
}

/// Intermediate values kept for the backward pass.
struct LayerCache<F> {
    xhat1: Vec<F>,
    rstd1: Vec<F>,
    h1: Vec<F>,
    qkv: Vec<F>,
    /// Attention weights, per sequence then head, each T x T.
    att: Vec<F>,
    o: Vec<F>,
    drop_att: Vec<F>,
    xhat2: Vec<F>,
    rstd2: Vec<F>,
    h2: Vec<F>,
    f1: Vec<F>,
    g: Vec<F>,
    drop_ff: Vec<F>,
}

pub(crate) struct Cache<F> {
    seq_starts: Vec<usize>,
    seq_lens: Vec<usize>,
    tokens: Vec<[u16; 2]>,
    layers: Vec<LayerCache<F>>,
    xhatf: Vec<F>,
    rstdf: Vec<F>,
    pooled: Vec<F>,
    u: Vec<F>,
    ug: Vec<F>,
    pub values: Vec<F>,
    /// Masked softmax, batch x actions.
    pub probs: Vec<F>,
}

/// One input row of a batch.
pub struct Input<'a> {
    pub seq: &'a TokenSequence,
    /// Legal action indices.
    pub legal: &'a [usize],
}

impl<F: Real> Model<F> {
    /// Fresh model with seeded random initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model<F>, NnError> {
        let mut m = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = m.config.model_dim as f64;
        let depth_scale = 1.0 / (2.0 * m.config.layers.max(1) as f64).sqrt();
        for spec in m.specs.clone() {
            let slice = &mut m.params[spec.offset..spec.offset + spec.len()];
            let std = if spec.name == "embed" {
                0.02
            } else if spec.name.ends_with("attn.out") || spec.name.ends_with("ff.out") {
                depth_scale / d.sqrt()
            } else if spec.name.ends_with(".gain") {
                slice.iter_mut().for_each(|v| *v = F::one());
                continue;
            } else if spec.shape.len() == 2 {
                1.0 / (spec.shape[0] as f64).sqrt()
            } else if spec.name == "value.out" {
                1.0 / d.sqrt()
            } else {
                continue;
            };
            let normal = Normal::new(0.0, std).expect("positive deviation");
            for v in slice.iter_mut() {
                *v = F::from(normal.sample(&mut rng)).unwrap();
            }
        }
        Ok(m)
    }

    /// Model with every parameter zero (used when loading).
    pub fn zeroed(config: ModelConfig) -> Result<Model<F>, NnError> {
        config.validate()?;
        let specs = build_specs(&config);
        let find = |name: &str| specs.iter().find(|s| s.name == name).expect("declared tensor").offset;
        let layers = (0..config.layers)
            .map(|l| LayerIdx {
                ln1_g: find(&format!("layer{l}.ln1.gain")),
                ln1_b: find(&format!("layer{l}.ln1.bias")),
                qkv: find(&format!("layer{l}.attn.qkv")),
                qkv_b: find(&format!("layer{l}.attn.qkv_bias")),
                out: find(&format!("layer{l}.attn.out")),
                out_b: find(&format!("layer{l}.attn.out_bias")),
                ln2_g: find(&format!("layer{l}.ln2.gain")),
                ln2_b: find(&format!("layer{l}.ln2.bias")),
                ff_in: find(&format!("layer{l}.ff.in")),
                ff_in_b: find(&format!("layer{l}.ff.in_bias")),
                ff_out: find(&format!("layer{l}.ff.out")),
                ff_out_b: find(&format!("layer{l}.ff.out_bias")),
            })
            .collect();
        let head = HeadIdx {
            lnf_g: find("final_ln.gain"),
            lnf_b: find("final_ln.bias"),
            v_hidden: find("value.hidden"),
            v_hidden_b: find("value.hidden_bias"),
            v_out: find("value.out"),
            v_out_b: find("value.out_bias"),
            p_out: find("policy.out"),
            p_out_b: find("policy.out_bias"),
        };
        let total = specs.last().map_or(0, |s| s.offset + s.len());
        debug_assert_eq!(total, count_parameters(&config));
        Ok(Model {
            config,
            specs,
            layers,
            head,
            params: vec![F::zero(); total],
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    /// Same weights in another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        let mut m = Model::<G>::zeroed(self.config.clone()).expect("valid config");
        for (dst, src) in m.params.iter_mut().zip(&self.params) {
            *dst = G::from(*src).unwrap();
        }
        m
    }

    fn p(&self, off: usize, len: usize) -> &[F] {
        &self.params[off..off + len]
    }

    /// Evaluate one position. `mask` has one entry per action.
    pub fn evaluate(&self, seq: &TokenSequence, mask: &[bool]) -> Result<Evaluation, NnError> {
        let legal: Vec<usize> = mask_indices(mask, self.config.actions)?;
        Ok(self
            .evaluate_batch(&[Input { seq, legal: &legal }])?
            .pop()
            .expect("one result per input"))
    }

    /// Evaluate many positions; each result depends only on its own input.
    pub fn evaluate_batch(&self, batch: &[Input<'_>]) -> Result<Vec<Evaluation>, NnError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let cache = self.forward(batch, None)?;
        let a = self.config.actions;
        Ok((0..batch.len())
            .map(|i| {
                let value = cache.values[i].to_f32();
                let policy: Vec<f32> = cache.probs[i * a..(i + 1) * a].iter().map(|p| Real::to_f32(*p)).collect();
                debug_assert!(value.abs() <= 1.0);
                debug_assert!({
                    let s: f32 = batch[i].legal.iter().map(|&j| policy[j]).sum();
                    (s - 1.0).abs() < 1e-3
                });
                Evaluation { value, policy }
            })
            .collect())
    }

    /// Values only, for positions without legal actions (afterstates). The
    /// value head does not see the mask, so a placeholder one is used.
    pub fn evaluate_values(&self, seqs: &[&TokenSequence]) -> Result<Vec<f32>, NnError> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let legal = [0usize];
        let batch: Vec<Input<'_>> = seqs.iter().map(|s| Input { seq: s, legal: &legal }).collect();
        let cache = self.forward(&batch, None)?;
        Ok(cache.values.iter().map(|v| Real::to_f32(*v)).collect())
    }

    pub(crate) fn forward(&self, batch: &[Input<'_>], mut dropout: Option<&mut ChaCha8Rng>) -> Result<Cache<F>, NnError> {
        let c = &self.config;
        let (d, ff, heads, dh, acts) = (c.model_dim, c.ff_dim, c.heads, c.head_dim(), c.actions);
        let mut seq_starts = Vec::with_capacity(batch.len());
        let mut seq_lens = Vec::with_capacity(batch.len());
        let mut tokens = Vec::new();
        for inp in batch {
            if inp.seq.is_empty() || inp.seq.len() > c.max_tokens {
                return Err(NnError::SequenceLength { len: inp.seq.len(), max: c.max_tokens });
            }
            if inp.legal.is_empty() {
                return Err(NnError::EmptyMask);
            }
            if let Some(&bad) = inp.legal.iter().find(|&&j| j >= acts) {
                return Err(NnError::ActionOutOfRange(bad));
            }
            seq_starts.push(tokens.len());
            seq_lens.push(inp.seq.len());
            for t in &inp.seq.tokens {
                if t[0] as usize >= c.vocab || t[1] as usize >= c.vocab {
                    return Err(NnError::TokenOutOfRange(t[0].max(t[1])));
                }
                tokens.push(*t);
            }
        }
        let n = tokens.len();
        let b = batch.len();
        let keep = F::one() - F::from_f32(c.dropout);
        let drop_active = dropout.is_some() && c.dropout > 0.0;

        // Embedding: sum of the component and position rows.
        let emb = self.p(0, c.vocab * d);
        let mut x = vec![F::zero(); n * d];
        for (r, t) in tokens.iter().enumerate() {
            let row = &mut x[r * d..(r + 1) * d];
            let (e0, e1) = (&emb[t[0] as usize * d..][..d], &emb[t[1] as usize * d..][..d]);
            for j in 0..d {
                row[j] = e0[j] + e1[j];
            }
        }

        let scale = F::one() / F::from(dh).unwrap().sqrt();
        let att_len: usize = seq_lens.iter().map(|t| t * t).sum::<usize>() * heads;
        let mut layer_caches = Vec::with_capacity(c.layers);
        for li in &self.layers {
            let mut lc = LayerCache {
                xhat1: vec![F::zero(); n * d],
                rstd1: vec![F::zero(); n],
                h1: vec![F::zero(); n * d],
                qkv: vec![F::zero(); n * 3 * d],
                att: vec![F::zero(); att_len],
                o: vec![F::zero(); n * d],
                drop_att: Vec::new(),
                xhat2: vec![F::zero(); n * d],
                rstd2: vec![F::zero(); n],
                h2: vec![F::zero(); n * d],
                f1: vec![F::zero(); n * ff],
                g: vec![F::zero(); n * ff],
                drop_ff: Vec::new(),
            };
            layer_norm(&x, self.p(li.ln1_g, d), self.p(li.ln1_b, d), &mut lc.h1, &mut lc.xhat1, &mut lc.rstd1);
            matmul(&lc.h1, false, self.p(li.qkv, d * 3 * d), false, &mut lc.qkv, n, d, 3 * d, F::zero());
            add_bias(&mut lc.qkv, self.p(li.qkv_b, 3 * d));

            let mut att_off = 0;
            let mut qh = Vec::new();
            let mut kh = Vec::new();
            let mut vh = Vec::new();
            let mut oh = Vec::new();
            for (&start, &t) in seq_starts.iter().zip(&seq_lens) {
                for h in 0..heads {
                    gather_head(&lc.qkv, start, t, 3 * d, h * dh, dh, &mut qh);
                    gather_head(&lc.qkv, start, t, 3 * d, d + h * dh, dh, &mut kh);
                    gather_head(&lc.qkv, start, t, 3 * d, 2 * d + h * dh, dh, &mut vh);
                    let a = &mut lc.att[att_off..att_off + t * t];
                    matmul(&qh, false, &kh, true, a, t, dh, t, F::zero());
                    for row in a.chunks_exact_mut(t) {
                        row.iter_mut().for_each(|v| *v = *v * scale);
                        softmax(row);
                    }
                    oh.clear();
                    oh.resize(t * dh, F::zero());
                    matmul(a, false, &vh, false, &mut oh, t, t, dh, F::zero());
                    scatter_head(&oh, &mut lc.o, start, t, d, h * dh, dh);
                    att_off += t * t;
                }
            }
            let mut y = vec![F::zero(); n * d];
            matmul(&lc.o, false, self.p(li.out, d * d), false, &mut y, n, d, d, F::zero());
            add_bias(&mut y, self.p(li.out_b, d));
            if drop_active {
                lc.drop_att = dropout_mask(n * d, keep, dropout.as_deref_mut().unwrap());
                y.iter_mut().zip(&lc.drop_att).for_each(|(v, m)| *v = *v * *m);
            }
            x.iter_mut().zip(&y).for_each(|(a, b)| *a = *a + *b);

            layer_norm(&x, self.p(li.ln2_g, d), self.p(li.ln2_b, d), &mut lc.h2, &mut lc.xhat2, &mut lc.rstd2);
            matmul(&lc.h2, false, self.p(li.ff_in, d * ff), false, &mut lc.f1, n, d, ff, F::zero());
            add_bias(&mut lc.f1, self.p(li.ff_in_b, ff));
            for (g, f) in lc.g.iter_mut().zip(&lc.f1) {
                *g = gelu(*f);
            }
            let mut f2 = y;
            matmul(&lc.g, false, self.p(li.ff_out, ff * d), false, &mut f2, n, ff, d, F::zero());
            add_bias(&mut f2, self.p(li.ff_out_b, d));
            if drop_active {
                lc.drop_ff = dropout_mask(n * d, keep, dropout.as_deref_mut().unwrap());
                f2.iter_mut().zip(&lc.drop_ff).for_each(|(v, m)| *v = *v * *m);
            }
            x.iter_mut().zip(&f2).for_each(|(a, b)| *a = *a + *b);
            layer_caches.push(lc);
        }

        let hd = &self.head;
        let mut z = vec![F::zero(); n * d];
        let mut xhatf = vec![F::zero(); n * d];
        let mut rstdf = vec![F::zero(); n];
        layer_norm(&x, self.p(hd.lnf_g, d), self.p(hd.lnf_b, d), &mut z, &mut xhatf, &mut rstdf);
        let mut pooled = vec![F::zero(); b * d];
        for (i, &s) in seq_starts.iter().enumerate() {
            pooled[i * d..(i + 1) * d].copy_from_slice(&z[s * d..(s + 1) * d]);
        }

        let mut u = vec![F::zero(); b * d];
        matmul(&pooled, false, self.p(hd.v_hidden, d * d), false, &mut u, b, d, d, F::zero());
        add_bias(&mut u, self.p(hd.v_hidden_b, d));
        let ug: Vec<F> = u.iter().map(|&v| gelu(v)).collect();
        let w_out = self.p(hd.v_out, d);
        let b_out = self.params[hd.v_out_b];
        let values: Vec<F> = ug
            .chunks_exact(d)
            .map(|row| (row.iter().zip(w_out).map(|(a, b)| *a * *b).sum::<F>() + b_out).tanh())
            .collect();

        let mut logits = vec![F::zero(); b * acts];
        matmul(&pooled, false, self.p(hd.p_out, d * acts), false, &mut logits, b, d, acts, F::zero());
        add_bias(&mut logits, self.p(hd.p_out_b, acts));
        let mut probs = vec![F::zero(); b * acts];
        let mut buf = Vec::new();
        for (i, inp) in batch.iter().enumerate() {
            let row = &logits[i * acts..(i + 1) * acts];
            buf.clear();
            buf.extend(inp.legal.iter().map(|&j| row[j]));
            softmax(&mut buf);
            for (&j, &p) in inp.legal.iter().zip(&buf) {
                probs[i * acts + j] = p;
            }
        }
        if values.iter().chain(&probs).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("forward pass produced a non-finite output".into()));
        }
        Ok(Cache {
            seq_starts,
            seq_lens,
            tokens,
            layers: layer_caches,
            xhatf,
            rstdf,
            pooled,
            u,
            ug,
            values,
            probs,
        })
    }

    /// Gradient of the data loss given its derivative with respect to the
    /// raw (pre-tanh) values and the policy logits. Accumulates into `grad`.
    pub(crate) fn backward(&self, cache: &Cache<F>, dvalue_raw: &[F], dlogits: &[F], grad: &mut [F]) {
        let c = &self.config;
        let (d, ff, heads, dh, acts) = (c.model_dim, c.ff_dim, c.heads, c.head_dim(), c.actions);
        let b = cache.seq_starts.len();
        let n = cache.tokens.len();
        let hd = &self.head;

        // Policy head.
        let mut dpooled = vec![F::zero(); b * d];
        matmul(&cache.pooled, true, dlogits, false, &mut grad[hd.p_out..hd.p_out + d * acts], d, b, acts, F::one());
        sum_rows(dlogits, &mut grad[hd.p_out_b..hd.p_out_b + acts]);
        matmul(dlogits, false, self.p(hd.p_out, d * acts), true, &mut dpooled, b, acts, d, F::zero());

        // Value head.
        let w_out = self.p(hd.v_out, d);
        let mut du = vec![F::zero(); b * d];
        for i in 0..b {
            let g = dvalue_raw[i];
            grad[hd.v_out_b] = grad[hd.v_out_b] + g;
            for j in 0..d {
                grad[hd.v_out + j] = grad[hd.v_out + j] + g * cache.ug[i * d + j];
                du[i * d + j] = g * w_out[j] * gelu_grad(cache.u[i * d + j]);
            }
        }
        matmul(&cache.pooled, true, &du, false, &mut grad[hd.v_hidden..hd.v_hidden + d * d], d, b, d, F::one());
        sum_rows(&du, &mut grad[hd.v_hidden_b..hd.v_hidden_b + d]);
        matmul(&du, false, self.p(hd.v_hidden, d * d), true, &mut dpooled, b, d, d, F::one());

        // Final norm: only summary rows receive gradient.
        let mut dz = vec![F::zero(); n * d];
        for (i, &s) in cache.seq_starts.iter().enumerate() {
            dz[s * d..(s + 1) * d].copy_from_slice(&dpooled[i * d..(i + 1) * d]);
        }
        let mut dx = vec![F::zero(); n * d];
        {
            let (gain_grad, rest) = grad[hd.lnf_g..].split_at_mut(d);
            layer_norm_backward(&dz, &cache.xhatf, &cache.rstdf, self.p(hd.lnf_g, d), gain_grad, &mut rest[..d], &mut dx);
        }

        let scale = F::one() / F::from(dh).unwrap().sqrt();
        let mut tmp = vec![F::zero(); n * d];
        for (li, lc) in self.layers.iter().zip(&cache.layers).rev() {
            // Feed-forward branch.
            let mut df2 = dx.clone();
            if !lc.drop_ff.is_empty() {
                df2.iter_mut().zip(&lc.drop_ff).for_each(|(v, m)| *v = *v * *m);
            }
            matmul(&lc.g, true, &df2, false, &mut grad[li.ff_out..li.ff_out + ff * d], ff, n, d, F::one());
            sum_rows(&df2, &mut grad[li.ff_out_b..li.ff_out_b + d]);
            let mut df1 = vec![F::zero(); n * ff];
            matmul(&df2, false, self.p(li.ff_out, ff * d), true, &mut df1, n, d, ff, F::zero());
            for (g, f) in df1.iter_mut().zip(&lc.f1) {
                *g = *g * gelu_grad(*f);
            }
            matmul(&lc.h2, true, &df1, false, &mut grad[li.ff_in..li.ff_in + d * ff], d, n, ff, F::one());
            sum_rows(&df1, &mut grad[li.ff_in_b..li.ff_in_b + ff]);
            matmul(&df1, false, self.p(li.ff_in, d * ff), true, &mut tmp, n, ff, d, F::zero());
            {
                let (gg, rest) = grad[li.ln2_g..].split_at_mut(d);
                layer_norm_backward(&tmp, &lc.xhat2, &lc.rstd2, self.p(li.ln2_g, d), gg, &mut rest[..d], &mut dx);
            }

            // Attention branch.
            let mut dy = dx.clone();
            if !lc.drop_att.is_empty() {
                dy.iter_mut().zip(&lc.drop_att).for_each(|(v, m)| *v = *v * *m);
            }
            matmul(&lc.o, true, &dy, false, &mut grad[li.out..li.out + d * d], d, n, d, F::one());
            sum_rows(&dy, &mut grad[li.out_b..li.out_b + d]);
            let mut d_o = vec![F::zero(); n * d];
            matmul(&dy, false, self.p(li.out, d * d), true, &mut d_o, n, d, d, F::zero());

            let mut dqkv = vec![F::zero(); n * 3 * d];
            let (mut qh, mut kh, mut vh, mut doh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let (mut da, mut dq, mut dk, mut dv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut att_off = 0;
            for (&start, &t) in cache.seq_starts.iter().zip(&cache.seq_lens) {
                for h in 0..heads {
                    gather_head(&lc.qkv, start, t, 3 * d, h * dh, dh, &mut qh);
                    gather_head(&lc.qkv, start, t, 3 * d, d + h * dh, dh, &mut kh);
                    gather_head(&lc.qkv, start, t, 3 * d, 2 * d + h * dh, dh, &mut vh);
                    gather_head(&d_o, start, t, d, h * dh, dh, &mut doh);
                    let a = &lc.att[att_off..att_off + t * t];
                    da.clear();
                    da.resize(t * t, F::zero());
                    matmul(&doh, false, &vh, true, &mut da, t, dh, t, F::zero());
                    dv.clear();
                    dv.resize(t * dh, F::zero());
                    matmul(a, true, &doh, false, &mut dv, t, t, dh, F::zero());
                    // Softmax backward, with the score scale folded in.
                    for r in 0..t {
                        let ar = &a[r * t..(r + 1) * t];
                        let dar = &mut da[r * t..(r + 1) * t];
                        let dot: F = ar.iter().zip(dar.iter()).map(|(x, y)| *x * *y).sum();
                        for (g, &p) in dar.iter_mut().zip(ar) {
                            *g = p * (*g - dot) * scale;
                        }
                    }
                    dq.clear();
                    dq.resize(t * dh, F::zero());
                    matmul(&da, false, &kh, false, &mut dq, t, t, dh, F::zero());
                    dk.clear();
                    dk.resize(t * dh, F::zero());
                    matmul(&da, true, &qh, false, &mut dk, t, t, dh, F::zero());
                    scatter_head(&dq, &mut dqkv, start, t, 3 * d, h * dh, dh);
                    scatter_head(&dk, &mut dqkv, start, t, 3 * d, d + h * dh, dh);
                    scatter_head(&dv, &mut dqkv, start, t, 3 * d, 2 * d + h * dh, dh);
                    att_off += t * t;
                }
            }
            matmul(&lc.h1, true, &dqkv, false, &mut grad[li.qkv..li.qkv + d * 3 * d], d, n, 3 * d, F::one());
            sum_rows(&dqkv, &mut grad[li.qkv_b..li.qkv_b + 3 * d]);
            matmul(&dqkv, false, self.p(li.qkv, d * 3 * d), true, &mut tmp, n, 3 * d, d, F::zero());
            {
                let (gg, rest) = grad[li.ln1_g..].split_at_mut(d);
                layer_norm_backward(&tmp, &lc.xhat1, &lc.rstd1, self.p(li.ln1_g, d), gg, &mut rest[..d], &mut dx);
            }
        }

        for (r, t) in cache.tokens.iter().enumerate() {
            for &e in t {
                let row = &mut grad[e as usize * d..(e as usize + 1) * d];
                for (g, v) in row.iter_mut().zip(&dx[r * d..(r + 1) * d]) {
                    *g = *g + *v;
                }
            }
        }
    }
}

/// Copy columns `col..col + w` of rows `start..start + t` into `out` (t x w).
fn gather_head<F: Real>(src: &[F], start: usize, t: usize, stride: usize, col: usize, w: usize, out: &mut Vec<F>) {
    out.clear();
    for r in start..start + t {
        out.extend_from_slice(&src[r * stride + col..r * stride + col + w]);
    }
}

#[allow(clippy::too_many_arguments)]
fn scatter_head<F: Real>(src: &[F], dst: &mut [F], start: usize, t: usize, stride: usize, col: usize, w: usize) {
    for i in 0..t {
        let d = &mut dst[(start + i) * stride + col..(start + i) * stride + col + w];
        d.copy_from_slice(&src[i * w..(i + 1) * w]);
    }
}

fn dropout_mask<F: Real>(len: usize, keep: F, rng: &mut ChaCha8Rng) -> Vec<F> {
    let k = keep.to_f32();
    let scaled = F::one() / keep;
    (0..len)
        .map(|_| if rng.random::<f32>() < k { scaled } else { F::zero() })
        .collect()
}

pub(crate) fn mask_indices(mask: &[bool], actions: usize) -> Result<Vec<usize>, NnError> {
    if mask.len() != actions {
        return Err(NnError::MaskLength { len: mask.len(), expected: actions });
    }
    let legal: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if legal.is_empty() {
        return Err(NnError::EmptyMask);
    }
    Ok(legal)
}
