use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use super::{check_tokens, LanguageModel, ModelError, ParamSet};
use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::BOS;
use crate::rng::Stream;
use crate::{ProbVector, TokenId};

const MASKED_SCORE: f64 = -1e9;

/// Shape of a [`TinyTransformer`].
///
/// `context_window` counts input positions including the leading BOS, so a
/// model with window `w` accepts contexts of at most `w - 1` tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub num_blocks: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub context_window: usize,
    pub init_scale: f64,
}

impl TransformerConfig {
    /// One block, one head, 256 wide with a 1024 feed-forward layer.
    pub fn single_block_256(vocab_size: usize, context_window: usize) -> Self {
        Self {
            vocab_size,
            num_blocks: 1,
            embed_dim: 256,
            num_heads: 1,
            ff_dim: 1024,
            context_window,
            init_scale: 0.02,
        }
    }

    /// Desk-scale default used by the experiments.
    pub fn small(vocab_size: usize, context_window: usize) -> Self {
        Self {
            vocab_size,
            num_blocks: 1,
            embed_dim: 32,
            num_heads: 2,
            ff_dim: 64,
            context_window,
            init_scale: 0.02,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.into()));
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if !(1..=12).contains(&self.num_blocks) {
            return bad("num_blocks must lie in [1, 12]");
        }
        if self.embed_dim == 0 || self.ff_dim == 0 || self.num_heads == 0 || self.context_window == 0 {
            return bad("dimensions must be positive");
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "num_heads {} does not divide embed_dim {}",
                self.num_heads, self.embed_dim
            )));
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale must be positive");
        }
        Ok(())
    }
}

/// Pre-norm causal transformer with learned positional embeddings and an
/// untied output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyTransformer {
    config: TransformerConfig,
    params: ParamSet,
    seed: u64,
}

/// Weights ~ N(0, init_scale^2), biases zero, layer-norm gains one.
pub fn init_transformer(config: TransformerConfig, seed: u64) -> Result<TinyTransformer, ModelError> {
    config.validate()?;
    let mut rng = Stream::new(seed);
    let s = config.init_scale;
    let mut normal = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| s * rng.normal()).collect()).expect("shape")
    };
    let (v, d, f, w) = (
        config.vocab_size,
        config.embed_dim,
        config.ff_dim,
        config.context_window,
    );
    let mut p = ParamSet::new();
    p.push("wte", normal(&[v, d]));
    p.push("wpe", normal(&[w, d]));
    for b in 0..config.num_blocks {
        p.push(format!("h{b}.ln1.gamma"), Tensor::full(&[d], 1.0));
        p.push(format!("h{b}.ln1.beta"), Tensor::zeros(&[d]));
        for name in ["q", "k", "v", "o"] {
            p.push(format!("h{b}.attn.{name}.weight"), normal(&[d, d]));
            p.push(format!("h{b}.attn.{name}.bias"), Tensor::zeros(&[d]));
        }
        p.push(format!("h{b}.ln2.gamma"), Tensor::full(&[d], 1.0));
        p.push(format!("h{b}.ln2.beta"), Tensor::zeros(&[d]));
        p.push(format!("h{b}.mlp.fc.weight"), normal(&[d, f]));
        p.push(format!("h{b}.mlp.fc.bias"), Tensor::zeros(&[f]));
        p.push(format!("h{b}.mlp.proj.weight"), normal(&[f, d]));
        p.push(format!("h{b}.mlp.proj.bias"), Tensor::zeros(&[d]));
    }
    p.push("ln_f.gamma", Tensor::full(&[d], 1.0));
    p.push("ln_f.beta", Tensor::zeros(&[d]));
    p.push("head.weight", normal(&[d, v]));
    p.push("head.bias", Tensor::zeros(&[v]));
    Ok(TinyTransformer {
        config,
        params: p,
        seed,
    })
}

/// Parameter ids on a graph, in [`ParamSet`] order.
struct Lookup<'a> {
    names: Vec<&'a str>,
    vars: &'a [Var],
}

impl Lookup<'_> {
    fn get(&self, name: &str) -> Var {
        let i = self.names.iter().position(|n| *n == name).expect("parameter name");
        self.vars[i]
    }
}

impl TinyTransformer {
    /// Rebuild from stored parameters; names and shapes must match `config`.
    pub fn from_params(config: TransformerConfig, params: ParamSet, seed: u64) -> Result<Self, ModelError> {
        let reference = init_transformer(config, 0)?;
        let matches = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !matches {
            return Err(ModelError::BadConfig("parameters do not match configuration".into()));
        }
        Ok(Self { config, params, seed })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Register every parameter as a differentiated leaf.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|(n, t)| g.param(n, t.clone())).collect()
    }

    /// Register every parameter as a constant.
    pub fn register_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|(_, t)| g.constant(t.clone())).collect()
    }

    /// Logits for a batch of equal-length input rows.
    ///
    /// `inputs` holds `batch * len` ids, row-major. The output is a
    /// `(batch * len) x vocab` logit matrix where row `b * len + i` only
    /// depends on `inputs[b * len ..= b * len + i]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        inputs: &[TokenId],
        batch: usize,
        len: usize,
    ) -> Result<Var, ModelError> {
        let c = &self.config;
        if len == 0 || batch == 0 || inputs.len() != batch * len {
            return Err(ModelError::EmptySequence);
        }
        if len > c.context_window {
            return Err(ModelError::ContextTooLong {
                len: len - 1,
                window: c.context_window,
            });
        }
        check_tokens(inputs, c.vocab_size)?;
        let p = Lookup {
            names: self.params.names().collect(),
            vars,
        };
        let d = c.embed_dim;
        let heads = c.num_heads;
        let dh = d / heads;
        let ids: Vec<usize> = inputs.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
        let tok = g.embedding(p.get("wte"), &ids)?;
        let pos = g.embedding(p.get("wpe"), &positions)?;
        let mut x = g.add(tok, pos)?;

        let mut causal = vec![false; len * len];
        for i in 0..len {
            for j in i + 1..len {
                causal[i * len + j] = true;
            }
        }
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        for b in 0..c.num_blocks {
            let name = |s: &str| format!("h{b}.{s}");
            let h = g.layer_norm(x, p.get(&name("ln1.gamma")), p.get(&name("ln1.beta")))?;
            let proj = |g: &mut Graph, w: &str| -> Result<Var, ModelError> {
                let m = g.matmul(h, p.get(&name(&format!("attn.{w}.weight"))))?;
                Ok(g.add_row(m, p.get(&name(&format!("attn.{w}.bias"))))?)
            };
            let q = proj(g, "q")?;
            let k = proj(g, "k")?;
            let v = proj(g, "v")?;
            let mut seqs = Vec::with_capacity(batch);
            for s in 0..batch {
                let (r0, r1) = (s * len, (s + 1) * len);
                let (qs, ks, vs) = if batch == 1 {
                    (q, k, v)
                } else {
                    (g.slice(q, 0, r0, r1)?, g.slice(k, 0, r0, r1)?, g.slice(v, 0, r0, r1)?)
                };
                let mut outs = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let (c0, c1) = (hd * dh, (hd + 1) * dh);
                    let (qh, kh, vh) = if heads == 1 {
                        (qs, ks, vs)
                    } else {
                        (
                            g.slice(qs, 1, c0, c1)?,
                            g.slice(ks, 1, c0, c1)?,
                            g.slice(vs, 1, c0, c1)?,
                        )
                    };
                    let kt = g.transpose(kh)?;
                    let scores = g.matmul(qh, kt)?;
                    let scores = g.scale(scores, inv_sqrt);
                    let scores = g.masked_fill(scores, &causal, MASKED_SCORE)?;
                    let att = g.softmax(scores)?;
                    outs.push(g.matmul(att, vh)?);
                }
                seqs.push(if heads == 1 { outs[0] } else { g.concat(&outs, 1)? });
            }
            let att = if batch == 1 { seqs[0] } else { g.concat(&seqs, 0)? };
            let o = g.matmul(att, p.get(&name("attn.o.weight")))?;
            let o = g.add_row(o, p.get(&name("attn.o.bias")))?;
            x = g.add(x, o)?;

            let h2 = g.layer_norm(x, p.get(&name("ln2.gamma")), p.get(&name("ln2.beta")))?;
            let f = g.matmul(h2, p.get(&name("mlp.fc.weight")))?;
            let f = g.add_row(f, p.get(&name("mlp.fc.bias")))?;
            let f = g.gelu(f);
            let f = g.matmul(f, p.get(&name("mlp.proj.weight")))?;
            let f = g.add_row(f, p.get(&name("mlp.proj.bias")))?;
            x = g.add(x, f)?;
        }
        let x = g.layer_norm(x, p.get("ln_f.gamma"), p.get("ln_f.beta"))?;
        let logits = g.matmul(x, p.get("head.weight"))?;
        Ok(g.add_row(logits, p.get("head.bias"))?)
    }

    /// Logit rows for `[BOS] ++ tokens`, one row per input position.
    pub fn logits(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut input = Vec::with_capacity(tokens.len() + 1);
        input.push(BOS);
        input.extend_from_slice(tokens);
        if input.len() > self.config.context_window {
            return Err(ModelError::ContextTooLong {
                len: tokens.len(),
                window: self.config.context_window,
            });
        }
        let mut g = Graph::new();
        let vars = self.register_frozen(&mut g);
        let out = self.forward(&mut g, &vars, &input, 1, input.len())?;
        let t = g.value(out);
        Ok((0..input.len()).map(|r| t.row(r).to_vec()).collect())
    }
}

impl LanguageModel for TinyTransformer {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn context_window(&self) -> Option<usize> {
        Some(self.config.context_window)
    }

    fn next_token_probs(&self, context: &[TokenId]) -> Result<ProbVector, ModelError> {
        let rows = self.logits(context)?;
        Ok(ProbVector::softmax(rows.last().expect("at least BOS")))
    }

    fn sequence_probs(&self, tokens: &[TokenId]) -> Result<Vec<ProbVector>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let rows = self.logits(&tokens[..tokens.len() - 1])?;
        Ok(rows.iter().map(|r| ProbVector::softmax(r)).collect())
    }

    fn parameter_digest(&self) -> [u8; 32] {
        self.params.digest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize, blocks: usize, seed: u64) -> TinyTransformer {
        init_transformer(
            TransformerConfig {
                vocab_size: vocab,
                num_blocks: blocks,
                embed_dim: 8,
                num_heads: 2,
                ff_dim: 12,
                context_window: 8,
                init_scale: 0.3,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn paper_scale_config_accepted() {
        assert!(TransformerConfig::single_block_256(50, 16).validate().is_ok());
    }

    #[test]
    fn heads_must_divide_width() {
        let c = TransformerConfig {
            num_heads: 3,
            ..TransformerConfig::single_block_256(50, 16)
        };
        assert!(matches!(init_transformer(c, 0), Err(ModelError::BadConfig(_))));
        let c = TransformerConfig {
            num_blocks: 13,
            ..TransformerConfig::small(10, 8)
        };
        assert!(matches!(c.validate(), Err(ModelError::BadConfig(_))));
    }

    #[test]
    fn init_is_deterministic() {
        let c = TransformerConfig::small(10, 8);
        assert_eq!(init_transformer(c, 4).unwrap(), init_transformer(c, 4).unwrap());
        assert_ne!(
            init_transformer(c, 4).unwrap().parameter_digest(),
            init_transformer(c, 5).unwrap().parameter_digest()
        );
    }

    #[test]
    fn init_distribution() {
        let m = init_transformer(TransformerConfig::small(10, 8), 1).unwrap();
        let w = m.params().get("h0.attn.q.weight").unwrap().data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.004, "{sd}");
        assert!(m.params().get("head.bias").unwrap().data().iter().all(|&b| b == 0.0));
        assert!(m.params().get("ln_f.gamma").unwrap().data().iter().all(|&b| b == 1.0));
    }

    #[test]
    fn fresh_model_is_near_uniform() {
        for seed in 0..20 {
            let m = init_transformer(TransformerConfig::small(50, 16), seed).unwrap();
            let p = m.next_token_probs(&[5, 9, 3]).unwrap();
            let max = p.as_slice().iter().cloned().fold(0.0, f64::max);
            let min = p.as_slice().iter().cloned().fold(1.0, f64::min);
            assert!(max / min < 3.0, "seed {seed}: ratio {}", max / min);
        }
    }

    #[test]
    fn context_window_enforced() {
        let m = tiny(6, 1, 0);
        assert!(m.next_token_probs(&[3; 7]).is_ok());
        assert_eq!(
            m.next_token_probs(&[3; 8]),
            Err(ModelError::ContextTooLong { len: 8, window: 8 })
        );
        assert_eq!(m.sequence_probs(&[]), Err(ModelError::EmptySequence));
    }

    #[test]
    fn sequence_probs_match_prefix_queries() {
        let m = tiny(7, 2, 3);
        let mut rng = Stream::new(9);
        for _ in 0..10 {
            let len = 1 + rng.below(8);
            let seq: Vec<TokenId> = (0..len).map(|_| rng.below(7) as TokenId).collect();
            let all = m.sequence_probs(&seq).unwrap();
            assert_eq!(all.len(), len);
            for (i, p) in all.iter().enumerate() {
                let q = m.next_token_probs(&seq[..i]).unwrap();
                for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn causal_perturbation() {
        let m = tiny(7, 2, 11);
        let seq: Vec<TokenId> = vec![3, 4, 5, 6, 2, 3];
        let base = m.sequence_probs(&seq).unwrap();
        for j in 0..seq.len() {
            let mut changed = seq.clone();
            changed[j] = (changed[j] + 1) % 7;
            let pert = m.sequence_probs(&changed).unwrap();
            // position i sees tokens < i, so positions 0..=j are unchanged
            for i in 0..=j {
                assert_eq!(base[i], pert[i], "position {i} changed by token {j}");
            }
        }
    }

    #[test]
    fn batched_forward_matches_single_rows() {
        let m = tiny(7, 1, 2);
        let rows: [[TokenId; 4]; 3] = [[0, 3, 4, 5], [0, 6, 6, 1], [0, 2, 3, 4]];
        let flat: Vec<TokenId> = rows.iter().flatten().copied().collect();
        let mut g = Graph::new();
        let vars = m.register_frozen(&mut g);
        let out = m.forward(&mut g, &vars, &flat, 3, 4).unwrap();
        for (b, r) in rows.iter().enumerate() {
            let single = m.logits(&r[1..]).unwrap();
            for i in 0..4 {
                for (x, y) in g.value(out).row(b * 4 + i).iter().zip(&single[i]) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_check_through_transformer() {
        let m = tiny(5, 1, 7);
        let inputs: Vec<TokenId> = vec![0, 3, 4];
        let targets = [3usize, 4, 1];
        let params: Vec<Tensor> = m.params().iter().map(|(_, t)| t.clone()).collect();
        let err = crate::autodiff::check_gradients(
            |g, vars| {
                let logits = m.forward(g, vars, &inputs, 1, 3).map_err(|e| match e {
                    ModelError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?;
                let p = g.softmax(logits)?;
                let picked = g.pick(p, &targets)?;
                let l = g.log(picked);
                let m = g.mean(l);
                Ok(g.scale(m, -1.0))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
