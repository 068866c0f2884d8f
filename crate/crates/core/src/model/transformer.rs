use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::seq::TokenSeq;
use crate::autodiff::{Graph, Tensor, Var, RMS_EPS};
use crate::error::{ensure, Result};
use crate::scalar::Scalar;

const INIT_STD: f64 = 0.02;
const PER_LAYER: usize = 9;

/// Decoder-only transformer: token embedding, `n_layers` pre-norm blocks
/// (rotary causal attention + SwiGLU feed-forward), final RMSNorm and an
/// untied output projection. No biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

struct LayerIdx {
    attn_norm: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ffn_norm: usize,
    w_gate: usize,
    w_up: usize,
    w_down: usize,
}

fn layer_idx(layer: usize) -> LayerIdx {
    let b = 1 + layer * PER_LAYER;
    LayerIdx {
        attn_norm: b,
        wq: b + 1,
        wk: b + 2,
        wv: b + 3,
        wo: b + 4,
        ffn_norm: b + 5,
        w_gate: b + 6,
        w_up: b + 7,
        w_down: b + 8,
    }
}

/// Parameter names and shapes in storage order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, v) = (cfg.d_model, cfg.d_ffn, cfg.vocab_size());
    let mut out = vec![("tok_emb".to_string(), vec![v, d])];
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.push((p("attn_norm"), vec![d]));
        out.push((p("wq"), vec![d, d]));
        out.push((p("wk"), vec![d, d]));
        out.push((p("wv"), vec![d, d]));
        out.push((p("wo"), vec![d, d]));
        out.push((p("ffn_norm"), vec![d]));
        out.push((p("w_gate"), vec![d, f]));
        out.push((p("w_up"), vec![d, f]));
        out.push((p("w_down"), vec![f, d]));
    }
    out.push(("final_norm".to_string(), vec![d]));
    out.push(("lm_head".to_string(), vec![d, v]));
    out
}

fn is_norm(name: &str) -> bool {
    name.ends_with("norm")
}

impl<T: Scalar> Model<T> {
    /// Seeded initialization: weights ~ N(0, 0.02²), norm gains = 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let layout = param_layout(&config);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let numel: usize = shape.iter().product();
            let data = if is_norm(&name) {
                vec![T::one(); numel]
            } else {
                (0..numel).map(|_| T::lit(normal.sample(&mut rng))).collect()
            };
            params.push(Tensor::new(shape, data)?);
            names.push(name);
        }
        Ok(Model { config, names, params })
    }

    /// Rebuilds a model from named tensors, checking them against the layout.
    pub fn from_parts(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        ensure!(
            layout.len() == named.len(),
            Format,
            "expected {} parameters, found {}",
            layout.len(),
            named.len()
        );
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((want_name, want_shape), (name, t)) in layout.into_iter().zip(named) {
            ensure!(
                want_name == name && want_shape == t.shape(),
                Format,
                "parameter {name} {:?} does not match expected {want_name} {want_shape:?}",
                t.shape()
            );
            names.push(name);
            params.push(t);
        }
        Ok(Model { config, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records every parameter as a leaf. `trainable = false` gives a frozen
    /// copy that receives no gradient.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone(), trainable)).collect()
    }

    /// Causal logits `[len × vocab]` for `seq`.
    pub fn forward_graph(&self, g: &mut Graph<T>, vars: &[Var], seq: &TokenSeq) -> Result<Var> {
        let cfg = &self.config;
        ensure!(
            seq.len() <= cfg.context_len(),
            Capacity,
            "sequence of {} exceeds context {}",
            seq.len(),
            cfg.context_len()
        );
        ensure!(!seq.is_empty(), Contract, "forward on an empty sequence");
        seq.validate_ids(&cfg.vocab())?;
        let positions = seq.positions(cfg)?;
        let ids: Vec<usize> = seq.ids.iter().map(|&t| t as usize).collect();
        let eps = T::lit(RMS_EPS);
        let hd = cfg.head_dim();

        let mut x = g.embedding(vars[0], &ids)?;
        for l in 0..cfg.n_layers {
            let li = layer_idx(l);
            let h = g.rms_norm(x, vars[li.attn_norm], eps)?;
            let q = g.matmul(h, vars[li.wq])?;
            let k = g.matmul(h, vars[li.wk])?;
            let v = g.matmul(h, vars[li.wv])?;
            let q = g.rope(q, &positions, hd, cfg.rope_base)?;
            let k = g.rope(k, &positions, hd, cfg.rope_base)?;
            let a = g.causal_attention(q, k, v, cfg.n_heads)?;
            let a = g.matmul(a, vars[li.wo])?;
            x = g.add(x, a)?;

            let h = g.rms_norm(x, vars[li.ffn_norm], eps)?;
            let gate = g.matmul(h, vars[li.w_gate])?;
            let gate = g.silu(gate)?;
            let up = g.matmul(h, vars[li.w_up])?;
            let ff = g.mul(gate, up)?;
            let ff = g.matmul(ff, vars[li.w_down])?;
            x = g.add(x, ff)?;
        }
        let base = 1 + cfg.n_layers * PER_LAYER;
        let x = g.rms_norm(x, vars[base], eps)?;
        g.matmul(x, vars[base + 1])
    }

    pub fn forward(&self, seq: &TokenSeq) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let logits = self.forward_graph(&mut g, &vars, seq)?;
        Ok(g.value(logits).clone())
    }

    /// Teacher-forced Σ log p(continuation | context) recorded on `g`.
    pub fn sequence_logprob_graph(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        context: &TokenSeq,
        continuation: &TokenSeq,
    ) -> Result<Var> {
        ensure!(!continuation.is_empty(), Contract, "empty continuation");
        ensure!(!context.is_empty(), Contract, "empty context");
        let full = context.concat(continuation)?;
        let logits = self.forward_graph(g, vars, &full)?;
        let start = context.len() - 1;
        let picks: Vec<(usize, usize)> = continuation
            .ids
            .iter()
            .enumerate()
            .map(|(i, &t)| (start + i, t as usize))
            .collect();
        g.log_prob_sum(logits, &picks)
    }

    pub fn sequence_logprob(&self, context: &TokenSeq, continuation: &TokenSeq) -> Result<T> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let lp = self.sequence_logprob_graph(&mut g, &vars, context, continuation)?;
        g.value(lp).item()
    }
}
