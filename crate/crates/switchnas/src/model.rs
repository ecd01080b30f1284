//! The searchable micro-architecture.
//!
//! A model is a patch embedding, a stack of identical attention blocks whose
//! feed-forward sublayer is a switch layer (router + expert set, top-1
//! routing), and a mean-pool classifier head. The only thing that varies
//! between candidate architectures is the per-layer expert count, captured
//! by [`ArchitectureEncoding`].
//!
//! Routing follows the Switch Transformer recipe: each token goes to the
//! single highest-probability active expert, the expert output is scaled by
//! that probability (so the router stays differentiable), and a load-balance
//! auxiliary loss discourages expert collapse. Ties pick the lowest expert
//! index. Pruned experts are masked out of the router softmax, which
//! renormalizes the remaining probabilities — tokens fall through to their
//! next-best expert.

pub mod archive;
pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::numerics::{ops, Tape, Tensor};
use crate::rng::Rng;

/// Structural hyperparameters shared by every architecture in a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub patch_size: usize,
    /// Coefficient of the load-balance auxiliary loss.
    pub aux_loss_coeff: f64,
    /// Disable to train with the raw task loss only.
    pub aux_loss_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            d_hidden: 64,
            n_heads: 4,
            n_layers: 9,
            n_classes: 2,
            image_h: 16,
            image_w: 16,
            image_c: 1,
            patch_size: 4,
            aux_loss_coeff: 0.01,
            aux_loss_enabled: true,
        }
    }
}

impl ModelConfig {
    /// A three-block variant for fast tests.
    pub fn tiny() -> Self {
        ModelConfig { n_layers: 3, d_model: 16, d_hidden: 24, n_heads: 2, ..Default::default() }
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.image_c
    }

    pub fn n_tokens(&self) -> usize {
        (self.image_h / self.patch_size) * (self.image_w / self.patch_size)
    }

    pub fn image_len(&self) -> usize {
        self.image_h * self.image_w * self.image_c
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.d_model.is_multiple_of(self.n_heads)
            && self.image_h.is_multiple_of(self.patch_size)
            && self.image_w.is_multiple_of(self.patch_size)
            && self.n_layers > 0
            && self.n_classes >= 2;
        if ok {
            Ok(())
        } else {
            Err(crate::error::Error::Config(format!(
                "invalid model config: d_model {} / n_heads {}, image {}x{} / patch {}",
                self.d_model, self.n_heads, self.image_h, self.image_w, self.patch_size
            )))
        }
    }
}

/// Per-layer expert counts — one point in the search space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchitectureEncoding(Vec<usize>);

impl ArchitectureEncoding {
    pub fn new(expert_counts: Vec<usize>) -> Result<Self> {
        if let Some(layer) = expert_counts.iter().position(|&e| e == 0) {
            return Err(ModelError::EmptyLayer { layer }.into());
        }
        Ok(ArchitectureEncoding(expert_counts))
    }

    /// All layers at one expert: plain FFN everywhere.
    pub fn all_ones(n_layers: usize) -> Self {
        ArchitectureEncoding(vec![1; n_layers])
    }

    pub fn uniform(n_layers: usize, experts: usize) -> Result<Self> {
        ArchitectureEncoding::new(vec![experts; n_layers])
    }

    pub fn expert_counts(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_experts(&self) -> usize {
        self.0.iter().sum()
    }

    /// Comma-separated form used by the CLI and CSV outputs, e.g. "1,2,4".
    pub fn to_compact_string(&self) -> String {
        self.0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
    }

    pub fn parse(s: &str) -> Result<Self> {
        let counts: std::result::Result<Vec<usize>, _> =
            s.split(',').map(|p| p.trim().parse::<usize>()).collect();
        match counts {
            Ok(c) if !c.is_empty() => ArchitectureEncoding::new(c),
            _ => Err(crate::error::Error::Config(format!("bad encoding {s:?}: expected comma-separated positive integers"))),
        }
    }
}

impl std::fmt::Display for ArchitectureEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_compact_string())
    }
}

/// Learned gate that assigns each token to one expert.
#[derive(Debug)]
pub struct Router {
    /// Which layer this router belongs to (diagnostics only).
    pub layer: usize,
    pub weight: Tensor, // [d_model, n_experts]
    pub bias: Tensor,   // [n_experts]
    /// Pruning mask; inactive experts get zero probability.
    pub active: Vec<bool>,
}

/// One routing decision for a single token.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    pub expert: usize,
    /// Probability of the chosen expert under the active-renormalized softmax.
    pub gate: f64,
    /// Full distribution over all expert slots; inactive entries are 0.
    pub distribution: Vec<f64>,
}

/// Lowest-index argmax over active columns.
pub(crate) fn argmax_active(probs: &[f64], active: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_p = f64::NEG_INFINITY;
    for (j, (&p, &a)) in probs.iter().zip(active).enumerate() {
        if a && p > best_p {
            best = j;
            best_p = p;
        }
    }
    best
}

impl Router {
    pub fn n_experts(&self) -> usize {
        self.active.len()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Route one token (no gradient recording).
    pub fn route(&self, token: &[f64]) -> Result<RouteDecision> {
        if self.n_active() == 0 {
            return Err(ModelError::NoActiveExpert { layer: self.layer }.into());
        }
        let d = token.len();
        let e = self.n_experts();
        let wd = self.weight.data();
        let bd = self.bias.data();
        let mut logits = bd.clone();
        for (i, &x) in token.iter().enumerate() {
            let wrow = &wd[i * e..(i + 1) * e];
            for (l, &w) in logits.iter_mut().zip(wrow) {
                *l += x * w;
            }
        }
        debug_assert_eq!(wd.len(), d * e);
        let mut probs = vec![0.0; e];
        ops::softmax_row(&logits, &mut probs, Some(&self.active));
        let expert = argmax_active(&probs, &self.active);
        Ok(RouteDecision { expert, gate: probs[expert], distribution: probs })
    }
}

/// A two-layer feed-forward expert: GELU(x·W1 + b1)·W2 + b2.
#[derive(Debug)]
pub struct Expert {
    pub w1: Tensor, // [d_model, d_hidden]
    pub b1: Tensor, // [d_hidden]
    pub w2: Tensor, // [d_hidden, d_model]
    pub b2: Tensor, // [d_model]
}

impl Expert {
    fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let h = ops::add_bias(tape, &ops::matmul(tape, x, &self.w1)?, &self.b1)?;
        let h = ops::gelu(tape, &h);
        ops::add_bias(tape, &ops::matmul(tape, &h, &self.w2)?, &self.b2)
    }
}

/// Router plus expert set: the unit the search varies and pruning shrinks.
#[derive(Debug)]
pub struct SwitchFfnLayer {
    pub router: Router,
    pub experts: Vec<Expert>,
}

/// Result of pushing a token matrix through a switch layer.
#[derive(Debug)]
pub struct SwitchOutput {
    pub output: Tensor,
    /// Chosen expert per token, in row order.
    pub choices: Vec<usize>,
    /// Scalar load-balance loss: n_active · Σ_e fraction_e · mean_prob_e.
    pub load_balance: Tensor,
}

impl SwitchFfnLayer {
    pub fn n_active(&self) -> usize {
        self.router.n_active()
    }

    /// Forward over a [N, d_model] token matrix.
    pub fn forward(&self, tape: &Tape, tokens: &Tensor) -> Result<SwitchOutput> {
        let n = tokens.shape()[0];
        let e = self.router.n_experts();
        if self.router.n_active() == 0 {
            return Err(ModelError::NoActiveExpert { layer: self.router.layer }.into());
        }

        let logits = ops::add_bias(tape, &ops::matmul(tape, tokens, &self.router.weight)?, &self.router.bias)?;
        let probs = ops::softmax_masked(tape, &logits, &self.router.active)?;

        let choices: Vec<usize> = {
            let pd = probs.data();
            (0..n).map(|r| argmax_active(&pd[r * e..(r + 1) * e], &self.router.active)).collect()
        };
        // All-NaN probabilities leave the argmax sentinel in place.
        if choices.contains(&usize::MAX) {
            return Err(crate::error::NumericsError::NonFinite {
                context: format!("routing probabilities of layer {}", self.router.layer),
            }
            .into());
        }
        let gate = ops::select_per_row(tape, &probs, &choices)?;

        // Dispatch token groups to their experts and stitch the rows back.
        let mut combined: Option<Tensor> = None;
        for (ex, expert) in self.experts.iter().enumerate() {
            if !self.router.active[ex] {
                continue;
            }
            let idx: Vec<usize> = choices
                .iter()
                .enumerate()
                .filter_map(|(r, &c)| (c == ex).then_some(r))
                .collect();
            if idx.is_empty() {
                continue;
            }
            let grouped = ops::gather_rows(tape, tokens, &idx)?;
            let out = expert.forward(tape, &grouped)?;
            let placed = ops::scatter_rows(tape, &out, &idx, n)?;
            combined = Some(match combined {
                Some(acc) => ops::add(tape, &acc, &placed)?,
                None => placed,
            });
        }
        let combined = combined.expect("at least one expert received tokens");
        let output = ops::mul_col(tape, &combined, &gate)?;

        // Load balance: fractions are routing statistics (constants), the
        // mean probabilities carry the gradient.
        let mean_probs = ops::mean_axis0(tape, &probs)?;
        let n_active = self.router.n_active() as f64;
        let mut weights = vec![0.0; e];
        for &c in &choices {
            weights[c] += 1.0;
        }
        for (w, &a) in weights.iter_mut().zip(&self.router.active) {
            *w = if a { n_active * (*w / n as f64) } else { 0.0 };
        }
        let load_balance = ops::weighted_sum(tape, &mean_probs, &weights)?;

        Ok(SwitchOutput { output, choices, load_balance })
    }
}

/// One pre-norm attention block with a switch-FFN sublayer.
#[derive(Debug)]
pub struct AttentionBlock {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub switch: SwitchFfnLayer,
}

const LN_EPS: f64 = 1e-5;

impl AttentionBlock {
    /// x: [B,T,d] -> ([B,T,d], per-token expert choices, load-balance loss).
    fn forward(&self, tape: &Tape, x: &Tensor, cfg: &ModelConfig) -> Result<(Tensor, Vec<usize>, Tensor)> {
        let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let heads = cfg.n_heads;
        let dh = d / heads;
        let n = b * t;

        let x2 = ops::reshape(tape, x, &[n, d])?;
        let h1 = ops::layer_norm(tape, &x2, &self.ln1_gamma, &self.ln1_beta, LN_EPS)?;

        let split_heads = |tape: &Tape, m: &Tensor| -> Result<Tensor> {
            let m4 = ops::reshape(tape, m, &[b, t, heads, dh])?;
            let m4 = ops::permute_0213(tape, &m4)?; // [B,H,T,dh]
            ops::reshape(tape, &m4, &[b * heads, t, dh])
        };

        let q = split_heads(tape, &ops::add_bias(tape, &ops::matmul(tape, &h1, &self.wq)?, &self.bq)?)?;
        let k = split_heads(tape, &ops::add_bias(tape, &ops::matmul(tape, &h1, &self.wk)?, &self.bk)?)?;
        let v = split_heads(tape, &ops::add_bias(tape, &ops::matmul(tape, &h1, &self.wv)?, &self.bv)?)?;

        let scores = ops::scale(tape, &ops::bmm(tape, &q, &ops::transpose(tape, &k)?)?, 1.0 / (dh as f64).sqrt());
        let attn = ops::softmax(tape, &scores);
        let ctx = ops::bmm(tape, &attn, &v)?; // [BH,T,dh]

        let ctx = ops::reshape(tape, &ctx, &[b, heads, t, dh])?;
        let ctx = ops::permute_0213(tape, &ctx)?; // [B,T,H,dh]
        let ctx = ops::reshape(tape, &ctx, &[n, d])?;
        let attn_out = ops::add_bias(tape, &ops::matmul(tape, &ctx, &self.wo)?, &self.bo)?;

        let x2 = ops::add(tape, &x2, &attn_out)?;
        let h2 = ops::layer_norm(tape, &x2, &self.ln2_gamma, &self.ln2_beta, LN_EPS)?;
        let sw = self.switch.forward(tape, &h2)?;
        let out = ops::add(tape, &x2, &sw.output)?;
        let out = ops::reshape(tape, &out, &[b, t, d])?;
        Ok((out, sw.choices, sw.load_balance))
    }
}

/// Per-image routing path: the chosen expert index in each switch layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTrace {
    pub experts: Vec<usize>,
}

/// Everything a forward pass produces.
#[derive(Debug)]
pub struct ForwardOutput {
    pub logits: Tensor, // [B, n_classes]
    /// Mean of the per-layer load-balance losses (scalar).
    pub aux_loss: Tensor,
    /// Per layer: the chosen expert for every token (length B·T).
    pub token_choices: Vec<Vec<usize>>,
    /// Per image: majority expert per layer (ties to the lower index).
    pub traces: Vec<RoutingTrace>,
}

/// The full model: embedding, attention/switch blocks, classifier head.
#[derive(Debug)]
pub struct MoEModel {
    pub config: ModelConfig,
    pub encoding: ArchitectureEncoding,
    pub patch_weight: Tensor, // [patch_dim, d_model]
    pub patch_bias: Tensor,   // [d_model]
    pub pos_embed: Tensor,    // [T, d_model]
    pub blocks: Vec<AttentionBlock>,
    pub final_ln_gamma: Tensor,
    pub final_ln_beta: Tensor,
    pub head_weight: Tensor, // [d_model, n_classes]
    pub head_bias: Tensor,   // [n_classes]
}

impl MoEModel {
    /// Build a model with seeded random initialization.
    pub fn new(config: ModelConfig, encoding: ArchitectureEncoding, seed: u64) -> Result<MoEModel> {
        let mut rng = Rng::derived(seed, "model-init");
        MoEModel::build(config, encoding, Some(&mut rng))
    }

    /// Build a model with all parameters zero (checkpoint loading).
    pub(crate) fn zeroed(config: ModelConfig, encoding: ArchitectureEncoding) -> Result<MoEModel> {
        MoEModel::build(config, encoding, None)
    }

    fn build(config: ModelConfig, encoding: ArchitectureEncoding, mut rng: Option<&mut Rng>) -> Result<MoEModel> {
        config.validate()?;
        if encoding.len() != config.n_layers {
            return Err(ModelError::EncodingLength { got: encoding.len(), expected: config.n_layers }.into());
        }
        let d = config.d_model;
        let h = config.d_hidden;
        let pd = config.patch_dim();
        let t = config.n_tokens();

        let mut mat = |shape: &[usize], stddev: f64| -> Tensor {
            match rng.as_deref_mut() {
                Some(r) => Tensor::randn(shape, stddev, r).as_param(),
                None => Tensor::zeros(shape).as_param(),
            }
        };
        let zeros = |shape: &[usize]| Tensor::zeros(shape).as_param();
        let ones = |shape: &[usize]| Tensor::full(shape, 1.0).as_param();

        let patch_weight = mat(&[pd, d], 1.0 / (pd as f64).sqrt());
        let patch_bias = zeros(&[d]);
        let pos_embed = mat(&[t, d], 0.02);

        let w_std = 1.0 / (d as f64).sqrt();
        let blocks = (0..config.n_layers)
            .map(|layer| {
                let n_experts = encoding.expert_counts()[layer];
                let experts = (0..n_experts)
                    .map(|_| Expert {
                        w1: mat(&[d, h], w_std),
                        b1: zeros(&[h]),
                        w2: mat(&[h, d], 1.0 / (h as f64).sqrt()),
                        b2: zeros(&[d]),
                    })
                    .collect();
                AttentionBlock {
                    ln1_gamma: ones(&[d]),
                    ln1_beta: zeros(&[d]),
                    wq: mat(&[d, d], w_std),
                    bq: zeros(&[d]),
                    wk: mat(&[d, d], w_std),
                    bk: zeros(&[d]),
                    wv: mat(&[d, d], w_std),
                    bv: zeros(&[d]),
                    wo: mat(&[d, d], w_std),
                    bo: zeros(&[d]),
                    ln2_gamma: ones(&[d]),
                    ln2_beta: zeros(&[d]),
                    switch: SwitchFfnLayer {
                        router: Router {
                            layer,
                            weight: mat(&[d, n_experts], 0.02),
                            bias: zeros(&[n_experts]),
                            active: vec![true; n_experts],
                        },
                        experts,
                    },
                }
            })
            .collect();

        Ok(MoEModel {
            final_ln_gamma: ones(&[d]),
            final_ln_beta: zeros(&[d]),
            head_weight: mat(&[d, config.n_classes], w_std),
            head_bias: zeros(&[config.n_classes]),
            config,
            encoding,
            patch_weight,
            patch_bias,
            pos_embed,
            blocks,
        })
    }

    /// Forward over a flat image batch (`batch · H·W·C` values in [0,1]).
    pub fn forward(&self, tape: &Tape, images: &[f64], batch: usize) -> Result<ForwardOutput> {
        let cfg = &self.config;
        if images.len() != batch * cfg.image_len() || batch == 0 {
            return Err(ModelError::InputShape {
                got: vec![images.len()],
                expected: vec![batch, cfg.image_h, cfg.image_w, cfg.image_c],
            }
            .into());
        }
        let t = cfg.n_tokens();
        let d = cfg.d_model;

        let patches = patchify(images, batch, cfg.image_h, cfg.image_w, cfg.image_c, cfg.patch_size);
        let tokens0 = Tensor::raw(vec![batch * t, cfg.patch_dim()], patches, false);
        let emb = ops::add_bias(tape, &ops::matmul(tape, &tokens0, &self.patch_weight)?, &self.patch_bias)?;
        let mut x = ops::reshape(tape, &emb, &[batch, t, d])?;
        x = ops::add_rows(tape, &x, &self.pos_embed)?;

        let mut token_choices = Vec::with_capacity(self.blocks.len());
        let mut aux: Option<Tensor> = None;
        for (l, block) in self.blocks.iter().enumerate() {
            let (next, choices, lb) = block.forward(tape, &x, cfg).map_err(|e| match e {
                crate::error::Error::Numerics(crate::error::NumericsError::NonFinite { .. }) => {
                    crate::error::Error::from(ModelError::NanActivation { block: format!("block {l}") })
                }
                other => other,
            })?;
            next.check_finite("")
                .map_err(|_| ModelError::NanActivation { block: format!("block {l}") })?;
            x = next;
            token_choices.push(choices);
            aux = Some(match aux {
                Some(acc) => ops::add(tape, &acc, &lb)?,
                None => lb,
            });
        }
        let aux_loss = ops::scale(tape, &aux.expect("at least one block"), 1.0 / self.blocks.len() as f64);

        let x2 = ops::reshape(tape, &x, &[batch * t, d])?;
        let normed = ops::layer_norm(tape, &x2, &self.final_ln_gamma, &self.final_ln_beta, LN_EPS)?;
        let normed3 = ops::reshape(tape, &normed, &[batch, t, d])?;
        let pooled = ops::mean_tokens(tape, &normed3)?;
        let logits = ops::add_bias(tape, &ops::matmul(tape, &pooled, &self.head_weight)?, &self.head_bias)?;
        logits
            .check_finite("")
            .map_err(|_| ModelError::NanActivation { block: "classifier head".to_string() })?;

        let traces = (0..batch)
            .map(|b| RoutingTrace {
                experts: token_choices
                    .iter()
                    .enumerate()
                    .map(|(l, choices)| majority_expert(&choices[b * t..(b + 1) * t], self.blocks[l].switch.router.n_experts()))
                    .collect(),
            })
            .collect();

        Ok(ForwardOutput { logits, aux_loss, token_choices, traces })
    }

    /// Argmax class predictions over a flat image batch (inference only).
    pub fn predict(&self, images: &[f64], n: usize, batch_size: usize) -> Result<Vec<usize>> {
        let mut preds = Vec::with_capacity(n);
        let ilen = self.config.image_len();
        let c = self.config.n_classes;
        let mut start = 0;
        while start < n {
            let bsz = batch_size.min(n - start);
            let tape = Tape::inference();
            let out = self.forward(&tape, &images[start * ilen..(start + bsz) * ilen], bsz)?;
            let ld = out.logits.data();
            for r in 0..bsz {
                preds.push(argmax(&ld[r * c..(r + 1) * c]));
            }
            start += bsz;
        }
        Ok(preds)
    }

    /// All trainable tensors, including experts currently masked off.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.collect_parameters(false)
    }

    /// Tensors that belong in a checkpoint: everything except inactive experts.
    pub fn active_named_parameters(&self) -> Vec<(String, Tensor)> {
        self.collect_parameters(true)
    }

    fn collect_parameters(&self, active_only: bool) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = vec![
            ("patch_embed.weight".into(), self.patch_weight.clone()),
            ("patch_embed.bias".into(), self.patch_bias.clone()),
            ("pos_embed".into(), self.pos_embed.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.ln1.gamma"), b.ln1_gamma.clone()));
            out.push((format!("{p}.ln1.beta"), b.ln1_beta.clone()));
            out.push((format!("{p}.attn.wq"), b.wq.clone()));
            out.push((format!("{p}.attn.bq"), b.bq.clone()));
            out.push((format!("{p}.attn.wk"), b.wk.clone()));
            out.push((format!("{p}.attn.bk"), b.bk.clone()));
            out.push((format!("{p}.attn.wv"), b.wv.clone()));
            out.push((format!("{p}.attn.bv"), b.bv.clone()));
            out.push((format!("{p}.attn.wo"), b.wo.clone()));
            out.push((format!("{p}.attn.bo"), b.bo.clone()));
            out.push((format!("{p}.ln2.gamma"), b.ln2_gamma.clone()));
            out.push((format!("{p}.ln2.beta"), b.ln2_beta.clone()));
            out.push((format!("{p}.switch.router.weight"), b.switch.router.weight.clone()));
            out.push((format!("{p}.switch.router.bias"), b.switch.router.bias.clone()));
            for (e, expert) in b.switch.experts.iter().enumerate() {
                if active_only && !b.switch.router.active[e] {
                    continue;
                }
                out.push((format!("{p}.switch.experts.{e}.w1"), expert.w1.clone()));
                out.push((format!("{p}.switch.experts.{e}.b1"), expert.b1.clone()));
                out.push((format!("{p}.switch.experts.{e}.w2"), expert.w2.clone()));
                out.push((format!("{p}.switch.experts.{e}.b2"), expert.b2.clone()));
            }
        }
        out.push(("final_ln.gamma".into(), self.final_ln_gamma.clone()));
        out.push(("final_ln.beta".into(), self.final_ln_beta.clone()));
        out.push(("head.weight".into(), self.head_weight.clone()));
        out.push(("head.bias".into(), self.head_bias.clone()));
        out
    }

    /// Active expert count per layer (equals `encoding` until pruning).
    pub fn active_encoding(&self) -> ArchitectureEncoding {
        ArchitectureEncoding(self.blocks.iter().map(|b| b.switch.router.n_active()).collect())
    }

    /// Number of live parameters: inactive experts and their router columns
    /// are excluded, so this matches [`count_params`] on the active encoding.
    pub fn param_count(&self) -> u64 {
        count_params(&self.active_encoding(), &self.config)
    }

    pub fn active_masks(&self) -> Vec<Vec<bool>> {
        self.blocks.iter().map(|b| b.switch.router.active.clone()).collect()
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Most frequent expert among a slice of choices; ties to the lower index.
fn majority_expert(choices: &[usize], n_experts: usize) -> usize {
    let mut counts = vec![0usize; n_experts];
    for &c in choices {
        counts[c] += 1;
    }
    let mut best = 0;
    for (e, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = e;
        }
    }
    best
}

/// Rearrange a flat [B,H,W,C] image batch into [B·T, patch²·C] token rows.
/// Patches scan row-major over the grid; within a patch, (dy, dx, c) order.
pub fn patchify(images: &[f64], batch: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<f64> {
    let (gh, gw) = (h / p, w / p);
    let pd = p * p * c;
    let mut out = vec![0.0; batch * gh * gw * pd];
    let mut o = 0;
    for b in 0..batch {
        let img = &images[b * h * w * c..(b + 1) * h * w * c];
        for py in 0..gh {
            for px in 0..gw {
                for dy in 0..p {
                    let row = (py * p + dy) * w * c;
                    let start = row + px * p * c;
                    out[o..o + p * c].copy_from_slice(&img[start..start + p * c]);
                    o += p * c;
                }
            }
        }
    }
    out
}

/// Closed-form parameter count for an encoding under a config.
///
/// Shared backbone plus, per layer, `E·ffn_params + router_params(E)` where
/// `ffn_params = 2·d·h + d + h` and `router_params(E) = d·E + E`.
pub fn count_params(encoding: &ArchitectureEncoding, config: &ModelConfig) -> u64 {
    let d = config.d_model as u64;
    let h = config.d_hidden as u64;
    let pd = config.patch_dim() as u64;
    let t = config.n_tokens() as u64;
    let classes = config.n_classes as u64;
    let layers = config.n_layers as u64;

    let ffn = 2 * d * h + d + h;
    let shared = pd * d + d            // patch embedding
        + t * d                        // positional embedding
        + layers * (4 * d * d + 8 * d) // attention + layer norms per block
        + 2 * d                        // final layer norm
        + d * classes + classes;       // head
    let switch: u64 =
        encoding.expert_counts().iter().map(|&e| e as u64 * ffn + d * e as u64 + e as u64).sum();
    shared + switch
}
