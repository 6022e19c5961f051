//! Graph-aware transformer over a `[batch, time, stock, feature]` window.
//!
//! Each layer runs causal multi-head attention along time for every stock,
//! then multi-head attention across stocks at every time step with the edge
//! matrix as an additive bias, followed by a position-wise feed-forward
//! block. Edge weights are refined after every layer from the time-averaged
//! node representations.

use graphsent_autograd::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{N_FEATURES, N_RAW};
use crate::graphstructure::{project_edges, refine_edges};
use crate::sentiment::{scale_keys, sentiment_branch};
use crate::{Error, Result};

/// Inputs of the sentiment branch: three sentiment scales and the close.
pub const SENT_INPUTS: usize = 4;
/// Inputs of the fusion gate: three market volatilities and mean |S1|.
pub const FUSION_INPUTS: usize = 4;
const LN_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub n_stocks: usize,
    pub d_stock: usize,
    pub sent_hidden: usize,
    pub horizons: Vec<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(format!("d_model must be even, got {}", self.d_model)));
        }
        if self.seq_len == 0 || self.n_stocks == 0 || self.layers == 0 {
            return Err(Error::Config("seq_len, n_stocks and layers must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0,1), got {}", self.dropout)));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config("horizons must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn horizon_index(&self, h: usize) -> Result<usize> {
        self.horizons
            .iter()
            .position(|&x| x == h)
            .ok_or_else(|| Error::Config(format!("unknown horizon {h}")))
    }
}

/// Which mechanisms are active in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    /// Sentiment key scaling, sentiment branch and fusion gate.
    pub sentiment: bool,
    /// Edge bias in cross-sectional attention and edge refinement.
    pub graph: bool,
    pub temporal_encoding: bool,
    pub gating: bool,
    /// Zero the 11 indicator columns, keeping only the raw variables.
    pub price_only: bool,
    /// Cross-sectional attention stage.
    pub cross_stage: bool,
    /// Predict from the sentiment branch alone.
    pub sentiment_only: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        sentiment: true,
        graph: true,
        temporal_encoding: true,
        gating: true,
        price_only: false,
        cross_stage: true,
        sentiment_only: false,
    };
}

impl Default for Variant {
    fn default() -> Self {
        Self::FULL
    }
}

/// Named ablation configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    WithoutSentiment,
    WithoutGraph,
    WithoutTemporalEncoding,
    WithoutGating,
    PriceFeaturesOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::WithoutSentiment,
        Ablation::WithoutGraph,
        Ablation::WithoutTemporalEncoding,
        Ablation::WithoutGating,
        Ablation::PriceFeaturesOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "Full Model",
            Ablation::WithoutSentiment => "Without Sentiment",
            Ablation::WithoutGraph => "Without Graph Structure",
            Ablation::WithoutTemporalEncoding => "Without Temporal Encoding",
            Ablation::WithoutGating => "Without Feature Gating",
            Ablation::PriceFeaturesOnly => "Price Features Only",
        }
    }

    pub fn variant(self) -> Variant {
        let f = Variant::FULL;
        match self {
            Ablation::Full => f,
            Ablation::WithoutSentiment => Variant { sentiment: false, ..f },
            Ablation::WithoutGraph => Variant { graph: false, ..f },
            Ablation::WithoutTemporalEncoding => Variant {
                temporal_encoding: false,
                ..f
            },
            Ablation::WithoutGating => Variant { gating: false, ..f },
            Ablation::PriceFeaturesOnly => Variant { price_only: true, ..f },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Gate, input projection, stock embedding and initial edges.
    Base,
    Layer(usize),
    Heads,
    Sentiment,
    Fusion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub groups: Vec<ParamGroup>,
}

impl ParamSet {
    fn push(&mut self, name: String, t: Tensor, group: ParamGroup) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.groups.push(group);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIdx {
    temporal: AttnIdx,
    cross: AttnIdx,
    ln1_g: usize,
    ln1_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    edge_w: usize,
    edge_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Idx {
    gate_w: usize,
    gate_b: usize,
    in_w: usize,
    in_b: usize,
    stock_emb: usize,
    stock_proj: usize,
    e0: usize,
    layers: Vec<LayerIdx>,
    price_w: usize,
    price_b: usize,
    dir_w: usize,
    dir_b: usize,
    beta: usize,
    sent_w1: usize,
    sent_b1: usize,
    sent_w2: usize,
    sent_b2: usize,
    fuse_w: usize,
    fuse_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    idx: Idx,
}

/// One batch of model inputs.
#[derive(Clone, Debug)]
pub struct Inputs {
    /// Normalized features `[B, T, N, 17]`.
    pub x: Tensor,
    /// Per-stock daily sentiment `[B, N, T]` for key scaling.
    pub s1: Tensor,
    /// Sentiment-branch inputs `[B, N, 4]`.
    pub sent_in: Tensor,
    /// Fusion-gate inputs `[B, 4]`.
    pub fusion_in: Tensor,
}

pub struct Outputs {
    /// Fused normalized-return prediction `[B, N, H]`.
    pub pred: Var,
    /// Direction probability `[B, N, H]`.
    pub p_up: Var,
    pub y_node: Var,
    pub y_sent: Option<Var>,
    /// Fusion weight on the node branch `[B, 1, 1]`.
    pub alpha: Option<Var>,
    /// Edge matrix applied in each layer, `[N, N]` or `[B, N, N]`.
    pub edges: Vec<Var>,
    /// Temporal and cross-sectional attention weights per layer.
    pub attention: Vec<(Var, Var)>,
}

/// `sigmoid(x W_g + b_g) * x` over the last axis.
pub fn gate_features(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = g.matmul(x, w)?;
    let z = g.add(z, b)?;
    let gate = g.sigmoid(z);
    Ok(g.mul(gate, x)?)
}

/// Edge matrices fed to attention must be symmetric.
fn check_symmetric(e: &[f64], n: usize) -> Result<()> {
    for i in 0..n {
        for j in i + 1..n {
            if (e[i * n + j] - e[j * n + i]).abs() > 1e-4 {
                return Err(Error::Graph(format!(
                    "edge matrix is not symmetric at ({i}, {j}): {} vs {}",
                    e[i * n + j],
                    e[j * n + i]
                )));
            }
        }
    }
    Ok(())
}

/// Sinusoidal encoding of position `t` in `d` dimensions.
pub fn temporal_encoding(t: usize, d: usize) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(Error::Config(format!("temporal encoding needs even d, got {d}")));
    }
    Ok((0..d)
        .map(|j| {
            let k = j / 2;
            let arg = t as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
            if j % 2 == 0 {
                arg.sin()
            } else {
                arg.cos()
            }
        })
        .collect())
}

/// Additive causal mask: 0 where the key position is not after the query.
pub fn causal_mask(t: usize) -> Tensor {
    let mut m = vec![0.0; t * t];
    for a in 0..t {
        for b in a + 1..t {
            m[a * t + b] = f64::NEG_INFINITY;
        }
    }
    Tensor::new(&[t, t], m).expect("square mask")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).expect("shape")
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, &[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt())
}

impl Model {
    /// Initializes every parameter in a fixed order from `seed`, with the
    /// initial edge matrix `e0` (`N x N`).
    pub fn new(cfg: ModelConfig, e0: &[f64], seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_stocks;
        if e0.len() != n * n {
            return Err(Error::Config(format!("initial edges must be {n}x{n}")));
        }
        let d = cfg.d_model;
        let nh = cfg.horizons.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet {
            names: vec![],
            tensors: vec![],
            groups: vec![],
        };
        use ParamGroup::*;
        let gate_w = p.push("gate.w".into(), xavier(&mut rng, N_FEATURES, N_FEATURES), Base);
        let gate_b = p.push("gate.b".into(), Tensor::zeros(&[N_FEATURES]), Base);
        let in_w = p.push("input.w".into(), xavier(&mut rng, N_FEATURES, d), Base);
        let in_b = p.push("input.b".into(), Tensor::zeros(&[d]), Base);
        let stock_emb = p.push("stock.emb".into(), uniform(&mut rng, &[n, cfg.d_stock], 0.5), Base);
        let stock_proj = p.push("stock.proj".into(), xavier(&mut rng, cfg.d_stock, d), Base);
        let e0 = p.push("edges.e0".into(), Tensor::new(&[n, n], e0.to_vec())?, Base);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let attn = |p: &mut ParamSet, rng: &mut ChaCha8Rng, stage: &str| AttnIdx {
                wq: p.push(format!("layer{l}.{stage}.wq"), xavier(rng, d, d), Layer(l)),
                wk: p.push(format!("layer{l}.{stage}.wk"), xavier(rng, d, d), Layer(l)),
                wv: p.push(format!("layer{l}.{stage}.wv"), xavier(rng, d, d), Layer(l)),
                wo: p.push(format!("layer{l}.{stage}.wo"), xavier(rng, d, d), Layer(l)),
            };
            let temporal = attn(&mut p, &mut rng, "temporal");
            let cross = attn(&mut p, &mut rng, "cross");
            layers.push(LayerIdx {
                temporal,
                cross,
                ln1_g: p.push(format!("layer{l}.ln1.g"), Tensor::full(&[d], 1.0), Layer(l)),
                ln1_b: p.push(format!("layer{l}.ln1.b"), Tensor::zeros(&[d]), Layer(l)),
                ln2_g: p.push(format!("layer{l}.ln2.g"), Tensor::full(&[d], 1.0), Layer(l)),
                ln2_b: p.push(format!("layer{l}.ln2.b"), Tensor::zeros(&[d]), Layer(l)),
                w1: p.push(format!("layer{l}.ffn.w1"), xavier(&mut rng, d, cfg.d_ff), Layer(l)),
                b1: p.push(format!("layer{l}.ffn.b1"), Tensor::zeros(&[cfg.d_ff]), Layer(l)),
                w2: p.push(format!("layer{l}.ffn.w2"), xavier(&mut rng, cfg.d_ff, d), Layer(l)),
                b2: p.push(format!("layer{l}.ffn.b2"), Tensor::zeros(&[d]), Layer(l)),
                edge_w: p.push(format!("layer{l}.edge.w"), uniform(&mut rng, &[2 * d, 1], 0.1), Layer(l)),
                edge_b: p.push(format!("layer{l}.edge.b"), Tensor::zeros(&[1]), Layer(l)),
            });
        }
        let head_bound = 0.1;
        let price_w = p.push("head.price.w".into(), uniform(&mut rng, &[d, nh], head_bound), Heads);
        let price_b = p.push("head.price.b".into(), Tensor::zeros(&[nh]), Heads);
        let dir_w = p.push("head.dir.w".into(), uniform(&mut rng, &[d, nh], head_bound), Heads);
        let dir_b = p.push("head.dir.b".into(), Tensor::zeros(&[nh]), Heads);
        let beta = p.push("sentiment.beta".into(), Tensor::zeros(&[1]), Sentiment);
        let sent_w1 = p.push(
            "sentiment.w1".into(),
            xavier(&mut rng, SENT_INPUTS, cfg.sent_hidden),
            Sentiment,
        );
        let sent_b1 = p.push("sentiment.b1".into(), Tensor::zeros(&[cfg.sent_hidden]), Sentiment);
        let sent_w2 = p.push(
            "sentiment.w2".into(),
            uniform(&mut rng, &[cfg.sent_hidden, nh], head_bound),
            Sentiment,
        );
        let sent_b2 = p.push("sentiment.b2".into(), Tensor::zeros(&[nh]), Sentiment);
        let fuse_w = p.push("fusion.w".into(), Tensor::zeros(&[FUSION_INPUTS, 1]), Fusion);
        let fuse_b = p.push("fusion.b".into(), Tensor::zeros(&[1]), Fusion);
        Ok(Self {
            idx: Idx {
                gate_w,
                gate_b,
                in_w,
                in_b,
                stock_emb,
                stock_proj,
                e0,
                layers,
                price_w,
                price_b,
                dir_w,
                dir_b,
                beta,
                sent_w1,
                sent_b1,
                sent_w2,
                sent_b2,
                fuse_w,
                fuse_b,
            },
            cfg,
            params: p,
        })
    }

    /// Rebuilds a model around loaded parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: ParamSet) -> Result<Self> {
        let n = cfg.n_stocks;
        let mut m = Self::new(cfg, &vec![0.0; n * n], 0)?;
        if m.params.names != params.names {
            return Err(Error::Persistence("parameter names do not match the model config".into()));
        }
        for (a, b) in m.params.tensors.iter().zip(&params.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Persistence(format!(
                    "parameter shape {:?} does not match config shape {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.index_of(name).map(|i| &self.params.tensors[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.index_of(name).map(move |i| &mut self.params.tensors[i])
    }

    /// Index of the initial edge matrix in the parameter list.
    pub fn e0_index(&self) -> usize {
        self.idx.e0
    }

    /// Keeps the learnable initial edges symmetric in `[0, 1]` with unit diagonal.
    pub fn project(&mut self) {
        let n = self.cfg.n_stocks;
        project_edges(self.params.tensors[self.idx.e0].data_mut(), n);
    }

    /// Whether each parameter trains in a stage that unfreezes the top
    /// `top_layers` layers (and the base when `all` is set).
    pub fn stage_mask(&self, top_layers: usize, all: bool) -> Vec<bool> {
        let l = self.cfg.layers;
        self.params
            .groups
            .iter()
            .map(|g| match g {
                ParamGroup::Heads | ParamGroup::Sentiment | ParamGroup::Fusion => true,
                ParamGroup::Layer(i) => all || *i + top_layers >= l,
                ParamGroup::Base => all,
            })
            .collect()
    }

    fn attention(
        &self,
        g: &mut Graph,
        v: &[Var],
        x: Var,
        a: &AttnIdx,
        bias: Option<(Var, usize)>,
        key_scale: Option<Var>,
    ) -> Result<(Var, Var)> {
        // x: [S, L, d] sequences of length L.
        let sh = g.shape(x).to_vec();
        let (s, l, d) = (sh[0], sh[1], sh[2]);
        let h = self.cfg.heads;
        let dk = self.cfg.d_k();
        let q = g.matmul(x, v[a.wq])?;
        let mut k = g.matmul(x, v[a.wk])?;
        if let Some(f) = key_scale {
            k = g.mul(k, f)?;
        }
        let val = g.matmul(x, v[a.wv])?;
        let split = |g: &mut Graph, t: Var| -> Result<Var> {
            let t = g.reshape(t, &[s, l, h, dk])?;
            let t = g.permute(t, &[0, 2, 1, 3])?;
            Ok(g.reshape(t, &[s * h, l, dk])?)
        };
        let q = split(g, q)?;
        let k = split(g, k)?;
        let val = split(g, val)?;
        let scores = g.bmm(q, k, true)?;
        let mut scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
        if let Some((b, groups)) = bias {
            // Bias broadcasts over `[groups, S*H/groups, L, L]`.
            let r = g.reshape(scores, &[groups, s * h / groups, l, l])?;
            let r = g.add(r, b)?;
            scores = g.reshape(r, &[s * h, l, l])?;
        }
        let w = g.softmax(scores);
        let o = g.bmm(w, val, false)?;
        let o = g.reshape(o, &[s, h, l, dk])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[s, l, d])?;
        Ok((g.matmul(o, v[a.wo])?, w))
    }

    /// Gated, projected features plus temporal encoding and stock embedding:
    /// `[B, T, N, 17] -> [B, T, N, d]`.
    pub fn embed(&self, g: &mut Graph, v: &[Var], x: Var, variant: &Variant) -> Result<Var> {
        let sh = g.shape(x).to_vec();
        if sh.len() != 4 || sh[3] != N_FEATURES {
            return Err(Error::Input(format!("features must be [B, T, N, {N_FEATURES}], got {sh:?}")));
        }
        let (t, d) = (sh[1], self.cfg.d_model);
        let idx = &self.idx;
        let x = if variant.gating {
            gate_features(g, x, v[idx.gate_w], v[idx.gate_b])?
        } else {
            x
        };
        let hx = g.matmul(x, v[idx.in_w])?;
        let mut h = g.add(hx, v[idx.in_b])?;
        if variant.temporal_encoding {
            let mut te = Vec::with_capacity(t * d);
            for p in 0..t {
                te.extend(temporal_encoding(p, d)?);
            }
            let te = g.constant(Tensor::new(&[t, 1, d], te)?);
            h = g.add(h, te)?;
        }
        let emb = g.matmul(v[idx.stock_emb], v[idx.stock_proj])?;
        Ok(g.add(h, emb)?)
    }

    /// Forward pass. `v` holds the registered parameters in order.
    pub fn forward(&self, g: &mut Graph, v: &[Var], inp: &Inputs, variant: &Variant) -> Result<Outputs> {
        let c = &self.cfg;
        let xs = inp.x.shape();
        if xs.len() != 4 || xs[3] != N_FEATURES {
            return Err(Error::Input(format!("features must be [B, T, N, {N_FEATURES}], got {xs:?}")));
        }
        let (b, t, n, d) = (xs[0], xs[1], xs[2], c.d_model);
        if n != c.n_stocks {
            return Err(Error::Input(format!("model has {} stocks, input has {n}", c.n_stocks)));
        }
        let idx = &self.idx;

        let mut xt = inp.x.clone();
        if variant.price_only {
            for row in xt.data_mut().chunks_mut(N_FEATURES) {
                row[N_RAW..].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = g.constant(xt);
        let mut h = self.embed(g, v, x, variant)?;
        if variant.graph {
            check_symmetric(g.value(v[idx.e0]).data(), n)?;
        }

        let use_sent = variant.sentiment;
        let key_scale = if use_sent {
            let s = g.constant(inp.s1.reshape(&[b * n, t, 1])?);
            let one = g.constant(Tensor::full(&[b * n, t, 1], 1.0));
            let ks = scale_keys(g, one, s, v[idx.beta])?;
            Some(ks)
        } else {
            None
        };
        let mask = g.constant(causal_mask(t));
        let mut edges = Vec::with_capacity(c.layers);
        let mut attention = Vec::with_capacity(c.layers);
        let mut e = if variant.graph { Some(v[idx.e0]) } else { None };
        let p = c.dropout;
        for (li, lp) in idx.layers.iter().enumerate() {
            // Temporal stage: [B, T, N, d] -> [B*N, T, d].
            let xt = g.permute(h, &[0, 2, 1, 3])?;
            let xt = g.reshape(xt, &[b * n, t, d])?;
            let (at, wt) = self.attention(g, v, xt, &lp.temporal, Some((mask, 1)), key_scale)?;
            let at = g.reshape(at, &[b, n, t, d])?;
            let at = g.permute(at, &[0, 2, 1, 3])?;
            // Cross-sectional stage: [B*T, N, d].
            let (attn, wc) = if variant.cross_stage {
                let xc = g.reshape(at, &[b * t, n, d])?;
                let bias = match e {
                    Some(ev) if g.shape(ev).len() == 3 => {
                        let r = g.reshape(ev, &[b, 1, n, n])?;
                        Some((r, b))
                    }
                    Some(ev) => Some((ev, 1)),
                    None => None,
                };
                let (ac, wc) = self.attention(g, v, xc, &lp.cross, bias, None)?;
                (g.reshape(ac, &[b, t, n, d])?, wc)
            } else {
                (at, wt)
            };
            attention.push((wt, wc));
            edges.push(match e {
                Some(ev) => ev,
                None => g.constant(Tensor::zeros(&[n, n])),
            });
            let attn = g.dropout(attn, p);
            let r = g.add(h, attn)?;
            let x1 = g.layer_norm(r, v[lp.ln1_g], v[lp.ln1_b], LN_EPS)?;
            let f = g.matmul(x1, v[lp.w1])?;
            let f = g.add(f, v[lp.b1])?;
            let f = g.relu(f);
            let f = g.matmul(f, v[lp.w2])?;
            let f = g.add(f, v[lp.b2])?;
            let f = g.dropout(f, p);
            let r = g.add(x1, f)?;
            h = g.layer_norm(r, v[lp.ln2_g], v[lp.ln2_b], LN_EPS)?;
            if e.is_some() && li + 1 < c.layers {
                let hm = g.mean_axis(h, 1)?;
                e = Some(refine_edges(g, hm, v[lp.edge_w], v[lp.edge_b])?);
            }
        }

        let last = g.slice(h, 1, t - 1, t)?;
        let last = g.reshape(last, &[b, n, d])?;
        let yp = g.matmul(last, v[idx.price_w])?;
        let y_node = g.add(yp, v[idx.price_b])?;
        let dl = g.matmul(last, v[idx.dir_w])?;
        let dl = g.add(dl, v[idx.dir_b])?;
        let p_up = g.sigmoid(dl);

        let (pred, y_sent, alpha) = if use_sent {
            let si = g.constant(inp.sent_in.clone());
            let ys = sentiment_branch(g, si, v[idx.sent_w1], v[idx.sent_b1], v[idx.sent_w2], v[idx.sent_b2])?;
            if variant.sentiment_only {
                (ys, Some(ys), None)
            } else {
                let fi = g.constant(inp.fusion_in.clone());
                let a = g.matmul(fi, v[idx.fuse_w])?;
                let a = g.add(a, v[idx.fuse_b])?;
                let a = g.sigmoid(a);
                let a = g.reshape(a, &[b, 1, 1])?;
                let diff = g.sub(y_node, ys)?;
                let mix = g.mul(a, diff)?;
                (g.add(ys, mix)?, Some(ys), Some(a))
            }
        } else {
            (y_node, None, None)
        };
        Ok(Outputs {
            pred,
            p_up,
            y_node,
            y_sent,
            alpha,
            edges,
            attention,
        })
    }
}
