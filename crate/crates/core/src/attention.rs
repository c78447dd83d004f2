//! Multi-head attention plus the encoder and decoder layers built from it.
//!
//! All functions record onto a [`Graph`] and read weights from a
//! [`ParamStore`] through the `ParamId` handles held by the parameter structs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MrtError, Result};
use crate::numerics::{xavier_uniform, Graph, ParamId, ParamStore, Tensor, Var};

/// Affine map `x · W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            xavier_uniform(in_dim, out_dim, rng),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_dim]))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([dim]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros([dim]))?,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Per-head query/key/value projections and the shared output projection.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub heads: usize,
    pub d_k: usize,
    pub d_model: usize,
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
}

impl AttentionParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(MrtError::config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let d_k = d_model / heads;
        let mut proj = |kind: &str, rng: &mut _| -> Result<Vec<ParamId>> {
            (0..heads)
                .map(|i| {
                    store.add(
                        format!("{name}.W{kind}.head{i}"),
                        xavier_uniform(d_model, d_k, rng),
                    )
                })
                .collect()
        };
        let wq = proj("q", rng)?;
        let wk = proj("k", rng)?;
        let wv = proj("v", rng)?;
        let wo = store.add(
            format!("{name}.Wo"),
            xavier_uniform(heads * d_k, d_model, rng),
        )?;
        Ok(AttentionParams {
            heads,
            d_k,
            d_model,
            wq,
            wk,
            wv,
            wo,
        })
    }
}

/// Self- or cross-attention block with a two-layer ReLU feed-forward,
/// each followed by residual addition and layer normalization.
#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm1: LayerNormParams,
    pub norm2: LayerNormParams,
}

impl EncoderLayerParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        d_ff: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(EncoderLayerParams {
            attn: AttentionParams::init(store, &format!("{name}.attn"), d_model, heads, rng)?,
            ff1: Linear::init(store, &format!("{name}.ff1"), d_model, d_ff, rng)?,
            ff2: Linear::init(store, &format!("{name}.ff2"), d_ff, d_model, rng)?,
            norm1: LayerNormParams::init(store, &format!("{name}.norm1"), d_model)?,
            norm2: LayerNormParams::init(store, &format!("{name}.norm2"), d_model)?,
        })
    }
}

/// Decoder layers share the encoder layer's parameter shapes; only the
/// attention inputs differ.
pub type DecoderLayerParams = EncoderLayerParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenSource {
    Local,
    Global,
}

/// Identity of one key/value token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLabel {
    pub source: TokenSource,
    pub person: usize,
    pub time: usize,
}

/// Post-softmax attention weights, one `m × s` matrix per head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub heads: Vec<Tensor>,
    /// Labels for the `s` key tokens; empty when the caller has none.
    pub labels: Vec<TokenLabel>,
}

impl AttentionRecord {
    pub fn key_count(&self) -> usize {
        self.heads.first().map_or(0, Tensor::cols)
    }

    /// Stacks the first query row of every head into a `h × s` matrix.
    pub fn head_matrix(&self) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = self.heads.iter().map(|h| h.row(0).to_vec()).collect();
        Tensor::from_rows(&rows)
    }
}

fn concat_params<'a>(g: &mut Graph<'a>, store: &'a ParamStore, ids: &[ParamId]) -> Result<Var> {
    let parts: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    g.concat_cols(&parts)
}

/// `[head_1; …; head_h] W^O` with `head_i = softmax(Q_i K_iᵀ / √d_k) V_i`.
///
/// No masking is applied. The returned record holds each head's weights.
pub fn multi_head_attention<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    params: &AttentionParams,
    query_tokens: Var,
    key_value_tokens: Var,
) -> Result<(Var, AttentionRecord)> {
    let d = params.d_model;
    for v in [query_tokens, key_value_tokens] {
        if g.shape(v).len() != 2 || g.shape(v)[1] != d {
            return Err(MrtError::dim("multi_head_attention", g.shape(v), &[d]));
        }
    }
    // Per-head projections are evaluated as one product against the
    // column-stacked head matrices, then sliced back apart.
    let wq = concat_params(g, store, &params.wq)?;
    let wk = concat_params(g, store, &params.wk)?;
    let wv = concat_params(g, store, &params.wv)?;
    let q_all = g.matmul(query_tokens, wq)?;
    let k_all = g.matmul(key_value_tokens, wk)?;
    let v_all = g.matmul(key_value_tokens, wv)?;
    let scale = 1.0 / (params.d_k as f64).sqrt();

    let mut head_outputs = Vec::with_capacity(params.heads);
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let start = h * params.d_k;
        let q = g.slice_cols(q_all, start, params.d_k)?;
        let k = g.slice_cols(k_all, start, params.d_k)?;
        let v = g.slice_cols(v_all, start, params.d_k)?;
        let kt = g.transpose(k)?;
        let logits = g.matmul(q, kt)?;
        let logits = g.scale(logits, scale);
        let attn = g.softmax_rows(logits);
        weights.push(g.value(attn).clone());
        head_outputs.push(g.matmul(attn, v)?);
    }
    let concat = if head_outputs.len() == 1 {
        head_outputs[0]
    } else {
        g.concat_cols(&head_outputs)?
    };
    let wo = g.param(store, params.wo);
    let out = g.matmul(concat, wo)?;
    Ok((
        out,
        AttentionRecord {
            heads: weights,
            labels: Vec::new(),
        },
    ))
}

fn feed_forward_block<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    params: &EncoderLayerParams,
    x: Var,
) -> Result<Var> {
    let hidden = params.ff1.forward(g, store, x)?;
    let hidden = g.relu(hidden);
    let ff = params.ff2.forward(g, store, hidden)?;
    let res = g.add(x, ff)?;
    params.norm2.forward(g, store, res)
}

/// Post-norm self-attention encoder layer; output shape equals input shape.
pub fn encoder_layer<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    params: &EncoderLayerParams,
    tokens: Var,
) -> Result<Var> {
    let (attn, _) = multi_head_attention(g, store, &params.attn, tokens, tokens)?;
    let res = g.add(tokens, attn)?;
    let x = params.norm1.forward(g, store, res)?;
    feed_forward_block(g, store, params, x)
}

/// A single decoder query token.
///
/// The decoder's query is one pose embedding, never a sequence; this type
/// can only be built from a `1 × d` node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryToken(Var);

impl QueryToken {
    pub fn new(g: &Graph<'_>, var: Var) -> Result<Self> {
        let shape = g.shape(var);
        if shape.len() != 2 || shape[0] != 1 {
            return Err(MrtError::invalid(format!(
                "decoder query must be a single token, got shape {shape:?}"
            )));
        }
        Ok(QueryToken(var))
    }

    pub fn var(self) -> Var {
        self.0
    }
}

/// Cross-attention from one query token over `memory`, followed by the
/// feed-forward block. Returns the updated query and its attention record.
pub fn decoder_layer<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    params: &DecoderLayerParams,
    query: QueryToken,
    memory: Var,
) -> Result<(QueryToken, AttentionRecord)> {
    if g.shape(memory).len() != 2 || g.shape(memory)[0] == 0 {
        return Err(MrtError::invalid(
            "decoder memory must contain at least one token",
        ));
    }
    let q = query.var();
    let (attn, record) = multi_head_attention(g, store, &params.attn, q, memory)?;
    let res = g.add(q, attn)?;
    let x = params.norm1.forward(g, store, res)?;
    let out = feed_forward_block(g, store, params, x)?;
    Ok((QueryToken(out), record))
}
