//! Neural layers built on [`Graph`] ops, with matching initializers.
//!
//! Layers read their parameters from a [`ParamStore`] by dot-separated
//! prefix; every `init_*` function creates exactly the names its forward
//! counterpart reads.

use super::{positional_encoding, AttentionMask, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Shape of a transformer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

pub fn init_linear(store: &mut ParamStore, seed: u64, name: &str, d_in: usize, d_out: usize) {
    store.init_xavier(seed, &format!("{name}.weight"), vec![d_in, d_out], d_in, d_out);
    store.init_const(&format!("{name}.bias"), vec![d_out], 0.0);
}

/// `y = x W + b`.
pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{name}.weight"))?;
    let b = g.param(store, &format!("{name}.bias"))?;
    let y = g.matmul(x, w, false)?;
    g.add_row(y, b)
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, d: usize) {
    store.init_const(&format!("{name}.gain"), vec![d], 1.0);
    store.init_const(&format!("{name}.bias"), vec![d], 0.0);
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let gain = g.param(store, &format!("{name}.gain"))?;
    let bias = g.param(store, &format!("{name}.bias"))?;
    g.layer_norm(x, gain, bias)
}

pub fn init_embedding(store: &mut ParamStore, seed: u64, name: &str, vocab: usize, d: usize) {
    store.init_xavier(seed, name, vec![vocab, d], vocab, d);
}

/// Token embeddings scaled by `sqrt(d)` plus sinusoidal positions.
pub fn embed(g: &mut Graph, store: &ParamStore, name: &str, tokens: &[usize]) -> Result<Var> {
    let table = g.param(store, name)?;
    let d = g.value(table).cols();
    let x = g.gather_rows(table, tokens)?;
    let x = g.affine(x, (d as f64).sqrt(), 0.0);
    add_positions(g, x)
}

pub fn add_positions(g: &mut Graph, x: Var) -> Result<Var> {
    let (t, d) = (g.value(x).rows(), g.value(x).cols());
    let pe = g.constant(positional_encoding(t, d));
    g.add(x, pe)
}

pub fn init_attention(store: &mut ParamStore, seed: u64, name: &str, d: usize) {
    for p in ["wq", "wk", "wv", "wo"] {
        init_linear(store, seed, &format!("{name}.{p}"), d, d);
    }
}

/// Multi-head attention; returns the output and the raw attention node
/// (see [`Graph::attention_map`]).
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    query: Var,
    memory: Var,
    heads: usize,
    mask: &AttentionMask,
) -> Result<(Var, Var)> {
    let q = linear(g, store, &format!("{name}.wq"), query)?;
    let k = linear(g, store, &format!("{name}.wk"), memory)?;
    let v = linear(g, store, &format!("{name}.wv"), memory)?;
    let attn = g.attention(q, k, v, heads, mask)?;
    let out = linear(g, store, &format!("{name}.wo"), attn)?;
    Ok((out, attn))
}

pub fn init_feed_forward(store: &mut ParamStore, seed: u64, name: &str, d: usize, ffn: usize) {
    init_linear(store, seed, &format!("{name}.fc1"), d, ffn);
    init_linear(store, seed, &format!("{name}.fc2"), ffn, d);
}

pub fn feed_forward(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let h = linear(g, store, &format!("{name}.fc1"), x)?;
    let h = g.relu(h);
    linear(g, store, &format!("{name}.fc2"), h)
}

pub fn init_encoder(store: &mut ParamStore, seed: u64, prefix: &str, cfg: &StackConfig) {
    for l in 0..cfg.layers {
        let p = format!("{prefix}.layers.{l}");
        init_layer_norm(store, &format!("{p}.norm1"), cfg.d_model);
        init_attention(store, seed, &format!("{p}.attn"), cfg.d_model);
        init_layer_norm(store, &format!("{p}.norm2"), cfg.d_model);
        init_feed_forward(store, seed, &format!("{p}.ffn"), cfg.d_model, cfg.ffn_dim);
    }
}

/// Pre-norm transformer encoder stack. Padded positions (`valid[t] ==
/// false`) are never attended to and are zero in the output.
pub fn transformer_encoder_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    valid: &[bool],
    cfg: &StackConfig,
) -> Result<Var> {
    cfg.validate()?;
    if g.value(x).rows() != valid.len() {
        return Err(Error::dim("transformer_encoder_forward", g.shape(x), &[valid.len()]));
    }
    let mask = AttentionMask::keys(valid);
    let mut h = g.row_mask(x, valid)?;
    for l in 0..cfg.layers {
        let p = format!("{prefix}.layers.{l}");
        let n1 = layer_norm(g, store, &format!("{p}.norm1"), h)?;
        let (a, _) = multi_head_attention(g, store, &format!("{p}.attn"), n1, n1, cfg.heads, &mask)?;
        h = g.add(h, a)?;
        let n2 = layer_norm(g, store, &format!("{p}.norm2"), h)?;
        let f = feed_forward(g, store, &format!("{p}.ffn"), n2)?;
        h = g.add(h, f)?;
        h = g.row_mask(h, valid)?;
    }
    Ok(h)
}

pub fn init_decoder(store: &mut ParamStore, seed: u64, prefix: &str, cfg: &StackConfig, vocab: usize) {
    init_embedding(store, seed, &format!("{prefix}.embed"), vocab, cfg.d_model);
    for l in 0..cfg.layers {
        let p = format!("{prefix}.layers.{l}");
        init_layer_norm(store, &format!("{p}.norm1"), cfg.d_model);
        init_attention(store, seed, &format!("{p}.self_attn"), cfg.d_model);
        init_layer_norm(store, &format!("{p}.norm2"), cfg.d_model);
        init_attention(store, seed, &format!("{p}.cross_attn"), cfg.d_model);
        init_layer_norm(store, &format!("{p}.norm3"), cfg.d_model);
        init_feed_forward(store, seed, &format!("{p}.ffn"), cfg.d_model, cfg.ffn_dim);
    }
    init_layer_norm(store, &format!("{prefix}.final_norm"), cfg.d_model);
    init_linear(store, seed, &format!("{prefix}.out"), cfg.d_model, vocab);
}

pub struct DecoderOutput {
    /// `[T_y × |V_tgt|]` next-token logits.
    pub logits: Var,
    /// One attention node per layer; read with [`Graph::attention_map`].
    pub cross_attention: Vec<Var>,
}

/// Pre-norm transformer decoder with causal self-attention and
/// cross-attention over `memory`.
pub fn transformer_decoder_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    prefix_tokens: &[usize],
    memory: Var,
    memory_valid: &[bool],
    cfg: &StackConfig,
) -> Result<DecoderOutput> {
    cfg.validate()?;
    if prefix_tokens.is_empty() {
        return Err(Error::InvalidInput("decoder prefix is empty".into()));
    }
    if g.value(memory).rows() != memory_valid.len() {
        return Err(Error::dim("transformer_decoder_forward", g.shape(memory), &[memory_valid.len()]));
    }
    let self_mask = AttentionMask::causal();
    let cross_mask = AttentionMask::keys(memory_valid);
    let mut h = embed(g, store, &format!("{prefix}.embed"), prefix_tokens)?;
    let mut cross_attention = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let p = format!("{prefix}.layers.{l}");
        let n1 = layer_norm(g, store, &format!("{p}.norm1"), h)?;
        let (a, _) = multi_head_attention(g, store, &format!("{p}.self_attn"), n1, n1, cfg.heads, &self_mask)?;
        h = g.add(h, a)?;
        let n2 = layer_norm(g, store, &format!("{p}.norm2"), h)?;
        let (c, attn) =
            multi_head_attention(g, store, &format!("{p}.cross_attn"), n2, memory, cfg.heads, &cross_mask)?;
        cross_attention.push(attn);
        h = g.add(h, c)?;
        let n3 = layer_norm(g, store, &format!("{p}.norm3"), h)?;
        let f = feed_forward(g, store, &format!("{p}.ffn"), n3)?;
        h = g.add(h, f)?;
    }
    let h = layer_norm(g, store, &format!("{prefix}.final_norm"), h)?;
    let logits = linear(g, store, &format!("{prefix}.out"), h)?;
    Ok(DecoderOutput {
        logits,
        cross_attention,
    })
}

/// Output length of the convolutional front-end.
pub fn subsampled_len(frames: usize, factor: usize) -> usize {
    match factor {
        4 => frames.div_ceil(2).div_ceil(2),
        _ => frames.div_ceil(2),
    }
}

fn check_factor(factor: usize) -> Result<()> {
    if factor == 2 || factor == 4 {
        Ok(())
    } else {
        Err(Error::Config(format!("subsample factor must be 2 or 4, got {factor}")))
    }
}

pub fn init_conv_subsample(
    store: &mut ParamStore,
    seed: u64,
    prefix: &str,
    d_feat: usize,
    d_model: usize,
) {
    init_linear(store, seed, &format!("{prefix}.conv1"), 3 * d_feat, d_model);
    init_linear(store, seed, &format!("{prefix}.conv2"), 3 * d_model, d_model);
}

/// Two kernel-3 convolutions with a ReLU between. The first has stride 2;
/// the second has stride 2 for factor 4 and stride 1 for factor 2.
/// Returns the subsampled states and their validity mask.
pub fn conv_subsample(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    valid: &[bool],
    factor: usize,
) -> Result<(Var, Vec<bool>)> {
    check_factor(factor)?;
    let t = g.value(x).rows();
    if t == 0 {
        return Err(Error::InvalidInput("cannot subsample an empty frame sequence".into()));
    }
    if valid.len() != t {
        return Err(Error::dim("conv_subsample", g.shape(x), &[valid.len()]));
    }
    let valid_len = valid.iter().filter(|&&v| v).count();
    let x = g.row_mask(x, valid)?;

    let u = g.unfold(x, 3, 2, 1)?;
    let h = linear(g, store, &format!("{prefix}.conv1"), u)?;
    let h = g.relu(h);
    let mid_valid = prefix_mask(g.value(h).rows(), valid_len.div_ceil(2));
    let h = g.row_mask(h, &mid_valid)?;

    let stride = if factor == 4 { 2 } else { 1 };
    let u = g.unfold(h, 3, stride, 1)?;
    let y = linear(g, store, &format!("{prefix}.conv2"), u)?;
    let out_valid = prefix_mask(g.value(y).rows(), subsampled_len(valid_len, factor));
    let y = g.row_mask(y, &out_valid)?;
    Ok((y, out_valid))
}

/// Mask with the first `valid` of `len` positions set.
pub fn prefix_mask(len: usize, valid: usize) -> Vec<bool> {
    (0..len).map(|i| i < valid).collect()
}

/// Convenience: plain tensor from a graph node.
pub fn detach(g: &Graph, v: Var) -> Tensor {
    g.value(v).clone()
}
