//! Autoregressive decoding over semantic encoder states.

use super::{AdaTrans, InferenceOptions, EOS};
use crate::ctc::argmax;
use crate::error::{Error, Result};
use crate::tensor::layers::transformer_decoder_forward;
use crate::tensor::{log_sum_exp, Graph, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    /// Output ids, ending with end-of-sequence unless the length cap hit.
    pub tokens: Vec<usize>,
    /// Per decoder layer, head-averaged cross-attention `[len × S]`; row `i`
    /// is the attention used to predict `tokens[i]`.
    pub cross_attention: Vec<Tensor>,
    /// Largest graph footprint in bytes over the semantic stage.
    pub peak_bytes: usize,
}

impl Translation {
    /// Tokens without the trailing end-of-sequence.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

struct Step {
    last_logits: Vec<f64>,
    cross_attention: Vec<Tensor>,
    bytes: usize,
}

fn run_decoder(model: &AdaTrans, memory: &Tensor, params: &ParamStore, prefix: &[usize]) -> Result<Step> {
    let mut g = Graph::inference();
    let mem = g.constant(memory.clone());
    let valid = vec![true; memory.rows()];
    let dec = transformer_decoder_forward(
        &mut g,
        params,
        "decoder",
        prefix,
        mem,
        &valid,
        &model.config().decoder_stack(),
    )?;
    let logits = g.value(dec.logits);
    let last_logits = logits.row(logits.rows() - 1).to_vec();
    let cross_attention = dec
        .cross_attention
        .iter()
        .map(|&a| g.attention_map(a).ok_or_else(|| Error::Internal("missing attention map".into())))
        .collect::<Result<_>>()?;
    Ok(Step {
        last_logits,
        cross_attention,
        bytes: g.value_bytes(),
    })
}

fn prefix_of(tokens: &[usize]) -> Vec<usize> {
    let mut p = Vec::with_capacity(tokens.len() + 1);
    p.push(EOS);
    p.extend_from_slice(tokens);
    p
}

pub(super) fn decode(model: &AdaTrans, memory: &Tensor, params: &ParamStore, opts: &InferenceOptions) -> Result<Translation> {
    if memory.rows() == 0 {
        return Err(Error::InvalidInput("cannot decode from an empty memory".into()));
    }
    if opts.max_len == 0 || opts.fixed_steps == Some(0) {
        return Err(Error::Config("decoding needs at least one step".into()));
    }
    if let Some(n) = opts.fixed_steps {
        greedy(model, memory, params, n, false)
    } else if opts.beam_size <= 1 {
        greedy(model, memory, params, opts.max_len, true)
    } else {
        beam(model, memory, params, opts.beam_size, opts.max_len)
    }
}

fn greedy(model: &AdaTrans, memory: &Tensor, params: &ParamStore, max_len: usize, stop_at_eos: bool) -> Result<Translation> {
    let mut tokens = Vec::new();
    let mut peak = 0;
    let mut attention = Vec::new();
    while tokens.len() < max_len {
        let step = run_decoder(model, memory, params, &prefix_of(&tokens))?;
        peak = peak.max(step.bytes);
        attention = step.cross_attention;
        let next = argmax(&step.last_logits);
        tokens.push(next);
        if stop_at_eos && next == EOS {
            break;
        }
    }
    Ok(Translation {
        tokens,
        cross_attention: attention,
        peak_bytes: peak,
    })
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    score: f64,
}

impl Hypothesis {
    fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

/// Beam search ranked by summed log-probability. Ties keep the earlier
/// candidate, which favours lower token ids.
fn beam(model: &AdaTrans, memory: &Tensor, params: &ParamStore, width: usize, max_len: usize) -> Result<Translation> {
    let mut beams = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut peak = 0;
    for _ in 0..max_len {
        if beams.iter().all(Hypothesis::finished) {
            break;
        }
        let mut candidates = Vec::new();
        for h in &beams {
            if h.finished() {
                candidates.push(h.clone());
                continue;
            }
            let step = run_decoder(model, memory, params, &prefix_of(&h.tokens))?;
            peak = peak.max(step.bytes);
            let lse = log_sum_exp(&step.last_logits);
            let mut order: Vec<usize> = (0..step.last_logits.len()).collect();
            order.sort_by(|&a, &b| step.last_logits[b].total_cmp(&step.last_logits[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(width) {
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                candidates.push(Hypothesis {
                    tokens,
                    score: h.score + step.last_logits[tok] - lse,
                });
            }
        }
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
        candidates.truncate(width);
        beams = candidates;
    }
    let best = beams
        .iter()
        .find(|h| h.finished())
        .or_else(|| beams.first())
        .cloned()
        .ok_or_else(|| Error::Internal("beam search produced no hypothesis".into()))?;
    let n = best.tokens.len();
    let step = run_decoder(model, memory, params, &prefix_of(&best.tokens[..n - 1]))?;
    peak = peak.max(step.bytes);
    Ok(Translation {
        tokens: best.tokens,
        cross_attention: step.cross_attention,
        peak_bytes: peak,
    })
}
