//! Segmentations and the shrinkers that pool frames within them.
//!
//! A boundary frame terminates its segment: with boundaries `b_1 < … < b_n`
//! segment `k` covers `(b_{k-1}, b_k]` (taking `b_0 = -1`), and frames after
//! the last boundary join the final segment.

use crate::ctc::{greedy_path, CtcPath, CtcPosterior};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inclusive frame range `(start, end)`.
pub type Span = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub boundary_frames: Vec<usize>,
    pub spans: Vec<Span>,
    pub source_length: usize,
    pub threshold_used: Option<f64>,
}

impl Segmentation {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn with_threshold(mut self, theta: f64) -> Self {
        self.threshold_used = Some(theta);
        self
    }
}

pub fn spans_from_boundaries(boundaries: &[usize], frames: usize) -> Result<Segmentation> {
    if frames == 0 {
        return Err(Error::InvalidInput("cannot segment zero frames".into()));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!(
            "boundary frames must be strictly increasing: {boundaries:?}"
        )));
    }
    if let Some(&last) = boundaries.last() {
        if last >= frames {
            return Err(Error::InvalidInput(format!(
                "boundary frame {last} outside sequence of {frames} frames"
            )));
        }
    }
    let mut spans = Vec::with_capacity(boundaries.len().max(1));
    let mut start = 0;
    for &b in boundaries {
        spans.push((start, b));
        start = b + 1;
    }
    if start < frames {
        match spans.last_mut() {
            Some(last) => last.1 = frames - 1,
            None => spans.push((0, frames - 1)),
        }
    }
    Ok(Segmentation {
        boundary_frames: boundaries.to_vec(),
        spans,
        source_length: frames,
        threshold_used: None,
    })
}

/// Per-frame pooling weights for `spans` over `frames` frames.
///
/// Inside each span the weights are `softmax(mu * (1 - blank_t))`, or
/// uniform when `blank` is `None`. Frames outside every span get weight 0.
pub fn pool_weights(spans: &[Span], frames: usize, blank: Option<&[f64]>, mu: f64) -> Result<Vec<f64>> {
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::Config(format!("pooling temperature must be >= 0, got {mu}")));
    }
    if let Some(b) = blank {
        if b.len() != frames {
            return Err(Error::dim("pool_weights", &[frames], &[b.len()]));
        }
    }
    let mut w = vec![0.0; frames];
    for &(a, b) in spans {
        if a > b || b >= frames {
            return Err(Error::Internal(format!("invalid span ({a}, {b}) over {frames} frames")));
        }
        match blank {
            Some(p) => {
                let scores: Vec<f64> = (a..=b).map(|t| mu * (1.0 - p[t])).collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (t, e) in (a..=b).zip(exps) {
                    w[t] = e / z;
                }
            }
            None => {
                let n = (b - a + 1) as f64;
                for v in &mut w[a..=b] {
                    *v = 1.0 / n;
                }
            }
        }
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentProvenance {
    pub span: Span,
    pub weights: Vec<f64>,
}

/// Pooled states with the frames and weights behind each row.
#[derive(Clone, Debug, PartialEq)]
pub struct ShrunkSequence {
    pub states: Tensor,
    pub provenance: Vec<SegmentProvenance>,
}

impl ShrunkSequence {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

fn pool(states: &Tensor, spans: &[Span], weights: &[f64]) -> Result<ShrunkSequence> {
    let d = states.cols();
    let mut out = vec![0.0; spans.len() * d];
    let mut provenance = Vec::with_capacity(spans.len());
    for (k, &(a, b)) in spans.iter().enumerate() {
        for (t, &w) in weights.iter().enumerate().take(b + 1).skip(a) {
            for (o, x) in out[k * d..(k + 1) * d].iter_mut().zip(states.row(t)) {
                *o += w * x;
            }
        }
        provenance.push(SegmentProvenance {
            span: (a, b),
            weights: weights[a..=b].to_vec(),
        });
    }
    Ok(ShrunkSequence {
        states: Tensor::matrix(spans.len(), d, out)?,
        provenance,
    })
}

fn check_frames(states: &Tensor, frames: usize) -> Result<()> {
    if states.shape().len() != 2 || states.rows() != frames {
        return Err(Error::dim("shrink", states.shape(), &[frames]));
    }
    Ok(())
}

/// Blank-weighted pooling within each segment.
pub fn weighted_shrink(states: &Tensor, seg: &Segmentation, blank_probs: &[f64], mu: f64) -> Result<ShrunkSequence> {
    check_frames(states, seg.source_length)?;
    let w = pool_weights(&seg.spans, seg.source_length, Some(blank_probs), mu)?;
    pool(states, &seg.spans, &w)
}

/// Unweighted mean within each segment.
pub fn mean_shrink(states: &Tensor, seg: &Segmentation) -> Result<ShrunkSequence> {
    check_frames(states, seg.source_length)?;
    let w = pool_weights(&seg.spans, seg.source_length, None, 0.0)?;
    pool(states, &seg.spans, &w)
}

/// Consecutive chunks of `rate` frames; the last may be shorter.
pub fn fixed_rate_spans(frames: usize, rate: usize) -> Result<Vec<Span>> {
    if rate == 0 {
        return Err(Error::Config("fixed shrink rate must be >= 1".into()));
    }
    Ok((0..frames)
        .step_by(rate)
        .map(|a| (a, (a + rate - 1).min(frames - 1)))
        .collect())
}

pub fn fixed_rate_shrink(states: &Tensor, rate: usize) -> Result<ShrunkSequence> {
    let spans = fixed_rate_spans(states.rows(), rate)?;
    let w = pool_weights(&spans, states.rows(), None, 0.0)?;
    pool(states, &spans, &w)
}

/// Maximal runs of one non-blank greedy label; blank runs are dropped. An
/// all-blank path yields one span over every frame.
pub fn ctc_greedy_spans(path: &CtcPath) -> Vec<Span> {
    let l = &path.labels;
    let mut spans = Vec::new();
    let mut start = 0;
    for t in 0..l.len() {
        if t + 1 == l.len() || l[t + 1] != l[t] {
            if l[t] != path.blank {
                spans.push((start, t));
            }
            start = t + 1;
        }
    }
    if spans.is_empty() && !l.is_empty() {
        spans.push((0, l.len() - 1));
    }
    spans
}

pub fn ctc_greedy_shrink(states: &Tensor, posterior: &CtcPosterior) -> Result<ShrunkSequence> {
    check_frames(states, posterior.frames())?;
    let spans = ctc_greedy_spans(&greedy_path(posterior));
    let w = pool_weights(&spans, states.rows(), None, 0.0)?;
    pool(states, &spans, &w)
}
