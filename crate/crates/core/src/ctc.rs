//! CTC head, forward–backward loss, greedy decoding and the collapse map.
//!
//! The blank label is always the last column (`id == |V|`).

use std::io::Write;

use crate::error::{Error, Result};
use crate::shrink::{spans_from_boundaries, Segmentation};
use crate::tensor::layers::{init_linear, linear};
use crate::tensor::{log_sum_exp, Graph, ParamStore, Tensor, Var};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-10;

/// Ground-truth source token ids (never containing the blank).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceTranscription {
    tokens: Vec<usize>,
}

impl SourceTranscription {
    pub fn new(tokens: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("transcription must contain at least one token".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} outside source vocabulary of size {vocab_size}"
            )));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_frames(&self) -> usize {
        min_frames(&self.tokens)
    }
}

/// Fewest frames able to carry `tokens`: one per token plus a blank between
/// each pair of equal neighbours.
pub fn min_frames(tokens: &[usize]) -> usize {
    tokens.len() + tokens.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Per-frame distribution over `V ∪ {blank}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CtcPosterior {
    probs: Tensor,
}

impl CtcPosterior {
    /// Validates that rows are distributions (within `1e-6`).
    pub fn new(probs: Tensor) -> Result<Self> {
        if probs.shape().len() != 2 || probs.cols() < 2 {
            return Err(Error::InvalidInput(format!(
                "posterior must be [T x (|V|+1)] with |V| >= 1, got {:?}",
                probs.shape()
            )));
        }
        for i in 0..probs.rows() {
            let row = probs.row(i);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidInput(format!("posterior row {i} is not a distribution")));
            }
        }
        Ok(Self { probs })
    }

    /// Posterior from a row-major probability buffer.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    pub fn blank(&self) -> usize {
        self.probs.cols() - 1
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.cols() - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    /// Writes `frame,p0,…,p{V-1},blank` rows.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "frame")?;
        for i in 0..self.vocab_size() {
            write!(w, ",p{i}")?;
        }
        writeln!(w, ",blank")?;
        for t in 0..self.frames() {
            write!(w, "{t}")?;
            for p in self.row(t) {
                write!(w, ",{p}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Frame-level label sequence over `V ∪ {blank}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CtcPath {
    pub labels: Vec<usize>,
    pub blank: usize,
}

impl CtcPath {
    pub fn new(labels: Vec<usize>, blank: usize) -> Self {
        Self { labels, blank }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn init_head(store: &mut ParamStore, seed: u64, d_model: usize, vocab_size: usize) {
    init_linear(store, seed, "ctc", d_model, vocab_size + 1);
}

/// Projects acoustic states to `|V|+1` logits and returns the log-softmax
/// node.
pub fn head_forward(g: &mut Graph, store: &ParamStore, states: Var) -> Result<Var> {
    let logits = linear(g, store, "ctc", states)?;
    g.log_softmax(logits)
}

/// Convenience: posterior of the CTC head for plain states.
pub fn ctc_head_forward(states: &Tensor, store: &ParamStore) -> Result<CtcPosterior> {
    let mut g = Graph::inference();
    let x = g.constant(states.clone());
    let lp = head_forward(&mut g, store, x)?;
    posterior_from_log_probs(g.value(lp))
}

pub fn posterior_from_log_probs(log_probs: &Tensor) -> Result<CtcPosterior> {
    let data = log_probs.data().iter().map(|v| v.exp()).collect();
    Ok(CtcPosterior {
        probs: Tensor::new(log_probs.shape().to_vec(), data)?,
    })
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-space forward–backward.
///
/// `log_probs` is `[frames × classes]` with blank in the last column.
/// Returns the negative log-likelihood and the per-frame label occupancy
/// `γ_t(k)`, whose negation is the gradient of the loss w.r.t. the log
/// probabilities.
pub fn forward_backward(log_probs: &[f64], frames: usize, classes: usize, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    if classes < 2 || log_probs.len() != frames * classes {
        return Err(Error::dim("ctc_loss", &[frames, classes], &[log_probs.len()]));
    }
    let blank = classes - 1;
    if target.is_empty() {
        return Err(Error::InvalidInput("CTC target must be non-empty".into()));
    }
    if let Some(&bad) = target.iter().find(|&&t| t >= blank) {
        return Err(Error::InvalidInput(format!("CTC target id {bad} collides with blank or exceeds vocab")));
    }
    let required = min_frames(target);
    if frames < required {
        return Err(Error::Admissibility {
            context: "ctc_loss".into(),
            frames,
            tokens: target.len(),
            required,
        });
    }

    let states = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..states)
        .map(|s| if s % 2 == 0 { blank } else { target[s / 2] })
        .collect();
    let lp = |t: usize, k: usize| log_probs[t * classes + k];
    let skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; frames * states];
    alpha[0] = lp(0, ext[0]);
    alpha[1] = lp(0, ext[1]);
    for t in 1..frames {
        for s in 0..states {
            let prev = &alpha[(t - 1) * states..t * states];
            let mut a = prev[s];
            if s >= 1 {
                a = lse2(a, prev[s - 1]);
            }
            if skip(s) {
                a = lse2(a, prev[s - 2]);
            }
            alpha[t * states + s] = if a == neg { neg } else { a + lp(t, ext[s]) };
        }
    }
    let last = (frames - 1) * states;
    let log_likelihood = lse2(alpha[last + states - 1], alpha[last + states - 2]);
    if !log_likelihood.is_finite() {
        return Err(Error::NonFinite("CTC log-likelihood".into()));
    }

    let mut beta = vec![neg; frames * states];
    beta[last + states - 1] = lp(frames - 1, ext[states - 1]);
    beta[last + states - 2] = lp(frames - 1, ext[states - 2]);
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let next = &beta[(t + 1) * states..(t + 2) * states];
            let mut b = next[s];
            if s + 1 < states {
                b = lse2(b, next[s + 1]);
            }
            if s + 2 < states && skip(s + 2) {
                b = lse2(b, next[s + 2]);
            }
            beta[t * states + s] = if b == neg { neg } else { b + lp(t, ext[s]) };
        }
    }

    let mut occupancy = vec![0.0; frames * classes];
    for t in 0..frames {
        for s in 0..states {
            let ab = alpha[t * states + s] + beta[t * states + s];
            if ab == neg {
                continue;
            }
            occupancy[t * classes + ext[s]] += (ab - lp(t, ext[s]) - log_likelihood).exp();
        }
    }
    Ok((-log_likelihood, occupancy))
}

/// Loss and its gradient with respect to the logits that produced the
/// posterior through a softmax.
#[derive(Clone, Debug)]
pub struct CtcLoss {
    pub loss: f64,
    pub grad_logits: Tensor,
}

/// CTC negative log-likelihood of a posterior, `-log Σ_{π ∈ B⁻¹(z)} Π_t p(π_t)`.
pub fn ctc_loss(posterior: &CtcPosterior, target: &SourceTranscription) -> Result<CtcLoss> {
    let (t, c) = (posterior.frames(), posterior.probs.cols());
    let lp: Vec<f64> = posterior.probs.data().iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
    let (loss, occupancy) = forward_backward(&lp, t, c, target.tokens())?;
    let grad = posterior
        .probs
        .data()
        .iter()
        .zip(&occupancy)
        .map(|(p, o)| p - o)
        .collect();
    Ok(CtcLoss {
        loss,
        grad_logits: Tensor::matrix(t, c, grad)?,
    })
}

/// The collapse map: merge consecutive repeats, then drop blanks.
pub fn collapse(path: &CtcPath) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in &path.labels {
        if Some(l) != prev && l != path.blank {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

/// Per-frame argmax. Ties go to the lowest id, so the blank (last id) only
/// wins when it is strictly largest.
pub fn greedy_path(posterior: &CtcPosterior) -> CtcPath {
    let labels = (0..posterior.frames())
        .map(|t| argmax(posterior.row(t)))
        .collect();
    CtcPath::new(labels, posterior.blank())
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Boundaries where a non-blank label changes (or the utterance ends).
pub fn ctc_greedy_boundaries(path: &CtcPath) -> Result<Segmentation> {
    let l = &path.labels;
    let boundaries: Vec<usize> = (0..l.len())
        .filter(|&t| l[t] != path.blank && (t + 1 == l.len() || l[t + 1] != l[t]))
        .collect();
    spans_from_boundaries(&boundaries, l.len())
}

/// Log-likelihood by brute force over every path; only for tiny inputs.
pub fn brute_force_loss(posterior: &CtcPosterior, target: &[usize]) -> f64 {
    let (t, c) = (posterior.frames(), posterior.probs.cols());
    let total = c.pow(t as u32);
    let mut terms = Vec::new();
    let mut labels = vec![0usize; t];
    for code in 0..total {
        let mut rest = code;
        for l in labels.iter_mut() {
            *l = rest % c;
            rest /= c;
        }
        let path = CtcPath::new(labels.clone(), c - 1);
        if collapse(&path) == target {
            terms.push(
                labels
                    .iter()
                    .enumerate()
                    .map(|(f, &k)| posterior.row(f)[k].max(PROB_FLOOR).ln())
                    .sum::<f64>(),
            );
        }
    }
    -log_sum_exp(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 0;
    const B: usize = 1;
    const BL: usize = 2;

    #[test]
    fn two_frame_example_matches_enumeration() {
        // V = {a}, blank = 1
        let p = CtcPosterior::from_rows(&[[0.6, 0.4], [0.5, 0.5]]).unwrap();
        let z = SourceTranscription::new(vec![0], 1).unwrap();
        let out = ctc_loss(&p, &z).unwrap();
        assert!((out.loss - (-(0.8f64).ln())).abs() < 1e-12);
        assert!((out.loss - 0.22314).abs() < 1e-5);
        assert!((brute_force_loss(&p, &[0]) - out.loss).abs() < 1e-12);
    }

    #[test]
    fn single_frame_single_token() {
        let p = CtcPosterior::from_rows(&[[0.3, 0.7]]).unwrap();
        let z = SourceTranscription::new(vec![0], 1).unwrap();
        assert!((ctc_loss(&p, &z).unwrap().loss + (0.3f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn too_short_is_an_admissibility_error() {
        let p = CtcPosterior::from_rows(&[[0.3, 0.2, 0.5], [0.3, 0.2, 0.5]]).unwrap();
        let z = SourceTranscription::new(vec![0, 0], 2).unwrap();
        assert!(matches!(ctc_loss(&p, &z), Err(Error::Admissibility { required: 3, .. })));
        let z = SourceTranscription::new(vec![0, 1, 0], 2).unwrap();
        assert!(matches!(ctc_loss(&p, &z), Err(Error::Admissibility { .. })));
    }

    #[test]
    fn empty_transcription_rejected() {
        assert!(SourceTranscription::new(vec![], 3).is_err());
        assert!(SourceTranscription::new(vec![3], 3).is_err());
    }

    #[test]
    fn collapse_examples() {
        let path = CtcPath::new(vec![A, A, BL, B, B, BL, B], BL);
        assert_eq!(collapse(&path), vec![A, B, B]);
        assert!(collapse(&CtcPath::new(vec![BL, BL, BL], BL)).is_empty());
        assert_eq!(collapse(&CtcPath::new(vec![A], BL)), vec![A]);
    }

    #[test]
    fn greedy_ties_prefer_lower_ids() {
        let p = CtcPosterior::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]).unwrap();
        assert_eq!(greedy_path(&p).labels, vec![A, BL, A]);
        let p = CtcPosterior::from_rows(&[[0.1, 0.45, 0.45]]).unwrap();
        assert_eq!(greedy_path(&p).labels, vec![B]);
    }

    #[test]
    fn greedy_path_reproduces_mid_segment_flip() {
        // One spoken token whose posterior drifts from a to b mid-run: the
        // argmax path flips and the CTC boundary rule splits the token.
        let p = CtcPosterior::from_rows(&[
            [0.55, 0.35, 0.10],
            [0.48, 0.42, 0.10],
            [0.40, 0.50, 0.10],
            [0.05, 0.05, 0.90],
        ])
        .unwrap();
        let path = greedy_path(&p);
        assert_eq!(path.labels, vec![A, A, B, BL]);
        assert_eq!(ctc_greedy_boundaries(&path).unwrap().boundary_frames, vec![1, 2]);
    }

    #[test]
    fn greedy_boundary_examples() {
        let seg = ctc_greedy_boundaries(&CtcPath::new(vec![A, A, BL, B, B], BL)).unwrap();
        assert_eq!(seg.boundary_frames, vec![1, 4]);
        let seg = ctc_greedy_boundaries(&CtcPath::new(vec![BL, BL, BL], BL)).unwrap();
        assert!(seg.boundary_frames.is_empty());
        assert_eq!(seg.spans, vec![(0, 2)]);
        let seg = ctc_greedy_boundaries(&CtcPath::new(vec![A, B], BL)).unwrap();
        assert_eq!(seg.boundary_frames, vec![0, 1]);
    }

    #[test]
    fn zero_head_gives_uniform_rows() {
        let mut store = ParamStore::new();
        init_head(&mut store, 0, 4, 3);
        store.get_mut("ctc.weight").unwrap().data_mut().fill(0.0);
        let states = Tensor::from_rows(&[[1.0, -2.0, 0.5, 3.0], [0.0, 0.0, 1.0, 1.0]]).unwrap();
        let post = ctc_head_forward(&states, &store).unwrap();
        for t in 0..2 {
            for &p in post.row(t) {
                assert!((p - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn posterior_csv_header() {
        let p = CtcPosterior::from_rows(&[[0.5, 0.25, 0.25]]).unwrap();
        let mut out = Vec::new();
        p.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "frame,p0,p1,blank");
        assert_eq!(text.lines().count(), 2);
    }
}
