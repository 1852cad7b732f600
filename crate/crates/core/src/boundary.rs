//! Three-label boundary predictor over `{<BK>, <BD>, <OT>}`.
//!
//! Training targets are soft labels read off the CTC posterior: a frame is
//! blank with the CTC blank mass, and a boundary with the mass of non-blank
//! labels that do not continue into the next frame. Segmentation either
//! thresholds `p(<BD>)` (inference) or keeps the `T_z` most likely boundary
//! frames (forced training).

use std::io::Write;

use crate::ctc::CtcPosterior;
use crate::error::{Error, Result};
use crate::shrink::{spans_from_boundaries, Segmentation};
use crate::tensor::layers::{init_linear, linear};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub const BLANK: usize = 0;
pub const BOUNDARY: usize = 1;
pub const OTHER: usize = 2;
pub const NUM_LABELS: usize = 3;

/// Default inference threshold on `p(<BD>)`.
pub const DEFAULT_THETA: f64 = 0.4;

/// Soft per-frame targets derived from a CTC posterior. These are plain
/// values with no gradient path back to the CTC head.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftBoundaryTargets {
    pub probs: Tensor,
}

impl SoftBoundaryTargets {
    pub fn frames(&self) -> usize {
        self.probs.rows()
    }
}

/// Predicted per-frame label distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPosterior {
    pub probs: Tensor,
}

impl BoundaryPosterior {
    pub fn new(probs: Tensor) -> Result<Self> {
        if probs.shape().len() != 2 || probs.cols() != NUM_LABELS {
            return Err(Error::InvalidInput(format!(
                "boundary posterior must be [T x 3], got {:?}",
                probs.shape()
            )));
        }
        Ok(Self { probs })
    }

    /// Posterior whose `<BD>` column is `bd` and whose remaining mass is
    /// split evenly between `<BK>` and `<OT>`.
    pub fn from_boundary_probs(bd: &[f64]) -> Result<Self> {
        let rows: Vec<[f64; 3]> = bd.iter().map(|&p| [(1.0 - p) / 2.0, p, (1.0 - p) / 2.0]).collect();
        Self::new(Tensor::from_rows(&rows)?)
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    pub fn boundary_probs(&self) -> Vec<f64> {
        self.probs.column(BOUNDARY)
    }

    pub fn blank_probs(&self) -> Vec<f64> {
        self.probs.column(BLANK)
    }
}

/// Soft targets from CTC marginals.
///
/// `BK_t = p_t(φ)`, `BD_t = Σ_{i≠φ} p_t(i)(1 − p_{t+1}(i))`, `OT_t` is the
/// remainder. On the final frame every non-blank label counts as a boundary.
pub fn soft_boundary_targets(posterior: &CtcPosterior) -> SoftBoundaryTargets {
    let frames = posterior.frames();
    let blank = posterior.blank();
    let mut data = Vec::with_capacity(frames * NUM_LABELS);
    for t in 0..frames {
        let p = posterior.row(t);
        let bk = p[blank];
        let bd: f64 = if t + 1 < frames {
            let next = posterior.row(t + 1);
            (0..blank).map(|i| p[i] * (1.0 - next[i])).sum()
        } else {
            (0..blank).map(|i| p[i]).sum()
        };
        let ot = (1.0 - bk - bd).max(0.0);
        data.extend_from_slice(&[bk, bd, ot]);
    }
    SoftBoundaryTargets {
        probs: Tensor::matrix(frames, NUM_LABELS, data).expect("shape computed above"),
    }
}

pub fn init_predictor(store: &mut ParamStore, seed: u64, d_model: usize) {
    init_linear(store, seed, "predictor", d_model, NUM_LABELS);
}

/// Logits of the predictor head, `[T × 3]`.
pub fn predictor_logits(g: &mut Graph, store: &ParamStore, states: Var) -> Result<Var> {
    linear(g, store, "predictor", states)
}

pub fn predictor_forward(states: &Tensor, store: &ParamStore) -> Result<BoundaryPosterior> {
    let mut g = Graph::inference();
    let x = g.constant(states.clone());
    let logits = predictor_logits(&mut g, store, x)?;
    let probs = g.softmax(logits)?;
    BoundaryPosterior::new(g.value(probs).clone())
}

/// `−Σ_t Σ_i p′_t(i) log p_t(i)` summed over frames.
pub fn predictor_loss(pred: &BoundaryPosterior, targets: &SoftBoundaryTargets) -> Result<f64> {
    if pred.frames() != targets.frames() {
        return Err(Error::dim("predictor_loss", pred.probs.shape(), targets.probs.shape()));
    }
    let mut loss = 0.0;
    for (p, q) in pred.probs.data().iter().zip(targets.probs.data()) {
        if *q > 0.0 {
            loss -= q * p.ln();
        }
    }
    Ok(loss)
}

/// Boundaries are the frames with `p(<BD>) > theta`.
pub fn detect_boundaries(pred: &BoundaryPosterior, theta: f64) -> Result<Segmentation> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {theta}")));
    }
    let boundaries: Vec<usize> = pred
        .boundary_probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > theta)
        .map(|(t, _)| t)
        .collect();
    Ok(spans_from_boundaries(&boundaries, pred.frames())?.with_threshold(theta))
}

/// Keeps exactly the `target_len` frames with the largest `p(<BD>)`, ties
/// broken toward earlier frames, so the segmentation has `target_len` spans.
/// The recorded threshold is the `target_len`-th largest probability.
pub fn forced_threshold(pred: &BoundaryPosterior, target_len: usize) -> Result<Segmentation> {
    let frames = pred.frames();
    if target_len == 0 || target_len > frames {
        return Err(Error::Admissibility {
            context: "forced_threshold".into(),
            frames,
            tokens: target_len,
            required: target_len.max(1),
        });
    }
    let bd = pred.boundary_probs();
    let mut order: Vec<usize> = (0..frames).collect();
    order.sort_by(|&a, &b| bd[b].total_cmp(&bd[a]).then(a.cmp(&b)));
    let theta = bd[order[target_len - 1]];
    let mut chosen = order[..target_len].to_vec();
    chosen.sort_unstable();
    Ok(spans_from_boundaries(&chosen, frames)?.with_threshold(theta))
}

/// Writes `frame,bk,bd,ot,boundary` rows for plotting.
pub fn write_boundary_csv<W: Write>(w: &mut W, pred: &BoundaryPosterior, seg: &Segmentation) -> std::io::Result<()> {
    writeln!(w, "frame,bk,bd,ot,boundary")?;
    for t in 0..pred.frames() {
        let r = pred.probs.row(t);
        let is_b = seg.boundary_frames.binary_search(&t).is_ok() as u8;
        writeln!(w, "{t},{},{},{},{is_b}", r[BLANK], r[BOUNDARY], r[OTHER])?;
    }
    Ok(())
}
