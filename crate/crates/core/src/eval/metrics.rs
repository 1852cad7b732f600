use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::shrink::Segmentation;
use crate::tensor::Tensor;

/// Fraction of utterances with `|shrunk - reference| <= k`.
pub fn diff_le_k(shrunk: &[usize], reference: &[usize], k: usize) -> Result<f64> {
    if shrunk.len() != reference.len() {
        return Err(Error::dim("diff_le_k", &[shrunk.len()], &[reference.len()]));
    }
    if shrunk.is_empty() {
        return Err(Error::InvalidInput("diff_le_k needs at least one utterance".into()));
    }
    let hits = shrunk.iter().zip(reference).filter(|(s, r)| s.abs_diff(**r) <= k).count();
    Ok(hits as f64 / shrunk.len() as f64)
}

/// Length agreement between shrunk sequences and transcriptions.
#[derive(Clone, Debug, PartialEq)]
pub struct ShrinkQualityReport {
    pub diffs: Vec<usize>,
    /// `within[k]` is the fraction with difference at most `k`, `k = 0, 1, 2`.
    pub within: [f64; 3],
    pub mean_diff: f64,
}

impl ShrinkQualityReport {
    pub fn new(shrunk: &[usize], reference: &[usize]) -> Result<Self> {
        let mut within = [0.0; 3];
        for (k, w) in within.iter_mut().enumerate() {
            *w = diff_le_k(shrunk, reference, k)?;
        }
        let diffs: Vec<usize> = shrunk.iter().zip(reference).map(|(s, r)| s.abs_diff(*r)).collect();
        let mean_diff = diffs.iter().sum::<usize>() as f64 / diffs.len() as f64;
        Ok(Self {
            diffs,
            within,
            mean_diff,
        })
    }

    pub fn diff_le_2(&self) -> f64 {
        self.within[2]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundaryPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl BoundaryPrf {
    fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            matched,
            predicted,
            gold,
        }
    }

    /// Micro-average: pooled counts over several utterances.
    pub fn pooled(items: &[BoundaryPrf]) -> Self {
        let sum = |f: fn(&BoundaryPrf) -> usize| items.iter().map(f).sum();
        Self::from_counts(sum(|p| p.matched), sum(|p| p.predicted), sum(|p| p.gold))
    }
}

/// Greedy one-to-one matching of boundary frames. Predictions are visited
/// in order; each takes the nearest unmatched gold boundary within
/// `tolerance` frames, preferring the earlier one on ties.
pub fn boundary_prf_frames(predicted: &[usize], gold: &[usize], tolerance: usize) -> BoundaryPrf {
    let mut used = vec![false; gold.len()];
    let mut matched = 0;
    for &p in predicted {
        let best = gold
            .iter()
            .enumerate()
            .filter(|&(j, &g)| !used[j] && p.abs_diff(g) <= tolerance)
            .min_by_key(|&(j, &g)| (p.abs_diff(g), j));
        if let Some((j, _)) = best {
            used[j] = true;
            matched += 1;
        }
    }
    BoundaryPrf::from_counts(matched, predicted.len(), gold.len())
}

pub fn boundary_prf(pred: &Segmentation, gold: &[usize], tolerance: usize) -> BoundaryPrf {
    boundary_prf_frames(&pred.boundary_frames, gold, tolerance)
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU on token ids, scaled to `[0, 100]`. Precisions of order
/// above one use add-one smoothing.
pub fn corpus_bleu(hypotheses: &[Vec<usize>], references: &[Vec<usize>], max_n: usize) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::dim("corpus_bleu", &[hypotheses.len()], &[references.len()]));
    }
    if max_n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    if references.is_empty() || references.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("BLEU needs non-empty references".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (gram, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if n == 0 {
            matches[0] as f64 / totals[0] as f64
        } else {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

/// Levenshtein distance between token sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn check_pairs(op: &'static str, hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<usize> {
    if hypotheses.len() != references.len() {
        return Err(Error::dim(op, &[hypotheses.len()], &[references.len()]));
    }
    let total: usize = references.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::InvalidInput(format!("{op} needs non-empty references")));
    }
    Ok(total)
}

/// Token accuracy in the speech-recognition sense, `1 - (S + D + I) / N`,
/// pooled over the corpus and floored at zero. `N` counts reference tokens.
pub fn token_accuracy(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    let total = check_pairs("token_accuracy", hypotheses, references)?;
    let errors: usize = hypotheses.iter().zip(references).map(|(h, r)| edit_distance(h, r)).sum();
    Ok((1.0 - errors as f64 / total as f64).max(0.0))
}

/// Fraction of reference positions whose token the hypothesis reproduces at
/// the same index.
pub fn positional_accuracy(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    let total = check_pairs("positional_accuracy", hypotheses, references)?;
    let correct: usize = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| r.iter().zip(h).filter(|(a, b)| a == b).count())
        .sum();
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionEntropyReport {
    /// Mean entropy per decoder layer over all counted target tokens.
    pub per_layer: Vec<f64>,
    pub tokens: usize,
}

/// Shannon entropy `-Σ a ln a` of one attention row.
pub fn row_entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&a| a > 0.0).map(|&a| a * a.ln()).sum::<f64>()
}

/// Averages row entropies of cross-attention maps.
///
/// `maps[u][l]` is the `[T_y × S]` map of layer `l` for utterance `u`;
/// `target_masks[u][i] == false` excludes row `i`. Every counted row must
/// sum to one within `1e-6`.
pub fn attention_entropy(maps: &[Vec<Tensor>], target_masks: Option<&[Vec<bool>]>) -> Result<AttentionEntropyReport> {
    let layers = maps.first().map_or(0, Vec::len);
    let mut sums = vec![0.0; layers];
    let mut tokens = 0;
    for (u, per_layer) in maps.iter().enumerate() {
        if per_layer.len() != layers {
            return Err(Error::dim("attention_entropy", &[layers], &[per_layer.len()]));
        }
        let rows = per_layer.first().map_or(0, Tensor::rows);
        let mask = target_masks.map(|m| &m[u]);
        let counted = |i: usize| mask.is_none_or(|m| m.get(i).copied().unwrap_or(false));
        for (l, map) in per_layer.iter().enumerate() {
            if map.rows() != rows {
                return Err(Error::dim("attention_entropy", &[rows], map.shape()));
            }
            for i in (0..rows).filter(|&i| counted(i)) {
                let row = map.row(i);
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-6 || row.iter().any(|&a| a < 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "attention row {i} of layer {l} in map {u} is not a distribution (sum {total})"
                    )));
                }
                sums[l] += row_entropy(row);
            }
        }
        tokens += (0..rows).filter(|&i| counted(i)).count();
    }
    let per_layer = sums
        .into_iter()
        .map(|s| if tokens == 0 { 0.0 } else { s / tokens as f64 })
        .collect();
    Ok(AttentionEntropyReport { per_layer, tokens })
}
