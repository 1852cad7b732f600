use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::metrics::{corpus_bleu, token_accuracy, ShrinkQualityReport};
use crate::data::{Corpus, EOS};
use crate::error::{Error, Result};
use crate::model::{AdaTrans, InferenceOptions, ShrinkerKind};
use crate::parallel::Execution;
use crate::tensor::ParamStore;

pub const SWEEP_HEADER: &str = "theta,bleu,diff_le_2,mean_shrunk_len,token_accuracy";
pub const HISTOGRAM_HEADER: &str = "bucket_low,bucket_high,count,fraction";
pub const HISTOGRAM_BUCKETS: usize = 10;

/// Files written by [`SweepReport::write`]. The `.dat` files hold one
/// whitespace-separated `x y` pair per line.
pub const SWEEP_FILES: [&str; 6] = [
    "sweep.csv",
    "histogram.csv",
    "bleu_vs_theta.dat",
    "diff_le_2_vs_theta.dat",
    "shrunk_len_vs_theta.dat",
    "histogram.dat",
];

/// Parses `start:stop:step` into an inclusive grid, or a comma list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::Config(format!("grid {text:?}: {why}"));
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("expected start:stop:step")))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(bad("step must be positive and stop at least start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Rounded to suppress accumulation noise such as 0.30000000000000004.
        (0..n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("expected numbers")))
            .collect::<Result<_>>()?
    };
    validate_grid(&grid).map_err(|e| bad(&e.to_string()))?;
    Ok(grid)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    if grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Config("thresholds must lie in (0, 1)".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("thresholds must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub theta: f64,
    pub bleu: f64,
    pub diff_le_2: f64,
    pub mean_shrunk_len: f64,
    pub token_accuracy: f64,
}

/// Counts of `p(<BD>)` in buckets of width 0.1; the last bucket is closed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbabilityHistogram {
    pub counts: [usize; HISTOGRAM_BUCKETS],
}

impl ProbabilityHistogram {
    pub fn add(&mut self, p: f64) {
        let b = ((p * HISTOGRAM_BUCKETS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BUCKETS - 1);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Fraction of frames in `[0, 0.1) ∪ [0.9, 1]`.
    pub fn confident_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.counts[0] + self.counts[HISTOGRAM_BUCKETS - 1]) as f64 / total as f64
    }

    pub fn bucket_bounds(b: usize) -> (f64, f64) {
        (b as f64 / HISTOGRAM_BUCKETS as f64, (b + 1) as f64 / HISTOGRAM_BUCKETS as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub histogram: ProbabilityHistogram,
    /// Subsampled frames over the corpus; equals the histogram total.
    pub frames: usize,
}

/// Decodes the corpus once per threshold with a boundary model.
pub fn threshold_sweep(
    model: &AdaTrans,
    params: &ParamStore,
    corpus: &Corpus,
    grid: &[f64],
    exec: Execution,
) -> Result<SweepReport> {
    if model.config().shrinker != ShrinkerKind::Boundary {
        return Err(Error::Config(format!(
            "threshold sweep needs the boundary shrinker, not {}",
            model.config().shrinker
        )));
    }
    validate_grid(grid)?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("sweep corpus is empty".into()));
    }
    let posteriors = exec
        .map(&corpus.utterances, |u| model.boundary_posterior(&u.frame_sequence(), params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut histogram = ProbabilityHistogram::default();
    for p in &posteriors {
        for bd in p.boundary_probs() {
            histogram.add(bd);
        }
    }
    let frames = posteriors.iter().map(|p| p.frames()).sum();
    let refs: Vec<Vec<usize>> = corpus.utterances.iter().map(|u| u.translation.tokens().to_vec()).collect();
    let content_refs: Vec<Vec<usize>> = corpus.utterances.iter().map(|u| u.translation.content().to_vec()).collect();
    let transcription_lens: Vec<usize> = corpus.utterances.iter().map(|u| u.transcription.len()).collect();
    let mut points = Vec::with_capacity(grid.len());
    for &theta in grid {
        let opts = InferenceOptions {
            theta,
            ..InferenceOptions::from_config(model.config())
        };
        let outs = exec
            .map(&corpus.utterances, |u| {
                model
                    .forward_infer(&u.frame_sequence(), params, &opts)
                    .map(|inf| (inf.translation.tokens, inf.shrunk.memory.rows()))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let hyps: Vec<Vec<usize>> = outs.iter().map(|(t, _)| t.clone()).collect();
        let content: Vec<Vec<usize>> = hyps.iter().map(|h| h.iter().copied().filter(|&t| t != EOS).collect()).collect();
        let lens: Vec<usize> = outs.iter().map(|(_, n)| *n).collect();
        points.push(SweepPoint {
            theta,
            bleu: corpus_bleu(&content, &content_refs, 4)?,
            diff_le_2: ShrinkQualityReport::new(&lens, &transcription_lens)?.diff_le_2(),
            mean_shrunk_len: lens.iter().sum::<usize>() as f64 / lens.len() as f64,
            token_accuracy: token_accuracy(&hyps, &refs)?,
        });
    }
    Ok(SweepReport {
        points,
        histogram,
        frames,
    })
}

fn write_file(path: PathBuf, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<PathBuf> {
    let mut buf = Vec::new();
    body(&mut buf).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

impl SweepReport {
    /// Mean shrunk length never grows as the threshold rises.
    pub fn shrunk_len_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].mean_shrunk_len <= w[0].mean_shrunk_len)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let curve = |f: fn(&SweepPoint) -> f64| {
            move |w: &mut Vec<u8>| -> std::io::Result<()> {
                for p in &self.points {
                    writeln!(w, "{} {}", p.theta, f(p))?;
                }
                Ok(())
            }
        };
        let total = self.histogram.total().max(1) as f64;
        Ok(vec![
            write_file(dir.join(SWEEP_FILES[0]), |w| {
                writeln!(w, "{SWEEP_HEADER}")?;
                for p in &self.points {
                    writeln!(w, "{},{},{},{},{}", p.theta, p.bleu, p.diff_le_2, p.mean_shrunk_len, p.token_accuracy)?;
                }
                Ok(())
            })?,
            write_file(dir.join(SWEEP_FILES[1]), |w| {
                writeln!(w, "{HISTOGRAM_HEADER}")?;
                for (b, &c) in self.histogram.counts.iter().enumerate() {
                    let (lo, hi) = ProbabilityHistogram::bucket_bounds(b);
                    writeln!(w, "{lo},{hi},{c},{}", c as f64 / total)?;
                }
                Ok(())
            })?,
            write_file(dir.join(SWEEP_FILES[2]), curve(|p| p.bleu))?,
            write_file(dir.join(SWEEP_FILES[3]), curve(|p| p.diff_le_2))?,
            write_file(dir.join(SWEEP_FILES[4]), curve(|p| p.mean_shrunk_len))?,
            write_file(dir.join(SWEEP_FILES[5]), |w| {
                for (b, &c) in self.histogram.counts.iter().enumerate() {
                    let (lo, hi) = ProbabilityHistogram::bucket_bounds(b);
                    writeln!(w, "{} {}", (lo + hi) / 2.0, c as f64 / total)?;
                }
                Ok(())
            })?,
        ])
    }
}
