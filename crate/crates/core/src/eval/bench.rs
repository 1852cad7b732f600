//! Semantic-stage timing and memory of the shrinking variants.
//!
//! Every variant runs on the same parameters and the same batch; only the
//! shrinker differs. Decoding runs a fixed number of greedy steps so the
//! variants do the same decoder work apart from the memory length. Runs are
//! sequential on the calling thread and interleaved across variants, so slow
//! drift affects all of them alike.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::model::{AdaTrans, InferenceOptions, ModelConfig, ShrinkerKind};
use crate::tensor::ParamStore;

pub const BENCH_HEADER: &str = "variant,semantic_input_len,semantic_ms,total_ms,peak_bytes,semantic_speedup,total_speedup,relative_memory";
pub const BENCH_FILE: &str = "bench.csv";
pub const MIN_REPETITIONS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub variants: Vec<ShrinkerKind>,
    pub batch_size: usize,
    pub repetitions: usize,
    /// Decoder steps per utterance; `None` uses the longest reference in the
    /// batch.
    pub fixed_steps: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            variants: vec![ShrinkerKind::None, ShrinkerKind::Fixed, ShrinkerKind::CtcGreedy, ShrinkerKind::Boundary],
            batch_size: 16,
            repetitions: MIN_REPETITIONS,
            fixed_steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub variant: ShrinkerKind,
    /// Mean memory length handed to the semantic encoder.
    pub semantic_input_len: f64,
    pub semantic: Duration,
    pub total: Duration,
    pub peak_bytes: usize,
    /// Time of "none" divided by this variant's; above 1 means faster.
    pub semantic_speedup: f64,
    pub total_speedup: f64,
    /// Peak bytes relative to "none".
    pub relative_memory: f64,
    pub semantic_samples: Vec<Duration>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub results: Vec<VariantResult>,
    pub batch_size: usize,
    pub repetitions: usize,
    pub fixed_steps: usize,
}

pub fn median(samples: &[Duration]) -> Duration {
    let mut s = samples.to_vec();
    s.sort_unstable();
    match s.len() {
        0 => Duration::ZERO,
        n if n % 2 == 1 => s[n / 2],
        n => (s[n / 2 - 1] + s[n / 2]) / 2,
    }
}

/// Ensures "none" is present and first; drops duplicates.
pub fn normalize_variants(variants: &[ShrinkerKind]) -> Vec<ShrinkerKind> {
    let mut out = vec![ShrinkerKind::None];
    for &v in variants {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

struct Sample {
    acoustic: Duration,
    semantic: Duration,
    peak_bytes: usize,
    memory_len: usize,
}

fn run_batch(model: &AdaTrans, params: &ParamStore, corpus: &Corpus, batch: &[usize], opts: &InferenceOptions) -> Result<Sample> {
    let mut acoustic = Duration::ZERO;
    let mut semantic = Duration::ZERO;
    let mut peak_bytes = 0;
    let mut memory_len = 0;
    for &i in batch {
        let frames = corpus.utterances[i].frame_sequence();
        let t0 = Instant::now();
        let shrunk = model.encode_and_shrink(&frames, params, opts)?;
        let t1 = Instant::now();
        let out = model.translate(&shrunk.memory, params, opts)?;
        let t2 = Instant::now();
        acoustic += t1 - t0;
        semantic += t2 - t1;
        peak_bytes = peak_bytes.max(out.peak_bytes);
        memory_len += shrunk.memory.rows();
    }
    Ok(Sample {
        acoustic,
        semantic,
        peak_bytes,
        memory_len,
    })
}

/// Times every variant on the first `batch_size` utterances of `corpus`.
pub fn efficiency_bench(config: &ModelConfig, params: &ParamStore, corpus: &Corpus, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repetitions < MIN_REPETITIONS {
        return Err(Error::Config(format!(
            "repetitions must be at least {MIN_REPETITIONS}, got {}",
            cfg.repetitions
        )));
    }
    if cfg.batch_size == 0 || corpus.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch size {} needs at least that many utterances, corpus has {}",
            cfg.batch_size,
            corpus.len()
        )));
    }
    let batch: Vec<usize> = (0..cfg.batch_size).collect();
    let steps = cfg
        .fixed_steps
        .unwrap_or_else(|| batch.iter().map(|&i| corpus.utterances[i].translation.len()).max().unwrap_or(1));
    let variants = normalize_variants(&cfg.variants);
    let models = variants
        .iter()
        .map(|&v| {
            AdaTrans::new(ModelConfig {
                shrinker: v,
                ..config.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = InferenceOptions {
        fixed_steps: Some(steps),
        beam_size: 1,
        ..InferenceOptions::from_config(config)
    };
    // One untimed warm-up pass per variant.
    for m in &models {
        run_batch(m, params, corpus, &batch, &opts)?;
    }
    let mut samples: Vec<Vec<Sample>> = variants.iter().map(|_| Vec::new()).collect();
    for rep in 0..cfg.repetitions {
        for k in 0..models.len() {
            // Rotate the order so no variant always runs first.
            let j = (k + rep) % models.len();
            samples[j].push(run_batch(&models[j], params, corpus, &batch, &opts)?);
        }
    }
    let summarize = |s: &[Sample]| {
        let semantic: Vec<Duration> = s.iter().map(|x| x.semantic).collect();
        let total: Vec<Duration> = s.iter().map(|x| x.acoustic + x.semantic).collect();
        let peak = s.iter().map(|x| x.peak_bytes).max().unwrap_or(0);
        (median(&semantic), median(&total), peak, semantic)
    };
    let (base_sem, base_total, base_peak, _) = summarize(&samples[0]);
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    let results = variants
        .iter()
        .zip(&samples)
        .map(|(&variant, s)| {
            let (semantic, total, peak_bytes, semantic_samples) = summarize(s);
            VariantResult {
                variant,
                semantic_input_len: s[0].memory_len as f64 / batch.len() as f64,
                semantic,
                total,
                peak_bytes,
                semantic_speedup: ratio(base_sem.as_secs_f64(), semantic.as_secs_f64()),
                total_speedup: ratio(base_total.as_secs_f64(), total.as_secs_f64()),
                relative_memory: ratio(peak_bytes as f64, base_peak as f64),
                semantic_samples,
            }
        })
        .collect();
    Ok(BenchReport {
        results,
        batch_size: cfg.batch_size,
        repetitions: cfg.repetitions,
        fixed_steps: steps,
    })
}

impl BenchReport {
    pub fn get(&self, variant: ShrinkerKind) -> Option<&VariantResult> {
        self.results.iter().find(|r| r.variant == variant)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{BENCH_HEADER}")?;
        for r in &self.results {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.variant,
                r.semantic_input_len,
                r.semantic.as_secs_f64() * 1e3,
                r.total.as_secs_f64() * 1e3,
                r.peak_bytes,
                r.semantic_speedup,
                r.total_speedup,
                r.relative_memory
            )?;
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(BENCH_FILE);
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
