use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::metrics::{
    attention_entropy, boundary_prf, corpus_bleu, positional_accuracy, token_accuracy, AttentionEntropyReport, BoundaryPrf,
    ShrinkQualityReport,
};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::model::{AdaTrans, InferenceOptions};
use crate::parallel::Execution;
use crate::tensor::{ParamStore, Tensor};

/// Boundary matching tolerance in subsampled frames.
pub const BOUNDARY_TOLERANCE: usize = 1;

/// Files written by [`EvalReport::write`].
pub const EVAL_REPORT_FILES: [&str; 5] = [
    "summary.csv",
    "translations.csv",
    "shrink_quality.csv",
    "boundary_prf.csv",
    "attention_entropy.csv",
];

pub const SUMMARY_HEADER: &str =
    "variant,theta,bleu,token_accuracy,positional_accuracy,diff_le_0,diff_le_1,diff_le_2,mean_abs_diff,mean_shrunk_len,boundary_precision,boundary_recall,boundary_f1";

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceResult {
    pub id: String,
    /// Output ids including end-of-sequence when produced.
    pub hypothesis: Vec<usize>,
    pub reference: Vec<usize>,
    pub source_len: usize,
    pub shrunk_len: usize,
    pub transcription_len: usize,
    pub boundaries: Option<Vec<usize>>,
    pub gold_boundaries: Vec<usize>,
    pub prf: Option<BoundaryPrf>,
    pub cross_attention: Vec<Tensor>,
}

/// Corpus-level metrics of one model variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub variant: String,
    pub theta: f64,
    pub bleu: f64,
    pub token_accuracy: f64,
    pub positional_accuracy: f64,
    pub shrink: ShrinkQualityReport,
    pub mean_shrunk_len: f64,
    pub boundary: BoundaryPrf,
}

impl Summary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.theta,
            self.bleu,
            self.token_accuracy,
            self.positional_accuracy,
            self.shrink.within[0],
            self.shrink.within[1],
            self.shrink.within[2],
            self.shrink.mean_diff,
            self.mean_shrunk_len,
            self.boundary.precision,
            self.boundary.recall,
            self.boundary.f1
        )
    }
}

/// Writes a table of summaries in the shared schema.
pub fn write_summary_table<W: Write>(w: &mut W, rows: &[Summary]) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub summary: Summary,
    pub entropy: AttentionEntropyReport,
    pub utterances: Vec<UtteranceResult>,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub inference: InferenceOptions,
    /// Segment with the gold boundaries instead of predicted ones.
    pub oracle_segmentation: bool,
    pub variant: String,
    pub exec: Execution,
}

impl EvalOptions {
    pub fn new(model: &AdaTrans) -> Self {
        Self {
            inference: InferenceOptions::from_config(model.config()),
            oracle_segmentation: false,
            variant: model.config().shrinker.to_string(),
            exec: Execution::default(),
        }
    }
}

fn ids(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Runs inference over every utterance and gathers the metrics.
pub fn evaluate_corpus(model: &AdaTrans, params: &ParamStore, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("evaluation corpus is empty".into()));
    }
    let factor = model.config().subsample_factor;
    let results = opts.exec.map(&corpus.utterances, |u| -> Result<UtteranceResult> {
        let gold = u.subsampled_gold(factor);
        let mut inf_opts = opts.inference.clone();
        if opts.oracle_segmentation {
            inf_opts.boundaries = Some(gold.clone());
        }
        let inf = model.forward_infer(&u.frame_sequence(), params, &inf_opts)?;
        let seg = inf.shrunk.segmentation.as_ref();
        Ok(UtteranceResult {
            id: u.id.clone(),
            hypothesis: inf.translation.tokens.clone(),
            reference: u.translation.tokens().to_vec(),
            source_len: inf.shrunk.source_len,
            shrunk_len: inf.shrunk.memory.rows(),
            transcription_len: u.transcription.len(),
            boundaries: seg.map(|s| s.boundary_frames.clone()),
            prf: seg.map(|s| boundary_prf(s, &gold, BOUNDARY_TOLERANCE)),
            gold_boundaries: gold,
            cross_attention: inf.translation.cross_attention,
        })
    });
    let utterances = results.into_iter().collect::<Result<Vec<_>>>()?;
    summarize(&opts.variant, opts.inference.theta, utterances)
}

/// Aggregates per-utterance results.
pub fn summarize(variant: &str, theta: f64, utterances: Vec<UtteranceResult>) -> Result<EvalReport> {
    let hyps: Vec<Vec<usize>> = utterances.iter().map(|u| u.hypothesis.clone()).collect();
    let refs: Vec<Vec<usize>> = utterances.iter().map(|u| u.reference.clone()).collect();
    let strip = |v: &Vec<usize>| -> Vec<usize> {
        match v.last() {
            Some(&crate::data::EOS) => v[..v.len() - 1].to_vec(),
            _ => v.clone(),
        }
    };
    let bleu = corpus_bleu(
        &hyps.iter().map(strip).collect::<Vec<_>>(),
        &refs.iter().map(strip).collect::<Vec<_>>(),
        4,
    )?;
    let accuracy = token_accuracy(&hyps, &refs)?;
    let shrunk: Vec<usize> = utterances.iter().map(|u| u.shrunk_len).collect();
    let reference: Vec<usize> = utterances.iter().map(|u| u.transcription_len).collect();
    let shrink = ShrinkQualityReport::new(&shrunk, &reference)?;
    let prfs: Vec<BoundaryPrf> = utterances.iter().filter_map(|u| u.prf).collect();
    let maps: Vec<Vec<Tensor>> = utterances.iter().map(|u| u.cross_attention.clone()).collect();
    let entropy = attention_entropy(&maps, None)?;
    Ok(EvalReport {
        summary: Summary {
            variant: variant.to_string(),
            theta,
            bleu,
            token_accuracy: accuracy,
            positional_accuracy: positional_accuracy(&hyps, &refs)?,
            mean_shrunk_len: shrunk.iter().sum::<usize>() as f64 / shrunk.len() as f64,
            shrink,
            boundary: BoundaryPrf::pooled(&prfs),
        },
        entropy,
        utterances,
    })
}

fn write_csv(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<PathBuf> {
    let mut buf = Vec::new();
    body(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

impl EvalReport {
    /// Writes [`EVAL_REPORT_FILES`] into `dir`; returns their paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        out.push(write_csv(&dir.join(EVAL_REPORT_FILES[0]), |w| {
            write_summary_table(w, std::slice::from_ref(&self.summary))
        })?);
        out.push(write_csv(&dir.join(EVAL_REPORT_FILES[1]), |w| {
            writeln!(w, "id,hypothesis,reference")?;
            for u in &self.utterances {
                writeln!(w, "{},{},{}", u.id, ids(&u.hypothesis), ids(&u.reference))?;
            }
            Ok(())
        })?);
        out.push(write_csv(&dir.join(EVAL_REPORT_FILES[2]), |w| {
            writeln!(w, "id,source_len,shrunk_len,transcription_len,abs_diff")?;
            for u in &self.utterances {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    u.id,
                    u.source_len,
                    u.shrunk_len,
                    u.transcription_len,
                    u.shrunk_len.abs_diff(u.transcription_len)
                )?;
            }
            Ok(())
        })?);
        out.push(write_csv(&dir.join(EVAL_REPORT_FILES[3]), |w| {
            writeln!(w, "id,predicted,gold,matched,precision,recall,f1,boundaries,gold_boundaries")?;
            for u in &self.utterances {
                let p = u.prf.unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    u.id,
                    p.predicted,
                    p.gold,
                    p.matched,
                    p.precision,
                    p.recall,
                    p.f1,
                    u.boundaries.as_deref().map(ids).unwrap_or_default(),
                    ids(&u.gold_boundaries)
                )?;
            }
            Ok(())
        })?);
        out.push(write_csv(&dir.join(EVAL_REPORT_FILES[4]), |w| {
            writeln!(w, "layer,mean_entropy,tokens")?;
            for (l, e) in self.entropy.per_layer.iter().enumerate() {
                writeln!(w, "{l},{e},{}", self.entropy.tokens)?;
            }
            Ok(())
        })?);
        Ok(out)
    }
}
