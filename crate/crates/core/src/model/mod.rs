//! The full translation model: acoustic encoder, CTC head, boundary
//! predictor, shrinking, semantic encoder and decoder, plus its training
//! schedule.

mod config;
mod decode;
mod optim;
mod pretrained;
mod train;

pub use config::{ModelConfig, RunConfig, ShrinkerKind, Stage, TrainConfig};
pub use decode::Translation;
pub use optim::{inverse_sqrt_lr, Adam};
pub use pretrained::{init_from_pretrained, Provenance, ProvenanceReport};
pub use train::{train_loop, StepMetrics, TrainFiles, TrainReport, Trainer, METRICS_HEADER};

pub use crate::data::{Batch, FrameSequence, TargetSequence, EOS};

use std::time::{Duration, Instant};

use crate::boundary::{self, BoundaryPosterior, SoftBoundaryTargets, BLANK};
use crate::ctc::{self, CtcPosterior, SourceTranscription};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::shrink::{self, Segmentation};
use crate::tensor::layers::{
    add_positions, conv_subsample, embed, init_conv_subsample, init_decoder, init_embedding, init_encoder,
    init_layer_norm, layer_norm, subsampled_len, transformer_decoder_forward, transformer_encoder_forward,
};
use crate::tensor::{Gradients, Graph, ParamStore, Tensor, Var};

/// One utterance as seen by the loss: the first `valid` rows of `frames`.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub id: &'a str,
    pub frames: &'a Tensor,
    pub valid: usize,
    pub transcription: &'a SourceTranscription,
    pub target: &'a TargetSequence,
}

impl<'a> Example<'a> {
    pub fn from_utterance(u: &'a Utterance) -> Self {
        Self {
            id: &u.id,
            frames: &u.frames,
            valid: u.num_frames(),
            transcription: &u.transcription,
            target: &u.translation,
        }
    }

    /// The `i`-th utterance of a batch.
    pub fn from_batch(batch: &'a Batch, i: usize) -> Self {
        Self {
            id: &batch.ids[i],
            frames: &batch.frames[i].features,
            valid: batch.frames[i].valid_len(),
            transcription: &batch.transcriptions[i],
            target: &batch.targets[i],
        }
    }
}

/// Batch-normalized losses. `l_st` is per target token; `l_ctc` and
/// `l_pred` are per source token.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub l_st: f64,
    pub l_ctc: f64,
    pub l_pred: f64,
    pub l_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceDiagnostics {
    pub id: String,
    pub input_frames: usize,
    /// Frames after subsampling.
    pub source_len: usize,
    pub transcription_len: usize,
    /// Length of the semantic encoder input, when the stage has one.
    pub shrunk_len: Option<usize>,
    pub boundary_count: Option<usize>,
}

pub struct ForwardOutput {
    pub losses: LossValues,
    /// Gradients of `l_total`, when requested.
    pub grads: Option<Gradients>,
    pub diagnostics: Vec<UtteranceDiagnostics>,
}

/// How the boundary shrinker picks its segments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SegmentationMode<'a> {
    /// Exactly this many segments.
    Forced(usize),
    /// Frames whose boundary probability exceeds the threshold.
    Threshold(f64),
    /// Fixed boundary frames on the subsampled grid.
    Given(&'a [usize]),
}

/// Inference settings; [`InferenceOptions::from_config`] gives the defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceOptions {
    pub theta: f64,
    pub beam_size: usize,
    pub max_len: usize,
    /// Replaces predicted boundaries (subsampled frames) for the boundary
    /// shrinker.
    pub boundaries: Option<Vec<usize>>,
    /// Greedy decoding runs exactly this many steps, ignoring
    /// end-of-sequence. Benchmarks use it to equalize decoding work.
    pub fixed_steps: Option<usize>,
}

impl InferenceOptions {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            theta: cfg.theta_infer,
            beam_size: cfg.beam_size,
            max_len: cfg.max_decode_len,
            boundaries: None,
            fixed_steps: None,
        }
    }
}

/// Acoustic states after shrinking: the semantic stage's input.
#[derive(Clone, Debug, PartialEq)]
pub struct ShrunkInput {
    pub memory: Tensor,
    pub source_len: usize,
    pub segmentation: Option<Segmentation>,
    pub boundary: Option<BoundaryPosterior>,
    pub graph_bytes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InferenceTiming {
    /// Acoustic encoder, boundary prediction and shrinking.
    pub acoustic: Duration,
    /// Semantic encoder and decoding.
    pub semantic: Duration,
    pub total: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub translation: Translation,
    pub shrunk: ShrunkInput,
    pub timing: InferenceTiming,
}

impl Inference {
    /// Output tokens including the final end-of-sequence when produced.
    pub fn tokens(&self) -> &[usize] {
        &self.translation.tokens
    }
}

/// Segmentation whose boundaries are the span ends.
fn segmentation_of(spans: Vec<shrink::Span>, frames: usize) -> Segmentation {
    Segmentation {
        boundary_frames: spans.iter().map(|s| s.1).collect(),
        spans,
        source_length: frames,
        threshold_used: None,
    }
}

/// Loss weights of one stage: `(st, ctc, pred)`.
fn stage_weights(cfg: &ModelConfig, stage: Stage) -> (f64, f64, f64) {
    match stage {
        Stage::AsrPretrain => (0.0, 1.0, 0.0),
        Stage::MtPretrain => (1.0, 0.0, 0.0),
        Stage::StFinetune | Stage::SingleStage => {
            let pred = if cfg.shrinker == ShrinkerKind::Boundary { cfg.beta } else { 0.0 };
            (1.0, cfg.alpha, pred)
        }
    }
}

struct Terms {
    st: Option<Var>,
    ctc: Option<Var>,
    pred: Option<Var>,
    diag: UtteranceDiagnostics,
}

/// Per-batch token counts that normalize each loss.
#[derive(Clone, Copy, Debug)]
struct Normalizers {
    st: f64,
    ctc: f64,
    pred: f64,
}

#[derive(Clone, Debug)]
pub struct AdaTrans {
    config: ModelConfig,
}

impl AdaTrans {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Fresh parameters for `stage`. Values depend only on `seed` and each
    /// parameter's name, so shared names agree across stages.
    pub fn init_params(&self, stage: Stage, seed: u64) -> ParamStore {
        let c = &self.config;
        let mut s = ParamStore::new();
        let acoustic = |s: &mut ParamStore| {
            init_conv_subsample(s, seed, "acoustic.subsample", c.feature_dim, c.d_model);
            init_encoder(s, seed, "acoustic", &c.acoustic_stack());
            init_layer_norm(s, "acoustic.final_norm", c.d_model);
        };
        let semantic = |s: &mut ParamStore| {
            init_encoder(s, seed, "semantic", &c.semantic_stack());
            init_layer_norm(s, "semantic.final_norm", c.d_model);
            init_decoder(s, seed, "decoder", &c.decoder_stack(), c.target_classes());
        };
        match stage {
            Stage::AsrPretrain => {
                acoustic(&mut s);
                ctc::init_head(&mut s, seed, c.d_model, c.src_vocab);
            }
            Stage::MtPretrain => {
                init_embedding(&mut s, seed, "mt.src_embed", c.src_vocab, c.d_model);
                semantic(&mut s);
            }
            Stage::StFinetune | Stage::SingleStage => {
                acoustic(&mut s);
                ctc::init_head(&mut s, seed, c.d_model, c.src_vocab);
                boundary::init_predictor(&mut s, seed, c.d_model);
                semantic(&mut s);
            }
        }
        s
    }

    /// Acoustic states `[T_x × d]` of the first `valid` rows of `frames`.
    fn encode_acoustic(&self, g: &mut Graph, params: &ParamStore, frames: &Tensor, valid: usize) -> Result<Var> {
        let c = &self.config;
        if valid == 0 {
            return Err(Error::InvalidInput("cannot encode a zero-length frame sequence".into()));
        }
        if frames.cols() != c.feature_dim || valid > frames.rows() {
            return Err(Error::dim("encode_acoustic", frames.shape(), &[valid, c.feature_dim]));
        }
        let x = g.constant(frames.slice_rows(0, valid));
        let (h, hv) = conv_subsample(g, params, "acoustic.subsample", x, &vec![true; valid], c.subsample_factor)?;
        let h = add_positions(g, h)?;
        let h = transformer_encoder_forward(g, params, "acoustic", h, &hv, &c.acoustic_stack())?;
        layer_norm(g, params, "acoustic.final_norm", h)
    }

    /// Semantic encoder over `x`, which already carries positions.
    fn encode_semantic(&self, g: &mut Graph, params: &ParamStore, x: Var) -> Result<Var> {
        let n = g.value(x).rows();
        let h = transformer_encoder_forward(g, params, "semantic", x, &vec![true; n], &self.config.semantic_stack())?;
        layer_norm(g, params, "semantic.final_norm", h)
    }

    /// Pools acoustic states `h` into the semantic encoder input.
    fn shrink_states(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        h: Var,
        ctc_posterior: Option<&CtcPosterior>,
        predictor_probs: Option<Var>,
        mode: SegmentationMode<'_>,
    ) -> Result<(Var, Option<Segmentation>)> {
        let c = &self.config;
        let t = g.value(h).rows();
        match c.shrinker {
            ShrinkerKind::None => Ok((h, None)),
            ShrinkerKind::Fixed => {
                let spans = shrink::fixed_rate_spans(t, c.fixed_rate)?;
                let pooled = g.segment_pool(h, None, &spans, 0.0)?;
                Ok((pooled, Some(segmentation_of(spans, t))))
            }
            ShrinkerKind::CtcGreedy => {
                let computed;
                let post = match ctc_posterior {
                    Some(p) => p,
                    None => {
                        let lp = ctc::head_forward(g, params, h)?;
                        computed = ctc::posterior_from_log_probs(g.value(lp))?;
                        &computed
                    }
                };
                let spans = shrink::ctc_greedy_spans(&ctc::greedy_path(post));
                let pooled = g.segment_pool(h, None, &spans, 0.0)?;
                Ok((pooled, Some(segmentation_of(spans, t))))
            }
            ShrinkerKind::Boundary => {
                let probs = predictor_probs.ok_or_else(|| Error::Internal("boundary shrinker needs predictor".into()))?;
                let seg = match mode {
                    SegmentationMode::Given(b) => shrink::spans_from_boundaries(b, t)?,
                    _ => {
                        let pred = BoundaryPosterior::new(g.value(probs).clone())?;
                        match mode {
                            SegmentationMode::Forced(n) => boundary::forced_threshold(&pred, n)?,
                            SegmentationMode::Threshold(theta) => boundary::detect_boundaries(&pred, theta)?,
                            SegmentationMode::Given(_) => unreachable!(),
                        }
                    }
                };
                let blank = if c.blank_weighting {
                    Some(g.slice_cols(probs, BLANK, 1)?)
                } else {
                    None
                };
                let pooled = g.segment_pool(h, blank, &seg.spans, c.mu)?;
                Ok((pooled, Some(seg)))
            }
        }
    }

    fn check_admissible(&self, ex: &Example<'_>, source_len: usize) -> Result<()> {
        let required = ex.transcription.min_frames();
        if source_len < required {
            return Err(Error::Admissibility {
                context: format!("utterance {}", ex.id),
                frames: source_len,
                tokens: ex.transcription.len(),
                required,
            });
        }
        Ok(())
    }

    /// Label-smoothed teacher-forced cross-entropy summed over target tokens.
    fn translation_loss(&self, g: &mut Graph, params: &ParamStore, memory: Var, target: &TargetSequence) -> Result<Var> {
        let c = &self.config;
        let y = target.tokens();
        let mut prefix = Vec::with_capacity(y.len());
        prefix.push(EOS);
        prefix.extend_from_slice(&y[..y.len() - 1]);
        let s = g.value(memory).rows();
        let dec = transformer_decoder_forward(g, params, "decoder", &prefix, memory, &vec![true; s], &c.decoder_stack())?;
        let classes = c.target_classes();
        let eps = c.label_smoothing;
        let mut targets = Tensor::filled(vec![y.len(), classes], eps / classes as f64);
        for (i, &tok) in y.iter().enumerate() {
            targets.row_mut(i)[tok] += 1.0 - eps;
        }
        g.soft_cross_entropy(dec.logits, &targets)
    }

    fn terms(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        stage: Stage,
        ex: &Example<'_>,
        frozen: Option<&SoftBoundaryTargets>,
    ) -> Result<Terms> {
        let c = &self.config;
        let mut diag = UtteranceDiagnostics {
            id: ex.id.to_string(),
            input_frames: ex.valid,
            source_len: subsampled_len(ex.valid, c.subsample_factor),
            transcription_len: ex.transcription.len(),
            shrunk_len: None,
            boundary_count: None,
        };
        match stage {
            Stage::MtPretrain => {
                let x = embed(g, params, "mt.src_embed", ex.transcription.tokens())?;
                diag.shrunk_len = Some(ex.transcription.len());
                let sem = self.encode_semantic(g, params, x)?;
                let st = self.translation_loss(g, params, sem, ex.target)?;
                Ok(Terms {
                    st: Some(st),
                    ctc: None,
                    pred: None,
                    diag,
                })
            }
            Stage::AsrPretrain => {
                let h = self.encode_acoustic(g, params, ex.frames, ex.valid)?;
                self.check_admissible(ex, g.value(h).rows())?;
                let lp = ctc::head_forward(g, params, h)?;
                let ctc_loss = g.ctc_loss(lp, ex.transcription.tokens())?;
                Ok(Terms {
                    st: None,
                    ctc: Some(ctc_loss),
                    pred: None,
                    diag,
                })
            }
            Stage::StFinetune | Stage::SingleStage => {
                let h = self.encode_acoustic(g, params, ex.frames, ex.valid)?;
                let t = g.value(h).rows();
                self.check_admissible(ex, t)?;
                let lp = ctc::head_forward(g, params, h)?;
                let ctc_loss = g.ctc_loss(lp, ex.transcription.tokens())?;
                let posterior = ctc::posterior_from_log_probs(g.value(lp))?;

                let (pred_loss, probs) = if c.shrinker == ShrinkerKind::Boundary {
                    let computed;
                    let targets = match frozen {
                        Some(t) => t,
                        None => {
                            computed = boundary::soft_boundary_targets(&posterior);
                            &computed
                        }
                    };
                    let logits = boundary::predictor_logits(g, params, h)?;
                    let loss = g.soft_cross_entropy(logits, &targets.probs)?;
                    (Some(loss), Some(g.softmax(logits)?))
                } else {
                    (None, None)
                };
                let mode = if c.forced_training {
                    SegmentationMode::Forced(ex.transcription.len())
                } else {
                    SegmentationMode::Threshold(c.theta_infer)
                };
                let (pooled, seg) = self.shrink_states(g, params, h, Some(&posterior), probs, mode)?;
                diag.shrunk_len = Some(g.value(pooled).rows());
                diag.boundary_count = seg.map(|s| s.boundary_frames.len());
                let x = add_positions(g, pooled)?;
                let sem = self.encode_semantic(g, params, x)?;
                let st = self.translation_loss(g, params, sem, ex.target)?;
                Ok(Terms {
                    st: Some(st),
                    ctc: Some(ctc_loss),
                    pred: pred_loss,
                    diag,
                })
            }
        }
    }

    /// Both acoustic-side losses are sums over frames and share the
    /// transcription-token normalizer, so their gradients have one scale.
    fn normalizers(&self, examples: &[Example<'_>]) -> Normalizers {
        let st: usize = examples.iter().map(|e| e.target.len()).sum();
        let ctc: usize = examples.iter().map(|e| e.transcription.len()).sum();
        Normalizers {
            st: st.max(1) as f64,
            ctc: ctc.max(1) as f64,
            pred: ctc.max(1) as f64,
        }
    }

    /// The weighted, normalized objective of one utterance as a graph node.
    fn scaled_objective(&self, g: &mut Graph, stage: Stage, terms: &Terms, norm: Normalizers) -> Result<Var> {
        let (w_st, w_ctc, w_pred) = stage_weights(&self.config, stage);
        let mut parts = Vec::with_capacity(3);
        if let Some(v) = terms.st {
            parts.push((v, w_st / norm.st));
        }
        if let Some(v) = terms.ctc {
            parts.push((v, w_ctc / norm.ctc));
        }
        if let Some(v) = terms.pred {
            parts.push((v, w_pred / norm.pred));
        }
        g.lin_comb(&parts)
    }

    /// The batch objective built in one graph; used for gradient checks.
    pub fn objective(&self, g: &mut Graph, params: &ParamStore, stage: Stage, examples: &[Example<'_>]) -> Result<Var> {
        self.objective_with_targets(g, params, stage, examples, None)
    }

    /// Soft boundary targets of each example under `params`.
    pub fn boundary_targets(&self, params: &ParamStore, examples: &[Example<'_>]) -> Result<Vec<SoftBoundaryTargets>> {
        examples
            .iter()
            .map(|ex| {
                let mut g = Graph::inference();
                let h = self.encode_acoustic(&mut g, params, ex.frames, ex.valid)?;
                let lp = ctc::head_forward(&mut g, params, h)?;
                Ok(boundary::soft_boundary_targets(&ctc::posterior_from_log_probs(g.value(lp))?))
            })
            .collect()
    }

    /// [`AdaTrans::objective`] with the predictor targets held fixed.
    ///
    /// Training stops gradients at the targets, so finite differences of
    /// the plain objective also see the targets move. Freezing them at the
    /// point of evaluation gives the function whose gradient training uses.
    pub fn objective_with_targets(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        stage: Stage,
        examples: &[Example<'_>],
        frozen: Option<&[SoftBoundaryTargets]>,
    ) -> Result<Var> {
        if let Some(t) = frozen {
            if t.len() != examples.len() {
                return Err(Error::dim("objective_with_targets", &[examples.len()], &[t.len()]));
            }
        }
        let norm = self.normalizers(examples);
        let mut per_utt = Vec::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            let terms = self.terms(g, params, stage, ex, frozen.map(|t| &t[i]))?;
            per_utt.push((self.scaled_objective(g, stage, &terms, norm)?, 1.0));
        }
        g.lin_comb(&per_utt)
    }

    /// Losses (and optionally gradients) of `examples`, one graph per
    /// utterance. Per-utterance results are reduced in input order.
    pub fn forward_examples(
        &self,
        params: &ParamStore,
        stage: Stage,
        examples: &[Example<'_>],
        with_grads: bool,
        exec: Execution,
    ) -> Result<ForwardOutput> {
        if examples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let norm = self.normalizers(examples);
        let results = exec.map(examples, |ex| -> Result<_> {
            let mut g = if with_grads { Graph::new() } else { Graph::inference() };
            let terms = self.terms(&mut g, params, stage, ex, None)?;
            let read = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
            let raw = (read(terms.st), read(terms.ctc), read(terms.pred));
            let grads = if with_grads {
                let obj = self.scaled_objective(&mut g, stage, &terms, norm)?;
                Some(g.backward(obj)?)
            } else {
                None
            };
            Ok((raw, grads, terms.diag))
        });
        let mut sums = (0.0, 0.0, 0.0);
        let mut grads = with_grads.then(Gradients::new);
        let mut diagnostics = Vec::with_capacity(examples.len());
        for r in results {
            let ((st, ctc_l, pred), gr, diag) = r?;
            sums.0 += st;
            sums.1 += ctc_l;
            sums.2 += pred;
            if let (Some(total), Some(gr)) = (grads.as_mut(), gr) {
                total.merge(&gr);
            }
            diagnostics.push(diag);
        }
        let (w_st, w_ctc, w_pred) = stage_weights(&self.config, stage);
        let l_st = sums.0 / norm.st;
        let l_ctc = sums.1 / norm.ctc;
        let l_pred = sums.2 / norm.pred;
        let l_total = w_st * l_st + w_ctc * l_ctc + w_pred * l_pred;
        if !l_total.is_finite() {
            return Err(Error::NonFinite(format!("{stage} loss")));
        }
        Ok(ForwardOutput {
            losses: LossValues {
                l_st,
                l_ctc,
                l_pred,
                l_total,
            },
            grads,
            diagnostics,
        })
    }

    /// Training-mode forward pass over a batch with gradients.
    pub fn forward_train(&self, batch: &Batch, params: &ParamStore, stage: Stage, exec: Execution) -> Result<ForwardOutput> {
        let examples: Vec<Example<'_>> = (0..batch.len()).map(|i| Example::from_batch(batch, i)).collect();
        self.forward_examples(params, stage, &examples, true, exec)
    }

    /// Acoustic encoding and shrinking for inference. The CTC head is read
    /// only by the `ctc_greedy` shrinker.
    pub fn encode_and_shrink(&self, frames: &FrameSequence, params: &ParamStore, opts: &InferenceOptions) -> Result<ShrunkInput> {
        let mut g = Graph::inference();
        let h = self.encode_acoustic(&mut g, params, &frames.features, frames.valid_len())?;
        let source_len = g.value(h).rows();
        let probs = if self.config.shrinker == ShrinkerKind::Boundary {
            let logits = boundary::predictor_logits(&mut g, params, h)?;
            Some(g.softmax(logits)?)
        } else {
            None
        };
        let mode = match &opts.boundaries {
            Some(b) => SegmentationMode::Given(b),
            None => SegmentationMode::Threshold(opts.theta),
        };
        let (pooled, segmentation) = self.shrink_states(&mut g, params, h, None, probs, mode)?;
        let boundary = match probs {
            Some(p) => Some(BoundaryPosterior::new(g.value(p).clone())?),
            None => None,
        };
        Ok(ShrunkInput {
            memory: g.value(pooled).clone(),
            source_len,
            segmentation,
            boundary,
            graph_bytes: g.value_bytes(),
        })
    }

    /// Semantic encoding of shrunk states followed by decoding.
    pub fn translate(&self, memory: &Tensor, params: &ParamStore, opts: &InferenceOptions) -> Result<Translation> {
        let mut g = Graph::inference();
        let x = g.constant(memory.clone());
        let x = add_positions(&mut g, x)?;
        let sem = self.encode_semantic(&mut g, params, x)?;
        let sem_value = g.value(sem).clone();
        let bytes = g.value_bytes();
        let mut out = decode::decode(self, &sem_value, params, opts)?;
        out.peak_bytes = out.peak_bytes.max(bytes);
        Ok(out)
    }

    /// Checks that `params` holds everything inference reads. The CTC head
    /// is needed only by `ctc_greedy` and the predictor only by `boundary`.
    pub fn check_inference_params(&self, params: &ParamStore) -> Result<()> {
        let shrinker = self.config.shrinker;
        let template = self.init_params(Stage::StFinetune, 0);
        let missing: Vec<String> = template
            .names()
            .filter(|n| {
                let optional = (n.starts_with("ctc.") && shrinker != ShrinkerKind::CtcGreedy)
                    || (n.starts_with("predictor.") && shrinker != ShrinkerKind::Boundary);
                !optional && !params.contains(n)
            })
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingParameters(missing))
        }
    }

    /// Full inference on one frame sequence.
    pub fn forward_infer(&self, frames: &FrameSequence, params: &ParamStore, opts: &InferenceOptions) -> Result<Inference> {
        let start = Instant::now();
        let shrunk = self.encode_and_shrink(frames, params, opts)?;
        let acoustic = start.elapsed();
        let translation = self.translate(&shrunk.memory, params, opts)?;
        let total = start.elapsed();
        Ok(Inference {
            translation,
            shrunk,
            timing: InferenceTiming {
                acoustic,
                semantic: total - acoustic,
                total,
            },
        })
    }

    /// Boundary posterior of the predictor for one input (boundary models).
    pub fn boundary_posterior(&self, frames: &FrameSequence, params: &ParamStore) -> Result<BoundaryPosterior> {
        let mut g = Graph::inference();
        let h = self.encode_acoustic(&mut g, params, &frames.features, frames.valid_len())?;
        let logits = boundary::predictor_logits(&mut g, params, h)?;
        let probs = g.softmax(logits)?;
        BoundaryPosterior::new(g.value(probs).clone())
    }

    /// CTC posterior of the head for one input; needs the CTC parameters.
    pub fn ctc_posterior(&self, frames: &FrameSequence, params: &ParamStore) -> Result<CtcPosterior> {
        let mut g = Graph::inference();
        let h = self.encode_acoustic(&mut g, params, &frames.features, frames.valid_len())?;
        let lp = ctc::head_forward(&mut g, params, h)?;
        ctc::posterior_from_log_probs(g.value(lp))
    }
}
