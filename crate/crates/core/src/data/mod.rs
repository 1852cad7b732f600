//! Synthetic pseudo-speech corpora, their on-disk formats, and batching.
//!
//! Each source token is rendered as a run of noisy copies of a fixed random
//! prototype vector, so the true word boundaries are known exactly.

mod batch;
mod io;
mod synth;

pub use batch::{make_batches, plan_batches, Batch};
pub use io::{
    load_corpus, load_split, read_features, read_manifest, save_corpus, save_split, write_features, write_manifest,
    CorpusFiles, ManifestRow, FEATURE_MAGIC, FEATURE_VERSION, MANIFEST_HEADER,
};
pub use synth::{prototype, synth_corpus, SynthSpec, TranslationRule};

use crate::ctc::SourceTranscription;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// End-of-sequence id on the target side. Content target ids start at 1.
pub const EOS: usize = 0;

/// A `[T × d_feat]` feature matrix with a validity mask. Valid frames form a
/// prefix; the rest is padding.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub features: Tensor,
    pub mask: Vec<bool>,
}

impl FrameSequence {
    /// Every frame valid.
    pub fn new(features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::InvalidInput(format!(
                "frames must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        let mask = vec![true; features.rows()];
        Ok(Self { features, mask })
    }

    /// The first `valid` rows are real frames.
    pub fn padded(features: Tensor, valid: usize) -> Result<Self> {
        let mut seq = Self::new(features)?;
        if valid > seq.mask.len() {
            return Err(Error::InvalidInput(format!(
                "{valid} valid frames exceed the {} available",
                seq.mask.len()
            )));
        }
        seq.mask[valid..].iter_mut().for_each(|m| *m = false);
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Target token ids ending with [`EOS`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSequence {
    tokens: Vec<usize>,
}

impl TargetSequence {
    /// `tokens` must end with [`EOS`] and use no id above `vocab_size`.
    pub fn new(tokens: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if tokens.last() != Some(&EOS) {
            return Err(Error::InvalidInput("target sequence must end with end-of-sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t > vocab_size) {
            return Err(Error::InvalidInput(format!(
                "target id {bad} outside target vocabulary of size {vocab_size}"
            )));
        }
        Ok(Self { tokens })
    }

    /// Appends [`EOS`] to content ids.
    pub fn from_content(content: &[usize], vocab_size: usize) -> Result<Self> {
        let mut tokens = content.to_vec();
        tokens.push(EOS);
        Self::new(tokens, vocab_size)
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

    /// Content ids without the trailing [`EOS`].
    pub fn content(&self) -> &[usize] {
        &self.tokens[..self.tokens.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `[T × d_feat]`, every row valid.
    pub frames: Tensor,
    pub transcription: SourceTranscription,
    pub translation: TargetSequence,
    /// Last input frame of each source token's run.
    pub gold_boundaries: Vec<usize>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn frame_sequence(&self) -> FrameSequence {
        FrameSequence::new(self.frames.clone()).expect("utterance frames are a matrix")
    }

    /// Gold boundaries mapped onto the subsampled frame grid.
    pub fn subsampled_gold(&self, factor: usize) -> Vec<usize> {
        self.gold_boundaries.iter().map(|b| b / factor).collect()
    }

    fn validate(&self, feature_dim: usize) -> Result<()> {
        let t = self.num_frames();
        let bad = |msg: String| Err(Error::InvalidInput(format!("utterance {}: {msg}", self.id)));
        if t == 0 {
            return bad("no frames".into());
        }
        if self.frames.cols() != feature_dim {
            return bad(format!("feature dim {} != {feature_dim}", self.frames.cols()));
        }
        if self.gold_boundaries.len() != self.transcription.len() {
            return bad(format!(
                "{} gold boundaries for {} tokens",
                self.gold_boundaries.len(),
                self.transcription.len()
            ));
        }
        if self.gold_boundaries.windows(2).any(|w| w[0] >= w[1]) || self.gold_boundaries.last() != Some(&(t - 1)) {
            return bad("gold boundaries must increase and end on the last frame".into());
        }
        Ok(())
    }
}

/// Utterances sharing one feature dimension and pair of vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub feature_dim: usize,
    /// Source token count; the CTC blank is id `src_vocab`.
    pub src_vocab: usize,
    /// Content target ids are `1..=tgt_vocab`; [`EOS`] is 0.
    pub tgt_vocab: usize,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(feature_dim: usize, src_vocab: usize, tgt_vocab: usize, utterances: Vec<Utterance>) -> Result<Self> {
        for u in &utterances {
            u.validate(feature_dim)?;
        }
        Ok(Self {
            feature_dim,
            src_vocab,
            tgt_vocab,
            utterances,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::num_frames).sum()
    }

    /// The first `n` utterances.
    pub fn head(&self, n: usize) -> Corpus {
        Corpus {
            utterances: self.utterances.iter().take(n).cloned().collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Corpus {
        Corpus {
            feature_dim: self.feature_dim,
            src_vocab: self.src_vocab,
            tgt_vocab: self.tgt_vocab,
            utterances: Vec::new(),
        }
    }
}

/// Train and test splits generated together.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Corpus,
    pub test: Corpus,
}
