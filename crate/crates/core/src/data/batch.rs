use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, FrameSequence, TargetSequence};
use crate::ctc::SourceTranscription;
use crate::error::{Error, Result};
use crate::tensor::{mix_seed, Tensor};

/// Utterances padded to a common frame count.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Positions in the source corpus.
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    /// Every sequence has `max_frames` rows; masks mark the real ones.
    pub frames: Vec<FrameSequence>,
    pub transcriptions: Vec<SourceTranscription>,
    pub targets: Vec<TargetSequence>,
    pub max_frames: usize,
}

impl Batch {
    pub fn from_indices(corpus: &Corpus, indices: &[usize]) -> Result<Self> {
        let max_frames = indices
            .iter()
            .map(|&i| corpus.utterances[i].num_frames())
            .max()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let d = corpus.feature_dim;
        let mut frames = Vec::with_capacity(indices.len());
        for &i in indices {
            let u = &corpus.utterances[i];
            let mut data = u.frames.data().to_vec();
            data.resize(max_frames * d, 0.0);
            frames.push(FrameSequence::padded(Tensor::matrix(max_frames, d, data)?, u.num_frames())?);
        }
        Ok(Self {
            indices: indices.to_vec(),
            ids: indices.iter().map(|&i| corpus.utterances[i].id.clone()).collect(),
            frames,
            transcriptions: indices.iter().map(|&i| corpus.utterances[i].transcription.clone()).collect(),
            targets: indices.iter().map(|&i| corpus.utterances[i].translation.clone()).collect(),
            max_frames,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Frames including padding.
    pub fn padded_frames(&self) -> usize {
        self.len() * self.max_frames
    }
}

/// Groups utterance positions into length-bucketed batches whose padded
/// size stays within `budget` frames. The grouping and the batch order are
/// shuffled by `seed`.
pub fn plan_batches(lengths: &[usize], ids: &[&str], budget: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if let Some(i) = (0..lengths.len()).find(|&i| lengths[i] > budget) {
        return Err(Error::Config(format!(
            "utterance {} has {} frames, more than the batch budget of {budget}",
            ids[i], lengths[i]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "batches"));
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in order {
        // Sorted ascending, so the newcomer sets the padded length.
        if !current.is_empty() && (current.len() + 1) * lengths[i] > budget {
            batches.push(std::mem::take(&mut current));
        }
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

/// Batches of the whole corpus for one epoch; see [`plan_batches`].
pub fn make_batches(corpus: &Corpus, max_frames_per_batch: usize, seed: u64) -> Result<Vec<Batch>> {
    let lengths: Vec<usize> = corpus.utterances.iter().map(|u| u.num_frames()).collect();
    let ids: Vec<&str> = corpus.utterances.iter().map(|u| u.id.as_str()).collect();
    plan_batches(&lengths, &ids, max_frames_per_batch, seed)?
        .iter()
        .map(|idx| Batch::from_indices(corpus, idx))
        .collect()
}
