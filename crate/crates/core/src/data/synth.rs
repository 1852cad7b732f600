use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Corpus, SyntheticCorpus, TargetSequence, Utterance};
use crate::config::KeyValues;
use crate::ctc::SourceTranscription;
use crate::error::{Error, Result};
use crate::tensor::{mix_seed, Tensor};

/// How a source token sequence becomes its translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TranslationRule {
    /// Source id `v` becomes target id `v + 1`.
    IdentityMap,
    /// A fixed random injection of source ids into target ids.
    DictionaryMap,
    /// Dictionary map, then reverse the sequence.
    Reverse,
}

impl FromStr for TranslationRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "identity-map" | "identity" => Ok(Self::IdentityMap),
            "dictionary-map" | "dictionary" => Ok(Self::DictionaryMap),
            "reverse" => Ok(Self::Reverse),
            _ => Err("expected identity-map, dictionary-map or reverse".into()),
        }
    }
}

impl fmt::Display for TranslationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::IdentityMap => "identity-map",
            Self::DictionaryMap => "dictionary-map",
            Self::Reverse => "reverse",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub src_vocab: usize,
    /// Content target ids; the end-of-sequence id comes on top.
    pub tgt_vocab: usize,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Frames per token, inclusive range.
    pub min_duration: usize,
    pub max_duration: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub rule: TranslationRule,
    pub subsample_factor: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            src_vocab: 32,
            tgt_vocab: 32,
            train_utterances: 2000,
            test_utterances: 200,
            min_tokens: 4,
            max_tokens: 10,
            min_duration: 4,
            max_duration: 12,
            feature_dim: 16,
            noise: 0.3,
            rule: TranslationRule::DictionaryMap,
            subsample_factor: 2,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub const KEYS: [&'static str; 13] = [
        "src_vocab",
        "tgt_vocab",
        "train_utterances",
        "test_utterances",
        "min_tokens",
        "max_tokens",
        "min_duration",
        "max_duration",
        "feature_dim",
        "noise",
        "rule",
        "subsample_factor",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if self.src_vocab < 2 {
            return fail("src_vocab", "vocabulary size must be at least 2");
        }
        if self.tgt_vocab < 2 {
            return fail("tgt_vocab", "vocabulary size must be at least 2");
        }
        if self.tgt_vocab < self.src_vocab {
            return fail("tgt_vocab", "must be at least src_vocab so every source id has its own target id");
        }
        if self.min_tokens == 0 {
            return fail("min_tokens", "must be at least 1");
        }
        if self.min_tokens > self.max_tokens {
            return fail("min_tokens", "exceeds max_tokens");
        }
        if self.min_duration > self.max_duration {
            return fail("min_duration", "exceeds max_duration");
        }
        if self.subsample_factor == 0 {
            return fail("subsample_factor", "must be positive");
        }
        if self.min_duration < self.subsample_factor {
            return fail("min_duration", "must be at least subsample_factor");
        }
        if self.feature_dim == 0 {
            return fail("feature_dim", "must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise", "must be finite and non-negative");
        }
        Ok(())
    }

    /// Reads a spec from `key = value` text; absent keys keep their defaults.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut s = Self::default();
        kv.take("src_vocab", &mut s.src_vocab)?;
        kv.take("tgt_vocab", &mut s.tgt_vocab)?;
        kv.take("train_utterances", &mut s.train_utterances)?;
        kv.take("test_utterances", &mut s.test_utterances)?;
        kv.take("min_tokens", &mut s.min_tokens)?;
        kv.take("max_tokens", &mut s.max_tokens)?;
        kv.take("min_duration", &mut s.min_duration)?;
        kv.take("max_duration", &mut s.max_duration)?;
        kv.take("feature_dim", &mut s.feature_dim)?;
        kv.take("noise", &mut s.noise)?;
        kv.take("rule", &mut s.rule)?;
        kv.take("subsample_factor", &mut s.subsample_factor)?;
        kv.take("seed", &mut s.seed)?;
        kv.finish()?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_config_text(&self) -> String {
        format!(
            "src_vocab = {}\ntgt_vocab = {}\ntrain_utterances = {}\ntest_utterances = {}\nmin_tokens = {}\n\
             max_tokens = {}\nmin_duration = {}\nmax_duration = {}\nfeature_dim = {}\nnoise = {}\nrule = {}\n\
             subsample_factor = {}\nseed = {}\n",
            self.src_vocab,
            self.tgt_vocab,
            self.train_utterances,
            self.test_utterances,
            self.min_tokens,
            self.max_tokens,
            self.min_duration,
            self.max_duration,
            self.feature_dim,
            self.noise,
            self.rule,
            self.subsample_factor,
            self.seed
        )
    }
}

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, label))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    prototypes: Vec<Vec<f64>>,
    dictionary: Vec<usize>,
}

impl Generator<'_> {
    fn utterance(&self, split: &str, index: usize) -> Result<Utterance> {
        let spec = self.spec;
        let id = format!("{split}-{index:05}");
        let mut rng = rng_for(spec.seed, &id);
        let n = rng.random_range(spec.min_tokens..=spec.max_tokens);
        let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.src_vocab)).collect();
        let durations: Vec<usize> = (0..n)
            .map(|_| rng.random_range(spec.min_duration..=spec.max_duration))
            .collect();
        let total: usize = durations.iter().sum();
        let d = spec.feature_dim;
        let mut frames = Vec::with_capacity(total * d);
        let mut gold = Vec::with_capacity(n);
        let mut end = 0;
        for (&tok, &dur) in tokens.iter().zip(&durations) {
            for _ in 0..dur {
                for &p in &self.prototypes[tok] {
                    let x = if spec.noise > 0.0 { p + spec.noise * gaussian(&mut rng) } else { p };
                    frames.push(x as f32 as f64);
                }
            }
            end += dur;
            gold.push(end - 1);
        }
        let mut content: Vec<usize> = tokens.iter().map(|&v| self.dictionary[v]).collect();
        if spec.rule == TranslationRule::Reverse {
            content.reverse();
        }
        Ok(Utterance {
            id,
            frames: Tensor::matrix(total, d, frames)?,
            transcription: SourceTranscription::new(tokens, spec.src_vocab)?,
            translation: TargetSequence::from_content(&content, spec.tgt_vocab)?,
            gold_boundaries: gold,
        })
    }
}

/// Generates train and test splits. Prototypes and the dictionary are shared
/// by both splits; every utterance draws from its own seeded stream, so the
/// corpus depends only on the spec.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut proto_rng = rng_for(spec.seed, "prototypes");
    let prototypes = (0..spec.src_vocab)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| gaussian(&mut proto_rng) as f32 as f64)
                .collect()
        })
        .collect();
    let dictionary = match spec.rule {
        TranslationRule::IdentityMap => (1..=spec.src_vocab).collect(),
        TranslationRule::DictionaryMap | TranslationRule::Reverse => {
            let mut ids: Vec<usize> = (1..=spec.tgt_vocab).collect();
            ids.shuffle(&mut rng_for(spec.seed, "dictionary"));
            ids.truncate(spec.src_vocab);
            ids
        }
    };
    let gen = Generator {
        spec,
        prototypes,
        dictionary,
    };
    let split = |name: &str, count: usize| -> Result<Corpus> {
        let utts = (0..count).map(|i| gen.utterance(name, i)).collect::<Result<Vec<_>>>()?;
        Corpus::new(spec.feature_dim, spec.src_vocab, spec.tgt_vocab, utts)
    };
    Ok(SyntheticCorpus {
        train: split("train", spec.train_utterances)?,
        test: split("test", spec.test_utterances)?,
    })
}

/// Prototype vector of source token `v` under `spec` (for tests and tools).
pub fn prototype(spec: &SynthSpec, v: usize) -> Vec<f64> {
    let mut rng = rng_for(spec.seed, "prototypes");
    let mut out = Vec::new();
    for _ in 0..=v {
        out = (0..spec.feature_dim).map(|_| gaussian(&mut rng) as f32 as f64).collect();
    }
    out
}
