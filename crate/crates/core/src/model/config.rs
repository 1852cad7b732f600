use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::config::{Flag, KeyValues};
use crate::error::{Error, Result};
use crate::tensor::layers::StackConfig;

/// Which frames the semantic encoder sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShrinkerKind {
    /// Full-length acoustic states.
    None,
    /// Means over consecutive chunks of `fixed_rate` frames.
    Fixed,
    /// Means over the non-blank runs of the greedy CTC path.
    CtcGreedy,
    /// Predicted boundaries with blank-weighted pooling.
    Boundary,
}

impl ShrinkerKind {
    pub const ALL: [ShrinkerKind; 4] = [Self::None, Self::Fixed, Self::CtcGreedy, Self::Boundary];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Fixed => "fixed",
            Self::CtcGreedy => "ctc_greedy",
            Self::Boundary => "boundary",
        }
    }
}

impl FromStr for ShrinkerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| "expected none, fixed, ctc_greedy or boundary".to_string())
    }
}

impl fmt::Display for ShrinkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Training schedule stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Acoustic encoder and CTC head on transcriptions.
    AsrPretrain,
    /// Source text to target text through the semantic encoder and decoder.
    MtPretrain,
    /// The full model with the combined objective.
    StFinetune,
    /// Same objective as `StFinetune`, from a fresh initialization.
    SingleStage,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Self::AsrPretrain, Self::MtPretrain, Self::StFinetune, Self::SingleStage];

    pub fn name(self) -> &'static str {
        match self {
            Self::AsrPretrain => "asr_pretrain",
            Self::MtPretrain => "mt_pretrain",
            Self::StFinetune => "st_finetune",
            Self::SingleStage => "single_stage",
        }
    }

    pub fn is_speech_translation(self) -> bool {
        matches!(self, Self::StFinetune | Self::SingleStage)
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| "expected asr_pretrain, mt_pretrain, st_finetune or single_stage".to_string())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub acoustic_layers: usize,
    pub semantic_layers: usize,
    pub decoder_layers: usize,
    /// 2 or 4.
    pub subsample_factor: usize,
    pub feature_dim: usize,
    /// Source tokens; the CTC head adds a blank on top.
    pub src_vocab: usize,
    /// Content target tokens; the decoder adds end-of-sequence on top.
    pub tgt_vocab: usize,
    /// Pooling temperature.
    pub mu: f64,
    pub theta_infer: f64,
    pub alpha: f64,
    pub beta: f64,
    pub shrinker: ShrinkerKind,
    /// Chunk size of the fixed shrinker.
    pub fixed_rate: usize,
    pub forced_training: bool,
    pub blank_weighting: bool,
    pub label_smoothing: f64,
    pub beam_size: usize,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            ffn_dim: 256,
            acoustic_layers: 2,
            semantic_layers: 2,
            decoder_layers: 2,
            subsample_factor: 2,
            feature_dim: 16,
            src_vocab: 32,
            tgt_vocab: 32,
            mu: 1.0,
            theta_infer: 0.4,
            alpha: 1.0,
            beta: 1.0,
            shrinker: ShrinkerKind::Boundary,
            fixed_rate: 3,
            forced_training: true,
            blank_weighting: true,
            label_smoothing: 0.1,
            beam_size: 1,
            max_decode_len: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        for (key, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("acoustic_layers", self.acoustic_layers),
            ("semantic_layers", self.semantic_layers),
            ("decoder_layers", self.decoder_layers),
            ("feature_dim", self.feature_dim),
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("fixed_rate", self.fixed_rate),
            ("beam_size", self.beam_size),
            ("max_decode_len", self.max_decode_len),
        ] {
            if v == 0 {
                return fail(key, "must be positive");
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail("n_heads", "must divide d_model");
        }
        if self.subsample_factor != 2 && self.subsample_factor != 4 {
            return fail("subsample_factor", "must be 2 or 4");
        }
        if !(self.theta_infer > 0.0 && self.theta_infer < 1.0) {
            return fail("theta_infer", "must lie in (0, 1)");
        }
        for (key, v) in [("mu", self.mu), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(key, "must be finite and non-negative");
            }
        }
        if !(self.label_smoothing >= 0.0 && self.label_smoothing < 1.0) {
            return fail("label_smoothing", "must lie in [0, 1)");
        }
        Ok(())
    }

    /// Output classes of the decoder (content ids plus end-of-sequence).
    pub fn target_classes(&self) -> usize {
        self.tgt_vocab + 1
    }

    pub fn acoustic_stack(&self) -> StackConfig {
        self.stack(self.acoustic_layers)
    }

    pub fn semantic_stack(&self) -> StackConfig {
        self.stack(self.semantic_layers)
    }

    pub fn decoder_stack(&self) -> StackConfig {
        self.stack(self.decoder_layers)
    }

    fn stack(&self, layers: usize) -> StackConfig {
        StackConfig {
            d_model: self.d_model,
            heads: self.n_heads,
            ffn_dim: self.ffn_dim,
            layers,
        }
    }

    fn take_from(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take("d_model", &mut self.d_model)?;
        kv.take("n_heads", &mut self.n_heads)?;
        kv.take("ffn_dim", &mut self.ffn_dim)?;
        kv.take("acoustic_layers", &mut self.acoustic_layers)?;
        kv.take("semantic_layers", &mut self.semantic_layers)?;
        kv.take("decoder_layers", &mut self.decoder_layers)?;
        kv.take("subsample_factor", &mut self.subsample_factor)?;
        kv.take("feature_dim", &mut self.feature_dim)?;
        kv.take("src_vocab", &mut self.src_vocab)?;
        kv.take("tgt_vocab", &mut self.tgt_vocab)?;
        kv.take("mu", &mut self.mu)?;
        kv.take("theta_infer", &mut self.theta_infer)?;
        kv.take("alpha", &mut self.alpha)?;
        kv.take("beta", &mut self.beta)?;
        kv.take("shrinker", &mut self.shrinker)?;
        kv.take("fixed_rate", &mut self.fixed_rate)?;
        let mut forced = Flag(self.forced_training);
        kv.take("forced_training", &mut forced)?;
        self.forced_training = forced.0;
        let mut blank = Flag(self.blank_weighting);
        kv.take("blank_weighting", &mut blank)?;
        self.blank_weighting = blank.0;
        kv.take("label_smoothing", &mut self.label_smoothing)?;
        kv.take("beam_size", &mut self.beam_size)?;
        kv.take("max_decode_len", &mut self.max_decode_len)?;
        Ok(())
    }

    fn write_to(&self, out: &mut String) {
        use std::fmt::Write;
        let _ = write!(
            out,
            "d_model = {}\nn_heads = {}\nffn_dim = {}\nacoustic_layers = {}\nsemantic_layers = {}\n\
             decoder_layers = {}\nsubsample_factor = {}\nfeature_dim = {}\nsrc_vocab = {}\ntgt_vocab = {}\n\
             mu = {}\ntheta_infer = {}\nalpha = {}\nbeta = {}\nshrinker = {}\nfixed_rate = {}\n\
             forced_training = {}\nblank_weighting = {}\nlabel_smoothing = {}\nbeam_size = {}\n\
             max_decode_len = {}\n",
            self.d_model,
            self.n_heads,
            self.ffn_dim,
            self.acoustic_layers,
            self.semantic_layers,
            self.decoder_layers,
            self.subsample_factor,
            self.feature_dim,
            self.src_vocab,
            self.tgt_vocab,
            self.mu,
            self.theta_infer,
            self.alpha,
            self.beta,
            self.shrinker,
            self.fixed_rate,
            self.forced_training,
            self.blank_weighting,
            self.label_smoothing,
            self.beam_size,
            self.max_decode_len
        );
    }
}

/// Optimizer and batching settings of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Peak learning rate, reached at the end of warmup.
    pub lr: f64,
    pub warmup_steps: usize,
    /// Padded frames per batch.
    pub batch_frames: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 0.002,
            warmup_steps: 400,
            batch_frames: 480,
            clip_norm: 5.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr: must be finite and non-negative".into()));
        }
        if self.batch_frames == 0 {
            return Err(Error::Config("batch_frames: must be positive".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm: must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything a config file can set.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 1,
            corpus: None,
            out: None,
        }
    }
}

impl RunConfig {
    /// Applies `kv` on top of the defaults; unknown keys are an error.
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let mut c = Self::default();
        c.model.take_from(&mut kv)?;
        kv.take("steps", &mut c.train.steps)?;
        kv.take("lr", &mut c.train.lr)?;
        kv.take("warmup_steps", &mut c.train.warmup_steps)?;
        kv.take("batch_frames", &mut c.train.batch_frames)?;
        kv.take("clip_norm", &mut c.train.clip_norm)?;
        kv.take("checkpoint_every", &mut c.train.checkpoint_every)?;
        kv.take("seed", &mut c.seed)?;
        c.corpus = kv.take_string("corpus").map(PathBuf::from);
        c.out = kv.take_string("out").map(PathBuf::from);
        kv.finish()?;
        c.model.validate()?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(KeyValues::parse(text)?)
    }

    /// Resolved configuration in the same `key = value` format.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        self.model.write_to(&mut s);
        let t = &self.train;
        s.push_str(&format!(
            "steps = {}\nlr = {}\nwarmup_steps = {}\nbatch_frames = {}\nclip_norm = {}\ncheckpoint_every = {}\nseed = {}\n",
            t.steps, t.lr, t.warmup_steps, t.batch_frames, t.clip_norm, t.checkpoint_every, self.seed
        ));
        if let Some(p) = &self.corpus {
            s.push_str(&format!("corpus = {}\n", p.display()));
        }
        if let Some(p) = &self.out {
            s.push_str(&format!("out = {}\n", p.display()));
        }
        s
    }
}
