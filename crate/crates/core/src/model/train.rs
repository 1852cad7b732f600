use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{inverse_sqrt_lr, AdaTrans, Adam, LossValues, Stage, TrainConfig};
use crate::data::{plan_batches, Batch, Corpus};
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::tensor::{mix_seed, read_checkpoint, save_checkpoint, ParamStore, Tensor};

/// Header of the per-step metrics log.
pub const METRICS_HEADER: &str = "step,l_st,l_ctc,l_pred,l_total,lr,wall_ms";

const STEP_KEY: &str = "train.step";
const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// 1-based index of the completed step.
    pub step: usize,
    pub losses: LossValues,
    pub lr: f64,
    /// Milliseconds since the trainer was created.
    pub wall_ms: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.step, l.l_st, l.l_ctc, l.l_pred, l.l_total, self.lr, self.wall_ms
        )
    }
}

/// Stateful optimizer loop over one corpus. Batch order is a pure function
/// of the seed and the step count, so a resumed run sees the same batches as
/// an uninterrupted one.
pub struct Trainer<'a> {
    model: &'a AdaTrans,
    stage: Stage,
    corpus: &'a Corpus,
    cfg: TrainConfig,
    seed: u64,
    params: ParamStore,
    adam: Adam,
    exec: Execution,
    epoch: Option<(usize, usize, Vec<Vec<usize>>)>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a AdaTrans,
        stage: Stage,
        corpus: &'a Corpus,
        cfg: TrainConfig,
        seed: u64,
        params: ParamStore,
    ) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::InvalidInput("training corpus is empty".into()));
        }
        let c = model.config();
        if corpus.feature_dim != c.feature_dim || corpus.src_vocab != c.src_vocab || corpus.tgt_vocab != c.tgt_vocab {
            return Err(Error::Config(format!(
                "corpus (feature_dim {}, src_vocab {}, tgt_vocab {}) does not match the model config \
                 (feature_dim {}, src_vocab {}, tgt_vocab {})",
                corpus.feature_dim, corpus.src_vocab, corpus.tgt_vocab, c.feature_dim, c.src_vocab, c.tgt_vocab
            )));
        }
        let adam = Adam::new(&params);
        Ok(Self {
            model,
            stage,
            corpus,
            cfg,
            seed,
            params,
            adam,
            exec: Execution::default(),
            epoch: None,
            started: Instant::now(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Completed steps.
    pub fn step(&self) -> usize {
        self.adam.step
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn epoch_plan(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let lengths: Vec<usize> = self.corpus.utterances.iter().map(|u| u.num_frames()).collect();
        let ids: Vec<&str> = self.corpus.utterances.iter().map(|u| u.id.as_str()).collect();
        plan_batches(&lengths, &ids, self.cfg.batch_frames, mix_seed(self.seed, &format!("epoch {epoch}")))
    }

    /// Utterance positions of the batch for global batch index `index`.
    fn batch_indices(&mut self, index: usize) -> Result<Vec<usize>> {
        loop {
            let (epoch, first) = match &self.epoch {
                Some((_, first, plan)) if index < first + plan.len() && index >= *first => {
                    return Ok(plan[index - first].clone());
                }
                Some((e, first, plan)) if index >= first + plan.len() => (e + 1, first + plan.len()),
                _ => (0, 0),
            };
            let plan = self.epoch_plan(epoch)?;
            self.epoch = Some((epoch, first, plan));
        }
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let idx = self.batch_indices(self.adam.step)?;
        Batch::from_indices(self.corpus, &idx)
    }

    /// Runs one optimizer step on the next batch.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let batch = self.next_batch()?;
        let out = self.model.forward_train(&batch, &self.params, self.stage, self.exec)?;
        let mut grads = out
            .grads
            .ok_or_else(|| Error::Internal("forward_train returned no gradients".into()))?;
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {}", self.adam.step + 1)));
        }
        if self.cfg.clip_norm > 0.0 {
            let norm = grads.global_norm();
            if norm > self.cfg.clip_norm {
                grads.scale(self.cfg.clip_norm / norm);
            }
        }
        let lr = inverse_sqrt_lr(self.adam.step + 1, self.cfg.lr, self.cfg.warmup_steps);
        self.adam.update(&mut self.params, &grads, lr)?;
        Ok(StepMetrics {
            step: self.adam.step,
            losses: out.losses,
            lr,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Parameters, optimizer moments and the step counter in one store.
    pub fn state(&self) -> ParamStore {
        let mut s = self.params.clone();
        for (name, t) in self.adam.m.iter() {
            s.insert(format!("{M_PREFIX}{name}"), t.clone());
        }
        for (name, t) in self.adam.v.iter() {
            s.insert(format!("{V_PREFIX}{name}"), t.clone());
        }
        s.insert(STEP_KEY, Tensor::new(vec![1], vec![self.adam.step as f64]).expect("scalar"));
        s
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.state())
    }

    /// Restores a state written by [`Trainer::save_state`].
    pub fn restore_state(&mut self, state: &ParamStore) -> Result<()> {
        let step = state.require(STEP_KEY)?.item();
        let mut params = ParamStore::new();
        let mut adam = Adam::new(&self.params);
        for (name, t) in state.iter() {
            if name == STEP_KEY {
                continue;
            }
            let (store, key) = if let Some(k) = name.strip_prefix(M_PREFIX) {
                (&mut adam.m, k)
            } else if let Some(k) = name.strip_prefix(V_PREFIX) {
                (&mut adam.v, k)
            } else {
                (&mut params, name)
            };
            store.insert(key, t.clone());
        }
        let unknown: Vec<String> = params.names().filter(|n| !self.params.contains(n)).map(str::to_string).collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownParameters(unknown));
        }
        let missing: Vec<String> = self.params.names().filter(|n| !params.contains(n)).map(str::to_string).collect();
        if !missing.is_empty() {
            return Err(Error::MissingParameters(missing));
        }
        for (name, t) in params.iter() {
            let expected = self.params.require(name)?.shape();
            if t.shape() != expected {
                return Err(Error::ParameterShape {
                    name: name.to_string(),
                    expected: expected.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        adam.step = step as usize;
        self.params = params;
        self.adam = adam;
        Ok(())
    }

    pub fn load_state(&mut self, path: &Path) -> Result<()> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let state = read_checkpoint(&mut std::io::BufReader::new(file), path)?;
        self.restore_state(&state)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub metrics: Vec<StepMetrics>,
    pub params: ParamStore,
    /// Files written, in order.
    pub files: Vec<PathBuf>,
}

/// File names inside a training output directory.
pub struct TrainFiles;

impl TrainFiles {
    pub const METRICS: &'static str = "metrics.csv";
    pub const STATE: &'static str = "state.adts";
    pub const FINAL: &'static str = "final.adts";
    pub const LAST_GOOD: &'static str = "last_good.adts";

    pub fn checkpoint(step: usize) -> String {
        format!("checkpoint_{step:06}.adts")
    }
}

fn push_unique(files: &mut Vec<PathBuf>, p: PathBuf) {
    if !files.contains(&p) {
        files.push(p);
    }
}

/// Trains until `cfg.steps` steps are complete.
///
/// With an output directory the loop appends to `metrics.csv`, saves
/// `checkpoint_NNNNNN.adts` and `state.adts` every `checkpoint_every` steps,
/// and finishes with `final.adts`. A non-finite loss or gradient aborts the
/// run after writing the parameters from before the failing step to
/// `last_good.adts`.
pub fn train_loop(
    trainer: &mut Trainer<'_>,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&StepMetrics),
) -> Result<TrainReport> {
    let mut files = Vec::new();
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(TrainFiles::METRICS);
            let fresh = trainer.step() == 0 || !path.exists();
            let file = if fresh {
                File::create(&path)
            } else {
                OpenOptions::new().append(true).open(&path)
            }
            .map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            if fresh {
                writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
            }
            push_unique(&mut files, path.clone());
            Some((w, path))
        }
        None => None,
    };
    let steps = trainer.cfg.steps;
    let every = trainer.cfg.checkpoint_every;
    let mut metrics = Vec::new();
    while trainer.step() < steps {
        let m = match trainer.train_step() {
            Ok(m) => m,
            Err(e) => {
                if let (Error::NonFinite(_), Some(dir)) = (&e, out_dir) {
                    save_checkpoint(&dir.join(TrainFiles::LAST_GOOD), trainer.params())?;
                }
                if let Some((w, path)) = log.as_mut() {
                    w.flush().map_err(|e| Error::io(&*path, e))?;
                }
                return Err(e);
            }
        };
        if let Some((w, path)) = log.as_mut() {
            writeln!(w, "{}", m.csv_row()).map_err(|e| Error::io(&*path, e))?;
        }
        progress(&m);
        metrics.push(m);
        if let (Some(dir), true) = (out_dir, every > 0 && trainer.step().is_multiple_of(every)) {
            if let Some((w, path)) = log.as_mut() {
                w.flush().map_err(|e| Error::io(&*path, e))?;
            }
            let ckpt = dir.join(TrainFiles::checkpoint(trainer.step()));
            save_checkpoint(&ckpt, trainer.params())?;
            push_unique(&mut files, ckpt);
            let state = dir.join(TrainFiles::STATE);
            trainer.save_state(&state)?;
            push_unique(&mut files, state);
        }
    }
    if let Some((mut w, path)) = log.take() {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(dir) = out_dir {
        let state = dir.join(TrainFiles::STATE);
        trainer.save_state(&state)?;
        push_unique(&mut files, state);
        let fin = dir.join(TrainFiles::FINAL);
        save_checkpoint(&fin, trainer.params())?;
        push_unique(&mut files, fin);
    }
    Ok(TrainReport {
        metrics,
        params: trainer.params().clone(),
        files,
    })
}
