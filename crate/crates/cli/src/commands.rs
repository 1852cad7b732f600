use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use adatrans::config::KeyValues;
use adatrans::ctc::CtcPosterior;
use adatrans::data::{load_split, save_corpus, synth_corpus, Corpus, SynthSpec};
use adatrans::eval::{
    efficiency_bench, evaluate_corpus, parse_grid, threshold_sweep, BenchConfig, EvalOptions,
};
use adatrans::model::{
    init_from_pretrained, train_loop, AdaTrans, InferenceOptions, RunConfig, ShrinkerKind, Stage, TrainFiles, Trainer,
};
use adatrans::parallel::Execution;
use adatrans::tensor::{load_checkpoint, read_checkpoint, ParamStore};
use log::{info, warn};

use crate::manifest::{now_ms, RunManifest};
use crate::{Cli, CliError, Command, CONFIG_ENV};

/// Columns printed by `inspect`. CTC and predictor columns are empty when the
/// checkpoint lacks those heads.
pub const INSPECT_HEADER: &str = "frame,ctc_blank,ctc_top_token,ctc_top_prob,bk,bd,ot,predicted_boundary,gold_boundary";
pub const CONFIG_FILE: &str = "config.txt";
pub const PROVENANCE_FILE: &str = "provenance.csv";
pub const INSPECT_FILE: &str = "inspect.csv";

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Resolves the run configuration; see the crate docs for precedence.
fn resolve_config(cli_config: Option<&Path>, beside: Option<&Path>, set: &[String], flags: &[(&str, String)]) -> Result<RunConfig> {
    let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    let file = cli_config.map(Path::to_path_buf).or(env).or_else(|| beside.filter(|p| p.exists()).map(Path::to_path_buf));
    let mut kv = match &file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            KeyValues::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => KeyValues::default(),
    };
    for s in set {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    for (k, v) in flags {
        kv.set(k, v.clone());
    }
    Ok(RunConfig::from_key_values(kv)?)
}

fn beside(ckpt: &Path) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE)
}

fn corpus_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.corpus.clone())
        .ok_or_else(|| usage("no corpus directory: pass --corpus or set corpus in the config"))
}

fn load_inference_params(model: &AdaTrans, ckpt: &Path, seed: u64) -> Result<ParamStore> {
    let template = model.init_params(Stage::StFinetune, seed);
    let params = load_checkpoint(ckpt, &template)?;
    model.check_inference_params(&params)?;
    Ok(params)
}

struct Loaded {
    cfg: RunConfig,
    model: AdaTrans,
    params: ParamStore,
    corpus: Corpus,
}

fn load_for_inference(
    cli_config: Option<&Path>,
    set: &[String],
    ckpt: &Path,
    corpus: Option<PathBuf>,
    split: &str,
    flags: &[(&str, String)],
) -> Result<Loaded> {
    let mut cfg = resolve_config(cli_config, Some(&beside(ckpt)), set, flags)?;
    let dir = corpus_dir(corpus, &cfg)?;
    cfg.corpus = Some(dir.clone());
    let corpus = load_split(&dir, split)?;
    let model = AdaTrans::new(cfg.model.clone())?;
    let params = load_inference_params(&model, ckpt, cfg.seed)?;
    Ok(Loaded {
        cfg,
        model,
        params,
        corpus,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let started = now_ms();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Synth { spec, out } => {
            let spec = match &spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                    SynthSpec::from_config_text(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
                }
                None => SynthSpec::default(),
            };
            let corpus = synth_corpus(&spec)?;
            let files = save_corpus(&out, &corpus, Some(&spec))?;
            let mut m = RunManifest::new("synth", args, started);
            m.seed = Some(spec.seed);
            m.config = spec.to_config_text();
            m.finish(&out, &files)?;
            println!(
                "wrote {} train and {} test utterances to {}",
                corpus.train.len(),
                corpus.test.len(),
                out.display()
            );
        }
        Command::Train {
            stage,
            corpus,
            out,
            init,
            resume,
            steps,
            seed,
        } => {
            let stage: Stage = stage.parse().map_err(|e: String| usage(format!("--stage: {e}")))?;
            let mut flags = Vec::new();
            if let Some(s) = steps {
                flags.push(("steps", s.to_string()));
            }
            if let Some(s) = seed {
                flags.push(("seed", s.to_string()));
            }
            let mut cfg = resolve_config(cfg_path, None, &cli.set, &flags)?;
            let dir = corpus_dir(corpus, &cfg)?;
            let out = out
                .or_else(|| cfg.out.clone())
                .ok_or_else(|| usage("no output directory: pass --out or set out in the config"))?;
            cfg.corpus = Some(dir.clone());
            cfg.out = Some(out.clone());
            let data = load_split(&dir, "train")?;
            let model = AdaTrans::new(cfg.model.clone())?;
            fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
            let mut extra = Vec::new();
            let mut params = model.init_params(stage, cfg.seed);
            if !init.is_empty() {
                if stage != Stage::StFinetune {
                    return Err(usage("--init applies only to --stage st_finetune"));
                }
                let (mut asr, mut mt) = (None, None);
                for item in &init {
                    let (k, v) = item
                        .split_once('=')
                        .ok_or_else(|| usage(format!("--init expects asr=<file> or mt=<file>, got {item:?}")))?;
                    let path = Path::new(v);
                    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
                    let store = read_checkpoint(&mut std::io::BufReader::new(file), path)?;
                    match k {
                        "asr" => asr = Some(store),
                        "mt" => mt = Some(store),
                        _ => return Err(usage(format!("--init key must be asr or mt, got {k:?}"))),
                    }
                }
                let (p, report) = init_from_pretrained(&params, asr.as_ref(), mt.as_ref())?;
                params = p;
                let path = out.join(PROVENANCE_FILE);
                let mut buf = Vec::new();
                report.write_csv(&mut buf).map_err(|e| CliError::io(&path, e))?;
                fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
                extra.push(path);
            } else if stage == Stage::StFinetune && !resume {
                warn!("st_finetune without --init: starting from a fresh initialization");
            }
            let mut trainer = Trainer::new(&model, stage, &data, cfg.train.clone(), cfg.seed, params)?;
            if resume {
                let state = out.join(TrainFiles::STATE);
                if !state.exists() {
                    return Err(usage(format!("--resume: {} does not exist", state.display())));
                }
                trainer.load_state(&state)?;
                info!("resuming at step {}", trainer.step());
            }
            let cfg_file = out.join(CONFIG_FILE);
            fs::write(&cfg_file, cfg.to_config_text()).map_err(|e| CliError::io(&cfg_file, e))?;
            let report = train_loop(&mut trainer, Some(&out), |m| {
                if m.step % 100 == 0 {
                    info!("step {} l_total {:.4} lr {:.6}", m.step, m.losses.l_total, m.lr);
                }
            })?;
            let mut files = vec![cfg_file];
            files.extend(extra);
            files.extend(report.files);
            let mut m = RunManifest::new("train", args, started);
            m.seed = Some(cfg.seed);
            m.config = cfg.to_config_text();
            m.finish(&out, &files)?;
            match report.metrics.last() {
                Some(last) => println!(
                    "trained {stage} to step {}: l_st {:.4} l_ctc {:.4} l_pred {:.4} l_total {:.4}",
                    last.step, last.losses.l_st, last.losses.l_ctc, last.losses.l_pred, last.losses.l_total
                ),
                None => println!("{stage} already at step {}", cfg.train.steps),
            }
        }
        Command::Eval {
            ckpt,
            corpus,
            split,
            theta,
            oracle_boundaries,
            report,
        } => {
            let flags: Vec<(&str, String)> = theta.map(|t| ("theta_infer", t.to_string())).into_iter().collect();
            let l = load_for_inference(cfg_path, &cli.set, &ckpt, corpus, &split, &flags)?;
            let mut opts = EvalOptions::new(&l.model);
            opts.oracle_segmentation = oracle_boundaries;
            let r = evaluate_corpus(&l.model, &l.params, &l.corpus, &opts)?;
            let files = r.write(&report)?;
            let mut m = RunManifest::new("eval", args, started);
            m.seed = Some(l.cfg.seed);
            m.config = l.cfg.to_config_text();
            m.finish(&report, &files)?;
            let s = &r.summary;
            println!(
                "{} theta {}: bleu {:.2} token_accuracy {:.4} diff_le_2 {:.4} boundary_f1 {:.4}",
                s.variant,
                s.theta,
                s.bleu,
                s.token_accuracy,
                s.shrink.diff_le_2(),
                s.boundary.f1
            );
            for (i, e) in r.entropy.per_layer.iter().enumerate() {
                println!("cross-attention entropy layer {i}: {e:.4}");
            }
        }
        Command::Sweep {
            ckpt,
            corpus,
            split,
            grid,
            report,
        } => {
            let grid = parse_grid(&grid)?;
            let l = load_for_inference(cfg_path, &cli.set, &ckpt, corpus, &split, &[])?;
            let r = threshold_sweep(&l.model, &l.params, &l.corpus, &grid, Execution::default())?;
            let files = r.write(&report)?;
            let mut m = RunManifest::new("sweep", args, started);
            m.seed = Some(l.cfg.seed);
            m.config = l.cfg.to_config_text();
            m.finish(&report, &files)?;
            for p in &r.points {
                println!(
                    "theta {:.2}: bleu {:.2} diff_le_2 {:.4} mean_shrunk_len {:.3}",
                    p.theta, p.bleu, p.diff_le_2, p.mean_shrunk_len
                );
            }
            println!("confident boundary probabilities: {:.4}", r.histogram.confident_fraction());
        }
        Command::Bench {
            ckpt,
            corpus,
            split,
            variants,
            repetitions,
            batch_size,
            fixed_steps,
            report,
        } => {
            let variants = variants
                .iter()
                .map(|v| v.trim().parse::<ShrinkerKind>().map_err(|e| usage(format!("--variants: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let l = load_for_inference(cfg_path, &cli.set, &ckpt, corpus, &split, &[])?;
            let bench = BenchConfig {
                variants,
                batch_size,
                repetitions,
                fixed_steps,
            };
            let r = efficiency_bench(&l.cfg.model, &l.params, &l.corpus, &bench)?;
            let file = r.write(&report)?;
            let mut m = RunManifest::new("bench", args, started);
            m.seed = Some(l.cfg.seed);
            m.config = l.cfg.to_config_text();
            m.finish(&report, &[file])?;
            for v in &r.results {
                println!(
                    "{:<10} len {:>6.2} semantic {:>8.3} ms ({:.2}x) total {:>8.3} ms ({:.2}x) memory {:.2}",
                    v.variant.to_string(),
                    v.semantic_input_len,
                    v.semantic.as_secs_f64() * 1e3,
                    v.semantic_speedup,
                    v.total.as_secs_f64() * 1e3,
                    v.total_speedup,
                    v.relative_memory
                );
            }
        }
        Command::Inspect {
            ckpt,
            corpus,
            split,
            utterance,
            theta,
            report,
        } => {
            let flags: Vec<(&str, String)> = theta.map(|t| ("theta_infer", t.to_string())).into_iter().collect();
            let mut cfg = resolve_config(cfg_path, Some(&beside(&ckpt)), &cli.set, &flags)?;
            let dir = corpus_dir(corpus, &cfg)?;
            cfg.corpus = Some(dir.clone());
            let data = load_split(&dir, &split)?;
            let u = data
                .find(&utterance)
                .ok_or_else(|| usage(format!("unknown utterance id {utterance:?} in split {split}")))?;
            let model = AdaTrans::new(cfg.model.clone())?;
            let params = load_inference_params(&model, &ckpt, cfg.seed)?;
            let frames = u.frame_sequence();
            let inf = model.forward_infer(&frames, &params, &InferenceOptions::from_config(&cfg.model))?;
            let ctc = if params.contains("ctc.weight") {
                Some(model.ctc_posterior(&frames, &params)?)
            } else {
                None
            };
            let bd = if params.contains("predictor.weight") {
                Some(model.boundary_posterior(&frames, &params)?)
            } else {
                None
            };
            let predicted = inf.shrunk.segmentation.as_ref().map(|s| s.boundary_frames.clone()).unwrap_or_default();
            let gold = u.subsampled_gold(cfg.model.subsample_factor);
            let mut buf = Vec::new();
            write_inspect(&mut buf, inf.shrunk.source_len, ctc.as_ref(), bd.as_ref(), &predicted, &gold)
                .map_err(|e| usage(e.to_string()))?;
            std::io::stdout().write_all(&buf).map_err(|e| usage(e.to_string()))?;
            if let Some(dir) = report {
                fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                let path = dir.join(INSPECT_FILE);
                fs::write(&path, &buf).map_err(|e| CliError::io(&path, e))?;
                let mut m = RunManifest::new("inspect", args, started);
                m.seed = Some(cfg.seed);
                m.config = cfg.to_config_text();
                m.finish(&dir, &[path])?;
            }
            eprintln!("translation: {:?}", inf.tokens());
            eprintln!("reference:   {:?}", u.translation.tokens());
        }
    }
    Ok(())
}

fn write_inspect<W: Write>(
    w: &mut W,
    frames: usize,
    ctc: Option<&CtcPosterior>,
    bd: Option<&adatrans::boundary::BoundaryPosterior>,
    predicted: &[usize],
    gold: &[usize],
) -> std::io::Result<()> {
    writeln!(w, "{INSPECT_HEADER}")?;
    for t in 0..frames {
        let ctc_cols = match ctc {
            Some(p) => {
                let row = p.row(t);
                let top = adatrans::ctc::argmax(row);
                let top_label = if top == p.blank() { "<blank>".to_string() } else { top.to_string() };
                format!("{},{},{}", row[p.blank()], top_label, row[top])
            }
            None => ",,".to_string(),
        };
        let bd_cols = match bd {
            Some(p) => {
                let r = p.probs.row(t);
                format!("{},{},{}", r[0], r[1], r[2])
            }
            None => ",,".to_string(),
        };
        writeln!(
            w,
            "{t},{ctc_cols},{bd_cols},{},{}",
            u8::from(predicted.contains(&t)),
            u8::from(gold.contains(&t))
        )?;
    }
    Ok(())
}
