//! Corpus files.
//!
//! A corpus directory holds, per split `S`, a manifest `S.tsv` and a feature
//! file `S.adft`, plus `src_vocab.txt` and `tgt_vocab.txt`.
//!
//! The feature file is little-endian: magic `ADFT`, version `u32`, then per
//! utterance `id_len u32, id (UTF-8), T u32, d_feat u32, f32 × T·d_feat`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Corpus, SynthSpec, SyntheticCorpus, TargetSequence, Utterance};
use crate::ctc::SourceTranscription;
use crate::error::{Error, Result};
use crate::tensor::{Cursor, Tensor};

pub const FEATURE_MAGIC: &[u8; 4] = b"ADFT";
pub const FEATURE_VERSION: u32 = 1;
pub const MANIFEST_HEADER: &str = "id\tframes\ttranscription\ttranslation\tgold_boundaries";

/// Paths of one corpus directory.
#[derive(Clone, Debug)]
pub struct CorpusFiles {
    pub dir: PathBuf,
}

impl CorpusFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn manifest(&self, split: &str) -> PathBuf {
        self.dir.join(format!("{split}.tsv"))
    }

    pub fn features(&self, split: &str) -> PathBuf {
        self.dir.join(format!("{split}.adft"))
    }

    pub fn src_vocab(&self) -> PathBuf {
        self.dir.join("src_vocab.txt")
    }

    pub fn tgt_vocab(&self) -> PathBuf {
        self.dir.join("tgt_vocab.txt")
    }

    pub fn spec(&self) -> PathBuf {
        self.dir.join("synth_spec.txt")
    }
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_manifest<W: Write>(w: &mut W, corpus: &Corpus) -> std::io::Result<()> {
    writeln!(w, "{MANIFEST_HEADER}")?;
    for u in &corpus.utterances {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            u.id,
            u.num_frames(),
            join_ids(u.transcription.tokens()),
            join_ids(u.translation.tokens()),
            join_ids(&u.gold_boundaries)
        )?;
    }
    Ok(())
}

pub fn write_features<W: Write>(w: &mut W, corpus: &Corpus) -> std::io::Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    for u in &corpus.utterances {
        w.write_all(&(u.id.len() as u32).to_le_bytes())?;
        w.write_all(u.id.as_bytes())?;
        w.write_all(&(u.frames.rows() as u32).to_le_bytes())?;
        w.write_all(&(u.frames.cols() as u32).to_le_bytes())?;
        for &v in u.frames.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub frames: usize,
    pub transcription: Vec<usize>,
    pub translation: Vec<usize>,
    pub gold_boundaries: Vec<usize>,
}

fn parse_ids(field: &str, path: &Path, line: usize) -> Result<Vec<usize>> {
    field
        .split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                offset: line as u64,
                message: format!("line {line}: bad id {t:?}"),
            })
        })
        .collect()
}

/// Parses a manifest. Format errors report the line number as the offset.
pub fn read_manifest<R: Read>(r: R, path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let n = i + 1;
        if n == 1 {
            if line != MANIFEST_HEADER {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: 1,
                    message: format!("line 1: expected header {MANIFEST_HEADER:?}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: n as u64,
                message: format!("line {n}: expected 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let frames = fields[1].parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            offset: n as u64,
            message: format!("line {n}: bad frame count {:?}", fields[1]),
        })?;
        rows.push(ManifestRow {
            id: fields[0].to_string(),
            frames,
            transcription: parse_ids(fields[2], path, n)?,
            translation: parse_ids(fields[3], path, n)?,
            gold_boundaries: parse_ids(fields[4], path, n)?,
        });
    }
    Ok(rows)
}

/// Parses a feature file into `(id, frames)` pairs.
pub fn read_features<R: Read>(r: &mut R, path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    if c.take(4, "magic")? != FEATURE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "bad magic, expected ADFT".into(),
        });
    }
    let version = c.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            message: format!("unsupported feature file version {version}"),
        });
    }
    let mut out = Vec::new();
    while c.pos < buf.len() {
        let start = c.pos;
        let len = c.u32("id length")? as usize;
        let id = std::str::from_utf8(c.take(len, "id")?)
            .map_err(|_| Error::Format {
                path: path.to_path_buf(),
                offset: start as u64,
                message: "utterance id is not UTF-8".into(),
            })?
            .to_string();
        let t = c.u32("frame count")? as usize;
        let d = c.u32("feature dim")? as usize;
        let payload = c.take(t * d * 4, "frames")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        out.push((id, Tensor::matrix(t, d, data)?));
    }
    Ok(out)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes one split; returns the files produced.
pub fn save_split(dir: &Path, split: &str, corpus: &Corpus) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = CorpusFiles::new(dir);
    let (m, f) = (files.manifest(split), files.features(split));
    write_file(&m, |w| write_manifest(w, corpus))?;
    write_file(&f, |w| write_features(w, corpus))?;
    Ok(vec![m, f])
}

fn write_vocabs(files: &CorpusFiles, src_vocab: usize, tgt_vocab: usize) -> Result<Vec<PathBuf>> {
    let (s, t) = (files.src_vocab(), files.tgt_vocab());
    write_file(&s, |w| {
        writeln!(w, "# source token ids, one per line; the CTC blank is id {src_vocab}")?;
        for v in 0..src_vocab {
            writeln!(w, "{v}")?;
        }
        writeln!(w, "{src_vocab}\t<blank>")
    })?;
    write_file(&t, |w| {
        writeln!(w, "# target token ids, one per line; end-of-sequence is id 0")?;
        writeln!(w, "0\t<eos>")?;
        for v in 1..=tgt_vocab {
            writeln!(w, "{v}")?;
        }
        Ok(())
    })?;
    Ok(vec![s, t])
}

/// Counts the non-reserved ids in a vocabulary file.
fn read_vocab_size(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#') && !l.contains('<'))
        .count())
}

/// Writes both splits, the vocabularies and, when given, the spec that
/// generated them. Returns every file written.
pub fn save_corpus(dir: &Path, corpus: &SyntheticCorpus, spec: Option<&SynthSpec>) -> Result<Vec<PathBuf>> {
    let mut out = save_split(dir, "train", &corpus.train)?;
    out.extend(save_split(dir, "test", &corpus.test)?);
    let files = CorpusFiles::new(dir);
    out.extend(write_vocabs(&files, corpus.train.src_vocab, corpus.train.tgt_vocab)?);
    if let Some(spec) = spec {
        let p = files.spec();
        fs::write(&p, spec.to_config_text()).map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}

/// Loads one split, cross-checking the manifest against the feature file.
pub fn load_split(dir: &Path, split: &str) -> Result<Corpus> {
    let files = CorpusFiles::new(dir);
    let src_vocab = read_vocab_size(&files.src_vocab())?;
    let tgt_vocab = read_vocab_size(&files.tgt_vocab())?;
    let mpath = files.manifest(split);
    let fpath = files.features(split);
    let rows = read_manifest(File::open(&mpath).map_err(|e| Error::io(&mpath, e))?, &mpath)?;
    let mut ffile = BufReader::new(File::open(&fpath).map_err(|e| Error::io(&fpath, e))?);
    let feats = read_features(&mut ffile, &fpath)?;
    if rows.len() != feats.len() {
        return Err(Error::InvalidInput(format!(
            "{} lists {} utterances but {} holds {}",
            mpath.display(),
            rows.len(),
            fpath.display(),
            feats.len()
        )));
    }
    let mut feature_dim = None;
    let mut utterances = Vec::with_capacity(rows.len());
    for (row, (id, frames)) in rows.into_iter().zip(feats) {
        if row.id != id || row.frames != frames.rows() {
            return Err(Error::InvalidInput(format!(
                "manifest row {} ({} frames) does not match feature record {id} ({} frames)",
                row.id,
                row.frames,
                frames.rows()
            )));
        }
        let d = *feature_dim.get_or_insert(frames.cols());
        if d != frames.cols() {
            return Err(Error::InvalidInput(format!("utterance {id}: feature dim {} != {d}", frames.cols())));
        }
        utterances.push(Utterance {
            transcription: SourceTranscription::new(row.transcription, src_vocab)?,
            translation: TargetSequence::new(row.translation, tgt_vocab)?,
            gold_boundaries: row.gold_boundaries,
            frames,
            id,
        });
    }
    Corpus::new(feature_dim.unwrap_or(0), src_vocab, tgt_vocab, utterances)
}

pub fn load_corpus(dir: &Path) -> Result<SyntheticCorpus> {
    Ok(SyntheticCorpus {
        train: load_split(dir, "train")?,
        test: load_split(dir, "test")?,
    })
}
