use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Where a speech-translation parameter came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Asr,
    Mt,
    Fresh,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Asr => "asr",
            Self::Mt => "mt",
            Self::Fresh => "fresh",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProvenanceReport {
    /// Every parameter of the result, in name order.
    pub entries: Vec<(String, Provenance)>,
    /// Checkpoint tensors with no counterpart in the model (e.g. the text
    /// embedding of the MT model).
    pub dropped: Vec<String>,
}

impl ProvenanceReport {
    pub fn names(&self, source: Provenance) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, p)| *p == source)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "parameter,source")?;
        for (name, p) in &self.entries {
            writeln!(w, "{name},{p}")?;
        }
        Ok(())
    }
}

/// The pre-trained model a parameter is taken from.
fn source_of(name: &str) -> Provenance {
    let group = name.split('.').next().unwrap_or("");
    match group {
        "acoustic" | "ctc" => Provenance::Asr,
        "semantic" | "decoder" => Provenance::Mt,
        _ => Provenance::Fresh,
    }
}

/// Copies the acoustic encoder and CTC head from `asr` and the semantic
/// encoder and decoder from `mt` into `st_params`; everything else keeps its
/// fresh value. An absent checkpoint leaves its groups fresh.
pub fn init_from_pretrained(
    st_params: &ParamStore,
    asr: Option<&ParamStore>,
    mt: Option<&ParamStore>,
) -> Result<(ParamStore, ProvenanceReport)> {
    let mut out = st_params.clone();
    let mut report = ProvenanceReport::default();
    for (source, ckpt) in [(Provenance::Asr, asr), (Provenance::Mt, mt)] {
        let Some(ckpt) = ckpt else { continue };
        let wanted: Vec<&str> = st_params.names().filter(|n| source_of(n) == source).collect();
        let missing: Vec<String> = wanted
            .iter()
            .filter(|n| !ckpt.contains(n))
            .map(|n| n.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingParameters(missing));
        }
        for name in wanted {
            let t = ckpt.require(name)?;
            let expected = st_params.require(name)?.shape();
            if t.shape() != expected {
                return Err(Error::ParameterShape {
                    name: name.to_string(),
                    expected: expected.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            out.insert(name, t.clone());
        }
        report.dropped.extend(
            ckpt.names()
                .filter(|n| !st_params.contains(n) || source_of(n) != source)
                .map(str::to_string),
        );
    }
    report.entries = out
        .names()
        .map(|n| {
            let p = match source_of(n) {
                Provenance::Asr if asr.is_some() => Provenance::Asr,
                Provenance::Mt if mt.is_some() => Provenance::Mt,
                _ => Provenance::Fresh,
            };
            (n.to_string(), p)
        })
        .collect();
    report.dropped.sort();
    Ok((out, report))
}
