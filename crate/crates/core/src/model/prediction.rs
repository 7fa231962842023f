use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::KnowledgeSource;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub mention_id: String,
    /// First-layer score `F_c`.
    pub context_score: f64,
    /// Softmax of `F_c` over all candidates of the pronoun.
    pub pruning_probability: f64,
    pub kept: bool,
    /// `F_k`; absent for pruned candidates and for models without a second layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_score: Option<f64>,
    /// Overall score `F`; absent for pruned candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub predicted: bool,
}

/// Knowledge attention of `candidate` against `other`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairAttention {
    pub candidate: String,
    pub other: String,
    /// `w_i`, one per source in [`PronounPrediction::sources`] order.
    pub weights: Vec<f64>,
    /// `f_k^i`, same order.
    pub source_scores: Vec<f64>,
    /// `Σ_i w_i · f_k^i`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PronounPrediction {
    pub doc_id: String,
    pub pronoun_id: String,
    pub sources: Vec<KnowledgeSource>,
    pub candidates: Vec<CandidateRecord>,
    pub attention_trace: Vec<PairAttention>,
}

impl PronounPrediction {
    pub fn predicted(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().filter(|c| c.predicted).map(|c| c.mention_id.as_str())
    }

    pub fn kept_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.kept).count()
    }
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PronounPrediction>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<predictions>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PronounPrediction>> {
    let path = path.as_ref();
    read_predictions(File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_predictions<W: Write>(mut writer: W, preds: &[PronounPrediction]) -> Result<()> {
    for p in preds {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

pub fn save_predictions(path: impl AsRef<Path>, preds: &[PronounPrediction]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_predictions(&mut w, preds)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_is_exact() {
        let p = PronounPrediction {
            doc_id: "d".into(),
            pronoun_id: "p0".into(),
            sources: vec![KnowledgeSource::Sp],
            candidates: vec![
                CandidateRecord {
                    mention_id: "m0".into(),
                    context_score: 0.1 + 0.2,
                    pruning_probability: 1.0 / 3.0,
                    kept: true,
                    knowledge_score: Some(-1e-300),
                    score: Some(std::f64::consts::PI),
                    predicted: true,
                },
                CandidateRecord {
                    mention_id: "m1".into(),
                    context_score: -20.0,
                    pruning_probability: 2e-9,
                    kept: false,
                    knowledge_score: None,
                    score: None,
                    predicted: false,
                },
            ],
            attention_trace: vec![],
        };
        let mut buf = Vec::new();
        write_predictions(&mut buf, std::slice::from_ref(&p)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains("null"));
        assert_eq!(read_predictions(&buf[..]).unwrap(), vec![p]);
        assert!(read_predictions(&b"{\"doc_id\": 1}\n"[..]).is_err());
    }
}
