#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use knowpron::corpus::{Animacy, Document, Gender, Mention, Plurality, PronounInstance, PronounType};
use knowpron::spkb::{Edge, SpKnowledgeBase};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_knowpron")
}

/// Runs the binary and returns its output, panicking with stderr on failure.
pub fn knowpron(args: &[&str]) -> Output {
    let out = Command::new(bin()).args(args).output().expect("spawn knowpron");
    assert!(
        out.status.success(),
        "knowpron {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn mention(id: &str, start: usize, end: usize, head: &str, animacy: Animacy) -> Mention {
    Mention {
        mention_id: id.into(),
        sentence_idx: 0,
        start,
        end,
        head_lemma: head.into(),
        plurality: Plurality::Singular,
        animacy,
        gender: Gender::Neutral,
        is_pronominal: false,
    }
}

/// "the dog is chasing the cat but it climbs the tree ."
pub fn toy_document() -> Document {
    let mut it = mention("m3", 7, 7, "it", Animacy::Unknown);
    it.is_pronominal = true;
    it.gender = Gender::Unknown;
    Document {
        doc_id: "toy".into(),
        sentences: vec!["the dog is chasing the cat but it climbs the tree ."
            .split(' ')
            .map(String::from)
            .collect()],
        mentions: vec![
            mention("m0", 0, 1, "dog", Animacy::Animate),
            mention("m1", 4, 5, "cat", Animacy::Animate),
            mention("m2", 9, 10, "tree", Animacy::Inanimate),
            it,
        ],
        pronouns: vec![PronounInstance {
            pronoun_id: "p0".into(),
            sentence_idx: 0,
            token_idx: 7,
            surface: "it".into(),
            ptype: PronounType::ThirdPersonal,
            gold_refs: ["m1".to_string()].into_iter().collect(),
            governor_lemma: Some("climb".into()),
            dep_relation: Some(knowpron::spkb::Relation::Nsubj),
        }],
    }
}

pub fn toy_kb() -> SpKnowledgeBase {
    let mut kb = SpKnowledgeBase::new();
    for (arg, count) in [("cat", 40), ("dog", 3), ("tree", 1)] {
        kb.ingest(&Edge::with_count("climb", arg, "nsubj", count)).unwrap();
    }
    kb
}

/// Output locations of one pipeline run.
pub struct PipelineRun {
    pub root: PathBuf,
}

impl PipelineRun {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        fs::read(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

/// gen-synth, build-kb, train, predict and eval under `root` with `config`.
pub fn run_pipeline(root: &Path, config: &str) -> PipelineRun {
    let config_path = root.join("run.json");
    fs::write(&config_path, config).unwrap();
    let p = |rel: &str| root.join(rel).to_string_lossy().into_owned();
    let cfg = p("run.json");
    knowpron(&["gen-synth", "--config", &cfg, "--out", &p("synth")]);
    knowpron(&["build-kb", "--edges", &p("synth/edges.tsv"), "--out", &p("kb.tsv")]);
    knowpron(&[
        "train", "--config", &cfg, "--train", &p("synth/train.jsonl"), "--dev", &p("synth/dev.jsonl"),
        "--kb", &p("kb.tsv"), "--out", &p("model"),
    ]);
    knowpron(&[
        "predict", "--model", &p("model"), "--corpus", &p("synth/test.jsonl"), "--kb", &p("kb.tsv"),
        "--out", &p("pred.jsonl"),
    ]);
    knowpron(&[
        "eval", "--pred", &p("pred.jsonl"), "--gold", &p("synth/test.jsonl"), "--subsets",
        &p("synth/subsets.tsv"), "--out", &p("report"),
    ]);
    PipelineRun { root: root.to_path_buf() }
}

/// A small corpus and model that train in a few seconds.
pub const SMALL_RUN: &str = r#"{
  "synth": {"num_documents": 60, "pronouns_per_doc": 4},
  "train": {
    "epochs": 3,
    "model": {"word_dim": 8, "lstm_hidden": 8, "ffnn_hidden": [16, 16], "knowledge_dim": 4, "width_dim": 4}
  }
}"#;
