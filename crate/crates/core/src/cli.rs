//! Command-line entry point. Each subcommand reads its inputs, writes its
//! artifacts under `--out`, and reports errors as a single line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_candidates, load_corpus, save_corpus, Document};
use crate::error::{Error, Result};
use crate::eval::{score_predictions, score_predictions_filtered, sweep_tsv, text_table, threshold_sweep, Ablation};
use crate::features::KnowledgeFeatureVector;
use crate::model::{load_predictions, save_predictions, PronounPrediction};
use crate::spkb::{build_sharded, load_edges, load_kb, save_kb, write_edges, SpKnowledgeBase};
use crate::synth::{generate, read_subsets, write_subsets, Subset, SynthConfig};
use crate::training::{load_checkpoint, save_checkpoint, train, TrainConfig};

pub const SEED_ENV: &str = "KNOWPRON_SEED";

/// Input locations a config file may carry; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kb: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
            config.synth.seed = seed;
            config.train.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Debug, Parser)]
#[command(name = "knowpron", version, about = "Pronoun coreference with knowledge attention")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Print the default run configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_defaults: bool,
    /// Worker threads for KB ingest and corpus resolution.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate dependency edges into a bucketable count table.
    BuildKb {
        #[arg(long, num_args = 1.., required = true)]
        edges: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus, its edge stream and subset labels.
    GenSynth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Knowledge source to disable (plurality, ag, sp) or `knowledge_attention`.
        #[arg(long)]
        ablate: Vec<Ablation>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resolve every pronoun of a corpus and write predictions as JSON Lines.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a gold corpus.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Subset labels written by `gen-synth`; adds one report per subset.
        #[arg(long)]
        subsets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precision, recall and kept candidates across pruning thresholds.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1e-7,1e-4,1e-2,1e-1,0.5")]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Knowledge feature values of every (pronoun, candidate) pair as TSV.
    DumpFeatures {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Knowledge attention weights from a prediction file as TSV.
    DumpAttention {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => fs::create_dir_all(parent).map_err(|e| Error::io(parent, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Error::Config(format!("--{name} is required (or set paths.{name} in the config)")))
}

/// Runs one parsed command. Output goes to files; the returned string is
/// printed to stdout.
pub fn run(cli: Cli) -> Result<String> {
    if cli.print_defaults {
        return Ok(serde_json::to_string_pretty(&RunConfig::default())? + "\n");
    }
    let jobs = cli.jobs.max(1);
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given".into()));
    };
    match command {
        Command::BuildKb { edges, out } => {
            let mut stream = Vec::new();
            for path in &edges {
                stream.extend(load_edges(path)?);
            }
            let kb = build_sharded(&stream, jobs)?;
            ensure_parent(&out)?;
            save_kb(&kb, &out)?;
            Ok(format!("{} edges, {} keys -> {}\n", stream.len(), kb.len(), out.display()))
        }
        Command::GenSynth { config, out } => {
            let run = RunConfig::load(config.as_deref())?;
            let corpus = generate(&run.synth)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            save_corpus(out.join("train.jsonl"), &corpus.train)?;
            save_corpus(out.join("dev.jsonl"), &corpus.dev)?;
            save_corpus(out.join("test.jsonl"), &corpus.test)?;
            let mut edges = Vec::new();
            write_edges(&mut edges, &corpus.edges)?;
            write_file(&out.join("edges.tsv"), edges)?;
            save_kb(&corpus.kb, out.join("kb.tsv"))?;
            let mut subsets = Vec::new();
            write_subsets(&mut subsets, &corpus.subsets)?;
            write_file(&out.join("subsets.tsv"), subsets)?;
            write_file(&out.join("synth.json"), serde_json::to_string_pretty(&run.synth)? + "\n")?;
            Ok(format!(
                "{} / {} / {} documents -> {}\n",
                corpus.train.len(),
                corpus.dev.len(),
                corpus.test.len(),
                out.display()
            ))
        }
        Command::Train {
            train: train_path,
            dev,
            kb,
            config,
            ablate,
            out,
        } => {
            let run = RunConfig::load(config.as_deref())?;
            let train_docs = load_corpus(required(train_path, &run.paths.train, "train")?)?;
            let dev_docs = match dev.or(run.paths.dev.clone()) {
                Some(p) => load_corpus(p)?,
                None => Vec::new(),
            };
            let kb = load_kb(required(kb, &run.paths.kb, "kb")?)?;
            let config = crate::eval::ablated_config(&run.train, &ablate);
            let outcome = train(&train_docs, &dev_docs, &kb, &config)?;
            save_checkpoint(&outcome.model, &out)?;
            let mut history = String::from("epoch\tmean_loss\ttrained\tskipped\tdev_f1\n");
            for r in &outcome.history {
                let _ = writeln!(
                    history,
                    "{}\t{:.6}\t{}\t{}\t{:.4}",
                    r.epoch, r.mean_loss, r.trained_pronouns, r.skipped_pronouns, r.dev_f1
                );
            }
            write_file(&out.join("history.tsv"), history)?;
            write_file(&out.join("train.json"), serde_json::to_string_pretty(&config)? + "\n")?;
            Ok(format!("best epoch {} -> {}\n", outcome.best_epoch, out.display()))
        }
        Command::Predict {
            model,
            corpus,
            kb,
            threshold,
            out,
        } => {
            let model = load_checkpoint(&model)?;
            let docs = load_corpus(&corpus)?;
            let kb = load_kb(&kb)?;
            let t = threshold.unwrap_or(TrainConfig::default().prune_threshold);
            let preds = model.resolve_corpus(&docs, &kb, t, jobs)?;
            ensure_parent(&out)?;
            save_predictions(&out, &preds)?;
            Ok(format!("{} pronouns -> {}\n", preds.len(), out.display()))
        }
        Command::Eval {
            pred,
            gold,
            subsets,
            out,
        } => {
            let preds = load_predictions(&pred)?;
            let docs = load_corpus(&gold)?;
            let mut reports = vec![("all".to_string(), score_predictions(&preds, &docs)?)];
            if let Some(path) = subsets {
                let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                let labels = read_subsets(file)?;
                for subset in Subset::ALL {
                    let keep =
                        |doc: &str, p: &crate::corpus::PronounInstance| labels.get(&(doc.to_string(), p.pronoun_id.clone())) == Some(&subset);
                    reports.push((subset.to_string(), score_predictions_filtered(&preds, &docs, &keep)?));
                }
            }
            let text = text_table(&reports);
            if let Some(dir) = out {
                let tsv: String = reports
                    .iter()
                    .flat_map(|(name, r)| r.to_tsv().lines().skip(1).map(|l| format!("{name}\t{l}\n")).collect::<Vec<_>>())
                    .collect();
                let header = reports[0].1.to_tsv().lines().next().unwrap_or_default().to_string();
                write_file(&dir.join("report.tsv"), format!("subset\t{header}\n{tsv}"))?;
                write_file(&dir.join("report.txt"), &text)?;
            }
            Ok(text)
        }
        Command::Sweep {
            model,
            corpus,
            kb,
            thresholds,
            out,
        } => {
            let model = load_checkpoint(&model)?;
            let docs = load_corpus(&corpus)?;
            let kb = load_kb(&kb)?;
            let rows = threshold_sweep(&model, &docs, &kb, &thresholds, jobs)?;
            let tsv = sweep_tsv(&rows);
            write_file(&out, &tsv)?;
            Ok(tsv)
        }
        Command::DumpFeatures { corpus, kb, out } => {
            let docs = load_corpus(&corpus)?;
            let kb = load_kb(&kb)?;
            write_file(&out, feature_tsv(&docs, &kb)?)?;
            Ok(format!("features -> {}\n", out.display()))
        }
        Command::DumpAttention { pred, out } => {
            let preds = load_predictions(&pred)?;
            write_file(&out, attention_tsv(&preds))?;
            Ok(format!("attention -> {}\n", out.display()))
        }
    }
}

pub fn feature_tsv(docs: &[Document], kb: &SpKnowledgeBase) -> Result<String> {
    let mut out = String::from("doc_id\tpronoun_id\tmention_id\tgold\tplurality\tag\tsp\n");
    for d in docs {
        for p in &d.pronouns {
            for m in extract_candidates(d, p)? {
                let f = KnowledgeFeatureVector::compute(m, p, kb);
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    d.doc_id,
                    p.pronoun_id,
                    m.mention_id,
                    u8::from(p.gold_refs.contains(&m.mention_id)),
                    f.plurality,
                    f.ag,
                    f.sp.value()
                );
            }
        }
    }
    Ok(out)
}

/// One row per (pronoun, candidate, other survivor, source).
pub fn attention_tsv(preds: &[PronounPrediction]) -> String {
    let mut out = String::from("doc_id\tpronoun_id\tcandidate\tother\tsource\tweight\tsource_score\n");
    for p in preds {
        for pair in &p.attention_trace {
            for ((source, w), s) in p.sources.iter().zip(&pair.weights).zip(&pair.source_scores) {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                    p.doc_id, p.pronoun_id, pair.candidate, pair.other, source, w, s
                );
            }
        }
    }
    out
}
