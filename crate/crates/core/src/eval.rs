//! Link-level precision, recall and F1, the recent-candidate baseline,
//! ablation runs and threshold sweeps.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{candidates_unchecked, Document, Mention, PronounInstance, PronounType};
use crate::error::{Error, Result};
use crate::model::{KnowledgeSource, Model, PronounPrediction};
use crate::spkb::SpKnowledgeBase;
use crate::training::{train, TrainConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub predicted_links: usize,
    pub gold_links: usize,
    pub correct_links: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TypeScores {
    pub fn from_counts(predicted: usize, gold: usize, correct: usize) -> Self {
        let precision = match (predicted, correct) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => correct as f64 / predicted as f64,
        };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        TypeScores {
            predicted_links: predicted,
            gold_links: gold,
            correct_links: correct,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub third_personal: TypeScores,
    pub possessive: TypeScores,
    pub all: TypeScores,
}

impl EvalReport {
    pub fn get(&self, ptype: Option<PronounType>) -> &TypeScores {
        match ptype {
            Some(PronounType::ThirdPersonal) => &self.third_personal,
            Some(PronounType::Possessive) => &self.possessive,
            None => &self.all,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("ptype\tpredicted\tgold\tcorrect\tP\tR\tF1\n");
        for (name, s) in self.rows() {
            let _ = writeln!(
                out,
                "{name}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                s.predicted_links, s.gold_links, s.correct_links, s.precision, s.recall, s.f1
            );
        }
        out
    }

    /// Header plus one row of percentages: P, R, F1 for each pronoun type then overall.
    pub fn to_text(&self, label: &str) -> String {
        text_header() + &self.text_row(label)
    }

    fn text_row(&self, label: &str) -> String {
        let mut out = format!("{label:<24}");
        for (_, s) in self.rows() {
            out.push_str(&format!(
                "{:>8.1}{:>8.1}{:>8.1}",
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1
            ));
        }
        out.push('\n');
        out
    }

    fn rows(&self) -> [(&'static str, &TypeScores); 3] {
        [
            ("third_personal", &self.third_personal),
            ("possessive", &self.possessive),
            ("all", &self.all),
        ]
    }
}

fn text_header() -> String {
    let mut out = format!(
        "{:<24}{:^24}{:^24}{:^24}\n{:<24}",
        "", "Third Personal", "Possessive", "All", "Model"
    );
    for _ in 0..3 {
        out.push_str(&format!("{:>8}{:>8}{:>8}", "P", "R", "F1"));
    }
    out.push('\n');
    out
}

/// One table with a row per labelled report.
pub fn text_table(rows: &[(String, EvalReport)]) -> String {
    rows.iter().fold(text_header(), |out, (label, r)| out + &r.text_row(label))
}

/// A predicted coreference link `(doc_id, pronoun_id, mention_id)`.
pub type Link = (String, String, String);

pub fn prediction_links(preds: &[PronounPrediction]) -> Vec<Link> {
    preds
        .iter()
        .flat_map(|p| {
            p.predicted()
                .map(|m| (p.doc_id.clone(), p.pronoun_id.clone(), m.to_string()))
        })
        .collect()
}

fn pronoun_index(gold: &[Document]) -> HashMap<(&str, &str), &PronounInstance> {
    gold.iter()
        .flat_map(|d| d.pronouns.iter().map(move |p| ((d.doc_id.as_str(), p.pronoun_id.as_str()), p)))
        .collect()
}

/// Scores links against every pronoun of `gold` accepted by `keep`.
/// Repeated links count once.
pub fn score_links_filtered(links: &[Link], gold: &[Document], keep: &dyn Fn(&str, &PronounInstance) -> bool) -> Result<EvalReport> {
    let index = pronoun_index(gold);
    let mut predicted = [0usize; 2];
    let mut correct = [0usize; 2];
    let mut gold_links = [0usize; 2];
    let slot = |p: &PronounInstance| match p.ptype {
        PronounType::ThirdPersonal => 0,
        PronounType::Possessive => 1,
    };
    let unique: BTreeSet<&Link> = links.iter().collect();
    for (doc_id, pronoun_id, mention_id) in unique {
        let p = index
            .get(&(doc_id.as_str(), pronoun_id.as_str()))
            .ok_or_else(|| Error::UnknownPrediction {
                doc_id: doc_id.clone(),
                pronoun_id: pronoun_id.clone(),
            })?;
        if !keep(doc_id, p) {
            continue;
        }
        predicted[slot(p)] += 1;
        if p.gold_refs.contains(mention_id) {
            correct[slot(p)] += 1;
        }
    }
    for d in gold {
        for p in d.pronouns.iter().filter(|p| keep(&d.doc_id, p)) {
            gold_links[slot(p)] += p.gold_refs.len();
        }
    }
    Ok(EvalReport {
        third_personal: TypeScores::from_counts(predicted[0], gold_links[0], correct[0]),
        possessive: TypeScores::from_counts(predicted[1], gold_links[1], correct[1]),
        all: TypeScores::from_counts(
            predicted.iter().sum(),
            gold_links.iter().sum(),
            correct.iter().sum(),
        ),
    })
}

pub fn score_links(links: &[Link], gold: &[Document]) -> Result<EvalReport> {
    score_links_filtered(links, gold, &|_, _| true)
}

fn check_known(preds: &[PronounPrediction], gold: &[Document]) -> Result<()> {
    let index = pronoun_index(gold);
    match preds
        .iter()
        .find(|p| !index.contains_key(&(p.doc_id.as_str(), p.pronoun_id.as_str())))
    {
        Some(p) => Err(Error::UnknownPrediction {
            doc_id: p.doc_id.clone(),
            pronoun_id: p.pronoun_id.clone(),
        }),
        None => Ok(()),
    }
}

pub fn score_predictions(preds: &[PronounPrediction], gold: &[Document]) -> Result<EvalReport> {
    check_known(preds, gold)?;
    score_links(&prediction_links(preds), gold)
}

pub fn score_predictions_filtered(
    preds: &[PronounPrediction],
    gold: &[Document],
    keep: &dyn Fn(&str, &PronounInstance) -> bool,
) -> Result<EvalReport> {
    check_known(preds, gold)?;
    score_links_filtered(&prediction_links(preds), gold, keep)
}

/// The closest non-pronominal mention in the window that starts before the pronoun.
pub fn recent_candidate_baseline<'d>(doc: &'d Document, p: &PronounInstance) -> Option<&'d Mention> {
    candidates_unchecked(doc, p)
        .into_iter()
        .filter(|m| (m.sentence_idx, m.start) < (p.sentence_idx, p.token_idx))
        .max_by_key(|m| (m.sentence_idx, m.start))
}

pub fn baseline_links(docs: &[Document]) -> Vec<Link> {
    docs.iter()
        .flat_map(|d| {
            d.pronouns.iter().filter_map(move |p| {
                recent_candidate_baseline(d, p).map(|m| (d.doc_id.clone(), p.pronoun_id.clone(), m.mention_id.clone()))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Source(KnowledgeSource),
    KnowledgeAttention,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knowledge_attention" | "attention" => Ok(Ablation::KnowledgeAttention),
            other => other.parse().map(Ablation::Source),
        }
    }
}

/// Training configuration with `disabled` removed.
pub fn ablated_config(config: &TrainConfig, disabled: &[Ablation]) -> TrainConfig {
    let sources: Vec<KnowledgeSource> = disabled
        .iter()
        .filter_map(|a| match a {
            Ablation::Source(s) => Some(*s),
            Ablation::KnowledgeAttention => None,
        })
        .collect();
    let mut out = config.clone();
    out.model = config.model.without(&sources);
    if disabled.contains(&Ablation::KnowledgeAttention) {
        out.model.knowledge_attention = false;
    }
    out
}

pub struct AblationRun {
    pub model: Model,
    pub report: EvalReport,
    pub predictions: Vec<PronounPrediction>,
}

/// Trains the reduced model and evaluates it on `test`.
pub fn run_ablation(
    train_docs: &[Document],
    dev_docs: &[Document],
    test_docs: &[Document],
    kb: &SpKnowledgeBase,
    config: &TrainConfig,
    disabled: &[Ablation],
) -> Result<AblationRun> {
    let config = ablated_config(config, disabled);
    let outcome = train(train_docs, dev_docs, kb, &config)?;
    let predictions = outcome
        .model
        .resolve_corpus(test_docs, kb, config.prune_threshold, 1)?;
    let report = score_predictions(&predictions, test_docs)?;
    Ok(AblationRun {
        model: outcome.model,
        report,
        predictions,
    })
}

/// Published change in overall F1 for each single removal, printed for reference.
pub const REFERENCE_DELTAS: [(&str, f64); 4] = [
    ("plurality", -0.3),
    ("ag", -0.5),
    ("sp", -0.6),
    ("knowledge_attention", -0.9),
];

/// Table of overall F1 and its change against the first row.
pub fn ablation_table(rows: &[(String, EvalReport)]) -> String {
    let mut out = format!("{:<28}{:>8}{:>8}\n", "model", "F1", "ΔF1");
    let base = rows.first().map(|(_, r)| r.all.f1).unwrap_or(0.0);
    for (i, (name, r)) in rows.iter().enumerate() {
        let delta = if i == 0 {
            "-".to_string()
        } else {
            format!("{:+.1}", 100.0 * (r.all.f1 - base))
        };
        let _ = writeln!(out, "{name:<28}{:>8.1}{delta:>8}", 100.0 * r.all.f1);
    }
    out.push_str("reference ΔF1:");
    for (name, d) in REFERENCE_DELTAS {
        let _ = write!(out, " {name} {d:+.1}");
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub max_kept: usize,
    pub mean_kept: f64,
    pub mean_candidates: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn threshold_sweep(
    model: &Model,
    docs: &[Document],
    kb: &SpKnowledgeBase,
    thresholds: &[f64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        if !(0.0..1.0).contains(&t) {
            return Err(Error::Config(format!("threshold {t} outside [0, 1)")));
        }
        let preds = model.resolve_corpus(docs, kb, t, jobs)?;
        let report = score_predictions(&preds, docs)?;
        let n = preds.len().max(1) as f64;
        rows.push(SweepRow {
            threshold: t,
            max_kept: preds.iter().map(|p| p.kept_count()).max().unwrap_or(0),
            mean_kept: preds.iter().map(|p| p.kept_count()).sum::<usize>() as f64 / n,
            mean_candidates: preds.iter().map(|p| p.candidates.len()).sum::<usize>() as f64 / n,
            precision: report.all.precision,
            recall: report.all.recall,
            f1: report.all.f1,
        });
    }
    Ok(rows)
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold\tmax_kept\tmean_kept\tmean_candidates\tP\tR\tF1\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.threshold, r.max_kept, r.mean_kept, r.mean_candidates, r.precision, r.recall, r.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{dog_cat_tree, mention};
    use proptest::prelude::*;

    fn link(p: &str, m: &str) -> Link {
        ("d".into(), p.into(), m.into())
    }

    fn doc_with_two_gold() -> Document {
        let mut d = dog_cat_tree();
        d.doc_id = "d".into();
        d.pronouns[0].gold_refs.insert("m0".into());
        d
    }

    #[test]
    fn perfect_and_half() {
        let d = doc_with_two_gold();
        let gold = std::slice::from_ref(&d);
        let perfect = score_links(&[link("p0", "m0"), link("p0", "m1")], gold).unwrap();
        assert_eq!((perfect.all.precision, perfect.all.recall, perfect.all.f1), (1.0, 1.0, 1.0));
        let half = score_links(&[link("p0", "m0"), link("p0", "m2")], gold).unwrap();
        assert_eq!((half.all.precision, half.all.recall, half.all.f1), (0.5, 0.5, 0.5));
        assert_eq!(half.third_personal, half.all);
        assert_eq!(half.possessive.gold_links, 0);
        let dup = score_links(&[link("p0", "m0"), link("p0", "m0")], gold).unwrap();
        assert_eq!(dup.all.predicted_links, 1);
    }

    #[test]
    fn degenerate_precision() {
        assert_eq!(TypeScores::from_counts(0, 3, 0).precision, 1.0);
        assert_eq!(TypeScores::from_counts(0, 3, 0).f1, 0.0);
        assert_eq!(TypeScores::from_counts(2, 3, 0).f1, 0.0);
        assert_eq!(TypeScores::from_counts(0, 0, 0).recall, 0.0);
    }

    #[test]
    fn unknown_pronoun_is_an_error() {
        let d = doc_with_two_gold();
        let err = score_links(&[link("p9", "m0")], std::slice::from_ref(&d)).unwrap_err();
        assert!(matches!(err, Error::UnknownPrediction { .. }));
    }

    #[test]
    fn baseline_picks_latest_preceding() {
        let d = dog_cat_tree();
        assert_eq!(recent_candidate_baseline(&d, &d.pronouns[0]).unwrap().mention_id, "m1");
        let mut only_after = d.clone();
        only_after.mentions.retain(|m| m.mention_id == "m2" || m.is_pronominal);
        assert!(recent_candidate_baseline(&only_after, &only_after.pronouns[0]).is_none());
        let mut none = d.clone();
        none.mentions.retain(|m| m.is_pronominal);
        assert!(recent_candidate_baseline(&none, &none.pronouns[0]).is_none());
    }

    #[test]
    fn baseline_respects_window() {
        let mut d = dog_cat_tree();
        d.sentences = vec![vec!["the".into(), "owl".into()], vec!["x".into()], vec!["y".into()]];
        d.sentences.push(dog_cat_tree().sentences[0].clone());
        for m in &mut d.mentions {
            m.sentence_idx = 3;
        }
        d.mentions.push(mention("m9", 0, 1, 1, "owl"));
        d.pronouns[0].sentence_idx = 3;
        d.pronouns[0].token_idx = 0;
        assert!(recent_candidate_baseline(&d, &d.pronouns[0]).is_none());
        d.pronouns[0].token_idx = 7;
        assert_eq!(recent_candidate_baseline(&d, &d.pronouns[0]).unwrap().mention_id, "m1");
    }

    #[test]
    fn report_formats() {
        let d = doc_with_two_gold();
        let r = score_links(&[link("p0", "m0")], std::slice::from_ref(&d)).unwrap();
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.contains("all\t1\t2\t1\t1.0000\t0.5000\t0.6667"));
        let text = r.to_text("The Complete Model");
        assert!(text.contains("Third Personal") && text.contains("66.7"));
        let table = ablation_table(&[("complete".into(), r), ("-sp".into(), r)]);
        assert!(table.contains("+0.0") && table.contains("knowledge_attention -0.9"));
    }

    #[test]
    fn ablation_names() {
        assert_eq!("sp".parse::<Ablation>().unwrap(), Ablation::Source(KnowledgeSource::Sp));
        assert_eq!("knowledge_attention".parse::<Ablation>().unwrap(), Ablation::KnowledgeAttention);
        assert!("color".parse::<Ablation>().is_err());
        let c = ablated_config(&TrainConfig::default(), &[]);
        assert_eq!(c, TrainConfig::default());
        let c = ablated_config(&TrainConfig::default(), &[Ablation::KnowledgeAttention, Ablation::Source(KnowledgeSource::Ag)]);
        assert!(!c.model.knowledge_attention);
        assert_eq!(c.model.sources, vec![KnowledgeSource::Plurality, KnowledgeSource::Sp]);
    }

    fn arb_corpus_and_links() -> impl Strategy<Value = (Vec<Document>, Vec<Link>)> {
        let doc = dog_cat_tree();
        (
            proptest::collection::btree_set(0..3usize, 0..=3),
            proptest::collection::vec((0..3usize, any::<bool>()), 0..8),
            any::<bool>(),
        )
            .prop_map(move |(gold, picks, possessive)| {
                let mut d = doc.clone();
                d.doc_id = "d".into();
                d.pronouns[0].gold_refs = gold.iter().map(|i| format!("m{i}")).collect();
                if possessive {
                    d.sentences[0][7] = "its".into();
                    d.pronouns[0].surface = "its".into();
                    d.pronouns[0].ptype = PronounType::Possessive;
                }
                let links = picks.iter().map(|(i, _)| link("p0", &format!("m{i}"))).collect();
                (vec![d], links)
            })
    }

    proptest! {
        #[test]
        fn scores_bounded_and_order_free((docs, links) in arb_corpus_and_links(), seed in any::<u64>()) {
            let r = score_links(&links, &docs).unwrap();
            for s in [r.third_personal, r.possessive, r.all] {
                prop_assert!((0.0..=1.0).contains(&s.precision));
                prop_assert!((0.0..=1.0).contains(&s.recall));
                prop_assert!((0.0..=1.0).contains(&s.f1));
                if s.precision == 0.0 || s.recall == 0.0 {
                    prop_assert_eq!(s.f1, 0.0);
                }
            }
            prop_assert_eq!(r.all.predicted_links, r.third_personal.predicted_links + r.possessive.predicted_links);
            prop_assert_eq!(r.all.gold_links, r.third_personal.gold_links + r.possessive.gold_links);
            prop_assert_eq!(r.all.correct_links, r.third_personal.correct_links + r.possessive.correct_links);
            let mut shuffled = links.clone();
            let n = shuffled.len();
            if n > 1 {
                shuffled.rotate_left((seed as usize) % n);
                shuffled.reverse();
            }
            prop_assert_eq!(score_links(&shuffled, &docs).unwrap(), r);
        }
    }
}
