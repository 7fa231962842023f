//! Document model, JSON Lines corpus I/O and candidate extraction.
//!
//! A corpus file holds one [`Document`] per line. Mention annotations
//! (head lemma, plurality, animacy, gender) arrive pre-computed; `unknown` is
//! accepted for every attribute.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spkb::Relation;

/// Number of sentences before the pronoun's own sentence that contribute candidates.
pub const WINDOW_PREVIOUS_SENTENCES: usize = 2;

pub const THIRD_PERSONAL: [&str; 7] = ["she", "her", "he", "him", "them", "they", "it"];
pub const POSSESSIVE: [&str; 5] = ["his", "hers", "its", "their", "theirs"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plurality {
    Singular,
    Plural,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Animacy {
    Animate,
    Inanimate,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Neutral,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PronounType {
    ThirdPersonal,
    Possessive,
}

impl PronounType {
    pub fn as_str(self) -> &'static str {
        match self {
            PronounType::ThirdPersonal => "third_personal",
            PronounType::Possessive => "possessive",
        }
    }

    /// Pronoun type of a supported surface form, if any.
    pub fn of_surface(surface: &str) -> Option<Self> {
        let lower = surface.to_lowercase();
        if THIRD_PERSONAL.contains(&lower.as_str()) {
            Some(PronounType::ThirdPersonal)
        } else if POSSESSIVE.contains(&lower.as_str()) {
            Some(PronounType::Possessive)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mention {
    pub mention_id: String,
    pub sentence_idx: usize,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub head_lemma: String,
    pub plurality: Plurality,
    pub animacy: Animacy,
    pub gender: Gender,
    pub is_pronominal: bool,
}

impl Mention {
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    fn position(&self) -> (usize, usize) {
        (self.sentence_idx, self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PronounInstance {
    pub pronoun_id: String,
    pub sentence_idx: usize,
    pub token_idx: usize,
    pub surface: String,
    pub ptype: PronounType,
    pub gold_refs: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub governor_lemma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep_relation: Option<Relation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub mentions: Vec<Mention>,
    pub pronouns: Vec<PronounInstance>,
}

impl Document {
    /// Checks every structural invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        let id = self.doc_id.as_str();
        if id.is_empty() {
            return Err(Error::validation(id, "doc_id", "empty document id"));
        }
        let sentence_len = |idx: usize| self.sentences.get(idx).map(Vec::len);

        let mut mention_ids = HashSet::new();
        let mut spans = HashSet::new();
        for m in &self.mentions {
            let field = |name: &str| format!("mentions[{}].{}", m.mention_id, name);
            if !mention_ids.insert(m.mention_id.as_str()) {
                return Err(Error::validation(id, field("mention_id"), "duplicate mention id"));
            }
            let Some(len) = sentence_len(m.sentence_idx) else {
                return Err(Error::validation(id, field("sentence_idx"), "no such sentence"));
            };
            if m.start > m.end {
                return Err(Error::validation(id, field("start"), "start exceeds end"));
            }
            if m.end >= len {
                return Err(Error::validation(id, field("end"), "span exceeds sentence"));
            }
            if !spans.insert((m.sentence_idx, m.start, m.end)) {
                return Err(Error::validation(id, field("start"), "duplicate span"));
            }
            if m.head_lemma.is_empty() {
                return Err(Error::validation(id, field("head_lemma"), "empty head lemma"));
            }
            if m.head_lemma != m.head_lemma.to_lowercase() {
                return Err(Error::validation(id, field("head_lemma"), "head lemma must be lowercase"));
            }
        }

        let mut pronoun_ids = HashSet::new();
        for p in &self.pronouns {
            let field = |name: &str| format!("pronouns[{}].{}", p.pronoun_id, name);
            if !pronoun_ids.insert(p.pronoun_id.as_str()) {
                return Err(Error::validation(id, field("pronoun_id"), "duplicate pronoun id"));
            }
            let Some(len) = sentence_len(p.sentence_idx) else {
                return Err(Error::validation(id, field("sentence_idx"), "no such sentence"));
            };
            if p.token_idx >= len {
                return Err(Error::validation(id, field("token_idx"), "token outside sentence"));
            }
            if PronounType::of_surface(&p.surface) != Some(p.ptype) {
                return Err(Error::validation(
                    id,
                    field("surface"),
                    format!("{:?} is not a {} pronoun", p.surface, p.ptype.as_str()),
                ));
            }
            if p.governor_lemma.is_some() != p.dep_relation.is_some() {
                return Err(Error::validation(
                    id,
                    field("governor_lemma"),
                    "governor_lemma and dep_relation must be given together",
                ));
            }
            if let Some(gov) = &p.governor_lemma {
                if gov.is_empty() || *gov != gov.to_lowercase() {
                    return Err(Error::validation(
                        id,
                        field("governor_lemma"),
                        "governor lemma must be a non-empty lowercase string",
                    ));
                }
            }
            for r in &p.gold_refs {
                if !mention_ids.contains(r.as_str()) {
                    return Err(Error::validation(
                        id,
                        field("gold_refs"),
                        format!("unknown mention id {r:?}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn mention(&self, mention_id: &str) -> Option<&Mention> {
        self.mentions.iter().find(|m| m.mention_id == mention_id)
    }

    pub fn pronoun(&self, pronoun_id: &str) -> Option<&PronounInstance> {
        self.pronouns.iter().find(|p| p.pronoun_id == pronoun_id)
    }
}

/// Non-pronominal mentions in the pronoun's sentence and the two before it,
/// ordered by `(sentence_idx, start)`. Mentions that follow the pronoun in
/// its own sentence are included.
pub fn extract_candidates<'d>(doc: &'d Document, p: &PronounInstance) -> Result<Vec<&'d Mention>> {
    if !doc.pronouns.iter().any(|q| q == p) {
        return Err(Error::PronounNotInDocument {
            doc_id: doc.doc_id.clone(),
            pronoun_id: p.pronoun_id.clone(),
        });
    }
    Ok(candidates_unchecked(doc, p))
}

pub(crate) fn candidates_unchecked<'d>(doc: &'d Document, p: &PronounInstance) -> Vec<&'d Mention> {
    let first = p.sentence_idx.saturating_sub(WINDOW_PREVIOUS_SENTENCES);
    let mut out: Vec<&Mention> = doc
        .mentions
        .iter()
        .filter(|m| !m.is_pronominal && (first..=p.sentence_idx).contains(&m.sentence_idx))
        .collect();
    out.sort_by_key(|m| m.position());
    out
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file)
}

pub fn write_corpus<W: Write>(mut writer: W, docs: &[Document]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut writer, doc)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(&mut w, docs)?;
    w.flush().map_err(|e| Error::io(path, e))
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn three_sentence_doc() -> Document {
        let s = |t: &str| t.split(' ').map(String::from).collect::<Vec<_>>();
        let mut he = mention("m5", 3, 0, 0, "he");
        he.is_pronominal = true;
        Document {
            doc_id: "d".into(),
            sentences: vec![
                s("the king slept ."),
                s("the queen smiled at the boy ."),
                s("a horse ran ."),
                s("he left the castle ."),
            ],
            mentions: vec![
                mention("m0", 0, 0, 1, "king"),
                mention("m2", 1, 4, 5, "boy"),
                mention("m1", 1, 0, 1, "queen"),
                mention("m3", 2, 0, 1, "horse"),
                mention("m4", 3, 2, 3, "castle"),
                he,
            ],
            pronouns: vec![PronounInstance {
                pronoun_id: "p0".into(),
                sentence_idx: 3,
                token_idx: 0,
                surface: "he".into(),
                ptype: PronounType::ThirdPersonal,
                gold_refs: ["m2".to_string()].into_iter().collect(),
                governor_lemma: None,
                dep_relation: None,
            }],
        }
    }

    #[test]
    fn window_covers_three_sentences_sorted_by_position() {
        let doc = three_sentence_doc();
        let ids: Vec<_> = extract_candidates(&doc, &doc.pronouns[0])
            .unwrap()
            .iter()
            .map(|m| m.mention_id.as_str())
            .collect();
        assert_eq!(ids, ["m1", "m2", "m3", "m4"]);
    }

    #[test]
    fn window_clips_at_first_sentence() {
        let mut doc = three_sentence_doc();
        doc.pronouns[0].sentence_idx = 0;
        doc.pronouns[0].token_idx = 0;
        doc.pronouns[0].gold_refs = ["m0".to_string()].into_iter().collect();
        let c = extract_candidates(&doc, &doc.pronouns[0]).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].mention_id, "m0");
    }

    #[test]
    fn candidates_after_pronoun_are_included() {
        let doc = dog_cat_tree();
        doc.validate().unwrap();
        let heads: Vec<_> = extract_candidates(&doc, &doc.pronouns[0])
            .unwrap()
            .iter()
            .map(|m| m.head_lemma.as_str())
            .collect();
        assert_eq!(heads, ["dog", "cat", "tree"]);
    }

    #[test]
    fn only_pronominal_mentions_gives_empty_window() {
        let mut doc = dog_cat_tree();
        for m in &mut doc.mentions {
            m.is_pronominal = true;
        }
        assert!(extract_candidates(&doc, &doc.pronouns[0]).unwrap().is_empty());
    }

    #[test]
    fn foreign_pronoun_is_rejected() {
        let doc = dog_cat_tree();
        let mut other = doc.pronouns[0].clone();
        other.pronoun_id = "zz".into();
        assert!(matches!(
            extract_candidates(&doc, &other),
            Err(Error::PronounNotInDocument { .. })
        ));
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(read_corpus(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn single_document_round_trips() {
        let doc = dog_cat_tree();
        let mut bytes = Vec::new();
        write_corpus(&mut bytes, std::slice::from_ref(&doc)).unwrap();
        let back = read_corpus(&bytes[..]).unwrap();
        assert_eq!(back, vec![doc]);
        let mut again = Vec::new();
        write_corpus(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn missing_gold_reference_fails_validation() {
        let mut doc = dog_cat_tree();
        doc.pronouns[0].gold_refs.insert("m99".into());
        let mut bytes = Vec::new();
        write_corpus(&mut bytes, &[doc]).unwrap();
        match read_corpus(&bytes[..]) {
            Err(Error::Validation { doc_id, field, .. }) => {
                assert_eq!(doc_id, "fig1c");
                assert!(field.contains("gold_refs"), "{field}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = serde_json::to_string(&dog_cat_tree()).unwrap();
        let text = format!("{good}\n{{not json\n");
        match read_corpus(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(dog_cat_tree()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(matches!(read_corpus(v.to_string().as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn invariant_violations_are_named() {
        type Mutation = Box<dyn Fn(&mut Document)>;
        let cases: Vec<(Mutation, &str)> = vec![
            (Box::new(|d| d.mentions[0].end = 40), "end"),
            (Box::new(|d| d.mentions[1].start = 6), "start"),
            (Box::new(|d| d.mentions[1] = Mention { mention_id: "m1".into(), ..d.mentions[0].clone() }), "start"),
            (Box::new(|d| d.mentions[0].head_lemma.clear()), "head_lemma"),
            (Box::new(|d| d.pronouns[0].surface = "his".into()), "surface"),
            (Box::new(|d| d.pronouns[0].dep_relation = None), "governor_lemma"),
            (Box::new(|d| d.pronouns[0].token_idx = 12), "token_idx"),
        ];
        for (mutate, field) in cases {
            let mut doc = dog_cat_tree();
            mutate(&mut doc);
            match doc.validate() {
                Err(Error::Validation { field: f, .. }) => assert!(f.ends_with(field), "{f} vs {field}"),
                other => panic!("expected violation of {field}, got {other:?}"),
            }
        }
    }
}
