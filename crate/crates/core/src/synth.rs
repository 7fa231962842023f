//! Seeded synthetic corpora in which each pronoun is resolvable through one
//! designated kind of evidence: plurality agreement, animacy & gender
//! agreement, selectional preference, or a lexical pattern in context.
//!
//! Every pronoun sits in the third sentence of a three-sentence episode, so
//! its candidate window is exactly that episode. Nouns are pseudo-words; the
//! class of each mention (male, female, animal, object) and its number are
//! drawn per mention and appear only in the annotations, so the text alone
//! never reveals them. A share of the nouns is held out of the training split
//! and is therefore out of vocabulary at test time. Some distractors appear in
//! a `near the Z` phrase after the verb; they are never correct and give the
//! contextual scorer something it can prune.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Animacy, Document, Gender, Mention, Plurality, PronounInstance, PronounType};
use crate::error::{Error, Result};
use crate::spkb::{BucketId, Edge, Relation, SpKnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Plurality,
    Ag,
    Sp,
    Context,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::Plurality, Subset::Ag, Subset::Sp, Subset::Context];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Plurality => "plurality",
            Subset::Ag => "ag",
            Subset::Sp => "sp",
            Subset::Context => "context",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown subset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsetMix {
    pub plurality: f64,
    pub ag: f64,
    pub sp: f64,
    pub context: f64,
}

impl Default for SubsetMix {
    fn default() -> Self {
        SubsetMix {
            plurality: 0.25,
            ag: 0.25,
            sp: 0.25,
            context: 0.25,
        }
    }
}

impl SubsetMix {
    fn weights(&self) -> [(Subset, f64); 4] {
        [
            (Subset::Plurality, self.plurality),
            (Subset::Ag, self.ag),
            (Subset::Sp, self.sp),
            (Subset::Context, self.context),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Documents over all three splits.
    pub num_documents: usize,
    pub pronouns_per_doc: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    /// Mean candidates per pronoun; counts are `3 + Binomial(4, p)`.
    pub candidate_count_target: f64,
    /// Mean correct references per pronoun.
    pub gold_per_pronoun_target: f64,
    pub subset_mix: SubsetMix,
    /// Probability that a distractor other than the first is realized as a
    /// `near the Z` phrase after the verb.
    pub filler_rate: f64,
    pub num_nouns: usize,
    /// Share of the nouns that never appears in the training split.
    pub held_out_fraction: f64,
    pub num_verbs: usize,
    /// Probability of flipping a mention's plurality annotation.
    pub plurality_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            num_documents: 500,
            pronouns_per_doc: 5,
            dev_fraction: 0.1,
            test_fraction: 0.1,
            candidate_count_target: 4.6,
            gold_per_pronoun_target: 1.3,
            subset_mix: SubsetMix::default(),
            filler_rate: 1.0,
            num_nouns: 96,
            held_out_fraction: 0.25,
            num_verbs: 16,
            plurality_noise: 0.0,
        }
    }
}

const MIN_CANDIDATES: usize = 3;
const EXTRA_CANDIDATE_TRIALS: u32 = 4;

impl SynthConfig {
    fn split_sizes(&self) -> (usize, usize, usize) {
        let dev = (self.num_documents as f64 * self.dev_fraction).round() as usize;
        let test = (self.num_documents as f64 * self.test_fraction).round() as usize;
        (self.num_documents.saturating_sub(dev + test), dev, test)
    }

    fn held_out(&self) -> usize {
        (self.num_nouns as f64 * self.held_out_fraction).round() as usize
    }

    /// Probability of a second correct reference outside the context subset.
    fn second_gold_rate(&self) -> f64 {
        let open = 1.0 - self.subset_mix.context;
        if open <= 0.0 {
            0.0
        } else {
            (self.gold_per_pronoun_target - 1.0) / open
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let mix = self.subset_mix.weights();
        if mix.iter().any(|(_, w)| w.is_nan() || *w < 0.0) {
            return bad("subset fractions must be non-negative".into());
        }
        let total: f64 = mix.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("subset fractions sum to {total}, not 1"));
        }
        let max = (MIN_CANDIDATES as u32 + EXTRA_CANDIDATE_TRIALS) as f64;
        if !(self.candidate_count_target >= MIN_CANDIDATES as f64 && self.candidate_count_target <= max) {
            return bad(format!(
                "candidate_count_target {} outside the feasible range [{MIN_CANDIDATES}, {max}]",
                self.candidate_count_target
            ));
        }
        let q = self.second_gold_rate();
        if self.gold_per_pronoun_target.is_nan() || self.gold_per_pronoun_target < 1.0 || !(0.0..=1.0).contains(&q) {
            return bad(format!(
                "gold_per_pronoun_target {} is infeasible with a context share of {}",
                self.gold_per_pronoun_target, self.subset_mix.context
            ));
        }
        if self.subset_mix.context == 1.0 && self.gold_per_pronoun_target != 1.0 {
            return bad("context-only corpora have exactly one correct reference".into());
        }
        if self.pronouns_per_doc == 0 {
            return bad("pronouns_per_doc must be positive".into());
        }
        let (train, _, _) = self.split_sizes();
        if train == 0 {
            return bad("no documents left for training".into());
        }
        for (name, p) in [
            ("dev_fraction", self.dev_fraction),
            ("test_fraction", self.test_fraction),
            ("filler_rate", self.filler_rate),
            ("held_out_fraction", self.held_out_fraction),
            ("plurality_noise", self.plurality_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        let needed = MIN_CANDIDATES + EXTRA_CANDIDATE_TRIALS as usize;
        if self.num_nouns < self.held_out() + needed {
            return bad(format!("the training split needs at least {needed} nouns"));
        }
        if self.num_verbs == 0 {
            return bad("num_verbs must be positive".into());
        }
        if self.num_nouns + self.num_verbs > SYLLABLES.len() * SYLLABLES.len() {
            return bad("lexicon larger than the pseudo-word space".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    /// Raw edge stream; several lines may share a key.
    pub edges: Vec<Edge>,
    pub kb: SpKnowledgeBase,
    /// Subset of every pronoun, keyed by `(doc_id, pronoun_id)`.
    pub subsets: BTreeMap<(String, String), Subset>,
}

impl SynthCorpus {
    pub fn subset_of(&self, doc_id: &str, pronoun_id: &str) -> Option<Subset> {
        self.subsets.get(&(doc_id.to_string(), pronoun_id.to_string())).copied()
    }
}

pub fn write_subsets<W: Write>(mut w: W, subsets: &BTreeMap<(String, String), Subset>) -> Result<()> {
    for ((d, p), s) in subsets {
        writeln!(w, "{d}\t{p}\t{s}").map_err(|e| Error::io("<subsets>", e))?;
    }
    Ok(())
}

pub fn read_subsets<R: Read>(r: R) -> Result<BTreeMap<(String, String), Subset>> {
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<subsets>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [d, p, s] = cols[..] else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 3 columns, found {}", cols.len()),
            });
        };
        let subset = s.parse().map_err(|e: Error| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert((d.to_string(), p.to_string()), subset);
    }
    Ok(out)
}

const SYLLABLES: [&str; 65] = [
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi", "fo", "fu", "ga", "ge", "gi", "go",
    "gu", "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni",
    "no", "nu", "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro", "ru", "ta", "te", "ti", "to", "tu", "va", "ve",
    "vi", "vo", "vu", "za", "ze", "zi", "zo", "zu",
];

/// Annotation noise draws from its own streams so the text is unaffected.
const NOISE_STREAM: u64 = 1 << 40;

/// Fixed shuffle so the lexicon does not depend on the corpus seed.
const LEXICON_SEED: u64 = 0x1e81c0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NounClass {
    Male,
    Female,
    Animal,
    Object,
}

const CLASSES: [NounClass; 4] = [NounClass::Male, NounClass::Female, NounClass::Animal, NounClass::Object];

impl NounClass {
    fn attributes(self) -> (Animacy, Gender) {
        match self {
            NounClass::Male => (Animacy::Animate, Gender::Male),
            NounClass::Female => (Animacy::Animate, Gender::Female),
            NounClass::Animal => (Animacy::Animate, Gender::Neutral),
            NounClass::Object => (Animacy::Inanimate, Gender::Neutral),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PronounKind {
    Male,
    Female,
    Neutral,
    Plural,
}

const KINDS: [PronounKind; 4] = [PronounKind::Male, PronounKind::Female, PronounKind::Neutral, PronounKind::Plural];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Subject,
    Object,
    Possessive,
}

impl PronounKind {
    fn surface(self, role: Role) -> &'static str {
        match (self, role) {
            (PronounKind::Male, Role::Subject) => "he",
            (PronounKind::Male, Role::Object) => "him",
            (PronounKind::Male, Role::Possessive) => "his",
            (PronounKind::Female, Role::Subject) => "she",
            (PronounKind::Female, Role::Object) => "her",
            (PronounKind::Female, Role::Possessive) => "hers",
            (PronounKind::Neutral, Role::Subject | Role::Object) => "it",
            (PronounKind::Neutral, Role::Possessive) => "its",
            (PronounKind::Plural, Role::Subject) => "they",
            (PronounKind::Plural, Role::Object) => "them",
            (PronounKind::Plural, Role::Possessive) => "their",
        }
    }

    fn plural(self) -> bool {
        self == PronounKind::Plural
    }

    fn agrees(self, class: NounClass) -> bool {
        match self {
            PronounKind::Male => class == NounClass::Male,
            PronounKind::Female => class == NounClass::Female,
            PronounKind::Neutral => matches!(class, NounClass::Animal | NounClass::Object),
            PronounKind::Plural => true,
        }
    }
}

struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
}

impl Lexicon {
    fn new(nouns: usize, verbs: usize) -> Self {
        let mut words: Vec<String> = SYLLABLES
            .iter()
            .flat_map(|a| SYLLABLES.iter().map(move |b| format!("{a}{b}")))
            .collect();
        words.shuffle(&mut ChaCha8Rng::seed_from_u64(LEXICON_SEED));
        let mut it = words.into_iter();
        Lexicon {
            nouns: it.by_ref().take(nouns).collect(),
            verbs: it.take(verbs).collect(),
        }
    }
}

fn verb_surface(lemma: &str) -> String {
    format!("{lemma}ed")
}


/// A count that falls in `bucket` (1..=9).
fn bucket_count<R: Rng>(bucket: u8, rng: &mut R) -> u64 {
    match bucket {
        0..=4 => bucket as u64,
        5 => rng.gen_range(5..=7),
        b => {
            let lo = 1u64 << (b - 3);
            rng.gen_range(lo..2 * lo)
        }
    }
}

/// Random counts for every (verb, noun, relation), emitted over one to three lines each.
fn generate_kb(lex: &Lexicon, rng: &mut ChaCha8Rng) -> Result<(Vec<Edge>, SpKnowledgeBase)> {
    let mut edges = Vec::new();
    for verb in &lex.verbs {
        for noun in &lex.nouns {
            for rel in [Relation::Nsubj, Relation::Dobj] {
                if rng.gen_bool(0.5) {
                    continue;
                }
                let bucket = rng.gen_range(1..BucketId::COUNT as u8);
                let count = bucket_count(bucket, rng);
                let lines = rng.gen_range(1..=3u64).min(count);
                let mut left = count;
                for i in 0..lines {
                    let part = if i + 1 == lines {
                        left
                    } else {
                        rng.gen_range(1..=left - (lines - 1 - i))
                    };
                    left -= part;
                    edges.push(Edge::with_count(verb, noun, rel.as_str(), part as i64));
                }
            }
        }
    }
    let mut kb = SpKnowledgeBase::new();
    kb.ingest_edges(&edges)?;
    Ok((edges, kb))
}

#[derive(Debug, Clone)]
struct Np {
    lemma: String,
    class: NounClass,
    plural: bool,
    gold: bool,
}

struct Episode {
    sentences: Vec<Vec<String>>,
    /// `(sentence, start, end, np)` with sentence 0..3 inside the episode.
    mentions: Vec<(usize, usize, usize, Np)>,
    pronoun_sentence: usize,
    pronoun_token: usize,
    surface: &'static str,
    kind: PronounKind,
    governor: Option<(String, Relation)>,
    subset: Subset,
}

struct Generator<'a> {
    config: &'a SynthConfig,
    lex: &'a Lexicon,
    kb: &'a SpKnowledgeBase,
    /// Nouns usable in the current split.
    pool: usize,
}

impl Generator<'_> {
    /// A noun not in `used`.
    fn lemma(&self, used: &[String], rng: &mut ChaCha8Rng) -> String {
        loop {
            let lemma = &self.lex.nouns[rng.gen_range(0..self.pool)];
            if !used.contains(lemma) {
                return lemma.clone();
            }
        }
    }

    fn class_from(&self, classes: &[NounClass], rng: &mut ChaCha8Rng) -> NounClass {
        *classes.choose(rng).expect("non-empty class list")
    }

    fn pick_subset(&self, rng: &mut ChaCha8Rng) -> Subset {
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        for (s, w) in self.config.subset_mix.weights() {
            acc += w;
            if r < acc {
                return s;
            }
        }
        Subset::ALL
            .into_iter()
            .rev()
            .find(|s| self.config.subset_mix.weights().iter().any(|(x, w)| x == s && *w > 0.0))
            .expect("some subset has positive weight")
    }

    fn bucket(&self, verb: &str, lemma: &str, rel: Relation) -> u8 {
        BucketId::from_count(self.kb.query(verb, lemma, rel)).value()
    }

    fn episode(&self, rng: &mut ChaCha8Rng) -> Result<Episode> {
        let subset = self.pick_subset(rng);
        let p = (self.config.candidate_count_target - MIN_CANDIDATES as f64) / EXTRA_CANDIDATE_TRIALS as f64;
        let k = MIN_CANDIDATES + (0..EXTRA_CANDIDATE_TRIALS).filter(|_| rng.gen_bool(p)).count();
        let golds = if subset == Subset::Context {
            1
        } else {
            1 + usize::from(rng.gen_bool(self.config.second_gold_rate()))
        };
        let kind = match subset {
            Subset::Ag => *KINDS[..3].choose(rng).expect("kinds"),
            _ => *KINDS.choose(rng).expect("kinds"),
        };
        let role = match subset {
            Subset::Sp => *[Role::Subject, Role::Object].choose(rng).expect("roles"),
            _ => *[Role::Subject, Role::Object, Role::Possessive].choose(rng).expect("roles"),
        };
        let agreeing: Vec<NounClass> = CLASSES.iter().copied().filter(|c| kind.agrees(*c)).collect();
        let clashing: Vec<NounClass> = CLASSES.iter().copied().filter(|c| !kind.agrees(*c)).collect();
        let verb = self.lex.verbs.choose(rng).expect("verbs").clone();
        let relation = match role {
            Role::Subject => Some(Relation::Nsubj),
            Role::Object => Some(Relation::Dobj),
            Role::Possessive => None,
        };
        let governor = match (subset, relation) {
            (Subset::Context, _) | (_, None) => None,
            (_, Some(rel)) => Some((verb.clone(), rel)),
        };

        let np = |lemma: String, class, plural, gold| Np {
            lemma,
            class,
            plural,
            gold,
        };
        let gold_np;
        let mut distractors = Vec::with_capacity(k - golds);
        let mut used = Vec::with_capacity(k);
        if subset == Subset::Sp {
            let (v, rel) = governor.clone().expect("sp pronouns have a governor");
            let mut found = None;
            for _ in 0..1000 {
                let lemma = self.lemma(&[], rng);
                let b = self.bucket(&v, &lemma, rel);
                if b == 0 {
                    continue;
                }
                used = vec![lemma.clone()];
                let mut ds = Vec::new();
                for _ in 0..(k - golds) * 200 {
                    if ds.len() == k - golds {
                        break;
                    }
                    let dl = self.lemma(&used, rng);
                    if self.bucket(&v, &dl, rel) < b {
                        used.push(dl.clone());
                        let dc = self.class_from(&agreeing, rng);
                        ds.push(np(dl, dc, kind.plural(), false));
                    }
                }
                if ds.len() == k - golds {
                    let c = self.class_from(&agreeing, rng);
                    found = Some((np(lemma, c, kind.plural(), true), ds));
                    break;
                }
            }
            let (g, ds) = found.ok_or_else(|| {
                Error::Config("could not realize a selectional-preference case; enlarge the lexicon".into())
            })?;
            gold_np = g;
            distractors = ds;
        } else {
            let (gold_plural, other_plural, other_classes) = match subset {
                Subset::Plurality => (kind.plural(), !kind.plural(), &agreeing),
                Subset::Ag => (false, false, &clashing),
                _ => (kind.plural(), kind.plural(), &agreeing),
            };
            let c = self.class_from(&agreeing, rng);
            let lemma = self.lemma(&used, rng);
            used.push(lemma.clone());
            gold_np = np(lemma, c, gold_plural, true);
            for _ in golds..k {
                let c = self.class_from(other_classes, rng);
                let lemma = self.lemma(&used, rng);
                used.push(lemma.clone());
                distractors.push(np(lemma, c, other_plural, false));
            }
        }
        // One distractor always stays a main noun phrase; the rest may become
        // `near the Z` phrases after the verb of a sentence with main phrases.
        let mut fillers = Vec::new();
        let mut main: Vec<Np> = Vec::new();
        for (i, d) in distractors.into_iter().enumerate() {
            if i > 0 && rng.gen_bool(self.config.filler_rate) {
                fillers.push(d);
            } else {
                main.push(d);
            }
        }
        if subset != Subset::Context {
            for _ in 0..golds {
                main.push(gold_np.clone());
            }
        }
        main.shuffle(rng);
        let first_len = main.len().div_ceil(2);
        let groups = [0..first_len, first_len..main.len()];
        let mut attached: [Vec<Np>; 2] = [Vec::new(), Vec::new()];
        for f in fillers {
            let s = if groups[1].is_empty() { 0 } else { rng.gen_range(0..2) };
            attached[s].push(f);
        }

        let mut sentences = Vec::with_capacity(3);
        let mut mentions = Vec::new();
        for (s, range) in groups.into_iter().enumerate() {
            let mut toks: Vec<String> = Vec::new();
            if range.is_empty() {
                toks.extend(["nothing", "happened", "."].map(String::from));
                sentences.push(toks);
                continue;
            }
            for (j, i) in range.enumerate() {
                if j > 0 {
                    toks.push("and".into());
                }
                toks.push("the".into());
                toks.push(main[i].lemma.clone());
                mentions.push((s, toks.len() - 2, toks.len() - 1, main[i].clone()));
            }
            let v = self.lex.verbs.choose(rng).expect("verbs");
            toks.push(verb_surface(v));
            for (j, f) in attached[s].iter().enumerate() {
                toks.push(if j == 0 { "near" } else { "and" }.into());
                toks.push("the".into());
                toks.push(f.lemma.clone());
                mentions.push((s, toks.len() - 2, toks.len() - 1, f.clone()));
            }
            toks.push(".".into());
            sentences.push(toks);
        }

        let surface = kind.surface(role);
        let mut last: Vec<String> = Vec::new();
        if subset == Subset::Context {
            last.push("the".into());
            last.push(gold_np.lemma.clone());
            mentions.push((2, 0, 1, gold_np.clone()));
            last.extend(["said", "that"].map(String::from));
        } else {
            last.push("then".into());
        }
        let pronoun_token;
        let v = verb_surface(&verb);
        match role {
            Role::Subject => {
                pronoun_token = last.len();
                last.extend([surface.to_string(), v, "something".into()]);
            }
            Role::Object => {
                last.extend(["someone".to_string(), v]);
                pronoun_token = last.len();
                last.push(surface.into());
            }
            Role::Possessive => {
                pronoun_token = last.len();
                last.extend([surface.to_string(), "stuff".into(), v]);
            }
        }
        last.push(".".into());
        sentences.push(last);

        Ok(Episode {
            sentences,
            mentions,
            pronoun_sentence: 2,
            pronoun_token,
            surface,
            kind,
            governor,
            subset,
        })
    }

    fn document(&self, doc_id: String, rng: &mut ChaCha8Rng, noise: &mut ChaCha8Rng) -> Result<(Document, Vec<Subset>)> {
        let mut doc = Document {
            doc_id,
            sentences: Vec::new(),
            mentions: Vec::new(),
            pronouns: Vec::new(),
        };
        let mut labels = Vec::new();
        for j in 0..self.config.pronouns_per_doc {
            let ep = self.episode(rng)?;
            let base = doc.sentences.len();
            let mut gold_refs = std::collections::BTreeSet::new();
            for (s, start, end, np) in ep.mentions {
                let id = format!("m{}", doc.mentions.len());
                if np.gold {
                    gold_refs.insert(id.clone());
                }
                let mut plural = np.plural;
                if self.config.plurality_noise > 0.0 && noise.gen_bool(self.config.plurality_noise) {
                    plural = !plural;
                }
                let (animacy, gender) = np.class.attributes();
                doc.mentions.push(Mention {
                    mention_id: id,
                    sentence_idx: base + s,
                    start,
                    end,
                    head_lemma: np.lemma,
                    plurality: if plural { Plurality::Plural } else { Plurality::Singular },
                    animacy,
                    gender,
                    is_pronominal: false,
                });
            }
            let plurality = if ep.kind.plural() {
                Plurality::Plural
            } else {
                Plurality::Singular
            };
            doc.mentions.push(Mention {
                mention_id: format!("m{}", doc.mentions.len()),
                sentence_idx: base + ep.pronoun_sentence,
                start: ep.pronoun_token,
                end: ep.pronoun_token,
                head_lemma: ep.surface.to_string(),
                plurality,
                animacy: Animacy::Unknown,
                gender: Gender::Unknown,
                is_pronominal: true,
            });
            let (governor_lemma, dep_relation) = match ep.governor {
                Some((g, r)) => (Some(g), Some(r)),
                None => (None, None),
            };
            doc.pronouns.push(PronounInstance {
                pronoun_id: format!("p{j}"),
                sentence_idx: base + ep.pronoun_sentence,
                token_idx: ep.pronoun_token,
                surface: ep.surface.to_string(),
                ptype: PronounType::of_surface(ep.surface).expect("supported pronoun"),
                gold_refs,
                governor_lemma,
                dep_relation,
            });
            doc.sentences.extend(ep.sentences);
            labels.push(ep.subset);
        }
        doc.validate()?;
        Ok((doc, labels))
    }
}

/// Builds the three splits and the knowledge base. Deterministic in `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let lex = Lexicon::new(config.num_nouns, config.num_verbs);
    let mut kb_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (edges, kb) = generate_kb(&lex, &mut kb_rng)?;
    let (n_train, n_dev, _) = config.split_sizes();
    let mut out = SynthCorpus {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        edges,
        kb,
        subsets: BTreeMap::new(),
    };
    for i in 0..config.num_documents {
        let (split, name) = if i < n_train {
            (0, "train")
        } else if i < n_train + n_dev {
            (1, "dev")
        } else {
            (2, "test")
        };
        let generator = Generator {
            config,
            lex: &lex,
            kb: &out.kb,
            pool: if split == 0 {
                config.num_nouns - config.held_out()
            } else {
                config.num_nouns
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);
        let mut noise = ChaCha8Rng::seed_from_u64(config.seed);
        noise.set_stream(NOISE_STREAM + i as u64);
        let (doc, labels) = generator.document(format!("{name}{i:05}"), &mut rng, &mut noise)?;
        for (p, s) in doc.pronouns.iter().zip(labels) {
            out.subsets.insert((doc.doc_id.clone(), p.pronoun_id.clone()), s);
        }
        match split {
            0 => out.train.push(doc),
            1 => out.dev.push(doc),
            _ => out.test.push(doc),
        }
    }
    Ok(out)
}
