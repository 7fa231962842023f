//! Knowledge features of a (candidate, pronoun) pair: plurality agreement,
//! animacy & gender agreement, and the selectional-preference bucket.
//!
//! Agreement features encode a confirmed match: any `unknown` attribute that
//! the decision depends on yields 0.

use serde::{Deserialize, Serialize};

use crate::corpus::{Animacy, Gender, Mention, Plurality, PronounInstance};
use crate::error::{Error, Result};
use crate::spkb::{BucketId, SpKnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderClass {
    Male,
    Female,
    Neutral,
    /// Plural pronouns, compatible with every gender.
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PronounAttributes {
    pub surface: String,
    pub plurality: Plurality,
    pub gender_class: GenderClass,
}

pub fn pronoun_attributes(surface: &str) -> Result<PronounAttributes> {
    let lower = surface.to_lowercase();
    let (plurality, gender_class) = match lower.as_str() {
        "he" | "him" | "his" => (Plurality::Singular, GenderClass::Male),
        "she" | "her" | "hers" => (Plurality::Singular, GenderClass::Female),
        "it" | "its" => (Plurality::Singular, GenderClass::Neutral),
        "they" | "them" | "their" | "theirs" => (Plurality::Plural, GenderClass::Any),
        _ => return Err(Error::UnsupportedPronoun(surface.to_string())),
    };
    Ok(PronounAttributes {
        surface: lower,
        plurality,
        gender_class,
    })
}

fn attributes_or_unsupported(p: &PronounInstance) -> Option<PronounAttributes> {
    pronoun_attributes(&p.surface).ok()
}

pub fn plurality_feature(m: &Mention, p: &PronounInstance) -> u8 {
    match attributes_or_unsupported(p) {
        Some(attrs) if m.plurality != Plurality::Unknown => u8::from(m.plurality == attrs.plurality),
        _ => 0,
    }
}

pub fn ag_match(class: GenderClass, animacy: Animacy, gender: Gender) -> bool {
    match class {
        GenderClass::Male => animacy == Animacy::Animate && gender == Gender::Male,
        GenderClass::Female => animacy == Animacy::Animate && gender == Gender::Female,
        GenderClass::Neutral => animacy == Animacy::Inanimate || gender == Gender::Neutral,
        GenderClass::Any => !(animacy == Animacy::Unknown && gender == Gender::Unknown),
    }
}

pub fn ag_feature(m: &Mention, p: &PronounInstance) -> u8 {
    attributes_or_unsupported(p)
        .map(|attrs| u8::from(ag_match(attrs.gender_class, m.animacy, m.gender)))
        .unwrap_or(0)
}

pub fn sp_feature(m: &Mention, p: &PronounInstance, kb: &SpKnowledgeBase) -> BucketId {
    match (&p.governor_lemma, p.dep_relation) {
        (Some(gov), Some(rel)) => BucketId::from_count(kb.query(gov, &m.head_lemma, rel)),
        _ => BucketId::UNSEEN,
    }
}

/// Raw knowledge feature values for one (candidate, pronoun) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeFeatureVector {
    pub plurality: u8,
    pub ag: u8,
    pub sp: BucketId,
}

impl KnowledgeFeatureVector {
    pub fn compute(m: &Mention, p: &PronounInstance, kb: &SpKnowledgeBase) -> Self {
        KnowledgeFeatureVector {
            plurality: plurality_feature(m, p),
            ag: ag_feature(m, p),
            sp: sp_feature(m, p, kb),
        }
    }
}
