//! Selectional-preference knowledge base: counts of
//! `(predicate, argument, relation)` tuples and their frequency buckets.
//!
//! Edge files and KB files share one TSV layout,
//! `predicate<TAB>argument<TAB>relation[<TAB>count]`. A saved KB always
//! carries the count column and its lines are sorted bytewise.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Nsubj,
    Dobj,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Nsubj => "nsubj",
            Relation::Dobj => "dobj",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nsubj" => Ok(Relation::Nsubj),
            "dobj" => Ok(Relation::Dobj),
            other => Err(Error::UnknownRelation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpKey {
    pub predicate: String,
    pub argument: String,
    pub relation: Relation,
}

impl SpKey {
    pub fn new(predicate: impl Into<String>, argument: impl Into<String>, relation: Relation) -> Self {
        SpKey {
            predicate: predicate.into(),
            argument: argument.into(),
            relation,
        }
    }
}

/// One dependency edge, or a pre-aggregated tuple when `count > 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub predicate: String,
    pub argument: String,
    pub relation: String,
    pub count: i64,
}

impl Edge {
    pub fn new(predicate: &str, argument: &str, relation: &str) -> Self {
        Edge::with_count(predicate, argument, relation, 1)
    }

    pub fn with_count(predicate: &str, argument: &str, relation: &str, count: i64) -> Self {
        Edge {
            predicate: predicate.to_string(),
            argument: argument.to_string(),
            relation: relation.to_string(),
            count,
        }
    }

    pub fn to_tsv(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.predicate, self.argument, self.relation, self.count)
    }
}

/// Frequency bucket id. 0 means "never observed"; 1..=9 are the buckets
/// `[1, 2, 3, 4, 5-7, 8-15, 16-31, 32-63, 64+]` in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct BucketId(u8);

impl BucketId {
    pub const UNSEEN: BucketId = BucketId(0);
    pub const COUNT: usize = 10;

    pub fn new(value: u8) -> Option<Self> {
        ((value as usize) < Self::COUNT).then_some(BucketId(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn from_count(count: u64) -> Self {
        BucketId(match count {
            0 => 0,
            1..=4 => count as u8,
            5..=7 => 5,
            8..=15 => 6,
            16..=31 => 7,
            32..=63 => 8,
            _ => 9,
        })
    }
}

pub fn bucketize(count: i64) -> Result<BucketId> {
    if count < 0 {
        return Err(Error::InvalidCount(count));
    }
    Ok(BucketId::from_count(count as u64))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpKnowledgeBase {
    counts: HashMap<SpKey, u64>,
}

impl SpKnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn ingest(&mut self, edge: &Edge) -> Result<()> {
        let relation: Relation = edge.relation.parse()?;
        if edge.count <= 0 {
            return Err(Error::InvalidCount(edge.count));
        }
        check_lemma(&edge.predicate)?;
        check_lemma(&edge.argument)?;
        *self
            .counts
            .entry(SpKey::new(edge.predicate.as_str(), edge.argument.as_str(), relation))
            .or_insert(0) += edge.count as u64;
        Ok(())
    }

    /// Sums every edge of `stream` into the KB. Stops at the first invalid edge.
    pub fn ingest_edges<'a, I>(&mut self, stream: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Edge>,
    {
        stream.into_iter().try_for_each(|e| self.ingest(e))
    }

    pub fn query(&self, predicate: &str, argument: &str, relation: Relation) -> u64 {
        self.counts
            .get(&SpKey::new(predicate, argument, relation))
            .copied()
            .unwrap_or(0)
    }

    pub fn merge(&mut self, other: SpKnowledgeBase) {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SpKey, u64)> {
        self.counts.iter().map(|(k, v)| (k, *v))
    }

    /// Lines of the canonical KB file, sorted bytewise.
    pub fn to_sorted_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .counts
            .iter()
            .map(|(k, v)| format!("{}\t{}\t{}\t{}", k.predicate, k.argument, k.relation, v))
            .collect();
        lines.sort_unstable();
        lines
    }
}

fn check_lemma(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_uppercase() || c == '\t' || c == '\n') {
        return Err(Error::Config(format!("invalid KB lemma {s:?}: must be non-empty lowercase")));
    }
    Ok(())
}

/// Ingests `edges` split into `shards` contiguous parts on separate threads,
/// then merges the shard KBs in order.
pub fn build_sharded(edges: &[Edge], shards: usize) -> Result<SpKnowledgeBase> {
    let shards = shards.max(1);
    if shards == 1 || edges.len() < 2 {
        let mut kb = SpKnowledgeBase::new();
        kb.ingest_edges(edges)?;
        return Ok(kb);
    }
    let chunk = edges.len().div_ceil(shards);
    let parts: Vec<Result<SpKnowledgeBase>> = thread::scope(|scope| {
        let handles: Vec<_> = edges
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    let mut kb = SpKnowledgeBase::new();
                    kb.ingest_edges(part)?;
                    Ok(kb)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ingest worker panicked")).collect()
    });
    let mut kb = SpKnowledgeBase::new();
    for part in parts {
        kb.merge(part?);
    }
    Ok(kb)
}

fn parse_line(line: &str, line_no: usize, require_count: bool) -> Result<Edge> {
    let parse_err = |message: String| Error::Parse { line: line_no, message };
    let cols: Vec<&str> = line.split('\t').collect();
    let count = match (cols.len(), require_count) {
        (3, false) => 1,
        (4, _) => cols[3]
            .trim()
            .parse::<i64>()
            .map_err(|e| parse_err(format!("bad count {:?}: {e}", cols[3])))?,
        (n, _) => {
            return Err(parse_err(format!(
                "expected {} tab-separated columns, found {n}",
                if require_count { "4" } else { "3 or 4" }
            )))
        }
    };
    let edge = Edge {
        predicate: cols[0].to_string(),
        argument: cols[1].to_string(),
        relation: cols[2].to_string(),
        count,
    };
    edge.relation
        .parse::<Relation>()
        .map_err(|e| parse_err(e.to_string()))?;
    if count <= 0 {
        return Err(parse_err(format!("count must be positive, got {count}")));
    }
    check_lemma(&edge.predicate).map_err(|e| parse_err(e.to_string()))?;
    check_lemma(&edge.argument).map_err(|e| parse_err(e.to_string()))?;
    Ok(edge)
}

pub fn read_edges<R: Read>(reader: R) -> Result<Vec<Edge>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1, false)?);
    }
    Ok(out)
}

pub fn load_edges(path: impl AsRef<Path>) -> Result<Vec<Edge>> {
    let path = path.as_ref();
    read_edges(File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_edges<W: Write>(mut writer: W, edges: &[Edge]) -> Result<()> {
    for e in edges {
        writeln!(writer, "{}", e.to_tsv()).map_err(|err| Error::io("<writer>", err))?;
    }
    Ok(())
}

/// Parses a KB file. Keys that occur on several lines are summed; the line
/// numbers of the repeats are returned alongside the KB.
pub fn read_kb<R: Read>(reader: R) -> Result<(SpKnowledgeBase, Vec<usize>)> {
    let mut kb = SpKnowledgeBase::new();
    let mut duplicates = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        let edge = parse_line(&line, line_no, true)?;
        let key = SpKey::new(edge.predicate, edge.argument, edge.relation.parse()?);
        let slot = kb.counts.entry(key).or_insert(0);
        if *slot > 0 {
            duplicates.push(line_no);
        }
        *slot += edge.count as u64;
    }
    Ok((kb, duplicates))
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<SpKnowledgeBase> {
    let path = path.as_ref();
    let (kb, duplicates) = read_kb(File::open(path).map_err(|e| Error::io(path, e))?)?;
    for line in duplicates {
        log::warn!("{}: line {line}: duplicate key, counts summed", path.display());
    }
    Ok(kb)
}

pub fn write_kb<W: Write>(mut writer: W, kb: &SpKnowledgeBase) -> Result<()> {
    for line in kb.to_sorted_lines() {
        writeln!(writer, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn save_kb(kb: &SpKnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_kb(&mut w, kb)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ingesting_twice_adds() {
        let mut kb = SpKnowledgeBase::new();
        let e = Edge::new("climb", "cat", "nsubj");
        kb.ingest_edges([&e, &e]).unwrap();
        assert_eq!(kb.query("climb", "cat", Relation::Nsubj), 2);
        assert_eq!(kb.query("climb", "cat", Relation::Dobj), 0);
    }

    #[test]
    fn explicit_counts_add() {
        let mut kb = SpKnowledgeBase::new();
        kb.ingest(&Edge::with_count("climb", "cat", "nsubj", 3)).unwrap();
        kb.ingest(&Edge::with_count("climb", "cat", "nsubj", 5)).unwrap();
        assert_eq!(kb.query("climb", "cat", Relation::Nsubj), 8);
    }

    #[test]
    fn rejects_unknown_relation_and_bad_counts() {
        let mut kb = SpKnowledgeBase::new();
        assert!(matches!(
            kb.ingest(&Edge::new("climb", "cat", "amod")),
            Err(Error::UnknownRelation(_))
        ));
        assert!(matches!(
            kb.ingest(&Edge::with_count("climb", "cat", "nsubj", 0)),
            Err(Error::InvalidCount(0))
        ));
        assert!(kb.ingest(&Edge::new("Climb", "cat", "nsubj")).is_err());
        assert!(kb.is_empty());
    }

    #[test]
    fn query_is_read_only() {
        let mut kb = SpKnowledgeBase::new();
        kb.ingest(&Edge::new("climb", "cat", "nsubj")).unwrap();
        assert_eq!(kb.query("climb", "dog", Relation::Nsubj), 0);
        let a = kb.query("climb", "cat", Relation::Nsubj);
        let b = kb.query("climb", "cat", Relation::Nsubj);
        assert_eq!((a, b), (1, 1));
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(bucketize(0).unwrap().value(), 0);
        assert_eq!(bucketize(26).unwrap().value(), 7);
        assert_eq!(bucketize(100).unwrap().value(), 9);
        assert!(bucketize(-1).is_err());
    }

    #[test]
    fn empty_kb_round_trips() {
        let mut buf = Vec::new();
        write_kb(&mut buf, &SpKnowledgeBase::new()).unwrap();
        assert!(buf.is_empty());
        let (kb, dups) = read_kb(&buf[..]).unwrap();
        assert!(kb.is_empty() && dups.is_empty());
    }

    #[test]
    fn two_entries_round_trip_sorted() {
        let mut kb = SpKnowledgeBase::new();
        kb.ingest(&Edge::with_count("eat", "fish", "dobj", 4)).unwrap();
        kb.ingest(&Edge::with_count("climb", "cat", "nsubj", 2)).unwrap();
        let mut buf = Vec::new();
        write_kb(&mut buf, &kb).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "climb\tcat\tnsubj\t2\neat\tfish\tdobj\t4\n"
        );
        assert_eq!(read_kb(&buf[..]).unwrap().0, kb);
    }

    #[test]
    fn duplicate_lines_are_summed_like_a_hash_map() {
        let text = "climb\tcat\tnsubj\t2\neat\tfish\tdobj\t1\nclimb\tcat\tnsubj\t5\n";
        let (kb, dups) = read_kb(text.as_bytes()).unwrap();
        let mut oracle: HashMap<(String, String, String), u64> = HashMap::new();
        for line in text.lines() {
            let c: Vec<&str> = line.split('\t').collect();
            *oracle.entry((c[0].into(), c[1].into(), c[2].into())).or_default() += c[3].parse::<u64>().unwrap();
        }
        assert_eq!(dups, vec![3]);
        assert_eq!(kb.len(), oracle.len());
        for ((p, a, r), n) in oracle {
            assert_eq!(kb.query(&p, &a, r.parse().unwrap()), n);
        }
    }

    #[test]
    fn malformed_kb_line_reports_line_number() {
        let text = "climb\tcat\tnsubj\t2\nclimb\tcat\tnsubj\n";
        match read_kb(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match read_edges("a\tb\tamod\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn edge_file_count_column_is_optional() {
        let edges = read_edges("climb\tcat\tnsubj\nclimb\tcat\tnsubj\t4\n".as_bytes()).unwrap();
        let mut kb = SpKnowledgeBase::new();
        kb.ingest_edges(&edges).unwrap();
        assert_eq!(kb.query("climb", "cat", Relation::Nsubj), 5);
    }

    fn edge_strategy() -> impl Strategy<Value = Edge> {
        (0..5u8, 0..7u8, prop::bool::ANY, 1..4i64).prop_map(|(p, a, subj, c)| {
            Edge::with_count(
                &format!("p{p}"),
                &format!("a{a}"),
                if subj { "nsubj" } else { "dobj" },
                c,
            )
        })
    }

    proptest! {
        #[test]
        fn sharded_ingestion_equals_serial(edges in prop::collection::vec(edge_strategy(), 0..200), shards in 1usize..6) {
            let mut serial = SpKnowledgeBase::new();
            serial.ingest_edges(&edges).unwrap();
            let sharded = build_sharded(&edges, shards).unwrap();
            prop_assert_eq!(serial.to_sorted_lines(), sharded.to_sorted_lines());
        }

        #[test]
        fn ingestion_is_order_independent(mut edges in prop::collection::vec(edge_strategy(), 0..100)) {
            let mut a = SpKnowledgeBase::new();
            a.ingest_edges(&edges).unwrap();
            edges.reverse();
            let mut b = SpKnowledgeBase::new();
            b.ingest_edges(&edges).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn bucketize_is_monotone(a in 0i64..10_000, b in 0i64..10_000) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(bucketize(lo).unwrap() <= bucketize(hi).unwrap());
        }
    }
}
