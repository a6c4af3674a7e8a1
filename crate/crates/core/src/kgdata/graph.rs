//! Triple storage, vocabularies, filtered-evaluation index, and queries.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{RaddError, Result};

/// A (head, relation, tail) fact with dense ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u32,
    pub rel: u32,
    pub tail: u32,
}

impl Triple {
    pub fn new(head: u32, rel: u32, tail: u32) -> Self {
        Triple { head, rel, tail }
    }
}

/// Which slot of the triple is being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `(h, r, ?)` — the known entity is the head.
    Tail,
    /// `(?, r, t)` — the known entity is the tail.
    Head,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Tail, Direction::Head];

    pub fn index(self) -> usize {
        match self {
            Direction::Tail => 0,
            Direction::Head => 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Tail => write!(f, "tail"),
            Direction::Head => write!(f, "head"),
        }
    }
}

/// An evaluation query: complete the hidden slot of a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub known: u32,
    pub relation: u32,
    pub direction: Direction,
    pub answer: u32,
}

impl Query {
    pub fn from_triple(t: Triple, direction: Direction) -> Query {
        match direction {
            Direction::Tail => Query {
                known: t.head,
                relation: t.rel,
                direction,
                answer: t.tail,
            },
            Direction::Head => Query {
                known: t.tail,
                relation: t.rel,
                direction,
                answer: t.head,
            },
        }
    }
}

/// Ordered label vocabulary with dense ids assigned in first-occurrence order.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Whether loading may extend the vocabularies or must reuse them as-is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    Build,
    Reuse,
}

/// Loads one split of tab-separated `head␉relation␉tail` labels.
pub fn load_triples(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
    mode: VocabMode,
) -> Result<Vec<Triple>> {
    let file = std::fs::File::open(path).map_err(|e| RaddError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut triples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RaddError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (h, r, t) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(h), Some(r), Some(t), None) => (h, r, t),
            _ => {
                return Err(RaddError::MalformedTriple {
                    path: path.into(),
                    line: lineno + 1,
                })
            }
        };
        let resolve = |vocab: &mut Vocab, label: &str, kind: &'static str| -> Result<u32> {
            match mode {
                VocabMode::Build => Ok(vocab.intern(label)),
                VocabMode::Reuse => vocab.get(label).ok_or_else(|| RaddError::UnknownLabel {
                    path: path.into(),
                    line: lineno + 1,
                    kind,
                    label: label.to_owned(),
                }),
            }
        };
        let head = resolve(entities, h, "entity")?;
        let rel = resolve(relations, r, "relation")?;
        let tail = resolve(entities, t, "entity")?;
        triples.push(Triple::new(head, rel, tail));
    }
    if triples.is_empty() {
        return Err(RaddError::EmptyTripleFile { path: path.into() });
    }
    Ok(triples)
}

/// Writes a split back out in the same TSV format.
pub fn write_triples(path: &Path, triples: &[Triple], entities: &Vocab, relations: &Vocab) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| RaddError::io(path, e))?,
    );
    for t in triples {
        writeln!(
            out,
            "{}\t{}\t{}",
            entities.label(t.head),
            relations.label(t.rel),
            entities.label(t.tail)
        )
        .map_err(|e| RaddError::io(path, e))?;
    }
    Ok(())
}

/// Map (entity, relation, direction) → all true completions over every split.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    map: HashMap<(u32, u32, u8), Vec<u32>>,
}

impl FilterIndex {
    /// The set of true completions for a key; sorted ascending.
    pub fn completions(&self, known: u32, rel: u32, dir: Direction) -> &[u32] {
        self.map
            .get(&(known, rel, dir.index() as u8))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn contains(&self, known: u32, rel: u32, dir: Direction, candidate: u32) -> bool {
        self.completions(known, rel, dir)
            .binary_search(&candidate)
            .is_ok()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Builds the filtered-evaluation index over train ∪ valid ∪ test.
pub fn build_filter_index<'a>(splits: impl IntoIterator<Item = &'a [Triple]>) -> FilterIndex {
    let mut map: HashMap<(u32, u32, u8), Vec<u32>> = HashMap::new();
    for split in splits {
        for t in split {
            map.entry((t.head, t.rel, Direction::Tail.index() as u8))
                .or_default()
                .push(t.tail);
            map.entry((t.tail, t.rel, Direction::Head.index() as u8))
                .or_default()
                .push(t.head);
        }
    }
    for v in map.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    FilterIndex { map }
}

/// The full graph: vocabularies, splits, and the filtered-evaluation index.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub filter: FilterIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl KnowledgeGraph {
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let n = entities.len() as u32;
        let r = relations.len() as u32;
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head >= n || t.tail >= n || t.rel >= r {
                return Err(RaddError::InvalidArg(format!(
                    "triple ({}, {}, {}) out of vocabulary bounds |E|={n}, |R|={r}",
                    t.head, t.rel, t.tail
                )));
            }
        }
        let filter = build_filter_index([train.as_slice(), valid.as_slice(), test.as_slice()]);
        Ok(KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            filter,
        })
    }

    /// Loads the three splits, extending one shared vocabulary in file order.
    pub fn load(train: &Path, valid: &Path, test: &Path) -> Result<Self> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let tr = load_triples(train, &mut entities, &mut relations, VocabMode::Build)?;
        let va = load_triples(valid, &mut entities, &mut relations, VocabMode::Build)?;
        let te = load_triples(test, &mut entities, &mut relations, VocabMode::Build)?;
        KnowledgeGraph::new(entities, relations, tr, va, te)
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Two queries per triple, tail direction first; order follows the split.
pub fn make_queries(kg: &KnowledgeGraph, split: Split) -> Vec<Query> {
    let triples = kg.split(split);
    let mut queries = Vec::with_capacity(triples.len() * 2);
    for &t in triples {
        queries.push(Query::from_triple(t, Direction::Tail));
        queries.push(Query::from_triple(t, Direction::Head));
    }
    queries
}
