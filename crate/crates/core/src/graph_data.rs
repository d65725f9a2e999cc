//! Triple datasets: loading, vocabularies, the filtered-ranking index and
//! reciprocal-relation augmentation.
//!
//! A dataset directory holds `train.txt`, `valid.txt` and `test.txt`, one
//! `head<TAB>relation<TAB>tail` fact per line. Ids are assigned in first-seen
//! order over train, then valid, then test.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One integer-coded fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub const fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Bijection between names and dense ids `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameMap {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl NameMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, assigning the next free id on first sight.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub entities: NameMap,
    pub relations: NameMap,
    /// Relation count before reciprocal augmentation, if it was applied.
    original_relations: Option<usize>,
}

impl Vocabulary {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn original_relations(&self) -> Option<usize> {
        self.original_relations
    }

    pub fn has_reciprocals(&self) -> bool {
        self.original_relations.is_some()
    }

    /// Encodes a named fact without extending the vocabulary.
    pub fn encode(&self, head: &str, relation: &str, tail: &str) -> Option<Triple> {
        Some(Triple::new(
            self.entities.id(head)?,
            self.relations.id(relation)?,
            self.entities.id(tail)?,
        ))
    }

    pub fn decode(&self, triple: Triple) -> Option<(&str, &str, &str)> {
        Some((
            self.entities.name(triple.head)?,
            self.relations.name(triple.relation)?,
            self.entities.name(triple.tail)?,
        ))
    }

    pub fn check(&self, triple: Triple) -> Result<()> {
        check_id("entity", triple.head, self.num_entities())?;
        check_id("relation", triple.relation, self.num_relations())?;
        check_id("entity", triple.tail, self.num_entities())
    }
}

pub(crate) fn check_id(kind: &'static str, id: u32, limit: usize) -> Result<()> {
    if (id as usize) < limit {
        Ok(())
    } else {
        Err(Error::IdOutOfRange {
            kind,
            id: id as usize,
            limit,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<Triple> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// `(train, valid, test)` sizes.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

/// Splits plus the vocabulary they are coded against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub splits: DatasetSplits,
    pub vocab: Vocabulary,
}

impl Dataset {
    pub fn load(directory: impl AsRef<Path>) -> Result<Self> {
        let (splits, vocab) = load_dataset(directory)?;
        Ok(Dataset { splits, vocab })
    }

    pub fn with_reciprocals(&self) -> Result<Self> {
        let (splits, vocab) = add_reciprocals(&self.splits, &self.vocab)?;
        Ok(Dataset { splits, vocab })
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, [String; 3])>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.is_empty() {
        return Err(Error::EmptySplit(path.to_path_buf()));
    }
    let body = text.strip_suffix('\n').unwrap_or(&text);
    let mut rows = Vec::new();
    for (index, raw) in body.split('\n').enumerate() {
        let line_no = index + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: "blank line".into(),
            });
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: "empty field".into(),
            });
        }
        rows.push((
            line_no,
            [
                fields[0].to_owned(),
                fields[1].to_owned(),
                fields[2].to_owned(),
            ],
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptySplit(path.to_path_buf()));
    }
    Ok(rows)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `directory`.
///
/// Entities or relations seen first in valid/test get fresh ids; nothing is
/// dropped or deduplicated.
pub fn load_dataset(directory: impl AsRef<Path>) -> Result<(DatasetSplits, Vocabulary)> {
    let directory = directory.as_ref();
    if !directory.is_dir() {
        return Err(Error::MissingFile(directory.to_path_buf()));
    }
    // Read everything first so a bad later split does not leave ids half-assigned.
    let mut raw = Vec::with_capacity(3);
    for split in Split::ALL {
        raw.push((split, read_lines(&directory.join(split.file_name()))?));
    }

    let mut vocab = Vocabulary::default();
    let mut splits = DatasetSplits::default();
    for (split, rows) in raw {
        let out = splits.get_mut(split);
        out.reserve(rows.len());
        for (_, [h, r, t]) in rows {
            let head = vocab.entities.intern(&h);
            let relation = vocab.relations.intern(&r);
            let tail = vocab.entities.intern(&t);
            out.push(Triple::new(head, relation, tail));
        }
    }
    Ok((splits, vocab))
}

/// Reads one triple file against a fixed vocabulary; unknown names are errors.
pub fn load_split_strict(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let rows = read_lines(path)?;
    rows.into_iter()
        .map(|(_, [h, r, t])| {
            let unknown = |kind, name: &str| Error::UnknownName {
                kind,
                name: name.to_owned(),
                path: path.to_path_buf(),
            };
            let head = vocab.entities.id(&h).ok_or_else(|| unknown("entity", &h))?;
            let relation = vocab
                .relations
                .id(&r)
                .ok_or_else(|| unknown("relation", &r))?;
            let tail = vocab.entities.id(&t).ok_or_else(|| unknown("entity", &t))?;
            Ok(Triple::new(head, relation, tail))
        })
        .collect()
}

/// Known answers for every `(head, relation, ?)` and `(?, relation, tail)`
/// query over all splits.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(u32, u32), Vec<u32>>,
    heads: HashMap<(u32, u32), Vec<u32>>,
}

impl FilterIndex {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut index = FilterIndex::default();
        for t in triples {
            index
                .tails
                .entry((t.head, t.relation))
                .or_default()
                .push(t.tail);
            index
                .heads
                .entry((t.tail, t.relation))
                .or_default()
                .push(t.head);
        }
        for set in index.tails.values_mut().chain(index.heads.values_mut()) {
            set.sort_unstable();
            set.dedup();
        }
        index
    }

    /// Sorted tails known for `(head, relation)`.
    pub fn tails_of(&self, head: u32, relation: u32) -> &[u32] {
        self.tails
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Sorted heads known for `(tail, relation)`.
    pub fn heads_of(&self, tail: u32, relation: u32) -> &[u32] {
        self.heads
            .get(&(tail, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, triple: Triple) -> bool {
        self.tails_of(triple.head, triple.relation)
            .binary_search(&triple.tail)
            .is_ok()
    }
}

pub fn build_filter_index(splits: &DatasetSplits) -> FilterIndex {
    FilterIndex::from_triples(splits.iter())
}

/// Appends `(t, r + |R|, h)` for every `(h, r, t)` in each split and doubles
/// the relation vocabulary.
pub fn add_reciprocals(
    splits: &DatasetSplits,
    vocab: &Vocabulary,
) -> Result<(DatasetSplits, Vocabulary)> {
    if vocab.has_reciprocals() {
        return Err(Error::ReciprocalsPresent);
    }
    let base = vocab.num_relations();
    let mut out_vocab = vocab.clone();
    for name in vocab.relations.names() {
        let inverse = format!("{name}_reverse");
        if vocab.relations.id(&inverse).is_some() {
            return Err(Error::Contract(format!(
                "relation name {inverse:?} already exists"
            )));
        }
        out_vocab.relations.intern(&inverse);
    }
    out_vocab.original_relations = Some(base);

    let augment = |triples: &[Triple]| -> Vec<Triple> {
        let mut out = Vec::with_capacity(triples.len() * 2);
        out.extend_from_slice(triples);
        out.extend(
            triples
                .iter()
                .map(|t| Triple::new(t.tail, t.relation + base as u32, t.head)),
        );
        out
    };
    let out_splits = DatasetSplits {
        train: augment(&splits.train),
        valid: augment(&splits.valid),
        test: augment(&splits.test),
    };
    Ok((out_splits, out_vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_dir(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in files {
            fs::write(dir.path().join(name), body).unwrap();
        }
        dir
    }

    #[test]
    fn single_triple_graph() {
        let dir = write_dir(&[
            ("train.txt", "a\tr\tb\n"),
            ("valid.txt", "a\tr\tb\n"),
            ("test.txt", "a\tr\tb"),
        ]);
        let (splits, vocab) = load_dataset(dir.path()).unwrap();
        assert_eq!(vocab.num_entities(), 2);
        assert_eq!(vocab.num_relations(), 1);
        assert_eq!(splits.sizes(), (1, 1, 1));
        assert_eq!(splits.train[0], Triple::new(0, 0, 1));
    }

    #[test]
    fn first_seen_ids_span_splits() {
        let dir = write_dir(&[
            ("train.txt", "x\tr\ty\n"),
            ("valid.txt", "z\ts\tx\n"),
            ("test.txt", "w\tr\tz\r\n"),
        ]);
        let (splits, vocab) = load_dataset(dir.path()).unwrap();
        assert_eq!(vocab.entities.names(), ["x", "y", "z", "w"]);
        assert_eq!(splits.valid[0], Triple::new(2, 1, 0));
        assert_eq!(splits.test[0], Triple::new(3, 0, 2));
        for t in splits.iter() {
            let (h, r, tl) = vocab.decode(*t).unwrap();
            assert_eq!(vocab.encode(h, r, tl), Some(*t));
        }
    }

    #[test]
    fn malformed_and_missing_inputs() {
        let dir = write_dir(&[
            ("train.txt", "a\tr\tb\na\tr\n"),
            ("valid.txt", "a\tr\tb\n"),
            ("test.txt", "a\tr\tb\n"),
        ]);
        match load_dataset(dir.path()) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }

        let dir = write_dir(&[
            ("train.txt", "a\tr\tb\n\na\tr\tc\n"),
            ("valid.txt", "a\tr\tb\n"),
            ("test.txt", "a\tr\tb\n"),
        ]);
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::MalformedLine { line: 2, .. })
        ));

        let dir = write_dir(&[("train.txt", "a\tr\tb\n"), ("valid.txt", "a\tr\tb\n")]);
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));

        let dir = write_dir(&[
            ("train.txt", "a\tr\tb\n"),
            ("valid.txt", ""),
            ("test.txt", "a\tr\tb\n"),
        ]);
        assert!(matches!(load_dataset(dir.path()), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn strict_loader_rejects_unknown_names() {
        let dir = write_dir(&[
            ("train.txt", "a\tr\tb\n"),
            ("valid.txt", "a\tr\tb\n"),
            ("test.txt", "a\tr\tb\n"),
            ("extra.txt", "a\tr\tq\n"),
        ]);
        let (_, vocab) = load_dataset(dir.path()).unwrap();
        assert!(matches!(
            load_split_strict(dir.path().join("extra.txt"), &vocab),
            Err(Error::UnknownName { kind: "entity", .. })
        ));
    }

    #[test]
    fn filter_index_small_cases() {
        let splits = DatasetSplits {
            train: vec![Triple::new(0, 0, 1)],
            valid: vec![Triple::new(0, 0, 2)],
            test: vec![],
        };
        let index = build_filter_index(&splits);
        assert_eq!(index.tails_of(0, 0), &[1, 2]);
        assert_eq!(index.heads_of(1, 0), &[0]);
        assert_eq!(index.heads_of(2, 0), &[0]);
        assert!(index.tails_of(1, 0).is_empty());
        assert!(index.contains(Triple::new(0, 0, 2)));
        assert!(!index.contains(Triple::new(1, 0, 0)));
    }

    #[test]
    fn reciprocal_single_inversion_and_guard() {
        let mut vocab = Vocabulary::default();
        vocab.entities.intern("a");
        vocab.entities.intern("b");
        vocab.relations.intern("r");
        let splits = DatasetSplits {
            train: vec![Triple::new(0, 0, 1)],
            ..Default::default()
        };
        let (aug, aug_vocab) = add_reciprocals(&splits, &vocab).unwrap();
        assert_eq!(aug_vocab.num_relations(), 2);
        assert_eq!(aug_vocab.original_relations(), Some(1));
        assert_eq!(aug.train, vec![Triple::new(0, 0, 1), Triple::new(1, 1, 0)]);
        assert!(matches!(
            add_reciprocals(&aug, &aug_vocab),
            Err(Error::ReciprocalsPresent)
        ));
    }
}
