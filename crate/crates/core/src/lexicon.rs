//! Word, character, tag and relation vocabularies.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conllu::{Sentence, TagColumn};
use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const PAD: usize = 1;
const NUM_SPECIAL: usize = 2;

/// Dense string index. Serialized as the plain item list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(items: Vec<String>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { items, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.items
    }
}

impl Vocab {
    fn insert(&mut self, item: &str) -> usize {
        if let Some(&i) = self.index.get(item) {
            return i;
        }
        self.items.push(item.to_owned());
        self.index.insert(item.to_owned(), self.items.len() - 1);
        self.items.len() - 1
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn item(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Vocabularies built from the training data.
///
/// Word and character indices 0 and 1 are reserved for the unknown and
/// padding symbols; they are not entries of the string index, so a training
/// word spelled like a special symbol still gets its own row. Tags and
/// relations have no unknown symbol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    words: Vocab,
    word_counts: Vec<usize>,
    chars: Vocab,
    tags: Vocab,
    rels: Vocab,
    tag_column: TagColumn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WordChoice {
    Keep,
    Unk,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CoverageReport {
    pub hits: usize,
    pub misses: usize,
    pub lowercase_hits: usize,
    pub pretrained_entries: usize,
}

impl Lexicon {
    pub fn build(train: &[Sentence], tag_column: TagColumn) -> Result<Self> {
        if train.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        let mut words = Vocab::default();
        let mut word_counts = Vec::new();
        let mut chars = Vocab::default();
        let mut tags = BTreeSet::new();
        let mut rels = BTreeSet::new();
        for s in train {
            for t in &s.tokens {
                let w = words.insert(&t.form);
                if w == word_counts.len() {
                    word_counts.push(0);
                }
                word_counts[w] += 1;
                for c in t.form.chars() {
                    chars.insert(c.encode_utf8(&mut [0; 4]));
                }
                tags.insert(t.tag(tag_column).to_owned());
                if let Some(r) = &t.deprel {
                    rels.insert(r.clone());
                }
            }
        }
        Ok(Lexicon {
            words,
            word_counts,
            chars,
            tags: Vocab::from(tags.into_iter().collect::<Vec<_>>()),
            rels: Vocab::from(rels.into_iter().collect::<Vec<_>>()),
            tag_column,
        })
    }

    pub fn tag_column(&self) -> TagColumn {
        self.tag_column
    }

    /// Rows in the word embedding table, specials included.
    pub fn num_words(&self) -> usize {
        self.words.len() + NUM_SPECIAL
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len() + NUM_SPECIAL
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn num_rels(&self) -> usize {
        self.rels.len()
    }

    pub fn word_index(&self, form: &str) -> usize {
        self.words.get(form).map_or(UNK, |i| i + NUM_SPECIAL)
    }

    /// Training frequency `#(w)` of a word index; 0 for the specials.
    pub fn count(&self, word: usize) -> usize {
        if word < NUM_SPECIAL {
            0
        } else {
            self.word_counts[word - NUM_SPECIAL]
        }
    }

    pub fn word_count(&self, form: &str) -> usize {
        self.count(self.word_index(form))
    }

    /// Character indices of a form; unseen characters map to the unknown
    /// symbol and an empty form becomes a single padding symbol.
    pub fn char_indices(&self, form: &str) -> Vec<usize> {
        let mut buf = [0; 4];
        let idx: Vec<usize> = form
            .chars()
            .map(|c| {
                self.chars
                    .get(c.encode_utf8(&mut buf))
                    .map_or(UNK, |i| i + NUM_SPECIAL)
            })
            .collect();
        if idx.is_empty() {
            vec![PAD]
        } else {
            idx
        }
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.tags.get(tag)
    }

    pub fn rel_index(&self, rel: &str) -> Option<usize> {
        self.rels.get(rel)
    }

    pub fn tag(&self, i: usize) -> &str {
        self.tags.item(i)
    }

    pub fn rel(&self, i: usize) -> &str {
        self.rels.item(i)
    }

    pub fn tags(&self) -> &[String] {
        self.tags.items()
    }

    pub fn rels(&self) -> &[String] {
        self.rels.items()
    }

    /// Word strings in table order (specials excluded), paired with their row.
    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.words
            .items()
            .iter()
            .enumerate()
            .map(|(i, w)| (i + NUM_SPECIAL, w.as_str()))
    }

    /// Overwrites rows of the word embedding table with pretrained vectors.
    ///
    /// Lines are `word v1 ... vD`. An optional `count dim` header line is
    /// skipped. Words are matched exactly, then by their lowercase form.
    pub fn load_pretrained<R: Read>(
        &self,
        reader: R,
        table: &mut [f64],
        dim: usize,
    ) -> Result<CoverageReport> {
        let wanted: HashSet<String> = self
            .words()
            .flat_map(|(_, w)| [w.to_owned(), w.to_lowercase()])
            .collect();
        let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
        let mut report = CoverageReport::default();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else {
                continue;
            };
            let rest: Vec<&str> = fields.collect();
            if lineno == 1
                && rest.len() == 1
                && word.parse::<usize>().is_ok()
                && rest[0].parse::<usize>().is_ok()
            {
                continue;
            }
            if rest.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: rest.len(),
                });
            }
            report.pretrained_entries += 1;
            if !wanted.contains(word) || vectors.contains_key(word) {
                continue;
            }
            let v = rest
                .iter()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("malformed vector component: {e}"),
                })?;
            vectors.insert(word.to_owned(), v);
        }
        for (row, w) in self.words() {
            let found = match vectors.get(w) {
                Some(v) => Some(v),
                None => {
                    let v = vectors.get(&w.to_lowercase());
                    if v.is_some() {
                        report.lowercase_hits += 1;
                    }
                    v
                }
            };
            match found {
                Some(v) => {
                    table[row * dim..(row + 1) * dim].copy_from_slice(v);
                    report.hits += 1;
                }
                None => report.misses += 1,
            }
        }
        Ok(report)
    }
}

/// Probability of replacing a word seen `count` times with the unknown symbol.
pub fn unk_probability(count: usize) -> f64 {
    0.25 / (0.25 + count as f64)
}

/// Word dropout for a known word during training.
pub fn word_dropout_decide<R: Rng + ?Sized>(count: usize, rng: &mut R) -> WordChoice {
    if rng.random::<f64>() < unk_probability(count) {
        WordChoice::Unk
    } else {
        WordChoice::Keep
    }
}
