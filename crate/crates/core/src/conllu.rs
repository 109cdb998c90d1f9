//! CoNLL-U reading and writing.
//!
//! Multiword-token lines (`3-4`), empty nodes (`5.1`) and comments are kept
//! verbatim in their original positions so predictions can be written back
//! without disturbing anything but the predicted columns.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    pub head: Option<usize>,
    pub deprel: Option<String>,
    pub deps: String,
    pub misc: String,
}

impl Token {
    /// A token with only a form; every other column unset.
    pub fn new(id: usize, form: &str) -> Self {
        Token {
            id,
            form: form.to_owned(),
            lemma: "_".to_owned(),
            upos: "_".to_owned(),
            xpos: "_".to_owned(),
            feats: "_".to_owned(),
            head: None,
            deprel: None,
            deps: "_".to_owned(),
            misc: "_".to_owned(),
        }
    }

    pub fn tag(&self, column: TagColumn) -> &str {
        match column {
            TagColumn::Upos => &self.upos,
            TagColumn::Xpos => &self.xpos,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiwordSpan {
    pub first: usize,
    pub last: usize,
    pub form: String,
    pub raw: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Line {
    Comment(usize),
    Token(usize),
    Multiword(usize),
    Empty(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub comments: Vec<String>,
    pub mwt_spans: Vec<MultiwordSpan>,
    pub empty_nodes: Vec<String>,
    layout: Vec<Line>,
}

impl Sentence {
    /// Builds a sentence from forms alone, e.g. for tagging unseen text.
    pub fn from_forms<S: AsRef<str>>(forms: &[S]) -> Self {
        let tokens: Vec<Token> = forms
            .iter()
            .enumerate()
            .map(|(i, f)| Token::new(i + 1, f.as_ref()))
            .collect();
        let layout = (0..tokens.len()).map(Line::Token).collect();
        Sentence {
            tokens,
            layout,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    /// Gold tree, if every token has a head and relation.
    pub fn gold_tree(&self) -> Option<DepTree> {
        let heads = self
            .tokens
            .iter()
            .map(|t| t.head)
            .collect::<Option<Vec<_>>>()?;
        let rels = self
            .tokens
            .iter()
            .map(|t| t.deprel.clone())
            .collect::<Option<Vec<_>>>()?;
        Some(DepTree { heads, rels })
    }

    pub fn tags(&self, column: TagColumn) -> Vec<&str> {
        self.tokens.iter().map(|t| t.tag(column)).collect()
    }

    /// Overwrites the tag column and HEAD/DEPREL with a prediction.
    pub fn apply(&mut self, pred: &Prediction, column: TagColumn, sentence: usize) -> Result<()> {
        let n = self.tokens.len();
        if pred.tags.len() != n || pred.tree.heads.len() != n || pred.tree.rels.len() != n {
            return Err(Error::Mismatch {
                sentence,
                msg: format!(
                    "prediction has {} tags, {} heads, {} relations for {} tokens",
                    pred.tags.len(),
                    pred.tree.heads.len(),
                    pred.tree.rels.len(),
                    n
                ),
            });
        }
        for (i, tok) in self.tokens.iter_mut().enumerate() {
            match column {
                TagColumn::Upos => tok.upos = pred.tags[i].clone(),
                TagColumn::Xpos => tok.xpos = pred.tags[i].clone(),
            }
            tok.head = Some(pred.tree.heads[i]);
            tok.deprel = Some(pred.tree.rels[i].clone());
        }
        Ok(())
    }
}

/// Which CoNLL-U column holds the tags the model learns and predicts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagColumn {
    #[default]
    Upos,
    Xpos,
}

impl FromStr for TagColumn {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "upos" => Ok(TagColumn::Upos),
            "xpos" => Ok(TagColumn::Xpos),
            _ => Err(format!("unknown tag column `{s}` (expected upos or xpos)")),
        }
    }
}

/// Heads (0 = root) and relation labels, one per token.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepTree {
    pub heads: Vec<usize>,
    pub rels: Vec<String>,
}

impl DepTree {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Tags and tree predicted for one sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Prediction {
    pub tags: Vec<String>,
    pub tree: DepTree,
}

pub fn read_treebank_file(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    read_treebank(BufReader::new(File::open(path)?))
}

pub fn read_treebank<R: Read>(reader: R) -> Result<Vec<Sentence>> {
    let reader = BufReader::new(reader);
    let mut sentences = Vec::new();
    let mut cur = SentenceBuilder::default();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            if let Some(s) = cur.finish()? {
                sentences.push(s);
            }
            cur = SentenceBuilder::default();
            continue;
        }
        cur.push_line(line, lineno)?;
    }
    if let Some(s) = cur.finish()? {
        sentences.push(s);
    }
    Ok(sentences)
}

#[derive(Default)]
struct SentenceBuilder {
    sentence: Sentence,
    // (line number, raw head) pending range validation
    heads: Vec<(usize, Option<usize>)>,
    first_line: usize,
}

impl SentenceBuilder {
    fn push_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        if self.first_line == 0 {
            self.first_line = lineno;
        }
        let s = &mut self.sentence;
        if line.starts_with('#') {
            s.layout.push(Line::Comment(s.comments.len()));
            s.comments.push(line.to_owned());
            return Ok(());
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| Error::Parse { line: lineno, msg };
        if cols.len() != 10 {
            return Err(err(format!(
                "expected 10 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let id = cols[0];
        if let Some((a, b)) = id.split_once('-') {
            let first = parse_index(a).ok_or_else(|| err(format!("invalid token range `{id}`")))?;
            let last = parse_index(b).ok_or_else(|| err(format!("invalid token range `{id}`")))?;
            if first == 0 || last < first {
                return Err(err(format!("invalid token range `{id}`")));
            }
            s.layout.push(Line::Multiword(s.mwt_spans.len()));
            s.mwt_spans.push(MultiwordSpan {
                first,
                last,
                form: cols[1].to_owned(),
                raw: line.to_owned(),
            });
            return Ok(());
        }
        if let Some((a, b)) = id.split_once('.') {
            if parse_index(a).is_none() || parse_index(b).is_none() {
                return Err(err(format!("invalid empty node id `{id}`")));
            }
            s.layout.push(Line::Empty(s.empty_nodes.len()));
            s.empty_nodes.push(line.to_owned());
            return Ok(());
        }
        let id = parse_index(id).ok_or_else(|| err(format!("non-integer token id `{id}`")))?;
        let expected = s.tokens.len() + 1;
        if s.tokens.iter().any(|t| t.id == id) {
            return Err(err(format!("duplicate token id {id}")));
        }
        if id != expected {
            return Err(err(format!(
                "token id {id} out of sequence, expected {expected}"
            )));
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(parse_index(h).ok_or_else(|| err(format!("non-integer head `{h}`")))?),
        };
        if head == Some(id) {
            return Err(err(format!("token {id} is its own head")));
        }
        let deprel = match cols[7] {
            "_" => None,
            r => Some(r.to_owned()),
        };
        s.layout.push(Line::Token(s.tokens.len()));
        s.tokens.push(Token {
            id,
            form: cols[1].to_owned(),
            lemma: cols[2].to_owned(),
            upos: cols[3].to_owned(),
            xpos: cols[4].to_owned(),
            feats: cols[5].to_owned(),
            head,
            deprel,
            deps: cols[8].to_owned(),
            misc: cols[9].to_owned(),
        });
        self.heads.push((lineno, head));
        Ok(())
    }

    fn finish(self) -> Result<Option<Sentence>> {
        if self.sentence.layout.is_empty() {
            return Ok(None);
        }
        let n = self.sentence.tokens.len();
        if n == 0 {
            return Err(Error::Parse {
                line: self.first_line,
                msg: "sentence has no tokens".to_owned(),
            });
        }
        for (line, head) in &self.heads {
            if let Some(h) = head {
                if *h > n {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!("head {h} out of range for sentence of {n} tokens"),
                    });
                }
            }
        }
        Ok(Some(self.sentence))
    }
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn format_token(t: &Token) -> String {
    let head = t.head.map_or_else(|| "_".to_owned(), |h| h.to_string());
    let deprel = t.deprel.as_deref().unwrap_or("_");
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        t.id, t.form, t.lemma, t.upos, t.xpos, t.feats, head, deprel, t.deps, t.misc
    )
}

pub fn write_sentence<W: Write>(w: &mut W, s: &Sentence) -> Result<()> {
    for line in &s.layout {
        match *line {
            Line::Comment(i) => writeln!(w, "{}", s.comments[i])?,
            Line::Token(i) => writeln!(w, "{}", format_token(&s.tokens[i]))?,
            Line::Multiword(i) => writeln!(w, "{}", s.mwt_spans[i].raw)?,
            Line::Empty(i) => writeln!(w, "{}", s.empty_nodes[i])?,
        }
    }
    writeln!(w)?;
    Ok(())
}

/// Writes sentences, optionally overwriting the tag column and HEAD/DEPREL
/// with one prediction per sentence.
pub fn write_treebank<W: Write>(
    w: &mut W,
    sentences: &[Sentence],
    predictions: Option<&[Prediction]>,
    column: TagColumn,
) -> Result<()> {
    if let Some(preds) = predictions {
        if preds.len() != sentences.len() {
            return Err(Error::Mismatch {
                sentence: preds.len().min(sentences.len()),
                msg: format!(
                    "{} predictions for {} sentences",
                    preds.len(),
                    sentences.len()
                ),
            });
        }
    }
    for (i, s) in sentences.iter().enumerate() {
        match predictions {
            Some(preds) => {
                let mut s = s.clone();
                s.apply(&preds[i], column, i)?;
                write_sentence(w, &s)?;
            }
            None => write_sentence(w, s)?,
        }
    }
    Ok(())
}

/// Deterministic 9:1 train/dev split; `|dev| = round(n / 10)`. Both parts
/// keep the original sentence order.
pub fn split_9_1(sentences: &[Sentence], seed: u64) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    let n = sentences.len();
    if n < 10 {
        return Err(Error::TooFewSentences(n));
    }
    let dev_n = (n as f64 / 10.0).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_dev = vec![false; n];
    for &i in &idx[..dev_n] {
        in_dev[i] = true;
    }
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (i, s) in sentences.iter().enumerate() {
        if in_dev[i] {
            dev.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, dev))
}

/// Checks that `heads` (0 = root) form a tree: every head in range, no self
/// loops, no cycles.
pub fn check_tree(heads: &[usize]) -> Result<()> {
    let n = heads.len();
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(Error::InvalidTree(format!(
                "head {h} of token {} out of range",
                i + 1
            )));
        }
        if h == i + 1 {
            return Err(Error::InvalidTree(format!(
                "token {} is its own head",
                i + 1
            )));
        }
    }
    // 0 = unvisited, 1 = on current path, 2 = reaches root
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            cur = heads[cur - 1];
        }
        if state[cur] == 1 {
            return Err(Error::InvalidTree(format!("cycle through token {cur}")));
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

/// Number of tokens attached to the root.
pub fn root_children(heads: &[usize]) -> usize {
    heads.iter().filter(|&&h| h == 0).count()
}

/// Projectivity test: every token strictly inside an arc's span must be
/// dominated by the arc's head. Errors on malformed (e.g. cyclic) input.
pub fn is_projective(heads: &[usize]) -> Result<bool> {
    check_tree(heads)?;
    let n = heads.len();
    // Each token's ancestors, as a bitset over 0..=n.
    let mut dominated_by = vec![vec![false; n + 1]; n + 1];
    for (m, row) in dominated_by.iter_mut().enumerate().skip(1) {
        let mut cur = m;
        while cur != 0 {
            cur = heads[cur - 1];
            row[cur] = true;
        }
    }
    for (m, &h) in (1..=n).zip(heads) {
        let (lo, hi) = if h < m { (h, m) } else { (m, h) };
        for row in &dominated_by[lo + 1..hi] {
            if !row[h] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const SIMPLE: &str = "1\tHello\thello\tINTJ\tUH\t_\t0\troot\t_\t_\n\
                          2\tworld\tworld\tNOUN\tNN\t_\t1\tobj\t_\t_\n\n";

    const WITH_MWT: &str = "# text = don't go\n\
                            1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                            1\tdo\tdo\tAUX\tVBP\t_\t3\taux\t_\t_\n\
                            2\tn't\tnot\tPART\tRB\t_\t3\tadvmod\t_\t_\n\
                            3\tgo\tgo\tVERB\tVB\t_\t0\troot\t_\t_\n\
                            3.1\tgone\t_\t_\t_\t_\t_\t_\t3:conj\t_\n\n";

    #[test]
    fn reads_simple_sentence() {
        let s = read_treebank(SIMPLE.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].gold_tree().unwrap().heads, vec![0, 1]);
        assert_eq!(s[0].tokens[1].deprel.as_deref(), Some("obj"));
    }

    #[test]
    fn multiword_and_empty_nodes_excluded_from_tokens() {
        let s = read_treebank(WITH_MWT.as_bytes()).unwrap();
        assert_eq!(s[0].tokens.len(), 3);
        assert_eq!(s[0].mwt_spans.len(), 1);
        assert_eq!(s[0].mwt_spans[0].form, "don't");
        assert_eq!((s[0].mwt_spans[0].first, s[0].mwt_spans[0].last), (1, 2));
        assert_eq!(s[0].empty_nodes.len(), 1);
        assert_eq!(s[0].comments, vec!["# text = don't go"]);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for input in [SIMPLE, WITH_MWT] {
            let s = read_treebank(input.as_bytes()).unwrap();
            let mut out = Vec::new();
            write_treebank(&mut out, &s, None, TagColumn::Upos).unwrap();
            assert_eq!(String::from_utf8(out).unwrap(), input);
        }
    }

    #[test]
    fn underscores_parse_as_unset() {
        let s = read_treebank("1\ta\t_\t_\t_\t_\t_\t_\t_\t_\n".as_bytes()).unwrap();
        assert_eq!(s[0].tokens[0].head, None);
        assert_eq!(s[0].tokens[0].deprel, None);
        assert!(s[0].gold_tree().is_none());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_id = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\nx\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n";
        match read_treebank(bad_id.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let dup = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n1\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n";
        match read_treebank(dup.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
        let far_head = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\t5\tdep\t_\t_\n";
        match read_treebank(far_head.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn predictions_overwrite_only_predicted_columns() {
        let s = read_treebank(WITH_MWT.as_bytes()).unwrap();
        let pred = Prediction {
            tags: vec!["X".into(), "Y".into(), "Z".into()],
            tree: DepTree {
                heads: vec![0, 1, 1],
                rels: vec!["root".into(), "a".into(), "b".into()],
            },
        };
        let mut out = Vec::new();
        write_treebank(&mut out, &s, Some(&[pred]), TagColumn::Upos).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# text = don't go");
        assert_eq!(lines[1], "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_");
        assert_eq!(lines[2], "1\tdo\tdo\tX\tVBP\t_\t0\troot\t_\t_");
        assert_eq!(lines[5], "3.1\tgone\t_\t_\t_\t_\t_\t_\t3:conj\t_");
        let cols: Vec<&str> = lines[2].split('\t').collect();
        assert_eq!((cols[6], cols[7]), ("0", "root"));
    }

    #[test]
    fn xpos_column_prediction() {
        let s = read_treebank(SIMPLE.as_bytes()).unwrap();
        let pred = Prediction {
            tags: vec!["A".into(), "B".into()],
            tree: DepTree {
                heads: vec![0, 1],
                rels: vec!["root".into(), "obj".into()],
            },
        };
        let mut out = Vec::new();
        write_treebank(&mut out, &s, Some(&[pred]), TagColumn::Xpos).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("1\tHello\thello\tINTJ\tA\t"));
    }

    #[test]
    fn prediction_length_mismatch_names_sentence() {
        let mut s = read_treebank(SIMPLE.as_bytes()).unwrap();
        s.push(s[0].clone());
        let ok = Prediction {
            tags: vec!["A".into(), "B".into()],
            tree: DepTree {
                heads: vec![0, 1],
                rels: vec!["root".into(), "obj".into()],
            },
        };
        let short = Prediction {
            tags: vec!["A".into()],
            tree: DepTree {
                heads: vec![0],
                rels: vec!["root".into()],
            },
        };
        match write_treebank(&mut Vec::new(), &s, Some(&[ok, short]), TagColumn::Upos) {
            Err(Error::Mismatch { sentence, .. }) => assert_eq!(sentence, 1),
            other => panic!("{other:?}"),
        }
    }

    fn corpus(n: usize) -> Vec<Sentence> {
        (0..n)
            .map(|i| Sentence::from_forms(&[format!("w{i}")]))
            .collect()
    }

    #[test]
    fn split_sizes() {
        let (train, dev) = split_9_1(&corpus(100), 42).unwrap();
        assert_eq!((train.len(), dev.len()), (90, 10));
        let (train, dev) = split_9_1(&corpus(10), 42).unwrap();
        assert_eq!((train.len(), dev.len()), (9, 1));
        let (train, dev) = split_9_1(&corpus(15), 1).unwrap();
        assert_eq!((train.len(), dev.len()), (13, 2));
        assert!(matches!(
            split_9_1(&corpus(9), 42),
            Err(Error::TooFewSentences(9))
        ));
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus(57);
        assert_eq!(split_9_1(&c, 7).unwrap(), split_9_1(&c, 7).unwrap());
        assert_ne!(split_9_1(&c, 7).unwrap().1, split_9_1(&c, 8).unwrap().1);
    }

    #[test]
    fn projectivity_examples() {
        assert!(is_projective(&[0, 1]).unwrap());
        // 1<-2, 2<-0, 3<-4, 4<-2: nested, projective
        assert!(is_projective(&[2, 0, 4, 2]).unwrap());
        // arcs (1,3) and (0,2) cross
        assert!(!is_projective(&[3, 0, 2, 2]).unwrap());
        assert!(!crossing_oracle(&[3, 0, 2, 2]));
        assert!(!is_projective(&[0, 4, 1, 1]).unwrap());
        assert!(matches!(is_projective(&[2, 1]), Err(Error::InvalidTree(_))));
    }

    /// Exhaustive pairwise crossing check over all arcs, root arc included.
    fn crossing_oracle(heads: &[usize]) -> bool {
        let arcs: Vec<(usize, usize)> = heads
            .iter()
            .enumerate()
            .map(|(i, &h)| (h.min(i + 1), h.max(i + 1)))
            .collect();
        for (a, &(l1, r1)) in arcs.iter().enumerate() {
            for &(l2, r2) in &arcs[a + 1..] {
                if (l1 < l2 && l2 < r1 && r1 < r2) || (l2 < l1 && l1 < r2 && r2 < r1) {
                    return false;
                }
            }
        }
        true
    }

    fn random_tree() -> impl Strategy<Value = Vec<usize>> {
        // Attach tokens in a random order to an already attached node.
        (1usize..9).prop_flat_map(|n| {
            (
                Just(n),
                Just((1..=n).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec(any::<usize>(), n),
            )
                .prop_map(|(n, order, picks)| {
                    let mut heads = vec![0; n];
                    let mut attached = vec![0usize];
                    for (k, &tok) in order.iter().enumerate() {
                        heads[tok - 1] = attached[picks[k] % attached.len()];
                        attached.push(tok);
                    }
                    heads
                })
        })
    }

    proptest! {
        #[test]
        fn projectivity_agrees_with_crossing_oracle(heads in random_tree()) {
            prop_assert_eq!(is_projective(&heads).unwrap(), crossing_oracle(&heads));
        }

        #[test]
        fn read_write_read_is_fixed_point(heads in random_tree(), upos in "[A-Z]{1,4}") {
            let mut s = Sentence::from_forms(&heads.iter().map(|h| format!("w{h}")).collect::<Vec<_>>());
            for (t, h) in s.tokens.iter_mut().zip(&heads) {
                t.head = Some(*h);
                t.deprel = Some("dep".into());
                t.upos = upos.clone();
            }
            let mut first = Vec::new();
            write_treebank(&mut first, &[s], None, TagColumn::Upos).unwrap();
            let again = read_treebank(first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_treebank(&mut second, &again, None, TagColumn::Upos).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
