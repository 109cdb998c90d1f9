//! Tagging and attachment scores.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use crate::conllu::{DepTree, Prediction, Sentence, TagColumn, Token};
use crate::error::{Error, Result};

/// Which tokens count as punctuation for the no-punct scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PunctConvention {
    /// Gold XPOS is one of `` '' : , .
    Ptb,
    /// Gold UPOS is PUNCT.
    Ud,
}

impl PunctConvention {
    /// PTB for XPOS-tagged data, UD otherwise.
    pub fn default_for(column: TagColumn) -> Self {
        match column {
            TagColumn::Xpos => PunctConvention::Ptb,
            TagColumn::Upos => PunctConvention::Ud,
        }
    }
}

impl FromStr for PunctConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ptb" => Ok(PunctConvention::Ptb),
            "ud" => Ok(PunctConvention::Ud),
            _ => Err(Error::UnknownConvention(s.to_owned())),
        }
    }
}

impl fmt::Display for PunctConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PunctConvention::Ptb => "ptb",
            PunctConvention::Ud => "ud",
        })
    }
}

pub const PTB_PUNCT_TAGS: [&str; 5] = ["``", "''", ":", ",", "."];

pub fn is_punct(token: &Token, convention: PunctConvention) -> bool {
    match convention {
        PunctConvention::Ptb => PTB_PUNCT_TAGS.contains(&token.xpos.as_str()),
        PunctConvention::Ud => token.upos == "PUNCT",
    }
}

/// Raw counts over one token subset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tokens: usize,
    pub pos_correct: usize,
    pub uas_correct: usize,
    pub las_correct: usize,
    /// Tag, head and relation all correct.
    pub mixed_correct: usize,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        100.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl Counts {
    pub fn pos(&self) -> f64 {
        pct(self.pos_correct, self.tokens)
    }
    pub fn uas(&self) -> f64 {
        pct(self.uas_correct, self.tokens)
    }
    pub fn las(&self) -> f64 {
        pct(self.las_correct, self.tokens)
    }
    pub fn mixed(&self) -> f64 {
        pct(self.mixed_correct, self.tokens)
    }

    fn add(&mut self, o: &Counts) {
        self.tokens += o.tokens;
        self.pos_correct += o.pos_correct;
        self.uas_correct += o.uas_correct;
        self.las_correct += o.las_correct;
        self.mixed_correct += o.mixed_correct;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub name: String,
    pub convention: PunctConvention,
    pub all: Counts,
    pub no_punct: Counts,
}

impl EvalReport {
    /// Tagging accuracy, always over every token.
    pub fn pos(&self) -> f64 {
        self.all.pos()
    }

    /// Attachment scores without punctuation.
    pub fn uas(&self) -> f64 {
        self.no_punct.uas()
    }

    pub fn las(&self) -> f64 {
        self.no_punct.las()
    }

    /// Mixed accuracy over every token, in percent.
    pub fn mixed(&self) -> f64 {
        self.all.mixed()
    }
}

/// Scores predictions against gold sentences. Tags are compared in
/// `column`; relation labels by exact string equality.
pub fn evaluate(
    gold: &[Sentence],
    pred: &[Prediction],
    column: TagColumn,
    convention: PunctConvention,
) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Mismatch {
            sentence: gold.len().min(pred.len()),
            msg: format!(
                "{} gold sentences but {} predictions",
                gold.len(),
                pred.len()
            ),
        });
    }
    let mut all = Counts::default();
    let mut no_punct = Counts::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if p.tags.len() != g.len() || p.tree.heads.len() != g.len() || p.tree.rels.len() != g.len()
        {
            return Err(Error::Mismatch {
                sentence: i,
                msg: format!(
                    "gold has {} tokens, prediction has {}",
                    g.len(),
                    p.tags.len()
                ),
            });
        }
        for (k, t) in g.tokens.iter().enumerate() {
            let head = t.head.ok_or_else(|| Error::Mismatch {
                sentence: i,
                msg: format!("gold token {} has no head", t.id),
            })?;
            let tag_ok = p.tags[k] == t.tag(column);
            let head_ok = p.tree.heads[k] == head;
            let label_ok = head_ok && t.deprel.as_deref() == Some(p.tree.rels[k].as_str());
            let c = Counts {
                tokens: 1,
                pos_correct: tag_ok as usize,
                uas_correct: head_ok as usize,
                las_correct: label_ok as usize,
                mixed_correct: (tag_ok && label_ok) as usize,
            };
            all.add(&c);
            if !is_punct(t, convention) {
                no_punct.add(&c);
            }
        }
    }
    Ok(EvalReport {
        name: String::new(),
        convention,
        all,
        no_punct,
    })
}

/// Evaluates system-output sentences (tags and trees read from CoNLL-U).
pub fn evaluate_sentences(
    gold: &[Sentence],
    system: &[Sentence],
    column: TagColumn,
    convention: PunctConvention,
) -> Result<EvalReport> {
    let preds = system
        .iter()
        .enumerate()
        .map(|(i, s)| sentence_prediction(s, column, i))
        .collect::<Result<Vec<_>>>()?;
    evaluate(gold, &preds, column, convention)
}

fn sentence_prediction(s: &Sentence, column: TagColumn, index: usize) -> Result<Prediction> {
    let tree = s.gold_tree().ok_or_else(|| Error::Mismatch {
        sentence: index,
        msg: "system output has tokens without head or relation".into(),
    })?;
    Ok(Prediction {
        tags: s.tags(column).into_iter().map(str::to_owned).collect(),
        tree,
    })
}

/// Fraction of tokens whose tag, head and relation are all correct.
pub fn mixed_accuracy(
    pred_tags: &[usize],
    pred_tree: (&[usize], &[usize]),
    gold_tags: &[usize],
    gold_tree: (&[usize], &[usize]),
) -> Result<f64> {
    let n = gold_tags.len();
    let lens = [
        pred_tags.len(),
        pred_tree.0.len(),
        pred_tree.1.len(),
        gold_tree.0.len(),
        gold_tree.1.len(),
    ];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: *lens.iter().find(|&&l| l != n).unwrap(),
        });
    }
    if n == 0 {
        return Ok(1.0);
    }
    let correct = (0..n)
        .filter(|&i| {
            pred_tags[i] == gold_tags[i]
                && pred_tree.0[i] == gold_tree.0[i]
                && pred_tree.1[i] == gold_tree.1[i]
        })
        .count();
    Ok(correct as f64 / n as f64)
}

/// Right-branching trees (each token headed by its left neighbour, the
/// first by the root) labelled with the most frequent tag and relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Baseline {
    pub tag: String,
    pub root_rel: String,
    pub rel: String,
}

fn majority<'a>(items: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for it in items {
        *counts.entry(it).or_default() += 1;
    }
    // highest count, then lexicographically smallest
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(s, _)| s.to_owned())
}

impl Baseline {
    pub fn fit(train: &[Sentence], column: TagColumn) -> Result<Self> {
        let tokens = || train.iter().flat_map(|s| s.tokens.iter());
        let tag = majority(tokens().map(|t| t.tag(column))).ok_or(Error::EmptyCorpus)?;
        let rel = majority(
            tokens()
                .filter(|t| t.head != Some(0))
                .filter_map(|t| t.deprel.as_deref()),
        )
        .unwrap_or_else(|| "dep".into());
        let root_rel = majority(
            tokens()
                .filter(|t| t.head == Some(0))
                .filter_map(|t| t.deprel.as_deref()),
        )
        .unwrap_or_else(|| "root".into());
        Ok(Baseline { tag, root_rel, rel })
    }

    pub fn predict(&self, sentence: &Sentence) -> Prediction {
        let n = sentence.len();
        Prediction {
            tags: vec![self.tag.clone(); n],
            tree: DepTree {
                heads: (0..n).collect(),
                rels: (0..n)
                    .map(|i| {
                        if i == 0 {
                            self.root_rel.clone()
                        } else {
                            self.rel.clone()
                        }
                    })
                    .collect(),
            },
        }
    }
}

/// Appends a mean row over several treebank reports.
pub fn with_mean_row(reports: &[EvalReport]) -> Vec<(String, [f64; 6])> {
    let mut rows: Vec<(String, [f64; 6])> = reports
        .iter()
        .map(|r| (r.name.clone(), report_scores(r)))
        .collect();
    if reports.len() > 1 {
        let mut mean = [0.0; 6];
        for (_, s) in &rows {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / reports.len() as f64;
            }
        }
        rows.push(("mean".into(), mean));
    }
    rows
}

fn report_scores(r: &EvalReport) -> [f64; 6] {
    [
        r.pos(),
        r.uas(),
        r.las(),
        r.all.uas(),
        r.all.las(),
        r.mixed(),
    ]
}

const COLUMNS: [&str; 6] = ["POS", "UAS", "LAS", "UAS(all)", "LAS(all)", "Mixed"];

/// Aligned plain-text table.
pub fn format_table(reports: &[EvalReport]) -> String {
    let rows = with_mean_row(reports);
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    if let Some(r) = reports.first() {
        let _ = writeln!(
            out,
            "# POS on all tokens; UAS/LAS without punctuation ({} convention)",
            r.convention
        );
    }
    let _ = write!(out, "{:<width$}", "treebank");
    for c in COLUMNS {
        let _ = write!(out, " {c:>9}");
    }
    out.push('\n');
    for (name, s) in rows {
        let _ = write!(out, "{name:<width$}");
        for v in s {
            let _ = write!(out, " {v:>9.2}");
        }
        out.push('\n');
    }
    out
}

pub fn tsv_header() -> String {
    let mut h = String::from("treebank\tconvention\ttokens\ttokens_no_punct");
    for c in ["pos", "uas", "las", "uas_all", "las_all", "mixed"] {
        h.push('\t');
        h.push_str(c);
    }
    h
}

/// One TSV row per report, plus a mean row when there are several.
pub fn format_tsv(reports: &[EvalReport]) -> String {
    let mut out = tsv_header();
    out.push('\n');
    let rows = with_mean_row(reports);
    for (i, (name, s)) in rows.iter().enumerate() {
        let (conv, toks, np) = match reports.get(i) {
            Some(r) => (
                r.convention.to_string(),
                r.all.tokens.to_string(),
                r.no_punct.tokens.to_string(),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let _ = write!(out, "{name}\t{conv}\t{toks}\t{np}");
        for v in s {
            let _ = write!(out, "\t{v:.4}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::read_treebank;
    use proptest::prelude::*;

    const GOLD: &str = "1\tShe\t_\tPRON\tPRP\t_\t2\tnsubj\t_\t_\n\
                        2\tleft\t_\tVERB\tVBD\t_\t0\troot\t_\t_\n\
                        3\tearly\t_\tADV\tRB\t_\t2\tadvmod\t_\t_\n\
                        4\t.\t_\tPUNCT\t.\t_\t2\tpunct\t_\t_\n\n";

    fn gold() -> Vec<Sentence> {
        read_treebank(GOLD.as_bytes()).unwrap()
    }

    fn pred(tags: &[&str], heads: &[usize], rels: &[&str]) -> Prediction {
        Prediction {
            tags: tags.iter().map(|s| s.to_string()).collect(),
            tree: DepTree {
                heads: heads.to_vec(),
                rels: rels.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    #[test]
    fn punct_conventions() {
        let mut t = Token::new(1, ",");
        t.xpos = ",".into();
        t.upos = "PUNCT".into();
        assert!(is_punct(&t, PunctConvention::Ptb));
        assert!(is_punct(&t, PunctConvention::Ud));
        t.xpos = "$".into();
        assert!(!is_punct(&t, PunctConvention::Ptb));
        t.upos = "NOUN".into();
        assert!(!is_punct(&t, PunctConvention::Ud));
        assert!("ptb".parse::<PunctConvention>().is_ok());
        assert!(matches!(
            "conll".parse::<PunctConvention>(),
            Err(Error::UnknownConvention(_))
        ));
    }

    #[test]
    fn hand_count_uas_75_las_50() {
        // heads: 3 of 4 right; labels right on 2 of those
        let p = pred(
            &["PRON", "VERB", "ADV", "PUNCT"],
            &[2, 0, 2, 3],
            &["nsubj", "root", "obj", "punct"],
        );
        let r = evaluate(&gold(), &[p], TagColumn::Upos, PunctConvention::Ud).unwrap();
        assert_eq!(r.all.uas(), 75.0);
        assert_eq!(r.all.las(), 50.0);
        assert_eq!(r.pos(), 100.0);
    }

    #[test]
    fn punctuation_excluded_from_attachment() {
        let p = pred(
            &["PRON", "VERB", "ADV", "PUNCT"],
            &[2, 0, 2, 1],
            &["nsubj", "root", "advmod", "punct"],
        );
        let r = evaluate(&gold(), &[p], TagColumn::Upos, PunctConvention::Ud).unwrap();
        assert_eq!(r.uas(), 100.0);
        assert_eq!(r.all.uas(), 75.0);
        assert_eq!(r.no_punct.tokens, 3);
        let r = evaluate(&gold(), &[r_pred()], TagColumn::Xpos, PunctConvention::Ptb).unwrap();
        assert_eq!(r.no_punct.tokens, 3);
    }

    fn r_pred() -> Prediction {
        pred(
            &["PRP", "VBD", "RB", "."],
            &[2, 0, 2, 2],
            &["nsubj", "root", "advmod", "punct"],
        )
    }

    #[test]
    fn identical_is_perfect() {
        let g = gold();
        let r = evaluate_sentences(&g, &g, TagColumn::Upos, PunctConvention::Ud).unwrap();
        assert_eq!(
            (r.pos(), r.uas(), r.las(), r.mixed()),
            (100.0, 100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn misalignment_names_sentence() {
        let p = pred(&["X"], &[0], &["root"]);
        let e = evaluate(&gold(), &[p], TagColumn::Upos, PunctConvention::Ud).unwrap_err();
        assert!(matches!(e, Error::Mismatch { sentence: 0, .. }));
    }

    #[test]
    fn relation_subtypes_not_normalised() {
        let p = pred(
            &["PRON", "VERB", "ADV", "PUNCT"],
            &[2, 0, 2, 2],
            &["nsubj:pass", "root", "advmod", "punct"],
        );
        let r = evaluate(&gold(), &[p], TagColumn::Upos, PunctConvention::Ud).unwrap();
        assert_eq!(r.all.las(), 75.0);
    }

    #[test]
    fn mixed_accuracy_examples() {
        let h = [2, 0, 2, 2];
        let l = [0, 1, 2, 3];
        let t = [0, 1, 2, 3];
        assert_eq!(mixed_accuracy(&t, (&h, &l), &t, (&h, &l)).unwrap(), 1.0);
        assert_eq!(
            mixed_accuracy(&t, (&[0, 3, 4, 1], &l), &t, (&h, &l)).unwrap(),
            0.0
        );
        assert_eq!(
            mixed_accuracy(&t, (&h, &[0, 1, 2, 0]), &t, (&h, &l)).unwrap(),
            0.75
        );
        assert!(mixed_accuracy(&t[..3], (&h, &l), &t, (&h, &l)).is_err());
    }

    #[test]
    fn baseline_is_right_branching() {
        let b = Baseline::fit(&gold(), TagColumn::Upos).unwrap();
        assert_eq!(b.root_rel, "root");
        let p = b.predict(&gold()[0]);
        assert_eq!(p.tree.heads, vec![0, 1, 2, 3]);
        assert_eq!(p.tree.rels[0], "root");
        // majority ties break to the smallest string
        assert_eq!(b.tag, "ADV");
        assert_eq!(b.rel, "advmod");
    }

    #[test]
    fn table_and_tsv() {
        let g = gold();
        let mut a = evaluate_sentences(&g, &g, TagColumn::Upos, PunctConvention::Ud).unwrap();
        a.name = "en".into();
        let mut b = a.clone();
        b.name = "fr".into();
        let table = format_table(&[a.clone(), b.clone()]);
        assert!(table.contains("ud convention"));
        assert!(table.lines().any(|l| l.starts_with("mean")));
        let tsv = format_tsv(&[a]);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split('\t').count(), lines[0].split('\t').count());
    }

    proptest! {
        #[test]
        fn scores_are_ordered(heads in proptest::collection::vec(0usize..5, 4), labels in proptest::collection::vec(0usize..3, 4)) {
            let names = ["nsubj", "root", "advmod"];
            let p = pred(
                &["PRON", "X", "ADV", "PUNCT"],
                &heads,
                &labels.iter().map(|&l| names[l]).collect::<Vec<_>>(),
            );
            for conv in [PunctConvention::Ud, PunctConvention::Ptb] {
                let r = evaluate(&gold(), std::slice::from_ref(&p), TagColumn::Upos, conv).unwrap();
                for c in [r.all, r.no_punct] {
                    prop_assert!(c.las_correct <= c.uas_correct && c.uas_correct <= c.tokens);
                    prop_assert!(c.mixed_correct <= c.las_correct);
                    prop_assert!((0.0..=100.0).contains(&c.las()));
                }
            }
        }

        #[test]
        fn no_punct_equals_all_without_punctuation(heads in proptest::collection::vec(0usize..4, 3)) {
            let text = "1\ta\t_\tX\tNN\t_\t0\troot\t_\t_\n2\tb\t_\tX\tNN\t_\t1\tdep\t_\t_\n3\tc\t_\tX\tNN\t_\t1\tdep\t_\t_\n\n";
            let g = read_treebank(text.as_bytes()).unwrap();
            let p = pred(&["X", "X", "Y"], &heads, &["root", "dep", "dep"]);
            for conv in [PunctConvention::Ud, PunctConvention::Ptb] {
                let r = evaluate(&g, std::slice::from_ref(&p), TagColumn::Upos, conv).unwrap();
                prop_assert_eq!(r.all, r.no_punct);
            }
        }
    }
}
