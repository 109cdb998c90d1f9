//! Projective arc-factored decoding.
//!
//! [`eisner_decode`] finds the highest scoring projective tree in O(n³) time.
//! [`brute_force_best_tree`] enumerates every head assignment and exists to
//! check it. [`loss_augmented_decode`] and [`hinge_loss_arc`] provide the
//! structured margin objective used for training.

use crate::autodiff::{Graph, NodeId};
use crate::conllu::{check_tree, is_projective, root_children};
use crate::error::{Error, Result};

/// `(n+1) x (n+1)` arc scores, `get(h, m)` scoring head `h` for modifier `m`.
/// Position 0 is the artificial root; column 0 and the diagonal are unused.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ArcScoreMatrix {
    pub fn zeros(n: usize) -> Self {
        ArcScoreMatrix {
            n,
            data: vec![0.0; (n + 1) * (n + 1)],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for h in 0..=n {
            for d in 1..=n {
                if h != d {
                    m.set(h, d, f(h, d));
                }
            }
        }
        m
    }

    /// Number of tokens (the matrix has `n + 1` rows).
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, head: usize, modifier: usize) -> f64 {
        self.data[head * (self.n + 1) + modifier]
    }

    pub fn set(&mut self, head: usize, modifier: usize, score: f64) {
        self.data[head * (self.n + 1) + modifier] = score;
    }

    /// Sum of arc scores of a tree given as heads of tokens `1..=n`.
    pub fn tree_score(&self, heads: &[usize]) -> f64 {
        heads
            .iter()
            .enumerate()
            .map(|(i, &h)| self.get(h, i + 1))
            .sum()
    }

    /// Adds `cost` to every arc not in `gold`.
    pub fn augmented(&self, gold: &[usize], cost: f64) -> Self {
        let mut out = self.clone();
        for m in 1..=self.n {
            for h in 0..=self.n {
                if h != m && gold[m - 1] != h {
                    out.set(h, m, self.get(h, m) + cost);
                }
            }
        }
        out
    }
}

/// Root attachment policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RootConstraint {
    /// Exactly one token attaches to the root.
    #[default]
    Single,
    /// Any number of tokens may attach to the root.
    Multi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub heads: Vec<usize>,
    pub score: f64,
}

// Eisner tables over positions `lo..=n`, indexed [s][t] with s <= t.
struct Chart {
    size: usize,
    lo: usize,
    // complete / incomplete, left-headed (head at t) / right-headed (head at s)
    c_left: Vec<f64>,
    c_right: Vec<f64>,
    i_left: Vec<f64>,
    i_right: Vec<f64>,
    bp_c_left: Vec<usize>,
    bp_c_right: Vec<usize>,
    bp_i: Vec<usize>,
}

impl Chart {
    fn at(&self, s: usize, t: usize) -> usize {
        (s - self.lo) * self.size + (t - self.lo)
    }

    fn build(scores: &ArcScoreMatrix, lo: usize) -> Chart {
        let n = scores.len();
        let size = n + 1 - lo;
        let cells = size * size;
        let mut ch = Chart {
            size,
            lo,
            c_left: vec![0.0; cells],
            c_right: vec![0.0; cells],
            i_left: vec![f64::NEG_INFINITY; cells],
            i_right: vec![f64::NEG_INFINITY; cells],
            bp_c_left: vec![0; cells],
            bp_c_right: vec![0; cells],
            bp_i: vec![0; cells],
        };
        for width in 1..size {
            for s in lo..=n - width {
                let t = s + width;
                let st = ch.at(s, t);
                // Incomplete spans: split into a right-facing complete [s, q]
                // and a left-facing complete [q+1, t].
                let mut best = f64::NEG_INFINITY;
                let mut arg = s;
                for q in s..t {
                    let v = ch.c_right[ch.at(s, q)] + ch.c_left[ch.at(q + 1, t)];
                    if v > best {
                        best = v;
                        arg = q;
                    }
                }
                ch.bp_i[st] = arg;
                ch.i_right[st] = best + scores.get(s, t);
                // The root never takes a head.
                ch.i_left[st] = if s == 0 {
                    f64::NEG_INFINITY
                } else {
                    best + scores.get(t, s)
                };

                let mut best = f64::NEG_INFINITY;
                let mut arg = s;
                for q in s..t {
                    let v = ch.c_left[ch.at(s, q)] + ch.i_left[ch.at(q, t)];
                    if v > best {
                        best = v;
                        arg = q;
                    }
                }
                ch.c_left[st] = best;
                ch.bp_c_left[st] = arg;

                let mut best = f64::NEG_INFINITY;
                let mut arg = t;
                for q in s + 1..=t {
                    let v = ch.i_right[ch.at(s, q)] + ch.c_right[ch.at(q, t)];
                    if v > best {
                        best = v;
                        arg = q;
                    }
                }
                ch.c_right[st] = best;
                ch.bp_c_right[st] = arg;
            }
        }
        ch
    }

    fn trace_complete(&self, s: usize, t: usize, right: bool, heads: &mut [usize]) {
        if s == t {
            return;
        }
        let st = self.at(s, t);
        if right {
            let q = self.bp_c_right[st];
            self.trace_incomplete(s, q, true, heads);
            self.trace_complete(q, t, true, heads);
        } else {
            let q = self.bp_c_left[st];
            self.trace_complete(s, q, false, heads);
            self.trace_incomplete(q, t, false, heads);
        }
    }

    fn trace_incomplete(&self, s: usize, t: usize, right: bool, heads: &mut [usize]) {
        if right {
            heads[t - 1] = s;
        } else {
            heads[s - 1] = t;
        }
        let q = self.bp_i[self.at(s, t)];
        self.trace_complete(s, q, true, heads);
        self.trace_complete(q + 1, t, false, heads);
    }
}

/// Highest scoring projective tree with exactly one root child.
pub fn eisner_decode(scores: &ArcScoreMatrix) -> Result<Decoded> {
    eisner_decode_with(scores, RootConstraint::Single)
}

pub fn eisner_decode_with(scores: &ArcScoreMatrix, root: RootConstraint) -> Result<Decoded> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    let mut heads = vec![0; n];
    match root {
        RootConstraint::Multi => {
            let chart = Chart::build(scores, 0);
            chart.trace_complete(0, n, true, &mut heads);
            let score = chart.c_right[chart.at(0, n)];
            Ok(Decoded { heads, score })
        }
        RootConstraint::Single => {
            // Best tree over tokens 1..=n hanging from a single root child r:
            // left-facing complete [1, r] plus right-facing complete [r, n].
            let chart = Chart::build(scores, 1);
            let mut best = f64::NEG_INFINITY;
            let mut root_child = 1;
            for r in 1..=n {
                let v =
                    scores.get(0, r) + chart.c_left[chart.at(1, r)] + chart.c_right[chart.at(r, n)];
                if v > best {
                    best = v;
                    root_child = r;
                }
            }
            heads[root_child - 1] = 0;
            chart.trace_complete(1, root_child, false, &mut heads);
            chart.trace_complete(root_child, n, true, &mut heads);
            Ok(Decoded { heads, score: best })
        }
    }
}

/// Exhaustive search over all head assignments for `n <= 8`. Ties go to the
/// lexicographically smallest head vector.
pub fn brute_force_best_tree(scores: &ArcScoreMatrix, root: RootConstraint) -> Result<Decoded> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    if n > 8 {
        return Err(Error::TooLongForBruteForce(n));
    }
    let mut best: Option<Decoded> = None;
    let mut heads = vec![0usize; n];
    loop {
        let valid = check_tree(&heads).is_ok()
            && (root == RootConstraint::Multi || root_children(&heads) == 1)
            && is_projective(&heads).unwrap_or(false);
        if valid {
            let score = scores.tree_score(&heads);
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Decoded {
                    heads: heads.clone(),
                    score,
                });
            }
        }
        // Odometer increment, last position fastest, for lexicographic order.
        let mut k = n;
        loop {
            if k == 0 {
                return best.ok_or_else(|| Error::InvalidTree("no tree found".to_owned()));
            }
            k -= 1;
            if heads[k] < n {
                heads[k] += 1;
                break;
            }
            heads[k] = 0;
        }
    }
}

/// Decodes under scores raised by 1 on every arc not in `gold`.
pub fn loss_augmented_decode(scores: &ArcScoreMatrix, gold: &[usize]) -> Result<Decoded> {
    loss_augmented_decode_with(scores, gold, RootConstraint::Single)
}

pub fn loss_augmented_decode_with(
    scores: &ArcScoreMatrix,
    gold: &[usize],
    root: RootConstraint,
) -> Result<Decoded> {
    if gold.len() != scores.len() {
        return Err(Error::InvalidTree(format!(
            "gold tree has {} heads for {} tokens",
            gold.len(),
            scores.len()
        )));
    }
    eisner_decode_with(&scores.augmented(gold, 1.0), root)
}

/// Structured hinge value, `max(0, s(pred) + Hamming(pred, gold) - s(gold))`.
pub fn hinge_value(scores: &ArcScoreMatrix, gold: &[usize], pred: &[usize]) -> f64 {
    let mut total = 0.0;
    for m in 1..=scores.len() {
        let (p, g) = (pred[m - 1], gold[m - 1]);
        if p != g {
            total += scores.get(p, m) + 1.0 - scores.get(g, m);
        }
    }
    total.max(0.0)
}

/// Graph version of [`hinge_value`]. Arcs shared by `pred` and `gold` cancel
/// and are left out, so only differing arcs receive gradient.
pub fn hinge_loss_arc(
    g: &mut Graph,
    arc_node: impl Fn(usize, usize) -> NodeId,
    gold: &[usize],
    pred: &[usize],
) -> Result<NodeId> {
    let mut pred_terms = Vec::new();
    let mut gold_terms = Vec::new();
    let mut cost = 0.0;
    for m in 1..=gold.len() {
        let (p, h) = (pred[m - 1], gold[m - 1]);
        if p != h {
            pred_terms.push(arc_node(p, m));
            gold_terms.push(arc_node(h, m));
            cost += 1.0;
        }
    }
    if pred_terms.is_empty() {
        return Ok(g.input(vec![0.0]));
    }
    let ps = g.sum(&pred_terms)?;
    let gs = g.sum(&gold_terms)?;
    let margin = g.sub(ps, gs)?;
    let shifted = g.add_const(margin, cost);
    g.hinge(shifted)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::ParameterStore;

    fn random_scores(n: usize, rng: &mut ChaCha8Rng, integer: bool) -> ArcScoreMatrix {
        ArcScoreMatrix::from_fn(n, |_, _| {
            if integer {
                rng.random_range(-5..=5) as f64
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
    }

    #[test]
    fn single_token() {
        let mut s = ArcScoreMatrix::zeros(1);
        s.set(0, 1, 2.5);
        let d = eisner_decode(&s).unwrap();
        assert_eq!(d.heads, vec![0]);
        assert_eq!(d.score, 2.5);
        assert_eq!(
            brute_force_best_tree(&s, RootConstraint::Single)
                .unwrap()
                .heads,
            vec![0]
        );
    }

    #[test]
    fn two_tokens_single_root() {
        let mut s = ArcScoreMatrix::zeros(2);
        s.set(0, 1, 1.0);
        s.set(0, 2, 0.0);
        s.set(1, 2, 2.0);
        s.set(2, 1, 0.0);
        let d = eisner_decode(&s).unwrap();
        assert_eq!(d.heads, vec![0, 1]);
        assert_eq!(d.score, 3.0);
    }

    #[test]
    fn empty_sentence_errors() {
        assert!(matches!(
            eisner_decode(&ArcScoreMatrix::zeros(0)),
            Err(Error::EmptySentence)
        ));
        assert!(matches!(
            brute_force_best_tree(&ArcScoreMatrix::zeros(9), RootConstraint::Single),
            Err(Error::TooLongForBruteForce(9))
        ));
    }

    #[test]
    fn brute_force_tie_break() {
        let s = ArcScoreMatrix::zeros(2);
        assert_eq!(
            brute_force_best_tree(&s, RootConstraint::Single)
                .unwrap()
                .heads,
            vec![0, 1]
        );
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for root in [RootConstraint::Single, RootConstraint::Multi] {
            for n in 1..=5 {
                for k in 0..60 {
                    let s = random_scores(n, &mut rng, k % 2 == 0);
                    let e = eisner_decode_with(&s, root).unwrap();
                    let b = brute_force_best_tree(&s, root).unwrap();
                    assert!((e.score - b.score).abs() < 1e-9, "{root:?} n={n}");
                    assert!((s.tree_score(&e.heads) - e.score).abs() < 1e-9);
                    assert!(is_projective(&e.heads).unwrap());
                    if root == RootConstraint::Single {
                        assert_eq!(root_children(&e.heads), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_shift_keeps_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=7 {
            let s = random_scores(n, &mut rng, false);
            let shifted = ArcScoreMatrix::from_fn(n, |h, m| s.get(h, m) + 3.25);
            assert_eq!(
                eisner_decode(&s).unwrap().heads,
                eisner_decode(&shifted).unwrap().heads
            );
        }
    }

    #[test]
    fn augmentation_cannot_flip_dominant_gold() {
        let n = 4;
        let gold = vec![2, 0, 2, 3];
        let s = ArcScoreMatrix::from_fn(n, |h, m| if gold[m - 1] == h { 10.0 } else { 0.0 });
        let d = loss_augmented_decode(&s, &gold).unwrap();
        assert_eq!(d.heads, gold);
        assert_eq!(hinge_value(&s, &gold, &d.heads), 0.0);
    }

    #[test]
    fn all_zero_scores_prefer_non_gold() {
        let s = ArcScoreMatrix::zeros(2);
        let gold = vec![0, 1];
        let d = loss_augmented_decode(&s, &gold).unwrap();
        assert_ne!(d.heads, gold);
        // Both arcs of the only other single-root tree {0->2, 2->1} are wrong.
        assert_eq!(d.heads, vec![2, 0]);
        assert_eq!(d.score, 2.0);
        assert_eq!(hinge_value(&s, &gold, &d.heads), 2.0);
    }

    #[test]
    fn hinge_graph_matches_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let store = ParameterStore::new(0);
        for n in 1..=6 {
            let s = random_scores(n, &mut rng, false);
            let gold =
                brute_force_best_tree(&random_scores(n, &mut rng, true), RootConstraint::Single)
                    .unwrap()
                    .heads;
            let pred = loss_augmented_decode(&s, &gold).unwrap().heads;
            let mut g = Graph::new(&store);
            let mut nodes = vec![None; (n + 1) * (n + 1)];
            for h in 0..=n {
                for m in 1..=n {
                    if h != m {
                        nodes[h * (n + 1) + m] = Some(g.input(vec![s.get(h, m)]));
                    }
                }
            }
            let loss = hinge_loss_arc(&mut g, |h, m| nodes[h * (n + 1) + m].unwrap(), &gold, &pred)
                .unwrap();
            assert!((g.scalar(loss) - hinge_value(&s, &gold, &pred)).abs() < 1e-12);
            assert!(g.scalar(loss) >= 0.0);
        }
    }
}
