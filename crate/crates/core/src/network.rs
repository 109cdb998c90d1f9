//! The joint tagging and parsing network.
//!
//! Each token is represented by its word embedding concatenated with the
//! final states of a character BiLSTM. A tagging BiLSTM and a one-hidden-layer
//! MLP predict tags; the predicted tag embeddings are concatenated to the
//! token vectors and fed to a second BiLSTM whose outputs are scored pairwise
//! by an arc MLP and a relation MLP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, LstmParams, NodeId, ParamId, ParameterStore};
use crate::conllu::{DepTree, Prediction, Sentence, TagColumn};
use crate::decoder::{self, ArcScoreMatrix, RootConstraint};
use crate::error::{Error, Result, Shape};
use crate::lexicon::{word_dropout_decide, Lexicon, WordChoice, UNK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub word_dim: usize,
    pub char_dim: usize,
    pub tag_dim: usize,
    pub lstm_layers: usize,
    /// Hidden size per direction of the tagging and parsing BiLSTMs.
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub keep_prob: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub anneal_factor: f64,
    pub anneal_every: usize,
    pub seed: u64,
    pub tag_column: TagColumn,
    pub multi_root: bool,
    pub shuffle: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            word_dim: 100,
            char_dim: 50,
            tag_dim: 100,
            lstm_layers: 2,
            lstm_hidden: 128,
            mlp_hidden: 100,
            keep_prob: 0.67,
            epochs: 30,
            learning_rate: 0.001,
            anneal_factor: 0.5,
            anneal_every: 10,
            seed: 42,
            tag_column: TagColumn::Upos,
            multi_root: false,
            shuffle: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("tag_dim", self.tag_dim),
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("anneal_every", self.anneal_every),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidHyperparams(format!(
                    "{name} must be positive"
                )));
            }
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::InvalidHyperparams(format!(
                "keep_prob must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidHyperparams(
                "learning_rate must be positive".into(),
            ));
        }
        if self.anneal_factor <= 0.0 || self.anneal_factor.is_nan() {
            return Err(Error::InvalidHyperparams(
                "anneal_factor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `|e_i|`: word embedding plus both character LSTM directions.
    pub fn token_dim(&self) -> usize {
        self.word_dim + 2 * self.char_dim
    }

    /// `|x_i|`: tag embedding plus token vector.
    pub fn parser_input_dim(&self) -> usize {
        self.tag_dim + self.token_dim()
    }

    /// `|v_i|`: both directions of the top BiLSTM layer.
    pub fn context_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    /// Input length of the arc and relation MLPs.
    pub fn arc_feature_dim(&self) -> usize {
        4 * self.context_dim()
    }

    pub fn root_constraint(&self) -> RootConstraint {
        if self.multi_root {
            RootConstraint::Multi
        } else {
            RootConstraint::Single
        }
    }

    /// Learning rate in effect during a 1-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let restarts = (epoch.max(1) - 1) / self.anneal_every;
        self.learning_rate * self.anneal_factor.powi(restarts as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub hidden_w: ParamId,
    pub hidden_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstmLayer {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Weights {
    pub word_emb: ParamId,
    pub char_emb: ParamId,
    pub tag_emb: ParamId,
    pub root: ParamId,
    pub char_lstm: BiLstmLayer,
    pub pos_lstm: Vec<BiLstmLayer>,
    pub dep_lstm: Vec<BiLstmLayer>,
    pub mlp_pos: Mlp,
    pub mlp_arc: Mlp,
    pub mlp_rel: Mlp,
}

/// A parameter layout: name, shape, initializer.
fn layout(h: &Hyperparams, lex: &Lexicon) -> Vec<(String, Shape, Init)> {
    let mut out = vec![
        (
            "word_emb".into(),
            Shape::new(lex.num_words(), h.word_dim),
            Init::Embedding,
        ),
        (
            "char_emb".into(),
            Shape::new(lex.num_chars(), h.char_dim),
            Init::Embedding,
        ),
        (
            "tag_emb".into(),
            Shape::new(lex.num_tags(), h.tag_dim),
            Init::Embedding,
        ),
        (
            "root".into(),
            Shape::vector(h.parser_input_dim()),
            Init::Embedding,
        ),
    ];
    let lstm = |out: &mut Vec<_>, prefix: &str, input: usize, hidden: usize| {
        for dir in ["fwd", "bwd"] {
            out.push((
                format!("{prefix}.{dir}.w"),
                Shape::new(4 * hidden, input + hidden),
                Init::Xavier,
            ));
            out.push((
                format!("{prefix}.{dir}.b"),
                Shape::vector(4 * hidden),
                Init::Zeros,
            ));
        }
    };
    lstm(&mut out, "char_lstm", h.char_dim, h.char_dim);
    for l in 0..h.lstm_layers {
        let input = if l == 0 {
            h.token_dim()
        } else {
            h.context_dim()
        };
        lstm(&mut out, &format!("pos_lstm.{l}"), input, h.lstm_hidden);
    }
    for l in 0..h.lstm_layers {
        let input = if l == 0 {
            h.parser_input_dim()
        } else {
            h.context_dim()
        };
        lstm(&mut out, &format!("dep_lstm.{l}"), input, h.lstm_hidden);
    }
    let mlp = |out: &mut Vec<_>, prefix: &str, input: usize, output: usize| {
        out.push((
            format!("{prefix}.hidden_w"),
            Shape::new(h.mlp_hidden, input),
            Init::Xavier,
        ));
        out.push((
            format!("{prefix}.hidden_b"),
            Shape::vector(h.mlp_hidden),
            Init::Zeros,
        ));
        out.push((
            format!("{prefix}.out_w"),
            Shape::new(output, h.mlp_hidden),
            Init::Xavier,
        ));
        out.push((
            format!("{prefix}.out_b"),
            Shape::vector(output),
            Init::Zeros,
        ));
    };
    mlp(&mut out, "mlp_pos", h.context_dim(), lex.num_tags());
    mlp(&mut out, "mlp_arc", h.arc_feature_dim(), 1);
    mlp(&mut out, "mlp_rel", h.arc_feature_dim(), lex.num_rels());
    out
}

impl Weights {
    fn resolve(store: &ParameterStore, h: &Hyperparams) -> Result<Self> {
        let id = |name: &str| store.id(name);
        let lstm = |prefix: &str, hidden: usize| -> Result<BiLstmLayer> {
            Ok(BiLstmLayer {
                forward: LstmParams {
                    w: id(&format!("{prefix}.fwd.w"))?,
                    b: id(&format!("{prefix}.fwd.b"))?,
                    hidden,
                },
                backward: LstmParams {
                    w: id(&format!("{prefix}.bwd.w"))?,
                    b: id(&format!("{prefix}.bwd.b"))?,
                    hidden,
                },
            })
        };
        let mlp = |prefix: &str| -> Result<Mlp> {
            Ok(Mlp {
                hidden_w: id(&format!("{prefix}.hidden_w"))?,
                hidden_b: id(&format!("{prefix}.hidden_b"))?,
                out_w: id(&format!("{prefix}.out_w"))?,
                out_b: id(&format!("{prefix}.out_b"))?,
            })
        };
        Ok(Weights {
            word_emb: id("word_emb")?,
            char_emb: id("char_emb")?,
            tag_emb: id("tag_emb")?,
            root: id("root")?,
            char_lstm: lstm("char_lstm", h.char_dim)?,
            pos_lstm: (0..h.lstm_layers)
                .map(|l| lstm(&format!("pos_lstm.{l}"), h.lstm_hidden))
                .collect::<Result<_>>()?,
            dep_lstm: (0..h.lstm_layers)
                .map(|l| lstm(&format!("dep_lstm.{l}"), h.lstm_hidden))
                .collect::<Result<_>>()?,
            mlp_pos: mlp("mlp_pos")?,
            mlp_arc: mlp("mlp_arc")?,
            mlp_rel: mlp("mlp_rel")?,
        })
    }
}

/// Training-time noise: dropout masks and word dropout.
pub struct Noise<'r> {
    pub rng: &'r mut ChaCha8Rng,
    pub keep_prob: f64,
}

/// A sentence mapped to lexicon indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
}

/// Gold annotation mapped to lexicon indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldAnnotation {
    pub tags: Vec<usize>,
    pub heads: Vec<usize>,
    pub rels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainExample {
    pub input: EncodedSentence,
    pub gold: GoldAnnotation,
}

/// Graph nodes for one sentence's encodings.
#[derive(Clone, Debug)]
pub struct SentenceEncoding {
    pub tokens: Vec<NodeId>,
    pub tag_context: Vec<NodeId>,
    pub tag_scores: Vec<NodeId>,
    pub predicted_tags: Vec<usize>,
    pub parser_inputs: Vec<NodeId>,
    /// Position 0 is the root.
    pub context: Vec<NodeId>,
}

/// Arc score nodes plus their values.
#[derive(Clone, Debug)]
pub struct ArcScores {
    nodes: Vec<Option<NodeId>>,
    pub matrix: ArcScoreMatrix,
}

impl ArcScores {
    pub fn node(&self, head: usize, modifier: usize) -> NodeId {
        let n = self.matrix.len();
        self.nodes[head * (n + 1) + modifier].expect("arc score for head == modifier")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub pos: f64,
    pub arc: f64,
    pub rel: f64,
    pub total: f64,
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.pos += o.pos;
        self.arc += o.arc;
        self.rel += o.rel;
        self.total += o.total;
    }
}

/// Loss graph for one training sentence.
pub struct SentenceLoss {
    pub total: NodeId,
    pub breakdown: LossBreakdown,
    pub predicted_tags: Vec<usize>,
    pub augmented_heads: Vec<usize>,
}

/// Hyperparameters, vocabularies and weights of a joint tagger-parser.
#[derive(Clone, Debug)]
pub struct JointModel {
    hyper: Hyperparams,
    lexicon: Lexicon,
    params: ParameterStore,
    weights: Weights,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl JointModel {
    pub fn new(hyper: Hyperparams, lexicon: Lexicon) -> Result<Self> {
        hyper.validate()?;
        if lexicon.num_tags() == 0 || lexicon.num_rels() == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut params = ParameterStore::new(hyper.seed);
        for (name, shape, init) in layout(&hyper, &lexicon) {
            let id = params.add(&name, shape, init, &mut rng)?;
            if is_forget_bias(&name) {
                // forget-gate block is the second quarter
                let h = shape.rows / 4;
                params.value_mut(id)[h..2 * h]
                    .iter_mut()
                    .for_each(|v| *v = 1.0);
            }
        }
        let weights = Weights::resolve(&params, &hyper)?;
        Ok(JointModel {
            hyper,
            lexicon,
            params,
            weights,
        })
    }

    /// Reassembles a model from stored parts, checking every parameter's shape.
    pub fn from_parts(
        hyper: Hyperparams,
        lexicon: Lexicon,
        params: ParameterStore,
    ) -> Result<Self> {
        hyper.validate()?;
        let expected = layout(&hyper, &lexicon);
        if expected.len() != params.len() {
            return Err(Error::ModelMismatch(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &expected {
            let id = params.id(name)?;
            if params.shape(id) != *shape {
                return Err(Error::ModelMismatch(format!(
                    "parameter `{name}` has shape {}, expected {shape}",
                    params.shape(id)
                )));
            }
        }
        let weights = Weights::resolve(&params, &hyper)?;
        Ok(JointModel {
            hyper,
            lexicon,
            params,
            weights,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    /// Changes the number of training epochs, e.g. to extend a resumed run.
    pub fn set_epoch_budget(&mut self, epochs: usize) {
        self.hyper.epochs = epochs;
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn into_parts(self) -> (Hyperparams, Lexicon, ParameterStore) {
        (self.hyper, self.lexicon, self.params)
    }

    pub fn encode_input(&self, sentence: &Sentence) -> EncodedSentence {
        EncodedSentence {
            words: sentence
                .tokens
                .iter()
                .map(|t| self.lexicon.word_index(&t.form))
                .collect(),
            chars: sentence
                .tokens
                .iter()
                .map(|t| self.lexicon.char_indices(&t.form))
                .collect(),
        }
    }

    /// Maps a fully annotated sentence to indices. Unset heads or relations,
    /// and tags or relations outside the lexicon, are errors.
    pub fn training_example(&self, sentence: &Sentence, index: usize) -> Result<TrainExample> {
        let column = self.hyper.tag_column;
        let mismatch = |msg: String| Error::Mismatch {
            sentence: index,
            msg,
        };
        let mut gold = GoldAnnotation {
            tags: Vec::new(),
            heads: Vec::new(),
            rels: Vec::new(),
        };
        for t in &sentence.tokens {
            let tag = t.tag(column);
            gold.tags.push(
                self.lexicon.tag_index(tag).ok_or_else(|| {
                    mismatch(format!("tag `{tag}` of token {} not in tagset", t.id))
                })?,
            );
            gold.heads.push(
                t.head
                    .ok_or_else(|| mismatch(format!("token {} has no head", t.id)))?,
            );
            let rel = t
                .deprel
                .as_deref()
                .ok_or_else(|| mismatch(format!("token {} has no relation", t.id)))?;
            gold.rels.push(
                self.lexicon
                    .rel_index(rel)
                    .ok_or_else(|| mismatch(format!("relation `{rel}` not in relation set")))?,
            );
        }
        crate::conllu::check_tree(&gold.heads).map_err(|e| mismatch(e.to_string()))?;
        Ok(TrainExample {
            input: self.encode_input(sentence),
            gold,
        })
    }

    fn dropout(&self, g: &mut Graph, x: NodeId, noise: &mut Option<Noise>) -> NodeId {
        match noise {
            Some(n) => g.dropout(x, n.keep_prob, n.rng),
            None => x,
        }
    }

    fn bilstm(
        &self,
        g: &mut Graph,
        layers: &[BiLstmLayer],
        inputs: &[NodeId],
        noise: &mut Option<Noise>,
    ) -> Result<Vec<NodeId>> {
        let mut cur = inputs.to_vec();
        for layer in layers {
            let dropped: Vec<NodeId> = cur.iter().map(|&x| self.dropout(g, x, noise)).collect();
            cur = self.bilstm_layer(g, layer, &dropped)?;
        }
        Ok(cur)
    }

    fn bilstm_layer(
        &self,
        g: &mut Graph,
        layer: &BiLstmLayer,
        xs: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let fwd = g.lstm(&layer.forward, xs)?;
        let rev: Vec<NodeId> = xs.iter().rev().copied().collect();
        let mut bwd = g.lstm(&layer.backward, &rev)?;
        bwd.reverse();
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect()
    }

    fn mlp(
        &self,
        g: &mut Graph,
        mlp: &Mlp,
        x: NodeId,
        noise: &mut Option<Noise>,
    ) -> Result<NodeId> {
        let x = self.dropout(g, x, noise);
        let pre = g.affine(mlp.hidden_w, Some(mlp.hidden_b), x)?;
        let hidden = g.tanh(pre);
        g.affine(mlp.out_w, Some(mlp.out_b), hidden)
    }

    /// Word id actually looked up, after word dropout in training.
    pub fn effective_word(&self, word: usize, noise: &mut Option<Noise>) -> usize {
        match noise {
            Some(n) if word != UNK => match word_dropout_decide(self.lexicon.count(word), n.rng) {
                WordChoice::Unk => UNK,
                WordChoice::Keep => word,
            },
            _ => word,
        }
    }

    /// Character-level word vector: final forward state and final backward
    /// state of the character BiLSTM.
    pub fn encode_chars(
        &self,
        g: &mut Graph,
        chars: &[usize],
        noise: &mut Option<Noise>,
    ) -> Result<NodeId> {
        let w = &self.weights;
        let embs = chars
            .iter()
            .map(|&c| {
                let e = g.lookup(w.char_emb, c)?;
                Ok(self.dropout(g, e, noise))
            })
            .collect::<Result<Vec<_>>>()?;
        let fwd = g.lstm(&w.char_lstm.forward, &embs)?;
        let rev: Vec<NodeId> = embs.iter().rev().copied().collect();
        let bwd = g.lstm(&w.char_lstm.backward, &rev)?;
        g.concat(&[*fwd.last().unwrap(), *bwd.last().unwrap()])
    }

    /// `e_i`: word embedding (subject to word dropout) and character vector.
    pub fn encode_word(
        &self,
        g: &mut Graph,
        word: usize,
        chars: &[usize],
        noise: &mut Option<Noise>,
    ) -> Result<NodeId> {
        let word = self.effective_word(word, noise);
        let we = g.lookup(self.weights.word_emb, word)?;
        let ce = self.encode_chars(g, chars, noise)?;
        g.concat(&[we, ce])
    }

    /// Tagging BiLSTM and MLP over token vectors; returns context vectors,
    /// tag scores and argmax tags (ties to the lowest index).
    pub fn tag_sentence(
        &self,
        g: &mut Graph,
        tokens: &[NodeId],
        noise: &mut Option<Noise>,
    ) -> Result<(Vec<NodeId>, Vec<NodeId>, Vec<usize>)> {
        let ctx = self.bilstm(g, &self.weights.pos_lstm, tokens, noise)?;
        let mut scores = Vec::with_capacity(ctx.len());
        let mut tags = Vec::with_capacity(ctx.len());
        for &v in &ctx {
            let s = self.mlp(g, &self.weights.mlp_pos, v, noise)?;
            tags.push(argmax(g.value(s)));
            scores.push(s);
        }
        Ok((ctx, scores, tags))
    }

    /// Parser inputs `x_i` (tag embedding and token vector) and context
    /// vectors `v_0..v_n`, with the learned root vector at position 0.
    pub fn encode_for_parsing(
        &self,
        g: &mut Graph,
        tokens: &[NodeId],
        tags: &[usize],
        noise: &mut Option<Noise>,
    ) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        let mut xs = Vec::with_capacity(tokens.len() + 1);
        xs.push(g.param(self.weights.root));
        for (&e, &t) in tokens.iter().zip(tags) {
            let te = g.lookup(self.weights.tag_emb, t)?;
            xs.push(g.concat(&[te, e])?);
        }
        let v = self.bilstm(g, &self.weights.dep_lstm, &xs, noise)?;
        Ok((xs, v))
    }

    pub fn encode_sentence(
        &self,
        g: &mut Graph,
        input: &EncodedSentence,
        noise: &mut Option<Noise>,
    ) -> Result<SentenceEncoding> {
        if input.words.is_empty() {
            return Err(Error::EmptySentence);
        }
        let tokens = input
            .words
            .iter()
            .zip(&input.chars)
            .map(|(&w, c)| self.encode_word(g, w, c, noise))
            .collect::<Result<Vec<_>>>()?;
        let (tag_context, tag_scores, predicted_tags) = self.tag_sentence(g, &tokens, noise)?;
        let (parser_inputs, context) =
            self.encode_for_parsing(g, &tokens, &predicted_tags, noise)?;
        Ok(SentenceEncoding {
            tokens,
            tag_context,
            tag_scores,
            predicted_tags,
            parser_inputs,
            context,
        })
    }

    /// `v_h ∘ v_m ∘ (v_h * v_m) ∘ |v_h - v_m|`.
    pub fn arc_features(&self, g: &mut Graph, vh: NodeId, vm: NodeId) -> Result<NodeId> {
        let prod = g.mul(vh, vm)?;
        let diff = g.abs_diff(vh, vm)?;
        g.concat(&[vh, vm, prod, diff])
    }

    pub fn score_arcs(
        &self,
        g: &mut Graph,
        v: &[NodeId],
        noise: &mut Option<Noise>,
    ) -> Result<ArcScores> {
        let n = v.len() - 1;
        let mut nodes = vec![None; (n + 1) * (n + 1)];
        let mut matrix = ArcScoreMatrix::zeros(n);
        for h in 0..=n {
            for m in 1..=n {
                if h == m {
                    continue;
                }
                let f = self.arc_features(g, v[h], v[m])?;
                let s = self.mlp(g, &self.weights.mlp_arc, f, noise)?;
                matrix.set(h, m, g.scalar(s));
                nodes[h * (n + 1) + m] = Some(s);
            }
        }
        Ok(ArcScores { nodes, matrix })
    }

    /// Relation score vectors for the given `(head, modifier)` arcs.
    pub fn score_relations(
        &self,
        g: &mut Graph,
        v: &[NodeId],
        arcs: &[(usize, usize)],
        noise: &mut Option<Noise>,
    ) -> Result<Vec<NodeId>> {
        arcs.iter()
            .map(|&(h, m)| {
                let f = self.arc_features(g, v[h], v[m])?;
                self.mlp(g, &self.weights.mlp_rel, f, noise)
            })
            .collect()
    }

    /// Builds `L_POS + L_ARC + L_REL` for one sentence.
    pub fn sentence_loss(
        &self,
        g: &mut Graph,
        ex: &TrainExample,
        noise: &mut Option<Noise>,
    ) -> Result<SentenceLoss> {
        let enc = self.encode_sentence(g, &ex.input, noise)?;
        let gold = &ex.gold;

        let pos_terms = enc
            .tag_scores
            .iter()
            .zip(&gold.tags)
            .map(|(&s, &t)| g.softmax_xent(s, t))
            .collect::<Result<Vec<_>>>()?;
        let l_pos = g.sum(&pos_terms)?;

        let arcs = self.score_arcs(g, &enc.context, noise)?;
        let aug = decoder::loss_augmented_decode_with(
            &arcs.matrix,
            &gold.heads,
            self.hyper.root_constraint(),
        )?;
        let l_arc = decoder::hinge_loss_arc(g, |h, m| arcs.node(h, m), &gold.heads, &aug.heads)?;

        let gold_arcs: Vec<(usize, usize)> = gold
            .heads
            .iter()
            .enumerate()
            .map(|(i, &h)| (h, i + 1))
            .collect();
        let rel_scores = self.score_relations(g, &enc.context, &gold_arcs, noise)?;
        let rel_terms = rel_scores
            .iter()
            .zip(&gold.rels)
            .map(|(&s, &r)| g.softmax_xent(s, r))
            .collect::<Result<Vec<_>>>()?;
        let l_rel = g.sum(&rel_terms)?;

        let total = g.sum(&[l_pos, l_arc, l_rel])?;
        let breakdown = LossBreakdown {
            pos: g.scalar(l_pos),
            arc: g.scalar(l_arc),
            rel: g.scalar(l_rel),
            total: g.scalar(total),
        };
        Ok(SentenceLoss {
            total,
            breakdown,
            predicted_tags: enc.predicted_tags,
            augmented_heads: aug.heads,
        })
    }

    /// Tags, decodes and labels one encoded sentence without any noise.
    pub fn predict_indices(
        &self,
        input: &EncodedSentence,
    ) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let mut g = Graph::new(&self.params);
        let mut noise = None;
        let enc = self.encode_sentence(&mut g, input, &mut noise)?;
        let arcs = self.score_arcs(&mut g, &enc.context, &mut noise)?;
        let heads = decoder::eisner_decode_with(&arcs.matrix, self.hyper.root_constraint())?.heads;
        let pred_arcs: Vec<(usize, usize)> =
            heads.iter().enumerate().map(|(i, &h)| (h, i + 1)).collect();
        let rel_scores = self.score_relations(&mut g, &enc.context, &pred_arcs, &mut noise)?;
        let rels = rel_scores.iter().map(|&s| argmax(g.value(s))).collect();
        Ok((enc.predicted_tags, heads, rels))
    }

    pub fn predict(&self, sentence: &Sentence) -> Result<Prediction> {
        let (tags, heads, rels) = self.predict_indices(&self.encode_input(sentence))?;
        Ok(Prediction {
            tags: tags
                .iter()
                .map(|&t| self.lexicon.tag(t).to_owned())
                .collect(),
            tree: DepTree {
                heads,
                rels: rels
                    .iter()
                    .map(|&r| self.lexicon.rel(r).to_owned())
                    .collect(),
            },
        })
    }

    /// Predicts every sentence, in parallel over a shared read-only model.
    pub fn predict_all(&self, sentences: &[Sentence]) -> Result<Vec<Prediction>> {
        use rayon::prelude::*;
        sentences.par_iter().map(|s| self.predict(s)).collect()
    }
}

fn is_forget_bias(name: &str) -> bool {
    name.contains("_lstm") && name.ends_with(".b")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::read_treebank;

    pub(crate) fn tiny_hyper() -> Hyperparams {
        Hyperparams {
            word_dim: 4,
            char_dim: 3,
            tag_dim: 5,
            lstm_layers: 1,
            lstm_hidden: 6,
            mlp_hidden: 6,
            keep_prob: 1.0,
            ..Hyperparams::default()
        }
    }

    fn corpus() -> Vec<Sentence> {
        let text = "1\tThe\t_\tDET\t_\t_\t2\tdet\t_\t_\n\
                    2\tdog\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_\n\
                    3\tbarks\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n\
                    1\tHi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n\n";
        read_treebank(text.as_bytes()).unwrap()
    }

    fn model(h: Hyperparams) -> JointModel {
        let lex = Lexicon::build(&corpus(), h.tag_column).unwrap();
        JointModel::new(h, lex).unwrap()
    }

    #[test]
    fn default_dimensions() {
        let h = Hyperparams::default();
        assert_eq!(h.token_dim(), 200);
        assert_eq!(h.parser_input_dim(), 300);
        let h128 = Hyperparams {
            lstm_hidden: 128,
            ..h.clone()
        };
        assert_eq!(h128.context_dim(), 256);
        assert_eq!(h128.arc_feature_dim(), 1024);
    }

    #[test]
    fn learning_rate_schedule() {
        let h = Hyperparams::default();
        for e in 1..=10 {
            assert_eq!(h.learning_rate_at(e), 0.001);
        }
        for e in 11..=20 {
            assert_eq!(h.learning_rate_at(e), 0.0005);
        }
        for e in 21..=30 {
            assert_eq!(h.learning_rate_at(e), 0.00025);
        }
    }

    #[test]
    fn invalid_hyperparams() {
        let bad = Hyperparams {
            keep_prob: 0.0,
            ..Hyperparams::default()
        };
        assert!(bad.validate().is_err());
        let bad = Hyperparams {
            lstm_hidden: 0,
            ..Hyperparams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn vector_lengths_follow_hyperparams() {
        for layers in [1, 2] {
            for hidden in [3, 5] {
                let h = Hyperparams {
                    lstm_layers: layers,
                    lstm_hidden: hidden,
                    ..tiny_hyper()
                };
                let m = model(h.clone());
                let s = &corpus()[0];
                let input = m.encode_input(s);
                let mut g = Graph::new(m.params());
                let enc = m.encode_sentence(&mut g, &input, &mut None).unwrap();
                assert_eq!(g.shape(enc.tokens[0]).len(), h.token_dim());
                assert_eq!(g.shape(enc.tag_context[0]).len(), h.context_dim());
                assert_eq!(g.shape(enc.tag_scores[0]).len(), m.lexicon().num_tags());
                assert_eq!(g.shape(enc.parser_inputs[1]).len(), h.parser_input_dim());
                assert_eq!(enc.context.len(), 4);
                assert_eq!(g.shape(enc.context[0]).len(), h.context_dim());
            }
        }
    }

    #[test]
    fn single_char_and_single_token() {
        let m = model(tiny_hyper());
        let s = Sentence::from_forms(&["x"]);
        let mut g = Graph::new(m.params());
        let enc = m
            .encode_sentence(&mut g, &m.encode_input(&s), &mut None)
            .unwrap();
        assert_eq!(enc.predicted_tags.len(), 1);
        assert_eq!(enc.context.len(), 2);
        let p = m.predict(&s).unwrap();
        assert_eq!(p.tree.heads, vec![0]);
    }

    #[test]
    fn deterministic_without_noise() {
        let m = model(tiny_hyper());
        let chars = m.lexicon().char_indices("dog");
        let w = m.lexicon().word_index("dog");
        let mut g = Graph::new(m.params());
        let a = m.encode_word(&mut g, w, &chars, &mut None).unwrap();
        let b = m.encode_word(&mut g, w, &chars, &mut None).unwrap();
        assert_eq!(g.value(a), g.value(b));
        let s = &corpus()[0];
        assert_eq!(m.predict(s).unwrap(), m.predict(s).unwrap());
    }

    #[test]
    fn word_dropout_leaves_chars_alone() {
        let m = model(tiny_hyper());
        let chars = m.lexicon().char_indices("dog");
        let w = m.lexicon().word_index("dog");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dropped = 0;
        for _ in 0..200 {
            let mut noise = Some(Noise {
                rng: &mut rng,
                keep_prob: 1.0,
            });
            let mut g = Graph::new(m.params());
            let e = m.encode_word(&mut g, w, &chars, &mut noise).unwrap();
            let mut clean = Graph::new(m.params());
            let e0 = m.encode_word(&mut clean, w, &chars, &mut None).unwrap();
            let (wd, cd) = (4, 6);
            assert_eq!(&g.value(e)[wd..wd + cd], &clean.value(e0)[wd..wd + cd]);
            if g.value(e)[..wd] != clean.value(e0)[..wd] {
                dropped += 1;
                let unk = m.params().get(m.weights().word_emb).row(UNK).to_vec();
                assert_eq!(&g.value(e)[..wd], unk.as_slice());
            }
        }
        assert!(dropped > 0);
    }

    #[test]
    fn arc_features_construction() {
        let m = model(tiny_hyper());
        let mut g = Graph::new(m.params());
        let v = g.input(vec![1.0, -2.0, 3.0]);
        let f = m.arc_features(&mut g, v, v).unwrap();
        assert_eq!(
            g.value(f),
            &[1.0, -2.0, 3.0, 1.0, -2.0, 3.0, 1.0, 4.0, 9.0, 0.0, 0.0, 0.0]
        );
        let u = g.input(vec![0.5, 0.5, 0.5]);
        let a = m.arc_features(&mut g, u, v).unwrap();
        let b = m.arc_features(&mut g, v, u).unwrap();
        assert_ne!(g.value(a), g.value(b));
    }

    #[test]
    fn arc_matrix_counts_and_finiteness() {
        let m = model(tiny_hyper());
        let s = &corpus()[0];
        let mut g = Graph::new(m.params());
        let enc = m
            .encode_sentence(&mut g, &m.encode_input(s), &mut None)
            .unwrap();
        let arcs = m.score_arcs(&mut g, &enc.context, &mut None).unwrap();
        let n = 3;
        let scored = arcs.nodes.iter().filter(|x| x.is_some()).count();
        assert_eq!(scored, n * n);
        for h in 0..=n {
            for d in 1..=n {
                if h != d {
                    assert!(arcs.matrix.get(h, d).is_finite());
                }
            }
        }
    }

    #[test]
    fn output_sizes() {
        let m = model(tiny_hyper());
        let s = &corpus()[0];
        let mut g = Graph::new(m.params());
        let enc = m
            .encode_sentence(&mut g, &m.encode_input(s), &mut None)
            .unwrap();
        let rel = m
            .score_relations(&mut g, &enc.context, &[(0, 3), (3, 2)], &mut None)
            .unwrap();
        assert_eq!(rel.len(), 2);
        assert_eq!(g.shape(rel[0]).len(), m.lexicon().num_rels());
    }

    #[test]
    fn argmax_ties_lowest_index() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let m = model(tiny_hyper());
        let b = m.params().value(m.params().id("pos_lstm.0.fwd.b").unwrap());
        assert_eq!(&b[..6], &[0.0; 6]);
        assert_eq!(&b[6..12], &[1.0; 6]);
    }

    #[test]
    fn partial_annotation_rejected() {
        let m = model(tiny_hyper());
        let mut s = corpus()[0].clone();
        s.tokens[1].head = None;
        assert!(matches!(
            m.training_example(&s, 4),
            Err(Error::Mismatch { sentence: 4, .. })
        ));
    }

    #[test]
    fn loss_parts_non_negative_and_summed() {
        let m = model(Hyperparams {
            keep_prob: 0.67,
            ..tiny_hyper()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in corpus() {
            let ex = m.training_example(&s, 0).unwrap();
            let mut g = Graph::new(m.params());
            let mut noise = Some(Noise {
                rng: &mut rng,
                keep_prob: 0.67,
            });
            let l = m.sentence_loss(&mut g, &ex, &mut noise).unwrap();
            let b = l.breakdown;
            assert!(b.pos >= 0.0 && b.arc >= 0.0 && b.rel >= 0.0);
            assert!((b.total - (b.pos + b.arc + b.rel)).abs() < 1e-12);
        }
    }

    fn fd_model() -> (JointModel, TrainExample) {
        let text = "1\tA\t_\tDET\t_\t_\t2\tdet\t_\t_\n\
                    2\tcat\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_\n\
                    3\tsaw\t_\tVERB\t_\t_\t0\troot\t_\t_\n\
                    4\tit\t_\tPRON\t_\t_\t3\tobj\t_\t_\n\
                    5\t.\t_\tPUNCT\t_\t_\t3\tpunct\t_\t_\n\n";
        let sents = read_treebank(text.as_bytes()).unwrap();
        let h = Hyperparams {
            keep_prob: 0.67,
            seed: 3,
            ..tiny_hyper()
        };
        let lex = Lexicon::build(&sents, h.tag_column).unwrap();
        let m = JointModel::new(h, lex).unwrap();
        let ex = m.training_example(&sents[0], 0).unwrap();
        (m, ex)
    }

    fn fixed_noise_loss(m: &JointModel, ex: &TrainExample) -> (f64, Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut noise = Some(Noise {
            rng: &mut rng,
            keep_prob: m.hyper().keep_prob,
        });
        let mut g = Graph::new(m.params());
        let l = m.sentence_loss(&mut g, ex, &mut noise).unwrap();
        (g.scalar(l.total), l.predicted_tags, l.augmented_heads)
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let (mut m, ex) = fd_model();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut noise = Some(Noise {
            rng: &mut rng,
            keep_prob: m.hyper().keep_prob,
        });
        let mut g = Graph::new(m.params());
        let l = m.sentence_loss(&mut g, &ex, &mut noise).unwrap();
        assert!(l.breakdown.arc > 0.0, "hinge inactive; pick another seed");
        let grads = g.backward(l.total).unwrap();
        let (_, tags0, heads0) = fixed_noise_loss(&m, &ex);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let ids: Vec<_> = m.params().iter().map(|(id, p)| (id, p.shape())).collect();
        for (id, shape) in ids {
            let analytic = grads.to_dense(id, shape);
            for (k, &a) in analytic.iter().enumerate() {
                let orig = m.params().value(id)[k];
                m.params_mut().value_mut(id)[k] = orig + eps;
                let (plus, tp, hp) = fixed_noise_loss(&m, &ex);
                m.params_mut().value_mut(id)[k] = orig - eps;
                let (minus, tm, hm) = fixed_noise_loss(&m, &ex);
                m.params_mut().value_mut(id)[k] = orig;
                assert!(tp == tags0 && tm == tags0 && hp == heads0 && hm == heads0);
                let numeric = (plus - minus) / (2.0 * eps);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
                checked += 1;
            }
        }
        assert!(checked > 1000);
        assert!(worst < 1e-5, "worst relative error {worst}");
    }
}
