//! Per-sentence joint training with epoch-wise Adam restarts and dev-set
//! model selection.

use std::fmt::Write as _;
use std::io::Write;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Graph, ParameterStore};
use crate::conllu::{is_projective, Sentence};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport, PunctConvention};
use crate::network::{JointModel, LossBreakdown, Noise, TrainExample};

/// One row of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_pos: f64,
    pub loss_arc: f64,
    pub loss_rel: f64,
    pub dev_upos: f64,
    pub dev_uas: f64,
    pub dev_las: f64,
    pub dev_mixed: f64,
    pub best: bool,
}

pub const LOG_HEADER: &str =
    "epoch\tlr\tloss_pos\tloss_arc\tloss_rel\tdev_upos\tdev_uas\tdev_las\tdev_mixed\tbest";

impl EpochRecord {
    pub fn total_loss(&self) -> f64 {
        self.loss_pos + self.loss_arc + self.loss_rel
    }

    pub fn tsv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            self.epoch,
            self.lr,
            self.loss_pos,
            self.loss_arc,
            self.loss_rel,
            self.dev_upos,
            self.dev_uas,
            self.dev_las,
            self.dev_mixed,
            if self.best { 1 } else { 0 }
        );
        s
    }
}

/// Everything beyond the weights needed to resume training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub epochs_done: usize,
    pub best_mixed: Option<f64>,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochRecord>,
}

/// Scores a model's predictions on annotated sentences.
pub fn evaluate_model(
    model: &JointModel,
    sentences: &[Sentence],
    convention: PunctConvention,
) -> Result<EvalReport> {
    let preds = model.predict_all(sentences)?;
    metrics::evaluate(sentences, &preds, model.hyper().tag_column, convention)
}

/// RNG for shuffling and noise in a given epoch; independent of how many
/// epochs ran before in this process.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

pub struct Trainer {
    model: JointModel,
    train: Vec<TrainExample>,
    dev: Vec<Sentence>,
    convention: PunctConvention,
    adam: AdamConfig,
    progress: TrainProgress,
    best: Option<JointModel>,
    nonprojective: usize,
    log_sink: Option<Box<dyn Write>>,
}

impl Trainer {
    pub fn new(model: JointModel, train: &[Sentence], dev: Vec<Sentence>) -> Result<Self> {
        Self::resume(model, TrainProgress::default(), train, dev)
    }

    pub fn resume(
        model: JointModel,
        progress: TrainProgress,
        train: &[Sentence],
        dev: Vec<Sentence>,
    ) -> Result<Self> {
        if train.is_empty() || dev.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let examples = train
            .iter()
            .enumerate()
            .map(|(i, s)| model.training_example(s, i))
            .collect::<Result<Vec<_>>>()?;
        let nonprojective = examples
            .iter()
            .filter(|e| !is_projective(&e.gold.heads).unwrap_or(true))
            .count();
        if nonprojective > 0 {
            warn!(
                "{nonprojective} of {} training trees are non-projective and unreachable by the decoder",
                examples.len()
            );
        }
        let convention = PunctConvention::default_for(model.hyper().tag_column);
        Ok(Trainer {
            model,
            train: examples,
            dev,
            convention,
            adam: AdamConfig::default(),
            progress,
            best: None,
            nonprojective,
            log_sink: None,
        })
    }

    pub fn with_convention(mut self, convention: PunctConvention) -> Self {
        self.convention = convention;
        self
    }

    /// Metric-log rows are appended to `sink` as each epoch finishes.
    pub fn with_log_sink(mut self, mut sink: Box<dyn Write>, header: bool) -> Result<Self> {
        if header {
            writeln!(sink, "{LOG_HEADER}")?;
        }
        self.log_sink = Some(sink);
        Ok(self)
    }

    pub fn model(&self) -> &JointModel {
        &self.model
    }

    pub fn progress(&self) -> &TrainProgress {
        &self.progress
    }

    /// Best model selected since this trainer was created.
    pub fn best_model(&self) -> Option<&JointModel> {
        self.best.as_ref()
    }

    pub fn nonprojective_count(&self) -> usize {
        self.nonprojective
    }

    pub fn training_examples(&self) -> &[TrainExample] {
        &self.train
    }

    /// Restarts Adam when entering an annealing boundary and returns the
    /// learning rate for `epoch`.
    fn begin_epoch(&mut self, epoch: usize) -> f64 {
        let every = self.model.hyper().anneal_every;
        if epoch > 1 && (epoch - 1).is_multiple_of(every) {
            self.model.params_mut().adam_restart();
        }
        self.model.hyper().learning_rate_at(epoch)
    }

    /// One pass over the training set, one Adam update per sentence.
    pub fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<LossBreakdown> {
        let hyper = self.model.hyper().clone();
        let mut rng = epoch_rng(hyper.seed, epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        if hyper.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sums = LossBreakdown::default();
        for &i in &order {
            let grads = {
                let mut g = Graph::new(self.model.params());
                let mut noise = Some(Noise {
                    rng: &mut rng,
                    keep_prob: hyper.keep_prob,
                });
                let loss = self
                    .model
                    .sentence_loss(&mut g, &self.train[i], &mut noise)?;
                if !loss.breakdown.total.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, sentence: i });
                }
                sums += loss.breakdown;
                g.backward(loss.total)?
            };
            let params = self.model.params_mut();
            params.accumulate(&grads);
            params.adam_step(lr, &self.adam).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::NonFiniteLoss { epoch, sentence: i },
                e => e,
            })?;
        }
        Ok(sums)
    }

    /// Runs the next epoch. `at_start` sees the parameters after any Adam
    /// restart and before the first update.
    pub fn run_epoch_with(
        &mut self,
        at_start: impl FnOnce(usize, f64, &ParameterStore),
    ) -> Result<EpochRecord> {
        let epoch = self.progress.epochs_done + 1;
        let lr = self.begin_epoch(epoch);
        at_start(epoch, lr, self.model.params());
        let loss = self.train_epoch(epoch, lr)?;
        let dev = evaluate_model(&self.model, &self.dev, self.convention)?;
        let improved = self.progress.best_mixed.is_none_or(|b| dev.mixed() > b);
        if improved {
            self.progress.best_mixed = Some(dev.mixed());
            self.progress.best_epoch = Some(epoch);
            self.best = Some(self.model.clone());
        }
        let record = EpochRecord {
            epoch,
            lr,
            loss_pos: loss.pos,
            loss_arc: loss.arc,
            loss_rel: loss.rel,
            dev_upos: dev.pos(),
            dev_uas: dev.uas(),
            dev_las: dev.las(),
            dev_mixed: dev.mixed(),
            best: improved,
        };
        info!(
            "epoch {epoch} lr {lr} loss {:.3} dev UPOS {:.2} UAS {:.2} LAS {:.2} mixed {:.2}{}",
            record.total_loss(),
            record.dev_upos,
            record.dev_uas,
            record.dev_las,
            record.dev_mixed,
            if improved { " *" } else { "" }
        );
        if let Some(sink) = self.log_sink.as_mut() {
            writeln!(sink, "{}", record.tsv_row())?;
            sink.flush()?;
        }
        self.progress.epochs_done = epoch;
        self.progress.log.push(record.clone());
        Ok(record)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        self.run_epoch_with(|_, _, _| {})
    }

    /// Runs the remaining epochs of the budget. `on_epoch` is called after
    /// each epoch with the trainer, e.g. to save checkpoints.
    pub fn run(
        &mut self,
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while self.progress.epochs_done < self.model.hyper().epochs {
            let record = self.run_epoch()?;
            on_epoch(self, &record)?;
        }
        Ok(())
    }

    pub fn into_best(self) -> Option<JointModel> {
        self.best
    }

    pub fn into_model(self) -> JointModel {
        self.model
    }
}
