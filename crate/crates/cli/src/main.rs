use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jointparse::checkpoint;
use jointparse::conllu::{read_treebank_file, split_9_1, write_treebank, Sentence, TagColumn};
use jointparse::lexicon::Lexicon;
use jointparse::metrics::{self, Baseline, EvalReport, PunctConvention};
use jointparse::network::{Hyperparams, JointModel};
use jointparse::trainer::Trainer;
use jointparse::Error;
use log::info;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "jointparse",
    version,
    about = "Joint BiLSTM POS tagger and dependency parser"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the checkpoint with the best dev mixed accuracy.
    Train(TrainArgs),
    /// Tag and parse a CoNLL-U file.
    Predict(PredictArgs),
    /// Score system output against gold CoNLL-U.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(
        long,
        required_unless_present = "auto_split",
        conflicts_with = "auto_split"
    )]
    dev: Option<PathBuf>,
    /// Hold out a seeded tenth of the training file as dev set.
    #[arg(long)]
    auto_split: bool,
    #[arg(long, default_value = "model.bin")]
    model: PathBuf,
    /// Metric log (TSV, appended). Defaults to the model path plus `.log.tsv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also write the latest training state here after every epoch.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Continue from a state file written with --state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Whitespace-separated word vectors; dimension must equal --word-dim.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    punct: Option<PunctConvention>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 100)]
    word_dim: usize,
    #[arg(long, default_value_t = 50)]
    char_dim: usize,
    #[arg(long, default_value_t = 100)]
    tag_dim: usize,
    #[arg(long, default_value_t = 2)]
    lstm_layers: usize,
    #[arg(long, default_value_t = 128)]
    lstm_hidden: usize,
    #[arg(long, default_value_t = 100)]
    mlp_hidden: usize,
    #[arg(long, default_value_t = 0.67)]
    keep_prob: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    anneal_factor: f64,
    #[arg(long, default_value_t = 10)]
    anneal_every: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "upos")]
    tag_column: TagColumn,
    /// Allow several words attached to the root.
    #[arg(long)]
    multi_root: bool,
    #[arg(long)]
    no_shuffle: bool,
}

impl HyperArgs {
    fn to_hyper(&self) -> Hyperparams {
        Hyperparams {
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            tag_dim: self.tag_dim,
            lstm_layers: self.lstm_layers,
            lstm_hidden: self.lstm_hidden,
            mlp_hidden: self.mlp_hidden,
            keep_prob: self.keep_prob,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            anneal_factor: self.anneal_factor,
            anneal_every: self.anneal_every,
            seed: self.seed,
            tag_column: self.tag_column,
            multi_root: self.multi_root,
            shuffle: !self.no_shuffle,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold file; repeat together with --system for several treebanks.
    #[arg(long, required = true)]
    gold: Vec<PathBuf>,
    #[arg(long, required_unless_present = "baseline")]
    system: Vec<PathBuf>,
    #[arg(long)]
    punct: Option<PunctConvention>,
    #[arg(long, default_value = "upos")]
    tag_column: TagColumn,
    /// Emit TSV instead of an aligned table.
    #[arg(long)]
    tsv: bool,
    /// Score a right-branching, majority-label baseline instead of --system.
    #[arg(long, conflicts_with = "system")]
    baseline: bool,
    /// Training file for the baseline's majority tag and relations
    /// (defaults to the gold file).
    #[arg(long, requires = "baseline")]
    baseline_train: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) => EXIT_NUMERIC,
        Error::InvalidHyperparams(_) | Error::UnknownConvention(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn read(path: &Path) -> jointparse::Result<Vec<Sentence>> {
    read_treebank_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        e => e,
    })
}

fn cmd_train(args: TrainArgs) -> jointparse::Result<()> {
    let hyper = args.hyper.to_hyper();
    hyper.validate()?;
    let corpus = read(&args.train)?;
    let (train, dev) = match &args.dev {
        Some(dev) => (corpus, read(dev)?),
        None => {
            let (t, d) = split_9_1(&corpus, hyper.seed)?;
            info!("auto split: {} train, {} dev sentences", t.len(), d.len());
            (t, d)
        }
    };
    let punct = args
        .punct
        .unwrap_or(PunctConvention::default_for(hyper.tag_column));

    let (model, progress) = match &args.resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            let progress = ck.progress.ok_or_else(|| {
                Error::CorruptCheckpoint(format!("{} holds no training state", path.display()))
            })?;
            info!("resuming after epoch {}", progress.epochs_done);
            let mut model = ck.model;
            model.set_epoch_budget(hyper.epochs);
            (model, progress)
        }
        None => {
            let lexicon = Lexicon::build(&train, hyper.tag_column)?;
            let mut model = JointModel::new(hyper.clone(), lexicon)?;
            if let Some(path) = &args.pretrained {
                let lexicon = model.lexicon().clone();
                let id = model.weights().word_emb;
                let table = model.params_mut().value_mut(id);
                let report = lexicon.load_pretrained(File::open(path)?, table, hyper.word_dim)?;
                info!(
                    "pretrained vectors: {} hits ({} lowercase), {} misses",
                    report.hits, report.lowercase_hits, report.misses
                );
            }
            (model, Default::default())
        }
    };
    info!(
        "{} training sentences, {} dev sentences, {} weights",
        train.len(),
        dev.len(),
        model.params().num_weights()
    );

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.tsv", args.model.display())));
    let fresh = fs::metadata(&log_path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let sink = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;

    let mut trainer = Trainer::resume(model, progress, &train, dev)?
        .with_convention(punct)
        .with_log_sink(Box::new(sink), fresh)?;
    let (model_path, state_path) = (args.model.clone(), args.state.clone());
    trainer.run(|t, rec| {
        if rec.best {
            checkpoint::save(&model_path, t.best_model().unwrap(), None)?;
        }
        if let Some(p) = &state_path {
            checkpoint::save(p, t.model(), Some(t.progress()))?;
        }
        Ok(())
    })?;
    let p = trainer.progress();
    if let (Some(epoch), Some(mixed)) = (p.best_epoch, p.best_mixed) {
        info!(
            "best dev mixed accuracy {mixed:.2} at epoch {epoch}; model in {}",
            args.model.display()
        );
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> jointparse::Result<()> {
    let model = checkpoint::load(&args.model)?.model;
    let sentences = read(&args.input)?;
    let preds = model.predict_all(&sentences)?;
    let mut buf = Vec::new();
    write_treebank(&mut buf, &sentences, Some(&preds), model.hyper().tag_column)?;
    match &args.output {
        Some(path) => checkpoint::write_atomic(path, &buf)?,
        None => {
            let mut out = BufWriter::new(io::stdout().lock());
            out.write_all(&buf)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> jointparse::Result<()> {
    if !args.baseline && args.gold.len() != args.system.len() {
        return Err(Error::InvalidHyperparams(format!(
            "{} gold files but {} system files",
            args.gold.len(),
            args.system.len()
        )));
    }
    let punct = args
        .punct
        .unwrap_or(PunctConvention::default_for(args.tag_column));
    let mut reports: Vec<EvalReport> = Vec::new();
    for (i, gold_path) in args.gold.iter().enumerate() {
        let gold = read(gold_path)?;
        let mut report = if args.baseline {
            let train = match &args.baseline_train {
                Some(p) => read(p)?,
                None => gold.clone(),
            };
            let b = Baseline::fit(&train, args.tag_column)?;
            let preds: Vec<_> = gold.iter().map(|s| b.predict(s)).collect();
            metrics::evaluate(&gold, &preds, args.tag_column, punct)?
        } else {
            let system = read(&args.system[i])?;
            metrics::evaluate_sentences(&gold, &system, args.tag_column, punct)?
        };
        report.name = gold_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        reports.push(report);
    }
    let text = if args.tsv {
        metrics::format_tsv(&reports)
    } else {
        metrics::format_table(&reports)
    };
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
