//! The `hft` command line. Exit codes: 0 on success, 1 for bad input
//! (arguments, config, data, checkpoints), 2 for internal failures.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::metrics::{confusion_counts, render_table, weighted_report_with, ClassificationReport, ReportOptions};
use crate::pipeline::synth::{CorpusKind, SynthCorpus};
use crate::pipeline::{
    ablation_suite, ablation_table, augment, harvest_hard_samples, load_split, predict_all, prepare_vocab,
    run_fused_pipeline, run_pipeline, stopwords_for, train_fused, write_predictions, AblationRow, Artifact,
    PipelineError, PreparedData, Prediction, RunConfig,
};
use crate::textprep::{clean_text, load_texts, write_tsv, Label, Split};
use crate::tokenizer::{build_vocab, top_split_tokens};

#[derive(Debug, Parser)]
#[command(name = "hft", version, about = "Fine-tune and evaluate small transformer text classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run config (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted-key override applied after the config, e.g. adv.epsilon=0.1.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Replaces the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory; each subcommand documents which.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a labeled file and write it as TSV (--out file, stdout otherwise).
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Build the vocabulary from data.train (--out file, stdout otherwise).
    BuildVocab,
    /// Train with augmentation rounds (and fusion if toggles.fusion); --out directory.
    Train,
    /// Score a checkpoint on a labeled file.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Divide the weighted sums by the class count, as the formula is printed.
        #[arg(long)]
        literal_eq4: bool,
    },
    /// Write predictions for an `id<TAB>text` file (--out file, stdout otherwise).
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a fusion head over two checkpoints on data.validation; --out directory.
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Augment the misclassified examples of data.train and data.validation.
    Augment {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        round: usize,
    },
    /// Run the six ablation configurations; --out directory.
    Ablate {
        /// Repeat the suite for adv.epsilon in {0.1, 0.5, 1.0}.
        #[arg(long)]
        epsilon_sweep: bool,
        /// One thread per configuration.
        #[arg(long)]
        parallel: bool,
    },
    /// Most frequent words of train+validation that split into subwords.
    TopSplitTokens {
        #[arg(long, default_value_t = 6)]
        k: usize,
    },
    /// Write a synthetic corpus (train/validation/test TSV) into --out.
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Separable)]
        kind: SynthKind,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum SynthKind {
    Separable,
    Noisy,
    Complementary,
}

impl From<SynthKind> for CorpusKind {
    fn from(k: SynthKind) -> Self {
        match k {
            SynthKind::Separable => CorpusKind::Separable,
            SynthKind::Noisy => CorpusKind::Noisy,
            SynthKind::Complementary => CorpusKind::Complementary,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Pipeline(e) if e.is_validation() => 1,
            CliError::Pipeline(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

impl Common {
    fn load_config(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn checkpoint(path: &Option<PathBuf>) -> Result<Artifact> {
    let p = path
        .as_ref()
        .ok_or_else(|| usage("--checkpoint is required"))?;
    if !p.exists() {
        return Err(usage(format!("--checkpoint {}: no such file", p.display())));
    }
    Ok(Artifact::load(p)?)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Pipeline(PipelineError::io(path, e))
}

/// Writes to `out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, body: &[u8]) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            std::fs::write(p, body).map_err(|e| io_err(p, e))
        }
        None => std::io::stdout()
            .write_all(body)
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    emit(Some(path), body)
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

pub fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Preprocess { input } => {
            let cfg = c.load_config()?;
            let stop = stopwords_for(&cfg)?;
            let ex = load_split(input, cfg.data.format, Split::Train, &stop)?;
            let rows: Vec<(String, String, Label)> =
                ex.into_iter().map(|e| (e.id, e.tokens_text, e.label)).collect();
            let mut buf = Vec::new();
            write_tsv(&mut buf, &rows).expect("in-memory write");
            emit(c.out.as_deref(), &buf)
        }
        Command::BuildVocab => {
            let cfg = c.load_config()?;
            let data = PreparedData::load(&cfg)?;
            let vocab = prepare_vocab(&cfg, &data.train, &data.validation)?;
            emit(c.out.as_deref(), vocab.to_text().as_bytes())
        }
        Command::Train => {
            let cfg = c.load_config()?;
            let data = PreparedData::load(&cfg)?;
            let out = if cfg.toggles.fusion {
                run_fused_pipeline(&cfg, &data)?
            } else {
                run_pipeline(&cfg, &data)?
            };
            let dir = c.out_dir("run");
            out.write_to_dir(&dir)?;
            write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
            print!("{}", render_table(&[("validation", out.validation.clone())]));
            if let Some(t) = &out.test {
                print!("{}", render_table(&[("test", t.clone())]));
            }
            Ok(())
        }
        Command::Eval {
            checkpoint: ck,
            input,
            literal_eq4,
        } => {
            let cfg = c.load_config()?;
            let art = checkpoint(ck)?;
            let stop = stopwords_for(&cfg)?;
            let ex = load_split(input, cfg.data.format, Split::Test, &stop)?;
            let preds = predict_all(&art, &ex, cfg.train.eval_batch_size)?;
            let report = report_with(&preds, *literal_eq4)?;
            print!("{}", render_table(&[("model", report.clone())]));
            if report.any_undefined() {
                log::warn!("a class has no predicted or no true instances; its undefined scores count as 0");
            }
            if let Some(p) = &c.out {
                write_file(p, json(&report).as_bytes())?;
            }
            Ok(())
        }
        Command::Predict { checkpoint: ck, input } => {
            let cfg = c.load_config()?;
            let art = checkpoint(ck)?;
            let stop = stopwords_for(&cfg)?;
            let rows = load_texts(input, cfg.data.format).map_err(PipelineError::from)?;
            let mut preds = Vec::with_capacity(rows.len());
            for (i, (id, text)) in rows.iter().enumerate() {
                let cleaned = clean_text(text, &stop)
                    .map_err(|e| usage(format!("{}: row {}: {e}", input.display(), i + 1)))?;
                let [p_fake, p_real] = art.probabilities(&cleaned)?;
                preds.push(Prediction {
                    id: id.clone(),
                    gold: None,
                    pred: if p_real > p_fake { Label::Real } else { Label::Fake },
                    p_fake,
                    p_real,
                });
            }
            let mut buf = Vec::new();
            write_predictions(&mut buf, &preds).expect("in-memory write");
            emit(c.out.as_deref(), &buf)
        }
        Command::Fuse { a, b } => {
            let cfg = c.load_config()?;
            let single = |p: &PathBuf, flag: &str| -> Result<_> {
                match checkpoint(&Some(p.clone())).map_err(|e| match e {
                    CliError::Usage(m) => usage(m.replace("--checkpoint", flag)),
                    e => e,
                })? {
                    Artifact::Single(m) => Ok(m),
                    Artifact::Fused(_) => Err(usage(format!("{flag} {}: expected a single-model checkpoint", p.display()))),
                }
            };
            let (ma, mb) = (single(a, "--a")?, single(b, "--b")?);
            let data = PreparedData::load(&cfg)?;
            let fused = train_fused(&ma, &mb, &data.validation, &cfg.fusion, cfg.seed)?;
            let art = Artifact::Fused(fused.fused.clone());
            let dir = c.out_dir("fused");
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            art.save(dir.join("checkpoint.bin"))?;
            write_file(&dir.join("report.json"), json(&fused.report).as_bytes())?;
            print!("{}", render_table(&[("fused", fused.report.clone())]));
            Ok(())
        }
        Command::Augment { checkpoint: ck, round } => {
            let cfg = c.load_config()?;
            let art = checkpoint(ck)?;
            let data = PreparedData::load(&cfg)?;
            let lexicon = crate::pipeline::lexicon_for(&cfg)?;
            let hard = harvest_hard_samples(&art, &data.train, &data.validation, cfg.train.eval_batch_size)?;
            let new = augment(
                &hard,
                &lexicon,
                crate::encoder::mix_seed(cfg.seed, crate::pipeline::STREAM_AUGMENT),
                *round,
            );
            let rows: Vec<(String, String, Label)> = new
                .into_iter()
                .map(|(e, _)| (e.id, e.tokens_text, e.label))
                .collect();
            log::info!("{} hard samples, {} augmented", hard.len(), rows.len());
            let mut buf = Vec::new();
            write_tsv(&mut buf, &rows).expect("in-memory write");
            emit(c.out.as_deref(), &buf)
        }
        Command::Ablate { epsilon_sweep, parallel } => {
            let cfg = c.load_config()?;
            let data = PreparedData::load(&cfg)?;
            let dir = c.out_dir("ablation");
            let eps: Vec<Option<f64>> = if *epsilon_sweep {
                [0.1, 0.5, 1.0].into_iter().map(Some).collect()
            } else {
                vec![None]
            };
            let mut all: Vec<(Option<f64>, Vec<AblationRow>)> = Vec::new();
            for e in eps {
                let mut run = cfg.clone();
                if let Some(e) = e {
                    run.adv.epsilon = e;
                }
                let rows = ablation_suite(&run, &data, *parallel)?;
                if let Some(e) = e {
                    println!("epsilon = {e}");
                }
                print!("{}", ablation_table(&rows));
                all.push((e, rows));
            }
            let mut table = String::new();
            let mut records = Vec::new();
            for (e, rows) in &all {
                if let Some(e) = e {
                    table.push_str(&format!("epsilon = {e}\n"));
                }
                table.push_str(&ablation_table(rows));
                for r in rows {
                    records.push(serde_json::json!({
                        "epsilon": e.unwrap_or(cfg.adv.epsilon),
                        "name": r.name,
                        "validation": r.validation,
                        "test": r.test,
                    }));
                }
            }
            write_file(&dir.join("ablation.txt"), table.as_bytes())?;
            write_file(&dir.join("ablation.json"), json(&records).as_bytes())
        }
        Command::TopSplitTokens { k } => {
            let cfg = c.load_config()?;
            let data = PreparedData::load(&cfg)?;
            let corpus: Vec<&str> = data.train.iter().map(|e| e.tokens_text.as_str()).collect();
            let vocab = build_vocab(&corpus, cfg.vocab.target_size).map_err(PipelineError::from)?;
            let both: Vec<&str> = data
                .train
                .iter()
                .chain(&data.validation)
                .map(|e| e.tokens_text.as_str())
                .collect();
            let mut body = String::from("word\tcount\tpieces\n");
            for (w, n, p) in top_split_tokens(&both, &vocab, *k) {
                body.push_str(&format!("{w}\t{n}\t{p}\n"));
            }
            emit(c.out.as_deref(), body.as_bytes())
        }
        Command::Synth { kind } => {
            let cfg = c.load_config()?;
            let corpus = SynthCorpus::new((*kind).into(), cfg.seed);
            let dir = c.out_dir("synth");
            for p in corpus.write_dir(&dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn report_with(preds: &[Prediction], literal_eq4: bool) -> Result<ClassificationReport> {
    let p: Vec<usize> = preds.iter().map(|p| p.pred.index()).collect();
    let y: Vec<usize> = preds
        .iter()
        .map(|p| p.gold.map(Label::index))
        .collect::<Option<_>>()
        .ok_or_else(|| usage("evaluation needs gold labels"))?;
    let counts = confusion_counts(&p, &y).map_err(PipelineError::from)?;
    Ok(weighted_report_with(&counts, ReportOptions { literal_eq4 }).map_err(PipelineError::from)?)
}

/// Parses `args`, runs, and maps the outcome to an exit code. Help and
/// version requests exit 0; other argument errors exit 1.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            e.exit_code()
        }
    }
}
