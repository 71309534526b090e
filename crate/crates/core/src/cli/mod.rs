//! Command-line surface: data generation, training, evaluation, embedding,
//! retrieval and the HTTP service.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

mod config;
pub mod service;

pub use config::{EvalOptions, RunConfig, ServiceOptions};
pub use service::{router, ServiceState};

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_pairs, save_pairs, split, CorrelationMode, ModalityPair, PairDataset};
use crate::error::{Error, Result};
use crate::retrieval::{build_index, evaluate_with};
use crate::trainer::{load_checkpoint, save_checkpoint, Checkpoint, TrainHistory, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    A,
    B,
}

#[derive(Debug, Parser)]
#[command(name = "xmoco", version, about = "Cross-modal momentum-contrast training and retrieval")]
pub struct Cli {
    /// JSON run configuration; absent fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=JSON", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic paired dataset as JSON Lines.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both towers and write a checkpoint plus a JSONL history.
    Train {
        /// Training pairs. Without it the synthetic generator from the config is used.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out pairs. Without it the training data is split by `eval.split`.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Defaults to `train.checkpoint_path`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<checkpoint>.history.jsonl`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Print retrieval metrics of a checkpoint on a dataset as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Embed rows of one modality; writes `{"id", "embedding"}` lines.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        modality: Modality,
        /// Rows of `{"id", "features"}` or full pair records.
        #[arg(long)]
        input: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rank the other modality of a corpus against one query vector.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Modality of the query features.
        #[arg(long, value_enum)]
        modality: Modality,
        /// Query features as a JSON array.
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Serve embeddings, match scores and corpus retrieval over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Overrides `service.host`.
        #[arg(long)]
        host: Option<String>,
        /// Overrides `service.port`.
        #[arg(long)]
        port: Option<u16>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::GenData { out: path } => cmd_gen_data(&cfg, &path, out),
        Command::Train {
            data,
            eval_data,
            checkpoint,
            history,
        } => cmd_train(
            &cfg,
            data.as_deref(),
            eval_data.as_deref(),
            checkpoint.as_deref(),
            history.as_deref(),
            out,
            err,
        ),
        Command::Eval { checkpoint, data } => cmd_eval(&cfg, &checkpoint, &data, out),
        Command::Embed {
            checkpoint,
            modality,
            input,
            output,
        } => match output {
            Some(p) => {
                let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
                cmd_embed(&checkpoint, modality, &input, &mut BufWriter::new(f))
            }
            None => cmd_embed(&checkpoint, modality, &input, out),
        },
        Command::Retrieve {
            checkpoint,
            corpus,
            modality,
            query,
            k,
        } => {
            let q: Vec<f64> = serde_json::from_str(&query)
                .map_err(|e| Error::config("--query", format!("expected a JSON array of numbers: {e}")))?;
            cmd_retrieve(&checkpoint, &corpus, modality, &q, k, out)
        }
        Command::Serve {
            checkpoint,
            corpus,
            host,
            port,
        } => {
            let host = host.unwrap_or_else(|| cfg.service.host.clone());
            let port = port.unwrap_or(cfg.service.port);
            cmd_serve(&checkpoint, corpus.as_deref(), &host, port, err)
        }
    }
}

fn mode_name(m: CorrelationMode) -> &'static str {
    match m {
        CorrelationMode::Strong => "strong",
        CorrelationMode::Weak => "weak",
    }
}

pub fn cmd_gen_data(cfg: &RunConfig, path: &Path, out: &mut dyn Write) -> Result<()> {
    let ds = generate_synthetic(&cfg.synth)?;
    save_pairs(&ds, path)?;
    writeln!(
        out,
        "wrote {} pairs (dim_a {}, dim_b {}, {} correlation) to {}",
        ds.len(),
        cfg.synth.input_dim_a,
        cfg.synth.input_dim_b,
        mode_name(cfg.synth.correlation_mode),
        path.display()
    )
    .map_err(|e| Error::io("<stdout>", e))
}

/// `(train, eval)` for a training run; see [`Command::Train`].
pub fn training_sets(
    cfg: &RunConfig,
    data: Option<&Path>,
    eval_data: Option<&Path>,
) -> Result<(PairDataset, Option<PairDataset>)> {
    let all = match data {
        Some(p) => load_pairs(p)?,
        None => {
            cfg.check_synth_dims()?;
            generate_synthetic(&cfg.synth)?
        }
    };
    if let Some(p) = eval_data {
        return Ok((all, Some(load_pairs(p)?)));
    }
    let (train, _, test) = split(&all, cfg.eval.split, cfg.eval.split_seed)?;
    let eval = (!test.is_empty()).then_some(test);
    Ok((train, eval))
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: Option<&Path>,
    eval_data: Option<&Path>,
    checkpoint: Option<&Path>,
    history_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let mut train_cfg = cfg.train.clone();
    if let Some(p) = checkpoint {
        train_cfg.checkpoint_path = p.display().to_string();
    }
    let ck_path = PathBuf::from(&train_cfg.checkpoint_path);
    let history_path = history_path.map_or_else(
        || PathBuf::from(format!("{}.history.jsonl", train_cfg.checkpoint_path)),
        Path::to_path_buf,
    );
    for w in train_cfg.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }

    let (train, eval) = training_sets(cfg, data, eval_data)?;
    let mut trainer = Trainer::new(&train_cfg, &cfg.encoder_a, &cfg.encoder_b)?;
    let mut history = TrainHistory::default();
    trainer.run(&train, eval.as_ref(), None, &mut history)?;
    save_checkpoint(&ck_path, &trainer.checkpoint())?;
    history.save(&history_path)?;

    let _ = writeln!(
        err,
        "trained {} steps on {} pairs; checkpoint {}; history {}",
        trainer.step(),
        train.len(),
        ck_path.display(),
        history_path.display()
    );
    if let Some(ev) = &eval {
        let report = evaluate_with(trainer.state(), ev, &cfg.eval.settings())?;
        writeln!(out, "{}", report.to_json()).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let ds = load_pairs(data)?;
    let report = evaluate_with(&ck.state, &ds, &cfg.eval.settings())?;
    writeln!(out, "{}", report.to_json()).map_err(|e| Error::io("<stdout>", e))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRow {
    id: String,
    features: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EmbedRow {
    Features(FeatureRow),
    Pair(ModalityPair),
}

#[derive(Serialize)]
struct EmbeddingRow<'a> {
    id: &'a str,
    embedding: Vec<f64>,
}

pub fn cmd_embed(checkpoint: &Path, modality: Modality, input: &Path, out: &mut dyn Write) -> Result<()> {
    let ck: Checkpoint = load_checkpoint(checkpoint)?;
    let enc = match modality {
        Modality::A => &ck.state.query_a,
        Modality::B => &ck.state.query_b,
    };
    let f = File::open(input).map_err(|e| Error::io(input, e))?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let row: EmbedRow = serde_json::from_str(&line).map_err(|_| {
            parse_err("expected {\"id\", \"features\"} or {\"id\", \"feat_a\", \"feat_b\"}".into())
        })?;
        let (id, feats) = match &row {
            EmbedRow::Features(r) => (r.id.as_str(), &r.features),
            EmbedRow::Pair(p) => (
                p.id.as_str(),
                match modality {
                    Modality::A => &p.feat_a,
                    Modality::B => &p.feat_b,
                },
            ),
        };
        let embedding = enc.encode(feats).map_err(|e| parse_err(e.to_string()))?;
        serde_json::to_writer(&mut *out, &EmbeddingRow { id, embedding })?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))
}

pub fn cmd_retrieve(
    checkpoint: &Path,
    corpus: &Path,
    modality: Modality,
    query: &[f64],
    k: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let ds = load_pairs(corpus)?;
    let (q_enc, c_enc) = match modality {
        Modality::A => (&ck.state.query_a, &ck.state.query_b),
        Modality::B => (&ck.state.query_b, &ck.state.query_a),
    };
    let candidates: Vec<Vec<f64>> = ds
        .pairs()
        .iter()
        .map(|p| match modality {
            Modality::A => p.feat_b.clone(),
            Modality::B => p.feat_a.clone(),
        })
        .collect();
    let ids = ds.pairs().iter().map(|p| p.id.clone()).collect();
    let index = build_index(ids, c_enc.encode_batch(&candidates)?)?;
    let hits = index.top_k(&q_enc.encode(query)?, k)?;
    let body = service::RetrieveResponse {
        ids: hits.iter().map(|h| h.id.clone()).collect(),
        scores: hits.iter().map(|h| h.score).collect(),
    };
    writeln!(out, "{}", serde_json::to_string(&body)?).map_err(|e| Error::io("<stdout>", e))
}

/// Loads the checkpoint and corpus, then serves until the process ends.
pub fn cmd_serve(
    checkpoint: &Path,
    corpus: Option<&Path>,
    host: &str,
    port: u16,
    err: &mut dyn Write,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let corpus = corpus.map(load_pairs).transpose()?;
    let state = ServiceState::new(ck.state.query_a, ck.state.query_b, corpus.as_ref())?;
    let addr = format!("{host}:{port}");
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("<runtime>", e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Error::io(&addr, e))?;
        let local = listener.local_addr().map_err(|e| Error::io(&addr, e))?;
        let _ = writeln!(err, "listening on http://{local}");
        axum::serve(listener, router(state))
            .await
            .map_err(|e| Error::io(&addr, e))
    })
}
