mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::SweepInputs;
use config::ExperimentConfig;

/// Query reformulation experiments: indexing, pair mining, seq2seq training
/// with QPP rewards, retrieval and evaluation.
#[derive(Parser)]
#[command(name = "drqr", version)]
struct Cli {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed (and the ML/RL stage seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Manifest path; defaults to `<primary output>.manifest.json`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Index(IndexCmd),
    #[command(subcommand)]
    Mine(MineCmd),
    #[command(subcommand)]
    Train(TrainCmd),
    /// Greedy-decode a reformulation for every query.
    Reformulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank documents for original or mixed queries and write a TREC run.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// `qid<TAB>text` reformulations mixed in with weight theta.
        #[arg(long)]
        reformulations: Option<PathBuf>,
        #[arg(long)]
        theta: Option<f64>,
        /// dph or bm25.
        #[arg(long)]
        model: Option<String>,
        /// Bo1 query expansion on the final query.
        #[arg(long)]
        qe: bool,
        #[arg(long, default_value = "drqr")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-query and mean metrics of a run.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "map,ndcg@10")]
        metrics: String,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Qpp(QppCmd),
    /// Grid search over lambda x theta, maximising NDCG@10 on validation queries.
    Sweep {
        #[arg(long)]
        index: PathBuf,
        /// ML-pretrained checkpoint; one RL model is trained per lambda.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated lambdas; overrides the config grid.
        #[arg(long)]
        lambdas: Option<String>,
        #[arg(long)]
        thetas: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum IndexCmd {
    /// Build an index from a `docno<TAB>text` corpus.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MineCmd {
    /// Mine query pairs sharing a relevant document; writes pairs.tsv, train.tsv and valid.tsv.
    Pairs {
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Maximum-likelihood training of the copy seq2seq model.
    Ml {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-critical fine-tuning with the combined F1/QPP reward.
    Rl {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        predictor: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum QppCmd {
    /// Correlate predictors with per-query MAP and NDCG@10 of a run.
    Correlate {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "all")]
        predictors: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Count queries improved, degraded and unchanged between two evaluations.
    Histogram {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        treatment: PathBuf,
        #[arg(long, default_value = "ndcg@10")]
        metric: String,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(p) = &cli.config {
        commands::require(p)?;
    }
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), cli.seed)?;
    let m = cli.manifest;
    match cli.command {
        Command::Index(IndexCmd::Build { corpus, out }) => {
            commands::index_build(&cfg, m, &corpus, &out)
        }
        Command::Mine(MineCmd::Pairs {
            qrels,
            queries,
            out_dir,
        }) => commands::mine(&cfg, m, &qrels, &queries, &out_dir),
        Command::Train(TrainCmd::Ml { train, valid, out }) => {
            commands::train_ml_cmd(&cfg, m, &train, &valid, &out)
        }
        Command::Train(TrainCmd::Rl {
            checkpoint,
            index,
            train,
            valid,
            lambda,
            predictor,
            out,
        }) => {
            if let Some(l) = lambda {
                cfg.lambda = l;
            }
            if let Some(p) = predictor {
                cfg.predictor = p.parse()?;
            }
            cfg.validate()?;
            commands::train_rl_cmd(&cfg, m, &checkpoint, &index, &train, &valid, &out)
        }
        Command::Reformulate {
            checkpoint,
            queries,
            out,
        } => commands::reformulate(&cfg, m, &checkpoint, &queries, &out),
        Command::Retrieve {
            index,
            queries,
            reformulations,
            theta,
            model,
            qe,
            tag,
            out,
        } => commands::retrieve_cmd(
            &cfg,
            m,
            &index,
            &queries,
            reformulations.as_deref(),
            theta,
            model.as_deref(),
            qe,
            &tag,
            &out,
        ),
        Command::Evaluate {
            run,
            qrels,
            metrics,
            out,
        } => commands::evaluate(&cfg, m, &run, &qrels, &metrics, &out),
        Command::Qpp(QppCmd::Correlate {
            index,
            queries,
            qrels,
            run,
            predictors,
            out,
        }) => commands::qpp_correlate(&cfg, m, &index, &queries, &qrels, &run, &predictors, &out),
        Command::Sweep {
            index,
            checkpoint,
            train,
            valid,
            queries,
            qrels,
            lambdas,
            thetas,
            out,
        } => {
            if let Some(l) = lambdas {
                cfg.lambda_grid = commands::parse_grid(&l)?;
            }
            if let Some(t) = thetas {
                cfg.theta_grid = commands::parse_grid(&t)?;
            }
            cfg.validate()?;
            commands::sweep(
                &cfg,
                m,
                SweepInputs {
                    index: &index,
                    checkpoint: &checkpoint,
                    train: &train,
                    valid: &valid,
                    queries: &queries,
                    qrels: &qrels,
                    out: &out,
                },
            )
        }
        Command::Report(ReportCmd::Histogram {
            baseline,
            treatment,
            metric,
            epsilon,
            out,
        }) => commands::histogram(&cfg, m, &baseline, &treatment, &metric, epsilon, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
