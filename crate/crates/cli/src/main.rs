//! `polyforge` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend or
//! transport error.

mod corpus_cmds;
mod exit;
mod instruct_cmds;
mod io;
mod model_cmds;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::exit::{Fail, Outcome};

#[derive(Debug, Parser)]
#[command(name = "polyforge", version, about = "Multilingual pre-training and instruction data toolkit")]
pub struct Cli {
    /// Seed for every randomized step; each command documents its default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Log as line-delimited JSON on stderr.
    #[arg(long, global = true)]
    pub log_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus inspection.
    #[command(subcommand)]
    Corpus(corpus_cmds::CorpusCmd),
    /// Language identification.
    #[command(subcommand)]
    Langid(corpus_cmds::LangidCmd),
    /// Rule, perplexity and classifier filtering.
    #[command(subcommand)]
    Filter(corpus_cmds::FilterCmd),
    /// MinHash-LSH near-duplicate removal.
    Dedup(corpus_cmds::DedupArgs),
    /// BPE tokenizer.
    #[command(subcommand)]
    Tok(model_cmds::TokCmd),
    /// Data-mixture planning and sampling.
    #[command(subcommand)]
    Curriculum(model_cmds::CurriculumCmd),
    /// Learning-rate schedule.
    #[command(subcommand)]
    Schedule(model_cmds::ScheduleCmd),
    /// Multilingual self-instruct generation.
    #[command(subcommand)]
    Selfinstruct(instruct_cmds::SelfInstructCmd),
    /// Benchmark evaluation.
    #[command(subcommand)]
    Eval(instruct_cmds::EvalCmd),
    /// Multi-stage corpus runs from a config file.
    #[command(subcommand)]
    Pipeline(instruct_cmds::PipelineCmd),
}

fn init_logging(json: bool) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if json {
        b.format(|buf, rec| {
            let line = serde_json::json!({
                "ts_ms": std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_millis() as u64)
                    .unwrap_or(0),
                "level": rec.level().as_str(),
                "target": rec.target(),
                "msg": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    let _ = b.try_init();
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Corpus(c) => corpus_cmds::corpus(cli, c),
        Command::Langid(c) => corpus_cmds::langid(cli, c),
        Command::Filter(c) => corpus_cmds::filter(cli, c),
        Command::Dedup(a) => corpus_cmds::dedup(cli, a),
        Command::Tok(c) => model_cmds::tok(cli, c),
        Command::Curriculum(c) => model_cmds::curriculum(cli, c),
        Command::Schedule(c) => model_cmds::schedule(cli, c),
        Command::Selfinstruct(c) => instruct_cmds::selfinstruct(cli, c),
        Command::Eval(c) => instruct_cmds::eval(cli, c),
        Command::Pipeline(c) => instruct_cmds::pipeline(cli, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.log_json);
    let workers = cli.workers;
    let result = polyforge::workers::with_workers(workers, || run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail { code, error }) => {
            log::error!("{error:#}");
            ExitCode::from(code as u8)
        }
    }
}
