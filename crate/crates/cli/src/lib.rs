//! Command-line pipeline: `ingest → classify → match → stats`, matcher
//! evaluation, annotator agreement and the annotation API server.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod server;
pub mod workspace;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::{Overrides, ResolvedConfig};
use error::{CliError, Result};
use pipeline::Outcome;

#[derive(Debug, Parser)]
#[command(name = "pvcohort", version, about = "Medication side-effect cohorts from social-media posts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Matcher similarity threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Significance level for the association tests.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `outputs` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read posts, apply the keyword filter and collapse posts by user.
    Ingest(Common),
    /// Label keyword posts S / NR and write cohort membership.
    Classify(Common),
    /// Run the lexicon matcher over cohort profiles.
    Match(Common),
    /// Prevalence tables and pattern / side-effect association report.
    Stats(Common),
    /// Ingest, classify, match and stats in sequence.
    Run(Common),
    /// Score the matcher against the gold set.
    Eval(Common),
    /// Pairwise Cohen's kappa for an annotation round.
    Agree {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        round: u32,
    },
    /// Serve the annotation API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Write a synthetic demo project (posts, labels, lexicon, gold, config).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn resolve(common: &Common) -> Result<ResolvedConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required"))?;
    ResolvedConfig::load(
        path,
        &Overrides {
            threshold: common.threshold,
            alpha: common.alpha,
            seed: common.seed,
            out: common.out.clone(),
        },
    )
}

fn report(outcomes: &[Outcome]) {
    for o in outcomes {
        println!("{}", o.message);
        println!("  -> {}", o.dir.display());
    }
}

/// Executes one parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => report(&[pipeline::ingest(&resolve(&c)?)?]),
        Command::Classify(c) => report(&[pipeline::classify(&resolve(&c)?)?]),
        Command::Match(c) => report(&[pipeline::match_stage(&resolve(&c)?)?]),
        Command::Stats(c) => report(&[pipeline::stats(&resolve(&c)?)?]),
        Command::Run(c) => {
            let cfg = resolve(&c)?;
            for stage in [pipeline::ingest, pipeline::classify, pipeline::match_stage, pipeline::stats] {
                report(&[stage(&cfg)?]);
            }
        }
        Command::Eval(c) => report(&[pipeline::eval(&resolve(&c)?)?]),
        Command::Agree { common, round } => report(&[pipeline::agree(&resolve(&common)?, round)?]),
        Command::Serve { common, host, port } => {
            let cfg = resolve(&common)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::data(e.to_string()))?;
            rt.block_on(server::serve(cfg, &host, port))?;
        }
        Command::Synth { out, seed } => {
            write_demo(&out, seed)?;
            println!("demo project written to {}", out.display());
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Synthetic posts, external labels, seed lexicon, negation triggers, a
/// 25-profile gold set and a config tying them together.
pub fn write_demo(dir: &Path, seed: u64) -> Result<()> {
    use pvcohort_core::jsonl::write_records;
    use pvcohort_core::matcher::DEFAULT_TRIGGERS;

    let demo = pvcohort_core::synth::demo_corpus(seed);
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    };
    let jsonl = |records: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
        let mut buf = Vec::new();
        records(&mut buf).expect("writing to memory");
        buf
    };
    write("posts.jsonl", jsonl(&|b| write_records(b, &demo.posts)))?;
    write("labels.jsonl", jsonl(&|b| write_records(b, &demo.labels)))?;
    write("lexicon.json", format!("{}\n", demo.lexicon.to_json_pretty()).into_bytes())?;
    let mut triggers = String::from("// one trigger per line\n");
    for t in DEFAULT_TRIGGERS {
        triggers.push_str(t);
        triggers.push('\n');
    }
    write("negation_triggers.txt", triggers.into_bytes())?;
    let pretty = |v: serde_json::Value| {
        let mut s = serde_json::to_vec_pretty(&v).expect("json");
        s.push(b'\n');
        s
    };
    write("gold.json", pretty(serde_json::to_value(demo.gold(25)).expect("gold serializes")))?;
    write(
        "config.json",
        pretty(serde_json::json!({
            "posts": "posts.jsonl",
            "lexicon": "lexicon.json",
            "negation_triggers": "negation_triggers.txt",
            "gold": "gold.json",
            "workspace": "workspace",
            "outputs": "out",
            "classifier": {"mode": "external_labels", "labels": "labels.jsonl"},
        })),
    )?;
    Ok(())
}
