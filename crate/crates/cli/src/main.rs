use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use nonar_mmi::app::{self, SweepMetric};
use nonar_mmi::config::RunConfig;
use nonar_mmi::decoding::{read_dump, Mode, TieBreak};
use nonar_mmi::metrics::StopwordList;
use nonar_mmi::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "nonar-mmi", version, about = "Parallel sequence generation decoded under mutual information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (flat key = value file).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Decoding threads; 0 means one per core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the parallel and autoregressive models.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory (overrides out.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many steps in total.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Decode the test split and write a dump.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "nonar+mmi")]
        mode: Mode,
        #[arg(long)]
        lambda: Option<f64>,
        /// Corpus whose sources are decoded instead of the test split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Dump path (default: <out.dir>/decode.<mode>.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a dump against references, or sweep λ on the dev split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "sweep")]
        dump: Option<PathBuf>,
        /// References: a corpus file or one response per line.
        #[arg(long, required_unless_present = "sweep")]
        refs: Option<PathBuf>,
        /// Stopword list (default: the built-in list).
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Decode the dev split at every λ on the grid and report the best.
        #[arg(long)]
        sweep: bool,
        #[arg(long, default_value = "bleu")]
        sweep_metric: SweepMetric,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "nonar+mmi")]
        mode: Mode,
        /// Report path; the report is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the per-token decoder against exhaustive enumeration.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test sources to check.
        #[arg(long, default_value_t = 20)]
        limit: usize,
        #[arg(long, hide = true)]
        corrupt_tie_break: bool,
    },
}

fn load_config(common: &Common, checkpoint: Option<&Path>) -> Result<RunConfig, Error> {
    let path = match (&common.config, checkpoint) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(k)) => Some(k.parent().unwrap_or(Path::new(".")).join(app::CONFIG_FILE)),
        (None, None) => None,
    };
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn write_out(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train {
            common,
            out,
            resume,
            stop_at,
        } => {
            let mut cfg = load_config(&common, None)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let r = app::cmd_train(&cfg, resume, stop_at)?;
            println!("trained {} steps; checkpoint {}", r.steps, r.checkpoint.display());
            if let Some(l) = r.final_log {
                println!("{}", l.line());
            }
        }
        Command::Decode {
            common,
            checkpoint,
            mode,
            lambda,
            input,
            out,
        } => {
            let cfg0 = load_config(&common, checkpoint.as_deref())?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg0.out_dir.join(app::CHECKPOINT_FILE));
            let mut cfg = load_config(&common, Some(&ckpt))?;
            if let Some(l) = lambda {
                cfg.decode.lambda = l;
            }
            let out = out.unwrap_or_else(|| cfg.out_dir.join(format!("decode.{mode}.tsv")));
            let recs = app::cmd_decode(&cfg, &ckpt, mode, input.as_deref(), &out)?;
            println!("decoded {} sources with {mode}; dump {}", recs.len(), out.display());
        }
        Command::Eval {
            common,
            dump,
            refs,
            stopwords,
            sweep,
            sweep_metric,
            checkpoint,
            mode,
            out,
        } => {
            let text = if sweep {
                let cfg0 = load_config(&common, checkpoint.as_deref())?;
                let ckpt = checkpoint.unwrap_or_else(|| cfg0.out_dir.join(app::CHECKPOINT_FILE));
                let cfg = load_config(&common, Some(&ckpt))?;
                let system = app::load_system(&cfg, &ckpt)?;
                let data = app::load_data(&cfg)?;
                let points = app::sweep_lambda(&system, &data.splits.dev, mode, &cfg.decode, cfg.workers)?;
                let mut t = String::new();
                for p in &points {
                    t.push_str(&format!("lambda={:.1} bleu={:.4} distinct2={:.4}\n", p.lambda, p.bleu, p.distinct2));
                }
                t.push_str(&format!("best_lambda={:.1}\n", app::best_lambda(&points, sweep_metric)));
                t
            } else {
                let dump = read_dump(dump.as_deref().expect("required by clap"))?;
                let refs = app::read_references(refs.as_deref().expect("required by clap"))?;
                let list = match stopwords {
                    Some(p) => StopwordList::load(&p)?,
                    None => StopwordList::builtin(),
                };
                app::cmd_eval(&dump, &refs, &list)?.to_string()
            };
            print!("{text}");
            if let Some(o) = out {
                write_out(&o, &text)?;
            }
        }
        Command::Oracle {
            common,
            checkpoint,
            limit,
            corrupt_tie_break,
        } => {
            let cfg0 = load_config(&common, checkpoint.as_deref())?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg0.out_dir.join(app::CHECKPOINT_FILE));
            let cfg = load_config(&common, Some(&ckpt))?;
            let system = app::load_system(&cfg, &ckpt)?;
            let tie = if corrupt_tie_break {
                TieBreak::HighestId
            } else {
                TieBreak::LowestId
            };
            let report = app::cmd_oracle(&cfg, &system, limit, tie)?;
            match report.mismatches.first() {
                None => println!("oracle: PASS ({} checks)", report.checks),
                Some(m) => {
                    println!(
                        "oracle: FAIL ({} of {} checks)\nfirst mismatch: source [{}] lambda={} {}: {}",
                        report.mismatches.len(),
                        report.checks,
                        system.vocab.decode(&m.source),
                        m.lambda,
                        m.check,
                        m.detail
                    );
                    return Ok(EXIT_ACCEPTANCE);
                }
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => {
            info!("done");
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            })
        }
    }
}
