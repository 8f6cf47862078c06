use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adr::fixture::ZipfConfig;
use adr::pipeline::{self, Settings};
use adr::{Error, Result};

/// Long-tail refinement of instruction-tuning corpora.
#[derive(Debug, Parser)]
#[command(name = "adr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

/// Settings overrides; any of them beats the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Any setting as KEY=VALUE (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Active perspectives, e.g. `tok,obj`.
    #[arg(long, global = true)]
    perspectives: Option<String>,
    /// Thresholds, e.g. `tok=120,obj=304,co=24,int=4895`.
    #[arg(long, global = true)]
    tau: Option<String>,
    #[arg(long = "np", global = true)]
    n_p: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Target corpus size after synthesis.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// `mock` or `http`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Synthesis backend base URL.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Analysis backend base URL.
    #[arg(long, global = true)]
    analysis_endpoint: Option<String>,
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    stopwords: Option<PathBuf>,
    #[arg(long, global = true)]
    synonyms: Option<PathBuf>,
    /// Tail ratios, e.g. `0.05,0.1,0.15,0.2`.
    #[arg(long, global = true)]
    ratios: Option<String>,
    /// `raw` or `normalized`.
    #[arg(long, global = true)]
    score_mode: Option<String>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Annotate a corpus and write its entity indexes and reports.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation log for error curves and tail accuracy.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Resample an annotated corpus into a core set.
    Rebalance {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Plan synthesis jobs for a core set.
    PlanSynth {
        #[arg(long)]
        core: PathBuf,
        #[arg(long)]
        index_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a plan and write the merged corpus.
    Synth {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        core: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the synthetic instances alone.
        #[arg(long)]
        synthetic_out: Option<PathBuf>,
    },
    /// Split an evaluation log into tail and head buckets.
    TailSplit {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        dist_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild reports and plot data from a distribution directory.
    Report {
        #[arg(long)]
        dist_dir: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Write a synthetic Zipf corpus plus its word lists and eval log
    /// (seeded by `--seed`).
    GenFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        s: f64,
        #[arg(long, default_value_t = 1000)]
        entities: usize,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        min_per_instance: usize,
        #[arg(long, default_value_t = 3)]
        max_per_instance: usize,
        #[arg(long, default_value_t = 200)]
        eval_cases: usize,
    },
}

impl Overrides {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let pairs = [
            ("perspectives", self.perspectives.clone()),
            ("tau", self.tau.clone()),
            ("n_p", self.n_p.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("jobs", self.jobs.map(|v| v.to_string())),
            ("budget", self.budget.map(|v| v.to_string())),
            ("backend", self.backend.clone()),
            ("synthesis_endpoint", self.endpoint.clone()),
            ("analysis_endpoint", self.analysis_endpoint.clone()),
            ("lexicon", path(&self.lexicon)),
            ("stopwords", path(&self.stopwords)),
            ("synonyms", path(&self.synonyms)),
            ("ratios", self.ratios.clone()),
            ("score_mode", self.score_mode.clone()),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                s.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            s.set(k.trim(), v)?;
        }
        s.apply_env();
        s.validate()?;
        Ok(s)
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = cli.overrides.settings()?;
    match cli.command {
        Command::Analyze { data, out, eval } => {
            let a = pipeline::cmd_analyze(&settings, &data, &out, eval.as_deref())?;
            for r in &a.bundle.tail_reports {
                println!(
                    "{}\tentities={}\ttail_entities={:.1}%\ttail_instances={:.1}%",
                    r.perspective, r.entities, r.pct_tail_entities, r.pct_tail_instances
                );
            }
        }
        Command::Rebalance {
            data,
            index_dir,
            out,
            stats,
        } => {
            let r = pipeline::cmd_rebalance(&settings, &data, &index_dir, &out, stats.as_deref())?;
            println!(
                "kept {} of {} ({:.2}%)",
                r.kept.len(),
                r.total,
                100.0 * r.retention_rate()
            );
        }
        Command::PlanSynth { core, index_dir, out } => {
            let plan = pipeline::cmd_plan(&settings, &core, &index_dir, &out)?;
            println!(
                "{} jobs accepted, {} truncated (budget {}, core {})",
                plan.accepted(),
                plan.truncated,
                plan.budget,
                plan.core_size
            );
        }
        Command::Synth {
            plan,
            core,
            out,
            synthetic_out,
        } => {
            let s = pipeline::cmd_synth(&settings, &plan, &core, &out, synthetic_out.as_deref())?;
            println!(
                "merged {} instances ({} synthetic, {} failed, {} flagged)",
                s.merged_len,
                s.outcome.synthetic.len(),
                s.outcome.failed.len(),
                s.outcome.flagged.len()
            );
        }
        Command::TailSplit { eval, dist_dir, out } => {
            let r = pipeline::cmd_tail_split(&settings, &eval, &dist_dir, &out)?;
            print!("{}", r.accuracy.to_csv());
        }
        Command::Report { dist_dir, eval, out } => {
            let b = pipeline::cmd_report(&settings, &dist_dir, eval.as_deref(), &out)?;
            println!(
                "report with {} distributions and {} curves in {}",
                b.distributions.len(),
                b.curves.len(),
                out.display()
            );
        }
        Command::Pipeline { data, out, eval } => {
            let p = pipeline::cmd_pipeline(&settings, &data, &out, eval.as_deref())?;
            println!(
                "{} -> core {} -> merged {} ({})",
                p.original_len,
                p.core_len,
                p.merged_len,
                p.merged.display()
            );
        }
        Command::GenFixture {
            out,
            s,
            entities,
            instances,
            min_per_instance,
            max_per_instance,
            eval_cases,
        } => {
            let cfg = ZipfConfig {
                s,
                entities,
                instances,
                seed: settings.seed,
                min_per_instance,
                max_per_instance,
                eval_cases,
            };
            let files = cfg.generate()?.write(&out)?;
            println!("{}", files.corpus.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.overrides.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
