use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advsl::commands;
use advsl::config::{ExperimentConfig, Overrides};
use advsl::model::Arch;
use advsl::perturb::PerturbMode;

/// Semi-supervised adversarial training for cross-lingual text classification.
///
/// Log verbosity is read from ADVSL_LOG (e.g. ADVSL_LOG=info).
#[derive(Parser, Debug)]
#[command(name = "advsl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the labeled source corpus.
    Train(Common),
    /// Train, then self-learn on the unlabeled target corpus.
    Selflearn(Common),
    /// Build a code-switched copy of a corpus with a bilingual dictionary.
    Codeswitch(Common),
    /// Evaluate a checkpoint on a labeled test corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (overrides paths.checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test corpus (overrides paths.test).
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Run the synthetic cross-lingual benchmark.
    Synthetic {
        #[command(flatten)]
        common: Common,
        /// Also write the first seed's generated data under <output>/data.
        #[arg(long)]
        emit_data: bool,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; relative paths in it are resolved against its directory.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides paths.output_dir).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Perturbation budget.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Items selected per class in each self-learning iteration.
    #[arg(long)]
    kt: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Perturbation mode: none, random or adversarial.
    #[arg(long)]
    mode: Option<PerturbMode>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Classifier head: linear or mlp1.
    #[arg(long)]
    arch: Option<Arch>,
}

impl Common {
    fn load(&self) -> advsl::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let mut c = ExperimentConfig::default();
                c.rebase(&std::env::current_dir().unwrap_or_default());
                c
            }
        };
        cfg.apply(&Overrides {
            epsilon: self.epsilon,
            kt: self.kt,
            epochs: self.epochs,
            mode: self.mode,
            seed: self.seed,
            threads: self.threads,
            arch: self.arch,
            output_dir: self.output.clone(),
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> advsl::Result<commands::Summary> {
    let (mut cfg, which) = match &cli.command {
        Command::Train(c) => (c.load()?, "train"),
        Command::Selflearn(c) => (c.load()?, "selflearn"),
        Command::Codeswitch(c) => (c.load()?, "codeswitch"),
        Command::Eval {
            common,
            checkpoint,
            test,
        } => {
            let mut cfg = common.load()?;
            let abs = |p: &PathBuf| std::path::absolute(p).unwrap_or_else(|_| p.clone());
            if let Some(p) = checkpoint {
                cfg.paths.checkpoint = Some(abs(p));
            }
            if let Some(p) = test {
                cfg.paths.test = Some(abs(p));
            }
            (cfg, "eval")
        }
        Command::Synthetic { common, emit_data } => {
            let mut cfg = common.load()?;
            cfg.synthetic.emit_data |= *emit_data;
            (cfg, "synthetic")
        }
    };
    cfg.resolve()?;
    log::info!("{which}: config hash {}", cfg.hash()?);
    match which {
        "train" => commands::cmd_train(&cfg),
        "selflearn" => commands::cmd_selflearn(&cfg),
        "codeswitch" => commands::cmd_codeswitch(&cfg),
        "eval" => commands::cmd_eval(&cfg),
        _ => commands::cmd_synthetic(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADVSL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{}", line.trim_end());
            }
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
