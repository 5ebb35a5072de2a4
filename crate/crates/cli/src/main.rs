use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use provlab::keyselect::Strategy;
use provlab_cli::commands::{Context, Level, Outcome, Suite};
use provlab_cli::config::RunConfig;
use provlab_cli::store::ArtifactStore;

#[derive(Parser)]
#[command(name = "provlab", version, about = "Training-data attribution for small diffusion models")]
struct Cli {
    /// Config file of `key = value` lines; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, env = "PROVLAB_OUT", default_value = "provlab-out")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Exit with status 2 when `attribute` finds the suspect infringing.
    #[arg(long, global = true)]
    exit_on_infringe: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model and the source model.
    TrainSource,
    /// Fine-tune a suspect on a mix of public and source-generated data.
    BuildSuspect {
        /// Source checkpoint file or store name; the configured source if absent.
        #[arg(long)]
        source: Option<String>,
        /// Generated fraction, overriding `suspect.rho`.
        #[arg(long)]
        rho: Option<f64>,
        /// Replicate index, overriding `suspect.index`.
        #[arg(long)]
        index: Option<usize>,
    },
    /// Select key samples from the source training data.
    SelectKeys {
        #[arg(value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        source: Option<String>,
    },
    /// Decide whether a suspect was trained on source outputs.
    Attribute {
        #[arg(value_enum)]
        level: LevelArg,
        /// Suspect checkpoint file or store name.
        #[arg(long)]
        suspect: String,
        #[arg(long)]
        source: Option<String>,
        /// Key sample file or store name; selected with `keys.strategy` if absent.
        #[arg(long)]
        keys: Option<String>,
    },
    /// Run an experiment suite and write its table.
    Experiment {
        #[arg(value_enum)]
        suite: SuiteArg,
        #[arg(long)]
        source: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Detect,
    Generate,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Instance,
    Statistical,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    RhoSweep,
    NSweep,
    Delta0Table,
    StatisticalEval,
}

fn run(cli: &Cli) -> provlab::Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::BuildSuspect { rho, index, .. } = &cli.command {
        if let Some(r) = rho {
            cfg.suspect_rho = *r;
        }
        if let Some(i) = index {
            cfg.suspect_index = *i;
        }
    }
    let ctx = Context::new(cfg, ArtifactStore::open(&cli.out)?)?;
    provlab::par::with_jobs(cli.jobs, || match &cli.command {
        Command::TrainSource => ctx.train_source(),
        Command::BuildSuspect { source, .. } => {
            ctx.build_suspect(source.as_deref(), ctx.cfg.suspect_rho, ctx.cfg.suspect_index)
        }
        Command::SelectKeys { strategy, source } => {
            let s = match strategy {
                StrategyArg::Detect => Strategy::Detect,
                StrategyArg::Generate => Strategy::Generate,
                StrategyArg::Random => Strategy::Random,
            };
            ctx.select_keys(source.as_deref(), s)
        }
        Command::Attribute {
            level,
            suspect,
            source,
            keys,
        } => {
            let l = match level {
                LevelArg::Instance => Level::Instance,
                LevelArg::Statistical => Level::Statistical,
            };
            ctx.attribute(l, source.as_deref(), suspect, keys.as_deref())
        }
        Command::Experiment { suite, source } => {
            let s = match suite {
                SuiteArg::RhoSweep => Suite::RhoSweep,
                SuiteArg::NSweep => Suite::NSweep,
                SuiteArg::Delta0Table => Suite::Delta0Table,
                SuiteArg::StatisticalEval => Suite::StatisticalEval,
            };
            ctx.experiment(s, source.as_deref())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors exit 1; status 2 is reserved for infringing verdicts
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for path in &outcome.artifacts {
                println!("  {}", path.display());
            }
            if cli.exit_on_infringe && outcome.infringing == Some(true) {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
