use clap::{Parser, Subcommand};
use mfbf::cli::{self, BarrierSpec};
use mfbf::config::RunConfig;
use mfbf::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Barrier-function safety filtering and learning for two-vehicle
/// collision avoidance.
#[derive(Parser)]
#[command(name = "mfbf", version, about)]
struct Cli {
    /// TOML config file; omitted keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses all cores (overrides the config file).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output file (generate) or directory (other commands); overrides
    /// the config file's out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the initial nominal-only rollout dataset as CSV.
    Generate {
        /// Episode count; defaults to the config's initial_episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Fit the initial barrier model from a dataset CSV.
    Train {
        /// Dataset produced by `generate`.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run iterative safe-set expansion rounds from a starting barrier.
    Iterate {
        /// Starting barrier: straight | turn | ckpt=<path>.
        #[arg(long)]
        h0: String,
        /// Resume after this round index (requires --from).
        #[arg(long, requires = "from")]
        resume: Option<usize>,
        /// Checkpoint of the round named by --resume.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Compare collision rates across barrier variants on paired starts.
    Evaluate {
        /// Variant spec (repeatable): none | straight | turn |
        /// ckpt=<path> | mf=<value>,<delta>.
        #[arg(long = "variant", required = true)]
        variants: Vec<String>,
    },
    /// Export safe-set grids for the four standard headings.
    Grid {
        /// Barrier spec: straight | turn | ckpt=<path> | mf=<v>,<d>.
        #[arg(long)]
        barrier: String,
    },
    /// Run a named scenario episode and export its trajectory.
    Scenario {
        /// head_on | pass_left | pass_left_close.
        #[arg(long)]
        name: String,
        /// Separation (head_on) or lateral gap (pass_left), meters.
        #[arg(long)]
        separation: Option<f64>,
        /// Barrier spec; default none.
        #[arg(long, default_value = "none")]
        barrier: String,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;

    let out = PathBuf::from(&cfg.out_dir);
    pool.install(|| match &cli.command {
        Command::Generate { episodes } => {
            let path = if out.extension().is_some() {
                out.clone()
            } else {
                out.join("dataset.csv")
            };
            cli::cmd_generate(&cfg, &path, *episodes)
        }
        Command::Train { dataset } => cli::cmd_train(&cfg, dataset, &out),
        Command::Iterate { h0, resume, from } => {
            let spec = BarrierSpec::parse(h0)?;
            let resume = match (resume, from) {
                (Some(i), Some(path)) => Some((*i, path.as_path())),
                _ => None,
            };
            cli::cmd_iterate(&cfg, &spec, &out, resume)
        }
        Command::Evaluate { variants } => {
            let specs = variants
                .iter()
                .map(|s| BarrierSpec::parse(s))
                .collect::<Result<Vec<_>, _>>()?;
            cli::cmd_evaluate(&cfg, &specs, &out)
        }
        Command::Grid { barrier } => cli::cmd_grid(&cfg, &BarrierSpec::parse(barrier)?, &out),
        Command::Scenario {
            name,
            separation,
            barrier,
        } => cli::cmd_scenario(&cfg, name, *separation, &BarrierSpec::parse(barrier)?, &out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
