use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shortcut_stack::autodiff::Fault;
use shortcut_stack::gradcheck::GradcheckConfig;
use shortcut_stack_cli::commands::{self, Axis, CliError, DEFAULT_DEPTHS};
use shortcut_stack_cli::config::RunConfig;

const THREADS_VAR: &str = "SHORTCUT_STACK_THREADS";

#[derive(Parser)]
#[command(name = "shortcut-stack", version, about = "Deep stacked recurrent tagger with shortcut blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines; defaults apply to unset keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a tagger, writing a checkpoint and an epoch log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides `run.out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token accuracy of a checkpoint on a two-column file.
    Eval { checkpoint: PathBuf, data: PathBuf },
    /// Tag one whitespace-separated sentence per input line.
    Predict {
        checkpoint: PathBuf,
        /// Input file; standard input when absent.
        input: Option<PathBuf>,
    },
    /// Finite-difference check of every rule, gate and topology.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        /// Check at most this many entries of each parameter.
        #[arg(long)]
        max_entries: Option<usize>,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Train one model per value of an axis and tabulate accuracies.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Depths for the depth axis.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DEPTHS)]
        depths: Vec<usize>,
        /// Seeds averaged per row.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic train/dev/test files.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default config.
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn set_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failure(e.to_string()))
}

fn run(cli: Cli) -> Result<String, CliError> {
    set_threads()?;
    match cli.command {
        Command::Train { config, out } => {
            let mut c = config.load()?;
            if let Some(out) = out {
                c.out = out;
            }
            commands::cmd_train(&c)
        }
        Command::Eval { checkpoint, data } => commands::cmd_eval(&checkpoint, &data),
        Command::Predict { checkpoint, input } => {
            let text = match input {
                Some(path) => std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?,
                None => {
                    let mut s = String::new();
                    std::io::stdin()
                        .read_to_string(&mut s)
                        .map_err(|e| CliError::Failure(format!("stdin: {e}")))?;
                    s
                }
            };
            commands::cmd_predict(&checkpoint, &text)
        }
        Command::Gradcheck {
            seed,
            max_entries,
            corrupt_backward,
        } => {
            let mut c = GradcheckConfig {
                max_entries_per_param: max_entries,
                ..Default::default()
            };
            if let Some(seed) = seed {
                c.seed = seed;
            }
            if corrupt_backward {
                c.fault = Some(Fault::SigmoidBackward);
            }
            commands::cmd_gradcheck(&c)
        }
        Command::Sweep {
            config,
            axis,
            depths,
            seeds,
            out,
        } => {
            if seeds == 0 {
                return Err(CliError::Usage("--seeds must be at least 1".into()));
            }
            let c = config.load()?;
            let rows = commands::run_sweep(&c, axis, &depths, seeds)?;
            let table = commands::format_table(axis, &rows, seeds);
            if let Some(path) = out {
                write_file(&path, &table)?;
            }
            Ok(table)
        }
        Command::GenData { config, out } => {
            let mut c = config.load()?;
            if let Some(seed) = config.seed {
                c.synthetic.seed = seed;
            }
            commands::cmd_gen_data(&c, &out)
        }
        Command::InitConfig { out } => {
            let text = RunConfig::default().to_string();
            match out {
                Some(path) => {
                    write_file(&path, &text)?;
                    Ok(String::new())
                }
                None => Ok(text),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
