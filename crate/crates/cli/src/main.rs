use clap::{Args, CommandFactory, Parser, Subcommand};
use pilotwave_cli::experiments::{self, REGISTRY};
use pilotwave_cli::{CliError, ExperimentConfig, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pilotwave",
    version,
    about = "Run pilot-wave trajectory experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its outputs and manifest.
    Run(Target),
    /// Check a configuration and print derived quantities without running.
    Validate(Target),
    /// List registered experiments.
    List,
}

#[derive(Args)]
struct Target {
    /// Experiment name; may instead come from the config file.
    #[arg(allow_hyphen_values = true)]
    experiment: Option<String>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment parameters as `--key value`, overriding the config file.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "FLAGS"
    )]
    params: Vec<String>,
}

impl Target {
    fn overrides(self) -> Overrides {
        // a leading flag lands in `experiment` when no name was given
        let (experiment, mut flags) = match self.experiment {
            Some(e) if e.starts_with("--") => (None, vec![e]),
            other => (other, Vec::new()),
        };
        flags.extend(self.params);
        Overrides {
            experiment,
            config: self.config,
            seed: self.seed,
            out: self.out,
            flags,
        }
    }

    fn is_empty(&self) -> bool {
        self.experiment.is_none() && self.config.is_none()
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json_line());
    ExitCode::from(e.exit_code() as u8)
}

fn usage_error(cmd: &str) -> ExitCode {
    let mut c = Cli::command();
    c.build();
    let sub = c.find_subcommand_mut(cmd).expect("registered subcommand");
    eprintln!("{}", sub.render_usage());
    fail(&CliError::Config(
        "no experiment or config file given".into(),
    ))
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PILOTWAVE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "PILOTWAVE_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        return fail(&e);
    }
    match cli.command {
        None => {
            eprintln!("{}", Cli::command().render_help());
            ExitCode::from(2)
        }
        Some(Command::List) => {
            for (name, about) in REGISTRY {
                println!("{name:<16} {about}");
            }
            ExitCode::SUCCESS
        }
        Some(Command::Validate(t)) => {
            if t.is_empty() {
                return usage_error("validate");
            }
            let cfg = match ExperimentConfig::resolve(&t.overrides()) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            let v = experiments::validate(&cfg);
            println!(
                "{}",
                serde_json::to_string_pretty(&experiments::validation_report(&cfg, &v))
                    .expect("reports serialize")
            );
            match v.into_result() {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => ExitCode::from(e.exit_code() as u8),
            }
        }
        Some(Command::Run(t)) => {
            if t.is_empty() {
                return usage_error("run");
            }
            let cfg = match ExperimentConfig::resolve(&t.overrides()) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            match experiments::run(&cfg) {
                Ok(m) => {
                    log::info!(
                        "wrote {} files to {}",
                        m.files.len(),
                        cfg.output_dir.display()
                    );
                    println!(
                        "{}",
                        serde_json::to_string(&m.summary).expect("summaries serialize")
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
