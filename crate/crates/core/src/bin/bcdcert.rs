use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bcdcert::cli::{cmd_check, cmd_report, cmd_run, OutputFormat, RunConfigFile, EXIT_ERROR};
use bcdcert::problems::{ProblemSpec, FAMILIES};

#[derive(Parser)]
#[command(
    name = "bcdcert",
    version,
    about = "Certified two-block coordinate descent"
)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver from a config file and write trace + summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Single run with this problem and start seed, replacing any `seeds` list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path prefix.
        #[arg(long)]
        out: Option<String>,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
    },
    /// Audit a problem's oracles: gradients, block minimizers, Lipschitz constant.
    Check {
        /// Config file whose [problem] section is checked.
        #[arg(long, conflicts_with = "family")]
        config: Option<PathBuf>,
        /// Check a bundled family with default parameters.
        #[arg(long)]
        family: Option<String>,
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Seed for the instance and the sample points.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-verify a trace CSV against its summary.
    Report { trace: PathBuf },
}

fn family_spec(name: &str) -> Result<ProblemSpec, String> {
    let mut table = toml::Table::new();
    table.insert("family".into(), toml::Value::String(name.into()));
    ProblemSpec::from_table(&table).map_err(|e| format!("{e} (known: {})", FAMILIES.join(", ")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let stderr = io::stderr();
    let code = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            format,
        } => match RunConfigFile::load(&config) {
            Ok(mut cfg) => {
                if let Some(seed) = seed {
                    cfg = cfg.with_seed(seed);
                    cfg.seeds = None;
                }
                if let Some(out) = out {
                    cfg.output = out;
                }
                if let Some(format) = format {
                    cfg.format = format;
                }
                cmd_run(&cfg, cli.quiet, &mut stderr.lock())
            }
            Err(e) => {
                let _ = writeln!(stderr.lock(), "error: {e}");
                EXIT_ERROR
            }
        },
        Command::Check {
            config,
            family,
            points,
            seed,
        } => {
            let spec = match (config, family) {
                (Some(path), _) => RunConfigFile::load(&path)
                    .map(|c| c.problem)
                    .map_err(|e| e.to_string()),
                (None, Some(f)) => family_spec(&f),
                (None, None) => Err("check needs --config or --family".to_string()),
            };
            match spec {
                Ok(spec) => {
                    let seed = seed.unwrap_or(spec.seed());
                    cmd_check(&spec.with_seed(seed), points, seed, &mut stdout.lock())
                }
                Err(e) => {
                    let _ = writeln!(stderr.lock(), "error: {e}");
                    EXIT_ERROR
                }
            }
        }
        Command::Report { trace } => cmd_report(&trace, &mut stdout.lock()),
    };
    ExitCode::from(code)
}
