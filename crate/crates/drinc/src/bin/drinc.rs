use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use drinc::cli::{self, CliError};

#[derive(Parser)]
#[command(
    name = "drinc",
    version,
    about = "Distributionally robust controller synthesis from disturbance samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config field, e.g. --set epsilon=0.05 or --set sweep.radii=[0.02].
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one design and write result and controller files.
    Synthesize(ConfigArgs),
    /// Roll a saved controller out on the training distribution.
    Simulate {
        #[command(flatten)]
        args: ConfigArgs,
        /// Controller file written by synthesize.
        #[arg(long)]
        design: PathBuf,
    },
    /// Compare methods across test distributions and write report + CSV.
    Benchmark(ConfigArgs),
    /// Run the self-check oracle suites.
    Validate {
        /// fast or full.
        #[arg(long, default_value = "fast")]
        level: String,
        /// Optional controller file to cross-check.
        #[arg(long)]
        controller: Option<PathBuf>,
    },
}

fn main() {
    let code = match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.report_json());
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Synthesize(args) => {
            let config = cli::load_config(&args.config, &args.set, args.seed)?;
            let s = cli::cmd_synthesize(&config, &args.out)?;
            println!("method      {}", s.method);
            println!("objective   {:.6}", s.objective);
            println!("lambda      {:.6}", s.lambda);
            println!("tight       {} (margin {:+.3e})", s.tight, s.tightness_margin);
            println!("result      {}", s.result_path.display());
            println!("controller  {}", s.controller_path.display());
            Ok(0)
        }
        Command::Simulate { args, design } => {
            let config = cli::load_config(&args.config, &args.set, args.seed)?;
            let s = cli::cmd_simulate(&config, &design, &args.out)?;
            println!("J_bar    {:.6}", s.j_bar);
            println!("V_bar    {:.6}", s.v_bar);
            println!("rollouts {} over horizon {}", s.rollouts, s.t_bar);
            println!("metrics  {}", s.metrics_path.display());
            Ok(0)
        }
        Command::Benchmark(args) => {
            let config = cli::load_config(&args.config, &args.set, args.seed)?;
            let s = cli::cmd_benchmark(&config, &args.out)?;
            println!("rows    {}", s.rows);
            println!("J_bar   {:.6}", s.j_bar);
            println!("V_bar   {:.6}", s.v_bar);
            println!("report  {}", s.report_path.display());
            println!("csv     {}", s.csv_path.display());
            Ok(0)
        }
        Command::Validate { level, controller } => {
            let level: cli::ValidateLevel = level.parse()?;
            let checks = cli::cmd_validate(level, controller.as_deref());
            print!("{}", cli::render_checks(&checks));
            match cli::validation_failure(&checks) {
                Some(e) => {
                    eprintln!("{}", e.report_json());
                    Ok(1)
                }
                None => Ok(0),
            }
        }
    }
}
