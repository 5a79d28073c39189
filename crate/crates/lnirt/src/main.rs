//! Thin command-line front end: argument parsing and config overrides only;
//! all work happens in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lnirt::io::{run_command, Command, RunConfig, Settings};
use lnirt::model::ModelStructure;

#[derive(Parser)]
#[command(
    name = "lnirt",
    about = "Joint hierarchical models of response accuracy and response times",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset from a design and write responses.csv / rts.csv /
    /// truth.json
    Simulate(Opts),
    /// Fit one structure by MCMC and write draws, summary.json, and a
    /// convergence table
    Fit(Opts),
    /// Fit UA_US, MA_US, and MA_MS on the same data and write a comparison
    /// table
    Compare(Opts),
    /// Run a simulate -> fit recovery study and write bias/RMSE/correlation
    /// per parameter family
    Recover(Opts),
}

#[derive(Args)]
struct Opts {
    /// JSON configuration file; omitted keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default lnirt-out)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Ability/speed structure: UA_US, MA_US, or MA_MS
    #[arg(long, value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<ModelStructure>()))]
    structure: Option<ModelStructure>,
    /// Seed for both the sampler and the simulation design
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Response CSV (fit/compare)
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Response-time CSV in seconds (fit/compare)
    #[arg(long)]
    rts: Option<PathBuf>,
    /// Q-matrix CSV
    #[arg(long)]
    qmatrix: Option<PathBuf>,
    /// Persons to simulate (simulate/recover)
    #[arg(long)]
    n_persons: Option<usize>,
    /// RT missingness rate in [0, 1) (simulate/recover)
    #[arg(long)]
    missing_rate: Option<f64>,
    /// Replication count (recover)
    #[arg(long)]
    replications: Option<usize>,
    /// Base seed of the recovery harness (recover)
    #[arg(long)]
    base_seed: Option<u64>,
}

impl Opts {
    fn into_settings(self) -> Result<Settings, lnirt::Error> {
        let mut settings = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        if let Some(output) = self.output {
            settings.output_dir = output;
        }
        if let Some(structure) = self.structure {
            settings.structure = structure;
        }
        if let Some(seed) = self.seed {
            settings.sampler.seed = seed;
            settings.design.seed = seed;
        }
        if let Some(chains) = self.chains {
            settings.sampler.n_chains = chains;
        }
        if let Some(iterations) = self.iterations {
            settings.sampler.n_iterations = iterations;
        }
        if let Some(burnin) = self.burnin {
            settings.sampler.n_burnin = burnin;
        }
        if let Some(thin) = self.thin {
            settings.sampler.thin = thin;
        }
        if let Some(responses) = self.responses {
            settings.data.responses = Some(responses);
        }
        if let Some(rts) = self.rts {
            settings.data.rts = Some(rts);
        }
        if let Some(qmatrix) = self.qmatrix {
            settings.data.qmatrix = Some(qmatrix.clone());
            settings.design.qmatrix = Some(qmatrix);
        }
        if let Some(n_persons) = self.n_persons {
            settings.design.n_persons = n_persons;
        }
        if let Some(rate) = self.missing_rate {
            settings.design.missing_rate = rate;
        }
        if let Some(replications) = self.replications {
            settings.replications = replications;
        }
        if let Some(base_seed) = self.base_seed {
            settings.base_seed = base_seed;
        }
        Ok(settings)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, opts) = match cli.command {
        Cmd::Simulate(opts) => (Command::Simulate, opts),
        Cmd::Fit(opts) => (Command::Fit, opts),
        Cmd::Compare(opts) => (Command::Compare, opts),
        Cmd::Recover(opts) => (Command::Recover, opts),
    };
    let settings = match opts.into_settings() {
        Ok(settings) => settings,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match run_command(&RunConfig { command, settings }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
