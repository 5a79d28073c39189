//! Simulate a joint response/RT dataset from a configurable design and
//! write it to disk in the toolkit's CSV formats.
//!
//!     cargo run --release --example simulate_dataset

use lnirt::io::{run_command, Command, RunConfig, Settings};

fn main() -> Result<(), lnirt::Error> {
    let settings = Settings {
        output_dir: "lnirt-out/simulated".into(),
        design: lnirt::io::DesignConfig {
            n_persons: 200,
            n_items: 12,
            missing_rate: 0.05,
            seed: 7,
            ..Default::default()
        },
        ..Default::default()
    };

    run_command(&RunConfig {
        command: Command::Simulate,
        settings,
    })?;

    println!("files: responses.csv, rts.csv (seconds), qmatrix.csv, truth.json");
    Ok(())
}
