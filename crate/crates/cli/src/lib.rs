//! Command-line front end of `lmebn`: file formats, configuration and the
//! simulation grid runner.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod modelfile;
pub mod table;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Learn(a) => {
            let text = commands::learn(a)?;
            commands::write_stdout(&text);
            Ok(())
        }
        Command::Evaluate(a) => commands::evaluate_cmd(a).map(|_| ()),
        Command::Experiment(a) => commands::experiment_cmd(a),
        Command::Predict(a) => commands::predict(a),
    }
}
