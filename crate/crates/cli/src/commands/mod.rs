mod calibrate;
mod monitor;
mod simulate;
mod sweep;

use std::process::ExitCode;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{Command, GlobalArgs};

pub use sweep::SweepKindArg;

/// Loads the merged configuration with `--seed` applied to every seed.
pub fn load_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(&global.configs)?;
    if let Some(seed) = global.seed {
        if let Some(stream) = config.stream.as_mut() {
            stream.seed = seed;
        }
        if let Some(sweep) = config.sweep.as_mut() {
            sweep.grid.master_seed = seed;
            if let Some(spec) = sweep.risk_curve.as_mut() {
                spec.master_seed = seed;
            }
        }
    }
    Ok(config)
}

pub fn dispatch(global: &GlobalArgs, command: &Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Simulate => simulate::run(global, &load_config(global)?),
        Command::Monitor(args) => monitor::run(global, args),
        Command::Sweep { kind } => sweep::run(global, &load_config(global)?, *kind),
        Command::Calibrate { input } => calibrate::run(global, input),
        Command::Tree { rate } => {
            let config = load_config(global)?;
            let monitor = shiftrisk::monitor::Monitor::new(config.monitor_config()?)?;
            let tree = monitor.tree_at(*rate)?;
            let mut text = format!("{tree}\n");
            text.push_str(&format!(
                "expected_accuracy={}\n",
                crate::output::round_sig(
                    tree.expected_accuracy()
                        .map_err(|e| CliError::Config(e.to_string()))?
                )
            ));
            if let Some(costs) = &monitor.config().costs {
                let risk = tree
                    .expected_risk(costs)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                text.push_str(&format!("expected_risk={}\n", crate::output::round_sig(risk)));
            }
            emit(global, &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Config => {
            emit(global, &load_config(global)?.to_toml())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Writes `text` to `--output`, or standard output when it is unset.
pub fn emit(global: &GlobalArgs, text: &str) -> Result<(), CliError> {
    match &global.output {
        Some(path) => crate::output::write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
