//! `gradpred` command-line driver.
//!
//! Every subcommand resolves a flat settings table (defaults, then
//! `--config FILE`, then `--set key=value`, then per-key flags) and writes the
//! resolved table to `OUT/config.txt` next to its outputs.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use gradpred::{Error, Result};

use settings::{Key, Settings, ANALYZE, COMMON, COST, DATA, MODEL, SIMULATE, TRAIN};

const TRAIN_ONLY: &[Key] = &[
    Key {
        name: "algo",
        default: "predicted",
        help: "vanilla or predicted",
    },
    Key {
        name: "resume",
        default: "",
        help: "continue from a checkpoint file",
    },
];

fn tables(command: &str) -> &'static [&'static [Key]] {
    match command {
        "gen-data" => &[COMMON, DATA],
        "train" => &[COMMON, DATA, MODEL, TRAIN, COST, TRAIN_ONLY],
        "compare" => &[COMMON, DATA, MODEL, TRAIN, COST],
        "analyze" => &[COMMON, COST, ANALYZE],
        "simulate" => &[COMMON, SIMULATE],
        _ => unreachable!("unregistered command {command}"),
    }
}

fn keyed(name: &'static str, about: &'static str) -> Command {
    let mut cmd = Command::new(name)
        .about(about)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value settings file"),
        )
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("override one setting; repeatable"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .default_value("gradpred-out")
                .help("output directory"),
        );
    for k in tables(name).iter().flat_map(|t| t.iter()) {
        let help = if k.default.is_empty() {
            k.help.to_string()
        } else {
            format!("{} [default: {}]", k.help, k.default)
        };
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(k.name.replace('_', "-"))
                .value_name("VALUE")
                .help(help),
        );
    }
    cmd
}

fn cli() -> Command {
    Command::new("gradpred")
        .about("Gradient-prediction training, analysis and Monte Carlo checks")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(keyed("gen-data", "Generate a synthetic dataset as CSV"))
        .subcommand(keyed(
            "train",
            "Train with one algorithm; writes metrics and a checkpoint",
        ))
        .subcommand(keyed("compare", "Run both algorithms under an equal cost budget"))
        .subcommand(keyed("analyze", "Evaluate the cost/variance trade-off over a grid"))
        .subcommand(keyed(
            "simulate",
            "Monte Carlo check of the estimator's mean and variance",
        ))
}

fn resolve(name: &str, m: &ArgMatches) -> Result<commands::Run> {
    let mut settings = Settings::defaults(tables(name));
    if let Some(path) = m.get_one::<String>("config") {
        let path = PathBuf::from(path);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        settings.apply_file(&text, &path)?;
    }
    for assignment in m.get_many::<String>("set").into_iter().flatten() {
        settings.apply_assignment(assignment)?;
    }
    for k in tables(name).iter().flat_map(|t| t.iter()) {
        if let Some(v) = m.get_one::<String>(k.name) {
            settings.set(k.name, v)?;
        }
    }
    let out = PathBuf::from(m.get_one::<String>("out").expect("has default"));
    Ok(commands::Run { settings, out })
}

fn dispatch(name: &str, m: &ArgMatches) -> Result<()> {
    let run = resolve(name, m)?;
    match name {
        "gen-data" => commands::gen_data(&run),
        "train" => commands::train(&run),
        "compare" => commands::compare(&run),
        "analyze" => commands::analyze(&run),
        "simulate" => commands::simulate(&run),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error code={} message={message:?}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
