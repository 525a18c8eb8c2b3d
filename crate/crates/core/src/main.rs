use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use purets::cli::{self, CliError};
use purets::config::{RunConfig, OUT_DIR_ENV};

fn key_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .help("key = value settings file; flags override it")];
    args.extend(RunConfig::KEYS.iter().map(|&key| {
        Arg::new(key)
            .long(key.replace('_', "-"))
            .value_name("VALUE")
            .help(format!("same as `{key} = VALUE` in the config file"))
    }));
    args.push(
        Arg::new("set")
            .long("set")
            .value_name("KEY=VALUE")
            .action(ArgAction::Append)
            .help("set any config key"),
    );
    args
}

fn command() -> Command {
    let sub = |name: &'static str, about: &'static str| Command::new(name).about(about).args(key_args());
    Command::new("purets")
        .about("Pure linear-layer time-series forecasting")
        .version(env!("CARGO_PKG_VERSION"))
        .after_help(format!("Output goes to --out, else ${OUT_DIR_ENV}, else ./runs."))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands([
            sub("train", "Train a model and score it on the test split"),
            sub("eval", "Score a saved checkpoint on the test split"),
            sub("profile", "Parameter/MAC counts and latency across horizons"),
            sub("figure3", "Run the five-condition sine fitting study"),
            sub("bench", "Time inference for one model"),
        ])
}

fn resolve(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => RunConfig::from_file(Path::new(path))?,
        None => RunConfig::default(),
    };
    for &key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv}")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn run(name: &str, m: &ArgMatches) -> Result<String, CliError> {
    let cfg = resolve(m)?;
    match name {
        "train" => cli::cmd_train(&cfg),
        "eval" => cli::cmd_eval(&cfg),
        "profile" => cli::cmd_profile(&cfg).map(|rows| cli::format_profile(&rows)),
        "figure3" => cli::cmd_figure3(&cfg),
        "bench" => cli::cmd_bench(&cfg).map(|r| {
            format!(
                "{}  params {}  MACs {}  latency {:.4} ms ± {:.4} over {} runs (batch {}, {} threads)",
                r.shape_summary,
                r.parameter_count,
                r.mac_count,
                r.mean_latency * 1e3,
                r.latency_std * 1e3,
                r.samples.len(),
                r.batch,
                r.threads
            )
        }),
        _ => unreachable!("clap only accepts known subcommands"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = command().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
