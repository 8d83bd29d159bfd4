//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Arg, ArgMatches, Command};
use textcnn::autodiff::OpKind;

use crate::commands::{cmd_eval, cmd_gradcheck, cmd_inspect, cmd_tokenize, cmd_train};
use crate::config::{load_config, KEYS};

fn key_args() -> Vec<Arg> {
    KEYS.iter()
        .map(|k| {
            Arg::new(k.name)
                .long(k.flag)
                .value_name(k.value)
                .help(k.help)
        })
        .collect()
}

fn subcommand(name: &'static str, about: &'static str) -> Command {
    Command::new(name)
        .about(about)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("key = value config file"),
        )
        .args(key_args())
}

pub fn command() -> Command {
    Command::new("textcnn")
        .about("Train, evaluate and inspect character- and word-level CNN text classifiers")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand(
            "train",
            "Train a model; writes metrics CSV, checkpoint and vocabulary",
        ))
        .subcommand(subcommand(
            "eval",
            "Evaluate a checkpoint on a test CSV; writes confusion.csv",
        ))
        .subcommand(subcommand(
            "inspect",
            "Print per-layer shapes and parameter counts",
        ))
        .subcommand(
            subcommand(
                "gradcheck",
                "Compare analytic and finite-difference gradients of every op and model",
            )
            .arg(
                Arg::new("inject_fault")
                    .long("inject-fault")
                    .value_name("OP")
                    .hide(true),
            ),
        )
        .subcommand(
            subcommand("tokenize", "Show the encoding of a text").arg(
                Arg::new("text")
                    .required(true)
                    .allow_hyphen_values(true)
                    .help("text to encode"),
            ),
        )
}

fn flags(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|k| {
            m.get_one::<String>(k.name)
                .map(|v| (k.name.to_string(), v.clone()))
        })
        .collect()
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> Result<i32>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let config_path = sub.get_one::<String>("config").map(PathBuf::from);
    let cfg = load_config(config_path.as_deref(), &flags(sub))?;
    let code = match name {
        "train" => cmd_train(&cfg, out).map(|_| 0)?,
        "eval" => cmd_eval(&cfg, out).map(|_| 0)?,
        "inspect" => cmd_inspect(&cfg, out).map(|_| 0)?,
        "gradcheck" => {
            let fault = sub
                .get_one::<String>("inject_fault")
                .map(|s| s.parse::<OpKind>())
                .transpose()?;
            if cmd_gradcheck(&cfg, fault, out)? {
                0
            } else {
                1
            }
        }
        "tokenize" => {
            let text = sub.get_one::<String>("text").expect("required");
            cmd_tokenize(&cfg, text, out).map(|_| 0)?
        }
        _ => unreachable!("unknown subcommand {name}"),
    };
    Ok(code)
}
