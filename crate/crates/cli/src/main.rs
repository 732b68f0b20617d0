mod commands;
mod config;
mod fitted;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or data: exit code 2.
    Input(String),
    /// A numerical procedure failed: exit code 3.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<aqr::Error> for CliError {
    fn from(e: aqr::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

type Keys = &'static [(&'static str, &'static str)];

const FIT_KEYS: Keys = &[
    ("input", "auction CSV"),
    ("I", "bidder count to fit"),
    ("h", "bandwidth, or `auto` for the plug-in rule"),
    ("s", "smoothness order"),
    ("kernel", "epanechnikov | triweight"),
    ("grid", "number of grid intervals on [0, 1]"),
    ("quad-nodes", "Gauss-Legendre nodes per window"),
];

const COMMANDS: &[(&str, &str, Keys)] = &[
    (
        "simulate",
        "simulate auctions from a named specification",
        &[
            ("spec", "uniform | trig | sim62 | additive1 | homog1"),
            ("L", "number of auctions"),
            ("I", "bidder count, or a comma list drawn uniformly"),
            ("seed", "random seed"),
            ("format", "first-price | ascending"),
            ("rationalize", "CRRA exponent whose bids the values rationalize"),
            ("covariates", "uniform | fixed:<x1>,<x2>,..."),
            ("oracle", "also write the hidden values to oracle.csv"),
        ],
    ),
    ("fit", "estimate bid and value quantile curves", &[]),
    (
        "recover",
        "value curve, cdf and pdf from a saved fit",
        &[
            ("fit", "fit.json from `aqr fit`"),
            ("x", "covariate point (default: sample mean)"),
            ("nu", "CRRA exponent"),
            ("rearrange", "sort the value curve"),
            ("points", "number of value points for the cdf and pdf"),
            ("gpv-input", "auction CSV for two-step pseudo-values"),
            ("gpv-I", "bidder count for pseudo-values"),
            ("gpv-bandwidth", "pseudo-value bid bandwidth"),
        ],
    ),
    (
        "revenue",
        "seller expected revenue and optimal reserve from a saved fit",
        &[
            ("fit", "fit.json from `aqr fit`"),
            ("x", "covariate point (default: sample mean)"),
            ("nu", "CRRA exponent"),
            ("rearrange", "sort the value curve first"),
            ("screening", "number of screening-level intervals"),
        ],
    ),
    (
        "test",
        "specification and exogeneity tests with bootstrap p-values",
        &[
            ("method", "liu-luo | rothe-wied"),
            ("h0", "liu-luo null: homogenized | format | entry"),
            ("ascending", "ascending auction CSV for the format null"),
            ("other", "other bidder count for the entry null"),
            ("B", "bootstrap replications"),
            ("seed", "bootstrap seed"),
            ("model-grid", "model cdf levels for rothe-wied"),
        ],
    ),
    (
        "bandwidth",
        "plug-in bandwidth from a polynomial pilot",
        &[("input", "auction CSV"), ("I", "bidder count"), ("s", "smoothness order"), ("kernel", "epanechnikov | triweight")],
    ),
    (
        "mc",
        "Monte Carlo experiments",
        &[
            ("experiment", "pver | raest"),
            ("R", "replications"),
            ("L", "auctions per sample"),
            ("I", "bidder count (pver)"),
            ("h", "comma list of bandwidths"),
            ("nu", "comma list of CRRA exponents (raest)"),
            ("first-price", "include the first-price CRRA estimate (raest)"),
            ("range", "quantile range `lo,hi` of the CRRA Riemann sums"),
            ("seed", "random seed"),
            ("grid", "number of grid intervals on [0, 1]"),
            ("quad-nodes", "Gauss-Legendre nodes per window"),
        ],
    ),
    (
        "objective-slice",
        "objective along b + t(1, ..., 1) at one level",
        &[
            ("alpha", "quantile level"),
            ("start", "fit | zero"),
            ("span", "largest |t|"),
            ("points", "number of steps"),
        ],
    ),
];

const FIT_EXTRA: Keys = &[
    ("method", "aqr | asqr | homogenized | elliptical | ascending"),
    ("sieve", "regressogram | bspline"),
    ("sieve-h", "sieve bandwidth"),
    ("sieve-order", "interaction order"),
    ("sieve-m", "B-spline order"),
    ("screen", "drop sieve functions with mass below this fraction"),
    ("x", "covariate point for the curves (default: sample mean)"),
    ("nu", "CRRA exponent"),
    ("rearrange", "sort the value curve"),
];

const TEST_EXTRA: Keys = &[("input", "auction CSV"), ("I", "bidder count"), ("h", "bandwidth"), ("s", "smoothness order"), ("kernel", "epanechnikov | triweight"), ("grid", "number of grid intervals"), ("quad-nodes", "Gauss-Legendre nodes per window")];

fn keys_for(name: &str, base: Keys) -> Vec<(&'static str, &'static str)> {
    let mut keys = base.to_vec();
    match name {
        "fit" => {
            keys.extend_from_slice(FIT_KEYS);
            keys.extend_from_slice(FIT_EXTRA);
        }
        "test" => keys.extend_from_slice(TEST_EXTRA),
        "objective-slice" => keys.extend_from_slice(FIT_KEYS),
        _ => {}
    }
    keys
}

fn cli() -> Command {
    let mut cmd = Command::new("aqr")
        .about("Augmented quantile regression for first-price auctions")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(Arg::new("config").long("config").global(true).help("key = value settings file; flags override it"))
        .arg(Arg::new("threads").long("threads").global(true).value_parser(clap::value_parser!(usize)).help("worker threads"))
        .arg(Arg::new("out").long("out").global(true).default_value(".").help("output directory"));
    for &(name, about, base) in COMMANDS {
        let mut sub = Command::new(name).about(about);
        for (key, help) in keys_for(name, base) {
            sub = sub.arg(
                Arg::new(key)
                    .long(key)
                    .help(help)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .num_args(0..=1)
                    .default_missing_value("true")
                    .allow_negative_numbers(true),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn flags(name: &str, m: &ArgMatches) -> BTreeMap<String, String> {
    let base = COMMANDS.iter().find(|c| c.0 == name).map_or(&[][..], |c| c.2);
    keys_for(name, base)
        .into_iter()
        .filter_map(|(k, _)| m.get_one::<String>(k).map(|v| (k.replace('-', "_"), v.clone())))
        .collect()
}

fn run(matches: &ArgMatches) -> Result<(), CliError> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    if let Some(&n) = sub.get_one::<usize>("threads") {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("threads: {e}")))?;
    }
    let file = sub.get_one::<String>("config").map(PathBuf::from);
    let cfg = RunConfig::load(file.as_deref(), flags(name, sub))?;
    let out = PathBuf::from(sub.get_one::<String>("out").expect("defaulted"));
    let ctx = commands::Ctx { cfg, out };
    match name {
        "simulate" => commands::simulate(&ctx),
        "fit" => commands::fit(&ctx),
        "recover" => commands::recover(&ctx),
        "revenue" => commands::revenue(&ctx),
        "test" => commands::test(&ctx),
        "bandwidth" => commands::bandwidth(&ctx),
        "mc" => commands::mc(&ctx),
        "objective-slice" => commands::objective_slice(&ctx),
        other => Err(CliError::Input(format!("unknown command {other}"))),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aqr: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_table_is_consistent() {
        cli().debug_assert();
        for &(name, _, base) in COMMANDS {
            let keys = keys_for(name, base);
            let mut seen: Vec<_> = keys.iter().map(|k| k.0).collect();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), keys.len(), "duplicate key in {name}");
        }
    }

    #[test]
    fn flags_use_underscored_keys() {
        let m = cli().try_get_matches_from(["aqr", "fit", "--input", "a.csv", "--quad-nodes", "16", "--rearrange"]).unwrap();
        let (name, sub) = m.subcommand().unwrap();
        let f = flags(name, sub);
        assert_eq!(f["quad_nodes"], "16");
        assert_eq!(f["rearrange"], "true");
        assert_eq!(f["input"], "a.csv");
    }
}
