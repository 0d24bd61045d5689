mod cli;
mod commands;
mod config;
mod images;
mod manifest;

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use clap::{ArgMatches, CommandFactory, FromArgMatches};

use cli::{Cli, Command};
use manifest::Run;

/// Every option of the subcommand with a value, keyed by flag name.
fn resolved_config(cmd: &clap::Command, matches: &ArgMatches) -> BTreeMap<String, String> {
    let Some((name, sub)) = matches.subcommand() else {
        return BTreeMap::new();
    };
    let Some(def) = cmd.find_subcommand(name) else {
        return BTreeMap::new();
    };
    def.get_arguments()
        .filter(|a| !a.is_global_set())
        .filter_map(|a| {
            let long = a.get_long()?;
            if config::GLOBAL_KEYS.contains(&long) {
                return None;
            }
            let raw = sub.get_raw(a.get_id().as_str())?;
            let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            Some((long.to_string(), values.join(",")))
        })
        .collect()
}

fn main() -> std::process::ExitCode {
    match run() {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            // The cause chain only; backtraces are for developers.
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let args = config::merge_config_args(std::env::args_os().collect())?;
    let mut cmd = Cli::command().args_override_self(true);
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    let matches = cmd.clone().get_matches_from(args);
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());

    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let name = matches.subcommand_name().unwrap_or_default().to_string();
    let mut run = Run::new(&name, cli.seed, resolved_config(&cmd, &matches), cli.manifest.clone());
    let seed = cli.seed;
    match &cli.command {
        Command::Unprocess(a) => commands::unprocess(a, seed, &mut run),
        Command::AddNoise(a) => commands::add_noise_cmd(a, seed, &mut run),
        Command::CalibrateFlatfield(a) => commands::calibrate_flatfield(a, seed, &mut run),
        Command::EstimateNlf(a) => commands::estimate_nlf(a, &mut run),
        Command::FitNlf(a) => commands::fit_nlf(a, &mut run),
        Command::MakeSynthetic(a) => commands::make_synthetic_cmd(a, seed, &mut run),
        Command::Flow(a) => commands::flow(a, &mut run),
        Command::Warp(a) => commands::warp(a, &mut run),
        Command::Demosaic(a) => commands::demosaic_cmd(a, &mut run),
        Command::Mosaic(a) => commands::mosaic_cmd(a, &mut run),
        Command::Mf2fLoss(a) => commands::mf2f_loss(a, seed, &mut run),
        Command::BsLoss(a) => commands::bs_loss(a, seed, &mut run),
        Command::ProbeRf(a) => commands::probe_rf(a, seed, &mut run),
        Command::Eval(a) => commands::eval(a, &mut run),
        Command::Subsample(a) => commands::subsample(a, &mut run),
        Command::AvgGt(a) => commands::avg_gt(a, &mut run),
    }
    .with_context(|| format!("{name} failed"))?;
    if let Some(path) = run.finish()? {
        eprintln!("manifest: {}", path.display());
    }
    Ok(())
}
