use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use narrative_core::pipeline::{run_stage, PipelineConfig, PipelineError, Stage, VERSION};

const SWITCHES: [&str; 2] = ["emit-centroids", "keep-pruned"];

fn value(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("VALUE").help(help)
}

fn switch(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).action(ArgAction::SetTrue).help(help)
}

fn ingest_args() -> Vec<Arg> {
    vec![
        value("tuples", "tuple JSON-lines file"),
        value("min-count", "mention frequency floor [default: 50]"),
    ]
}

fn emg_args() -> Vec<Arg> {
    vec![
        value("gamma", "incompatibility threshold [default: 3]"),
        value("alpha-percentile", "score percentile used as alpha [default: 75]"),
        value("beta", "successive score drop stop factor [default: 2]"),
        value("alpha", "explicit alpha, overriding the percentile"),
    ]
}

fn iarc_args() -> Vec<Arg> {
    vec![
        value("embeddings", "embedding file or http(s) service URL"),
        value("min-dispersion", "cluster validity threshold [default: 0.8]"),
        value("k-max", "largest k tried by the elbow search [default: 8]"),
        value("seed", "random seed [default: 7]"),
        switch("emit-centroids", "include cluster centroids in the output"),
    ]
}

fn graph_args() -> Vec<Arg> {
    vec![
        value("ground-truth", "ground-truth network JSON"),
        value("verified-min", "minimum instances for verifiable edges [default: 5]"),
        value("unverified-min", "minimum instances for other edges [default: 10]"),
        value("markers", "comma-separated preposition markers [default: in,of,by,from,about]"),
        switch("keep-pruned", "keep edges below threshold, flagged as pruned"),
    ]
}

fn eval_args() -> Vec<Arg> {
    vec![
        value("sim-min", "label similarity threshold [default: 0.8]"),
        value("dispersion-min", "cluster dispersion threshold [default: 0.8]"),
    ]
}

fn cli() -> Command {
    let out = || value("out", "output path");
    Command::new("narrative")
        .version(VERSION)
        .about("Consensus actant-relationship networks from relation tuples")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(value("config", "flat key = value config file; flags take precedence").global(true))
        .subcommand(
            Command::new("ingest")
                .about("Filter tuples and build the relation index")
                .args(ingest_args())
                .arg(out()),
        )
        .subcommand(
            Command::new("emg")
                .about("Group entity mentions into actants")
                .arg(value("index", "relation index JSON"))
                .args(emg_args())
                .arg(out()),
        )
        .subcommand(
            Command::new("iarc")
                .about("Cluster relation phrases between actant groups")
                .arg(value("index", "relation index JSON"))
                .arg(value("groups", "groups JSON"))
                .args(iarc_args())
                .arg(out()),
        )
        .subcommand(
            Command::new("graph")
                .about("Assemble, threshold and export the network")
                .arg(value("groups", "groups JSON"))
                .arg(value("clusters", "clusters JSON"))
                .args(graph_args())
                .arg(value("format", "dot or json [default: json]"))
                .arg(out()),
        )
        .subcommand(
            Command::new("eval")
                .about("Score clusters against a ground-truth network")
                .arg(value("clusters", "clusters JSON"))
                .arg(value("groups", "groups JSON"))
                .arg(value("ground-truth", "ground-truth network JSON"))
                .arg(value("embeddings", "embedding file or http(s) service URL"))
                .args(eval_args())
                .arg(value("report", "report output path")),
        )
        .subcommand(
            Command::new("synth")
                .about("Generate a synthetic corpus from a hidden narrative model")
                .arg(value("model", "hidden narrative JSON"))
                .arg(value("n-reviews", "number of reviews [default: 3000]"))
                .arg(value("noise", "distractor substitution rate [default: 0.05]"))
                .arg(value("seed", "random seed [default: 7]"))
                .arg(value("min-tuples-per-review", "[default: 3]"))
                .arg(value("max-tuples-per-review", "[default: 8]"))
                .arg(value("out-tuples", "tuple JSON-lines output"))
                .arg(value("out-embeddings", "embedding JSON-lines output"))
                .arg(value("out-answer", "answer key output"))
                .arg(value("out-ground-truth", "optional ground-truth network output")),
        )
        .subcommand(
            Command::new("run-all")
                .about("ingest, emg, iarc, graph and eval into one directory")
                .args(ingest_args())
                .args(emg_args())
                .args(iarc_args())
                .args(graph_args())
                .args(eval_args())
                .arg(value("out-dir", "run directory")),
        )
}

fn stage_of(name: &str) -> Stage {
    match name {
        "ingest" => Stage::Ingest,
        "emg" => Stage::Emg,
        "iarc" => Stage::Iarc,
        "graph" => Stage::Graph,
        "eval" => Stage::Eval,
        "synth" => Stage::Synth,
        _ => Stage::RunAll,
    }
}

/// Defaults, then the config file, then explicit flags.
fn merged_config(matches: &ArgMatches) -> Result<PipelineConfig, PipelineError> {
    let mut config = PipelineConfig::default();
    if let Some(path) = matches.get_one::<String>("config") {
        config.apply_file(Path::new(path))?;
    }
    for id in matches.ids() {
        let id = id.as_str();
        if id == "config" {
            continue;
        }
        if SWITCHES.contains(&id) {
            if matches.get_flag(id) {
                config.set(id, "true")?;
            }
        } else if let Some(v) = matches.get_one::<String>(id) {
            config.set(id, v)?;
        }
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = merged_config(sub).and_then(|config| run_stage(stage_of(name), &config));
    match result {
        Ok(manifest) => {
            log::info!("{} done, config hash {}", manifest.stage, manifest.config_hash);
            ExitCode::SUCCESS
        }
        Err(e @ PipelineError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        cli().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "gamma = 4\nbeta = 3\n").unwrap();
        let m = cli()
            .try_get_matches_from(["narrative", "emg", "--config", cfg.to_str().unwrap(), "--gamma", "5"])
            .unwrap();
        let c = merged_config(m.subcommand().unwrap().1).unwrap();
        assert_eq!((c.gamma, c.beta), (5, 3.0));
    }
}
