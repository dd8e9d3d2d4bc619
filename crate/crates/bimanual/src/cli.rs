//! Command-line front end: train, eval, plot, and inspect-spaces.
//!
//! Exit statuses: 0 on success, 2 for a missing config file, 1 for
//! everything else. The output root comes from --out, else the
//! BIMANUAL_OUT environment variable, else `runs/`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{
    content_hash, load_config, unique_run_dir, ConfigError, Pipeline, RunConfig, RunManifest,
};
use crate::controller::ControllerConfig;
use crate::env::HandModel;
use crate::plot::{plot_success_curves, PlotError};
use crate::rl::{Checkpoint, CheckpointError};
use crate::spaces::{space_dims, ObsFlags, PolicyVariant};
use crate::trainer::{
    build_handoff, eval_seed, evaluate, evaluate_two_phase, split_budget, train_phase,
    train_staged_interaction, EvalReport, PhaseMode, TrainError, TrainOutcome, TwoPhasePolicies,
};

pub const OUT_ENV_VAR: &str = "BIMANUAL_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_status(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Missing(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "bimanual",
    about = "Train and evaluate bimanual manipulation policies",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a training config and write artifacts under the output root
    Train {
        /// TOML run config
        config: PathBuf,
        /// Override the config's seed(s) with a single seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output root (defaults to $BIMANUAL_OUT, then runs/)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint deterministically and print the report
    Eval {
        /// TOML run config the checkpoint was trained with
        config: PathBuf,
        /// Policy checkpoint (the interaction policy for staged evals)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grasp-policy checkpoint; runs the staged grasp-then-interact
        /// evaluation on acquisition episodes
        #[arg(long)]
        grasp_checkpoint: Option<PathBuf>,
        /// Override the config's eval_episodes
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the config's seed (evaluation derives its env seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render success-rate curves from metrics CSVs into an SVG
    Plot {
        /// metrics.csv paths, each optionally prefixed "label=": files
        /// sharing a label become one mean line with a std band. Without a
        /// prefix the label is the run directory name.
        #[arg(required = true)]
        metrics: Vec<String>,
        /// Output SVG path
        #[arg(long, short, default_value = "curves.svg")]
        out: PathBuf,
    },
    /// Print observation/action dimension tables for the built-in hands
    InspectSpaces,
}

/// Entry point behind the binary; returns the process exit status.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train { config, seed, out } => run_train(
            &config,
            &Overrides {
                seed,
                out_root: out,
            },
        ),
        Cmd::Eval {
            config,
            checkpoint,
            grasp_checkpoint,
            episodes,
            seed,
        } => run_eval(&config, &checkpoint, grasp_checkpoint.as_deref(), episodes, seed),
        Cmd::Plot { metrics, out } => run_plot(&metrics, &out),
        Cmd::InspectSpaces => {
            print!("{}", dimension_tables());
            0
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_root: Option<PathBuf>,
}

fn output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn run_train(config_path: &Path, ov: &Overrides) -> i32 {
    match train_cmd(config_path, ov) {
        Ok(dir) => {
            println!("run complete: {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_status()
        }
    }
}

pub fn run_eval(
    config_path: &Path,
    checkpoint: &Path,
    grasp_checkpoint: Option<&Path>,
    episodes: Option<usize>,
    seed: Option<u64>,
) -> i32 {
    match eval_cmd(config_path, checkpoint, grasp_checkpoint, episodes, seed) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_status()
        }
    }
}

pub fn run_plot(metrics: &[String], out: &Path) -> i32 {
    match plot_cmd(metrics, out) {
        Ok(()) => {
            println!("wrote {}", out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_status()
        }
    }
}

/// Runs a config end to end; returns the run directory.
fn train_cmd(config_path: &Path, ov: &Overrides) -> Result<PathBuf, CliError> {
    let (mut cfg, bytes) = load_config(config_path)?;
    let seed_overridden = ov.seed.is_some();
    if let Some(s) = ov.seed {
        cfg.train.seed = s;
        cfg.seeds.clear();
    }
    cfg.validate()?;
    let seeds = if cfg.seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        cfg.seeds.clone()
    };

    let root = output_root(ov.out_root.clone());
    let hash = content_hash(&bytes);
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let (run_id, dir) = unique_run_dir(&root, &format!("{stem}-{}", &hash[..8]))?;
    fs::write(dir.join("config.toml"), &bytes)?;

    let multi = seeds.len() > 1;
    let prefix = if multi { "seed_{seed}/" } else { "" };
    let mut layout = BTreeMap::new();
    layout.insert("config".to_string(), "config.toml".to_string());
    layout.insert("manifest".to_string(), "manifest.json".to_string());
    match cfg.pipeline {
        Pipeline::Single => {
            layout.insert("metrics".to_string(), format!("{prefix}metrics.csv"));
            layout.insert("final_checkpoint".to_string(), format!("{prefix}final.ckpt"));
            layout.insert("eval".to_string(), format!("{prefix}eval.json"));
        }
        Pipeline::TwoPhase => {
            for stage in ["grasp", "interaction"] {
                layout.insert(
                    format!("{stage}_metrics"),
                    format!("{prefix}{stage}/metrics.csv"),
                );
                layout.insert(
                    format!("{stage}_checkpoint"),
                    format!("{prefix}{stage}/final.ckpt"),
                );
            }
            layout.insert("eval".to_string(), format!("{prefix}staged_eval.json"));
        }
    }
    let manifest = RunManifest {
        run_id,
        config_sha256: hash,
        config: String::from_utf8_lossy(&bytes).into_owned(),
        seeds: seeds.clone(),
        seed_overridden,
        layout,
    };
    manifest.save(&dir)?;

    for &seed in &seeds {
        let sub = if multi {
            let d = dir.join(format!("seed_{seed}"));
            fs::create_dir_all(&d)?;
            d
        } else {
            dir.clone()
        };
        match cfg.pipeline {
            Pipeline::Single => {
                let mut t = cfg.train.clone();
                t.seed = seed;
                let out = train_phase(&t, Some(&sub))?;
                fs::write(
                    sub.join("eval.json"),
                    serde_json::to_string_pretty(&out.final_eval)?,
                )?;
                print_summary(seed, "final", &out);
            }
            Pipeline::TwoPhase => {
                let report = run_two_phase(&cfg, seed, &sub)?;
                println!(
                    "seed {seed}: staged success {:.3} over {} episodes",
                    report.success_rate, report.episodes
                );
            }
        }
    }
    Ok(dir)
}

fn print_summary(seed: u64, tag: &str, out: &TrainOutcome) {
    println!(
        "seed {seed}: {} env steps, {tag} success {:.3}, mean return {:.3}",
        out.env_steps, out.final_eval.success_rate, out.final_eval.mean_return
    );
}

/// Trains the grasp stage and the interaction stage on a split of the same
/// budget, then scores the stitched pipeline on full acquisition episodes.
fn run_two_phase(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<EvalReport, CliError> {
    let per_update = (cfg.train.n_envs * cfg.train.rollout_steps) as u64;
    let (g_budget, i_budget) = split_budget(cfg.train.budget, cfg.grasp_fraction, per_update);

    let mut g = cfg.train.clone();
    g.seed = seed;
    g.phase = PhaseMode::Grasp;
    g.budget = g_budget;
    let g_out = train_phase(&g, Some(&dir.join("grasp")))?;
    print_summary(seed, "grasp", &g_out);

    let mut t = cfg.train.clone();
    t.seed = seed;
    t.phase = PhaseMode::Interaction;
    t.budget = i_budget;
    let handoff = build_handoff(g_out.policy, &t)?;
    let i_out = train_staged_interaction(&t, Some(&dir.join("interaction")), &handoff)?;
    print_summary(seed, "interaction", &i_out);

    let task = g.task_spec();
    let policies = TwoPhasePolicies {
        grasp: &handoff.grasp,
        interaction: &i_out.policy,
        variant: cfg.train.variant,
        ctrl: ControllerConfig {
            alpha: cfg.train.alpha,
        },
    };
    let report = evaluate_two_phase(&policies, &task, cfg.train.eval_episodes, eval_seed(seed))?;
    fs::write(
        dir.join("staged_eval.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

fn eval_cmd(
    config_path: &Path,
    checkpoint: &Path,
    grasp_checkpoint: Option<&Path>,
    episodes: Option<usize>,
    seed: Option<u64>,
) -> Result<EvalReport, CliError> {
    let (mut cfg, _) = load_config(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let episodes = episodes.unwrap_or(cfg.train.eval_episodes);
    let ck = Checkpoint::load(checkpoint)?;
    let ctrl = ControllerConfig {
        alpha: cfg.train.alpha,
    };
    let seed = eval_seed(cfg.train.seed);
    let report = match grasp_checkpoint {
        Some(gp) => {
            let g_ck = Checkpoint::load(gp)?;
            let mut full = cfg.train.clone();
            full.phase = PhaseMode::Grasp;
            let task = full.task_spec();
            let policies = TwoPhasePolicies {
                grasp: &g_ck.params,
                interaction: &ck.params,
                variant: cfg.train.variant,
                ctrl,
            };
            evaluate_two_phase(&policies, &task, episodes, seed)?
        }
        None => {
            let task = cfg.train.task_spec();
            evaluate(
                &ck.params,
                &task,
                cfg.train.phase,
                cfg.train.variant,
                ctrl,
                episodes,
                seed,
            )?
        }
    };
    Ok(report)
}

fn plot_cmd(metrics: &[String], out: &Path) -> Result<(), CliError> {
    let inputs: Vec<(String, PathBuf)> = metrics.iter().map(|a| parse_plot_arg(a)).collect();
    let svg = plot_success_curves(&inputs)?;
    fs::write(out, svg)?;
    Ok(())
}

/// "label=path" pins the label; a bare path is labeled with its run
/// directory name (skipping a seed_N component).
fn parse_plot_arg(arg: &str) -> (String, PathBuf) {
    if let Some((label, path)) = arg.split_once('=') {
        return (label.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(arg);
    let mut dirs = path
        .parent()
        .into_iter()
        .flat_map(|p| p.components())
        .rev()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with("seed_") && !n.starts_with("seed-"));
    let label = dirs
        .next()
        .filter(|n| !n.is_empty() && n != "." && n != "/")
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string())
        });
    (label, path)
}

/// Observation/action widths of every policy variant on the two built-in
/// hand models.
pub fn dimension_tables() -> String {
    let hands = [
        (
            "simulated hand",
            HandModel::full(),
            ObsFlags {
                joint_vels: true,
                prev_action: true,
            },
            "joint velocities and previous action observed",
        ),
        (
            "hardware hand",
            HandModel::reduced(),
            ObsFlags {
                joint_vels: false,
                prev_action: false,
            },
            "positions only",
        ),
    ];
    let mut s = String::new();
    for (name, hand, flags, note) in hands {
        let _ = writeln!(
            s,
            "{name}: {} observed joints, {} actuated; {note}",
            hand.n_joints_obs, hand.n_joints_act
        );
        let _ = writeln!(s, "  {:<22} {:>5} {:>5}", "variant", "obs", "act");
        for variant in PolicyVariant::ALL {
            let (obs, act) = space_dims(variant, &hand, flags);
            let _ = writeln!(s, "  {:<22} {obs:>5} {act:>5}", variant.to_string());
        }
        s.push('\n');
    }
    s
}
