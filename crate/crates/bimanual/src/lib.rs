//! Two-hand manipulation tasks with relative-frame policy spaces and a
//! self-contained PPO trainer.
//!
//! The crate is organized bottom-up: [`geom`] provides SE(3) pose algebra,
//! [`env`] the weld-grasp task simulator, [`spaces`] the observation/action
//! encodings for the four policy variants, [`controller`] the split-target
//! base tracking rule, [`rewards`] the shaped task rewards, [`rl`] the
//! networks and PPO machinery, and [`trainer`] the rollout/update loop that
//! the `bimanual` binary drives. [`config`], [`plot`], and [`cli`] supply
//! the file formats and the command-line front end around it.

pub mod cli;
pub mod config;
pub mod controller;
pub mod env;
pub mod geom;
pub mod plot;
pub mod rewards;
pub mod rl;
pub mod spaces;
pub mod trainer;

/// Binary entry point; returns the process exit code.
pub fn run() -> i32 {
    cli::run()
}
