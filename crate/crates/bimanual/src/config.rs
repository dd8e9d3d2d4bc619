//! Run configs on disk, run manifests, and output-directory plumbing.
//!
//! A run is described by one TOML file. The `[train]` table maps onto
//! [`TrainRunConfig`]; the top level picks the pipeline and the seeds.
//! Every artifact a run writes lives under a per-run directory together
//! with a manifest and a byte-identical copy of the config that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trainer::{PhaseMode, TrainError, TrainRunConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    Missing(PathBuf),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Invalid(#[from] TrainError),
}

/// Whether a run trains one policy or the grasp/interaction pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Single,
    TwoPhase,
}

/// Top-level contents of a run config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: Pipeline,
    /// Share of the env-step budget the grasp stage gets in a two-phase run.
    pub grasp_fraction: f64,
    /// Seeds to run, one output subdirectory each; empty means the single
    /// seed from `[train]`.
    pub seeds: Vec<u64>,
    pub train: TrainRunConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: Pipeline::Single,
            grasp_fraction: 0.25,
            seeds: Vec::new(),
            train: TrainRunConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(TrainError::Config(m)));
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.grasp_fraction) {
            return bad(format!(
                "grasp_fraction {} outside [0, 1]",
                self.grasp_fraction
            ));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad(format!("seed {s} listed twice"));
            }
        }
        if self.pipeline == Pipeline::TwoPhase {
            if self.train.phase != PhaseMode::Interaction {
                return bad(format!(
                    "a two-phase run derives its stages itself; set phase = \"interaction\" \
                     in [train], not \"{}\"",
                    self.train.phase
                ));
            }
            let per_update = (self.train.n_envs * self.train.rollout_steps) as u64;
            if self.train.budget < 2 * per_update {
                return bad(format!(
                    "two-phase budget {} cannot cover one update per stage \
                     ({per_update} steps each)",
                    self.train.budget
                ));
            }
        }
        Ok(())
    }
}

/// Reads and parses a run config, returning the exact bytes alongside so the
/// run directory can keep a byte-identical snapshot.
pub fn load_config(path: &Path) -> Result<(RunConfig, Vec<u8>), ConfigError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ConfigError::Missing(path.to_path_buf()));
        }
        Err(source) => {
            return Err(ConfigError::Read {
                path: path.to_path_buf(),
                source,
            });
        }
    };
    let text = std::str::from_utf8(&bytes).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: format!("not utf-8: {e}"),
    })?;
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        // toml errors already carry the key path plus line and column
        message: e.to_string(),
    })?;
    Ok((cfg, bytes))
}

/// Git-style blob hash of a config snapshot, with SHA-256 as the digest:
/// sha256("blob {len}\0" + bytes), hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    let mut out = String::with_capacity(64);
    for b in h.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Provenance record written next to a run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Directory name under the output root; unique there.
    pub run_id: String,
    /// [`content_hash`] of the config snapshot.
    pub config_sha256: String,
    /// Exact text of the config file this run used.
    pub config: String,
    /// Seeds actually run; a --seed override replaces the file's seeds.
    pub seeds: Vec<u64>,
    pub seed_overridden: bool,
    /// Artifact paths relative to the run directory. Multi-seed runs use a
    /// literal `seed_{seed}` placeholder segment.
    pub layout: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join("manifest.json"), text)
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Creates a fresh directory under `root` named `base`, or `base-2`,
/// `base-3`, ... if earlier runs took the name. Returns the run id and path.
pub fn unique_run_dir(root: &Path, base: &str) -> io::Result<(String, PathBuf)> {
    fs::create_dir_all(root)?;
    for attempt in 1..10_000u32 {
        let name = if attempt == 1 {
            base.to_string()
        } else {
            format!("{base}-{attempt}")
        };
        let dir = root.join(&name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((name, dir)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    Err(io::Error::new(
        io::ErrorKind::AlreadyExists,
        format!("no free run id under {} for {base}", root.display()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("bimanual_config_{tag}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn an_empty_config_parses_to_the_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn configs_round_trip_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.pipeline = Pipeline::TwoPhase;
        cfg.seeds = vec![1, 2, 3];
        cfg.train.hand_joints = Some(4);
        cfg.train.stop_success = Some(0.8);
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_errors_carry_the_key_and_line() {
        let dir = tmp("parse");
        let path = dir.join("bad.toml");
        fs::write(&path, "[train]\ntask = \"sandwich\"\n").unwrap();
        let err = load_config(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("sandwich") || msg.contains("unknown variant"), "{msg}");

        fs::write(&path, "mystery = 1\n").unwrap();
        let msg = load_config(&path).unwrap_err().to_string();
        assert!(msg.contains("mystery"), "{msg}");
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn a_missing_file_is_its_own_error() {
        let err = load_config(Path::new("/nonexistent/nowhere.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Missing(_)));
        assert!(err.to_string().contains("/nonexistent/nowhere.toml"));
    }

    #[test]
    fn validation_rejects_bad_pipelines() {
        let mut cfg = RunConfig::default();
        cfg.pipeline = Pipeline::TwoPhase;
        cfg.train.phase = PhaseMode::Grasp;
        assert!(cfg.validate().is_err());
        cfg.train.phase = PhaseMode::Interaction;
        cfg.validate().unwrap();
        cfg.train.budget = (cfg.train.n_envs * cfg.train.rollout_steps) as u64;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.seeds = vec![1, 2, 1];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.grasp_fraction = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn content_hash_uses_git_blob_framing() {
        let h = content_hash(b"hello");
        let mut expect = Sha256::new();
        expect.update(b"blob 5\0hello");
        let expect: Vec<String> = expect.finalize().iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(h, expect.concat());
        assert_eq!(h.len(), 64);
        // framing makes the empty blob distinct from the raw empty hash
        assert_ne!(content_hash(b""), content_hash(b"\0"));
    }

    #[test]
    fn run_ids_stay_unique_per_root() {
        let root = tmp("unique");
        let (id1, d1) = unique_run_dir(&root, "exp").unwrap();
        let (id2, d2) = unique_run_dir(&root, "exp").unwrap();
        assert_eq!(id1, "exp");
        assert_eq!(id2, "exp-2");
        assert!(d1.is_dir() && d2.is_dir());
        let _ = fs::remove_dir_all(root);
    }

    #[test]
    fn manifests_round_trip() {
        let dir = tmp("manifest");
        let mut layout = BTreeMap::new();
        layout.insert("metrics".to_string(), "metrics.csv".to_string());
        let m = RunManifest {
            run_id: "exp".into(),
            config_sha256: content_hash(b"x = 1\n"),
            config: "x = 1\n".into(),
            seeds: vec![7],
            seed_overridden: true,
            layout,
        };
        m.save(&dir).unwrap();
        assert_eq!(RunManifest::load(&dir).unwrap(), m);
        let _ = fs::remove_dir_all(dir);
    }
}
