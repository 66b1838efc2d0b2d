use std::fmt;
use std::path::{Path, PathBuf};

use rtopf_core::env::{DatasetConfig, EnvConfig, RewardKind};
use rtopf_core::grid::{parse_case, to_case_string};
use rtopf_core::pdppo::{BcConfig, TrainConfig};
use rtopf_core::rng::derive_seed;
use rtopf_core::Network;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Error kinds that map to distinct process exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
    Gate(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Solver(m) => write!(f, "solver failure: {m}"),
            Failure::Gate(m) => write!(f, "acceptance threshold not met: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

/// 2 for configuration errors, 3 for solver failures, 4 for a failed eval
/// gate, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<Failure>()) {
        Some(Failure::Config(_)) => 2,
        Some(Failure::Solver(_)) => 3,
        Some(Failure::Gate(_)) => 4,
        None => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gate {
    pub feas_min: f64,
    pub c_bar_max: f64,
    pub kappa_aver_max: f64,
}

impl Default for Gate {
    fn default() -> Self {
        Self {
            feas_min: 100.0,
            c_bar_max: 0.0,
            kappa_aver_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Timing repetitions per quantity (at least 30 are used).
    pub reps: usize,
    /// When set, `eval` exits with code 4 if the report misses it.
    pub gate: Option<Gate>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { reps: 30, gate: None }
    }
}

fn default_test() -> DatasetConfig {
    DatasetConfig {
        horizon: 200,
        ..DatasetConfig::default()
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything a run needs. Dataset and training seeds are derived from the
/// root `seed`; seeds written inside the blocks are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `ieee9`, `ieee30`, or a case file path relative to the config file.
    pub case: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_test")]
    pub test: DatasetConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bc: BcConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub episodes: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A resolved configuration with its network loaded.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub net: Network,
    pub out: PathBuf,
}

impl Context {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::new(cfg, base, ov)
    }

    /// Resolves `cfg`; relative paths are taken from `base`.
    pub fn new(mut cfg: RunConfig, base: &Path, ov: &Overrides) -> Result<Self, Failure> {
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(w) = ov.workers {
            cfg.train.workers = w;
        }
        if let Some(e) = ov.episodes {
            cfg.train.episodes = e;
        }
        if let Some(o) = &ov.out {
            cfg.out = o.clone();
        }
        cfg.dataset.seed = derive_seed(cfg.seed, "train-data", 0);
        cfg.test.seed = derive_seed(cfg.seed, "test-data", 0);
        cfg.train.seed = cfg.seed;
        let net = match cfg.case.as_str() {
            "ieee9" => Network::ieee9(),
            "ieee30" => Network::ieee30(),
            p => parse_case(base.join(p)).map_err(|e| Failure::Config(format!("case {p}: {e}")))?,
        };
        let cfg_err = |e: &dyn fmt::Display| Failure::Config(e.to_string());
        cfg.dataset.validate().map_err(|e| cfg_err(&e))?;
        cfg.test.validate().map_err(|e| cfg_err(&e))?;
        cfg.env.validate().map_err(|e| cfg_err(&e))?;
        cfg.train.validate().map_err(|e| cfg_err(&e))?;
        if cfg.train.workers == 0 {
            return Err(Failure::Config("train.workers must be at least 1".into()));
        }
        let out = if cfg.out.is_absolute() { cfg.out.clone() } else { base.join(&cfg.out) };
        Ok(Self { cfg, net, out })
    }

    fn digest(&self, value: serde_json::Value) -> String {
        let mut h = Sha256::new();
        h.update(to_case_string(&self.net).as_bytes());
        h.update(value.to_string().as_bytes());
        hex::encode(h.finalize())
    }

    /// Identity of a generated load dataset and of its expert trajectory.
    pub fn data_hash(&self, split: Split) -> String {
        let block = match split {
            Split::Train => &self.cfg.dataset,
            Split::Test => &self.cfg.test,
        };
        self.digest(serde_json::json!({ "split": split.name(), "dataset": block }))
    }

    /// Identity of everything that shapes trained parameters. Episode count
    /// and worker count are excluded so runs can be extended and resumed.
    pub fn model_hash(&self, mode: Option<RewardKind>) -> String {
        let mut train = self.cfg.train.clone();
        train.episodes = 0;
        train.workers = 0;
        self.digest(serde_json::json!({
            "seed": self.cfg.seed,
            "dataset": self.cfg.dataset,
            "test": self.cfg.test,
            "env": self.cfg.env,
            "train": train,
            "bc": self.cfg.bc,
            "mode": mode.map(RewardKind::name),
        }))
    }

    /// Identity of the behavior-cloned actor: only the inputs that shape it.
    pub fn bc_hash(&self) -> String {
        self.digest(serde_json::json!({
            "seed": self.cfg.seed,
            "dataset": self.cfg.dataset,
            "env": self.cfg.env,
            "hidden": self.cfg.train.hidden,
            "bc": self.cfg.bc,
        }))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        toml::from_str("case = \"ieee9\"").unwrap()
    }

    #[test]
    fn defaults_fill_every_block() {
        let cfg = minimal();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.test.horizon, 200);
        assert_eq!(cfg.dataset.horizon, DatasetConfig::default().horizon);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("case = \"ieee9\"\n[train]\ngama = 0.9").is_err());
    }

    #[test]
    fn overrides_win_and_seeds_split() {
        let ov = Overrides {
            seed: Some(7),
            workers: Some(3),
            episodes: Some(11),
            out: None,
        };
        let ctx = Context::new(minimal(), Path::new("."), &ov).unwrap();
        assert_eq!(ctx.cfg.seed, 7);
        assert_eq!(ctx.cfg.train.workers, 3);
        assert_eq!(ctx.cfg.train.episodes, 11);
        assert_ne!(ctx.cfg.dataset.seed, ctx.cfg.test.seed);
    }

    #[test]
    fn hashes_track_relevant_inputs_only() {
        let a = Context::new(minimal(), Path::new("."), &Overrides::default()).unwrap();
        let more = Overrides {
            episodes: Some(5),
            workers: Some(4),
            ..Overrides::default()
        };
        let b = Context::new(minimal(), Path::new("."), &more).unwrap();
        assert_eq!(a.model_hash(Some(RewardKind::PdPpo)), b.model_hash(Some(RewardKind::PdPpo)));
        assert_ne!(a.model_hash(Some(RewardKind::PdPpo)), a.model_hash(Some(RewardKind::Cliff)));
        let mut cfg = minimal();
        cfg.train.actor_lr = 1e-3;
        let c = Context::new(cfg, Path::new("."), &Overrides::default()).unwrap();
        assert_eq!(a.data_hash(Split::Train), c.data_hash(Split::Train));
        assert_ne!(a.model_hash(None), c.model_hash(None));
        assert_eq!(a.bc_hash(), c.bc_hash());
    }

    #[test]
    fn exit_codes() {
        let e: anyhow::Error = Failure::Config("x".into()).into();
        assert_eq!(exit_code(&e), 2);
        let e = anyhow::Error::from(Failure::Solver("x".into())).context("expert");
        assert_eq!(exit_code(&e), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 1);
    }
}
