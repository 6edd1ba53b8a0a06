//! Experiment configuration: TOML or JSON with {task, model, optimizer,
//! data, schedule, seed}. Validation errors carry field paths.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Xor,
    Regression,
    CharLm,
    NodeClassify,
    GraphClassify,
    UaDemo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// "linear", "mlp", "transformer", "gcn"
    pub kind: String,
    pub hidden: usize,
    pub layers: usize,
    pub embed: usize,
    pub heads: usize,
    pub context: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: "mlp".into(),
            hidden: 8,
            layers: 2,
            embed: 32,
            heads: 2,
            context: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// "sgd" or "adam"
    pub kind: String,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decoupled_decay: bool,
    pub grad_clip: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: "adam".into(),
            lr: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            decoupled_decay: false,
            grad_clip: 0.0,
            steps: 2000,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Text corpus (char_lm) or graph JSON (node_classify).
    pub path: Option<PathBuf>,
    /// Synthetic-data knobs.
    pub samples: usize,
    pub features: usize,
    pub noise: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub epochs: usize,
    pub log_every: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            epochs: 1,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UaConfig {
    pub bins: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub grid: usize,
    pub quadrature: usize,
}

impl Default for UaConfig {
    fn default() -> Self {
        UaConfig {
            bins: vec![5, 15, 50],
            lo: 0.0,
            hi: 10.0,
            slope: 1e4,
            grid: 1000,
            quadrature: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub key_width: usize,
    pub chunk: usize,
    pub state_width: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![64, 128, 256],
            key_width: 16,
            chunk: 32,
            state_width: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub ua: UaConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn quick(task: Task, seed: u64) -> Self {
        ExperimentConfig {
            task,
            seed,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            ua: UaConfig::default(),
            bench: BenchConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let config: ExperimentConfig = if path.extension().and_then(|e| e.to_str()) == Some("json")
        {
            serde_json::from_str(&text).map_err(|e| ConfigError {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |path: &str, message: String| -> Result<(), ConfigError> {
            Err(ConfigError {
                path: path.into(),
                message,
            })
        };
        if self.optimizer.lr <= 0.0 {
            return fail("optimizer.lr", format!("must be positive, got {}", self.optimizer.lr));
        }
        if !matches!(self.optimizer.kind.as_str(), "sgd" | "adam") {
            return fail(
                "optimizer.kind",
                format!("unknown optimizer `{}`", self.optimizer.kind),
            );
        }
        if self.optimizer.batch_size == 0 {
            return fail("optimizer.batch_size", "must be at least 1".into());
        }
        if !matches!(
            self.model.kind.as_str(),
            "linear" | "mlp" | "transformer" | "gcn"
        ) {
            return fail("model.kind", format!("unknown model `{}`", self.model.kind));
        }
        if self.model.kind == "transformer" && self.model.embed % self.model.heads.max(1) != 0 {
            return fail(
                "model.embed",
                format!(
                    "embed {} must divide across {} heads",
                    self.model.embed, self.model.heads
                ),
            );
        }
        if self.ua.bins.is_empty() {
            return fail("ua.bins", "need at least one bin count".into());
        }
        if self.ua.hi <= self.ua.lo {
            return fail("ua.hi", "interval must be non-empty".into());
        }
        Ok(())
    }
}

/// Splittable seed streams: every consumer derives its own sub-seed from
/// the run seed and a label, so adding a consumer never perturbs others.
#[derive(Debug, Clone, Copy)]
pub struct SeedTree {
    pub root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree { root }
    }

    /// FNV-1a over the label, folded with the root. Stable across
    /// releases, unlike the std hasher.
    pub fn sub(&self, label: &str) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in label.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash ^ self.root.rotate_left(17)
    }

    pub fn rng(&self, label: &str) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(self.sub(label))
    }
}
