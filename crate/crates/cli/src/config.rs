use std::path::{Path, PathBuf};

use ectonas_core::evolution::{SearchConfig, SearchMode};
use ectonas_core::net::TrainOptions;
use ectonas_core::topology::Topology;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the samples come from. Paths are resolved against the directory of
/// the config file that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        /// Keep only the first `limit` training samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
        schema: PathBuf,
        #[serde(default = "default_image")]
        image: [usize; 2],
    },
    SynthTabular {
        rows: usize,
        informative: usize,
        class_balance: f64,
        #[serde(default = "default_image")]
        image: [usize; 2],
    },
    SynthBlobs {
        samples: usize,
        classes: usize,
        shape: Vec<usize>,
        spread: f64,
    },
}

fn default_image() -> [usize; 2] {
    [10, 10]
}

impl DatasetConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(images);
                fix(labels);
                test_images.iter_mut().for_each(fix);
                test_labels.iter_mut().for_each(fix);
            }
            DatasetConfig::Csv { path, schema, .. } => {
                fix(path);
                fix(schema);
            }
            DatasetConfig::SynthTabular { .. } | DatasetConfig::SynthBlobs { .. } => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub starting_topology: Topology,
    #[serde(default = "default_mode")]
    pub mode: SearchMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_budget")]
    pub budget_epochs: usize,
    #[serde(default = "default_n_winners")]
    pub n_winners: usize,
    #[serde(default = "default_epochs_per_round")]
    pub epochs_per_round: usize,
    #[serde(default = "default_warmstart")]
    pub warmstart_epochs: usize,
    #[serde(default = "default_baseline")]
    pub baseline_epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_mode() -> SearchMode {
    SearchMode::Ectonas
}
fn default_alpha() -> f64 {
    1.0
}
fn default_budget() -> usize {
    1000
}
fn default_n_winners() -> usize {
    2
}
fn default_epochs_per_round() -> usize {
    2
}
fn default_warmstart() -> usize {
    10
}
fn default_baseline() -> usize {
    200
}
fn default_lr() -> f32 {
    0.1
}
fn default_batch() -> usize {
    128
}
fn default_seed() -> u64 {
    42
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<SearchMode>,
    pub alpha: Option<f64>,
    pub budget: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(dataset: DatasetConfig, starting_topology: Topology) -> Self {
        Self {
            dataset,
            starting_topology,
            mode: default_mode(),
            alpha: default_alpha(),
            budget_epochs: default_budget(),
            n_winners: default_n_winners(),
            epochs_per_round: default_epochs_per_round(),
            warmstart_epochs: default_warmstart(),
            baseline_epochs: default_baseline(),
            lr: default_lr(),
            batch_size: default_batch(),
            seed: default_seed(),
            out_dir: None,
        }
    }

    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.dataset.resolve(base);
        if let Some(out) = cfg.out_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        if let Some(b) = o.budget {
            self.budget_epochs = b;
        }
        if let Some(out) = &o.out {
            self.out_dir = Some(out.clone());
        }
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            mode: self.mode,
            alpha: self.alpha,
            budget: self.budget_epochs,
            warm_start_epochs: self.warmstart_epochs,
            bracket_epochs: self.epochs_per_round,
            n_winners: self.n_winners,
            baseline_epochs: self.baseline_epochs,
            seed: self.seed,
            train: TrainOptions {
                learning_rate: self.lr,
                batch_size: self.batch_size,
            },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.search().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CliError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(CliError::Config("batch_size must be >= 1".into()));
        }
        if self.out_dir.is_none() {
            return Err(CliError::Config("no output directory given".into()));
        }
        if let DatasetConfig::Idx {
            test_images, test_labels, ..
        } = &self.dataset
        {
            if test_images.is_some() != test_labels.is_some() {
                return Err(CliError::Config("test_images and test_labels go together".into()));
            }
        }
        Ok(())
    }
}
