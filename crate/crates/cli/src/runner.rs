use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ectonas_core::data::{
    load_csv, load_idx, split, split_with_test, synth_blobs, synth_tabular, tabular_to_image, BlobOptions, Dataset, Splits,
};
use ectonas_core::evolution::{self, CurvePoint, Event, Observer, RunResult, SearchData, SearchError};
use ectonas_core::net::{serial, Shape};
use ectonas_core::rng::rng_from;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{DatasetConfig, RunConfig};
use crate::CliError;

pub const LOG_FILE: &str = "run.jsonl";
pub const CURVES_FILE: &str = "curves.csv";
pub const MODEL_FILE: &str = "model.ectn";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Stream salt for the starting network's weights.
const START_WEIGHTS: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub winner: u64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub param_count: usize,
    pub epochs_trained: usize,
    pub has_conv: bool,
    pub start_val_accuracy: f64,
    pub start_param_count: usize,
    pub generations: usize,
    pub spent_epochs: usize,
    pub budget_epochs: usize,
}

fn data_from<'a>(a: &'a Path, b: &'a Path) -> impl Fn(ectonas_core::data::DataError) -> CliError + 'a {
    move |e| CliError::Data(format!("{} + {}: {e}", a.display(), b.display()))
}

pub fn load_data(cfg: &DatasetConfig, seed: u64) -> Result<Splits, CliError> {
    let data = |e: ectonas_core::data::DataError| CliError::Data(e.to_string());
    match cfg {
        DatasetConfig::Idx {
            images,
            labels,
            test_images,
            test_labels,
            limit,
        } => {
            let mut pool = load_idx(images, labels).map_err(data_from(images, labels))?;
            if let Some(n) = limit {
                pool = pool.head(*n);
            }
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => split_with_test(&pool, &load_idx(ti, tl).map_err(data_from(ti, tl))?, seed).map_err(data),
                _ => split(&pool, seed).map_err(data),
            }
        }
        DatasetConfig::Csv { path, schema, image } => {
            let table = load_csv(path, schema).map_err(data_from(path, schema))?;
            let img = tabular_to_image(&table, (image[0], image[1]), seed).map_err(data)?;
            split(&img.dataset, seed).map_err(data)
        }
        DatasetConfig::SynthTabular {
            rows,
            informative,
            class_balance,
            image,
        } => {
            let table = synth_tabular(*rows, *informative, *class_balance, seed).map_err(data)?;
            let img = tabular_to_image(&table, (image[0], image[1]), seed).map_err(data)?;
            split(&img.dataset, seed).map_err(data)
        }
        DatasetConfig::SynthBlobs {
            samples,
            classes,
            shape,
            spread,
        } => {
            let shape = Shape::from_dims(shape).ok_or_else(|| CliError::Data(format!("bad sample shape {shape:?}")))?;
            let blobs = synth_blobs(
                &BlobOptions {
                    n_samples: *samples,
                    num_classes: *classes,
                    shape,
                    spread: *spread,
                },
                seed,
            )
            .map_err(data)?;
            split(&blobs, seed).map_err(data)
        }
    }
}

/// Writes each event as one JSON line; the first write error is kept.
struct JsonLines<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> JsonLines<W> {
    fn line(&mut self, value: &impl Serialize) {
        if self.error.is_some() {
            return;
        }
        let r = serde_json::to_writer(&mut self.out, value)
            .map_err(std::io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"));
        if let Err(e) = r {
            self.error = Some(e);
        }
    }

    fn finish(mut self) -> std::io::Result<()> {
        if let Some(e) = self.error {
            return Err(e);
        }
        self.out.flush()
    }
}

impl<W: Write> Observer for JsonLines<W> {
    fn event(&mut self, event: &Event) {
        self.line(event);
    }
}

fn describe(d: &Dataset) -> serde_json::Value {
    json!({ "samples": d.len(), "num_classes": d.num_classes, "majority_fraction": d.majority_fraction() })
}

pub fn write_curves(path: &Path, points: &[CurvePoint]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "epoch,candidate,val_acc,param_count,mutation")?;
    for p in points {
        let mutation = p.mutation.map(|m| m.name()).unwrap_or("");
        writeln!(out, "{},{},{},{},{}", p.epoch, p.candidate, p.val_accuracy, p.param_count, mutation)?;
    }
    out.flush()
}

fn search_error(e: SearchError) -> CliError {
    match e {
        SearchError::Config(m) => CliError::Config(m),
        SearchError::Data(m) => CliError::Data(m),
        e @ SearchError::Divergence { .. } => CliError::Divergence(e.to_string()),
        other => CliError::Internal(other.to_string()),
    }
}

/// Execute a run and publish its outputs at `out_dir` in one rename; a
/// failed run leaves nothing at that path.
pub fn run_command(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let out_dir = cfg.out_dir.clone().expect("validated");
    if out_dir.exists() {
        return Err(CliError::Config(format!("output path {} already exists", out_dir.display())));
    }
    let splits = load_data(&cfg.dataset, cfg.seed)?;
    let num_classes = [&splits.train, &splits.val, &splits.test]
        .iter()
        .map(|d| d.num_classes)
        .max()
        .unwrap_or(0);
    let input_shape = splits.train.sample_shape();
    let start = cfg
        .starting_topology
        .build(input_shape, num_classes, &mut rng_from(cfg.seed, &[START_WEIGHTS]))
        .map_err(|e| CliError::Config(format!("starting topology does not fit the data: {e}")))?;

    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    let staging = tempfile::Builder::new()
        .prefix(".ectonas-run-")
        .tempdir_in(&parent)
        .map_err(|e| CliError::Io(e.to_string()))?;
    let io = |e: std::io::Error| CliError::Io(e.to_string());

    let mut log = JsonLines {
        out: BufWriter::new(File::create(staging.path().join(LOG_FILE)).map_err(io)?),
        error: None,
    };
    log.line(&json!({
        "event": "data",
        "input_shape": input_shape.dims(),
        "train": describe(&splits.train),
        "val": describe(&splits.val),
        "test": describe(&splits.test),
    }));
    log.line(&json!({
        "event": "start",
        "topology": cfg.starting_topology,
        "layers": start.specs(),
        "param_count": start.param_count(),
        "search": cfg.search(),
    }));
    let data = SearchData {
        train: &splits.train,
        val: &splits.val,
        test: Some(&splits.test),
    };
    let result: RunResult = evolution::run(&cfg.search(), start, data, &mut log).map_err(search_error)?;
    log.finish().map_err(io)?;

    let dir = staging.path();
    write_curves(&dir.join(CURVES_FILE), &result.winner.history).map_err(io)?;
    serial::save_file(&result.winner.network, &dir.join(MODEL_FILE)).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg).expect("config serializes")).map_err(io)?;
    let summary = RunSummary {
        out_dir: out_dir.clone(),
        winner: result.winner.id,
        val_accuracy: result.winner.val_accuracy,
        test_accuracy: result.test_accuracy.expect("test split present"),
        param_count: result.winner.param_count,
        epochs_trained: result.winner.epochs_trained,
        has_conv: result.winner.network.has_conv(),
        start_val_accuracy: result.start.val_accuracy,
        start_param_count: result.start.param_count,
        generations: result.generations.len(),
        spent_epochs: result.budget.spent_epochs,
        budget_epochs: result.budget.total_epochs,
    };
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(io)?;

    let staged = staging.keep();
    if let Err(e) = std::fs::rename(&staged, &out_dir) {
        let _ = std::fs::remove_dir_all(&staged);
        return Err(CliError::Io(format!("publishing {}: {e}", out_dir.display())));
    }
    Ok(summary)
}
