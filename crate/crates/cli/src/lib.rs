//! Experiment runner: JSON run configs, atomic run directories, JSON-lines
//! logs and training curves.

pub mod config;
pub mod runner;

use std::path::Path;

use ectonas_core::net::{serial, Shape};
use ectonas_core::rng::rng_from;
use ectonas_core::topology::Topology;
use thiserror::Error;

pub use config::{DatasetConfig, Overrides, RunConfig};
pub use runner::{run_command, RunSummary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Io(_) | CliError::Internal(_) => 1,
        }
    }
}

/// Layer listing and parameter count of a catalog topology.
pub fn topo_show(topology: Topology, input: Shape, num_classes: usize) -> Result<String, CliError> {
    let net = topology
        .build(input, num_classes, &mut rng_from(0, &[0]))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let shapes = net.shapes().map_err(|e| CliError::Internal(e.to_string()))?;
    let mut out = format!("{topology}: input {:?}, {num_classes} classes\n", input.dims());
    for (i, (layer, shape)) in net.layers.iter().zip(&shapes[1..]).enumerate() {
        out += &format!(
            "{i:>3}  {:<28} -> {:<14} {:>8} params\n",
            format!("{:?}", layer.spec()),
            format!("{:?}", shape.dims()),
            layer.param_count()
        );
    }
    out += &format!("total {} params\n", net.param_count());
    Ok(out)
}

/// Descriptor of a saved model as pretty JSON plus its parameter count.
pub fn model_inspect(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (descriptor, _) = serial::read_descriptor(&bytes).map_err(|e| CliError::Data(e.to_string()))?;
    let net = serial::load(&bytes).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(format!(
        "{}\nparam_count {}\n",
        serde_json::to_string_pretty(&descriptor).expect("descriptor serializes"),
        net.param_count()
    ))
}

/// Parse `28x28x1` (or commas) as an image shape and `784` as a flat one.
pub fn parse_shape(text: &str) -> Result<Shape, String> {
    let dims: Result<Vec<usize>, _> = text.split(['x', ',']).map(|d| d.trim().parse::<usize>()).collect();
    let dims = dims.map_err(|e| format!("bad shape {text:?}: {e}"))?;
    Shape::from_dims(&dims).ok_or_else(|| format!("bad shape {text:?}: expected h,w,c or d"))
}
