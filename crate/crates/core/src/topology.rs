//! The six named starting topologies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::net::{LayerSpec, NetError, Network, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    SmallCnn,
    SmallFfnn,
    MediumCnn,
    MediumFfnn,
    LargeCnn,
    LargeFfnn,
}

impl Topology {
    pub const ALL: [Topology; 6] = [
        Topology::SmallCnn,
        Topology::SmallFfnn,
        Topology::MediumCnn,
        Topology::MediumFfnn,
        Topology::LargeCnn,
        Topology::LargeFfnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Topology::SmallCnn => "small_cnn",
            Topology::SmallFfnn => "small_ffnn",
            Topology::MediumCnn => "medium_cnn",
            Topology::MediumFfnn => "medium_ffnn",
            Topology::LargeCnn => "large_cnn",
            Topology::LargeFfnn => "large_ffnn",
        }
    }

    pub fn conv_channels(self) -> &'static [usize] {
        match self {
            Topology::SmallCnn => &[3, 6, 9],
            Topology::MediumCnn => &[3, 6],
            Topology::LargeCnn => &[3],
            _ => &[],
        }
    }

    pub fn dense_units(self) -> &'static [usize] {
        match self {
            Topology::SmallCnn | Topology::SmallFfnn => &[10],
            Topology::MediumCnn | Topology::MediumFfnn => &[10, 10],
            Topology::LargeCnn | Topology::LargeFfnn => &[100, 50, 10],
        }
    }

    pub fn has_cells(self) -> bool {
        !self.conv_channels().is_empty()
    }

    /// Cells of `conv -> avg pool -> batch norm -> relu`, a flatten layer,
    /// hidden dense layers with relu, then the softmax output.
    pub fn specs(self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for &c in self.conv_channels() {
            specs.extend([
                LayerSpec::Conv2d { out_channels: c },
                LayerSpec::AvgPool,
                LayerSpec::batch_norm(),
                LayerSpec::Relu,
            ]);
        }
        specs.push(LayerSpec::Flatten);
        for &u in self.dense_units() {
            specs.extend([LayerSpec::Dense { units: u }, LayerSpec::Relu]);
        }
        specs
    }

    pub fn build<R: Rng + ?Sized>(self, input_shape: Shape, num_classes: usize, rng: &mut R) -> Result<Network, NetError> {
        let mut specs = self.specs();
        specs.extend([LayerSpec::Dense { units: num_classes }, LayerSpec::SoftmaxOutput]);
        Network::from_specs(input_shape, num_classes, &specs, rng)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topology::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Topology::ALL.iter().map(|t| t.name()).collect();
                format!("unknown topology {s:?}; expected one of {}", names.join(", "))
            })
    }
}
