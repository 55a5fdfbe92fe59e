//! Chain-topology inference models as per-layer FLOP and output-size tables.
//!
//! A split `s` in `0..=M` means the first `s` layers run on the device and
//! the remaining `M - s` run on the edge server. `s = 0` ships the raw input,
//! `s = M` keeps everything local.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FLOP cost of one convolution, pooling and activation operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCosts {
    pub conv: f64,
    pub pool: f64,
    pub relu: f64,
}

impl UnitCosts {
    /// Unit costs used by the built-in catalogs.
    pub const REFERENCE: UnitCosts = UnitCosts {
        conv: 1.0e7,
        pool: 2.0e5,
        relu: 1.0e5,
    };
}

/// Weighted operation count of a single layer.
pub fn layer_flops(
    conv_count: u32,
    pool_count: u32,
    relu_count: u32,
    unit_costs: UnitCosts,
) -> Result<f64> {
    if conv_count == 0 && pool_count == 0 && relu_count == 0 {
        return Err(Error::InvalidLayer { index: 0 });
    }
    for (name, v) in [
        ("conv unit cost", unit_costs.conv),
        ("pool unit cost", unit_costs.pool),
        ("relu unit cost", unit_costs.relu),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain {
                name,
                value: v,
                reason: "unit costs must be positive",
            });
        }
    }
    Ok(f64::from(conv_count) * unit_costs.conv
        + f64::from(pool_count) * unit_costs.pool
        + f64::from(relu_count) * unit_costs.relu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub conv_count: u32,
    pub pool_count: u32,
    pub relu_count: u32,
    pub flops: f64,
    /// Size of this layer's output, i.e. what is transmitted when the split
    /// falls right after it.
    pub out_size_bits: f64,
}

impl LayerProfile {
    pub fn from_counts(
        conv_count: u32,
        pool_count: u32,
        relu_count: u32,
        unit_costs: UnitCosts,
        out_size_bits: f64,
    ) -> Result<Self> {
        Ok(LayerProfile {
            conv_count,
            pool_count,
            relu_count,
            flops: layer_flops(conv_count, pool_count, relu_count, unit_costs)?,
            out_size_bits,
        })
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !(self.flops > 0.0 && self.flops.is_finite()) {
            return Err(Error::LayerValue {
                index,
                reason: format!("flops must be positive, got {}", self.flops),
            });
        }
        if !(self.out_size_bits >= 0.0 && self.out_size_bits.is_finite()) {
            return Err(Error::LayerValue {
                index,
                reason: format!(
                    "out_size_bits must be nonnegative, got {}",
                    self.out_size_bits
                ),
            });
        }
        Ok(())
    }
}

/// Immutable per-layer profile of a chain DNN with precomputed prefix sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    name: String,
    layers: Vec<LayerProfile>,
    raw_input_bits: f64,
    final_result_bits: f64,
    prefix_flops: Vec<f64>,
    total_flops: f64,
}

impl ModelProfile {
    pub fn new(
        name: impl Into<String>,
        layers: Vec<LayerProfile>,
        raw_input_bits: f64,
        final_result_bits: f64,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyModel);
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
        }
        if !(raw_input_bits > 0.0 && raw_input_bits.is_finite()) {
            return Err(Error::Domain {
                name: "raw_input_bits",
                value: raw_input_bits,
                reason: "must be positive",
            });
        }
        if !(final_result_bits > 0.0 && final_result_bits.is_finite()) {
            return Err(Error::Domain {
                name: "final_result_bits",
                value: final_result_bits,
                reason: "must be positive",
            });
        }
        let prefix_flops: Vec<f64> = layers
            .iter()
            .scan(0.0, |acc, l| {
                *acc += l.flops;
                Some(*acc)
            })
            .collect();
        let total_flops = *prefix_flops.last().expect("nonempty");
        Ok(ModelProfile {
            name: name.into(),
            layers,
            raw_input_bits,
            final_result_bits,
            prefix_flops,
            total_flops,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerProfile] {
        &self.layers
    }

    /// Number of layers `M`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn prefix_flops(&self) -> &[f64] {
        &self.prefix_flops
    }

    pub fn total_flops(&self) -> f64 {
        self.total_flops
    }

    pub fn raw_input_bits(&self) -> f64 {
        self.raw_input_bits
    }

    pub fn final_result_bits(&self) -> f64 {
        self.final_result_bits
    }

    pub fn check_split(&self, split: usize) -> Result<()> {
        if split > self.num_layers() {
            return Err(Error::SplitOutOfRange {
                split,
                layers: self.num_layers(),
            });
        }
        Ok(())
    }

    /// FLOPs of the first `split` layers.
    pub fn on_device_flops(&self, split: usize) -> Result<f64> {
        self.check_split(split)?;
        Ok(if split == 0 {
            0.0
        } else {
            self.prefix_flops[split - 1]
        })
    }

    pub fn on_server_flops(&self, split: usize) -> Result<f64> {
        self.check_split(split)?;
        if split == self.num_layers() {
            return Ok(0.0);
        }
        Ok(self.total_flops - self.on_device_flops(split)?)
    }

    /// Bits crossing the device/server boundary at `split`: the raw input for
    /// `split = 0`, otherwise the output of layer `split`.
    pub fn intermediate_bits(&self, split: usize) -> Result<f64> {
        self.check_split(split)?;
        Ok(if split == 0 {
            self.raw_input_bits
        } else {
            self.layers[split - 1].out_size_bits
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        file.build()
    }
}

/// On-disk catalog record. `flops` may be omitted per layer, in which case
/// it is derived from the operation counts and `unit_costs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub raw_input_bits: f64,
    pub final_result_bits: f64,
    #[serde(default)]
    pub unit_costs: Option<UnitCosts>,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    #[serde(default)]
    pub conv: u32,
    #[serde(default)]
    pub pool: u32,
    #[serde(default)]
    pub relu: u32,
    #[serde(default)]
    pub flops: Option<f64>,
    pub out_size_bits: f64,
}

impl ModelFile {
    pub fn build(&self) -> Result<ModelProfile> {
        let units = self.unit_costs.unwrap_or(UnitCosts::REFERENCE);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let flops = match rec.flops {
                    Some(f) => f,
                    None => {
                        layer_flops(rec.conv, rec.pool, rec.relu, units).map_err(|e| match e {
                            Error::InvalidLayer { .. } => Error::InvalidLayer { index: i },
                            other => other,
                        })?
                    }
                };
                Ok(LayerProfile {
                    conv_count: rec.conv,
                    pool_count: rec.pool,
                    relu_count: rec.relu,
                    flops,
                    out_size_bits: rec.out_size_bits,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ModelProfile::new(
            self.name.clone(),
            layers,
            self.raw_input_bits,
            self.final_result_bits,
        )
    }
}

/// 224x224 RGB image at 8 bits per channel.
const IMAGE_INPUT_BITS: f64 = 1_204_224.0;

// (conv, pool, relu, out_size_bits). FLOPs come from UnitCosts::REFERENCE.
type Row = (u32, u32, u32, f64);

const NIN: [Row; 9] = [
    (28, 0, 10, 2_322_432.0),
    (6, 0, 10, 2_322_432.0),
    (0, 12, 0, 1_399_680.0),
    (40, 0, 8, 1_492_992.0),
    (8, 0, 8, 1_119_744.0),
    (0, 8, 0, 519_168.0),
    (30, 0, 6, 418_176.0),
    (5, 0, 4, 160_000.0),
    (0, 2, 0, 8_000.0),
];

const YOLOV2: [Row; 17] = [
    (9, 0, 4, 3_211_264.0),
    (0, 10, 0, 802_816.0),
    (46, 0, 4, 1_605_632.0),
    (0, 6, 0, 401_408.0),
    (46, 0, 4, 802_816.0),
    (5, 0, 2, 401_408.0),
    (46, 0, 4, 802_816.0),
    (0, 3, 0, 200_704.0),
    (46, 0, 2, 401_408.0),
    (5, 0, 1, 200_704.0),
    (46, 0, 2, 401_408.0),
    (0, 2, 0, 100_352.0),
    (46, 0, 1, 200_704.0),
    (5, 0, 1, 100_352.0),
    (46, 0, 1, 200_704.0),
    (92, 0, 1, 200_704.0),
    (4, 0, 0, 62_720.0),
];

const VGG16: [Row; 24] = [
    (17, 0, 32, 25_690_112.0),
    (370, 0, 32, 25_690_112.0),
    (0, 32, 0, 6_422_528.0),
    (185, 0, 16, 12_845_056.0),
    (370, 0, 16, 12_845_056.0),
    (0, 16, 0, 3_211_264.0),
    (185, 0, 8, 6_422_528.0),
    (370, 0, 8, 6_422_528.0),
    (370, 0, 8, 6_422_528.0),
    (0, 8, 0, 1_605_632.0),
    (185, 0, 4, 3_211_264.0),
    (370, 0, 4, 3_211_264.0),
    (370, 0, 4, 3_211_264.0),
    (0, 4, 0, 802_816.0),
    (92, 0, 1, 802_816.0),
    (92, 0, 1, 802_816.0),
    (92, 0, 1, 802_816.0),
    (0, 1, 0, 200_704.0),
    (20, 0, 1, 32_768.0),
    (0, 0, 1, 32_768.0),
    (3, 0, 1, 32_768.0),
    (0, 0, 1, 32_768.0),
    (1, 0, 0, 8_000.0),
    (0, 0, 1, 8_000.0),
];

pub const CATALOG_NAMES: [&str; 3] = ["NiN", "YOLOv2", "VGG16"];

/// Built-in synthetic profile by name (`NiN`, `YOLOv2`, `VGG16`).
pub fn synthetic_catalog(name: &str) -> Result<ModelProfile> {
    let (rows, final_bits): (&[Row], f64) = match name {
        "NiN" => (&NIN, 32_000.0),
        "YOLOv2" => (&YOLOV2, 16_000.0),
        "VGG16" => (&VGG16, 32_000.0),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    let layers = rows
        .iter()
        .map(|&(c, p, r, out)| LayerProfile::from_counts(c, p, r, UnitCosts::REFERENCE, out))
        .collect::<Result<Vec<_>>>()?;
    ModelProfile::new(name, layers, IMAGE_INPUT_BITS, final_bits)
}
