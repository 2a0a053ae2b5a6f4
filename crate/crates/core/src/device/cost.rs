use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DeviceError;

/// Timing parameters of the simulated platform, in nanoseconds.
///
/// The device fields drive transfers, kernel launches and the streaming
/// queue. The host fields time the same kernels executed by host-placed
/// nodes and the per-layer overhead of the layered message path. Rates may be
/// fractional; every charged duration is rounded to whole nanoseconds once,
/// per operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    #[serde(default)]
    pub h2d_fixed_ns: u64,
    #[serde(default)]
    pub h2d_per_byte_ns: f64,
    #[serde(default)]
    pub d2h_fixed_ns: u64,
    #[serde(default)]
    pub d2h_per_byte_ns: f64,
    #[serde(default)]
    pub launch_fixed_ns: u64,
    /// Device kernel cost per output pixel, by kernel name.
    #[serde(default)]
    pub per_pixel_ns: BTreeMap<String, f64>,
    #[serde(default = "default_beat_bytes")]
    pub stream_beat_bytes: usize,
    #[serde(default)]
    pub stream_per_beat_ns: f64,
    /// Host kernel cost per output pixel, by kernel name.
    #[serde(default)]
    pub host_per_pixel_ns: BTreeMap<String, f64>,
    /// Injected cost of each client/core/middleware layer crossing.
    #[serde(default)]
    pub layer_fixed_ns: u64,
    #[serde(default)]
    pub layer_per_byte_ns: f64,
}

fn default_beat_bytes() -> usize {
    64
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            h2d_fixed_ns: 0,
            h2d_per_byte_ns: 0.0,
            d2h_fixed_ns: 0,
            d2h_per_byte_ns: 0.0,
            launch_fixed_ns: 0,
            per_pixel_ns: BTreeMap::new(),
            stream_beat_bytes: default_beat_bytes(),
            stream_per_beat_ns: 0.0,
            host_per_pixel_ns: BTreeMap::new(),
            layer_fixed_ns: 0,
            layer_per_byte_ns: 0.0,
        }
    }
}

/// Presets shipped with the crate, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("paper-calibrated", include_str!("../../presets/paper-calibrated.toml")),
    ("messaging-bottleneck", include_str!("../../presets/messaging-bottleneck.toml")),
    ("zero", include_str!("../../presets/zero.toml")),
];

#[inline]
fn scaled(rate: f64, n: u64) -> u64 {
    (rate * n as f64).round() as u64
}

impl CostModel {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let rates = [
            ("h2d_per_byte_ns", self.h2d_per_byte_ns),
            ("d2h_per_byte_ns", self.d2h_per_byte_ns),
            ("stream_per_beat_ns", self.stream_per_beat_ns),
            ("layer_per_byte_ns", self.layer_per_byte_ns),
        ];
        let per_pixel = self
            .per_pixel_ns
            .iter()
            .chain(&self.host_per_pixel_ns)
            .map(|(k, v)| (k.as_str(), *v));
        for (name, v) in rates.into_iter().chain(per_pixel) {
            if !v.is_finite() || v < 0.0 {
                return Err(DeviceError::InvalidCost(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.stream_beat_bytes == 0 {
            return Err(DeviceError::InvalidCost("stream_beat_bytes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<CostModel, DeviceError> {
        let model: CostModel =
            toml::from_str(text).map_err(|e| DeviceError::InvalidCost(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<CostModel, DeviceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DeviceError::InvalidCost(format!("{}: {e}", path.display())))?;
        CostModel::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<CostModel, DeviceError> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| DeviceError::UnknownPreset(name.to_string()))?;
        CostModel::from_toml_str(text)
    }

    /// A preset name, or a path to a preset file.
    pub fn resolve(name_or_path: &str) -> Result<CostModel, DeviceError> {
        match CostModel::preset(name_or_path) {
            Err(DeviceError::UnknownPreset(_)) if Path::new(name_or_path).exists() => {
                CostModel::load(Path::new(name_or_path))
            }
            other => other,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("cost model serializes")
    }

    pub fn h2d_ns(&self, bytes: usize) -> u64 {
        self.h2d_fixed_ns + scaled(self.h2d_per_byte_ns, bytes as u64)
    }

    pub fn d2h_ns(&self, bytes: usize) -> u64 {
        self.d2h_fixed_ns + scaled(self.d2h_per_byte_ns, bytes as u64)
    }

    pub fn launch_ns(&self, kernel: &str, out_pixels: usize) -> u64 {
        let rate = self.per_pixel_ns.get(kernel).copied().unwrap_or(0.0);
        self.launch_fixed_ns + scaled(rate, out_pixels as u64)
    }

    pub fn stream_ns(&self, beats: usize) -> u64 {
        scaled(self.stream_per_beat_ns, beats as u64)
    }

    pub fn host_kernel_ns(&self, kernel: &str, out_pixels: usize) -> u64 {
        let rate = self.host_per_pixel_ns.get(kernel).copied().unwrap_or(0.0);
        scaled(rate, out_pixels as u64)
    }

    pub fn layer_ns(&self, bytes: usize) -> u64 {
        self.layer_fixed_ns + scaled(self.layer_per_byte_ns, bytes as u64)
    }
}
