use std::collections::BTreeMap;
use std::sync::Arc;

use super::{CostModel, Device, DeviceError, DeviceId};
use crate::kernels::KernelRegistry;
use crate::tracer::Tracer;

/// An execution target for offloaded kernels.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn description(&self) -> &str;

    /// The costs a device of this backend runs with, given the configured
    /// platform model.
    fn device_costs(&self, platform: &CostModel) -> CostModel;

    fn kernels(&self) -> KernelRegistry {
        KernelRegistry::builtin()
    }

    fn open(&self, id: DeviceId, platform: &CostModel, tracer: Tracer) -> Arc<Device> {
        Arc::new(Device::new(
            id,
            self.name(),
            self.device_costs(platform),
            self.kernels(),
            tracer,
        ))
    }
}

/// Runs "device" kernels on the host: transfers and queues are free and
/// kernels cost what they cost on the host.
pub struct CpuBackend;

impl Backend for CpuBackend {
    fn name(&self) -> &str {
        "cpu"
    }

    fn description(&self) -> &str {
        "host execution, no transfer cost"
    }

    fn device_costs(&self, platform: &CostModel) -> CostModel {
        CostModel {
            per_pixel_ns: platform.host_per_pixel_ns.clone(),
            stream_beat_bytes: platform.stream_beat_bytes,
            host_per_pixel_ns: platform.host_per_pixel_ns.clone(),
            layer_fixed_ns: platform.layer_fixed_ns,
            layer_per_byte_ns: platform.layer_per_byte_ns,
            ..CostModel::default()
        }
    }
}

/// The cost-modeled accelerator.
pub struct SimDevBackend;

impl Backend for SimDevBackend {
    fn name(&self) -> &str {
        "simdev"
    }

    fn description(&self) -> &str {
        "simulated accelerator timed by the cost model"
    }

    fn device_costs(&self, platform: &CostModel) -> CostModel {
        platform.clone()
    }
}

#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn Backend>>,
}

impl BackendRegistry {
    pub fn empty() -> BackendRegistry {
        BackendRegistry::default()
    }

    /// `cpu` and `simdev`.
    pub fn builtin() -> BackendRegistry {
        let mut r = BackendRegistry::empty();
        r.register(Arc::new(CpuBackend)).expect("fresh registry");
        r.register(Arc::new(SimDevBackend)).expect("fresh registry");
        r
    }

    pub fn register(&mut self, backend: Arc<dyn Backend>) -> Result<(), DeviceError> {
        let name = backend.name().to_string();
        if self.backends.contains_key(&name) {
            return Err(DeviceError::DuplicateBackend(name));
        }
        self.backends.insert(name, backend);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Backend>, DeviceError> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| DeviceError::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}
