use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::fused::fused_into;
use super::rectify::RectifyMap;
use super::resize::{resize_into, resized_dims};
use super::{CameraModel, ImageDims, KernelError, ResizeParams};

/// Launch arguments shared by all kernels; each kernel reads what it needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelArgs {
    pub input: ImageDims,
    pub camera: Option<CameraModel>,
    pub resize: Option<ResizeParams>,
}

impl KernelArgs {
    pub fn new(input: ImageDims) -> KernelArgs {
        KernelArgs {
            input,
            camera: None,
            resize: None,
        }
    }

    pub fn with_camera(mut self, camera: CameraModel) -> KernelArgs {
        self.camera = Some(camera);
        self
    }

    pub fn with_resize(mut self, resize: ResizeParams) -> KernelArgs {
        self.resize = Some(resize);
        self
    }
}

/// A named pixel computation that a host node or a device can execute.
pub trait Kernel: Send + Sync {
    fn name(&self) -> &'static str;

    fn output_dims(&self, args: &KernelArgs) -> Result<ImageDims, KernelError>;

    fn run(&self, inputs: &[&[u8]], args: &KernelArgs, out: &mut [u8]) -> Result<(), KernelError>;
}

fn single_input<'a>(name: &'static str, inputs: &[&'a [u8]]) -> Result<&'a [u8], KernelError> {
    match inputs {
        [one] => Ok(one),
        _ => Err(KernelError::MissingArgument(name, "exactly one input buffer")),
    }
}

/// Keeps the last rectification map so per-frame launches skip rebuilding it.
#[derive(Default)]
struct MapCache(Mutex<Option<Arc<RectifyMap>>>);

impl MapCache {
    fn get(&self, camera: &CameraModel) -> Result<Arc<RectifyMap>, KernelError> {
        let mut slot = self.0.lock().unwrap();
        if let Some(map) = slot.as_ref() {
            if map.camera().same_bits(camera) {
                return Ok(map.clone());
            }
        }
        let map = Arc::new(RectifyMap::new(camera)?);
        *slot = Some(map.clone());
        Ok(map)
    }
}

#[derive(Default)]
pub struct RectifyKernel {
    maps: MapCache,
}

impl Kernel for RectifyKernel {
    fn name(&self) -> &'static str {
        "rectify"
    }

    fn output_dims(&self, args: &KernelArgs) -> Result<ImageDims, KernelError> {
        args.camera.ok_or(KernelError::MissingArgument("rectify", "camera"))?;
        Ok(args.input)
    }

    fn run(&self, inputs: &[&[u8]], args: &KernelArgs, out: &mut [u8]) -> Result<(), KernelError> {
        let camera = args.camera.ok_or(KernelError::MissingArgument("rectify", "camera"))?;
        let src = single_input("rectify", inputs)?;
        self.maps.get(&camera)?.apply_into(src, args.input, out)
    }
}

#[derive(Default)]
pub struct ResizeKernel;

impl Kernel for ResizeKernel {
    fn name(&self) -> &'static str {
        "resize"
    }

    fn output_dims(&self, args: &KernelArgs) -> Result<ImageDims, KernelError> {
        let p = args.resize.ok_or(KernelError::MissingArgument("resize", "resize"))?;
        p.validate()?;
        Ok(resized_dims(args.input, &p))
    }

    fn run(&self, inputs: &[&[u8]], args: &KernelArgs, out: &mut [u8]) -> Result<(), KernelError> {
        let p = args.resize.ok_or(KernelError::MissingArgument("resize", "resize"))?;
        resize_into(single_input("resize", inputs)?, args.input, &p, out)
    }
}

#[derive(Default)]
pub struct FusedKernel {
    maps: MapCache,
    scratch: Mutex<Vec<u8>>,
}

impl Kernel for FusedKernel {
    fn name(&self) -> &'static str {
        "rectify_resize"
    }

    fn output_dims(&self, args: &KernelArgs) -> Result<ImageDims, KernelError> {
        args.camera
            .ok_or(KernelError::MissingArgument("rectify_resize", "camera"))?;
        let p = args
            .resize
            .ok_or(KernelError::MissingArgument("rectify_resize", "resize"))?;
        p.validate()?;
        Ok(resized_dims(args.input, &p))
    }

    fn run(&self, inputs: &[&[u8]], args: &KernelArgs, out: &mut [u8]) -> Result<(), KernelError> {
        let camera = args
            .camera
            .ok_or(KernelError::MissingArgument("rectify_resize", "camera"))?;
        let p = args
            .resize
            .ok_or(KernelError::MissingArgument("rectify_resize", "resize"))?;
        let map = self.maps.get(&camera)?;
        let mut scratch = self.scratch.lock().unwrap();
        fused_into(
            &map,
            single_input("rectify_resize", inputs)?,
            args.input,
            &p,
            &mut scratch,
            out,
        )
    }
}

/// Kernels by name.
#[derive(Clone, Default)]
pub struct KernelRegistry {
    kernels: BTreeMap<String, Arc<dyn Kernel>>,
}

impl std::fmt::Debug for KernelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.kernels.keys()).finish()
    }
}

impl KernelRegistry {
    pub fn empty() -> KernelRegistry {
        KernelRegistry::default()
    }

    /// `rectify`, `resize` and `rectify_resize`.
    pub fn builtin() -> KernelRegistry {
        let mut r = KernelRegistry::empty();
        r.register(Arc::new(RectifyKernel::default()));
        r.register(Arc::new(ResizeKernel));
        r.register(Arc::new(FusedKernel::default()));
        r
    }

    pub fn register(&mut self, kernel: Arc<dyn Kernel>) {
        self.kernels.insert(kernel.name().to_string(), kernel);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Kernel>, KernelError> {
        self.kernels
            .get(name)
            .cloned()
            .ok_or_else(|| KernelError::UnknownKernel(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kernels.keys().map(String::as_str)
    }

    /// Convenience: run `name` into a freshly allocated buffer.
    pub fn run(&self, name: &str, input: &[u8], args: &KernelArgs) -> Result<Vec<u8>, KernelError> {
        let kernel = self.get(name)?;
        let od = kernel.output_dims(args)?;
        let mut out = vec![0u8; od.len()];
        kernel.run(&[input], args, &mut out)?;
        Ok(out)
    }
}
