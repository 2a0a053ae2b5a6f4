use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{roles, topic, PipelineError, CAMERA_INFO, IMAGE_RAW};
use crate::graph::Graph;
use crate::kernels::{CameraModel, Image, ImageDims};

/// Synthetic camera settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub rate_hz: f64,
    pub seed: u64,
    pub camera: CameraModel,
    /// Frames to publish; unbounded when None.
    pub count: Option<u64>,
}

impl Default for SourceConfig {
    /// 640x480 mono at 10 Hz through a lens with mild barrel distortion.
    fn default() -> Self {
        SourceConfig {
            width: 640,
            height: 480,
            channels: 1,
            rate_hz: 10.0,
            seed: 42,
            camera: CameraModel {
                k1: -0.25,
                k2: 0.08,
                p1: 0.001,
                p2: -0.0005,
                ..CameraModel::ideal(640, 480, 500.0)
            },
            count: None,
        }
    }
}

impl SourceConfig {
    pub fn dims(&self) -> Result<ImageDims, PipelineError> {
        Ok(ImageDims::new(self.width, self.height, self.channels)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.dims()?;
        self.camera.validate()?;
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(PipelineError::InvalidSource(format!(
                "rate_hz must be > 0, got {}",
                self.rate_hz
            )));
        }
        if self.period_ns() == 0 {
            return Err(PipelineError::InvalidSource(format!("rate_hz {} is too high", self.rate_hz)));
        }
        if (self.camera.width, self.camera.height) != (self.width, self.height) {
            return Err(PipelineError::InvalidSource(format!(
                "camera calibrated for {}x{} but source is {}x{}",
                self.camera.width, self.camera.height, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn period_ns(&self) -> u64 {
        (1e9 / self.rate_hz).round() as u64
    }
}

/// Deterministic image generator: one ChaCha8 stream per seed, consumed
/// frame after frame.
#[derive(Debug, Clone)]
pub struct SyntheticCamera {
    dims: ImageDims,
    rng: ChaCha8Rng,
}

impl SyntheticCamera {
    pub fn new(cfg: &SourceConfig) -> Result<SyntheticCamera, PipelineError> {
        Ok(SyntheticCamera {
            dims: cfg.dims()?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn next_image(&mut self) -> Image {
        let mut data = vec![0u8; self.dims.len()];
        self.rng.fill_bytes(&mut data);
        Image::from_dims(self.dims, data).expect("buffer sized from dims")
    }

    /// The first `n` frames of `cfg`'s sequence.
    pub fn frames(cfg: &SourceConfig, n: usize) -> Result<Vec<Image>, PipelineError> {
        let mut cam = SyntheticCamera::new(cfg)?;
        Ok((0..n).map(|_| cam.next_image()).collect())
    }
}

/// Installs the two source timers. Frame k's camera_info goes out at k*P
/// and its image at k*P + P/2. The image is generated in the camera_info
/// callback so that generation stays outside the image's latency chain.
pub(crate) fn attach(graph: &Graph, cfg: &SourceConfig) -> Result<(), PipelineError> {
    let period = Duration::from_nanos(cfg.period_ns());
    let (info, raw) = (topic(CAMERA_INFO), topic(IMAGE_RAW));
    let camera = Bytes::from(cfg.camera.encode());
    let mut cam = SyntheticCamera::new(cfg)?;
    let pending: Arc<Mutex<VecDeque<Bytes>>> = Arc::default();

    let staged = pending.clone();
    graph.add_timer(roles::SOURCE, period, Duration::ZERO, cfg.count, move |ctx, _| {
        staged.lock().unwrap().push_back(cam.next_image().encode().into());
        ctx.publish(&info, camera.clone())?;
        Ok(())
    })?;
    graph.add_timer(roles::SOURCE, period, period / 2, cfg.count, move |ctx, tick| {
        let image = pending
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| format!("image {} was not staged", tick.index))?;
        ctx.publish(&raw, image)?;
        Ok(())
    })?;
    Ok(())
}
