//! Pixel kernels of the perception pipeline: lens undistortion, bilinear or
//! nearest resize, and the fused composition of the two.
//!
//! All kernels are pure and deterministic. Interpolated values are rounded
//! half away from zero, the same rounding on every backend, so device and host
//! executions agree byte for byte.

mod fused;
pub mod pnm;
mod rectify;
mod registry;
mod resize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fused::rectify_resize_fused;
pub use rectify::{rectify, RectifyMap};
pub use registry::{Kernel, KernelArgs, KernelRegistry};
pub use resize::resize;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("image is {image_w}x{image_h} but camera is calibrated for {cam_w}x{cam_h}")]
    DimensionMismatch {
        image_w: usize,
        image_h: usize,
        cam_w: usize,
        cam_h: usize,
    },
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("invalid resize parameters: {0}")]
    InvalidResize(String),
    #[error("unknown kernel '{0}'")]
    UnknownKernel(String),
    #[error("buffer size mismatch: expected {expected} bytes, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("kernel '{0}' is missing argument '{1}'")]
    MissingArgument(&'static str, &'static str),
    #[error("malformed wire payload: {0}")]
    Wire(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageDims {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<ImageDims, KernelError> {
        if width == 0 || height == 0 {
            return Err(KernelError::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(KernelError::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        Ok(ImageDims {
            width,
            height,
            channels,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.pixels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major interleaved 8-bit image.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    dims: ImageDims,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.dims.width)
            .field("height", &self.dims.height)
            .field("channels", &self.dims.channels)
            .field("hash", &format_args!("{:016x}", crate::hash::fnv1a64(&self.data)))
            .finish()
    }
}

/// Bytes of the dimension header that precedes encoded pixels.
pub const IMAGE_HEADER_LEN: usize = 12;

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Image, KernelError> {
        let dims = ImageDims::new(width, height, channels)?;
        Image::from_dims(dims, data)
    }

    pub fn from_dims(dims: ImageDims, data: Vec<u8>) -> Result<Image, KernelError> {
        if data.len() != dims.len() {
            return Err(KernelError::SizeMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(Image { dims, data })
    }

    pub fn filled(dims: ImageDims, value: u8) -> Image {
        Image {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.dims.width + x) * self.dims.channels + c]
    }

    /// Wire form: little-endian u32 width, height, channels, then pixels.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + self.data.len());
        encode_dims(self.dims, &mut out);
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Image, KernelError> {
        let dims = decode_dims(bytes)?;
        Image::from_dims(dims, bytes[IMAGE_HEADER_LEN..].to_vec())
    }
}

pub fn encode_dims(dims: ImageDims, out: &mut Vec<u8>) {
    out.extend_from_slice(&(dims.width as u32).to_le_bytes());
    out.extend_from_slice(&(dims.height as u32).to_le_bytes());
    out.extend_from_slice(&(dims.channels as u32).to_le_bytes());
}

/// Reads the dimension header of an encoded image.
pub fn decode_dims(bytes: &[u8]) -> Result<ImageDims, KernelError> {
    if bytes.len() < IMAGE_HEADER_LEN {
        return Err(KernelError::Wire(format!(
            "image payload of {} bytes is shorter than its header",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    ImageDims::new(word(0), word(1), word(2))
}

/// Pixel payload of an encoded image.
pub fn encoded_pixels(bytes: &[u8]) -> &[u8] {
    &bytes[IMAGE_HEADER_LEN.min(bytes.len())..]
}

/// Pinhole intrinsics with plumb-bob (Brown-Conrady) distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
    pub width: usize,
    pub height: usize,
}

const CAMERA_WIRE_LEN: usize = 8 + 9 * 8;

impl CameraModel {
    /// Distortion-free camera centred on a `width`x`height` frame.
    pub fn ideal(width: usize, height: usize, focal: f64) -> CameraModel {
        CameraModel {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let coeffs = [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2,
        ];
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::InvalidCamera("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(KernelError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(KernelError::InvalidCamera("calibrated frame is empty".into()));
        }
        Ok(())
    }

    fn params(&self) -> [f64; 9] {
        [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2,
        ]
    }

    /// Bit-level identity, used to key cached rectification maps.
    pub fn same_bits(&self, other: &CameraModel) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .params()
                .iter()
                .zip(other.params())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CAMERA_WIRE_LEN);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<CameraModel, KernelError> {
        if bytes.len() != CAMERA_WIRE_LEN {
            return Err(KernelError::Wire(format!(
                "camera payload must be {CAMERA_WIRE_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let f = |k: usize| f64::from_le_bytes(bytes[8 + k * 8..16 + k * 8].try_into().unwrap());
        Ok(CameraModel {
            width: u(0),
            height: u(4),
            fx: f(0),
            fy: f(1),
            cx: f(2),
            cy: f(3),
            k1: f(4),
            k2: f(5),
            k3: f(6),
            p1: f(7),
            p2: f(8),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResizeParams {
    pub out_width: usize,
    pub out_height: usize,
    #[serde(default = "default_interpolation")]
    pub interpolation: Interpolation,
}

fn default_interpolation() -> Interpolation {
    Interpolation::Bilinear
}

impl ResizeParams {
    pub fn bilinear(out_width: usize, out_height: usize) -> ResizeParams {
        ResizeParams {
            out_width,
            out_height,
            interpolation: Interpolation::Bilinear,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.out_width == 0 || self.out_height == 0 {
            return Err(KernelError::InvalidResize(format!(
                "output must be at least 1x1, got {}x{}",
                self.out_width, self.out_height
            )));
        }
        Ok(())
    }
}

/// Rounds half away from zero and saturates to a byte.
#[inline]
pub(crate) fn to_byte(v: f64) -> u8 {
    // For v >= 0.5 the sum v + 0.5 never rounds across an integer, and the
    // cast saturates at 255. Below 0.5 the sum can round up to 1.0.
    let r = (v + 0.5) as u8;
    if v < 0.5 {
        0
    } else {
        r
    }
}

/// `x.floor()` for finite `|x| < 2^62`, without a libm call.
#[inline]
pub(crate) fn floor_fast(x: f64) -> f64 {
    let t = x as i64 as f64;
    if t > x {
        t - 1.0
    } else {
        t
    }
}

/// Neighbour indices and weights of one bilinear sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    /// Pixel index of the top-left neighbour.
    pub base: u32,
    /// Offset to the right neighbour (0 or 1) and to the row below (0 or width).
    pub dx: u32,
    pub dy: u32,
    pub ax: f64,
    pub ay: f64,
}

impl Tap {
    /// Taps for sampling at (sx, sy), with neighbours clamped to the image.
    #[inline]
    pub(crate) fn at(dims: ImageDims, sx: f64, sy: f64) -> Tap {
        let x0 = floor_fast(sx);
        let y0 = floor_fast(sy);
        let clamp_x = |x: f64| (x.max(0.0) as usize).min(dims.width - 1);
        let clamp_y = |y: f64| (y.max(0.0) as usize).min(dims.height - 1);
        let (xa, xb) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let (ya, yb) = (clamp_y(y0), clamp_y(y0 + 1.0));
        Tap {
            base: (ya * dims.width + xa) as u32,
            dx: (xb - xa) as u32,
            dy: ((yb - ya) * dims.width) as u32,
            ax: sx - x0,
            ay: sy - y0,
        }
    }

    #[inline]
    pub(crate) fn sample(&self, data: &[u8], channels: usize, c: usize) -> f64 {
        let i = self.base as usize;
        let (dx, dy) = (self.dx as usize, self.dy as usize);
        let at = |p: usize| data[p * channels + c] as f64;
        blend(self.ax, self.ay, at(i), at(i + dx), at(i + dy), at(i + dx + dy))
    }
}

/// Bilinear weighting of the four neighbours (top-left, top-right,
/// bottom-left, bottom-right).
#[inline]
fn blend(ax: f64, ay: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    (1.0 - ax) * (1.0 - ay) * a + ax * (1.0 - ay) * b + (1.0 - ax) * ay * c + ax * ay * d
}

/// Bilinear sample of channel `c` at (sx, sy) with neighbour indices clamped
/// to the image.
#[inline]
pub(crate) fn bilinear(data: &[u8], dims: ImageDims, sx: f64, sy: f64, c: usize) -> f64 {
    Tap::at(dims, sx, sy).sample(data, dims.channels, c)
}
