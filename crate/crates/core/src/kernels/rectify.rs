use super::{to_byte, CameraModel, Image, ImageDims, KernelError, Tap};

/// Source coordinates for every output pixel of one camera model.
///
/// Building the map is the expensive part of undistortion; applying it is a
/// gather with bilinear weights. `rectify` builds and applies in one go,
/// nodes keep the map across frames.
#[derive(Debug, Clone)]
pub struct RectifyMap {
    camera: CameraModel,
    // None marks a source outside the frame.
    taps: Vec<Option<Tap>>,
}

/// Plumb-bob forward distortion of normalized coordinates.
#[inline]
fn distort(cam: &CameraModel, x: f64, y: f64) -> (f64, f64) {
    let r2 = x * x + y * y;
    let r4 = r2 * r2;
    let r6 = r4 * r2;
    let radial = 1.0 + cam.k1 * r2 + cam.k2 * r4 + cam.k3 * r6;
    let xd = x * radial + 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x);
    let yd = y * radial + cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y;
    (xd, yd)
}

impl RectifyMap {
    pub fn new(camera: &CameraModel) -> Result<RectifyMap, KernelError> {
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        // A source sample is inside the frame when it falls within the
        // footprint of the edge pixels.
        let (max_x, max_y) = (w as f64 - 0.5, h as f64 - 0.5);
        let dims = ImageDims::new(w, h, 1)?;
        let mut taps = Vec::with_capacity(w * h);
        for v in 0..h {
            let y = (v as f64 - camera.cy) / camera.fy;
            for u in 0..w {
                let x = (u as f64 - camera.cx) / camera.fx;
                let (xd, yd) = distort(camera, x, y);
                let sx = camera.fx * xd + camera.cx;
                let sy = camera.fy * yd + camera.cy;
                let inside = sx >= -0.5 && sx <= max_x && sy >= -0.5 && sy <= max_y;
                taps.push(inside.then(|| Tap::at(dims, sx, sy)));
            }
        }
        Ok(RectifyMap {
            camera: *camera,
            taps,
        })
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    fn check(&self, dims: ImageDims) -> Result<(), KernelError> {
        if dims.width != self.camera.width || dims.height != self.camera.height {
            return Err(KernelError::DimensionMismatch {
                image_w: dims.width,
                image_h: dims.height,
                cam_w: self.camera.width,
                cam_h: self.camera.height,
            });
        }
        Ok(())
    }

    /// Writes the undistorted image into `out` (same length as `src`).
    pub fn apply_into(&self, src: &[u8], dims: ImageDims, out: &mut [u8]) -> Result<(), KernelError> {
        self.check(dims)?;
        for buf_len in [src.len(), out.len()] {
            if buf_len != dims.len() {
                return Err(KernelError::SizeMismatch {
                    expected: dims.len(),
                    actual: buf_len,
                });
            }
        }
        let ch = dims.channels;
        for (tap, px) in self.taps.iter().zip(out.chunks_exact_mut(ch)) {
            match tap {
                None => px.fill(0),
                Some(tap) => {
                    for (c, slot) in px.iter_mut().enumerate() {
                        *slot = to_byte(tap.sample(src, ch, c));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, img: &Image) -> Result<Image, KernelError> {
        let mut out = vec![0u8; img.dims().len()];
        self.apply_into(img.data(), img.dims(), &mut out)?;
        Image::from_dims(img.dims(), out)
    }
}

/// Removes lens distortion: each output pixel is inverse-mapped through the
/// camera's distortion model and sampled bilinearly from `img`. Pixels whose
/// source falls outside the frame are black.
pub fn rectify(img: &Image, cam: &CameraModel) -> Result<Image, KernelError> {
    if img.width() != cam.width || img.height() != cam.height {
        return Err(KernelError::DimensionMismatch {
            image_w: img.width(),
            image_h: img.height(),
            cam_w: cam.width,
            cam_h: cam.height,
        });
    }
    RectifyMap::new(cam)?.apply(img)
}
