use super::rectify::RectifyMap;
use super::resize::{resize_into, resized_dims};
use super::{CameraModel, Image, ImageDims, KernelError, ResizeParams};

/// Rectify then resize in one call. The undistorted intermediate is written
/// to `scratch` (device-local memory when offloaded) and never leaves it.
pub(crate) fn fused_into(
    map: &RectifyMap,
    src: &[u8],
    dims: ImageDims,
    p: &ResizeParams,
    scratch: &mut Vec<u8>,
    out: &mut [u8],
) -> Result<(), KernelError> {
    scratch.resize(dims.len(), 0);
    map.apply_into(src, dims, scratch)?;
    resize_into(scratch, dims, p, out)
}

/// Equivalent to `resize(&rectify(img, cam)?, p)`, byte for byte.
pub fn rectify_resize_fused(img: &Image, cam: &CameraModel, p: &ResizeParams) -> Result<Image, KernelError> {
    p.validate()?;
    let map = RectifyMap::new(cam)?;
    let od = resized_dims(img.dims(), p);
    let mut out = vec![0u8; od.len()];
    let mut scratch = Vec::new();
    fused_into(&map, img.data(), img.dims(), p, &mut scratch, &mut out)?;
    Image::from_dims(od, out)
}
