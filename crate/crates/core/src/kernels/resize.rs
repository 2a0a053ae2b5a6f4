use super::{bilinear, to_byte, Image, ImageDims, Interpolation, KernelError, ResizeParams};

/// Output dimensions of a resize of `input`.
pub(crate) fn resized_dims(input: ImageDims, p: &ResizeParams) -> ImageDims {
    ImageDims {
        width: p.out_width,
        height: p.out_height,
        channels: input.channels,
    }
}

/// Pixel-centre aligned source coordinate of output index `dst`.
#[inline]
fn source_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

pub(crate) fn resize_into(src: &[u8], dims: ImageDims, p: &ResizeParams, out: &mut [u8]) -> Result<(), KernelError> {
    p.validate()?;
    let od = resized_dims(dims, p);
    if src.len() != dims.len() {
        return Err(KernelError::SizeMismatch {
            expected: dims.len(),
            actual: src.len(),
        });
    }
    if out.len() != od.len() {
        return Err(KernelError::SizeMismatch {
            expected: od.len(),
            actual: out.len(),
        });
    }
    let sx_scale = dims.width as f64 / od.width as f64;
    let sy_scale = dims.height as f64 / od.height as f64;
    let ch = dims.channels;
    match p.interpolation {
        Interpolation::Bilinear => {
            let xs: Vec<f64> = (0..od.width).map(|x| source_coord(x, sx_scale)).collect();
            for y in 0..od.height {
                let sy = source_coord(y, sy_scale);
                let row = &mut out[y * od.width * ch..(y + 1) * od.width * ch];
                for (x, &sx) in xs.iter().enumerate() {
                    for c in 0..ch {
                        row[x * ch + c] = to_byte(bilinear(src, dims, sx, sy, c));
                    }
                }
            }
        }
        Interpolation::Nearest => {
            let pick = |dst: usize, scale: f64, limit: usize| {
                (((dst as f64 + 0.5) * scale).floor() as usize).min(limit - 1)
            };
            let xs: Vec<usize> = (0..od.width).map(|x| pick(x, sx_scale, dims.width)).collect();
            for y in 0..od.height {
                let sy = pick(y, sy_scale, dims.height);
                for (x, &sx) in xs.iter().enumerate() {
                    let s = (sy * dims.width + sx) * ch;
                    let d = (y * od.width + x) * ch;
                    out[d..d + ch].copy_from_slice(&src[s..s + ch]);
                }
            }
        }
    }
    Ok(())
}

/// Resamples `img` to the requested size. Source coordinates follow the
/// pixel-centre convention `src = (dst + 0.5) * in / out - 0.5`; bilinear
/// sampling clamps neighbours at the edges.
pub fn resize(img: &Image, p: &ResizeParams) -> Result<Image, KernelError> {
    p.validate()?;
    let od = resized_dims(img.dims(), p);
    let mut out = vec![0u8; od.len()];
    resize_into(img.data(), img.dims(), p, &mut out)?;
    Image::from_dims(od, out)
}
