//! Scalar evaluators written from the rectification and resampling formulas
//! alone, shared by the oracle tests and the acceptance suite.

#![allow(dead_code)]

use flowbench::kernels::{CameraModel, Image};

/// Round half away from zero, saturating to a byte.
pub fn round_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear sample with neighbours clamped to the image.
pub fn sample(img: &Image, sx: f64, sy: f64, c: usize) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let (ax, ay) = (sx - x0, sy - y0);
    let px = |x: f64, y: f64| {
        let xi = (x as i64).clamp(0, w - 1) as usize;
        let yi = (y as i64).clamp(0, h - 1) as usize;
        img.pixel(xi, yi, c) as f64
    };
    let (a, b) = (px(x0, y0), px(x0 + 1.0, y0));
    let (cc, d) = (px(x0, y0 + 1.0), px(x0 + 1.0, y0 + 1.0));
    (1.0 - ax) * (1.0 - ay) * a + ax * (1.0 - ay) * b + (1.0 - ax) * ay * cc + ax * ay * d
}

pub fn brute_rectify(img: &Image, cam: &CameraModel) -> Vec<u8> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = Vec::with_capacity(w * h * ch);
    for v in 0..h {
        for u in 0..w {
            let x = (u as f64 - cam.cx) / cam.fx;
            let y = (v as f64 - cam.cy) / cam.fy;
            let r2 = x * x + y * y;
            let radial = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2 + cam.k3 * r2 * r2 * r2;
            let xd = x * radial + 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x);
            let yd = y * radial + cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y;
            let sx = cam.fx * xd + cam.cx;
            let sy = cam.fy * yd + cam.cy;
            let inside = (-0.5..=w as f64 - 0.5).contains(&sx) && (-0.5..=h as f64 - 0.5).contains(&sy);
            for c in 0..ch {
                out.push(if inside { round_byte(sample(img, sx, sy, c)) } else { 0 });
            }
        }
    }
    out
}

/// Bilinear resize with the pixel-centre convention.
pub fn brute_resize(img: &Image, ow: usize, oh: usize) -> Vec<u8> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = Vec::with_capacity(ow * oh * ch);
    for y in 0..oh {
        let sy = (y as f64 + 0.5) * (h as f64 / oh as f64) - 0.5;
        for x in 0..ow {
            let sx = (x as f64 + 0.5) * (w as f64 / ow as f64) - 0.5;
            for c in 0..ch {
                out.push(round_byte(sample(img, sx, sy, c)));
            }
        }
    }
    out
}
