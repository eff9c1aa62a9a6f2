//! Bicubic (Catmull-Rom, a = -0.5) downsampling with reflect padding.
//!
//! Downsampling widens the kernel by the scale factor (the usual
//! antialiasing convention) and renormalizes the tap weights, so a constant
//! image stays exactly constant. The two passes are separable; the product
//! of per-axis normalized weights equals the normalized 2D product.

use crate::image::{reflect_index, ImageBuf};

const A: f64 = -0.5;

/// Catmull-Rom cubic kernel, support [-2, 2].
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * (x.powi(3) - 5.0 * x.powi(2) + 8.0 * x - 4.0)
    } else {
        0.0
    }
}

/// Tap positions and normalized weights for one output index along an axis.
fn taps(out_idx: usize, scale: usize, len: usize) -> (i64, Vec<f64>) {
    let k = scale as f64;
    let center = (out_idx as f64 + 0.5) * k - 0.5;
    let radius = 2.0 * k;
    let first = (center - radius).ceil() as i64;
    let last = (center + radius).floor() as i64;
    let mut weights = Vec::with_capacity((last - first + 1) as usize);
    let mut sum = 0.0;
    for j in first..=last {
        let w = cubic_kernel((j as f64 - center) / k);
        weights.push(w);
        sum += w;
    }
    for w in &mut weights {
        *w /= sum;
    }
    let _ = len;
    (first, weights)
}

/// Downsample each side by `scale` (side must be divisible by `scale`).
pub fn downsample(img: &ImageBuf, scale: usize) -> ImageBuf {
    assert!(scale >= 1);
    let (h, w) = (img.height(), img.width());
    assert!(h % scale == 0 && w % scale == 0, "side not divisible by scale");
    let (oh, ow) = (h / scale, w / scale);

    // horizontal pass: h x ow
    let mut mid = ImageBuf::zeros(h, ow);
    for ox in 0..ow {
        let (first, weights) = taps(ox, scale, w);
        for y in 0..h {
            let mut acc = [0.0; 3];
            for (t, &wt) in weights.iter().enumerate() {
                let sx = reflect_index(first + t as i64, w);
                let px = img.get(y, sx);
                for c in 0..3 {
                    acc[c] += wt * px[c];
                }
            }
            mid.set(y, ox, acc);
        }
    }

    // vertical pass: oh x ow
    let mut out = ImageBuf::zeros(oh, ow);
    for oy in 0..oh {
        let (first, weights) = taps(oy, scale, h);
        for x in 0..ow {
            let mut acc = [0.0; 3];
            for (t, &wt) in weights.iter().enumerate() {
                let sy = reflect_index(first + t as i64, h);
                let px = mid.get(sy, x);
                for c in 0..3 {
                    acc[c] += wt * px[c];
                }
            }
            out.set(oy, x, acc);
        }
    }
    out
}
