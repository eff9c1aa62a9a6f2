//! RGB/HSV conversions and circular hue arithmetic shared by the dataset
//! generator and the evaluation metrics.
//!
//! Hue is normalized to [0, 1). Circular distance between hues is at most 0.5.

/// Convert HSV (all in [0,1]) to RGB in [0,1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Convert RGB in [0,1] to (hue, saturation, value), hue in [0,1).
/// A fully desaturated pixel returns hue 0 with saturation 0.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let v = max;
    let s = if max > 0.0 { chroma / max } else { 0.0 };
    if chroma <= 0.0 {
        return (0.0, 0.0, v);
    }
    let h = if max == r {
        ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    (h / 6.0, s, v)
}

/// Chroma (max − min channel) of an RGB pixel; the natural weight for a
/// circular mean of hues since gray pixels carry no hue information.
pub fn chroma(r: f64, g: f64, b: f64) -> f64 {
    r.max(g).max(b) - r.min(g).min(b)
}

/// Circular distance between two normalized hues, in [0, 0.5].
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Chroma-weighted circular mean hue of an iterator of RGB pixels.
///
/// Returns `None` when the total chroma vector is (numerically) zero, i.e.
/// the image is fully desaturated or hues cancel out.
pub fn mean_hue<I: IntoIterator<Item = [f64; 3]>>(pixels: I) -> Option<f64> {
    let mut x = 0.0;
    let mut y = 0.0;
    for [r, g, b] in pixels {
        let (h, _, _) = rgb_to_hsv(r, g, b);
        let w = chroma(r, g, b);
        let theta = h * std::f64::consts::TAU;
        x += w * theta.cos();
        y += w * theta.sin();
    }
    let norm = (x * x + y * y).sqrt();
    if norm < 1e-12 {
        return None;
    }
    Some((y.atan2(x) / std::f64::consts::TAU).rem_euclid(1.0))
}

/// Rec.601 luma of an RGB pixel.
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}
