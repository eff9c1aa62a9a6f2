//! Procedural "geo-world" tiles.
//!
//! Every tile is a pure function of (params, lon, lat). The base hue follows
//! a known analytic map of the coordinates while buildings, roads and
//! texture noise vary only saturation and value, so the chroma-weighted mean
//! hue of any tile recovers the map value almost exactly. That gives
//! location conditioning a measurable ground truth.

use crate::color::hsv_to_rgb;
use crate::error::{Error, Result};
use crate::image::ImageBuf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoWorldParams {
    /// Spatial period (degrees of longitude) of the hue cycle.
    pub hue_period_deg: f64,
    /// Number of distinct structure layouts ("texture families").
    pub texture_families: u32,
    pub seed: u64,
    pub hr_size: usize,
    pub scale_factor: usize,
}

impl Default for GeoWorldParams {
    fn default() -> Self {
        GeoWorldParams {
            hue_period_deg: 90.0,
            texture_families: 3,
            seed: 0,
            hr_size: 256,
            scale_factor: 8,
        }
    }
}

/// The analytic location -> hue map: one full hue cycle per `period` degrees
/// of longitude, half a cycle per `period` degrees of latitude.
pub fn analytic_hue(lon: f64, lat: f64, period: f64) -> f64 {
    (lon / period + lat / (2.0 * period)).rem_euclid(1.0)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a tile's identity into one RNG seed.
fn tile_seed(seed: u64, lon: f64, lat: f64) -> u64 {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state ^= lon.to_bits();
    let b = splitmix64(&mut state);
    state ^= lat.to_bits();
    let c = splitmix64(&mut state);
    a ^ b.rotate_left(17) ^ c.rotate_left(41)
}

pub fn check_coordinates(lon: f64, lat: f64) -> Result<()> {
    if !(-180.0..180.0).contains(&lon) {
        return Err(Error::invalid_input(format!(
            "longitude {lon} outside [-180, 180)"
        )));
    }
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::invalid_input(format!(
            "latitude {lat} outside [-90, 90]"
        )));
    }
    Ok(())
}

/// Render the HR tile at a coordinate. Same inputs produce identical bytes.
pub fn generate_geoworld_tile(params: &GeoWorldParams, lon: f64, lat: f64) -> Result<ImageBuf> {
    check_coordinates(lon, lat)?;
    let n = params.hr_size;
    let hue = analytic_hue(lon, lat, params.hue_period_deg);
    let mut rng = ChaCha8Rng::seed_from_u64(tile_seed(params.seed, lon, lat));

    // smooth value field + fine texture noise, all at the base hue
    let base_sat: f64 = rng.random_range(0.55..0.75);
    let fx = rng.random_range(0.5..2.0);
    let fy = rng.random_range(0.5..2.0);
    let phase_x = rng.random_range(0.0..std::f64::consts::TAU);
    let phase_y = rng.random_range(0.0..std::f64::consts::TAU);

    let mut sat = vec![base_sat; n * n];
    let mut val = vec![0.0f64; n * n];
    for y in 0..n {
        for x in 0..n {
            let u = x as f64 / n as f64;
            let v = y as f64 / n as f64;
            let field = (std::f64::consts::TAU * (fx * u) + phase_x).sin()
                * (std::f64::consts::TAU * (fy * v) + phase_y).sin();
            val[y * n + x] = 0.55 + 0.10 * field;
        }
    }
    // "vegetation": white value noise
    for v in val.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }

    let family = rng.random_range(0..params.texture_families.max(1));

    // "buildings": gray rectangles (saturation near zero keeps hue intact)
    let building_count = 3 + family as usize * 2 + rng.random_range(0..3);
    for _ in 0..building_count {
        let bw = rng.random_range(n / 16..n / 5).max(2);
        let bh = rng.random_range(n / 16..n / 5).max(2);
        let x0 = rng.random_range(0..n - bw);
        let y0 = rng.random_range(0..n - bh);
        let bval = rng.random_range(0.3..0.9);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                sat[y * n + x] = 0.03;
                val[y * n + x] = bval;
            }
        }
    }

    // "roads": dark straight strips across the tile
    let road_count = 1 + rng.random_range(0..2) + (family as usize % 2);
    for _ in 0..road_count {
        let thickness = rng.random_range(2..4.max(n / 48 + 2));
        let pos = rng.random_range(0..n - thickness);
        let horizontal = rng.random_bool(0.5);
        for t in 0..thickness {
            for s in 0..n {
                let (y, x) = if horizontal { (pos + t, s) } else { (s, pos + t) };
                sat[y * n + x] = 0.04;
                val[y * n + x] = 0.18;
            }
        }
    }

    let mut img = ImageBuf::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let s = sat[y * n + x].clamp(0.0, 1.0);
            let v = val[y * n + x].clamp(0.0, 1.0);
            img.set(y, x, hsv_to_rgb(hue, s, v));
        }
    }
    Ok(img)
}

/// Bicubic downsample by `scale_factor`, Gaussian pixel noise, clamp to [0,1].
pub fn degrade(hr: &ImageBuf, scale_factor: usize, noise_sigma: f64, seed: u64) -> Result<ImageBuf> {
    if scale_factor == 0 {
        return Err(Error::invalid_input("scale factor must be positive"));
    }
    if hr.height() % scale_factor != 0 || hr.width() % scale_factor != 0 {
        return Err(Error::invalid_input(format!(
            "image side {}x{} not divisible by scale factor {scale_factor}",
            hr.height(),
            hr.width()
        )));
    }
    if noise_sigma < 0.0 {
        return Err(Error::invalid_input("noise sigma must be >= 0"));
    }
    let mut lr = super::bicubic::downsample(hr, scale_factor);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, noise_sigma).unwrap();
        for v in lr.data_mut() {
            *v += rand_distr::Distribution::sample(&normal, &mut rng);
        }
    }
    lr.clamp_in_place();
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{hue_distance, mean_hue};

    #[test]
    fn tile_generation_is_deterministic() {
        let params = GeoWorldParams {
            hr_size: 64,
            ..Default::default()
        };
        let a = generate_geoworld_tile(&params, 0.0, 0.0).unwrap();
        let b = generate_geoworld_tile(&params, 0.0, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tile_values_in_unit_range() {
        let params = GeoWorldParams {
            hr_size: 64,
            ..Default::default()
        };
        let img = generate_geoworld_tile(&params, 12.3, -45.6).unwrap();
        assert!(img.min_value() >= 0.0);
        assert!(img.max_value() <= 1.0);
    }

    #[test]
    fn out_of_range_coordinates_rejected() {
        let params = GeoWorldParams::default();
        assert!(generate_geoworld_tile(&params, 180.0, 0.0).is_err());
        assert!(generate_geoworld_tile(&params, 0.0, 91.0).is_err());
    }

    #[test]
    fn mean_hue_recovers_analytic_map() {
        let params = GeoWorldParams {
            hr_size: 64,
            hue_period_deg: 360.0,
            ..Default::default()
        };
        for &(lon, lat) in &[(0.0, 0.0), (90.0, 10.0), (-120.0, 55.0), (20.0, -80.0)] {
            let img = generate_geoworld_tile(&params, lon, lat).unwrap();
            let extracted = mean_hue(img.pixels()).unwrap();
            let expected = analytic_hue(lon, lat, 360.0);
            assert!(
                hue_distance(extracted, expected) <= 0.02,
                "hue at ({lon},{lat}): extracted {extracted}, expected {expected}"
            );
        }
    }

    #[test]
    fn half_period_shift_moves_hue_half_cycle() {
        let params = GeoWorldParams {
            hr_size: 64,
            hue_period_deg: 360.0,
            ..Default::default()
        };
        let a = generate_geoworld_tile(&params, 0.0, 0.0).unwrap();
        let b = generate_geoworld_tile(&params, 180.0 - 1e-9, 0.0).unwrap();
        let ha = mean_hue(a.pixels()).unwrap();
        let hb = mean_hue(b.pixels()).unwrap();
        assert!((hue_distance(ha, hb) - 0.5).abs() < 0.04);
    }

    #[test]
    fn degrade_constant_is_identity_on_value() {
        let hr = ImageBuf::from_fn(32, 32, |_, _| [0.5, 0.5, 0.5]);
        let lr = degrade(&hr, 4, 0.0, 0).unwrap();
        for px in lr.pixels() {
            for c in 0..3 {
                assert!((px[c] - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degrade_output_shape() {
        let hr = ImageBuf::zeros(256, 256);
        let lr = degrade(&hr, 8, 0.0, 0).unwrap();
        assert_eq!((lr.height(), lr.width()), (32, 32));
    }

    #[test]
    fn degrade_rejects_indivisible_side() {
        let hr = ImageBuf::zeros(30, 30);
        assert!(degrade(&hr, 8, 0.0, 0).is_err());
    }

    #[test]
    fn degrade_noise_is_seeded() {
        let hr = ImageBuf::from_fn(32, 32, |y, x| [(y as f64) / 31.0, 0.3, (x as f64) / 31.0]);
        let a = degrade(&hr, 4, 0.05, 7).unwrap();
        let b = degrade(&hr, 4, 0.05, 7).unwrap();
        let c = degrade(&hr, 4, 0.05, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
