//! Geographic location embeddings and their projection to conditioning
//! tokens.
//!
//! Two interchangeable embedding sources implement [`LocationEncoder`]: the
//! deterministic sinusoidal encoder and a nearest-neighbor lookup into an
//! external embedding table. Encoders are selected by name at runtime via
//! [`encoder_from_spec`].

mod table;
mod tokens;

pub use table::TableEncoder;
pub use tokens::{project_to_tokens, ProjectionParams, TokenProjector, TokenSet};

use crate::error::{Error, Result};
use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Sinusoidal,
    ExternalTable,
}

/// Fixed-length embedding of a geographic point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationEmbedding {
    pub vector: Array1<f64>,
    pub lon: f64,
    pub lat: f64,
    pub source: EmbeddingSource,
}

impl LocationEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// A strategy producing embeddings from coordinates.
pub trait LocationEncoder: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn encode(&self, lon: f64, lat: f64) -> Result<LocationEmbedding>;
}

/// Default geometric frequency schedule bounds (cycles per radian).
pub const FREQ_MIN: f64 = 1.0;
pub const FREQ_MAX: f64 = 64.0;

/// The geometric frequency ladder used by the sinusoidal encoder: `count`
/// frequencies from [`FREQ_MIN`] to [`FREQ_MAX`] inclusive.
pub fn frequency_schedule(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![FREQ_MIN];
    }
    (0..count)
        .map(|k| FREQ_MIN * (FREQ_MAX / FREQ_MIN).powf(k as f64 / (count - 1) as f64))
        .collect()
}

/// Interleaved sin/cos features of (lon, lat) in radians at `dim / 4`
/// geometrically spaced frequencies per coordinate. `dim` must be a
/// multiple of 4 and at least 4.
pub fn encode_location_sinusoidal(lon: f64, lat: f64, dim: usize) -> Result<LocationEmbedding> {
    if dim < 4 || dim % 4 != 0 {
        return Err(Error::invalid_input(format!(
            "embedding dimension {dim} must be a positive multiple of 4"
        )));
    }
    crate::geodata::check_coordinates(lon, lat)?;
    let per_coord = dim / 4;
    let freqs = frequency_schedule(per_coord);
    let mut v = Vec::with_capacity(dim);
    for &coord in &[lon.to_radians(), lat.to_radians()] {
        for &f in &freqs {
            v.push((f * coord).sin());
            v.push((f * coord).cos());
        }
    }
    Ok(LocationEmbedding {
        vector: Array1::from_vec(v),
        lon,
        lat,
        source: EmbeddingSource::Sinusoidal,
    })
}

/// Upper bound on ‖encode(p) − encode(q)‖₂ / ‖p − q‖₂ with coordinates in
/// degrees, derived from the frequency schedule.
pub fn sinusoidal_lipschitz_bound(dim: usize) -> f64 {
    let freqs = frequency_schedule(dim / 4);
    let sum_sq: f64 = freqs.iter().map(|f| f * f).sum();
    (2.0 * sum_sq).sqrt() * std::f64::consts::PI / 180.0
}

#[derive(Debug, Clone)]
pub struct SinusoidalEncoder {
    dim: usize,
}

impl SinusoidalEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 4 || dim % 4 != 0 {
            return Err(Error::config(format!(
                "sinusoidal encoder dimension {dim} must be a positive multiple of 4"
            )));
        }
        Ok(SinusoidalEncoder { dim })
    }
}

impl LocationEncoder for SinusoidalEncoder {
    fn name(&self) -> &'static str {
        "sinusoidal"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, lon: f64, lat: f64) -> Result<LocationEmbedding> {
        encode_location_sinusoidal(lon, lat, self.dim)
    }
}

/// Build an encoder from a spec string: `sinusoidal` (with a dimension from
/// the caller) or `table:<path>`.
pub fn encoder_from_spec(spec: &str, dim: usize) -> Result<Box<dyn LocationEncoder>> {
    if spec == "sinusoidal" {
        return Ok(Box::new(SinusoidalEncoder::new(dim)?));
    }
    if let Some(path) = spec.strip_prefix("table:") {
        let enc = TableEncoder::load(std::path::Path::new(path))?;
        return Ok(Box::new(enc));
    }
    Err(Error::config(format!(
        "unknown location encoder `{spec}` (expected `sinusoidal` or `table:<path>`)"
    )))
}

/// Uniform sampler over a coordinate box that rejects draws closer than
/// `min_separation_deg` (Chebyshev distance) to the true location.
#[derive(Debug, Clone)]
pub struct FalseLocationSampler {
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
    pub min_separation_deg: f64,
}

impl FalseLocationSampler {
    pub fn new(
        lon_range: (f64, f64),
        lat_range: (f64, f64),
        min_separation_deg: f64,
    ) -> Result<Self> {
        if min_separation_deg <= 0.0 {
            return Err(Error::config("min_separation_deg must be > 0"));
        }
        if min_separation_deg >= 180.0 {
            return Err(Error::config(
                "min_separation_deg >= 180 makes rejection sampling non-terminating",
            ));
        }
        if lon_range.0 >= lon_range.1 || lat_range.0 >= lat_range.1 {
            return Err(Error::config("empty coordinate box"));
        }
        Ok(FalseLocationSampler {
            lon_range,
            lat_range,
            min_separation_deg,
        })
    }

    /// Draw a false location for (true_lon, true_lat). Deterministic given
    /// the RNG state.
    pub fn sample(&self, true_lon: f64, true_lat: f64, rng: &mut impl Rng) -> Result<(f64, f64)> {
        const MAX_TRIES: usize = 100_000;
        for _ in 0..MAX_TRIES {
            let lon = rng.random_range(self.lon_range.0..self.lon_range.1);
            let lat = rng.random_range(self.lat_range.0..self.lat_range.1);
            let sep = (lon - true_lon).abs().max((lat - true_lat).abs());
            if sep >= self.min_separation_deg {
                return Ok((lon, lat));
            }
        }
        Err(Error::config(format!(
            "false-location sampling did not terminate: min_separation {} too large for box {:?} x {:?}",
            self.min_separation_deg, self.lon_range, self.lat_range
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn origin_embedding_is_zero_sin_one_cos() {
        let e = encode_location_sinusoidal(0.0, 0.0, 8).unwrap();
        for i in 0..8 {
            let expected = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(e.vector[i], expected);
        }
    }

    #[test]
    fn embedding_deterministic_and_bounded() {
        let a = encode_location_sinusoidal(10.0, 20.0, 64).unwrap();
        let b = encode_location_sinusoidal(10.0, 20.0, 64).unwrap();
        assert_eq!(a, b);
        assert!(a.vector.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(encode_location_sinusoidal(0.0, 0.0, 7).is_err());
        assert!(encode_location_sinusoidal(0.0, 0.0, 6).is_err());
        assert!(encode_location_sinusoidal(0.0, 0.0, 2).is_err());
    }

    #[test]
    fn nearby_points_have_close_embeddings() {
        let a = encode_location_sinusoidal(10.0, 20.0, 256).unwrap();
        let b = encode_location_sinusoidal(10.001, 20.0, 256).unwrap();
        let dist = (&a.vector - &b.vector).mapv(|v| v * v).sum().sqrt();
        assert!(dist < 0.01, "distance {dist}");
        // and the analytic bound dominates the observed distance
        let bound = sinusoidal_lipschitz_bound(256) * 0.001;
        assert!(dist <= bound + 1e-12, "dist {dist} > bound {bound}");
    }

    #[test]
    fn embeddings_injective_at_one_degree_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut points: Vec<(f64, f64)> = Vec::new();
        while points.len() < 1000 {
            let lon = rng.random_range(-180.0..180.0);
            let lat = rng.random_range(-90.0..90.0);
            if points
                .iter()
                .all(|&(plon, plat): &(f64, f64)| (plon - lon).abs().max((plat - lat).abs()) >= 1.0)
            {
                points.push((lon, lat));
            }
        }
        let embeddings: Vec<Vec<u64>> = points
            .iter()
            .map(|&(lon, lat)| {
                encode_location_sinusoidal(lon, lat, 64)
                    .unwrap()
                    .vector
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        let unique: std::collections::BTreeSet<&Vec<u64>> = embeddings.iter().collect();
        assert_eq!(unique.len(), embeddings.len());
    }

    #[test]
    fn false_sampler_respects_separation() {
        let sampler = FalseLocationSampler::new((-180.0, 180.0), (-90.0, 90.0), 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (lon, lat) = sampler.sample(0.0, 0.0, &mut rng).unwrap();
            assert!(lon.abs().max(lat.abs()) >= 10.0);
        }
    }

    #[test]
    fn false_sampler_is_seeded() {
        let sampler = FalseLocationSampler::new((-180.0, 180.0), (-90.0, 90.0), 5.0).unwrap();
        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .map(|_| sampler.sample(0.0, 0.0, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(3), seq(3));
        assert_ne!(seq(3), seq(4));
    }

    #[test]
    fn false_sampler_mean_near_box_center() {
        let sampler = FalseLocationSampler::new((-180.0, 180.0), (-90.0, 90.0), 0.001).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            sum += sampler.sample(0.0, 0.0, &mut rng).unwrap().0;
        }
        assert!((sum / 10_000.0).abs() < 5.0);
    }

    #[test]
    fn false_sampler_rejects_excessive_separation() {
        assert!(FalseLocationSampler::new((-180.0, 180.0), (-90.0, 90.0), 180.0).is_err());
        assert!(FalseLocationSampler::new((-180.0, 180.0), (-90.0, 90.0), 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn encoder_satisfies_lipschitz_bound(
            lon1 in -179.9f64..179.9, lat1 in -89.9f64..89.9,
            dlon in -1.0f64..1.0, dlat in -1.0f64..1.0,
        ) {
            let lon2 = (lon1 + dlon).clamp(-179.95, 179.95);
            let lat2 = (lat1 + dlat).clamp(-89.95, 89.95);
            let a = encode_location_sinusoidal(lon1, lat1, 64).unwrap();
            let b = encode_location_sinusoidal(lon2, lat2, 64).unwrap();
            let dist = (&a.vector - &b.vector).mapv(|v| v * v).sum().sqrt();
            let coord_dist = ((lon1 - lon2).powi(2) + (lat1 - lat2).powi(2)).sqrt();
            let bound = sinusoidal_lipschitz_bound(64) * coord_dist;
            prop_assert!(dist <= bound + 1e-9, "dist {} > bound {}", dist, bound);
        }
    }
}
