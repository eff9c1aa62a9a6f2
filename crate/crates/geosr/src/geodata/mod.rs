//! Synthetic geo-referenced dataset: procedural tiles, the LR degradation
//! model, and manifest handling with UTM-zone splits.

mod bicubic;
mod geoworld;
mod manifest;

pub use bicubic::{cubic_kernel, downsample};
pub use geoworld::{analytic_hue, check_coordinates, degrade, generate_geoworld_tile, GeoWorldParams};
pub use manifest::{
    assign_utm_zone, read_manifest, split_manifest, write_manifest, Split, TileRecord,
};

use crate::error::Result;
use crate::image::ImageBuf;
use rand::Rng;
use std::path::Path;

/// Options for generating a dataset directory with [`synthesize_dataset`].
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub params: GeoWorldParams,
    pub tiles: usize,
    pub noise_sigma: f64,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            params: GeoWorldParams::default(),
            tiles: 16,
            noise_sigma: 0.02,
            lon_range: (-180.0, 180.0),
            lat_range: (-60.0, 60.0),
        }
    }
}

/// Generate `tiles` HR/LR pairs at seeded-uniform coordinates, write PNGs
/// under `out_dir`, and return the manifest records (split = train).
pub fn synthesize_dataset(out_dir: &Path, opts: &SynthOptions) -> Result<Vec<TileRecord>> {
    use rand::SeedableRng;
    std::fs::create_dir_all(out_dir)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.params.seed);
    let mut records = Vec::with_capacity(opts.tiles);
    for i in 0..opts.tiles {
        let lon = rng.random_range(opts.lon_range.0..opts.lon_range.1);
        let lat = rng.random_range(opts.lat_range.0..opts.lat_range.1);
        let noise_seed = rng.random::<u64>();
        let hr = generate_geoworld_tile(&opts.params, lon, lat)?;
        let lr = degrade(&hr, opts.params.scale_factor, opts.noise_sigma, noise_seed)?;
        let tile_id = format!("tile_{i:05}");
        let hr_path = format!("{tile_id}_hr.png");
        let lr_path = format!("{tile_id}_lr.png");
        hr.save_png(&out_dir.join(&hr_path))?;
        lr.save_png(&out_dir.join(&lr_path))?;
        records.push(TileRecord {
            tile_id,
            lon,
            lat,
            utm_zone: assign_utm_zone(lon)?,
            hr_path,
            lr_path,
            split: Split::Train,
        });
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

/// Load the LR/HR pair referenced by a record, resolving relative paths
/// against `root`.
pub fn load_pair(root: &Path, record: &TileRecord) -> Result<(ImageBuf, ImageBuf)> {
    let lr = ImageBuf::load_png(&root.join(&record.lr_path))?;
    let hr = ImageBuf::load_png(&root.join(&record.hr_path))?;
    Ok((lr, hr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn synthesized_dataset_is_reproducible() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let opts = SynthOptions {
            params: GeoWorldParams {
                hr_size: 32,
                scale_factor: 4,
                seed: 9,
                ..Default::default()
            },
            tiles: 3,
            ..Default::default()
        };
        let a = synthesize_dataset(dir_a.path(), &opts).unwrap();
        let b = synthesize_dataset(dir_b.path(), &opts).unwrap();
        assert_eq!(a, b);
        for r in &a {
            let pa = std::fs::read(dir_a.path().join(&r.hr_path)).unwrap();
            let pb = std::fs::read(dir_b.path().join(&r.hr_path)).unwrap();
            assert_eq!(pa, pb);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_is_a_partition(zones in proptest::collection::vec(1u32..=60, 0..40),
                                holdout in proptest::collection::btree_set(1u32..=60, 0..8)) {
            let records: Vec<TileRecord> = zones.iter().enumerate().map(|(i, &z)| {
                let lon = (z as f64 - 1.0) * 6.0 - 180.0 + 1.5;
                TileRecord {
                    tile_id: format!("t{i}"),
                    lon,
                    lat: 0.0,
                    utm_zone: z,
                    hr_path: String::new(),
                    lr_path: String::new(),
                    split: Split::Train,
                }
            }).collect();
            let (train, hold) = split_manifest(&records, &holdout);
            prop_assert_eq!(train.len() + hold.len(), records.len());
            let mut merged: Vec<&TileRecord> = train.iter().chain(hold.iter()).collect();
            merged.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
            let mut original: Vec<&TileRecord> = records.iter().collect();
            original.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
            for (m, o) in merged.iter().zip(original.iter()) {
                prop_assert_eq!(m.tile_id.clone(), o.tile_id.clone());
            }
            prop_assert!(train.iter().all(|r| !holdout.contains(&r.utm_zone)));
            prop_assert!(hold.iter().all(|r| holdout.contains(&r.utm_zone)));
        }

        #[test]
        fn degradation_shape_law(side_mul in 1usize..6, scale in prop::sample::select(vec![2usize, 4, 8])) {
            let side = side_mul * scale * 2;
            let hr = ImageBuf::zeros(side, side);
            let lr = degrade(&hr, scale, 0.0, 0).unwrap();
            prop_assert_eq!(lr.height(), side / scale);
            prop_assert_eq!(lr.width(), side / scale);
        }
    }
}
