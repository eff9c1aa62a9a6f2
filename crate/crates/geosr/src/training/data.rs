//! In-memory training dataset. Desk-scale tile sets fit comfortably in RAM,
//! so every referenced image is loaded (and validated) up front; missing
//! files are reported as one batch before any training starts.

use crate::error::{Error, Result};
use crate::geodata::TileRecord;
use crate::image::ImageBuf;
use ndarray::Array4;
use std::path::{Path, PathBuf};

pub struct Dataset {
    records: Vec<TileRecord>,
    pairs: Vec<(ImageBuf, ImageBuf)>,
    lr_side: usize,
    hr_side: usize,
}

/// One training batch in NCHW layout plus per-sample coordinates.
pub struct Batch {
    pub lr: Array4<f64>,
    pub hr: Array4<f64>,
    pub coords: Vec<(f64, f64)>,
}

impl Dataset {
    /// Load every LR/HR pair named by `records`, resolving paths against
    /// `root`. With `grayscale_lr` the LR images are collapsed to replicated
    /// luminance (hue-ambiguous inputs).
    pub fn load(root: &Path, records: &[TileRecord], grayscale_lr: bool) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid_input("dataset has no records"));
        }
        let missing: Vec<PathBuf> = records
            .iter()
            .flat_map(|r| [root.join(&r.lr_path), root.join(&r.hr_path)])
            .filter(|p| !p.exists())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        let mut pairs = Vec::with_capacity(records.len());
        for r in records {
            let lr = ImageBuf::load_png(&root.join(&r.lr_path))?;
            let hr = ImageBuf::load_png(&root.join(&r.hr_path))?;
            let lr = if grayscale_lr { lr.to_grayscale() } else { lr };
            pairs.push((lr, hr));
        }
        let (lr_side, hr_side) = (pairs[0].0.height(), pairs[0].1.height());
        for (r, (lr, hr)) in records.iter().zip(pairs.iter()) {
            if lr.height() != lr_side || lr.width() != lr_side {
                return Err(Error::invalid_input(format!(
                    "tile {}: LR size {}x{} differs from {}x{}",
                    r.tile_id,
                    lr.height(),
                    lr.width(),
                    lr_side,
                    lr_side
                )));
            }
            if hr.height() != hr_side || hr.width() != hr_side {
                return Err(Error::invalid_input(format!(
                    "tile {}: HR size {}x{} differs from {}x{}",
                    r.tile_id,
                    hr.height(),
                    hr.width(),
                    hr_side,
                    hr_side
                )));
            }
        }
        Ok(Dataset {
            records: records.to_vec(),
            pairs,
            lr_side,
            hr_side,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lr_side(&self) -> usize {
        self.lr_side
    }

    pub fn hr_side(&self) -> usize {
        self.hr_side
    }

    pub fn record(&self, i: usize) -> &TileRecord {
        &self.records[i]
    }

    /// Bounding box of the dataset's coordinates (lon range, lat range).
    pub fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        let mut lon = (f64::INFINITY, f64::NEG_INFINITY);
        let mut lat = (f64::INFINITY, f64::NEG_INFINITY);
        for r in &self.records {
            lon = (lon.0.min(r.lon), lon.1.max(r.lon));
            lat = (lat.0.min(r.lat), lat.1.max(r.lat));
        }
        (lon, lat)
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let b = indices.len();
        let mut lr = Array4::<f64>::zeros((b, 3, self.lr_side, self.lr_side));
        let mut hr = Array4::<f64>::zeros((b, 3, self.hr_side, self.hr_side));
        let mut coords = Vec::with_capacity(b);
        for (bi, &i) in indices.iter().enumerate() {
            let (lr_img, hr_img) = &self.pairs[i];
            for y in 0..self.lr_side {
                for x in 0..self.lr_side {
                    let px = lr_img.get(y, x);
                    for c in 0..3 {
                        lr[[bi, c, y, x]] = px[c];
                    }
                }
            }
            for y in 0..self.hr_side {
                for x in 0..self.hr_side {
                    let px = hr_img.get(y, x);
                    for c in 0..3 {
                        hr[[bi, c, y, x]] = px[c];
                    }
                }
            }
            coords.push((self.records[i].lon, self.records[i].lat));
        }
        Batch { lr, hr, coords }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{synthesize_dataset, GeoWorldParams, SynthOptions};

    fn tiny_dataset(dir: &Path) -> Vec<TileRecord> {
        synthesize_dataset(
            dir,
            &SynthOptions {
                params: GeoWorldParams {
                    hr_size: 16,
                    scale_factor: 2,
                    seed: 3,
                    ..Default::default()
                },
                tiles: 4,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn missing_files_listed_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = tiny_dataset(dir.path());
        records[1].lr_path = "nope_lr.png".into();
        records[2].hr_path = "nope_hr.png".into();
        let err = match Dataset::load(dir.path(), &records, false) {
            Err(e) => e,
            Ok(_) => panic!("expected missing-file error"),
        };
        match err {
            Error::MissingFiles(paths) => assert_eq!(paths.len(), 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn grayscale_collapses_lr_channels() {
        let dir = tempfile::tempdir().unwrap();
        let records = tiny_dataset(dir.path());
        let ds = Dataset::load(dir.path(), &records, true).unwrap();
        let batch = ds.batch(&[0, 1]);
        for bi in 0..2 {
            for y in 0..ds.lr_side() {
                for x in 0..ds.lr_side() {
                    let r = batch.lr[[bi, 0, y, x]];
                    assert_eq!(r, batch.lr[[bi, 1, y, x]]);
                    assert_eq!(r, batch.lr[[bi, 2, y, x]]);
                }
            }
        }
        // HR stays colored
        let ds_rgb = Dataset::load(dir.path(), &records, false).unwrap();
        let rgb = ds_rgb.batch(&[0]);
        assert_eq!(batch.hr[[0, 0, 0, 0]], rgb.hr[[0, 0, 0, 0]]);
    }

    #[test]
    fn batch_carries_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let records = tiny_dataset(dir.path());
        let ds = Dataset::load(dir.path(), &records, false).unwrap();
        let batch = ds.batch(&[2, 0]);
        assert_eq!(batch.coords[0], (records[2].lon, records[2].lat));
        assert_eq!(batch.coords[1], (records[0].lon, records[0].lat));
    }
}
