//! External embedding tables: newline-delimited JSON rows
//! `{"lon": .., "lat": .., "vector": [..]}` loaded into a nearest-neighbor
//! lookup. This is the integration point for embeddings produced by
//! pretrained location encoders.

use super::{EmbeddingSource, LocationEmbedding, LocationEncoder};
use crate::error::{Error, Result};
use ndarray::Array1;
use serde::Deserialize;
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, Deserialize)]
struct TableRow {
    lon: f64,
    lat: f64,
    vector: Vec<f64>,
}

/// Immutable embedding table; queries snap to the nearest grid point by
/// plain Euclidean distance in degrees (first row wins ties).
#[derive(Debug, Clone)]
pub struct TableEncoder {
    rows: Vec<(f64, f64, Array1<f64>)>,
    dim: usize,
}

impl TableEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut rows: Vec<(f64, f64, Array1<f64>)> = Vec::new();
        let mut dim = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TableRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if rows.is_empty() {
                dim = row.vector.len();
                if dim == 0 {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: "empty embedding vector".into(),
                    });
                }
            } else if row.vector.len() != dim {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!(
                        "vector length {} differs from first row's {dim}",
                        row.vector.len()
                    ),
                });
            }
            if !row.vector.iter().all(|v| v.is_finite()) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: "non-finite embedding entry".into(),
                });
            }
            rows.push((row.lon, row.lat, Array1::from_vec(row.vector)));
        }
        if rows.is_empty() {
            return Err(Error::invalid_input(format!(
                "embedding table {} is empty",
                path.display()
            )));
        }
        Ok(TableEncoder { rows, dim })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl LocationEncoder for TableEncoder {
    fn name(&self) -> &'static str {
        "external_table"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, lon: f64, lat: f64) -> Result<LocationEmbedding> {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (i, (rlon, rlat, _)) in self.rows.iter().enumerate() {
            let d2 = (rlon - lon).powi(2) + (rlat - lat).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        let (rlon, rlat, v) = &self.rows[best];
        Ok(LocationEmbedding {
            vector: v.clone(),
            lon: *rlon,
            lat: *rlat,
            source: EmbeddingSource::ExternalTable,
        })
    }
}
