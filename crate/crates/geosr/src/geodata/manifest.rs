//! Tile manifests: newline-delimited JSON, one `TileRecord` per line.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One LR/HR pair with its centroid coordinate and zone assignment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TileRecord {
    pub tile_id: String,
    pub lon: f64,
    pub lat: f64,
    pub utm_zone: u32,
    pub hr_path: String,
    pub lr_path: String,
    pub split: Split,
}

impl TileRecord {
    /// Check the record's internal invariants (coordinate ranges, zone).
    pub fn validate(&self) -> Result<()> {
        super::check_coordinates(self.lon, self.lat)?;
        let zone = assign_utm_zone(self.lon)?;
        if zone != self.utm_zone {
            return Err(Error::invalid_input(format!(
                "tile {}: utm_zone {} does not match longitude {} (expected {zone})",
                self.tile_id, self.utm_zone, self.lon
            )));
        }
        Ok(())
    }
}

/// UTM longitudinal zone: floor((lon + 180) / 6) + 1, in [1, 60].
pub fn assign_utm_zone(lon: f64) -> Result<u32> {
    if !(-180.0..180.0).contains(&lon) {
        return Err(Error::invalid_input(format!(
            "longitude {lon} outside [-180, 180)"
        )));
    }
    Ok(((lon + 180.0) / 6.0).floor() as u32 + 1)
}

/// Stable partition of records into (train, holdout) by UTM zone membership.
pub fn split_manifest(
    records: &[TileRecord],
    holdout_zones: &std::collections::BTreeSet<u32>,
) -> (Vec<TileRecord>, Vec<TileRecord>) {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for r in records {
        if holdout_zones.contains(&r.utm_zone) {
            holdout.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (train, holdout)
}

pub fn write_manifest(path: &Path, records: &[TileRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::invalid_input(format!("serialize record: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<TileRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TileRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn record(id: &str, lon: f64) -> TileRecord {
        TileRecord {
            tile_id: id.into(),
            lon,
            lat: 0.0,
            utm_zone: assign_utm_zone(lon).unwrap(),
            hr_path: format!("{id}_hr.png"),
            lr_path: format!("{id}_lr.png"),
            split: Split::Train,
        }
    }

    #[test]
    fn utm_zone_formula() {
        assert_eq!(assign_utm_zone(-180.0).unwrap(), 1);
        assert_eq!(assign_utm_zone(-105.0).unwrap(), 13);
        assert_eq!(assign_utm_zone(0.0).unwrap(), 31);
        assert_eq!(assign_utm_zone(179.999).unwrap(), 60);
        assert!(assign_utm_zone(180.0).is_err());
        assert!(assign_utm_zone(-180.001).is_err());
    }

    #[test]
    fn split_partitions_by_zone() {
        // zones 12, 13, 14 sit at lons -111, -105, -99
        let records = vec![record("a", -111.0), record("b", -105.0), record("c", -99.0)];
        let holdout: BTreeSet<u32> = [13].into_iter().collect();
        let (train, hold) = split_manifest(&records, &holdout);
        assert_eq!(train.iter().map(|r| r.utm_zone).collect::<Vec<_>>(), vec![12, 14]);
        assert_eq!(hold.iter().map(|r| r.utm_zone).collect::<Vec<_>>(), vec![13]);
    }

    #[test]
    fn empty_holdout_keeps_all_in_train() {
        let records = vec![record("a", -111.0), record("b", -105.0)];
        let (train, hold) = split_manifest(&records, &BTreeSet::new());
        assert_eq!(train.len(), 2);
        assert!(hold.is_empty());
    }

    #[test]
    fn uniform_zones_partition_without_leakage() {
        // 100 records spread over zones 10..=19
        let mut records = Vec::new();
        for i in 0..100 {
            let zone = 10 + (i % 10) as u32;
            let lon = (zone as f64 - 1.0) * 6.0 - 180.0 + 3.0;
            records.push(record(&format!("t{i}"), lon));
        }
        let holdout: BTreeSet<u32> = [13, 18, 19].into_iter().collect();
        let (train, hold) = split_manifest(&records, &holdout);
        assert_eq!(train.len() + hold.len(), 100);
        let train_zones: BTreeSet<u32> = train.iter().map(|r| r.utm_zone).collect();
        let hold_zones: BTreeSet<u32> = hold.iter().map(|r| r.utm_zone).collect();
        assert!(train_zones.is_disjoint(&hold_zones));
        assert!(hold_zones.iter().all(|z| holdout.contains(z)));
    }

    #[test]
    fn manifest_round_trip_and_parse_error_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let records = vec![record("a", -111.0), record("b", 3.0)];
        write_manifest(&path, &records).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, records);

        // corrupt the second line and expect the error to name it
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "{not json";
        std::fs::write(&path, lines.join("\n")).unwrap();
        let err = read_manifest(&path).unwrap_err();
        match err {
            crate::error::Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }
}
