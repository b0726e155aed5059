//! JSON-lines snapshot streams: a header record with the catalog and
//! metadata, then one record per snapshot.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use relocl_core::graphdomain::{
    validate_snapshot, EntityCatalog, EntityId, GraphSnapshot, Timestamp, MINUTES_PER_DAY,
};
use relocl_core::routinesim::TaskDataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::fsutil;

pub const DATASET_FORMAT: &str = "relocl-snapshots";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub task: usize,
    pub catalog: EntityCatalog,
    pub sample_interval: u64,
    pub first_day: u64,
    pub days: u64,
    pub train_days: u64,
    pub skipped_moves: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One snapshot; `parents` maps object names to location names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotRecord {
    pub t: u64,
    pub day: u64,
    pub parents: BTreeMap<String, String>,
    pub split: Split,
}

pub fn encode(ds: &TaskDataset) -> Result<String> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        name: ds.name.clone(),
        task: ds.task,
        catalog: (*ds.catalog).clone(),
        sample_interval: ds.sample_interval,
        first_day: ds.first_day,
        days: ds.days,
        train_days: ds.train_days,
        skipped_moves: ds.skipped_moves,
    };
    let mut out = json_line(&header)?;
    for s in &ds.snapshots {
        let name = |id: EntityId| {
            ds.catalog
                .name(id)
                .map(str::to_string)
                .ok_or_else(|| CliError::Runtime(format!("unknown entity {id}")))
        };
        let parents = s
            .parents
            .iter()
            .map(|(&o, &l)| Ok((name(o)?, name(l)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let record = SnapshotRecord {
            t: s.t.0,
            day: s.t.day(),
            parents,
            split: if ds.is_train_day(s.t.day()) {
                Split::Train
            } else {
                Split::Test
            },
        };
        out.push_str(&json_line(&record)?);
    }
    Ok(out)
}

fn json_line<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write(path: &Path, ds: &TaskDataset) -> Result<()> {
    fsutil::write_atomic(path, encode(ds)?.as_bytes())
}

pub fn read(path: &Path) -> Result<TaskDataset> {
    let bytes = fsutil::read(path)?;
    let text =
        String::from_utf8(bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    decode(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parses and validates a dataset; errors name the offending line.
pub fn decode(text: &str) -> Result<TaskDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines
        .next()
        .ok_or_else(|| CliError::Data("empty dataset file".into()))?;
    let header: DatasetHeader = serde_json::from_str(first)
        .map_err(|e| CliError::Data(format!("line 1: invalid header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(CliError::Data(format!(
            "line 1: unsupported dataset format {} v{} (expected {DATASET_FORMAT} v{DATASET_VERSION})",
            header.format, header.version
        )));
    }
    let interval = header.sample_interval;
    if interval == 0 || !MINUTES_PER_DAY.is_multiple_of(interval) {
        return Err(CliError::Data(format!(
            "line 1: bad sample interval {interval}"
        )));
    }
    if header.train_days > header.days {
        return Err(CliError::Data("line 1: train_days exceeds days".into()));
    }
    let catalog = Arc::new(header.catalog);
    let per_day = MINUTES_PER_DAY / interval;
    let expected = (header.days * per_day) as usize;
    let mut snapshots = Vec::with_capacity(expected);
    for (n, line) in lines {
        let bad = |m: String| CliError::Data(format!("line {n}: {m}"));
        if line.trim().is_empty() {
            return Err(bad("blank line".into()));
        }
        let rec: SnapshotRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let i = snapshots.len() as u64;
        let want =
            Timestamp::from_day_minute(header.first_day + i / per_day, (i % per_day) * interval);
        if rec.t != want.0 || rec.day != want.day() {
            return Err(bad(format!(
                "expected t={} day={}, found t={} day={}",
                want.0,
                want.day(),
                rec.t,
                rec.day
            )));
        }
        let want_split = if i / per_day < header.train_days {
            Split::Train
        } else {
            Split::Test
        };
        if rec.split != want_split {
            return Err(bad(format!("split {:?} contradicts train_days", rec.split)));
        }
        let mut parents = BTreeMap::new();
        for (o, l) in &rec.parents {
            let oid = catalog
                .object_by_name(o)
                .ok_or_else(|| bad(format!("unknown object {o:?}")))?;
            let lid = catalog
                .location_by_name(l)
                .ok_or_else(|| bad(format!("unknown location {l:?}")))?;
            parents.insert(oid, lid);
        }
        let snap = GraphSnapshot::new(catalog.clone(), header.task, want, parents);
        if let Err(v) = validate_snapshot(&snap) {
            return Err(bad(format!("invalid snapshot: {v:?}")));
        }
        snapshots.push(snap);
    }
    if snapshots.len() != expected {
        return Err(CliError::Data(format!(
            "expected {expected} snapshots for {} days, found {}",
            header.days,
            snapshots.len()
        )));
    }
    Ok(TaskDataset {
        task: header.task,
        name: header.name,
        catalog,
        sample_interval: interval,
        first_day: header.first_day,
        days: header.days,
        train_days: header.train_days,
        snapshots,
        skipped_moves: header.skipped_moves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use relocl_core::routinesim::simulate_suite;

    fn small() -> TaskDataset {
        simulate_suite(2, 3, 2, 60, 4).unwrap().remove(1)
    }

    #[test]
    fn round_trip_preserves_dataset() {
        let ds = small();
        let back = decode(&encode(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn corrupt_line_is_reported_by_number() {
        let text = encode(&small()).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[5] = "{\"t\": oops}";
        let err = decode(&lines.join("\n")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("line 6"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = encode(&small()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let err = decode(&lines[..lines.len() - 1].join("\n")).unwrap_err();
        assert!(err.to_string().contains("expected"), "{err}");
    }

    #[test]
    fn unknown_location_is_rejected() {
        let text = encode(&small()).unwrap();
        let ds = small();
        let loc = ds
            .catalog
            .name(ds.snapshots[0].parents.values().next().copied().unwrap())
            .unwrap()
            .to_string();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[2] = lines[2].replacen(&format!("\"{loc}\""), "\"attic\"", 1);
        let err = decode(&lines.join("\n")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
