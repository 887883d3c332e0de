//! Dataset loading and discovery/held-out splitting.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Dataset, DatasetRole, EntityRecord, Outcome};

/// Parses line-delimited JSON records. Blank lines are skipped but still
/// counted for error positions.
pub fn parse_records<R: Read>(reader: R) -> Result<Vec<EntityRecord>> {
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::parse(Some(line_no), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EntityRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(Some(line_no), e.to_string()))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::parse(None, "empty"));
    }
    Ok(records)
}

pub fn load_dataset(path: &Path, role: DatasetRole) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(file)?;
    Dataset::new(records, role)
}

pub fn write_records(path: &Path, records: &[EntityRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buf, record)?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// A discovery/held-out pair with disjoint entities.
#[derive(Debug, Clone)]
pub struct ExperimentSplit {
    pub discovery: Dataset,
    pub heldout: Dataset,
    pub seed: u64,
}

impl ExperimentSplit {
    /// Pairs two independently collected datasets, checking disjointness.
    pub fn from_parts(discovery: Dataset, heldout: Dataset, seed: u64) -> Result<Self> {
        if discovery.role() != DatasetRole::Discovery {
            return Err(Error::WrongRole {
                expected: "discovery".into(),
                actual: discovery.role().to_string(),
            });
        }
        if heldout.role() != DatasetRole::Heldout {
            return Err(Error::WrongRole {
                expected: "heldout".into(),
                actual: heldout.role().to_string(),
            });
        }
        let shared = shared_ids(&discovery, &heldout);
        if !shared.is_empty() {
            return Err(Error::LeakageDetected(shared.len()));
        }
        Ok(Self {
            discovery,
            heldout,
            seed,
        })
    }
}

/// Class-stratified split of a pooled dataset.
///
/// Each class is shuffled independently with a seeded ChaCha stream and the
/// first `round(fraction * class_size)` go to discovery, so both sides carry
/// the pool's success rate to within one record.
pub fn stratified_split(pool: &Dataset, discovery_fraction: f64, seed: u64) -> Result<ExperimentSplit> {
    if !(discovery_fraction > 0.0 && discovery_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "discovery_fraction must lie in (0, 1), got {discovery_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut discovery = Vec::new();
    let mut heldout = Vec::new();
    for class in [Outcome::Success, Outcome::Failure] {
        let mut members: Vec<&EntityRecord> = pool
            .records()
            .iter()
            .filter(|r| r.outcome == Some(class))
            .collect();
        members.shuffle(&mut rng);
        let take = (discovery_fraction * members.len() as f64).round() as usize;
        if take == 0 || take == members.len() {
            return Err(Error::InsufficientRecords(format!(
                "{} {class:?} records cannot be split at fraction {discovery_fraction}",
                members.len()
            )));
        }
        discovery.extend(members[..take].iter().map(|r| (*r).clone()));
        heldout.extend(members[take..].iter().map(|r| (*r).clone()));
    }
    // Restore pool order so output files are independent of class grouping.
    let position: std::collections::HashMap<&str, usize> = pool
        .entity_ids()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    discovery.sort_by_key(|r| position[r.entity_id.as_str()]);
    heldout.sort_by_key(|r| position[r.entity_id.as_str()]);

    Ok(ExperimentSplit {
        discovery: Dataset::new(discovery, DatasetRole::Discovery)?,
        heldout: Dataset::new(heldout, DatasetRole::Heldout)?,
        seed,
    })
}

/// On-disk record of a materialized split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub discovery_path: PathBuf,
    pub heldout_path: PathBuf,
    pub discovery_sha: String,
    pub heldout_sha: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `discovery.jsonl`, `heldout.jsonl` and `split_manifest.json` into `dir`.
pub fn materialize_split(split: &ExperimentSplit, dir: &Path) -> Result<SplitManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let discovery_path = dir.join("discovery.jsonl");
    let heldout_path = dir.join("heldout.jsonl");
    write_records(&discovery_path, split.discovery.records())?;
    write_records(&heldout_path, split.heldout.records())?;
    let manifest = SplitManifest {
        seed: split.seed,
        discovery_sha: sha256_file(&discovery_path)?,
        heldout_sha: sha256_file(&heldout_path)?,
        discovery_path: PathBuf::from("discovery.jsonl"),
        heldout_path: PathBuf::from("heldout.jsonl"),
    };
    let manifest_path = dir.join("split_manifest.json");
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Reloads a materialized split, verifying both checksums.
pub fn load_split(manifest_path: &Path) -> Result<ExperimentSplit> {
    let bytes = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: SplitManifest = serde_json::from_slice(&bytes)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let discovery_path = base.join(&manifest.discovery_path);
    let heldout_path = base.join(&manifest.heldout_path);
    for (path, expected) in [
        (&discovery_path, &manifest.discovery_sha),
        (&heldout_path, &manifest.heldout_sha),
    ] {
        let found = sha256_file(path)?;
        if &found != expected {
            return Err(Error::ChecksumMismatch {
                expected: expected.clone(),
                found,
            });
        }
    }
    ExperimentSplit::from_parts(
        load_dataset(&discovery_path, DatasetRole::Discovery)?,
        load_dataset(&heldout_path, DatasetRole::Heldout)?,
        manifest.seed,
    )
}

/// Entity ids present in both datasets.
pub fn shared_ids(a: &Dataset, b: &Dataset) -> Vec<String> {
    let left: HashSet<&str> = a.entity_ids().collect();
    b.entity_ids()
        .filter(|id| left.contains(id))
        .map(str::to_owned)
        .collect()
}
