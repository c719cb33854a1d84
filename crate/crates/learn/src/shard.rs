//! Versioned binary container for collected trajectories.
//!
//! Layout: magic "PFSH" | version u32 LE | header length u64 LE | header
//! JSON | n_steps x (obs_dim + act_dim + 1) f64 LE | sha256 over every
//! preceding byte. Writes go to a temp file and are renamed into place.

use crate::Real;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

pub const SHARD_MAGIC: [u8; 4] = *b"PFSH";
pub const SHARD_VERSION: u32 = 1;

/// Observation and action widths of the standard keyboard configuration.
pub const CANONICAL_OBS_DIM: usize = 1144;
pub const CANONICAL_ACT_DIM: usize = 39;

#[derive(Debug, thiserror::Error)]
pub enum ShardError {
    #[error("shard checksum mismatch")]
    ChecksumFailure,
    #[error("unsupported shard version {0}")]
    VersionMismatch(u32),
    #[error("corrupt shard: {0}")]
    Corrupt(String),
    #[error("invalid shard: {0}")]
    Invalid(String),
    #[error("shard i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "expert-rollout")]
    ExpertRollout,
    #[serde(rename = "dagger-relabeled")]
    DaggerRelabeled,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::ExpertRollout => write!(f, "expert-rollout"),
            Provenance::DaggerRelabeled => write!(f, "dagger-relabeled"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardStep {
    pub observation: Vec<Real>,
    pub action: Vec<Real>,
    pub reward: Real,
}

/// One trajectory with its provenance and quality tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryShard {
    pub song_id: String,
    pub clip_index: u32,
    /// Evaluation F1 of the data-generating expert, in [0, 1].
    pub f1_tag: Real,
    pub provenance: Provenance,
    pub seed: u64,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub steps: Vec<ShardStep>,
}

#[derive(Serialize, Deserialize)]
struct ShardHeader {
    song_id: String,
    clip_index: u32,
    f1_tag: Real,
    provenance: Provenance,
    seed: u64,
    n_steps: usize,
    obs_dim: usize,
    act_dim: usize,
}

impl TrajectoryShard {
    pub fn validate(&self) -> Result<(), ShardError> {
        if !(0.0..=1.0).contains(&self.f1_tag) {
            return Err(ShardError::Invalid(format!("f1_tag {} outside [0,1]", self.f1_tag)));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.observation.len() != self.obs_dim {
                return Err(ShardError::Invalid(format!(
                    "step {i}: observation width {} != {}",
                    step.observation.len(),
                    self.obs_dim
                )));
            }
            if step.action.len() != self.act_dim {
                return Err(ShardError::Invalid(format!(
                    "step {i}: action width {} != {}",
                    step.action.len(),
                    self.act_dim
                )));
            }
        }
        Ok(())
    }

    /// Total undiscounted reward across the trajectory.
    pub fn total_return(&self) -> Real {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

fn encode(shard: &TrajectoryShard) -> Result<Vec<u8>, ShardError> {
    shard.validate()?;
    let header = ShardHeader {
        song_id: shard.song_id.clone(),
        clip_index: shard.clip_index,
        f1_tag: shard.f1_tag,
        provenance: shard.provenance,
        seed: shard.seed,
        n_steps: shard.steps.len(),
        obs_dim: shard.obs_dim,
        act_dim: shard.act_dim,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ShardError::Invalid(e.to_string()))?;
    let payload = shard.steps.len() * (shard.obs_dim + shard.act_dim + 1) * 8;
    let mut bytes = Vec::with_capacity(4 + 4 + 8 + json.len() + payload + 32);
    bytes.extend_from_slice(&SHARD_MAGIC);
    bytes.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for step in &shard.steps {
        for v in &step.observation {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in &step.action {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&step.reward.to_le_bytes());
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    Ok(bytes)
}

pub fn write_shard(path: &Path, shard: &TrajectoryShard) -> Result<(), ShardError> {
    let bytes = encode(shard)?;
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_shard(path: &Path) -> Result<TrajectoryShard, ShardError> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<TrajectoryShard, ShardError> {
    if bytes.len() < 4 + 4 + 8 + 32 {
        return Err(ShardError::ChecksumFailure);
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != stored {
        return Err(ShardError::ChecksumFailure);
    }
    if body[..4] != SHARD_MAGIC {
        return Err(ShardError::Corrupt("bad magic".to_string()));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != SHARD_VERSION {
        return Err(ShardError::VersionMismatch(version));
    }
    let json_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let payload_at = 16 + json_len;
    if body.len() < payload_at {
        return Err(ShardError::Corrupt("header overruns file".to_string()));
    }
    let header: ShardHeader = serde_json::from_slice(&body[16..payload_at])
        .map_err(|e| ShardError::Corrupt(e.to_string()))?;
    let step_width = header.obs_dim + header.act_dim + 1;
    let expected = header.n_steps * step_width * 8;
    if body.len() - payload_at != expected {
        return Err(ShardError::Corrupt(format!(
            "payload is {} bytes, expected {expected}",
            body.len() - payload_at
        )));
    }
    let mut at = payload_at;
    let mut read_f64 = |count: usize| -> Vec<Real> {
        let out = body[at..at + count * 8]
            .chunks_exact(8)
            .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += count * 8;
        out
    };
    let steps = (0..header.n_steps)
        .map(|_| {
            let observation = read_f64(header.obs_dim);
            let action = read_f64(header.act_dim);
            let reward = read_f64(1)[0];
            ShardStep { observation, action, reward }
        })
        .collect();
    let shard = TrajectoryShard {
        song_id: header.song_id,
        clip_index: header.clip_index,
        f1_tag: header.f1_tag,
        provenance: header.provenance,
        seed: header.seed,
        obs_dim: header.obs_dim,
        act_dim: header.act_dim,
        steps,
    };
    shard.validate()?;
    Ok(shard)
}

/// One dataset's table of contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub song_id: String,
    pub clip_index: u32,
    pub f1_tag: Real,
    pub provenance: Provenance,
    pub seed: u64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn push(&mut self, path: &Path, shard: &TrajectoryShard) {
        self.entries.push(ManifestEntry {
            path: path.to_string_lossy().into_owned(),
            song_id: shard.song_id.clone(),
            clip_index: shard.clip_index,
            f1_tag: shard.f1_tag,
            provenance: shard.provenance,
            seed: shard.seed,
            n_steps: shard.steps.len(),
        });
    }

    pub fn save(&self, path: &Path) -> Result<(), ShardError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| ShardError::Invalid(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, json)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ShardError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ShardError::Corrupt(e.to_string()))
    }

    pub fn song_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.iter().map(|e| e.song_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}
