//! On-disk persistence: an append-only blob log plus a framed journal of row
//! upserts. Replaying both rebuilds every table; indexes are derived.
//!
//! ```text
//! blobs.log    [id: 32][len: u32le][canonical bytes]...
//! journal.log  [len: u32le][crc32: u32le][bincode Vec<Record>]...
//! meta.json    {"format": 1, "dim": N}
//! ```
//!
//! Blob entries carry no checksum on purpose: a damaged blob must surface as
//! an integrity violation on verified reads, not vanish on replay.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{Hash, HASH_LEN};
use crate::model::{Edge, MergeProposal};
use crate::store::NodeRow;
use crate::vector::EmbeddingRecord;

pub const BLOBS: &str = "blobs.log";
pub const JOURNAL: &str = "journal.log";
pub const META: &str = "meta.json";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Record {
    Node(Hash, NodeRow),
    Edge(Edge),
    Proposal(MergeProposal),
    Negative(Hash, Hash),
    Embedding(Hash, EmbeddingRecord),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub format: u32,
    pub dim: usize,
}

#[derive(Debug, Default)]
pub struct Replay {
    pub blobs: Vec<(Hash, Vec<u8>)>,
    pub records: Vec<Record>,
    pub torn_tail: bool,
}

#[derive(Debug)]
pub struct Persist {
    dir: PathBuf,
    blobs: BufWriter<File>,
    journal: BufWriter<File>,
    sync: bool,
}

fn append_file(path: &Path) -> Result<File> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

pub fn read_meta(dir: &Path) -> Result<Option<Meta>> {
    let path = dir.join(META);
    if !path.exists() {
        return Ok(None);
    }
    let meta: Meta = serde_json::from_slice(&std::fs::read(path)?)?;
    if meta.format != FORMAT {
        return Err(Error::Storage(format!("unsupported store format {}", meta.format)));
    }
    Ok(Some(meta))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

/// Cut a torn tail so later appends are not stranded behind it.
fn truncate_to(path: &Path, valid: usize, len: usize) -> Result<()> {
    if valid < len {
        OpenOptions::new().write(true).open(path)?.set_len(valid as u64)?;
    }
    Ok(())
}

impl Persist {
    /// Open or create a store directory and replay its logs.
    pub fn open(dir: &Path, dim: usize, sync: bool) -> Result<(Self, Replay)> {
        std::fs::create_dir_all(dir)?;
        match read_meta(dir)? {
            Some(meta) if meta.dim != dim => {
                return Err(Error::DimMismatch { expected: meta.dim, got: dim });
            }
            Some(_) => {}
            None => {
                let meta = Meta { format: FORMAT, dim };
                std::fs::write(dir.join(META), serde_json::to_vec_pretty(&meta)?)?;
            }
        }
        let mut replay = Replay::default();
        let blob_bytes = read_all(&dir.join(BLOBS))?;
        let mut at = 0usize;
        while at < blob_bytes.len() {
            if blob_bytes.len() - at < HASH_LEN + 4 {
                replay.torn_tail = true;
                break;
            }
            let id = Hash::from_bytes(blob_bytes[at..at + HASH_LEN].try_into().expect("slice length"));
            let len = u32::from_le_bytes(blob_bytes[at + HASH_LEN..at + HASH_LEN + 4].try_into().expect("slice length"))
                as usize;
            let start = at + HASH_LEN + 4;
            if blob_bytes.len() - start < len {
                replay.torn_tail = true;
                break;
            }
            replay.blobs.push((id, blob_bytes[start..start + len].to_vec()));
            at = start + len;
        }
        truncate_to(&dir.join(BLOBS), at, blob_bytes.len())?;
        let journal = read_all(&dir.join(JOURNAL))?;
        let mut at = 0usize;
        while at < journal.len() {
            if journal.len() - at < 8 {
                replay.torn_tail = true;
                break;
            }
            let len = u32::from_le_bytes(journal[at..at + 4].try_into().expect("slice length")) as usize;
            let crc = u32::from_le_bytes(journal[at + 4..at + 8].try_into().expect("slice length"));
            let start = at + 8;
            if journal.len() - start < len || crc32fast::hash(&journal[start..start + len]) != crc {
                replay.torn_tail = true;
                break;
            }
            let frame: Vec<Record> = bincode::deserialize(&journal[start..start + len])?;
            replay.records.extend(frame);
            at = start + len;
        }
        truncate_to(&dir.join(JOURNAL), at, journal.len())?;
        if replay.torn_tail {
            log::warn!("store {}: ignoring torn tail of a log", dir.display());
        }
        let persist = Persist {
            dir: dir.to_path_buf(),
            blobs: BufWriter::new(append_file(&dir.join(BLOBS))?),
            journal: BufWriter::new(append_file(&dir.join(JOURNAL))?),
            sync,
        };
        Ok((persist, replay))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Append one committed transaction. Blobs go first so that a journal row
    /// never names a blob that is missing after a crash.
    pub fn append(&mut self, blobs: &[(Hash, &[u8])], records: &[Record]) -> Result<()> {
        for (id, bytes) in blobs {
            self.blobs.write_all(id.as_bytes())?;
            self.blobs.write_all(&(bytes.len() as u32).to_le_bytes())?;
            self.blobs.write_all(bytes)?;
        }
        self.blobs.flush()?;
        if self.sync {
            self.blobs.get_ref().sync_data()?;
        }
        if records.is_empty() {
            return Ok(());
        }
        let payload = bincode::serialize(records)?;
        if payload.len() > u32::MAX as usize {
            return Err(Error::Storage("transaction too large for one journal frame".into()));
        }
        self.journal.write_all(&(payload.len() as u32).to_le_bytes())?;
        self.journal.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
        self.journal.write_all(&payload)?;
        self.journal.flush()?;
        if self.sync {
            self.journal.get_ref().sync_data()?;
        }
        Ok(())
    }

    pub fn size_bytes(&self) -> u64 {
        [BLOBS, JOURNAL]
            .iter()
            .filter_map(|f| std::fs::metadata(self.dir.join(f)).ok())
            .map(|m| m.len())
            .sum()
    }
}
