//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "RTKGCKPT"
//! version    u32       1
//! header_len u64
//! header     JSON      CheckpointHeader (model config, vocabularies,
//!                      training config, step, rng state)
//! n_tables   u32
//! per table:
//!   name_len u32, name (UTF-8), rows u64, cols u64, rows*cols f64
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a save/load round trip is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityType, TemporalKg, Vocab};

use super::{ModelConfig, ModelParams, Table, TABLE_NAMES};

const MAGIC: &[u8; 8] = b"RTKGCKPT";
const VERSION: u32 = 1;

/// Serialisable state of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// Word position, decimal (it is a 128-bit counter).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |m: &str| Error::Checkpoint(format!("rng state: {m}"));
        if self.seed.len() != 64 {
            return Err(bad("seed must be 64 hex digits"));
        }
        let mut key = [0u8; 32];
        for (i, byte) in key.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed is not hex"))?;
        }
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word position is not an integer"))?;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// Entity labels in id order with their types.
    pub entities: Vec<(String, EntityType)>,
    /// Relation labels in id order.
    pub relations: Vec<String>,
    /// Training configuration as recorded by the trainer.
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub rng: Option<RngState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Bundles `params` with the vocabularies of `kg`.
    pub fn new(params: ModelParams, kg: &TemporalKg) -> Result<Self> {
        if kg.num_entities() != params.config.num_entities || kg.num_relations() != params.config.num_relations {
            return Err(Error::Checkpoint(format!(
                "graph has {} entities / {} relations, model expects {} / {}",
                kg.num_entities(),
                kg.num_relations(),
                params.config.num_entities,
                params.config.num_relations
            )));
        }
        let entities = kg
            .entities()
            .labels()
            .iter()
            .cloned()
            .zip(kg.entity_types().iter().copied())
            .collect();
        Ok(Checkpoint {
            header: CheckpointHeader {
                model: params.config.clone(),
                entities,
                relations: kg.relations().labels().to_vec(),
                train_config: None,
                step: 0,
                rng: None,
            },
            params,
        })
    }

    /// Entity vocabulary, types and relation vocabulary.
    pub fn vocabularies(&self) -> Result<(Vocab, Vec<EntityType>, Vocab)> {
        let entities = Vocab::from_labels(self.header.entities.iter().map(|(l, _)| l.clone()))?;
        let types = self.header.entities.iter().map(|(_, t)| *t).collect();
        let relations = Vocab::from_labels(self.header.relations.iter().cloned())?;
        Ok((entities, types, relations))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let tables = self.params.tables();
        w.write_all(&(tables.len() as u32).to_le_bytes())?;
        for (name, t) in tables {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for x in t.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let header_len = read_u64(r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
        if header.entities.len() != header.model.num_entities || header.relations.len() != header.model.num_relations {
            return Err(bad("vocabulary size disagrees with model config".into()));
        }

        let mut params = ModelParams::zeros(header.model.clone())?;
        let count = read_u32(r)? as usize;
        if count != TABLE_NAMES.len() {
            return Err(bad(format!("expected {} tables, found {count}", TABLE_NAMES.len())));
        }
        for (expected, (_, slot)) in TABLE_NAMES.iter().zip(params.tables_mut()) {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            if name != expected.as_bytes() {
                return Err(bad(format!("expected table `{expected}`, found `{}`", String::from_utf8_lossy(&name))));
            }
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            if rows != slot.rows() || cols != slot.cols() {
                return Err(bad(format!(
                    "table `{expected}` is {rows}x{cols}, config implies {}x{}",
                    slot.rows(),
                    slot.cols()
                )));
            }
            let mut bytes = vec![0u8; rows * cols * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            *slot = Table::from_vec(rows, cols, data)?;
        }
        Ok(Checkpoint { header, params })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
