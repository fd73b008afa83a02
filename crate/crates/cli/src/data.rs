//! On-disk dataset layout.
//!
//! A graph directory holds `tuples.tsv` and `entity_types.tsv`; a split
//! directory holds `train.tsv`, `valid.tsv`, `test.tsv` and
//! `entity_types.tsv`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rtkg::kg::{build_graph, read_entity_types, read_tuples, LabeledQuad};
use rtkg::model::checkpoint::Checkpoint;
use rtkg::{Quadruple, TemporalKg};

pub const TUPLES: &str = "tuples.tsv";
pub const TYPES: &str = "entity_types.tsv";
pub const TRAIN: &str = "train.tsv";
pub const VALID: &str = "valid.tsv";
pub const TEST: &str = "test.tsv";
pub const RESOLVED: &str = "config.resolved.toml";

/// One-line provenance header (without the leading `#`).
pub fn provenance(command: &str, seed: Option<u64>, inputs: &[&Path]) -> String {
    let mut h = format!("rtkg {} {command}", env!("CARGO_PKG_VERSION"));
    if let Some(seed) = seed {
        h.push_str(&format!(" seed={seed}"));
    }
    for p in inputs {
        h.push_str(&format!(" input={}", p.display()));
    }
    h
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if !path.is_file() {
        bail!("missing {}", path.display());
    }
    Ok(path)
}

pub fn load_graph(dir: &Path) -> Result<TemporalKg> {
    let tuples = read_tuples(&require(dir.join(TUPLES))?)?;
    let types = read_entity_types(&require(dir.join(TYPES))?)?;
    Ok(build_graph(&tuples, &types)?)
}

pub struct SplitData {
    /// Vocabulary over all three parts; its tuple list is their union.
    pub kg: TemporalKg,
    pub train: Vec<Quadruple>,
    pub validation: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
}

impl SplitData {
    pub fn train_and_validation(&self) -> Vec<Quadruple> {
        self.train.iter().chain(&self.validation).copied().collect()
    }
}

fn read_parts(dir: &Path) -> Result<[Vec<LabeledQuad>; 3]> {
    Ok([
        read_tuples(&require(dir.join(TRAIN))?)?,
        read_tuples(&require(dir.join(VALID))?)?,
        read_tuples(&require(dir.join(TEST))?)?,
    ])
}

/// Loads a split directory, assigning ids in file order (train first).
pub fn load_split(dir: &Path) -> Result<SplitData> {
    let parts = read_parts(dir)?;
    let types = read_entity_types(&require(dir.join(TYPES))?)?;
    let all: Vec<LabeledQuad> = parts.iter().flatten().cloned().collect();
    let kg = build_graph(&all, &types)?;
    let [train, validation, test] = parts;
    Ok(SplitData {
        train: kg.resolve(&train)?,
        validation: kg.resolve(&validation)?,
        test: kg.resolve(&test)?,
        kg,
    })
}

/// Loads a split directory against the vocabulary stored in a checkpoint.
pub fn load_split_for(dir: &Path, ck: &Checkpoint) -> Result<SplitData> {
    let (entities, types, relations) = ck.vocabularies()?;
    let base = TemporalKg::from_parts(Vec::new(), entities, types, relations)?;
    let [train, validation, test] = read_parts(dir)?;
    let resolve = |part: &[LabeledQuad], name: &str| {
        base.resolve(part)
            .with_context(|| format!("{name} split does not match the checkpoint vocabulary"))
    };
    let train = resolve(&train, "train")?;
    let validation = resolve(&validation, "validation")?;
    let test = resolve(&test, "test")?;
    let all = train.iter().chain(&validation).chain(&test).copied().collect();
    Ok(SplitData {
        kg: base.with_quads(all)?,
        train,
        validation,
        test,
    })
}

/// Writes a graph directory for `quads` over the vocabulary of `kg`,
/// listing the types of `entities` only.
pub fn write_graph(dir: &Path, header: &str, kg: &TemporalKg, quads: &[Quadruple], entities: &[rtkg::EntityId]) -> Result<()> {
    ensure_dir(dir)?;
    kg.write_tuples(&dir.join(TUPLES), Some(header), quads)?;
    rtkg::kg::write_entity_types(
        &dir.join(TYPES),
        Some(header),
        entities.iter().map(|&e| (kg.entities().label(e.0), kg.entity_type(e))),
    )?;
    Ok(())
}
