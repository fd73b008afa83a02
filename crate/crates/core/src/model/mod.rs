//! Embedding tables and scoring functions.
//!
//! Three translational models share one parameter layout:
//!
//! * **RotatE**: static entity embeddings rotated by unit-modulus relation
//!   phases, distance `‖h ∘ r − t‖`.
//! * **DE-RotatE**: each entity vector is the static part concatenated with
//!   a diachronic part `E_A(e) + sin(t·E_F(e) + E_Φ(e))`.
//! * **RT-DE-RotatE**: DE-RotatE plus two relative-time terms comparing a
//!   projection of the static embedding (`E(e)·W_E`) with a relation-weighted
//!   sum of sinusoidal encodings of the time since the entity last took part
//!   in each relation (see [`context`] and [`score::gamma`]).
//!
//! Complex vectors are stored as consecutive `(re, im)` pairs. Relation
//! rotations are stored as phase angles so their modulus is 1 by
//! construction.
//!
//! A bilinear relative-time variant is available as an optional mode
//! ([`bilinear`]); it is scored but not trained by this crate.

pub mod bilinear;
pub mod checkpoint;
pub mod context;
pub mod encoding;
pub mod score;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, Timestamp};
use crate::rng;

pub use bilinear::rt_bilinear_score;
pub use context::{build_context_index, relative_delta, ContextIndex};
pub use encoding::positional_row;
pub use score::{de_rotate_score, distance, gamma, rotate_score, rt_de_rotate_score, Scorer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[serde(rename = "rotate")]
    RotatE,
    #[serde(rename = "de-rotate")]
    DeRotatE,
    #[serde(rename = "rt-de-rotate")]
    RtDeRotatE,
    #[serde(rename = "rt-bilinear")]
    RtBilinear,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RotatE => "rotate",
            ModelKind::DeRotatE => "de-rotate",
            ModelKind::RtDeRotatE => "rt-de-rotate",
            ModelKind::RtBilinear => "rt-bilinear",
        }
    }

    /// Whether the model carries `W_E` / `W_P` and relative-time terms.
    pub fn is_relative(self) -> bool {
        matches!(self, ModelKind::RtDeRotatE | ModelKind::RtBilinear)
    }

    pub fn is_translational(self) -> bool {
        !matches!(self, ModelKind::RtBilinear)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rotate" => Ok(ModelKind::RotatE),
            "de-rotate" => Ok(ModelKind::DeRotatE),
            "rt-de-rotate" => Ok(ModelKind::RtDeRotatE),
            "rt-bilinear" => Ok(ModelKind::RtBilinear),
            other => Err(format!(
                "unknown model `{other}` (expected rotate, de-rotate, rt-de-rotate or rt-bilinear)"
            )),
        }
    }
}

/// Distance norm for translational terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// Sum of complex moduli (term a) / absolute values (relative terms).
    #[default]
    L1,
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub num_entities: usize,
    pub num_relations: usize,
    /// `d_s`, static dimension.
    pub static_dim: usize,
    /// `d_t`, diachronic dimension.
    pub temporal_dim: usize,
    /// `d_r`, relative-time encoding dimension.
    pub relative_dim: usize,
    #[serde(default)]
    pub norm: Norm,
    /// Half-width of the uniform initialisation range.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    0.1
}

impl ModelConfig {
    pub fn new(kind: ModelKind, num_entities: usize, num_relations: usize, dims: (usize, usize, usize)) -> Self {
        ModelConfig {
            kind,
            num_entities,
            num_relations,
            static_dim: dims.0,
            temporal_dim: dims.1,
            relative_dim: dims.2,
            norm: Norm::L1,
            init_scale: default_init_scale(),
        }
    }

    /// `d_s + d_t`.
    pub fn base_dim(&self) -> usize {
        self.static_dim + self.temporal_dim
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::ModelConfig(m));
        for (name, d) in [
            ("static", self.static_dim),
            ("temporal", self.temporal_dim),
            ("relative", self.relative_dim),
        ] {
            if d % 2 != 0 {
                return err(format!("{name} dimension must be even, got {d}"));
            }
        }
        if self.base_dim() == 0 {
            return err("static + temporal dimension must be positive".into());
        }
        if self.num_entities == 0 || self.num_relations == 0 {
            return err("model needs at least one entity and one relation".into());
        }
        match self.kind {
            ModelKind::RotatE if self.temporal_dim != 0 || self.relative_dim != 0 => {
                err("rotate uses static embeddings only (temporal and relative dims must be 0)".into())
            }
            ModelKind::DeRotatE if self.relative_dim != 0 => err("de-rotate has no relative-time terms (relative dim must be 0)".into()),
            _ if !(self.init_scale.is_finite() && self.init_scale >= 0.0) => {
                err(format!("init scale must be finite and non-negative, got {}", self.init_scale))
            }
            _ => Ok(()),
        }
    }
}

/// Exact number of learnable scalars allocated for `config`.
///
/// Translational models: `|V|·d_s + 3·|V|·d_t + |R|·(d_s+d_t)/2`, plus
/// `d_s·d_r + |R|²` for `W_E` and `W_P` in the relative-time model. The
/// bilinear mode swaps relation phases for `|R|` full `(d_s+d_t)²`
/// matrices and adds a `d_r × d_r` matrix.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let v = config.num_entities;
    let r = config.num_relations;
    let (ds, dt, dr) = (config.static_dim, config.temporal_dim, config.relative_dim);
    let d = ds + dt;
    let entity = v * ds + 3 * v * dt;
    Ok(match config.kind {
        ModelKind::RotatE | ModelKind::DeRotatE => entity + r * d / 2,
        ModelKind::RtDeRotatE => entity + r * d / 2 + ds * dr + r * r,
        ModelKind::RtBilinear => entity + r * d * d + ds * dr + r * r + dr * dr,
    })
}

/// Dense row-major table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ModelConfig(format!(
                "table of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Table { rows, cols, data })
    }

    fn uniform(rows: usize, cols: usize, half_width: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| if half_width > 0.0 { rng.gen_range(-half_width..half_width) } else { 0.0 })
            .collect();
        Table { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }
}

/// Names of the parameter tables, in checkpoint order.
pub const TABLE_NAMES: [&str; 9] = [
    "entity",
    "amplitude",
    "frequency",
    "phase",
    "relation_phase",
    "w_e",
    "w_p",
    "bilinear_relation",
    "bilinear_w",
];

/// All learnable tables of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `E`: `|V| × d_s`.
    pub entity: Table,
    /// `E_A`: `|V| × d_t`.
    pub amplitude: Table,
    /// `E_F`: `|V| × d_t`.
    pub frequency: Table,
    /// `E_Φ`: `|V| × d_t`.
    pub phase: Table,
    /// `E_R`: `|R| × (d_s+d_t)/2` rotation angles.
    pub relation_phase: Table,
    /// `W_E`: `d_s × d_r`.
    pub w_e: Table,
    /// `W_P`: `|R| × |R|`, row `r` weights the relative-time rows for relation `r`.
    pub w_p: Table,
    /// Bilinear mode only: `|R| × (d_s+d_t)²`, row `r` is `W(r)` row-major.
    pub bilinear_relation: Table,
    /// Bilinear mode only: `d_r × d_r`.
    pub bilinear_w: Table,
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let v = config.num_entities;
        let r = config.num_relations;
        let (ds, dt, dr) = (config.static_dim, config.temporal_dim, config.relative_dim);
        let d = ds + dt;
        let relative = config.kind.is_relative();
        let bilinear = config.kind == ModelKind::RtBilinear;
        Ok(ModelParams {
            entity: Table::zeros(v, ds),
            amplitude: Table::zeros(v, dt),
            frequency: Table::zeros(v, dt),
            phase: Table::zeros(v, dt),
            relation_phase: if bilinear { Table::zeros(0, 0) } else { Table::zeros(r, d / 2) },
            w_e: if relative { Table::zeros(ds, dr) } else { Table::zeros(0, 0) },
            w_p: if relative { Table::zeros(r, r) } else { Table::zeros(0, 0) },
            bilinear_relation: if bilinear { Table::zeros(r, d * d) } else { Table::zeros(0, 0) },
            bilinear_w: if bilinear { Table::zeros(dr, dr) } else { Table::zeros(0, 0) },
            config,
        })
    }

    /// Random initialisation from the `init` stream of `seed`.
    ///
    /// Entity tables and `W_E` are uniform in `±init_scale`, relation phases
    /// uniform in `[-π, π)`, and the importance matrix `W_P` starts at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = ModelParams::zeros(config)?;
        let mut rng = rng::substream(seed, "init");
        let s = p.config.init_scale;
        p.entity = Table::uniform(p.entity.rows, p.entity.cols, s, &mut rng);
        p.amplitude = Table::uniform(p.amplitude.rows, p.amplitude.cols, s, &mut rng);
        p.frequency = Table::uniform(p.frequency.rows, p.frequency.cols, s, &mut rng);
        p.phase = Table::uniform(p.phase.rows, p.phase.cols, s, &mut rng);
        p.relation_phase = Table::uniform(p.relation_phase.rows, p.relation_phase.cols, PI, &mut rng);
        p.w_e = Table::uniform(p.w_e.rows, p.w_e.cols, s, &mut rng);
        p.bilinear_relation = Table::uniform(p.bilinear_relation.rows, p.bilinear_relation.cols, s, &mut rng);
        Ok(p)
    }

    pub fn tables(&self) -> [(&'static str, &Table); 9] {
        [
            (TABLE_NAMES[0], &self.entity),
            (TABLE_NAMES[1], &self.amplitude),
            (TABLE_NAMES[2], &self.frequency),
            (TABLE_NAMES[3], &self.phase),
            (TABLE_NAMES[4], &self.relation_phase),
            (TABLE_NAMES[5], &self.w_e),
            (TABLE_NAMES[6], &self.w_p),
            (TABLE_NAMES[7], &self.bilinear_relation),
            (TABLE_NAMES[8], &self.bilinear_w),
        ]
    }

    pub fn tables_mut(&mut self) -> [(&'static str, &mut Table); 9] {
        [
            (TABLE_NAMES[0], &mut self.entity),
            (TABLE_NAMES[1], &mut self.amplitude),
            (TABLE_NAMES[2], &mut self.frequency),
            (TABLE_NAMES[3], &mut self.phase),
            (TABLE_NAMES[4], &mut self.relation_phase),
            (TABLE_NAMES[5], &mut self.w_e),
            (TABLE_NAMES[6], &mut self.w_p),
            (TABLE_NAMES[7], &mut self.bilinear_relation),
            (TABLE_NAMES[8], &mut self.bilinear_w),
        ]
    }

    /// Number of allocated scalars.
    pub fn num_scalars(&self) -> usize {
        self.tables().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tables().iter().all(|(_, t)| t.as_slice().iter().all(|x| x.is_finite()))
    }

    /// `D(e, t)` written into `out` (length `d_s + d_t`).
    #[inline]
    pub fn diachronic_into(&self, e: EntityId, t: Timestamp, out: &mut [f64]) {
        let ds = self.config.static_dim;
        out[..ds].copy_from_slice(self.entity.row(e.index()));
        let tf = t as f64;
        let amp = self.amplitude.row(e.index());
        let freq = self.frequency.row(e.index());
        let phase = self.phase.row(e.index());
        for (m, slot) in out[ds..].iter_mut().enumerate() {
            *slot = amp[m] + (tf * freq[m] + phase[m]).sin();
        }
    }
}

/// `D(e, t) = E(e) ⊕ (E_A(e) + sin(t·E_F(e) + E_Φ(e)))`.
pub fn diachronic_embed(params: &ModelParams, e: EntityId, t: Timestamp) -> Vec<f64> {
    let mut out = vec![0.0; params.config.base_dim()];
    params.diachronic_into(e, t, &mut out);
    out
}
