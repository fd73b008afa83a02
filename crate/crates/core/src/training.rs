//! Negative sampling, self-adversarial loss, L3 regularisation and a lazy
//! Adam optimiser.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{build_queries, candidates_time, EvalContext, EvalOptions, QueryKind};
use crate::kg::{EntityId, EntityType, Quadruple, TemporalKg, Timestamp};
use crate::model::checkpoint::RngState;
use crate::model::context::{build_context_index, ContextIndex};
use crate::model::score::{translational, DropoutMasks, Gradients, Workspace};
use crate::model::{ModelConfig, ModelKind, ModelParams, Table};
use crate::rng;

/// Which rows the L3 penalty covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L3Scope {
    /// Entity rows touched by the batch, plus all of `W_E` and `W_P`.
    #[default]
    Batch,
    /// Every row of every regularised table.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// η, adversarial softmax temperature.
    pub adversarial_temperature: f64,
    /// ω.
    pub margin: f64,
    /// α.
    pub learning_rate: f64,
    /// λ.
    pub l3: f64,
    pub l3_scope: L3Scope,
    pub dropout: f64,
    pub neg_time_agnostic: usize,
    pub neg_time_dependent: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub warmup_decay: f64,
    pub total_steps: u64,
    pub validation_every: u64,
    /// Steps between metrics-log rows.
    pub log_every: u64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adversarial_temperature: 0.5,
            margin: 6.0,
            learning_rate: 3e-5,
            l3: 5e-4,
            l3_scope: L3Scope::Batch,
            dropout: 0.4,
            neg_time_agnostic: 256,
            neg_time_dependent: 32,
            batch_size: 64,
            warmup_steps: 100_000,
            warmup_decay: 0.1,
            total_steps: 200_000,
            validation_every: 10_000,
            log_every: 100,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Training(m));
        if self.neg_time_agnostic == 0 || self.neg_time_dependent == 0 || self.batch_size == 0 {
            return err("negative counts and batch size must be positive".into());
        }
        if self.validation_every == 0 || self.log_every == 0 {
            return err("validation and logging intervals must be positive".into());
        }
        if !(self.adversarial_temperature > 0.0) || !(self.margin > 0.0) {
            return err("adversarial temperature and margin must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate >= 0.0) || !(self.l3 >= 0.0) || !(self.warmup_decay >= 0.0) {
            return err("learning rate, L3 coefficient and decay must be non-negative".into());
        }
        Ok(())
    }

    /// Learning rate in effect at `step` (0-based).
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        if step >= self.warmup_steps {
            self.learning_rate * self.warmup_decay
        } else {
            self.learning_rate
        }
    }
}

// ---------------------------------------------------------------------------
// Negatives.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NegativeKind {
    EntityCorrupted,
    TimeCorrupted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Negative {
    pub quad: Quadruple,
    pub kind: NegativeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchEntry {
    pub positive: Quadruple,
    pub negatives: Vec<Negative>,
}

const RETRY_CAP: usize = 100;

/// Draws filtered, type-preserving negatives.
pub struct NegativeSampler {
    entity_types: Vec<EntityType>,
    by_type: HashMap<EntityType, Vec<EntityId>>,
    positives: HashSet<Quadruple>,
    time_range: (Timestamp, Timestamp),
    num_entities: u32,
}

impl NegativeSampler {
    /// `train` provides both the filter set and the time range.
    pub fn new(kg: &TemporalKg, train: &[Quadruple]) -> Result<Self> {
        let lo = train.iter().map(|q| q.t).min();
        let hi = train.iter().map(|q| q.t).max();
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return Err(Error::Training("training split is empty".into()));
        };
        if kg.num_entities() < 2 {
            return Err(Error::Training("need at least two entities to corrupt".into()));
        }
        let by_type = kg.entities_by_type();
        for (ty, members) in &by_type {
            if members.len() == 1 {
                log::warn!("entity type {ty} has a single member; its corruptions fall back to any entity");
            }
        }
        Ok(NegativeSampler {
            entity_types: kg.entity_types().to_vec(),
            by_type,
            positives: train.iter().copied().collect(),
            time_range: (lo, hi),
            num_entities: kg.num_entities() as u32,
        })
    }

    pub fn time_range(&self) -> (Timestamp, Timestamp) {
        self.time_range
    }

    fn replacement(&self, original: EntityId, rng: &mut impl Rng) -> EntityId {
        let pool = &self.by_type[&self.entity_types[original.index()]];
        if pool.len() > 1 {
            // Uniform over the pool without the original.
            let pos = pool.binary_search(&original).expect("entity listed under its type");
            let mut i = rng.gen_range(0..pool.len() - 1);
            if i >= pos {
                i += 1;
            }
            pool[i]
        } else {
            let mut i = rng.gen_range(0..self.num_entities - 1);
            if i >= original.0 {
                i += 1;
            }
            EntityId(i)
        }
    }

    fn corrupt_entity(&self, pos: &Quadruple, rng: &mut impl Rng) -> Quadruple {
        let mut cand = *pos;
        for _ in 0..RETRY_CAP {
            cand = *pos;
            if rng.gen_bool(0.5) {
                cand.s = self.replacement(pos.s, rng);
            } else {
                cand.o = self.replacement(pos.o, rng);
            }
            if !self.positives.contains(&cand) {
                break;
            }
        }
        cand
    }

    fn corrupt_time(&self, pos: &Quadruple, rng: &mut impl Rng) -> Result<Quadruple> {
        let (lo, hi) = self.time_range;
        // Candidate days: [lo, hi] without the true day (which may lie outside).
        let inside = (lo..=hi).contains(&pos.t);
        let span = (hi - lo + 1) as u64 - u64::from(inside);
        if span == 0 {
            return Err(Error::Training(format!(
                "training time range [{lo}, {hi}] leaves no day to corrupt t={} into",
                pos.t
            )));
        }
        let mut cand = *pos;
        for _ in 0..RETRY_CAP {
            let mut t = lo + rng.gen_range(0..span) as Timestamp;
            if inside && t >= pos.t {
                t += 1;
            }
            cand = Quadruple { t, ..*pos };
            if !self.positives.contains(&cand) {
                break;
            }
        }
        Ok(cand)
    }

    /// `n_entity` entity-corrupted then `n_time` time-corrupted negatives.
    pub fn sample(&self, positive: &Quadruple, n_entity: usize, n_time: usize, rng: &mut impl Rng) -> Result<BatchEntry> {
        let mut negatives = Vec::with_capacity(n_entity + n_time);
        for _ in 0..n_entity {
            negatives.push(Negative {
                quad: self.corrupt_entity(positive, rng),
                kind: NegativeKind::EntityCorrupted,
            });
        }
        for _ in 0..n_time {
            negatives.push(Negative {
                quad: self.corrupt_time(positive, rng)?,
                kind: NegativeKind::TimeCorrupted,
            });
        }
        Ok(BatchEntry {
            positive: *positive,
            negatives,
        })
    }
}

/// Negatives for one positive using every tuple of `kg` as the filter set.
pub fn sample_negatives(kg: &TemporalKg, positive: &Quadruple, config: &TrainConfig, rng: &mut impl Rng) -> Result<BatchEntry> {
    NegativeSampler::new(kg, kg.quads())?.sample(positive, config.neg_time_agnostic, config.neg_time_dependent, rng)
}

// ---------------------------------------------------------------------------
// Loss.

fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -log(1 + e^{-x}), evaluated without overflow.
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softmax(η·f)` with max subtraction.
pub fn adversarial_weights(f: &[f64], eta: f64) -> Vec<f64> {
    let Some(max) = f.iter().copied().reduce(f64::max) else { return Vec::new() };
    let e: Vec<f64> = f.iter().map(|x| (eta * (x - max)).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `−log σ(ω − d_pos) − Σ p_i log σ(d_i − ω)`.
pub fn loss(pos_distance: f64, neg_distances: &[f64], weights: &[f64], margin: f64) -> f64 {
    let neg: f64 = neg_distances
        .iter()
        .zip(weights)
        .map(|(d, p)| p * log_sigmoid(d - margin))
        .sum();
    -log_sigmoid(margin - pos_distance) - neg
}

/// `∂loss/∂d_pos` and `∂loss/∂d_i` with the weights held constant.
pub fn loss_gradients(pos_distance: f64, neg_distances: &[f64], weights: &[f64], margin: f64) -> (f64, Vec<f64>) {
    let g_pos = sigmoid(pos_distance - margin);
    let g_neg = neg_distances
        .iter()
        .zip(weights)
        .map(|(d, p)| -p * sigmoid(margin - d))
        .collect();
    (g_pos, g_neg)
}

fn cube_sum(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x.abs().powi(3)).sum()
}

/// `λ·Σ|w|³` over `E`, `E_A`, `W_E` and `W_P`.
pub fn l3_penalty(params: &ModelParams, lambda: f64) -> f64 {
    lambda
        * (cube_sum(params.entity.as_slice())
            + cube_sum(params.amplitude.as_slice())
            + cube_sum(params.w_e.as_slice())
            + cube_sum(params.w_p.as_slice()))
}

/// Adds the penalty's gradient for the given entity rows (all rows when
/// `rows` is `None`) and returns the penalty over the same rows.
fn l3_into(params: &ModelParams, lambda: f64, rows: Option<&[usize]>, g: &mut Gradients) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    fn add(p: &[f64], g: &mut [f64], lambda: f64) -> f64 {
        let mut acc = 0.0;
        for (w, gw) in p.iter().zip(g.iter_mut()) {
            acc += w.abs().powi(3);
            *gw += 3.0 * lambda * w * w.abs();
        }
        lambda * acc
    }
    let mut total = 0.0;
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..params.config.num_entities).collect();
            for &e in &all {
                g.mark_entity(e);
            }
            &all
        }
    };
    for &e in rows {
        total += add(params.entity.row(e), g.entity.row_mut(e), lambda);
        total += add(params.amplitude.row(e), g.amplitude.row_mut(e), lambda);
    }
    total += add(params.w_e.as_slice(), g.w_e.as_mut_slice(), lambda);
    total += add(params.w_p.as_slice(), g.w_p.as_mut_slice(), lambda);
    total
}

// ---------------------------------------------------------------------------
// Objective.

fn check_trainable(config: &ModelConfig) -> Result<()> {
    if config.kind.is_translational() {
        Ok(())
    } else {
        Err(Error::WrongModel {
            required: "translational",
            found: config.kind.name().to_string(),
        })
    }
}

fn draw_masks(config: &ModelConfig, rate: f64, rng: &mut impl Rng) -> DropoutMasks {
    let keep = 1.0 / (1.0 - rate);
    let mut draw = |n: usize| (0..n).map(|_| if rng.gen_bool(rate) { 0.0 } else { keep }).collect();
    let d = config.base_dim();
    let dr = if config.kind.is_relative() { config.relative_dim } else { 0 };
    DropoutMasks {
        head: draw(d),
        tail: draw(d),
        gamma_head: draw(dr),
        gamma_tail: draw(dr),
    }
}

fn distances(
    params: &ModelParams,
    index: &ContextIndex,
    entry: &BatchEntry,
    masks: Option<&DropoutMasks>,
    ws: &mut Workspace,
) -> (f64, Vec<f64>) {
    let relative = params.config.kind == ModelKind::RtDeRotatE;
    let t_q = entry.positive.t;
    let pos = translational(params, index, &entry.positive, t_q, relative, masks, None, ws);
    let negs = entry
        .negatives
        .iter()
        .map(|n| translational(params, index, &n.quad, t_q, relative, masks, None, ws))
        .collect();
    (pos, negs)
}

/// Self-adversarial weights of every batch entry at the current parameters.
pub fn batch_weights(params: &ModelParams, index: &ContextIndex, batch: &[BatchEntry], eta: f64) -> Vec<Vec<f64>> {
    let mut ws = Workspace::new();
    batch
        .iter()
        .map(|entry| {
            let (_, negs) = distances(params, index, entry, None, &mut ws);
            let f: Vec<f64> = negs.iter().map(|d| -d).collect();
            adversarial_weights(&f, eta)
        })
        .collect()
}

/// Mean batch loss plus the L3 penalty, without dropout, using fixed
/// adversarial `weights`. When `grads` is given, the gradient of the same
/// objective is accumulated into it.
pub fn batch_objective(
    params: &ModelParams,
    index: &ContextIndex,
    batch: &[BatchEntry],
    weights: &[Vec<f64>],
    config: &TrainConfig,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    check_trainable(&params.config)?;
    let mut ws = Workspace::new();
    let per: Vec<(f64, Vec<f64>)> = batch
        .iter()
        .map(|e| distances(params, index, e, None, &mut ws))
        .collect();
    objective_and_backward(params, index, batch, &per, weights, None, config, grads)
}

#[allow(clippy::too_many_arguments)]
fn objective_and_backward(
    params: &ModelParams,
    index: &ContextIndex,
    batch: &[BatchEntry],
    dists: &[(f64, Vec<f64>)],
    weights: &[Vec<f64>],
    masks: Option<&[DropoutMasks]>,
    config: &TrainConfig,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut data = 0.0;
    for ((pos, negs), w) in dists.iter().zip(weights) {
        data += loss(*pos, negs, w, config.margin);
    }
    data *= scale;
    let Some(g) = grads else {
        let penalty = match config.l3_scope {
            L3Scope::Full => l3_penalty(params, config.l3),
            L3Scope::Batch => {
                let mut rows: Vec<usize> = batch
                    .iter()
                    .flat_map(|e| std::iter::once(e.positive).chain(e.negatives.iter().map(|n| n.quad)))
                    .flat_map(|q| [q.s.index(), q.o.index()])
                    .collect();
                rows.sort_unstable();
                rows.dedup();
                let mut scratch = Gradients::for_params(params);
                l3_into(params, config.l3, Some(&rows), &mut scratch)
            }
        };
        return Ok(data + penalty);
    };

    let relative = params.config.kind == ModelKind::RtDeRotatE;
    let mut ws = Workspace::new();
    for (i, (entry, ((pos, negs), w))) in batch.iter().zip(dists.iter().zip(weights)).enumerate() {
        let m = masks.map(|m| &m[i]);
        let (g_pos, g_neg) = loss_gradients(*pos, negs, w, config.margin);
        let t_q = entry.positive.t;
        translational(params, index, &entry.positive, t_q, relative, m, Some((g, scale * g_pos)), &mut ws);
        for (n, gn) in entry.negatives.iter().zip(g_neg) {
            translational(params, index, &n.quad, t_q, relative, m, Some((g, scale * gn)), &mut ws);
        }
    }
    let penalty = match config.l3_scope {
        L3Scope::Full => l3_into(params, config.l3, None, g),
        L3Scope::Batch => {
            let rows = g.touched_entities().to_vec();
            l3_into(params, config.l3, Some(&rows), g)
        }
    };
    Ok(data + penalty)
}

// ---------------------------------------------------------------------------
// Optimiser.

/// Adam whose moments are only advanced for rows that received a gradient.
/// `W_E` and `W_P` are dense and update every step.
#[derive(Clone, Debug)]
pub struct LazyAdam {
    m: Vec<Table>,
    v: Vec<Table>,
    t: u64,
}

const TRAINED: [&str; 7] = ["entity", "amplitude", "frequency", "phase", "relation_phase", "w_e", "w_p"];

impl LazyAdam {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<Table> = params
            .tables()
            .iter()
            .filter(|(name, _)| TRAINED.contains(name))
            .map(|(_, t)| Table::zeros(t.rows(), t.cols()))
            .collect();
        LazyAdam {
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, g: &Gradients, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        let update = |w: &mut [f64], gr: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..w.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * gr[k];
                v[k] = b2 * v[k] + (1.0 - b2) * gr[k] * gr[k];
                w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        };
        let [m_e, m_a, m_f, m_p, m_r, m_we, m_wp] = &mut self.m[..] else { unreachable!() };
        let [v_e, v_a, v_f, v_p, v_r, v_we, v_wp] = &mut self.v[..] else { unreachable!() };
        for &e in g.touched_entities() {
            update(params.entity.row_mut(e), g.entity.row(e), m_e.row_mut(e), v_e.row_mut(e));
            update(params.amplitude.row_mut(e), g.amplitude.row(e), m_a.row_mut(e), v_a.row_mut(e));
            update(params.frequency.row_mut(e), g.frequency.row(e), m_f.row_mut(e), v_f.row_mut(e));
            update(params.phase.row_mut(e), g.phase.row(e), m_p.row_mut(e), v_p.row_mut(e));
        }
        for &r in g.touched_relations() {
            update(params.relation_phase.row_mut(r), g.relation_phase.row(r), m_r.row_mut(r), v_r.row_mut(r));
        }
        update(params.w_e.as_mut_slice(), g.w_e.as_slice(), m_we.as_mut_slice(), v_we.as_mut_slice());
        update(params.w_p.as_mut_slice(), g.w_p.as_slice(), m_wp.as_mut_slice(), v_wp.as_mut_slice());
    }
}

// ---------------------------------------------------------------------------
// Trainer.

pub struct Trainer {
    pub params: ModelParams,
    config: TrainConfig,
    index: ContextIndex,
    sampler: NegativeSampler,
    train: Vec<Quadruple>,
    optimizer: LazyAdam,
    grads: Gradients,
    order: Vec<usize>,
    cursor: usize,
    batch_rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    pub fn new(kg: &TemporalKg, train: &[Quadruple], model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_trainable(&model)?;
        let params = ModelParams::init(model, config.seed)?;
        Self::with_params(kg, train, params, config)
    }

    pub fn with_params(kg: &TemporalKg, train: &[Quadruple], params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_trainable(&params.config)?;
        if params.config.num_entities != kg.num_entities() || params.config.num_relations != kg.num_relations() {
            return Err(Error::Training("model dimensions do not match the graph vocabularies".into()));
        }
        let sampler = NegativeSampler::new(kg, train)?;
        let optimizer = LazyAdam::new(&params);
        let grads = Gradients::for_params(&params);
        Ok(Trainer {
            index: build_context_index(train),
            sampler,
            train: train.to_vec(),
            optimizer,
            grads,
            order: Vec::new(),
            cursor: 0,
            batch_rng: rng::substream(config.seed, "batches"),
            step: 0,
            params,
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn index(&self) -> &ContextIndex {
        &self.index
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.batch_rng)
    }

    /// Next positives: passes over a reshuffled copy of the training set.
    fn next_positives(&mut self) -> Vec<Quadruple> {
        let mut out = Vec::with_capacity(self.config.batch_size);
        while out.len() < self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..self.train.len()).collect();
                self.order.shuffle(&mut self.batch_rng);
                self.cursor = 0;
            }
            out.push(self.train[self.order[self.cursor]]);
            self.cursor += 1;
        }
        out
    }

    /// Builds the next batch; negatives for positive `i` come from their own
    /// stream so the result does not depend on thread scheduling.
    pub fn next_batch(&mut self) -> Result<Vec<BatchEntry>> {
        let positives = self.next_positives();
        let (seed, step) = (self.config.seed, self.step);
        let (n_ent, n_time) = (self.config.neg_time_agnostic, self.config.neg_time_dependent);
        let sampler = &self.sampler;
        positives
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = rng::item_stream(seed, "negatives", step, i as u64);
                sampler.sample(p, n_ent, n_time, &mut rng)
            })
            .collect()
    }

    /// One optimisation step on `batch`; returns the objective before the update.
    pub fn train_step(&mut self, batch: &[BatchEntry]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let cfg = &self.config;
        let masks: Option<Vec<DropoutMasks>> = (cfg.dropout > 0.0).then(|| {
            (0..batch.len())
                .map(|i| {
                    let mut rng = rng::item_stream(cfg.seed, "dropout", self.step, i as u64);
                    draw_masks(&self.params.config, cfg.dropout, &mut rng)
                })
                .collect()
        });
        let params = &self.params;
        let index = &self.index;
        let dists: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map_init(Workspace::new, |ws, (i, e)| distances(params, index, e, masks.as_ref().map(|m| &m[i]), ws))
            .collect();
        let eta = cfg.adversarial_temperature;
        let weights: Vec<Vec<f64>> = dists
            .iter()
            .map(|(_, negs)| adversarial_weights(&negs.iter().map(|d| -d).collect::<Vec<_>>(), eta))
            .collect();

        self.grads.clear();
        let objective = objective_and_backward(
            params,
            index,
            batch,
            &dists,
            &weights,
            masks.as_deref(),
            cfg,
            Some(&mut self.grads),
        )?;
        if !objective.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {objective} at step {}; lower the learning rate or check the input scale",
                self.step
            )));
        }
        let lr = cfg.learning_rate_at(self.step);
        self.optimizer.step(&mut self.params, &self.grads, lr, cfg);
        self.step += 1;
        Ok(objective)
    }
}

// ---------------------------------------------------------------------------
// Loop with model selection.

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    /// Mean objective since the previous row.
    pub loss: f64,
    pub validation_mrr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best parameters by validation MRR (final parameters without selection).
    pub params: ModelParams,
    pub best_step: u64,
    pub best_mrr: Option<f64>,
    pub steps_run: u64,
    pub log: Vec<LogRow>,
    pub rng: RngState,
}

/// How validation MRR is measured during selection.
#[derive(Clone, Debug)]
pub struct Selection<'a> {
    pub validation: &'a [Quadruple],
    pub options: EvalOptions,
}

/// Trains for `config.total_steps` steps. With `selection`, validation MRR
/// is computed every `validation_every` steps (and after the last step) and
/// the best parameters are returned.
pub fn train_loop(
    kg: &TemporalKg,
    train: &[Quadruple],
    model: ModelConfig,
    config: &TrainConfig,
    selection: Option<Selection<'_>>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(kg, train, model, config.clone())?;
    let validator = match &selection {
        Some(sel) => {
            if sel.validation.is_empty() {
                return Err(Error::Training("model selection needs a non-empty validation split".into()));
            }
            let ctx = EvalContext::new(kg, train, sel.validation)?;
            let queries = build_queries(sel.validation, &sel.options);
            let dates = match sel.options.kind {
                QueryKind::Time => candidates_time(sel.validation)?,
                QueryKind::Link => Vec::new(),
            };
            Some((ctx, queries, dates, sel.options.rerank))
        }
        None => None,
    };
    let validate = |p: &ModelParams| -> Result<f64> {
        let (ctx, queries, dates, rerank) = validator.as_ref().expect("selection enabled");
        Ok(ctx.evaluate(p, queries, dates, *rerank)?.metrics.mrr)
    };

    let mut best_params = trainer.params.clone();
    let mut best_step = 0;
    let mut best_mrr = None;
    let mut log = Vec::new();
    let (mut window, mut window_n) = (0.0, 0u64);

    for step in 1..=config.total_steps {
        let batch = trainer.next_batch()?;
        window += trainer.train_step(&batch)?;
        window_n += 1;
        let validate_now = validator.is_some() && (step % config.validation_every == 0 || step == config.total_steps);
        if step % config.log_every == 0 || validate_now || step == config.total_steps {
            let mut row = LogRow {
                step,
                loss: window / window_n as f64,
                validation_mrr: None,
            };
            if validate_now {
                let mrr = validate(&trainer.params)?;
                row.validation_mrr = Some(mrr);
                if best_mrr.is_none_or(|b| mrr > b) {
                    best_mrr = Some(mrr);
                    best_step = step;
                    best_params = trainer.params.clone();
                }
            }
            log::info!("step {step}: loss {:.6}{}", row.loss, row.validation_mrr.map(|m| format!(", validation MRR {m:.4}")).unwrap_or_default());
            log.push(row);
            window = 0.0;
            window_n = 0;
        }
    }
    if validator.is_none() && config.total_steps > 0 {
        best_params = trainer.params.clone();
        best_step = config.total_steps;
    }
    Ok(TrainOutcome {
        params: best_params,
        best_step,
        best_mrr,
        steps_run: config.total_steps,
        log,
        rng: trainer.rng_state(),
    })
}

pub fn write_log(path: &Path, header: &str, rows: &[LogRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# {header}")?;
    writeln!(out, "step\tloss\tvalidation_mrr")?;
    for r in rows {
        let mrr = r.validation_mrr.map(|m| format!("{m:.6}")).unwrap_or_default();
        writeln!(out, "{}\t{:.8}\t{mrr}", r.step, r.loss)?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    #[test]
    fn weights_closed_forms() {
        assert_eq!(adversarial_weights(&[1.3, 1.3], 0.5), vec![0.5, 0.5]);
        let w = adversarial_weights(&[2f64.ln(), 0.0], 1.0);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(adversarial_weights(&[], 1.0).is_empty());
    }

    #[test]
    fn loss_closed_forms() {
        assert!((loss(6.0, &[], &[], 6.0) - 2f64.ln()).abs() < 1e-15);
        assert!((loss(6.0, &[6.0], &[1.0], 6.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_formula_oracle() {
        let mut rng = rng::substream(3, "loss-test");
        for _ in 0..200 {
            let pos: f64 = rng.gen_range(0.0..15.0);
            let negs: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..15.0)).collect();
            let w = adversarial_weights(&negs.iter().map(|d| -d).collect::<Vec<_>>(), 0.5);
            let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
            let want = -sig(6.0 - pos).ln() - negs.iter().zip(&w).map(|(d, p)| p * sig(d - 6.0).ln()).sum::<f64>();
            assert!((loss(pos, &negs, &w, 6.0) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn l3_cases() {
        let mut p = ModelParams::zeros(ModelConfig::new(ModelKind::RtDeRotatE, 2, 1, (2, 2, 2))).unwrap();
        assert_eq!(l3_penalty(&p, 1.0), 0.0);
        p.entity.set(0, 0, 2.0);
        assert_eq!(l3_penalty(&p, 1.0), 8.0);
        assert_eq!(l3_penalty(&p, 0.0), 0.0);
        // Unregularised tables do not count.
        p.frequency.fill(5.0);
        p.relation_phase.fill(5.0);
        assert_eq!(l3_penalty(&p, 1.0), 8.0);
    }

    #[test]
    fn l3_matches_naive_sum() {
        let mut p = ModelParams::init(ModelConfig::new(ModelKind::RtDeRotatE, 7, 3, (4, 4, 4)), 2).unwrap();
        p.w_p.fill(-0.3);
        let naive: f64 = [&p.entity, &p.amplitude, &p.w_e, &p.w_p]
            .iter()
            .flat_map(|t| t.as_slice().iter())
            .map(|w| w.abs() * w.abs() * w.abs())
            .sum();
        assert!((l3_penalty(&p, 0.25) - 0.25 * naive).abs() < 1e-12);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            warmup_steps: 3,
            warmup_decay: 0.1,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(2), 1.0);
        assert_eq!(cfg.learning_rate_at(3), 0.1);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { dropout: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { margin: 0.0, ..TrainConfig::default() }.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"margin": 3.0}"#).unwrap();
        assert_eq!(parsed.margin, 3.0);
        assert_eq!(parsed.neg_time_agnostic, 256);
    }

    proptest! {
        #[test]
        fn weights_normalised_and_shift_invariant(f in prop::collection::vec(-50.0f64..50.0, 1..30), c in -100.0f64..100.0) {
            let w = adversarial_weights(&f, 0.5);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = f.iter().map(|x| x + c).collect();
            for (a, b) in w.iter().zip(adversarial_weights(&shifted, 0.5)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn loss_non_negative(pos in 0.0f64..30.0, negs in prop::collection::vec(0.0f64..30.0, 0..10)) {
            let w = adversarial_weights(&negs.iter().map(|d| -d).collect::<Vec<_>>(), 0.5);
            prop_assert!(loss(pos, &negs, &w, 6.0) >= 0.0);
        }

        #[test]
        fn l3_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut p = ModelParams::zeros(ModelConfig::new(ModelKind::DeRotatE, 1, 1, (2, 2, 0))).unwrap();
            p.amplitude.set(0, 1, a);
            let pa = l3_penalty(&p, 1.0);
            p.amplitude.set(0, 1, b);
            let pb = l3_penalty(&p, 1.0);
            prop_assert!((a.abs() <= b.abs()) == (pa <= pb) || a.abs() == b.abs());
        }
    }
}
