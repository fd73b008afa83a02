//! Translational scores and their gradients.
//!
//! One forward routine serves scoring, training and gradient checks: given
//! an optional set of dropout masks and an optional gradient sink it
//! returns the distance and, when asked, accumulates `scale · ∂distance/∂θ`
//! into the sink.

use crate::kg::{EntityId, Quadruple, RelationId, Timestamp};

use super::context::ContextIndex;
use super::encoding::{encode_into, rates};
use super::{ModelKind, ModelParams, Norm, Table};

/// Multiplicative dropout masks (entries are `0` or `1/(1-p)`).
#[derive(Clone, Debug, Default)]
pub struct DropoutMasks {
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
    pub gamma_head: Vec<f64>,
    pub gamma_tail: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct RowSet {
    flags: Vec<bool>,
    list: Vec<usize>,
}

impl RowSet {
    fn new(n: usize) -> Self {
        RowSet {
            flags: vec![false; n],
            list: Vec::new(),
        }
    }

    #[inline]
    fn mark(&mut self, i: usize) {
        if !self.flags[i] {
            self.flags[i] = true;
            self.list.push(i);
        }
    }

    fn clear(&mut self) {
        for &i in &self.list {
            self.flags[i] = false;
        }
        self.list.clear();
    }
}

/// Gradient buffers shaped like the translational parameter tables, with
/// bookkeeping of which entity and relation rows were touched.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub entity: Table,
    pub amplitude: Table,
    pub frequency: Table,
    pub phase: Table,
    pub relation_phase: Table,
    pub w_e: Table,
    pub w_p: Table,
    pub(crate) entity_rows: RowSet,
    pub(crate) relation_rows: RowSet,
}

impl Gradients {
    pub fn for_params(p: &ModelParams) -> Self {
        let like = |t: &Table| Table::zeros(t.rows(), t.cols());
        Gradients {
            entity: like(&p.entity),
            amplitude: like(&p.amplitude),
            frequency: like(&p.frequency),
            phase: like(&p.phase),
            relation_phase: like(&p.relation_phase),
            w_e: like(&p.w_e),
            w_p: like(&p.w_p),
            entity_rows: RowSet::new(p.config.num_entities),
            relation_rows: RowSet::new(p.config.num_relations),
        }
    }

    /// Zeroes every touched row.
    pub fn clear(&mut self) {
        for &i in &self.entity_rows.list {
            self.entity.row_mut(i).fill(0.0);
            self.amplitude.row_mut(i).fill(0.0);
            self.frequency.row_mut(i).fill(0.0);
            self.phase.row_mut(i).fill(0.0);
        }
        for &r in &self.relation_rows.list {
            self.relation_phase.row_mut(r).fill(0.0);
        }
        self.w_e.fill(0.0);
        self.w_p.fill(0.0);
        self.entity_rows.clear();
        self.relation_rows.clear();
    }

    pub fn touched_entities(&self) -> &[usize] {
        &self.entity_rows.list
    }

    pub fn touched_relations(&self) -> &[usize] {
        &self.relation_rows.list
    }

    pub(crate) fn mark_entity(&mut self, e: usize) {
        self.entity_rows.mark(e);
    }

    pub(crate) fn mark_relation(&mut self, r: usize) {
        self.relation_rows.mark(r);
    }

    /// Gradient table matching a parameter table name.
    pub fn table(&self, name: &str) -> Option<&Table> {
        Some(match name {
            "entity" => &self.entity,
            "amplitude" => &self.amplitude,
            "frequency" => &self.frequency,
            "phase" => &self.phase,
            "relation_phase" => &self.relation_phase,
            "w_e" => &self.w_e,
            "w_p" => &self.w_p,
            _ => return None,
        })
    }
}

/// Scratch buffers reused across score evaluations.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    head: Vec<f64>,
    tail: Vec<f64>,
    z: Vec<f64>,
    rot: Vec<f64>,
    g_head: Vec<f64>,
    g_tail: Vec<f64>,
    rates: Vec<f64>,
    head_rels: Vec<usize>,
    head_rows: Vec<f64>,
    tail_rels: Vec<usize>,
    tail_rows: Vec<f64>,
    gamma_head: Vec<f64>,
    gamma_tail: Vec<f64>,
    u_head: Vec<f64>,
    u_tail: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    gv: Vec<f64>,
    gw: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, d: usize, dr: usize) {
        for buf in [&mut self.head, &mut self.tail, &mut self.z, &mut self.rot, &mut self.g_head, &mut self.g_tail] {
            buf.resize(d, 0.0);
        }
        for buf in [
            &mut self.gamma_head,
            &mut self.gamma_tail,
            &mut self.u_head,
            &mut self.u_tail,
            &mut self.v,
            &mut self.w,
            &mut self.gv,
            &mut self.gw,
        ] {
            buf.resize(dr, 0.0);
        }
        if self.rates.len() != dr {
            self.rates = rates(dr);
        }
    }
}

/// Rotates `h` pairwise by `phases`, subtracts `tail`; writes the rotated
/// head into `rot` and the residual into `z`.
#[inline]
fn rotation_residual(h: &[f64], tail: &[f64], phases: &[f64], rot: &mut [f64], z: &mut [f64]) {
    for (j, theta) in phases.iter().enumerate() {
        let (x, y) = (h[2 * j], h[2 * j + 1]);
        let (sn, c) = theta.sin_cos();
        let rx = x * c - y * sn;
        let ry = x * sn + y * c;
        rot[2 * j] = rx;
        rot[2 * j + 1] = ry;
        z[2 * j] = rx - tail[2 * j];
        z[2 * j + 1] = ry - tail[2 * j + 1];
    }
}

#[inline]
fn complex_norm(z: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => z.chunks_exact(2).map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).sum(),
        Norm::L2 => z.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

#[inline]
fn real_norm(v: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => v.iter().map(|x| x.abs()).sum(),
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// `scale · ∂‖z‖/∂z` for the complex norm, written into `g`.
#[inline]
fn complex_norm_grad(z: &[f64], total: f64, norm: Norm, scale: f64, g: &mut [f64]) {
    match norm {
        Norm::L1 => {
            for (zp, gp) in z.chunks_exact(2).zip(g.chunks_exact_mut(2)) {
                let m = (zp[0] * zp[0] + zp[1] * zp[1]).sqrt();
                let k = if m > 0.0 { scale / m } else { 0.0 };
                gp[0] = k * zp[0];
                gp[1] = k * zp[1];
            }
        }
        Norm::L2 => {
            let k = if total > 0.0 { scale / total } else { 0.0 };
            for (x, gx) in z.iter().zip(g.iter_mut()) {
                *gx = k * x;
            }
        }
    }
}

#[inline]
fn real_norm_grad(v: &[f64], total: f64, norm: Norm, scale: f64, g: &mut [f64]) {
    match norm {
        Norm::L1 => {
            for (x, gx) in v.iter().zip(g.iter_mut()) {
                *gx = if *x > 0.0 {
                    scale
                } else if *x < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
        }
        Norm::L2 => {
            let k = if total > 0.0 { scale / total } else { 0.0 };
            for (x, gx) in v.iter().zip(g.iter_mut()) {
                *gx = k * x;
            }
        }
    }
}

/// Fills the non-zero rows of `P(e, t, t_q)`: one `ρ(t − t_q + δ(e, r', t_q))`
/// row per relation `r'` with history before `t_q`.
fn fill_positional_rows(
    index: &ContextIndex,
    e: EntityId,
    t: Timestamp,
    t_q: Timestamp,
    rates: &[f64],
    rels: &mut Vec<usize>,
    rows: &mut Vec<f64>,
) {
    let dr = rates.len();
    rels.clear();
    rows.clear();
    index.for_each_delta(e, t_q, |r, delta| {
        rels.push(r.index());
        let start = rows.len();
        rows.resize(start + dr, 0.0);
        encode_into((t - t_q + delta) as f64, rates, &mut rows[start..]);
    });
}

/// `γ = W_P(r) · P`, accumulated over the non-zero rows.
#[inline]
fn weighted_rows(w_p_row: &[f64], rels: &[usize], rows: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let dr = out.len();
    for (i, &rp) in rels.iter().enumerate() {
        let w = w_p_row[rp];
        if w == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(&rows[i * dr..(i + 1) * dr]) {
            *o += w * x;
        }
    }
}

/// `out = E(e) · W_E`.
#[inline]
fn project(e_row: &[f64], w_e: &Table, out: &mut [f64]) {
    out.fill(0.0);
    for (i, x) in e_row.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(w_e.row(i)) {
            *o += x * w;
        }
    }
}

/// Accumulates the gradient of `D(e, t)` (already unmasked) into entity row `e`.
fn scatter_diachronic(p: &ModelParams, g: &mut Gradients, e: EntityId, t: Timestamp, grad: &[f64]) {
    let ds = p.config.static_dim;
    let row = e.index();
    g.mark_entity(row);
    for (a, b) in g.entity.row_mut(row).iter_mut().zip(&grad[..ds]) {
        *a += b;
    }
    if p.config.temporal_dim == 0 {
        return;
    }
    let tf = t as f64;
    let freq = p.frequency.row(row);
    let phase = p.phase.row(row);
    let gt = &grad[ds..];
    for (m, gm) in gt.iter().enumerate() {
        if *gm == 0.0 {
            continue;
        }
        let c = (tf * freq[m] + phase[m]).cos();
        g.amplitude.row_mut(row)[m] += gm;
        g.frequency.row_mut(row)[m] += gm * c * tf;
        g.phase.row_mut(row)[m] += gm * c;
    }
}

/// Distance of a translational model for `q` at query time `t_q`.
///
/// `relative` selects whether the two relative-time terms are included.
pub(crate) fn translational(
    p: &ModelParams,
    index: &ContextIndex,
    q: &Quadruple,
    t_q: Timestamp,
    relative: bool,
    masks: Option<&DropoutMasks>,
    grad: Option<(&mut Gradients, f64)>,
    ws: &mut Workspace,
) -> f64 {
    let cfg = &p.config;
    let d = cfg.base_dim();
    let dr = if relative { cfg.relative_dim } else { 0 };
    ws.prepare(d, dr);

    p.diachronic_into(q.s, q.t, &mut ws.head);
    p.diachronic_into(q.o, q.t, &mut ws.tail);
    if let Some(m) = masks {
        ws.head.iter_mut().zip(&m.head).for_each(|(x, k)| *x *= k);
        ws.tail.iter_mut().zip(&m.tail).for_each(|(x, k)| *x *= k);
    }
    let phases = p.relation_phase.row(q.r.index());
    rotation_residual(&ws.head, &ws.tail, phases, &mut ws.rot, &mut ws.z);
    let term_a = complex_norm(&ws.z, cfg.norm);

    let (mut term_b, mut term_c) = (0.0, 0.0);
    if relative && dr > 0 {
        let w_p_row = p.w_p.row(q.r.index());
        fill_positional_rows(index, q.s, q.t, t_q, &ws.rates, &mut ws.head_rels, &mut ws.head_rows);
        fill_positional_rows(index, q.o, q.t, t_q, &ws.rates, &mut ws.tail_rels, &mut ws.tail_rows);
        weighted_rows(w_p_row, &ws.head_rels, &ws.head_rows, &mut ws.gamma_head);
        weighted_rows(w_p_row, &ws.tail_rels, &ws.tail_rows, &mut ws.gamma_tail);
        if let Some(m) = masks {
            ws.gamma_head.iter_mut().zip(&m.gamma_head).for_each(|(x, k)| *x *= k);
            ws.gamma_tail.iter_mut().zip(&m.gamma_tail).for_each(|(x, k)| *x *= k);
        }
        project(p.entity.row(q.s.index()), &p.w_e, &mut ws.u_head);
        project(p.entity.row(q.o.index()), &p.w_e, &mut ws.u_tail);
        for k in 0..dr {
            ws.v[k] = ws.u_head[k] - ws.gamma_tail[k];
            ws.w[k] = ws.gamma_head[k] - ws.u_tail[k];
        }
        term_b = real_norm(&ws.v, cfg.norm);
        term_c = real_norm(&ws.w, cfg.norm);
    }
    let total = term_a + term_b + term_c;

    let Some((g, scale)) = grad else {
        return total;
    };

    // Term (a).
    let mut gz = std::mem::take(&mut ws.g_tail);
    complex_norm_grad(&ws.z, term_a, cfg.norm, scale, &mut gz);
    g.mark_relation(q.r.index());
    {
        let g_phase = g.relation_phase.row_mut(q.r.index());
        for (j, theta) in phases.iter().enumerate() {
            let (sn, c) = theta.sin_cos();
            let (gzx, gzy) = (gz[2 * j], gz[2 * j + 1]);
            ws.g_head[2 * j] = gzx * c + gzy * sn;
            ws.g_head[2 * j + 1] = -gzx * sn + gzy * c;
            g_phase[j] += -gzx * ws.rot[2 * j + 1] + gzy * ws.rot[2 * j];
        }
    }
    // d/d tail = -gz
    gz.iter_mut().for_each(|x| *x = -*x);
    if let Some(m) = masks {
        ws.g_head.iter_mut().zip(&m.head).for_each(|(x, k)| *x *= k);
        gz.iter_mut().zip(&m.tail).for_each(|(x, k)| *x *= k);
    }
    scatter_diachronic(p, g, q.s, q.t, &ws.g_head);
    scatter_diachronic(p, g, q.o, q.t, &gz);
    ws.g_tail = gz;

    if !(relative && dr > 0) {
        return total;
    }

    // Terms (b) and (c).
    real_norm_grad(&ws.v, term_b, cfg.norm, scale, &mut ws.gv);
    real_norm_grad(&ws.w, term_c, cfg.norm, scale, &mut ws.gw);
    let (s_row, o_row) = (q.s.index(), q.o.index());
    let ds = cfg.static_dim;
    for i in 0..ds {
        let es = p.entity.get(s_row, i);
        let eo = p.entity.get(o_row, i);
        let w_e_row = p.w_e.row(i);
        let mut acc_s = 0.0;
        let mut acc_o = 0.0;
        {
            let gw_e = g.w_e.row_mut(i);
            for k in 0..dr {
                acc_s += w_e_row[k] * ws.gv[k];
                acc_o += w_e_row[k] * ws.gw[k];
                gw_e[k] += es * ws.gv[k] - eo * ws.gw[k];
            }
        }
        g.entity.row_mut(s_row)[i] += acc_s;
        g.entity.row_mut(o_row)[i] -= acc_o;
    }
    // dγ_tail = -gv (through its mask), dγ_head = gw.
    for k in 0..dr {
        ws.gv[k] = -ws.gv[k];
    }
    if let Some(m) = masks {
        ws.gv.iter_mut().zip(&m.gamma_tail).for_each(|(x, k)| *x *= k);
        ws.gw.iter_mut().zip(&m.gamma_head).for_each(|(x, k)| *x *= k);
    }
    let g_wp = g.w_p.row_mut(q.r.index());
    for (i, &rp) in ws.tail_rels.iter().enumerate() {
        let row = &ws.tail_rows[i * dr..(i + 1) * dr];
        g_wp[rp] += row.iter().zip(&ws.gv).map(|(a, b)| a * b).sum::<f64>();
    }
    for (i, &rp) in ws.head_rels.iter().enumerate() {
        let row = &ws.head_rows[i * dr..(i + 1) * dr];
        g_wp[rp] += row.iter().zip(&ws.gw).map(|(a, b)| a * b).sum::<f64>();
    }
    total
}

/// RotatE distance on the static embeddings: `‖E(s) ∘ E_R(r) − E(o)‖`,
/// using the first `d_s / 2` relation phases.
pub fn rotate_score(params: &ModelParams, s: EntityId, r: RelationId, o: EntityId) -> f64 {
    let ds = params.config.static_dim;
    let mut rot = vec![0.0; ds];
    let mut z = vec![0.0; ds];
    rotation_residual(
        params.entity.row(s.index()),
        params.entity.row(o.index()),
        &params.relation_phase.row(r.index())[..ds / 2],
        &mut rot,
        &mut z,
    );
    complex_norm(&z, params.config.norm)
}

/// DE-RotatE distance `‖D(s,t) ∘ E_R(r) − D(o,t)‖`.
pub fn de_rotate_score(params: &ModelParams, s: EntityId, r: RelationId, o: EntityId, t: Timestamp) -> f64 {
    let q = Quadruple { s, r, o, t };
    translational(params, &ContextIndex::empty(), &q, t, false, None, None, &mut Workspace::new())
}

/// RT-DE-RotatE distance: the DE-RotatE term plus
/// `‖E(s)·W_E − γ(r, o, t)‖ + ‖γ(r, s, t) − E(o)·W_E‖`.
///
/// For parameters without relative-time tables this is the DE-RotatE
/// distance.
pub fn rt_de_rotate_score(
    params: &ModelParams,
    index: &ContextIndex,
    s: EntityId,
    r: RelationId,
    o: EntityId,
    t: Timestamp,
    t_q: Timestamp,
) -> f64 {
    let q = Quadruple { s, r, o, t };
    let relative = params.config.kind == ModelKind::RtDeRotatE;
    translational(params, index, &q, t_q, relative, None, None, &mut Workspace::new())
}

/// `γ(r, e, t, t_q) = W_P(r) · P(e, t, t_q)`; rows of `P` for relations
/// without history before `t_q` are zero.
pub fn gamma(
    params: &ModelParams,
    index: &ContextIndex,
    r: RelationId,
    e: EntityId,
    t: Timestamp,
    t_q: Timestamp,
) -> Vec<f64> {
    let dr = params.config.relative_dim;
    if !params.config.kind.is_relative() || dr == 0 {
        return vec![0.0; dr];
    }
    let rates = rates(dr);
    let (mut rels, mut rows) = (Vec::new(), Vec::new());
    fill_positional_rows(index, e, t, t_q, &rates, &mut rels, &mut rows);
    let mut out = vec![0.0; dr];
    weighted_rows(params.w_p.row(r.index()), &rels, &rows, &mut out);
    out
}

/// Lower-is-better distance for any model kind (the bilinear score is negated).
pub fn distance(params: &ModelParams, index: &ContextIndex, q: &Quadruple, t_q: Timestamp) -> f64 {
    Scorer::new(params, index).distance(q, t_q)
}

/// Reusable scorer holding its scratch space.
pub struct Scorer<'a> {
    params: &'a ModelParams,
    index: &'a ContextIndex,
    ws: Workspace,
}

impl<'a> Scorer<'a> {
    pub fn new(params: &'a ModelParams, index: &'a ContextIndex) -> Self {
        Scorer {
            params,
            index,
            ws: Workspace::new(),
        }
    }

    pub fn distance(&mut self, q: &Quadruple, t_q: Timestamp) -> f64 {
        match self.params.config.kind {
            ModelKind::RtBilinear => {
                -super::bilinear::score_unchecked(self.params, self.index, q, t_q)
            }
            kind => translational(
                self.params,
                self.index,
                q,
                t_q,
                kind == ModelKind::RtDeRotatE,
                None,
                None,
                &mut self.ws,
            ),
        }
    }
}
