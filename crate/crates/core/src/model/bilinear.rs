//! Bilinear relative-time score (optional mode, higher is more plausible).
//!
//! `D(s,t)·W(r)·D(o,t)ᵀ + γ_s·W·γ_oᵀ + E(s)·W_E·γ_oᵀ + γ_s·W_Eᵀ·E(o)ᵀ`
//! where `γ_e = γ(r, e, t, t_q)` and `W` is the `d_r × d_r` bilinear matrix.

use crate::error::{Error, Result};
use crate::kg::{EntityId, Quadruple, RelationId, Timestamp};

use super::context::ContextIndex;
use super::score::gamma;
use super::{diachronic_embed, ModelKind, ModelParams};

fn quad_form(x: &[f64], m: &[f64], y: &[f64]) -> f64 {
    let cols = y.len();
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi * m[i * cols..(i + 1) * cols].iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub(crate) fn score_unchecked(p: &ModelParams, index: &ContextIndex, q: &Quadruple, t_q: Timestamp) -> f64 {
    let ds = p.config.static_dim;
    let hs = diachronic_embed(p, q.s, q.t);
    let ho = diachronic_embed(p, q.o, q.t);
    let a = quad_form(&hs, p.bilinear_relation.row(q.r.index()), &ho);
    if p.config.relative_dim == 0 {
        return a;
    }
    let gs = gamma(p, index, q.r, q.s, q.t, t_q);
    let go = gamma(p, index, q.r, q.o, q.t, t_q);
    let b = quad_form(&gs, p.bilinear_w.as_slice(), &go);
    let c = quad_form(&hs[..ds], p.w_e.as_slice(), &go);
    let d = quad_form(&ho[..ds], p.w_e.as_slice(), &gs);
    a + b + c + d
}

/// Bilinear score; errors unless `params` were allocated for the bilinear mode.
pub fn rt_bilinear_score(
    params: &ModelParams,
    index: &ContextIndex,
    s: EntityId,
    r: RelationId,
    o: EntityId,
    t: Timestamp,
    t_q: Timestamp,
) -> Result<f64> {
    if params.config.kind != ModelKind::RtBilinear {
        return Err(Error::WrongModel {
            required: ModelKind::RtBilinear.name(),
            found: params.config.kind.name().to_string(),
        });
    }
    Ok(score_unchecked(params, index, &Quadruple { s, r, o, t }, t_q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::context::build_context_index;
    use crate::model::ModelConfig;
    use rand::Rng;

    fn random(dims: (usize, usize, usize), seed: u64) -> ModelParams {
        let mut p = ModelParams::init(ModelConfig::new(ModelKind::RtBilinear, 5, 3, dims), seed).unwrap();
        let mut rng = crate::rng::substream(seed, "bilinear-test");
        for x in p.w_p.as_mut_slice().iter_mut().chain(p.bilinear_w.as_mut_slice()) {
            *x = rng.gen_range(-1.0..1.0);
        }
        p
    }

    fn index() -> ContextIndex {
        build_context_index(&[
            Quadruple::new(0, 0, 1, 1),
            Quadruple::new(2, 1, 0, 3),
            Quadruple::new(1, 2, 3, 4),
            Quadruple::new(4, 1, 1, 6),
        ])
    }

    /// Explicit matrix products with every intermediate vector materialised.
    fn oracle(p: &ModelParams, idx: &ContextIndex, q: &Quadruple, tq: i64) -> f64 {
        let d = p.config.base_dim();
        let (ds, dr) = (p.config.static_dim, p.config.relative_dim);
        let hs = diachronic_embed(p, q.s, q.t);
        let ho = diachronic_embed(p, q.o, q.t);
        let w = |i: usize, j: usize| p.bilinear_relation.get(q.r.index(), i * d + j);
        let mut a = 0.0;
        for i in 0..d {
            for j in 0..d {
                a += hs[i] * w(i, j) * ho[j];
            }
        }
        let gs = gamma(p, idx, q.r, q.s, q.t, tq);
        let go = gamma(p, idx, q.r, q.o, q.t, tq);
        let mut rest = 0.0;
        for i in 0..dr {
            for j in 0..dr {
                rest += gs[i] * p.bilinear_w.get(i, j) * go[j];
            }
        }
        for i in 0..ds {
            for k in 0..dr {
                rest += p.entity.get(q.s.index(), i) * p.w_e.get(i, k) * go[k];
                rest += gs[k] * p.w_e.get(i, k) * p.entity.get(q.o.index(), i);
            }
        }
        a + rest
    }

    #[test]
    fn zero_params_score_zero() {
        let p = ModelParams::zeros(ModelConfig::new(ModelKind::RtBilinear, 5, 3, (4, 2, 4))).unwrap();
        let s = rt_bilinear_score(&p, &index(), EntityId(0), RelationId(1), EntityId(2), 7, 7).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn zero_gamma_isolates_first_term() {
        let mut p = random((4, 2, 4), 3);
        p.w_p.fill(0.0);
        let q = Quadruple::new(1, 1, 2, 7);
        let got = rt_bilinear_score(&p, &index(), q.s, q.r, q.o, q.t, 7).unwrap();
        let hs = diachronic_embed(&p, q.s, q.t);
        let ho = diachronic_embed(&p, q.o, q.t);
        let want = quad_form(&hs, p.bilinear_relation.row(1), &ho);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn matches_oracle() {
        let p = random((4, 4, 6), 8);
        let idx = index();
        for q in [Quadruple::new(0, 0, 1, 5), Quadruple::new(1, 2, 4, 9), Quadruple::new(3, 1, 0, 2)] {
            let got = rt_bilinear_score(&p, &idx, q.s, q.r, q.o, q.t, 6).unwrap();
            assert!((got - oracle(&p, &idx, &q, 6)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_translational_params() {
        let p = ModelParams::zeros(ModelConfig::new(ModelKind::RtDeRotatE, 2, 1, (2, 2, 2))).unwrap();
        assert!(rt_bilinear_score(&p, &ContextIndex::empty(), EntityId(0), RelationId(0), EntityId(1), 0, 0).is_err());
    }
}
