//! Per-example losses with analytic gradients.

use serde::{Deserialize, Serialize};

use super::{EmbeddingModel, ModelKind, Norm, Scalar};
use crate::kg::Triple;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `sum_neg max(0, margin - s(pos) + s(neg))`
    Margin,
    /// `softplus(-s(pos)) + mean_neg softplus(s(neg))`
    Softplus,
}

impl LossKind {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::TransE => LossKind::Margin,
            _ => LossKind::Softplus,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossParams<F> {
    pub kind: LossKind,
    pub margin: F,
    /// L2 penalty on the positive triple's rows.
    pub regularization: F,
}

/// A positive triple with its sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub positive: Triple,
    pub negatives: Vec<Triple>,
}

#[derive(Clone, Debug)]
struct RowBuf<F> {
    slot: Vec<u32>,
    rows: Vec<u32>,
    data: Vec<F>,
}

impl<F: Scalar> RowBuf<F> {
    fn new(n: usize) -> Self {
        RowBuf {
            slot: vec![u32::MAX; n],
            rows: Vec::new(),
            data: Vec::new(),
        }
    }

    fn row_mut(&mut self, id: usize, width: usize) -> &mut [F] {
        let mut s = self.slot[id];
        if s == u32::MAX {
            s = self.rows.len() as u32;
            self.slot[id] = s;
            self.rows.push(id as u32);
            self.data.resize(self.data.len() + width, F::zero());
        }
        let s = s as usize;
        &mut self.data[s * width..(s + 1) * width]
    }

    fn clear(&mut self) {
        for &r in &self.rows {
            self.slot[r as usize] = u32::MAX;
        }
        self.rows.clear();
        self.data.clear();
    }
}

/// Gradient accumulator touching only the rows that occur in a batch.
/// Rows are kept in first-touch order, so iteration is deterministic.
#[derive(Clone, Debug)]
pub struct SparseGrad<F> {
    width: usize,
    ent: RowBuf<F>,
    rel: RowBuf<F>,
}

impl<F: Scalar> SparseGrad<F> {
    pub fn new(num_entities: usize, num_relations: usize, width: usize) -> Self {
        SparseGrad {
            width,
            ent: RowBuf::new(num_entities),
            rel: RowBuf::new(num_relations),
        }
    }

    pub fn for_model(model: &EmbeddingModel<F>) -> Self {
        Self::new(model.num_entities(), model.num_relations(), model.width())
    }

    pub fn clear(&mut self) {
        self.ent.clear();
        self.rel.clear();
    }

    pub fn entity_mut(&mut self, id: usize) -> &mut [F] {
        self.ent.row_mut(id, self.width)
    }

    pub fn relation_mut(&mut self, id: usize) -> &mut [F] {
        self.rel.row_mut(id, self.width)
    }

    pub fn entity_rows(&self) -> impl Iterator<Item = (usize, &[F])> {
        let w = self.width;
        self.ent
            .rows
            .iter()
            .enumerate()
            .map(move |(s, &r)| (r as usize, &self.ent.data[s * w..(s + 1) * w]))
    }

    pub fn relation_rows(&self) -> impl Iterator<Item = (usize, &[F])> {
        let w = self.width;
        self.rel
            .rows
            .iter()
            .enumerate()
            .map(move |(s, &r)| (r as usize, &self.rel.data[s * w..(s + 1) * w]))
    }

    /// Adds another accumulator row by row.
    pub fn merge(&mut self, other: &SparseGrad<F>) {
        for (id, g) in other.entity_rows() {
            for (a, &b) in self.ent.row_mut(id, self.width).iter_mut().zip(g) {
                *a += b;
            }
        }
        for (id, g) in other.relation_rows() {
            for (a, &b) in self.rel.row_mut(id, self.width).iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

/// Partial derivatives of the score with respect to the three rows.
fn score_partials<F: Scalar>(
    kind: ModelKind,
    norm: Norm,
    h: &[F],
    r: &[F],
    t: &[F],
    dh: &mut [F],
    dr: &mut [F],
    dt: &mut [F],
) {
    match kind {
        ModelKind::TransE => {
            let n = h.len();
            match norm {
                Norm::L1 => {
                    for k in 0..n {
                        let d = h[k] + r[k] - t[k];
                        let s = if d > F::zero() {
                            F::one()
                        } else if d < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        };
                        dh[k] = -s;
                        dr[k] = -s;
                        dt[k] = s;
                    }
                }
                Norm::L2 => {
                    let dist = (0..n)
                        .map(|k| {
                            let d = h[k] + r[k] - t[k];
                            d * d
                        })
                        .sum::<F>()
                        .sqrt();
                    for k in 0..n {
                        let g = if dist > F::zero() {
                            (h[k] + r[k] - t[k]) / dist
                        } else {
                            F::zero()
                        };
                        dh[k] = -g;
                        dr[k] = -g;
                        dt[k] = g;
                    }
                }
            }
        }
        ModelKind::DistMult => {
            for k in 0..h.len() {
                dh[k] = r[k] * t[k];
                dr[k] = h[k] * t[k];
                dt[k] = h[k] * r[k];
            }
        }
        ModelKind::ComplEx => {
            let d = h.len() / 2;
            for k in 0..d {
                let (hr, hi) = (h[k], h[d + k]);
                let (rr, ri) = (r[k], r[d + k]);
                let (tr, ti) = (t[k], t[d + k]);
                dh[k] = rr * tr + ri * ti;
                dh[d + k] = rr * ti - ri * tr;
                dr[k] = hr * tr + hi * ti;
                dr[d + k] = hr * ti - hi * tr;
                dt[k] = hr * rr - hi * ri;
                dt[d + k] = hr * ri + hi * rr;
            }
        }
    }
}

fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn squared_norm<F: Scalar>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum()
}

/// Loss of one example.
pub fn example_loss<F: Scalar>(model: &EmbeddingModel<F>, ex: &Example, p: &LossParams<F>) -> F {
    let pos = model.score(&ex.positive);
    let mut loss = match p.kind {
        LossKind::Margin => ex
            .negatives
            .iter()
            .map(|n| (p.margin - pos + model.score(n)).max(F::zero()))
            .sum(),
        LossKind::Softplus => {
            let mut l = softplus(-pos);
            if !ex.negatives.is_empty() {
                let k = F::from_usize(ex.negatives.len()).unwrap();
                l += ex.negatives.iter().map(|n| softplus(model.score(n))).sum::<F>() / k;
            }
            l
        }
    };
    if p.regularization > F::zero() {
        let t = &ex.positive;
        loss += p.regularization
            * (squared_norm(model.entity(t.head))
                + squared_norm(model.relation(t.relation))
                + squared_norm(model.entity(t.tail)));
    }
    loss
}

struct Scratch<F> {
    dh: Vec<F>,
    dr: Vec<F>,
    dt: Vec<F>,
}

fn add_score_gradient<F: Scalar>(
    model: &EmbeddingModel<F>,
    t: &Triple,
    coeff: F,
    scratch: &mut Scratch<F>,
    grad: &mut SparseGrad<F>,
) {
    score_partials(
        model.kind(),
        model.norm(),
        model.entity(t.head),
        model.relation(t.relation),
        model.entity(t.tail),
        &mut scratch.dh,
        &mut scratch.dr,
        &mut scratch.dt,
    );
    for (g, &d) in grad.entity_mut(t.head.index()).iter_mut().zip(&scratch.dh) {
        *g += coeff * d;
    }
    for (g, &d) in grad.relation_mut(t.relation.index()).iter_mut().zip(&scratch.dr) {
        *g += coeff * d;
    }
    for (g, &d) in grad.entity_mut(t.tail.index()).iter_mut().zip(&scratch.dt) {
        *g += coeff * d;
    }
}

/// Accumulates the gradient of [`example_loss`] into `grad` and returns the loss.
pub fn example_gradient<F: Scalar>(
    model: &EmbeddingModel<F>,
    ex: &Example,
    p: &LossParams<F>,
    grad: &mut SparseGrad<F>,
) -> F {
    let w = model.width();
    let mut scratch = Scratch {
        dh: vec![F::zero(); w],
        dr: vec![F::zero(); w],
        dt: vec![F::zero(); w],
    };
    let pos = model.score(&ex.positive);
    let mut loss = F::zero();
    match p.kind {
        LossKind::Margin => {
            let mut active = 0usize;
            for n in &ex.negatives {
                let v = p.margin - pos + model.score(n);
                if v > F::zero() {
                    loss += v;
                    active += 1;
                    add_score_gradient(model, n, F::one(), &mut scratch, grad);
                }
            }
            if active > 0 {
                let c = -F::from_usize(active).unwrap();
                add_score_gradient(model, &ex.positive, c, &mut scratch, grad);
            }
        }
        LossKind::Softplus => {
            loss += softplus(-pos);
            add_score_gradient(model, &ex.positive, -sigmoid(-pos), &mut scratch, grad);
            if !ex.negatives.is_empty() {
                let k = F::from_usize(ex.negatives.len()).unwrap();
                let mut neg = F::zero();
                for n in &ex.negatives {
                    let s = model.score(n);
                    neg += softplus(s);
                    add_score_gradient(model, n, sigmoid(s) / k, &mut scratch, grad);
                }
                loss += neg / k;
            }
        }
    }
    if p.regularization > F::zero() {
        let t = &ex.positive;
        let two = p.regularization + p.regularization;
        let h = model.entity(t.head);
        let r = model.relation(t.relation);
        let tl = model.entity(t.tail);
        loss += p.regularization * (squared_norm(h) + squared_norm(r) + squared_norm(tl));
        for (g, &x) in grad.entity_mut(t.head.index()).iter_mut().zip(h) {
            *g += two * x;
        }
        for (g, &x) in grad.relation_mut(t.relation.index()).iter_mut().zip(r) {
            *g += two * x;
        }
        for (g, &x) in grad.entity_mut(t.tail.index()).iter_mut().zip(tl) {
            *g += two * x;
        }
    }
    loss
}
