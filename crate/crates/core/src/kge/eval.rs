//! Link-prediction ranking and metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbeddingModel, ModelKind, Norm, Scalar};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSetting {
    #[default]
    Filtered,
    Raw,
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSetting::Filtered => "filtered",
            EvalSetting::Raw => "raw",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

/// Predict the `side` entity of `triple`; the true answer is that entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub triple: Triple,
    pub side: Side,
}

impl Query {
    pub fn truth(&self) -> EntityId {
        match self.side {
            Side::Head => self.triple.head,
            Side::Tail => self.triple.tail,
        }
    }
}

/// Known answers per query pattern.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn new(triples: &[Triple]) -> Self {
        let mut idx = FilterIndex::default();
        for t in triples {
            idx.tails.entry((t.head, t.relation)).or_default().push(t.tail);
            idx.heads.entry((t.relation, t.tail)).or_default().push(t.head);
        }
        for v in idx.tails.values_mut().chain(idx.heads.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        idx
    }

    pub fn known(&self, q: &Query) -> &[EntityId] {
        let t = &q.triple;
        let found = match q.side {
            Side::Tail => self.tails.get(&(t.head, t.relation)),
            Side::Head => self.heads.get(&(t.relation, t.tail)),
        };
        found.map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Scores every entity as the answer to `q`.
pub fn candidate_scores<F: Scalar>(model: &EmbeddingModel<F>, q: &Query) -> Vec<F> {
    let t = &q.triple;
    let r = model.relation(t.relation);
    let w = model.width();
    let table = model.entity_table();
    match model.kind() {
        ModelKind::TransE => {
            // h + r - e for tails, e - (t - r) for heads: same distance to q
            let q: Vec<F> = match q.side {
                Side::Tail => model.entity(t.head).iter().zip(r).map(|(&h, &r)| h + r).collect(),
                Side::Head => model.entity(t.tail).iter().zip(r).map(|(&t, &r)| t - r).collect(),
            };
            table
                .chunks_exact(w)
                .map(|e| {
                    let d = q.iter().zip(e).map(|(&a, &b)| a - b);
                    match model.norm() {
                        Norm::L1 => -d.map(|x| x.abs()).sum::<F>(),
                        Norm::L2 => -d.map(|x| x * x).sum::<F>().sqrt(),
                    }
                })
                .collect()
        }
        kind => {
            let q: Vec<F> = match (kind, q.side) {
                (ModelKind::DistMult, Side::Tail) => {
                    model.entity(t.head).iter().zip(r).map(|(&h, &r)| h * r).collect()
                }
                (ModelKind::DistMult, Side::Head) => {
                    model.entity(t.tail).iter().zip(r).map(|(&t, &r)| t * r).collect()
                }
                (_, side) => {
                    let d = model.dim();
                    let (rr, ri) = r.split_at(d);
                    let anchor = match side {
                        Side::Tail => model.entity(t.head),
                        Side::Head => model.entity(t.tail),
                    };
                    let (ar, ai) = anchor.split_at(d);
                    let mut q = vec![F::zero(); 2 * d];
                    for k in 0..d {
                        match side {
                            Side::Tail => {
                                q[k] = ar[k] * rr[k] - ai[k] * ri[k];
                                q[d + k] = ar[k] * ri[k] + ai[k] * rr[k];
                            }
                            Side::Head => {
                                q[k] = rr[k] * ar[k] + ri[k] * ai[k];
                                q[d + k] = rr[k] * ai[k] - ri[k] * ar[k];
                            }
                        }
                    }
                    q
                }
            };
            table
                .chunks_exact(w)
                .map(|e| q.iter().zip(e).map(|(&a, &b)| a * b).sum())
                .collect()
        }
    }
}

/// Rank of the true answer among the candidate scores, using the mean-rank
/// tie convention: `1 + higher + ceil(ties / 2)`.
pub fn rank_from_scores<F: Scalar>(scores: &[F], truth: EntityId, filtered: &[EntityId]) -> usize {
    let st = scores[truth.index()];
    if st.is_nan() {
        return scores.len();
    }
    let (mut higher, mut ties) = (0usize, 0usize);
    for (i, &s) in scores.iter().enumerate() {
        if i == truth.index() {
            continue;
        }
        if s > st {
            higher += 1;
        } else if s == st {
            ties += 1;
        }
    }
    for &e in filtered {
        if e == truth {
            continue;
        }
        let s = scores[e.index()];
        if s > st {
            higher -= 1;
        } else if s == st {
            ties -= 1;
        }
    }
    1 + higher + ties.div_ceil(2)
}

pub fn rank_query<F: Scalar>(model: &EmbeddingModel<F>, q: &Query, filter: Option<&FilterIndex>) -> usize {
    let scores = candidate_scores(model, q);
    let known = filter.map(|f| f.known(q)).unwrap_or(&[]);
    rank_from_scores(&scores, q.truth(), known)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRank {
    pub triple: Triple,
    pub head_rank: usize,
    pub tail_rank: usize,
}

/// Head and tail ranks of every test triple, in input order.
pub fn evaluate_queries<F: Scalar>(
    model: &EmbeddingModel<F>,
    test: &[Triple],
    filter: Option<&FilterIndex>,
) -> Vec<QueryRank> {
    test.par_iter()
        .map(|&triple| QueryRank {
            triple,
            head_rank: rank_query(model, &Query { triple, side: Side::Head }, filter),
            tail_rank: rank_query(model, &Query { triple, side: Side::Tail }, filter),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub n_queries: usize,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: EvalSetting,
    pub n_queries: usize,
    pub mrr: f64,
    pub mean_rank: f64,
    pub hits: BTreeMap<usize, f64>,
    pub per_relation: BTreeMap<String, RelationMetrics>,
}

fn metrics(ranks: &[usize], ks: &[usize]) -> (f64, f64, BTreeMap<usize, f64>) {
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let mr = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
    let hits = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    (mrr, mr, hits)
}

impl EvalReport {
    pub fn from_ranks(kg: &KnowledgeGraph, ranks: &[QueryRank], setting: EvalSetting, ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptyGraph("test split".into()));
        }
        let all: Vec<usize> = ranks.iter().flat_map(|q| [q.head_rank, q.tail_rank]).collect();
        let (mrr, mean_rank, hits) = metrics(&all, ks);
        let mut by_rel: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for q in ranks {
            by_rel
                .entry(kg.relation_name(q.triple.relation).to_owned())
                .or_default()
                .extend([q.head_rank, q.tail_rank]);
        }
        let per_relation = by_rel
            .into_iter()
            .map(|(name, rs)| {
                let (mrr, _, hits) = metrics(&rs, ks);
                let m = RelationMetrics {
                    n_queries: rs.len(),
                    mrr,
                    hits,
                };
                (name, m)
            })
            .collect();
        Ok(EvalReport {
            setting,
            n_queries: all.len(),
            mrr,
            mean_rank,
            hits,
            per_relation,
        })
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }
}

/// Evaluates with 2·|test| queries. `filter` is required for the filtered setting.
pub fn evaluate<F: Scalar>(
    model: &EmbeddingModel<F>,
    kg: &KnowledgeGraph,
    test: &[Triple],
    setting: EvalSetting,
    filter: Option<&FilterIndex>,
    ks: &[usize],
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyGraph("test split".into()));
    }
    let filter = match setting {
        EvalSetting::Raw => None,
        EvalSetting::Filtered => Some(
            filter.ok_or_else(|| Error::Config("filtered evaluation needs a filter index".into()))?,
        ),
    };
    let ranks = evaluate_queries(model, test, filter);
    EvalReport::from_ranks(kg, &ranks, setting, ks)
}

/// Test triples whose head and tail ranks are both at most `max_rank`.
pub fn highly_ranked(ranks: &[QueryRank], max_rank: usize) -> Vec<Triple> {
    ranks
        .iter()
        .filter(|q| q.head_rank <= max_rank && q.tail_rank <= max_rank)
        .map(|q| q.triple)
        .collect()
}
