//! Fact-based embedding models: TransE, DistMult and ComplEx.
//!
//! Models are generic over the scalar type. Training runs in `f32` by default;
//! gradient checks use `f64`.

mod checkpoint;
mod eval;
mod loss;
mod similarity;
mod train;

use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

pub use checkpoint::{load_model, save_model, vocab_hash};
pub use eval::{
    candidate_scores, evaluate, evaluate_queries, highly_ranked, rank_from_scores, rank_query, EvalReport, EvalSetting, FilterIndex,
    Query, QueryRank, RelationMetrics, Side,
};
pub use loss::{example_gradient, example_loss, Example, LossKind, LossParams, SparseGrad};
pub use similarity::{relation_similarity_matrix, write_similarity_csv};
pub use train::{train, Optimizer, TrainConfig, TrainReport};

/// Floating point type the models can be instantiated with.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Send + Sync + fmt::Debug + fmt::Display + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransE,
    DistMult,
    ComplEx,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Distance used by TransE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

/// Entity and relation tables plus the scoring function identity.
///
/// ComplEx rows hold `dim` real parts followed by `dim` imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<F> {
    kind: ModelKind,
    dim: usize,
    norm: Norm,
    num_entities: usize,
    num_relations: usize,
    entities: Vec<F>,
    relations: Vec<F>,
}

impl<F: Scalar> EmbeddingModel<F> {
    /// Builds a model from explicit tables (row-major, `width()` values per row).
    pub fn from_tables(
        kind: ModelKind,
        dim: usize,
        norm: Norm,
        entities: Vec<F>,
        relations: Vec<F>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dim must be >= 1".into()));
        }
        let width = row_width(kind, dim);
        if !entities.len().is_multiple_of(width) || !relations.len().is_multiple_of(width) {
            return Err(Error::Config(format!(
                "table sizes {} / {} are not multiples of the row width {width}",
                entities.len(),
                relations.len()
            )));
        }
        Ok(EmbeddingModel {
            kind,
            dim,
            norm,
            num_entities: entities.len() / width,
            num_relations: relations.len() / width,
            entities,
            relations,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Stored values per row.
    pub fn width(&self) -> usize {
        row_width(self.kind, self.dim)
    }

    pub fn entity(&self, e: EntityId) -> &[F] {
        let w = self.width();
        &self.entities[e.index() * w..(e.index() + 1) * w]
    }

    pub fn relation(&self, r: RelationId) -> &[F] {
        let w = self.width();
        &self.relations[r.index() * w..(r.index() + 1) * w]
    }

    pub fn entity_mut(&mut self, e: EntityId) -> &mut [F] {
        let w = self.width();
        &mut self.entities[e.index() * w..(e.index() + 1) * w]
    }

    pub fn relation_mut(&mut self, r: RelationId) -> &mut [F] {
        let w = self.width();
        &mut self.relations[r.index() * w..(r.index() + 1) * w]
    }

    pub fn entity_table(&self) -> &[F] {
        &self.entities
    }

    pub fn relation_table(&self) -> &[F] {
        &self.relations
    }

    pub(crate) fn tables_mut(&mut self) -> (&mut [F], &mut [F]) {
        (&mut self.entities, &mut self.relations)
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|x| x.is_finite())
    }

    /// Plausibility score; higher is more plausible for every model kind.
    pub fn score(&self, t: &Triple) -> F {
        score_rows(
            self.kind,
            self.norm,
            self.entity(t.head),
            self.relation(t.relation),
            self.entity(t.tail),
        )
    }

    /// Converts to another scalar type.
    pub fn cast<G: Scalar>(&self) -> EmbeddingModel<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::from_f64(x.to_f64().unwrap()).unwrap()).collect();
        EmbeddingModel {
            kind: self.kind,
            dim: self.dim,
            norm: self.norm,
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            entities: conv(&self.entities),
            relations: conv(&self.relations),
        }
    }
}

pub(crate) fn row_width(kind: ModelKind, dim: usize) -> usize {
    match kind {
        ModelKind::ComplEx => 2 * dim,
        _ => dim,
    }
}

/// Scores a triple from its three embedding rows.
pub fn score_rows<F: Scalar>(kind: ModelKind, norm: Norm, h: &[F], r: &[F], t: &[F]) -> F {
    match kind {
        ModelKind::TransE => {
            let diffs = h.iter().zip(r).zip(t).map(|((&h, &r), &t)| h + r - t);
            match norm {
                Norm::L1 => -diffs.map(|d| d.abs()).sum::<F>(),
                Norm::L2 => -diffs.map(|d| d * d).sum::<F>().sqrt(),
            }
        }
        ModelKind::DistMult => h.iter().zip(r).zip(t).map(|((&h, &r), &t)| h * r * t).sum(),
        ModelKind::ComplEx => {
            let d = h.len() / 2;
            let (hr, hi) = h.split_at(d);
            let (rr, ri) = r.split_at(d);
            let (tr, ti) = t.split_at(d);
            (0..d)
                .map(|k| {
                    hr[k] * rr[k] * tr[k] + hr[k] * ri[k] * ti[k] + hi[k] * rr[k] * ti[k]
                        - hi[k] * ri[k] * tr[k]
                })
                .sum()
        }
    }
}

pub(crate) fn l2_normalize<F: Scalar>(v: &mut [F]) {
    let n = v.iter().map(|&x| x * x).sum::<F>().sqrt();
    if n > F::zero() {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Uniform `U(-1, 1) / sqrt(dim)` initialisation; TransE entity rows are
/// L2-normalised.
pub fn init_model<F: Scalar>(
    kg: &KnowledgeGraph,
    kind: ModelKind,
    dim: usize,
    norm: Norm,
    seed: u64,
) -> Result<EmbeddingModel<F>> {
    if dim == 0 {
        return Err(Error::Config("embedding dim must be >= 1".into()));
    }
    let width = row_width(kind, dim);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<F> {
        (0..n)
            .map(|_| lit::<F>(rng.gen_range(-1.0..1.0) * scale))
            .collect()
    };
    let entities = draw(kg.num_entities() * width);
    let relations = draw(kg.num_relations() * width);
    let mut model = EmbeddingModel::from_tables(kind, dim, norm, entities, relations)?;
    if kind == ModelKind::TransE {
        for e in kg.entities() {
            l2_normalize(model.entity_mut(e));
        }
    }
    Ok(model)
}
