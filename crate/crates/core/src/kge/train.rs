//! Minibatch training with sparse row updates.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{example_gradient, Example, LossKind, LossParams, SparseGrad};
use super::{init_model, l2_normalize, lit, EmbeddingModel, ModelKind, Norm, Scalar};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Triple};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adagrad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Negatives sampled per positive.
    pub negatives: usize,
    pub margin: f64,
    /// Defaults to margin for TransE and softplus otherwise.
    pub loss: Option<LossKind>,
    /// Defaults to 0 for TransE and 1e-5 otherwise.
    pub regularization: Option<f64>,
    pub norm: Norm,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Gradient shards per batch. Results are deterministic for a fixed value.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 200,
            epochs: 100,
            batch_size: 1024,
            learning_rate: 0.1,
            negatives: 16,
            margin: 1.0,
            loss: None,
            regularization: None,
            norm: Norm::L2,
            optimizer: Optimizer::Adagrad,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn loss_for(&self, kind: ModelKind) -> LossKind {
        self.loss.unwrap_or(LossKind::default_for(kind))
    }

    pub fn regularization_for(&self, kind: ModelKind) -> f64 {
        self.regularization.unwrap_or(match kind {
            ModelKind::TransE => 0.0,
            _ => 1e-5,
        })
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return bad("margin must be non-negative");
        }
        let reg = self.regularization_for(kind);
        if !(reg.is_finite() && reg >= 0.0) {
            return bad("regularization must be non-negative");
        }
        if kind == ModelKind::TransE && self.loss_for(kind) == LossKind::Softplus {
            return bad("softplus loss expects an unbounded score; use margin with transe");
        }
        Ok(())
    }

    fn params<F: Scalar>(&self, kind: ModelKind) -> LossParams<F> {
        LossParams {
            kind: self.loss_for(kind),
            margin: lit(self.margin),
            regularization: lit(self.regularization_for(kind)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub steps: usize,
    /// Mean per-example loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub workers: usize,
    pub wall_seconds: f64,
}

/// Corrupts head or tail with a uniform entity, avoiding known training
/// triples for a few attempts.
fn sample_negative<R: Rng>(kg: &KnowledgeGraph, pos: &Triple, rng: &mut R) -> Triple {
    let n = kg.num_entities() as u32;
    let mut cand = *pos;
    for _ in 0..10 {
        let e = EntityId(rng.gen_range(0..n));
        cand = if rng.gen_bool(0.5) {
            Triple::new(e, pos.relation, pos.tail)
        } else {
            Triple::new(pos.head, pos.relation, e)
        };
        if !kg.contains(&cand) {
            break;
        }
    }
    cand
}

struct OptState<F> {
    kind: Optimizer,
    lr: F,
    ent: Vec<F>,
    rel: Vec<F>,
}

impl<F: Scalar> OptState<F> {
    fn new(model: &EmbeddingModel<F>, kind: Optimizer, lr: f64) -> Self {
        let (ne, nr) = match kind {
            Optimizer::Adagrad => (model.entity_table().len(), model.relation_table().len()),
            Optimizer::Sgd => (0, 0),
        };
        OptState {
            kind,
            lr: lit(lr),
            ent: vec![F::zero(); ne],
            rel: vec![F::zero(); nr],
        }
    }

    fn step_row(kind: Optimizer, lr: F, scale: F, param: &mut [F], acc: &mut [F], grad: &[F]) {
        match kind {
            Optimizer::Sgd => {
                for (p, &g) in param.iter_mut().zip(grad) {
                    *p -= lr * g * scale;
                }
            }
            Optimizer::Adagrad => {
                let eps = lit::<F>(1e-10);
                for ((p, a), &g) in param.iter_mut().zip(acc.iter_mut()).zip(grad) {
                    let g = g * scale;
                    *a += g * g;
                    *p -= lr * g / (a.sqrt() + eps);
                }
            }
        }
    }

    fn apply(&mut self, model: &mut EmbeddingModel<F>, grad: &SparseGrad<F>, scale: F) {
        let w = model.width();
        let renorm = model.kind() == ModelKind::TransE;
        let (ents, rels) = model.tables_mut();
        for (id, g) in grad.entity_rows() {
            let row = &mut ents[id * w..(id + 1) * w];
            let acc: &mut [F] = if self.ent.is_empty() {
                &mut []
            } else {
                &mut self.ent[id * w..(id + 1) * w]
            };
            Self::step_row(self.kind, self.lr, scale, row, acc, g);
            if renorm {
                l2_normalize(row);
            }
        }
        for (id, g) in grad.relation_rows() {
            let row = &mut rels[id * w..(id + 1) * w];
            let acc: &mut [F] = if self.rel.is_empty() {
                &mut []
            } else {
                &mut self.rel[id * w..(id + 1) * w]
            };
            Self::step_row(self.kind, self.lr, scale, row, acc, g);
        }
    }
}

/// Trains a freshly initialised model on `kg`.
pub fn train<F: Scalar>(
    kg: &KnowledgeGraph,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<(EmbeddingModel<F>, TrainReport)> {
    cfg.validate(kind)?;
    if kg.is_empty() {
        return Err(Error::EmptyGraph("training graph".into()));
    }
    let start = Instant::now();
    let mut model: EmbeddingModel<F> = init_model(kg, kind, cfg.dim, cfg.norm, cfg.seed)?;
    let params = cfg.params::<F>(kind);
    let mut opt = OptState::new(&model, cfg.optimizer, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut order: Vec<Triple> = kg.triples().to_vec();
    let mut grad = SparseGrad::for_model(&model);
    let n_shards = if cfg.workers > 1 { cfg.workers } else { 0 };
    let mut shards: Vec<SparseGrad<F>> = (0..n_shards)
        .map(|_| SparseGrad::for_model(&model))
        .collect();
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let examples: Vec<Example> = batch
                .iter()
                .map(|pos| Example {
                    positive: *pos,
                    negatives: (0..cfg.negatives)
                        .map(|_| sample_negative(kg, pos, &mut rng))
                        .collect(),
                })
                .collect();
            grad.clear();
            let batch_loss = match &pool {
                None => {
                    let mut l = F::zero();
                    for ex in &examples {
                        l += example_gradient(&model, ex, &params, &mut grad);
                    }
                    l
                }
                Some(pool) => {
                    let chunk = examples.len().div_ceil(cfg.workers);
                    let m = &model;
                    let losses: Vec<F> = pool.install(|| {
                        shards
                            .par_iter_mut()
                            .zip(examples.par_chunks(chunk.max(1)))
                            .map(|(g, exs)| {
                                g.clear();
                                let mut l = F::zero();
                                for ex in exs {
                                    l += example_gradient(m, ex, &params, g);
                                }
                                l
                            })
                            .collect()
                    });
                    let used = examples.len().div_ceil(chunk.max(1));
                    for g in &shards[..used] {
                        grad.merge(g);
                    }
                    losses.into_iter().fold(F::zero(), |a, b| a + b)
                }
            };
            let scale = F::one() / F::from_usize(examples.len()).unwrap();
            opt.apply(&mut model, &grad, scale);
            total += batch_loss.to_f64().unwrap_or(f64::NAN);
            steps += 1;
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log::debug!("{kind} epoch {epoch}: loss {mean:.6}");
        if (epoch + 1) % 10 == 0 || epoch + 1 == cfg.epochs {
            log::info!("{kind} epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.epochs);
        }
        epoch_losses.push(mean);
    }
    if !model.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            loss: f64::NAN,
        });
    }
    let report = TrainReport {
        kind,
        steps,
        epoch_losses,
        workers: cfg.workers,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
