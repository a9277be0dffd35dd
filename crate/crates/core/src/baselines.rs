//! Random and cosine-similarity perturbation baselines.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, PerturbationPlan, PlanMode, Triple};
use crate::kge::{EmbeddingModel, Scalar};

/// Consecutive rejections tolerated before random corruption gives up.
pub const MAX_REJECTIONS: usize = 1_000_000;

fn check_budget(kg: &KnowledgeGraph, budget: usize) -> Result<()> {
    if kg.is_empty() {
        return Err(Error::EmptyGraph("training graph".into()));
    }
    if budget > kg.len() {
        return Err(Error::BudgetTooLarge {
            budget,
            available: kg.len(),
        });
    }
    Ok(())
}

/// Distinct corruptions of training triples: a uniformly drawn triple gets its
/// head or tail (p = 0.5) replaced by a uniform entity. Triples in the graph,
/// in `exclude` or already drawn are rejected.
pub fn random_corruptions<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    count: usize,
    exclude: &HashSet<Triple>,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if kg.is_empty() {
        return Err(Error::EmptyGraph("training graph".into()));
    }
    let triples = kg.triples();
    let n_ent = kg.num_entities() as u32;
    let mut seen: HashSet<Triple> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut rejections = 0;
    while out.len() < count {
        let src = triples[rng.gen_range(0..triples.len())];
        let e = EntityId(rng.gen_range(0..n_ent));
        let cand = if rng.gen_bool(0.5) {
            Triple::new(e, src.relation, src.tail)
        } else {
            Triple::new(src.head, src.relation, e)
        };
        if kg.contains(&cand) || exclude.contains(&cand) || !seen.insert(cand) {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::SamplingExhausted(rejections));
            }
            continue;
        }
        rejections = 0;
        out.push(cand);
    }
    Ok(out)
}

fn surface_sorted(kg: &KnowledgeGraph) -> Vec<Triple> {
    let mut all = kg.triples().to_vec();
    all.sort_by_key(|t| kg.surface_key(t));
    all
}

/// `budget` training triples drawn uniformly without replacement.
pub fn random_deletion(kg: &KnowledgeGraph, budget: usize, seed: u64) -> Result<PerturbationPlan> {
    check_budget(kg, budget)?;
    let all = surface_sorted(kg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = PerturbationPlan::new(PlanMode::Delete, budget);
    for i in sample(&mut rng, all.len(), budget) {
        plan.push(all[i], 0.0, "random");
    }
    Ok(plan)
}

/// `budget` random corruptions of training triples.
pub fn random_addition(kg: &KnowledgeGraph, budget: usize, seed: u64) -> Result<PerturbationPlan> {
    check_budget(kg, budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = PerturbationPlan::new(PlanMode::Add, budget);
    for t in random_corruptions(kg, budget, &HashSet::new(), &mut rng)? {
        plan.push(t, 0.0, "random");
    }
    Ok(plan)
}

/// Training triples standing in for attack targets in untargeted settings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoTargetSet {
    pub triples: Vec<Triple>,
    pub seed: u64,
}

impl PseudoTargetSet {
    /// Samples `max(1, floor(fraction·|T|))` distinct training triples.
    pub fn sample(kg: &KnowledgeGraph, fraction: f64, seed: u64) -> Result<Self> {
        if kg.is_empty() {
            return Err(Error::EmptyGraph("training graph".into()));
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("target fraction {fraction} outside (0, 1]")));
        }
        let all = surface_sorted(kg);
        let n = ((fraction * all.len() as f64 + 1e-9).floor() as usize).clamp(1, all.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, all.len(), n).into_vec();
        idx.sort_unstable();
        Ok(PseudoTargetSet {
            triples: idx.into_iter().map(|i| all[i]).collect(),
            seed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosConfig {
    pub seed: u64,
    /// Add mode scores `pool_factor · budget` random corruptions.
    pub pool_factor: usize,
}

impl Default for CosConfig {
    fn default() -> Self {
        CosConfig { seed: 0, pool_factor: 4 }
    }
}

/// Unit-normalised concatenation of a triple's head, relation and tail rows.
fn representation<F: Scalar>(model: &EmbeddingModel<F>, t: &Triple) -> Option<Vec<f64>> {
    let mut v: Vec<f64> = model
        .entity(t.head)
        .iter()
        .chain(model.relation(t.relation))
        .chain(model.entity(t.tail))
        .map(|x| x.to_f64().unwrap_or(0.0))
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// Mean cosine similarity of each candidate to the targets, `None` for
/// zero-norm candidates.
pub fn mean_cosine<F: Scalar>(model: &EmbeddingModel<F>, targets: &[Triple], candidates: &[Triple]) -> Vec<Option<f64>> {
    let reps: Vec<Vec<f64>> = targets.iter().filter_map(|t| representation(model, t)).collect();
    if reps.len() < targets.len() {
        log::warn!("cos attack: {} zero-norm targets skipped", targets.len() - reps.len());
    }
    let width = 3 * model.width();
    let mut centroid = vec![0.0; width];
    for r in &reps {
        for (c, x) in centroid.iter_mut().zip(r) {
            *c += x;
        }
    }
    let k = reps.len().max(1) as f64;
    centroid.iter_mut().for_each(|c| *c /= k);
    candidates
        .par_iter()
        .map(|t| representation(model, t).map(|v| v.iter().zip(&centroid).map(|(a, b)| a * b).sum()))
        .collect()
}

/// Cosine-similarity baseline. Delete mode removes the training triples most
/// similar to the targets on average; add mode inserts the corrupted triples
/// least similar to them.
pub fn cos_attack<F: Scalar>(
    kg: &KnowledgeGraph,
    model: &EmbeddingModel<F>,
    targets: &PseudoTargetSet,
    budget: usize,
    mode: PlanMode,
    cfg: &CosConfig,
) -> Result<PerturbationPlan> {
    check_budget(kg, budget)?;
    if targets.triples.is_empty() {
        return Err(Error::Config("cos attack needs at least one target".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let candidates = match mode {
        PlanMode::Delete => surface_sorted(kg),
        PlanMode::Add => {
            let pool = budget.saturating_mul(cfg.pool_factor.max(1));
            let mut c = random_corruptions(kg, pool, &HashSet::new(), &mut rng)?;
            c.sort_by_key(|t| kg.surface_key(t));
            c
        }
    };
    let sims = mean_cosine(model, &targets.triples, &candidates);
    let mut scored: Vec<(Triple, f64)> = Vec::with_capacity(candidates.len());
    let mut skipped = Vec::new();
    for (t, s) in candidates.iter().zip(sims) {
        match s {
            Some(s) => scored.push((*t, s)),
            None => skipped.push(*t),
        }
    }
    if !skipped.is_empty() {
        log::warn!("cos attack: {} zero-norm candidates skipped", skipped.len());
    }
    // stable sort over surface-ordered candidates breaks ties by surface form
    match mode {
        PlanMode::Delete => scored.sort_by(|a, b| b.1.total_cmp(&a.1)),
        PlanMode::Add => scored.sort_by(|a, b| a.1.total_cmp(&b.1)),
    }
    let mut plan = PerturbationPlan::new(mode, budget);
    for &(t, s) in scored.iter().take(budget) {
        plan.push(t, s, "cos");
    }
    let missing = budget - plan.len();
    if missing > 0 {
        if skipped.len() < missing {
            return Err(Error::Config(format!(
                "cos attack: only {} scorable candidates for budget {budget}",
                plan.len() + skipped.len()
            )));
        }
        for i in sample(&mut rng, skipped.len(), missing) {
            plan.push(skipped[i], 0.0, "random-fill");
        }
        plan.fill_count = missing;
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::toy_kg;
    use crate::kge::{init_model, ModelKind, Norm};

    #[test]
    fn random_plans_are_valid_and_seeded() {
        let kg = toy_kg();
        let a = random_deletion(&kg, 3, 11).unwrap();
        assert_eq!(a.len(), 3);
        a.validate(&kg).unwrap();
        assert_eq!(a, random_deletion(&kg, 3, 11).unwrap());
        let add = random_addition(&kg, 5, 2).unwrap();
        add.validate(&kg).unwrap();
        for t in add.triples() {
            let one_slot = kg
                .triples()
                .iter()
                .any(|s| s.relation == t.relation && ((s.head == t.head) ^ (s.tail == t.tail)));
            assert!(one_slot);
        }
        assert!(matches!(random_deletion(&kg, 8, 0), Err(Error::BudgetTooLarge { .. })));
    }

    #[test]
    fn exhausted_sampling_errors() {
        // every corruption of a 1-entity graph is the triple itself
        let kg = KnowledgeGraph::from_named([("a", "r", "a")]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            random_corruptions(&kg, 1, &HashSet::new(), &mut rng),
            Err(Error::SamplingExhausted(_))
        ));
    }

    #[test]
    fn pseudo_targets() {
        let kg = toy_kg();
        let t = PseudoTargetSet::sample(&kg, 0.05, 1).unwrap();
        assert_eq!(t.triples.len(), 1);
        let t = PseudoTargetSet::sample(&kg, 1.0, 1).unwrap();
        assert_eq!(t.triples.len(), 7);
        assert!(PseudoTargetSet::sample(&kg, 0.0, 1).is_err());
    }

    #[test]
    fn cos_delete_picks_target_itself_first() {
        let kg = toy_kg();
        let m: EmbeddingModel<f64> = init_model(&kg, ModelKind::DistMult, 6, Norm::L2, 4).unwrap();
        let target = kg.resolve("a", "bornIn", "usa").unwrap();
        let targets = PseudoTargetSet {
            triples: vec![target],
            seed: 0,
        };
        let sims = mean_cosine(&m, &targets.triples, &[target]);
        assert!((sims[0].unwrap() - 1.0).abs() < 1e-12);
        let plan = cos_attack(&kg, &m, &targets, 2, PlanMode::Delete, &CosConfig::default()).unwrap();
        assert_eq!(plan.entries[0].triple, target);
        plan.validate(&kg).unwrap();
        let add = cos_attack(&kg, &m, &targets, 2, PlanMode::Add, &CosConfig::default()).unwrap();
        add.validate(&kg).unwrap();
        assert!(add.entries[0].score <= add.entries[1].score);
    }
}
