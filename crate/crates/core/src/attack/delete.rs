//! Deletion planning by rule influence.
//!
//! A triple's contribution to a rule is the rule's confidence when the triple
//! is one of the rule's grounded head triples, and zero otherwise. The
//! influence of a triple pools these contributions across the high-confidence
//! rule set; the most influential triples are deleted.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, PerturbationPlan, PlanMode, Triple};
use crate::rules::{body_pairs, RuleSet, DEFAULT_GROUNDING_CAP};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    #[default]
    Mean,
    Max,
}

/// Which rules a mean pool averages over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolDomain {
    /// Only the rules the triple is a head triple of.
    #[default]
    Contributing,
    /// Every rule of the set, zero-padding the non-contributing ones.
    AllRules,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeletionConfig {
    pub pool: Pool,
    pub pool_domain: PoolDomain,
    pub seed: u64,
    pub grounding_cap: usize,
}

impl Default for DeletionConfig {
    fn default() -> Self {
        DeletionConfig {
            pool: Pool::Mean,
            pool_domain: PoolDomain::Contributing,
            seed: 0,
            grounding_cap: DEFAULT_GROUNDING_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Accum {
    sum: f64,
    max: f64,
    count: usize,
    best_rule: usize,
}

/// Pooled influence per triple. Triples without an entry have influence 0.
#[derive(Clone, Debug)]
pub struct InfluenceTable {
    scores: HashMap<Triple, f64>,
    best_rule: HashMap<Triple, usize>,
    pub pool: Pool,
    pub pool_domain: PoolDomain,
    /// Fingerprint of the rule set the table was computed from.
    pub source: String,
    /// Rules whose grounding hit the cap; their head triples are incomplete.
    pub truncated_rules: usize,
}

impl InfluenceTable {
    pub fn score(&self, t: &Triple) -> f64 {
        self.scores.get(t).copied().unwrap_or(0.0)
    }

    /// Index (into the source rule set) of the highest-confidence rule the
    /// triple contributes to.
    pub fn best_rule(&self, t: &Triple) -> Option<usize> {
        self.best_rule.get(t).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Triple, &f64)> {
        self.scores.iter()
    }
}

/// Head triples of `rule` present in the graph, i.e. the supported body pairs.
fn supported_heads(kg: &KnowledgeGraph, rules: &RuleSet, cap: usize) -> Vec<(Vec<Triple>, bool)> {
    rules
        .rules()
        .par_iter()
        .map(|rule| {
            let bp = body_pairs(kg, &rule.body, cap);
            let heads = bp
                .pairs
                .into_iter()
                .map(|(x, y)| Triple::new(x, rule.head, y))
                .filter(|t| kg.contains(t))
                .collect();
            (heads, bp.truncated)
        })
        .collect()
}

pub fn influence_scores(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    pool: Pool,
    pool_domain: PoolDomain,
    grounding_cap: usize,
) -> Result<InfluenceTable> {
    if rules.is_empty() {
        return Err(Error::EmptyRuleSet);
    }
    let per_rule = supported_heads(kg, rules, grounding_cap);
    let truncated_rules = per_rule.iter().filter(|(_, t)| *t).count();
    if truncated_rules > 0 {
        log::warn!("influence: {truncated_rules} rules truncated at {grounding_cap} bindings");
    }
    let mut acc: HashMap<Triple, Accum> = HashMap::new();
    for (i, (heads, _)) in per_rule.iter().enumerate() {
        let alpha = rules.rules()[i].confidence;
        // head pairs are distinct, so each rule contributes at most once per triple
        for t in heads {
            let a = acc.entry(*t).or_insert(Accum {
                sum: 0.0,
                max: f64::NEG_INFINITY,
                count: 0,
                best_rule: i,
            });
            a.sum += alpha;
            a.count += 1;
            if alpha > a.max {
                a.max = alpha;
                a.best_rule = i;
            }
        }
    }
    let n_rules = rules.len() as f64;
    let mut scores = HashMap::with_capacity(acc.len());
    let mut best_rule = HashMap::with_capacity(acc.len());
    for (t, a) in acc {
        let f = match (pool, pool_domain) {
            (Pool::Max, _) => a.max,
            (Pool::Mean, PoolDomain::Contributing) => a.sum / a.count as f64,
            (Pool::Mean, PoolDomain::AllRules) => a.sum / n_rules,
        };
        scores.insert(t, f);
        best_rule.insert(t, a.best_rule);
    }
    Ok(InfluenceTable {
        scores,
        best_rule,
        pool,
        pool_domain,
        source: rules.fingerprint(kg),
        truncated_rules,
    })
}

/// Picks the `budget` most influential triples. Ties are broken by surface
/// form; when fewer than `budget` triples have positive influence the rest is
/// sampled uniformly from the zero-influence triples.
pub fn plan_from_influence(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    table: &InfluenceTable,
    budget: usize,
    seed: u64,
) -> Result<PerturbationPlan> {
    if budget > kg.len() {
        return Err(Error::BudgetTooLarge {
            budget,
            available: kg.len(),
        });
    }
    let mut ranked: Vec<(Triple, f64)> = table
        .iter()
        .filter(|(_, &f)| f > 0.0)
        .map(|(t, &f)| (*t, f))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| kg.surface_key(&a.0).cmp(&kg.surface_key(&b.0)))
    });
    let mut plan = PerturbationPlan::new(PlanMode::Delete, budget);
    for &(t, f) in ranked.iter().take(budget) {
        let rule = table
            .best_rule(&t)
            .map(|i| rules.rules()[i].id(kg))
            .unwrap_or_default();
        plan.push(t, f, rule);
    }
    let missing = budget - plan.len();
    if missing > 0 {
        let mut zero: Vec<Triple> = kg
            .triples()
            .iter()
            .copied()
            .filter(|t| table.score(t) <= 0.0)
            .collect();
        zero.sort_by_key(|t| kg.surface_key(t));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in sample(&mut rng, zero.len(), missing) {
            plan.push(zero[i], 0.0, "random-fill");
        }
        plan.fill_count = missing;
        log::info!("deletion: {missing} of {budget} triples filled at random");
    }
    Ok(plan)
}

pub fn plan_deletion(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    budget: usize,
    cfg: &DeletionConfig,
) -> Result<PerturbationPlan> {
    if budget > kg.len() {
        return Err(Error::BudgetTooLarge {
            budget,
            available: kg.len(),
        });
    }
    if budget == 0 {
        return Ok(PerturbationPlan::new(PlanMode::Delete, 0));
    }
    let table = influence_scores(kg, rules, cfg.pool, cfg.pool_domain, cfg.grounding_cap)?;
    plan_from_influence(kg, rules, &table, budget, cfg.seed)
}
