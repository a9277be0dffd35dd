//! Addition planning with negative rules.
//!
//! Low-confidence rules are corrupted by rewriting one body predicate into the
//! relation most correlated with it, the corrupted rules are grounded over the
//! clean graph, and the inferred (absent) head triples are sampled following
//! the training relation distribution.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::random_corruptions;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, PerturbationPlan, PlanMode, RelationId, Triple};
use crate::rules::{body_pairs, Atom, Rule, RuleSet, DEFAULT_GROUNDING_CAP};

/// Fraction of entities touching `r` that also touch `r_i`.
///
/// Values are held as exact counts so argmax comparisons are exact.
#[derive(Clone, Debug)]
pub struct CorrelationTable {
    n: usize,
    // joint[r * n + ri] = |{e : r, ri ∈ N(e)}|, diagonal = support
    joint: Vec<usize>,
    rank: Vec<u32>,
}

impl CorrelationTable {
    pub fn new(kg: &KnowledgeGraph) -> Result<Self> {
        let n = kg.num_relations();
        let mut joint = vec![0usize; n * n];
        for e in kg.entities() {
            let rels = kg.incident_relations(e);
            for &a in rels {
                for &b in rels {
                    joint[a.index() * n + b.index()] += 1;
                }
            }
        }
        for r in kg.relations() {
            if joint[r.index() * n + r.index()] == 0 {
                return Err(Error::EmptyRelation(kg.relation_name(r).to_owned()));
            }
        }
        Ok(CorrelationTable {
            n,
            joint,
            rank: kg.relations().map(|r| kg.relation_rank(r)).collect(),
        })
    }

    pub fn num_relations(&self) -> usize {
        self.n
    }

    /// Number of entities incident to `r`.
    pub fn support(&self, r: RelationId) -> usize {
        self.joint[r.index() * self.n + r.index()]
    }

    /// Number of entities incident to both relations.
    pub fn joint(&self, r: RelationId, ri: RelationId) -> usize {
        self.joint[r.index() * self.n + ri.index()]
    }

    /// `cor(r → ri)`.
    pub fn value(&self, r: RelationId, ri: RelationId) -> f64 {
        self.joint(r, ri) as f64 / self.support(r) as f64
    }

    /// The relation `r' ≠ r` maximising `cor(r → r')`; ties go to the
    /// lexicographically smallest relation name.
    pub fn best_replacement(&self, r: RelationId) -> Option<RelationId> {
        (0..self.n as u32)
            .map(RelationId)
            .filter(|&c| c != r)
            .max_by(|&a, &b| {
                self.joint(r, a)
                    .cmp(&self.joint(r, b))
                    .then_with(|| self.rank[b.index()].cmp(&self.rank[a.index()]))
            })
    }
}

pub fn correlation_table(kg: &KnowledgeGraph) -> Result<CorrelationTable> {
    CorrelationTable::new(kg)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewriteStrategy {
    /// Replace with the most correlated relation.
    #[default]
    Correlation,
    /// Replace with a uniformly random other relation.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NegativeRule {
    pub base: Rule,
    pub rewritten_position: usize,
    pub replacement: RelationId,
    pub rule: Rule,
}

/// Rewrites one uniformly chosen body predicate. The atom's inversion flag is
/// kept and the confidence is inherited from the base rule.
pub fn corrupt_rule<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    rule: &Rule,
    table: &CorrelationTable,
    strategy: RewriteStrategy,
    rng: &mut R,
) -> Result<NegativeRule> {
    if rule.body.is_empty() {
        return Err(Error::InvalidRule("empty body".into()));
    }
    let position = rng.gen_range(0..rule.body.len());
    let original = rule.body[position].relation;
    let no_replacement = || Error::NoReplacement(kg.relation_name(original).to_owned());
    if table.num_relations() < 2 {
        return Err(no_replacement());
    }
    let replacement = match strategy {
        RewriteStrategy::Correlation => table.best_replacement(original).ok_or_else(no_replacement)?,
        RewriteStrategy::Random => {
            let mut pick = rng.gen_range(0..table.num_relations() as u32 - 1);
            if pick >= original.0 {
                pick += 1;
            }
            RelationId(pick)
        }
    };
    let mut body = rule.body.clone();
    body[position] = Atom {
        relation: replacement,
        inverted: body[position].inverted,
    };
    Ok(NegativeRule {
        base: rule.clone(),
        rewritten_position: position,
        replacement,
        rule: Rule::new(rule.head, body, rule.confidence),
    })
}

/// Candidate triple with the identifiers of the negative rules inferring it.
pub type Candidates = BTreeMap<Triple, Vec<String>>;

/// Union of the triples inferred by the negative rules that are absent from
/// the graph.
pub fn generate_candidates(kg: &KnowledgeGraph, negatives: &[NegativeRule], grounding_cap: usize) -> Candidates {
    let per_rule: Vec<Vec<Triple>> = negatives
        .par_iter()
        .map(|n| {
            let bp = body_pairs(kg, &n.rule.body, grounding_cap);
            if bp.truncated {
                log::warn!("negative rule {} truncated at {grounding_cap} bindings", n.rule.id(kg));
            }
            bp.pairs
                .into_iter()
                .map(|(x, y)| Triple::new(x, n.rule.head, y))
                .filter(|t| !kg.contains(t))
                .collect()
        })
        .collect();
    let mut out: Candidates = BTreeMap::new();
    for (n, triples) in negatives.iter().zip(per_rule) {
        let id = n.rule.id(kg);
        for t in triples {
            let tags = out.entry(t).or_default();
            if !tags.contains(&id) {
                tags.push(id.clone());
            }
        }
    }
    out
}

/// Largest-remainder apportionment of `total` seats by integer weights.
/// Equal remainders go to the entry with the smaller `order` key.
pub fn largest_remainder(total: usize, weights: &[(u64, u32)]) -> Vec<usize> {
    let sum: u128 = weights.iter().map(|&(w, _)| w as u128).sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if sum == 0 {
        let uniform: Vec<(u64, u32)> = weights.iter().map(|&(_, o)| (1, o)).collect();
        return largest_remainder(total, &uniform);
    }
    let t = total as u128;
    let mut seats: Vec<usize> = weights.iter().map(|&(w, _)| (t * w as u128 / sum) as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = t * weights[a].0 as u128 % sum;
        let rb = t * weights[b].0 as u128 % sum;
        rb.cmp(&ra).then_with(|| weights[a].1.cmp(&weights[b].1))
    });
    for &i in order.iter().take(total - assigned) {
        seats[i] += 1;
    }
    seats
}

/// Per-relation quotas proportional to `weights`, capped by pool sizes with the
/// shortfall redistributed over the unsaturated relations.
pub fn apportion_with_caps(total: usize, entries: &[(u64, u32, usize)]) -> Vec<usize> {
    let capacity: usize = entries.iter().map(|e| e.2).sum();
    let mut remaining = total.min(capacity);
    let mut quota = vec![0usize; entries.len()];
    let mut active: Vec<usize> = (0..entries.len()).collect();
    loop {
        let weights: Vec<(u64, u32)> = active.iter().map(|&i| (entries[i].0, entries[i].1)).collect();
        let seats = largest_remainder(remaining, &weights);
        let saturated: Vec<usize> = active
            .iter()
            .zip(&seats)
            .filter(|&(&i, &s)| s > entries[i].2)
            .map(|(&i, _)| i)
            .collect();
        if saturated.is_empty() {
            for (&i, &s) in active.iter().zip(&seats) {
                quota[i] = s;
            }
            return quota;
        }
        for &i in &saturated {
            quota[i] = entries[i].2;
            remaining -= entries[i].2;
        }
        active.retain(|i| !saturated.contains(i));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdditionConfig {
    pub seed: u64,
    pub rewrite: RewriteStrategy,
    pub grounding_cap: usize,
}

impl Default for AdditionConfig {
    fn default() -> Self {
        AdditionConfig {
            seed: 0,
            rewrite: RewriteStrategy::Correlation,
            grounding_cap: DEFAULT_GROUNDING_CAP,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdditionOutcome {
    pub plan: PerturbationPlan,
    pub negative_rules: Vec<NegativeRule>,
    pub candidate_count: usize,
}

pub fn plan_addition(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    budget: usize,
    cfg: &AdditionConfig,
) -> Result<AdditionOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let table = CorrelationTable::new(kg)?;
    let negative_rules = rules
        .rules()
        .iter()
        .map(|r| corrupt_rule(kg, r, &table, cfg.rewrite, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let candidates = generate_candidates(kg, &negative_rules, cfg.grounding_cap);
    let candidate_count = candidates.len();
    if candidate_count == 0 {
        log::warn!("addition: negative rules produced no candidates");
    }

    let mut by_relation: BTreeMap<RelationId, Vec<(Triple, &Vec<String>)>> = BTreeMap::new();
    for (t, tags) in &candidates {
        by_relation.entry(t.relation).or_default().push((*t, tags));
    }
    let mut groups: Vec<(RelationId, Vec<(Triple, &Vec<String>)>)> = by_relation.into_iter().collect();
    groups.sort_by_key(|(r, _)| kg.relation_rank(*r));
    for (_, g) in groups.iter_mut() {
        g.sort_by_key(|(t, _)| kg.surface_key(t));
    }
    let dist = kg.relation_distribution();
    let entries: Vec<(u64, u32, usize)> = groups
        .iter()
        .map(|(r, g)| (dist[r.index()] as u64, kg.relation_rank(*r), g.len()))
        .collect();
    let quotas = apportion_with_caps(budget, &entries);

    let confidence: BTreeMap<String, f64> = negative_rules
        .iter()
        .map(|n| (n.rule.id(kg), n.rule.confidence))
        .collect();
    let mut plan = PerturbationPlan::new(PlanMode::Add, budget);
    for ((_, group), &q) in groups.iter().zip(&quotas) {
        let mut picked: Vec<usize> = sample(&mut rng, group.len(), q).into_vec();
        picked.sort_unstable();
        for i in picked {
            let (t, tags) = group[i];
            let score = confidence.get(&tags[0]).copied().unwrap_or(0.0);
            plan.push(t, score, tags.join(" | "));
        }
    }

    let missing = budget - plan.len();
    if missing > 0 {
        let exclude: HashSet<Triple> = plan.triples().collect();
        for t in random_corruptions(kg, missing, &exclude, &mut rng)? {
            plan.push(t, 0.0, "random-fill");
        }
        plan.fill_count = missing;
        log::info!("addition: {missing} of {budget} triples filled by random corruption");
    }
    Ok(AdditionOutcome {
        plan,
        negative_rules,
        candidate_count,
    })
}
