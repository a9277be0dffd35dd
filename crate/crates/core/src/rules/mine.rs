//! Path-sampling rule miner.
//!
//! Random walks (or, on small graphs, exhaustive path enumeration) from every
//! entity yield candidate bodies; every relation linking a path's endpoints is a
//! candidate head. Candidates are then scored with exact distinct-pair
//! confidence and the best `top_k_per_head` rules per head are kept.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ground::{body_pairs, DEFAULT_GROUNDING_CAP};
use super::{select_rules, Atom, Direction, Rule, RuleSet};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerConfig {
    /// Maximum body length; bodies of length 1..=max_len are mined.
    pub max_len: usize,
    pub walks_per_entity: usize,
    pub top_k_per_head: usize,
    /// Minimum number of distinct body pairs.
    pub min_body_support: usize,
    pub seed: u64,
    /// Enumerate every path instead of sampling walks.
    pub exhaustive: bool,
    pub grounding_cap: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            max_len: 2,
            walks_per_entity: 20,
            top_k_per_head: 100,
            min_body_support: 2,
            seed: 0,
            exhaustive: false,
            grounding_cap: DEFAULT_GROUNDING_CAP,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("max_len", self.max_len),
            ("walks_per_entity", self.walks_per_entity),
            ("top_k_per_head", self.top_k_per_head),
            ("min_body_support", self.min_body_support),
            ("grounding_cap", self.grounding_cap),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("miner {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MiningReport {
    pub rules: RuleSet,
    pub candidate_bodies: usize,
    pub candidate_rules: usize,
    /// Bodies dropped because grounding hit the cap.
    pub truncated_bodies: usize,
    /// Relations with triples but no surviving rule.
    pub uncovered_heads: Vec<RelationId>,
}

type Candidates = BTreeMap<Vec<Atom>, BTreeSet<RelationId>>;

/// Records the candidate rules implied by a path `x --body--> y`, and by the
/// same path read backwards.
fn record(kg: &KnowledgeGraph, x: EntityId, y: EntityId, body: &[Atom], out: &mut Vec<(Vec<Atom>, RelationId)>) {
    for &h in kg.relations_between(x, y) {
        if !(body.len() == 1 && body[0] == Atom::forward(h)) {
            out.push((body.to_vec(), h));
        }
    }
    let rev: Vec<Atom> = body.iter().rev().map(|a| a.flipped()).collect();
    for &h in kg.relations_between(y, x) {
        if !(rev.len() == 1 && rev[0] == Atom::forward(h)) {
            out.push((rev.clone(), h));
        }
    }
}

/// Edges leaving `z` in either direction as (atom, next entity, triple).
fn moves(kg: &KnowledgeGraph, z: EntityId) -> impl Iterator<Item = (Atom, EntityId, Triple)> + '_ {
    let fwd = kg
        .out_edges(z)
        .iter()
        .map(move |&(r, t)| (Atom::forward(r), t, Triple::new(z, r, t)));
    let bwd = kg
        .in_edges(z)
        .iter()
        .map(move |&(r, h)| (Atom::inverse(r), h, Triple::new(h, r, z)));
    fwd.chain(bwd)
}

fn walk_from(kg: &KnowledgeGraph, x: EntityId, cfg: &MinerConfig) -> Vec<(Vec<Atom>, RelationId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ (x.0 as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut out = Vec::new();
    let mut body = Vec::with_capacity(cfg.max_len);
    for _ in 0..cfg.walks_per_entity {
        body.clear();
        let mut z = x;
        let mut last: Option<Triple> = None;
        for _ in 0..cfg.max_len {
            let excluded = last.filter(|t| !is_self_loop(*t));
            let usable = kg.degree(z) - usize::from(excluded.is_some());
            if usable == 0 {
                break;
            }
            // pick uniformly among edges other than the one we arrived by
            let mut pick = rng.gen_range(0..usable);
            let mut chosen = None;
            for m in moves(kg, z) {
                if Some(m.2) == excluded {
                    continue;
                }
                if pick == 0 {
                    chosen = Some(m);
                    break;
                }
                pick -= 1;
            }
            let Some((atom, next, triple)) = chosen else {
                break;
            };
            body.push(atom);
            last = Some(triple);
            z = next;
            record(kg, x, z, &body, &mut out);
        }
    }
    out
}

// A self-loop is listed twice among its entity's moves (forward and inverse),
// so it is never treated as the edge we arrived by.
fn is_self_loop(t: Triple) -> bool {
    t.head == t.tail
}

fn enumerate_from(kg: &KnowledgeGraph, x: EntityId, cfg: &MinerConfig) -> Vec<(Vec<Atom>, RelationId)> {
    fn dfs(
        kg: &KnowledgeGraph,
        x: EntityId,
        z: EntityId,
        last: Option<Triple>,
        body: &mut Vec<Atom>,
        max_len: usize,
        out: &mut Vec<(Vec<Atom>, RelationId)>,
    ) {
        if body.len() == max_len {
            return;
        }
        for (atom, next, triple) in moves(kg, z) {
            if Some(triple) == last && !is_self_loop(triple) {
                continue;
            }
            body.push(atom);
            record(kg, x, next, body, out);
            dfs(kg, x, next, Some(triple), body, max_len, out);
            body.pop();
        }
    }
    let mut out = Vec::new();
    dfs(kg, x, x, None, &mut Vec::new(), cfg.max_len, &mut out);
    out
}

/// Mines chain rules with distinct-pair confidence. Deterministic for a fixed
/// seed regardless of thread count.
pub fn mine_rules(kg: &KnowledgeGraph, cfg: &MinerConfig) -> Result<MiningReport> {
    cfg.validate()?;
    if kg.is_empty() {
        return Err(Error::EmptyGraph("graph to mine".into()));
    }
    let starts: Vec<EntityId> = kg.entities().filter(|&e| kg.degree(e) > 0).collect();
    let found: Vec<Vec<(Vec<Atom>, RelationId)>> = starts
        .par_iter()
        .map(|&x| {
            if cfg.exhaustive {
                enumerate_from(kg, x, cfg)
            } else {
                walk_from(kg, x, cfg)
            }
        })
        .collect();
    let mut candidates: Candidates = BTreeMap::new();
    for (body, head) in found.into_iter().flatten() {
        candidates.entry(body).or_default().insert(head);
    }
    let candidate_bodies = candidates.len();
    let candidate_rules = candidates.values().map(BTreeSet::len).sum();
    log::info!("mining: {candidate_bodies} candidate bodies, {candidate_rules} candidate rules");

    let scored: Vec<(bool, Vec<Rule>)> = candidates
        .into_par_iter()
        .map(|(body, heads)| {
            let bp = body_pairs(kg, &body, cfg.grounding_cap);
            if bp.truncated {
                return (true, Vec::new());
            }
            if bp.pairs.len() < cfg.min_body_support {
                return (false, Vec::new());
            }
            let n = bp.pairs.len() as f64;
            let rules = heads
                .into_iter()
                .map(|h| {
                    let support = bp
                        .pairs
                        .iter()
                        .filter(|&&(x, y)| kg.contains(&Triple::new(x, h, y)))
                        .count();
                    Rule::new(h, body.clone(), support as f64 / n)
                })
                .collect();
            (false, rules)
        })
        .collect();

    let truncated_bodies = scored.iter().filter(|(t, _)| *t).count();
    let all = RuleSet::from_rules(scored.into_iter().flat_map(|(_, r)| r));
    let rules = select_rules(&all, cfg.top_k_per_head, Direction::Highest);
    let covered: BTreeSet<RelationId> = rules.heads().collect();
    let uncovered_heads: Vec<RelationId> = kg
        .relations()
        .filter(|r| !kg.triples_of(*r).is_empty() && !covered.contains(r))
        .collect();
    log::info!(
        "mining: kept {} rules covering {}/{} relations ({} bodies truncated)",
        rules.len(),
        covered.len(),
        covered.len() + uncovered_heads.len(),
        truncated_bodies
    );
    Ok(MiningReport {
        rules,
        candidate_bodies,
        candidate_rules,
        truncated_bodies,
        uncovered_heads,
    })
}
