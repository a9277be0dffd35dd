//! Grounding of chain rules against a graph.
//!
//! Two views are offered. [`ground_rule`] enumerates every body path and is the
//! faithful, possibly expensive, definition. [`body_pairs`] only tracks the
//! distinct `(X, Y)` endpoint pairs, deduplicating intermediate frontiers, and
//! is what confidence, inference and influence scoring are computed from.

use std::collections::BTreeSet;

use super::{Atom, Rule};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Triple};

/// Frontier/pair budget per rule before grounding stops and reports truncation.
pub const DEFAULT_GROUNDING_CAP: usize = 1_000_000;

fn step<'a>(kg: &'a KnowledgeGraph, from: EntityId, atom: Atom) -> Box<dyn Iterator<Item = EntityId> + 'a> {
    if atom.inverted {
        Box::new(kg.heads(from, atom.relation))
    } else {
        Box::new(kg.tails(from, atom.relation))
    }
}

fn body_triple(from: EntityId, atom: Atom, to: EntityId) -> Triple {
    if atom.inverted {
        Triple::new(to, atom.relation, from)
    } else {
        Triple::new(from, atom.relation, to)
    }
}

/// Entities at which the first atom of `body` can start, ascending.
fn start_entities(kg: &KnowledgeGraph, first: Atom) -> Vec<EntityId> {
    let mut starts: Vec<EntityId> = kg
        .triples_of(first.relation)
        .iter()
        .map(|t| if first.inverted { t.tail } else { t.head })
        .collect();
    starts.sort_unstable();
    starts.dedup();
    starts
}

/// Distinct endpoint pairs of a rule body.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BodyPairs {
    /// Sorted, distinct `(X, Y)` pairs.
    pub pairs: Vec<(EntityId, EntityId)>,
    /// Set when the cap was hit; `pairs` is then a prefix (by `X`) of the full set.
    pub truncated: bool,
}

/// Computes the distinct `(X, Y)` pairs connected by a path matching `body`.
///
/// `cap` bounds the total number of frontier entries visited.
pub fn body_pairs(kg: &KnowledgeGraph, body: &[Atom], cap: usize) -> BodyPairs {
    let mut out = BodyPairs::default();
    let Some(&first) = body.first() else {
        return out;
    };
    let n = kg.num_entities();
    // generation-stamped membership marks, one array per hop
    let mut marks = vec![0u32; n];
    let mut stamp = 0u32;
    let mut work = 0usize;
    let mut frontier = Vec::new();
    let mut next = Vec::new();

    for x in start_entities(kg, first) {
        frontier.clear();
        frontier.push(x);
        for &atom in body {
            next.clear();
            stamp += 1;
            for &z in &frontier {
                for y in step(kg, z, atom) {
                    if marks[y.index()] != stamp {
                        marks[y.index()] = stamp;
                        next.push(y);
                    }
                }
            }
            work += next.len();
            std::mem::swap(&mut frontier, &mut next);
            if frontier.is_empty() {
                break;
            }
        }
        if work > cap {
            out.truncated = true;
            break;
        }
        frontier.sort_unstable();
        out.pairs.extend(frontier.iter().map(|&y| (x, y)));
    }
    out
}

/// Support statistics of a rule over distinct `(X, Y)` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RuleStats {
    pub body_support: usize,
    pub head_support: usize,
    pub truncated: bool,
}

impl RuleStats {
    pub fn confidence(&self) -> Option<f64> {
        (self.body_support > 0).then(|| self.head_support as f64 / self.body_support as f64)
    }
}

pub fn rule_stats(kg: &KnowledgeGraph, rule: &Rule, cap: usize) -> RuleStats {
    let bp = body_pairs(kg, &rule.body, cap);
    let head_support = bp
        .pairs
        .iter()
        .filter(|&&(x, y)| kg.contains(&Triple::new(x, rule.head, y)))
        .count();
    RuleStats {
        body_support: bp.pairs.len(),
        head_support,
        truncated: bp.truncated,
    }
}

/// Standard confidence: the fraction of distinct body pairs `(X, Y)` whose
/// head triple `(X, head, Y)` is in the graph. The rule's own `confidence`
/// field is ignored.
pub fn rule_confidence(kg: &KnowledgeGraph, rule: &Rule) -> Result<f64> {
    rule_stats(kg, rule, usize::MAX)
        .confidence()
        .ok_or_else(|| Error::UnsupportedRule(rule.id(kg)))
}

/// Head triples inferred by the rule that are not already in the graph.
pub fn infer_heads(kg: &KnowledgeGraph, rule: &Rule) -> BTreeSet<Triple> {
    body_pairs(kg, &rule.body, usize::MAX)
        .pairs
        .into_iter()
        .map(|(x, y)| Triple::new(x, rule.head, y))
        .filter(|t| !kg.contains(t))
        .collect()
}

/// One body path together with the head triple it implies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grounding {
    /// `X, Z1, …, Zn-1, Y`.
    pub bindings: Vec<EntityId>,
    pub body_triples: Vec<Triple>,
    pub head_triple: Triple,
    pub head_in_kg: bool,
}

/// Depth-first enumeration of all groundings of a rule.
pub struct Groundings<'a> {
    kg: &'a KnowledgeGraph,
    rule: &'a Rule,
    starts: std::vec::IntoIter<EntityId>,
    stack: Vec<(Vec<EntityId>, usize)>,
    path: Vec<EntityId>,
}

pub fn ground_rule<'a>(kg: &'a KnowledgeGraph, rule: &'a Rule) -> Groundings<'a> {
    let starts = match rule.body.first() {
        Some(&first) => start_entities(kg, first),
        None => Vec::new(),
    };
    Groundings {
        kg,
        rule,
        starts: starts.into_iter(),
        stack: Vec::new(),
        path: Vec::new(),
    }
}

impl Groundings<'_> {
    fn candidates(&self, from: EntityId, depth: usize) -> Vec<EntityId> {
        step(self.kg, from, self.rule.body[depth]).collect()
    }

    fn emit(&self) -> Grounding {
        let body = &self.rule.body;
        let body_triples = body
            .iter()
            .enumerate()
            .map(|(i, &a)| body_triple(self.path[i], a, self.path[i + 1]))
            .collect();
        let head_triple = Triple::new(self.path[0], self.rule.head, self.path[body.len()]);
        Grounding {
            bindings: self.path.clone(),
            body_triples,
            head_in_kg: self.kg.contains(&head_triple),
            head_triple,
        }
    }
}

impl Iterator for Groundings<'_> {
    type Item = Grounding;

    fn next(&mut self) -> Option<Grounding> {
        let len = self.rule.body.len();
        loop {
            if self.stack.is_empty() {
                let x = self.starts.next()?;
                self.path.clear();
                self.path.push(x);
                let c = self.candidates(x, 0);
                self.stack.push((c, 0));
                continue;
            }
            let depth = self.stack.len();
            let top = self.stack.last_mut().expect("non-empty");
            if top.1 >= top.0.len() {
                self.stack.pop();
                continue;
            }
            let z = top.0[top.1];
            top.1 += 1;
            self.path.truncate(depth);
            self.path.push(z);
            if depth == len {
                return Some(self.emit());
            }
            let c = self.candidates(z, depth);
            self.stack.push((c, 0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::toy_kg;
    use crate::kg::RelationId;

    fn toy_rule(kg: &KnowledgeGraph, head: &str, body: &[&str]) -> Rule {
        Rule::new(
            kg.relation_id(head).unwrap(),
            body.iter()
                .map(|b| match b.strip_prefix("inv:") {
                    Some(name) => Atom::inverse(kg.relation_id(name).unwrap()),
                    None => Atom::forward(kg.relation_id(b).unwrap()),
                })
                .collect(),
            0.0,
        )
    }

    fn e(kg: &KnowledgeGraph, n: &str) -> EntityId {
        kg.entity_id(n).unwrap()
    }

    #[test]
    fn toy_confidences() {
        let kg = toy_kg();
        let r = toy_rule(&kg, "bornIn", &["bornIn", "locatedIn"]);
        assert_eq!(rule_confidence(&kg, &r).unwrap(), 0.5);
        let stats = rule_stats(&kg, &r, usize::MAX);
        assert_eq!((stats.body_support, stats.head_support), (2, 1));

        let id = toy_rule(&kg, "locatedIn", &["locatedIn"]);
        assert_eq!(rule_confidence(&kg, &id).unwrap(), 1.0);

        let neg = toy_rule(&kg, "bornIn", &["studyIn", "locatedIn"]);
        assert_eq!(rule_confidence(&kg, &neg).unwrap(), 0.5);
    }

    #[test]
    fn unsupported_rule_errors() {
        let kg = toy_kg();
        let r = toy_rule(&kg, "bornIn", &["locatedIn", "locatedIn"]);
        assert!(matches!(rule_confidence(&kg, &r), Err(Error::UnsupportedRule(_))));
    }

    #[test]
    fn toy_groundings() {
        let kg = toy_kg();
        let r = toy_rule(&kg, "bornIn", &["bornIn", "locatedIn"]);
        let gs: Vec<Grounding> = ground_rule(&kg, &r).collect();
        assert_eq!(gs.len(), 2);
        let a = gs.iter().find(|g| g.bindings[0] == e(&kg, "a")).unwrap();
        assert_eq!(a.bindings, [e(&kg, "a"), e(&kg, "nyc"), e(&kg, "usa")]);
        assert!(a.head_in_kg);
        let b = gs.iter().find(|g| g.bindings[0] == e(&kg, "b")).unwrap();
        assert!(!b.head_in_kg);
        assert_eq!(b.body_triples[1], kg.resolve("nyc", "locatedIn", "usa").unwrap());
    }

    #[test]
    fn unused_relation_grounds_to_nothing() {
        let kg = KnowledgeGraph::from_named([("a", "r", "b"), ("x", "unused", "x")]);
        let kg = kg.with_triples(kg.triples().iter().copied().filter(|t| t.relation == RelationId(0)));
        let r = Rule::new(RelationId(0), vec![Atom::forward(RelationId(1))], 0.0);
        assert_eq!(ground_rule(&kg, &r).count(), 0);
        assert!(infer_heads(&kg, &r).is_empty());
    }

    #[test]
    fn inverted_atoms_walk_backwards() {
        let kg = toy_kg();
        // studyIn(X,Z) ∧ studyIn⁻¹(Z,Y): classmates, including X itself
        let r = toy_rule(&kg, "bornIn", &["studyIn", "inv:studyIn"]);
        let pairs = body_pairs(&kg, &r.body, usize::MAX).pairs;
        assert_eq!(pairs.len(), 4);
        for g in ground_rule(&kg, &r) {
            for t in &g.body_triples {
                assert!(kg.contains(t));
            }
        }
    }

    #[test]
    fn toy_inference() {
        let kg = toy_kg();
        let want: BTreeSet<Triple> = [kg.resolve("b", "bornIn", "usa").unwrap()].into();
        assert_eq!(infer_heads(&kg, &toy_rule(&kg, "bornIn", &["studyIn", "locatedIn"])), want);
        assert_eq!(infer_heads(&kg, &toy_rule(&kg, "bornIn", &["bornIn", "locatedIn"])), want);
        assert!(infer_heads(&kg, &toy_rule(&kg, "locatedIn", &["locatedIn"])).is_empty());
    }

    #[test]
    fn cap_truncates() {
        let triples: Vec<(String, String, String)> = (0..50)
            .map(|i| (format!("p{i}"), "g".to_owned(), "male".to_owned()))
            .collect();
        let kg = KnowledgeGraph::from_named(triples.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())));
        let g = kg.relation_id("g").unwrap();
        let body = [Atom::forward(g), Atom::inverse(g)];
        assert_eq!(body_pairs(&kg, &body, usize::MAX).pairs.len(), 2500);
        let capped = body_pairs(&kg, &body, 500);
        assert!(capped.truncated);
        assert!(capped.pairs.len() < 2500);
    }
}
