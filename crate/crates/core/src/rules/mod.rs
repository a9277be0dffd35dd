//! Chain Horn rules `r1(X,Z1) ∧ … ∧ rn(Zn-1,Y) → head(X,Y)`.
//!
//! Body atoms may be inverted, meaning the atom is matched against the edge
//! in the tail-to-head direction. Heads are never inverted.

mod ground;
mod io;
mod mine;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kg::{KnowledgeGraph, RelationId};

pub use ground::{
    body_pairs, ground_rule, infer_heads, rule_confidence, rule_stats, BodyPairs, Grounding,
    Groundings, RuleStats, DEFAULT_GROUNDING_CAP,
};
pub use io::{load_rules, parse_rules, save_rules, write_rules};
pub use mine::{mine_rules, MinerConfig, MiningReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub relation: RelationId,
    pub inverted: bool,
}

impl Atom {
    pub fn forward(relation: RelationId) -> Self {
        Atom {
            relation,
            inverted: false,
        }
    }

    pub fn inverse(relation: RelationId) -> Self {
        Atom {
            relation,
            inverted: true,
        }
    }

    pub fn flipped(self) -> Self {
        Atom {
            relation: self.relation,
            inverted: !self.inverted,
        }
    }

    pub fn display(&self, kg: &KnowledgeGraph) -> String {
        if self.inverted {
            format!("inv:{}", kg.relation_name(self.relation))
        } else {
            kg.relation_name(self.relation).to_owned()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub head: RelationId,
    pub body: Vec<Atom>,
    pub confidence: f64,
}

impl Rule {
    pub fn new(head: RelationId, body: Vec<Atom>, confidence: f64) -> Self {
        Rule {
            head,
            body,
            confidence,
        }
    }

    /// Stable human-readable identifier, e.g. `bornIn <- bornIn, locatedIn`.
    pub fn id(&self, kg: &KnowledgeGraph) -> String {
        let body: Vec<String> = self.body.iter().map(|a| a.display(kg)).collect();
        format!("{} <- {}", kg.relation_name(self.head), body.join(", "))
    }

    fn key(&self) -> (RelationId, &[Atom]) {
        (self.head, &self.body)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Highest,
    Lowest,
}

/// Rules with a per-head index; `(head, body)` pairs are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    by_head: BTreeMap<RelationId, Vec<usize>>,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set, keeping the first occurrence of a repeated `(head, body)`.
    pub fn from_rules(rules: impl IntoIterator<Item = Rule>) -> Self {
        let mut set = RuleSet::new();
        for r in rules {
            set.insert(r);
        }
        set
    }

    /// Returns false if a rule with the same head and body is already present.
    pub fn insert(&mut self, rule: Rule) -> bool {
        if let Some(idx) = self.by_head.get(&rule.head) {
            if idx.iter().any(|&i| self.rules[i].body == rule.body) {
                return false;
            }
        }
        self.by_head
            .entry(rule.head)
            .or_default()
            .push(self.rules.len());
        self.rules.push(rule);
        true
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn heads(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.by_head.keys().copied()
    }

    pub fn for_head(&self, head: RelationId) -> impl Iterator<Item = &Rule> + '_ {
        self.by_head
            .get(&head)
            .into_iter()
            .flatten()
            .map(move |&i| &self.rules[i])
    }

    /// SHA-256 over the canonical rule-file serialization.
    pub fn fingerprint(&self, kg: &KnowledgeGraph) -> String {
        let mut buf = Vec::new();
        io::write_rules(self, kg, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }

    fn check_index(&self) -> bool {
        let mut seen = HashSet::new();
        self.rules.iter().all(|r| seen.insert(r.key()))
            && self.by_head.values().map(Vec::len).sum::<usize>() == self.rules.len()
    }
}

fn confidence_order(a: &Rule, b: &Rule, direction: Direction) -> Ordering {
    let by_conf = a.confidence.total_cmp(&b.confidence);
    let by_conf = match direction {
        Direction::Highest => by_conf.reverse(),
        Direction::Lowest => by_conf,
    };
    by_conf.then_with(|| a.body.cmp(&b.body))
}

/// Keeps up to `per_head` rules per head relation, ordered by confidence in
/// `direction`; ties go to the lexicographically smaller body.
pub fn select_rules(rules: &RuleSet, per_head: usize, direction: Direction) -> RuleSet {
    let mut out = RuleSet::new();
    for head in rules.heads() {
        let mut group: Vec<&Rule> = rules.for_head(head).collect();
        group.sort_by(|a, b| confidence_order(a, b, direction));
        for r in group.into_iter().take(per_head) {
            out.insert(r.clone());
        }
    }
    debug_assert!(out.check_index());
    out
}
