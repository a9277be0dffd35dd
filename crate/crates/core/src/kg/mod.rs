//! In-memory indexed triple store.
//!
//! A [`KnowledgeGraph`] is built once and never mutated; perturbations produce
//! a new graph through [`apply_plan`]. Entity and relation vocabularies live in
//! a shared [`Symbols`] table so that a perturbed graph keeps the exact id
//! assignment of the graph it was derived from.

mod io;
mod plan;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{dataset_paths, load_dataset, load_split, load_tsv, save_tsv, Dataset};
pub use plan::{
    apply_plan, budget_for_ratio, load_plan, save_plan, PerturbationPlan, PlanEntry, PlanMode,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Bijective string interning table with contiguous ids from 0.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Rank of every id in lexicographic order of the surface strings.
    fn lexicographic_ranks(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.names.len() as u32).collect();
        order.sort_by(|&a, &b| self.names[a as usize].cmp(&self.names[b as usize]));
        let mut ranks = vec![0u32; order.len()];
        for (rank, id) in order.into_iter().enumerate() {
            ranks[id as usize] = rank as u32;
        }
        ranks
    }
}

/// Frozen entity and relation vocabularies shared by a graph and everything
/// derived from it.
#[derive(Debug)]
pub struct Symbols {
    entities: Vocab,
    relations: Vocab,
    entity_rank: Vec<u32>,
    relation_rank: Vec<u32>,
}

impl Symbols {
    pub fn new(entities: Vocab, relations: Vocab) -> Self {
        let entity_rank = entities.lexicographic_ranks();
        let relation_rank = relations.lexicographic_ranks();
        Symbols {
            entities,
            relations,
            entity_rank,
            relation_rank,
        }
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }
}

/// Key that orders triples by their surface strings `(head, relation, tail)`.
pub type SurfaceKey = (u32, u32, u32);

/// Immutable triple store with adjacency, relation and incidence indexes.
#[derive(Clone)]
pub struct KnowledgeGraph {
    symbols: Arc<Symbols>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    // (relation, tail) sorted per head
    out_index: Vec<Vec<(RelationId, EntityId)>>,
    // (relation, head) sorted per tail
    in_index: Vec<Vec<(RelationId, EntityId)>>,
    rel_index: Vec<Vec<Triple>>,
    incident: Vec<Vec<RelationId>>,
    pair_index: HashMap<(EntityId, EntityId), Vec<RelationId>>,
}

impl fmt::Debug for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnowledgeGraph")
            .field("entities", &self.num_entities())
            .field("relations", &self.num_relations())
            .field("triples", &self.triples.len())
            .finish()
    }
}

impl KnowledgeGraph {
    /// Builds a graph over `symbols` from the given triples, dropping duplicates.
    pub fn from_triples(symbols: Arc<Symbols>, triples: impl IntoIterator<Item = Triple>) -> Self {
        let n_ent = symbols.entities.len();
        let n_rel = symbols.relations.len();
        let mut triple_set = HashSet::new();
        let mut list = Vec::new();
        for t in triples {
            debug_assert!(t.head.index() < n_ent && t.tail.index() < n_ent);
            debug_assert!(t.relation.index() < n_rel);
            if triple_set.insert(t) {
                list.push(t);
            }
        }
        list.sort_unstable();

        let mut out_index = vec![Vec::new(); n_ent];
        let mut in_index = vec![Vec::new(); n_ent];
        let mut rel_index = vec![Vec::new(); n_rel];
        let mut incident: Vec<Vec<RelationId>> = vec![Vec::new(); n_ent];
        let mut pair_index: HashMap<(EntityId, EntityId), Vec<RelationId>> = HashMap::new();
        for &t in &list {
            out_index[t.head.index()].push((t.relation, t.tail));
            in_index[t.tail.index()].push((t.relation, t.head));
            rel_index[t.relation.index()].push(t);
            incident[t.head.index()].push(t.relation);
            incident[t.tail.index()].push(t.relation);
            pair_index.entry((t.head, t.tail)).or_default().push(t.relation);
        }
        for v in out_index.iter_mut().chain(in_index.iter_mut()) {
            v.sort_unstable();
        }
        for v in incident.iter_mut() {
            v.sort_unstable();
            v.dedup();
        }
        for v in pair_index.values_mut() {
            v.sort_unstable();
        }

        KnowledgeGraph {
            symbols,
            triples: list,
            triple_set,
            out_index,
            in_index,
            rel_index,
            incident,
            pair_index,
        }
    }

    /// Interns string triples into a fresh vocabulary. Mostly useful for tests
    /// and small hand-built graphs.
    pub fn from_named<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let ids: Vec<Triple> = triples
            .into_iter()
            .map(|(h, r, t)| {
                Triple::new(
                    EntityId(entities.intern(h)),
                    RelationId(relations.intern(r)),
                    EntityId(entities.intern(t)),
                )
            })
            .collect();
        Self::from_triples(Arc::new(Symbols::new(entities, relations)), ids)
    }

    /// New graph over the same vocabularies with a different triple set.
    pub fn with_triples(&self, triples: impl IntoIterator<Item = Triple>) -> Self {
        Self::from_triples(Arc::clone(&self.symbols), triples)
    }

    pub fn symbols(&self) -> &Arc<Symbols> {
        &self.symbols
    }

    pub fn shares_symbols(&self, other: &KnowledgeGraph) -> bool {
        Arc::ptr_eq(&self.symbols, &other.symbols)
    }

    pub fn num_entities(&self) -> usize {
        self.symbols.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.symbols.relations.len()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// All triples, sorted by id.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.num_entities() as u32).map(EntityId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> {
        (0..self.num_relations() as u32).map(RelationId)
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.symbols.entities.name(e.0)
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        self.symbols.relations.name(r.0)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.symbols.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.symbols.relations.get(name).map(RelationId)
    }

    /// Resolves a triple of surface strings against the vocabularies.
    pub fn resolve(&self, head: &str, relation: &str, tail: &str) -> Result<Triple> {
        let unknown_entity = |name: &str| Error::UnknownSymbol {
            kind: "entity",
            name: name.to_owned(),
        };
        Ok(Triple::new(
            self.entity_id(head).ok_or_else(|| unknown_entity(head))?,
            self.relation_id(relation).ok_or_else(|| Error::UnknownSymbol {
                kind: "relation",
                name: relation.to_owned(),
            })?,
            self.entity_id(tail).ok_or_else(|| unknown_entity(tail))?,
        ))
    }

    pub fn display_triple(&self, t: &Triple) -> String {
        format!(
            "({}, {}, {})",
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail)
        )
    }

    /// Sort key comparing triples by surface strings.
    pub fn surface_key(&self, t: &Triple) -> SurfaceKey {
        (
            self.symbols.entity_rank[t.head.index()],
            self.symbols.relation_rank[t.relation.index()],
            self.symbols.entity_rank[t.tail.index()],
        )
    }

    pub fn relation_rank(&self, r: RelationId) -> u32 {
        self.symbols.relation_rank[r.index()]
    }

    /// Outgoing `(relation, tail)` edges of `e`, sorted.
    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_index[e.index()]
    }

    /// Incoming `(relation, head)` edges of `e`, sorted.
    pub fn in_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_index[e.index()]
    }

    /// Tails `t` with `(e, r, t)` in the graph.
    pub fn tails(&self, e: EntityId, r: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        relation_slice(&self.out_index[e.index()], r)
            .iter()
            .map(|&(_, t)| t)
    }

    /// Heads `h` with `(h, r, e)` in the graph.
    pub fn heads(&self, e: EntityId, r: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        relation_slice(&self.in_index[e.index()], r)
            .iter()
            .map(|&(_, h)| h)
    }

    /// Relations `r` with `(x, r, y)` in the graph.
    pub fn relations_between(&self, x: EntityId, y: EntityId) -> &[RelationId] {
        self.pair_index
            .get(&(x, y))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn triples_of(&self, r: RelationId) -> &[Triple] {
        &self.rel_index[r.index()]
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.out_index[e.index()].len() + self.in_index[e.index()].len()
    }

    /// Sorted relations on edges where `e` is head or tail.
    pub fn relation_neighborhood(&self, e: EntityId) -> Result<&[RelationId]> {
        if e.index() >= self.num_entities() {
            return Err(Error::UnknownSymbol {
                kind: "entity",
                name: format!("#{}", e.0),
            });
        }
        let rels = &self.incident[e.index()];
        if rels.is_empty() {
            return Err(Error::IsolatedEntity(self.entity_name(e).to_owned()));
        }
        Ok(rels)
    }

    /// Relation neighbourhood without the isolation check; empty for isolated entities.
    pub fn incident_relations(&self, e: EntityId) -> &[RelationId] {
        &self.incident[e.index()]
    }

    /// Triple count per relation, indexed by relation id.
    pub fn relation_distribution(&self) -> Vec<usize> {
        self.rel_index.iter().map(Vec::len).collect()
    }
}

fn relation_slice(edges: &[(RelationId, EntityId)], r: RelationId) -> &[(RelationId, EntityId)] {
    let lo = edges.partition_point(|&(rel, _)| rel < r);
    let hi = edges.partition_point(|&(rel, _)| rel <= r);
    &edges[lo..hi]
}
