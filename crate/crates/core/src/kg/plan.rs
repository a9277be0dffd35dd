use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{KnowledgeGraph, Triple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    Delete,
    Add,
}

impl PlanMode {
    pub fn reversed(self) -> Self {
        match self {
            PlanMode::Delete => PlanMode::Add,
            PlanMode::Add => PlanMode::Delete,
        }
    }
}

impl fmt::Display for PlanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanMode::Delete => "delete",
            PlanMode::Add => "add",
        })
    }
}

impl FromStr for PlanMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "delete" | "del" => Ok(PlanMode::Delete),
            "add" => Ok(PlanMode::Add),
            other => Err(format!("unknown plan op `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanEntry {
    pub triple: Triple,
    /// Planner-specific score (influence, similarity, ...); 0 for random picks.
    pub score: f64,
    /// Rule identifier, `random`, `cosine` or `random-fill`.
    pub provenance: String,
}

/// Ordered list of triple additions or deletions.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationPlan {
    pub mode: PlanMode,
    pub entries: Vec<PlanEntry>,
    /// Requested number of perturbations.
    pub budget: usize,
    pub ratio: Option<f64>,
    /// Entries produced by the random fallback rather than the planner proper.
    pub fill_count: usize,
}

impl PerturbationPlan {
    pub fn new(mode: PlanMode, budget: usize) -> Self {
        PerturbationPlan {
            mode,
            entries: Vec::with_capacity(budget),
            budget,
            ratio: None,
            fill_count: 0,
        }
    }

    pub fn with_ratio(mut self, ratio: Option<f64>) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn push(&mut self, triple: Triple, score: f64, provenance: impl Into<String>) {
        self.entries.push(PlanEntry {
            triple,
            score,
            provenance: provenance.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.entries.iter().map(|e| e.triple)
    }

    pub fn fill_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.fill_count as f64 / self.entries.len() as f64
        }
    }

    /// The same triples with the opposite operation.
    pub fn reversed(&self) -> Self {
        PerturbationPlan {
            mode: self.mode.reversed(),
            ..self.clone()
        }
    }

    /// Checks budget exactness, uniqueness, vocabulary membership and
    /// membership/disjointness with respect to `kg`.
    pub fn validate(&self, kg: &KnowledgeGraph) -> Result<()> {
        if self.entries.len() != self.budget {
            return Err(Error::PlanViolation(format!(
                "plan holds {} triples but the budget is {}",
                self.entries.len(),
                self.budget
            )));
        }
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            let t = e.triple;
            if t.head.index() >= kg.num_entities()
                || t.tail.index() >= kg.num_entities()
                || t.relation.index() >= kg.num_relations()
            {
                return Err(Error::PlanViolation(format!(
                    "triple {t:?} is outside the vocabulary"
                )));
            }
            if !seen.insert(t) {
                return Err(Error::PlanViolation(format!(
                    "duplicate triple {}",
                    kg.display_triple(&t)
                )));
            }
            match (self.mode, kg.contains(&t)) {
                (PlanMode::Delete, false) => {
                    return Err(Error::PlanViolation(format!(
                        "cannot delete {}: not in graph",
                        kg.display_triple(&t)
                    )))
                }
                (PlanMode::Add, true) => {
                    return Err(Error::PlanViolation(format!(
                        "cannot add {}: already in graph",
                        kg.display_triple(&t)
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Perturbation budget `floor(ratio * n)`.
///
/// A tiny epsilon absorbs binary representation error so that e.g.
/// `0.15 * 20` yields 3 rather than 2.
pub fn budget_for_ratio(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor().max(0.0) as usize
}

/// Produces the perturbed graph; the input graph is left untouched.
pub fn apply_plan(kg: &KnowledgeGraph, plan: &PerturbationPlan) -> Result<KnowledgeGraph> {
    plan.validate(kg)?;
    let planned: HashSet<Triple> = plan.triples().collect();
    let out = match plan.mode {
        PlanMode::Delete => kg.with_triples(
            kg.triples()
                .iter()
                .copied()
                .filter(|t| !planned.contains(t)),
        ),
        PlanMode::Add => kg.with_triples(kg.triples().iter().copied().chain(plan.triples())),
    };
    Ok(out)
}

/// Writes `op<TAB>head<TAB>relation<TAB>tail<TAB>score<TAB>provenance` lines.
pub fn save_plan(plan: &PerturbationPlan, kg: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in &plan.entries {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            plan.mode,
            kg.entity_name(e.triple.head),
            kg.relation_name(e.triple.relation),
            kg.entity_name(e.triple.tail),
            e.score,
            e.provenance
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a plan file written by [`save_plan`]. The budget is the line count;
/// the fill count is recovered from `random-fill` provenance tags.
pub fn load_plan(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<PerturbationPlan> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut mode = None;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", f.len())));
        }
        let op: PlanMode = f[0].parse().map_err(parse_err)?;
        if *mode.get_or_insert(op) != op {
            return Err(parse_err("plan mixes add and delete operations".into()));
        }
        let triple = kg.resolve(f[1], f[2], f[3]).map_err(|e| parse_err(e.to_string()))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| parse_err(format!("bad score `{}`", f[4])))?;
        entries.push(PlanEntry {
            triple,
            score,
            provenance: f[5].to_owned(),
        });
    }
    let fill_count = entries
        .iter()
        .filter(|e| e.provenance == "random-fill")
        .count();
    Ok(PerturbationPlan {
        mode: mode.unwrap_or(PlanMode::Delete),
        budget: entries.len(),
        entries,
        ratio: None,
        fill_count,
    })
}
