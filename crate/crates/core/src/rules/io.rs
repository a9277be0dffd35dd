//! JSON-lines rule files: `{"head": "...", "body": ["r1", "inv:r2"], "confidence": 0.5}`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Atom, Rule, RuleSet};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRecord {
    head: String,
    body: Vec<String>,
    confidence: f64,
}

pub fn write_rules<W: Write>(rules: &RuleSet, kg: &KnowledgeGraph, mut w: W) -> std::io::Result<()> {
    for r in rules.rules() {
        let rec = RuleRecord {
            head: kg.relation_name(r.head).to_owned(),
            body: r.body.iter().map(|a| a.display(kg)).collect(),
            confidence: r.confidence,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_rules(rules: &RuleSet, kg: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_rules(rules, kg, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses rule lines against the graph vocabulary. All unknown relation names
/// are collected and reported together.
pub fn parse_rules<R: BufRead>(reader: R, kg: &KnowledgeGraph, source: &Path) -> Result<RuleSet> {
    let mut unknown = BTreeSet::new();
    let mut rules = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: RuleRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.confidence) {
            return Err(parse_err(format!("confidence {} outside [0, 1]", rec.confidence)));
        }
        if rec.body.is_empty() {
            return Err(parse_err("empty rule body".into()));
        }
        let head = kg.relation_id(&rec.head);
        if head.is_none() {
            unknown.insert(rec.head.clone());
        }
        let mut body = Vec::with_capacity(rec.body.len());
        for b in &rec.body {
            let (name, inverted) = match b.strip_prefix("inv:") {
                Some(n) => (n, true),
                None => (b.as_str(), false),
            };
            match kg.relation_id(name) {
                Some(relation) => body.push(Atom { relation, inverted }),
                None => {
                    unknown.insert(name.to_owned());
                }
            }
        }
        if let Some(head) = head {
            if body.len() == rec.body.len() {
                rules.push(Rule::new(head, body, rec.confidence));
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownSymbols {
            source_name: source.display().to_string(),
            names: unknown.into_iter().collect(),
        });
    }
    let n = rules.len();
    let set = RuleSet::from_rules(rules);
    if set.len() < n {
        log::warn!(
            "{}: dropped {} duplicate (head, body) rules",
            source.display(),
            n - set.len()
        );
    }
    Ok(set)
}

pub fn load_rules(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<RuleSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_rules(BufReader::new(file), kg, path)
}
