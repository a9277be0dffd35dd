use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{EntityId, KnowledgeGraph, RelationId, Symbols, Triple, Vocab};
use crate::error::{Error, Result};

/// Training graph plus held-out splits sharing one vocabulary.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl Dataset {
    /// Every known-true triple, used as the filter for filtered ranking.
    pub fn all_true(&self) -> Vec<Triple> {
        let mut all: Vec<Triple> = self.train.triples().to_vec();
        all.extend_from_slice(&self.valid);
        all.extend_from_slice(&self.test);
        all.sort_unstable();
        all.dedup();
        all
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, [String; 3])>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        rows.push((
            i + 1,
            [fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()],
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyGraph(path.display().to_string()));
    }
    Ok(rows)
}

fn intern_rows(rows: &[(usize, [String; 3])], ent: &mut Vocab, rel: &mut Vocab) -> Vec<Triple> {
    rows.iter()
        .map(|(_, [h, r, t])| {
            Triple::new(
                EntityId(ent.intern(h)),
                RelationId(rel.intern(r)),
                EntityId(ent.intern(t)),
            )
        })
        .collect()
}

/// Loads a `head<TAB>relation<TAB>tail` file into a graph whose vocabularies
/// cover exactly the symbols of the file.
pub fn load_tsv(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let rows = read_lines(path.as_ref())?;
    let mut ent = Vocab::new();
    let mut rel = Vocab::new();
    let triples = intern_rows(&rows, &mut ent, &mut rel);
    Ok(KnowledgeGraph::from_triples(
        Arc::new(Symbols::new(ent, rel)),
        triples,
    ))
}

/// Loads train/valid/test splits with one vocabulary covering all three files,
/// which is how the benchmark entity counts are usually reported.
pub fn load_dataset(
    train: impl AsRef<Path>,
    valid: impl AsRef<Path>,
    test: impl AsRef<Path>,
) -> Result<Dataset> {
    let train_rows = read_lines(train.as_ref())?;
    let valid_rows = read_lines(valid.as_ref())?;
    let test_rows = read_lines(test.as_ref())?;
    let mut ent = Vocab::new();
    let mut rel = Vocab::new();
    let train_triples = intern_rows(&train_rows, &mut ent, &mut rel);
    let valid = dedup(intern_rows(&valid_rows, &mut ent, &mut rel));
    let test = dedup(intern_rows(&test_rows, &mut ent, &mut rel));
    let symbols = Arc::new(Symbols::new(ent, rel));
    Ok(Dataset {
        train: KnowledgeGraph::from_triples(symbols, train_triples),
        valid,
        test,
    })
}

/// Conventional `<dir>/{train,valid,test}.txt` layout.
pub fn dataset_paths(dir: &Path) -> [PathBuf; 3] {
    ["train.txt", "valid.txt", "test.txt"].map(|f| dir.join(f))
}

fn dedup(mut v: Vec<Triple>) -> Vec<Triple> {
    let mut seen = std::collections::HashSet::new();
    v.retain(|t| seen.insert(*t));
    v
}

/// Resolves an extra triple file against an existing vocabulary. Unknown
/// symbols are reported all at once.
pub fn load_split(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let rows = read_lines(path)?;
    let mut unknown = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (_, [h, r, t]) in &rows {
        match kg.resolve(h, r, t) {
            Ok(triple) => out.push(triple),
            Err(_) => {
                for (name, known) in [
                    (h, kg.entity_id(h).is_some()),
                    (r, kg.relation_id(r).is_some()),
                    (t, kg.entity_id(t).is_some()),
                ] {
                    if !known {
                        unknown.insert(name.clone());
                    }
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownSymbols {
            source_name: path.display().to_string(),
            names: unknown.into_iter().collect(),
        });
    }
    Ok(dedup(out))
}

/// Writes one triple per line, sorted by surface form.
pub fn save_tsv(kg: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if kg.is_empty() {
        return Err(Error::EmptyGraph("graph to save".into()));
    }
    let mut triples = kg.triples().to_vec();
    triples.sort_by_key(|t| kg.surface_key(t));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in &triples {
        writeln!(
            w,
            "{}\t{}\t{}",
            kg.entity_name(t.head),
            kg.relation_name(t.relation),
            kg.entity_name(t.tail)
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
