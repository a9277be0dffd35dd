//! Binary model checkpoints: a magic line, a JSON header line, then both
//! tables as little-endian floats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingModel, ModelKind, Norm, Scalar};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Vocab};

const MAGIC: &str = "KGEMB1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ModelKind,
    dim: usize,
    norm: Norm,
    /// Bytes per stored value, 4 or 8.
    precision: usize,
    num_entities: usize,
    num_relations: usize,
    entity_vocab: String,
    relation_vocab: String,
}

/// Hex sha256 over the newline-joined names in id order.
pub fn vocab_hash(v: &Vocab) -> String {
    let mut h = Sha256::new();
    for name in v.names() {
        h.update(name.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn save_model<F: Scalar>(model: &EmbeddingModel<F>, kg: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let precision = std::mem::size_of::<F>();
    let header = Header {
        kind: model.kind(),
        dim: model.dim(),
        norm: model.norm(),
        precision,
        num_entities: model.num_entities(),
        num_relations: model.num_relations(),
        entity_vocab: vocab_hash(kg.symbols().entities()),
        relation_vocab: vocab_hash(kg.symbols().relations()),
    };
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{MAGIC}").map_err(io)?;
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w).map_err(io)?;
    for x in model.entity_table().iter().chain(model.relation_table()) {
        let v = x.to_f64().unwrap();
        if precision == 4 {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        } else {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Loads a checkpoint, refusing it when the vocabulary hashes differ from `kg`'s.
pub fn load_model<F: Scalar>(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<EmbeddingModel<F>> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a model checkpoint", path.display())));
    }
    line.clear();
    r.read_line(&mut line).map_err(io)?;
    let h: Header = serde_json::from_str(&line)?;
    if h.entity_vocab != vocab_hash(kg.symbols().entities()) || h.relation_vocab != vocab_hash(kg.symbols().relations()) {
        return Err(Error::Checkpoint(format!(
            "{} was trained against a different vocabulary",
            path.display()
        )));
    }
    if h.precision != 4 && h.precision != 8 {
        return Err(Error::Checkpoint(format!("unsupported precision {}", h.precision)));
    }
    let width = super::row_width(h.kind, h.dim);
    let total = (h.num_entities + h.num_relations) * width;
    let mut bytes = Vec::with_capacity(total * h.precision);
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != total * h.precision {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} table bytes, found {}",
            path.display(),
            total * h.precision,
            bytes.len()
        )));
    }
    let values: Vec<F> = bytes
        .chunks_exact(h.precision)
        .map(|c| {
            let v = if h.precision == 4 {
                f32::from_le_bytes(c.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(c.try_into().unwrap())
            };
            F::from_f64(v).unwrap()
        })
        .collect();
    let (ents, rels) = values.split_at(h.num_entities * width);
    let model = EmbeddingModel::from_tables(h.kind, h.dim, h.norm, ents.to_vec(), rels.to_vec())?;
    if !model.is_finite() {
        return Err(Error::Checkpoint(format!("{} holds non-finite values", path.display())));
    }
    Ok(model)
}
