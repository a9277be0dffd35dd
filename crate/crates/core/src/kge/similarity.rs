//! Relation embedding cosine similarities.

use std::io::Write;

use super::{EmbeddingModel, Scalar};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId};

/// Pairwise cosine similarity of relation vectors (ComplEx rows flattened to
/// `2·dim` reals). Pairs involving a zero vector get 0.
pub fn relation_similarity_matrix<F: Scalar>(model: &EmbeddingModel<F>, relations: &[RelationId]) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = relations
        .iter()
        .map(|&r| model.relation(r).iter().map(|x| x.to_f64().unwrap_or(0.0)).collect())
        .collect();
    let norms: Vec<f64> = rows.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    for (r, n) in relations.iter().zip(&norms) {
        if *n == 0.0 {
            log::warn!("relation {} has a zero embedding; similarities set to 0", r.0);
        }
    }
    let k = relations.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    out
}

/// CSV with a header row of relation names and one labelled row per relation.
pub fn write_similarity_csv<W: Write>(
    kg: &KnowledgeGraph,
    relations: &[RelationId],
    matrix: &[Vec<f64>],
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Report(e.to_string());
    let mut header = vec![String::from("relation")];
    header.extend(relations.iter().map(|&r| kg.relation_name(r).to_owned()));
    out.write_record(&header).map_err(csv_err)?;
    for (&r, row) in relations.iter().zip(matrix) {
        let mut rec = vec![kg.relation_name(r).to_owned()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Report(e.to_string()))
}
