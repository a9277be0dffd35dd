#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use kgattack::harness::{Attacker, ExperimentConfig, OneOrMany};
use kgattack::kg::{EntityId, KnowledgeGraph, RelationId, Symbols, Triple, Vocab};
use kgattack::kge::ModelKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// People living in cities inside countries, plus noisy social edges.
/// Nationality mostly composes livesIn and locatedIn, so the miner has
/// confident rules to work with.
pub fn write_synthetic_dataset(dir: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<(String, &str, String)> = Vec::new();
    for c in 0..6 {
        rows.push((format!("city{c}"), "locatedIn", format!("country{}", c % 3)));
    }
    for p in 0..30 {
        let c = rng.gen_range(0..6);
        rows.push((format!("p{p}"), "livesIn", format!("city{c}")));
        let k = if rng.gen_bool(0.85) { c % 3 } else { rng.gen_range(0..3) };
        rows.push((format!("p{p}"), "nationality", format!("country{k}")));
        for rel in ["friendOf", "worksWith"] {
            let q = rng.gen_range(0..30);
            if q != p {
                rows.push((format!("p{p}"), rel, format!("p{q}")));
            }
        }
    }
    rows.sort();
    rows.dedup();
    // every 4th nationality triple is held out, alternating valid and test
    let (mut train, mut valid, mut test) = (String::new(), String::new(), String::new());
    let (mut seen, mut held) = (0, 0);
    for (h, r, t) in &rows {
        let line = format!("{h}\t{r}\t{t}\n");
        let hold = *r == "nationality" && {
            seen += 1;
            seen % 4 == 0
        };
        if hold {
            held += 1;
            if held % 2 == 0 { &mut valid } else { &mut test }.push_str(&line);
        } else {
            train.push_str(&line);
        }
    }
    let mut extra = String::new();
    for (h, r, t) in rows.iter().filter(|(_, r, _)| *r == "friendOf").take(2) {
        writeln!(extra, "{h}\t{r}\t{t}").unwrap();
    }
    test.push_str(&extra);
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("train.txt"), train).unwrap();
    std::fs::write(dir.join("valid.txt"), valid).unwrap();
    std::fs::write(dir.join("test.txt"), test).unwrap();
}

/// A sweep small enough to run in a few seconds.
pub fn small_config(data: &Path, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.dir = Some(data.to_path_buf());
    cfg.attacker = OneOrMany::Many(Attacker::ALL.to_vec());
    cfg.gammas = vec![0.1];
    cfg.models = vec![ModelKind::TransE, ModelKind::DistMult];
    cfg.m = 5;
    cfg.n = 3;
    cfg.train.dim = 8;
    cfg.train.epochs = 4;
    cfg.train.batch_size = 32;
    cfg.train.negatives = 4;
    cfg.target_fraction = 0.1;
    cfg.high_rank_threshold = Some(10);
    cfg.seed = OneOrMany::One(3);
    cfg.out = Some(out.to_path_buf());
    cfg
}

/// Graph over `e0..e{n_e}` and `r0..r{n_r}`, all interned even when unused.
pub fn graph_from_ids(n_e: usize, n_r: usize, edges: &[(u32, u32, u32)]) -> KnowledgeGraph {
    let mut ent = Vocab::new();
    let mut rel = Vocab::new();
    for i in 0..n_e {
        ent.intern(&format!("e{i}"));
    }
    for i in 0..n_r {
        rel.intern(&format!("r{i}"));
    }
    let triples = edges
        .iter()
        .map(|&(h, r, t)| Triple::new(EntityId(h), RelationId(r), EntityId(t)));
    KnowledgeGraph::from_triples(Arc::new(Symbols::new(ent, rel)), triples)
}

/// Uniform random graph with at most `max_triples` edges and `max_relations` relations.
pub fn random_graph<R: Rng>(rng: &mut R, max_triples: usize, max_relations: usize) -> KnowledgeGraph {
    let n_e = rng.gen_range(4..=40);
    let n_r = rng.gen_range(1..=max_relations);
    let n = rng.gen_range(1..=max_triples);
    let edges: Vec<(u32, u32, u32)> = (0..n)
        .map(|_| {
            (
                rng.gen_range(0..n_e as u32),
                rng.gen_range(0..n_r as u32),
                rng.gen_range(0..n_e as u32),
            )
        })
        .collect();
    graph_from_ids(n_e, n_r, &edges)
}
