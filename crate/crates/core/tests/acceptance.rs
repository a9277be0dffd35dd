//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Benchmark-backed criteria read `$KGATTACK_DATA/{FB15k-237,WN18RR}` (default
//! `<workspace>/data`). When a benchmark is missing the criterion prints
//! `FAIL (blocked: ...)`; blocked criteria only affect the exit code when
//! `KGATTACK_STRICT=1`.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgattack::attack::{
    corrupt_rule, correlation_table, generate_candidates, influence_scores, plan_addition, plan_deletion,
    AdditionConfig, Candidates, DeletionConfig, NegativeRule, Pool, PoolDomain, RewriteStrategy,
};
use kgattack::baselines::{cos_attack, random_addition, random_deletion, CosConfig, PseudoTargetSet};
use kgattack::harness::{derive_seed, run_pipeline, Attacker, ExperimentConfig, OneOrMany, RunSummary};
use kgattack::kg::{budget_for_ratio, dataset_paths, load_dataset, EntityId, KnowledgeGraph, PlanMode, RelationId, Triple};
use kgattack::kge::{
    evaluate, example_gradient, example_loss, init_model, rank_query, EmbeddingModel, EvalSetting, Example,
    FilterIndex, LossKind, LossParams, ModelKind, Norm, Query, Side, SparseGrad,
};
use kgattack::rules::{
    ground_rule, infer_heads, mine_rules, rule_confidence, select_rules, Atom, Direction, MinerConfig, Rule,
    RuleSet,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Outcome::{Blocked, Fail, Pass};

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

// ---------------------------------------------------------------------------
// brute-force rule oracles

fn toy_kg() -> KnowledgeGraph {
    KnowledgeGraph::from_named([
        ("a", "bornIn", "nyc"),
        ("nyc", "locatedIn", "usa"),
        ("a", "bornIn", "usa"),
        ("b", "bornIn", "nyc"),
        ("b", "studyIn", "nyc"),
        ("c", "studyIn", "nyc"),
        ("c", "bornIn", "usa"),
    ])
}

/// `(from, to)` steps of an atom, found by scanning every triple.
fn atom_edges(kg: &KnowledgeGraph, a: Atom) -> Vec<(EntityId, EntityId)> {
    kg.triples()
        .iter()
        .filter(|t| t.relation == a.relation)
        .map(|t| if a.inverted { (t.tail, t.head) } else { (t.head, t.tail) })
        .collect()
}

fn oracle_paths(kg: &KnowledgeGraph, body: &[Atom]) -> BTreeSet<Vec<EntityId>> {
    let mut paths: Vec<Vec<EntityId>> = vec![];
    for (i, &a) in body.iter().enumerate() {
        let edges = atom_edges(kg, a);
        paths = if i == 0 {
            edges.iter().map(|&(x, y)| vec![x, y]).collect()
        } else {
            let mut next = vec![];
            for p in &paths {
                for &(x, y) in &edges {
                    if x == *p.last().unwrap() {
                        let mut q = p.clone();
                        q.push(y);
                        next.push(q);
                    }
                }
            }
            next
        };
    }
    paths.into_iter().collect()
}

fn oracle_pairs(kg: &KnowledgeGraph, body: &[Atom]) -> BTreeSet<(EntityId, EntityId)> {
    oracle_paths(kg, body)
        .iter()
        .map(|p| (p[0], *p.last().unwrap()))
        .collect()
}

fn triple_set(kg: &KnowledgeGraph) -> HashSet<Triple> {
    kg.triples().iter().copied().collect()
}

fn random_rule<R: Rng>(rng: &mut R, n_r: usize, max_len: usize) -> Rule {
    let len = rng.gen_range(1..=max_len);
    let body = (0..len)
        .map(|_| Atom {
            relation: RelationId(rng.gen_range(0..n_r as u32)),
            inverted: rng.gen_bool(0.5),
        })
        .collect();
    Rule::new(RelationId(rng.gen_range(0..n_r as u32)), body, rng.gen_range(1..=64) as f64 / 64.0)
}

fn oracle_influence(kg: &KnowledgeGraph, rules: &RuleSet, pool: Pool, domain: PoolDomain) -> BTreeMap<Triple, f64> {
    let set = triple_set(kg);
    let mut acc: BTreeMap<Triple, (f64, f64, usize)> = BTreeMap::new();
    for rule in rules.rules() {
        for (x, y) in oracle_pairs(kg, &rule.body) {
            let t = Triple::new(x, rule.head, y);
            if set.contains(&t) {
                let e = acc.entry(t).or_insert((0.0, f64::NEG_INFINITY, 0));
                e.0 += rule.confidence;
                e.1 = e.1.max(rule.confidence);
                e.2 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(t, (sum, max, n))| {
            let f = match (pool, domain) {
                (Pool::Max, _) => max,
                (Pool::Mean, PoolDomain::Contributing) => sum / n as f64,
                (Pool::Mean, PoolDomain::AllRules) => sum / rules.len() as f64,
            };
            (t, f)
        })
        .collect()
}

fn oracle_candidates(kg: &KnowledgeGraph, negatives: &[NegativeRule]) -> Candidates {
    let set = triple_set(kg);
    let mut out: Candidates = BTreeMap::new();
    for n in negatives {
        let id = n.rule.id(kg);
        for (x, y) in oracle_pairs(kg, &n.rule.body) {
            let t = Triple::new(x, n.rule.head, y);
            if !set.contains(&t) {
                let tags = out.entry(t).or_default();
                if !tags.contains(&id) {
                    tags.push(id.clone());
                }
            }
        }
    }
    out
}

/// Returns a description of the first mismatch.
fn rule_oracles_on(kg: &KnowledgeGraph, rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n_r = kg.num_relations();
    let set = triple_set(kg);
    let mut checks = 0;
    for _ in 0..30 {
        let rule = random_rule(rng, n_r, 3);
        let id = rule.id(kg);
        let paths = oracle_paths(kg, &rule.body);
        let got: Vec<Vec<EntityId>> = ground_rule(kg, &rule).map(|g| g.bindings).collect();
        let got_set: BTreeSet<Vec<EntityId>> = got.iter().cloned().collect();
        if got.len() != got_set.len() || got_set != paths {
            return Err(format!("ground_rule {id}: {} groundings vs oracle {}", got.len(), paths.len()));
        }
        for g in ground_rule(kg, &rule) {
            if g.body_triples.iter().any(|t| !set.contains(t)) || g.head_in_kg != set.contains(&g.head_triple) {
                return Err(format!("ground_rule {id}: inconsistent grounding"));
            }
        }
        let pairs = oracle_pairs(kg, &rule.body);
        let hits = pairs
            .iter()
            .filter(|&&(x, y)| set.contains(&Triple::new(x, rule.head, y)))
            .count();
        match rule_confidence(kg, &rule) {
            Ok(c) if !pairs.is_empty() && c == hits as f64 / pairs.len() as f64 => {}
            Err(_) if pairs.is_empty() => {}
            other => return Err(format!("rule_confidence {id}: {other:?} vs {hits}/{}", pairs.len())),
        }
        let inferred: BTreeSet<Triple> = pairs
            .iter()
            .map(|&(x, y)| Triple::new(x, rule.head, y))
            .filter(|t| !set.contains(t))
            .collect();
        if infer_heads(kg, &rule) != inferred {
            return Err(format!("infer_heads {id}"));
        }
        checks += 4;
    }

    // correlation: entities incident to each relation, by scanning triples
    let mut incident: Vec<BTreeSet<EntityId>> = vec![BTreeSet::new(); n_r];
    for t in kg.triples() {
        incident[t.relation.index()].insert(t.head);
        incident[t.relation.index()].insert(t.tail);
    }
    let table = correlation_table(kg);
    match &table {
        Err(_) if incident.iter().any(|s| s.is_empty()) => {}
        Err(e) => return Err(format!("correlation_table: {e}")),
        Ok(tab) => {
            for a in 0..n_r {
                for b in 0..n_r {
                    let (ra, rb) = (RelationId(a as u32), RelationId(b as u32));
                    let joint = incident[a].intersection(&incident[b]).count();
                    let want = joint as f64 / incident[a].len() as f64;
                    if tab.support(ra) != incident[a].len() || tab.joint(ra, rb) != joint || tab.value(ra, rb) != want {
                        return Err(format!("correlation r{a}→r{b}"));
                    }
                    checks += 1;
                }
            }
        }
    }

    for _ in 0..5 {
        let rules = RuleSet::from_rules((0..rng.gen_range(1..=6)).map(|_| random_rule(rng, n_r, 2)));
        for (pool, domain) in [
            (Pool::Mean, PoolDomain::Contributing),
            (Pool::Mean, PoolDomain::AllRules),
            (Pool::Max, PoolDomain::Contributing),
        ] {
            let want = oracle_influence(kg, &rules, pool, domain);
            let got = influence_scores(kg, &rules, pool, domain, usize::MAX).map_err(|e| e.to_string())?;
            if got.len() != want.len() || want.iter().any(|(t, f)| got.score(t) != *f) {
                return Err(format!("influence_scores {pool:?}/{domain:?}"));
            }
            checks += 1;
        }

        let scores = oracle_influence(kg, &rules, Pool::Mean, PoolDomain::Contributing);
        let mut ranked: Vec<(Triple, f64)> = scores.into_iter().filter(|&(_, f)| f > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| kg.surface_key(&a.0).cmp(&kg.surface_key(&b.0))));
        let budget = rng.gen_range(0..=kg.len());
        let plan = plan_deletion(kg, &rules, budget, &DeletionConfig { seed: rng.gen(), ..Default::default() })
            .map_err(|e| e.to_string())?;
        let got: Vec<Triple> = plan.triples().collect();
        let head = budget.min(ranked.len());
        let top: Vec<Triple> = ranked[..head].iter().map(|p| p.0).collect();
        let positive: HashSet<Triple> = ranked.iter().map(|p| p.0).collect();
        if got.len() != budget || got[..head] != top[..] || got[head..].iter().any(|t| positive.contains(t)) {
            return Err(format!("plan_deletion argmax at budget {budget}"));
        }
        checks += 1;

        if let Ok(tab) = &table {
            if n_r >= 2 {
                let negatives: Vec<NegativeRule> = rules
                    .rules()
                    .iter()
                    .filter_map(|r| {
                        let strategy = if rng.gen_bool(0.5) { RewriteStrategy::Correlation } else { RewriteStrategy::Random };
                        corrupt_rule(kg, r, tab, strategy, rng).ok()
                    })
                    .collect();
                if generate_candidates(kg, &negatives, usize::MAX) != oracle_candidates(kg, &negatives) {
                    return Err("generate_candidates".into());
                }
                checks += 1;
            }
        }
    }
    Ok(checks)
}

fn criterion_rule_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut total = 0;
    let mut graphs = vec![toy_kg()];
    graphs.extend((0..20).map(|_| common::random_graph(&mut rng, 500, 8)));
    for (i, kg) in graphs.iter().enumerate() {
        match rule_oracles_on(kg, &mut rng) {
            Ok(n) => total += n,
            Err(e) => return Fail(format!("graph {i}: {e}")),
        }
    }
    Pass(format!("{total} exact comparisons on ToyKG + 20 random graphs"))
}

// ---------------------------------------------------------------------------
// ranking oracle

fn oracle_rank(model: &EmbeddingModel<f64>, kg: &KnowledgeGraph, t: Triple, side: Side, filter: bool) -> usize {
    let set = triple_set(kg);
    let truth = match side {
        Side::Head => t.head,
        Side::Tail => t.tail,
    };
    let mut scored: Vec<(f64, EntityId)> = Vec::new();
    for e in 0..model.num_entities() as u32 {
        let e = EntityId(e);
        let c = match side {
            Side::Head => Triple::new(e, t.relation, t.tail),
            Side::Tail => Triple::new(t.head, t.relation, e),
        };
        if filter && e != truth && set.contains(&c) {
            continue;
        }
        scored.push((model.score(&c), e));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let st = scored.iter().find(|s| s.1 == truth).unwrap().0;
    let first = scored.iter().position(|s| s.0 == st).unwrap() + 1;
    let group = scored.iter().filter(|s| s.0 == st).count();
    first + (group - 1).div_ceil(2)
}

fn criterion_ranking_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut queries = 0;
    let cases = [
        (ModelKind::TransE, Norm::L1),
        (ModelKind::TransE, Norm::L2),
        (ModelKind::DistMult, Norm::L2),
        (ModelKind::ComplEx, Norm::L2),
    ];
    for round in 0..10 {
        for &(kind, norm) in &cases {
            let n_e = rng.gen_range(5..=100);
            let n_r = rng.gen_range(1..=4);
            let dim = rng.gen_range(1..=4);
            let edges: Vec<(u32, u32, u32)> = (0..rng.gen_range(10..200))
                .map(|_| (rng.gen_range(0..n_e as u32), rng.gen_range(0..n_r as u32), rng.gen_range(0..n_e as u32)))
                .collect();
            let kg = common::graph_from_ids(n_e, n_r, &edges);
            let w = if kind == ModelKind::ComplEx { 2 * dim } else { dim };
            // small integers make tied scores common
            let mut int = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-2i32..=2) as f64).collect() };
            let model = EmbeddingModel::from_tables(kind, dim, norm, int(n_e * w), int(n_r * w)).unwrap();
            let filter = FilterIndex::new(kg.triples());
            let mut test: Vec<Triple> = kg.triples().to_vec();
            test.shuffle(&mut rng);
            test.truncate(20);
            let mut oracle_ranks = Vec::new();
            for &t in &test {
                for side in [Side::Head, Side::Tail] {
                    let q = Query { triple: t, side };
                    for filtered in [false, true] {
                        let want = oracle_rank(&model, &kg, t, side, filtered);
                        let got = rank_query(&model, &q, filtered.then_some(&filter));
                        if got != want {
                            return Fail(format!("round {round} {kind}/{norm:?}: rank {got} vs oracle {want}"));
                        }
                        queries += 1;
                    }
                    oracle_ranks.push(oracle_rank(&model, &kg, t, side, true));
                }
            }
            let rep = evaluate(&model, &kg, &test, EvalSetting::Filtered, Some(&filter), &[1, 3, 10]).unwrap();
            let n = oracle_ranks.len() as f64;
            let mrr = oracle_ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
            let mr = oracle_ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
            for k in [1, 3, 10] {
                let h = oracle_ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
                if rep.hits_at(k) != Some(h) {
                    return Fail(format!("round {round} {kind}: Hits@{k} {:?} vs {h}", rep.hits_at(k)));
                }
            }
            if rep.mrr != mrr || rep.mean_rank != mr || rep.n_queries != oracle_ranks.len() {
                return Fail(format!("round {round} {kind}: MRR {} vs {mrr}", rep.mrr));
            }
        }
    }
    Pass(format!("{queries} raw/filtered ranks and 40 reports match the full-sort oracle"))
}

// ---------------------------------------------------------------------------
// gradient checks

const KINK: f64 = 1e-3;

fn near_kink(model: &EmbeddingModel<f64>, ex: &Example, p: &LossParams<f64>) -> bool {
    if model.kind() != ModelKind::TransE {
        return false;
    }
    let sp = model.score(&ex.positive);
    if ex.negatives.iter().any(|n| (p.margin - sp + model.score(n)).abs() < KINK) {
        return true;
    }
    std::iter::once(&ex.positive).chain(&ex.negatives).any(|t| {
        let (h, r, tl) = (model.entity(t.head), model.relation(t.relation), model.entity(t.tail));
        let d: Vec<f64> = (0..model.dim()).map(|i| h[i] + r[i] - tl[i]).collect();
        match model.norm() {
            Norm::L1 => d.iter().any(|x| x.abs() < KINK),
            Norm::L2 => d.iter().map(|x| x * x).sum::<f64>().sqrt() < KINK,
        }
    })
}

/// Coordinate `k` of the concatenated entity and relation tables.
fn cell(m: &mut EmbeddingModel<f64>, n_e: usize, w: usize, k: usize) -> &mut f64 {
    let (row, col) = (k / w, k % w);
    if row < n_e {
        &mut m.entity_mut(EntityId(row as u32))[col]
    } else {
        &mut m.relation_mut(RelationId((row - n_e) as u32))[col]
    }
}

fn gradient_instance(kind: ModelKind, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let n_e = rng.gen_range(3..=8);
        let n_r = rng.gen_range(1..=3);
        let dim = rng.gen_range(1..=6);
        let norm = if rng.gen_bool(0.5) { Norm::L1 } else { Norm::L2 };
        let w = if kind == ModelKind::ComplEx { 2 * dim } else { dim };
        let mut table = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (ents, rels) = (table(n_e * w), table(n_r * w));
        let mut model = EmbeddingModel::from_tables(kind, dim, norm, ents, rels).unwrap();
        let triple = |rng: &mut ChaCha8Rng| {
            Triple::new(
                EntityId(rng.gen_range(0..n_e as u32)),
                RelationId(rng.gen_range(0..n_r as u32)),
                EntityId(rng.gen_range(0..n_e as u32)),
            )
        };
        let positive = triple(rng);
        let negatives = (0..rng.gen_range(1..=4)).map(|_| triple(rng)).collect();
        let ex = Example { positive, negatives };
        let p = LossParams {
            kind: LossKind::default_for(kind),
            margin: rng.gen_range(0.5..2.0),
            regularization: rng.gen_range(0.0..0.1),
        };
        if near_kink(&model, &ex, &p) {
            continue;
        }
        let mut g = SparseGrad::for_model(&model);
        example_gradient(&model, &ex, &p, &mut g);
        let mut analytic = vec![0.0; (n_e + n_r) * w];
        for (i, row) in g.entity_rows() {
            analytic[i * w..(i + 1) * w].copy_from_slice(row);
        }
        for (i, row) in g.relation_rows() {
            analytic[(n_e + i) * w..(n_e + i + 1) * w].copy_from_slice(row);
        }
        let h = 1e-6;
        let mut numeric = vec![0.0; analytic.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = *cell(&mut model, n_e, w, k);
            *cell(&mut model, n_e, w, k) = orig + h;
            let up = example_loss(&model, &ex, &p);
            *cell(&mut model, n_e, w, k) = orig - h;
            let down = example_loss(&model, &ex, &p);
            *cell(&mut model, n_e, w, k) = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm2(&analytic).max(norm2(&numeric));
        return if scale < 1e-10 { 0.0 } else { norm2(&diff) / scale };
    }
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = BTreeMap::new();
    for kind in [ModelKind::TransE, ModelKind::DistMult, ModelKind::ComplEx] {
        let w = (0..100).map(|_| gradient_instance(kind, &mut rng)).fold(0.0, f64::max);
        worst.insert(kind.to_string(), w);
    }
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(worst.values().all(|&v| v <= 1e-4), format!("max relative error: {detail} (≤ 1e-4)"))
}

// ---------------------------------------------------------------------------
// benchmark-backed criteria

const SEEDS: [u64; 3] = [0, 1, 2];

fn workspace_root() -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    root.canonicalize().unwrap_or(root)
}

fn benchmark(name: &str) -> Result<PathBuf, Outcome> {
    let root = std::env::var_os("KGATTACK_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data"));
    let dir = root.join(name);
    if dataset_paths(&dir).iter().all(|p| p.is_file()) {
        Ok(dir)
    } else {
        Err(Blocked(format!("dataset missing: {}", dir.display())))
    }
}

fn run_dir(tag: &str) -> PathBuf {
    workspace_root().join("target/acceptance").join(tag)
}

fn sweep(data: &Path, tag: &str, attackers: &[Attacker], models: &[ModelKind], seeds: &[u64], rewrite: RewriteStrategy) -> Result<RunSummary, String> {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.dir = Some(data.to_path_buf());
    cfg.attacker = OneOrMany::Many(attackers.to_vec());
    cfg.gammas = vec![0.1];
    cfg.models = models.to_vec();
    cfg.rewrite = rewrite;
    cfg.seed = OneOrMany::Many(seeds.to_vec());
    cfg.save_checkpoints = false;
    cfg.out = Some(run_dir(tag));
    run_pipeline(&cfg).map_err(|e| format!("{tag}: {e}"))
}

fn record(s: &RunSummary, model: ModelKind, attacker: Attacker, seed: u64) -> &kgattack::harness::RunRecord {
    s.records
        .iter()
        .find(|r| r.model == model && r.attacker == attacker && r.seed == seed)
        .expect("record present")
}

fn criterion_budget_audit() -> Outcome {
    let mut lines = 0;
    for name in ["FB15k-237", "WN18RR"] {
        let dir = match benchmark(name) {
            Ok(d) => d,
            Err(o) => return o,
        };
        let [tr, va, te] = dataset_paths(&dir);
        let ds = match load_dataset(tr, va, te) {
            Ok(d) => d,
            Err(e) => return Fail(format!("{name}: {e}")),
        };
        let kg = &ds.train;
        let result = (|| -> kgattack::Result<()> {
            let mined = mine_rules(kg, &MinerConfig { seed: derive_seed(0, "mine"), ..Default::default() })?.rules;
            let top = select_rules(&mined, 50, Direction::Highest);
            let bottom = select_rules(&mined, 10, Direction::Lowest);
            // cos plans are audited against an untrained scorer
            let scorer: EmbeddingModel<f32> = init_model(kg, ModelKind::TransE, 200, Norm::L2, 0)?;
            let targets = PseudoTargetSet::sample(kg, 0.05, 0)?;
            for gamma in [0.05, 0.10, 0.15, 0.20, 0.25] {
                let budget = budget_for_ratio(gamma, kg.len());
                let train: HashSet<Triple> = kg.triples().iter().copied().collect();
                let plans = [
                    ("rules-delete", plan_deletion(kg, &top, budget, &DeletionConfig::default())?),
                    ("rules-add", plan_addition(kg, &bottom, budget, &AdditionConfig::default())?.plan),
                    ("random-delete", random_deletion(kg, budget, 0)?),
                    ("random-add", random_addition(kg, budget, 0)?),
                    ("cos-delete", cos_attack(kg, &scorer, &targets, budget, PlanMode::Delete, &CosConfig::default())?),
                    ("cos-add", cos_attack(kg, &scorer, &targets, budget, PlanMode::Add, &CosConfig::default())?),
                ];
                for (label, plan) in plans {
                    let inside = plan.triples().filter(|t| train.contains(t)).count();
                    let ok = plan.len() == budget
                        && match plan.mode {
                            PlanMode::Delete => inside == budget,
                            PlanMode::Add => inside == 0,
                        };
                    if !ok {
                        return Err(kgattack::Error::PlanViolation(format!(
                            "{name} {label} γ={gamma}: {} triples for budget {budget}",
                            plan.len()
                        )));
                    }
                    lines += 1;
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            return Fail(e.to_string());
        }
    }
    Pass(format!("{lines} plans exact and disjoint"))
}

fn criterion_clean_sanity() -> Outcome {
    let (fb, wn) = match (benchmark("FB15k-237"), benchmark("WN18RR")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(o), _) | (_, Err(o)) => return o,
    };
    let models = [ModelKind::TransE, ModelKind::DistMult];
    let fb_run = match sweep(&fb, "clean-fb15k-237", &[Attacker::None], &models, &[0], RewriteStrategy::Correlation) {
        Ok(s) => s,
        Err(e) => return Fail(e),
    };
    let wn_run = match sweep(&wn, "clean-wn18rr", &[Attacker::None], &[ModelKind::TransE], &[0], RewriteStrategy::Correlation) {
        Ok(s) => s,
        Err(e) => return Fail(e),
    };
    let fb_transe = record(&fb_run, ModelKind::TransE, Attacker::None, 0).clean.hits_at(10).unwrap_or(0.0);
    let fb_distmult = record(&fb_run, ModelKind::DistMult, Attacker::None, 0).clean.mrr;
    let wn_transe = record(&wn_run, ModelKind::TransE, Attacker::None, 0).clean.hits_at(10).unwrap_or(0.0);
    check(
        fb_transe >= 0.40 && wn_transe >= 0.40 && fb_distmult >= 0.20,
        format!(
            "FB15k-237 TransE H@10 {fb_transe:.4} (≥ 0.40), WN18RR TransE H@10 {wn_transe:.4} (≥ 0.40), FB15k-237 DistMult MRR {fb_distmult:.4} (≥ 0.20)"
        ),
    )
}

fn majority(wins: usize) -> bool {
    wins >= 2
}

fn criterion_deletion_trend() -> Outcome {
    let wn = match benchmark("WN18RR") {
        Ok(d) => d,
        Err(o) => return o,
    };
    let models = [ModelKind::TransE, ModelKind::DistMult];
    let run = match sweep(&wn, "delete-wn18rr", &[Attacker::RulesDelete, Attacker::RandomDelete], &models, &SEEDS, RewriteStrategy::Correlation) {
        Ok(s) => s,
        Err(e) => return Fail(e),
    };
    let mut ok = true;
    let mut parts = vec![];
    for m in models {
        let drops: Vec<(f64, f64)> = SEEDS
            .iter()
            .map(|&s| {
                let d = |a| record(&run, m, a, s).drop("hits@10").unwrap_or(f64::NAN);
                (d(Attacker::RulesDelete), d(Attacker::RandomDelete))
            })
            .collect();
        let mean_rule = drops.iter().map(|d| d.0).sum::<f64>() / drops.len() as f64;
        let wins = drops.iter().filter(|d| d.0 > d.1).count();
        ok &= mean_rule >= 0.08 && majority(wins);
        parts.push(format!("{m}: mean rule drop {:.1}% (≥ 8%), beats random on {wins}/3", 100.0 * mean_rule));
    }
    check(ok, parts.join("; "))
}

fn criterion_addition_trend() -> Outcome {
    let fb = match benchmark("FB15k-237") {
        Ok(d) => d,
        Err(o) => return o,
    };
    let run = match sweep(&fb, "add-fb15k-237", &[Attacker::RulesAdd, Attacker::RandomAdd], &[ModelKind::TransE], &SEEDS, RewriteStrategy::Correlation) {
        Ok(s) => s,
        Err(e) => return Fail(e),
    };
    let wins = SEEDS
        .iter()
        .filter(|&&s| {
            let h = |a| record(&run, ModelKind::TransE, a, s).attacked.hits_at(10).unwrap_or(f64::NAN);
            h(Attacker::RulesAdd) < h(Attacker::RandomAdd)
        })
        .count();
    check(majority(wins), format!("rule addition below random addition on {wins}/3 seeds (≥ 2)"))
}

fn criterion_rewrite_ablation() -> Outcome {
    let wn = match benchmark("WN18RR") {
        Ok(d) => d,
        Err(o) => return o,
    };
    let runs: Vec<RunSummary> = match [RewriteStrategy::Correlation, RewriteStrategy::Random]
        .iter()
        .map(|&rw| sweep(&wn, &format!("rewrite-{rw:?}-wn18rr").to_lowercase(), &[Attacker::RulesAdd], &[ModelKind::TransE], &SEEDS, rw))
        .collect::<Result<_, _>>()
    {
        Ok(r) => r,
        Err(e) => return Fail(e),
    };
    let wins = SEEDS
        .iter()
        .filter(|&&s| {
            let mrr = |r: &RunSummary| record(r, ModelKind::TransE, Attacker::RulesAdd, s).attacked.mrr;
            mrr(&runs[0]) <= mrr(&runs[1])
        })
        .count();
    check(majority(wins), format!("correlation MRR ≤ random MRR on {wins}/3 seeds (≥ 2)"))
}

// ---------------------------------------------------------------------------
// determinism

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_synthetic_dataset(&data, 5);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        if let Err(e) = run_pipeline(&common::small_config(&data, out)) {
            return Fail(e.to_string());
        }
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let compared: Vec<&String> = ta.keys().filter(|k| k.as_str() != "timings.json").collect();
    let differing: Vec<&&String> = compared.iter().filter(|k| ta.get(**k) != tb.get(**k)).collect();
    let plans = compared.iter().filter(|k| k.starts_with("plans/")).count();
    check(
        differing.is_empty() && ta.len() == tb.len(),
        format!("{} artifacts ({plans} plans, report, manifest) compared, {} differ", compared.len(), differing.len()),
    )
}

fn main() {
    let strict = std::env::var("KGATTACK_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 9] = [
        ("oracle equivalence", Some(Duration::from_secs(60)), criterion_rule_oracles),
        ("ranking oracle", Some(Duration::from_secs(60)), criterion_ranking_oracle),
        ("gradient checks", Some(Duration::from_secs(60)), criterion_gradients),
        ("budget & disjointness audit", Some(Duration::from_secs(300)), criterion_budget_audit),
        ("clean-training sanity", None, criterion_clean_sanity),
        ("deletion trend", None, criterion_deletion_trend),
        ("addition trend", None, criterion_addition_trend),
        ("rewriting ablation", None, criterion_rewrite_ablation),
        ("determinism", None, criterion_determinism),
    ];
    let mut failed = 0;
    let mut blocked = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match (outcome, limit) {
            (Pass(d), Some(l)) if took > *l => Fail(format!("{d}; took {took:.1?}, limit {l:?}")),
            (o, _) => o,
        };
        let line = match &outcome {
            Pass(d) => format!("PASS  {d}"),
            Fail(d) => {
                failed += 1;
                format!("FAIL  {d}")
            }
            Blocked(d) => {
                blocked += 1;
                format!("FAIL (blocked: {d})")
            }
        };
        println!("criterion {} {name}: {line} [{took:.1?}]", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed, {blocked} blocked", 9 - failed - blocked);
    if failed > 0 || (strict && blocked > 0) {
        std::process::exit(1);
    }
}
