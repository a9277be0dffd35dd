use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use kgattack::attack::{plan_addition, plan_deletion, AdditionConfig, DeletionConfig, Pool, PoolDomain, RewriteStrategy};
use kgattack::baselines::{cos_attack, random_addition, random_deletion, CosConfig, PseudoTargetSet};
use kgattack::harness::{
    derive_seed, emit_report, load_summary, run_pipeline, Artifacts, Attacker, ExperimentConfig, OneOrMany,
    ReportFormat, RunRecord,
};
use kgattack::kg::{budget_for_ratio, load_dataset, load_tsv, save_plan, Dataset, KnowledgeGraph};
use kgattack::kge::{
    evaluate, load_model, relation_similarity_matrix, save_model, train, write_similarity_csv, EmbeddingModel,
    EvalSetting, FilterIndex, ModelKind, Norm, Optimizer,
};
use kgattack::rules::{load_rules, mine_rules, save_rules, select_rules, Direction};

#[derive(Parser)]
#[command(name = "kgattack", version, about = "Rule-guided poisoning attacks on knowledge graph embeddings")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine chain rules from the training graph.
    Mine(Common),
    /// Plan a perturbation for one attacker and ratio.
    Attack(AttackArgs),
    /// Train an embedding model.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Run the full mine → attack → retrain → evaluate sweep.
    Pipeline(Common),
    /// Render reports from one or more report.json files.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Markdown,
}

/// Flags mirroring the experiment config keys; they override `--config`.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Directory with train.txt, valid.txt and test.txt.
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    train_file: Option<PathBuf>,
    #[arg(long)]
    valid_file: Option<PathBuf>,
    #[arg(long)]
    test_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    attacker: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
    #[arg(long)]
    pool: Option<String>,
    #[arg(long)]
    pool_domain: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rule_length: Option<usize>,
    #[arg(long)]
    rewrite: Option<String>,
    #[arg(long)]
    rules_file: Option<PathBuf>,
    #[arg(long)]
    walks_per_entity: Option<usize>,
    #[arg(long)]
    top_k_per_head: Option<usize>,
    #[arg(long)]
    min_body_support: Option<usize>,
    #[arg(long)]
    exhaustive: bool,
    #[arg(long)]
    grounding_cap: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    regularization: Option<f64>,
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    eval_setting: Option<String>,
    #[arg(long, value_delimiter = ',')]
    hits_at: Vec<usize>,
    #[arg(long)]
    high_rank_threshold: Option<usize>,
    #[arg(long)]
    target_fraction: Option<f64>,
    #[arg(long)]
    cos_pool_factor: Option<usize>,
    #[arg(long)]
    no_checkpoints: bool,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    /// Model checkpoint, required by the cos attackers.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also export relation cosine similarities as CSV.
    #[arg(long)]
    similarity: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json files written by `pipeline`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

fn parse_value<T: serde::de::DeserializeOwned>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_owned()))
        .with_context(|| format!("invalid value `{v}` for --{key}"))
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.out = Some(self.out.clone());
        if let Some(d) = &self.dataset_dir {
            cfg.dataset.dir = Some(d.clone());
        }
        for (slot, v) in [
            (&mut cfg.dataset.train, &self.train_file),
            (&mut cfg.dataset.valid, &self.valid_file),
            (&mut cfg.dataset.test, &self.test_file),
        ] {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        if !self.attacker.is_empty() {
            let a = self.attacker.iter().map(|s| s.parse()).collect::<kgattack::Result<Vec<Attacker>>>()?;
            cfg.attacker = OneOrMany::Many(a);
        }
        if !self.gammas.is_empty() {
            cfg.gammas = self.gammas.clone();
        }
        if let Some(v) = &self.pool {
            cfg.pool = parse_value::<Pool>("pool", v)?;
        }
        if let Some(v) = &self.pool_domain {
            cfg.pool_domain = parse_value::<PoolDomain>("pool-domain", v)?;
        }
        if let Some(v) = &self.rewrite {
            cfg.rewrite = parse_value::<RewriteStrategy>("rewrite", v)?;
        }
        if let Some(v) = &self.eval_setting {
            cfg.eval_setting = parse_value::<EvalSetting>("eval-setting", v)?;
        }
        macro_rules! set {
            ($($field:ident).+ <- $flag:ident) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field).+ = v.into();
                }
            };
        }
        set!(m <- m);
        set!(n <- n);
        set!(rule_length <- rule_length);
        set!(rules_file <- rules_file);
        set!(miner.walks_per_entity <- walks_per_entity);
        set!(miner.top_k_per_head <- top_k_per_head);
        set!(miner.min_body_support <- min_body_support);
        set!(grounding_cap <- grounding_cap);
        set!(high_rank_threshold <- high_rank_threshold);
        set!(target_fraction <- target_fraction);
        set!(cos_pool_factor <- cos_pool_factor);
        if self.exhaustive {
            cfg.miner.exhaustive = true;
        }
        if self.no_checkpoints {
            cfg.save_checkpoints = false;
        }
        if !self.models.is_empty() {
            cfg.models = self
                .models
                .iter()
                .map(|s| s.parse())
                .collect::<kgattack::Result<Vec<ModelKind>>>()?;
        }
        if !self.hits_at.is_empty() {
            cfg.hits_at = self.hits_at.clone();
        }
        if !self.seed.is_empty() {
            cfg.seed = OneOrMany::Many(self.seed.clone());
        }
        let norm = self.norm.as_deref().map(|v| parse_value::<Norm>("norm", v)).transpose()?;
        let optimizer = self
            .optimizer
            .as_deref()
            .map(|v| parse_value::<Optimizer>("optimizer", v))
            .transpose()?;
        let train_cfgs = std::iter::once(&mut cfg.train).chain(cfg.model_train.values_mut());
        for t in train_cfgs {
            macro_rules! tset {
                ($field:ident) => {
                    if let Some(v) = self.$field {
                        t.$field = v;
                    }
                };
            }
            tset!(dim);
            tset!(epochs);
            tset!(batch_size);
            tset!(learning_rate);
            tset!(negatives);
            tset!(margin);
            tset!(workers);
            if self.regularization.is_some() {
                t.regularization = self.regularization;
            }
            if let Some(n) = norm {
                t.norm = n;
            }
            if let Some(o) = optimizer {
                t.optimizer = o;
            }
        }
        Ok(cfg)
    }
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds().first().copied().unwrap_or(0)
}

/// Full dataset when every split is configured, otherwise the training file alone.
fn load_graph(cfg: &ExperimentConfig) -> Result<(KnowledgeGraph, Option<Dataset>)> {
    match cfg.dataset.paths() {
        Ok([train, valid, test]) if valid.is_file() && test.is_file() => {
            let ds = load_dataset(&train, &valid, &test)?;
            Ok((ds.train.clone(), Some(ds)))
        }
        _ => {
            let path = cfg
                .dataset
                .train
                .clone()
                .or_else(|| cfg.dataset.dir.as_ref().map(|d| d.join("train.txt")))
                .context("no training split configured (--train-file or --dataset-dir)")?;
            Ok((load_tsv(path)?, None))
        }
    }
}

fn require_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match load_graph(cfg)? {
        (_, Some(ds)) => Ok(ds),
        _ => bail!("this command needs train, valid and test splits"),
    }
}

fn single_model(cfg: &ExperimentConfig) -> Result<ModelKind> {
    match cfg.models.as_slice() {
        [k] => Ok(*k),
        _ => bail!("exactly one model kind is required (--models)"),
    }
}

fn finish(art: &Artifacts) -> Result<()> {
    art.write_manifest(true)?;
    println!("wrote {} artifacts under {}", art.hashes().len(), art.root().display());
    Ok(())
}

fn cmd_mine(c: &Common) -> Result<()> {
    let cfg = c.resolve()?;
    let (kg, _) = load_graph(&cfg)?;
    let mut art = Artifacts::create(&c.out)?;
    let report = mine_rules(&kg, &cfg.miner_config(first_seed(&cfg)))?;
    save_rules(&report.rules, &kg, art.path("rules.jsonl")?)?;
    art.record("rules.jsonl")?;
    let uncovered: Vec<&str> = report.uncovered_heads.iter().map(|r| kg.relation_name(*r)).collect();
    art.write_json(
        "mining.json",
        &serde_json::json!({
            "rules": report.rules.len(),
            "fingerprint": report.rules.fingerprint(&kg),
            "candidate_bodies": report.candidate_bodies,
            "candidate_rules": report.candidate_rules,
            "truncated_bodies": report.truncated_bodies,
            "uncovered_heads": uncovered,
        }),
    )?;
    info!("mined {} rules", report.rules.len());
    finish(&art)
}

fn cmd_attack(a: &AttackArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let attackers = cfg.attackers();
    let [attacker] = attackers.as_slice() else {
        bail!("exactly one --attacker is required");
    };
    let [gamma] = cfg.gammas.as_slice() else {
        bail!("exactly one --gammas value is required");
    };
    let Some(mode) = attacker.mode() else {
        bail!("attacker `none` produces no plan");
    };
    if !(*gamma > 0.0 && *gamma < 1.0) {
        bail!("gamma {gamma} outside (0, 1)");
    }
    let (kg, _) = load_graph(&cfg)?;
    let seed = first_seed(&cfg);
    let plan_seed = derive_seed(seed, &format!("plan-{attacker}"));
    let budget = budget_for_ratio(*gamma, kg.len());
    let mut art = Artifacts::create(&a.common.out)?;
    let rules = if attacker.uses_rules() {
        let all = match &cfg.rules_file {
            Some(p) => load_rules(p, &kg)?,
            None => mine_rules(&kg, &cfg.miner_config(derive_seed(seed, "mine")))?.rules,
        };
        save_rules(&all, &kg, art.path("rules.jsonl")?)?;
        art.record("rules.jsonl")?;
        Some(all)
    } else {
        None
    };
    let plan = match attacker {
        Attacker::RulesDelete => {
            let top = select_rules(rules.as_ref().unwrap(), cfg.m, Direction::Highest);
            let dc = DeletionConfig {
                pool: cfg.pool,
                pool_domain: cfg.pool_domain,
                seed: plan_seed,
                grounding_cap: cfg.grounding_cap,
            };
            plan_deletion(&kg, &top, budget, &dc)?
        }
        Attacker::RulesAdd => {
            let bottom = select_rules(rules.as_ref().unwrap(), cfg.n, Direction::Lowest);
            let ac = AdditionConfig {
                seed: plan_seed,
                rewrite: cfg.rewrite,
                grounding_cap: cfg.grounding_cap,
            };
            plan_addition(&kg, &bottom, budget, &ac)?.plan
        }
        Attacker::RandomDelete => random_deletion(&kg, budget, plan_seed)?,
        Attacker::RandomAdd => random_addition(&kg, budget, plan_seed)?,
        Attacker::CosDelete | Attacker::CosAdd => {
            let ckpt = a.checkpoint.as_ref().context("cos attackers need --checkpoint")?;
            let ds = require_dataset(&cfg)?;
            let model: EmbeddingModel<f32> = load_model(ckpt, &ds.train)?;
            let targets = PseudoTargetSet::sample(&ds.train, cfg.target_fraction, derive_seed(seed, "targets"))?;
            let cc = CosConfig {
                seed: plan_seed,
                pool_factor: cfg.cos_pool_factor,
            };
            cos_attack(&ds.train, &model, &targets, budget, mode, &cc)?
        }
        Attacker::None => unreachable!(),
    }
    .with_ratio(Some(*gamma));
    plan.validate(&kg)?;
    save_plan(&plan, &kg, art.path("plan.tsv")?)?;
    art.record("plan.tsv")?;
    info!("{attacker}: {} triples ({} random fill)", plan.len(), plan.fill_count);
    finish(&art)
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = c.resolve()?;
    let kind = single_model(&cfg)?;
    let ds = require_dataset(&cfg)?;
    let mut tcfg = cfg.train_for(kind).clone();
    tcfg.seed = derive_seed(first_seed(&cfg), &format!("train-{kind}"));
    let (model, report) = train::<f32>(&ds.train, kind, &tcfg)?;
    let mut art = Artifacts::create(&c.out)?;
    save_model(&model, &ds.train, art.path("model.ckpt")?)?;
    art.record("model.ckpt")?;
    art.write_json("training.json", &report)?;
    finish(&art)
}

fn cmd_eval(e: &EvalArgs) -> Result<()> {
    let cfg = e.common.resolve()?;
    let ds = require_dataset(&cfg)?;
    let model: EmbeddingModel<f32> = load_model(&e.checkpoint, &ds.train)?;
    let filter = FilterIndex::new(&ds.all_true());
    let report = evaluate(&model, &ds.train, &ds.test, cfg.eval_setting, Some(&filter), &cfg.ks())?;
    let mut art = Artifacts::create(&e.common.out)?;
    art.write_json("eval.json", &report)?;
    if e.similarity {
        let rels: Vec<_> = ds.train.relations().collect();
        let matrix = relation_similarity_matrix(&model, &rels);
        let mut buf = Vec::new();
        write_similarity_csv(&ds.train, &rels, &matrix, &mut buf)?;
        art.write_text("relation_similarity.csv", std::str::from_utf8(&buf)?)?;
    }
    println!("MRR {:.4}  Hits@10 {:.4}", report.mrr, report.hits_at(10).unwrap_or(0.0));
    finish(&art)
}

fn cmd_pipeline(c: &Common) -> Result<()> {
    let cfg = c.resolve()?;
    let summary = run_pipeline(&cfg)?;
    println!("{}", emit_report(&summary.records, ReportFormat::Markdown)?);
    println!("artifacts under {}", c.out.display());
    Ok(())
}

fn cmd_report(r: &ReportArgs) -> Result<()> {
    let mut records: Vec<RunRecord> = Vec::new();
    for p in &r.inputs {
        records.extend(load_summary(p).with_context(|| format!("reading {}", p.display()))?.records);
    }
    let (format, name) = match r.format {
        Format::Json => (ReportFormat::Json, "report.json"),
        Format::Csv => (ReportFormat::Csv, "report.csv"),
        Format::Markdown => (ReportFormat::Markdown, "report.md"),
    };
    let text = emit_report(&records, format)?;
    let mut art = Artifacts::create(&r.out)?;
    art.write_text(name, &text)?;
    finish(&art)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match &cli.command {
        Command::Mine(c) => cmd_mine(c),
        Command::Attack(a) => cmd_attack(a),
        Command::Train(c) => cmd_train(c),
        Command::Eval(e) => cmd_eval(e),
        Command::Pipeline(c) => cmd_pipeline(c),
        Command::Report(r) => cmd_report(r),
    }
}
