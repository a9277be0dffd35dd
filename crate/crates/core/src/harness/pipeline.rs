//! mine → plan → retrain → evaluate sweeps.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{Attacker, ExperimentConfig};
use super::report::{
    emit_report, relative_drops, ConfidenceShift, DatasetInfo, PlanInfo, ReportFormat, RuleInfo, RunRecord,
    RunSummary,
};
use crate::attack::{plan_addition, plan_deletion, AdditionConfig, DeletionConfig};
use crate::baselines::{cos_attack, random_addition, random_deletion, CosConfig, PseudoTargetSet};
use crate::error::{Error, Result};
use crate::kg::{apply_plan, budget_for_ratio, load_dataset, save_plan, Dataset, KnowledgeGraph, PerturbationPlan};
use crate::kge::{
    evaluate, evaluate_queries, highly_ranked, save_model, train, EmbeddingModel, EvalReport, EvalSetting,
    FilterIndex, ModelKind, TrainConfig,
};
use crate::rules::{load_rules, mine_rules, rule_stats, save_rules, select_rules, Direction, RuleSet};

/// Derives an independent stream seed for one pipeline component.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Files written under an output directory, with their content hashes.
#[derive(Debug)]
pub struct Artifacts {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Artifacts {
            root,
            hashes: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for a relative artifact name, creating parent directories.
    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(p)
    }

    /// Hashes an artifact that has been written and returns the digest.
    pub fn record(&mut self, rel: &str) -> Result<String> {
        let h = sha256_file(&self.root.join(rel))?;
        self.hashes.insert(rel.to_owned(), h.clone());
        Ok(h)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<String> {
        let p = self.path(rel)?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.record(rel)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<String> {
        write_json(&self.path(rel)?, value)?;
        self.record(rel)
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    /// Writes `manifest.json` listing every recorded artifact.
    pub fn write_manifest(&self, complete: bool) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            complete: bool,
            artifacts: &'a BTreeMap<String, String>,
        }
        write_json(
            &self.root.join("manifest.json"),
            &Manifest {
                complete,
                artifacts: &self.hashes,
            },
        )
    }
}

fn gamma_tag(g: f64) -> String {
    format!("g{g:.2}")
}

fn training_mode(t: &TrainConfig) -> String {
    if t.workers == 1 {
        "single-worker".into()
    } else {
        format!("multi-worker({})", t.workers)
    }
}

struct Rules {
    info_top: RuleInfo,
    info_bottom: RuleInfo,
    top_m: RuleSet,
    bottom_n: RuleSet,
}

struct CleanRun {
    model: EmbeddingModel<f32>,
    report: EvalReport,
    high_rank: Option<(Vec<crate::kg::Triple>, EvalReport)>,
    checkpoint: Option<String>,
}

/// A plan shared by every model of one seed.
struct SharedPlan {
    plan: PerturbationPlan,
    info: PlanInfo,
    shift: Option<ConfidenceShift>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    ds: Dataset,
    filter: Option<FilterIndex>,
    ks: Vec<usize>,
    art: Artifacts,
    timings: BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn timed<T>(&mut self, key: String, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        self.timings.insert(key, start.elapsed().as_secs_f64());
        out
    }

    fn eval(&self, model: &EmbeddingModel<f32>, test: &[crate::kg::Triple]) -> Result<EvalReport> {
        evaluate(model, &self.ds.train, test, self.cfg.eval_setting, self.filter.as_ref(), &self.ks)
    }

    fn train_cfg(&self, kind: ModelKind, seed: u64) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(seed, &format!("train-{kind}")),
            ..self.cfg.train_for(kind).clone()
        }
    }

    fn rules(&mut self, seed: u64) -> Result<Rules> {
        let kg = &self.ds.train;
        let (all, source) = match &self.cfg.rules_file {
            Some(path) => (load_rules(path, kg).map_err(|e| e.in_stage("load-rules"))?, "loaded"),
            None => {
                let mc = self.cfg.miner_config(derive_seed(seed, "mine"));
                let report = mine_rules(kg, &mc).map_err(|e| e.in_stage("mine"))?;
                (report.rules, "mined")
            }
        };
        if all.is_empty() {
            return Err(Error::EmptyRuleSet.in_stage("mine"));
        }
        let all_rel = format!("rules/{source}-s{seed}.jsonl");
        save_rules(&all, kg, self.art.path(&all_rel)?)?;
        self.art.record(&all_rel)?;
        let top_m = select_rules(&all, self.cfg.m, Direction::Highest);
        let bottom_n = select_rules(&all, self.cfg.n, Direction::Lowest);
        let mut info = |set: &RuleSet, name: &str| -> Result<RuleInfo> {
            let rel = format!("rules/{name}-s{seed}.jsonl");
            save_rules(set, kg, self.art.path(&rel)?)?;
            self.art.record(&rel)?;
            Ok(RuleInfo {
                path: rel,
                fingerprint: set.fingerprint(kg),
                len: set.len(),
            })
        };
        let info_top = info(&top_m, "top-m")?;
        let info_bottom = info(&bottom_n, "bottom-n")?;
        log::info!(
            "seed {seed}: {} rules, {} top-m, {} bottom-n",
            all.len(),
            top_m.len(),
            bottom_n.len()
        );
        Ok(Rules {
            info_top,
            info_bottom,
            top_m,
            bottom_n,
        })
    }

    fn save_plan(&mut self, plan: &PerturbationPlan, rel: &str) -> Result<PlanInfo> {
        save_plan(plan, &self.ds.train, self.art.path(rel)?)?;
        let sha256 = self.art.record(rel)?;
        Ok(PlanInfo {
            path: rel.to_owned(),
            sha256,
            len: plan.len(),
            fill_count: plan.fill_count,
        })
    }

    fn confidence_shift(
        &mut self,
        rules: &RuleSet,
        perturbed: &KnowledgeGraph,
        rel: &str,
    ) -> Result<ConfidenceShift> {
        let kg = &self.ds.train;
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Report(e.to_string());
        w.write_record(["rule", "clean_confidence", "attacked_confidence"]).map_err(err)?;
        let (mut sum_c, mut sum_a) = (0.0, 0.0);
        for r in rules.rules() {
            let after = rule_stats(perturbed, r, self.cfg.grounding_cap).confidence();
            sum_c += r.confidence;
            sum_a += after.unwrap_or(0.0);
            let after = after.map(|a| format!("{a:.6}")).unwrap_or_default();
            w.write_record([r.id(kg), format!("{:.6}", r.confidence), after]).map_err(err)?;
        }
        let text = String::from_utf8(w.into_inner().map_err(|e| Error::Report(e.to_string()))?)
            .map_err(|e| Error::Report(e.to_string()))?;
        self.art.write_text(rel, &text)?;
        let n = rules.len().max(1) as f64;
        Ok(ConfidenceShift {
            path: rel.to_owned(),
            n_rules: rules.len(),
            mean_clean: sum_c / n,
            mean_attacked: sum_a / n,
        })
    }

    fn shared_plan(&mut self, attacker: Attacker, gamma: f64, seed: u64, rules: Option<&Rules>) -> Result<SharedPlan> {
        let kg = &self.ds.train;
        let budget = budget_for_ratio(gamma, kg.len());
        let plan_seed = derive_seed(seed, &format!("plan-{attacker}"));
        let need_rules = || rules.ok_or(Error::EmptyRuleSet);
        let plan = match attacker {
            Attacker::RulesDelete => {
                let cfg = DeletionConfig {
                    pool: self.cfg.pool,
                    pool_domain: self.cfg.pool_domain,
                    seed: plan_seed,
                    grounding_cap: self.cfg.grounding_cap,
                };
                plan_deletion(kg, &need_rules()?.top_m, budget, &cfg)?
            }
            Attacker::RulesAdd => {
                let cfg = AdditionConfig {
                    seed: plan_seed,
                    rewrite: self.cfg.rewrite,
                    grounding_cap: self.cfg.grounding_cap,
                };
                let outcome = plan_addition(kg, &need_rules()?.bottom_n, budget, &cfg)?;
                let negatives = RuleSet::from_rules(outcome.negative_rules.iter().map(|n| n.rule.clone()));
                let rel = format!("rules/negative-{}-s{seed}.jsonl", gamma_tag(gamma));
                save_rules(&negatives, kg, self.art.path(&rel)?)?;
                self.art.record(&rel)?;
                log::info!(
                    "rules-add {}: {} candidates for budget {budget}",
                    gamma_tag(gamma),
                    outcome.candidate_count
                );
                outcome.plan
            }
            Attacker::RandomDelete => random_deletion(kg, budget, plan_seed)?,
            Attacker::RandomAdd => random_addition(kg, budget, plan_seed)?,
            other => return Err(Error::Config(format!("{other} is planned per model"))),
        }
        .with_ratio(Some(gamma));
        plan.validate(kg)?;
        let rel = format!("plans/{attacker}-{}-s{seed}.tsv", gamma_tag(gamma));
        let info = self.save_plan(&plan, &rel)?;
        let shift = match (attacker.uses_rules() && self.cfg.export_confidence, rules) {
            (true, Some(r)) => {
                let perturbed = apply_plan(&self.ds.train, &plan)?;
                let set = if attacker == Attacker::RulesDelete { &r.top_m } else { &r.bottom_n };
                let rel = format!("rules/confidence-{attacker}-{}-s{seed}.csv", gamma_tag(gamma));
                Some(self.confidence_shift(set, &perturbed, &rel)?)
            }
            _ => None,
        };
        Ok(SharedPlan { plan, info, shift })
    }

    fn clean_run(&mut self, kind: ModelKind, seed: u64) -> Result<CleanRun> {
        let tcfg = self.train_cfg(kind, seed);
        let (model, treport) = train::<f32>(&self.ds.train, kind, &tcfg).map_err(|e| e.in_stage("train-clean"))?;
        let tag = format!("{kind}-clean-s{seed}");
        self.art.write_json(&format!("reports/{tag}-training.json"), &treport.epoch_losses)?;
        let report = self.eval(&model, &self.ds.test).map_err(|e| e.in_stage("eval-clean"))?;
        self.art.write_json(&format!("reports/{tag}.json"), &report)?;
        let high_rank = match self.cfg.high_rank_threshold {
            Some(k) => {
                let filter = match self.cfg.eval_setting {
                    EvalSetting::Filtered => self.filter.as_ref(),
                    EvalSetting::Raw => None,
                };
                let ranks = evaluate_queries(&model, &self.ds.test, filter);
                let subset = highly_ranked(&ranks, k);
                if subset.is_empty() {
                    log::warn!("{kind} seed {seed}: no test triple ranked within {k}");
                    None
                } else {
                    let r = self.eval(&model, &subset).map_err(|e| e.in_stage("eval-clean"))?;
                    Some((subset, r))
                }
            }
            None => None,
        };
        let checkpoint = if self.cfg.save_checkpoints {
            let rel = format!("models/{tag}.ckpt");
            save_model(&model, &self.ds.train, self.art.path(&rel)?)?;
            self.art.record(&rel)?;
            Some(rel)
        } else {
            None
        };
        Ok(CleanRun {
            model,
            report,
            high_rank,
            checkpoint,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn attacked_run(
        &mut self,
        kind: ModelKind,
        seed: u64,
        attacker: Attacker,
        gamma: f64,
        plan: &PerturbationPlan,
        clean: &CleanRun,
        tag: &str,
    ) -> Result<(EvalReport, Option<EvalReport>, Option<String>)> {
        let perturbed = apply_plan(&self.ds.train, plan).map_err(|e| e.in_stage("apply"))?;
        let tcfg = self.train_cfg(kind, seed);
        let (model, treport) = train::<f32>(&perturbed, kind, &tcfg).map_err(|e| e.in_stage("train-attacked"))?;
        self.art.write_json(&format!("reports/{tag}-training.json"), &treport.epoch_losses)?;
        let report = self.eval(&model, &self.ds.test).map_err(|e| e.in_stage("eval-attacked"))?;
        self.art.write_json(&format!("reports/{tag}.json"), &report)?;
        let high = match &clean.high_rank {
            Some((subset, _)) => Some(self.eval(&model, subset).map_err(|e| e.in_stage("eval-attacked"))?),
            None => None,
        };
        let checkpoint = if self.cfg.save_checkpoints {
            let rel = format!("models/{tag}.ckpt");
            save_model(&model, &perturbed, self.art.path(&rel)?)?;
            self.art.record(&rel)?;
            Some(rel)
        } else {
            None
        };
        log::info!(
            "{kind} {attacker} {} seed {seed}: MRR {:.4} -> {:.4}",
            gamma_tag(gamma),
            clean.report.mrr,
            report.mrr
        );
        Ok((report, high, checkpoint))
    }

    fn run(&mut self) -> Result<Vec<RunRecord>> {
        let cfg = self.cfg;
        let attackers = cfg.attackers();
        let mut records = Vec::new();
        let mut clean_cache: HashMap<(ModelKind, u64), CleanRun> = HashMap::new();
        for seed in cfg.seeds() {
            let rules = if attackers.iter().any(|a| a.uses_rules()) {
                Some(self.timed(format!("rules-s{seed}"), |c| c.rules(seed))?)
            } else {
                None
            };
            let mut shared: BTreeMap<(Attacker, usize), SharedPlan> = BTreeMap::new();
            for &a in attackers.iter().filter(|a| a.mode().is_some() && !a.per_model()) {
                for (gi, &g) in cfg.gammas.iter().enumerate() {
                    let key = format!("plan-{a}-{}-s{seed}", gamma_tag(g));
                    let p = self
                        .timed(key, |c| c.shared_plan(a, g, seed, rules.as_ref()))
                        .map_err(|e| e.in_stage("plan"))?;
                    shared.insert((a, gi), p);
                }
            }
            for &kind in &cfg.models {
                let key = (kind, seed);
                if !clean_cache.contains_key(&key) {
                    let run = self.timed(format!("{kind}-clean-s{seed}"), |c| c.clean_run(kind, seed))?;
                    clean_cache.insert(key, run);
                }
                let clean = &clean_cache[&key];
                let mode = training_mode(cfg.train_for(kind));
                for &attacker in &attackers {
                    let base = RunRecord {
                        model: kind,
                        attacker,
                        gamma: None,
                        seed,
                        train_size: self.ds.train.len(),
                        budget: 0,
                        plan: None,
                        rules: None,
                        clean: clean.report.clone(),
                        attacked: clean.report.clone(),
                        drops: relative_drops(&clean.report, &clean.report),
                        clean_high_rank: clean.high_rank.as_ref().map(|h| h.1.clone()),
                        attacked_high_rank: clean.high_rank.as_ref().map(|h| h.1.clone()),
                        confidence_shift: None,
                        training_mode: mode.clone(),
                        clean_checkpoint: clean.checkpoint.clone(),
                        attacked_checkpoint: clean.checkpoint.clone(),
                    };
                    if attacker == Attacker::None {
                        records.push(base);
                        continue;
                    }
                    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
                        let tag = format!("{kind}-{attacker}-{}-s{seed}", gamma_tag(gamma));
                        let (plan, info, shift) = if attacker.per_model() {
                            let budget = budget_for_ratio(gamma, self.ds.train.len());
                            let targets =
                                PseudoTargetSet::sample(&self.ds.train, cfg.target_fraction, derive_seed(seed, "targets"))?;
                            let cos = CosConfig {
                                seed: derive_seed(seed, &format!("plan-{attacker}")),
                                pool_factor: cfg.cos_pool_factor,
                            };
                            let mode = attacker.mode().expect("attack mode");
                            let plan = cos_attack(&self.ds.train, &clean.model, &targets, budget, mode, &cos)
                                .map_err(|e| e.in_stage("plan"))?
                                .with_ratio(Some(gamma));
                            plan.validate(&self.ds.train).map_err(|e| e.in_stage("plan"))?;
                            let info = self.save_plan(&plan, &format!("plans/{tag}.tsv"))?;
                            (plan, info, None)
                        } else {
                            let s = &shared[&(attacker, gi)];
                            (s.plan.clone(), s.info.clone(), s.shift.clone())
                        };
                        let start = Instant::now();
                        let (attacked, high, ckpt) =
                            self.attacked_run(kind, seed, attacker, gamma, &plan, clean, &tag)?;
                        self.timings.insert(tag, start.elapsed().as_secs_f64());
                        let rules_info = match (&rules, attacker) {
                            (Some(r), Attacker::RulesDelete) => Some(r.info_top.clone()),
                            (Some(r), Attacker::RulesAdd) => Some(r.info_bottom.clone()),
                            _ => None,
                        };
                        records.push(RunRecord {
                            gamma: Some(gamma),
                            budget: plan.budget,
                            plan: Some(info),
                            rules: rules_info,
                            drops: relative_drops(&clean.report, &attacked),
                            attacked,
                            attacked_high_rank: high,
                            confidence_shift: shift,
                            attacked_checkpoint: ckpt,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(records)
    }
}

fn dataset_info(paths: &[PathBuf; 3], ds: &Dataset) -> Result<DatasetInfo> {
    Ok(DatasetInfo {
        train_sha256: sha256_file(&paths[0])?,
        valid_sha256: sha256_file(&paths[1])?,
        test_sha256: sha256_file(&paths[2])?,
        n_train: ds.train.len(),
        n_valid: ds.valid.len(),
        n_test: ds.test.len(),
        n_entities: ds.train.num_entities(),
        n_relations: ds.train.num_relations(),
    })
}

/// Runs the configured sweep and writes every artifact plus `report.json`,
/// `report.csv`, `report.md`, `timings.json` and `manifest.json` under `cfg.out`.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("an output directory is required".into()))?;
    let art = Artifacts::create(&out)?;
    let paths = cfg.dataset.paths()?;
    let ds = load_dataset(&paths[0], &paths[1], &paths[2]).map_err(|e| e.in_stage("load"))?;
    log::info!(
        "dataset: {} train / {} valid / {} test triples, {} entities, {} relations",
        ds.train.len(),
        ds.valid.len(),
        ds.test.len(),
        ds.train.num_entities(),
        ds.train.num_relations()
    );
    let info = dataset_info(&paths, &ds)?;
    let filter = match cfg.eval_setting {
        EvalSetting::Filtered => Some(FilterIndex::new(&ds.all_true())),
        EvalSetting::Raw => None,
    };
    let mut snapshot = cfg.clone();
    snapshot.out = None;
    let mut ctx = Ctx {
        cfg,
        ds,
        filter,
        ks: cfg.ks(),
        art,
        timings: BTreeMap::new(),
    };
    ctx.art.write_json("config.json", &snapshot)?;
    let result = ctx.run().and_then(|records| {
        let summary = RunSummary {
            config: snapshot,
            dataset: info,
            records,
        };
        ctx.art.write_json("report.json", &summary)?;
        let csv = emit_report(&summary.records, ReportFormat::Csv).map_err(|e| e.in_stage("report"))?;
        ctx.art.write_text("report.csv", &csv)?;
        let md = emit_report(&summary.records, ReportFormat::Markdown).map_err(|e| e.in_stage("report"))?;
        ctx.art.write_text("report.md", &md)?;
        Ok(summary)
    });
    // timings vary between runs, so they stay out of the report and the manifest
    let timings = std::mem::take(&mut ctx.timings);
    write_json(&ctx.art.path("timings.json")?, &timings)?;
    ctx.art.write_manifest(result.is_ok())?;
    result
}

/// Loads a `report.json` written by [`run_pipeline`].
pub fn load_summary(path: impl AsRef<Path>) -> Result<RunSummary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
