//! Experiment configuration documents (TOML or JSON).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attack::{Pool, PoolDomain, RewriteStrategy};
use crate::error::{Error, Result};
use crate::kg::{dataset_paths, PlanMode};
use crate::kge::{EvalSetting, ModelKind, TrainConfig};
use crate::rules::{MinerConfig, DEFAULT_GROUNDING_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attacker {
    RulesDelete,
    RulesAdd,
    RandomDelete,
    RandomAdd,
    CosDelete,
    CosAdd,
    None,
}

impl Attacker {
    pub const ALL: [Attacker; 7] = [
        Attacker::RulesDelete,
        Attacker::RulesAdd,
        Attacker::RandomDelete,
        Attacker::RandomAdd,
        Attacker::CosDelete,
        Attacker::CosAdd,
        Attacker::None,
    ];

    pub fn mode(self) -> Option<PlanMode> {
        match self {
            Attacker::RulesDelete | Attacker::RandomDelete | Attacker::CosDelete => Some(PlanMode::Delete),
            Attacker::RulesAdd | Attacker::RandomAdd | Attacker::CosAdd => Some(PlanMode::Add),
            Attacker::None => None,
        }
    }

    pub fn uses_rules(self) -> bool {
        matches!(self, Attacker::RulesDelete | Attacker::RulesAdd)
    }

    /// Cos plans depend on the clean model, so they are planned per model.
    pub fn per_model(self) -> bool {
        matches!(self, Attacker::CosDelete | Attacker::CosAdd)
    }
}

impl fmt::Display for Attacker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attacker::RulesDelete => "rules-delete",
            Attacker::RulesAdd => "rules-add",
            Attacker::RandomDelete => "random-delete",
            Attacker::RandomAdd => "random-add",
            Attacker::CosDelete => "cos-delete",
            Attacker::CosAdd => "cos-add",
            Attacker::None => "none",
        })
    }
}

impl FromStr for Attacker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attacker::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown attacker `{s}`")))
    }
}

/// A single value or a list of values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory holding `train.txt`, `valid.txt` and `test.txt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

impl DatasetConfig {
    /// Explicit split paths win over `dir`.
    pub fn paths(&self) -> Result<[PathBuf; 3]> {
        let defaults = self.dir.as_deref().map(dataset_paths);
        let pick = |explicit: &Option<PathBuf>, i: usize, name: &str| -> Result<PathBuf> {
            explicit
                .clone()
                .or_else(|| defaults.as_ref().map(|d| d[i].clone()))
                .ok_or_else(|| Error::Config(format!("dataset {name} split not configured")))
        };
        Ok([
            pick(&self.train, 0, "train")?,
            pick(&self.valid, 1, "valid")?,
            pick(&self.test, 2, "test")?,
        ])
    }
}

/// Miner knobs; the body length comes from the top-level `rule_length`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerParams {
    pub walks_per_entity: usize,
    pub top_k_per_head: usize,
    pub min_body_support: usize,
    pub exhaustive: bool,
}

impl Default for MinerParams {
    fn default() -> Self {
        let d = MinerConfig::default();
        MinerParams {
            walks_per_entity: d.walks_per_entity,
            top_k_per_head: d.top_k_per_head,
            min_body_support: d.min_body_support,
            exhaustive: d.exhaustive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub attacker: OneOrMany<Attacker>,
    /// Perturbation ratios γ.
    pub gammas: Vec<f64>,
    pub pool: Pool,
    pub pool_domain: PoolDomain,
    /// Highest-confidence rules per head used for deletion.
    pub m: usize,
    /// Lowest-confidence rules per head corrupted for addition.
    pub n: usize,
    /// Maximum rule body length L.
    pub rule_length: usize,
    pub rewrite: RewriteStrategy,
    /// Use these rules instead of mining.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules_file: Option<PathBuf>,
    pub miner: MinerParams,
    pub grounding_cap: usize,
    pub models: Vec<ModelKind>,
    pub train: TrainConfig,
    /// Per-model replacements for `train`.
    pub model_train: BTreeMap<ModelKind, TrainConfig>,
    pub eval_setting: EvalSetting,
    pub hits_at: Vec<usize>,
    /// Also evaluate on test triples whose clean ranks are all within this bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub high_rank_threshold: Option<usize>,
    /// Fraction of training triples used as cos-attack pseudo-targets.
    pub target_fraction: f64,
    pub cos_pool_factor: usize,
    /// Re-score the selected rules on every rule-attacked graph.
    pub export_confidence: bool,
    pub save_checkpoints: bool,
    pub seed: OneOrMany<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            attacker: OneOrMany::One(Attacker::RulesDelete),
            gammas: vec![0.05, 0.10, 0.15, 0.20, 0.25],
            pool: Pool::Mean,
            pool_domain: PoolDomain::Contributing,
            m: 50,
            n: 10,
            rule_length: 2,
            rewrite: RewriteStrategy::Correlation,
            rules_file: None,
            miner: MinerParams::default(),
            grounding_cap: DEFAULT_GROUNDING_CAP,
            models: vec![ModelKind::TransE],
            train: TrainConfig::default(),
            model_train: BTreeMap::new(),
            eval_setting: EvalSetting::Filtered,
            hits_at: vec![1, 3, 10],
            high_rank_threshold: None,
            target_fraction: 0.05,
            cos_pool_factor: 4,
            export_confidence: true,
            save_checkpoints: true,
            seed: OneOrMany::One(0),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `.json` files as JSON and everything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn attackers(&self) -> Vec<Attacker> {
        let mut a = self.attacker.to_vec();
        a.dedup();
        a
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seed.to_vec()
    }

    pub fn train_for(&self, kind: ModelKind) -> &TrainConfig {
        self.model_train.get(&kind).unwrap_or(&self.train)
    }

    pub fn miner_config(&self, seed: u64) -> MinerConfig {
        MinerConfig {
            max_len: self.rule_length,
            walks_per_entity: self.miner.walks_per_entity,
            top_k_per_head: self.miner.top_k_per_head,
            min_body_support: self.miner.min_body_support,
            seed,
            exhaustive: self.miner.exhaustive,
            grounding_cap: self.grounding_cap,
        }
    }

    /// K values evaluated: 1, 3 and 10 plus any configured extras.
    pub fn ks(&self) -> Vec<usize> {
        let mut ks = vec![1, 3, 10];
        ks.extend(&self.hits_at);
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Checks value ranges and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let attackers = self.attackers();
        if attackers.is_empty() {
            return bad("at least one attacker is required".into());
        }
        if attackers.iter().any(|a| a.mode().is_some()) && self.gammas.is_empty() {
            return bad("gammas must not be empty".into());
        }
        for &g in &self.gammas {
            if !(g > 0.0 && g < 1.0) {
                return bad(format!("gamma {g} outside (0, 1)"));
            }
        }
        if self.m == 0 || self.n == 0 {
            return bad("m and n must be >= 1".into());
        }
        if self.rule_length == 0 {
            return bad("rule_length must be >= 1".into());
        }
        if self.models.is_empty() {
            return bad("models must not be empty".into());
        }
        if self.seeds().is_empty() {
            return bad("seed list must not be empty".into());
        }
        if self.hits_at.contains(&0) {
            return bad("hits_at values must be >= 1".into());
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return bad(format!("target_fraction {} outside (0, 1]", self.target_fraction));
        }
        if self.cos_pool_factor == 0 {
            return bad("cos_pool_factor must be >= 1".into());
        }
        for kind in &self.models {
            let t = self.train_for(*kind);
            if t.seed != 0 {
                return bad("train.seed is derived from the top-level seed; leave it unset".into());
            }
            t.validate(*kind)?;
        }
        self.miner_config(0).validate()?;
        let mut files: Vec<PathBuf> = self.dataset.paths()?.into();
        files.extend(self.rules_file.clone());
        for f in files {
            if !f.is_file() {
                return bad(format!("{} does not exist", f.display()));
            }
        }
        Ok(())
    }
}
