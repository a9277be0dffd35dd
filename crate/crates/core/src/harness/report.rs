//! Run records and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{Attacker, ExperimentConfig};
use crate::error::{Error, Result};
use crate::kg::budget_for_ratio;
use crate::kge::{EvalReport, EvalSetting, ModelKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanInfo {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub len: usize,
    pub fill_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleInfo {
    pub path: String,
    pub fingerprint: String,
    pub len: usize,
}

/// Selected rules re-scored on the perturbed graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceShift {
    pub path: String,
    pub n_rules: usize,
    pub mean_clean: f64,
    /// Rules without groundings on the perturbed graph count as 0.
    pub mean_attacked: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub attacker: Attacker,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub train_size: usize,
    pub budget: usize,
    pub plan: Option<PlanInfo>,
    pub rules: Option<RuleInfo>,
    pub clean: EvalReport,
    pub attacked: EvalReport,
    /// `(clean - attacked) / clean` per metric; `None` when clean is 0.
    pub drops: BTreeMap<String, Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean_high_rank: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attacked_high_rank: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_shift: Option<ConfidenceShift>,
    pub training_mode: String,
    pub clean_checkpoint: Option<String>,
    pub attacked_checkpoint: Option<String>,
}

impl RunRecord {
    pub fn drop(&self, metric: &str) -> Option<f64> {
        self.drops.get(metric).copied().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub train_sha256: String,
    pub valid_sha256: String,
    pub test_sha256: String,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_entities: usize,
    pub n_relations: usize,
}

/// Everything `report.json` holds: config snapshot, dataset identity, records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub records: Vec<RunRecord>,
}

fn metric_values(r: &EvalReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("mrr".to_owned(), r.mrr);
    for (k, v) in &r.hits {
        m.insert(format!("hits@{k}"), *v);
    }
    m
}

pub fn relative_drops(clean: &EvalReport, attacked: &EvalReport) -> BTreeMap<String, Option<f64>> {
    let a = metric_values(attacked);
    metric_values(clean)
        .into_iter()
        .map(|(k, c)| {
            let d = a.get(&k).and_then(|&v| (c != 0.0).then(|| (c - v) / c));
            (k, d)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Report(format!("unknown report format `{other}`"))),
        }
    }
}

/// CSV header. One row per record; metric values are fractions in [0, 1].
pub const CSV_COLUMNS: [&str; 17] = [
    "model",
    "attacker",
    "gamma",
    "seed",
    "setting",
    "budget",
    "plan_len",
    "fill_count",
    "clean_mrr",
    "attacked_mrr",
    "drop_mrr",
    "clean_hits@1",
    "attacked_hits@1",
    "drop_hits@1",
    "clean_hits@10",
    "attacked_hits@10",
    "drop_hits@10",
];

/// Checks that every plan length equals `floor(gamma · |T|)`.
pub fn audit_budgets(records: &[RunRecord]) -> Result<()> {
    for r in records {
        let Some(g) = r.gamma else { continue };
        let want = budget_for_ratio(g, r.train_size);
        let len = r.plan.as_ref().map_or(0, |p| p.len);
        if r.budget != want || len != want {
            return Err(Error::Report(format!(
                "{} {} gamma {g} seed {}: plan has {len} triples, budget {} (expected {want})",
                r.model, r.attacker, r.seed, r.budget
            )));
        }
    }
    Ok(())
}

fn check_records(records: &[RunRecord]) -> Result<EvalSetting> {
    let first = records.first().ok_or_else(|| Error::Report("no records to report".into()))?;
    let setting = first.clean.setting;
    for r in records {
        if r.clean.setting != setting || r.attacked.setting != setting {
            return Err(Error::Report(format!(
                "records mix {setting} and {} metrics",
                if r.clean.setting != setting { r.clean.setting } else { r.attacked.setting }
            )));
        }
    }
    audit_budgets(records)?;
    Ok(setting)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `0.0713…` renders as `7.1%`.
pub fn format_drop(d: Option<f64>) -> String {
    match d {
        Some(d) => format!("{:.1}%", d * 100.0),
        None => "n/a".into(),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", x * 100.0)).unwrap_or_else(|| "n/a".into())
}

fn gamma_label(g: Option<f64>) -> String {
    g.map(|g| format!("{g:.2}")).unwrap_or_else(|| "-".into())
}

pub fn emit_report(records: &[RunRecord], format: ReportFormat) -> Result<String> {
    let setting = check_records(records)?;
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(records)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let err = |e: csv::Error| Error::Report(e.to_string());
            w.write_record(CSV_COLUMNS).map_err(err)?;
            for r in records {
                let mut row = vec![
                    r.model.to_string(),
                    r.attacker.to_string(),
                    r.gamma.map(|g| g.to_string()).unwrap_or_default(),
                    r.seed.to_string(),
                    setting.to_string(),
                    r.budget.to_string(),
                    r.plan.as_ref().map_or(0, |p| p.len).to_string(),
                    r.plan.as_ref().map_or(0, |p| p.fill_count).to_string(),
                    format!("{:.6}", r.clean.mrr),
                    format!("{:.6}", r.attacked.mrr),
                    fmt_opt(r.drop("mrr")),
                ];
                for k in [1, 10] {
                    row.push(fmt_opt(r.clean.hits_at(k)));
                    row.push(fmt_opt(r.attacked.hits_at(k)));
                    row.push(fmt_opt(r.drop(&format!("hits@{k}"))));
                }
                w.write_record(&row).map_err(err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            let _ = writeln!(s, "Metrics ({setting}) in percent; drops relative to the clean model.\n");
            let _ = writeln!(s, "| Model | Attacker | γ | Seed | MRR | Hits@1 | Hits@3 | Hits@10 | MRR drop | Hits@10 drop |");
            let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|");
            let mut shown_clean = std::collections::BTreeSet::new();
            for r in records {
                if shown_clean.insert((r.model, r.seed)) {
                    let c = &r.clean;
                    let _ = writeln!(
                        s,
                        "| {} | no attack | - | {} | {} | {} | {} | {} | - | - |",
                        r.model,
                        r.seed,
                        pct(Some(c.mrr)),
                        pct(c.hits_at(1)),
                        pct(c.hits_at(3)),
                        pct(c.hits_at(10))
                    );
                }
                if r.attacker == Attacker::None {
                    continue;
                }
                let a = &r.attacked;
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                    r.model,
                    r.attacker,
                    gamma_label(r.gamma),
                    r.seed,
                    pct(Some(a.mrr)),
                    pct(a.hits_at(1)),
                    pct(a.hits_at(3)),
                    pct(a.hits_at(10)),
                    format_drop(r.drop("mrr")),
                    format_drop(r.drop("hits@10"))
                );
            }
            Ok(s)
        }
    }
}
