mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use kgattack::harness::{load_summary, run_pipeline, sha256_file, Attacker};
use kgattack::kg::budget_for_ratio;
use kgattack::Error;

use common::{small_config, write_synthetic_dataset};

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn sweep_is_reproducible_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_dataset(&data, 11);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let summary = run_pipeline(&small_config(&data, &a)).unwrap();
    run_pipeline(&small_config(&data, &b)).unwrap();

    let (ta, tb) = (read_tree(&a), read_tree(&b));
    let names: Vec<_> = ta.keys().filter(|k| k.as_str() != "timings.json").collect();
    assert!(names.iter().any(|k| k.starts_with("plans/")));
    for k in names {
        assert_eq!(ta.get(k), tb.get(k), "{k} differs between runs");
    }

    let manifest: serde_json::Value = serde_json::from_slice(&ta["manifest.json"]).unwrap();
    assert_eq!(manifest["complete"], true);
    let listed = manifest["artifacts"].as_object().unwrap();
    assert!(listed.contains_key("report.json"));
    assert!(!listed.contains_key("timings.json"));
    for (rel, hash) in listed {
        assert_eq!(sha256_file(&a.join(rel)).unwrap(), hash.as_str().unwrap(), "{rel}");
    }

    assert_eq!(load_summary(a.join("report.json")).unwrap(), summary);
    let n_train = summary.dataset.n_train;
    // 7 attackers × 2 models, none included once per model
    assert_eq!(summary.records.len(), 14);
    for r in &summary.records {
        if r.attacker == Attacker::None {
            assert_eq!(r.clean, r.attacked);
            assert!(r.plan.is_none());
            assert_eq!(r.drop("mrr"), Some(0.0));
        } else {
            assert_eq!(r.budget, budget_for_ratio(0.1, n_train));
            assert_eq!(r.plan.as_ref().unwrap().len, r.budget, "{}", r.attacker);
        }
        assert_eq!(r.rules.is_some(), r.attacker.uses_rules());
    }
}

#[test]
fn failures_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_dataset(&data, 11);
    let rules = tmp.path().join("rules.jsonl");
    fs::write(&rules, "{not json\n").unwrap();
    let mut cfg = small_config(&data, &tmp.path().join("out"));
    cfg.attacker = kgattack::harness::OneOrMany::One(Attacker::RulesDelete);
    cfg.rules_file = Some(rules);
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "load-rules"),
        other => panic!("expected a stage error, got {other:?}"),
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], false);
}

#[test]
fn missing_dataset_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("nowhere"), &tmp.path().join("out"));
    assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
}
