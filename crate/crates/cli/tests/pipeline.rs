use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn pvcohort(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvcohort"))
        .args(args)
        .current_dir(dir)
        .env_remove("PVCOHORT_WORKSPACE")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn demo() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    pvcohort_cli::write_demo(dir.path(), 7).unwrap();
    dir
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn edit_config(dir: &Path, f: impl FnOnce(&mut Value)) {
    let p = dir.join("config.json");
    let mut v = read_json(&p);
    f(&mut v);
    fs::write(p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn full_run_writes_every_stage() {
    let d = demo();
    let o = pvcohort(d.path(), &["run", "--config", "config.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for stage in ["ingest", "classify", "match", "stats"] {
        assert!(d.path().join("out").join(stage).join("manifest.json").is_file(), "{stage}");
    }
    let stats = d.path().join("out/stats");
    for f in ["prevalence_medications.csv", "prevalence_side_effects.csv", "association.csv", "heatmap.csv", "report.json"] {
        assert!(stats.join(f).is_file(), "{f}");
    }
}

#[test]
fn manifests_chain_by_digest() {
    let d = demo();
    assert_eq!(code(&pvcohort(d.path(), &["run", "--config", "config.json"])), 0);
    let out = d.path().join("out");
    let m_match = pvcohort_cli::manifest::Manifest::read(&out.join("match")).unwrap();
    let m_stats = pvcohort_cli::manifest::Manifest::read(&out.join("stats")).unwrap();
    assert_eq!(m_stats.upstream.len(), 1);
    assert_eq!(m_stats.upstream[0].stage, "match");
    assert_eq!(m_stats.upstream[0].manifest_sha256, m_match.content_digest());
    assert_eq!(m_match.lexicon_version, Some(1));
    for f in &m_stats.outputs {
        let bytes = fs::read(out.join("stats").join(&f.path)).unwrap();
        assert_eq!(pvcohort_cli::manifest::sha256_bytes(&bytes), f.sha256);
    }
}

#[test]
fn rerunning_match_is_byte_identical() {
    let d = demo();
    for stage in ["ingest", "classify", "match"] {
        assert_eq!(code(&pvcohort(d.path(), &[stage, "--config", "config.json"])), 0);
    }
    let first = fs::read(d.path().join("out/match/matches.jsonl")).unwrap();
    let m1 = pvcohort_cli::manifest::Manifest::read(&d.path().join("out/match")).unwrap();
    assert_eq!(code(&pvcohort(d.path(), &["match", "--config", "config.json"])), 0);
    let second = fs::read(d.path().join("out/match/matches.jsonl")).unwrap();
    let m2 = pvcohort_cli::manifest::Manifest::read(&d.path().join("out/match")).unwrap();
    assert_eq!(first, second);
    assert_eq!(m1.content_digest(), m2.content_digest());
}

#[test]
fn external_mode_without_labels_is_a_config_error() {
    let d = demo();
    edit_config(d.path(), |v| v["classifier"] = json!({"mode": "external_labels"}));
    let o = pvcohort(d.path(), &["classify", "--config", "config.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("labels"), "{}", stderr(&o));
}

#[test]
fn missing_upstream_is_a_data_error() {
    let d = demo();
    let o = pvcohort(d.path(), &["match", "--config", "config.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("run `ingest` first"), "{}", stderr(&o));
    assert!(!d.path().join("out/match").exists());
}

#[test]
fn usage_errors_and_help() {
    let d = demo();
    assert_eq!(code(&pvcohort(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&pvcohort(d.path(), &["match"])), 1);
    assert_eq!(code(&pvcohort(d.path(), &["match", "--config", "nope.json"])), 1);
    assert_eq!(code(&pvcohort(d.path(), &["--help"])), 0);
    assert_eq!(code(&pvcohort(d.path(), &["stats", "--config", "config.json", "--alpha", "2"])), 1);
}

#[test]
fn single_pattern_cohort_skips_association() {
    let d = tempfile::tempdir().unwrap();
    pvcohort_cli::write_demo(d.path(), 7).unwrap();
    let posts: String = (0..6)
        .map(|i| {
            json!({
                "id": format!("p{i}"),
                "user_id": format!("u{i}"),
                "timestamp": "2024-03-01T10:00:00Z",
                "text": format!("Started tamoxifen for my breast cancer, nausea {} bad", if i % 2 == 0 { "is" } else { "not" }),
            })
            .to_string()
                + "\n"
        })
        .collect();
    fs::write(d.path().join("posts.jsonl"), posts).unwrap();
    let labels: String = (0..6).map(|i| format!("{{\"post_id\":\"p{i}\",\"label\":\"S\"}}\n")).collect();
    fs::write(d.path().join("labels.jsonl"), labels).unwrap();
    let o = pvcohort(d.path(), &["run", "--config", "config.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("skipped (single_pattern)"));
    let report = read_json(&d.path().join("out/stats/report.json"));
    assert_eq!(report["association"]["skipped"], "single_pattern", "{report}");
}

#[test]
fn overrides_reach_the_stage() {
    let d = demo();
    let o = pvcohort(
        d.path(),
        &["run", "--config", "config.json", "--threshold", "1.0", "--alpha", "0.01", "--out", "elsewhere"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!d.path().join("out").exists());
    let m = pvcohort_cli::manifest::Manifest::read(&d.path().join("elsewhere/stats")).unwrap();
    assert_eq!(m.config["matcher"]["similarity_threshold"], 1.0);
    assert_eq!(m.config["stats"]["alpha"], 0.01);
    // Exact matching misses the misspelled drug names.
    let exact = read_json(&d.path().join("elsewhere/match/manifest.json"));
    assert_eq!(code(&pvcohort(d.path(), &["run", "--config", "config.json"])), 0);
    let fuzzy = read_json(&d.path().join("out/match/manifest.json"));
    assert!(exact["summary"]["matches"].as_u64() < fuzzy["summary"]["matches"].as_u64());
}

#[test]
fn training_mode_fits_and_reapplies_a_model() {
    let d = demo();
    edit_config(d.path(), |v| {
        v["classifier"] = json!({
            "mode": "train",
            "training_labels": "labels.jsonl",
            "grid": {"l2_penalties": [0.001, 0.1], "ngram_ranges": [[1, 1], [1, 2]], "folds": 3, "seed": 1},
        })
    });
    for stage in ["ingest", "classify"] {
        let o = pvcohort(d.path(), &[stage, "--config", "config.json"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let classify = d.path().join("out/classify");
    let cv = read_json(&classify.join("cv_report.json"));
    assert_eq!(cv["rows"].as_array().unwrap().len(), 4);
    let trained = fs::read(classify.join("post_labels.jsonl")).unwrap();

    fs::copy(classify.join("model.json"), d.path().join("model.json")).unwrap();
    edit_config(d.path(), |v| v["classifier"] = json!({"mode": "train", "model": "model.json"}));
    let o = pvcohort(d.path(), &["classify", "--config", "config.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(classify.join("post_labels.jsonl")).unwrap(), trained);
    assert!(!classify.join("cv_report.json").exists());
}

#[test]
fn eval_scores_gold_and_records_history() {
    let d = demo();
    assert_eq!(code(&pvcohort(d.path(), &["ingest", "--config", "config.json"])), 0);
    fs::create_dir_all(d.path().join("workspace")).unwrap();
    let o = pvcohort(d.path(), &["eval", "--config", "config.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e = read_json(&d.path().join("out/eval/eval.json"));
    assert_eq!(e["lexicon_version"], 1);
    assert!(e["evaluation"]["overall"]["f1"].as_f64().unwrap() > 0.8, "{e}");
    let history = read_json(&d.path().join("workspace/eval_history.json"));
    assert_eq!(history[0]["lexicon_version"], 1);
    assert_eq!(history[0]["status"], "done");
}

#[test]
fn eval_without_gold_is_a_config_error() {
    let d = demo();
    edit_config(d.path(), |v| {
        v.as_object_mut().unwrap().remove("gold");
    });
    assert_eq!(code(&pvcohort(d.path(), &["ingest", "--config", "config.json"])), 0);
    assert_eq!(code(&pvcohort(d.path(), &["eval", "--config", "config.json"])), 1);
}

#[test]
fn malformed_posts_are_reported_not_fatal() {
    let d = demo();
    let mut posts = fs::read_to_string(d.path().join("posts.jsonl")).unwrap();
    posts.push_str("{not json}\n{\"id\":\"x\",\"user_id\":\"u\",\"timestamp\":\"2024-01-01T00:00:00Z\",\"text\":\"   \"}\n");
    fs::write(d.path().join("posts.jsonl"), posts).unwrap();
    let o = pvcohort(d.path(), &["ingest", "--config", "config.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&d.path().join("out/ingest/report.json"));
    assert_eq!(report["summary"]["rejected_lines"], 2);
    assert_eq!(report["summary"]["accepted"], 500);
}

#[test]
fn unreadable_posts_file_is_a_data_error() {
    let d = demo();
    fs::write(d.path().join("posts.jsonl"), "garbage\n").unwrap();
    assert_eq!(code(&pvcohort(d.path(), &["ingest", "--config", "config.json"])), 2);
}

#[test]
fn agree_reports_pairwise_kappa() {
    use pvcohort_core::annotation::{AnnotatedTerm, AnnotationRound};
    use pvcohort_core::lexicon::Category;

    let d = demo();
    let ws = pvcohort_cli::workspace::Workspace::new(d.path().join("workspace"));
    ws.init(&d.path().join("lexicon.json")).unwrap();
    let mut r = AnnotationRound::new(1, vec!["ann".into(), "bob".into()], vec!["user001".into(), "user002".into()]).unwrap();
    let term = |t: &str| AnnotatedTerm {
        category: Category::SideEffect,
        term: t.into(),
        negated: false,
        span: None,
    };
    r.submit("ann", "user001", vec![term("nausea")]).unwrap();
    r.submit("bob", "user001", vec![term("nausea")]).unwrap();
    r.submit("ann", "user002", vec![term("fatigue")]).unwrap();
    r.submit("bob", "user002", vec![]).unwrap();
    ws.save_round(&r).unwrap();
    let o = pvcohort(d.path(), &["agree", "--config", "config.json", "--round", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = read_json(&d.path().join("out/agree-round-1/agreement.json"));
    assert_eq!(a["annotators"], json!(["ann", "bob"]));
    let csv = fs::read_to_string(d.path().join("out/agree-round-1/kappa.csv")).unwrap();
    assert!(csv.starts_with("annotator,ann,bob\n"), "{csv}");
    assert_eq!(code(&pvcohort(d.path(), &["agree", "--config", "config.json", "--round", "9"])), 2);
}
