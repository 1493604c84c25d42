//! The pipeline stages. Each reads its upstream stage directories, writes
//! a fresh stage directory and a manifest describing it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use pvcohort_core::annotation::{evaluate_matcher, pairwise_agreement, MatcherEvaluation};
use pvcohort_core::classifier::{self, import_external_labels, Label, LabeledPost, LinearModel};
use pvcohort_core::corpus::{collapse_by_user, ingest_posts, keyword_filter, read_profiles, write_profiles, Post, UserProfile};
use pvcohort_core::jsonl::{read_records, write_records};
use pvcohort_core::lexicon::{Category, LexiconVersion};
use pvcohort_core::matcher::{read_matches, read_triggers, write_matches, Matcher, MatcherConfig};
use pvcohort_core::stats::{association_report, build_signatures, prevalence_table, report, StatsError};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ClassifierMode, ResolvedConfig};
use crate::error::{CliError, Result};
use crate::manifest::{sha256_file, FileDigest, Manifest, Stage, Upstream};
use crate::workspace::Workspace;

pub const INGEST: &str = "ingest";
pub const CLASSIFY: &str = "classify";
pub const MATCH: &str = "match";
pub const STATS: &str = "stats";
pub const EVAL: &str = "eval";

/// A finished stage.
#[derive(Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// One-line human summary.
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub users: Vec<String>,
}

fn open(p: &Path) -> Result<BufReader<File>> {
    File::open(p).map(BufReader::new).map_err(|e| CliError::io(p, e))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    serde_json::from_reader(open(p)?).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(p: &Path) -> Result<Vec<T>> {
    let (ok, bad) = read_records::<T, _>(open(p)?).map_err(|e| CliError::io(p, e))?;
    if let Some(e) = bad.first() {
        return Err(CliError::data(format!("{}:{}: {}", p.display(), e.line, e.reason)));
    }
    Ok(ok.into_iter().map(|(_, v)| v).collect())
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::data(e.to_string())
}

/// Config snapshot recorded in manifests. Output locations are left out
/// so that a run is described the same way wherever it is written.
fn snapshot(cfg: &ResolvedConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(&cfg.config).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("outputs");
        obj.remove("workspace");
        obj.remove("ui_dir");
    }
    v
}

fn digest(cfg: &ResolvedConfig, p: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: cfg.display_path(p),
        sha256: sha256_file(p)?,
    })
}

fn manifest(cfg: &ResolvedConfig, inputs: Vec<FileDigest>, upstream: Vec<Upstream>) -> Manifest {
    Manifest {
        stage: String::new(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config: snapshot(cfg),
        inputs,
        outputs: Vec::new(),
        upstream,
        lexicon_version: None,
        summary: serde_json::Value::Null,
    }
}

/// Upstream stage directory and a reference to its manifest.
fn upstream(cfg: &ResolvedConfig, stage: &str) -> Result<(PathBuf, Upstream)> {
    let dir = cfg.stage_dir(stage);
    if !dir.join(crate::manifest::MANIFEST_FILE).is_file() {
        return Err(CliError::data(format!(
            "no {stage} output under {}; run `{stage}` first",
            cfg.outputs().display()
        )));
    }
    let m = Manifest::read(&dir)?;
    Ok((
        dir,
        Upstream {
            stage: stage.to_string(),
            manifest_sha256: m.content_digest(),
        },
    ))
}

fn matcher_config(cfg: &ResolvedConfig) -> Result<(MatcherConfig, Option<PathBuf>)> {
    let mut mc = cfg.config.matcher.clone();
    let path = cfg.config.negation_triggers.as_ref().map(|p| cfg.resolve(p));
    if let Some(p) = &path {
        mc.negation_triggers = read_triggers(open(p)?).map_err(|e| CliError::io(p, e))?;
    }
    Ok((mc, path))
}

/// Lexicon the matcher should use: the newest workspace version if any,
/// else the configured seed file.
pub fn current_lexicon(cfg: &ResolvedConfig) -> Result<(LexiconVersion, PathBuf)> {
    let ws = Workspace::new(cfg.workspace());
    let seed = cfg.resolve(&cfg.config.lexicon);
    let lex = ws.current_lexicon(&seed)?;
    let path = match ws.lexicon_versions()?.last() {
        Some(v) => ws.root().join("lexicon").join(format!("v{v}.json")),
        None => seed,
    };
    Ok((lex, path))
}

pub fn ingest(cfg: &ResolvedConfig) -> Result<Outcome> {
    let posts_path = cfg.resolve(&cfg.config.posts);
    let keywords = cfg.keyword_config()?;
    let (posts, report) = ingest_posts(open(&posts_path)?).map_err(data)?;
    if posts.is_empty() {
        return Err(CliError::data(format!(
            "{}: no valid posts ({} lines rejected)",
            posts_path.display(),
            report.rejected.len()
        )));
    }
    let filtered = keyword_filter(&posts, &keywords);
    let profiles = collapse_by_user(&posts);

    let mut stage = Stage::begin(INGEST, cfg.stage_dir(INGEST))?;
    stage.write_with("posts.jsonl", |w| write_records(w, posts.posts()))?;
    stage.write_with("filtered.jsonl", |w| write_records(w, filtered.posts()))?;
    stage.write_with("profiles.jsonl", |w| write_profiles(w, &profiles))?;
    let summary = json!({
        "accepted": report.accepted,
        "duplicates": report.duplicates,
        "rejected_lines": report.rejected.len(),
        "keyword_posts": filtered.len(),
        "users": profiles.len(),
    });
    stage.write_json("report.json", &json!({"summary": summary, "rejected": report.rejected}))?;
    let mut m = manifest(cfg, vec![digest(cfg, &posts_path)?], vec![]);
    m.summary = summary;
    let dir = stage.target().to_path_buf();
    let manifest = stage.commit(m)?;
    Ok(Outcome {
        dir,
        message: format!(
            "ingest: {} posts accepted, {} duplicates, {} lines rejected, {} keyword posts, {} users",
            report.accepted,
            report.duplicates,
            report.rejected.len(),
            filtered.len(),
            profiles.len()
        ),
        manifest,
    })
}

pub fn classify(cfg: &ResolvedConfig) -> Result<Outcome> {
    let (ingest_dir, up) = upstream(cfg, INGEST)?;
    let filtered_path = ingest_dir.join("filtered.jsonl");
    let filtered: Vec<Post> = read_jsonl(&filtered_path)?;
    let mut inputs = vec![digest(cfg, &filtered_path)?];
    let mut stage = Stage::begin(CLASSIFY, cfg.stage_dir(CLASSIFY))?;
    let mut summary = serde_json::Map::new();

    let predicted: Vec<LabeledPost> = match &cfg.config.classifier {
        ClassifierMode::ExternalLabels { labels } => {
            let path = cfg.resolve(labels.as_ref().expect("validated"));
            inputs.push(digest(cfg, &path)?);
            let known: BTreeSet<String> = filtered.iter().map(|p| p.id.clone()).collect();
            let imported = import_external_labels(open(&path)?, Some(&known)).map_err(data)?;
            for d in &imported.duplicates {
                log::warn!("label for post {d} given more than once; last one kept");
            }
            let by_id: BTreeMap<&str, &LabeledPost> =
                imported.labels.iter().map(|l| (l.post_id.as_str(), l)).collect();
            let mut missing = 0;
            let out = filtered
                .iter()
                .map(|p| match by_id.get(p.id.as_str()) {
                    Some(l) => (*l).clone(),
                    None => {
                        missing += 1;
                        LabeledPost::new(&p.id, Label::Nr)
                    }
                })
                .collect();
            summary.insert("labels_read".into(), imported.labels.len().into());
            summary.insert("rejected_lines".into(), imported.rejected.len().into());
            summary.insert("duplicate_ids".into(), imported.duplicates.len().into());
            summary.insert("unknown_ids".into(), imported.unknown.len().into());
            summary.insert("unlabeled_posts".into(), missing.into());
            stage.write_json(
                "label_import.json",
                &json!({
                    "rejected": imported.rejected,
                    "duplicates": imported.duplicates,
                    "unknown": imported.unknown,
                }),
            )?;
            out
        }
        ClassifierMode::Train {
            training_labels,
            model,
            grid,
        } => {
            let model = match (training_labels, model) {
                (_, Some(m)) => {
                    let path = cfg.resolve(m);
                    inputs.push(digest(cfg, &path)?);
                    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                    LinearModel::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
                }
                (Some(t), None) => {
                    let path = cfg.resolve(t);
                    inputs.push(digest(cfg, &path)?);
                    let posts_path = ingest_dir.join("posts.jsonl");
                    inputs.push(digest(cfg, &posts_path)?);
                    let all: Vec<Post> = read_jsonl(&posts_path)?;
                    let text_of: BTreeMap<&str, &str> = all.iter().map(|p| (p.id.as_str(), p.text.as_str())).collect();
                    let known: BTreeSet<String> = text_of.keys().map(|s| s.to_string()).collect();
                    let imported = import_external_labels(open(&path)?, Some(&known)).map_err(data)?;
                    if !imported.rejected.is_empty() {
                        let e = &imported.rejected[0];
                        return Err(CliError::data(format!("{}:{}: {}", path.display(), e.line, e.reason)));
                    }
                    let (texts, labels): (Vec<&str>, Vec<Label>) = imported
                        .labels
                        .iter()
                        .filter_map(|l| text_of.get(l.post_id.as_str()).map(|t| (*t, l.label)))
                        .unzip();
                    let mut spec = grid.clone();
                    spec.features = cfg.config.features.clone();
                    let (model, cv) = classifier::train(&texts, &labels, &spec).map_err(data)?;
                    summary.insert("training_posts".into(), texts.len().into());
                    summary.insert("unknown_training_ids".into(), imported.unknown.len().into());
                    summary.insert("cv_best_mean_f1".into(), cv.rows[cv.best].mean_f1.into());
                    stage.write_json("cv_report.json", &cv)?;
                    stage.write("model.json", format!("{}\n", model.to_json()).as_bytes())?;
                    model
                }
                (None, None) => unreachable!("validated"),
            };
            filtered
                .iter()
                .map(|p| {
                    let (label, score) = model.predict(&p.text);
                    LabeledPost {
                        post_id: p.id.clone(),
                        label,
                        score: Some(score),
                    }
                })
                .collect()
        }
    };

    let label_of: BTreeMap<&str, Label> = predicted.iter().map(|l| (l.post_id.as_str(), l.label)).collect();
    let users: BTreeSet<String> = filtered
        .iter()
        .filter(|p| label_of.get(p.id.as_str()) == Some(&Label::S))
        .map(|p| p.user_id.clone())
        .collect();
    let s_posts = predicted.iter().filter(|l| l.label == Label::S).count();
    summary.insert("keyword_posts".into(), filtered.len().into());
    summary.insert("s_posts".into(), s_posts.into());
    summary.insert("cohort_size".into(), users.len().into());
    stage.write_with("post_labels.jsonl", |w| write_records(w, &predicted))?;
    let cohort = Cohort {
        users: users.into_iter().collect(),
    };
    stage.write_json("cohort.json", &cohort)?;
    let mut m = manifest(cfg, inputs, vec![up]);
    m.summary = summary.into();
    let dir = stage.target().to_path_buf();
    let manifest = stage.commit(m)?;
    Ok(Outcome {
        dir,
        message: format!(
            "classify: {} of {} keyword posts labeled S; cohort of {} users",
            s_posts,
            filtered.len(),
            cohort.users.len()
        ),
        manifest,
    })
}

fn load_profiles(ingest_dir: &Path) -> Result<Vec<UserProfile>> {
    let p = ingest_dir.join("profiles.jsonl");
    read_profiles(open(&p)?).map_err(|e| CliError::io(&p, e))
}

pub fn match_stage(cfg: &ResolvedConfig) -> Result<Outcome> {
    let (ingest_dir, up_ingest) = upstream(cfg, INGEST)?;
    let (classify_dir, up_classify) = upstream(cfg, CLASSIFY)?;
    let cohort_path = classify_dir.join("cohort.json");
    let cohort: Cohort = read_json(&cohort_path)?;
    let members: BTreeSet<&str> = cohort.users.iter().map(String::as_str).collect();
    let profiles: Vec<UserProfile> = load_profiles(&ingest_dir)?
        .into_iter()
        .filter(|p| members.contains(p.user_id.as_str()))
        .collect();
    let (lexicon, lexicon_path) = current_lexicon(cfg)?;
    let (mc, triggers_path) = matcher_config(cfg)?;
    let matcher = Matcher::new(&lexicon, mc).map_err(data)?;
    let results = matcher.match_profiles(&profiles);

    let mut inputs = vec![
        digest(cfg, &ingest_dir.join("profiles.jsonl"))?,
        digest(cfg, &cohort_path)?,
        digest(cfg, &lexicon_path)?,
    ];
    if let Some(t) = &triggers_path {
        inputs.push(digest(cfg, t)?);
    }
    let mut stage = Stage::begin(MATCH, cfg.stage_dir(MATCH))?;
    stage.write_with("matches.jsonl", |w| write_matches(w, lexicon.version(), &results))?;
    stage.write("lexicon.json", format!("{}\n", lexicon.to_json_pretty()).as_bytes())?;
    let total: usize = results.iter().map(|r| r.matches.len()).sum();
    let negated: usize = results.iter().flat_map(|r| &r.matches).filter(|m| m.negated).count();
    let count_of = |c: Category| results.iter().flat_map(|r| &r.matches).filter(|m| m.category == c).count();
    let summary = json!({
        "profiles": results.len(),
        "matches": total,
        "medication_matches": count_of(Category::Medication),
        "side_effect_matches": count_of(Category::SideEffect),
        "negated": negated,
    });
    let mut m = manifest(cfg, inputs, vec![up_ingest, up_classify]);
    m.lexicon_version = Some(lexicon.version());
    m.summary = summary;
    let dir = stage.target().to_path_buf();
    let manifest = stage.commit(m)?;
    Ok(Outcome {
        dir,
        message: format!(
            "match: {} profiles, {} matches ({} negated), lexicon v{}",
            results.len(),
            total,
            negated,
            lexicon.version()
        ),
        manifest,
    })
}

pub fn stats(cfg: &ResolvedConfig) -> Result<Outcome> {
    let (match_dir, up) = upstream(cfg, MATCH)?;
    let matches_path = match_dir.join("matches.jsonl");
    let lexicon_path = match_dir.join("lexicon.json");
    let (results, version) = read_matches(open(&matches_path)?).map_err(|e| CliError::io(&matches_path, e))?;
    let lexicon = LexiconVersion::from_reader(open(&lexicon_path)?)
        .map_err(|e| CliError::data(format!("{}: {e}", lexicon_path.display())))?;
    if let Some(v) = version.filter(|v| *v != lexicon.version()) {
        return Err(CliError::data(format!(
            "matches were produced with lexicon v{v} but the snapshot is v{}",
            lexicon.version()
        )));
    }
    let scfg = &cfg.config.stats;
    let signatures = build_signatures(&results, &lexicon, scfg).map_err(data)?;
    let prevalence = match prevalence_table(&signatures) {
        Ok(t) => t,
        Err(StatsError::EmptyCohort) => {
            return Err(CliError::data("no cohort member mentions a known medication"))
        }
        Err(e) => return Err(data(e)),
    };
    let side_effects: Vec<String> = lexicon
        .entries_of(Category::SideEffect)
        .map(|e| e.entry_id.clone())
        .collect();
    let assoc = association_report(&signatures, &side_effects, scfg).map_err(data)?;
    let files = report::render(&prevalence, &assoc, &lexicon).map_err(data)?;

    let mut stage = Stage::begin(STATS, cfg.stage_dir(STATS))?;
    for (name, bytes) in &files {
        stage.write(name, bytes)?;
    }
    stage.write_with("signatures.jsonl", |w| write_records(w, &signatures))?;
    let significant = assoc.significant().count();
    let summary = json!({
        "users": signatures.len(),
        "patterns": assoc.patterns.len(),
        "side_effects_tested": assoc.results.len(),
        "significant": significant,
        "skipped": assoc.skipped,
    });
    let mut m = manifest(
        cfg,
        vec![digest(cfg, &matches_path)?, digest(cfg, &lexicon_path)?],
        vec![up],
    );
    m.lexicon_version = Some(lexicon.version());
    m.summary = summary;
    let dir = stage.target().to_path_buf();
    let manifest = stage.commit(m)?;
    let message = match assoc.skipped {
        Some(reason) => format!(
            "stats: {} users, {} pattern(s); association tests skipped ({})",
            signatures.len(),
            assoc.patterns.len(),
            serde_json::to_value(reason).unwrap().as_str().unwrap_or("skipped")
        ),
        None => format!(
            "stats: {} users, {} patterns, {} of {} side effects significant at alpha {}",
            signatures.len(),
            assoc.patterns.len(),
            significant,
            assoc.results.len(),
            scfg.alpha
        ),
    };
    Ok(Outcome { dir, message, manifest })
}

/// Matcher output for the gold profiles under the current lexicon.
pub fn evaluate_current(cfg: &ResolvedConfig) -> Result<(MatcherEvaluation, u64, usize)> {
    let ws = Workspace::new(cfg.workspace());
    let gold_fallback = cfg.config.gold.as_ref().map(|p| cfg.resolve(p));
    let gold = ws
        .gold(gold_fallback.as_deref())?
        .ok_or_else(|| CliError::config("no gold set: set `gold` in the config or store one in the workspace"))?;
    let (ingest_dir, _) = upstream(cfg, INGEST)?;
    let wanted: BTreeSet<&str> = gold.profiles.iter().map(String::as_str).collect();
    let profiles: Vec<UserProfile> = load_profiles(&ingest_dir)?
        .into_iter()
        .filter(|p| wanted.contains(p.user_id.as_str()))
        .collect();
    let missing = wanted.len() - profiles.len();
    let (lexicon, _) = current_lexicon(cfg)?;
    let (mc, _) = matcher_config(cfg)?;
    let matcher = Matcher::new(&lexicon, mc).map_err(data)?;
    let results = matcher.match_profiles(&profiles);
    Ok((evaluate_matcher(&results, &gold), lexicon.version(), missing))
}

pub fn eval(cfg: &ResolvedConfig) -> Result<Outcome> {
    let (ingest_dir, up) = upstream(cfg, INGEST)?;
    let (evaluation, version, missing) = evaluate_current(cfg)?;
    let ws = Workspace::new(cfg.workspace());
    let gold_path = if ws.gold_path().exists() {
        ws.gold_path()
    } else {
        cfg.resolve(cfg.config.gold.as_ref().expect("gold resolved above"))
    };
    let (_, lexicon_path) = current_lexicon(cfg)?;
    if ws.root().is_dir() {
        ws.record_evaluation(version, &evaluation)?;
    }
    let mut stage = Stage::begin(EVAL, cfg.stage_dir(EVAL))?;
    stage.write_json(
        "eval.json",
        &json!({
            "lexicon_version": version,
            "missing_profiles": missing,
            "summary": evaluation.overall.summary(),
            "evaluation": evaluation,
        }),
    )?;
    let mut m = manifest(
        cfg,
        vec![
            digest(cfg, &ingest_dir.join("profiles.jsonl"))?,
            digest(cfg, &gold_path)?,
            digest(cfg, &lexicon_path)?,
        ],
        vec![up],
    );
    m.lexicon_version = Some(version);
    m.summary = json!({
        "precision": evaluation.overall.precision,
        "recall": evaluation.overall.recall,
        "f1": evaluation.overall.f1,
    });
    let dir = stage.target().to_path_buf();
    let manifest = stage.commit(m)?;
    Ok(Outcome {
        dir,
        message: format!("eval: lexicon v{version}: {}", evaluation.overall.summary()),
        manifest,
    })
}

pub fn agree(cfg: &ResolvedConfig, round: u32) -> Result<Outcome> {
    let ws = Workspace::new(cfg.workspace());
    let r = ws
        .round(round)?
        .ok_or_else(|| CliError::data(format!("annotation round {round} not found in {}", ws.root().display())))?;
    let matrix = pairwise_agreement(&r).map_err(data)?;
    let round_path = ws.root().join("rounds").join(format!("round-{round}.json"));
    let mut stage = Stage::begin("agree", cfg.stage_dir(&format!("agree-round-{round}")))?;
    stage.write_json("agreement.json", &matrix)?;
    let mut csv = String::from("annotator");
    for a in &matrix.annotators {
        csv.push(',');
        csv.push_str(a);
    }
    csv.push('\n');
    for (a, row) in matrix.annotators.iter().zip(&matrix.kappa) {
        csv.push_str(a);
        for k in row {
            csv.push(',');
            if let Some(k) = k {
                csv.push_str(&format!("{k:.4}"));
            }
        }
        csv.push('\n');
    }
    stage.write("kappa.csv", csv.as_bytes())?;
    let mut m = manifest(cfg, vec![digest(cfg, &round_path)?], vec![]);
    m.summary = json!({"round": round, "mean_kappa": matrix.mean, "warnings": matrix.warnings});
    let dir = stage.target().to_path_buf();
    let manifest = stage.commit(m)?;
    let mean = matrix
        .mean
        .map(|k| format!("{k:.2}"))
        .unwrap_or_else(|| "undefined".into());
    Ok(Outcome {
        dir,
        message: format!("agree: round {round}, {} annotators, mean kappa {mean}", matrix.annotators.len()),
        manifest,
    })
}
