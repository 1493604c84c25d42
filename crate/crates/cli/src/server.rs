//! JSON API behind the annotation workbench.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pvcohort_core::annotation::{
    pairwise_agreement, propose_candidates, sample_gold, AnnotatedTerm, AnnotationError, AnnotationRound, GoldSet,
    RoundStatus,
};
use pvcohort_core::corpus::UserProfile;
use pvcohort_core::lexicon::{enrich, Category, FunctionalClass, LexiconEntry, LexiconError, Provenance};
use pvcohort_core::matcher::{normalize, MatchRecord, Matcher};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::config::ResolvedConfig;
use crate::error::CliError;
use crate::pipeline::{self, Cohort};
use crate::workspace::{EvalPoint, Workspace};

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

/// Error body: `{"error": code, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let (status, code) = match &e {
            AnnotationError::RoundClosed(_) => (StatusCode::CONFLICT, "round_closed"),
            AnnotationError::RoundOpen(_) => (StatusCode::CONFLICT, "round_open"),
            AnnotationError::UnknownTask(_) => (StatusCode::BAD_REQUEST, "unknown_task"),
            AnnotationError::UnknownAnnotator(_) => (StatusCode::FORBIDDEN, "unknown_annotator"),
            AnnotationError::NotAssigned { .. } => (StatusCode::FORBIDDEN, "not_assigned"),
            AnnotationError::TooFewAnnotators(_) => (StatusCode::CONFLICT, "too_few_annotators"),
            AnnotationError::SampleTooLarge { .. } => (StatusCode::BAD_REQUEST, "sample_too_large"),
            _ => (StatusCode::BAD_REQUEST, "invalid_request"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))
}

pub struct AppState {
    cfg: ResolvedConfig,
    ws: Workspace,
    profiles: BTreeMap<String, UserProfile>,
    cohort: Option<Vec<String>>,
    /// Serializes every read-modify-write of the store.
    writer: tokio::sync::Mutex<()>,
    matcher: Mutex<Option<Arc<Matcher>>>,
}

impl AppState {
    /// Initializes the workspace and loads profiles from the ingest stage
    /// when it has run.
    pub fn load(cfg: ResolvedConfig) -> crate::error::Result<Self> {
        let ws = Workspace::new(cfg.workspace());
        ws.init(&cfg.resolve(&cfg.config.lexicon))?;
        let profiles_path = cfg.stage_dir(pipeline::INGEST).join("profiles.jsonl");
        let profiles = if profiles_path.is_file() {
            let f = std::fs::File::open(&profiles_path).map_err(|e| CliError::io(&profiles_path, e))?;
            pvcohort_core::corpus::read_profiles(std::io::BufReader::new(f))
                .map_err(|e| CliError::io(&profiles_path, e))?
                .into_iter()
                .map(|p| (p.user_id.clone(), p))
                .collect()
        } else {
            log::warn!("no ingest output at {}; tasks will have no text", profiles_path.display());
            BTreeMap::new()
        };
        let cohort_path = cfg.stage_dir(pipeline::CLASSIFY).join("cohort.json");
        let cohort = if cohort_path.is_file() {
            let text = std::fs::read_to_string(&cohort_path).map_err(|e| CliError::io(&cohort_path, e))?;
            let c: Cohort = serde_json::from_str(&text).map_err(|e| CliError::data(e.to_string()))?;
            Some(c.users)
        } else {
            None
        };
        Ok(Self {
            cfg,
            ws,
            profiles,
            cohort,
            writer: tokio::sync::Mutex::new(()),
            matcher: Mutex::new(None),
        })
    }

    /// Matcher over the newest lexicon, rebuilt when the version changes.
    fn matcher(&self) -> ApiResult<Arc<Matcher>> {
        let (lexicon, _) = pipeline::current_lexicon(&self.cfg)?;
        let mut slot = self.matcher.lock().expect("matcher cache poisoned");
        if let Some(m) = slot.as_ref().filter(|m| m.lexicon_version() == lexicon.version()) {
            return Ok(m.clone());
        }
        let mut mc = self.cfg.config.matcher.clone();
        if let Some(p) = &self.cfg.config.negation_triggers {
            let p = self.cfg.resolve(p);
            let f = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
            mc.negation_triggers = pvcohort_core::matcher::read_triggers(std::io::BufReader::new(f))
                .map_err(|e| CliError::io(&p, e))?;
        }
        let m = Arc::new(
            Matcher::new(&lexicon, mc)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "lexicon", e.to_string()))?,
        );
        *slot = Some(m.clone());
        Ok(m)
    }

    fn round(&self, r: u32) -> ApiResult<AnnotationRound> {
        self.ws
            .round(r)?
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "round_not_found", format!("no round {r}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/rounds", get(list_rounds).post(create_round))
        .route("/api/rounds/{r}/tasks", get(tasks))
        .route("/api/rounds/{r}/annotations", get(annotations).post(submit))
        .route("/api/rounds/{r}/close", post(close_round))
        .route("/api/rounds/{r}/reconcile", post(reconcile_round))
        .route("/api/rounds/{r}/agreement", get(agreement))
        .route("/api/lexicon", get(lexicon))
        .route("/api/lexicon/candidates", get(candidates))
        .route("/api/lexicon/approve", post(approve))
        .route("/api/eval/history", get(history))
        .route("/api/eval/run", post(run_eval));
    let ui = state
        .cfg
        .config
        .ui_dir
        .as_ref()
        .map(|d| state.cfg.resolve(d))
        .filter(|d| d.is_dir());
    let api = api.with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until interrupted.
pub async fn serve(cfg: ResolvedConfig, host: &str, port: u16) -> crate::error::Result<()> {
    let state = Arc::new(AppState::load(cfg)?);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::config(format!("bad listen address {host}:{port}: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::config(format!("cannot listen on {addr}: {e}")))?;
    log::info!("serving on http://{addr}");
    eprintln!("serving on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::data(e.to_string()))
}

async fn health(State(s): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let (lex, _) = pipeline::current_lexicon(&s.cfg)?;
    Ok(Json(json!({
        "status": "ok",
        "lexicon_version": lex.version(),
        "profiles": s.profiles.len(),
    })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub status: RoundStatus,
    pub annotators: Vec<String>,
    pub tasks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconciles: Option<u32>,
    /// Submitted profiles per annotator.
    pub submitted: BTreeMap<String, usize>,
}

impl From<&AnnotationRound> for RoundSummary {
    fn from(r: &AnnotationRound) -> Self {
        Self {
            round: r.round,
            status: r.status,
            annotators: r.annotators.clone(),
            tasks: r.tasks.len(),
            reconciles: r.reconciles,
            submitted: r
                .annotators
                .iter()
                .map(|a| (a.clone(), r.labels.get(a).map_or(0, |m| m.len())))
                .collect(),
        }
    }
}

async fn list_rounds(State(s): State<Arc<AppState>>) -> ApiResult<Json<Vec<RoundSummary>>> {
    Ok(Json(s.ws.rounds()?.iter().map(RoundSummary::from).collect()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRound {
    annotators: Vec<String>,
    #[serde(default)]
    tasks: Option<Vec<String>>,
    /// Sample this many cohort profiles instead of listing tasks.
    #[serde(default)]
    sample: Option<usize>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    annotators_per_task: Option<usize>,
}

async fn create_round(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<RoundSummary>)> {
    let req: CreateRound = parse_body(&body)?;
    let annotators: Vec<String> = req.annotators.iter().map(|a| a.trim().to_string()).collect();
    if annotators.is_empty() || annotators.iter().any(String::is_empty) {
        return Err(ApiError::bad_request("invalid_body", "annotators must be nonempty ids"));
    }
    if annotators.iter().collect::<BTreeSet<_>>().len() != annotators.len() {
        return Err(ApiError::bad_request("invalid_body", "annotator ids must be unique"));
    }
    let tasks = match (req.tasks, req.sample) {
        (Some(t), None) => {
            if let Some(u) = t.iter().find(|u| !s.profiles.contains_key(*u)) {
                return Err(ApiError::bad_request("unknown_task", format!("no profile {u:?}")));
            }
            let mut t = t;
            t.sort();
            t.dedup();
            t
        }
        (None, Some(n)) => {
            let pool = s
                .cohort
                .clone()
                .unwrap_or_else(|| s.profiles.keys().cloned().collect());
            sample_gold("round", &pool, n, req.seed)?.profiles
        }
        _ => return Err(ApiError::bad_request("invalid_body", "give exactly one of tasks or sample")),
    };
    if tasks.is_empty() {
        return Err(ApiError::bad_request("invalid_body", "a round needs at least one task"));
    }
    let _guard = s.writer.lock().await;
    let next = s.ws.round_numbers()?.last().map_or(1, |n| n + 1) as u32;
    let mut round = AnnotationRound::new(next, annotators, tasks)?;
    round.assign(req.annotators_per_task.unwrap_or(s.cfg.config.annotators_per_task));
    s.ws.save_round(&round)?;
    Ok((StatusCode::CREATED, Json(RoundSummary::from(&round))))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskView {
    pub user_id: String,
    pub collapsed_text: String,
    pub tokens: Vec<String>,
    pub boundary_flags: Vec<bool>,
    pub lexicon_version: u64,
    pub pre_annotations: Vec<MatchRecord>,
    pub annotators: Vec<String>,
    /// `pending` / `submitted` for the requesting annotator, otherwise
    /// `pending`, `in_progress` or `complete`; `closed` once reconciled.
    pub status: String,
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

async fn tasks(
    State(s): State<Arc<AppState>>,
    Path(r): Path<u32>,
    Query(q): Query<AnnotatorQuery>,
) -> ApiResult<Json<Vec<TaskView>>> {
    let round = s.round(r)?;
    let matcher = s.matcher()?;
    let mut out = Vec::new();
    for user in &round.tasks {
        let assigned = round.assigned(user);
        if let Some(a) = &q.annotator {
            if !assigned.contains(&a.as_str()) {
                continue;
            }
        }
        let done = |a: &str| round.labels.get(a).is_some_and(|m| m.contains_key(user));
        let status = if round.status == RoundStatus::Reconciled {
            "closed"
        } else if let Some(a) = &q.annotator {
            if done(a) {
                "submitted"
            } else {
                "pending"
            }
        } else {
            match assigned.iter().filter(|a| done(a)).count() {
                0 => "pending",
                n if n == assigned.len() => "complete",
                _ => "in_progress",
            }
        };
        let (text, seq, pre) = match s.profiles.get(user) {
            Some(p) => (p.collapsed_text.clone(), normalize(&p.collapsed_text), matcher.match_profile(p)),
            None => (String::new(), normalize(""), Vec::new()),
        };
        out.push(TaskView {
            user_id: user.clone(),
            collapsed_text: text,
            tokens: seq.tokens,
            boundary_flags: seq.boundary_flags,
            lexicon_version: matcher.lexicon_version(),
            pre_annotations: pre,
            annotators: assigned.iter().map(|a| a.to_string()).collect(),
            status: status.to_string(),
        });
    }
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Submission {
    user_id: String,
    terms: Vec<AnnotatedTerm>,
}

async fn submit(
    State(s): State<Arc<AppState>>,
    Path(r): Path<u32>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let annotator = headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| ApiError::bad_request("missing_annotator", "X-Annotator-Id header is required"))?
        .to_string();
    let sub: Submission = parse_body(&body)?;
    let token_count = s.profiles.get(&sub.user_id).map(|p| normalize(&p.collapsed_text).len());
    for t in &sub.terms {
        if t.term.trim().is_empty() {
            return Err(ApiError::bad_request("invalid_term", "terms must be nonempty"));
        }
        if let Some((a, b)) = t.span {
            if a >= b || token_count.is_some_and(|n| b > n) {
                return Err(ApiError::bad_request("invalid_span", format!("span ({a}, {b}) out of range")));
            }
        }
    }
    let _guard = s.writer.lock().await;
    let mut round = s.round(r)?;
    let n = sub.terms.len();
    round.submit(&annotator, &sub.user_id, sub.terms)?;
    s.ws.save_round(&round)?;
    Ok(Json(json!({"round": r, "annotator": annotator, "user_id": sub.user_id, "terms": n})))
}

async fn annotations(
    State(s): State<Arc<AppState>>,
    Path(r): Path<u32>,
    Query(q): Query<AnnotatorQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let round = s.round(r)?;
    Ok(Json(match q.annotator {
        Some(a) => json!(round.labels.get(&a).cloned().unwrap_or_default()),
        None => json!(round.labels),
    }))
}

async fn close_round(State(s): State<Arc<AppState>>, Path(r): Path<u32>) -> ApiResult<Json<RoundSummary>> {
    let _guard = s.writer.lock().await;
    let mut round = s.round(r)?;
    if round.status == RoundStatus::Reconciled {
        return Ok(Json(RoundSummary::from(&round)));
    }
    round.reconcile();
    if round.reconciles.is_some() {
        let fallback = s.cfg.config.gold.as_ref().map(|p| s.cfg.resolve(p));
        let mut gold = s.ws.gold(fallback.as_deref())?.unwrap_or_else(|| GoldSet {
            name: "gold".into(),
            ..GoldSet::default()
        });
        for t in &round.tasks {
            if !gold.profiles.contains(t) {
                gold.profiles.push(t.clone());
            }
        }
        gold.fill_from_round(&round)?;
        s.ws.save_gold(&gold)?;
    }
    s.ws.save_round(&round)?;
    Ok(Json(RoundSummary::from(&round)))
}

/// Opens a relabeling pass over a closed round. Closing that pass writes
/// its labels into the gold set.
async fn reconcile_round(
    State(s): State<Arc<AppState>>,
    Path(r): Path<u32>,
) -> ApiResult<(StatusCode, Json<RoundSummary>)> {
    let _guard = s.writer.lock().await;
    let round = s.round(r)?;
    let next = s.ws.round_numbers()?.last().map_or(1, |n| n + 1) as u32;
    let pass = round.second_pass(next)?;
    s.ws.save_round(&pass)?;
    Ok((StatusCode::CREATED, Json(RoundSummary::from(&pass))))
}

async fn agreement(State(s): State<Arc<AppState>>, Path(r): Path<u32>) -> ApiResult<Json<serde_json::Value>> {
    let round = s.round(r)?;
    Ok(Json(json!(pairwise_agreement(&round)?)))
}

async fn lexicon(State(s): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let (lex, _) = pipeline::current_lexicon(&s.cfg)?;
    Ok(Json(serde_json::to_value(&lex).expect("lexicon serializes")))
}

#[derive(Debug, Deserialize)]
struct CandidateQuery {
    round: Option<u32>,
    threshold: Option<f64>,
}

async fn candidates(
    State(s): State<Arc<AppState>>,
    Query(q): Query<CandidateQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let round = match q.round {
        Some(r) => s.round(r)?,
        None => s
            .ws
            .rounds()?
            .into_iter()
            .rev()
            .find(|r| r.status == RoundStatus::Reconciled)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_reconciled_round", "no round is reconciled yet"))?,
    };
    let threshold = q.threshold.unwrap_or(s.cfg.config.matcher.similarity_threshold);
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ApiError::bad_request("invalid_threshold", "threshold must lie in (0, 1]"));
    }
    let (lex, _) = pipeline::current_lexicon(&s.cfg)?;
    let found = propose_candidates(&round, &lex, threshold)?;
    Ok(Json(json!({
        "round": round.round,
        "lexicon_version": lex.version(),
        "threshold": threshold,
        "candidates": found,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Approval {
    entry_id: String,
    term: String,
    category: Category,
    #[serde(default)]
    functional_class: Option<FunctionalClass>,
    #[serde(default)]
    synonyms: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApproveRequest {
    round: u32,
    additions: Vec<Approval>,
}

async fn approve(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let req: ApproveRequest = parse_body(&body)?;
    let _guard = s.writer.lock().await;
    s.round(req.round)?;
    let (base, _) = pipeline::current_lexicon(&s.cfg)?;
    let additions: Vec<LexiconEntry> = req
        .additions
        .into_iter()
        .map(|a| LexiconEntry {
            entry_id: a.entry_id,
            canonical: a.term,
            synonyms: a.synonyms,
            category: a.category,
            functional_class: a.functional_class,
            provenance: Provenance::AnnotationRound(req.round),
        })
        .collect();
    let next = enrich(&base, &additions, req.round).map_err(|e| match e {
        LexiconError::TermCollision { .. } | LexiconError::CategoryMismatch { .. } => {
            ApiError::new(StatusCode::CONFLICT, "lexicon_conflict", e.to_string())
        }
        other => ApiError::bad_request("invalid_entry", other.to_string()),
    })?;
    s.ws.save_lexicon(&next)?;
    s.ws.mark_pending(next.version())?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "version": next.version(),
            "parent": base.version(),
            "changes": next.changelog(),
        })),
    ))
}

async fn history(State(s): State<Arc<AppState>>) -> ApiResult<Json<Vec<EvalPoint>>> {
    Ok(Json(s.ws.history()?))
}

async fn run_eval(State(s): State<Arc<AppState>>) -> ApiResult<Json<EvalPoint>> {
    let _guard = s.writer.lock().await;
    let cfg = s.cfg.clone();
    let (evaluation, version, _) = tokio::task::spawn_blocking(move || pipeline::evaluate_current(&cfg))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| match e {
            CliError::Config(m) => ApiError::new(StatusCode::CONFLICT, "no_gold", m),
            CliError::Data(m) => ApiError::new(StatusCode::CONFLICT, "not_ready", m),
        })?;
    Ok(Json(s.ws.record_evaluation(version, &evaluation)?))
}
