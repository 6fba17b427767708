//! `serve`: the listening-study HTTP API.
//!
//! - `GET /api/question?rater=ID`: next question for the rater, 204 when done
//! - `POST /api/rating`: JSON submission; 200 only after the rating is on disk
//! - `GET /api/results[?alpha=A]`: win counts and tests over all ratings
//! - `GET /audio/<file>`: a study excerpt

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::Args;
use drumscribe::listen::{ListenError, ListenService, Study, Submission};
use serde::{Deserialize, Serialize};

use crate::config::{log_resolved, overrides, required, ConfigFile, UserContext};

#[derive(Args)]
pub struct ServeArgs {
    /// study.json written by `study-build`.
    #[arg(long)]
    study: Option<PathBuf>,
    /// Directory of excerpts (default: `audio` next to the study file).
    #[arg(long)]
    audio: Option<PathBuf>,
    /// Append-only rating log (default: `ratings.jsonl` next to the study file).
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Address to bind; port 0 picks a free port.
    #[arg(long)]
    addr: Option<SocketAddr>,
    /// Seed for A/B presentation order.
    #[arg(long)]
    seed: Option<u64>,
    /// Default significance level for /api/results.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ServeSettings {
    study: Option<PathBuf>,
    audio: Option<PathBuf>,
    ratings: Option<PathBuf>,
    addr: SocketAddr,
    seed: u64,
    alpha: f64,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings { study: None, audio: None, ratings: None, addr: ([127, 0, 0, 1], 8080).into(), seed: 0, alpha: 0.001 }
    }
}

struct AppState {
    service: Mutex<ListenService>,
    audio_dir: PathBuf,
    alpha: f64,
}

type Shared = Arc<AppState>;

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: Option<String>,
}

async fn question(State(st): State<Shared>, Query(q): Query<RaterQuery>) -> Response {
    let Some(rater) = q.rater.filter(|r| !r.trim().is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "missing `rater`");
    };
    let next = st.service.lock().expect("service lock").next_question(&rater);
    match next {
        Some(sq) => Json(sq).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn rating(State(st): State<Shared>, body: Result<Json<Submission>, axum::extract::rejection::JsonRejection>) -> Response {
    let sub = match body {
        Ok(Json(s)) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
    // the append fsyncs, so keep it off the async workers
    let res = tokio::task::spawn_blocking(move || st.service.lock().expect("service lock").submit(&sub, now)).await;
    match res {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(e @ ListenError::UnknownQuestion(_))) => error(StatusCode::NOT_FOUND, e.to_string()),
        Ok(Err(e @ ListenError::Duplicate { .. })) => error(StatusCode::CONFLICT, e.to_string()),
        Ok(Err(e @ ListenError::Invalid(_))) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => {
            log::error!("storing rating: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "rating not stored")
        }
        Err(e) => {
            log::error!("rating task: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "rating not stored")
        }
    }
}

#[derive(Deserialize)]
struct AlphaQuery {
    alpha: Option<f64>,
}

async fn results(State(st): State<Shared>, Query(q): Query<AlphaQuery>) -> Response {
    let alpha = q.alpha.unwrap_or(st.alpha);
    if !(alpha > 0.0 && alpha < 1.0) {
        return error(StatusCode::BAD_REQUEST, "alpha must lie in (0, 1)");
    }
    let analysis = st.service.lock().expect("service lock").results(alpha);
    Json(analysis).into_response()
}

async fn audio(State(st): State<Shared>, Path(name): Path<String>) -> Response {
    if !st.service.lock().expect("service lock").serves_audio(&name) {
        return error(StatusCode::NOT_FOUND, "no such file");
    }
    match tokio::fs::read(st.audio_dir.join(&name)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        Err(e) => {
            log::error!("reading {name}: {e}");
            error(StatusCode::NOT_FOUND, "file missing on server")
        }
    }
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/question", get(question))
        .route("/api/rating", post(rating))
        .route("/api/results", get(results))
        .route("/audio/{file}", get(audio))
        .with_state(state)
}

pub fn serve(args: ServeArgs, file: &ConfigFile) -> anyhow::Result<()> {
    let mut s: ServeSettings = file.section("serve")?;
    for (dst, src) in [(&mut s.study, &args.study), (&mut s.audio, &args.audio), (&mut s.ratings, &args.ratings)] {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    overrides!(s, args; addr, seed, alpha);
    log_resolved("serve", &s)?;
    let study_path = required(&s.study, "study")?;
    let base = study_path.parent().map(PathBuf::from).unwrap_or_default();
    let audio_dir = s.audio.clone().unwrap_or_else(|| base.join("audio"));
    let ratings = s.ratings.clone().unwrap_or_else(|| base.join("ratings.jsonl"));
    let text = std::fs::read_to_string(&study_path).user(format!("reading {}", study_path.display()))?;
    let study = Study::from_json(&text).user(format!("parsing {}", study_path.display()))?;
    let service = ListenService::open(study, &ratings, s.seed).with_context(|| format!("opening rating log {}", ratings.display()))?;
    let state = Arc::new(AppState { service: Mutex::new(service), audio_dir, alpha: s.alpha });

    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(s.addr).await.user(format!("binding {}", s.addr))?;
        let local = listener.local_addr()?;
        println!("listening on http://{local}");
        std::io::stdout().flush()?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server")
    })
}
