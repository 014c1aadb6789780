//! Network-facing verification service.
//!
//! The server holds one confidential panel dataset, accepts verification
//! queries over JSON/HTTP, enforces the privacy-budget ledger, and returns
//! only noisy releases plus their post-processed posteriors. Endpoints:
//!
//! * `POST /v1/verify`          — run a coefficient or trend verification
//! * `GET  /v1/budget/{id}`     — read-only budget status for an analysis
//! * `GET  /v1/health`          — liveness
//!
//! Authentication is a static bearer token per analysis id. Noise is keyed
//! by (server secret, ledger entry id); seeds and the noiseless test mode
//! live in the configuration file and are unreachable from the wire.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use thiserror::Error;

use paneldp_core::budget::{BudgetError, BudgetLedger, BudgetPolicy, ScopeKey};
use paneldp_core::dp::{FixedNoise, KeyedNoise, NoiseProvider};
use paneldp_core::formula::{FilterOp, ModelSpec};
use paneldp_core::panel::PanelDataset;
use paneldp_core::posterior::posterior_r;
use paneldp_core::schema::Schema;
use paneldp_core::verify::{
    coef_verify, trend_verify, VerificationRaw, VerifyContext, VerifyError,
};
use paneldp_core::wire::{
    digest_of, validate_envelope, BudgetEntrySummary, BudgetStatus, PosteriorSummary,
    QueryEnvelope, QueryPayload, ReleaseEnvelope, VerificationRelease, WireErrorBody,
};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("{0}")]
    Panel(String),
}

/// Noise selection; anything but `keyed` is for tests and sandboxes.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Keyed,
    Seeded(u64),
    Noiseless,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ServerConfig {
    pub listen: String,
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub journal: PathBuf,
    pub per_analysis_cap: f64,
    #[serde(default = "default_epsilon")]
    pub default_epsilon: f64,
    #[serde(default)]
    pub disjointness_variable: Option<String>,
    #[serde(default)]
    pub global_cap: Option<f64>,
    pub partition_seed: u64,
    pub server_secret: String,
    #[serde(default)]
    pub noise: NoiseMode,
    /// analysis_id -> bearer token
    pub tokens: BTreeMap<String, String>,
}

fn default_epsilon() -> f64 {
    1.0
}

impl ServerConfig {
    /// Load from TOML; relative paths resolve against the config file's dir.
    pub fn load(path: &Path) -> Result<ServerConfig, ServerError> {
        let text = std::fs::read_to_string(path)?;
        let mut config: ServerConfig =
            toml::from_str(&text).map_err(|e| ServerError::Config(e.to_string()))?;
        if let Some(dir) = path.parent() {
            for p in [&mut config.dataset, &mut config.schema, &mut config.journal] {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        }
        Ok(config)
    }
}

pub struct ServerState {
    pub data: PanelDataset,
    pub ledger: BudgetLedger,
    pub config: ServerConfig,
    noise: Box<dyn NoiseProvider + Send + Sync>,
}

impl ServerState {
    pub fn from_config(config: ServerConfig) -> Result<Arc<ServerState>, ServerError> {
        let schema_text = std::fs::read_to_string(&config.schema)?;
        let schema = Schema::parse(&schema_text).map_err(|e| ServerError::Config(e.to_string()))?;
        let data = PanelDataset::load_csv(&config.dataset, schema)
            .map_err(|e| ServerError::Panel(e.to_string()))?;
        let policy = BudgetPolicy {
            per_analysis_cap: config.per_analysis_cap,
            disjointness_variable: config.disjointness_variable.clone(),
            global_cap: config.global_cap,
        };
        let ledger = BudgetLedger::open(&config.journal, policy)?;
        let noise: Box<dyn NoiseProvider + Send + Sync> = match config.noise {
            NoiseMode::Keyed => Box::new(KeyedNoise::new(config.server_secret.as_bytes().to_vec())),
            NoiseMode::Seeded(seed) => Box::new(FixedNoise::seeded(seed)),
            NoiseMode::Noiseless => Box::new(FixedNoise::noiseless()),
        };
        Ok(Arc::new(ServerState {
            data,
            ledger,
            config,
            noise,
        }))
    }

    fn analysis_for_token(&self, token: &str) -> Option<&str> {
        self.config
            .tokens
            .iter()
            .find(|(_, t)| t.as_str() == token)
            .map(|(a, _)| a.as_str())
    }
}

pub fn build_router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/v1/verify", post(handle_verify))
        .route("/v1/budget/:analysis_id", get(handle_budget_status))
        .route("/v1/health", get(handle_health))
        .with_state(state)
}

/// Bind and serve until the process is terminated. Returns the bound
/// address through the callback before blocking (tests use port 0).
pub async fn serve(
    state: Arc<ServerState>,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), ServerError> {
    let listener = tokio::net::TcpListener::bind(&state.config.listen).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, build_router(state))
        .await
        .map_err(ServerError::Io)
}

// ---- handlers -------------------------------------------------------------

async fn handle_health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

struct ApiError {
    status: StatusCode,
    body: WireErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, error: impl Into<String>) -> Self {
        ApiError {
            status,
            body: WireErrorBody {
                code: code.into(),
                error: error.into(),
                remaining_budget: None,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn bearer_token(headers: &HeaderMap) -> Option<&str> {
    headers
        .get("authorization")?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
}

fn authorize(state: &ServerState, headers: &HeaderMap, analysis_id: &str) -> Result<(), ApiError> {
    let token = bearer_token(headers)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "auth", "missing bearer token"))?;
    match state.analysis_for_token(token) {
        None => Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "auth",
            "unknown token",
        )),
        Some(a) if a != analysis_id => Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "auth",
            "token does not grant access to this analysis",
        )),
        Some(_) => Ok(()),
    }
}

/// A scope claim is honored only when it names the configured disjointness
/// variable and the model formula filters to exactly that level; anything
/// else is recorded unscoped and composes sequentially.
fn effective_scope(
    state: &ServerState,
    claim: &Option<ScopeKey>,
    model_text: &str,
) -> Option<ScopeKey> {
    let claim = claim.as_ref()?;
    let declared = state.config.disjointness_variable.as_ref()?;
    if &claim.variable != declared {
        return None;
    }
    let spec = ModelSpec::parse(model_text).ok()?;
    let pinned = spec
        .filters
        .iter()
        .any(|f| f.var == claim.variable && f.op == FilterOp::Eq && f.value == claim.level);
    pinned.then(|| claim.clone())
}

fn verify_error_response(err: VerifyError, state: &ServerState, analysis: &str) -> ApiError {
    match err {
        VerifyError::Budget(BudgetError::Exhausted {
            requested,
            remaining,
            ..
        }) => {
            let mut e = ApiError::new(
                StatusCode::FORBIDDEN,
                "budget_exhausted",
                format!("requested ε = {requested}, remaining ε = {remaining}"),
            );
            e.body.remaining_budget = Some(remaining);
            e
        }
        VerifyError::Budget(BudgetError::GlobalExhausted {
            requested,
            remaining,
        }) => {
            let mut e = ApiError::new(
                StatusCode::FORBIDDEN,
                "budget_exhausted",
                format!("global cap: requested ε = {requested}, remaining ε = {remaining}"),
            );
            e.body.remaining_budget = Some(remaining);
            e
        }
        VerifyError::Budget(other) => ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "ledger",
            other.to_string(),
        ),
        e @ (VerifyError::CoefficientNotInModel(_)
        | VerifyError::BadInterval(_, _)
        | VerifyError::BadEpsilon(_)
        | VerifyError::BadGamma1(_)
        | VerifyError::BadM(_)
        | VerifyError::NoPeriods
        | VerifyError::ShortPeriod(_)
        | VerifyError::PeriodOrder
        | VerifyError::IntervalCount { .. }
        | VerifyError::UnknownYear(_)
        | VerifyError::IntervalParse(_)
        | VerifyError::Formula(_)
        | VerifyError::Partition(_)) => {
            ApiError::new(StatusCode::BAD_REQUEST, "validation", e.to_string())
        }
        e @ VerifyError::DegenerateSlope => {
            let _ = analysis;
            let _ = state;
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        }
    }
}

fn release_of(raw: &VerificationRaw, include_density: bool) -> VerificationRelease {
    // Post-processing consumes only the released noisy count. Error-variant
    // releases carry Laplace scale 2/ε, i.e. an effective ε/2 for the
    // ones-count posterior.
    let eff_epsilon = if raw.used_error_variant() {
        raw.epsilon_spent() / 2.0
    } else {
        raw.epsilon_spent()
    };
    let post = posterior_r(raw.s_noisy(), raw.m(), eff_epsilon);
    VerificationRelease {
        label: raw.label().to_string(),
        m: raw.m(),
        epsilon: raw.epsilon_spent(),
        s_noisy: raw.s_noisy(),
        err_noisy: raw.err_noisy(),
        error_variant: raw.used_error_variant(),
        posterior: PosteriorSummary::from_posterior(&post, include_density),
    }
}

async fn handle_verify(
    State(state): State<Arc<ServerState>>,
    headers: HeaderMap,
    Json(envelope): Json<QueryEnvelope>,
) -> Result<Json<ReleaseEnvelope>, ApiError> {
    authorize(&state, &headers, &envelope.analysis_id)?;
    validate_envelope(&envelope)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "validation", e.to_string()))?;
    let digest = digest_of(&envelope.payload);
    let analysis_id = envelope.analysis_id.clone();
    let kind = match &envelope.payload {
        QueryPayload::CoefVerify(_) => "coef_verify",
        QueryPayload::TrendVerify(_) => "trend_verify",
    };
    tracing::info!(analysis = %analysis_id, kind, digest = %digest, "verification request");

    let state2 = Arc::clone(&state);
    let result = tokio::task::spawn_blocking(move || {
        let model_text = match &envelope.payload {
            QueryPayload::CoefVerify(q) => q.model.clone(),
            QueryPayload::TrendVerify(q) => q.model.clone(),
        };
        let scope = effective_scope(&state2, &envelope.scope_key, &model_text);
        let ctx = VerifyContext {
            ledger: &state2.ledger,
            analysis_id: &envelope.analysis_id,
            scope: scope.clone(),
            noise: state2.noise.as_ref(),
            partition_seed: state2.config.partition_seed,
            query_digest: digest.clone(),
        };
        let raws = match &envelope.payload {
            QueryPayload::CoefVerify(q) => coef_verify(&state2.data, q, &ctx).map(|r| vec![r]),
            QueryPayload::TrendVerify(q) => trend_verify(&state2.data, q, &ctx),
        };
        (raws, scope, envelope)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;

    let (raws, scope, envelope) = result;
    let raws = raws.map_err(|e| verify_error_response(e, &state, &envelope.analysis_id))?;
    let results: Vec<VerificationRelease> = raws
        .iter()
        .map(|raw| release_of(raw, envelope.include_density))
        .collect();
    let epsilon_spent = results.iter().map(|r| r.epsilon).sum();
    let response = ReleaseEnvelope {
        analysis_id: envelope.analysis_id.clone(),
        query_digest: digest_of(&envelope.payload),
        unix_time: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        epsilon_spent,
        remaining_budget: state.ledger.remaining(&envelope.analysis_id),
        scope_applied: scope,
        results,
    };
    tracing::info!(
        analysis = %response.analysis_id,
        spent = response.epsilon_spent,
        remaining = response.remaining_budget,
        "release"
    );
    Ok(Json(response))
}

async fn handle_budget_status(
    State(state): State<Arc<ServerState>>,
    headers: HeaderMap,
    UrlPath(analysis_id): UrlPath<String>,
) -> Result<Json<BudgetStatus>, ApiError> {
    authorize(&state, &headers, &analysis_id)?;
    let entries = state
        .ledger
        .entries_for(&analysis_id)
        .into_iter()
        .map(|e| BudgetEntrySummary {
            entry_id: e.id,
            epsilon: e.epsilon,
            scope: e.scope,
            unix_time: e.unix_time,
            query_digest: e.query_digest,
        })
        .collect();
    Ok(Json(BudgetStatus {
        spent: state.ledger.spent(&analysis_id),
        cap: state.config.per_analysis_cap,
        remaining: state.ledger.remaining(&analysis_id),
        analysis_id,
        entries,
    }))
}
