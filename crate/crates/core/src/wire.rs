//! JSON wire protocol types (v1), shared by server and client.
//!
//! Request and release envelopes are plain serde types; the structural
//! validation here runs identically on both sides, so a client rejects a
//! malformed query before spending anything. Schema-dependent checks
//! (unknown variables, absent years) happen on the server, which holds the
//! data. See `docs/wire-protocol.md` for the endpoint contract.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::budget::ScopeKey;
use crate::posterior::RPosterior;
use crate::verify::{validate_periods, CoefficientQuery, TrendQuery, VerifyError};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("analysis_id must be non-empty")]
    EmptyAnalysisId,
    #[error(transparent)]
    Query(#[from] VerifyError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "query", rename_all = "snake_case")]
pub enum QueryPayload {
    CoefVerify(CoefficientQuery),
    TrendVerify(TrendQuery),
}

/// Analyst request as it travels over the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryEnvelope {
    pub analysis_id: String,
    #[serde(flatten)]
    pub payload: QueryPayload,
    /// Optional parallel-composition claim; honored only when it names the
    /// server's declared disjointness variable and matches a formula filter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope_key: Option<ScopeKey>,
    /// Ask for the full posterior density array, not just the summary.
    #[serde(default)]
    pub include_density: bool,
}

/// Structural validation shared by client and server. Never touches data.
pub fn validate_envelope(env: &QueryEnvelope) -> Result<(), WireError> {
    if env.analysis_id.trim().is_empty() {
        return Err(WireError::EmptyAnalysisId);
    }
    match &env.payload {
        QueryPayload::CoefVerify(q) => {
            if q.m < 2 {
                return Err(VerifyError::BadM(q.m).into());
            }
            if q.epsilon.is_nan() || q.epsilon <= 0.0 {
                return Err(VerifyError::BadEpsilon(q.epsilon).into());
            }
            q.interval.validate().map_err(WireError::Query)?;
            if let Some(g1) = q.gamma1 {
                if !(g1 > 0.0 && g1 < 1.0) {
                    return Err(VerifyError::BadGamma1(g1).into());
                }
            }
        }
        QueryPayload::TrendVerify(q) => {
            if q.m < 2 {
                return Err(VerifyError::BadM(q.m).into());
            }
            if q.epsilon.is_nan() || q.epsilon <= 0.0 {
                return Err(VerifyError::BadEpsilon(q.epsilon).into());
            }
            validate_periods(&q.periods, &q.intervals).map_err(WireError::Query)?;
        }
    }
    Ok(())
}

/// Canonical digest of a payload, echoed in releases and recorded in the
/// ledger.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("payload serializes");
    let mut h = Sha256::new();
    h.update(&json);
    hex::encode(&h.finalize()[..16])
}

/// Posterior summary carried in a release. Built from the released noisy
/// count only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mode: f64,
    pub mean: f64,
    pub ci95: (f64, f64),
    /// Full grid density, included on request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<f64>>,
}

impl PosteriorSummary {
    pub fn from_posterior(post: &RPosterior, include_density: bool) -> Self {
        PosteriorSummary {
            mode: post.mode,
            mean: post.mean,
            ci95: post.ci95,
            density: include_density.then(|| post.density.clone()),
        }
    }
}

/// One released verification: noisy counts plus their post-processing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationRelease {
    pub label: String,
    pub m: u32,
    pub epsilon: f64,
    pub s_noisy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err_noisy: Option<f64>,
    pub error_variant: bool,
    pub posterior: PosteriorSummary,
}

/// Server response envelope. Contains nothing derived from confidential data
/// except the noisy counts and their post-processing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReleaseEnvelope {
    pub analysis_id: String,
    pub query_digest: String,
    pub unix_time: u64,
    pub epsilon_spent: f64,
    pub remaining_budget: f64,
    /// Scope honored for parallel composition, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope_applied: Option<ScopeKey>,
    pub results: Vec<VerificationRelease>,
}

/// Read-only budget view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetStatus {
    pub analysis_id: String,
    pub spent: f64,
    pub cap: f64,
    pub remaining: f64,
    pub entries: Vec<BudgetEntrySummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetEntrySummary {
    pub entry_id: u64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<ScopeKey>,
    pub unix_time: u64,
    pub query_digest: String,
}

/// Error body returned by the server.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireErrorBody {
    pub code: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_budget: Option<f64>,
}
