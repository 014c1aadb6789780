//! Sequential conditional synthesis engine and disclosure-risk assessment.
//!
//! Synthetic panels are generated variable by variable: careers first (the
//! agency sequence drives who works when), then each later variable from a
//! conditional model fitted on the confidential data — a constant-per-entity
//! CART draw, a per-year cross-sectional CART, a lag-one CART that also
//! conditions on the previous year's own value, or the change-indicator
//! strategy for attributes that rarely change. The synthesizer carries no
//! differential-privacy guarantee of its own; it exists to produce releasable
//! sandbox panels and to calibrate verification queries.

mod career;
mod cart;
mod plan;
mod risk;
mod sequential;

pub use career::{
    career_decompose, career_reconstruct, fit_career_model, sample_careers, CareerModel,
    CareerModelConfig, CareerTriple, Label, NOT_WORKING,
};
pub use cart::{
    fit_cart, CartModel, FeatureDef, FeatureKind, FeatureValue, LeafDist, TargetVec, TrainingSet,
};
pub use plan::{PlanVariable, Strategy, SynthesisPlan};
pub use risk::{assess_attribute_risk, RiskReport};
pub use sequential::synthesize_sequential;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid career triple: {0}")]
    InvalidTriple(String),
    #[error("career sampling stalled: g={g}, transitions={z_len}, attempts={attempts}")]
    SamplingStalled { g: u32, z_len: usize, attempts: u32 },
    #[error("no training data for `{0}`")]
    NoData(String),
    #[error("plan error: {0}")]
    PlanOrder(String),
    #[error("plan parse error at line {0}: {1}")]
    PlanParse(usize, String),
    #[error("variable `{0}` not in schema")]
    UnknownVariable(String),
    #[error("variable `{0}` has the wrong kind for this strategy")]
    KindMismatch(String),
    #[error(transparent)]
    Panel(#[from] crate::panel::PanelError),
}
