//! Core library for a verification service over confidential longitudinal panel data.
//!
//! The pieces fit together like this: a confidential [`panel::PanelDataset`] is
//! held behind a protected boundary. Analysts working on a released synthetic
//! panel (built with [`synth`]) submit verification queries asking whether a
//! regression coefficient, or the slope of its year-by-year path, lies in a
//! stated interval. The server answers by sub-sampling entities into `M`
//! partitions ([`partition`]), fitting the model per partition ([`regress`]),
//! counting how many partition estimates land in the interval, and releasing
//! only a Laplace-noised count ([`verify`], [`dp`]). The noisy count is
//! post-processed into a posterior over the per-partition success probability
//! `r` ([`posterior`]), which is free under post-processing. Every release is
//! charged to an append-only privacy-budget ledger ([`budget`]).

pub mod budget;
pub mod dp;
pub mod formula;
pub mod frame;
pub mod panel;
pub mod partition;
pub mod posterior;
pub mod regress;
pub mod schema;
pub mod synth;
pub mod verify;
pub mod wire;

pub use budget::{BudgetError, BudgetLedger, BudgetPolicy, LedgerEntry, ScopeKey};
pub use dp::{KeyedNoise, LaplaceSpec, NoiseProvider, NoiseSource};
pub use frame::AnalysisFrame;
pub use panel::PanelDataset;
pub use posterior::RPosterior;
pub use schema::{Schema, VariableKind, VariableSchema};
pub use verify::{CoefficientQuery, Interval, TrendMode, TrendQuery, VerificationRaw};
pub use wire::{QueryEnvelope, QueryPayload, ReleaseEnvelope, VerificationRelease};
