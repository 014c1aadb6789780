//! ε-DP verification measures for regression coefficients.
//!
//! A verification answers one question about the confidential data: does the
//! coefficient (or the OLS slope of its year-by-year path over stated
//! periods) lie in a stated interval? The data's entities are split into `M`
//! disjoint partitions, the model is fitted per partition, and the per-
//! partition indicator marks are aggregated into a count `S`. Only a
//! Laplace-noised count ever leaves this module: changing every record of a
//! single entity moves at most one partition's mark, so the count has global
//! sensitivity 1 (scale `1/ε`). When any partition is inestimable the release
//! automatically switches to the three-category error variant, publishing
//! noisy ones- and error-counts at scale `2/ε` (a category move changes two
//! of the three counts by one each, L1 sensitivity 2; see
//! `docs/error-variant.md` for the derivation).
//!
//! Budget is debited, durably, before any noise is drawn or any answer
//! returned. [`VerificationRaw`] deliberately does not implement `Serialize`;
//! the exact count is only reachable through [`VerificationRaw::true_count`],
//! which must never be called outside the protected boundary (tests use it to
//! assert sensitivity properties).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{BudgetError, BudgetLedger, ScopeKey};
use crate::dp::{NoiseProvider, NoiseSource};
use crate::formula::{FormulaError, ModelSpec};
use crate::frame::build_frame_subset;
use crate::panel::PanelDataset;
use crate::partition::{partition_entities, PartitionError};
use crate::regress::fit_ols;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("coefficient `{0}` is not produced by this model")]
    CoefficientNotInModel(String),
    #[error("interval endpoints out of order: [{0}, {1}]")]
    BadInterval(f64, f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("gamma1 must lie in (0,1), got {0}")]
    BadGamma1(f64),
    #[error("M must be at least 2, got {0}")]
    BadM(u32),
    #[error("trend query needs at least one period")]
    NoPeriods,
    #[error("period {0} needs at least 2 years")]
    ShortPeriod(usize),
    #[error("periods must be consecutive and non-overlapping in the interior")]
    PeriodOrder,
    #[error("intervals count {intervals} does not match periods count {periods}")]
    IntervalCount { intervals: usize, periods: usize },
    #[error("year {0} absent from the dataset")]
    UnknownYear(i32),
    #[error("slope undefined: fewer than 2 distinct years")]
    DegenerateSlope,
    #[error("cannot parse interval `{0}`")]
    IntervalParse(String),
}

/// Verification interval. Finite endpoints are closed: a coefficient exactly
/// equal to an endpoint counts as inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interval {
    /// (-inf, hi]
    UpTo { hi: f64 },
    /// [lo, hi]
    Between { lo: f64, hi: f64 },
    /// [lo, inf)
    From { lo: f64 },
}

impl Interval {
    pub fn up_to(hi: f64) -> Self {
        Interval::UpTo { hi }
    }

    pub fn between(lo: f64, hi: f64) -> Self {
        Interval::Between { lo, hi }
    }

    pub fn from_lo(lo: f64) -> Self {
        Interval::From { lo }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Interval::UpTo { hi } => x <= hi,
            Interval::Between { lo, hi } => lo <= x && x <= hi,
            Interval::From { lo } => x >= lo,
        }
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        if let Interval::Between { lo, hi } = *self {
            if lo > hi {
                return Err(VerifyError::BadInterval(lo, hi));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Interval::UpTo { hi } => write!(f, "(-inf,{hi}]"),
            Interval::Between { lo, hi } => write!(f, "[{lo},{hi}]"),
            Interval::From { lo } => write!(f, "[{lo},inf)"),
        }
    }
}

impl FromStr for Interval {
    type Err = VerifyError;

    /// Accepts `neg`, `pos`, or `(l,u)` / `[l,u]` forms with `-inf` / `inf`
    /// endpoints. Finite endpoints are closed regardless of bracket shape.
    fn from_str(s: &str) -> Result<Self, VerifyError> {
        let t = s.trim();
        match t {
            "neg" => return Ok(Interval::up_to(0.0)),
            "pos" => return Ok(Interval::from_lo(0.0)),
            _ => {}
        }
        let inner = t
            .strip_prefix(['(', '['])
            .and_then(|r| r.strip_suffix([')', ']']))
            .ok_or_else(|| VerifyError::IntervalParse(s.to_string()))?;
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(VerifyError::IntervalParse(s.to_string()));
        }
        let parse_end = |p: &str| -> Result<Option<f64>, VerifyError> {
            match p {
                "-inf" | "-Inf" | "-INF" => Ok(None),
                "inf" | "Inf" | "INF" | "+inf" => Ok(None),
                _ => p
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| VerifyError::IntervalParse(p.to_string())),
            }
        };
        let lo = parse_end(parts[0])?;
        let hi = parse_end(parts[1])?;
        let iv = match (lo, hi, parts[0].contains("inf"), parts[1].contains("inf")) {
            (Some(l), Some(h), false, false) => Interval::between(l, h),
            (None, Some(h), true, false) => Interval::up_to(h),
            (Some(l), None, false, true) => Interval::from_lo(l),
            _ => return Err(VerifyError::IntervalParse(s.to_string())),
        };
        iv.validate()?;
        Ok(iv)
    }
}

/// Inclusive run of consecutive years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start_year: i32,
    pub end_year: i32,
}

impl Period {
    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.start_year..=self.end_year
    }

    pub fn len(&self) -> usize {
        (self.end_year - self.start_year + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end_year < self.start_year
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.start_year, self.end_year)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendMode {
    /// One release per period; spends K·ε.
    Separate,
    /// Single release of the product indicator; spends ε.
    Composite,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientQuery {
    /// Model formula document text (shared client/server format).
    pub model: String,
    /// Design column name, e.g. `race=black`.
    pub coefficient: String,
    pub interval: Interval,
    pub m: u32,
    pub epsilon: f64,
    /// Optional client-side decision threshold; never applied server-side.
    pub gamma1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendQuery {
    pub model: String,
    pub coefficient: String,
    pub periods: Vec<Period>,
    pub intervals: Vec<Interval>,
    pub mode: TrendMode,
    pub m: u32,
    /// Epsilon per released count.
    pub epsilon: f64,
}

/// Per-partition verification mark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Zero,
    One,
    Err,
}

/// Result of one verification release. Holds the exact count for in-boundary
/// auditing; intentionally not serializable.
#[derive(Debug, Clone)]
pub struct VerificationRaw {
    label: String,
    m: u32,
    marks: Vec<Mark>,
    s: u32,
    err_count: u32,
    s_noisy: f64,
    err_noisy: Option<f64>,
    epsilon_spent: f64,
    error_variant: bool,
}

impl VerificationRaw {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn s_noisy(&self) -> f64 {
        self.s_noisy
    }

    pub fn err_noisy(&self) -> Option<f64> {
        self.err_noisy
    }

    pub fn epsilon_spent(&self) -> f64 {
        self.epsilon_spent
    }

    pub fn used_error_variant(&self) -> bool {
        self.error_variant
    }

    /// The exact count S. Protected-boundary internal: release structures
    /// must be built from the noisy fields only.
    pub fn true_count(&self) -> u32 {
        self.s
    }

    /// Exact error count; same caveat as [`VerificationRaw::true_count`].
    pub fn true_err_count(&self) -> u32 {
        self.err_count
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }
}

/// Server-side context for running verifications.
pub struct VerifyContext<'a> {
    pub ledger: &'a BudgetLedger,
    pub analysis_id: &'a str,
    pub scope: Option<ScopeKey>,
    pub noise: &'a dyn NoiseProvider,
    pub partition_seed: u64,
    pub query_digest: String,
}

/// Indicator marks from per-partition coefficient estimates; `None` marks an
/// inestimable partition.
pub fn coef_marks(estimates: &[Option<f64>], interval: Interval) -> Vec<Mark> {
    estimates
        .iter()
        .map(|e| match e {
            Some(b) => {
                if interval.contains(*b) {
                    Mark::One
                } else {
                    Mark::Zero
                }
            }
            None => Mark::Err,
        })
        .collect()
}

fn count_marks(marks: &[Mark]) -> (u32, u32) {
    let ones = marks.iter().filter(|m| **m == Mark::One).count() as u32;
    let errs = marks.iter().filter(|m| **m == Mark::Err).count() as u32;
    (ones, errs)
}

/// Noise and package a mark vector into a release.
pub fn release_marks(
    label: String,
    marks: Vec<Mark>,
    epsilon: f64,
    noise: &mut NoiseSource,
) -> VerificationRaw {
    let (ones, errs) = count_marks(&marks);
    let m = marks.len() as u32;
    if errs == 0 {
        let s_noisy = ones as f64 + noise.laplace(1.0 / epsilon);
        VerificationRaw {
            label,
            m,
            marks,
            s: ones,
            err_count: 0,
            s_noisy,
            err_noisy: None,
            epsilon_spent: epsilon,
            error_variant: false,
        }
    } else {
        let (ones_noisy, errs_noisy) = error_variant_counts(&marks, epsilon, noise);
        VerificationRaw {
            label,
            m,
            marks,
            s: ones,
            err_count: errs,
            s_noisy: ones_noisy,
            err_noisy: Some(errs_noisy),
            epsilon_spent: epsilon,
            error_variant: true,
        }
    }
}

/// Three-category release: noisy ones-count and error-count, each at scale
/// 2/ε. Moving one partition between categories changes two of the three
/// counts by one, so the released pair has L1 sensitivity 2.
pub fn error_variant_counts(marks: &[Mark], epsilon: f64, noise: &mut NoiseSource) -> (f64, f64) {
    let (ones, errs) = count_marks(marks);
    let scale = 2.0 / epsilon;
    (
        ones as f64 + noise.laplace(scale),
        errs as f64 + noise.laplace(scale),
    )
}

fn validate_common(
    data: &PanelDataset,
    model: &str,
    coefficient: &str,
    m: u32,
    epsilon: f64,
) -> Result<ModelSpec, VerifyError> {
    if m < 2 {
        return Err(VerifyError::BadM(m));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(VerifyError::BadEpsilon(epsilon));
    }
    let spec = ModelSpec::parse(model)?;
    let names = spec.design_names(data)?;
    if !names.iter().any(|n| n == coefficient) {
        return Err(VerifyError::CoefficientNotInModel(coefficient.to_string()));
    }
    Ok(spec)
}

/// Validate a coefficient query against a dataset without running it.
pub fn validate_coef_query(data: &PanelDataset, q: &CoefficientQuery) -> Result<(), VerifyError> {
    q.interval.validate()?;
    if let Some(g1) = q.gamma1 {
        if !(g1 > 0.0 && g1 < 1.0) {
            return Err(VerifyError::BadGamma1(g1));
        }
    }
    validate_common(data, &q.model, &q.coefficient, q.m, q.epsilon)?;
    Ok(())
}

/// Structural period checks (shared with client-side validation).
pub fn validate_periods(periods: &[Period], intervals: &[Interval]) -> Result<(), VerifyError> {
    if periods.is_empty() {
        return Err(VerifyError::NoPeriods);
    }
    if intervals.len() != periods.len() {
        return Err(VerifyError::IntervalCount {
            intervals: intervals.len(),
            periods: periods.len(),
        });
    }
    for (k, p) in periods.iter().enumerate() {
        if p.len() < 2 {
            return Err(VerifyError::ShortPeriod(k + 1));
        }
    }
    for w in periods.windows(2) {
        // sharing a boundary year is allowed; interior overlap is not
        if w[1].start_year < w[0].end_year {
            return Err(VerifyError::PeriodOrder);
        }
    }
    for iv in intervals {
        iv.validate()?;
    }
    Ok(())
}

/// Validate a trend query against a dataset without running it.
pub fn validate_trend_query(data: &PanelDataset, q: &TrendQuery) -> Result<(), VerifyError> {
    validate_periods(&q.periods, &q.intervals)?;
    validate_common(data, &q.model, &q.coefficient, q.m, q.epsilon)?;
    let observed = data.observed_years();
    for p in &q.periods {
        for y in p.years() {
            if !observed.contains(&y) {
                return Err(VerifyError::UnknownYear(y));
            }
        }
    }
    Ok(())
}

/// OLS slope of b on t.
pub fn trend_slope(points: &[(f64, f64)]) -> Result<f64, VerifyError> {
    if points.len() < 2 {
        return Err(VerifyError::DegenerateSlope);
    }
    let n = points.len() as f64;
    let tbar = points.iter().map(|(t, _)| t).sum::<f64>() / n;
    let bbar = points.iter().map(|(_, b)| b).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, b) in points {
        num += (t - tbar) * (b - bbar);
        den += (t - tbar) * (t - tbar);
    }
    if den == 0.0 {
        return Err(VerifyError::DegenerateSlope);
    }
    Ok(num / den)
}

/// Per-partition coefficient estimates for one partitioning of the data.
/// `None` marks a partition whose fit failed or dropped the coefficient.
fn partition_estimates(
    data: &PanelDataset,
    spec: &ModelSpec,
    coefficient: &str,
    plan: &crate::partition::PartitionPlan,
) -> Vec<Option<f64>> {
    (0..plan.m())
        .into_par_iter()
        .map(|l| {
            let rows = rows_of_partition(data, plan, l);
            let frame = match build_frame_subset(data, spec, &rows) {
                Ok(f) => f,
                Err(_) => return None,
            };
            match fit_ols(&frame) {
                Ok(fit) => fit.coefficient(coefficient),
                Err(_) => None,
            }
        })
        .collect()
}

fn rows_of_partition(
    data: &PanelDataset,
    plan: &crate::partition::PartitionPlan,
    l: u32,
) -> Vec<u32> {
    let mut rows = Vec::new();
    for e in plan.entities_in(l) {
        rows.extend_from_slice(data.rows_of_entity(e));
    }
    rows
}

/// Coefficient-interval verification over the full pipeline.
///
/// Order of operations: validate, debit (atomic, durable), partition, fit,
/// mark, release. A budget refusal happens before any partitioning or
/// fitting.
pub fn coef_verify(
    data: &PanelDataset,
    q: &CoefficientQuery,
    ctx: &VerifyContext,
) -> Result<VerificationRaw, VerifyError> {
    validate_coef_query(data, q)?;
    let spec = ModelSpec::parse(&q.model)?;
    let receipt = ctx.ledger.debit(
        ctx.analysis_id,
        ctx.scope.clone(),
        q.epsilon,
        &ctx.query_digest,
    )?;
    let plan = partition_entities(data, q.m, ctx.partition_seed)?;
    let estimates = partition_estimates(data, &spec, &q.coefficient, &plan);
    let marks = coef_marks(&estimates, q.interval);
    let mut noise = ctx.noise.for_release(receipt.entry_id);
    let label = format!("{} in {}", q.coefficient, q.interval);
    Ok(release_marks(label, marks, q.epsilon, &mut noise))
}

/// Composite combination: err if any period errs, else the product indicator.
pub fn combine_composite(per_period: &[Vec<Mark>]) -> Vec<Mark> {
    let m = per_period[0].len();
    (0..m)
        .map(|l| {
            let mut all_one = true;
            for marks in per_period {
                match marks[l] {
                    Mark::Err => return Mark::Err,
                    Mark::Zero => all_one = false,
                    Mark::One => {}
                }
            }
            if all_one {
                Mark::One
            } else {
                Mark::Zero
            }
        })
        .collect()
}

/// Longitudinal trend verification. One partition plan is shared across all
/// years of the verification; composite mode debits ε once, separate mode
/// debits K·ε atomically and yields one release per period.
pub fn trend_verify(
    data: &PanelDataset,
    q: &TrendQuery,
    ctx: &VerifyContext,
) -> Result<Vec<VerificationRaw>, VerifyError> {
    validate_trend_query(data, q)?;
    let spec = ModelSpec::parse(&q.model)?;
    let k = q.periods.len();
    let receipts = match q.mode {
        TrendMode::Composite => ctx.ledger.debit_many(
            ctx.analysis_id,
            ctx.scope.clone(),
            &[q.epsilon],
            &ctx.query_digest,
        )?,
        TrendMode::Separate => ctx.ledger.debit_many(
            ctx.analysis_id,
            ctx.scope.clone(),
            &vec![q.epsilon; k],
            &ctx.query_digest,
        )?,
    };
    let plan = partition_entities(data, q.m, ctx.partition_seed)?;

    // Per partition, per year: coefficient estimate b_{jtl}.
    let years: Vec<i32> = {
        let mut ys: Vec<i32> = q.periods.iter().flat_map(|p| p.years()).collect();
        ys.sort_unstable();
        ys.dedup();
        ys
    };
    let per_partition: Vec<BTreeMap<i32, Option<f64>>> = (0..plan.m())
        .into_par_iter()
        .map(|l| {
            let rows = rows_of_partition(data, &plan, l);
            let frame = match build_frame_subset(data, &spec, &rows) {
                Ok(f) => f,
                Err(_) => return years.iter().map(|&y| (y, None)).collect(),
            };
            let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
            for (i, &y) in frame.years.iter().enumerate() {
                by_year.entry(y).or_default().push(i);
            }
            years
                .iter()
                .map(|&y| {
                    let est = by_year.get(&y).and_then(|rows| {
                        let sub = frame.select_rows(rows);
                        fit_ols(&sub)
                            .ok()
                            .and_then(|f| f.coefficient(&q.coefficient))
                    });
                    (y, est)
                })
                .collect()
        })
        .collect();

    // Per period, per partition: slope marks.
    let per_period_marks: Vec<Vec<Mark>> = q
        .periods
        .iter()
        .zip(&q.intervals)
        .map(|(period, interval)| {
            per_partition
                .iter()
                .map(|fits| {
                    let mut points = Vec::with_capacity(period.len());
                    for y in period.years() {
                        match fits.get(&y).copied().flatten() {
                            Some(b) => points.push((y as f64, b)),
                            None => return Mark::Err,
                        }
                    }
                    match trend_slope(&points) {
                        Ok(slope) => {
                            if interval.contains(slope) {
                                Mark::One
                            } else {
                                Mark::Zero
                            }
                        }
                        Err(_) => Mark::Err,
                    }
                })
                .collect()
        })
        .collect();

    match q.mode {
        TrendMode::Composite => {
            let marks = combine_composite(&per_period_marks);
            let mut noise = ctx.noise.for_release(receipts[0].entry_id);
            let label = format!(
                "composite {}",
                q.periods
                    .iter()
                    .map(|p| p.label())
                    .collect::<Vec<_>>()
                    .join(",")
            );
            Ok(vec![release_marks(label, marks, q.epsilon, &mut noise)])
        }
        TrendMode::Separate => Ok(per_period_marks
            .into_iter()
            .zip(&q.periods)
            .zip(&receipts)
            .map(|((marks, period), receipt)| {
                let mut noise = ctx.noise.for_release(receipt.entry_id);
                release_marks(period.label(), marks, q.epsilon, &mut noise)
            })
            .collect()),
    }
}
