//! Privacy-budget ledger.
//!
//! Append-only: entries are journaled (newline-delimited JSON, fsynced)
//! before a release is computed, so a crash can waste budget but never leak
//! an unaccounted answer. Spent totals follow basic composition:
//!
//! * sequential — epsilons within an analysis add;
//! * parallel — entries scoped to *distinct levels of the one declared
//!   disjointness variable* form groups; each group sums internally and the
//!   groups combine by max. Any other scope claim composes sequentially;
//! * post-processing — free; nothing downstream of a released value debits.
//!
//! Cap checks allow `1e-9` absolute slack so that a cap divisible by the
//! query epsilon admits exactly `cap/epsilon` debits despite float rounding.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const CAP_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BudgetError {
    #[error("budget exhausted for analysis `{analysis_id}`: requested {requested}, remaining {remaining}")]
    Exhausted {
        analysis_id: String,
        requested: f64,
        remaining: f64,
    },
    #[error("global budget cap exhausted: requested {requested}, remaining {remaining}")]
    GlobalExhausted { requested: f64, remaining: f64 },
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("journal io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal corrupt at line {0}: {1}")]
    Corrupt(usize, String),
}

/// Scope declaration for parallel composition: one level of the declared
/// disjointness variable, e.g. ("gender", "M").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeKey {
    pub variable: String,
    pub level: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: u64,
    pub analysis_id: String,
    pub scope: Option<ScopeKey>,
    pub epsilon: f64,
    pub unix_time: u64,
    pub query_digest: String,
}

#[derive(Debug, Clone)]
pub struct BudgetPolicy {
    pub per_analysis_cap: f64,
    /// Variable whose levels are recognized as provably disjoint scopes.
    pub disjointness_variable: Option<String>,
    /// Optional stricter deployment mode: cap across all analyses too.
    pub global_cap: Option<f64>,
}

impl BudgetPolicy {
    pub fn per_analysis(cap: f64) -> Self {
        BudgetPolicy {
            per_analysis_cap: cap,
            disjointness_variable: None,
            global_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DebitReceipt {
    pub entry_id: u64,
    pub spent_after: f64,
    pub remaining: f64,
}

struct Inner {
    entries: Vec<LedgerEntry>,
    journal: Option<File>,
    next_id: u64,
}

/// The single mutable object in the system. All mutation goes through the
/// atomic check-and-debit section.
pub struct BudgetLedger {
    policy: BudgetPolicy,
    inner: Mutex<Inner>,
}

impl BudgetLedger {
    pub fn in_memory(policy: BudgetPolicy) -> Self {
        BudgetLedger {
            policy,
            inner: Mutex::new(Inner {
                entries: Vec::new(),
                journal: None,
                next_id: 1,
            }),
        }
    }

    /// Open (or create) a journal-backed ledger, replaying existing entries.
    ///
    /// A torn final line (crash mid-append) is tolerated and dropped; its
    /// debit was never acknowledged, so no release can depend on it.
    pub fn open(path: &Path, policy: BudgetPolicy) -> Result<Self, BudgetError> {
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LedgerEntry>(line) {
                    Ok(e) => entries.push(e),
                    Err(err) if i + 1 == lines.len() => {
                        // torn tail from a crash mid-write; ignore
                        let _ = err;
                    }
                    Err(err) => return Err(BudgetError::Corrupt(i + 1, err.to_string())),
                }
            }
        }
        let journal = OpenOptions::new().create(true).append(true).open(path)?;
        let next_id = entries.iter().map(|e| e.id).max().unwrap_or(0) + 1;
        Ok(BudgetLedger {
            policy,
            inner: Mutex::new(Inner {
                entries,
                journal: Some(journal),
                next_id,
            }),
        })
    }

    pub fn policy(&self) -> &BudgetPolicy {
        &self.policy
    }

    /// Atomic check-and-debit of a single epsilon.
    pub fn debit(
        &self,
        analysis_id: &str,
        scope: Option<ScopeKey>,
        epsilon: f64,
        query_digest: &str,
    ) -> Result<DebitReceipt, BudgetError> {
        Ok(self.debit_many(analysis_id, scope, &[epsilon], query_digest)?[0])
    }

    /// Atomically debit several epsilons (used by separate-mode trend
    /// verification: K releases admit or refuse as a unit).
    pub fn debit_many(
        &self,
        analysis_id: &str,
        scope: Option<ScopeKey>,
        epsilons: &[f64],
        query_digest: &str,
    ) -> Result<Vec<DebitReceipt>, BudgetError> {
        for &e in epsilons {
            if e.is_nan() || e <= 0.0 {
                return Err(BudgetError::BadEpsilon(e));
            }
        }
        let mut inner = self.inner.lock().unwrap();
        // Tentatively extend, recompute, check, then commit or roll back.
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let base_len = inner.entries.len();
        let mut ids = Vec::with_capacity(epsilons.len());
        for (i, &e) in epsilons.iter().enumerate() {
            let id = inner.next_id + i as u64;
            ids.push(id);
            inner.entries.push(LedgerEntry {
                id,
                analysis_id: analysis_id.to_string(),
                scope: scope.clone(),
                epsilon: e,
                unix_time: now,
                query_digest: query_digest.to_string(),
            });
        }
        let spent_after = spent_of(&inner.entries, &self.policy, analysis_id);
        if spent_after > self.policy.per_analysis_cap + CAP_SLACK {
            inner.entries.truncate(base_len);
            let remaining =
                self.policy.per_analysis_cap - spent_of(&inner.entries, &self.policy, analysis_id);
            return Err(BudgetError::Exhausted {
                analysis_id: analysis_id.to_string(),
                requested: epsilons.iter().sum(),
                remaining: remaining.max(0.0),
            });
        }
        if let Some(gcap) = self.policy.global_cap {
            let gspent = global_spent_of(&inner.entries, &self.policy);
            if gspent > gcap + CAP_SLACK {
                inner.entries.truncate(base_len);
                let remaining = gcap - global_spent_of(&inner.entries, &self.policy);
                return Err(BudgetError::GlobalExhausted {
                    requested: epsilons.iter().sum(),
                    remaining: remaining.max(0.0),
                });
            }
        }
        // Durably journal before acknowledging.
        if inner.journal.is_some() {
            let mut buf = String::new();
            for e in &inner.entries[base_len..] {
                buf.push_str(&serde_json::to_string(e).expect("ledger entry serializes"));
                buf.push('\n');
            }
            let journal = inner.journal.as_mut().unwrap();
            if let Err(err) = journal
                .write_all(buf.as_bytes())
                .and_then(|_| journal.sync_data())
            {
                inner.entries.truncate(base_len);
                return Err(BudgetError::Io(err));
            }
        }
        inner.next_id += epsilons.len() as u64;
        let remaining = (self.policy.per_analysis_cap - spent_after).max(0.0);
        Ok(ids
            .into_iter()
            .map(|entry_id| DebitReceipt {
                entry_id,
                spent_after,
                remaining,
            })
            .collect())
    }

    /// Spent epsilon for one analysis under the composition rules.
    pub fn spent(&self, analysis_id: &str) -> f64 {
        let inner = self.inner.lock().unwrap();
        spent_of(&inner.entries, &self.policy, analysis_id)
    }

    pub fn remaining(&self, analysis_id: &str) -> f64 {
        (self.policy.per_analysis_cap - self.spent(analysis_id)).max(0.0)
    }

    pub fn entries_for(&self, analysis_id: &str) -> Vec<LedgerEntry> {
        let inner = self.inner.lock().unwrap();
        inner
            .entries
            .iter()
            .filter(|e| e.analysis_id == analysis_id)
            .cloned()
            .collect()
    }

    pub fn entry_count(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    /// Replay check: recompute a spent total from the raw entry list.
    pub fn recompute_spent(entries: &[LedgerEntry], policy: &BudgetPolicy, analysis: &str) -> f64 {
        spent_of(entries, policy, analysis)
    }
}

fn spent_of(entries: &[LedgerEntry], policy: &BudgetPolicy, analysis_id: &str) -> f64 {
    let relevant = entries.iter().filter(|e| e.analysis_id == analysis_id);
    composed_total(relevant, policy)
}

fn global_spent_of(entries: &[LedgerEntry], policy: &BudgetPolicy) -> f64 {
    composed_total(entries.iter(), policy)
}

fn composed_total<'a>(
    entries: impl Iterator<Item = &'a LedgerEntry>,
    policy: &BudgetPolicy,
) -> f64 {
    let mut sequential = 0.0;
    let mut by_level: BTreeMap<&str, f64> = BTreeMap::new();
    for e in entries {
        match (&e.scope, &policy.disjointness_variable) {
            (Some(scope), Some(var)) if &scope.variable == var => {
                *by_level.entry(scope.level.as_str()).or_insert(0.0) += e.epsilon;
            }
            // Unscoped, or a scope we cannot prove disjoint: sequential.
            _ => sequential += e.epsilon,
        }
    }
    let parallel = by_level.values().cloned().fold(0.0, f64::max);
    sequential + parallel
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn gender_policy(cap: f64) -> BudgetPolicy {
        BudgetPolicy {
            per_analysis_cap: cap,
            disjointness_variable: Some("gender".into()),
            global_cap: None,
        }
    }

    fn scope(level: &str) -> Option<ScopeKey> {
        Some(ScopeKey {
            variable: "gender".into(),
            level: level.into(),
        })
    }

    #[test]
    fn sequential_composition_sums() {
        let l = BudgetLedger::in_memory(BudgetPolicy::per_analysis(10.0));
        l.debit("a", None, 1.0, "q1").unwrap();
        l.debit("a", None, 2.0, "q2").unwrap();
        assert!((l.spent("a") - 3.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_composition_takes_max() {
        let l = BudgetLedger::in_memory(gender_policy(10.0));
        l.debit("a", scope("male"), 1.0, "q1").unwrap();
        l.debit("a", scope("female"), 2.0, "q2").unwrap();
        assert!((l.spent("a") - 2.0).abs() < 1e-12);
    }

    #[test]
    fn undeclared_scope_variable_composes_sequentially() {
        let l = BudgetLedger::in_memory(gender_policy(10.0));
        l.debit(
            "a",
            Some(ScopeKey {
                variable: "race".into(),
                level: "black".into(),
            }),
            1.0,
            "q1",
        )
        .unwrap();
        l.debit("a", scope("female"), 2.0, "q2").unwrap();
        assert!((l.spent("a") - 3.0).abs() < 1e-12);
    }

    #[test]
    fn within_level_sums_then_max() {
        let l = BudgetLedger::in_memory(gender_policy(10.0));
        l.debit("a", scope("male"), 1.0, "q1").unwrap();
        l.debit("a", scope("male"), 1.5, "q2").unwrap();
        l.debit("a", scope("female"), 2.0, "q3").unwrap();
        assert!((l.spent("a") - 2.5).abs() < 1e-12);
    }

    #[test]
    fn analyses_are_separate() {
        let l = BudgetLedger::in_memory(BudgetPolicy::per_analysis(3.0));
        l.debit("a", None, 3.0, "q").unwrap();
        assert_eq!(l.spent("b"), 0.0);
        l.debit("b", None, 3.0, "q").unwrap();
    }

    #[test]
    fn rejection_is_atomic_and_leaves_no_trace() {
        let l = BudgetLedger::in_memory(BudgetPolicy::per_analysis(2.0));
        l.debit("a", None, 1.5, "q1").unwrap();
        let before = l.entry_count();
        let err = l.debit("a", None, 1.0, "q2").unwrap_err();
        match err {
            BudgetError::Exhausted {
                requested,
                remaining,
                ..
            } => {
                assert_eq!(requested, 1.0);
                assert!((remaining - 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected: {other}"),
        }
        assert_eq!(l.entry_count(), before);
        assert!((l.spent("a") - 1.5).abs() < 1e-12);
    }

    #[test]
    fn debit_many_is_all_or_nothing() {
        let l = BudgetLedger::in_memory(BudgetPolicy::per_analysis(2.5));
        let err = l.debit_many("a", None, &[1.0, 1.0, 1.0], "q").unwrap_err();
        assert!(matches!(err, BudgetError::Exhausted { .. }));
        assert_eq!(l.entry_count(), 0);
        let receipts = l.debit_many("a", None, &[1.0, 1.0], "q").unwrap();
        assert_eq!(receipts.len(), 2);
        assert_ne!(receipts[0].entry_id, receipts[1].entry_id);
    }

    #[test]
    fn concurrent_debits_admit_exactly_cap_over_epsilon() {
        let l = Arc::new(BudgetLedger::in_memory(BudgetPolicy::per_analysis(5.0)));
        let mut handles = Vec::new();
        for i in 0..100 {
            let l = Arc::clone(&l);
            handles.push(std::thread::spawn(move || {
                l.debit("a", None, 0.1, &format!("q{i}")).is_ok()
            }));
        }
        let successes = handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .filter(|&ok| ok)
            .count();
        assert_eq!(successes, 50);
    }

    #[test]
    fn replay_equals_incremental() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.ndjson");
        let policy = gender_policy(10.0);
        {
            let l = BudgetLedger::open(&path, policy.clone()).unwrap();
            l.debit("a", scope("male"), 1.0, "q1").unwrap();
            l.debit("a", scope("female"), 2.0, "q2").unwrap();
            l.debit("a", None, 0.5, "q3").unwrap();
            assert!((l.spent("a") - 2.5).abs() < 1e-12);
        }
        // crash and replay
        let l = BudgetLedger::open(&path, policy).unwrap();
        assert!((l.spent("a") - 2.5).abs() < 1e-12);
        assert_eq!(l.entry_count(), 3);
        // entry ids continue after replay
        let r = l.debit("a", None, 0.25, "q4").unwrap();
        assert_eq!(r.entry_id, 4);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.ndjson");
        {
            let l = BudgetLedger::open(&path, BudgetPolicy::per_analysis(10.0)).unwrap();
            l.debit("a", None, 1.0, "q1").unwrap();
        }
        // simulate a crash mid-append
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"id\":2,\"analysis_id\":\"a\",\"sco")
            .unwrap();
        drop(f);
        let l = BudgetLedger::open(&path, BudgetPolicy::per_analysis(10.0)).unwrap();
        assert_eq!(l.entry_count(), 1);
        assert!((l.spent("a") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_epsilon_rejected() {
        let l = BudgetLedger::in_memory(BudgetPolicy::per_analysis(1.0));
        assert!(matches!(
            l.debit("a", None, 0.0, "q"),
            Err(BudgetError::BadEpsilon(_))
        ));
        assert!(matches!(
            l.debit("a", None, -1.0, "q"),
            Err(BudgetError::BadEpsilon(_))
        ));
    }

    #[test]
    fn global_cap_mode() {
        let l = BudgetLedger::in_memory(BudgetPolicy {
            per_analysis_cap: 10.0,
            disjointness_variable: None,
            global_cap: Some(3.0),
        });
        l.debit("a", None, 2.0, "q").unwrap();
        l.debit("b", None, 1.0, "q").unwrap();
        assert!(matches!(
            l.debit("c", None, 0.5, "q"),
            Err(BudgetError::GlobalExhausted { .. })
        ));
    }
}
