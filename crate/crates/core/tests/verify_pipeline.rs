//! Cross-module properties of the verification pipeline: entity-level
//! sensitivity, the protected boundary, and Monte Carlo behavior of the
//! coefficient measure on simulated panels.

mod common;

use common::{gap_panel, SIM_MODEL};
use paneldp_core::budget::{BudgetLedger, BudgetPolicy};
use paneldp_core::dp::FixedNoise;
use paneldp_core::posterior::posterior_r;
use paneldp_core::verify::{coef_verify, CoefficientQuery, Interval, VerifyContext};
use paneldp_core::wire::{PosteriorSummary, ReleaseEnvelope, VerificationRelease};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ctx<'a>(ledger: &'a BudgetLedger, noise: &'a FixedNoise, seed: u64) -> VerifyContext<'a> {
    VerifyContext {
        ledger,
        analysis_id: "test",
        scope: None,
        noise,
        partition_seed: seed,
        query_digest: "digest".into(),
    }
}

fn quick_query(m: u32) -> CoefficientQuery {
    CoefficientQuery {
        model: SIM_MODEL.into(),
        coefficient: "x".into(),
        interval: Interval::up_to(0.0),
        m,
        epsilon: 1.0,
        gamma1: None,
    }
}

#[test]
fn released_structures_never_carry_the_exact_count() {
    // Serialize releases built from the noisy fields and scan every numeric
    // leaf: none may equal the exact S unless S coincides with the rounded
    // noisy count (or with structurally public values like M and epsilon).
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let data = gap_panel(60, 2, -0.02, 0.3, 99);
    for trial in 0..1000 {
        let q = quick_query(rng.gen_range(2..=10));
        let ledger = BudgetLedger::in_memory(BudgetPolicy::per_analysis(1e9));
        let noise = FixedNoise::seeded(rng.gen());
        let c = ctx(&ledger, &noise, rng.gen());
        let raw = coef_verify(&data, &q, &c).unwrap();
        let s = raw.true_count();

        let post = posterior_r(raw.s_noisy(), raw.m(), q.epsilon);
        let envelope = ReleaseEnvelope {
            analysis_id: "test".into(),
            query_digest: "digest".into(),
            unix_time: 0,
            epsilon_spent: raw.epsilon_spent(),
            remaining_budget: ledger.remaining("test"),
            scope_applied: None,
            results: vec![VerificationRelease {
                label: raw.label().to_string(),
                m: raw.m(),
                epsilon: q.epsilon,
                s_noisy: raw.s_noisy(),
                err_noisy: raw.err_noisy(),
                error_variant: raw.used_error_variant(),
                posterior: PosteriorSummary::from_posterior(&post, false),
            }],
        };
        let json = serde_json::to_value(&envelope).unwrap();

        // 1. the wire surface exposes only whitelisted fields — in
        //    particular nothing named after the exact count or the marks
        let allowed = [
            "analysis_id",
            "query_digest",
            "unix_time",
            "epsilon_spent",
            "remaining_budget",
            "scope_applied",
            "results",
            "label",
            "m",
            "epsilon",
            "s_noisy",
            "err_noisy",
            "error_variant",
            "posterior",
            "mode",
            "mean",
            "ci95",
            "density",
        ];
        let mut keys = Vec::new();
        collect_keys(&json, &mut keys);
        for k in &keys {
            assert!(
                allowed.contains(&k.as_str()),
                "trial {trial}: unexpected wire field `{k}`"
            );
        }

        // 2. the only count-bearing fields are the noisy releases; they may
        //    equal S only by the rounding coincidence the invariant allows
        let rounded_noisy = raw.s_noisy().round();
        if s as f64 != rounded_noisy {
            let noisy = json["results"][0]["s_noisy"].as_f64().unwrap();
            assert!(
                noisy != s as f64,
                "trial {trial}: exact S={s} appeared as the released count"
            );
        }
    }
}

fn collect_keys(v: &serde_json::Value, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Array(items) => items.iter().for_each(|i| collect_keys(i, out)),
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                out.push(k.clone());
                collect_keys(val, out);
            }
        }
        _ => {}
    }
}

#[test]
fn strong_gap_counts_all_partitions_in_200_replications() {
    // 100,000 entities, 24 years, true gap -0.02, sigma 0.3, M = 50,
    // gamma0 = -0.01: the exact count should hit S = M in at least 95%
    // of replications.
    let reps = 200;
    let mut hits = 0;
    for rep in 0..reps {
        let data = gap_panel(100_000, 24, -0.02, 0.3, 10_000 + rep);
        let ledger = BudgetLedger::in_memory(BudgetPolicy::per_analysis(1e9));
        let noise = FixedNoise::noiseless();
        let c = ctx(&ledger, &noise, 777 + rep);
        let q = CoefficientQuery {
            model: SIM_MODEL.into(),
            coefficient: "x".into(),
            interval: Interval::up_to(-0.01),
            m: 50,
            epsilon: 1.0,
            gamma1: None,
        };
        let raw = coef_verify(&data, &q, &c).unwrap();
        if raw.true_count() == 50 {
            hits += 1;
        }
    }
    let frac = hits as f64 / reps as f64;
    assert!(frac >= 0.95, "S = M in only {frac:.3} of replications");
}
