//! Plain-text tables for releases and budget views. The release layout
//! mirrors the familiar verification-table shape: one row per released
//! measure with its posterior mode and credible interval.

use paneldp_core::posterior;
use paneldp_core::wire::ReleaseEnvelope;

pub fn release_table(release: &ReleaseEnvelope, gamma1: Option<f64>) {
    println!(
        "{:<34} {:>6} {:>9} {:>8} {:>17}",
        "Measure", "M", "S_noisy", "r-hat", "95% CI"
    );
    for r in &release.results {
        let ci = format!("[{:.3}, {:.3}]", r.posterior.ci95.0, r.posterior.ci95.1);
        println!(
            "{:<34} {:>6} {:>9.2} {:>8.3} {:>17}{}",
            truncate(&r.label, 34),
            r.m,
            r.s_noisy,
            r.posterior.mode,
            ci,
            if r.error_variant {
                format!(
                    "  (error variant, errs_noisy {:.2})",
                    r.err_noisy.unwrap_or(0.0)
                )
            } else {
                String::new()
            }
        );
        if let Some(g1) = gamma1 {
            // client-side decision: rebuild the posterior from the released
            // values (free post-processing) and integrate the grid; the
            // error variant noised at scale 2/ε means effective ε/2
            let eff = if r.error_variant {
                r.epsilon / 2.0
            } else {
                r.epsilon
            };
            let post = posterior::posterior_r(r.s_noisy, r.m, eff);
            let mass = post.mass_at_or_above(g1);
            let theta = posterior::theta_decision(&post, g1).unwrap_or(0);
            println!("    theta_N({g1}) = {theta}   [P(r >= {g1}) = {mass:.3}]");
        }
    }
    println!(
        "spent epsilon {:.3}; remaining budget {:.3}; digest {}",
        release.epsilon_spent, release.remaining_budget, release.query_digest
    );
}

pub fn budget_table(status: &serde_json::Value) {
    println!(
        "analysis {}  spent {:.3} / cap {:.3}  remaining {:.3}",
        status["analysis_id"].as_str().unwrap_or("?"),
        status["spent"].as_f64().unwrap_or(0.0),
        status["cap"].as_f64().unwrap_or(0.0),
        status["remaining"].as_f64().unwrap_or(0.0),
    );
    if let Some(entries) = status["entries"].as_array() {
        if !entries.is_empty() {
            println!("{:<6} {:>8}  {:<20} digest", "entry", "epsilon", "scope");
            for e in entries {
                let scope = match (&e["scope"]["variable"], &e["scope"]["level"]) {
                    (serde_json::Value::String(v), serde_json::Value::String(l)) => {
                        format!("{v}={l}")
                    }
                    _ => "-".to_string(),
                };
                println!(
                    "{:<6} {:>8.3}  {:<20} {}",
                    e["entry_id"].as_u64().unwrap_or(0),
                    e["epsilon"].as_f64().unwrap_or(0.0),
                    scope,
                    e["query_digest"].as_str().unwrap_or("")
                );
            }
        }
    }
}

fn truncate(s: &str, width: usize) -> String {
    if s.len() <= width {
        s.to_string()
    } else {
        format!("{}…", &s[..width.saturating_sub(1)])
    }
}
