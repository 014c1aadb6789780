//! Local sandbox commands. None of these open a network connection or touch
//! any server budget: they operate on files the analyst already has
//! (typically the released synthetic panel).

use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use paneldp_core::budget::{BudgetLedger, BudgetPolicy};
use paneldp_core::dp::FixedNoise;
use paneldp_core::formula::ModelSpec;
use paneldp_core::frame::build_frame;
use paneldp_core::panel::PanelDataset;
use paneldp_core::posterior::posterior_r;
use paneldp_core::regress::{clustered_se, fit_ols, fit_per_year};
use paneldp_core::schema::Schema;
use paneldp_core::synth::{synthesize_sequential, SynthesisPlan};
use paneldp_core::verify::{coef_verify, CoefficientQuery, Interval, VerifyContext};

use crate::{CliError, ClientConfig};

fn load_panel(data: &Path, schema: &Path) -> Result<PanelDataset, CliError> {
    let schema_text = std::fs::read_to_string(schema)
        .map_err(|e| CliError::Validation(format!("cannot read schema: {e}")))?;
    let schema = Schema::parse(&schema_text).map_err(|e| CliError::Validation(e.to_string()))?;
    PanelDataset::load_csv(data, schema).map_err(|e| CliError::Validation(e.to_string()))
}

fn load_model(path: &Path) -> Result<ModelSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read model file: {e}")))?;
    ModelSpec::parse(&text).map_err(|e| CliError::Validation(e.to_string()))
}

#[derive(Args)]
pub struct SynthArgs {
    /// Training panel CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema document for the training panel.
    #[arg(long)]
    schema: PathBuf,
    /// Synthesis plan document.
    #[arg(long)]
    plan: PathBuf,
    /// Number of synthetic entities to draw.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

pub fn synth(config: &ClientConfig, args: SynthArgs) -> Result<(), CliError> {
    let data = load_panel(&args.data, &args.schema)?;
    let plan_text = std::fs::read_to_string(&args.plan)
        .map_err(|e| CliError::Validation(format!("cannot read plan: {e}")))?;
    let plan = SynthesisPlan::parse(&plan_text).map_err(|e| CliError::Validation(e.to_string()))?;
    plan.validate(data.schema())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let synthetic = synthesize_sequential(&data, &plan, args.count, &mut rng)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    synthetic
        .export_csv(&args.out)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if config.json {
        println!(
            "{}",
            serde_json::json!({
                "entities": synthetic.n_entities(),
                "rows": synthetic.n_rows(),
                "out": args.out,
            })
        );
    } else {
        println!(
            "wrote {} synthetic entities ({} rows) to {}",
            synthetic.n_entities(),
            synthetic.n_rows(),
            args.out.display()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Local (synthetic) panel CSV to calibrate on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    coefficient: String,
    #[arg(long, allow_hyphen_values = true)]
    gamma0: Option<f64>,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "gamma0")]
    interval: Option<String>,
    /// Comma-separated candidate partition counts, e.g. 10,50,200.
    #[arg(long)]
    m: String,
    #[arg(long, default_value_t = 100)]
    replications: u32,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Monte Carlo sweep over candidate M on a local panel: the full
/// verification pipeline runs with locally drawn noise; no server budget is
/// consumed and no connection is opened.
pub fn calibrate_m(config: &ClientConfig, args: CalibrateArgs) -> Result<(), CliError> {
    let data = load_panel(&args.data, &args.schema)?;
    let model_text = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Validation(format!("cannot read model file: {e}")))?;
    ModelSpec::parse(&model_text).map_err(|e| CliError::Validation(e.to_string()))?;
    let interval = match (args.gamma0, &args.interval) {
        (Some(g0), None) => Interval::up_to(g0),
        (None, Some(s)) => crate::parse_interval(s)?,
        _ => return Err(CliError::Validation("supply --gamma0 or --interval".into())),
    };
    let epsilon = args.epsilon.unwrap_or(config.default_epsilon);
    let candidates: Vec<u32> = args
        .m
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("bad M `{s}`")))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for &m in &candidates {
        if m as usize > data.n_entities() {
            return Err(CliError::Validation(format!(
                "M = {m} exceeds entity count {}",
                data.n_entities()
            )));
        }
        let mut modes = Vec::with_capacity(args.replications as usize);
        for rep in 0..args.replications {
            let q = CoefficientQuery {
                model: model_text.clone(),
                coefficient: args.coefficient.clone(),
                interval,
                m,
                epsilon,
                gamma1: None,
            };
            // fresh local ledger per replication: calibration is free
            let ledger = BudgetLedger::in_memory(BudgetPolicy::per_analysis(f64::INFINITY));
            let noise = FixedNoise::seeded(
                args.seed ^ (u64::from(m) << 32) ^ u64::from(rep).wrapping_mul(0x9e3779b9),
            );
            let ctx = VerifyContext {
                ledger: &ledger,
                analysis_id: "calibration",
                scope: None,
                noise: &noise,
                partition_seed: args
                    .seed
                    .wrapping_add(u64::from(m))
                    .wrapping_add(u64::from(rep).wrapping_mul(7919)),
                query_digest: "local".into(),
            };
            let raw =
                coef_verify(&data, &q, &ctx).map_err(|e| CliError::Validation(e.to_string()))?;
            let eff = if raw.used_error_variant() {
                epsilon / 2.0
            } else {
                epsilon
            };
            modes.push(posterior_r(raw.s_noisy(), raw.m(), eff).mode);
        }
        modes.sort_by(f64::total_cmp);
        let mean = modes.iter().sum::<f64>() / modes.len() as f64;
        let q = |p: f64| modes[((modes.len() - 1) as f64 * p).round() as usize];
        rows.push(serde_json::json!({
            "m": m,
            "replications": args.replications,
            "mean_mode": mean,
            "p10": q(0.10),
            "median": q(0.50),
            "p90": q(0.90),
            "frac_above_0.9": modes.iter().filter(|&&x| x >= 0.9).count() as f64 / modes.len() as f64,
        }));
    }
    if config.json {
        println!("{}", serde_json::to_string_pretty(&rows).unwrap());
    } else {
        println!(
            "{:>6} {:>6} {:>10} {:>8} {:>8} {:>8} {:>10}",
            "M", "reps", "mean r-hat", "p10", "median", "p90", ">=0.9"
        );
        for r in &rows {
            println!(
                "{:>6} {:>6} {:>10.3} {:>8.3} {:>8.3} {:>8.3} {:>10.2}",
                r["m"].as_u64().unwrap(),
                r["replications"].as_u64().unwrap(),
                r["mean_mode"].as_f64().unwrap(),
                r["p10"].as_f64().unwrap(),
                r["median"].as_f64().unwrap(),
                r["p90"].as_f64().unwrap(),
                r["frac_above_0.9"].as_f64().unwrap()
            );
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Also compute cluster-robust standard errors (entity clusters).
    #[arg(long)]
    clustered: bool,
    /// Fit each year separately instead of pooling.
    #[arg(long)]
    per_year: bool,
}

/// Local regression harness: the analysis an analyst would run on the
/// synthetic panel before asking for verification.
pub fn fit(config: &ClientConfig, args: FitArgs) -> Result<(), CliError> {
    let data = load_panel(&args.data, &args.schema)?;
    let spec = load_model(&args.model)?;
    let frame = build_frame(&data, &spec).map_err(|e| CliError::Validation(e.to_string()))?;
    if args.per_year {
        let mut years: Vec<i32> = frame.years.clone();
        years.sort_unstable();
        years.dedup();
        let path = fit_per_year(&frame, &years).map_err(|e| CliError::Validation(e.to_string()))?;
        if config.json {
            let rows: Vec<serde_json::Value> = path
                .entries
                .iter()
                .map(|e| {
                    serde_json::json!({
                        "year": e.year,
                        "estimable": e.estimable(),
                        "coefficients": e.fit.as_ref().map(|f| f.coefficients.clone()),
                        "error": e.error,
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows).unwrap());
        } else {
            for e in &path.entries {
                match &e.fit {
                    Some(f) => {
                        let coefs: Vec<String> = f
                            .coefficients
                            .iter()
                            .map(|(n, b)| format!("{n}={b:.5}"))
                            .collect();
                        println!("{}: {}", e.year, coefs.join("  "));
                    }
                    None => println!(
                        "{}: inestimable ({})",
                        e.year,
                        e.error.as_deref().unwrap_or("unknown")
                    ),
                }
            }
        }
        return Ok(());
    }
    let mut fit = fit_ols(&frame).map_err(|e| CliError::Validation(e.to_string()))?;
    if args.clustered {
        let se = clustered_se(&frame, &fit).map_err(|e| CliError::Validation(e.to_string()))?;
        fit.se_clustered = Some(se);
    }
    if config.json {
        println!(
            "{}",
            serde_json::json!({
                "n_rows": fit.n_rows,
                "residual_variance": fit.residual_variance,
                "coefficients": fit.coefficients,
                "dropped_columns": fit.dropped_columns,
                "se_clustered": fit.se_clustered,
            })
        );
    } else {
        println!(
            "n = {}, residual variance = {:.6}",
            fit.n_rows, fit.residual_variance
        );
        println!(
            "{:<24} {:>12} {:>12}",
            "Coefficient", "Estimate", "Clust. SE"
        );
        for (i, (name, b)) in fit.coefficients.iter().enumerate() {
            let se = fit
                .se_clustered
                .as_ref()
                .map(|s| format!("{:.6}", s[i].1))
                .unwrap_or_else(|| "-".into());
            println!("{:<24} {:>12.6} {:>12}", name, b, se);
        }
        if !fit.dropped_columns.is_empty() {
            println!("dropped (collinear): {}", fit.dropped_columns.join(", "));
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct FrameArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn frame(config: &ClientConfig, args: FrameArgs) -> Result<(), CliError> {
    let data = load_panel(&args.data, &args.schema)?;
    let spec = load_model(&args.model)?;
    let frame = build_frame(&data, &spec).map_err(|e| CliError::Validation(e.to_string()))?;
    frame
        .export_csv(&args.out)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if config.json {
        println!(
            "{}",
            serde_json::json!({ "rows": frame.n_rows(), "columns": frame.columns.len(), "out": args.out })
        );
    } else {
        println!(
            "wrote frame with {} rows, {} design columns to {}",
            frame.n_rows(),
            frame.columns.len(),
            args.out.display()
        );
        for line in &frame.provenance {
            println!("  {line}");
        }
    }
    Ok(())
}
