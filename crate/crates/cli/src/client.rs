//! Remote commands: build envelopes, validate them client-side, submit, and
//! render releases.

use paneldp_core::verify::{CoefficientQuery, Interval, Period, TrendMode, TrendQuery};
use paneldp_core::wire::{validate_envelope, QueryEnvelope, QueryPayload, ReleaseEnvelope};

use crate::render;
use crate::{CliError, ClientConfig, VerifyCoefArgs, VerifyTrendArgs};

fn post_envelope(
    config: &ClientConfig,
    envelope: &QueryEnvelope,
) -> Result<ReleaseEnvelope, CliError> {
    validate_envelope(envelope).map_err(|e| CliError::Validation(e.to_string()))?;
    let url = format!("{}/v1/verify", config.server()?.trim_end_matches('/'));
    let client = reqwest::blocking::Client::new();
    let resp = client
        .post(url)
        .bearer_auth(config.token()?)
        .json(envelope)
        .send()
        .map_err(|e| CliError::Transport(e.to_string()))?;
    let status = resp.status();
    if status.is_success() {
        return resp
            .json::<ReleaseEnvelope>()
            .map_err(|e| CliError::Transport(format!("bad response body: {e}")));
    }
    let body: serde_json::Value = resp
        .json()
        .map_err(|e| CliError::Transport(format!("bad error body: {e}")))?;
    let code = body["code"].as_str().unwrap_or("");
    let message = body["error"].as_str().unwrap_or("unknown server error");
    if code == "budget_exhausted" {
        let remaining = body["remaining_budget"].as_f64().unwrap_or(0.0);
        return Err(CliError::Budget(format!(
            "{message} (remaining budget: {remaining})"
        )));
    }
    Err(CliError::Validation(format!("server {status}: {message}")))
}

pub fn verify_coef(config: &ClientConfig, args: VerifyCoefArgs) -> Result<(), CliError> {
    let model = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Validation(format!("cannot read model file: {e}")))?;
    // parse locally first so a typo never reaches the server
    paneldp_core::formula::ModelSpec::parse(&model)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let interval = match (args.gamma0, &args.interval) {
        (Some(g0), None) => Interval::up_to(g0),
        (None, Some(s)) => crate::parse_interval(s)?,
        (None, None) => return Err(CliError::Validation("supply --gamma0 or --interval".into())),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let epsilon = args.epsilon.unwrap_or(config.default_epsilon);
    let m = args.m.unwrap_or(config.default_m);
    let defaults_used = args.epsilon.is_none() || args.m.is_none();
    let envelope = QueryEnvelope {
        analysis_id: config.analysis()?.to_string(),
        payload: QueryPayload::CoefVerify(CoefficientQuery {
            model,
            coefficient: args.coefficient.clone(),
            interval,
            m,
            epsilon,
            gamma1: args.gamma1,
        }),
        scope_key: None,
        include_density: args.density,
    };
    let release = post_envelope(config, &envelope)?;
    if config.json {
        println!("{}", serde_json::to_string_pretty(&release).unwrap());
    } else {
        if defaults_used {
            println!("using epsilon = {epsilon}, M = {m}");
        }
        render::release_table(&release, args.gamma1);
    }
    Ok(())
}

pub fn parse_periods(s: &str) -> Result<Vec<Period>, CliError> {
    s.split(',')
        .map(|p| {
            let (a, b) = p.trim().split_once('-').ok_or_else(|| {
                CliError::Validation(format!("bad period `{p}` (want start-end)"))
            })?;
            let start_year: i32 = a
                .parse()
                .map_err(|_| CliError::Validation(format!("bad year `{a}`")))?;
            let end_year: i32 = b
                .parse()
                .map_err(|_| CliError::Validation(format!("bad year `{b}`")))?;
            Ok(Period {
                start_year,
                end_year,
            })
        })
        .collect()
}

pub fn verify_trend(config: &ClientConfig, args: VerifyTrendArgs) -> Result<(), CliError> {
    let model = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Validation(format!("cannot read model file: {e}")))?;
    paneldp_core::formula::ModelSpec::parse(&model)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let periods = parse_periods(&args.periods)?;
    let intervals: Vec<Interval> = args
        .intervals
        .split(',')
        .map(|s| crate::parse_interval(s.trim()))
        .collect::<Result<_, _>>()?;
    let mode = match args.mode.as_str() {
        "separate" => TrendMode::Separate,
        "composite" => TrendMode::Composite,
        other => {
            return Err(CliError::Validation(format!(
                "mode must be separate or composite, got `{other}`"
            )))
        }
    };
    let envelope = QueryEnvelope {
        analysis_id: config.analysis()?.to_string(),
        payload: QueryPayload::TrendVerify(TrendQuery {
            model,
            coefficient: args.coefficient.clone(),
            periods,
            intervals,
            mode,
            m: args.m.unwrap_or(config.default_m),
            epsilon: args.epsilon.unwrap_or(config.default_epsilon),
        }),
        scope_key: None,
        include_density: args.density,
    };
    let release = post_envelope(config, &envelope)?;
    if config.json {
        println!("{}", serde_json::to_string_pretty(&release).unwrap());
    } else {
        render::release_table(&release, None);
    }
    Ok(())
}

pub fn budget(config: &ClientConfig) -> Result<(), CliError> {
    let url = format!(
        "{}/v1/budget/{}",
        config.server()?.trim_end_matches('/'),
        config.analysis()?
    );
    let client = reqwest::blocking::Client::new();
    let resp = client
        .get(url)
        .bearer_auth(config.token()?)
        .send()
        .map_err(|e| CliError::Transport(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(CliError::Validation(format!(
            "server returned {}",
            resp.status()
        )));
    }
    let status: serde_json::Value = resp
        .json()
        .map_err(|e| CliError::Transport(e.to_string()))?;
    if config.json {
        println!("{}", serde_json::to_string_pretty(&status).unwrap());
    } else {
        render::budget_table(&status);
    }
    Ok(())
}
