//! End-to-end CLI tests: local sandbox commands run the binary on files;
//! remote commands run it against an in-process server.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use paneldp_server::{build_router, NoiseMode, ServerConfig, ServerState};

const BIN: &str = env!("CARGO_BIN_EXE_paneldp");

const SCHEMA_TEXT: &str = "\
variable id entity
variable year year
variable agency cat levels=A,B
variable gender cat levels=M,F
variable pay num
";

fn training_csv() -> String {
    let mut out = String::from("id,year,agency,gender,pay\n");
    for e in 0..120 {
        let agency = if e % 2 == 0 { "A" } else { "B" };
        let gender = if e % 10 < 6 { "M" } else { "F" };
        for year in 2000..2006 {
            // log-pay gap of -0.05 for F, strong signal at sigma ~ 0.01
            let noise = ((e * 37 + year as usize * 11) % 101) as f64 / 101.0 - 0.5;
            let logpay = 10.0
                + if gender == "F" { -0.05 } else { 0.0 }
                + if agency == "B" { 0.01 } else { 0.0 }
                + 0.01 * noise;
            out.push_str(&format!("e{e},{year},{agency},{gender},{}\n", logpay.exp()));
        }
    }
    out
}

const MODEL_TEXT: &str = "\
response pay
transform log
dummy gender ref=M
filter pay > 0
";

const PLAN_TEXT: &str = "\
career agency
constant gender cond=agency
lag-one pay cond=agency,gender
min_leaf 5
alpha 0
";

fn write_workspace(dir: &Path) {
    std::fs::write(dir.join("schema.txt"), SCHEMA_TEXT).unwrap();
    std::fs::write(dir.join("train.csv"), training_csv()).unwrap();
    std::fs::write(dir.join("model.txt"), MODEL_TEXT).unwrap();
    std::fs::write(dir.join("plan.txt"), PLAN_TEXT).unwrap();
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

#[test]
fn synth_then_calibrate_locally_without_network() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let out_path = dir.path().join("synth.csv");

    let out = run(&[
        "synth",
        "--data",
        dir.path().join("train.csv").to_str().unwrap(),
        "--schema",
        dir.path().join("schema.txt").to_str().unwrap(),
        "--plan",
        dir.path().join("plan.txt").to_str().unwrap(),
        "--count",
        "300",
        "--seed",
        "7",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "synth failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_path.exists());
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("id,year,agency,gender"));

    // calibrate on the synthetic panel; config points at an unroutable
    // server — the command must succeed anyway because it never connects
    let config_path = dir.path().join("client.toml");
    std::fs::write(
        &config_path,
        "server = \"http://192.0.2.1:1\"\ntoken = \"t\"\nanalysis = \"a\"\n",
    )
    .unwrap();
    let calibrate = |seed: &str| {
        run(&[
            "--config",
            config_path.to_str().unwrap(),
            "calibrate-m",
            "--data",
            out_path.to_str().unwrap(),
            "--schema",
            dir.path().join("schema.txt").to_str().unwrap(),
            "--model",
            dir.path().join("model.txt").to_str().unwrap(),
            "--coefficient",
            "gender=F",
            "--gamma0",
            "-0.01",
            "--m",
            "5,10",
            "--replications",
            "20",
            "--epsilon",
            "1",
            "--seed",
            seed,
        ])
    };
    let a = calibrate("3");
    assert!(
        a.status.success(),
        "calibrate failed: {}",
        String::from_utf8_lossy(&a.stderr)
    );
    let table = String::from_utf8_lossy(&a.stdout).to_string();
    assert!(
        table.contains("mean r-hat"),
        "table header missing: {table}"
    );
    // deterministic under a fixed seed
    let b = calibrate("3");
    assert_eq!(a.stdout, b.stdout);
    let c = calibrate("4");
    assert_ne!(a.stdout, c.stdout, "different seed should reshuffle noise");
}

#[test]
fn calibrate_zero_signal_centers_on_half() {
    // true coefficient exactly at the threshold: partition estimates
    // straddle it symmetrically, so posterior modes hover near 0.5
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("schema.txt"), SCHEMA_TEXT).unwrap();
    let mut csv = String::from("id,year,agency,gender,pay\n");
    for e in 0..600 {
        let gender = if e % 2 == 0 { "M" } else { "F" };
        for year in 2000..2004 {
            let noise = ((e * 37 + year as usize * 11) % 101) as f64 / 101.0 - 0.5;
            let logpay = 10.0 + 0.6 * noise; // no gender effect at all
            out_push(&mut csv, e, year, gender, logpay);
        }
    }
    std::fs::write(dir.path().join("null.csv"), csv).unwrap();
    std::fs::write(dir.path().join("model.txt"), MODEL_TEXT).unwrap();
    let out = run(&[
        "--json",
        "calibrate-m",
        "--data",
        dir.path().join("null.csv").to_str().unwrap(),
        "--schema",
        dir.path().join("schema.txt").to_str().unwrap(),
        "--model",
        dir.path().join("model.txt").to_str().unwrap(),
        "--coefficient",
        "gender=F",
        "--gamma0",
        "0.0",
        "--m",
        "5,10,20",
        "--replications",
        "20",
        "--epsilon",
        "1",
        "--seed",
        "5",
    ]);
    assert!(
        out.status.success(),
        "calibrate failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for row in rows.as_array().unwrap() {
        let mean = row["mean_mode"].as_f64().unwrap();
        assert!(
            (0.3..=0.7).contains(&mean),
            "M={} mean mode {mean} not near 0.5",
            row["m"]
        );
    }
}

fn out_push(csv: &mut String, e: usize, year: i32, gender: &str, logpay: f64) {
    csv.push_str(&format!("e{e},{year},A,{gender},{}\n", logpay.exp()));
}

#[test]
fn fit_and_frame_locally() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let out = run(&[
        "fit",
        "--data",
        dir.path().join("train.csv").to_str().unwrap(),
        "--schema",
        dir.path().join("schema.txt").to_str().unwrap(),
        "--model",
        dir.path().join("model.txt").to_str().unwrap(),
        "--clustered",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("gender=F"), "coefficient table: {text}");

    let json_out = run(&[
        "--json",
        "fit",
        "--data",
        dir.path().join("train.csv").to_str().unwrap(),
        "--schema",
        dir.path().join("schema.txt").to_str().unwrap(),
        "--model",
        dir.path().join("model.txt").to_str().unwrap(),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_slice(&json_out.stdout).expect("json output parses");
    let coefs = parsed["coefficients"].as_array().unwrap();
    let gap = coefs
        .iter()
        .find(|c| c[0] == "gender=F")
        .and_then(|c| c[1].as_f64())
        .unwrap();
    assert!((gap + 0.05).abs() < 0.01, "estimated gap {gap}");

    let frame_path = dir.path().join("frame.csv");
    let out = run(&[
        "frame",
        "--data",
        dir.path().join("train.csv").to_str().unwrap(),
        "--schema",
        dir.path().join("schema.txt").to_str().unwrap(),
        "--model",
        dir.path().join("model.txt").to_str().unwrap(),
        "--out",
        frame_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let head = std::fs::read_to_string(&frame_path).unwrap();
    assert!(head.starts_with("pay,(Intercept),gender=F"));
}

async fn boot_server(dir: &Path, cap: f64) -> String {
    std::fs::write(dir.join("schema.txt"), SCHEMA_TEXT).unwrap();
    std::fs::write(dir.join("panel.csv"), training_csv()).unwrap();
    let config = ServerConfig {
        listen: "127.0.0.1:0".into(),
        dataset: dir.join("panel.csv"),
        schema: dir.join("schema.txt"),
        journal: dir.join("ledger.ndjson"),
        per_analysis_cap: cap,
        default_epsilon: 1.0,
        disjointness_variable: None,
        global_cap: None,
        partition_seed: 5,
        server_secret: "cli-test".into(),
        noise: NoiseMode::Keyed,
        tokens: [("wage-gap".to_string(), "tok".to_string())]
            .into_iter()
            .collect(),
    };
    let state = ServerState::from_config(config).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, build_router(Arc::clone(&state)))
            .await
            .unwrap();
    });
    format!("http://{addr}")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn remote_verify_coef_and_budget_flow() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let url = boot_server(dir.path(), 3.0).await;

    let base = [
        "--server",
        url.as_str(),
        "--token",
        "tok",
        "--analysis",
        "wage-gap",
    ];
    let model_path = dir.path().join("model.txt");
    let model = model_path.to_str().unwrap();
    let verify = |extra: &[&str]| {
        let mut args: Vec<&str> = base.to_vec();
        args.push("verify-coef");
        args.extend_from_slice(&["--model", model, "--coefficient", "gender=F"]);
        args.extend_from_slice(extra);
        tokio::task::block_in_place(|| run(&args))
    };

    // gamma0 query with explicit epsilon and M, gamma1 decision line
    let out = verify(&[
        "--gamma0",
        "-0.01",
        "--m",
        "10",
        "--epsilon",
        "1",
        "--gamma1",
        "0.9",
    ]);
    assert!(
        out.status.success(),
        "verify failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("r-hat"), "missing table: {text}");
    assert!(text.contains("theta_N(0.9)"), "missing decision: {text}");
    assert!(text.contains("remaining budget 2"), "budget echo: {text}");

    // tolerance-interval query with defaulted epsilon (echoed)
    let out = verify(&["--interval", "(-0.08,-0.02)", "--m", "10"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("using epsilon = 1"), "default echo: {text}");

    // budget status
    let mut args: Vec<&str> = base.to_vec();
    args.push("budget");
    let out = tokio::task::block_in_place(|| run(&args));
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("spent 2.000"), "budget table: {text}");

    // third query hits the cap partway: 2 spent + 1 = 3 fits; a fourth is refused
    let out = verify(&["--gamma0", "-0.01", "--m", "10", "--epsilon", "1"]);
    assert!(out.status.success());
    let refused = verify(&["--gamma0", "-0.01", "--m", "10", "--epsilon", "1"]);
    assert_eq!(refused.status.code(), Some(3), "budget refusal exit code");
    let err = String::from_utf8_lossy(&refused.stderr).to_string();
    assert!(err.contains("remaining budget"), "refusal message: {err}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn remote_verify_trend_and_client_side_rejection() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let url = boot_server(dir.path(), 10.0).await;
    let base = [
        "--server",
        url.as_str(),
        "--token",
        "tok",
        "--analysis",
        "wage-gap",
    ];
    let model_path = dir.path().join("model.txt");
    let model = model_path.to_str().unwrap();
    let trend = |periods: &str, intervals: &str, mode: &str| {
        let mut args: Vec<&str> = base.to_vec();
        args.push("verify-trend");
        args.extend_from_slice(&[
            "--model",
            model,
            "--coefficient",
            "gender=F",
            "--periods",
            periods,
            "--intervals",
            intervals,
            "--mode",
            mode,
            "--m",
            "8",
            "--epsilon",
            "1",
        ]);
        tokio::task::block_in_place(|| run(&args))
    };

    let out = trend("2000-2003,2003-2005", "neg,neg", "separate");
    assert!(
        out.status.success(),
        "trend failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("2000-2003") && text.contains("2003-2005"));
    assert!(text.contains("spent epsilon 2.000"), "K·eps spend: {text}");

    // composite spends a single epsilon
    let out = trend("2000-2003,2003-2005", "neg,pos", "composite");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("spent epsilon 1.000"), "{text}");

    // overlapping periods are rejected client-side, before any budget spend
    let before: serde_json::Value = {
        let mut args: Vec<&str> = base.to_vec();
        args.extend_from_slice(&["--json", "budget"]);
        let out = tokio::task::block_in_place(|| run(&args));
        serde_json::from_slice(&out.stdout).unwrap()
    };
    let rejected = trend("2000-2004,2002-2005", "neg,neg", "separate");
    assert_eq!(
        rejected.status.code(),
        Some(2),
        "client-side validation exit"
    );
    let after: serde_json::Value = {
        let mut args: Vec<&str> = base.to_vec();
        args.extend_from_slice(&["--json", "budget"]);
        let out = tokio::task::block_in_place(|| run(&args));
        serde_json::from_slice(&out.stdout).unwrap()
    };
    assert_eq!(before["spent"], after["spent"], "no spend on rejection");

    // a one-year period cannot define a slope: rejected locally
    let rejected = trend("2000-2000,2001-2005", "neg,neg", "separate");
    assert_eq!(rejected.status.code(), Some(2));
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let out = run(&[
        "--server",
        "http://127.0.0.1:9",
        "--token",
        "tok",
        "--analysis",
        "a",
        "verify-coef",
        "--model",
        dir.path().join("model.txt").to_str().unwrap(),
        "--coefficient",
        "gender=F",
        "--gamma0",
        "-0.01",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn missing_interval_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let out = run(&[
        "--server",
        "http://127.0.0.1:9",
        "--token",
        "tok",
        "--analysis",
        "a",
        "verify-coef",
        "--model",
        dir.path().join("model.txt").to_str().unwrap(),
        "--coefficient",
        "gender=F",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
