use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use fogsim::scenario::{AreaSpec, ClientParams, WorldParams};
use fogsim::{NodeSource, SimTime, TraceSource, World};
use fogsim_cli::{run_experiment, ExperimentConfig, TraceConfig};

fn fogsim() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fogsim"));
    c.env("RUST_LOG", "warn");
    c
}

const SMALL: &str = r#"
strategies = ["baseline", "random", "vivaldi", "meridian"]
client_ratios = [0.05, 0.1]
seeds = [1, 2]
duration_ms = 15000
"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn run_writes_grid_ordered_rows_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |out: &str, jobs: &str| {
        let status = fogsim()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(out))
            .args(["--jobs", jobs])
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(tmp.path().join(out).join("results.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(a, b, "results.csv differs between runs");

    let mut reader = csv::Reader::from_reader(a.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4 * 2 * 2);
    let keys: Vec<(String, String, String)> = rows
        .iter()
        .map(|r| (r[0].to_owned(), r[1].to_owned(), r[2].to_owned()))
        .collect();
    assert_eq!(keys[0], ("baseline".into(), "0.05".into(), "1".into()));
    assert_eq!(keys[1], ("baseline".into(), "0.05".into(), "2".into()));
    assert_eq!(keys[2], ("baseline".into(), "0.1".into(), "1".into()));
    assert_eq!(keys[15], ("meridian".into(), "0.1".into(), "2".into()));
    assert!(tmp.path().join("a/config.toml").is_file());
}

#[test]
fn invalid_config_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    for body in [
        "client_ratios = [0.0]",
        "client_ratios = [1.2]",
        "duration_ms = 0",
        "bogus_key = 1",
        "node_file = \"missing.csv\"",
        "[traces]\nsource = \"file\"\npath = \"missing.csv\"",
        "[meridian]\nbeta = 1.5",
    ] {
        let cfg = write_config(tmp.path(), body);
        let out = fogsim().args(["run", "--config"]).arg(&cfg).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{body}");
    }
    let out = fogsim()
        .args(["run", "--config", "/nonexistent.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_node_file_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("nodes.csv"), "id,x_m,y_m\n0,10,10\n1,99999,5\n").unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}node_file = \"nodes.csv\"\n"));
    let out = fogsim().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_data_matches_group_by() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("res");
    assert!(fogsim()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let plots = tmp.path().join("plots");
    assert!(fogsim()
        .args(["plot-data", "--results"])
        .arg(out.join("results.csv"))
        .arg("--out")
        .arg(&plots)
        .status()
        .unwrap()
        .success());

    // Independent group-by over the raw CSV.
    let mut raw = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let headers = raw.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let mut groups: HashMap<(String, String), Vec<f64>> = HashMap::new();
    for r in raw.records().map(Result::unwrap) {
        if let Ok(v) = r[col("selection_error")].parse::<f64>() {
            groups
                .entry((r[0].to_owned(), r[1].to_owned()))
                .or_default()
                .push(v);
        }
    }

    let mut tidy = csv::Reader::from_path(plots.join("selection_vs_ratio.csv")).unwrap();
    assert_eq!(
        tidy.headers().unwrap(),
        vec!["strategy", "ratio", "metric", "mean", "stddev", "n"]
    );
    let mut checked = 0;
    for r in tidy.records().map(Result::unwrap) {
        if r[0] == *"baseline" && r[2] == *"optimal_rate" {
            assert_eq!(r[3].parse::<f64>().unwrap(), 1.0);
            assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
        }
        if r[2] != *"selection_error" {
            continue;
        }
        let vals = &groups[&(r[0].to_owned(), r[1].to_owned())];
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        approx::assert_relative_eq!(r[3].parse::<f64>().unwrap(), mean, max_relative = 1e-12);
        approx::assert_relative_eq!(
            r[4].parse::<f64>().unwrap(),
            sd,
            max_relative = 1e-9,
            epsilon = 1e-12
        );
        checked += 1;
    }
    assert_eq!(checked, 4 * 2);
    for f in ["messages_vs_ratio.csv", "latency_vs_ratio.csv"] {
        assert!(plots.join(f).is_file());
    }
}

#[test]
fn plot_data_names_missing_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("r.csv");
    fs::write(&bad, "strategy,client_ratio,seed\nrandom,0.5,1\n").unwrap();
    let out = fogsim()
        .args(["plot-data", "--results"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("p"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mean_node_total"), "{err}");
}

#[test]
fn generated_trace_file_reproduces_the_synthetic_world() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("traces.csv");
    assert!(fogsim()
        .args([
            "gen-traces",
            "--clients",
            "12",
            "--duration",
            "20000",
            "--seed",
            "5",
            "--out"
        ])
        .arg(&file)
        .status()
        .unwrap()
        .success());
    let build = |traces| {
        World::build(
            5,
            12,
            SimTime::from_secs(20),
            &AreaSpec::default(),
            &WorldParams::default(),
            &ClientParams::default(),
            NodeSource::Bundled,
            traces,
        )
        .unwrap()
    };
    let generated = build(TraceSource::Generate);
    let imported = build(TraceSource::File(&file));
    assert_eq!(generated.nodes, imported.nodes);
    for (g, i) in generated.traces.iter().zip(&imported.traces) {
        assert_eq!(g.start_delay, i.start_delay);
        assert_eq!(g.waypoints.len(), i.waypoints.len());
        for (a, b) in g.waypoints.iter().zip(&i.waypoints) {
            assert_eq!(a.t, b.t);
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }
}

#[test]
fn details_dump_is_written_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        strategies: vec![fogsim::StrategyKind::Meridian],
        client_ratios: vec![0.05],
        seeds: vec![1],
        duration_ms: 10_000,
        details: true,
        traces: TraceConfig::Generate,
        ..ExperimentConfig::default()
    };
    let rows = run_experiment(&cfg, tmp.path(), Some(1)).unwrap();
    assert_eq!(rows.len(), 1);
    let text = fs::read_to_string(tmp.path().join("details/meridian-r0.05-s1.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 29);
    assert!(v["nodes"][0]["rings"].is_array());
    assert_eq!(v["clients"].as_array().unwrap().len(), 16);
}
