use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn loanrate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loanrate")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = loanrate(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_per_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["price", "statics", "fit", "placebo", "simulate", "spread"] {
        let o = loanrate(dir.path(), &[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage: loanrate"));
    }
}

#[test]
fn neutrality_prints_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = loanrate(dir.path(), &["statics", "--proposition", "neutrality"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("neutrality: pass"));
    assert!(dir.path().join("statics.manifest.json").exists());
}

#[test]
fn statics_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = loanrate(dir.path(), &["statics", "--proposition", "rationing", "--emit-plot-data"]);
    assert_eq!(o.status.code(), Some(0));
    let base = fs::read_to_string(dir.path().join("statics.rationing.base.csv")).unwrap();
    assert_eq!(base.lines().next(), Some("r_l,supply"));
    assert_eq!(base.lines().count(), 51);
}

#[test]
fn simulate_then_fit_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let o = loanrate(dir.path(), &["simulate", "--n", "1000", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = loanrate(
        dir.path(),
        &[
            "fit",
            "--data",
            "loans.csv",
            "--components",
            "1..4",
            "--criterion",
            "bic",
            "--indicator",
            "niu",
            "--seed",
            "42",
            "--out",
            "model.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let model = json(&dir.path().join("model.json"));
    let g = model["g"].as_u64().unwrap() as usize;
    assert!((1..=4).contains(&g));
    let comps = model["components"].as_array().unwrap();
    assert_eq!(comps.len(), g);
    let w: f64 = comps.iter().map(|c| c["weight"].as_f64().unwrap()).sum();
    assert!((w - 1.0).abs() < 1e-10);
    assert_eq!(comps[0]["coefficients"][0]["name"], "intercept");
    let q = fs::read_to_string(dir.path().join("model.quantiles.csv")).unwrap();
    assert!(q.starts_with("scenario,level,q25,q50,q75,mean\nlow,"));
    let manifest = json(&dir.path().join("model.manifest.json"));
    assert_eq!(manifest["subcommand"], "fit");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn identical_config_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        assert_eq!(loanrate(dir, &["simulate", "--n", "600", "--seed", "3"]).status.code(), Some(0));
        let o = loanrate(dir, &["fit", "--data", "loans.csv", "--components", "1..3", "--emit-plot-data"]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in [
        "loans.csv",
        "loans.truth.json",
        "model.json",
        "model.selection.csv",
        "model.loglik.csv",
        "model.manifest.json",
    ] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.toml"), "x = 1\nquad_nodes = 48\n").unwrap();
    let o = loanrate(dir.path(), &["price", "--config", "p.toml", "--x", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&dir.path().join("price.manifest.json"));
    assert_eq!(m["config"]["x"], 0);
    assert_eq!(m["config"]["quad_nodes"], 48);
    let p = json(&dir.path().join("price.json"));
    assert!(p["report"]["foc_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "not_a_key = 3\n").unwrap();
    assert_eq!(loanrate(dir.path(), &["price", "--config", "bad.toml"]).status.code(), Some(1));
    assert_eq!(loanrate(dir.path(), &["price", "--eta", "-1"]).status.code(), Some(1));
    assert_eq!(loanrate(dir.path(), &["price", "--unknown-flag"]).status.code(), Some(1));
    assert_eq!(loanrate(dir.path(), &["fit", "--data", "missing.csv"]).status.code(), Some(1));
    assert_eq!(
        loanrate(dir.path(), &["fit", "--data", "x.csv", "--indicator", "niu", "--indicator", "asi"]).status.code(),
        Some(1)
    );
    assert_eq!(
        loanrate(dir.path(), &["fit", "--data", "x.csv", "--indicator", "niu", "--no-indicator"]).status.code(),
        Some(1)
    );
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("od.toml"), "n_banks = 4\nmonths = 6\nobs_per_bank_month = 4\n").unwrap();
    assert_eq!(
        loanrate(dir.path(), &["simulate", "--kind", "overdrafts", "--config", "od.toml"]).status.code(),
        Some(0)
    );
    // Make the indicator a pure bank attribute so bank effects absorb it.
    let text = fs::read_to_string(dir.path().join("overdrafts.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (bank, niu) =
        (header.iter().position(|h| *h == "bank_id").unwrap(), header.iter().position(|h| *h == "niu").unwrap());
    let mut out = header.join(",") + "\n";
    for l in lines {
        let mut cells: Vec<String> = l.split(',').map(String::from).collect();
        cells[niu] = cells[bank].clone();
        out += &(cells.join(",") + "\n");
    }
    fs::write(dir.path().join("flat.csv"), out).unwrap();
    let o = loanrate(dir.path(), &["spread", "--data", "flat.csv", "--indicator", "niu"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not vary within any bank"));
}

#[test]
fn spread_ladder_and_placebo() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("od.toml"), "n_banks = 6\nmonths = 12\nobs_per_bank_month = 6\n").unwrap();
    let o = loanrate(dir.path(), &["simulate", "--kind", "overdrafts", "--config", "od.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = loanrate(
        dir.path(),
        &[
            "spread",
            "--data",
            "overdrafts.csv",
            "--indicator",
            "niu",
            "--cluster",
            "bank",
            "--ladder",
            "--out",
            "est.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let est = fs::read_to_string(dir.path().join("est.csv")).unwrap();
    for rung in ["bivariate", "macro", "bank_fe", "full"] {
        assert!(est.lines().any(|l| l.starts_with(&format!("{rung},niu,"))), "{rung}");
    }

    assert_eq!(loanrate(dir.path(), &["simulate", "--n", "800"]).status.code(), Some(0));
    let o = loanrate(dir.path(), &["placebo", "--data", "loans.csv", "--trials", "3", "--components", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let p = json(&dir.path().join("placebo.json"));
    assert_eq!(p["rows"].as_array().unwrap().len(), 3);
    let q = fs::read_to_string(dir.path().join("placebo.quantiles.csv")).unwrap();
    assert_eq!(q.lines().count(), 3);
}
