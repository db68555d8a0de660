use std::fs;
use std::path::Path;
use std::process::Command;

use ets_causal_cli::{run, EXIT_ESTIMATION, EXIT_OK, EXIT_USAGE};

const CONFIG: &str = r#"version = "ets-causal-config-v1"
seed = 11

[att]
bootstrap_reps = 19

[satt]
bootstrap_reps = 9

[dgp]
kind = "did"
n_firms = 1500
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn call(args: &[&str]) -> i32 {
    let mut argv = vec!["ets-causal"];
    argv.extend_from_slice(args);
    run(argv)
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_exits_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_ets-causal"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("simulate") && text.contains("ingest-check") && text.contains("mc"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_ets-causal"))
        .arg("estimate-everything")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));
    assert_eq!(call(&["att", "--config", "x.toml", "--bogus"]), EXIT_USAGE);
}

#[test]
fn bad_configs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    assert_eq!(call(&["att", "--config", missing.to_str().unwrap()]), EXIT_USAGE);
    let cfg = write_config(dir.path(), &CONFIG.replace("seed = 11\n", ""));
    let out = dir.path().join("out");
    assert_eq!(
        call(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_USAGE
    );
    // the seed may come from the command line instead
    assert_eq!(
        call(&[
            "simulate",
            "--config",
            &cfg,
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap()
        ]),
        EXIT_OK
    );
    let cfg = write_config(
        dir.path(),
        "version = \"ets-causal-config-v1\"\ninput = \"nowhere.csv\"\n",
    );
    assert_eq!(
        call(&["att", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_USAGE
    );
}

#[test]
fn estimation_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // two firms that differ in employees separate perfectly in the probit
    let panel = "firm_id,year,industry,ets,output,employees,exports,wage,capital,electricity,gas_mwh,oil_mwh,other_fuel_mwh,co2\n\
                 A,2003,17,1,10,5,1,30,20,4,1,1,1,2\n\
                 A,2006,17,1,11,5,1,30,20,4,1,1,1,2\n\
                 B,2003,17,0,9,4,1,30,20,4,1,1,1,2\n\
                 B,2006,17,0,9,4,1,30,20,4,1,1,1,2\n";
    fs::write(dir.path().join("panel.csv"), panel).unwrap();
    let cfg = write_config(
        dir.path(),
        "version = \"ets-causal-config-v1\"\ninput = \"panel.csv\"\n[propensity]\ncovariates = [\"ln_employees\"]\n",
    );
    let out = dir.path().join("out");
    assert_eq!(
        call(&["att", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_ESTIMATION
    );
}

#[test]
fn simulate_then_att_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let out = out.to_str().unwrap();
        assert_eq!(call(&["simulate", "--config", &cfg, "--out", out]), EXIT_OK);
        assert_eq!(call(&["att", "--config", &cfg, "--out", out]), EXIT_OK);
        runs.push(read_dir_sorted(Path::new(out)));
    }
    assert_eq!(runs[0], runs[1]);
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"panel.csv") && names.contains(&"att.csv") && names.contains(&"att.txt"));
    for (name, bytes) in &runs[0] {
        let text = String::from_utf8_lossy(bytes);
        assert!(text.starts_with("# ets-causal "), "{name} lacks the header line");
        assert!(text.lines().next().unwrap().ends_with("seed=11"));
    }
}

#[test]
fn seed_flag_changes_the_panel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        call(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]),
        EXIT_OK
    );
    assert_eq!(
        call(&[
            "simulate",
            "--config",
            &cfg,
            "--seed",
            "12",
            "--out",
            b.to_str().unwrap()
        ]),
        EXIT_OK
    );
    assert_ne!(
        fs::read(a.join("panel.csv")).unwrap(),
        fs::read(b.join("panel.csv")).unwrap()
    );
}

#[test]
fn simulated_panel_can_be_reingested() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("sim");
    assert_eq!(
        call(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let cfg2 = dir.path().join("ingest.toml");
    fs::write(&cfg2, "version = \"ets-causal-config-v1\"\ninput = \"sim/panel.csv\"\n").unwrap();
    let out2 = dir.path().join("check");
    assert_eq!(
        call(&[
            "ingest-check",
            "--config",
            cfg2.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap()
        ]),
        EXIT_OK
    );
    let summary = fs::read_to_string(out2.join("summary.txt")).unwrap();
    assert!(summary.contains("firms 1500"));
}

#[test]
fn every_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{CONFIG}\n[mc]\nreps = 2\n"));
    for sub in [
        "ingest-check",
        "propensity",
        "match",
        "frontier",
        "satt",
        "report",
        "mc",
    ] {
        let out = dir.path().join(sub);
        assert_eq!(
            call(&[sub, "--config", &cfg, "--out", out.to_str().unwrap()]),
            EXIT_OK,
            "{sub}"
        );
    }
    let mc = fs::read_to_string(dir.path().join("mc/mc.csv")).unwrap();
    assert!(mc.lines().nth(1).unwrap().starts_with("estimator,outcome,phase,k,reps"));
}
