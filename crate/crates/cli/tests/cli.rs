use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sevastyanov::newick::parse_newick;
use sevastyanov::stats::ks_two_sample;
use sevastyanov::Genealogy;

const BIN: &str = env!("CARGO_BIN_EXE_sevastyanov");

const YULE: &str = r#""kernel": {"type": "birth_death", "beta": {"kind": "constant", "value": 1.0},
    "delta": {"kind": "constant", "value": 0.0}}"#;
const BD: &str = r#""kernel": {"type": "birth_death", "beta": {"kind": "constant", "value": 1.0},
    "delta": {"kind": "constant", "value": 1.0}}"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SEVASTYANOV_OUT").env_remove("SEVASTYANOV_THREADS").output().unwrap()
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("process exited normally")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_deterministic_and_matches_extinction_probabilities() {
    let d = tempfile::tempdir().unwrap();
    let yule = write_config(d.path(), "yule.json", &format!(r#"{{{YULE}, "T": 1.0, "replicates": 2000}}"#));
    assert_eq!(code(&run_cmd("simulate", &yule, &d.path().join("a"), &["--seed", "7", "--threads", "1"])), 0);
    assert_eq!(code(&run_cmd("simulate", &yule, &d.path().join("b"), &["--seed", "7", "--threads", "3"])), 0);
    for f in ["trees.jsonl", "paths.csv", "summary.json"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(json(&d.path().join("a/summary.json"))["extinction_fraction"], 0.0);
    let paths = fs::read_to_string(d.path().join("a/paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 201);
    assert_eq!(paths.lines().next().unwrap(), "t,mean_Z,mean_Z_T");

    // critical birth-death: extinction probability by T = 1 is 1/2
    let bd = write_config(d.path(), "bd.json", &format!(r#"{{{BD}, "T": 1.0, "replicates": 100000}}"#));
    assert_eq!(code(&run_cmd("simulate", &bd, &d.path().join("bd"), &[])), 0);
    let frac = json(&d.path().join("bd/summary.json"))["extinction_fraction"].as_f64().unwrap();
    assert!((frac - 0.5).abs() <= 0.005, "{frac}");
}

#[test]
fn solve_writes_tables_and_reuses_only_matching_caches() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write_config(d.path(), "c.json", &format!(r#"{{{BD}, "T": 1.0, "grid": {{"n_t": 64}}}}"#));
    assert_eq!(code(&run_cmd("solve", &cfg, &out, &[])), 0);
    for f in ["extinction.csv", "simple_gf.csv", "reduced_gf.csv", "conditional_gf.csv", "ds_reduced.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert_eq!(text.lines().next().unwrap(), "s,t,tau,alpha,value", "{f}");
    }
    let report = json(&out.join("convergence.json"));
    assert_eq!(report["cache_hit"], false);
    assert!(report["grid_halving"]["Ok"]["ratio"].as_f64().unwrap() >= 1.5);

    assert_eq!(code(&run_cmd("solve", &cfg, &out, &[])), 0);
    assert_eq!(json(&out.join("convergence.json"))["cache_hit"], true);

    let other = write_config(d.path(), "o.json", &format!(r#"{{{YULE}, "T": 1.0, "grid": {{"n_t": 64}}}}"#));
    assert_eq!(code(&run_cmd("solve", &other, &out, &[])), 0);
    assert_eq!(json(&out.join("convergence.json"))["cache_hit"], false);
}

#[test]
fn solve_rejects_kernels_without_a_density() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(
        d.path(),
        "c.json",
        r#"{"kernel": {"type": "table", "lengths": {"family": "deterministic", "value": 0.5},
            "offspring": [0.5, 0.0, 0.5]}, "T": 1.0}"#,
    );
    assert_eq!(code(&run_cmd("solve", &cfg, &d.path().join("out"), &[])), 1);
}

#[test]
fn direct_and_pruned_genealogies_agree() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(
        d.path(),
        "g.json",
        r#"{"kernel": {"type": "birth_death", "beta": {"kind": "constant", "value": 1.0},
            "delta": {"kind": "constant", "value": 0.3}}, "T": 2.0, "mode": "asymmetric",
            "replicates": 3000, "grid": {"n_t": 256}}"#,
    );
    let mut lengths = Vec::new();
    for method in ["direct", "prune"] {
        let out = d.path().join(method);
        assert_eq!(code(&run_cmd("genealogy", &cfg, &out, &["--method", method, "--seed", "3"])), 0);
        let lines = fs::read_to_string(out.join("genealogies.jsonl")).unwrap();
        let nwk = fs::read_to_string(out.join("genealogies.nwk")).unwrap();
        let gs: Vec<Genealogy> = lines.lines().map(|l| Genealogy::from_json_str(l).unwrap()).collect();
        assert_eq!(gs.len(), 3000);
        for (g, n) in gs.iter().zip(nwk.lines()) {
            assert_eq!(parse_newick(n).unwrap().leaf_count(), g.leaf_count());
        }
        let summary = json(&out.join("summary.json"));
        let total: u64 = summary["leaf_count_histogram"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(total, 3000);
        lengths.push(gs.iter().map(|g| g.root_length()).collect::<Vec<_>>());
    }
    let ks = ks_two_sample(&lengths[0], &lengths[1]);
    assert!(ks.p_value > 0.01, "KS p-value {}", ks.p_value);

    let again = d.path().join("again");
    assert_eq!(code(&run_cmd("genealogy", &cfg, &again, &["--method", "direct", "--seed", "3", "--threads", "1"])), 0);
    assert_eq!(
        fs::read(again.join("genealogies.jsonl")).unwrap(),
        fs::read(d.path().join("direct/genealogies.jsonl")).unwrap()
    );
}

#[test]
fn validate_exit_code_reflects_the_report() {
    let d = tempfile::tempdir().unwrap();
    let empty = write_config(d.path(), "e.json", r#"{"validate": {"checks": []}}"#);
    let o = run_cmd("validate", &empty, &d.path().join("e"), &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&d.path().join("e/report.json"))["passed"], true);

    let tight = write_config(
        d.path(),
        "t.json",
        r#"{"validate": {"checks": ["kendall_oracle"], "tolerances": {"kendall_oracle": 1e-9}}}"#,
    );
    let o = run_cmd("validate", &tight, &d.path().join("t"), &[]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL kendall_oracle"));
    let report = json(&d.path().join("t/report.json"));
    assert_eq!(report["passed"], false);
    assert_eq!(report["checks"][0]["passed"], false);

    let unknown = write_config(d.path(), "u.json", r#"{"validate": {"checks": ["no_such_check"]}}"#);
    assert_eq!(code(&run_cmd("validate", &unknown, &d.path().join("u"), &[])), 1);
}

#[test]
fn export_converts_genealogies_trees_and_tables() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "c.json", "{}");
    let out = d.path().join("out");
    let g = write_config(
        d.path(),
        "two.json",
        r#"{"tau": 0.0, "alpha": 0.0, "mode": "symmetric", "T": 2.0,
            "root": {"length": 1.0, "alpha_T": 0.0, "children": [
                {"length": 1.0, "alpha_T": 0.0, "children": []},
                {"length": 1.0, "alpha_T": 0.0, "children": []}]}}"#,
    );
    assert_eq!(code(&run(&["export", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--input", g.to_str().unwrap()])), 0);
    assert_eq!(fs::read_to_string(out.join("two.nwk")).unwrap(), "(x1:1,x2:1):1;\n");

    let sim = write_config(d.path(), "s.json", &format!(r#"{{{YULE}, "T": 1.0, "replicates": 5, "grid": {{"n_t": 16}}}}"#));
    assert_eq!(code(&run_cmd("simulate", &sim, &out, &[])), 0);
    assert_eq!(code(&run_cmd("solve", &sim, &out, &[])), 0);
    let trees = out.join("trees.jsonl");
    assert_eq!(code(&run_cmd("export", &cfg, &out, &["--input", trees.to_str().unwrap()])), 0);
    assert_eq!(fs::read_to_string(out.join("trees.nwk")).unwrap().lines().count(), 5);
    let table = fs::read_dir(out.join("cache")).unwrap().next().unwrap().unwrap().path();
    assert_eq!(code(&run_cmd("export", &cfg, &out, &["--input", table.to_str().unwrap()])), 0);
    let csv = out.join(table.with_extension("csv").file_name().unwrap());
    assert_eq!(fs::read_to_string(csv).unwrap().lines().next().unwrap(), "s,t,tau,alpha,value");

    let bad = write_config(d.path(), "bad.json", "{\"root\": ");
    assert_eq!(code(&run_cmd("export", &cfg, &out, &["--input", bad.to_str().unwrap()])), 1);
}

#[test]
fn invalid_configs_exit_with_code_one() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let no_t = write_config(d.path(), "a.json", &format!("{{{YULE}}}"));
    assert_eq!(code(&run_cmd("simulate", &no_t, &out, &[])), 1);
    let backwards = write_config(d.path(), "b.json", &format!(r#"{{{YULE}, "T": 1.0, "tau": 2.0}}"#));
    assert_eq!(code(&run_cmd("simulate", &backwards, &out, &[])), 1);
    let zero = write_config(d.path(), "c.json", &format!(r#"{{{YULE}, "T": 1.0, "replicates": 0}}"#));
    assert_eq!(code(&run_cmd("simulate", &zero, &out, &[])), 1);
    let ok = write_config(d.path(), "d.json", &format!(r#"{{{YULE}, "T": 1.0}}"#));
    assert_eq!(code(&run_cmd("simulate", &ok, &out, &["--threads", "0"])), 1);
    assert_eq!(code(&run_cmd("simulate", &d.path().join("missing.json"), &out, &[])), 1);
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "c.json", &format!(r#"{{{YULE}, "T": 0.5, "out": "{}"}}"#, d.path().join("cfg").display()));
    let env_out = d.path().join("env");
    let o = Command::new(BIN)
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("SEVASTYANOV_OUT", &env_out)
        .env("SEVASTYANOV_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(env_out.join("summary.json").exists());
    assert!(!d.path().join("cfg").exists());
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(d.path().join("cfg/summary.json").exists());
}
