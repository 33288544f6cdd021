use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use divrl_core::reference::{feynman_kac, FkOptions};
use divrl_core::{GibbsPolicy, ModelParams, ValueFunction};
use serde_json::Value;

fn divrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divrl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"
seed = 17
families = ["I", "II"]
x0 = [3.0, 10.0]
dt = [0.02, 0.01]
output_dir = "{}"
workers = 2
{extra}

[model]
mu = 0.4
sigma = 0.8
a = 3.0
c = 0.02
lambda = 2.0

[sim]
horizon = 2.0

[run]
engine = "ctd"
n_paths = 30
window = 5

[simulate]
policy = "uniform"
n_paths = 40
write_paths = 3

[improve]
iterations = 1
n_paths = 60
dt = 0.05
horizon = 5.0
"#,
        dir.join("out").display()
    );
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

/// Blanks the `wall_seconds` column, the only field that depends on the machine.
fn mask_wall(rows: &[String]) -> Vec<String> {
    let col = rows[1].split(',').position(|h| h == "wall_seconds").unwrap();
    rows.iter()
        .map(|r| {
            if r.starts_with('#') {
                return r.clone();
            }
            let mut f: Vec<&str> = r.split(',').collect();
            f[col] = "";
            f.join(",")
        })
        .collect()
}

#[test]
fn reference_with_desk_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ref");
    let run = divrl(&["reference", "--preset", "desk", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let classical: Value = serde_json::from_str(&fs::read_to_string(out.join("classical.json")).unwrap()).unwrap();
    assert!((classical["m"].as_f64().unwrap() - 4.7797).abs() < 5e-4);
    for key in ["beta1", "beta2", "beta3", "k_coef", "beta"] {
        assert!(classical[key].as_f64().unwrap().is_finite());
    }
    let hash = classical["config_hash"].as_str().unwrap().to_string();
    assert_eq!(classical["seed"].as_u64(), Some(1));

    let env: Value = serde_json::from_str(&fs::read_to_string(out.join("envelope_report.json")).unwrap()).unwrap();
    let ineq = env["inequalities"].as_array().unwrap();
    assert!(!ineq.is_empty());
    assert!(ineq.iter().all(|q| q["holds"] == Value::Bool(true)));
    assert_eq!(env["grid_check"]["passed"], Value::Bool(true));

    for name in ["classical_curve.csv", "exploratory_curve.csv"] {
        let rows = lines(&out.join(name));
        assert_eq!(rows[0], format!("# config_hash={hash} seed=1"));
        assert_eq!(rows[1], "x,v,v_prime");
        assert!(rows.len() > 1000);
    }
}

#[test]
fn evaluate_table_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let mut tables = Vec::new();
    for (k, workers) in ["1", "2"].iter().enumerate() {
        let out = tmp.path().join(format!("run{k}"));
        let run = divrl(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", workers]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        tables.push(lines(&out.join("results_table.csv")));
        assert_eq!(lines(&out.join("theta_star.csv")).len(), 2 + 8);
    }
    let rows = &tables[0];
    assert!(rows[0].starts_with("# config_hash="));
    assert!(rows[0].ends_with(" seed=17"));
    assert_eq!(
        rows[1],
        "dt,family,x0,J_theta_star_at_x0,m_hat,converged_flag,wall_seconds,seed,status"
    );
    // 2 dt x 2 families x 2 x0
    assert_eq!(rows.len(), 2 + 8);
    assert!(rows[2].starts_with("0.02,I,3,"));
    assert!(rows[9].starts_with("0.01,II,10,"));
    for r in &rows[2..] {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f.len(), 9);
        assert!(f[3].parse::<f64>().unwrap() > 0.0);
        assert_eq!(f[7], "17");
        assert_eq!(f[8], "ok");
    }
    // worker count does not change the table
    assert_eq!(mask_wall(&tables[0]), mask_wall(&tables[1]));
}

#[test]
fn ml_engine_and_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("engine = \"ctd\"", "engine = \"ml\"")
        .replace("families = [\"I\", \"II\"]", "families = [\"I\"]");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("ml");
    let run = divrl(&["evaluate", "--config", &cfg, "--seed", "99", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let rows = lines(&out.join("results_table.csv"));
    assert_eq!(rows.len(), 2 + 4);
    assert!(rows[0].ends_with(" seed=99"));
    assert!(rows[2..].iter().all(|r| r.contains(",99,ok")));
}

#[test]
fn budget_exceeded_is_recorded_in_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "cell_budget_seconds = 1e-9");
    let out = tmp.path().join("b");
    let run = divrl(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(3));
    let rows = lines(&out.join("results_table.csv"));
    assert_eq!(rows.len(), 2 + 8);
    assert!(rows[2..].iter().all(|r| r.ends_with(",false,") || r.contains("budget_exceeded")));
    let err: Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["exit_code"].as_u64(), Some(3));
    assert_eq!(err["command"].as_str(), Some("evaluate"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("dt = [0.02, 0.01]", "dt = [0.01, 0.02]");
    fs::write(&cfg, text).unwrap();
    assert_eq!(divrl(&["evaluate", "--config", &cfg]).status.code(), Some(1));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(divrl(&["reference", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(divrl(&["reference", "--workers", "0"]).status.code(), Some(1));
}

#[test]
fn improve_loop_starts_from_plain_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("pi");
    let run = divrl(&["improve-loop", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let rows = lines(&out.join("improvement.csv"));
    assert!(rows[0].starts_with("# config_hash="));
    assert_eq!(rows[1], "iteration,x0,pe_value,mc_cost,mc_std_error,n_paths,seed");
    assert_eq!(rows.len(), 2 + 2 * 2);

    let p = ModelParams::dummy();
    let exact = feynman_kac(&GibbsPolicy::uniform(&p), &p, &FkOptions::default()).unwrap();
    for r in &rows[2..4] {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[0], "0");
        let x0: f64 = f[1].parse().unwrap();
        assert_eq!(f[2].parse::<f64>().unwrap(), exact.value(x0));
        assert_eq!(f[5], "60");
        assert_eq!(f[6], "17");
    }
}

#[test]
fn simulate_writes_summary_and_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("sim");
    let run = divrl(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let rows = lines(&out.join("simulation_summary.csv"));
    assert_eq!(rows.len(), 2 + 2);
    assert!(rows[2].starts_with("3,uniform,0.01,40,"));
    let paths = lines(&out.join("trajectories_0.csv"));
    assert_eq!(paths[1], "path_id,step,time,state,action");
    let ids: std::collections::BTreeSet<&str> = paths[2..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 3);
}
