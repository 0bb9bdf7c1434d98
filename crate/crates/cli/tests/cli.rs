use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use unlearn_core::registry::{ComparisonReport, ModelRecord, Registry, RegistryOptions};
use unlearn_core::{json, AttackDirection, Statistic};

const CONFIG: &str = r#"
[workspace]
hidden_widths = [16, 8]

[workspace.dataset]
name = "blobs"
seed = 3
n_classes = 4
n_per_class = 40
dim = 6
spread = 1.0
forget_class = 1

[workspace.train]
epochs = 8
"#;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.dir.path().join("run.toml");
        Command::new(env!("CARGO_BIN_EXE_unlearn"))
            .env_remove("UNLEARN_DATA_DIR")
            .arg("--data-dir")
            .arg(self.data())
            .arg("--config")
            .arg(config)
            .arg("--workers")
            .arg("2")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn build_ga(&self) {
        self.ok(&["build", "--method", "ga", "--epochs", "1,3", "--lr", "0.01,0.1", "--batch", "64"]);
    }

    fn registry(&self) -> (Registry, String) {
        let reg = Registry::new(RegistryOptions {
            data_dir: Some(self.data()),
            max_workers: 1,
        })
        .unwrap();
        let ws = reg.load_all().unwrap();
        assert_eq!(ws.len(), 1);
        (reg, ws[0].id.clone())
    }
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

#[test]
fn build_reports_every_grid_cell() {
    let env = Env::new();
    let out = env.ok(&["build", "--method", "ga", "--epochs", "1,3", "--lr", "0.01,0.1", "--batch", "64"]);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("job"), "{out}");
    assert_eq!(lines.len(), 2 + 4, "{out}");
    assert!(lines[2..].iter().all(|l| l.contains(" done ")), "{out}");

    let (reg, ws) = env.registry();
    let models = reg.list_models(&ws, &Default::default()).unwrap();
    assert_eq!(models.iter().filter(|m| m.method_label() == "ga").count(), 4);
}

#[test]
fn usage_errors_exit_2() {
    let env = Env::new();
    assert_eq!(code(&env.run(&["build", "--method", "nope"])), Some(2));
    assert_eq!(code(&env.run(&["frobnicate"])), Some(2));
    assert_eq!(code(&env.run(&["screen", "--sort", "nonsense"])), Some(2));
    assert_eq!(code(&env.run(&["contrast", "original", "ghost"])), Some(2));
    assert_eq!(code(&env.run(&["attack", "original", "--stat", "loss"])), Some(2));

    let bad = env.dir.path().join("bad.toml");
    std::fs::write(&bad, "wrokers = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_unlearn"))
        .arg("--config")
        .arg(&bad)
        .arg("workspaces")
        .output()
        .unwrap();
    assert_eq!(code(&out), Some(2));
}

#[test]
fn diverging_build_exits_3() {
    let env = Env::new();
    let out = env.run(&["build", "--method", "ga", "--epochs", "20", "--lr", "1e6", "--batch", "4"]);
    assert_eq!(code(&out), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn screen_table_and_json() {
    let env = Env::new();
    env.build_ga();
    let table = env.ok(&["screen", "--sort", "-wcps"]);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["id", "method", "epochs", "lr", "bs", "UA", "RA", "TUA", "TRA", "RT", "WCPS"]);
    assert_eq!(table.lines().count(), 2 + 6);

    let text = env.ok(&["screen", "--json", "--sort", "-wcps"]);
    let records: Vec<ModelRecord> = json::from_str(&text).unwrap();
    assert_eq!(records.len(), 6);
    let wcps: Vec<f64> = records.iter().map(|r| r.summary.wcps).collect();
    assert!(wcps.windows(2).all(|w| w[0] >= w[1]), "{wcps:?}");

    let ga_only = env.ok(&["screen", "--filter", "ga"]);
    assert_eq!(ga_only.lines().count(), 2 + 4);
    let empty = env.ok(&["screen", "--filter", "salun"]);
    assert_eq!(empty.lines().count(), 2, "{empty}");
}

#[test]
fn contrast_of_a_model_with_itself() {
    let env = Env::new();
    env.build_ga();
    let text = env.ok(&["contrast", "original", "original"]);
    let report: ComparisonReport = json::from_str(&text).unwrap();
    assert!(report.class_diff_train.diff.iter().all(|&d| d == 0.0));
    assert!(report.class_diff_test.diff.iter().all(|&d| d == 0.0));
    assert_eq!(report.class_diff_train.retain_avg_diff, 0.0);

    let out = env.dir.path().join("report.json");
    assert!(env.ok(&["contrast", "ga-0001", "retrained", "--out", out.to_str().unwrap()]).is_empty());
    let report: ComparisonReport = json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((report.model_a.as_str(), report.model_b.as_str()), ("ga-0001", "retrained"));
}

#[test]
fn attack_csv_matches_the_registry() {
    let env = Env::new();
    env.build_ga();
    let csv = env.ok(&["attack", "ga-0002", "--stat", "entropy", "--dir", "leq"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("threshold,FPR,FNR,epsilon,AS,PS"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.len() == 6));
    let min_ps = rows.iter().map(|r| r[5]).fold(f64::INFINITY, f64::min);

    let (reg, ws) = env.registry();
    let detail = reg.attack_detail(&ws, "ga-0002", Statistic::Entropy, AttackDirection::LeqIsRetrained).unwrap();
    assert!((min_ps - detail.privacy_score).abs() <= 5e-6 * detail.privacy_score.max(1e-300), "{min_ps} vs {}", detail.privacy_score);
    for (row, t) in rows.iter().zip(&detail.sweep.thresholds) {
        assert!((row[0] - t).abs() <= 5e-6 * t.abs().max(1e-300));
    }

    let file = env.dir.path().join("sweep.csv");
    assert!(env.ok(&["attack", "ga-0002", "--stat", "entropy", "--dir", "leq", "--csv", file.to_str().unwrap()]).is_empty());
    assert_eq!(std::fs::read_to_string(file).unwrap(), csv);
}

#[test]
fn experiments_write_json_and_csv() {
    let env = Env::new();
    let out = env.dir.path().join("exp");
    let printed = env.ok(&["experiment", "ft-progression", "--seed", "3", "--out-dir", out.to_str().unwrap()]);
    let paths: Vec<&Path> = printed.lines().map(Path::new).collect();
    assert_eq!(paths, [out.join("ft-progression.json"), out.join("ft-progression.csv")]);
    let csv = std::fs::read_to_string(out.join("ft-progression.csv")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("ft-progression.json")).unwrap()).unwrap();
    let epochs = doc["result"]["epochs"].as_array().unwrap().len();
    assert_eq!(epochs, doc["result"]["config"]["epochs"].as_u64().unwrap() as usize);
    assert_eq!(csv.lines().count(), 1 + epochs);
    assert!(csv.starts_with("epoch,"));

    env.ok(&["experiment", "gu-ablation", "--seed", "3", "--out-dir", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("gu-ablation.csv")).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(variants.len() >= 2, "{csv}");

    assert_eq!(code(&env.run(&["experiment", "nope"])), Some(2));
}

#[test]
fn env_var_overrides_data_dir_flag() {
    let env = Env::new();
    let elsewhere = env.dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_unlearn"))
        .env("UNLEARN_DATA_DIR", &elsewhere)
        .arg("--data-dir")
        .arg(env.data())
        .arg("--config")
        .arg(env.dir.path().join("run.toml"))
        .args(["build", "--method", "ft", "--epochs", "1", "--lr", "0.05", "--batch", "32"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elsewhere.is_dir());
    assert!(!env.data().exists());
}

#[test]
fn workspaces_lists_the_configured_workspace() {
    let env = Env::new();
    env.build_ga();
    let out = env.ok(&["workspaces"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    let (_, ws) = env.registry();
    assert!(lines[2].starts_with(&ws));
}
