use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bet::cli::BaselineReport;
use bet::cli::{PretrainReport, SearchSummary};
use bet::{MaskedEmbeddingTable, Population};

const SMOKE: &[&str] = &[
    "--set", "dataset.num_users=150",
    "--set", "dataset.num_items=300",
    "--set", "dataset.interactions=3000",
    "--set", "train.batch_size=512",
    "--set", "train.max_epochs=25",
    "--set", "search.d_max=16",
    "--set", "search.iterations=4",
    "--set", "search.candidates=6",
    "--set", "search.finetune_epochs=2",
    "--set", "search.retrain_top_k=2",
];

fn bet(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bet"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("BET_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_smoke_at_95_percent_sparsity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let high = [SMOKE, &["--set", "search.sparsity=0.95", "--set", "search.d_max=32"]].concat();
    ok(&bet(out, &["synth"], &high));
    assert!(out.join("dataset/train.tsv").exists());
    ok(&bet(out, &["pretrain"], &high));
    let pre: PretrainReport = read(out.join("pretrain_report.json"));
    assert!(pre.val.ensemble > 0.0);

    let stdout = ok(&bet(out, &["search", "--plot"], &high));
    assert!(stdout.contains("retained"), "{stdout}");
    let summary: SearchSummary = read(out.join("search_report.json"));
    assert!(summary.sparsity >= 0.95, "sparsity {}", summary.sparsity);
    assert!(summary.retained_params <= summary.budget);
    assert_eq!(summary.finetunes, 4);
    let pop = Population::from_json(&fs::read_to_string(out.join("population.json")).unwrap()).unwrap();
    assert_eq!(pop.len(), 4);
    assert_eq!(fs::read_to_string(out.join("iterations.jsonl")).unwrap().lines().count(), 4);
    assert!(out.join("fitness.svg").exists() && out.join("predictor_loss.svg").exists());
    assert!(out.join("predictor.betp").exists());

    let table = MaskedEmbeddingTable::import_sparse(out.join("final.bets")).unwrap();
    assert_eq!(table.retained_params(), summary.retained_params);

    // config.json echoes every resolved key, including ones never set.
    let cfg: serde_json::Map<String, serde_json::Value> = read(out.join("config.json"));
    assert_eq!(cfg["search.sparsity"], serde_json::json!(0.95));
    assert_eq!(cfg["train.decay_ratio"], serde_json::json!(0.98));

    let eval = ok(&bet(out, &["evaluate", "--model", out.join("final.bets").to_str().unwrap(), "--split", "val"], &high));
    let report: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!((report["result"]["ensemble"].as_f64().unwrap() - summary.val.ensemble).abs() < 1e-6);

    // Export the best population action against the pretrained table.
    let best = &pop.entries()[pop.best().unwrap()];
    let action_path = out.join("best_action.json");
    fs::write(&action_path, serde_json::to_string(best).unwrap()).unwrap();
    let exported = out.join("best.bets");
    ok(&bet(out, &["export", "--action", action_path.to_str().unwrap(), "--output", exported.to_str().unwrap()], &high));
    let t = MaskedEmbeddingTable::import_sparse(&exported).unwrap();
    assert_eq!(t.row_sizes(), best.sizes());
}

#[test]
fn pretrain_is_reproducible_and_learns() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&bet(a.path(), &["pretrain"], SMOKE));
    ok(&bet(b.path(), &["pretrain"], SMOKE));
    let fa = fs::read(a.path().join("pretrained.bets")).unwrap();
    assert_eq!(fa, fs::read(b.path().join("pretrained.bets")).unwrap());

    // BET_SEED overrides the default master seed.
    let c = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bet"))
        .args(["pretrain", "--out"])
        .arg(c.path())
        .args(SMOKE)
        .env("BET_SEED", "5")
        .output()
        .unwrap();
    ok(&o);
    assert_ne!(fa, fs::read(c.path().join("pretrained.bets")).unwrap());

    let pre: PretrainReport = read(a.path().join("pretrain_report.json"));
    let untrained = tempfile::tempdir().unwrap();
    ok(&bet(untrained.path(), &["pretrain"], &[SMOKE, &["--set", "train.max_epochs=1", "--set", "train.initial_lr=1e-9"]].concat()));
    let raw: PretrainReport = read(untrained.path().join("pretrain_report.json"));
    assert!(pre.val.ensemble > raw.val.ensemble, "{} vs {}", pre.val.ensemble, raw.val.ensemble);
}

#[test]
fn baseline_su_splits_budget_equally() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.tsv");
    let mut lines = String::new();
    for u in 0..8 {
        for j in 0..5 {
            lines.push_str(&format!("user{u}\titem{}\n", (u + 2 * j) % 12));
        }
    }
    fs::write(&data, lines).unwrap();
    let args = [
        "--set", &format!("dataset.path={}", data.display()),
        "--set", "search.d_max=100",
        "--set", "search.sparsity=0.9",
        "--set", "train.max_epochs=3",
        "--set", "train.batch_size=16",
    ];
    ok(&bet(dir.path(), &["baseline", "su"], &args));
    let report: BaselineReport = read(dir.path().join("baseline_su.json"));
    assert_eq!(report.budget, 200);
    assert_eq!(report.action.num_entities(), 20);
    assert!(report.action.sizes().iter().all(|&s| s == 10));

    ok(&bet(dir.path(), &["baseline", "sr"], &args));
    let sr: BaselineReport = read(dir.path().join("baseline_sr.json"));
    assert!(sr.retained_params <= 200);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let args = [SMOKE, &["--set", "search.iterations=2"]].concat();
    ok(&bet(dir.path(), &["pretrain"], &args));
    ok(&bet(dir.path(), &["sweep", "--axis", "m", "--values", "2,5"], &args));
    let csv = fs::read_to_string(dir.path().join("sweep_m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("m,"));
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("5,"));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    // Usage errors.
    assert_eq!(bet(out, &["sweep", "--axis", "x", "--values", "1"], &[]).status.code(), Some(2));
    assert_eq!(bet(out, &["pretrain"], &["--set", "search.sparsity=2"]).status.code(), Some(2));
    // Search without a pretrained model.
    let o = bet(out, &["search"], SMOKE);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pretrain"));
    // Infeasible budget names B and the entity count.
    let o = bet(out, &["baseline", "su"], &[SMOKE, &["--set", "search.d_max=1", "--set", "search.sparsity=0.5"]].concat());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("budget 225") && err.contains("450 entities"), "{err}");
    // Divergence.
    let o = bet(tempfile::tempdir().unwrap().path(), &["pretrain"], &[SMOKE, &["--set", "train.initial_lr=1e300"]].concat());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn longer_searches_do_not_lose_ground() {
    use bet::cli::{cmd_pretrain, cmd_sweep, RunConfig, SweepAxis};
    let mut holds = 0;
    for seed in 0..5 {
        let mut sets: Vec<String> = SMOKE.chunks(2).map(|p| p[1].to_owned()).collect();
        sets.push(format!("seed={seed}"));
        let cfg = RunConfig::resolve(None, &sets, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cmd_pretrain(&cfg, dir.path()).unwrap();
        let rows = cmd_sweep(&cfg, dir.path(), SweepAxis::T, &[5, 20]).unwrap();
        holds += usize::from(rows[1].val_ensemble >= rows[0].val_ensemble - 0.01);
    }
    assert!(holds >= 3, "T=20 kept up with T=5 in {holds}/5 seeds");
}
