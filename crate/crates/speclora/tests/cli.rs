//! Integration tests for the command-line front end: flag handling,
//! exit codes, and the cross-command consistency of generated files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use speclora::adapter::{exact_rescale, Direction};
use speclora::io::{save_container, WeightContainer};
use speclora::linalg::DenseMatrix;
use speclora::train::task::concentrated_base;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_speclora")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// A two-layer container with the full q/k/v/up/down complement.
fn two_layer_container(rng: &mut ChaCha8Rng) -> WeightContainer {
    let mut c = WeightContainer::new();
    for layer in 0..2 {
        for role in ["q", "k", "v", "up", "down"] {
            c.insert(&format!("layer.{layer}.{role}"), random_matrix(rng, 6, 8))
                .unwrap();
        }
    }
    c
}

fn write_json(path: &Path, value: &serde_json::Value) {
    std::fs::write(path, value.to_string()).unwrap();
}

fn default_task_spec() -> serde_json::Value {
    serde_json::json!({
        "n": 8, "m": 10, "k_true": 2, "d_true": [2.0, 1.5], "rank_true": 1,
        "noise_sigma": 0.0, "num_samples": 48, "seed": 21
    })
}

fn default_adapter_cfg() -> serde_json::Value {
    serde_json::json!({
        "rank": 2, "alpha": 4.0, "k": 2, "dropout_p": 0.0,
        "variant": "svd_exact", "direction": "top", "seed": 1
    })
}

fn default_train_cfg(epochs: usize) -> serde_json::Value {
    serde_json::json!({
        "learning_rate": 2e-2, "epochs": epochs, "batch_size": 16, "warmup_ratio": 0.1,
        "weight_decay": 0.0, "betas": [0.9, 0.999], "eps": 1e-8, "seed": 2
    })
}

/// Standard scaffolding: spec/adapter/train JSON files plus a generated
/// task directory.
fn scaffold(base: &Path, epochs: usize) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let spec = base.join("spec.json");
    let adapter = base.join("adapter.json");
    let train = base.join("train.json");
    write_json(&spec, &default_task_spec());
    write_json(&adapter, &default_adapter_cfg());
    write_json(&train, &default_train_cfg(epochs));
    let task = base.join("task");
    let out = run(&[
        "gen-task",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        task.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (spec, adapter, train, task)
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["analyze", "--bogus"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn help_exits_0() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn analyze_identical_containers_reports_unity() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let c = two_layer_container(&mut rng);
    let pre = dir.path().join("pre");
    let ft = dir.path().join("ft");
    save_container(&pre, &c).unwrap();
    save_container(&ft, &c).unwrap();

    let out_path = dir.path().join("reports.json");
    let out = run(&[
        "analyze",
        "--pre",
        pre.to_str().unwrap(),
        "--ft",
        ft.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().next().unwrap().starts_with("config "));

    let reports: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 10);
    for report in reports {
        for ratio in report["sigma_ratio"].as_array().unwrap() {
            assert!((ratio.as_f64().unwrap() - 1.0).abs() < 1e-9);
        }
        for align in report["left_alignment"].as_array().unwrap() {
            assert!(align.as_f64().unwrap() > 1.0 - 1e-9);
        }
    }
}

#[test]
fn analyze_match_glob_selects_one_layer() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let c = two_layer_container(&mut rng);
    let pre = dir.path().join("pre");
    let ft = dir.path().join("ft");
    save_container(&pre, &c).unwrap();
    save_container(&ft, &c).unwrap();

    let out_path = dir.path().join("reports.json");
    let out = run(&[
        "analyze",
        "--pre",
        pre.to_str().unwrap(),
        "--ft",
        ft.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--match",
        "layer.0.*",
    ]);
    assert_eq!(code(&out), 0);
    let reports: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    let names: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["matrix_name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        ["layer.0.down", "layer.0.k", "layer.0.q", "layer.0.up", "layer.0.v"]
    );
}

#[test]
fn analyze_detects_planted_rescale_in_one_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let sigma: Vec<f64> = (0..6).map(|i| 10.0 * (1.0 - 0.12 * i as f64)).collect();
    let w = concentrated_base(72, 6, 9, 2, &sigma).unwrap();
    let w_ft = exact_rescale(&w, &[2.0, 1.5], Direction::Top).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let other = random_matrix(&mut rng, 6, 9);
    let mut pre = WeightContainer::new();
    pre.insert("layer.0.q", w.clone()).unwrap();
    pre.insert("layer.0.v", other.clone()).unwrap();
    let mut ft = WeightContainer::new();
    ft.insert("layer.0.q", w_ft).unwrap();
    ft.insert("layer.0.v", other).unwrap();
    let pre_dir = dir.path().join("pre");
    let ft_dir = dir.path().join("ft");
    save_container(&pre_dir, &pre).unwrap();
    save_container(&ft_dir, &ft).unwrap();

    let out_path = dir.path().join("reports.csv");
    let out = run(&[
        "analyze",
        "--pre",
        pre_dir.to_str().unwrap(),
        "--ft",
        ft_dir.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "matrix_name,index,sigma_pre,sigma_ft,ratio,left_align,right_align"
    );
    let q_rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|cols| cols[0] == "layer.0.q")
        .collect();
    assert_eq!(q_rows.len(), 6);
    let ratio0: f64 = q_rows[0][4].parse().unwrap();
    let ratio1: f64 = q_rows[1][4].parse().unwrap();
    assert!((ratio0 - 2.0).abs() < 5e-2, "ratio0 {ratio0}");
    assert!((ratio1 - 1.5).abs() < 5e-2, "ratio1 {ratio1}");
}

#[test]
fn analyze_shape_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let mut pre = WeightContainer::new();
    pre.insert("layer.0.q", random_matrix(&mut rng, 4, 5)).unwrap();
    let mut ft = WeightContainer::new();
    ft.insert("layer.0.q", random_matrix(&mut rng, 5, 4)).unwrap();
    let pre_dir = dir.path().join("pre");
    let ft_dir = dir.path().join("ft");
    save_container(&pre_dir, &pre).unwrap();
    save_container(&ft_dir, &ft).unwrap();

    let out = run(&[
        "analyze",
        "--pre",
        pre_dir.to_str().unwrap(),
        "--ft",
        ft_dir.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("layer.0.q"), "{stderr}");
}

#[test]
fn analyze_missing_container_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "analyze",
        "--pre",
        dir.path().join("nope").to_str().unwrap(),
        "--ft",
        dir.path().join("nope").to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn analyze_empty_intersection_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    let mut pre = WeightContainer::new();
    pre.insert("layer.0.q", random_matrix(&mut rng, 3, 3)).unwrap();
    let mut ft = WeightContainer::new();
    ft.insert("layer.1.q", random_matrix(&mut rng, 3, 3)).unwrap();
    let pre_dir = dir.path().join("pre");
    let ft_dir = dir.path().join("ft");
    save_container(&pre_dir, &pre).unwrap();
    save_container(&ft_dir, &ft).unwrap();

    let out = run(&[
        "analyze",
        "--pre",
        pre_dir.to_str().unwrap(),
        "--ft",
        ft_dir.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_task_identity_when_nothing_planted() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(
        &spec,
        &serde_json::json!({
            "n": 5, "m": 7, "k_true": 0, "d_true": [], "rank_true": 0,
            "noise_sigma": 0.0, "num_samples": 8, "seed": 3
        }),
    );
    let task = dir.path().join("task");
    let out = run(&[
        "gen-task",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        task.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let base = std::fs::read(task.join("base/layer.0.q.bin")).unwrap();
    let teacher = std::fs::read(task.join("teacher/layer.0.q.bin")).unwrap();
    assert_eq!(base, teacher, "teacher must equal base when nothing is planted");
}

#[test]
fn gen_task_invalid_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(
        &spec,
        &serde_json::json!({
            "n": 5, "m": 7, "k_true": 2, "d_true": [9.0, 1.0], "rank_true": 0,
            "noise_sigma": 0.0, "num_samples": 8, "seed": 3
        }),
    );
    let out = run(&[
        "gen-task",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().join("task").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_task_then_analyze_recovers_planted_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, _, task) = scaffold(dir.path(), 1);
    let out_path = dir.path().join("reports.json");
    let out = run(&[
        "analyze",
        "--pre",
        task.join("base").to_str().unwrap(),
        "--ft",
        task.join("teacher").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let reports: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    let ratios = reports[0]["sigma_ratio"].as_array().unwrap();
    let r0 = ratios[0].as_f64().unwrap();
    let r1 = ratios[1].as_f64().unwrap();
    assert!((r0 - 2.0).abs() / 2.0 < 0.10, "r0 {r0}");
    assert!((r1 - 1.5).abs() / 1.5 < 0.10, "r1 {r1}");
}

#[test]
fn train_zero_epochs_writes_init_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (_, adapter, train, task) = scaffold(dir.path(), 0);
    let out_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--task",
        task.to_str().unwrap(),
        "--adapter",
        adapter.to_str().unwrap(),
        "--train",
        train.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let result: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(result["loss_curve"].as_array().unwrap().len(), 0);
    assert_eq!(result["final_train_loss"], result["final_eval_loss"]);
    assert_eq!(result["trainable_params"], 2 * (8 + 10) + 2);

    // d at init is all ones, b all zeros
    let d = speclora::io::read_tensor(&out_dir.join("adapter/d.bin")).unwrap();
    assert!(d.data().iter().all(|&v| v == 1.0));
    let b = speclora::io::read_tensor(&out_dir.join("adapter/b.bin")).unwrap();
    assert!(b.is_zero());
}

#[test]
fn train_reduces_loss_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (_, adapter, train, task) = scaffold(dir.path(), 120);
    let run_once = |name: &str| -> serde_json::Value {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "train",
            "--task",
            task.to_str().unwrap(),
            "--adapter",
            adapter.to_str().unwrap(),
            "--train",
            train.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&std::fs::read(out_dir.join("run.json")).unwrap()).unwrap()
    };
    let r1 = run_once("a");
    let r2 = run_once("b");
    let curve = r1["loss_curve"].as_array().unwrap();
    let first = curve.first().unwrap().as_f64().unwrap();
    let last = curve.last().unwrap().as_f64().unwrap();
    assert!(last < 1e-2 * first, "first {first}, last {last}");
    assert_eq!(r1["loss_curve"], r2["loss_curve"]);
}

#[test]
fn train_divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (_, adapter, _, task) = scaffold(dir.path(), 2);
    let hot = dir.path().join("hot.json");
    write_json(
        &hot,
        &serde_json::json!({
            "learning_rate": 1e200, "epochs": 3, "batch_size": 16, "warmup_ratio": 0.0,
            "weight_decay": 0.0, "betas": [0.9, 0.999], "eps": 1e-8, "seed": 2
        }),
    );
    let out = run(&[
        "train",
        "--task",
        task.to_str().unwrap(),
        "--adapter",
        adapter.to_str().unwrap(),
        "--train",
        hot.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("diverged"), "{stderr}");
}

#[test]
fn sweep_single_value_gives_one_row_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, adapter, train, _) = scaffold(dir.path(), 3);
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep", "--kind", "k", "--grid", "2", "--seeds", "3",
        "--spec", spec.to_str().unwrap(),
        "--adapter", adapter.to_str().unwrap(),
        "--train", train.to_str().unwrap(),
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "kind,grid_value,seed,trainable_params,final_train_loss,final_eval_loss,wall_time_s"
    );
    assert_eq!(lines.len(), 1 + 3);
    for (i, line) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], "k");
        assert_eq!(cols[1], "2");
        assert_eq!(cols[2], i.to_string());
    }
}

#[test]
fn sweep_direction_grid_gives_two_rows_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, adapter, train, _) = scaffold(dir.path(), 3);
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep", "--kind", "direction", "--grid", "top,bottom", "--seeds", "2",
        "--spec", spec.to_str().unwrap(),
        "--adapter", adapter.to_str().unwrap(),
        "--train", train.to_str().unwrap(),
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let rows: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("results.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let values: Vec<&str> = rows.iter().map(|r| r["grid_value"].as_str().unwrap()).collect();
    assert_eq!(values, ["top", "top", "bottom", "bottom"]);
}

#[test]
fn sweep_bad_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, adapter, train, _) = scaffold(dir.path(), 1);
    let out = run(&[
        "sweep", "--kind", "direction", "--grid", "sideways", "--seeds", "1",
        "--spec", spec.to_str().unwrap(),
        "--adapter", adapter.to_str().unwrap(),
        "--train", train.to_str().unwrap(),
        "--out", dir.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_passes_by_default() {
    let out = run(&["gradcheck", "--seed", "1", "--cases", "8"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max relative error"), "{stdout}");
    assert!(stdout.contains("PASS"), "{stdout}");
}

#[test]
fn gradcheck_zero_cases_exits_2() {
    let out = run(&["gradcheck", "--cases", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_fault_injection_exits_5() {
    let out = run(&["gradcheck", "--cases", "4", "--inject-fault"]);
    assert_eq!(code(&out), 5);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
}
