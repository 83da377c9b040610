use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
depth = 3
base_channels = 4
disc_depth = 2
disc_base_channels = 2
epochs = 1
seed = 3
synth_size = 16x16
synth_strokes = 1
synth_crossings = 1
synth_radius = 2
synth_width_min = 2
synth_width_max = 3
synth_train = 6
synth_test = 2
val_fraction = 0.2
";

fn avfusion(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avfusion"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AVFUSION_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes the tiny config with `data_root` pointing at a generated dataset.
fn tiny_setup(dir: &Path) -> String {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, format!("{TINY}data_root = {}\n", dir.join("data").display())).unwrap();
    let o = avfusion(&["synth", "-c", cfg.to_str().unwrap()], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    cfg.to_str().unwrap().to_string()
}

#[test]
fn missing_dataset_exits_with_two_and_names_directory() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_dataset");
    let o = avfusion(&["train", "--set", &format!("data_root={}", missing.display())], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_dataset"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rte = 0.1\n").unwrap();
    let o = avfusion(&["train", "-c", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rte"));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(dir.path());
    let out = dir.path().join("run");
    let o = avfusion(&["train", "-c", &cfg, "--epochs", "0", "-o", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("best.ckpt").is_file());
    assert!(out.join("config.txt").is_file());
    let log = std::fs::read_to_string(out.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 1, "header only");
}

#[test]
fn output_root_variable_redirects_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(dir.path());
    let root = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_avfusion"))
        .args(["train", "-c", &cfg, "--epochs", "0"])
        .current_dir(dir.path())
        .env("AVFUSION_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("runs").join("best.ckpt").is_file());
}

#[test]
fn train_eval_predict_curves_stats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_setup(d);
    let run = d.join("run");
    let o = avfusion(&["train", "-c", &cfg, "-o", run.to_str().unwrap()], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(run.join("train.log")).unwrap().lines().count(), 1 + 3);

    let ck = run.join("best.ckpt");
    let ev = d.join("eval");
    let o = avfusion(
        &["eval", "-c", &cfg, "--checkpoint", ck.to_str().unwrap(), "-o", ev.to_str().unwrap()],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("crossing-region F1"));
    for f in ["report.json", "roc.txt", "pr.txt", "table.md"] {
        assert!(ev.join(f).is_file(), "{f}");
    }

    // Evaluation is deterministic given the checkpoint.
    let ev2 = d.join("eval2");
    avfusion(
        &["eval", "-c", &cfg, "--checkpoint", ck.to_str().unwrap(), "-o", ev2.to_str().unwrap()],
        d,
    );
    assert_eq!(
        std::fs::read(ev.join("report.json")).unwrap(),
        std::fs::read(ev2.join("report.json")).unwrap()
    );

    let pred = d.join("pred");
    let img = d.join("data/images/scene_0000.png");
    let o = avfusion(
        &["predict", "--checkpoint", ck.to_str().unwrap(), "--image", img.to_str().unwrap(), "-o", pred.to_str().unwrap()],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["classes.png", "overlay.png", "prob_artery.png", "branch_artery.png", "branch_vein.png"] {
        assert!(pred.join(f).is_file(), "{f}");
    }

    let plots = d.join("plots");
    let o = avfusion(&["curves", ev.to_str().unwrap(), ev2.to_str().unwrap(), "-o", plots.to_str().unwrap()], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(plots.join("roc.svg")).unwrap().matches("<polyline").count(), 2);

    let o = avfusion(&["stats", ev.to_str().unwrap(), ev2.to_str().unwrap()], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let p_row = stdout(&o).lines().find(|l| l.starts_with("| P-value")).unwrap().to_string();
    assert_eq!(p_row.matches("1.0000").count(), 5, "{p_row}");
}

#[test]
fn curves_of_perfect_report_pass_through_top_left() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("perfect");
    std::fs::create_dir_all(&rep).unwrap();
    std::fs::write(rep.join("roc.txt"), "0 0\n0 1\n1 1\n").unwrap();
    std::fs::write(rep.join("pr.txt"), "0 1\n1 1\n").unwrap();
    let out = dir.path().join("plots");
    let o = avfusion(&["curves", rep.to_str().unwrap(), "-o", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ROC area 1.0000"));
    let svg = std::fs::read_to_string(out.join("roc.svg")).unwrap();
    // (0, 1) maps to the plot's top-left corner
    assert!(svg.contains("60.00,40.00"), "{svg}");
}

#[test]
fn ablate_emits_four_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_setup(d);
    let out = d.join("abl");
    let o = avfusion(&["ablate", "-c", &cfg, "--seeds", "2", "-o", out.to_str().unwrap()], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Method")).collect();
    let labels: Vec<&str> = rows.iter().map(|r| r.split('|').nth(1).unwrap().trim()).collect();
    assert_eq!(labels, ["Baseline", "Seg", "Seg+Deep", "Seg+Deep+BF"]);
    assert!(!rows[0].contains('('));
    assert!(rows[1..].iter().all(|r| r.contains("(+") || r.contains("(-")));
    assert!(text.contains("BF increment"));
    assert!(out.join("ablation.json").is_file());
    assert!(out.join("seg-deep-bf/seed4/test/report.json").is_file());
}

#[test]
fn ablate_parallel_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_setup(d);
    let (a, b) = (d.join("seq"), d.join("par"));
    let o1 = avfusion(&["ablate", "-c", &cfg, "-o", a.to_str().unwrap()], d);
    let o2 = avfusion(&["ablate", "-c", &cfg, "--parallel", "-o", b.to_str().unwrap()], d);
    assert!(o1.status.success() && o2.status.success());
    assert_eq!(
        std::fs::read(a.join("ablation.md")).unwrap(),
        std::fs::read(b.join("ablation.md")).unwrap()
    );
}
