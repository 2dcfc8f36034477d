use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flarewatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flarewatch"))
        .args(args)
        .env_remove("FLAREWATCH_LLM_API_KEY")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = flarewatch(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    flarewatch(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_and_label(dir: &Path, preset: &str, frames: &str) -> std::path::PathBuf {
    let scene = dir.join(preset);
    ok(&["simulate", "--preset", preset, "--out", s(&scene), "--frames", frames]);
    let labels = dir.join(format!("{preset}.jsonl"));
    ok(&[
        "label",
        "--annotations",
        s(&scene.join("annotations.jsonl")),
        "--frames",
        s(&scene.join("frames")),
        "--out",
        s(&labels),
    ]);
    labels
}

#[test]
fn simulate_train_monitor_plot_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let low = simulate_and_label(dir, "smoky_low", "40");
    let high = simulate_and_label(dir, "clean_high", "40");
    let all = dir.join("all.jsonl");
    fs::write(&all, fs::read_to_string(&low).unwrap() + &fs::read_to_string(&high).unwrap()).unwrap();

    let model = dir.join("model.json");
    let log = dir.join("train.csv");
    let stdout = ok(&[
        "train",
        "--labels",
        s(&all),
        "--out",
        s(&model),
        "--feature-log",
        s(&log),
        "--created-at",
        "0",
    ]);
    assert!(stdout.contains("<- selected"), "{stdout}");
    assert!(fs::read_to_string(&log).unwrap().starts_with("frame,track_id,ratio,E,angle,pc1,pc2,label\n"));

    let alerts = dir.join("alerts.jsonl");
    let low_scene = dir.join("smoky_low");
    let stdout = ok(&[
        "monitor",
        "--model",
        s(&model),
        "--input",
        s(&low_scene.join("annotations.jsonl")),
        "--frames",
        s(&low_scene.join("frames")),
        "--alert-window",
        "5",
        "--alerts",
        s(&alerts),
    ]);
    assert!(stdout.contains("ALERT track 1"), "{stdout}");
    assert!(!fs::read_to_string(&alerts).unwrap().is_empty());

    let high_scene = dir.join("clean_high");
    let stdout = ok(&[
        "monitor",
        "--model",
        s(&model),
        "--input",
        s(&high_scene.join("annotations.jsonl")),
        "--frames",
        s(&high_scene.join("frames")),
    ]);
    assert!(!stdout.contains("ALERT"), "{stdout}");
    assert!(stdout.contains(" high ratio="));

    let svg = dir.join("fig.svg");
    ok(&["plot", "--samples", s(&log), "--out", s(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("PC1") && text.contains("class=\"marker low\""));

    let stdout = ok(&["eval", "--model", s(&model), "--test", s(&all)]);
    assert!(stdout.contains("accuracy 1\n"), "{stdout}");
}

#[test]
fn training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let table = dir.join("t.csv");
    fs::write(
        &table,
        "ratio,E,angle\n0.1,0.7,40\n0.2,0.6,45\n0.15,0.65,50\n0.12,0.68,42\n\
         0.8,0.3,20\n0.9,0.25,15\n0.7,0.33,25\n0.85,0.28,18\n",
    )
    .unwrap();
    let train = |name: &str| {
        let model = dir.join(name);
        ok(&["train", "--features", s(&table), "--out", s(&model), "--created-at", "1700000000"]);
        fs::read(model).unwrap()
    };
    assert_eq!(train("a.json"), train("b.json"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&["bogus"]), 1);
    assert_eq!(code(&["simulate", "--out", "x"]), 1);
    assert_eq!(code(&["monitor", "--model", "m.json", "--input", "a.jsonl"]), 1);
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["simulate", "--preset", "nope", "--out", s(tmp.path())]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad_model = dir.join("model.json");
    fs::write(&bad_model, "{\"metadata\":").unwrap();
    assert_eq!(code(&["monitor", "--model", s(&bad_model), "--preset", "windy"]), 2);
    assert_eq!(code(&["eval", "--model", s(&dir.join("missing.json")), "--test", "x.csv"]), 2);

    let scene = dir.join("scene");
    ok(&["simulate", "--preset", "clean_high", "--out", s(&scene), "--frames", "3"]);
    let ann = scene.join("annotations.jsonl");
    let text = fs::read_to_string(&ann).unwrap();
    fs::write(&ann, &text[..text.len() / 2]).unwrap();
    let labels = dir.join("l.jsonl");
    let frames = scene.join("frames");
    let args = ["label", "--annotations", s(&ann), "--frames", s(&frames), "--out", s(&labels)];
    assert_eq!(code(&args), 2);

    let one_class = dir.join("one.csv");
    fs::write(&one_class, "ratio,E,angle\n0.1,0.7,40\n0.2,0.6,45\n0.15,0.65,50\n").unwrap();
    assert_eq!(code(&["train", "--features", s(&one_class), "--out", s(&dir.join("m"))]), 2);
}

#[test]
fn labeling_service_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("t.csv");
    fs::write(&table, "ratio,E,angle\n0.2,0.6,45\n").unwrap();
    let out = tmp.path().join("l.jsonl");
    let args = ["label", "--mode", "llm", "--features", s(&table), "--out", s(&out)];
    assert_eq!(code(&args), 1, "missing key");

    let unreachable = Command::new(env!("CARGO_BIN_EXE_flarewatch"))
        .args(args)
        .args(["--endpoint", "http://127.0.0.1:9/v1/chat", "--timeout", "0.5", "--max-retries", "0"])
        .env("FLAREWATCH_LLM_API_KEY", "test")
        .output()
        .unwrap();
    assert_eq!(unreachable.status.code(), Some(3));
    assert!(!out.exists());
}
