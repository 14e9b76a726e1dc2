use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_MODEL: &[&str] = &[
    "model.transformer.layers=1",
    "model.transformer.heads=2",
    "model.transformer.d_emb=16",
    "model.transformer.d_head=8",
    "model.transformer.window=10",
    "model.windows.window=10",
    "data.folds=4",
];

fn occusense(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_occusense"));
    cmd.args(args);
    for s in sets {
        cmd.args(["--set", s]);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    out.sort();
    out
}

fn synth(out: &Path, seed: &str, sets: &[&str]) {
    ok(occusense(&["synth", "--seed", seed, "--out", s(out)], sets));
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, "42", &["synth.duration_s=30"]);
    synth(&b, "42", &["synth.duration_s=30"]);
    let names: Vec<_> = files(&a)
        .iter()
        .map(|p| p.file_name().unwrap().to_owned())
        .collect();
    for required in [
        "events.csv",
        "truth.csv",
        "labels.csv",
        "audio.wav",
        "features.bin",
        "manifest.json",
        "run_manifest.json",
    ] {
        assert!(names.iter().any(|n| n == required), "missing {required}");
    }
    for n in names.iter().filter(|n| *n != "run_manifest.json") {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n:?} differs"
        );
    }
    let c = dir.path().join("c");
    synth(&c, "43", &["synth.duration_s=30"]);
    assert_ne!(
        fs::read(a.join("audio.wav")).unwrap(),
        fs::read(c.join("audio.wav")).unwrap()
    );
}

#[test]
fn train_learns_constant_occupancy() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("empty");
    synth(
        &scen,
        "5",
        &["synth.duration_s=200", "synth.arrival_rate=0"],
    );
    let run = dir.path().join("train");
    let mut sets = TINY_MODEL.to_vec();
    sets.push("model.epochs=3");
    ok(occusense(
        &[
            "train",
            "--scenario",
            s(&scen),
            "--scheme",
            "1",
            "--out",
            s(&run),
        ],
        &sets,
    ));
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    let last: f64 = loss
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(last < 0.01, "final loss {last}");
    assert!(run.join("model.ocpf").exists());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert!(!manifest["inputs"].as_array().unwrap().is_empty());
    assert_eq!(manifest["config"]["model"]["epochs"], 3);
}

#[test]
fn eval_replays_identically_and_sweep_has_six_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scen");
    synth(
        &scen,
        "9",
        &["synth.duration_s=600", "synth.arrival_rate=60"],
    );
    let train = dir.path().join("train");
    let mut sets = TINY_MODEL.to_vec();
    sets.push("model.epochs=30");
    ok(occusense(
        &[
            "train",
            "--scenario",
            s(&scen),
            "--clip",
            "1",
            "--seed",
            "4",
            "--out",
            s(&train),
        ],
        &sets,
    ));
    let ckpt = train.join("model.ocpf");

    let eval = dir.path().join("eval");
    ok(occusense(
        &[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--scenario",
            s(&scen),
            "--windows",
            "60,120",
            "--out",
            s(&eval),
        ],
        &sets,
    ));
    let replay = dir.path().join("replay");
    ok(occusense(
        &[
            "replay",
            s(&eval.join("run_manifest.json")),
            "--out",
            s(&replay),
        ],
        &[],
    ));
    for f in ["metrics.json", "predictions.csv", "report.txt"] {
        assert_eq!(
            fs::read(eval.join(f)).unwrap(),
            fs::read(replay.join(f)).unwrap(),
            "{f} differs on replay"
        );
    }

    let sweep = dir.path().join("sweep");
    let mut sweep_sets = sets.clone();
    sweep_sets.push("sweep.eval_repeats=5");
    ok(occusense(
        &[
            "dp-sweep",
            "--scenario",
            s(&scen),
            "--checkpoint",
            s(&ckpt),
            "--out",
            s(&sweep),
        ],
        &sweep_sets,
    ));
    let table = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let eps: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(eps, ["none", "5", "2", "1", "0.5", "0.25", "0.1"]);
    let mae: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(
        mae.windows(2).all(|w| w[1] >= w[0]),
        "MAE not non-decreasing: {mae:?}"
    );
}

#[test]
fn exit_codes_distinguish_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(
        occusense(&["synth", "--out", s(&out)], &["model.epoch=3"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        occusense(&["synth", "--out", s(&out)], &["synth.duration_s=0"])
            .status
            .code(),
        Some(2)
    );
    let missing = dir.path().join("nope");
    let code = occusense(&["train", "--scenario", s(&missing), "--out", s(&out)], &[])
        .status
        .code();
    assert_eq!(code, Some(3));
    assert_eq!(occusense(&["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(occusense(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn seal_and_unseal_a_scenario_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scen");
    synth(&scen, "1", &["synth.duration_s=10"]);
    let keys = dir.path().join("keys");
    ok(occusense(
        &["keygen", "--bits", "1024", "--out", s(&keys)],
        &[],
    ));
    let sealed = dir.path().join("sealed");
    ok(occusense(
        &[
            "seal",
            "--input",
            s(&scen),
            "--public-key",
            s(&keys.join("key.pub.pem")),
            "--out",
            s(&sealed),
        ],
        &[],
    ));
    let opened = dir.path().join("opened");
    ok(occusense(
        &[
            "unseal",
            "--input",
            s(&sealed),
            "--private-key",
            s(&keys.join("key.pem")),
            "--out",
            s(&opened),
        ],
        &[],
    ));
    assert_eq!(
        fs::read(scen.join("truth.csv")).unwrap(),
        fs::read(opened.join("truth.csv")).unwrap()
    );
    assert_eq!(
        fs::read(scen.join("audio.wav")).unwrap(),
        fs::read(opened.join("audio.wav")).unwrap()
    );

    let victim = sealed.join("truth.csv.ocsl");
    let mut bytes = fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(&victim, bytes).unwrap();
    let code = occusense(
        &[
            "unseal",
            "--input",
            s(&sealed),
            "--private-key",
            s(&keys.join("key.pem")),
            "--out",
            s(&dir.path().join("o2")),
        ],
        &[],
    )
    .status
    .code();
    assert_eq!(code, Some(6));
}
