use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use texswap::datasets::{DatasetManifest, Split};
use texswap::downstream::ExperimentReport;

const TINY: &str = r#"
[data]
per_class = 6

[translator]
batch_size = 2
steps = 2
r1_interval = 2
checkpoint_every = 0
panel_every = 1

[translator.net]
base_width = 8
max_width = 16
texture_dim = 16
patch_count = 4

[classifier]
stages = 2
width = 4
epochs = 1
batch_size = 8
seeds = [0]
"#;

fn texswap(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_texswap"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("TEXSWAP_")) {
        cmd.env_remove(k);
    }
    cmd.args(args).output().expect("spawn texswap")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let o = texswap(&[
        "build-data",
        "--source",
        p(&root.join("source")),
        "--out",
        p(&data),
        "--render-source",
        "--config",
        p(&config),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    Fixture {
        _dir: dir,
        root,
        config,
        data,
    }
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}", path.display()));
    assert_eq!(
        actual, expected,
        "help text for {name} changed; rerun with UPDATE_GOLDEN=1"
    );
}

#[test]
fn help_matches_golden_output() {
    let o = texswap(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    golden("help.txt", &stdout(&o));
    for sub in ["build-data", "train-translator", "augment", "experiment", "report"] {
        let o = texswap(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        let mut blocks: Vec<String> = Vec::new();
        for line in text.lines() {
            let t = line.trim_start();
            if t.starts_with("--") || t.starts_with("-h") {
                blocks.push(String::new());
            }
            if let Some(b) = blocks.last_mut() {
                b.push_str(t);
                b.push('\n');
            }
        }
        for block in &blocks {
            let flag = block.split_whitespace().next().unwrap().trim_end_matches(',');
            let takes_value = block.lines().next().unwrap().contains('<');
            let required = text
                .lines()
                .any(|l| l.starts_with("Usage:") && l.contains(&format!("{flag} <")));
            if takes_value && !required && flag != "--config" && flag != "--resume" && flag != "--arm" {
                assert!(block.contains("[default"), "{sub} {flag} lacks a default:\n{block}");
            }
        }
        golden(&format!("{sub}.txt"), &text);
    }
}

#[test]
fn usage_errors_exit_2() {
    let o = texswap(&["build-data", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--source"));
    let o = texswap(&["build-data", "--source", "a", "--out", "b", "--dataset", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(texswap(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_config_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[translator]\nlearning_rate = 1.0\n").unwrap();
    let o = texswap(&[
        "train-translator",
        "--data",
        p(dir.path()),
        "--out",
        p(&dir.path().join("run")),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn pipeline_smoke() {
    let f = fixture();
    let train = DatasetManifest::load(&f.data, Split::Train).unwrap();
    assert_eq!(train.len(), 12);

    // a second build into the same directory needs --force
    let again = texswap(&[
        "build-data",
        "--source",
        p(&f.root.join("source")),
        "--out",
        p(&f.data),
        "--config",
        p(&f.config),
    ]);
    assert_eq!(again.status.code(), Some(2));

    let run = f.root.join("run");
    let o = texswap(&[
        "train-translator",
        "--data",
        p(&f.data),
        "--out",
        p(&run),
        "--config",
        p(&f.config),
        "--ablation",
        "no_texture",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = PathBuf::from(stdout(&o).lines().last().unwrap());
    assert!(ckpt.join("meta.txt").is_file());
    let echoed = fs::read_to_string(run.join("run_config.toml")).unwrap();
    assert!(echoed.contains("ablation = \"no_texture\""), "{echoed}");

    let aug = |name: &str| {
        let out = f.root.join(name);
        let o = texswap(&[
            "augment",
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&f.data),
            "--out",
            p(&out),
            "--seed",
            "3",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out
    };
    let (a1, a2) = (aug("aug1"), aug("aug2"));
    let m1 = DatasetManifest::load(&a1, Split::Train).unwrap();
    assert_eq!(m1.len(), train.len());
    assert_eq!(
        fs::read(m1.manifest_path()).unwrap(),
        fs::read(DatasetManifest::load(&a2, Split::Train).unwrap().manifest_path()).unwrap()
    );

    let missing = texswap(&[
        "augment",
        "--checkpoint",
        p(&f.root.join("nope")),
        "--data",
        p(&f.data),
        "--out",
        p(&f.root.join("aug3")),
    ]);
    assert_eq!(missing.status.code(), Some(1));

    let exp = f.root.join("exp");
    let o = texswap(&[
        "experiment",
        "--data",
        p(&f.data),
        "--out",
        p(&exp),
        "--arm",
        &format!("proposed={}", p(&a1)),
        "--config",
        p(&f.config),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report_path = PathBuf::from(stdout(&o).lines().last().unwrap());
    assert_eq!(report_path, exp.join("report.json"));
    let report = ExperimentReport::load(&report_path).unwrap();
    let names: Vec<&str> = report.arms.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, ["baseline", "proposed"]);
    assert!(exp.join("report.png").is_file());

    fs::remove_file(exp.join("report.png")).unwrap();
    let o = texswap(&["report", "--report", p(&report_path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(exp.join("report.png").is_file());
    assert_eq!(stdout(&o).lines().last().unwrap(), p(&report_path));
}

#[test]
fn env_override_reaches_echoed_config() {
    let f = fixture();
    let run = f.root.join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_texswap"))
        .env("TEXSWAP_TRANSLATOR__STEPS", "1")
        .args([
            "train-translator",
            "--data",
            p(&f.data),
            "--out",
            p(&run),
            "--config",
            p(&f.config),
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("1 steps"));
    let echoed = fs::read_to_string(run.join("run_config.toml")).unwrap();
    assert!(echoed.contains("steps = 1\n"), "{echoed}");
}
