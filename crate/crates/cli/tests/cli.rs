use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn groupcast(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupcast")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const GLANCE: &str = r#"
name = "glance"
[dataset]
kind = "glancing"
mode = "separated"
[train]
variant = "SP-GRU-latent"
steps = 4
"#;

const SPEAK: &str = r#"
name = "speak"
[dataset]
kind = "speaking"
dynamics = "full_random"
groups = 6
eval_groups = 3
[train]
variant = "SP-GRU-latent"
steps = 6
log_every = 2
"#;

#[test]
fn generate_is_reproducible_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "g.toml", GLANCE);
    for out in ["a", "b"] {
        let o = groupcast(&["generate", "--config", &cfg, "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &str, f: &str| fs::read(tmp.path().join(d).join("data").join(f)).unwrap();
    assert_eq!(read("a", "corpus.jsonl"), read("b", "corpus.jsonl"));
    assert_eq!(read("a", "eval.jsonl"), read("b", "eval.jsonl"));
    let corpus = String::from_utf8(read("a", "corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 1 + 12568);
    assert!(corpus.lines().next().unwrap().contains("\"records\":12568"));
    assert!(tmp.path().join("a/config.toml").exists());

    let again = groupcast(&["generate", "--config", &cfg, "--out", "a"], tmp.path());
    assert!(!again.status.success());
    assert!(stderr(&again).contains("--force"));
    assert!(groupcast(&["generate", "--config", &cfg, "--out", "a", "--force"], tmp.path()).status.success());
}

#[test]
fn config_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_kind = write_config(tmp.path(), "k.toml", &GLANCE.replace("glancing", "waving"));
    let o = groupcast(&["generate", "--config", &bad_kind], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("k.toml"));

    let bad_variant = write_config(tmp.path(), "v.toml", &GLANCE.replace("SP-GRU-latent", "SP-GRU-dot"));
    let o = groupcast(&["train", "--config", &bad_variant], tmp.path());
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("ASP-GRU-dot") && msg.contains("NP-latent"), "{msg}");

    let cfg = write_config(tmp.path(), "g.toml", GLANCE);
    let o = groupcast(&["train", "--config", &cfg, "--out", "missing"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("generate"));
}

#[test]
fn speaking_run_end_to_end_with_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", SPEAK);
    let run = |args: &[&str]| {
        let o = groupcast(args, tmp.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["generate", "--config", &cfg, "--out", "r", "--seed", "3"]);
    assert!(fs::read_to_string(tmp.path().join("r/config.toml")).unwrap().contains("seed = 3"));
    run(&["train", "--out", "r"]);
    let log = fs::read_to_string(tmp.path().join("r/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(tmp.path().join("r/checkpoint.json").exists());

    let o = groupcast(&["train", "--out", "r"], tmp.path());
    assert!(!o.status.success() && stderr(&o).contains("--resume"));

    let more = write_config(tmp.path(), "s2.toml", &SPEAK.replace("steps = 6", "steps = 10"));
    run(&["train", "--config", &more, "--out", "r", "--seed", "3", "--resume"]);
    let log = fs::read_to_string(tmp.path().join("r/train_log.jsonl")).unwrap();
    assert!(log.lines().last().unwrap().contains("\"step\":10"));

    let out = run(&["evaluate", "--config", &more, "--out", "r", "--seed", "3"]);
    assert!(out.contains("ll_mean") && out.contains("accuracy"));
    assert!(fs::read_to_string(tmp.path().join("r/generalization.txt")).unwrap().starts_with("model loss"));
    let table = fs::read_to_string(tmp.path().join("r/timesteps.txt")).unwrap();
    assert_eq!(table.lines().count(), 5);
    run(&["diagnose", "--config", &more, "--out", "r", "--seed", "3"]);
    assert!(fs::read_to_string(tmp.path().join("r/posterior.txt")).unwrap().contains("# collapsed"));
    run(&["plot", "--config", &more, "--out", "r", "--seed", "3"]);
    let svg = fs::read_to_string(tmp.path().join("r/figures/speakers.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<circle"));
}

#[test]
fn glancing_diagnose_writes_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "g.toml", GLANCE);
    for cmd in ["generate", "train", "evaluate", "diagnose", "plot"] {
        let o = groupcast(&[cmd, "--config", &cfg, "--out", "g"], tmp.path());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let report = fs::read_to_string(tmp.path().join("g/report.txt")).unwrap();
    assert!(report.contains("# type_i") && report.contains("# type_iii") && report.contains("mae_deg_mean"));
    let sweep = fs::read_to_string(tmp.path().join("g/sweep.txt")).unwrap();
    let rows: Vec<&str> = sweep.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 11);
    assert!(rows[0].starts_with("0.2500") && rows[10].starts_with("1.7500"));
    for f in ["timesteps.svg", "predictions.svg", "latent_sweep.svg"] {
        assert!(tmp.path().join("g/figures").join(f).exists(), "{f}");
    }
}
