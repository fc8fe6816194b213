use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_MODEL: &str = "
[model.backbone]
num_layers = 1
model_dim = 16
num_heads = 2
max_context = 128
adapter_rank = 4
";

fn netadapt(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netadapt"))
        .args(args)
        .env("NETADAPT_OUT_DIR", out)
        .env_remove("NETADAPT_SEED")
        .env_remove("NETADAPT_DATASET")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, format!("{body}\n{SMALL_MODEL}")).unwrap();
    p
}

fn last_line(o: &Output) -> PathBuf {
    let s = String::from_utf8_lossy(&o.stdout);
    PathBuf::from(s.lines().last().unwrap().trim())
}

#[test]
fn abr_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "task = \"abr\"\nseed = 4\n[collect]\nepisodes = 10\n[train]\nsteps = 5\nbatch_size = 2\n[test]\nepisodes = 3",
    );
    let c = cfg.to_str().unwrap();
    let o = netadapt(&["collect", "-c", c], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = last_line(&o);
    let manifest = std::fs::read_to_string(data.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"trajectories\": 10"));
    assert!(manifest.contains("max_return"));

    let o = netadapt(&["adapt", "-c", c], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = last_line(&o);
    let curve: Vec<f64> = serde_json_lines(&ck.join("loss_curve.json"));
    assert_eq!(curve.len(), 5);

    let o = netadapt(&["test", "-c", c, "--checkpoint", ck.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let adapted = last_line(&o);
    let o = netadapt(&["test", "-c", c, "--policy", "bba"], dir.path());
    assert!(o.status.success());
    let bba = last_line(&o);

    let rep = dir.path().join("rep");
    let o = netadapt(
        &["report", bba.to_str().unwrap(), adapted.to_str().unwrap(), "-o", rep.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rep.join("cdf.svg").exists());
    assert!(rep.join("factors.svg").exists());

    // Tampered parameters breach the checkpoint digest.
    let params = ck.join("params.json");
    let text = std::fs::read_to_string(&params).unwrap();
    let start = text.find("\"data\":[").unwrap() + 8;
    let end = start + text[start..].find([',', ']']).unwrap();
    let tampered = format!("{}123.0{}", &text[..start], &text[end..]);
    std::fs::write(&params, tampered).unwrap();
    let o = netadapt(&["test", "-c", c, "--checkpoint", ck.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

fn serde_json_lines(p: &Path) -> Vec<f64> {
    let s = std::fs::read_to_string(p).unwrap();
    s.trim_matches(|c| c == '[' || c == ']' || c == '\n')
        .split(',')
        .map(|v| v.trim().parse().unwrap())
        .collect()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let vp = config(dir.path(), "task = \"vp\"\nseed = 1");
    let o = netadapt(&["collect", "-c", vp.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("viewport"));

    let o = netadapt(
        &["test", "-c", vp.to_str().unwrap(), "--policy", "hold", "--setting", "mars"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unseen1"));

    let o = netadapt(&["test", "-c", vp.to_str().unwrap(), "--policy", "oracle"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = netadapt(&["report"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mixed_task_report_is_usage() {
    let dir = tempfile::tempdir().unwrap();
    let vp = config(dir.path(), "task = \"vp\"\nseed = 1\n[vp]\ntraces = 10\ntrace_seconds = 12.0");
    let o = netadapt(&["test", "-c", vp.to_str().unwrap(), "--policy", "hold"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hold = last_line(&o);
    let cjs = dir.path().join("cjs.toml");
    std::fs::write(&cjs, "task = \"cjs\"\nseed = 1\n[test]\nepisodes = 1").unwrap();
    let o = netadapt(&["test", "-c", cjs.to_str().unwrap(), "--policy", "fifo"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fifo = last_line(&o);
    let o = netadapt(&["report", hold.to_str().unwrap(), fifo.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tampered_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "task = \"cjs\"\nseed = 2\n[collect]\nepisodes = 2\npolicy = \"fifo\"");
    let c = cfg.to_str().unwrap();
    let o = netadapt(&["collect", "-c", c], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = last_line(&o);
    let m = data.join("manifest.json");
    let text = std::fs::read_to_string(&m).unwrap();
    let mut v: Vec<String> = text.lines().map(String::from).collect();
    for line in v.iter_mut() {
        if line.contains("\"digest\"") {
            *line = "  \"digest\": \"00\"".into();
        }
    }
    std::fs::write(&m, v.join("\n")).unwrap();
    let o = netadapt(&["adapt", "-c", c], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn shipped_configs_resolve() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["abr.toml", "cjs.toml", "vp.toml"] {
        let cfg = netadapt_core::harness::ExperimentConfig::load(&root.join(name)).unwrap();
        cfg.resolve().unwrap();
    }
}
