use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn vtrim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtrim"))
        .args(args)
        .output()
        .expect("spawn vtrim")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("json error line");
    serde_json::from_str(line).unwrap()
}

struct Data {
    dir: TempDir,
    tokens: PathBuf,
    text: PathBuf,
}

fn gen(frames: usize, patches: usize, dim: usize, seed: u64, extra: &[&str]) -> Data {
    let dir = TempDir::new().unwrap();
    let tokens = dir.path().join("tokens.lft");
    let text = dir.path().join("text.lft");
    let (f, p, d, sd) = (
        frames.to_string(),
        patches.to_string(),
        dim.to_string(),
        seed.to_string(),
    );
    let mut args = vec![
        "gen",
        "--frames",
        &f,
        "--patches",
        &p,
        "--dim",
        &d,
        "--seed",
        &sd,
        "--output",
        s(&tokens),
        "--text-output",
        s(&text),
    ];
    args.extend_from_slice(extra);
    let o = vtrim(&args);
    assert!(
        o.status.success(),
        "gen failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    Data { dir, tokens, text }
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
        .parse()
        .unwrap()
}

#[test]
fn compress_joint_reaches_four_x() {
    let d = gen(8, 64, 32, 7, &[]);
    let out = d.dir.path().join("out.lft");
    let idx = d.dir.path().join("idx.json");
    let o = vtrim(&[
        "compress",
        "--input",
        s(&d.tokens),
        "--text",
        s(&d.text),
        "--temporal",
        "cs",
        "--temporal-ratio",
        "2",
        "--spatial",
        "text",
        "--spatial-ratio",
        "2",
        "--output",
        s(&out),
        "--indices",
        s(&idx),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    let ratio = field(&line, "ratio");
    assert!((ratio - 4.0).abs() / 4.0 < 0.05, "ratio {ratio}");

    let map: serde_json::Value = serde_json::from_slice(&std::fs::read(&idx).unwrap()).unwrap();
    assert_eq!(map["version"], 1);
    let n_out = field(&line, "output") as usize;
    assert_eq!(map["tokens"].as_array().unwrap().len(), n_out);
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(bytes.len(), 24 + n_out * 32 * 4);
}

#[test]
fn compress_matches_core_golden_map() {
    let d = gen(4, 16, 8, 7, &[]);
    let out = d.dir.path().join("out.lft");
    let idx = d.dir.path().join("idx.json");
    let o = vtrim(&[
        "compress",
        "--input",
        s(&d.tokens),
        "--text",
        s(&d.text),
        "--temporal",
        "cs",
        "--temporal-ratio",
        "2",
        "--spatial",
        "text",
        "--spatial-ratio",
        "2",
        "--output",
        s(&out),
        "--indices",
        s(&idx),
    ]);
    assert!(o.status.success());
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    assert_eq!(
        std::fs::read(&idx).unwrap(),
        std::fs::read(golden.join("seed7_index_map.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(&d.tokens).unwrap(),
        std::fs::read(golden.join("seed7_tokens.lft")).unwrap()
    );
}

#[test]
fn compress_off_preserves_payload() {
    let d = gen(3, 10, 6, 1, &[]);
    let out = d.dir.path().join("out.lft");
    let idx = d.dir.path().join("idx.json");
    let o = vtrim(&[
        "compress",
        "--input",
        s(&d.tokens),
        "--output",
        s(&out),
        "--indices",
        s(&idx),
    ]);
    assert!(o.status.success());
    let a = std::fs::read(&d.tokens).unwrap();
    let b = std::fs::read(&out).unwrap();
    assert_eq!(a[24..], b[24..]);
    assert!(stdout(&o).contains("ratio=1.0000"));
}

#[test]
fn spatial_text_without_text_is_usage_error() {
    let d = gen(2, 8, 4, 0, &[]);
    let out = d.dir.path().join("out.lft");
    let idx = d.dir.path().join("idx.json");
    let o = vtrim(&[
        "compress",
        "--input",
        s(&d.tokens),
        "--spatial",
        "text",
        "--spatial-ratio",
        "2",
        "--output",
        s(&out),
        "--indices",
        s(&idx),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["exit"], 1);
    assert!(!out.exists() && !idx.exists());
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(vtrim(&["compress", "--bogus"]).status.code(), Some(1));
    assert_eq!(vtrim(&["--help"]).status.code(), Some(0));
}

#[test]
fn truncated_input_is_io_error_without_partial_output() {
    let d = gen(2, 8, 4, 0, &[]);
    let bytes = std::fs::read(&d.tokens).unwrap();
    std::fs::write(&d.tokens, &bytes[..bytes.len() - 4]).unwrap();
    let out = d.dir.path().join("out.lft");
    let idx = d.dir.path().join("idx.json");
    let o = vtrim(&[
        "compress",
        "--input",
        s(&d.tokens),
        "--output",
        s(&out),
        "--indices",
        s(&idx),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "truncated-payload");
    assert!(!out.exists() && !idx.exists());
}

#[test]
fn missing_input_is_io_error() {
    let dir = TempDir::new().unwrap();
    let o = vtrim(&[
        "compress",
        "--input",
        s(&dir.path().join("nope.lft")),
        "--output",
        s(&dir.path().join("o.lft")),
        "--indices",
        s(&dir.path().join("i.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn impossible_ratio_is_config_error() {
    let d = gen(2, 8, 4, 0, &[]);
    let out = d.dir.path().join("out.lft");
    let idx = d.dir.path().join("idx.json");
    let o = vtrim(&[
        "compress",
        "--input",
        s(&d.tokens),
        "--temporal",
        "sd",
        "--temporal-ratio",
        "5",
        "--output",
        s(&out),
        "--indices",
        s(&idx),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists() && !idx.exists());
}

#[test]
fn gen_is_deterministic() {
    let a = gen(3, 12, 8, 99, &["--cls"]);
    let b = gen(3, 12, 8, 99, &["--cls"]);
    assert_eq!(
        std::fs::read(&a.tokens).unwrap(),
        std::fs::read(&b.tokens).unwrap()
    );
    assert_eq!(
        std::fs::read(&a.text).unwrap(),
        std::fs::read(&b.text).unwrap()
    );
    let c = gen(3, 12, 8, 100, &["--cls"]);
    assert_ne!(
        std::fs::read(&a.tokens).unwrap(),
        std::fs::read(&c.tokens).unwrap()
    );
}

#[test]
fn gen_rejects_redundancy_out_of_range() {
    let dir = TempDir::new().unwrap();
    let o = vtrim(&[
        "gen",
        "--frames",
        "2",
        "--patches",
        "4",
        "--dim",
        "4",
        "--temporal-redundancy",
        "1.2",
        "--output",
        s(&dir.path().join("t.lft")),
        "--text-output",
        s(&dir.path().join("x.lft")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn analyze_text_and_json_agree() {
    let text = stdout(&vtrim(&["analyze"]));
    let json: serde_json::Value =
        serde_json::from_str(&stdout(&vtrim(&["analyze", "--format", "json"]))).unwrap();
    let c = &json["comparisons"][0];
    let before_ops = c["before"]["total_ops"].as_f64().unwrap() / 1e12;
    let after_ms = c["after"]["prefill_time_s"].as_f64().unwrap() * 1e3;
    assert!(text.contains(&format!("{before_ops:.2}")), "{text}");
    assert!(text.contains(&format!("{after_ms:.2}")), "{text}");
}

#[test]
fn analyze_profiles_match_builtins() {
    let profiles = Path::new(env!("CARGO_MANIFEST_DIR")).join("profiles");
    let a = stdout(&vtrim(&["analyze", "--format", "json"]));
    let b = stdout(&vtrim(&[
        "analyze",
        "--format",
        "json",
        "--model",
        s(&profiles.join("vicuna-7b.json")),
        "--hardware",
        s(&profiles.join("a6000.json")),
    ]));
    assert_eq!(a, b);
}

#[test]
fn analyze_sweep_has_one_row_per_ratio() {
    let o = vtrim(&["analyze", "--ratio-sweep", "1,2,4,8,16", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn analyze_bad_profile_is_config_error() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("m.json");
    std::fs::write(
        &p,
        r#"{"name":"x","n_params":-1,"n_layers":1,"d_model":1,"d_ff":1,"n_heads":1}"#,
    )
    .unwrap();
    assert_eq!(vtrim(&["analyze", "--model", s(&p)]).status.code(), Some(3));
}

#[test]
fn bench_single_run_has_equal_stats() {
    let d = gen(2, 16, 8, 3, &[]);
    let o = vtrim(&[
        "bench",
        "--input",
        s(&d.tokens),
        "--temporal",
        "sd",
        "--temporal-ratio",
        "2",
        "--runs",
        "1",
        "--format",
        "json",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["min_ms"], v["median_ms"]);
    assert_eq!(v["max_ms"], v["median_ms"]);
}

#[test]
fn bench_full_size_input() {
    let d = gen(8, 2056, 1024, 5, &[]);
    let o = vtrim(&[
        "bench",
        "--input",
        s(&d.tokens),
        "--text",
        s(&d.text),
        "--ratio",
        "16",
        "--temporal",
        "cs",
        "--spatial",
        "text",
        "--runs",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ratio = field(&stdout(&o), "ratio");
    assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
}
