use std::path::Path;
use std::process::{Command, Output};

use nvfp4_emu::io::{read_tensor, write_tensor};
use nvfp4_emu::{dequantize_tensor, quantize_tensor, QuantConfig, Tensor};

fn nvfp4(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvfp4")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().to_string()))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn worked_block(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("block.fqt");
    write_tensor(&path, &Tensor::new(vec![1, 4], vec![10.0, 20.0, 30.0, 40.0]).unwrap()).unwrap();
    path
}

#[test]
fn adaptive_quantize_of_worked_block_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let input = worked_block(dir.path());
    let out = dir.path().join("q.nvf4");
    let o = nvfp4(&["quantize", p(&input), p(&out), "--mode", "adaptive", "--rule", "mse", "--tensor-scale", "1"]);
    assert!(o.status.success(), "{o:?}");
    let s = stdout(&o);
    assert_eq!(field(&s, "mse").parse::<f64>().unwrap(), 0.0);
    assert_eq!(field(&s, "fraction_4").parse::<f64>().unwrap(), 1.0);
    assert_eq!(field(&s, "blocks"), "1");
}

#[test]
fn fixed6_quantize_of_worked_block() {
    let dir = tempfile::tempdir().unwrap();
    let input = worked_block(dir.path());
    let out = dir.path().join("q.nvf4");
    let o = nvfp4(&["quantize", p(&input), p(&out), "--mode", "6", "--tensor-scale", "1"]);
    assert!(o.status.success(), "{o:?}");
    let s = stdout(&o);
    assert!((field(&s, "mse").parse::<f64>().unwrap() - 4.33).abs() <= 0.005);
    assert_eq!(field(&s, "fraction_4").parse::<f64>().unwrap(), 0.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = worked_block(dir.path());
    let out = dir.path().join("q.nvf4");
    let code = |o: Output| o.status.code().unwrap();

    assert_eq!(code(nvfp4(&["quantize", p(&input), p(&out), "--format", "mxfp4", "--mode", "adaptive"])), 4);
    assert_eq!(code(nvfp4(&["quantize", p(&input), p(&out), "--format", "mxfp4", "--tensor-scale", "2"])), 4);
    assert_eq!(code(nvfp4(&["quantize", p(&input), p(&out), "--mode", "5"])), 1);
    assert_eq!(code(nvfp4(&["bench", "--size", "4x4"])), 1);
    assert_eq!(code(nvfp4(&["analyze", "--ablation"])), 1);
    assert_eq!(code(nvfp4(&["quantize", p(&dir.path().join("missing")), p(&out)])), 2);

    let junk = dir.path().join("junk.fqt");
    std::fs::write(&junk, b"not a tensor").unwrap();
    assert_eq!(code(nvfp4(&["quantize", p(&junk), p(&out)])), 3);
    assert_eq!(code(nvfp4(&["dequantize", p(&input), p(&out)])), 3);
    assert_eq!(code(nvfp4(&["--help"])), 0);
}

#[test]
fn file_pipeline_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let x = Tensor::from_fn(vec![7, 40], |i| ((i * 37 % 101) as f32 - 50.0) * 0.03);
    let (input, q, back) = (dir.path().join("x.fqt"), dir.path().join("x.nvf4"), dir.path().join("y.fqt"));
    write_tensor(&input, &x).unwrap();
    for mode in ["6", "4", "adaptive"] {
        assert!(nvfp4(&["quantize", p(&input), p(&q), "--mode", mode]).status.success());
        assert!(nvfp4(&["dequantize", p(&q), p(&back)]).status.success());
        let cfg = match mode {
            "6" => QuantConfig::nvfp4(),
            "4" => QuantConfig::nvfp4().with_scale_mode(nvfp4_emu::ScaleMode::Fixed4).with_fp8_cap(256.0),
            _ => QuantConfig::adaptive(nvfp4_emu::SelectionRule::Mse),
        };
        let want = dequantize_tensor(&quantize_tensor(&x, &cfg).unwrap()).unwrap();
        assert_eq!(read_tensor(&back).unwrap(), want, "mode {mode}");
    }
}

#[test]
fn threshold_sweep_csv_starts_at_origin() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.fqt");
    write_tensor(&input, &Tensor::from_fn(vec![16, 64], |i| ((i as f32) * 0.37).sin() * 3.0)).unwrap();
    let o = nvfp4(&["analyze", p(&input), "--threshold-sweep"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let mut lines = s.lines();
    assert_eq!(lines.next(), Some("x,mse"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 0.0]);
    assert_eq!(s.lines().count(), 14);
}

#[test]
fn analyze_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = worked_block(dir.path());
    let report = dir.path().join("r.json");
    let o = nvfp4(&["analyze", p(&input), "--out-format", "json", "--tensor-scale", "1", "-o", p(&report)]);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["compare"]["nvfp4_fixed4"], 0.0);
    assert_eq!(v["compare"]["adaptive_fraction_4"], 1.0);
    assert_eq!(v["threshold_sweep"].as_array().unwrap().len(), 13);
    assert!(v["curve"].as_array().unwrap().len() > 2);
    assert_eq!(v["ablation"]["mse_hp_values"], 0.0);
}

#[test]
fn bench_is_deterministic() {
    let run = || {
        let o = nvfp4(&["bench", "--size", "64x64x64", "--seed", "7", "--json"]);
        assert!(o.status.success(), "{o:?}");
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v
    };
    let (a, b) = (run(), run());
    assert_eq!(a["schema"], 1);
    assert_eq!(a["results"], b["results"]);
    assert_eq!(a["results"]["matmul_oracle_ok"], true);
    assert_eq!(a["results"]["matmul_thread_invariant"], true);
}
