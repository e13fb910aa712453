mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

use common::{ok, scenario_crossval_predict, scenario_decompose_train, scenario_synth, shimsense, small_synth, tree_hashes};
use shimsense::formats;
use shimsense::pipeline::MissingPolicy;
use shimsense::synth::{self, SynthConfig};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

fn load(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn assert_valid(schema_file: &str, instance_path: &Path) {
    let mut opts = jsonschema::options();
    for shared in ["matrix.schema.json", "pcp_config.schema.json", "train_config.schema.json"] {
        let res = jsonschema::Resource::from_contents(load(&schema_dir().join(shared))).unwrap();
        opts = opts.with_resource(format!("json-schema:///{shared}"), res);
    }
    let validator = opts.build(&load(&schema_dir().join(schema_file))).unwrap();
    let instance = load(instance_path);
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{} violates {schema_file}: {errors:?}", instance_path.display());
}

#[test]
fn reruns_are_bit_identical() {
    let scenarios: [(&str, fn(&Path)); 3] = [
        ("synth", scenario_synth),
        ("decompose+train", scenario_decompose_train),
        ("crossval+report+predict", scenario_crossval_predict),
    ];
    for (name, scenario) in scenarios {
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        scenario(a.path());
        scenario(b.path());
        let (ha, hb) = (tree_hashes(a.path()), tree_hashes(b.path()));
        assert!(ha.len() >= 2, "{name}: expected output files");
        assert_eq!(ha, hb, "{name}: outputs differ between runs");
    }
}

#[test]
fn seed_comes_from_environment_when_flag_absent() {
    let dir = TempDir::new().unwrap();
    let run = |seed: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_shimsense"))
            .args(["synth", "--n", "40", "--m", "6", "--rank", "2", "--out", out, "--truth", "t.json"])
            .current_dir(dir.path())
            .env("SHIMSENSE_SEED", seed)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("4", "a.csv");
    let b = run("4", "b.csv");
    let c = run("5", "c.csv");
    assert_eq!(a, b);
    assert_ne!(a, c);
    ok(dir.path(), &["--seed", "4", "synth", "--n", "40", "--m", "6", "--rank", "2", "--out", "d.csv", "--truth", "t.json"]);
    assert_eq!(fs::read(dir.path().join("d.csv")).unwrap(), a);
}

#[test]
fn synth_rank_above_unit_count_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = shimsense(dir.path(), &["synth", "--m", "4", "--rank", "5", "--out", "g.csv", "--truth", "t.json"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("min(n, m)"), "message should name the constraint: {msg}");
    assert!(!dir.path().join("g.csv").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(shimsense(dir.path(), &["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(shimsense(dir.path(), &["report", "--input", "x", "--format", "xml"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = shimsense(dir.path(), &["train", "--input", "absent.csv", "--out", "model"]);
    assert_eq!(out.status.code(), Some(3));
    let out = shimsense(dir.path(), &["synth", "--out", "no/such/dir/g.csv", "--truth", "t.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_csv_reingests_bit_exactly() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["--seed", "21", "synth", "--n", "120", "--m", "15", "--rank", "4", "--out", "g.csv", "--truth", "t.json"]);
    let ds = formats::read_gap_csv(&dir.path().join("g.csv"), MissingPolicy::Reject).unwrap();
    let (expected, _) = synth::generate(&SynthConfig::with_shape(120, 15, 4, 21)).unwrap();
    assert_eq!(ds.location_ids, expected.location_ids);
    assert_eq!(ds.unit_ids, expected.unit_ids);
    let same = ds
        .matrix
        .as_dmatrix()
        .iter()
        .zip(expected.matrix.as_dmatrix().iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same, "re-ingested matrix differs from generator output");

    let sidecar: formats::TruthSidecar = formats::read_json(&dir.path().join("t.json")).unwrap();
    assert_eq!(sidecar.config, SynthConfig::with_shape(120, 15, 4, 21));
}

#[test]
fn decompose_drives_pcp_examples_through_files() {
    let dir = TempDir::new().unwrap();
    let write = |name: &str, n: usize, m: usize, f: &dyn Fn(usize, usize) -> f64| {
        let mut text = String::from("location_id");
        for j in 0..m {
            text += &format!(",u{j}");
        }
        text.push('\n');
        for i in 0..n {
            text += &format!("p{i:03}");
            for j in 0..m {
                text += &format!(",{:?}", f(i, j));
            }
            text.push('\n');
        }
        fs::write(dir.path().join(name), text).unwrap();
    };
    let read = |name: &str| formats::read_gap_csv(&dir.path().join(name), MissingPolicy::Reject).unwrap().matrix;

    write("zero.csv", 8, 5, &|_, _| 0.0);
    ok(dir.path(), &["decompose", "--input", "zero.csv", "--out-dir", "z"]);
    assert_eq!(read("z/L.csv").frobenius_norm(), 0.0);
    assert_eq!(read("z/S.csv").frobenius_norm(), 0.0);
    let diag = load(&dir.path().join("z/diagnostics.json"));
    assert_eq!(diag["converged"], Value::Bool(true));
    assert_eq!(diag["iterations"], 0);

    let u = |i: usize| 1.0 + (i as f64 * 0.37).sin();
    let v = |j: usize| 0.5 + (j as f64 * 1.3).cos();
    write("r1.csv", 30, 10, &|i, j| u(i) * v(j));
    ok(dir.path(), &["decompose", "--input", "r1.csv", "--out-dir", "r1"]);
    let x = read("r1.csv");
    let l = read("r1/L.csv");
    let s = read("r1/S.csv");
    let xn = x.frobenius_norm();
    assert!((l.as_dmatrix() - x.as_dmatrix()).norm() / xn <= 1e-6);
    assert!(s.frobenius_norm() / xn <= 1e-6);
    assert_valid("decompose_diagnostics.schema.json", &dir.path().join("r1/diagnostics.json"));

    // Rank-2 field with uniform factors and 5% of entries spiked by 10, all
    // drawn from a hash of the position.
    let unit = |key: u64| (splitmix(key) >> 11) as f64 / (1u64 << 53) as f64;
    let a = |i: usize, k: usize| 2.0 * unit((i * 2 + k) as u64) - 1.0;
    let b = |j: usize, k: usize| 2.0 * unit(1_000_000 + (j * 2 + k) as u64) - 1.0;
    let low = |i: usize, j: usize| a(i, 0) * b(j, 0) + a(i, 1) * b(j, 1);
    let spiked = |i: usize, j: usize| unit(2_000_000 + (i * 50 + j) as u64) < 0.05;
    write("r2.csv", 200, 50, &|i, j| low(i, j) + if spiked(i, j) { 10.0 } else { 0.0 });
    ok(dir.path(), &["decompose", "--input", "r2.csv", "--out-dir", "r2"]);
    let l = read("r2/L.csv");
    let s = read("r2/S.csv");
    let (mut err, mut norm, mut hit, mut total) = (0.0, 0.0, 0, 0);
    for i in 0..200 {
        for j in 0..50 {
            err += (l.as_dmatrix()[(i, j)] - low(i, j)).powi(2);
            norm += low(i, j).powi(2);
            if spiked(i, j) {
                total += 1;
                hit += usize::from(s.as_dmatrix()[(i, j)] != 0.0);
            }
        }
    }
    assert!((err / norm).sqrt() <= 1e-3, "relative error {}", (err / norm).sqrt());
    assert!(hit as f64 >= 0.95 * total as f64);
}

#[test]
fn non_convergence_is_reported_not_fatal() {
    let dir = TempDir::new().unwrap();
    small_synth(dir.path(), "1");
    ok(dir.path(), &["decompose", "--input", "g.csv", "--out-dir", "d", "--max-iter", "2"]);
    let diag = load(&dir.path().join("d/diagnostics.json"));
    assert_eq!(diag["converged"], Value::Bool(false));
    assert_eq!(diag["iterations"], 2);
}

#[test]
fn missing_sensor_exits_5_and_names_it() {
    let dir = TempDir::new().unwrap();
    small_synth(dir.path(), "3");
    ok(dir.path(), &["train", "--input", "g.csv", "--segmentation", "seg.json", "--out", "model"]);
    let sensors = load(&dir.path().join("model/shim_2/sensors.json"));
    let dropped = sensors["location_ids"][0].as_str().unwrap().to_string();

    let text = fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let blanked: String = text
        .lines()
        .map(|line| {
            if line.starts_with(&format!("{dropped},")) {
                let mut cells: Vec<&str> = line.split(',').collect();
                cells[1] = "";
                cells.join(",")
            } else {
                line.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(dir.path().join("m.csv"), blanked + "\n").unwrap();

    let out = shimsense(dir.path(), &["predict", "--model", "model", "--measurements", "m.csv", "--out", "p.csv"]);
    assert_eq!(out.status.code(), Some(5));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains(&dropped), "stderr should list {dropped}: {msg}");
    assert!(!dir.path().join("p.csv").exists());
}

#[test]
fn tampered_model_is_rejected() {
    let dir = TempDir::new().unwrap();
    small_synth(dir.path(), "3");
    ok(dir.path(), &["train", "--input", "g.csv", "--out", "model"]);
    let mean = dir.path().join("model/all/mean.csv");
    let text = fs::read_to_string(&mean).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let edited = format!("{},0.5", lines[1].split(',').next().unwrap());
    lines[1] = &edited;
    fs::write(&mean, lines.join("\n") + "\n").unwrap();
    let out = shimsense(dir.path(), &["predict", "--model", "model", "--measurements", "g.csv", "--out", "p.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn crossval_on_constant_dataset_is_exact() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("location_id,a,b,c,d,e\n");
    for i in 0..30 {
        text += &format!("p{i:02},0.02,0.02,0.02,0.02,0.02\n");
    }
    fs::write(dir.path().join("c.csv"), text).unwrap();
    fs::write(
        dir.path().join("seg.json"),
        r#"{"left": ["p00","p01","p02","p03","p04","p05","p06","p07","p08","p09"],
            "right": ["p10","p11","p12","p13","p14","p15","p16","p17","p18","p19"]}"#,
    )
    .unwrap();
    ok(dir.path(), &["crossval", "--input", "c.csv", "--segmentation", "seg.json", "--out", "r.json"]);
    let report = load(&dir.path().join("r.json"));
    let summary = report["summary"].as_array().unwrap();
    assert_eq!(summary.len(), 2);
    for row in summary {
        assert_eq!(row["percent_accurate"].as_f64(), Some(100.0), "{row}");
    }
    assert_valid("report.schema.json", &dir.path().join("r.json"));
}

#[test]
fn report_columns_are_exact() {
    let dir = TempDir::new().unwrap();
    scenario_crossval_predict(dir.path());
    let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("region,percent_accurate,optimal_sensors_avg,total_points"));
    assert_eq!(csv.lines().count(), 3);

    let table = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["region", "percent_accurate", "optimal_sensors_avg", "total_points"]);

    let json = ok(dir.path(), &["report", "--input", "r.json", "--format", "json"]);
    let rows: Value = serde_json::from_slice(&json.stdout).unwrap();
    for key in ["percent_accurate", "optimal_sensors_avg", "total_points"] {
        assert!(rows[0].get(key).is_some(), "missing {key}");
    }

    let hist = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("region,arm,log10_lower,log10_upper,count"));
}

#[test]
fn json_outputs_match_shipped_schemas() {
    let dir = TempDir::new().unwrap();
    scenario_crossval_predict(dir.path());
    let p = dir.path();
    ok(p, &["decompose", "--input", "g.csv", "--out-dir", "dec"]);
    ok(p, &["train", "--input", "g.csv", "--segmentation", "seg.json", "--out", "segmodel"]);
    assert_valid("truth.schema.json", &p.join("t.json"));
    assert_valid("segmentation.schema.json", &p.join("seg.json"));
    assert_valid("report.schema.json", &p.join("r.json"));
    assert_valid("decompose_diagnostics.schema.json", &p.join("dec/diagnostics.json"));
    assert_valid("prediction_diagnostics.schema.json", &p.join("pd.json"));
    for model in ["model", "segmodel"] {
        assert_valid("model_meta.schema.json", &p.join(model).join("meta.json"));
    }
    for region in ["all", "segmodel/shim_1", "segmodel/shim_2"] {
        let dir = if region == "all" { p.join("model/all") } else { p.join(region) };
        assert_valid("sensors.schema.json", &dir.join("sensors.json"));
    }
}

#[test]
fn predictions_reproduce_training_units_at_sensors() {
    let dir = TempDir::new().unwrap();
    scenario_crossval_predict(dir.path());
    let pred = formats::read_gap_csv(&dir.path().join("p.csv"), MissingPolicy::Reject).unwrap();
    let data = formats::read_gap_csv(&dir.path().join("g.csv"), MissingPolicy::Reject).unwrap();
    assert_eq!(pred.location_ids, data.location_ids);
    let sensors = load(&dir.path().join("model/all/sensors.json"));
    for idx in sensors["indices"].as_array().unwrap() {
        let i = idx.as_u64().unwrap() as usize;
        for j in 0..data.units() {
            let (a, b) = (pred.matrix.as_dmatrix()[(i, j)], data.matrix.as_dmatrix()[(i, j)]);
            assert!((a - b).abs() < 1e-6, "sensor {i} unit {j}: {a} vs {b}");
        }
    }
}
