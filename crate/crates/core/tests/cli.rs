use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use lowrank_sgd::cli::formats::{parse_factors, write_factors};
use lowrank_sgd::diagnostics::{warm_start_radius, theorem_step};
use lowrank_sgd::linalg::{FactorizedPsd, SymmetricMatrix};
use lowrank_sgd::problems::{Problem, SyntheticInstance, SyntheticParams};
use lowrank_sgd::sgd::CSV_HEADER;
use nalgebra::DMatrix;
use serde_json::Value;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowrank-sgd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

/// Checks every row of a trace against the documented schema; returns the rows.
fn validate_trace(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 7, "row {k}: {line}");
        assert_eq!(f[0].parse::<usize>().unwrap(), k + 1);
        assert!(f[1] == "true" || f[1] == "false");
        assert!(f[2].is_empty() || f[2].parse::<f64>().is_ok());
        f[3].parse::<usize>().unwrap();
        f[4].parse::<usize>().unwrap();
        assert!(f[5].is_empty() || f[5].parse::<f64>().unwrap().is_finite());
        assert!(f[6].parse::<f64>().unwrap() >= 0.0);
        rows.push(f.iter().map(|s| s.to_string()).collect());
    }
    rows
}

#[test]
fn project_diag_example() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.txt", "3\n3 0 0\n0 1 0\n0 0 0\n");
    let o = bin(&["project", "m.txt", "-r", "1", "--factors", "x.factors"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&o);
    assert_eq!(rep["certificate"]["certified"], true);
    assert_eq!(rep["rank"], 1);
    let w = rep["weights"].as_array().unwrap();
    assert!((w[0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let x = parse_factors(&std::fs::read_to_string(dir.path().join("x.factors")).unwrap(), "x").unwrap();
    let d = x.to_dense().unwrap();
    assert!(d.max_abs_diff(&SymmetricMatrix::from_diagonal(&[1.0, 0.0, 0.0]).unwrap()) < 1e-12);
}

#[test]
fn project_feasible_input_is_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.txt", "4\n0.5 0 0 0\n0 0.3 0 0\n0 0 0.2 0\n0 0 0 0\n");
    let o = bin(&["project", "m.txt", "-r", "3"], dir.path());
    assert_eq!(code(&o), 0);
    let w: Vec<f64> = json(&o)["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (a, b) in w.iter().zip([0.5, 0.3, 0.2]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn project_usage_and_uncertified() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.txt", "3\n1 0 0\n0 1 0\n0 0 1\n");
    assert_eq!(code(&bin(&["project", "m.txt", "-r", "0"], dir.path())), 2);
    // Flat spectrum: the exact projection is I/3, rank 3.
    let o = bin(&["project", "m.txt", "-r", "1"], dir.path());
    assert_eq!(code(&o), 1);
    assert_eq!(json(&o)["certificate"]["certified"], false);
    let o = bin(&["project", "m.txt", "-r", "1", "--full"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["rank"], 3);
    write(dir.path(), "bad.txt", "3\n1 0 0\n0 x 0\n0 0 1\n");
    let o = bin(&["project", "bad.txt", "-r", "1"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.txt:3"));
    assert_eq!(code(&bin(&["project", "missing.txt", "-r", "1"], dir.path())), 2);
}

#[test]
fn project_triplets_matches_dense() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.txt", "4\n2 0.5 0 0\n0.5 1 0 0\n0 0 0.1 0\n0 0 0 0\n");
    write(dir.path(), "t.txt", "4\n0 0 2\n1 0 0.5\n1 1 1\n2 2 0.1\n");
    let a = json(&bin(&["project", "m.txt", "-r", "2"], dir.path()));
    let b = json(&bin(&["project", "t.txt", "-r", "2", "--triplets"], dir.path()));
    let wa = a["weights"].as_array().unwrap();
    let wb = b["weights"].as_array().unwrap();
    assert_eq!(wa.len(), wb.len());
    for (x, y) in wa.iter().zip(wb) {
        assert!((x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn gen_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen", "-n", "25", "-r", "3", "--delta", "0.4", "--sigma", "0.2", "--seed", "11", "-o"];
    let mut a = args.to_vec();
    a.push("a.json");
    let mut b = args.to_vec();
    b.push("b.json");
    assert_eq!(code(&bin(&a, dir.path())), 0);
    assert_eq!(code(&bin(&b, dir.path())), 0);
    let ta = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(ta, std::fs::read(dir.path().join("b.json")).unwrap());
    let read = SyntheticInstance::from_json(std::str::from_utf8(&ta).unwrap()).unwrap();
    let direct = SyntheticInstance::generate(&SyntheticParams::new(25, 3, 0.4, 11).with_sigma(0.2)).unwrap();
    assert_eq!(read.document(), direct.document());
    for (x, y) in read.document().spectrum.iter().zip(&direct.document().spectrum) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    assert_eq!(read.y(), direct.y());
}

#[test]
fn gen_infeasible_gap_explains() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["gen", "-n", "10", "-r", "2", "--delta", "5"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("PSD"));
}

#[test]
fn smoke_preset_runs_certified_and_fast() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = bin(&["run", "--preset", "synthetic-smoke", "--trace", "t.csv", "--summary", "s.json"], dir.path());
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(secs < 5.0, "{secs} s");
    let rows = validate_trace(&std::fs::read_to_string(dir.path().join("t.csv")).unwrap());
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r[1] == "true"));
    // Objective at t = 1, every 50 steps and t = T only.
    let evals: Vec<usize> = rows.iter().filter(|r| !r[5].is_empty()).map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(evals, vec![1, 50, 100, 150, 200]);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(s["run"]["max_rank"], 2);
    assert_eq!(s["run"]["fraction_certified"], 1.0);
}

#[test]
fn runs_are_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let o = bin(&["run", "--preset", "synthetic-smoke", "--set", "iterations=60", "--trace", name, "--summary", "s.json"], dir.path());
        assert_eq!(code(&o), 0);
    }
    let strip = |name: &str| -> Vec<Vec<String>> {
        validate_trace(&std::fs::read_to_string(dir.path().join(name)).unwrap())
            .into_iter()
            .map(|mut r| {
                r.pop();
                r
            })
            .collect()
    };
    assert_eq!(strip("a.csv"), strip("b.csv"));
}

#[test]
fn config_errors_stop_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.conf",
        "problem = synthetic\nn = 20\nr_star = 2\ndelta = 0.5\niterations = 10\neta = 0.1\nbatch = 4\nbogus = 1\ntrace = t.csv\n",
    );
    let o = bin(&["run", "c.conf"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert!(!dir.path().join("t.csv").exists());
    assert_eq!(code(&bin(&["run", "--preset", "nope"], dir.path())), 2);
    assert_eq!(code(&bin(&["run"], dir.path())), 2);
}

#[test]
fn json_config_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"problem": "synthetic", "n": 15, "r_star": 2, "delta": 0.5, "sigma": 0.05,
            "iterations": 30, "eta": 0.05, "batch": 4, "output": "I", "trace": "out/t.csv"}"#,
    );
    let o = bin(&["run", "c.json", "--sweep", "0..3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&o);
    let runs = s.as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for (k, r) in runs.iter().enumerate() {
        assert_eq!(r["config"]["seed"], k as u64);
        let t0 = r["run"]["t0"].as_u64().unwrap();
        assert!((1..=30).contains(&t0));
        let path = dir.path().join(format!("out/t.seed{k}.csv"));
        assert_eq!(validate_trace(&std::fs::read_to_string(path).unwrap()).len(), 30);
    }
}

#[test]
fn strict_policy_failure_is_compute_error() {
    let dir = tempfile::tempdir().unwrap();
    // Certificate margin is 2δ = 0.02 without noise; unit noise on a single
    // sample breaks it.
    write(
        dir.path(),
        "c.conf",
        "problem = synthetic\nn = 12\nr_star = 2\ndelta = 0.01\nsigma = 1\niterations = 20\neta = 1\nbatch = 1\ncertificate = strict\ntrace = t.csv\n",
    );
    let o = bin(&["run", "c.conf"], dir.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = validate_trace(&std::fs::read_to_string(dir.path().join("t.csv")).unwrap());
    assert!(rows.len() < 20);
}

#[test]
fn movielens_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for u in 1..=12 {
        for i in 1..=15 {
            if (u * 7 + i * 3) % 4 != 0 {
                let r = 1 + (u + 2 * i) % 5;
                text.push_str(&format!("{u}\t{i}\t{r}\t88125{u}{i}\n"));
            }
        }
    }
    write(dir.path(), "u.data", &text);
    write(
        dir.path(),
        "c.conf",
        "problem = movielens\nratings = u.data\ntau = 40\nrank = 3\neta = 0.0005\nbatch = 10%\niterations = 40\neval_period = 10\nshadow = true\n",
    );
    let o = bin(&["run", "c.conf", "--trace", "t.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&o);
    assert!(s["run"]["max_shadow_diff"].as_f64().unwrap() <= 1e-8);
    assert!(s["theorem"].is_null());
    let rows = validate_trace(&std::fs::read_to_string(dir.path().join("t.csv")).unwrap());
    assert_eq!(rows.len(), 40);
}

#[test]
fn diagnose_instance_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin(&["gen", "-n", "30", "-r", "3", "--delta", "0.6", "--sigma", "0.3", "--seed", "2", "-o", "i.json"], dir.path())), 0);
    let o = bin(&["diagnose", "--instance", "i.json", "-T", "500"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&o);
    let inst = SyntheticInstance::from_json(&std::fs::read_to_string(dir.path().join("i.json")).unwrap()).unwrap();
    let k = inst.constants();
    let lam = inst.x_star().weights().iter().copied().fold(f64::INFINITY, f64::min);
    assert!((rep["gap"]["delta"].as_f64().unwrap() - 0.6).abs() < 1e-8);
    assert_eq!(rep["assumption_holds"], true);
    assert_eq!(rep["gap"]["alignment"]["aligned"], true);
    let r0 = warm_start_radius(3, k.beta, k.b, lam, inst.gap()).unwrap();
    assert!((rep["theorem"]["r0"].as_f64().unwrap() - r0).abs() <= 1e-12 * r0);
    let eta = theorem_step(r0, k.g, 500).unwrap();
    assert!((rep["theorem"]["eta"].as_f64().unwrap() - eta).abs() <= 1e-12 * eta);
    let probe = rep["robustness"].as_array().unwrap();
    for p in probe {
        let low = p["rank"].as_u64().unwrap() <= 3;
        let zeta = p["zeta"].as_f64().unwrap();
        let crit = k.beta * 3.0 * inst.gap();
        if (zeta - crit).abs() > 1e-9 {
            assert_eq!(low, zeta < crit, "zeta {zeta}");
        }
    }
}

#[test]
fn diagnose_flat_gradient_flags_assumption() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.txt", "3\n-1 0 0\n0 -1 0\n0 0 -1\n");
    let x = FactorizedPsd::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]), vec![1.0]).unwrap();
    let mut f = std::fs::File::create(dir.path().join("x.factors")).unwrap();
    write_factors(&mut f, &x).unwrap();
    f.flush().unwrap();
    let o = bin(&["diagnose", "--gradient", "g.txt", "--optimum", "x.factors", "--beta", "1", "--b", "1", "--g", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&o);
    assert_eq!(rep["assumption_holds"], false);
    assert_eq!(rep["gap"]["delta"], 0.0);
    assert_eq!(rep["theorem"]["degenerate"], true);
    assert!(!rep["warnings"].as_array().unwrap().is_empty());

    let o = bin(&["diagnose", "--gradient", "g.txt", "--optimum", "none.factors", "--beta", "1", "--b", "1", "--g", "2"], dir.path());
    assert_eq!(code(&o), 2);
    assert_eq!(code(&bin(&["diagnose", "--gradient", "g.txt"], dir.path())), 2);
    assert_eq!(code(&bin(&["diagnose"], dir.path())), 2);
}

#[test]
fn fetch_from_local_archive() {
    let dir = tempfile::tempdir().unwrap();
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut w = zip::ZipWriter::new(&mut buf);
        let opts = zip::write::SimpleFileOptions::default();
        w.start_file("ml-100k/u.item", opts).unwrap();
        w.write_all(b"1|Toy Story").unwrap();
        w.start_file("ml-100k/u.data", opts).unwrap();
        w.write_all(b"196\t242\t3\t881250949\n186\t302\t3\t891717742\n").unwrap();
        w.finish().unwrap();
    }
    let bytes = buf.into_inner();
    std::fs::write(dir.path().join("ml.zip"), &bytes).unwrap();
    let o = bin(&["fetch", "--archive", "ml.zip", "--dest", "d"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["lines"], 2);
    assert_eq!(std::fs::read_dir(dir.path().join("d")).unwrap().count(), 1);
    let o = bin(&["fetch", "--archive", "ml.zip", "--dest", "e", "--sha256", &"ab".repeat(32)], dir.path());
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("e/u.data").exists());
}
