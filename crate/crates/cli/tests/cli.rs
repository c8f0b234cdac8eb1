use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lc_core::model::{write_idx_images, write_idx_labels};
use lc_core::RunReport;
use serde_json::{json, Value};

const SIDE: usize = 6;

fn lc() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lc"));
    c.env_remove("LC_DATA_DIR");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn lc")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

// Four classes, each a bright horizontal band at a different height, plus noise.
fn write_split(dir: &Path, prefix: &str, n: usize, seed: u64) {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as u32
    };
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 4;
        labels.push(class as u8);
        for r in 0..SIDE {
            for _ in 0..SIDE {
                let base = if r / 2 == class.min(2) && (class < 3 || r % 2 == 1) { 200 } else { 20 };
                pixels.push((base + next() % 40) as u8);
            }
        }
    }
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), write_idx_images(SIDE, SIDE, &pixels)).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), write_idx_labels(&labels)).unwrap();
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let data = root.join("data");
        std::fs::create_dir(&data).unwrap();
        write_split(&data, "train", 160, 1);
        write_split(&data, "t10k", 80, 2);
        Self { _tmp: tmp, root }
    }

    fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    fn config(&self) -> Value {
        json!({
            "version": 1,
            "model": { "sizes": [SIDE * SIDE, 12, 10], "activation": "tanh", "seed": 3 },
            "data": { "dir": self.data() },
            "train": { "epochs": 15, "lr_base": 0.1, "batch": 16 },
            "tasks": [
                { "layers": ["l1.weight"], "scheme": { "type": "adaptive_quantization", "k": 2 } },
                { "layers": ["l2.weight"], "scheme": { "type": "l0_constraint", "kappa": "30%" } }
            ],
            "schedule": { "mu0": 1e-2, "a": 1.5, "steps": 4 },
            "l_step": { "lr_base": 0.05, "epochs_per_step": 2, "batch": 16 }
        })
    }

    fn write(&self, name: &str, cfg: &Value) -> PathBuf {
        let p = self.root.join(name);
        std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
        p
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn train(&self) -> PathBuf {
        let cfg = self.write("train.json", &self.config());
        let o = run(lc().args(["train", "--config"]).arg(&cfg).arg("--out").arg(self.out("ref")));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        self.out("ref").join("reference.lcck")
    }

    fn compress(&self, cfg: &Value, reference: &Path, out: &str) -> Output {
        let path = self.write(&format!("{out}.json"), cfg);
        run(lc()
            .args(["compress", "--config"])
            .arg(path)
            .arg("--reference")
            .arg(reference)
            .arg("--out")
            .arg(self.out(out)))
    }

    fn report(&self, out: &str) -> RunReport {
        RunReport::from_json(&std::fs::read_to_string(self.out(out).join("report.json")).unwrap()).unwrap()
    }
}

fn eval_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stdout);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn missing_config_is_io_error_naming_the_path() {
    let o = run(lc().args(["train", "--config", "/nonexistent/cfg.json"]));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/nonexistent/cfg.json"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_file_names_the_path() {
    let f = Fixture::new();
    let mut cfg = f.config();
    cfg["data"]["train_images"] = json!("nope-images");
    let path = f.write("c.json", &cfg);
    let o = run(lc().args(["train", "--config"]).arg(path).arg("--out").arg(f.out("o")));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope-images"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&mut lc())), 2);
    assert_eq!(code(&run(lc().args(["compress"]))), 2);
    assert_eq!(code(&run(lc().args(["train", "--config", "x", "--bogus"]))), 2);
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let f = Fixture::new();
    let mut cfg = f.config();
    cfg["schedule"]["mu_zero"] = json!(1.0);
    let o = run(lc().args(["train", "--config"]).arg(f.write("c.json", &cfg)));
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("mu_zero"), "{}", stderr(&o));
}

#[test]
fn missing_version_is_rejected() {
    let f = Fixture::new();
    let mut cfg = f.config();
    cfg.as_object_mut().unwrap().remove("version");
    let o = run(lc().args(["train", "--config"]).arg(f.write("c.json", &cfg)));
    assert_eq!(code(&o), 3);
}

#[test]
fn training_divergence_exits_1() {
    let f = Fixture::new();
    let mut cfg = f.config();
    cfg["model"]["activation"] = json!("relu");
    cfg["train"]["lr_base"] = json!(1e300);
    let o = run(lc().args(["train", "--config"]).arg(f.write("c.json", &cfg)).arg("--out").arg(f.out("o")));
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn train_compress_eval_round_trip() {
    let f = Fixture::new();
    let reference = f.train();
    let train_log: Value =
        serde_json::from_str(&std::fs::read_to_string(f.out("ref").join("train.json")).unwrap()).unwrap();

    // Evaluating the reference reproduces the logged numbers exactly.
    let o = run(lc().args(["eval", "--checkpoint"]).arg(&reference).arg("--data").arg(f.data()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = eval_json(&o);
    assert_eq!(ev["test_error"], train_log["test_error"]);
    assert_eq!(ev["train_error"], train_log["train_error"]);
    assert!(train_log["test_error"].as_f64().unwrap() < 0.1, "{train_log}");

    let o = f.compress(&f.config(), &reference, "c");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = f.report("c");
    assert_eq!(report.records.len(), 5);
    report.check_order().unwrap();
    assert!(report.monitor.iter().all(|e| !e.to_string().starts_with("VIOLATION")));
    let csv = std::fs::read_to_string(f.out("c").join("report.csv")).unwrap();
    assert_eq!(lc_core::report::parse_csv(&csv).unwrap().len(), 5);

    // The compressed checkpoint holds the feasible weights the report evaluated.
    let o = run(lc()
        .args(["eval", "--checkpoint"])
        .arg(f.out("c").join("compressed.lcck"))
        .env("LC_DATA_DIR", f.data()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = eval_json(&o);
    let fe = report.final_eval.unwrap();
    assert_eq!(ev["test_error"].as_f64(), fe.test_error);
    assert_eq!(ev["train_error"].as_f64(), fe.train_error);

    let ck = lc_core::report::load_checkpoint(f.out("c").join("compressed.lcck")).unwrap();
    let codebook = ck.get("theta/0/quantized/codebook").unwrap();
    assert_eq!(codebook.data.len(), 2);
    let l1 = ck.get("l1.weight").unwrap();
    assert!(l1.data.iter().all(|w| codebook.data.contains(w)));
    let l2 = ck.get("l2.weight").unwrap();
    assert_eq!(l2.data.iter().filter(|&&w| w != 0.0).count(), 36);
}

#[test]
fn seeded_runs_are_bit_identical_and_echo_reparses() {
    let f = Fixture::new();
    let reference = f.train();
    assert_eq!(code(&f.compress(&f.config(), &reference, "a")), 0);
    assert_eq!(code(&f.compress(&f.config(), &reference, "b")), 0);
    let a = std::fs::read(f.out("a").join("report.json")).unwrap();
    let b = std::fs::read(f.out("b").join("report.json")).unwrap();
    assert!(a == b, "reports differ");

    // Feeding the echoed config back in reproduces the run.
    let echoed = f.report("a").config;
    assert_eq!(code(&f.compress(&echoed, &reference, "echo")), 0);
    assert_eq!(f.report("echo").records, f.report("a").records);

    // A different seed changes the minibatch order and so the trajectory.
    let path = f.write("s.json", &f.config());
    let o = run(lc()
        .args(["compress", "--seed", "99", "--config"])
        .arg(path)
        .arg("--reference")
        .arg(&reference)
        .arg("--out")
        .arg(f.out("s")));
    assert_eq!(code(&o), 0);
    assert_ne!(f.report("s").records, f.report("a").records);
}

#[test]
fn sequential_flag_matches_parallel() {
    let f = Fixture::new();
    let reference = f.train();
    assert_eq!(code(&f.compress(&f.config(), &reference, "par")), 0);
    let path = f.write("seq.json", &f.config());
    let o = run(lc()
        .args(["--sequential", "compress", "--config"])
        .arg(path)
        .arg("--reference")
        .arg(&reference)
        .arg("--out")
        .arg(f.out("seq")));
    assert_eq!(code(&o), 0);
    assert_eq!(f.report("seq"), f.report("par"));
}

#[test]
fn plan_errors_exit_3_with_task_index() {
    let f = Fixture::new();
    let reference = f.train();
    let mut cfg = f.config();
    cfg["tasks"][1]["layers"] = json!(["l9.weight"]);
    let o = f.compress(&cfg, &reference, "bad");
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("tasks[1]"), "{}", stderr(&o));

    let mut cfg = f.config();
    cfg["tasks"][1]["layers"] = json!(["l1.weight"]);
    assert_eq!(code(&f.compress(&cfg, &reference, "overlap")), 3);

    let mut cfg = f.config();
    cfg["tasks"][0]["scheme"]["k"] = json!(0);
    assert_eq!(code(&f.compress(&cfg, &reference, "k0")), 3);
}

#[test]
fn incompatible_reference_is_rejected() {
    let f = Fixture::new();
    let reference = f.train();
    let mut cfg = f.config();
    cfg["model"]["sizes"] = json!([SIDE * SIDE, 7, 10]);
    assert_eq!(code(&f.compress(&cfg, &reference, "arch")), 3);

    let o = run(lc().args(["compress", "--config"]).arg(f.write("x.json", &f.config())).args(["--reference", "/no/such.lcck"]));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/no/such.lcck"));

    let garbage = f.root.join("garbage.lcck");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = run(lc().args(["eval", "--checkpoint"]).arg(&garbage).arg("--data").arg(f.data()));
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_needs_a_data_directory() {
    let f = Fixture::new();
    let reference = f.train();
    let o = run(lc().args(["eval", "--checkpoint"]).arg(&reference));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("LC_DATA_DIR"));
}

#[test]
fn sweep_rows_and_errors() {
    let f = Fixture::new();
    let reference = f.train();
    let cfg = f.write("sweep.json", &f.config());
    let sweep = |values: &str, axis: &str, out: &str| {
        run(lc()
            .args(["sweep", "--config"])
            .arg(&cfg)
            .args(["--axis", axis, "--values", values, "--reference"])
            .arg(&reference)
            .arg("--out")
            .arg(f.out(out)))
    };

    let o = sweep("10%,50%", "tasks.1.scheme.kappa", "sw");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(f.out("sw").join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "value,ratio,compressed_params_ratio,train_err,test_err,mismatch,converged");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("10%,") && lines[2].starts_with("50%,"));
    let ratio = |l: &str| l.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(ratio(lines[1]) > ratio(lines[2]));

    assert_eq!(code(&sweep("", "tasks.1.scheme.kappa", "e")), 2);
    assert_eq!(code(&sweep(" , ", "tasks.1.scheme.kappa", "e2")), 2);
    assert_eq!(code(&sweep("1,2", "tasks.7.scheme.kappa", "e3")), 3);
    assert_eq!(code(&sweep("1,2", "schedule.nonsense", "e4")), 3);
}

#[test]
fn single_value_sweep_equals_compress() {
    let f = Fixture::new();
    let reference = f.train();
    let cfg = f.write("sweep.json", &f.config());
    let o = run(lc()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "schedule.steps", "--values", "4", "--reference"])
        .arg(&reference)
        .arg("--out")
        .arg(f.out("sw")));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&f.compress(&f.config(), &reference, "c")), 0);
    let swept = RunReport::from_json(&std::fs::read_to_string(f.out("sw").join("point-0/report.json")).unwrap()).unwrap();
    let direct = f.report("c");
    assert_eq!(swept.records, direct.records);
    assert_eq!(swept.summary, direct.summary);
}

#[test]
fn sweep_trains_a_reference_when_none_is_given() {
    let f = Fixture::new();
    let mut cfg = f.config();
    cfg["schedule"]["steps"] = json!(1);
    let path = f.write("sweep.json", &cfg);
    let o = run(lc()
        .args(["sweep", "--config"])
        .arg(&path)
        .args(["--axis", "tasks.0.scheme.k", "--values", "2,4"])
        .arg("--out")
        .arg(f.out("sw")));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(f.out("sw").join("reference/reference.lcck").exists());
    assert!(f.out("sw").join("point-1/compressed.lcck").exists());
}

// Needs the real MNIST files under LC_DATA_DIR.
#[test]
#[ignore]
fn smoke_config_trains_quickly_on_mnist_subset() {
    let data = std::env::var_os("LC_DATA_DIR").expect("set LC_DATA_DIR to the MNIST directory");
    let tmp = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let start = std::time::Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_lc"))
        .env("LC_DATA_DIR", data)
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("train.json")).unwrap()).unwrap();
    let err = log["test_error"].as_f64().unwrap();
    assert!(secs < 60.0, "{secs:.1}s");
    assert!(err < 0.15, "test error {err}");
}
