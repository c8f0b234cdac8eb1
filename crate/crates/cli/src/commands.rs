use std::io::Write as _;
use std::path::{Path, PathBuf};

use lc_core::engine::{apply_compressed, compression_ratio, monitor_check, run, violations, RunOptions};
use lc_core::model::{load_mnist_idx, sgd_l_step, Activation, LStepConfig, Penalty};
use lc_core::report::{emit_report, load_checkpoint, save_checkpoint, Checkpoint, Precision, ReportFormat};
use lc_core::{validate_tasks, Dataset, EvalResult, LossModel, MlpModel, RunReport};

use crate::config::{parse_value, set_path, DataConfig, RunConfig};
use crate::error::CliError;

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub sequential: bool,
    pub out: Option<PathBuf>,
}

impl Globals {
    fn seed(&self, cfg: &RunConfig) -> u64 {
        self.seed.unwrap_or(cfg.model.seed)
    }

    fn out_dir(&self, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("lc-out"));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }
}

pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &DataConfig) -> Result<Data, CliError> {
    let load = |images: &Path, labels: &Path, limit: Option<usize>| -> Result<Dataset, CliError> {
        let ds = load_mnist_idx(cfg.resolve(images), cfg.resolve(labels))?;
        Ok(match limit {
            Some(n) => ds.take(n),
            None => ds,
        })
    };
    Ok(Data {
        train: load(&cfg.train_images, &cfg.train_labels, cfg.train_limit)?,
        test: load(&cfg.test_images, &cfg.test_labels, cfg.test_limit)?,
    })
}

const META_SIZES: &str = "meta/sizes";
const META_ACTIVATION: &str = "meta/activation";

fn push_meta(ck: &mut Checkpoint, model: &MlpModel) {
    let sizes: Vec<f64> = model.sizes().iter().map(|&s| s as f64).collect();
    ck.push(META_SIZES, vec![sizes.len()], sizes);
    let act = match model.activation() {
        Activation::Tanh => 0.0,
        Activation::Relu => 1.0,
    };
    ck.push(META_ACTIVATION, vec![], vec![act]);
}

fn model_from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<MlpModel, CliError> {
    let malformed = |m: &str| CliError::checkpoint(path, lc_core::CheckpointError::Malformed(m.into()));
    let sizes: Vec<usize> = ck
        .get(META_SIZES)
        .ok_or_else(|| malformed("missing meta/sizes"))?
        .data
        .iter()
        .map(|&x| x as usize)
        .collect();
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(malformed("meta/sizes must list at least two positive sizes"));
    }
    let activation = match ck.get(META_ACTIVATION).map(|e| e.data.first().copied()) {
        Some(Some(0.0)) => Activation::Tanh,
        Some(Some(1.0)) => Activation::Relu,
        _ => return Err(malformed("missing or unknown meta/activation")),
    };
    let mut model = MlpModel::new(&sizes, activation, 0);
    ck.restore_params(model.params_mut())
        .map_err(|e| CliError::checkpoint(path, e))?;
    Ok(model)
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| CliError::checkpoint(path, e))
}

fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    save_checkpoint(path, ck, Precision::F64).map_err(|e| CliError::checkpoint(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn evaluate(model: &MlpModel, data: &Data, train_error: bool) -> EvalResult {
    EvalResult {
        loss: None,
        train_error: if train_error { model.error_rate(&data.train) } else { None },
        test_error: model.error_rate(&data.test),
    }
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{:.2}%", 100.0 * v)).unwrap_or_else(|| "-".into())
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub test_error: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochLog>,
    pub train_error: f64,
    pub test_error: f64,
}

/// Trains the uncompressed reference model and saves `reference.lcck`.
pub fn cmd_train(cfg: &RunConfig, g: &Globals) -> Result<TrainSummary, CliError> {
    let data = load_data(&cfg.data)?;
    let out = g.out_dir(cfg)?;
    let seed = g.seed(cfg);
    if cfg.model.sizes.first() != Some(&data.train.dim()) {
        return Err(CliError::Config(format!(
            "model input size {:?} does not match the data dimension {}",
            cfg.model.sizes.first(),
            data.train.dim()
        )));
    }
    let mut model = MlpModel::new(&cfg.model.sizes, cfg.model.activation, seed);
    let t = &cfg.train;
    let step_cfg = LStepConfig {
        lr_base: t.lr_base,
        decay: t.decay,
        epochs: 1,
        batch_size: t.batch,
        momentum: t.momentum,
        nesterov: true,
        seed,
    };
    let none = Penalty::none(model.params().len());
    let mut epochs = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        let o = sgd_l_step(&mut model, Some(&data.train), &none, &step_cfg, epoch).map_err(|e| match e {
            lc_core::LStepError::Divergence { .. } => CliError::Numeric(format!("training diverged in epoch {}", epoch + 1)),
            other => CliError::Config(other.to_string()),
        })?;
        let test_error = model.error_rate(&data.test).expect("classifier");
        eprintln!("epoch {:>3}  loss {:.5}  test error {}", epoch + 1, o.loss_after, pct(Some(test_error)));
        epochs.push(EpochLog {
            epoch: epoch + 1,
            loss: o.loss_after,
            test_error,
        });
    }
    let train_error = model.error_rate(&data.train).expect("classifier");
    let test_error = model.error_rate(&data.test).expect("classifier");
    let mut ck = Checkpoint::new();
    push_meta(&mut ck, &model);
    ck.push_params(model.params());
    let path = out.join("reference.lcck");
    write_checkpoint(&path, &ck)?;
    let summary = TrainSummary {
        checkpoint: path,
        epochs,
        train_error,
        test_error,
    };
    write_text(
        &out.join("train.json"),
        &serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    println!(
        "reference: train error {}  test error {}  -> {}",
        pct(Some(train_error)),
        pct(Some(test_error)),
        summary.checkpoint.display()
    );
    Ok(summary)
}

/// Runs the LC algorithm from a reference checkpoint. Writes `report.json`,
/// `report.csv`, and `compressed.lcck` (weights replaced by `Δ(Θ)`, plus Θ and λ).
pub fn cmd_compress(cfg: &RunConfig, reference: &Path, g: &Globals) -> Result<RunReport, CliError> {
    let ck = read_checkpoint(reference)?;
    let mut model = model_from_checkpoint(&ck, reference)?;
    if model.sizes() != cfg.model.sizes.as_slice() {
        return Err(CliError::Config(format!(
            "reference has layer sizes {:?}, config expects {:?}",
            model.sizes(),
            cfg.model.sizes
        )));
    }
    let data = load_data(&cfg.data)?;
    let out = g.out_dir(cfg)?;
    let tasks = cfg.compression_tasks(model.params())?;
    let plan = validate_tasks(model.params(), &tasks).map_err(|e| CliError::Engine(e.into()))?;
    let schedule = cfg.schedule_spec();
    schedule
        .validate()
        .map_err(|e| CliError::Engine(e.into()))?;
    let l_cfg = cfg.l_step_config(g.seed(cfg));
    let opts = RunOptions {
        stop_tol: cfg.schedule.stop_tol,
        sequential: g.sequential,
        eval_uncompressed: cfg.eval.uncompressed,
    };

    let every = cfg.eval.every.max(1);
    let mut calls = 0usize;
    let per_record = if opts.eval_uncompressed { 2 } else { 1 };
    let train_error = cfg.eval.train_error;
    let outcome = run(
        &mut model,
        &plan,
        &schedule,
        &opts,
        |m: &mut MlpModel, pen: &Penalty, step| {
            let o = sgd_l_step(m, Some(&data.train), pen, &l_cfg, step)?;
            eprintln!(
                "L step {:>2}  mu {:.3e}  loss {:.5} -> {:.5}",
                step + 1,
                pen.mu,
                o.loss_before,
                o.loss_after
            );
            Ok(o)
        },
        |m: &MlpModel| {
            let record = calls / per_record;
            calls += 1;
            if record.is_multiple_of(every) {
                evaluate(m, &data, train_error)
            } else {
                EvalResult::default()
            }
        },
    );

    let mut report = RunReport {
        config: cfg.echo(),
        records: vec![],
        converged: false,
        stop_tol: 0.0,
        summary: None,
        final_eval: None,
        monitor: vec![],
        error: None,
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(abort) => {
            report.records = abort.history;
            report.error = Some(abort.error.to_string());
            report.monitor = monitor_check(&report.records);
            emit_report(&report, out.join("report.json"), ReportFormat::Json).map_err(|e| CliError::io(&out, e))?;
            emit_report(&report, out.join("report.csv"), ReportFormat::Csv).map_err(|e| CliError::io(&out, e))?;
            return Err(CliError::Engine(abort.error));
        }
    };

    let forms = outcome.state.forms();
    report.summary = Some(compression_ratio(model.params(), &plan, &forms));
    report.records = outcome.history;
    report.converged = outcome.converged;
    report.stop_tol = outcome.stop_tol;
    report.monitor = monitor_check(&report.records);
    for event in &report.monitor {
        eprintln!("{event}");
    }

    apply_compressed(model.params_mut(), &plan, &outcome.state);
    report.final_eval = Some(evaluate(&model, &data, true));

    let mut ck = Checkpoint::new();
    push_meta(&mut ck, &model);
    ck.push_params(model.params());
    ck.push_state(&outcome.state);
    write_checkpoint(&out.join("compressed.lcck"), &ck)?;
    emit_report(&report, out.join("report.json"), ReportFormat::Json).map_err(|e| CliError::io(&out, e))?;
    emit_report(&report, out.join("report.csv"), ReportFormat::Csv).map_err(|e| CliError::io(&out, e))?;

    let s = report.summary.as_ref().expect("set above");
    let fe = report.final_eval.expect("set above");
    println!(
        "compressed: train error {}  test error {}  ratio {:.2}x (compressed layers {:.2}x)  steps {}  converged {}",
        pct(fe.train_error),
        pct(fe.test_error),
        s.ratio,
        s.compressed_params_ratio,
        report.records.len() - 1,
        report.converged
    );
    if violations(&report.monitor) > 0 {
        return Err(CliError::Numeric("C step monitor reported violations".into()));
    }
    Ok(report)
}

/// Error rates of a checkpoint on the train and test sets under `data_dir`.
pub fn cmd_eval(checkpoint: &Path, data_dir: Option<&Path>) -> Result<EvalResult, CliError> {
    let ck = read_checkpoint(checkpoint)?;
    let model = model_from_checkpoint(&ck, checkpoint)?;
    let data_cfg = DataConfig {
        dir: data_dir.map(Path::to_path_buf),
        ..DataConfig::default()
    };
    if data_cfg.root().is_none() {
        return Err(CliError::Usage(format!(
            "no data directory: pass --data or set {}",
            crate::config::DATA_DIR_ENV
        )));
    }
    let data = load_data(&data_cfg)?;
    if data.train.dim() != model.sizes()[0] {
        return Err(CliError::Config(format!(
            "checkpoint expects {} inputs, data has {}",
            model.sizes()[0],
            data.train.dim()
        )));
    }
    let r = evaluate(&model, &data, true);
    println!("train error {}  test error {}", pct(r.train_error), pct(r.test_error));
    println!("{}", serde_json::to_string(&r).expect("serializable"));
    Ok(r)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SweepRow {
    pub value: serde_json::Value,
    pub ratio: f64,
    pub compressed_params_ratio: f64,
    pub train_error: Option<f64>,
    pub test_error: Option<f64>,
    pub mismatch: f64,
    pub converged: bool,
}

pub const SWEEP_HEADER: &str = "value,ratio,compressed_params_ratio,train_err,test_err,mismatch,converged";

/// Runs `compress` once per value of the axis and writes `sweep.csv`.
pub fn cmd_sweep(
    cfg: &RunConfig,
    axis: &str,
    values: &str,
    reference: Option<&Path>,
    g: &Globals,
) -> Result<Vec<SweepRow>, CliError> {
    let values: Vec<serde_json::Value> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(parse_value)
        .collect();
    if values.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    let base = cfg.echo();
    let mut points = Vec::with_capacity(values.len());
    for v in &values {
        let mut tree = base.clone();
        set_path(&mut tree, axis, v.clone()).map_err(CliError::Config)?;
        let point: RunConfig =
            serde_json::from_value(tree).map_err(|e| CliError::Config(format!("{axis} = {v}: {e}")))?;
        points.push(point);
    }

    let out = g.out_dir(cfg)?;
    let reference = match reference.map(Path::to_path_buf).or_else(|| cfg.reference.clone()) {
        Some(r) => r,
        None => {
            eprintln!("no reference checkpoint given; training one first");
            let train_globals = Globals {
                out: Some(out.join("reference")),
                ..g.clone()
            };
            cmd_train(cfg, &train_globals)?.checkpoint
        }
    };

    let mut rows = Vec::with_capacity(points.len());
    for (i, (point, v)) in points.iter().zip(&values).enumerate() {
        eprintln!("sweep point {}/{}: {axis} = {v}", i + 1, points.len());
        let pg = Globals {
            out: Some(out.join(format!("point-{i}"))),
            ..g.clone()
        };
        let report = cmd_compress(point, &reference, &pg)?;
        let s = report.summary.as_ref().expect("completed run");
        let fe = report.final_eval.unwrap_or_default();
        rows.push(SweepRow {
            value: v.clone(),
            ratio: s.ratio,
            compressed_params_ratio: s.compressed_params_ratio,
            train_error: fe.train_error,
            test_error: fe.test_error,
            mismatch: report.records.last().map_or(f64::NAN, |r| r.mismatch),
            converged: report.converged,
        });
    }

    let path = out.join("sweep.csv");
    let mut f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    let mut text = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        let value = match &r.value {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        text.push_str(&format!(
            "{},{:?},{:?},{},{},{:?},{}\n",
            value,
            r.ratio,
            r.compressed_params_ratio,
            opt(r.train_error),
            opt(r.test_error),
            r.mismatch,
            r.converged
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(&path, e))?;
    print!("{text}");
    Ok(rows)
}
