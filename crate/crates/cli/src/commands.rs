use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use gradpred::analysis::{f_star, gamma, q_objective, rho_star, rho_switch, simulate_estimator, write_sweep_csv};
use gradpred::analysis::{CostModel, SimulationSpec, Sweep};
use gradpred::checkpoint::{load_checkpoint, save_checkpoint};
use gradpred::data::{gen_blobs, gen_regression, load_csv, write_csv, CsvSchema, Dataset};
use gradpred::network::{Network, NetworkConfig};
use gradpred::predictor::RefitPolicy;
use gradpred::trainer::{run_budgeted_comparison, write_metrics_csv, Algorithm, MetricsWriter, TrainConfig, Trainer};
use gradpred::{Error, Execution, Result};
use log::info;

use crate::settings::Settings;

pub const SIMULATION_HEADER: &str =
    "f,rho,kappa,m,trials,realized_f,emp_var,predicted_var,variance_ratio,mean_err,std_err";

pub struct Run {
    pub settings: Settings,
    pub out: PathBuf,
}

impl Run {
    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("config.txt"), self.settings.dump())?;
        Ok(())
    }
}

/// One line of stdout; a closed pipe is not an error.
fn say(line: impl Display) -> Result<()> {
    match writeln!(io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Grid coordinates without linspace round-off noise.
fn num(x: f64) -> String {
    let s = format!("{x:.10}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn execution(s: &Settings) -> Result<Execution> {
    match s.raw("execution") {
        "parallel" => Ok(Execution::Parallel),
        "sequential" => Ok(Execution::Sequential),
        other => Err(Error::Config(format!(
            "execution = {other:?}: expected parallel or sequential"
        ))),
    }
}

fn cost_model(s: &Settings) -> Result<CostModel> {
    let cm = CostModel {
        backward: s.get("cost_backward")?,
        forward: s.get("cost_forward")?,
        cheap_forward: s.get("cost_cheap_forward")?,
    };
    cm.validate()?;
    Ok(cm)
}

fn load_data(s: &Settings) -> Result<Dataset> {
    let seed = s.get("seed")?;
    let fraction: f64 = s.get("validation_fraction")?;
    let mut data = match s.raw("source") {
        "regression" => gen_regression(s.get("n")?, s.get("input_dim")?, s.get("noise_sd")?, seed)?.0,
        "blobs" => gen_blobs(
            s.get("n")?,
            s.get("classes")?,
            s.get("input_dim")?,
            s.get("separation")?,
            seed,
        )?,
        "csv" => {
            let path = s.raw("data_path");
            if path.is_empty() {
                return Err(Error::Config("source = csv needs data_path".into()));
            }
            if !Path::new(path).is_file() {
                return Err(Error::Data(format!("no such file: {path}")));
            }
            let feature_cols: Vec<String> = s.get_list("feature_cols")?;
            let classes: usize = s.get("classes")?;
            let schema = CsvSchema {
                feature_cols: (!feature_cols.is_empty()).then_some(feature_cols),
                target_cols: s.get_list("target_cols")?,
                classes: (classes > 0).then_some(classes),
                validation_fraction: fraction,
            };
            return load_csv(Path::new(path), &schema);
        }
        other => {
            return Err(Error::Config(format!(
                "source = {other:?}: expected regression, blobs or csv"
            )))
        }
    };
    if fraction > 0.0 {
        data.split_last(fraction)?;
    }
    Ok(data)
}

fn network(s: &Settings, data: &Dataset) -> Result<Network> {
    Network::new(NetworkConfig {
        input_dim: data.input_dim(),
        hidden_widths: s.get_list("hidden")?,
        output_dim: data.output_dim(),
        activation: s.get("activation")?,
        seed: s.get("seed")?,
    })
}

fn train_config(s: &Settings, data: &Dataset) -> Result<TrainConfig> {
    let loss = match s.raw("loss") {
        "auto" => data.default_loss(),
        _ => s.get("loss")?,
    };
    Ok(TrainConfig {
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        control_fraction: s.get("control_fraction")?,
        loss,
        label_smoothing: s.get("label_smoothing")?,
        optimizer: s.get("optimizer")?,
        learning_rate: s.get("learning_rate")?,
        momentum: s.get("momentum")?,
        lr_decay: s.get("lr_decay")?,
        weight_decay: s.get("weight_decay")?,
        refit: RefitPolicy {
            period: s.get("refit_period")?,
            buffer_capacity: s.get("refit_buffer")?,
            ridge_lambda: s.get_opt("ridge_lambda")?,
        },
        predictor: s.get("predictor")?,
        cost_model: cost_model(s)?,
        budget: s.get_opt("budget")?,
        max_steps: s.get_opt("max_steps")?,
        seed: s.get("seed")?,
        reduce_precision: s.get("reduce_precision")?,
        warmup: s.get("warmup")?,
        eval_every: s.get("eval_every")?,
        execution: execution(s)?,
    })
}

pub fn gen_data(run: &Run) -> Result<()> {
    let data = load_data(&run.settings)?;
    run.prepare()?;
    let mut out = run.create("data.csv")?;
    write_csv(&data, &mut out)?;
    out.flush()?;
    say(format!(
        "rows={} train={} validation={} input_dim={} output_dim={} path={}",
        data.len(),
        data.train.len(),
        data.validation.len(),
        data.input_dim(),
        data.output_dim(),
        run.out.join("data.csv").display()
    ))?;
    Ok(())
}

pub fn train(run: &Run) -> Result<()> {
    let s = &run.settings;
    let data = load_data(s)?;
    let cfg = train_config(s, &data)?;
    let mut trainer = match s.raw("resume") {
        "" => {
            let algo: Algorithm = s.get("algo")?;
            Trainer::new(cfg, &data, network(s, &data)?, algo)?
        }
        path => Trainer::resume(cfg, &data, load_checkpoint(Path::new(path))?)?,
    };
    run.prepare()?;
    let mut metrics = MetricsWriter::new(run.create("metrics.csv")?)?;
    let outcome = trainer.run(&mut |r| metrics.push(r))?;
    drop(metrics);
    let state = trainer.state();
    save_checkpoint(state, &run.out.join("checkpoint.txt"))?;
    info!("wrote {}", run.out.display());
    let last = outcome.records.last();
    say(format!(
        "algorithm={} steps={} epoch={} cost_units={} stop={:?} last_loss={} val_metric={}",
        state.algorithm,
        state.step,
        state.epoch,
        state.ledger.cost_units,
        outcome.stop,
        last.map_or(f64::NAN, |r| r.loss),
        state.last_val
    ))?;
    Ok(())
}

pub fn compare(run: &Run) -> Result<()> {
    let s = &run.settings;
    let data = load_data(s)?;
    let cfg = train_config(s, &data)?;
    let report = run_budgeted_comparison(&cfg, &data, network(s, &data)?)?;
    run.prepare()?;
    write_metrics_csv(&report.vanilla.records, run.create("metrics_vanilla.csv")?)?;
    write_metrics_csv(&report.predicted.records, run.create("metrics_predicted.csv")?)?;
    let mut json = run.create("report.json")?;
    serde_json::to_writer_pretty(&mut json, &report).map_err(|e| Error::Io(e.into()))?;
    writeln!(json)?;
    json.flush()?;
    say(format!(
        "budget={} gamma={:.6} rho_hat={:.6} kappa_hat={:.6} rho_star={:.6} break_even={}",
        report.budget, report.gamma, report.rho_hat_mean, report.kappa_hat_mean, report.rho_star, report.break_even
    ))?;
    for r in [&report.vanilla, &report.predicted] {
        say(format!(
            "algorithm={} steps={} cost_units={} final_train_loss={:.6} final_val_metric={:.6} stop={}",
            r.algorithm, r.steps, r.cost_units, r.final_train_loss, r.final_val_metric, r.stop
        ))?;
    }
    say(format!(
        "predicted_not_worse={} consistent={}",
        report.predicted_not_worse,
        report.consistent()
    ))?;
    Ok(())
}

pub fn analyze(run: &Run) -> Result<()> {
    let s = &run.settings;
    let cm = cost_model(s)?;
    let sweep = Sweep {
        f: s.get_axis("f")?,
        rho: s.get_axis("rho")?,
        kappa: s.get_axis("kappa")?,
    };
    let f_min: f64 = s.get("f_min")?;
    let rows = sweep.evaluate(&cm)?;
    let mut lines = Vec::new();
    for &kappa in &sweep.kappa {
        lines.push(format!(
            "kappa={} rho_switch={:.6}",
            num(kappa),
            rho_switch(&cm, kappa)?
        ));
        for &f in sweep.f.iter().filter(|&&f| f < 1.0) {
            lines.push(format!(
                "f={} kappa={} gamma={:.6} rho_star={:.6}",
                num(f),
                num(kappa),
                gamma(&cm, f)?,
                rho_star(&cm, f, kappa)?
            ));
        }
        for &rho in &sweep.rho {
            let fs = f_star(&cm, rho, kappa, f_min)?;
            lines.push(format!(
                "rho={} kappa={} f_star={fs:.6} q_at_f_star={:.6}",
                num(rho),
                num(kappa),
                q_objective(&cm, fs, rho, kappa)?
            ));
        }
    }
    run.prepare()?;
    write_sweep_csv(&rows, run.create("sweep.csv")?)?;
    for line in lines {
        say(line)?;
    }
    Ok(())
}

pub fn simulate(run: &Run) -> Result<()> {
    let s = &run.settings;
    let exec = execution(s)?;
    let mut table = vec![SIMULATION_HEADER.to_string()];
    for f in s.get_axis("f")? {
        for rho in s.get_axis("rho")? {
            for kappa in s.get_axis("kappa")? {
                let spec = SimulationSpec {
                    f,
                    m: s.get("m")?,
                    dim: s.get("dim")?,
                    trials: s.get("trials")?,
                    seed: s.get("seed")?,
                    mean_scale: s.get("mean_scale")?,
                    ..SimulationSpec::from_alignment(s.get("sigma_g")?, rho, kappa)
                };
                let r = simulate_estimator(&spec, exec)?;
                say(format!(
                    "f={} rho={} kappa={} emp_var={:.6e} predicted_var={:.6e} variance_ratio={:.5} mean_err_over_se={:.3}",
                    num(f),
                    num(rho),
                    num(kappa),
                    r.emp_var,
                    r.predicted_var,
                    r.variance_ratio(),
                    r.mean_err / r.std_err
                ))?;
                table.push(format!(
                    "{f},{rho},{kappa},{},{},{},{},{},{},{},{}",
                    spec.m,
                    r.trials,
                    r.realized_f,
                    r.emp_var,
                    r.predicted_var,
                    r.variance_ratio(),
                    r.mean_err,
                    r.std_err
                ));
            }
        }
    }
    run.prepare()?;
    let mut out = run.create("simulation.csv")?;
    for line in table {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}
