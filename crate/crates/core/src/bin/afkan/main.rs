mod args;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};

use afkan::audit::{count_params, estimate_flops};
use afkan::basis::{self, GridSpec, PhaseLayout};
use afkan::checkpoint;
use afkan::data::{resolve_data_dir, Dataset, Split};
use afkan::gradcheck::{gradcheck_suite, CheckOptions};
use afkan::layers::Variant;
use afkan::train::{evaluate, multi_run, Aggregate, MetricsLog, TrainConfig};
use afkan::{Error, Model, ModelSpec, Tensor};

use args::{BasisKind, Cli, Command, CompareArgs, DataArgs, ProtocolArgs};

/// Failure classes, each with its own exit status.
enum Failure {
    Usage(String),
    Data(Error),
    Numeric(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::MissingData { .. } | Error::BadMagic { .. } | Error::Truncated { .. } => Failure::Data(e),
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::DivisionByZero => {
                Failure::Numeric(e.to_string())
            }
            Error::InvalidArgument(_) | Error::UnknownTag { .. } => Failure::Usage(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Params(a) => cmd_params(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::PlotBasis(a) => cmd_plot_basis(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Data(e) => eprintln!("data error: {e}"),
                Failure::Numeric(m) => eprintln!("numeric failure: {m}"),
                Failure::Other(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn load_split(data: &DataArgs, split: Split) -> Result<Dataset, Failure> {
    let root = resolve_data_dir(data.data_dir.as_deref());
    let ds = Dataset::load(&root, data.dataset, split)?;
    info!(
        "loaded {} ({} samples) from {}",
        ds.name,
        ds.len(),
        root.display()
    );
    Ok(ds)
}

fn load_both(data: &DataArgs) -> Result<(Dataset, Dataset), Failure> {
    Ok((load_split(data, Split::Train)?, load_split(data, Split::Test)?))
}

fn check_input_width(spec: &ModelSpec, ds: &Dataset) -> CmdResult {
    if spec.widths[0] != ds.width() {
        return Err(Failure::Usage(format!(
            "model input width {} does not match {} features in {}",
            spec.widths[0],
            ds.width(),
            ds.name
        )));
    }
    Ok(())
}

fn train_config(spec: ModelSpec, p: &ProtocolArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::new(spec);
    cfg.epochs = p.epochs;
    cfg.runs = p.runs;
    cfg.seed = p.seed;
    cfg.batch_size = p.batch_size;
    cfg.lr = p.lr;
    cfg.gamma = p.gamma;
    cfg.weight_decay = p.weight_decay;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn file_label(spec: &ModelSpec) -> String {
    spec.label().replace(':', "_")
}

fn cmd_train(a: args::TrainArgs) -> CmdResult {
    let spec = a.model.spec().map_err(Failure::Usage)?;
    let cfg = train_config(spec.clone(), &a.protocol)?;
    let (train, test) = load_both(&a.data)?;
    check_input_width(&spec, &train)?;

    let label = file_label(&spec);
    let log_path = a.log.unwrap_or_else(|| a.out_dir.join(format!("{label}.jsonl")));
    let ckpt_path = a
        .checkpoint
        .unwrap_or_else(|| a.out_dir.join(format!("{label}.ckpt")));
    let mut log = MetricsLog::new(create(&log_path)?);
    let mut log_err = None;
    let (_, agg, model) = multi_run(&cfg, &train, &test, cfg.runs, &mut |rec| {
        if let Err(e) = log.record(rec) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    log.aggregate(&spec.label(), &agg)?;
    checkpoint::save(&model, &ckpt_path)?;
    info!("metrics log: {}", log_path.display());
    info!("checkpoint: {}", ckpt_path.display());

    let params = count_params(&model).total;
    println!("model: {}", spec.label());
    println!("dataset: {}", a.data.dataset);
    println!("params: {params}");
    print!("{}", agg.to_text());
    Ok(())
}

fn cmd_params(a: args::ParamsArgs) -> CmdResult {
    let spec = a.model.spec().map_err(Failure::Usage)?;
    let model = Model::new(&spec)?;
    let report = count_params(&model);
    if a.kv {
        print!("{}", report.to_key_values());
    } else {
        println!("model: {}", spec.label());
        print!("{}", report.to_text());
    }
    if let Some(batch) = a.flops {
        let f = estimate_flops(&model, batch);
        for (i, l) in f.layers.iter().enumerate() {
            println!("flops.layer{i}.dense={}", l.dense);
            println!("flops.layer{i}.elementwise={}", l.elementwise_total());
        }
        println!("flops.dense={}", f.dense_total);
        println!("flops.elementwise={}", f.elementwise_total);
    }
    Ok(())
}

fn cmd_gradcheck(a: args::GradcheckArgs) -> CmdResult {
    let opts = CheckOptions {
        eps: a.eps,
        fault: a.inject_fault,
        ..CheckOptions::default()
    };
    if !(1e-7..=1e-3).contains(&a.eps) {
        return Err(Failure::Usage(format!("--eps {} outside [1e-7, 1e-3]", a.eps)));
    }
    let rows = gradcheck_suite(opts, a.trials, a.seed)?;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for row in &rows {
        let err = row.outcome.max_rel_err;
        worst = worst.max(err);
        let fail = err.is_nan() || err >= a.tolerance;
        if a.verbose || fail {
            println!("{}{}", if fail { "FAIL " } else { "" }, row.describe());
        }
        if fail {
            failures.push(row.describe());
        }
    }
    let mut by_variant: Vec<(String, f64)> = Vec::new();
    for row in &rows {
        let key = row.variant.split(':').next().unwrap_or(&row.variant).to_string();
        match by_variant.iter_mut().find(|(k, _)| *k == key) {
            Some((_, w)) => *w = w.max(row.outcome.max_rel_err),
            None => by_variant.push((key, row.outcome.max_rel_err)),
        }
    }
    for (k, w) in &by_variant {
        println!("max_rel_err.{k}={w:.3e}");
    }
    println!(
        "configurations={} worst={worst:.3e} tolerance={:e}",
        rows.len(),
        a.tolerance
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "{} configuration(s) above tolerance:\n  {}",
            failures.len(),
            failures.join("\n  ")
        )))
    }
}

fn cmd_plot_basis(a: args::PlotArgs) -> CmdResult {
    let spec = GridSpec::new(a.grid, a.order)?;
    if a.resolution < 2 {
        return Err(Failure::Usage("--resolution must be at least 2".into()));
    }
    let (lo, hi) = (-0.6, 1.6);
    let xs: Vec<f64> = (0..a.resolution)
        .map(|j| lo + (hi - lo) * j as f64 / (a.resolution - 1) as f64)
        .collect();
    let x = Tensor::new(vec![a.resolution, 1], xs.clone())?;
    let values = match a.basis {
        BasisKind::Afkan => {
            let phase = basis::phase_init(spec, PhaseLayout::Compact);
            basis::basis_a_values(&x, &phase, a.act, a.ftype)?
        }
        BasisKind::ReluKan => {
            let phase = basis::phase_init(spec, PhaseLayout::PerInput(1));
            basis::relu_kan_r_values(&x, &phase)?
        }
    };
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(out, "x,i,value")?;
    let n = spec.n();
    for (j, x) in xs.iter().enumerate() {
        for i in 0..n {
            writeln!(out, "{x},{i},{}", values.data()[j * n + i])?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Row {
    label: String,
    params: usize,
    agg: Option<Aggregate>,
}

fn print_table(rows: &[Row]) {
    println!(
        "{:<28} {:>8} {:>16} {:>16} {:>16} {:>10}",
        "model", "params", "train_acc", "val_acc", "macro_f1", "seconds"
    );
    let pct = |m: afkan::train::MeanStd| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
    for r in rows {
        match &r.agg {
            Some(a) => println!(
                "{:<28} {:>8} {:>16} {:>16} {:>16} {:>10.1}",
                r.label,
                r.params,
                pct(a.train_acc),
                pct(a.val_acc),
                pct(a.macro_f1),
                a.seconds.mean
            ),
            None => println!("{:<28} {:>8} {:>16}", r.label, r.params, "failed"),
        }
    }
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    let members: Vec<(String, ModelSpec)> = if a.grid_sweep.is_some() || a.order_sweep.is_some() {
        let grids = a.grid_sweep.clone().unwrap_or(3..=3);
        let orders = a.order_sweep.clone().unwrap_or(3..=3);
        let mut v = Vec::new();
        for g in grids {
            for k in orders.clone() {
                let mut s = ModelSpec::new(Variant::Afkan, a.widths.clone());
                s.grid = GridSpec::new(g, k)?;
                v.push((format!("afkan:global_attn G={g} k={k}"), s));
            }
        }
        v
    } else {
        a.variants
            .iter()
            .map(|m| args::parse_member(m, &a.widths).map(|s| (s.label(), s)))
            .collect::<Result<_, _>>()
            .map_err(Failure::Usage)?
    };
    let configs: Vec<TrainConfig> = members
        .iter()
        .map(|(_, s)| train_config(s.clone(), &a.protocol))
        .collect::<Result<_, _>>()?;
    let (train, test) = load_both(&a.data)?;
    for (_, s) in &members {
        check_input_width(s, &train)?;
    }
    let mut log = match &a.log {
        Some(p) => Some(MetricsLog::new(create(p)?)),
        None => None,
    };
    let mut rows = Vec::new();
    let mut first_failure = None;
    for ((label, spec), cfg) in members.iter().zip(&configs) {
        let params = count_params(&Model::new(spec)?).total;
        info!("training {label}");
        let outcome = multi_run(cfg, &train, &test, cfg.runs, &mut |rec| {
            if let Some(l) = log.as_mut() {
                let _ = l.record(rec);
            }
        });
        match outcome {
            Ok((_, agg, _)) => {
                if let Some(l) = log.as_mut() {
                    l.aggregate(label, &agg)?;
                }
                rows.push(Row {
                    label: label.clone(),
                    params,
                    agg: Some(agg),
                });
            }
            Err(e) => {
                error!("{label} failed: {e}");
                rows.push(Row {
                    label: label.clone(),
                    params,
                    agg: None,
                });
                first_failure.get_or_insert(Failure::from(e));
            }
        }
    }
    print_table(&rows);
    match first_failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn cmd_evaluate(a: args::EvaluateArgs) -> CmdResult {
    let mut model = checkpoint::load(&a.checkpoint)?;
    let test = load_split(&a.data, Split::Test)?;
    check_input_width(model.spec(), &test)?;
    let m = evaluate(&mut model, &test, a.batch_size)?;
    println!("model: {}", model.spec().label());
    println!("accuracy={:.6}", m.accuracy);
    println!("macro_f1={:.6}", m.macro_f1);
    Ok(())
}
