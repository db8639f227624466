//! Batch command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{error_breakdown, project_2d, Dimension};
use crate::architectures::checkpoint;
use crate::architectures::Model;
use crate::baselines::{mlp_benchmarks, sbtte_predict_all, NeighborIndex};
use crate::config::{ModelChoice, RunConfig};
use crate::dataset::{generate_synthetic, load_csv, save_csv, split, Dataset, Split};
use crate::error::{Error, Result};
use crate::features::{feature_order, DeliveryRecord};
use crate::metrics::{full_report, MetricsReport};
use crate::training::{train, Samples, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "odtte", version, about = "Origin-destination travel-time estimation lab")]
pub struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override any config key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// vgg, resnet, mlp1 or mlp2.
    #[arg(long)]
    pub family: Option<String>,
    /// Number of conv blocks, 3 to 10.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Add squeeze-and-excitation units.
    #[arg(long)]
    pub se: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset CSV.
    GenData {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a network; writes a checkpoint and the loss history.
    Train {
        /// Dataset CSV; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Compute metrics from a predictions CSV, or from a checkpoint on the held-out split.
    Evaluate {
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Per-sample predictions for every record of a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Neighbor baseline on the held-out split; optionally the MLP benchmarks too.
    Baseline {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also train and evaluate MLP-1 and MLP-2.
        #[arg(long)]
        mlp: bool,
    },
    /// Error breakdowns by depot, distance, hour, week, weekday and target hour.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// 2D projection of the frozen trunk output of a checkpoint.
    Project {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate every depth from 3 to 10.
    DepthSweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "vgg")]
        family: String,
        #[arg(long)]
        se: bool,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
}

/// Config file, then `--set` overrides, then dedicated flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::GenData { n: Some(n) } => cfg.data.n_samples = *n,
        Command::Train { model, .. } => apply_model_args(&mut cfg, model)?,
        Command::DepthSweep { family, se, max_epochs, .. } => {
            cfg.set("family", family)?;
            cfg.se |= *se;
            if let Some(m) = max_epochs {
                cfg.train.max_epochs = *m;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_model_args(cfg: &mut RunConfig, m: &ModelArgs) -> Result<()> {
    if let Some(f) = &m.family {
        cfg.set("family", f)?;
    }
    if let Some(d) = m.depth {
        cfg.set("depth", &d.to_string())?;
    }
    cfg.se |= m.se;
    if let Some(e) = m.max_epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = m.lr {
        cfg.train.initial_lr = lr;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("config.txt"), cfg.to_text())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData { .. } => {
            let ds = generate_synthetic(&cfg.synthetic_config())?;
            save_csv(&ds, &out.join("data.csv"))?;
            println!("wrote {} records to {}", ds.len(), out.join("data.csv").display());
        }
        Command::Train { data, .. } => {
            let ds = load_or_generate(&cfg, data.as_deref())?;
            let (train_set, test_set) = split_samples(&cfg, &ds)?;
            let model = Model::build(&cfg.model_spec()?, cfg.sub_seed("init"))?;
            let outcome = train_or_save_last_good(model, &train_set, &test_set, &cfg, out, "model")?;
            report_training(&outcome, out, "model")?;
        }
        Command::Evaluate { predictions, checkpoint, data } => {
            let report = match (predictions, checkpoint, data) {
                (Some(p), None, _) => {
                    let (_, y, yhat) = read_predictions(&p)?;
                    full_report(&y, &yhat)?
                }
                (None, Some(c), Some(d)) => {
                    let model = load_model(&c)?;
                    let ds = load_csv(&d)?;
                    let s = dataset_split(&cfg, &ds)?;
                    let test = ds.subset(&s.test);
                    let yhat = model.predict(&Samples::from_records(&test.records, &cfg.features)?.inputs)?;
                    write_predictions(&out.join("predictions.csv"), &s.test, &test.durations(), &yhat)?;
                    full_report(&test.durations(), &yhat)?
                }
                _ => return Err(Error::Config("evaluate needs --predictions, or --checkpoint with --data".into())),
            };
            fs::write(out.join("metrics.txt"), report.to_text())?;
            println!("{report}");
        }
        Command::Predict { checkpoint, data } => {
            let model = load_model(&checkpoint)?;
            let ds = load_csv(&data)?;
            let yhat = model.predict(&Samples::from_records(&ds.records, &cfg.features)?.inputs)?;
            let ids: Vec<usize> = (0..ds.len()).collect();
            write_predictions(&out.join("predictions.csv"), &ids, &ds.durations(), &yhat)?;
            println!("wrote {} predictions", ds.len());
        }
        Command::Baseline { data, mlp } => {
            let ds = load_or_generate(&cfg, data.as_deref())?;
            let s = dataset_split(&cfg, &ds)?;
            let (train_ds, test_ds) = (ds.subset(&s.train), ds.subset(&s.test));
            let index = NeighborIndex::build(&train_ds.records, cfg.cell_deg)?;
            let yhat = sbtte_predict_all(&index, &test_ds.records, &cfg.sbtte)?;
            write_predictions(&out.join("sbtte_predictions.csv"), &s.test, &test_ds.durations(), &yhat)?;
            let report = full_report(&test_ds.durations(), &yhat)?;
            fs::write(out.join("sbtte_metrics.txt"), report.to_text())?;
            println!("sb-tte  {report}");
            if mlp {
                let train_set = Samples::from_records(&train_ds.records, &cfg.features)?;
                let test_set = Samples::from_records(&test_ds.records, &cfg.features)?;
                for (name, spec) in mlp_benchmarks() {
                    let model = Model::build(&spec, cfg.sub_seed("init"))?;
                    let outcome = train_or_save_last_good(model, &train_set, &test_set, &cfg, out, name)?;
                    let yhat = outcome.model.predict(&test_set.inputs)?;
                    write_predictions(&out.join(format!("{name}_predictions.csv")), &s.test, &test_set.targets, &yhat)?;
                    let report = full_report(&test_set.targets, &yhat)?;
                    fs::write(out.join(format!("{name}_metrics.txt")), report.to_text())?;
                    println!("{name}  {report}");
                }
            }
        }
        Command::Analyze { data, predictions } => {
            let ds = load_csv(&data)?;
            let (ids, y, yhat) = read_predictions(&predictions)?;
            let records: Vec<DeliveryRecord> = ids
                .iter()
                .map(|&i| ds.records.get(i).cloned().ok_or_else(|| Error::Parse { row: i, msg: format!("record_id {i} not in dataset") }))
                .collect::<Result<_>>()?;
            for dim in Dimension::ALL {
                let table = error_breakdown(&records, &y, &yhat, dim, &cfg.features)?;
                table.write_csv(fs::File::create(out.join(format!("breakdown_{dim}.csv")))?)?;
                if dim == Dimension::Depot {
                    table.write_map_csv(fs::File::create(out.join("depot_map.csv"))?)?;
                }
            }
            println!("wrote {} breakdown tables", Dimension::ALL.len());
        }
        Command::Project { checkpoint, data } => {
            let model = load_model(&checkpoint)?;
            let ds = load_or_generate(&cfg, data.as_deref())?;
            let s = dataset_split(&cfg, &ds)?;
            let take: Vec<usize> = s.test.iter().copied().take(cfg.projection_samples).collect();
            let records = ds.subset(&take).records;
            let ae = crate::analysis::AeConfig { seed: cfg.sub_seed("init"), ..cfg.ae.clone() };
            let proj = project_2d(&model, &records, &cfg.features, &ae)?;
            proj.write_csv(fs::File::create(out.join("projection.csv"))?)?;
            proj.write_centroids_csv(fs::File::create(out.join("centroids.csv"))?)?;
            fs::write(out.join("projection.txt"), format!("recon_mse={}\nn={}\n", proj.recon_mse, records.len()))?;
            println!("projected {} samples, reconstruction MSE {}", records.len(), proj.recon_mse);
        }
        Command::DepthSweep { data, .. } => {
            let ds = load_or_generate(&cfg, data.as_deref())?;
            let (train_set, test_set) = split_samples(&cfg, &ds)?;
            let mut rows = csv::Writer::from_path(out.join("sweep.csv"))?;
            rows.write_record(["depth", "model", "params", "pools", "mse", "rmse", "mae", "mape_pct", "mare_pct", "ew90_h", "n"])?;
            let family = match cfg.model {
                ModelChoice::Conv { family, .. } => family,
                _ => return Err(Error::Config("depth-sweep needs --family vgg or resnet".into())),
            };
            for depth in 3..=10 {
                let mut c = cfg.clone();
                c.model = ModelChoice::Conv { family, depth };
                let model = Model::build(&c.model_spec()?, c.sub_seed("init"))?;
                let (params, pools, name) = (model.count_params(), model.pool_count(), model.name());
                let tag = format!("depth{depth}");
                let outcome = train_or_save_last_good(model, &train_set, &test_set, &c, out, &tag)?;
                let report = full_report(&test_set.targets, &outcome.model.predict(&test_set.inputs)?)?;
                fs::write(out.join(format!("{tag}_metrics.txt")), report.to_text())?;
                rows.write_record(sweep_row(depth, &name, params, pools, &report))?;
                println!("{name:>12}  params {params:>10}  {report}");
            }
            rows.flush()?;
        }
    }
    Ok(())
}

fn sweep_row(depth: usize, name: &str, params: usize, pools: usize, r: &MetricsReport) -> Vec<String> {
    vec![
        depth.to_string(),
        name.to_string(),
        params.to_string(),
        pools.to_string(),
        r.mse.to_string(),
        r.rmse.to_string(),
        r.mae.to_string(),
        (r.mape * 100.0).to_string(),
        (r.mare * 100.0).to_string(),
        r.ew90_h.map_or_else(|| "nan".into(), |v| v.to_string()),
        r.n.to_string(),
    ]
}

fn load_or_generate(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(p) => load_csv(p),
        None => generate_synthetic(&cfg.synthetic_config()),
    }
}

fn dataset_split(cfg: &RunConfig, ds: &Dataset) -> Result<Split> {
    split(ds.len(), cfg.train_fraction, cfg.sub_seed("split"))
}

fn split_samples(cfg: &RunConfig, ds: &Dataset) -> Result<(Samples, Samples)> {
    let s = dataset_split(cfg, ds)?;
    Ok((
        Samples::from_records(&ds.subset(&s.train).records, &cfg.features)?,
        Samples::from_records(&ds.subset(&s.test).records, &cfg.features)?,
    ))
}

fn load_model(path: &Path) -> Result<Model> {
    let ckpt = checkpoint::load(path)?;
    if ckpt.feature_order != feature_order() {
        return Err(Error::Checkpoint(format!(
            "checkpoint feature order '{}' does not match '{}'",
            ckpt.feature_order,
            feature_order()
        )));
    }
    Ok(ckpt.model)
}

/// Trains; on divergence the best parameters so far go to `<tag>.last_good.ckpt`.
fn train_or_save_last_good(model: Model, train_set: &Samples, val: &Samples, cfg: &RunConfig, out: &Path, tag: &str) -> Result<TrainOutcome> {
    match train(model, train_set, val, &cfg.train_config()) {
        Err(Error::Diverged { epoch, reason, last_good }) => {
            checkpoint::save(&out.join(format!("{tag}.last_good.ckpt")), &last_good, &feature_order())?;
            Err(Error::Diverged { epoch, reason, last_good })
        }
        other => other,
    }
}

fn report_training(outcome: &TrainOutcome, out: &Path, tag: &str) -> Result<()> {
    checkpoint::save(&out.join(format!("{tag}.ckpt")), &outcome.model, &feature_order())?;
    outcome.history.write_csv(fs::File::create(out.join(format!("{tag}_history.csv")))?)?;
    let summary = format!(
        "model={}\nparams={}\nepochs={}\nbest_epoch={}\nbest_val_mse={}\nstop={:?}\n",
        outcome.model.name(),
        outcome.model.count_params(),
        outcome.history.epochs.len(),
        outcome.history.best_epoch,
        outcome.history.best_val_mse().unwrap_or(f64::NAN),
        outcome.stop
    );
    fs::write(out.join(format!("{tag}_summary.txt")), &summary)?;
    print!("{summary}");
    Ok(())
}

/// `record_id,target_h,prediction_h`
pub fn write_predictions(path: &Path, ids: &[usize], targets: &[f64], predictions: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["record_id", "target_h", "prediction_h"])?;
    for ((id, y), p) in ids.iter().zip(targets).zip(predictions) {
        w.write_record([id.to_string(), y.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse { row: 1, msg: format!("missing column '{name}'") })
    };
    let (ci, cy, cp) = (col("record_id")?, col("target_h")?, col("prediction_h")?);
    let (mut ids, mut y, mut p) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |c: usize| row.get(c).unwrap_or("").trim().to_string();
        let bad = |c: usize| Error::Parse { row: line, msg: format!("bad value '{}'", field(c)) };
        ids.push(field(ci).parse().map_err(|_| bad(ci))?);
        y.push(field(cy).parse().map_err(|_| bad(cy))?);
        p.push(field(cp).parse().map_err(|_| bad(cp))?);
    }
    Ok((ids, y, p))
}
