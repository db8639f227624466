//! Flat `key=value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use crate::analysis::AeConfig;
use crate::architectures::{DepthSummary, Family, ModelSpec, SeConfig};
use crate::baselines::{SbtteParams, DEFAULT_CELL_DEG};
use crate::dataset::SyntheticConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::training::TrainConfig;

/// Which network to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Conv { family: Family, depth: usize },
    Mlp1,
    Mlp2,
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mlp1" | "mlp-1" => ModelChoice::Mlp1,
            "mlp2" | "mlp-2" => ModelChoice::Mlp2,
            "vgg" => ModelChoice::Conv { family: Family::Vgg, depth: 3 },
            "resnet" => ModelChoice::Conv { family: Family::ResNet, depth: 3 },
            _ => return Err(Error::Config(format!("unknown model family '{s}' (vgg, resnet, mlp1, mlp2)"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SyntheticConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub model: ModelChoice,
    pub se: bool,
    /// Divides every conv width; 1 keeps the published widths.
    pub width_divisor: usize,
    pub sbtte: SbtteParams,
    pub cell_deg: f64,
    pub ae: AeConfig,
    /// Samples fed to the projection autoencoder.
    pub projection_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: SyntheticConfig::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            train_fraction: 0.7,
            model: ModelChoice::Conv { family: Family::ResNet, depth: 3 },
            se: false,
            width_divisor: 1,
            sbtte: SbtteParams::default(),
            cell_deg: DEFAULT_CELL_DEG,
            ae: AeConfig::default(),
            projection_samples: 500,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

impl RunConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "n_samples" => self.data.n_samples = parse(key, v)?,
            "n_depots" => self.data.n_depots = parse(key, v)?,
            "n_delivery_points" => self.data.n_delivery_points = parse(key, v)?,
            "weeks" => self.data.weeks = parse(key, v)?,
            "cluster_sd_km" => self.data.cluster_sd_km = parse(key, v)?,
            "start_date" => {
                self.data.start_date = NaiveDate::parse_from_str(v, "%Y-%m-%d")
                    .map_err(|e| Error::Config(format!("start_date '{v}': {e}")))?
            }
            "quant_grid" => self.features.quant_grid = parse(key, v)?,
            "quantize_origin" => self.features.quantize_origin = parse_bool(key, v)?,
            "week_origin" => {
                self.features.week_origin = NaiveDate::parse_from_str(v, "%Y-%m-%d")
                    .map_err(|e| Error::Config(format!("week_origin '{v}': {e}")))?
            }
            "week_count" => self.features.week_count = parse(key, v)?,
            "lr" => self.train.initial_lr = parse(key, v)?,
            "lr_halving_period" => self.train.lr_halving_period = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "stop_at_train_mse" => {
                self.train.stop_at_train_mse = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "record_time" => self.train.record_time = parse_bool(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "family" => {
                let depth = self.depth().max(3);
                self.model = match v.parse()? {
                    ModelChoice::Conv { family, .. } => ModelChoice::Conv { family, depth },
                    other => other,
                }
            }
            "depth" => {
                let depth = parse(key, v)?;
                match &mut self.model {
                    ModelChoice::Conv { depth: d, .. } => *d = depth,
                    _ if depth == 0 => {}
                    _ => return Err(Error::Config("depth applies to vgg and resnet only".into())),
                }
            }
            "se" => self.se = parse_bool(key, v)?,
            "width_divisor" => self.width_divisor = parse(key, v)?,
            "radius_origin_km" => self.sbtte.radius_origin_km = parse(key, v)?,
            "radius_dest_km" => self.sbtte.radius_dest_km = parse(key, v)?,
            "min_neighbors" => self.sbtte.min_neighbors = parse(key, v)?,
            "radius_growth" => self.sbtte.growth = parse(key, v)?,
            "max_expansions" => self.sbtte.max_expansions = parse(key, v)?,
            "temporal_filter" => self.sbtte.temporal_filter = parse_bool(key, v)?,
            "cell_deg" => self.cell_deg = parse(key, v)?,
            "ae_lr" => self.ae.lr = parse(key, v)?,
            "ae_max_epochs" => self.ae.max_epochs = parse(key, v)?,
            "ae_patience" => self.ae.patience = parse(key, v)?,
            "projection_samples" => self.projection_samples = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn depth(&self) -> usize {
        match self.model {
            ModelChoice::Conv { depth, .. } => depth,
            _ => 0,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.model {
            ModelChoice::Conv { family: Family::Vgg, .. } => "vgg",
            ModelChoice::Conv { family: Family::ResNet, .. } => "resnet",
            ModelChoice::Conv { family: Family::Mlp, .. } | ModelChoice::Mlp1 => "mlp1",
            ModelChoice::Mlp2 => "mlp2",
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let spec = match self.model {
            ModelChoice::Conv { family, depth } => {
                let summary = DepthSummary::standard(depth)?;
                let summary = if self.width_divisor > 1 { summary.scaled_down(self.width_divisor) } else { summary };
                let spec = ModelSpec::conv(family, &summary);
                if self.se {
                    spec.with_se(SeConfig::default())
                } else {
                    spec
                }
            }
            ModelChoice::Mlp1 => ModelSpec::mlp1(),
            ModelChoice::Mlp2 => ModelSpec::mlp2(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Train settings with the shuffle stream derived from the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.sub_seed("shuffle"), ..self.train.clone() }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig { seed: self.sub_seed("data"), ..self.data.clone() }
    }

    /// Independent seed for a named component (`data`, `split`, `init`, `shuffle`).
    pub fn sub_seed(&self, name: &str) -> u64 {
        let digest = Sha256::digest(format!("{}:{name}", self.seed).as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.features.validate()?;
        self.train.validate()?;
        self.sbtte.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.width_divisor == 0 {
            return Err(Error::Config("width_divisor must be >= 1".into()));
        }
        if !(self.cell_deg > 0.0) {
            return Err(Error::Config("cell_deg must be positive".into()));
        }
        if self.projection_samples == 0 || self.ae.max_epochs == 0 || self.ae.patience == 0 {
            return Err(Error::Config("projection settings must be positive".into()));
        }
        self.model_spec().map(|_| ())
    }

    /// Every key with its resolved value, one per line in a fixed order.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("n_samples", self.data.n_samples.to_string()),
            ("n_depots", self.data.n_depots.to_string()),
            ("n_delivery_points", self.data.n_delivery_points.to_string()),
            ("weeks", self.data.weeks.to_string()),
            ("cluster_sd_km", self.data.cluster_sd_km.to_string()),
            ("start_date", self.data.start_date.to_string()),
            ("quant_grid", self.features.quant_grid.to_string()),
            ("quantize_origin", self.features.quantize_origin.to_string()),
            ("week_origin", self.features.week_origin.to_string()),
            ("week_count", self.features.week_count.to_string()),
            ("lr", self.train.initial_lr.to_string()),
            ("lr_halving_period", self.train.lr_halving_period.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("patience", self.train.patience.to_string()),
            ("max_epochs", self.train.max_epochs.to_string()),
            ("stop_at_train_mse", opt(self.train.stop_at_train_mse)),
            ("record_time", self.train.record_time.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("family", self.family_name().to_string()),
            ("depth", self.depth().to_string()),
            ("se", self.se.to_string()),
            ("width_divisor", self.width_divisor.to_string()),
            ("radius_origin_km", self.sbtte.radius_origin_km.to_string()),
            ("radius_dest_km", self.sbtte.radius_dest_km.to_string()),
            ("min_neighbors", self.sbtte.min_neighbors.to_string()),
            ("radius_growth", self.sbtte.growth.to_string()),
            ("max_expansions", self.sbtte.max_expansions.to_string()),
            ("temporal_filter", self.sbtte.temporal_filter.to_string()),
            ("cell_deg", self.cell_deg.to_string()),
            ("ae_lr", self.ae.lr.to_string()),
            ("ae_max_epochs", self.ae.max_epochs.to_string()),
            ("ae_patience", self.ae.patience.to_string()),
            ("projection_samples", self.projection_samples.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}
