//! Error breakdowns along spatial and temporal axes, and a 2D projection of
//! the convolutional trunk output through a linear autoencoder.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::architectures::Model;
use crate::autograd::{ParamStore, Tape};
use crate::dataset::depot_locations;
use crate::error::{Error, Result};
use crate::features::{encode_batch, haversine_km, DeliveryRecord, FeatureConfig, LatLon};
use crate::layers::DenseParams;
use crate::metrics::compute_metrics;
use crate::tensor::{Shape, Tensor};
use crate::training::{adam_step, AdamState, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    Depot,
    /// Straight-line OD distance, integer kilometres, left-closed.
    OdDistanceKm,
    Hour,
    Week,
    Dow,
    /// Actual duration, integer hours.
    TargetHour,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Depot,
        Dimension::OdDistanceKm,
        Dimension::Hour,
        Dimension::Week,
        Dimension::Dow,
        Dimension::TargetHour,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Depot => "depot",
            Dimension::OdDistanceKm => "od_distance_km",
            Dimension::Hour => "hour",
            Dimension::Week => "week",
            Dimension::Dow => "dow",
            Dimension::TargetHour => "target_hour",
        }
    }

    fn bin(self, r: &DeliveryRecord, target: f64, cfg: &FeatureConfig) -> i64 {
        match self {
            Dimension::Depot => i64::from(r.depot.0),
            Dimension::OdDistanceKm => haversine_km(r.origin, r.destination).floor() as i64,
            Dimension::Hour => i64::from(r.hour()),
            Dimension::Week => i64::from(cfg.week_index(r.ofd_time.date_naive())),
            Dimension::Dow => i64::from(r.dow()),
            Dimension::TargetHour => target.floor() as i64,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown breakdown dimension '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinStats {
    pub bin: i64,
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    pub mape: f64,
    pub mare: f64,
    /// Depot location, for the depot dimension only.
    pub location: Option<LatLon>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BreakdownTable {
    pub dimension: Dimension,
    /// Non-empty bins in ascending order.
    pub bins: Vec<BinStats>,
}

impl BreakdownTable {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.n).sum()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([self.dimension.as_str(), "n", "mae_h", "mse", "mape_pct", "mare_pct"])?;
        for b in &self.bins {
            out.write_record([
                b.bin.to_string(),
                b.n.to_string(),
                b.mae.to_string(),
                b.mse.to_string(),
                (b.mape * 100.0).to_string(),
                (b.mare * 100.0).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `depot_id,lat,lon,mape_pct,n`, for depot tables.
    pub fn write_map_csv(&self, w: impl Write) -> Result<()> {
        if self.dimension != Dimension::Depot {
            return Err(Error::contract("map export needs the depot breakdown"));
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["depot_id", "lat", "lon", "mape_pct", "n"])?;
        for b in &self.bins {
            let loc = b.location.ok_or_else(|| Error::Internal(format!("depot {} has no location", b.bin)))?;
            out.write_record([
                b.bin.to_string(),
                loc.lat.to_string(),
                loc.lon.to_string(),
                (b.mape * 100.0).to_string(),
                b.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn error_breakdown(
    records: &[DeliveryRecord],
    targets: &[f64],
    predictions: &[f64],
    dimension: Dimension,
    cfg: &FeatureConfig,
) -> Result<BreakdownTable> {
    if records.len() != targets.len() || targets.len() != predictions.len() {
        return Err(Error::contract(format!(
            "{} records, {} targets, {} predictions",
            records.len(),
            targets.len(),
            predictions.len()
        )));
    }
    let mut groups: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((r, &y), &p) in records.iter().zip(targets).zip(predictions) {
        let g = groups.entry(dimension.bin(r, y, cfg)).or_default();
        g.0.push(y);
        g.1.push(p);
    }
    let depots = (dimension == Dimension::Depot).then(|| depot_locations(records));
    let mut bins = Vec::with_capacity(groups.len());
    for (bin, (y, p)) in groups {
        let m = compute_metrics(&y, &p)?;
        let location = depots.as_ref().and_then(|d| d.iter().find(|(id, _)| i64::from(id.0) == bin).map(|(_, l)| *l));
        bins.push(BinStats { bin, n: m.n, mae: m.mae, mse: m.mse, mape: m.mape, mare: m.mare, location });
    }
    Ok(BreakdownTable { dimension, bins })
}

/// Full-batch Adam settings for the projection autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct AeConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a lower reconstruction loss.
    pub patience: usize,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig { lr: 1e-2, max_epochs: 5000, patience: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearAeFit {
    /// `[N, 2]` codes of the centred inputs.
    pub codes: Vec<[f64; 2]>,
    /// Mean over samples of the squared reconstruction error (summed over features).
    pub recon_mse: f64,
    pub epochs: usize,
}

/// Fits an undercomplete bias-free linear autoencoder `F → 2 → F` to the
/// column-centred rows of `features` (`[N, 1, F]`).
pub fn fit_linear_ae(features: &Tensor, cfg: &AeConfig) -> Result<LinearAeFit> {
    let Shape { batch: n, len, channels: f } = features.shape();
    if len != 1 || n == 0 || f == 0 {
        return Err(Error::shape(format!("autoencoder input must be [N>0, 1, F>0], got {}", features.shape())));
    }
    let mut x = features.data().to_vec();
    for j in 0..f {
        let mean = (0..n).map(|i| x[i * f + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            x[i * f + j] -= mean;
        }
    }
    // A global rescale keeps the optimizer in a sane range; it does not change the subspace.
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms == 0.0 {
        return Ok(LinearAeFit { codes: vec![[0.0; 2]; n], recon_mse: 0.0, epochs: 0 });
    }
    let scaled = Tensor::new(Shape::new(n, 1, f), x.iter().map(|v| v / rms).collect())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let enc = DenseParams::init(&mut store, "ae.encoder", f, 2, false, &mut rng);
    let dec = DenseParams::init(&mut store, "ae.decoder", 2, f, false, &mut rng);
    let adam = TrainConfig::default();
    let mut state = AdamState::new(&store);
    let mut best = (f64::INFINITY, store.clone());
    let mut since_best = 0;
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        let (loss, grads) = {
            let mut tape = Tape::new();
            let input = tape.constant(scaled.clone());
            let z = enc.apply(&mut tape, &store, input)?;
            let r = dec.apply(&mut tape, &store, z)?;
            let l = tape.mse_loss(r, input)?;
            (tape.value(l).data()[0], tape.backward(l)?)
        };
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("autoencoder loss became {loss}")));
        }
        if loss < best.0 {
            best = (loss, store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
        adam_step(&mut store, &grads, &mut state, cfg.lr, &adam)?;
    }
    let store = best.1;
    let mut tape = Tape::new();
    let input = tape.constant(scaled);
    let z = enc.apply_frozen(&mut tape, &store, input)?;
    let r = dec.apply_frozen(&mut tape, &store, z)?;
    let l = tape.mse_loss(r, input)?;
    let recon_mse = tape.value(l).data()[0] * f as f64 * rms * rms;
    let codes = tape.value(z).data().chunks(2).map(|c| [c[0] * rms, c[1] * rms]).collect();
    Ok(LinearAeFit { codes, recon_mse, epochs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection2D {
    pub codes: Vec<[f64; 2]>,
    pub hours: Vec<u32>,
    pub dows: Vec<u32>,
    pub recon_mse: f64,
}

/// Mean code per bin label, in ascending label order.
pub fn centroids(codes: &[[f64; 2]], labels: &[u32]) -> BTreeMap<u32, ([f64; 2], usize)> {
    let mut acc: BTreeMap<u32, ([f64; 2], usize)> = BTreeMap::new();
    for (c, &l) in codes.iter().zip(labels) {
        let e = acc.entry(l).or_default();
        e.0[0] += c[0];
        e.0[1] += c[1];
        e.1 += 1;
    }
    for (sum, n) in acc.values_mut() {
        sum[0] /= *n as f64;
        sum[1] /= *n as f64;
    }
    acc
}

impl Projection2D {
    pub fn hour_centroids(&self) -> BTreeMap<u32, ([f64; 2], usize)> {
        centroids(&self.codes, &self.hours)
    }

    pub fn dow_centroids(&self) -> BTreeMap<u32, ([f64; 2], usize)> {
        centroids(&self.codes, &self.dows)
    }

    /// `sample_id,c1,c2,hour,dow`
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample_id", "c1", "c2", "hour", "dow"])?;
        for (i, c) in self.codes.iter().enumerate() {
            out.write_record([
                i.to_string(),
                c[0].to_string(),
                c[1].to_string(),
                self.hours[i].to_string(),
                self.dows[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `dimension,bin,c1,c2,n` for the hour and dow centroids.
    pub fn write_centroids_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dimension", "bin", "c1", "c2", "n"])?;
        for (name, table) in [("hour", self.hour_centroids()), ("dow", self.dow_centroids())] {
            for (bin, (c, n)) in table {
                out.write_record([name.to_string(), bin.to_string(), c[0].to_string(), c[1].to_string(), n.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Encodes the records, runs them through the frozen trunk and projects the
/// flattened features to two dimensions.
pub fn project_2d(model: &Model, records: &[DeliveryRecord], features: &FeatureConfig, cfg: &AeConfig) -> Result<Projection2D> {
    let trunk = model.trunk_features(&encode_batch(records, features)?)?;
    let fit = fit_linear_ae(&trunk, cfg)?;
    Ok(Projection2D {
        codes: fit.codes,
        hours: records.iter().map(DeliveryRecord::hour).collect(),
        dows: records.iter().map(DeliveryRecord::dow).collect(),
        recon_mse: fit.recon_mse,
    })
}
