//! Delivery records and their 12-dimensional normalized encoding.

use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub const FEATURE_COUNT: usize = 12;

/// Names of the encoded components, in model input order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "o_lon_n",
    "o_lat_n",
    "d_lon_n",
    "d_lat_n",
    "dist_n",
    "hour_n",
    "dow_n",
    "week_n",
    "temp_n",
    "rain_n",
    "snow_precip_n",
    "snow_ground_n",
];

/// Versioned order string stored in checkpoints.
pub fn feature_order() -> String {
    format!("v1:{}", FEATURE_NAMES.join(","))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Domain(format!("latitude {lat} outside [-90, 90]")));
        }
        if !lon.is_finite() {
            return Err(Error::Domain(format!("longitude {lon} is not finite")));
        }
        Ok(LatLon { lat, lon })
    }
}

/// Great-circle distance in kilometres on a sphere of radius 6371 km.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// [`haversine_km`] on raw degrees, rejecting invalid latitudes.
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> Result<f64> {
    Ok(haversine_km(LatLon::new(lat1, lon1)?, LatLon::new(lat2, lon2)?))
}

/// Rounds to the nearest multiple of `grid`, halves away from zero.
pub fn quantize_coord(value: f64, grid: f64) -> f64 {
    debug_assert!(grid > 0.0);
    (value / grid).round() * grid
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DepotId(pub u32);

impl std::fmt::Display for DepotId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Daily weather observed on the delivery date.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weather {
    pub temp_c: f64,
    pub rain_mm: f64,
    pub snow_precip_cm: f64,
    pub snow_ground_cm: f64,
}

/// One last-mile delivery.
#[derive(Clone, Debug, PartialEq)]
pub struct DeliveryRecord {
    pub depot: DepotId,
    pub origin: LatLon,
    pub destination: LatLon,
    pub ofd_time: DateTime<Utc>,
    pub delivered_time: DateTime<Utc>,
    pub weather: Weather,
}

impl DeliveryRecord {
    /// Hours between the out-for-delivery and delivered scans.
    pub fn duration_h(&self) -> f64 {
        (self.delivered_time - self.ofd_time).num_seconds() as f64 / 3600.0
    }

    /// Day of week of the out-for-delivery scan, Monday = 0.
    pub fn dow(&self) -> u32 {
        self.ofd_time.weekday().num_days_from_monday()
    }

    pub fn hour(&self) -> u32 {
        self.ofd_time.hour()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub const fn new(min: f64, max: f64) -> Self {
        ValueRange { min, max }
    }

    /// Min-max scaled and clamped to [0, 1].
    pub fn normalize(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.max > self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Config(format!("{name} range [{}, {}] is degenerate", self.min, self.max)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub lat: ValueRange,
    pub lon: ValueRange,
}

impl BoundingBox {
    /// A box around the Greater Toronto Area.
    pub const GTA: BoundingBox = BoundingBox {
        lat: ValueRange::new(43.40, 44.20),
        lon: ValueRange::new(-80.00, -78.80),
    };

    pub fn contains(&self, p: LatLon) -> bool {
        (self.lat.min..=self.lat.max).contains(&p.lat) && (self.lon.min..=self.lon.max).contains(&p.lon)
    }

    pub fn south_west(&self) -> LatLon {
        LatLon { lat: self.lat.min, lon: self.lon.min }
    }

    pub fn north_east(&self) -> LatLon {
        LatLon { lat: self.lat.max, lon: self.lon.max }
    }

    pub fn diagonal_km(&self) -> f64 {
        haversine_km(self.south_west(), self.north_east())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub bbox: BoundingBox,
    /// Coordinate quantization step in degrees.
    pub quant_grid: f64,
    pub quantize_origin: bool,
    pub temp_range: ValueRange,
    pub rain_range: ValueRange,
    pub snow_precip_range: ValueRange,
    pub snow_ground_range: ValueRange,
    /// Monday of week 0.
    pub week_origin: NaiveDate,
    pub week_count: u32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            bbox: BoundingBox::GTA,
            quant_grid: 0.001,
            quantize_origin: false,
            temp_range: ValueRange::new(-10.0, 30.0),
            rain_range: ValueRange::new(0.0, 40.0),
            snow_precip_range: ValueRange::new(0.0, 16.0),
            snow_ground_range: ValueRange::new(0.0, 40.0),
            week_origin: NaiveDate::from_ymd_opt(2017, 1, 2).expect("valid date"),
            week_count: 25,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.bbox.lat.check("latitude")?;
        self.bbox.lon.check("longitude")?;
        self.temp_range.check("temperature")?;
        self.rain_range.check("rain")?;
        self.snow_precip_range.check("snow precipitation")?;
        self.snow_ground_range.check("snow on ground")?;
        if !(self.quant_grid > 0.0) {
            return Err(Error::Config(format!("quantization grid {} must be positive", self.quant_grid)));
        }
        if self.week_count < 2 {
            return Err(Error::Config("week_count must be at least 2".into()));
        }
        Ok(())
    }

    /// Zero-based week of `date` relative to `week_origin`, clamped to the span.
    pub fn week_index(&self, date: NaiveDate) -> u32 {
        let days = (date - self.week_origin).num_days();
        (days.div_euclid(7)).clamp(0, i64::from(self.week_count) - 1) as u32
    }
}

/// Normalized model input; every component lies in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_in_box(cfg: &FeatureConfig, p: LatLon, lat_field: &'static str, lon_field: &'static str) -> Result<()> {
    let b = &cfg.bbox;
    if !(b.lat.min..=b.lat.max).contains(&p.lat) {
        return Err(Error::OutOfRange { field: lat_field, value: p.lat });
    }
    if !(b.lon.min..=b.lon.max).contains(&p.lon) {
        return Err(Error::OutOfRange { field: lon_field, value: p.lon });
    }
    Ok(())
}

pub fn encode_record(rec: &DeliveryRecord, cfg: &FeatureConfig) -> Result<FeatureVector> {
    check_in_box(cfg, rec.origin, "o_lat", "o_lon")?;
    check_in_box(cfg, rec.destination, "d_lat", "d_lon")?;
    let q = |p: LatLon| LatLon {
        lat: quantize_coord(p.lat, cfg.quant_grid),
        lon: quantize_coord(p.lon, cfg.quant_grid),
    };
    let dest = q(rec.destination);
    let origin = if cfg.quantize_origin { q(rec.origin) } else { rec.origin };
    let b = &cfg.bbox;
    let dist = (haversine_km(origin, dest) / b.diagonal_km()).clamp(0.0, 1.0);
    let t = rec.ofd_time;
    let hour = (f64::from(t.hour()) + f64::from(t.minute()) / 60.0) / 24.0;
    let dow = f64::from(rec.dow()) / 6.0;
    let week = f64::from(cfg.week_index(t.date_naive())) / f64::from(cfg.week_count - 1);
    let w = &rec.weather;
    Ok(FeatureVector([
        b.lon.normalize(origin.lon),
        b.lat.normalize(origin.lat),
        b.lon.normalize(dest.lon),
        b.lat.normalize(dest.lat),
        dist,
        hour,
        dow,
        week,
        cfg.temp_range.normalize(w.temp_c),
        cfg.rain_range.normalize(w.rain_mm),
        cfg.snow_precip_range.normalize(w.snow_precip_cm),
        cfg.snow_ground_range.normalize(w.snow_ground_cm),
    ]))
}

/// Encodes records into a `[N, 12, 1]` model input.
pub fn encode_batch(records: &[DeliveryRecord], cfg: &FeatureConfig) -> Result<Tensor> {
    if records.is_empty() {
        return Err(Error::contract("cannot encode an empty record set"));
    }
    let mut data = Vec::with_capacity(records.len() * FEATURE_COUNT);
    for r in records {
        data.extend_from_slice(encode_record(r, cfg)?.as_slice());
    }
    Tensor::new(Shape::new(records.len(), FEATURE_COUNT, 1), data)
}

/// Duration targets as a `[N, 1, 1]` tensor.
pub fn targets(records: &[DeliveryRecord]) -> Result<Tensor> {
    Tensor::new(Shape::new(records.len(), 1, 1), records.iter().map(DeliveryRecord::duration_h).collect())
}
