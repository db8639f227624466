//! Synthetic delivery data, CSV interchange and train/test splitting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{haversine_km, BoundingBox, DeliveryRecord, DepotId, LatLon, Weather};

pub const CSV_COLUMNS: [&str; 11] = [
    "depot_id",
    "o_lat",
    "o_lon",
    "d_lat",
    "d_lon",
    "ofd_time",
    "delivered_time",
    "temp_c",
    "rain_mm",
    "snow_precip_cm",
    "snow_ground_cm",
];

pub const MIN_DURATION_H: f64 = 0.1;
pub const MAX_DURATION_H: f64 = 14.0;

const CALIBRATION_MIN_FAILURES: usize = 20;

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";
const SHARD_SIZE: usize = 8192;
/// Downtown reference point used for the urban slowdown.
const DOWNTOWN: LatLon = LatLon { lat: 43.6532, lon: -79.3832 };

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub digest: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<DeliveryRecord>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.records.iter().map(DeliveryRecord::duration_h).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Coefficients of the additive duration model, in hours.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorCoefficients {
    /// Mean and spread of the per-depot base offset.
    pub depot_base_mean: f64,
    pub depot_base_sd: f64,
    /// Hours per kilometre between depot and destination.
    pub per_km: f64,
    /// Extra relative slowdown per kilometre for depots near downtown.
    pub urban_boost: f64,
    /// Peak of the morning-rush bump around 8:00.
    pub rush: f64,
    /// Reduction per hour of departure after 11:00.
    pub late_slope: f64,
    /// Depot-specific sensitivity to departure hour.
    pub depot_hour_slope: f64,
    pub saturday_discount: f64,
    pub sunday_discount: f64,
    pub per_rain_mm: f64,
    pub per_snow_cm: f64,
    pub per_ground_cm: f64,
    pub per_cold_degree: f64,
    /// Log-scale spread and magnitude of the centred lognormal noise.
    pub noise_sigma: f64,
    pub noise_scale: f64,
}

impl Default for GeneratorCoefficients {
    fn default() -> Self {
        GeneratorCoefficients {
            depot_base_mean: 2.43,
            depot_base_sd: 0.55,
            per_km: 0.06,
            urban_boost: 1.5,
            rush: 0.6,
            late_slope: 0.25,
            depot_hour_slope: 0.25,
            saturday_discount: 0.3,
            sunday_discount: 0.8,
            per_rain_mm: 0.02,
            per_snow_cm: 0.08,
            per_ground_cm: 0.01,
            per_cold_degree: 0.02,
            noise_sigma: 0.35,
            noise_scale: 4.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_depots: usize,
    pub n_delivery_points: usize,
    pub bbox: BoundingBox,
    /// First day covered; deliveries span `weeks` whole weeks from here.
    pub start_date: NaiveDate,
    pub weeks: u32,
    /// Spread of delivery points around their depot.
    pub cluster_sd_km: f64,
    pub seed: u64,
    pub coefficients: GeneratorCoefficients,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_samples: 100_000,
            n_depots: 72,
            n_delivery_points: 8373,
            bbox: BoundingBox::GTA,
            start_date: NaiveDate::from_ymd_opt(2017, 1, 2).expect("valid date"),
            weeks: 25,
            cluster_sd_km: 4.0,
            seed: 0,
            coefficients: GeneratorCoefficients::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_depots == 0 {
            return Err(Error::Config("n_depots must be at least 1".into()));
        }
        if self.n_delivery_points == 0 {
            return Err(Error::Config("n_delivery_points must be at least 1".into()));
        }
        if self.weeks == 0 {
            return Err(Error::Config("weeks must be at least 1".into()));
        }
        if !(self.cluster_sd_km > 0.0) {
            return Err(Error::Config("cluster_sd_km must be positive".into()));
        }
        let c = &self.coefficients;
        if !(c.noise_sigma > 0.0) || !(c.noise_scale >= 0.0) || !(c.depot_base_sd >= 0.0) {
            return Err(Error::Config("noise and spread coefficients must be non-negative".into()));
        }
        Ok(())
    }

    /// Stable text rendering, hashed into the dataset digest.
    pub fn to_text(&self) -> String {
        let c = &self.coefficients;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("n_samples", self.n_samples.to_string());
        kv("n_depots", self.n_depots.to_string());
        kv("n_delivery_points", self.n_delivery_points.to_string());
        kv(
            "bbox",
            format!("{},{},{},{}", self.bbox.lat.min, self.bbox.lat.max, self.bbox.lon.min, self.bbox.lon.max),
        );
        kv("start_date", self.start_date.to_string());
        kv("weeks", self.weeks.to_string());
        kv("cluster_sd_km", self.cluster_sd_km.to_string());
        kv("seed", self.seed.to_string());
        for (k, v) in [
            ("depot_base_mean", c.depot_base_mean),
            ("depot_base_sd", c.depot_base_sd),
            ("per_km", c.per_km),
            ("urban_boost", c.urban_boost),
            ("rush", c.rush),
            ("late_slope", c.late_slope),
            ("depot_hour_slope", c.depot_hour_slope),
            ("saturday_discount", c.saturday_discount),
            ("sunday_discount", c.sunday_discount),
            ("per_rain_mm", c.per_rain_mm),
            ("per_snow_cm", c.per_snow_cm),
            ("per_ground_cm", c.per_ground_cm),
            ("per_cold_degree", c.per_cold_degree),
            ("noise_sigma", c.noise_sigma),
            ("noise_scale", c.noise_scale),
        ] {
            kv(k, v.to_string());
        }
        s
    }

    pub fn digest(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug)]
struct Depot {
    id: DepotId,
    location: LatLon,
    base_h: f64,
    /// exp(−distance to downtown / 15 km)
    urban: f64,
    hour_sensitivity: f64,
}

#[derive(Clone, Debug)]
struct World {
    depots: Vec<Depot>,
    /// (depot index, location)
    points: Vec<(usize, LatLon)>,
    days: Vec<(NaiveDate, Weather)>,
    day_weights: WeightedIndex<f64>,
}

fn uniform_in(bbox: &BoundingBox, rng: &mut impl Rng) -> LatLon {
    LatLon {
        lat: rng.random_range(bbox.lat.min..=bbox.lat.max),
        lon: rng.random_range(bbox.lon.min..=bbox.lon.max),
    }
}

fn day_weight(date: NaiveDate) -> f64 {
    match date.weekday().num_days_from_monday() {
        5 => 0.5,
        6 => 0.2,
        _ => 1.0,
    }
}

/// Seasonal daily weather from early January into late June.
fn simulate_weather(days: usize, rng: &mut impl Rng) -> Vec<Weather> {
    let mut ground = 10.0f64;
    let temp_noise = Normal::new(0.0, 4.0).expect("valid sd");
    let rain_amount = Exp::new(1.0 / 5.0).expect("valid rate");
    let snow_amount = Exp::new(1.0 / 2.5).expect("valid rate");
    (0..days)
        .map(|d| {
            let season = (1.0 - (std::f64::consts::PI * d as f64 / days.max(1) as f64).cos()) / 2.0;
            let temp_c: f64 = -6.0 + 27.0 * season + temp_noise.sample(rng);
            let wet = rng.random::<f64>() < 0.35;
            let rain_mm = if wet && temp_c > 0.0 { f64::min(rain_amount.sample(rng), 45.0) } else { 0.0 };
            let snow_precip_cm = if wet && temp_c < 2.0 { f64::min(snow_amount.sample(rng), 18.0) } else { 0.0 };
            ground = (ground * 0.9 + snow_precip_cm - temp_c.max(0.0) * 0.5).clamp(0.0, 45.0);
            Weather { temp_c, rain_mm, snow_precip_cm, snow_ground_cm: ground }
        })
        .collect()
}

fn offset_point(centre: LatLon, sd_km: f64, bbox: &BoundingBox, rng: &mut impl Rng) -> LatLon {
    const KM_PER_DEG: f64 = 111.194_926_644_558_73;
    for _ in 0..1000 {
        let dn: f64 = rng.sample::<f64, _>(StandardNormal) * sd_km;
        let de: f64 = rng.sample::<f64, _>(StandardNormal) * sd_km;
        let p = LatLon {
            lat: centre.lat + dn / KM_PER_DEG,
            lon: centre.lon + de / (KM_PER_DEG * centre.lat.to_radians().cos()),
        };
        if bbox.contains(p) {
            return p;
        }
    }
    centre
}

fn build_world(cfg: &SyntheticConfig) -> Result<World> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = &cfg.coefficients;
    let base = Normal::new(c.depot_base_mean, c.depot_base_sd.max(1e-12)).expect("valid sd");
    let mut depots: Vec<Depot> = (0..cfg.n_depots)
        .map(|i| {
            let location = uniform_in(&cfg.bbox, &mut rng);
            Depot {
                id: DepotId(i as u32 + 1),
                location,
                base_h: base.sample(&mut rng),
                urban: (-haversine_km(location, DOWNTOWN) / 15.0).exp(),
                hour_sensitivity: rng.random_range(-1.0..=1.0),
            }
        })
        .collect();
    // Zipf-like popularity over a random depot order.
    let mut order: Vec<usize> = (0..cfg.n_depots).collect();
    order.shuffle(&mut rng);
    let mut popularity = vec![0.0; cfg.n_depots];
    for (rank, &d) in order.iter().enumerate() {
        popularity[d] = 1.0 / (rank as f64 + 1.0).powf(0.7);
    }
    let pick_depot = WeightedIndex::new(&popularity).map_err(|e| Error::Config(e.to_string()))?;
    let points: Vec<(usize, LatLon)> = (0..cfg.n_delivery_points)
        .map(|_| {
            let d = pick_depot.sample(&mut rng);
            (d, offset_point(depots[d].location, cfg.cluster_sd_km, &cfg.bbox, &mut rng))
        })
        .collect();
    // Centre the traffic-weighted base offset so a few busy depots cannot
    // drag the overall mean away from the calibration target.
    let weighted_base = points.iter().map(|&(d, _)| depots[d].base_h).sum::<f64>() / points.len() as f64;
    for d in &mut depots {
        d.base_h = (d.base_h + c.depot_base_mean - weighted_base).max(0.2);
    }
    let n_days = cfg.weeks as usize * 7;
    let weather = simulate_weather(n_days, &mut rng);
    let days: Vec<(NaiveDate, Weather)> = weather
        .into_iter()
        .enumerate()
        .map(|(i, w)| (cfg.start_date + Duration::days(i as i64), w))
        .collect();
    let day_weights =
        WeightedIndex::new(days.iter().map(|(d, _)| day_weight(*d))).map_err(|e| Error::Config(e.to_string()))?;
    Ok(World { depots, points, days, day_weights })
}

/// Departure hour as a fraction of the day, N(9, 1.3) truncated to [5, 15).
fn sample_ofd_hour(rng: &mut impl Rng) -> f64 {
    let dist = Normal::new(9.0, 1.3).expect("valid sd");
    loop {
        let h = dist.sample(rng);
        if (5.0..15.0).contains(&h) {
            return h;
        }
    }
}

/// Mean-zero lognormal noise.
fn noise(c: &GeneratorCoefficients, rng: &mut impl Rng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    c.noise_scale * ((c.noise_sigma * z).exp() - (c.noise_sigma * c.noise_sigma / 2.0).exp())
}

/// Expected duration before noise.
fn systematic_hours(c: &GeneratorCoefficients, depot: &Depot, dist_km: f64, hour: f64, dow: u32, w: &Weather) -> f64 {
    let weekend = dow >= 5;
    let rush = c.rush * (-(hour - 8.0).powi(2) / (2.0 * 1.5f64.powi(2))).exp();
    let traffic = if weekend { 0.5 * rush } else { rush } - c.late_slope * (hour - 11.0).max(0.0);
    let discount = match dow {
        5 => c.saturday_discount,
        6 => c.sunday_discount,
        _ => 0.0,
    };
    let weather = c.per_rain_mm * w.rain_mm
        + c.per_snow_cm * w.snow_precip_cm
        + c.per_ground_cm * w.snow_ground_cm
        + c.per_cold_degree * (-w.temp_c).max(0.0);
    depot.base_h
        + c.per_km * (1.0 + c.urban_boost * depot.urban) * dist_km
        + traffic
        + c.depot_hour_slope * depot.hour_sensitivity * (hour - 9.0) / 3.0
        - discount
        + weather
}

struct Shard {
    records: Vec<DeliveryRecord>,
    nonpositive: usize,
}

fn generate_shard(cfg: &SyntheticConfig, world: &World, shard: usize, count: usize) -> Shard {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(shard as u64 + 1);
    let c = &cfg.coefficients;
    let mut records = Vec::with_capacity(count);
    let mut nonpositive = 0;
    for _ in 0..count {
        let (d, dest) = world.points[rng.random_range(0..world.points.len())];
        let depot = &world.depots[d];
        let (date, weather) = world.days[world.day_weights.sample(&mut rng)];
        let hour = sample_ofd_hour(&mut rng);
        let secs = (hour * 3600.0).floor() as i64;
        let ofd_time = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight")) + Duration::seconds(secs);
        let dow = date.weekday().num_days_from_monday();
        let dist = haversine_km(depot.location, dest);
        let raw = systematic_hours(c, depot, dist, hour, dow, &weather) + noise(c, &mut rng);
        if raw <= 0.0 {
            nonpositive += 1;
        }
        let hours = if raw.is_finite() { raw.clamp(MIN_DURATION_H, MAX_DURATION_H) } else { MAX_DURATION_H };
        let delivered_time = ofd_time + Duration::seconds((hours * 3600.0).round() as i64);
        records.push(DeliveryRecord {
            depot: depot.id,
            origin: depot.location,
            destination: dest,
            ofd_time,
            delivered_time,
            weather,
        });
    }
    Shard { records, nonpositive }
}

/// Draws a synthetic dataset; identical configs give identical records.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let provenance = Some(Provenance { seed: cfg.seed, digest: cfg.digest() });
    if cfg.n_samples == 0 {
        return Ok(Dataset { records: vec![], provenance });
    }
    let world = build_world(cfg)?;
    let shards: Vec<(usize, usize)> = (0..cfg.n_samples.div_ceil(SHARD_SIZE))
        .map(|s| (s, SHARD_SIZE.min(cfg.n_samples - s * SHARD_SIZE)))
        .collect();
    let threads = crate::tensor::worker_threads().min(shards.len());
    let results: Vec<Shard> = if threads <= 1 {
        shards.iter().map(|&(s, n)| generate_shard(cfg, &world, s, n)).collect()
    } else {
        let per = shards.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = shards
                .chunks(per)
                .map(|group| {
                    let world = &world;
                    scope.spawn(move || {
                        group.iter().map(|&(s, n)| generate_shard(cfg, world, s, n)).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("generator thread")).collect()
        })
    };
    let nonpositive: usize = results.iter().map(|s| s.nonpositive).sum();
    // Small samples are too noisy to judge; a handful of clamped draws is expected.
    if nonpositive > CALIBRATION_MIN_FAILURES && nonpositive * 10 > cfg.n_samples {
        return Err(Error::Calibration(format!(
            "{nonpositive} of {} draws were nonpositive before clamping",
            cfg.n_samples
        )));
    }
    Ok(Dataset { records: results.into_iter().flat_map(|s| s.records).collect(), provenance })
}

/// Depot locations as they appear in the records (first occurrence wins).
pub fn depot_locations(records: &[DeliveryRecord]) -> BTreeMap<DepotId, LatLon> {
    let mut out = BTreeMap::new();
    for r in records {
        out.entry(r.depot).or_insert(r.origin);
    }
    out
}

fn format_time(t: &DateTime<Utc>) -> String {
    t.format(TIME_FORMAT).to_string()
}

fn parse_time(s: &str, row: usize, col: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Parse { row, msg: format!("{col}: bad timestamp '{s}': {e}") })
}

pub fn write_csv(ds: &Dataset, w: impl std::io::Write) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::io::BufWriter::new(w);
    if let Some(p) = &ds.provenance {
        writeln!(w, "# seed={} digest={}", p.seed, p.digest)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in &ds.records {
        let w = &r.weather;
        out.write_record([
            r.depot.to_string(),
            r.origin.lat.to_string(),
            r.origin.lon.to_string(),
            r.destination.lat.to_string(),
            r.destination.lon.to_string(),
            format_time(&r.ofd_time),
            format_time(&r.delivered_time),
            w.temp_c.to_string(),
            w.rain_mm.to_string(),
            w.snow_precip_cm.to_string(),
            w.snow_ground_cm.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    write_csv(ds, std::fs::File::create(path)?)
}

fn parse_provenance(line: &str) -> Option<Provenance> {
    let rest = line.strip_prefix('#')?.trim();
    let mut seed = None;
    let mut digest = None;
    for part in rest.split_whitespace() {
        match part.split_once('=')? {
            ("seed", v) => seed = v.parse().ok(),
            ("digest", v) => digest = Some(v.to_string()),
            _ => {}
        }
    }
    Some(Provenance { seed: seed?, digest: digest? })
}

pub fn read_csv(text: &str) -> Result<Dataset> {
    let provenance = text.lines().next().and_then(parse_provenance);
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut index = [0usize; CSV_COLUMNS.len()];
    for (slot, name) in index.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { row: 1, msg: format!("missing column '{name}'") })?;
    }
    for h in headers.iter().filter(|h| !CSV_COLUMNS.contains(h)) {
        log::warn!("ignoring unknown column '{h}'");
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i + 2, |p| p.line() as usize);
        let field = |k: usize| row.get(index[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            let v: f64 = field(k).parse().map_err(|_| Error::Parse {
                row: line,
                msg: format!("{}: bad number '{}'", CSV_COLUMNS[k], field(k)),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: line, msg: format!("{} is not finite", CSV_COLUMNS[k]) });
            }
            Ok(v)
        };
        let depot = field(0)
            .parse::<u32>()
            .map(DepotId)
            .map_err(|_| Error::Parse { row: line, msg: format!("depot_id: bad id '{}'", field(0)) })?;
        let point = |lat: usize, lon: usize| -> Result<LatLon> {
            LatLon::new(num(lat)?, num(lon)?).map_err(|e| Error::Parse { row: line, msg: e.to_string() })
        };
        let origin = point(1, 2)?;
        let destination = point(3, 4)?;
        let ofd_time = parse_time(field(5), line, CSV_COLUMNS[5])?;
        let delivered_time = parse_time(field(6), line, CSV_COLUMNS[6])?;
        if delivered_time <= ofd_time {
            return Err(Error::Parse { row: line, msg: "delivered_time must be after ofd_time".into() });
        }
        let weather = Weather {
            temp_c: num(7)?,
            rain_mm: num(8)?,
            snow_precip_cm: num(9)?,
            snow_ground_cm: num(10)?,
        };
        records.push(DeliveryRecord { depot, origin, destination, ofd_time, delivered_time, weather });
    }
    Ok(Dataset { records, provenance })
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    read_csv(&std::fs::read_to_string(path)?)
}

/// Index sets of a train/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded uniform permutation; the first `floor(fraction·n)` indices train.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if n == 0 {
        return Err(Error::contract("cannot split an empty dataset"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::contract(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * n as f64 + 1e-9).floor() as usize;
    let test = idx.split_off(n_train);
    Ok(Split { train: idx, test })
}

/// Sample mean, median and unbiased variance.
pub fn summary_stats(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0 };
    (mean, median, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig { n_samples: n, seed, ..SyntheticConfig::default() }
    }

    fn to_string(ds: &Dataset) -> String {
        let mut buf = Vec::new();
        write_csv(ds, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_config_gives_header_only() {
        let ds = generate_synthetic(&small(0, 1)).unwrap();
        assert!(ds.is_empty());
        let text = to_string(&ds);
        assert!(text.starts_with("# seed=1 digest="));
        assert!(text.lines().nth(1).unwrap().starts_with("depot_id,"));
        assert_eq!(read_csv(&text).unwrap(), ds);
    }

    #[test]
    fn deterministic_output() {
        let a = to_string(&generate_synthetic(&small(3000, 5)).unwrap());
        let b = to_string(&generate_synthetic(&small(3000, 5)).unwrap());
        assert_eq!(a, b);
        let c = to_string(&generate_synthetic(&small(3000, 6)).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn round_trip_is_identity() {
        let ds = generate_synthetic(&small(3, 2)).unwrap();
        let back = read_csv(&to_string(&ds)).unwrap();
        assert_eq!(back, ds);
        let big = generate_synthetic(&small(2000, 3)).unwrap();
        assert_eq!(read_csv(&to_string(&big)).unwrap(), big);
    }

    #[test]
    fn generated_records_are_valid() {
        let cfg = small(20_000, 4);
        let ds = generate_synthetic(&cfg).unwrap();
        let depots = depot_locations(&ds.records);
        assert!(depots.len() <= cfg.n_depots);
        for r in &ds.records {
            let d = r.duration_h();
            assert!(d > 0.0 && d.is_finite() && d <= MAX_DURATION_H);
            assert!(cfg.bbox.contains(r.origin) && cfg.bbox.contains(r.destination));
            assert!((1..=cfg.n_depots as u32).contains(&r.depot.0));
        }
        let mean = |f: &dyn Fn(u32) -> bool| {
            let v: Vec<f64> = ds.records.iter().filter(|r| f(r.dow())).map(|r| r.duration_h()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(&|d| d >= 5) < mean(&|d| d < 5));
    }

    #[test]
    fn bad_rows_name_their_line() {
        let header = CSV_COLUMNS.join(",");
        let good = "3,43.7,-79.4,43.71,-79.41,2017-01-03T09:00:00Z,2017-01-03T11:30:00Z,1,0,0,5";
        let bad = "3,43.7,-79.4,43.71,-79.41,2017-01-03T09:00:00Z,2017-01-03T09:00:00Z,1,0,0,5";
        let text = format!("{header}\n{good}\n{bad}\n");
        match read_csv(&text) {
            Err(Error::Parse { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("delivered_time"));
            }
            other => panic!("{other:?}"),
        }
        let text = format!("{header}\n3,43.7,-79.4,43.71,-79.41,yesterday,2017-01-03T11:30:00Z,1,0,0,5\n");
        assert!(matches!(read_csv(&text), Err(Error::Parse { row: 2, .. })));
        let missing = header.replace(",rain_mm", "");
        assert!(matches!(read_csv(&format!("{missing}\n")), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn extra_column_is_ignored() {
        let header = format!("{},comment", CSV_COLUMNS.join(","));
        let row = "3,43.7,-79.4,43.71,-79.41,2017-01-03T09:00:00Z,2017-01-03T11:30:00Z,1,0,0,5,hello";
        let ds = read_csv(&format!("{header}\n{row}\n")).unwrap();
        assert_eq!(ds.len(), 1);
        assert!((ds.records[0].duration_h() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn split_examples() {
        let s = split(10, 0.7, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        assert_eq!(split(10, 0.7, 1).unwrap(), s);
        let s = split(101, 0.5, 2).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (50, 51));
        assert!(split(0, 0.7, 1).is_err());
        assert!(split(5, 1.0, 1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_is_disjoint_cover(n in 1usize..500, f in 0.01f64..0.99, seed: u64) {
            let s = split(n, f, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            proptest::prop_assert_eq!(s.train.len(), (f * n as f64 + 1e-9).floor() as usize);
        }
    }

    #[test]
    fn standard_error_halves_when_n_quadruples() {
        // Records are iid given the world, so chunk means spread like 1/sqrt(n).
        let d = generate_synthetic(&small(96_000, 11)).unwrap().durations();
        let spread = |n: usize| {
            let means: Vec<f64> = d.chunks_exact(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
            summary_stats(&means).2.sqrt()
        };
        let ratio = spread(1000) / spread(4000);
        assert!(ratio > 1.5 && ratio < 2.6, "ratio {ratio}");
    }

    #[test]
    fn default_calibration_hits_targets() {
        for seed in [0, 1] {
            let ds = generate_synthetic(&small(100_000, seed)).unwrap();
            let (mean, median, var) = summary_stats(&ds.durations());
            assert!((mean - 3.19).abs() < 0.15, "mean {mean}");
            assert!((median - 2.96).abs() < 0.15, "median {median}");
            assert!((var - 2.88).abs() < 0.30, "variance {var}");
        }
    }

    #[test]
    fn infeasible_coefficients_are_rejected() {
        let mut cfg = small(5000, 1);
        cfg.coefficients.depot_base_mean = -3.0;
        cfg.coefficients.depot_base_sd = 0.0;
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Calibration(_))));
    }
}
