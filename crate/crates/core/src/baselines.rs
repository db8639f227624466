//! Route-free neighbor baseline: a trip is predicted by the mean duration of
//! training trips whose origin and destination both lie within a radius of its
//! own, with radius doubling when too few neighbors are found.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::architectures::ModelSpec;
use crate::error::{Error, Result};
use crate::features::{haversine_km, DeliveryRecord, LatLon, EARTH_RADIUS_KM};
use crate::tensor::worker_threads;

pub const DEFAULT_CELL_DEG: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct SbtteParams {
    pub radius_origin_km: f64,
    pub radius_dest_km: f64,
    pub min_neighbors: usize,
    /// Radius multiplier applied at each expansion.
    pub growth: f64,
    pub max_expansions: u32,
    /// Restrict neighbors to the same day class and an hour within ±1.
    pub temporal_filter: bool,
}

impl Default for SbtteParams {
    fn default() -> Self {
        SbtteParams {
            radius_origin_km: 0.5,
            radius_dest_km: 1.0,
            min_neighbors: 5,
            growth: 2.0,
            max_expansions: 4,
            temporal_filter: false,
        }
    }
}

impl SbtteParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_origin_km > 0.0 && self.radius_dest_km > 0.0) {
            return Err(Error::Config("neighbor radii must be positive".into()));
        }
        if !self.radius_origin_km.is_finite() || !self.radius_dest_km.is_finite() {
            return Err(Error::Config("neighbor radii must be finite".into()));
        }
        if self.min_neighbors == 0 {
            return Err(Error::Config("min_neighbors must be >= 1".into()));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(Error::Config(format!("radius growth {} must be >= 1", self.growth)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "radius_origin_km={}\nradius_dest_km={}\nmin_neighbors={}\ngrowth={}\nmax_expansions={}\ntemporal_filter={}\n",
            self.radius_origin_km,
            self.radius_dest_km,
            self.min_neighbors,
            self.growth,
            self.max_expansions,
            self.temporal_filter
        )
    }
}

/// Weekday, Saturday or Sunday.
fn day_class(dow: u32) -> u8 {
    match dow {
        5 => 1,
        6 => 2,
        _ => 0,
    }
}

/// The part of a training trip the baseline looks at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripEntry {
    /// Position in the training set.
    pub record: usize,
    pub origin: LatLon,
    pub destination: LatLon,
    pub duration_h: f64,
    pub hour: u32,
    pub dow: u32,
}

impl TripEntry {
    fn from_record(record: usize, r: &DeliveryRecord) -> Self {
        TripEntry {
            record,
            origin: r.origin,
            destination: r.destination,
            duration_h: r.duration_h(),
            hour: r.hour(),
            dow: r.dow(),
        }
    }

    fn is_neighbor(&self, query: &TripEntry, r_o: f64, r_d: f64, temporal: bool) -> bool {
        haversine_km(self.origin, query.origin) <= r_o
            && haversine_km(self.destination, query.destination) <= r_d
            && (!temporal || (day_class(self.dow) == day_class(query.dow) && self.hour.abs_diff(query.hour) <= 1))
    }
}

type Cell = (i64, i64);

/// Training trips bucketed by (origin cell, destination cell).
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    cell_deg: f64,
    /// origin cell → destination cell → entries in training order.
    buckets: HashMap<Cell, HashMap<Cell, Vec<TripEntry>>>,
    len: usize,
    global_mean: f64,
}

/// Sum of values in ascending order, so the result does not depend on the
/// order the neighbors were found in.
fn ordered_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Inclusive cell range that covers every point within `radius_km` of `p`.
fn cell_span(p: LatLon, radius_km: f64, cell_deg: f64) -> (Cell, Cell) {
    let km_per_deg = EARTH_RADIUS_KM * PI / 180.0;
    // Slightly inflated so rounding can only add candidates.
    let dlat = radius_km / km_per_deg * 1.001 + 1e-9;
    let lat_hi = (p.lat.abs() + dlat).min(89.999);
    let ratio = ((radius_km / (2.0 * EARTH_RADIUS_KM)).sin() / lat_hi.to_radians().cos()).min(1.0);
    let dlon = (2.0 * ratio.asin()).to_degrees() * 1.001 + 1e-9;
    let lo = cell_of(LatLon { lat: p.lat - dlat, lon: p.lon - dlon }, cell_deg);
    let hi = cell_of(LatLon { lat: p.lat + dlat, lon: p.lon + dlon }, cell_deg);
    (lo, hi)
}

fn cell_of(p: LatLon, cell_deg: f64) -> Cell {
    ((p.lat / cell_deg).floor() as i64, (p.lon / cell_deg).floor() as i64)
}

fn in_span(c: Cell, (lo, hi): (Cell, Cell)) -> bool {
    (lo.0..=hi.0).contains(&c.0) && (lo.1..=hi.1).contains(&c.1)
}

fn span_cells((lo, hi): (Cell, Cell)) -> u128 {
    (hi.0 - lo.0 + 1) as u128 * (hi.1 - lo.1 + 1) as u128
}

impl NeighborIndex {
    pub fn build(train: &[DeliveryRecord], cell_deg: f64) -> Result<Self> {
        if !(cell_deg > 0.0 && cell_deg.is_finite()) {
            return Err(Error::contract(format!("cell size {cell_deg} must be positive")));
        }
        if train.is_empty() {
            return Err(Error::contract("cannot index an empty training set"));
        }
        let mut buckets: HashMap<Cell, HashMap<Cell, Vec<TripEntry>>> = HashMap::new();
        for (i, r) in train.iter().enumerate() {
            let e = TripEntry::from_record(i, r);
            buckets
                .entry(cell_of(e.origin, cell_deg))
                .or_default()
                .entry(cell_of(e.destination, cell_deg))
                .or_default()
                .push(e);
        }
        let global_mean = ordered_mean(train.iter().map(DeliveryRecord::duration_h).collect());
        Ok(NeighborIndex { cell_deg, buckets, len: train.len(), global_mean })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_deg(&self) -> f64 {
        self.cell_deg
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.values().map(HashMap::len).sum()
    }

    /// Entries sharing the given origin and destination cells.
    pub fn bucket(&self, origin: LatLon, destination: LatLon) -> &[TripEntry] {
        self.buckets
            .get(&cell_of(origin, self.cell_deg))
            .and_then(|m| m.get(&cell_of(destination, self.cell_deg)))
            .map_or(&[], Vec::as_slice)
    }

    /// Every entry in a bucket whose cells may hold trips within the radii.
    /// A superset of the true neighbors.
    pub fn candidates(&self, origin: LatLon, destination: LatLon, r_o: f64, r_d: f64) -> Vec<&TripEntry> {
        let o_span = cell_span(origin, r_o, self.cell_deg);
        let d_span = cell_span(destination, r_d, self.cell_deg);
        let mut origin_maps = Vec::new();
        if span_cells(o_span) < self.buckets.len() as u128 {
            for la in o_span.0 .0..=o_span.1 .0 {
                for lo in o_span.0 .1..=o_span.1 .1 {
                    origin_maps.extend(self.buckets.get(&(la, lo)));
                }
            }
        } else {
            origin_maps.extend(self.buckets.iter().filter(|(oc, _)| in_span(**oc, o_span)).map(|(_, m)| m));
        }
        origin_maps
            .into_iter()
            .flat_map(|m| m.iter())
            .filter(|(dc, _)| in_span(**dc, d_span))
            .flat_map(|(_, entries)| entries.iter())
            .collect()
    }

    /// Trips satisfying the neighbor rule at the given radii.
    pub fn neighbors(&self, query: &DeliveryRecord, r_o: f64, r_d: f64, temporal: bool) -> Vec<&TripEntry> {
        let q = TripEntry::from_record(usize::MAX, query);
        let mut found: Vec<&TripEntry> = self
            .candidates(q.origin, q.destination, r_o, r_d)
            .into_iter()
            .filter(|e| e.is_neighbor(&q, r_o, r_d, temporal))
            .collect();
        found.sort_by_key(|e| e.record);
        found
    }
}

/// Predicted hours for one query.
pub fn sbtte_predict(index: &NeighborIndex, query: &DeliveryRecord, params: &SbtteParams) -> Result<f64> {
    if index.is_empty() {
        return Err(Error::contract("neighbor index is empty"));
    }
    let (mut r_o, mut r_d) = (params.radius_origin_km, params.radius_dest_km);
    for expansion in 0..=params.max_expansions {
        if expansion > 0 {
            r_o *= params.growth;
            r_d *= params.growth;
        }
        let found = index.neighbors(query, r_o, r_d, params.temporal_filter);
        if found.len() >= params.min_neighbors {
            return Ok(ordered_mean(found.iter().map(|e| e.duration_h).collect()));
        }
    }
    Ok(index.global_mean())
}

/// Predictions for many queries; split across `ODTTE_THREADS` workers.
pub fn sbtte_predict_all(index: &NeighborIndex, queries: &[DeliveryRecord], params: &SbtteParams) -> Result<Vec<f64>> {
    params.validate()?;
    let threads = worker_threads().min(queries.len()).max(1);
    if threads == 1 {
        return queries.iter().map(|q| sbtte_predict(index, q, params)).collect();
    }
    let chunk = queries.len().div_ceil(threads);
    let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|qs| s.spawn(move || qs.iter().map(|q| sbtte_predict(index, q, params)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("baseline worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(queries.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// The two MLP benchmarks, trained under the same protocol as the conv nets.
pub fn mlp_benchmarks() -> [(&'static str, ModelSpec); 2] {
    [("mlp-1", ModelSpec::mlp1()), ("mlp-2", ModelSpec::mlp2())]
}
