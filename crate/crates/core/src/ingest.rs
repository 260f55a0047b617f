//! Station ingestion: averaging, neighbour-median imputation, min-max
//! scaling, inverse-distance interpolation and max-fusion with an auxiliary
//! AQI grid. Also hosts the seeded synthetic-city generator used in place of
//! real monitoring data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::booth::haversine_km;
use crate::error::{Error, Result};
use crate::grid::{cell_to_geo, Channel, GeoPoint, GridSpec, ScalarField};

/// Distances below this (in cell units) snap IDW to the station value.
pub const IDW_SNAP_EPS: f64 = 1e-9;

/// AQI at or above this marks a hotspot.
pub const HOTSPOT_AQI: f64 = 400.0;

/// Neighbour search radius for filling missing station readings.
pub const DEFAULT_IMPUTE_RADIUS_KM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub hour: i64,
    pub aqi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationRecord {
    pub id: String,
    pub location: GeoPoint,
    pub readings: Vec<Reading>,
}

impl StationRecord {
    fn value_at(&self, hour: i64) -> Option<f64> {
        self.readings.iter().find(|r| r.hour == hour).and_then(|r| r.aqi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Population,
    Traffic,
    Industrial,
    Green,
}

impl SiteKind {
    pub const ALL: [SiteKind; 4] = [SiteKind::Population, SiteKind::Traffic, SiteKind::Industrial, SiteKind::Green];

    pub fn channel(self) -> Channel {
        match self {
            SiteKind::Population => Channel::Population,
            SiteKind::Traffic => Channel::Traffic,
            SiteKind::Industrial => Channel::Industrial,
            SiteKind::Green => Channel::Green,
        }
    }

    pub fn name(self) -> &'static str {
        self.channel().name()
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A point feature (dense neighbourhood, junction, industrial estate, park)
/// that contributes to one influence channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSite {
    pub kind: SiteKind,
    pub location: GeoPoint,
    pub magnitude: f64,
    pub radius_cells: f64,
}

impl FeatureSite {
    pub fn new(kind: SiteKind, location: GeoPoint, magnitude: f64, radius_cells: f64) -> Result<Self> {
        if !(magnitude.is_finite() && magnitude >= 0.0) {
            return Err(Error::InvalidParameter(format!("site magnitude must be finite and >= 0, got {magnitude}")));
        }
        if !(radius_cells > 0.0 && radius_cells.is_finite()) {
            return Err(Error::InvalidParameter(format!("site radius must be > 0, got {radius_cells}")));
        }
        Ok(Self {
            kind,
            location,
            magnitude,
            radius_cells,
        })
    }
}

pub fn average_station_aqi(rec: &StationRecord) -> Result<f64> {
    let present: Vec<f64> = rec.readings.iter().filter_map(|r| r.aqi).collect();
    if present.is_empty() {
        return Err(Error::NoData(format!("station {} has no readings", rec.id)));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Median with the even-count case resolved as the midpoint of the two
/// middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

/// Fills each missing reading with the median of same-hour readings from the
/// other stations within `radius_km`. Only originally present readings are
/// used as neighbours.
pub fn impute_missing(records: &[StationRecord], radius_km: f64) -> Result<Vec<StationRecord>> {
    let mut out = records.to_vec();
    for (i, rec) in records.iter().enumerate() {
        for (j, reading) in rec.readings.iter().enumerate() {
            if reading.aqi.is_some() {
                continue;
            }
            let neighbours: Vec<f64> = records
                .iter()
                .enumerate()
                .filter(|&(k, other)| k != i && haversine_km(rec.location, other.location) <= radius_km)
                .filter_map(|(_, other)| other.value_at(reading.hour))
                .collect();
            let value = median(&neighbours).ok_or_else(|| Error::UnimputableGap {
                station: rec.id.clone(),
                hour: reading.hour,
                radius_km,
            })?;
            out[i].readings[j].aqi = Some(value);
        }
    }
    Ok(out)
}

/// Rescales to [0, 1]. A constant input maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::NoData("cannot normalize an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("min-max normalization input".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| ((v - min) / range).clamp(0.0, 1.0)).collect())
}

/// Inverse-distance-squared interpolation of station values onto the grid.
/// Distances are measured in cell units between cell centres and the
/// stations' fractional cell positions.
pub fn idw_interpolate(stations: &[(GeoPoint, f64)], spec: &GridSpec) -> Result<ScalarField> {
    if stations.is_empty() {
        return Err(Error::NoData("IDW needs at least one station".into()));
    }
    let coords: Vec<(f64, f64, f64)> = stations
        .iter()
        .map(|&(p, v)| {
            let (fx, fy) = spec.cell_coords(p);
            (fx, fy, v)
        })
        .collect();
    let (lo, hi) = coords
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.2), hi.max(c.2)));
    ScalarField::from_fn(*spec, Channel::Aqi, |cell| {
        let (cx, cy) = (cell.x as f64, cell.y as f64);
        let mut num = 0.0;
        let mut den = 0.0;
        for &(sx, sy, v) in &coords {
            let d2 = (cx - sx).powi(2) + (cy - sy).powi(2);
            if d2.sqrt() < IDW_SNAP_EPS {
                return v;
            }
            num += v / d2;
            den += 1.0 / d2;
        }
        // rounding can push a weighted mean a hair outside the sample range
        (num / den).clamp(lo, hi)
    })
}

/// Elementwise maximum of two AQI fields.
pub fn fuse_max(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    a.ensure_same_spec(b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x.max(*y)).collect();
    a.with_values(values)
}

/// Full station pipeline: impute, average, interpolate, fuse.
pub fn build_aqi_field(
    stations: &[StationRecord],
    auxiliary: &ScalarField,
    spec: &GridSpec,
    impute_radius_km: f64,
) -> Result<ScalarField> {
    let imputed = impute_missing(stations, impute_radius_km)?;
    let points = imputed
        .iter()
        .map(|s| Ok((s.location, average_station_aqi(s)?)))
        .collect::<Result<Vec<_>>>()?;
    let interpolated = idw_interpolate(&points, spec)?;
    fuse_max(&interpolated, auxiliary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCityConfig {
    pub seed: u64,
    pub n_stations: usize,
    pub n_pop_sites: usize,
    pub n_traffic_sites: usize,
    pub n_industrial_sites: usize,
    pub n_green_sites: usize,
    /// 0 disables the hotspot; otherwise the hotspot peak is
    /// `400 + 100 * min(intensity, 1)`.
    pub hotspot_intensity: f64,
    pub hours: usize,
    /// Chance that a reading of a paired station is blanked.
    pub missing_fraction: f64,
}

impl Default for SyntheticCityConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_stations: 12,
            n_pop_sites: 8,
            n_traffic_sites: 6,
            n_industrial_sites: 4,
            n_green_sites: 4,
            hotspot_intensity: 0.5,
            hours: 24,
            missing_fraction: 0.05,
        }
    }
}

impl SyntheticCityConfig {
    pub fn validated(self) -> Result<Self> {
        let counts = [
            self.n_stations,
            self.n_pop_sites,
            self.n_traffic_sites,
            self.n_industrial_sites,
            self.n_green_sites,
            self.hours,
        ];
        if counts.contains(&0) {
            return Err(Error::InvalidParameter("synthetic city counts must all be >= 1".into()));
        }
        if !(self.hotspot_intensity >= 0.0 && self.hotspot_intensity.is_finite()) {
            return Err(Error::InvalidParameter("hotspot_intensity must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::InvalidParameter("missing_fraction must lie in [0, 1)".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub stations: Vec<StationRecord>,
    pub sites: Vec<FeatureSite>,
    pub auxiliary: ScalarField,
}

/// Upper bound of the background pollution level; the hotspot is the only
/// thing that can exceed it.
const BACKGROUND_CAP: f64 = 300.0;

/// Generates a reproducible city: feature sites on cell centres, a smooth
/// background AQI field raised around industrial and traffic sites, an
/// optional hotspot, and hourly station readings with some gaps.
///
/// Stations come in pairs less than 2.5 km apart and only the second of a
/// pair ever has missing readings, so gaps are always imputable with the
/// default 5 km radius.
pub fn generate_synthetic_city(cfg: &SyntheticCityConfig, spec: &GridSpec) -> Result<SyntheticCity> {
    let cfg = cfg.clone().validated()?;
    let spec = spec.validated()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cell_km = spec.mean_cell_km();

    let kinds = [
        (SiteKind::Population, cfg.n_pop_sites, (2_000.0, 30_000.0)),
        (SiteKind::Traffic, cfg.n_traffic_sites, (5_000.0, 100_000.0)),
        (SiteKind::Industrial, cfg.n_industrial_sites, (5.0, 200.0)),
        (SiteKind::Green, cfg.n_green_sites, (2.0, 100.0)),
    ];
    let mut sites = Vec::new();
    for (kind, count, (lo, hi)) in kinds {
        for _ in 0..count {
            let cell = crate::grid::CellIndex::new(rng.gen_range(0..spec.height), rng.gen_range(0..spec.width));
            let magnitude = rng.gen_range(lo..hi);
            let radius_km = rng.gen_range(2.0..6.0);
            sites.push(FeatureSite::new(kind, cell_to_geo(&spec, cell)?, magnitude, radius_km / cell_km)?);
        }
    }

    let base = rng.gen_range(120.0..180.0);
    let (gx, gy) = (rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0));
    let bumps: Vec<(f64, f64, f64, f64)> = sites
        .iter()
        .filter(|s| matches!(s.kind, SiteKind::Industrial | SiteKind::Traffic))
        .map(|s| {
            let (fx, fy) = spec.cell_coords(s.location);
            let amplitude = rng.gen_range(40.0..90.0);
            let sigma = rng.gen_range(2.0..4.0) / cell_km;
            (fx, fy, amplitude, sigma)
        })
        .collect();
    let background = |fx: f64, fy: f64| -> f64 {
        let u = fx / (spec.height - 1) as f64 - 0.5;
        let v = fy / (spec.width - 1) as f64 - 0.5;
        let mut level = base + gx * u + gy * v;
        for &(bx, by, a, s) in &bumps {
            let d2 = (fx - bx).powi(2) + (fy - by).powi(2);
            level += a * (-d2 / (2.0 * s * s)).exp();
        }
        level.clamp(0.0, BACKGROUND_CAP)
    };

    let hotspot = if cfg.hotspot_intensity > 0.0 {
        let anchor = sites
            .iter()
            .find(|s| s.kind == SiteKind::Industrial)
            .expect("at least one industrial site");
        let (hx, hy) = spec.cell_coords(anchor.location);
        let peak = HOTSPOT_AQI + 100.0 * cfg.hotspot_intensity.min(1.0);
        Some((hx, hy, peak, 2.0 / cell_km))
    } else {
        None
    };
    let auxiliary = ScalarField::from_fn(spec, Channel::Aqi, |cell| {
        let (fx, fy) = (cell.x as f64, cell.y as f64);
        let mut v = background(fx, fy);
        if let Some((hx, hy, peak, s)) = hotspot {
            let d2 = (fx - hx).powi(2) + (fy - hy).powi(2);
            v = v.max(peak * (-d2 / (2.0 * s * s)).exp());
        }
        v.clamp(0.0, crate::AQI_MAX)
    })?;

    let mut stations = Vec::with_capacity(cfg.n_stations);
    let mut anchor = GeoPoint {
        lat: spec.lat_min,
        lon: spec.lon_min,
    };
    for i in 0..cfg.n_stations {
        let paired = i % 2 == 1;
        let location = if paired {
            // within ~2.2 km of the previous station, clamped to the box
            let dlat = rng.gen_range(-0.015..0.015);
            let dlon = rng.gen_range(-0.015..0.015);
            GeoPoint {
                lat: (anchor.lat + dlat).clamp(spec.lat_min, spec.lat_max),
                lon: (anchor.lon + dlon).clamp(spec.lon_min, spec.lon_max),
            }
        } else {
            GeoPoint {
                lat: rng.gen_range(spec.lat_min..=spec.lat_max),
                lon: rng.gen_range(spec.lon_min..=spec.lon_max),
            }
        };
        if !paired {
            anchor = location;
        }
        let (fx, fy) = spec.cell_coords(location);
        let level = background(fx, fy);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let readings = (0..cfg.hours as i64)
            .map(|hour| {
                let diurnal = 1.0 + 0.15 * (std::f64::consts::TAU * hour as f64 / 24.0 + phase).sin();
                let noise = rng.gen_range(-15.0..15.0);
                let value = (level * diurnal + noise).clamp(0.0, crate::AQI_MAX);
                let missing = paired && rng.gen_bool(cfg.missing_fraction);
                Reading {
                    hour,
                    aqi: (!missing).then_some(value),
                }
            })
            .collect();
        stations.push(StationRecord {
            id: format!("S{:03}", i + 1),
            location,
            readings,
        });
    }

    Ok(SyntheticCity {
        stations,
        sites,
        auxiliary,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct StationRow {
    station_id: String,
    lat: f64,
    lon: f64,
    hour: i64,
    aqi: Option<f64>,
}

pub fn write_stations<W: Write>(stations: &[StationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in stations {
        for r in &s.readings {
            w.serialize(StationRow {
                station_id: s.id.clone(),
                lat: s.location.lat,
                lon: s.location.lon,
                hour: r.hour,
                aqi: r.aqi,
            })
            .map_err(|e| Error::Config(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io("stations.csv", e))?;
    Ok(())
}

/// Reads `station_id,lat,lon,hour,aqi`; an empty `aqi` is a missing reading.
/// Stations keep first-appearance order.
pub fn read_stations<R: Read>(input: R, path: &Path) -> Result<Vec<StationRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, StationRecord> = BTreeMap::new();
    for row in rdr.deserialize::<StationRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if let Some(v) = row.aqi {
            if !(0.0..=crate::AQI_MAX).contains(&v) {
                return Err(Error::ChannelRange {
                    channel: "aqi",
                    index: row.hour.max(0) as usize,
                    value: v,
                });
            }
        }
        let location = GeoPoint::new(row.lat, row.lon)?;
        let entry = by_id.entry(row.station_id.clone()).or_insert_with(|| {
            order.push(row.station_id.clone());
            StationRecord {
                id: row.station_id.clone(),
                location,
                readings: Vec::new(),
            }
        });
        entry.readings.push(Reading {
            hour: row.hour,
            aqi: row.aqi,
        });
    }
    Ok(order.into_iter().map(|id| by_id.remove(&id).expect("id recorded")).collect())
}

#[derive(Serialize, Deserialize)]
struct SiteRow {
    kind: String,
    lat: f64,
    lon: f64,
    magnitude: f64,
    radius_cells: f64,
}

pub fn write_sites<W: Write>(sites: &[FeatureSite], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in sites {
        w.serialize(SiteRow {
            kind: s.kind.name().to_string(),
            lat: s.location.lat,
            lon: s.location.lon,
            magnitude: s.magnitude,
            radius_cells: s.radius_cells,
        })
        .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("sites.csv", e))?;
    Ok(())
}

pub fn read_sites<R: Read>(input: R, path: &Path) -> Result<Vec<FeatureSite>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut sites = Vec::new();
    for (i, row) in rdr.deserialize::<SiteRow>().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        let kind = SiteKind::from_name(&row.kind).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("unknown site kind `{}`", row.kind),
        })?;
        let site = GeoPoint::new(row.lat, row.lon)
            .and_then(|p| FeatureSite::new(kind, p, row.magnitude, row.radius_cells))
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        sites.push(site);
    }
    Ok(sites)
}
