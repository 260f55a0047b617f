//! Grid geometry, geographic mapping and the per-channel field container.
//!
//! Rows map to latitude and columns to longitude. Cell values are stored in
//! row-major order, so the flat index of `(x, y)` is `y + x * width`.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::booth::haversine_km;
use crate::error::{Error, Result};

/// Geometry of the simulation grid and its geographic bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 50,
            height: 50,
            lat_min: 28.40,
            lat_max: 28.90,
            lon_min: 76.80,
            lon_max: 77.40,
        }
    }
}

impl GridSpec {
    /// Default bounding box with a custom square size.
    pub fn square(size: usize) -> Result<Self> {
        Self {
            width: size,
            height: size,
            ..Self::default()
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.lat_min < self.lat_max) || !(self.lon_min < self.lon_max) {
            return Err(Error::InvalidGrid(format!(
                "bounding box [{}, {}] x [{}, {}] is empty or non-finite",
                self.lat_min, self.lat_max, self.lon_min, self.lon_max
            )));
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lat_step(&self) -> f64 {
        (self.lat_max - self.lat_min) / (self.height - 1) as f64
    }

    pub fn lon_step(&self) -> f64 {
        (self.lon_max - self.lon_min) / (self.width - 1) as f64
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.x < self.height && cell.y < self.width
    }

    pub fn check(&self, cell: CellIndex) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::out_of_bounds(cell, self.height, self.width))
        }
    }

    pub fn flat(&self, cell: CellIndex) -> usize {
        cell.y + cell.x * self.width
    }

    pub fn cell_at(&self, flat: usize) -> CellIndex {
        CellIndex {
            x: flat / self.width,
            y: flat % self.width,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.len()).map(move |i| self.cell_at(i))
    }

    /// Fractional (row, column) coordinates of a point under the inverse of
    /// the linear lat/lon mapping. Points outside the box map outside
    /// `[0, height-1] x [0, width-1]`.
    pub fn cell_coords(&self, p: GeoPoint) -> (f64, f64) {
        (
            (p.lat - self.lat_min) / self.lat_step(),
            (p.lon - self.lon_min) / self.lon_step(),
        )
    }

    /// Approximate physical cell size in km as (north-south, east-west),
    /// measured at the box centre.
    pub fn cell_size_km(&self) -> (f64, f64) {
        let lat_mid = 0.5 * (self.lat_min + self.lat_max);
        let lon_mid = 0.5 * (self.lon_min + self.lon_max);
        let base = GeoPoint {
            lat: lat_mid,
            lon: lon_mid,
        };
        let ns = haversine_km(
            base,
            GeoPoint {
                lat: lat_mid + self.lat_step(),
                lon: lon_mid,
            },
        );
        let ew = haversine_km(
            base,
            GeoPoint {
                lat: lat_mid,
                lon: lon_mid + self.lon_step(),
            },
        );
        (ns, ew)
    }

    /// Mean edge length of a cell in km.
    pub fn mean_cell_km(&self) -> f64 {
        let (ns, ew) = self.cell_size_km();
        0.5 * (ns + ew)
    }
}

/// A grid cell: `x` is the row (latitude), `y` the column (longitude).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub x: usize,
    pub y: usize,
}

impl CellIndex {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidParameter(format!(
                "({lat}, {lon}) is not a valid latitude/longitude"
            )));
        }
        Ok(Self { lat, lon })
    }
}

/// Latitude and longitude of a cell centre.
pub fn cell_to_geo(spec: &GridSpec, cell: CellIndex) -> Result<GeoPoint> {
    spec.check(cell)?;
    Ok(GeoPoint {
        lat: spec.lat_min + cell.x as f64 * spec.lat_step(),
        lon: spec.lon_min + cell.y as f64 * spec.lon_step(),
    })
}

/// Nearest cell to a point inside the bounding box.
pub fn geo_to_cell(spec: &GridSpec, p: GeoPoint) -> Result<CellIndex> {
    let inside = (spec.lat_min..=spec.lat_max).contains(&p.lat)
        && (spec.lon_min..=spec.lon_max).contains(&p.lon);
    if !inside {
        return Err(Error::OutOfDomain {
            lat: p.lat,
            lon: p.lon,
        });
    }
    let (fx, fy) = spec.cell_coords(p);
    Ok(CellIndex {
        x: (fx.round() as usize).min(spec.height - 1),
        y: (fy.round() as usize).min(spec.width - 1),
    })
}

pub fn euclidean_cells(a: CellIndex, b: CellIndex) -> f64 {
    let dx = a.x as f64 - b.x as f64;
    let dy = a.y as f64 - b.y as f64;
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Aqi,
    Population,
    Traffic,
    Industrial,
    Green,
    Booth,
}

impl Channel {
    /// Observation order: the five environmental features, then booths.
    pub const ALL: [Channel; 6] = [
        Channel::Aqi,
        Channel::Population,
        Channel::Traffic,
        Channel::Industrial,
        Channel::Green,
        Channel::Booth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Aqi => "aqi",
            Channel::Population => "population",
            Channel::Traffic => "traffic",
            Channel::Industrial => "industrial",
            Channel::Green => "green",
            Channel::Booth => "booth",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    fn admits(self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match self {
            Channel::Aqi => (0.0..=500.0).contains(&v),
            Channel::Booth => v == 0.0 || v == 1.0,
            _ => (0.0..=1.0).contains(&v),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One channel of values over a grid. Construction validates the channel's
/// value range; the field is immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    channel: Channel,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(spec: GridSpec, channel: Channel, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Shape(format!(
                "{channel} field needs {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !channel.admits(**v)) {
            return Err(Error::ChannelRange {
                channel: channel.name(),
                index,
                value,
            });
        }
        Ok(Self {
            spec,
            channel,
            values,
        })
    }

    pub fn filled(spec: GridSpec, channel: Channel, value: f64) -> Result<Self> {
        Self::new(spec, channel, vec![value; spec.len()])
    }

    pub fn zeros(spec: GridSpec, channel: Channel) -> Self {
        Self {
            spec,
            channel,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn from_fn(spec: GridSpec, channel: Channel, f: impl Fn(CellIndex) -> f64) -> Result<Self> {
        let values = spec.cells().map(f).collect();
        Self::new(spec, channel, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, cell: CellIndex) -> f64 {
        self.values[self.spec.flat(cell)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy of the field with new values, re-validated.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.spec, self.channel, values)
    }

    /// Copy of the field relabelled as another channel.
    pub fn relabel(&self, channel: Channel) -> Result<Self> {
        Self::new(self.spec, channel, self.values.clone())
    }

    pub fn ensure_same_spec(&self, other: &ScalarField) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Shape(format!(
                "{} grid {}x{} does not match {} grid {}x{}",
                self.channel,
                self.spec.height,
                self.spec.width,
                other.channel,
                other.spec.height,
                other.spec.width
            )));
        }
        Ok(())
    }

    /// Writes `channel,width,height` followed by one comma-separated line per
    /// grid row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{},{},{}", self.channel, self.spec.width, self.spec.height)?;
        for row in self.values.chunks(self.spec.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Reads the headered CSV format. The bounding box is not part of the
    /// file, so it comes from `template`; the header's dimensions must match.
    pub fn read_csv<R: BufRead>(input: R, template: &GridSpec, path: &Path) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let parts: Vec<&str> = header.trim().split(',').collect();
        if parts.len() != 3 {
            return Err(parse_err(1, format!("expected `channel,width,height`, got `{header}`")));
        }
        let channel = Channel::from_name(parts[0].trim())
            .ok_or_else(|| parse_err(1, format!("unknown channel `{}`", parts[0])))?;
        let dim = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(1, format!("bad dimension `{s}`: {e}")))
        };
        let (width, height) = (dim(parts[1])?, dim(parts[2])?);
        if width != template.width || height != template.height {
            return Err(parse_err(
                1,
                format!(
                    "field is {height}x{width} but the grid is {}x{}",
                    template.height, template.width
                ),
            ));
        }
        let mut values = Vec::with_capacity(width * height);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let lineno = i as u64 + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| parse_err(lineno, format!("bad value `{s}`: {e}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != width {
                return Err(parse_err(lineno, format!("expected {width} values, got {}", row.len())));
            }
            values.extend(row);
            rows += 1;
        }
        if rows != height {
            return Err(parse_err(rows as u64 + 1, format!("expected {height} rows, got {rows}")));
        }
        Self::new(*template, channel, values)
    }
}

/// The stacked observation: AQI, population, traffic, industrial, green
/// space, and the booth grid, all on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub aqi: ScalarField,
    pub population: ScalarField,
    pub traffic: ScalarField,
    pub industrial: ScalarField,
    pub green: ScalarField,
    pub booth: ScalarField,
}

impl EnvState {
    pub fn new(
        aqi: ScalarField,
        population: ScalarField,
        traffic: ScalarField,
        industrial: ScalarField,
        green: ScalarField,
        booth: ScalarField,
    ) -> Result<Self> {
        let state = Self {
            aqi,
            population,
            traffic,
            industrial,
            green,
            booth,
        };
        for (field, expected) in state.fields().into_iter().zip(Channel::ALL) {
            if field.channel() != expected {
                return Err(Error::Shape(format!(
                    "expected a {expected} field, got {}",
                    field.channel()
                )));
            }
            state.aqi.ensure_same_spec(field)?;
        }
        Ok(state)
    }

    pub fn spec(&self) -> &GridSpec {
        self.aqi.spec()
    }

    pub fn fields(&self) -> [&ScalarField; 6] {
        [
            &self.aqi,
            &self.population,
            &self.traffic,
            &self.industrial,
            &self.green,
            &self.booth,
        ]
    }

    pub fn field(&self, channel: Channel) -> &ScalarField {
        match channel {
            Channel::Aqi => &self.aqi,
            Channel::Population => &self.population,
            Channel::Traffic => &self.traffic,
            Channel::Industrial => &self.industrial,
            Channel::Green => &self.green,
            Channel::Booth => &self.booth,
        }
    }

    /// Channel-major network input with AQI scaled to [0, 1].
    pub fn observation(&self) -> Vec<f64> {
        let n = self.spec().len();
        let mut obs = Vec::with_capacity(6 * n);
        obs.extend(self.aqi.values().iter().map(|v| v / crate::AQI_MAX));
        for field in &self.fields()[1..] {
            obs.extend_from_slice(field.values());
        }
        obs
    }
}
