//! Booth effect model, geodesic distance, and the placement validity rules.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cell_to_geo, CellIndex, EnvState, GeoPoint, GridSpec, ScalarField};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance in km.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoothParams {
    /// Fractional AQI reduction at the booth cell.
    pub alpha: f64,
    /// Spread of the reduction in cell units.
    pub sigma_booth: f64,
}

impl Default for BoothParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            sigma_booth: 2.0,
        }
    }
}

impl BoothParams {
    pub fn validated(self) -> Result<Self> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.sigma_booth > 0.0 && self.sigma_booth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_booth must be positive, got {}",
                self.sigma_booth
            )));
        }
        Ok(self)
    }

    /// Multiplicative factor a booth applies at distance `d` (cell units).
    pub fn factor(&self, d: f64) -> f64 {
        1.0 - self.alpha * (-d * d / (2.0 * self.sigma_booth * self.sigma_booth)).exp()
    }

    /// Radius of the neighbourhood a booth is credited with: 3 sigma.
    pub fn influence_radius(&self) -> f64 {
        3.0 * self.sigma_booth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSet {
    pub d_min_km: f64,
    pub rho_min: f64,
    pub delta_aqi_min: f64,
    pub green_threshold: f64,
    pub max_booths: usize,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            d_min_km: 1.0,
            rho_min: 0.2,
            delta_aqi_min: 10.0,
            green_threshold: 0.5,
            max_booths: 70,
        }
    }
}

impl ConstraintSet {
    pub fn validated(self) -> Result<Self> {
        let thresholds = [self.d_min_km, self.rho_min, self.delta_aqi_min, self.green_threshold];
        if thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::InvalidParameter("constraint thresholds must be >= 0".into()));
        }
        if self.max_booths == 0 {
            return Err(Error::InvalidParameter("max_booths must be at least 1".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Greedy,
    Ppo,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Greedy, Strategy::Ppo];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Greedy => "greedy",
            Strategy::Ppo => "ppo",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}` (expected random, greedy or ppo)")))
    }
}

/// An ordered booth placement plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub strategy: Strategy,
    pub booths: Vec<CellIndex>,
}

#[derive(Serialize, Deserialize)]
struct PlacementFile {
    strategy: Strategy,
    booths: Vec<BoothRecord>,
}

#[derive(Serialize, Deserialize)]
struct BoothRecord {
    x: usize,
    y: usize,
    lat: f64,
    lon: f64,
    step: usize,
}

impl Placement {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            booths: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.booths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.booths.is_empty()
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        self.booths.contains(&cell)
    }

    pub fn to_json(&self, spec: &GridSpec) -> Result<String> {
        let booths = self
            .booths
            .iter()
            .enumerate()
            .map(|(step, &cell)| {
                let p = cell_to_geo(spec, cell)?;
                Ok(BoothRecord {
                    x: cell.x,
                    y: cell.y,
                    lat: p.lat,
                    lon: p.lon,
                    step,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let file = PlacementFile {
            strategy: self.strategy,
            booths,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str, spec: &GridSpec) -> Result<Self> {
        let file: PlacementFile = serde_json::from_str(text)?;
        let mut booths = file.booths;
        booths.sort_by_key(|b| b.step);
        let booths = booths
            .into_iter()
            .map(|b| {
                let cell = CellIndex::new(b.x, b.y);
                spec.check(cell).map(|_| cell)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            strategy: file.strategy,
            booths,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Distance,
    Greenspace,
    MaxBooths,
    Population,
    ImprovementPotential,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 5] = [
        ViolationKind::Distance,
        ViolationKind::Greenspace,
        ViolationKind::MaxBooths,
        ViolationKind::Population,
        ViolationKind::ImprovementPotential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::Distance => "distance",
            ViolationKind::Greenspace => "greenspace",
            ViolationKind::MaxBooths => "max_booths",
            ViolationKind::Population => "population",
            ViolationKind::ImprovementPotential => "improvement_potential",
        }
    }
}

/// A violated constraint together with its penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub kind: ViolationKind,
    pub weight: f64,
    pub flag: bool,
}

impl ConstraintViolation {
    pub fn penalty(&self) -> f64 {
        if self.flag {
            self.weight
        } else {
            0.0
        }
    }
}

/// Multiplies every cell by the booth's reduction factor.
pub fn apply_booth_effect(aqi: &ScalarField, booth: CellIndex, p: &BoothParams) -> Result<ScalarField> {
    let spec = *aqi.spec();
    spec.check(booth)?;
    let values = spec
        .cells()
        .zip(aqi.values())
        .map(|(cell, v)| v * p.factor(crate::grid::euclidean_cells(cell, booth)))
        .collect();
    aqi.with_values(values)
}

/// Applies every booth of a placement in turn.
pub fn apply_all(aqi: &ScalarField, booths: &[CellIndex], p: &BoothParams) -> Result<ScalarField> {
    booths
        .iter()
        .try_fold(aqi.clone(), |field, &b| apply_booth_effect(&field, b, p))
}

/// AQI reduction a booth would achieve at its own cell.
pub fn expected_improvement(aqi: &ScalarField, cell: CellIndex, p: &BoothParams) -> Result<f64> {
    aqi.spec().check(cell)?;
    let v = aqi.get(cell);
    Ok(v - v * p.factor(0.0))
}

/// Checks every placement rule for `cell` and returns all that fail. An
/// occupied cell reports a distance violation.
pub fn is_valid_cell(
    state: &EnvState,
    cell: CellIndex,
    existing: &[CellIndex],
    c: &ConstraintSet,
    p: &BoothParams,
) -> Result<(bool, Vec<ViolationKind>)> {
    let spec = state.spec();
    spec.check(cell)?;
    let mut violations = Vec::new();

    let here = cell_to_geo(spec, cell)?;
    let too_close = existing.iter().any(|&b| {
        b == cell || haversine_km(here, cell_to_geo(spec, b).expect("placed booths lie on the grid")) < c.d_min_km
    });
    if too_close {
        violations.push(ViolationKind::Distance);
    }
    if state.green.get(cell) > c.green_threshold {
        violations.push(ViolationKind::Greenspace);
    }
    if existing.len() >= c.max_booths {
        violations.push(ViolationKind::MaxBooths);
    }
    if state.population.get(cell) <= c.rho_min {
        violations.push(ViolationKind::Population);
    }
    if expected_improvement(&state.aqi, cell, p)? < c.delta_aqi_min {
        violations.push(ViolationKind::ImprovementPotential);
    }
    Ok((violations.is_empty(), violations))
}

/// Per-step audit record of a replayed placement.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub step: usize,
    pub cell: CellIndex,
    pub violations: Vec<ViolationKind>,
}

/// Replays a placement from the base state, checking each booth against the
/// state as it was when that booth was placed.
pub fn audit_placement(
    base: &EnvState,
    booths: &[CellIndex],
    c: &ConstraintSet,
    p: &BoothParams,
) -> Result<Vec<AuditEntry>> {
    let mut state = base.clone();
    let mut entries = Vec::with_capacity(booths.len());
    for (step, &cell) in booths.iter().enumerate() {
        let (_, violations) = is_valid_cell(&state, cell, &booths[..step], c, p)?;
        entries.push(AuditEntry {
            step,
            cell,
            violations,
        });
        state.aqi = apply_booth_effect(&state.aqi, cell, p)?;
    }
    Ok(entries)
}

/// Violation totals per kind; every kind is present, possibly with 0.
pub fn violation_counts(entries: &[AuditEntry]) -> BTreeMap<ViolationKind, usize> {
    let mut counts: BTreeMap<ViolationKind, usize> = ViolationKind::ALL.iter().map(|&k| (k, 0)).collect();
    for kind in entries.iter().flat_map(|e| &e.violations) {
        *counts.entry(*kind).or_default() += 1;
    }
    counts
}
