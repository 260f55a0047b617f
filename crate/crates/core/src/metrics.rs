//! Evaluation of a finished placement against the field it started from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::booth::{
    audit_placement, haversine_km, violation_counts, BoothParams, ConstraintSet, Placement, ViolationKind,
};
use crate::error::{Error, Result};
use crate::grid::{cell_to_geo, euclidean_cells, CellIndex, EnvState, GridSpec, ScalarField};

fn undefined(metric: &'static str, reason: impl Into<String>) -> Error {
    Error::UndefinedMetric {
        metric,
        reason: reason.into(),
    }
}

/// Percentage drop of the summed (equivalently, mean) AQI.
pub fn overall_improvement(initial: &ScalarField, fin: &ScalarField) -> Result<f64> {
    initial.ensure_same_spec(fin)?;
    let total: f64 = initial.values().iter().sum();
    if total == 0.0 {
        return Err(undefined("overall_aqi_improvement_pct", "initial AQI sums to zero"));
    }
    let drop: f64 = initial.values().iter().zip(fin.values()).map(|(a, b)| a - b).sum();
    Ok(drop / total * 100.0)
}

pub fn population_weighted_improvement(
    initial: &ScalarField,
    fin: &ScalarField,
    population: &ScalarField,
) -> Result<f64> {
    initial.ensure_same_spec(fin)?;
    initial.ensure_same_spec(population)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), p) in initial.values().iter().zip(fin.values()).zip(population.values()) {
        num += p * (a - b);
        den += p * a;
    }
    if den == 0.0 {
        return Err(undefined(
            "population_weighted_improvement_pct",
            "population-weighted initial AQI is zero",
        ));
    }
    Ok(num / den * 100.0)
}

/// Share of cells whose AQI dropped by more than `threshold`.
pub fn spatial_coverage(initial: &ScalarField, fin: &ScalarField, threshold: f64) -> Result<f64> {
    initial.ensure_same_spec(fin)?;
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("coverage threshold {threshold} must be >= 0")));
    }
    let hits = initial
        .values()
        .iter()
        .zip(fin.values())
        .filter(|(a, b)| *a - *b > threshold)
        .count();
    Ok(hits as f64 / initial.values().len() as f64 * 100.0)
}

pub fn mean_reduction(initial: &ScalarField, fin: &ScalarField) -> Result<f64> {
    initial.ensure_same_spec(fin)?;
    let drop: f64 = initial.values().iter().zip(fin.values()).map(|(a, b)| a - b).sum();
    Ok(drop / initial.values().len() as f64)
}

pub fn high_impact_count(booths: &[CellIndex], population: &ScalarField, threshold: f64) -> Result<usize> {
    let spec = population.spec();
    let mut n = 0;
    for &b in booths {
        spec.check(b)?;
        if population.get(b) > threshold {
            n += 1;
        }
    }
    Ok(n)
}

/// Share of `sources` strictly closer than `radius` cells to some booth.
pub fn source_coverage(booths: &[CellIndex], sources: &[CellIndex], radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("source radius {radius} must be > 0")));
    }
    if sources.is_empty() {
        return Err(undefined("pollution_source_coverage_pct", "no pollution sources on the grid"));
    }
    let covered = sources
        .iter()
        .filter(|&&s| booths.iter().any(|&b| euclidean_cells(s, b) < radius))
        .count();
    Ok(covered as f64 / sources.len() as f64 * 100.0)
}

/// Cells counted as pollution sources: strong industrial influence or an
/// initial AQI at hotspot level.
pub fn pollution_sources(state: &EnvState, industrial_threshold: f64, aqi_threshold: f64) -> Vec<CellIndex> {
    state
        .spec()
        .cells()
        .filter(|&c| state.industrial.get(c) >= industrial_threshold || state.aqi.get(c) >= aqi_threshold)
        .collect()
}

/// Mean great-circle distance from each booth to its nearest neighbour, in km.
pub fn spacing_efficiency(spec: &GridSpec, booths: &[CellIndex]) -> Result<f64> {
    if booths.len() < 2 {
        return Err(undefined("spacing_efficiency_km", "needs at least two booths"));
    }
    let pts = booths
        .iter()
        .map(|&b| cell_to_geo(spec, b))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (i, &a) in pts.iter().enumerate() {
        let nearest = pts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &b)| haversine_km(a, b))
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    Ok(total / pts.len() as f64)
}

/// Shannon entropy (nats) of the booth count per cell.
pub fn spatial_entropy(spec: &GridSpec, booths: &[CellIndex]) -> Result<f64> {
    if booths.is_empty() {
        return Err(undefined("spatial_entropy_nats", "no booths placed"));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &b in booths {
        spec.check(b)?;
        *counts.entry(spec.flat(b)).or_default() += 1;
    }
    let k = booths.len() as f64;
    let h = -counts
        .values()
        .map(|&n| {
            let p = n as f64 / k;
            p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Mean over booths of `channel` at the booth cell times the fractional AQI
/// drop at that cell. Cells with zero initial AQI contribute zero.
pub fn impact_score(
    booths: &[CellIndex],
    channel: &ScalarField,
    initial: &ScalarField,
    fin: &ScalarField,
) -> Result<f64> {
    channel.ensure_same_spec(initial)?;
    initial.ensure_same_spec(fin)?;
    if booths.is_empty() {
        return Err(undefined("impact_score", "no booths placed"));
    }
    let mut total = 0.0;
    for &b in booths {
        channel.spec().check(b)?;
        let a = initial.get(b);
        let fraction = if a == 0.0 { 0.0 } else { (a - fin.get(b)) / a };
        total += channel.get(b) * fraction;
    }
    Ok(total / booths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// AQI drop a cell needs to count as covered.
    pub coverage_threshold: f64,
    /// Population above which a booth counts as high impact.
    pub high_impact_threshold: f64,
    /// Source coverage radius in cells; `None` uses the booth influence radius.
    pub source_radius: Option<f64>,
    pub industrial_source_threshold: f64,
    pub source_aqi_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            coverage_threshold: 10.0,
            high_impact_threshold: 0.5,
            source_radius: None,
            industrial_source_threshold: 0.5,
            source_aqi_threshold: crate::ingest::HOTSPOT_AQI,
        }
    }
}

const NOTES: [&str; 2] = [
    "impact scores are channel value at the booth cell times the fractional AQI drop there, averaged over booths",
    "spatial entropy equals ln(booths) whenever booths occupy distinct cells and so does not separate strategies",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub strategy: String,
    pub booths: usize,
    pub overall_aqi_improvement_pct: Option<f64>,
    pub population_weighted_improvement_pct: Option<f64>,
    pub spatial_coverage_pct: f64,
    pub mean_aqi_reduction: f64,
    pub high_impact_placements: usize,
    pub pollution_source_coverage_pct: Option<f64>,
    pub spacing_efficiency_km: Option<f64>,
    pub spatial_entropy_nats: Option<f64>,
    pub violations: BTreeMap<ViolationKind, usize>,
    pub population_impact_score: Option<f64>,
    pub traffic_impact_score: Option<f64>,
    pub industrial_impact_score: Option<f64>,
    /// Reason for every metric left as null.
    pub undefined: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

fn optional(value: Result<f64>, undefined: &mut BTreeMap<String, String>) -> Result<Option<f64>> {
    match value {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric { metric, reason }) => {
            undefined.insert(metric.to_string(), reason);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Scores `placement`, whose booths turned `initial` into `fin`. `state`
/// supplies the population, traffic and industrial channels; violations
/// are audited by replaying the placement from `state`.
pub fn evaluate(
    initial: &ScalarField,
    fin: &ScalarField,
    state: &EnvState,
    placement: &Placement,
    c: &ConstraintSet,
    p: &BoothParams,
    m: &MetricsConfig,
) -> Result<EvaluationReport> {
    initial.ensure_same_spec(&state.aqi)?;
    let spec = state.spec();
    let booths = &placement.booths;
    let mut undef = BTreeMap::new();

    let overall = optional(overall_improvement(initial, fin), &mut undef)?;
    let pop_weighted = optional(
        population_weighted_improvement(initial, fin, &state.population),
        &mut undef,
    )?;
    let sources = pollution_sources(state, m.industrial_source_threshold, m.source_aqi_threshold);
    let radius = m.source_radius.unwrap_or_else(|| p.influence_radius());
    let source = optional(source_coverage(booths, &sources, radius), &mut undef)?;
    let spacing = optional(spacing_efficiency(spec, booths), &mut undef)?;
    let entropy = optional(spatial_entropy(spec, booths), &mut undef)?;

    let mut impact = |channel: &ScalarField, name: &'static str| -> Result<Option<f64>> {
        match impact_score(booths, channel, initial, fin) {
            Err(Error::UndefinedMetric { reason, .. }) => optional(Err(undefined(name, reason)), &mut undef),
            other => optional(other, &mut undef),
        }
    };
    let population_impact = impact(&state.population, "population_impact_score")?;
    let traffic_impact = impact(&state.traffic, "traffic_impact_score")?;
    let industrial_impact = impact(&state.industrial, "industrial_impact_score")?;

    let audit = audit_placement(state, booths, c, p)?;
    Ok(EvaluationReport {
        strategy: placement.strategy.name().to_string(),
        booths: booths.len(),
        overall_aqi_improvement_pct: overall,
        population_weighted_improvement_pct: pop_weighted,
        spatial_coverage_pct: spatial_coverage(initial, fin, m.coverage_threshold)?,
        mean_aqi_reduction: mean_reduction(initial, fin)?,
        high_impact_placements: high_impact_count(booths, &state.population, m.high_impact_threshold)?,
        pollution_source_coverage_pct: source,
        spacing_efficiency_km: spacing,
        spatial_entropy_nats: entropy,
        violations: violation_counts(&audit),
        population_impact_score: population_impact,
        traffic_impact_score: traffic_impact,
        industrial_impact_score: industrial_impact,
        undefined: undef,
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Comparison CSV header; one column per report field, with the
    /// violation map spread over one column per kind.
    pub fn csv_columns() -> Vec<String> {
        let mut cols: Vec<String> = [
            "strategy",
            "booths",
            "overall_aqi_improvement_pct",
            "population_weighted_improvement_pct",
            "spatial_coverage_pct",
            "mean_aqi_reduction",
            "high_impact_placements",
            "pollution_source_coverage_pct",
            "spacing_efficiency_km",
            "spatial_entropy_nats",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend(ViolationKind::ALL.iter().map(|k| format!("violations_{}", k.name())));
        cols.extend(
            [
                "population_impact_score",
                "traffic_impact_score",
                "industrial_impact_score",
                "undefined",
                "notes",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        cols
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = vec![
            self.strategy.clone(),
            self.booths.to_string(),
            opt(self.overall_aqi_improvement_pct),
            opt(self.population_weighted_improvement_pct),
            self.spatial_coverage_pct.to_string(),
            self.mean_aqi_reduction.to_string(),
            self.high_impact_placements.to_string(),
            opt(self.pollution_source_coverage_pct),
            opt(self.spacing_efficiency_km),
            opt(self.spatial_entropy_nats),
        ];
        row.extend(
            ViolationKind::ALL
                .iter()
                .map(|k| self.violations.get(k).copied().unwrap_or(0).to_string()),
        );
        row.push(opt(self.population_impact_score));
        row.push(opt(self.traffic_impact_score));
        row.push(opt(self.industrial_impact_score));
        row.push(
            self.undefined
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect::<Vec<_>>()
                .join("; "),
        );
        row.push(self.notes.join("; "));
        row
    }

    /// Metrics where larger is better, as plotted on the comparison radar.
    pub fn radar_metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("overall_aqi_improvement_pct", self.overall_aqi_improvement_pct),
            ("population_weighted_improvement_pct", self.population_weighted_improvement_pct),
            ("spatial_coverage_pct", Some(self.spatial_coverage_pct)),
            ("mean_aqi_reduction", Some(self.mean_aqi_reduction)),
            ("high_impact_placements", Some(self.high_impact_placements as f64)),
            ("pollution_source_coverage_pct", self.pollution_source_coverage_pct),
            ("spacing_efficiency_km", self.spacing_efficiency_km),
            ("population_impact_score", self.population_impact_score),
            ("traffic_impact_score", self.traffic_impact_score),
            ("industrial_impact_score", self.industrial_impact_score),
        ]
    }
}

fn write_rows(rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)
            .map_err(|e| Error::io("<csv>", std::io::Error::other(e)))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv>", std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per strategy, one column per report field.
pub fn comparison_csv(reports: &[EvaluationReport]) -> Result<String> {
    let mut rows = vec![EvaluationReport::csv_columns()];
    rows.extend(reports.iter().map(EvaluationReport::csv_row));
    write_rows(&rows)
}

/// The same table transposed: one row per metric, one column per strategy.
pub fn comparison_table_csv(reports: &[EvaluationReport]) -> Result<String> {
    let cols = EvaluationReport::csv_columns();
    let body: Vec<Vec<String>> = reports.iter().map(EvaluationReport::csv_row).collect();
    let mut rows = Vec::with_capacity(cols.len());
    let mut header = vec!["metric".to_string()];
    header.extend(reports.iter().map(|r| r.strategy.clone()));
    rows.push(header);
    for (i, col) in cols.iter().enumerate().skip(1) {
        let mut row = vec![col.clone()];
        row.extend(body.iter().map(|r| r[i].clone()));
        rows.push(row);
    }
    write_rows(&rows)
}

/// `(x - min) / (max - min)` over the values present; a metric with no
/// spread, or an undefined value, maps to 0.
pub fn min_max_normalize(values: &[Option<f64>]) -> Vec<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| match v {
            Some(x) if hi > lo => (x - lo) / (hi - lo),
            _ => 0.0,
        })
        .collect()
}

/// Normalized radar metrics: `(metric names, per-report rows)`.
pub fn normalized_comparison(reports: &[EvaluationReport]) -> (Vec<&'static str>, Vec<Vec<f64>>) {
    let per_report: Vec<_> = reports.iter().map(EvaluationReport::radar_metrics).collect();
    let names: Vec<&'static str> = per_report
        .first()
        .map(|m| m.iter().map(|(n, _)| *n).collect())
        .unwrap_or_default();
    let mut rows = vec![vec![0.0; names.len()]; reports.len()];
    for j in 0..names.len() {
        let column: Vec<Option<f64>> = per_report.iter().map(|m| m[j].1).collect();
        for (i, v) in min_max_normalize(&column).into_iter().enumerate() {
            rows[i][j] = v;
        }
    }
    (names, rows)
}

pub fn normalized_csv(reports: &[EvaluationReport]) -> Result<String> {
    let (names, values) = normalized_comparison(reports);
    let mut header = vec!["strategy".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    let mut rows = vec![header];
    for (r, vals) in reports.iter().zip(values) {
        let mut row = vec![r.strategy.clone()];
        row.extend(vals.iter().map(|v| v.to_string()));
        rows.push(row);
    }
    write_rows(&rows)
}
