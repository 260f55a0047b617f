//! Influence channels built from feature sites.
//!
//! Each site contributes either a Gaussian kernel or a linear radial decay,
//! scaled by its magnitude relative to the largest site of the same kind.
//! Contributions combine per cell by maximum or by sum and the result is
//! clamped to [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{euclidean_cells, CellIndex, Channel, EnvState, GridSpec, ScalarField};
use crate::ingest::{FeatureSite, SiteKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub weight: f64,
    pub sigma_cells: f64,
}

impl KernelParams {
    pub fn new(weight: f64, sigma_cells: f64) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidParameter(format!("kernel weight must be finite and >= 0, got {weight}")));
        }
        if !(sigma_cells.is_finite() && sigma_cells > 0.0) {
            return Err(Error::InvalidParameter(format!("kernel sigma must be > 0, got {sigma_cells}")));
        }
        Ok(Self { weight, sigma_cells })
    }

    fn at_distance(&self, d: f64) -> f64 {
        self.weight * (-d * d / (2.0 * self.sigma_cells * self.sigma_cells)).exp()
    }
}

/// Linear decay from `max_value` at the centre to 0 at distance `r`.
pub fn radial_influence(center: CellIndex, cell: CellIndex, r: f64, max_value: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radial influence radius must be > 0, got {r}")));
    }
    Ok(radial_at(euclidean_cells(center, cell), r, max_value))
}

fn radial_at(d: f64, r: f64, max_value: f64) -> f64 {
    (1.0 - d / r).max(0.0) * max_value
}

fn site_distance(spec: &GridSpec, site: &FeatureSite, cell: CellIndex) -> f64 {
    let (sx, sy) = spec.cell_coords(site.location);
    ((cell.x as f64 - sx).powi(2) + (cell.y as f64 - sy).powi(2)).sqrt()
}

/// Gaussian kernel of one site evaluated at a cell, distance in cell units.
pub fn gaussian_influence(spec: &GridSpec, site: &FeatureSite, cell: CellIndex, k: &KernelParams) -> f64 {
    k.at_distance(site_distance(spec, site, cell))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Max,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    Gaussian,
    Radial,
}

fn magnitude_scale(sites: &[&FeatureSite]) -> Vec<f64> {
    let max = sites.iter().map(|s| s.magnitude).fold(0.0, f64::max);
    sites
        .iter()
        .map(|s| if max > 0.0 { s.magnitude / max } else { 0.0 })
        .collect()
}

fn contributions<'a>(
    spec: &'a GridSpec,
    sites: &'a [&FeatureSite],
    scale: &'a [f64],
    k: &'a KernelParams,
    shape: KernelShape,
    cell: CellIndex,
) -> impl Iterator<Item = f64> + 'a {
    sites.iter().zip(scale).map(move |(site, s)| {
        let d = site_distance(spec, site, cell);
        match shape {
            KernelShape::Gaussian => s * k.at_distance(d),
            KernelShape::Radial => radial_at(d, site.radius_cells, s * k.weight),
        }
    })
}

fn check_single_kind(sites: &[FeatureSite]) -> Result<Option<SiteKind>> {
    let kind = sites.first().map(|s| s.kind);
    if sites.iter().any(|s| Some(s.kind) != kind) {
        return Err(Error::InvalidParameter("a channel is built from sites of a single kind".into()));
    }
    Ok(kind)
}

/// Un-clamped per-cell combination; the channel builders clamp this.
pub fn raw_channel(
    sites: &[FeatureSite],
    spec: &GridSpec,
    k: &KernelParams,
    shape: KernelShape,
    combine: Combine,
) -> Result<Vec<f64>> {
    check_single_kind(sites)?;
    let refs: Vec<&FeatureSite> = sites.iter().collect();
    let scale = magnitude_scale(&refs);
    Ok(spec
        .cells()
        .map(|cell| {
            let it = contributions(spec, &refs, &scale, k, shape, cell);
            match combine {
                Combine::Max => it.fold(0.0, f64::max),
                Combine::Sum => it.sum(),
            }
        })
        .collect())
}

fn build(
    sites: &[FeatureSite],
    spec: &GridSpec,
    k: &KernelParams,
    shape: KernelShape,
    combine: Combine,
) -> Result<ScalarField> {
    let channel = check_single_kind(sites)?.map_or(Channel::Population, SiteKind::channel);
    let values = raw_channel(sites, spec, k, shape, combine)?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    ScalarField::new(*spec, channel, values)
}

/// Per-cell maximum of the Gaussian kernels of all sites. An empty site
/// list yields an all-zero field.
pub fn build_channel_max(sites: &[FeatureSite], spec: &GridSpec, k: &KernelParams) -> Result<ScalarField> {
    build(sites, spec, k, KernelShape::Gaussian, Combine::Max)
}

/// Per-cell sum of the Gaussian kernels of all sites, clamped to 1.
pub fn build_channel_sum(sites: &[FeatureSite], spec: &GridSpec, k: &KernelParams) -> Result<ScalarField> {
    build(sites, spec, k, KernelShape::Gaussian, Combine::Sum)
}

/// How one feature kind becomes a channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRecipe {
    pub weight: f64,
    /// Kernel spread in km before `spread_scale` is applied.
    pub sigma_km: f64,
    pub combine: Combine,
    pub shape: KernelShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceConfig {
    pub population: ChannelRecipe,
    pub traffic: ChannelRecipe,
    pub industrial: ChannelRecipe,
    pub green: ChannelRecipe,
    /// Multiplier on every `sigma_km`; the street-scale spreads are too
    /// narrow to register on kilometre cells without it.
    pub spread_scale: f64,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        let recipe = |weight, sigma_km, combine| ChannelRecipe {
            weight,
            sigma_km,
            combine,
            shape: KernelShape::Gaussian,
        };
        Self {
            population: recipe(1.0, 0.5, Combine::Sum),
            traffic: recipe(0.9, 0.25, Combine::Sum),
            industrial: recipe(1.0, 0.15, Combine::Sum),
            green: recipe(0.8, 0.7, Combine::Max),
            spread_scale: 6.0,
        }
    }
}

impl InfluenceConfig {
    pub fn recipe(&self, kind: SiteKind) -> &ChannelRecipe {
        match kind {
            SiteKind::Population => &self.population,
            SiteKind::Traffic => &self.traffic,
            SiteKind::Industrial => &self.industrial,
            SiteKind::Green => &self.green,
        }
    }

    /// Cells per km of configured spread on this grid.
    pub fn km_to_cells(&self, spec: &GridSpec) -> f64 {
        self.spread_scale / spec.mean_cell_km()
    }

    pub fn kernel(&self, kind: SiteKind, spec: &GridSpec) -> Result<KernelParams> {
        let r = self.recipe(kind);
        KernelParams::new(r.weight, r.sigma_km * self.km_to_cells(spec))
    }
}

pub fn build_channel(kind: SiteKind, sites: &[FeatureSite], spec: &GridSpec, cfg: &InfluenceConfig) -> Result<ScalarField> {
    let of_kind: Vec<FeatureSite> = sites.iter().filter(|s| s.kind == kind).cloned().collect();
    let recipe = cfg.recipe(kind);
    let field = build(&of_kind, spec, &cfg.kernel(kind, spec)?, recipe.shape, recipe.combine)?;
    field.relabel(kind.channel())
}

/// Assembles the observation stack with an empty booth grid.
pub fn build_state(aqi: ScalarField, sites: &[FeatureSite], cfg: &InfluenceConfig) -> Result<EnvState> {
    let spec = *aqi.spec();
    let [population, traffic, industrial, green] = SiteKind::ALL.map(|k| build_channel(k, sites, &spec, cfg));
    EnvState::new(
        aqi,
        population?,
        traffic?,
        industrial?,
        green?,
        ScalarField::zeros(spec, Channel::Booth),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{cell_to_geo, GeoPoint};
    use proptest::prelude::*;

    fn site_at(spec: &GridSpec, x: usize, y: usize, magnitude: f64) -> FeatureSite {
        FeatureSite::new(SiteKind::Population, cell_to_geo(spec, CellIndex::new(x, y)).unwrap(), magnitude, 3.0).unwrap()
    }

    #[test]
    fn radial_examples() {
        let c = CellIndex::new(4, 4);
        assert_eq!(radial_influence(c, c, 4.0, 0.7).unwrap(), 0.7);
        assert_eq!(radial_influence(c, CellIndex::new(4, 8), 4.0, 1.0).unwrap(), 0.0);
        assert_eq!(radial_influence(c, CellIndex::new(4, 6), 4.0, 1.0).unwrap(), 0.5);
        assert!(radial_influence(c, c, 0.0, 1.0).is_err());
        assert_eq!(radial_influence(c, CellIndex::new(0, 0), 3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_examples() {
        let spec = GridSpec::square(16).unwrap();
        let site = site_at(&spec, 5, 5, 1.0);
        let k = KernelParams::new(1.0, 2.0).unwrap();
        assert!((gaussian_influence(&spec, &site, CellIndex::new(5, 5), &k) - 1.0).abs() < 1e-12);
        let at_sigma = gaussian_influence(&spec, &site, CellIndex::new(5, 7), &k);
        assert!((at_sigma - (-0.5f64).exp()).abs() < 1e-12);
        assert!((at_sigma - 0.606531).abs() < 1e-6);
        let k2 = KernelParams::new(2.0, 1.0).unwrap();
        let three = gaussian_influence(&spec, &site, CellIndex::new(8, 5), &k2);
        assert!((three - 2.0 * (-4.5f64).exp()).abs() < 1e-12);
        assert!((three - 0.022218).abs() < 1e-6);
    }

    #[test]
    fn single_site_peaks_at_its_cell() {
        let spec = GridSpec::square(8).unwrap();
        let sites = [site_at(&spec, 2, 3, 10.0)];
        let k = KernelParams::new(1.0, 1.5).unwrap();
        let f = build_channel_max(&sites, &spec, &k).unwrap();
        assert!((f.get(CellIndex::new(2, 3)) - 1.0).abs() < 1e-12);
        assert_eq!(f.max(), f.get(CellIndex::new(2, 3)));
        assert_eq!(build_channel_sum(&sites, &spec, &k).unwrap(), f);
    }

    #[test]
    fn swapping_identical_sites_is_symmetric() {
        let spec = GridSpec::square(8).unwrap();
        let k = KernelParams::new(1.0, 1.0).unwrap();
        let a = [site_at(&spec, 1, 1, 5.0), site_at(&spec, 6, 6, 5.0)];
        let b = [a[1].clone(), a[0].clone()];
        assert_eq!(build_channel_max(&a, &spec, &k).unwrap(), build_channel_max(&b, &spec, &k).unwrap());
        // the layout is mirror symmetric through the diagonal midpoint
        let f = build_channel_max(&a, &spec, &k).unwrap();
        for cell in spec.cells() {
            let mirror = CellIndex::new(7 - cell.x, 7 - cell.y);
            assert!((f.get(cell) - f.get(mirror)).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_sites_add() {
        let spec = GridSpec::square(8).unwrap();
        let k = KernelParams::new(0.4, 1.0).unwrap();
        let sites = [site_at(&spec, 4, 4, 1.0), site_at(&spec, 4, 4, 1.0)];
        let f = build_channel_sum(&sites, &spec, &k).unwrap();
        assert!((f.get(CellIndex::new(4, 4)) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn four_site_max_matches_brute_force() {
        let spec = GridSpec::square(8).unwrap();
        let k = KernelParams::new(0.9, 1.3).unwrap();
        let sites = [
            site_at(&spec, 0, 0, 3.0),
            site_at(&spec, 2, 6, 9.0),
            site_at(&spec, 7, 1, 1.0),
            site_at(&spec, 5, 5, 6.0),
        ];
        let f = build_channel_max(&sites, &spec, &k).unwrap();
        for cell in spec.cells() {
            let mut best: f64 = 0.0;
            for s in &sites {
                let p = cell_to_geo(&spec, cell).unwrap();
                let dx = (p.lat - s.location.lat) / spec.lat_step();
                let dy = (p.lon - s.location.lon) / spec.lon_step();
                best = best.max(0.9 * (s.magnitude / 9.0) * (-(dx * dx + dy * dy) / (2.0 * 1.3 * 1.3)).exp());
            }
            assert!((f.get(cell) - best.min(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_sites_give_zero_field() {
        let spec = GridSpec::square(4).unwrap();
        let k = KernelParams::new(1.0, 1.0).unwrap();
        assert!(build_channel_sum(&[], &spec, &k).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixed_kinds_rejected() {
        let spec = GridSpec::square(4).unwrap();
        let mut other = site_at(&spec, 1, 1, 1.0);
        other.kind = SiteKind::Green;
        let sites = [site_at(&spec, 0, 0, 1.0), other];
        assert!(build_channel_max(&sites, &spec, &KernelParams::new(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn state_has_all_channels() {
        let spec = GridSpec::square(8).unwrap();
        let aqi = ScalarField::filled(spec, Channel::Aqi, 200.0).unwrap();
        let sites = vec![
            site_at(&spec, 1, 1, 2.0),
            FeatureSite::new(SiteKind::Green, GeoPoint { lat: 28.6, lon: 77.1 }, 4.0, 2.0).unwrap(),
        ];
        let state = build_state(aqi, &sites, &InfluenceConfig::default()).unwrap();
        assert_eq!(state.green.channel(), Channel::Green);
        assert!(state.green.max() > 0.0);
        assert_eq!(state.traffic.max(), 0.0);
        assert!(state.booth.values().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn adding_a_site_never_decreases(xs in prop::collection::vec((0usize..8, 0usize..8), 1..5), extra in (0usize..8, 0usize..8), sum in any::<bool>()) {
            let spec = GridSpec::square(8).unwrap();
            let k = KernelParams::new(0.7, 1.2).unwrap();
            let sites: Vec<FeatureSite> = xs.iter().map(|&(x, y)| site_at(&spec, x, y, 1.0)).collect();
            let mut more = sites.clone();
            more.push(site_at(&spec, extra.0, extra.1, 1.0));
            let combine = if sum { Combine::Sum } else { Combine::Max };
            let before = raw_channel(&sites, &spec, &k, KernelShape::Gaussian, combine).unwrap();
            let after = raw_channel(&more, &spec, &k, KernelShape::Gaussian, combine).unwrap();
            for (a, b) in before.iter().zip(&after) {
                prop_assert!(b >= a);
            }
            let f = build(&more, &spec, &k, KernelShape::Radial, combine).unwrap();
            prop_assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn gaussian_strictly_decreasing(d1 in 0.01f64..10.0, gap in 0.01f64..5.0) {
            let k = KernelParams::new(1.0, 2.5).unwrap();
            prop_assert!(k.at_distance(d1 + gap) < k.at_distance(d1));
        }

        #[test]
        fn radial_compact_support(d in 0.0f64..20.0, r in 0.1f64..10.0) {
            let v = radial_at(d, r, 1.0);
            if d >= r { prop_assert_eq!(v, 0.0); } else { prop_assert!(v > 0.0); }
        }
    }
}
