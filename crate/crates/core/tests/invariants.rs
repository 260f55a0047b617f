use aerogrid_core::booth::{
    apply_all, apply_booth_effect, audit_placement, is_valid_cell, BoothParams, ConstraintSet,
};
use aerogrid_core::env::{BoothEnv, EnvConfig};
use aerogrid_core::grid::{cell_to_geo, geo_to_cell, CellIndex, Channel, EnvState, GridSpec, ScalarField};
use aerogrid_core::influence::{build_state, InfluenceConfig};
use aerogrid_core::ingest::{
    build_aqi_field, generate_synthetic_city, idw_interpolate, minmax_normalize, SyntheticCityConfig, DEFAULT_IMPUTE_RADIUS_KM,
};
use aerogrid_core::metrics::{overall_improvement, population_weighted_improvement, spatial_coverage, spatial_entropy};
use aerogrid_core::neural::masked_softmax;
use aerogrid_core::ppo::{compute_gae, entropy, normalize_advantages};
use aerogrid_core::strategies::{greedy_placement, random_placement};
use proptest::prelude::*;

const SIDE: usize = 10;

fn spec() -> GridSpec {
    GridSpec::square(SIDE).unwrap()
}

fn field(channel: Channel, values: Vec<f64>) -> ScalarField {
    ScalarField::new(spec(), channel, values).unwrap()
}

fn unit_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, SIDE * SIDE)
}

fn aqi_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=500.0, SIDE * SIDE)
}

fn cell() -> impl Strategy<Value = CellIndex> {
    (0..SIDE, 0..SIDE).prop_map(|(x, y)| CellIndex::new(x, y))
}

prop_compose! {
    fn state()(aqi in aqi_values(), pop in unit_values(), traffic in unit_values(),
               industrial in unit_values(), green in unit_values()) -> EnvState {
        EnvState::new(
            field(Channel::Aqi, aqi),
            field(Channel::Population, pop),
            field(Channel::Traffic, traffic),
            field(Channel::Industrial, industrial),
            field(Channel::Green, green),
            ScalarField::zeros(spec(), Channel::Booth),
        )
        .unwrap()
    }
}

fn small_budget() -> ConstraintSet {
    ConstraintSet {
        max_booths: 8,
        ..ConstraintSet::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn geo_round_trip(c in cell()) {
        let s = spec();
        prop_assert_eq!(geo_to_cell(&s, cell_to_geo(&s, c).unwrap()).unwrap(), c);
    }

    #[test]
    fn idw_stays_within_station_range(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..500.0), 1..6)) {
        let s = spec();
        let stations: Vec<_> = raw
            .iter()
            .map(|&(a, b, v)| {
                let p = aerogrid_core::grid::GeoPoint::new(
                    s.lat_min + a * (s.lat_max - s.lat_min),
                    s.lon_min + b * (s.lon_max - s.lon_min),
                )
                .unwrap();
                (p, v)
            })
            .collect();
        let lo = raw.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
        let f = idw_interpolate(&stations, &s).unwrap();
        for &v in f.values() {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn minmax_lands_in_unit_interval(v in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        prop_assume!(v.iter().any(|&x| x != v[0]));
        for x in minmax_normalize(&v).unwrap() {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn booth_never_raises_aqi(aqi in aqi_values(), c in cell()) {
        let before = field(Channel::Aqi, aqi);
        let after = apply_booth_effect(&before, c, &BoothParams::default()).unwrap();
        for (a, b) in before.values().iter().zip(after.values()) {
            prop_assert!(*b <= *a && *b >= 0.0);
        }
    }

    #[test]
    fn booth_order_does_not_matter(aqi in aqi_values(), booths in prop::collection::vec(cell(), 1..8), shift in 0usize..8) {
        let f = field(Channel::Aqi, aqi);
        let p = BoothParams::default();
        let mut rotated = booths.clone();
        rotated.rotate_left(shift % booths.len());
        let a = apply_all(&f, &booths, &p).unwrap();
        let b = apply_all(&f, &rotated, &p).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn loosening_constraints_keeps_valid_cells_valid(s in state(), c in cell(), slack in 0.0f64..0.3) {
        let p = BoothParams::default();
        let strict = ConstraintSet::default();
        let loose = ConstraintSet {
            d_min_km: strict.d_min_km * (1.0 - slack),
            rho_min: strict.rho_min - slack / 2.0,
            delta_aqi_min: strict.delta_aqi_min * (1.0 - slack),
            green_threshold: strict.green_threshold + slack,
            max_booths: strict.max_booths + 1,
        };
        if is_valid_cell(&s, c, &[], &strict, &p).unwrap().0 {
            prop_assert!(is_valid_cell(&s, c, &[], &loose, &p).unwrap().0);
        }
    }

    #[test]
    fn strategies_respect_constraints(s in state(), seed in any::<u64>()) {
        let c = small_budget();
        let p = BoothParams::default();
        for plan in [random_placement(&s, &c, &p, seed).unwrap(), greedy_placement(&s, &c, &p).unwrap()] {
            prop_assert!(plan.len() <= c.max_booths);
            let audit = audit_placement(&s, &plan.booths, &c, &p).unwrap();
            prop_assert!(audit.iter().all(|e| e.violations.is_empty()), "{:?}", audit);
        }
        prop_assert_eq!(greedy_placement(&s, &c, &p).unwrap(), greedy_placement(&s, &c, &p).unwrap());
    }

    #[test]
    fn episodes_keep_budget_and_never_raise_aqi(s in state(), actions in prop::collection::vec(0usize..SIDE * SIDE, 1..40)) {
        let cfg = EnvConfig { constraints: small_budget(), masking: false, ..EnvConfig::default() };
        let mut env = BoothEnv::new(s, cfg).unwrap();
        env.reset(0);
        let w = cfg.weights;
        for a in actions {
            if env.is_done() {
                break;
            }
            let before = env.state().aqi.clone();
            let r = env.step(a).unwrap();
            prop_assert!((r.info.total(&w, &cfg.episode) - r.reward).abs() <= 1e-12);
            for (x, y) in before.values().iter().zip(r.next_state.aqi.values()) {
                prop_assert!(y <= x);
            }
            prop_assert!(env.placement().len() <= cfg.constraints.max_booths);
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 2..40), seed in any::<u64>()) {
        let mask: Vec<bool> = (0..logits.len()).map(|i| i == 0 || (seed >> (i % 64)) & 1 == 1).collect();
        let p = masked_softmax(&logits, &mask).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        let valid = mask.iter().filter(|&&m| m).count() as f64;
        let h = entropy(&p);
        prop_assert!(h >= 0.0 && h <= valid.ln() + 1e-12);
    }

    #[test]
    fn normalized_advantages_are_standard(adv in prop::collection::vec(-10.0f64..10.0, 2..64)) {
        prop_assume!(adv.iter().any(|&a| (a - adv[0]).abs() > 1e-3));
        let n = normalize_advantages(&adv);
        let mean = n.iter().sum::<f64>() / n.len() as f64;
        let std = (n.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n.len() as f64).sqrt();
        prop_assert!(mean.abs() <= 1e-9);
        prop_assert!((std - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn undiscounted_gae_is_return_minus_baseline(rv in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..30), boot in -1.0f64..1.0) {
        let r: Vec<f64> = rv.iter().map(|p| p.0).collect();
        let v: Vec<f64> = rv.iter().map(|p| p.1).collect();
        let (adv, _) = compute_gae(&r, &v, &vec![false; r.len()], boot, 1.0, 1.0).unwrap();
        for t in 0..r.len() {
            let g = r[t..].iter().sum::<f64>() + boot;
            prop_assert!((adv[t] - (g - v[t])).abs() <= 1e-9);
        }
    }

    #[test]
    fn metric_homogeneity_and_uniform_population(aqi in aqi_values(), booths in prop::collection::vec(cell(), 1..6), k in 0.1f64..0.9) {
        prop_assume!(aqi.iter().sum::<f64>() > 1.0);
        let init = field(Channel::Aqi, aqi);
        let fin = apply_all(&init, &booths, &BoothParams::default()).unwrap();
        let scale = |f: &ScalarField| f.with_values(f.values().iter().map(|v| v * k).collect()).unwrap();
        let base = overall_improvement(&init, &fin).unwrap();
        prop_assert!((overall_improvement(&scale(&init), &scale(&fin)).unwrap() - base).abs() <= 1e-9);
        let uniform = ScalarField::filled(spec(), Channel::Population, 0.5).unwrap();
        prop_assert_eq!(population_weighted_improvement(&init, &fin, &uniform).unwrap(), base);
        let c1 = spatial_coverage(&init, &fin, 1.0).unwrap();
        let c2 = spatial_coverage(&init, &fin, 5.0).unwrap();
        prop_assert!(c2 <= c1);
    }

    #[test]
    fn entropy_peaks_for_distinct_cells(booths in prop::collection::vec(cell(), 1..20)) {
        let h = spatial_entropy(&spec(), &booths).unwrap();
        let k = booths.len() as f64;
        let mut flat: Vec<_> = booths.iter().map(|c| (c.x, c.y)).collect();
        flat.sort_unstable();
        flat.dedup();
        prop_assert!(h >= 0.0 && h <= k.ln() + 1e-12);
        prop_assert_eq!(flat.len() == booths.len(), (h - k.ln()).abs() <= 1e-12);
    }
}

#[test]
fn default_city_exercises_every_constraint() {
    let spec = GridSpec::default();
    for seed in 0..5 {
        let city = generate_synthetic_city(&SyntheticCityConfig { seed, ..Default::default() }, &spec).unwrap();
        let aqi = build_aqi_field(&city.stations, &city.auxiliary, &spec, DEFAULT_IMPUTE_RADIUS_KM).unwrap();
        let state = build_state(aqi, &city.sites, &InfluenceConfig::default()).unwrap();
        assert!(state.aqi.max() >= 400.0, "seed {seed}: peak {}", state.aqi.max());
        assert!(state.green.max() >= 0.7, "seed {seed}: green {}", state.green.max());
        let c = ConstraintSet::default();
        assert!(state.population.values().iter().any(|&p| p <= c.rho_min), "seed {seed}");
    }
}
