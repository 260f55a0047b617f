//! Placement strategies. All of them drive the same environment, so they
//! see the same constraint checks and booth effects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::booth::{BoothParams, ConstraintSet, Placement, Strategy};
use crate::env::{BoothEnv, EnvConfig, EpisodeConfig};
use crate::error::{Error, Result};
use crate::grid::EnvState;
use crate::neural::PolicyValueNet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyMode {
    /// Re-rank cells by the current AQI after every booth.
    #[default]
    Dynamic,
    /// Walk cells in order of the initial AQI.
    Static,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub greedy_mode: GreedyMode,
    /// Lets greedy place booths on green space.
    pub greedy_ignores_green: bool,
}

/// An environment whose episode ends exactly on the booth budget.
fn placement_env(state: &EnvState, c: &ConstraintSet, p: &BoothParams) -> Result<BoothEnv> {
    let cfg = EnvConfig {
        booth: *p,
        constraints: *c,
        episode: EpisodeConfig {
            max_steps: c.max_booths,
            ..EpisodeConfig::default()
        },
        ..EnvConfig::default()
    };
    let mut base = state.clone();
    base.booth = crate::grid::ScalarField::zeros(*state.spec(), crate::grid::Channel::Booth);
    BoothEnv::new(base, cfg)
}

fn valid_actions(env: &BoothEnv) -> Vec<usize> {
    env.mask()
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(i, _)| i)
        .collect()
}

/// Places booths one at a time on a uniformly chosen currently valid cell.
pub fn random_placement(state: &EnvState, c: &ConstraintSet, p: &BoothParams, seed: u64) -> Result<Placement> {
    let mut env = placement_env(state, c, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while !env.is_done() {
        let valid = valid_actions(&env);
        if valid.is_empty() {
            break;
        }
        env.step(valid[rng.gen_range(0..valid.len())])?;
    }
    Ok(Placement {
        strategy: Strategy::Random,
        booths: env.placement().to_vec(),
    })
}

/// Highest-AQI-first placement with the default dynamic re-ranking.
pub fn greedy_placement(state: &EnvState, c: &ConstraintSet, p: &BoothParams) -> Result<Placement> {
    greedy_placement_with(state, c, p, &StrategyConfig::default())
}

/// Greedy placement; ties go to the smallest row-major index.
pub fn greedy_placement_with(
    state: &EnvState,
    c: &ConstraintSet,
    p: &BoothParams,
    s: &StrategyConfig,
) -> Result<Placement> {
    let mut constraints = *c;
    if s.greedy_ignores_green {
        // green influence never exceeds 1
        constraints.green_threshold = 1.0;
    }
    let mut env = placement_env(state, &constraints, p)?;
    match s.greedy_mode {
        GreedyMode::Dynamic => {
            while !env.is_done() {
                let aqi = env.state().aqi.values();
                let best = valid_actions(&env)
                    .into_iter()
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if aqi[b] >= aqi[i] => Some(b),
                        _ => Some(i),
                    });
                match best {
                    Some(a) => {
                        env.step(a)?;
                    }
                    None => break,
                }
            }
        }
        GreedyMode::Static => {
            let aqi = state.aqi.values();
            let mut order: Vec<usize> = (0..aqi.len()).collect();
            order.sort_by(|&a, &b| aqi[b].total_cmp(&aqi[a]).then(a.cmp(&b)));
            for a in order {
                if env.is_done() {
                    break;
                }
                if env.mask()[a] {
                    env.step(a)?;
                }
            }
        }
    }
    Ok(Placement {
        strategy: Strategy::Greedy,
        booths: env.placement().to_vec(),
    })
}

/// Argmax decode of one episode with a trained network.
pub fn ppo_placement(net: &PolicyValueNet, state: &EnvState, cfg: &EnvConfig) -> Result<Placement> {
    let spec = state.spec();
    let nc = net.config();
    if nc.height != spec.height || nc.width != spec.width {
        return Err(Error::Config(format!(
            "checkpoint was trained on a {}x{} grid but the city is {}x{}",
            nc.height, nc.width, spec.height, spec.width
        )));
    }
    let mut base = state.clone();
    base.booth = crate::grid::ScalarField::zeros(*spec, crate::grid::Channel::Booth);
    let mut env = BoothEnv::new(base, *cfg)?;
    crate::ppo::greedy_decode(&mut env, net, 0)?;
    Ok(Placement {
        strategy: Strategy::Ppo,
        booths: env.placement().to_vec(),
    })
}

/// Runs a strategy by name. PPO needs a network.
pub fn place(
    strategy: Strategy,
    state: &EnvState,
    env_cfg: &EnvConfig,
    s: &StrategyConfig,
    seed: u64,
    net: Option<&PolicyValueNet>,
) -> Result<Placement> {
    match strategy {
        Strategy::Random => random_placement(state, &env_cfg.constraints, &env_cfg.booth, seed),
        Strategy::Greedy => greedy_placement_with(state, &env_cfg.constraints, &env_cfg.booth, s),
        Strategy::Ppo => {
            let net = net.ok_or_else(|| Error::Config("the ppo strategy needs a trained checkpoint".into()))?;
            ppo_placement(net, state, env_cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::booth::{apply_booth_effect, audit_placement, is_valid_cell};
    use crate::grid::{CellIndex, Channel, GridSpec, ScalarField};
    use crate::neural::NetConfig;

    fn state(spec: GridSpec, aqi: impl Fn(CellIndex) -> f64) -> EnvState {
        EnvState::new(
            ScalarField::from_fn(spec, Channel::Aqi, aqi).unwrap(),
            ScalarField::from_fn(spec, Channel::Population, |c| 0.3 + 0.6 * ((c.x + c.y) % 2) as f64).unwrap(),
            ScalarField::zeros(spec, Channel::Traffic),
            ScalarField::zeros(spec, Channel::Industrial),
            ScalarField::from_fn(spec, Channel::Green, |c| if c.x == 7 { 0.8 } else { 0.1 }).unwrap(),
            ScalarField::zeros(spec, Channel::Booth),
        )
        .unwrap()
    }

    fn field(x: usize, y: usize) -> f64 {
        80.0 + ((x * 7 + y * 13) % 17) as f64 * 15.0
    }

    #[test]
    fn random_is_seeded_and_valid() {
        let spec = GridSpec::square(8).unwrap();
        let s = state(spec, |c| field(c.x, c.y));
        let c = ConstraintSet::default();
        let p = BoothParams::default();
        let a = random_placement(&s, &c, &p, 9).unwrap();
        assert_eq!(a, random_placement(&s, &c, &p, 9).unwrap());
        assert!(!a.is_empty());
        for e in audit_placement(&s, &a.booths, &c, &p).unwrap() {
            assert!(e.violations.is_empty(), "{e:?}");
        }
    }

    #[test]
    fn greedy_first_booth_on_unique_maximum() {
        let spec = GridSpec::square(8).unwrap();
        let s = state(spec, |c| if c == CellIndex::new(3, 4) { 480.0 } else { 120.0 });
        let g = greedy_placement(&s, &ConstraintSet::default(), &BoothParams::default()).unwrap();
        assert_eq!(g.booths[0], CellIndex::new(3, 4));
    }

    #[test]
    fn greedy_tie_goes_to_row_major_first() {
        let spec = GridSpec::square(8).unwrap();
        let s = state(spec, |c| {
            if c == CellIndex::new(2, 5) || c == CellIndex::new(5, 1) {
                450.0
            } else {
                100.0
            }
        });
        let g = greedy_placement(&s, &ConstraintSet::default(), &BoothParams::default()).unwrap();
        assert_eq!(g.booths[0], CellIndex::new(2, 5));
    }

    #[test]
    fn greedy_matches_rescan_oracle() {
        let spec = GridSpec::square(8).unwrap();
        let s = state(spec, |c| field(c.x, c.y));
        let c = ConstraintSet {
            max_booths: 3,
            ..ConstraintSet::default()
        };
        let p = BoothParams::default();
        let g = greedy_placement(&s, &c, &p).unwrap();

        let mut cur = s.clone();
        let mut placed: Vec<CellIndex> = Vec::new();
        for _ in 0..3 {
            let mut best: Option<CellIndex> = None;
            for cell in spec.cells() {
                if !is_valid_cell(&cur, cell, &placed, &c, &p).unwrap().0 {
                    continue;
                }
                if best.map_or(true, |b| cur.aqi.get(cell) > cur.aqi.get(b)) {
                    best = Some(cell);
                }
            }
            let b = best.unwrap();
            cur.aqi = apply_booth_effect(&cur.aqi, b, &p).unwrap();
            placed.push(b);
        }
        assert_eq!(g.booths, placed);
        assert_eq!(g, greedy_placement(&s, &c, &p).unwrap());
    }

    #[test]
    fn greedy_can_be_told_to_ignore_green() {
        let spec = GridSpec::square(8).unwrap();
        let s = state(spec, |c| if c.x == 7 { 490.0 } else { 100.0 });
        let c = ConstraintSet::default();
        let p = BoothParams::default();
        assert_ne!(greedy_placement(&s, &c, &p).unwrap().booths[0].x, 7);
        let loose = StrategyConfig {
            greedy_ignores_green: true,
            ..StrategyConfig::default()
        };
        assert_eq!(greedy_placement_with(&s, &c, &p, &loose).unwrap().booths[0].x, 7);
        let stat = StrategyConfig {
            greedy_mode: GreedyMode::Static,
            ..StrategyConfig::default()
        };
        assert!(!greedy_placement_with(&s, &c, &p, &stat).unwrap().is_empty());
    }

    #[test]
    fn ppo_decode_places_single_valid_cell() {
        let spec = GridSpec::square(8).unwrap();
        // only (4, 4) clears the population gate
        let mut s = state(spec, |_| 200.0);
        s.population =
            ScalarField::from_fn(spec, Channel::Population, |c| if c == CellIndex::new(4, 4) { 0.9 } else { 0.0 })
                .unwrap();
        let net = PolicyValueNet::new(NetConfig {
            height: 8,
            width: 8,
            conv: [2, 2, 2],
            hidden: 4,
            ..NetConfig::default()
        })
        .unwrap();
        let cfg = EnvConfig::default();
        let a = ppo_placement(&net, &s, &cfg).unwrap();
        assert_eq!(a.booths, vec![CellIndex::new(4, 4)]);
        assert_eq!(a, ppo_placement(&net, &s, &cfg).unwrap());

        let wrong = state(GridSpec::square(9).unwrap(), |_| 200.0);
        assert!(matches!(ppo_placement(&net, &wrong, &cfg), Err(Error::Config(_))));
    }
}
