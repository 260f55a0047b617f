//! The placement MDP. Each step places at most one booth; an episode is a
//! complete placement plan.

use serde::{Deserialize, Serialize};

use crate::booth::{
    apply_booth_effect, haversine_km, is_valid_cell, BoothParams, ConstraintSet, ConstraintViolation,
    ViolationKind,
};
use crate::error::{Error, Result};
use crate::grid::{cell_to_geo, euclidean_cells, CellIndex, Channel, EnvState, GeoPoint, ScalarField};
use crate::AQI_MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyWeights {
    pub distance: f64,
    pub greenspace: f64,
    pub max_booths: f64,
    pub population: f64,
    pub improvement_potential: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            distance: 1.0,
            greenspace: 1.0,
            max_booths: 1.0,
            population: 1.0,
            improvement_potential: 1.0,
        }
    }
}

impl PenaltyWeights {
    pub fn weight(&self, kind: ViolationKind) -> f64 {
        match kind {
            ViolationKind::Distance => self.distance,
            ViolationKind::Greenspace => self.greenspace,
            ViolationKind::MaxBooths => self.max_booths,
            ViolationKind::Population => self.population,
            ViolationKind::ImprovementPotential => self.improvement_potential,
        }
    }

    pub fn violations(&self, kinds: &[ViolationKind]) -> Vec<ConstraintViolation> {
        kinds
            .iter()
            .map(|&kind| ConstraintViolation {
                kind,
                weight: self.weight(kind),
                flag: true,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub w_local: f64,
    pub w_global: f64,
    pub w_population: f64,
    pub w_traffic: f64,
    pub w_industrial: f64,
    pub penalties: PenaltyWeights,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_local: 0.3,
            w_global: 0.3,
            w_population: 0.2,
            w_traffic: 0.1,
            w_industrial: 0.1,
            penalties: PenaltyWeights::default(),
        }
    }
}

impl RewardWeights {
    pub fn validated(self) -> Result<Self> {
        let p = self.penalties;
        let all = [
            self.w_local,
            self.w_global,
            self.w_population,
            self.w_traffic,
            self.w_industrial,
            p.distance,
            p.greenspace,
            p.max_booths,
            p.population,
            p.improvement_potential,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("reward weights must be finite and >= 0".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub reward_scaling: f64,
    pub action_penalty: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 300,
            reward_scaling: 0.1,
            action_penalty: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub booth: BoothParams,
    pub constraints: ConstraintSet,
    pub weights: RewardWeights,
    pub episode: EpisodeConfig,
    /// Whether the agent only samples valid cells.
    pub masking: bool,
    /// When set, distance, green-space and budget violations are penalized
    /// but do not block a placement. Population, improvement and occupied
    /// cells always block.
    pub soft_constraints: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            booth: BoothParams::default(),
            constraints: ConstraintSet::default(),
            weights: RewardWeights::default(),
            episode: EpisodeConfig::default(),
            masking: true,
            soft_constraints: false,
        }
    }
}

impl EnvConfig {
    pub fn validated(self) -> Result<Self> {
        self.booth.validated()?;
        self.constraints.validated()?;
        self.weights.validated()?;
        if self.episode.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be at least 1".into()));
        }
        Ok(self)
    }

    fn blocks(&self, kind: ViolationKind) -> bool {
        !self.soft_constraints
            || matches!(kind, ViolationKind::Population | ViolationKind::ImprovementPotential)
    }
}

/// Reward components before weighting. `penalty` is already negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub local: f64,
    pub global: f64,
    pub population: f64,
    pub traffic: f64,
    pub industrial: f64,
    pub penalty: f64,
}

impl RewardBreakdown {
    /// Weighted sum including the penalty term, before scaling.
    pub fn weighted(&self, w: &RewardWeights) -> f64 {
        w.w_local * self.local
            + w.w_global * self.global
            + w.w_population * self.population
            + w.w_traffic * self.traffic
            + w.w_industrial * self.industrial
            + self.penalty
    }

    pub fn total(&self, w: &RewardWeights, ep: &EpisodeConfig) -> f64 {
        self.weighted(w) * ep.reward_scaling - ep.action_penalty
    }
}

/// Reward for a booth at `cell` that turned `before` into `after`.
/// Neighbourhood terms average over cells within `radius` (cell units) and
/// are normalized by the 500 AQI ceiling.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    before: &ScalarField,
    after: &ScalarField,
    cell: CellIndex,
    state: &EnvState,
    w: &RewardWeights,
    violations: &[ConstraintViolation],
    radius: f64,
    ep: &EpisodeConfig,
) -> Result<(f64, RewardBreakdown)> {
    before.ensure_same_spec(after)?;
    before.ensure_same_spec(&state.aqi)?;
    let spec = before.spec();
    spec.check(cell)?;

    let local = (before.get(cell) - after.get(cell)) / AQI_MAX;
    let global = (before.mean() - after.mean()) / AQI_MAX;

    let mut sums = [0.0; 3];
    let mut count = 0usize;
    for (i, c) in spec.cells().enumerate() {
        if euclidean_cells(c, cell) > radius {
            continue;
        }
        count += 1;
        let drop = before.values()[i] - after.values()[i];
        sums[0] += state.population.values()[i] * drop;
        sums[1] += state.traffic.values()[i] * drop;
        sums[2] += state.industrial.values()[i] * drop;
    }
    let norm = AQI_MAX * count as f64;
    let penalty = -violations.iter().map(ConstraintViolation::penalty).sum::<f64>();
    let breakdown = RewardBreakdown {
        local,
        global,
        population: sums[0] / norm,
        traffic: sums[1] / norm,
        industrial: sums[2] / norm,
        penalty,
    };
    Ok((breakdown.total(w, ep), breakdown))
}

/// Validity of every cell, flat row-major. Brute force over
/// [`is_valid_cell`].
pub fn action_mask(
    state: &EnvState,
    existing: &[CellIndex],
    c: &ConstraintSet,
    p: &BoothParams,
) -> Result<Vec<bool>> {
    state
        .spec()
        .cells()
        .map(|cell| is_valid_cell(state, cell, existing, c, p).map(|(ok, _)| ok))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: RewardBreakdown,
    pub placed: bool,
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub action: usize,
    pub x: usize,
    pub y: usize,
    pub placed: bool,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub mean_aqi: f64,
}

/// Scalar outcome of one step, as seen by a learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub done: bool,
}

/// What the trainer needs from an environment. Observations are
/// channel-major `channels x height x width`; actions are flat cell indices.
pub trait Environment {
    fn obs_shape(&self) -> (usize, usize, usize);
    fn reset(&mut self, seed: u64);
    fn observation(&self) -> Vec<f64>;
    /// `true` marks an action the agent may take.
    fn action_mask(&self) -> Vec<bool>;
    fn step(&mut self, action: usize) -> Result<Transition>;
    fn is_done(&self) -> bool;
    /// Overall AQI improvement of the episode so far, in percent.
    fn aqi_improvement_pct(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct BoothEnv {
    base: EnvState,
    cfg: EnvConfig,
    state: EnvState,
    placement: Vec<CellIndex>,
    steps: usize,
    done: bool,
    seed: u64,
    centres: Vec<GeoPoint>,
    /// Cells within `d_min_km` of some booth, or occupied.
    near_booth: Vec<bool>,
    trace: Vec<TraceRecord>,
}

impl BoothEnv {
    pub fn new(base: EnvState, cfg: EnvConfig) -> Result<Self> {
        let cfg = cfg.validated()?;
        let spec = *base.spec();
        let centres = spec.cells().map(|c| cell_to_geo(&spec, c)).collect::<Result<_>>()?;
        let mut env = Self {
            state: base.clone(),
            base,
            cfg,
            placement: Vec::new(),
            steps: 0,
            done: false,
            seed: 0,
            centres,
            near_booth: vec![false; spec.len()],
            trace: Vec::new(),
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn base(&self) -> &EnvState {
        &self.base
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn placement(&self) -> &[CellIndex] {
        &self.placement
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// Restores the baseline AQI and clears every booth.
    pub fn reset(&mut self, seed: u64) -> &EnvState {
        self.seed = seed;
        self.state = self.base.clone();
        self.state.booth = ScalarField::zeros(*self.base.spec(), Channel::Booth);
        self.placement.clear();
        self.steps = 0;
        self.near_booth.iter_mut().for_each(|b| *b = false);
        self.trace.clear();
        self.done = self.mask().iter().all(|m| !m);
        &self.state
    }

    fn violations_at(&self, flat: usize) -> Vec<ViolationKind> {
        let cell = self.base.spec().cell_at(flat);
        let c = &self.cfg.constraints;
        let mut v = Vec::new();
        if self.near_booth[flat] {
            v.push(ViolationKind::Distance);
        }
        if self.state.green.values()[flat] > c.green_threshold {
            v.push(ViolationKind::Greenspace);
        }
        if self.placement.len() >= c.max_booths {
            v.push(ViolationKind::MaxBooths);
        }
        if self.state.population.values()[flat] <= c.rho_min {
            v.push(ViolationKind::Population);
        }
        let aqi = self.state.aqi.get(cell);
        if aqi - aqi * self.cfg.booth.factor(0.0) < c.delta_aqi_min {
            v.push(ViolationKind::ImprovementPotential);
        }
        v
    }

    fn blocked(&self, flat: usize, violations: &[ViolationKind]) -> bool {
        let occupied = self.state.booth.values()[flat] == 1.0;
        occupied || violations.iter().any(|&k| self.cfg.blocks(k))
    }

    /// Cells where a placement would be accepted.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.base.spec().len())
            .map(|i| !self.blocked(i, &self.violations_at(i)))
            .collect()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let (reward, info, placed) = self.advance(action)?;
        Ok(StepResult {
            next_state: self.state.clone(),
            reward,
            done: self.done,
            info,
            placed,
        })
    }

    fn advance(&mut self, action: usize) -> Result<(f64, RewardBreakdown, bool)> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let spec = *self.base.spec();
        if action >= spec.len() {
            return Err(Error::InvalidAction {
                action,
                size: spec.len(),
            });
        }
        let cell = spec.cell_at(action);
        let kinds = self.violations_at(action);
        let violations = self.cfg.weights.penalties.violations(&kinds);
        let ep = self.cfg.episode;
        let placed = !self.blocked(action, &kinds);

        let (reward, info) = if placed {
            let before = self.state.aqi.clone();
            let after = apply_booth_effect(&before, cell, &self.cfg.booth)?;
            let out = compute_reward(
                &before,
                &after,
                cell,
                &self.state,
                &self.cfg.weights,
                &violations,
                self.cfg.booth.influence_radius(),
                &ep,
            )?;
            self.state.aqi = after;
            let mut booth = self.state.booth.values().to_vec();
            booth[action] = 1.0;
            self.state.booth = self.state.booth.with_values(booth)?;
            self.placement.push(cell);
            let here = self.centres[action];
            let d_min = self.cfg.constraints.d_min_km;
            for (i, near) in self.near_booth.iter_mut().enumerate() {
                if i == action || haversine_km(here, self.centres[i]) < d_min {
                    *near = true;
                }
            }
            out
        } else {
            let info = RewardBreakdown {
                penalty: -violations.iter().map(ConstraintViolation::penalty).sum::<f64>(),
                ..RewardBreakdown::default()
            };
            (info.total(&self.cfg.weights, &ep), info)
        };

        self.steps += 1;
        self.done = self.placement.len() >= self.cfg.constraints.max_booths
            || self.steps >= ep.max_steps
            || self.mask().iter().all(|m| !m);
        self.trace.push(TraceRecord {
            step: self.steps - 1,
            action,
            x: cell.x,
            y: cell.y,
            placed,
            reward,
            breakdown: info,
            mean_aqi: self.state.aqi.mean(),
        });
        Ok((reward, info, placed))
    }

    /// The trace as JSON lines.
    pub fn trace_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.trace {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Cumulative reward of replaying a placement plan from a fresh episode.
    pub fn replay_reward(&mut self, booths: &[CellIndex]) -> Result<f64> {
        self.reset(self.seed);
        let spec = *self.base.spec();
        let mut total = 0.0;
        for &b in booths {
            if self.done {
                break;
            }
            total += self.advance(spec.flat(b))?.0;
        }
        Ok(total)
    }
}

impl Environment for BoothEnv {
    fn obs_shape(&self) -> (usize, usize, usize) {
        let spec = self.base.spec();
        (6, spec.height, spec.width)
    }

    fn reset(&mut self, seed: u64) {
        BoothEnv::reset(self, seed);
    }

    fn observation(&self) -> Vec<f64> {
        self.state.observation()
    }

    fn action_mask(&self) -> Vec<bool> {
        if self.cfg.masking {
            self.mask()
        } else {
            vec![true; self.base.spec().len()]
        }
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let (reward, _, _) = self.advance(action)?;
        Ok(Transition {
            reward,
            done: self.done,
        })
    }

    fn is_done(&self) -> bool {
        BoothEnv::is_done(self)
    }

    fn aqi_improvement_pct(&self) -> Option<f64> {
        crate::metrics::overall_improvement(&self.base.aqi, &self.state.aqi).ok()
    }
}

/// One-step bandit on an 8x8 board: only two cells are selectable, one
/// paying +1 and the other -1.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub good: usize,
    pub bad: usize,
    done: bool,
}

impl BanditEnv {
    pub const SIZE: usize = 8;

    pub fn new(good: usize, bad: usize) -> Result<Self> {
        let n = Self::SIZE * Self::SIZE;
        if good == bad || good >= n || bad >= n {
            return Err(Error::InvalidParameter(format!(
                "bandit cells {good} and {bad} must be distinct and below {n}"
            )));
        }
        Ok(Self { good, bad, done: false })
    }
}

impl Environment for BanditEnv {
    fn obs_shape(&self) -> (usize, usize, usize) {
        (6, Self::SIZE, Self::SIZE)
    }

    fn reset(&mut self, _seed: u64) {
        self.done = false;
    }

    fn observation(&self) -> Vec<f64> {
        vec![0.5; 6 * Self::SIZE * Self::SIZE]
    }

    fn action_mask(&self) -> Vec<bool> {
        let mut m = vec![false; Self::SIZE * Self::SIZE];
        m[self.good] = true;
        m[self.bad] = true;
        m
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.done = true;
        let reward = if action == self.good { 1.0 } else { -1.0 };
        Ok(Transition { reward, done: true })
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
