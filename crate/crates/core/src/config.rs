//! Run configuration: one TOML file covering every stage of the pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::booth::{BoothParams, ConstraintSet};
use crate::env::{EnvConfig, EpisodeConfig, RewardWeights};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::influence::InfluenceConfig;
use crate::ingest::{SyntheticCityConfig, DEFAULT_IMPUTE_RADIUS_KM};
use crate::metrics::MetricsConfig;
use crate::neural::NetConfig;
use crate::ppo::PpoConfig;
use crate::strategies::StrategyConfig;

/// Environment variable that replaces every seed.
pub const SEED_ENV: &str = "AEROGRID_SEED";

/// Measured inputs. Without a station file the synthetic city is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub stations: Option<PathBuf>,
    pub sites: Option<PathBuf>,
    /// Auxiliary AQI grid (for example satellite-derived) fused with the
    /// interpolated station field.
    pub auxiliary: Option<PathBuf>,
    pub impute_radius_km: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            stations: None,
            sites: None,
            auxiliary: None,
            impute_radius_km: DEFAULT_IMPUTE_RADIUS_KM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSwitches {
    pub masking: bool,
    pub soft_constraints: bool,
}

impl Default for EnvSwitches {
    fn default() -> Self {
        Self {
            masking: true,
            soft_constraints: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub conv: [usize; 3],
    pub hidden: usize,
    pub init_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let n = NetConfig::default();
        Self {
            conv: n.conv,
            hidden: n.hidden,
            init_scale: n.init_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Write a checkpoint every this many episodes; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub network: u64,
    pub training: u64,
    pub placement: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            network: 42,
            training: 42,
            placement: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub data: DataConfig,
    pub synthetic: SyntheticCityConfig,
    pub influence: InfluenceConfig,
    pub booth: BoothParams,
    pub constraints: ConstraintSet,
    pub reward: RewardWeights,
    pub episode: EpisodeConfig,
    pub environment: EnvSwitches,
    pub network: NetworkConfig,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
    pub strategies: StrategyConfig,
    pub metrics: MetricsConfig,
    pub seeds: Seeds,
    /// Not part of the config hash.
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validated()
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validated(self) -> Result<Self> {
        self.grid.validated()?;
        self.synthetic.clone().validated()?;
        self.env_config().validated()?;
        self.ppo.validated()?;
        self.net_config().validated()?;
        if !(self.data.impute_radius_km > 0.0) {
            return Err(Error::Config("data.impute_radius_km must be > 0".into()));
        }
        if self.data.sites.is_some() && self.data.stations.is_none() {
            return Err(Error::Config("data.sites needs data.stations as well".into()));
        }
        Ok(self)
    }

    /// Replaces every seed, including the synthetic city's.
    pub fn set_seed(&mut self, seed: u64) {
        self.synthetic.seed = seed;
        self.seeds = Seeds {
            network: seed,
            training: seed,
            placement: seed,
        };
    }

    /// Applies `AEROGRID_SEED` if it is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
                self.set_seed(seed);
                Ok(())
            }
            Err(_) => Ok(()),
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            booth: self.booth,
            constraints: self.constraints,
            weights: self.reward,
            episode: self.episode,
            masking: self.environment.masking,
            soft_constraints: self.environment.soft_constraints,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            height: self.grid.height,
            width: self.grid.width,
            seed: self.seeds.network,
            init_scale: self.network.init_scale,
            conv: self.network.conv,
            hidden: self.network.hidden,
            ..NetConfig::default()
        }
    }

    /// SHA-256 of the configuration with the output directory left out.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}
