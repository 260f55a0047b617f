//! The CLI's commands as library functions. Every command writes into an
//! output directory and records what it read and wrote in
//! `manifest.json`.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::booth::{apply_all, Placement, Strategy};
use crate::config::RunConfig;
use crate::env::BoothEnv;
use crate::error::{Error, Result};
use crate::grid::{Channel, EnvState, GridSpec, ScalarField};
use crate::influence::build_state;
use crate::ingest::{
    build_aqi_field, fuse_max, generate_synthetic_city, idw_interpolate, impute_missing, average_station_aqi,
    read_sites, read_stations, write_sites, write_stations, FeatureSite, StationRecord,
};
use crate::metrics::{comparison_csv, comparison_table_csv, evaluate, normalized_comparison, normalized_csv, EvaluationReport};
use crate::neural::{load_checkpoint, save_checkpoint, sidecar_path, PolicyValueNet};
use crate::plot;
use crate::ppo::{train_with, TrainHooks, TrainLog};
use crate::strategies::place;

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "policy.agnn";
pub const TRAINING_LOG: &str = "training_log.csv";

pub fn channel_file(channel: Channel) -> String {
    format!("{}.csv", channel.name())
}

pub fn placement_file(strategy: Strategy) -> String {
    format!("placement_{}.json", strategy.name())
}

pub fn report_file(strategy: Strategy) -> String {
    format!("report_{}.json", strategy.name())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `path` relative to `base` when both resolve on disk, else `path` as given.
fn relative_to(path: &Path, base: &Path) -> String {
    let (Ok(p), Ok(b)) = (path.canonicalize(), base.canonicalize()) else {
        return path.display().to_string();
    };
    let pc: Vec<Component> = p.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    let mut rel = PathBuf::new();
    for _ in common..bc.len() {
        rel.push("..");
    }
    for c in &pc[common..] {
        rel.push(c.as_os_str());
    }
    rel.to_string_lossy().replace('\\', "/")
}

/// Collects the files a command touched and writes the manifest.
struct Recorder<'a> {
    out: &'a Path,
    cfg: &'a RunConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Recorder<'a> {
    fn new(out: &'a Path, cfg: &'a RunConfig) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            out,
            cfg,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn existing(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    /// Merges this command's entries into the directory's manifest.
    fn finish(self) -> Result<PathBuf> {
        let path = self.out.join(MANIFEST);
        let mut manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        manifest.config_hash = self.cfg.hash()?;
        let merge = |list: &mut Vec<FileHash>, files: &[PathBuf]| -> Result<()> {
            for f in files {
                let entry = FileHash {
                    path: relative_to(f, self.out),
                    sha256: file_sha256(f)?,
                };
                match list.iter_mut().find(|e| e.path == entry.path) {
                    Some(e) => *e = entry,
                    None => list.push(entry),
                }
            }
            list.sort_by(|a, b| a.path.cmp(&b.path));
            Ok(())
        };
        merge(&mut manifest.inputs, &self.inputs)?;
        merge(&mut manifest.outputs, &self.outputs)?;
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn open_input(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    File::open(path).map_err(|e| Error::io(path, e))
}

fn read_field(path: &Path, spec: &GridSpec) -> Result<ScalarField> {
    ScalarField::read_csv(BufReader::new(open_input(path)?), spec, path)
}

/// Raw inputs of the ingestion stage.
pub struct RawInputs {
    pub stations: Vec<StationRecord>,
    pub sites: Vec<FeatureSite>,
    pub auxiliary: ScalarField,
    pub files: Vec<PathBuf>,
}

/// Reads the configured station, site and auxiliary files, or generates
/// the synthetic city when no station file is configured.
pub fn load_raw_inputs(cfg: &RunConfig) -> Result<RawInputs> {
    let spec = cfg.grid.validated()?;
    let Some(stations_path) = &cfg.data.stations else {
        let city = generate_synthetic_city(&cfg.synthetic, &spec)?;
        return Ok(RawInputs {
            stations: city.stations,
            sites: city.sites,
            auxiliary: city.auxiliary,
            files: Vec::new(),
        });
    };
    let mut files = vec![stations_path.clone()];
    let stations = read_stations(open_input(stations_path)?, stations_path)?;
    let sites = match &cfg.data.sites {
        Some(p) => {
            files.push(p.clone());
            read_sites(open_input(p)?, p)?
        }
        None => Vec::new(),
    };
    let auxiliary = match &cfg.data.auxiliary {
        Some(p) => {
            files.push(p.clone());
            read_field(p, &spec)?.relabel(Channel::Aqi)?
        }
        None => ScalarField::zeros(spec, Channel::Aqi),
    };
    Ok(RawInputs {
        stations,
        sites,
        auxiliary,
        files,
    })
}

/// Builds the six-channel state from raw inputs.
pub fn build_city(cfg: &RunConfig, raw: &RawInputs) -> Result<EnvState> {
    let spec = cfg.grid.validated()?;
    let aqi = build_aqi_field(&raw.stations, &raw.auxiliary, &spec, cfg.data.impute_radius_km)?;
    build_state(aqi, &raw.sites, &cfg.influence)
}

/// Writes the synthetic city's raw station, site and auxiliary files.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg.grid.validated()?;
    let city = generate_synthetic_city(&cfg.synthetic, &spec)?;
    let mut rec = Recorder::new(out, cfg)?;
    let mut buf = Vec::new();
    write_stations(&city.stations, &mut buf)?;
    rec.write("stations.csv", &buf)?;
    buf.clear();
    write_sites(&city.sites, &mut buf)?;
    rec.write("sites.csv", &buf)?;
    rec.write("auxiliary_aqi.csv", city.auxiliary.to_csv_string())?;
    rec.write("run_config.toml", cfg.to_toml()?)?;
    let written = rec.outputs.clone();
    rec.finish()?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub stations: usize,
    pub sites: usize,
    pub mean_aqi: f64,
    pub max_aqi: f64,
    pub self_check: Option<bool>,
}

/// Builds every channel and writes one CSV per channel. With `self_check`
/// the fused AQI field is re-verified to dominate both of its inputs.
pub fn cmd_ingest(cfg: &RunConfig, out: &Path, self_check: bool) -> Result<IngestSummary> {
    let spec = cfg.grid.validated()?;
    let raw = load_raw_inputs(cfg)?;
    let state = build_city(cfg, &raw)?;
    let mut rec = Recorder::new(out, cfg)?;
    for f in &raw.files {
        rec.input(f);
    }

    let checked = if self_check {
        let imputed = impute_missing(&raw.stations, cfg.data.impute_radius_km)?;
        let points = imputed
            .iter()
            .map(|s| Ok((s.location, average_station_aqi(s)?)))
            .collect::<Result<Vec<_>>>()?;
        let idw = idw_interpolate(&points, &spec)?;
        let fused = fuse_max(&idw, &raw.auxiliary)?;
        let dominates = state
            .aqi
            .values()
            .iter()
            .zip(idw.values().iter().zip(raw.auxiliary.values()))
            .all(|(f, (a, b))| f >= a && f >= b);
        if !dominates || fused != state.aqi {
            return Err(Error::SelfCheck("fused AQI field does not dominate its inputs".into()));
        }
        Some(true)
    } else {
        None
    };

    for field in state.fields() {
        rec.write(&channel_file(field.channel()), field.to_csv_string())?;
    }
    let summary = IngestSummary {
        stations: raw.stations.len(),
        sites: raw.sites.len(),
        mean_aqi: state.aqi.mean(),
        max_aqi: state.aqi.max(),
        self_check: checked,
    };
    rec.write("ingest_summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    rec.write("run_config.toml", cfg.to_toml()?)?;
    rec.finish()?;
    Ok(summary)
}

/// Reads the six channel CSVs written by [`cmd_ingest`].
pub fn load_channels(dir: &Path, spec: &GridSpec) -> Result<(EnvState, Vec<PathBuf>)> {
    let mut fields = Vec::with_capacity(6);
    let mut files = Vec::with_capacity(6);
    for channel in Channel::ALL {
        let path = dir.join(channel_file(channel));
        let field = read_field(&path, spec)?;
        if field.channel() != channel {
            return Err(Error::Parse {
                path,
                line: 1,
                message: format!("expected the {channel} channel, found {}", field.channel()),
            });
        }
        fields.push(field);
        files.push(path);
    }
    let mut it = fields.into_iter();
    let mut next = || it.next().expect("six channels");
    let state = EnvState::new(next(), next(), next(), next(), next(), next())?;
    Ok((state, files))
}

/// Trains a policy on the ingested city and writes the checkpoint, the
/// per-episode log and its curves.
pub fn cmd_train(cfg: &RunConfig, channels: &Path, out: &Path) -> Result<TrainLog> {
    let spec = cfg.grid.validated()?;
    let (state, files) = load_channels(channels, &spec)?;
    let mut rec = Recorder::new(out, cfg)?;
    for f in &files {
        rec.input(f);
    }
    let mut env = BoothEnv::new(state, cfg.env_config())?;
    let mut net = PolicyValueNet::new(cfg.net_config())?;

    let every = cfg.train.checkpoint_every;
    let mut periodic: Vec<PathBuf> = Vec::new();
    let hooks = TrainHooks {
        snapshot_dir: Some(out.to_path_buf()),
        on_episode: Box::new(|e, net| {
            if every > 0 && (e.episode + 1) % every == 0 {
                let dir = out.join("checkpoints");
                fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
                let (bin, side) = save_checkpoint(net, &dir.join(format!("policy_ep{}.agnn", e.episode + 1)))?;
                periodic.push(bin);
                periodic.push(side);
            }
            Ok(())
        }),
    };
    let log = train_with(&mut env, &mut net, &cfg.ppo, cfg.seeds.training, hooks)?;
    for p in periodic {
        rec.existing(p);
    }

    let (bin, side) = save_checkpoint(&net, &out.join(CHECKPOINT))?;
    rec.existing(bin);
    rec.existing(side);
    rec.write(TRAINING_LOG, log.to_csv())?;
    let col = |f: fn(&crate::ppo::EpisodeLog) -> f64| log.episodes.iter().map(f).collect::<Vec<f64>>();
    rec.write(
        "reward_curve.svg",
        plot::line_chart("Episode reward", "episode", &[("reward", col(|e| e.reward))]),
    )?;
    rec.write(
        "aqi_improvement_curve.svg",
        plot::line_chart(
            "AQI improvement (%)",
            "episode",
            &[("improvement", col(|e| e.aqi_improvement_pct.unwrap_or(f64::NAN)))],
        ),
    )?;
    rec.write(
        "loss_curve.svg",
        plot::line_chart(
            "Losses",
            "episode",
            &[("policy", col(|e| e.policy_loss)), ("value", col(|e| e.value_loss))],
        ),
    )?;
    rec.write(
        "entropy_curve.svg",
        plot::line_chart("Policy entropy", "episode", &[("entropy", col(|e| e.entropy))]),
    )?;
    rec.write("run_config.toml", cfg.to_toml()?)?;
    rec.finish()?;
    Ok(log)
}

/// Places booths with one strategy and writes the plan, the improved AQI
/// field, a step trace and a heatmap.
pub fn cmd_place(
    cfg: &RunConfig,
    channels: &Path,
    strategy: Strategy,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<Placement> {
    let spec = cfg.grid.validated()?;
    let (state, files) = load_channels(channels, &spec)?;
    let net = match (strategy, checkpoint) {
        (Strategy::Ppo, None) => {
            return Err(Error::Config("the ppo strategy needs --checkpoint".into()));
        }
        (Strategy::Ppo, Some(path)) => Some(load_checkpoint(path)?),
        _ => None,
    };
    let mut rec = Recorder::new(out, cfg)?;
    for f in &files {
        rec.input(f);
    }
    if let (Some(path), true) = (checkpoint, net.is_some()) {
        rec.input(path);
        rec.input(&sidecar_path(path));
    }

    let env_cfg = cfg.env_config();
    let placement = place(
        strategy,
        &state,
        &env_cfg,
        &cfg.strategies,
        cfg.seeds.placement,
        net.as_ref(),
    )?;
    let after = apply_all(&state.aqi, &placement.booths, &cfg.booth)?;
    let mut env = BoothEnv::new(state.clone(), env_cfg)?;
    env.replay_reward(&placement.booths)?;

    let name = strategy.name();
    rec.write(&placement_file(strategy), placement.to_json(&spec)? + "\n")?;
    rec.write(&format!("aqi_after_{name}.csv"), after.to_csv_string())?;
    rec.write(&format!("trace_{name}.jsonl"), env.trace_jsonl()?)?;
    rec.write(
        &format!("heatmap_{name}.svg"),
        plot::heatmap(&format!("AQI after {name} placement"), &after, &placement.booths),
    )?;
    rec.finish()?;
    Ok(placement)
}

pub fn read_placement(path: &Path, spec: &GridSpec) -> Result<Placement> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Placement::from_json(&text, spec).map_err(|e| match e {
        Error::Json(j) => Error::Parse {
            path: path.to_path_buf(),
            line: j.line() as u64,
            message: j.to_string(),
        },
        other => other,
    })
}

fn evaluate_placement(cfg: &RunConfig, state: &EnvState, placement: &Placement) -> Result<EvaluationReport> {
    let after = apply_all(&state.aqi, &placement.booths, &cfg.booth)?;
    evaluate(
        &state.aqi,
        &after,
        state,
        placement,
        &cfg.constraints,
        &cfg.booth,
        &cfg.metrics,
    )
}

/// Scores one placement file.
pub fn cmd_evaluate(cfg: &RunConfig, channels: &Path, placement: &Path, out: &Path) -> Result<EvaluationReport> {
    let spec = cfg.grid.validated()?;
    let (state, files) = load_channels(channels, &spec)?;
    let plan = read_placement(placement, &spec)?;
    let report = evaluate_placement(cfg, &state, &plan)?;
    let mut rec = Recorder::new(out, cfg)?;
    for f in &files {
        rec.input(f);
    }
    rec.input(placement);
    rec.write(&report_file(plan.strategy), report.to_json()? + "\n")?;
    rec.finish()?;
    Ok(report)
}

/// Scores all three strategies' placements side by side.
pub fn cmd_compare(cfg: &RunConfig, channels: &Path, placements: &Path, out: &Path) -> Result<Vec<EvaluationReport>> {
    let spec = cfg.grid.validated()?;
    let missing: Vec<String> = Strategy::ALL
        .iter()
        .filter(|&&s| !placements.join(placement_file(s)).exists())
        .map(|s| s.name().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "no placement for {} in {} (run `place` for each strategy first)",
            missing.join(", "),
            placements.display()
        )));
    }
    let (state, files) = load_channels(channels, &spec)?;
    let mut rec = Recorder::new(out, cfg)?;
    for f in &files {
        rec.input(f);
    }
    let mut reports = Vec::with_capacity(3);
    for s in Strategy::ALL {
        let path = placements.join(placement_file(s));
        let plan = read_placement(&path, &spec)?;
        if plan.strategy != s {
            return Err(Error::Config(format!(
                "{} holds a {} placement",
                path.display(),
                plan.strategy
            )));
        }
        rec.input(&path);
        let report = evaluate_placement(cfg, &state, &plan)?;
        rec.write(&report_file(s), report.to_json()? + "\n")?;
        reports.push(report);
    }
    rec.write("comparison.csv", comparison_csv(&reports)?)?;
    rec.write("comparison_table.csv", comparison_table_csv(&reports)?)?;
    rec.write("comparison_normalized.csv", normalized_csv(&reports)?)?;
    let (axes, rows) = normalized_comparison(&reports);
    let named: Vec<(String, Vec<f64>)> = reports.iter().map(|r| r.strategy.clone()).zip(rows).collect();
    rec.write("radar.svg", plot::radar("Normalized strategy comparison", &axes, &named))?;
    rec.finish()?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.grid.width = 12;
        cfg.grid.height = 12;
        cfg.constraints.max_booths = 5;
        cfg
    }

    #[test]
    fn ingest_writes_all_channels_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let summary = cmd_ingest(&cfg, dir.path(), true).unwrap();
        assert_eq!(summary.self_check, Some(true));
        let (state, _) = load_channels(dir.path(), &cfg.grid).unwrap();
        let raw = load_raw_inputs(&cfg).unwrap();
        assert_eq!(state, build_city(&cfg, &raw).unwrap());
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(manifest.config_hash, cfg.hash().unwrap());
        assert!(manifest.outputs.iter().any(|f| f.path == "aqi.csv"));
    }

    #[test]
    fn synth_then_ingest_from_files_matches_direct_synthetic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_synth(&cfg, dir.path()).unwrap();
        let mut from_files = cfg.clone();
        from_files.data.stations = Some(dir.path().join("stations.csv"));
        from_files.data.sites = Some(dir.path().join("sites.csv"));
        from_files.data.auxiliary = Some(dir.path().join("auxiliary_aqi.csv"));
        let a = build_city(&cfg, &load_raw_inputs(&cfg).unwrap()).unwrap();
        let b = build_city(&from_files, &load_raw_inputs(&from_files).unwrap()).unwrap();
        for (x, y) in a.fields().iter().zip(b.fields()) {
            for (u, v) in x.values().iter().zip(y.values()) {
                assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{} {u} {v}", x.channel());
            }
        }
    }

    #[test]
    fn compare_names_missing_strategies() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_ingest(&cfg, dir.path(), false).unwrap();
        cmd_place(&cfg, dir.path(), Strategy::Random, None, dir.path()).unwrap();
        let err = cmd_compare(&cfg, dir.path(), dir.path(), dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("greedy") && msg.contains("ppo") && !msg.contains("random,"));
        assert!(err.is_usage());
    }

    #[test]
    fn place_writes_improved_field_matching_apply_all() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_ingest(&cfg, dir.path(), false).unwrap();
        let plan = cmd_place(&cfg, dir.path(), Strategy::Greedy, None, dir.path()).unwrap();
        let (state, _) = load_channels(dir.path(), &cfg.grid).unwrap();
        let after = read_field(&dir.path().join("aqi_after_greedy.csv"), &cfg.grid).unwrap();
        assert_eq!(after, apply_all(&state.aqi, &plan.booths, &cfg.booth).unwrap());
        assert!(matches!(
            cmd_place(&cfg, dir.path(), Strategy::Ppo, None, dir.path()),
            Err(Error::Config(_))
        ));
    }
}
