//! Experiment driver behind the `coopsched` command-line tool.
//!
//! `gen` writes a dataset, `run` replays every stored scene under each
//! policy, detection range and seed, `score` re-scores the detection logs a
//! run left behind when `log_detections` is set, and `bench-scaling` times the parallel engine.
//!
//! Output layout under the configured output directory:
//!
//! ```text
//! dataset/                      see `dataio`
//! results/results.json          every cell with full provenance
//! results/results.csv           one row per cell, then mean and std rows
//! results/results.md            policy x range matrix
//! results/logs/<cell>.*.jsonl   decisions; messages and detections
//!                               when enabled
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{
    payload_size, run_handshake, BandwidthBudget, CommsError, LogRecord, Lossless, Message,
    MessageLog, Stage, CONTROL_MESSAGE_BYTES, FRAME_BUDGET_BYTES,
};
use crate::dataio::{
    import_scene, init_dataset, read_manifest, DataError, GENERATOR_VERSION, MANIFEST_FILE,
};
use crate::engine::{
    filter_scenes, generate_scene, run_parallel, AgentCounts, EngineError, ObjectCounts,
    ScenarioConfig, SceneFilter, SceneKind,
};
use crate::metrics::{
    detection_seed, score, DetectionResult, MetricsReport, NoiseModel, ScoreConfig, CSV_HEADER,
};
use crate::scheduling::{schedule, update_state, Policy, PolicyState};
use crate::sensing::{VisibilityIndex, VisibilityModel};
use crate::world::{build_sample, AgentId, AgentKind, Frame, ObjectId, Sample, Scene};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    DataError,
    EngineError,
    crate::sensing::SensingError,
    crate::scheduling::SchedulingError,
    crate::metrics::MetricsError,
    crate::world::WorldError
);

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Runtime(format!("{}: {e}", path.display()))
}

fn default_repeat() -> usize {
    1
}

fn default_ranges() -> Vec<f64> {
    vec![50.0, 100.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub scenario: ScenarioConfig,
    /// Copies generated with seeds `seed, seed + 1, ...`.
    #[serde(default = "default_repeat")]
    pub repeat: usize,
}

fn default_counts() -> Vec<usize> {
    vec![2, 4, 8, 16, 32]
}

fn default_scaling_repeats() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSettings {
    #[serde(default = "default_counts")]
    pub agent_counts: Vec<usize>,
    #[serde(default = "default_scaling_repeats")]
    pub repeats: usize,
}

impl Default for ScalingSettings {
    fn default() -> Self {
        Self {
            agent_counts: default_counts(),
            repeats: default_scaling_repeats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Added to every scenario seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenarios: Vec<ScenarioEntry>,
    #[serde(default)]
    pub filter: SceneFilter,
    /// Minimum mean full-communication coverage recall a scene must reach.
    #[serde(default)]
    pub min_reward: Option<f64>,
    #[serde(default)]
    pub model: VisibilityModel,
    #[serde(default)]
    pub noise: NoiseModel,
    pub policies: Vec<Policy>,
    #[serde(default = "default_ranges")]
    pub ranges: Vec<f64>,
    /// Run seeds driving random policies and detection noise.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub scaling: ScalingSettings,
    /// Also write per-sample detections, which `score` needs.
    #[serde(default)]
    pub log_detections: bool,
    /// Also write the handshake and share message log of every cell.
    #[serde(default)]
    pub log_messages: bool,
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending JSON path.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            HarnessError::Config(format!("at `{path}`: {inner}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.policies.is_empty() {
            return bad("at `policies`: at least one policy is required".into());
        }
        for (i, p) in self.policies.iter().enumerate() {
            if let Err(e) = p.validate() {
                return bad(format!("at `policies[{i}]`: {e}"));
            }
        }
        let keys: BTreeSet<String> = self.policies.iter().map(Policy::key).collect();
        if keys.len() != self.policies.len() {
            return bad("at `policies`: duplicate policy".into());
        }
        if self.ranges.is_empty() {
            return bad("at `ranges`: at least one detection range is required".into());
        }
        for (i, r) in self.ranges.iter().enumerate() {
            if !(r.is_finite() && *r > 0.0) {
                return bad(format!("at `ranges[{i}]`: range must be > 0, got {r}"));
            }
        }
        if self.seeds.is_empty() {
            return bad("at `seeds`: at least one seed is required".into());
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            if let Err(e) = s.scenario.validate() {
                return bad(format!("at `scenarios[{i}].scenario`: {e}"));
            }
        }
        if let Err(e) = self.model.validate() {
            return bad(format!("at `model`: {e}"));
        }
        if let Err(e) = self.noise.validate() {
            return bad(format!("at `noise`: {e}"));
        }
        if self.min_reward.is_some_and(|r| !r.is_finite()) {
            return bad("at `min_reward`: must be finite".into());
        }
        if self.workers == 0 {
            return bad("at `workers`: must be >= 1".into());
        }
        let counts = &self.scaling.agent_counts;
        if counts.is_empty() || counts[0] == 0 || counts.windows(2).any(|w| w[0] >= w[1]) {
            return bad(
                "at `scaling.agent_counts`: must be nonempty, positive and strictly ascending"
                    .into(),
            );
        }
        if self.scaling.repeats == 0 {
            return bad("at `scaling.repeats`: must be >= 1".into());
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir.join("dataset")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.output_dir.join("results")
    }

    /// Concrete scenario configs in generation order.
    pub fn scene_configs(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for entry in &self.scenarios {
            for j in 0..entry.repeat {
                let mut c = entry.scenario;
                c.seed = self.seed.wrapping_add(c.seed).wrapping_add(j as u64);
                out.push(c);
            }
        }
        out
    }
}

/// Maps `f` over `items` on `workers` threads; output order follows input.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every item mapped"))
        .collect()
}

fn mix(a: u64, b: u64) -> u64 {
    let mut h = (a ^ b.rotate_left(32)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Agents whose perception is evaluated: the controlled CAVs.
pub fn egos(frame: &Frame) -> Vec<AgentId> {
    let mut ids: Vec<AgentId> = frame
        .agents
        .iter()
        .filter(|a| a.kind == AgentKind::ControlledCav)
        .map(|a| a.id)
        .collect();
    ids.sort();
    ids
}

/// Mean fraction of in-range objects covered when every ego fuses every
/// other sensored agent. Scenes without egos score 0.
pub fn full_coverage_reward(scene: &Scene, model: &VisibilityModel) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for frame in &scene.frames {
        let index = VisibilityIndex::build(frame, model).expect("model validated");
        let all = frame.sensored_ids();
        for ego in egos(frame) {
            let valid = &index.in_range[&ego];
            let covered = index.fused_coverage(ego, &all).expect("ego is sensored");
            sum += if valid.is_empty() {
                1.0
            } else {
                covered.len() as f64 / valid.len() as f64
            };
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub generated: usize,
    pub scenes: usize,
    pub frames: usize,
    pub samples: usize,
    pub boxes: usize,
}

fn prepare_dataset_dir(root: &Path) -> Result<(), HarnessError> {
    if !root.exists() {
        return Ok(());
    }
    if root.join(MANIFEST_FILE).is_file() {
        return fs::remove_dir_all(root).map_err(io_err(root));
    }
    let mut entries = fs::read_dir(root).map_err(io_err(root))?;
    if entries.next().is_some() {
        return Err(HarnessError::Config(format!(
            "{} exists, is not empty and holds no dataset",
            root.display()
        )));
    }
    Ok(())
}

/// Generates, filters and exports every configured scene.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<GenSummary, HarnessError> {
    let configs = cfg.scene_configs();
    let ids: BTreeSet<String> = configs.iter().map(ScenarioConfig::scene_id).collect();
    if ids.len() != configs.len() {
        return Err(HarnessError::Config(
            "at `scenarios`: two scenarios produce the same scene".into(),
        ));
    }
    let root = cfg.dataset_dir();
    prepare_dataset_dir(&root)?;
    init_dataset(&root, Some(cfg.seed))?;

    let generated = parallel_map(&configs, cfg.workers, generate_scene)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let n = generated.len();
    let model = cfg.model;
    let reward = |s: &Scene| full_coverage_reward(s, &model);
    let kept = filter_scenes(generated, &cfg.filter, cfg.min_reward.map(|t| (reward, t)));
    parallel_map(&kept, cfg.workers, |s| {
        crate::dataio::export_scene(s, &model, &root)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let m = read_manifest(&root)?;
    Ok(GenSummary {
        generated: n,
        scenes: m.scenes.len(),
        frames: m.total_frames(),
        samples: m.total_samples(),
        boxes: m.total_boxes(),
    })
}

/// One ego's scheduling step in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub scene_id: String,
    pub frame: u32,
    pub ego: AgentId,
    pub chosen: Vec<AgentId>,
    pub benchmarks: Vec<(AgentId, u32)>,
    /// Cooperators whose share fit in the budget.
    pub accepted: Vec<AgentId>,
    pub refused: Vec<AgentId>,
    pub bytes: u64,
    /// Fused in-range objects.
    pub covered: Vec<ObjectId>,
    pub in_range: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub scene_id: String,
    pub frames: usize,
    pub ego_frames: usize,
    pub covered: usize,
    pub in_range: usize,
    pub bytes_total: u64,
    pub max_ego_frame_bytes: u64,
    pub refused_shares: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneReplay {
    pub outcome: SceneOutcome,
    pub decisions: Vec<DecisionRecord>,
    pub messages: Vec<LogRecord>,
    pub detections: Vec<DetectionResult>,
    pub samples: Vec<Sample>,
}

const POLICY_SALT: u64 = 0x706f_6c69_6379;
const DETECTION_SALT: u64 = 0x6465_7465_6374;

/// Policy-independent per-frame data of one scene at one detection range.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCache {
    pub range: f64,
    pub indices: Vec<VisibilityIndex>,
    /// Share size of every sensored agent, per frame.
    pub payloads: Vec<BTreeMap<AgentId, u64>>,
}

impl SceneCache {
    pub fn build(scene: &Scene, model: &VisibilityModel, range: f64) -> Result<Self, HarnessError> {
        let model = VisibilityModel { range, ..*model };
        model.validate()?;
        let mut indices = Vec::with_capacity(scene.frames.len());
        let mut payloads = Vec::with_capacity(scene.frames.len());
        for frame in &scene.frames {
            indices.push(VisibilityIndex::build(frame, &model)?);
            payloads.push(
                frame
                    .sensored_agents()
                    .map(|a| (a.id, payload_size(a, frame)))
                    .collect(),
            );
        }
        Ok(Self {
            range,
            indices,
            payloads,
        })
    }
}

/// Replays one scene frame by frame under `policy` for every ego.
pub fn replay_scene(
    scene: &Scene,
    policy: Policy,
    range: f64,
    seed: u64,
    model: &VisibilityModel,
    noise: &NoiseModel,
) -> Result<SceneReplay, HarnessError> {
    let cache = SceneCache::build(scene, model, range)?;
    replay_cached(scene, &cache, policy, seed, noise)
}

/// [`replay_scene`] over a prebuilt cache.
pub fn replay_cached(
    scene: &Scene,
    cache: &SceneCache,
    policy: Policy,
    seed: u64,
    noise: &NoiseModel,
) -> Result<SceneReplay, HarnessError> {
    if cache.indices.len() != scene.frames.len() {
        return Err(HarnessError::Runtime(format!(
            "cache does not match scene {}",
            scene.id
        )));
    }
    let range = cache.range;
    let scene_seed = mix(seed, fnv(&scene.id));
    let log = MessageLog::new();
    let mut states: BTreeMap<AgentId, PolicyState> = BTreeMap::new();
    let mut prev: Option<&VisibilityIndex> = None;
    let mut out = SceneReplay {
        outcome: SceneOutcome {
            scene_id: scene.id.clone(),
            frames: scene.frames.len(),
            ego_frames: 0,
            covered: 0,
            in_range: 0,
            bytes_total: 0,
            max_ego_frame_bytes: 0,
            refused_shares: 0,
        },
        decisions: Vec::new(),
        messages: Vec::new(),
        detections: Vec::new(),
        samples: Vec::new(),
    };

    for (fi, frame) in scene.frames.iter().enumerate() {
        let index = &cache.indices[fi];
        let payloads = &cache.payloads[fi];
        let sensored = frame.sensored_ids();
        for ego in egos(frame) {
            let ego_agent = frame.agent(ego).expect("ego listed in frame");
            let candidates: Vec<AgentId> = sensored.iter().copied().filter(|c| *c != ego).collect();
            let state = states.entry(ego).or_default();
            let mut budget = BandwidthBudget::new(ego, frame.index);
            let over = |e: CommsError| {
                HarnessError::Runtime(format!("budget violation in scene {}: {e}", scene.id))
            };

            if policy.uses_handshake() {
                if let Some(prev) = prev {
                    let replies = run_handshake(
                        ego_agent,
                        &candidates,
                        frame.index,
                        |c| prev.perception_gain(ego, c).unwrap_or(0),
                        &log,
                        &Lossless,
                    );
                    if !candidates.is_empty() {
                        budget.charge_bytes(CONTROL_MESSAGE_BYTES).map_err(over)?;
                    }
                    for _ in &replies {
                        budget.charge_bytes(CONTROL_MESSAGE_BYTES).map_err(over)?;
                    }
                    state.record_handshake(&replies);
                }
            }

            let decision = schedule(
                policy,
                ego,
                &candidates,
                frame,
                state,
                mix(
                    scene_seed ^ POLICY_SALT,
                    ((frame.index as u64) << 32) | ego.0 as u64,
                ),
            )?;
            log.append(frame.index, Stage::Select, ego, None, 0);

            let mut accepted = Vec::new();
            let mut refused = Vec::new();
            for &c in &decision.chosen {
                let bytes = payloads[&c];
                let msg = Message::DataShare {
                    frame_index: frame.index,
                    sender: c,
                    receiver: ego,
                    objects: index.visible(c)?.iter().copied().collect(),
                    payload_bytes: bytes,
                };
                match budget.charge(&msg) {
                    Ok(()) => {
                        log.append(frame.index, Stage::Share, c, Some(ego), msg.size_bytes());
                        accepted.push(c);
                    }
                    Err(CommsError::OverBudget { .. }) => refused.push(c),
                    Err(e) => return Err(over(e)),
                }
            }
            if budget.spent_bytes > FRAME_BUDGET_BYTES {
                return Err(HarnessError::Runtime(format!(
                    "budget violation in scene {} frame {} ego {}: spent {} bytes",
                    scene.id, frame.index, ego, budget.spent_bytes
                )));
            }

            let covered = index.fused_coverage(ego, &accepted)?;
            let mut realized = BTreeMap::new();
            for &c in &decision.chosen {
                let g = if accepted.contains(&c) {
                    index.perception_gain(ego, c)?
                } else {
                    0
                };
                realized.insert(c, g);
            }
            update_state(state, &decision, &realized)?;

            let sample = build_sample(frame, ego, range)?;
            let hit = sample
                .annotations
                .iter()
                .filter(|b| covered.contains(&b.id))
                .count();
            let det_seed = detection_seed(scene_seed ^ DETECTION_SALT, frame.index, ego);
            let detections =
                crate::metrics::simulate_detections(&covered, &sample, noise, det_seed)?;

            let o = &mut out.outcome;
            o.ego_frames += 1;
            o.covered += hit;
            o.in_range += sample.annotations.len();
            o.bytes_total += budget.spent_bytes;
            o.max_ego_frame_bytes = o.max_ego_frame_bytes.max(budget.spent_bytes);
            o.refused_shares += refused.len();
            out.decisions.push(DecisionRecord {
                scene_id: scene.id.clone(),
                frame: frame.index,
                ego,
                chosen: decision.chosen,
                benchmarks: decision.benchmarks,
                accepted,
                refused,
                bytes: budget.spent_bytes,
                covered: covered.into_iter().collect(),
                in_range: sample.annotations.len(),
            });
            out.detections.push(detections);
            out.samples.push(sample);
        }
        prev = Some(index);
    }
    out.messages = log.snapshot();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLogs {
    pub decisions: String,
    /// Written only with `log_messages`.
    pub messages: Option<String>,
    /// Written only with `log_detections`.
    pub detections: Option<String>,
}

/// One (policy, range, seed) combination over all scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: String,
    pub policy: Policy,
    pub policy_name: String,
    pub range: f64,
    pub seed: u64,
    pub scenes: Vec<SceneOutcome>,
    pub ego_frames: usize,
    pub coverage_recall: f64,
    pub bytes_total: u64,
    pub mean_bytes_per_ego_frame: f64,
    pub max_ego_frame_bytes: u64,
    pub refused_shares: usize,
    /// `None` when there was nothing to score.
    pub metrics: Option<MetricsReport>,
    pub logs: CellLogs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy_key: String,
    pub policy_name: String,
    pub range: f64,
    pub seeds: usize,
    pub map: Option<Stat>,
    pub nds: Option<Stat>,
    pub coverage_recall: Option<Stat>,
    pub mean_bytes_per_ego_frame: Option<Stat>,
    pub max_ego_frame_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub schema_version: u32,
    pub generator_version: String,
    pub dataset_seed: Option<u64>,
    pub scenes: Vec<String>,
    pub policies: Vec<Policy>,
    pub ranges: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

impl RunResults {
    /// Largest bytes any ego spent in any frame, over every cell.
    pub fn max_ego_frame_bytes(&self) -> u64 {
        self.cells
            .iter()
            .map(|c| c.max_ego_frame_bytes)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Serialize, Deserialize)]
struct Tagged<T> {
    scene_id: String,
    record: T,
}

fn cell_key(policy: &Policy, range: f64, seed: u64) -> String {
    format!("{}_r{}_s{}", policy.key(), range, seed)
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, &it).expect("log records serialize");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(io_err(path))
}

fn load_scenes(cfg: &ExperimentConfig) -> Result<(Option<u64>, Vec<Scene>), HarnessError> {
    let root = cfg.dataset_dir();
    if !root.join(MANIFEST_FILE).is_file() {
        return Err(HarnessError::Runtime(format!(
            "no dataset at {}; run `gen` first",
            root.display()
        )));
    }
    let manifest = read_manifest(&root)?;
    let ids: Vec<String> = manifest.scenes.iter().map(|e| e.id.clone()).collect();
    let scenes = parallel_map(&ids, cfg.workers, |id| {
        import_scene(&root, id).map(|s| s.scene)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest.seed, scenes))
}

/// Replays every stored scene for each policy x range x seed cell, scores
/// the simulated detections and writes the result files.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunResults, HarnessError> {
    let (dataset_seed, scenes) = load_scenes(cfg)?;
    let mut cells = Vec::new();
    for policy in &cfg.policies {
        for &range in &cfg.ranges {
            for &seed in &cfg.seeds {
                cells.push((*policy, range, seed));
            }
        }
    }
    let cache_jobs: Vec<(usize, usize)> = (0..cfg.ranges.len())
        .flat_map(|r| (0..scenes.len()).map(move |s| (r, s)))
        .collect();
    let caches = parallel_map(&cache_jobs, cfg.workers, |&(r, s)| {
        SceneCache::build(&scenes[s], &cfg.model, cfg.ranges[r])
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let cache_of = |range: f64, s: usize| {
        let r = cfg
            .ranges
            .iter()
            .position(|x| *x == range)
            .expect("cell range is configured");
        &caches[r * scenes.len() + s]
    };

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..scenes.len()).map(move |s| (c, s)))
        .collect();
    let replays = parallel_map(&jobs, cfg.workers, |&(c, s)| {
        let (policy, range, seed) = cells[c];
        replay_cached(&scenes[s], cache_of(range, s), policy, seed, &cfg.noise)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let results_dir = cfg.results_dir();
    let logs_dir = results_dir.join("logs");
    fs::create_dir_all(&logs_dir).map_err(io_err(&logs_dir))?;

    let mut cell_results = Vec::with_capacity(cells.len());
    for (ci, &(policy, range, seed)) in cells.iter().enumerate() {
        let part = &replays[ci * scenes.len()..(ci + 1) * scenes.len()];
        let key = cell_key(&policy, range, seed);
        let logs = CellLogs {
            decisions: format!("logs/{key}.decisions.jsonl"),
            messages: cfg
                .log_messages
                .then(|| format!("logs/{key}.messages.jsonl")),
            detections: cfg
                .log_detections
                .then(|| format!("logs/{key}.detections.jsonl")),
        };
        write_jsonl(
            &results_dir.join(&logs.decisions),
            part.iter().flat_map(|r| &r.decisions),
        )?;
        if let Some(path) = &logs.messages {
            write_jsonl(
                &results_dir.join(path),
                part.iter().flat_map(|r| {
                    r.messages.iter().map(|m| Tagged {
                        scene_id: r.outcome.scene_id.clone(),
                        record: m.clone(),
                    })
                }),
            )?;
        }
        if let Some(path) = &logs.detections {
            write_jsonl(
                &results_dir.join(path),
                part.iter().flat_map(|r| {
                    r.detections.iter().map(|d| Tagged {
                        scene_id: r.outcome.scene_id.clone(),
                        record: d.clone(),
                    })
                }),
            )?;
        }

        let dets: Vec<DetectionResult> = part
            .iter()
            .flat_map(|r| r.detections.iter().cloned())
            .collect();
        let samples: Vec<Sample> = part
            .iter()
            .flat_map(|r| r.samples.iter().cloned())
            .collect();
        let metrics = match score(&dets, &samples, &ScoreConfig::default()) {
            Ok(m) => Some(m),
            Err(crate::metrics::MetricsError::Empty) => None,
            Err(e) => return Err(e.into()),
        };
        let outcomes: Vec<SceneOutcome> = part.iter().map(|r| r.outcome.clone()).collect();
        let ego_frames: usize = outcomes.iter().map(|o| o.ego_frames).sum();
        let covered: usize = outcomes.iter().map(|o| o.covered).sum();
        let in_range: usize = outcomes.iter().map(|o| o.in_range).sum();
        let bytes_total: u64 = outcomes.iter().map(|o| o.bytes_total).sum();
        cell_results.push(CellResult {
            key,
            policy,
            policy_name: policy.to_string(),
            range,
            seed,
            ego_frames,
            coverage_recall: if in_range == 0 {
                1.0
            } else {
                covered as f64 / in_range as f64
            },
            bytes_total,
            mean_bytes_per_ego_frame: if ego_frames == 0 {
                0.0
            } else {
                bytes_total as f64 / ego_frames as f64
            },
            max_ego_frame_bytes: outcomes
                .iter()
                .map(|o| o.max_ego_frame_bytes)
                .max()
                .unwrap_or(0),
            refused_shares: outcomes.iter().map(|o| o.refused_shares).sum(),
            scenes: outcomes,
            metrics,
            logs,
        });
    }

    let results = RunResults {
        schema_version: RESULTS_SCHEMA_VERSION,
        generator_version: GENERATOR_VERSION.to_string(),
        dataset_seed,
        scenes: scenes.iter().map(|s| s.id.clone()).collect(),
        policies: cfg.policies.clone(),
        ranges: cfg.ranges.clone(),
        seeds: cfg.seeds.clone(),
        summary: summarize(&cell_results, cfg),
        cells: cell_results,
    };
    if results.max_ego_frame_bytes() > FRAME_BUDGET_BYTES {
        return Err(HarnessError::Runtime(format!(
            "budget violation: {} bytes in one ego-frame",
            results.max_ego_frame_bytes()
        )));
    }
    let mut json = serde_json::to_string_pretty(&results).expect("results serialize");
    json.push('\n');
    write_text(&results_dir.join("results.json"), &json)?;
    write_text(&results_dir.join("results.csv"), &results_csv(&results))?;
    write_text(&results_dir.join("results.md"), &results_markdown(&results))?;
    Ok(results)
}

fn summarize(cells: &[CellResult], cfg: &ExperimentConfig) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for policy in &cfg.policies {
        for &range in &cfg.ranges {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.policy == *policy && c.range == range)
                .collect();
            let metric = |f: fn(&MetricsReport) -> f64| {
                let v: Vec<f64> = group
                    .iter()
                    .filter_map(|c| c.metrics.as_ref().map(f))
                    .collect();
                if v.len() == group.len() {
                    Stat::of(&v)
                } else {
                    None
                }
            };
            rows.push(SummaryRow {
                policy_key: policy.key(),
                policy_name: policy.to_string(),
                range,
                seeds: group.len(),
                map: metric(|m| m.map),
                nds: metric(|m| m.nds),
                coverage_recall: Stat::of(
                    &group.iter().map(|c| c.coverage_recall).collect::<Vec<_>>(),
                ),
                mean_bytes_per_ego_frame: Stat::of(
                    &group
                        .iter()
                        .map(|c| c.mean_bytes_per_ego_frame)
                        .collect::<Vec<_>>(),
                ),
                max_ego_frame_bytes: group
                    .iter()
                    .map(|c| c.max_ego_frame_bytes)
                    .max()
                    .unwrap_or(0),
            });
        }
    }
    rows
}

const CELL_COLUMNS: &str =
    "policy,range,seed,ego_frames,coverage_recall,bytes_total,mean_bytes_per_ego_frame,max_ego_frame_bytes,refused_shares";

fn cell_values(c: &CellResult) -> Vec<Option<f64>> {
    let mut v = vec![
        Some(c.ego_frames as f64),
        Some(c.coverage_recall),
        Some(c.bytes_total as f64),
        Some(c.mean_bytes_per_ego_frame),
        Some(c.max_ego_frame_bytes as f64),
        Some(c.refused_shares as f64),
    ];
    match &c.metrics {
        Some(m) => {
            v.extend([m.map, m.mate, m.mase, m.maoe, m.mave, m.maae, m.nds].map(Some));
            for class in crate::world::ObjectClass::ALL {
                v.push(m.classes.get(&class).map(|x| x.mean_ap()));
            }
        }
        None => v.extend(std::iter::repeat_n(None, CSV_HEADER.split(',').count())),
    }
    v
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Per-cell rows; each (policy, range) group ends with `mean` and `std`
/// rows over its seeds.
pub fn results_csv(results: &RunResults) -> String {
    let mut out = format!("{CELL_COLUMNS},{CSV_HEADER}\n");
    for row in &results.summary {
        let group: Vec<&CellResult> = results
            .cells
            .iter()
            .filter(|c| c.policy.key() == row.policy_key && c.range == row.range)
            .collect();
        let values: Vec<Vec<Option<f64>>> = group.iter().map(|c| cell_values(c)).collect();
        for (c, v) in group.iter().zip(&values) {
            let cols: Vec<String> = v.iter().map(|x| fmt_cell(*x)).collect();
            writeln!(
                out,
                "{},{},{},{}",
                c.policy.key(),
                c.range,
                c.seed,
                cols.join(",")
            )
            .unwrap();
        }
        let width = values.first().map_or(0, Vec::len);
        let stats: Vec<Option<Stat>> = (0..width)
            .map(|i| {
                let col: Option<Vec<f64>> = values.iter().map(|v| v[i]).collect();
                col.and_then(|c| Stat::of(&c))
            })
            .collect();
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let cols: Vec<String> = stats
                .iter()
                .map(|s| fmt_cell(s.map(|s| if pick == 0 { s.mean } else { s.std })))
                .collect();
            writeln!(
                out,
                "{},{},{label},{}",
                row.policy_key,
                row.range,
                cols.join(",")
            )
            .unwrap();
        }
    }
    out
}

fn fmt_stat(s: Option<Stat>, decimals: usize, seeds: usize) -> String {
    match s {
        None => "n/a".into(),
        Some(s) if seeds > 1 => format!("{:.*} ± {:.*}", decimals, s.mean, decimals, s.std),
        Some(s) => format!("{:.*}", decimals, s.mean),
    }
}

fn aligned_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain([header[i].chars().count(), 3])
                .max()
                .unwrap()
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Policy x range matrix of mAP, NDS, coverage recall and bytes.
pub fn results_markdown(results: &RunResults) -> String {
    let mut header = vec!["Policy".to_string()];
    for r in &results.ranges {
        header.extend([
            format!("mAP @{r}m"),
            format!("NDS @{r}m"),
            format!("Recall @{r}m"),
            format!("Bytes/ego-frame @{r}m"),
        ]);
    }
    let mut rows = Vec::new();
    for p in &results.policies {
        let mut row = vec![p.to_string()];
        for &r in &results.ranges {
            let s = results
                .summary
                .iter()
                .find(|s| s.policy_key == p.key() && s.range == r)
                .expect("summary row per policy and range");
            row.push(fmt_stat(s.map, 3, s.seeds));
            row.push(fmt_stat(s.nds, 3, s.seeds));
            row.push(fmt_stat(s.coverage_recall, 3, s.seeds));
            row.push(fmt_stat(s.mean_bytes_per_ego_frame, 0, s.seeds));
        }
        rows.push(row);
    }
    let mut out = format!(
        "# Scheduling results\n\n{} scenes, seeds {:?}. Values are mean ± std over seeds.\n\n",
        results.scenes.len(),
        results.seeds
    );
    out.push_str(&aligned_table(&header, &rows));
    out
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let v = serde_json::from_str(&line).map_err(|e| {
            HarnessError::Runtime(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub key: String,
    pub metrics: Option<MetricsReport>,
}

/// Re-scores the detection logs of a previous run against the dataset and
/// writes `scores.csv` next to the results.
pub fn cmd_score(cfg: &ExperimentConfig) -> Result<Vec<ScoreRow>, HarnessError> {
    let results_dir = cfg.results_dir();
    let path = results_dir.join("results.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}; run `run` first", path.display())))?;
    let results: RunResults = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    let (_, scenes) = load_scenes(cfg)?;
    let by_id: BTreeMap<&str, &Scene> = scenes.iter().map(|s| (s.id.as_str(), s)).collect();

    let rows = parallel_map(
        &results.cells,
        cfg.workers,
        |cell| -> Result<ScoreRow, HarnessError> {
            let log = cell.logs.detections.as_ref().ok_or_else(|| {
                HarnessError::Runtime(format!(
                    "cell {} has no detection log; rerun with log_detections",
                    cell.key
                ))
            })?;
            let lines: Vec<Tagged<DetectionResult>> = read_jsonl(&results_dir.join(log))?;
            let mut dets = Vec::with_capacity(lines.len());
            let mut samples = Vec::with_capacity(lines.len());
            for l in lines {
                let scene = by_id.get(l.scene_id.as_str()).ok_or_else(|| {
                    HarnessError::Runtime(format!(
                        "detections reference unknown scene {}",
                        l.scene_id
                    ))
                })?;
                let frame = scene
                    .frames
                    .get(l.record.frame_index as usize)
                    .ok_or_else(|| {
                        HarnessError::Runtime(format!(
                            "scene {} has no frame {}",
                            l.scene_id, l.record.frame_index
                        ))
                    })?;
                samples.push(build_sample(frame, l.record.ego_id, cell.range)?);
                dets.push(l.record);
            }
            let metrics = match score(&dets, &samples, &ScoreConfig::default()) {
                Ok(m) => Some(m),
                Err(crate::metrics::MetricsError::Empty) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(ScoreRow {
                key: cell.key.clone(),
                metrics,
            })
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut csv = format!("cell,{CSV_HEADER}\n");
    for r in &rows {
        match &r.metrics {
            Some(m) => writeln!(csv, "{},{}", r.key, m.csv_row()).unwrap(),
            None => writeln!(
                csv,
                "{}{}",
                r.key,
                ",".repeat(CSV_HEADER.split(',').count())
            )
            .unwrap(),
        }
    }
    write_text(&results_dir.join("scores.csv"), &csv)?;
    Ok(rows)
}

/// Highway scenario whose road grows with `agents` while background traffic
/// keeps a fixed density along it, so each agent sees about the same number
/// of bodies at every count.
pub fn scaling_config(agents: usize, seed: u64) -> ScenarioConfig {
    let n = agents.max(1);
    let length = 100.0 + 50.0 * n as f64;
    let mut cfg = ScenarioConfig::new(
        SceneKind::HighwayRamp,
        AgentCounts {
            controlled_cav: n,
            ..AgentCounts::default()
        },
        ObjectCounts {
            vehicles: (length / 25.0).round() as usize,
            pedestrians: (length / 100.0).round() as usize,
            cyclists: (length / 100.0).round() as usize,
        },
        5.0,
        seed,
    );
    cfg.spawn_rect = (length, 24.0);
    cfg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    LinearFit {
        slope,
        intercept,
        r2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub agents: usize,
    pub ticks: usize,
    /// Median over repeats of the mean wall time per tick.
    pub mean_tick_ms: f64,
    pub per_agent_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub workers: usize,
    pub rows: Vec<ScalingRow>,
    pub fit: LinearFit,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agents,ticks,mean_tick_ms,per_agent_ms\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6}",
                r.agents, r.ticks, r.mean_tick_ms, r.per_agent_ms
            )
            .unwrap();
        }
        out
    }

    pub fn fit_summary(&self) -> String {
        format!(
            "linear fit: slope={:.4} ms/agent intercept={:.4} ms R^2={:.4}",
            self.fit.slope, self.fit.intercept, self.fit.r2
        )
    }
}

/// Times the parallel engine at each agent count.
pub fn cmd_bench_scaling(
    counts: &[usize],
    seed: u64,
    workers: usize,
    repeats: usize,
) -> Result<ScalingReport, HarnessError> {
    if counts.is_empty() || counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config(
            "agent counts must be nonempty and strictly ascending".into(),
        ));
    }
    let mut rows = Vec::with_capacity(counts.len());
    for &n in counts {
        let cfg = scaling_config(n, seed);
        let mut means = Vec::with_capacity(repeats.max(1));
        let mut ticks = 0;
        for _ in 0..repeats.max(1) {
            let run = run_parallel(&cfg, workers)?;
            ticks = run.report.ticks.len();
            means.push(run.report.mean_tick_ms());
        }
        means.sort_by(f64::total_cmp);
        let mean_tick_ms = means[means.len() / 2];
        rows.push(ScalingRow {
            agents: n,
            ticks,
            mean_tick_ms,
            per_agent_ms: mean_tick_ms / n as f64,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.agents as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_tick_ms).collect();
    Ok(ScalingReport {
        workers,
        fit: linear_fit(&xs, &ys),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> &'static str {
        r#"{
            "policies": [{"name": "no_fusion"}, {"name": "mass_ucb"}],
            "scenarios": [{"scenario": {
                "scene_kind": "intersection", "spawn_rect": [80, 80],
                "agents": {"controlled_cav": 2, "uncontrolled_cav": 1, "rsu": 1},
                "objects": {"vehicles": 3, "pedestrians": 2},
                "duration": 2.0, "seed": 4
            }, "repeat": 2}]
        }"#
    }

    #[test]
    fn config_defaults() {
        let cfg = ExperimentConfig::from_json(base_json()).unwrap();
        assert_eq!(cfg.ranges, vec![50.0, 100.0]);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.policies[1], Policy::MassUcb { beta: 1.0 });
        let scenes = cfg.scene_configs();
        assert_eq!(scenes.len(), 2);
        assert_eq!((scenes[0].seed, scenes[1].seed), (4, 5));
    }

    #[test]
    fn config_errors_name_their_location() {
        let cases = [
            (r#"{"policies": []}"#, "`policies`"),
            (
                r#"{"policies": [{"name": "no_fusion"}], "ranges": [50, -1]}"#,
                "`ranges[1]`",
            ),
            (r#"{"policies": [{"name": "nope"}]}"#, "policies[0]"),
            (
                r#"{"policies": [{"name": "multiple_random", "k": 0}]}"#,
                "`policies[0]`",
            ),
            (
                r#"{"policies": [{"name": "no_fusion"}], "noise": {"dropout": 2}}"#,
                "`noise`",
            ),
            (
                r#"{"policies": [{"name": "no_fusion"}], "bogus": 1}"#,
                "bogus",
            ),
            (
                r#"{"policies": [{"name": "no_fusion"}], "scenarios": [{"scenario": {"scene_kind": "roundabout", "spawn_rect": [1, 1], "duration": "x", "seed": 0}}]}"#,
                "scenarios[0].scenario.duration",
            ),
        ];
        for (json, needle) in cases {
            let err = ExperimentConfig::from_json(json).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(needle), "{err} lacks {needle}");
        }
    }

    #[test]
    fn stat_sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[7.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn linear_fit_exact_line() {
        let xs = [2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 + 3.0 * x).collect();
        let f = linear_fit(&xs, &ys);
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept - 0.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..100).collect();
        assert_eq!(
            parallel_map(&items, 7, |x| x * x),
            items.iter().map(|x| x * x).collect::<Vec<_>>()
        );
        assert!(parallel_map(&Vec::<u8>::new(), 4, |x| *x).is_empty());
    }

    #[test]
    fn scaling_configs_spawn() {
        for n in [2, 4, 8, 16, 32] {
            crate::engine::spawn_world(&scaling_config(n, 1)).unwrap();
        }
    }

    #[test]
    fn aligned_table_pads_columns() {
        let t = aligned_table(
            &["a".into(), "bbbb".into()],
            &[vec!["xx".into(), "y".into()], vec!["±".into(), "z".into()]],
        );
        let widths: Vec<usize> = t.lines().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{t}");
    }
}
