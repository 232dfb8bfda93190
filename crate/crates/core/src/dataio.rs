//! On-disk dataset: scenes, frames, per-ego samples and agent graphs.
//!
//! ```text
//! root/manifest.json
//! root/<scene_id>/frames/<idx>.json
//! root/<scene_id>/samples/<idx>_<ego>.json
//! root/<scene_id>/graphs/<idx>.json
//! ```
//!
//! Every record is a JSON document with a top-level `schema_version`.
//! Positions are meters, angles radians, world frame right-handed with z up.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ScenarioConfig;
use crate::sensing::{coop_graph, CoopGraph, SensingError, VisibilityIndex, VisibilityModel};
use crate::world::{build_sample, AgentId, Frame, ObjectBox, ObjectId, Sample, Scene, WorldError};

pub const SCHEMA_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("coopsched ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";

/// Serializes manifest read-modify-write cycles across concurrent exports.
static MANIFEST_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt record {record} ({path}): {detail}")]
    Corrupt {
        path: PathBuf,
        record: String,
        detail: String,
    },
    #[error("schema version mismatch in {path}: found {found:?}, expected {expected}")]
    SchemaVersion {
        path: PathBuf,
        found: Option<u64>,
        expected: u32,
    },
    #[error("scene {0} is not listed in the manifest")]
    UnknownScene(String),
    #[error("scene {0} is listed in the manifest but missing on disk")]
    MissingScene(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub config: ScenarioConfig,
    pub frames: usize,
    pub sensored_agents: usize,
    pub samples: usize,
    pub boxes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub generator_version: String,
    pub seed: Option<u64>,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            generator_version: GENERATOR_VERSION.to_string(),
            seed,
            scenes: Vec::new(),
        }
    }

    pub fn total_frames(&self) -> usize {
        self.scenes.iter().map(|s| s.frames).sum()
    }

    pub fn total_samples(&self) -> usize {
        self.scenes.iter().map(|s| s.samples).sum()
    }

    pub fn total_boxes(&self) -> usize {
        self.scenes.iter().map(|s| s.boxes).sum()
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.scenes.iter().find(|e| e.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub schema_version: u32,
    pub scene_id: String,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub schema_version: u32,
    pub scene_id: String,
    pub frame_index: u32,
    pub ego_id: AgentId,
    pub range: f64,
    pub annotations: Vec<ObjectBox>,
    /// Objects inside the ego's range that the ego itself can see.
    pub visible: Vec<ObjectId>,
}

impl SampleRecord {
    pub fn sample(&self) -> Sample {
        Sample {
            frame_index: self.frame_index,
            ego_id: self.ego_id,
            range: self.range,
            annotations: self.annotations.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub schema_version: u32,
    pub scene_id: String,
    pub frame_index: u32,
    pub graph: CoopGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportedScene {
    pub scene: Scene,
    pub samples: Vec<SampleRecord>,
    pub graphs: Vec<GraphRecord>,
}

pub fn frame_path(root: &Path, scene_id: &str, index: u32) -> PathBuf {
    root.join(scene_id)
        .join("frames")
        .join(format!("{index}.json"))
}

pub fn sample_path(root: &Path, scene_id: &str, index: u32, ego: AgentId) -> PathBuf {
    root.join(scene_id)
        .join("samples")
        .join(format!("{index}_{}.json", ego.0))
}

pub fn graph_path(root: &Path, scene_id: &str, index: u32) -> PathBuf {
    root.join(scene_id)
        .join("graphs")
        .join(format!("{index}.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("records serialize");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_record<T: DeserializeOwned>(path: &Path, record: &str) -> Result<T, DataError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => DataError::Corrupt {
            path: path.to_path_buf(),
            record: record.to_string(),
            detail: "file is missing".into(),
        },
        _ => DataError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let corrupt = |detail: String| DataError::Corrupt {
        path: path.to_path_buf(),
        record: record.to_string(),
        detail,
    };
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let found = value.get("schema_version").and_then(|v| v.as_u64());
    if found != Some(SCHEMA_VERSION as u64) {
        return Err(DataError::SchemaVersion {
            path: path.to_path_buf(),
            found,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))
}

pub fn read_manifest(root: &Path) -> Result<Manifest, DataError> {
    read_record(&root.join(MANIFEST_FILE), "manifest")
}

fn write_manifest(root: &Path, manifest: &Manifest) -> Result<(), DataError> {
    let path = root.join(MANIFEST_FILE);
    let tmp = root.join(".manifest.json.tmp");
    write_json(&tmp, manifest)?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

/// Creates `root` with an empty manifest, replacing any existing manifest.
pub fn init_dataset(root: &Path, seed: Option<u64>) -> Result<Manifest, DataError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let manifest = Manifest::new(seed);
    let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

fn write_scene_files(
    scene: &Scene,
    model: &VisibilityModel,
    dir: &Path,
) -> Result<(usize, usize), DataError> {
    let id = &scene.id;
    for sub in ["frames", "samples", "graphs"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    // files are written under `dir`; the path helpers take the parent as root
    let root = dir.parent().expect("scene dir has a parent");
    let tmp_name = dir.file_name().unwrap().to_string_lossy().into_owned();
    let mut samples = 0;
    let mut boxes = 0;
    for frame in &scene.frames {
        write_json(
            &frame_path(root, &tmp_name, frame.index),
            &FrameRecord {
                schema_version: SCHEMA_VERSION,
                scene_id: id.clone(),
                frame: frame.clone(),
            },
        )?;
        let index = VisibilityIndex::build(frame, model)?;
        for ego in frame.sensored_ids() {
            let sample = build_sample(frame, ego, model.range)?;
            let visible: Vec<ObjectId> = index.fused_coverage(ego, &[])?.into_iter().collect();
            boxes += sample.annotations.len();
            samples += 1;
            write_json(
                &sample_path(root, &tmp_name, frame.index, ego),
                &SampleRecord {
                    schema_version: SCHEMA_VERSION,
                    scene_id: id.clone(),
                    frame_index: frame.index,
                    ego_id: ego,
                    range: sample.range,
                    annotations: sample.annotations,
                    visible,
                },
            )?;
        }
        write_json(
            &graph_path(root, &tmp_name, frame.index),
            &GraphRecord {
                schema_version: SCHEMA_VERSION,
                scene_id: id.clone(),
                frame_index: frame.index,
                graph: coop_graph(frame),
            },
        )?;
    }
    Ok((samples, boxes))
}

/// Writes a scene's frames, samples and graphs under `root/<scene id>` and
/// records it in the manifest. Nothing is left behind on failure.
pub fn export_scene(
    scene: &Scene,
    model: &VisibilityModel,
    root: &Path,
) -> Result<ManifestEntry, DataError> {
    model.validate()?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    let tmp = root.join(format!(".tmp-{}", scene.id));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    let written = write_scene_files(scene, model, &tmp);
    let (samples, boxes) = match written {
        Ok(v) => v,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    let dest = root.join(&scene.id);
    let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    if dest.exists() {
        fs::remove_dir_all(&dest).map_err(io_err(&dest))?;
    }
    fs::rename(&tmp, &dest).map_err(io_err(&dest))?;

    let entry = ManifestEntry {
        id: scene.id.clone(),
        config: scene.config,
        frames: scene.frames.len(),
        sensored_agents: scene.sensored_count(),
        samples,
        boxes,
    };
    let mut manifest = match read_manifest(root) {
        Ok(m) => m,
        Err(DataError::Corrupt { detail, .. }) if detail == "file is missing" => {
            Manifest::new(None)
        }
        Err(e) => return Err(e),
    };
    manifest.scenes.retain(|e| e.id != scene.id);
    manifest.scenes.push(entry.clone());
    manifest.scenes.sort_by(|a, b| a.id.cmp(&b.id));
    write_manifest(root, &manifest)?;
    Ok(entry)
}

/// Reads a scene back with its sample and graph records.
pub fn import_scene(root: &Path, scene_id: &str) -> Result<ImportedScene, DataError> {
    let manifest = read_manifest(root)?;
    let entry = manifest
        .entry(scene_id)
        .ok_or_else(|| DataError::UnknownScene(scene_id.to_string()))?;
    if !root.join(scene_id).is_dir() {
        return Err(DataError::MissingScene(scene_id.to_string()));
    }
    let mut frames = Vec::with_capacity(entry.frames);
    let mut samples = Vec::new();
    let mut graphs = Vec::with_capacity(entry.frames);
    for index in 0..entry.frames as u32 {
        let rec: FrameRecord = read_record(
            &frame_path(root, scene_id, index),
            &format!("frame {index}"),
        )?;
        for ego in rec.frame.sensored_ids() {
            let name = format!("sample frame {index} ego {}", ego.0);
            let s: SampleRecord = read_record(&sample_path(root, scene_id, index, ego), &name)?;
            samples.push(s);
        }
        graphs.push(read_record(
            &graph_path(root, scene_id, index),
            &format!("graph {index}"),
        )?);
        frames.push(rec.frame);
    }
    Ok(ImportedScene {
        scene: Scene {
            id: entry.id.clone(),
            config: entry.config,
            frames,
        },
        samples,
        graphs,
    })
}
