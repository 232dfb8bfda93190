//! Barrier-synchronized per-agent workers.
//!
//! Each tick the coordinator publishes a versioned snapshot, every worker
//! senses for its share of the sensored agents and queues the observation,
//! and after the barrier the coordinator evaluates the whole batch at once
//! before advancing the world. Only the coordinator mutates world state.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Barrier, Mutex, RwLock};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{spawn_world, step, EngineError, ScenarioConfig, TICKS_PER_FRAME, TICK_S};
use crate::sensing::{
    visible_objects_among, ObjectSet, Occluders, VisibilityIndex, VisibilityModel,
};
use crate::world::{AgentId, Frame, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickTiming {
    pub tick: u64,
    pub agents: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub workers: usize,
    pub ticks: Vec<TickTiming>,
    /// Mean per-agent sensing job cost.
    pub per_agent_mean_ms: f64,
}

impl TimingReport {
    pub fn mean_tick_ms(&self) -> f64 {
        if self.ticks.is_empty() {
            return 0.0;
        }
        self.ticks.iter().map(|t| t.wall_ms).sum::<f64>() / self.ticks.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,agents,wall_ms\n");
        for t in &self.ticks {
            writeln!(out, "{},{},{:.6}", t.tick, t.agents, t.wall_ms).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelOptions {
    pub workers: usize,
    pub model: VisibilityModel,
    /// Makes the job of `agent` fail at `tick`; used to exercise abort paths.
    pub inject_failure: Option<(u64, AgentId)>,
}

impl ParallelOptions {
    pub fn new(workers: usize) -> Self {
        Self {
            workers,
            model: VisibilityModel::default(),
            inject_failure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelRun {
    pub scene: Scene,
    pub report: TimingReport,
    /// Nonzero pairwise perception gains `(ego, candidate) -> count`, one
    /// table per saved frame.
    pub benchmarks: Vec<BTreeMap<(AgentId, AgentId), u32>>,
}

struct Snapshot {
    version: u64,
    frame: Frame,
    occluders: Occluders,
    jobs: Vec<AgentId>,
}

struct Observation {
    agent: AgentId,
    version: u64,
    result: Result<ObjectSet, String>,
    cost_ms: f64,
}

fn sense(snap: &Snapshot, agent: AgentId, opts: &ParallelOptions) -> Result<ObjectSet, String> {
    if opts.inject_failure == Some((snap.version, agent)) {
        return Err("injected failure".into());
    }
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
        visible_objects_among(agent, &snap.frame, &opts.model, &snap.occluders)
    }));
    match outcome {
        Ok(r) => r.map_err(|e| e.to_string()),
        Err(p) => Err(p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "worker panicked".into())),
    }
}

pub fn run_parallel(config: &ScenarioConfig, workers: usize) -> Result<ParallelRun, EngineError> {
    run_parallel_with(config, &ParallelOptions::new(workers))
}

pub fn run_parallel_with(
    config: &ScenarioConfig,
    opts: &ParallelOptions,
) -> Result<ParallelRun, EngineError> {
    if opts.workers == 0 {
        return Err(EngineError::InvalidConfig(
            "worker_count must be >= 1".into(),
        ));
    }
    opts.model.validate()?;
    let mut state = spawn_world(config)?;
    let total_ticks = config.frame_count() as u64 * TICKS_PER_FRAME;

    let shared: RwLock<Option<Arc<Snapshot>>> = RwLock::new(None);
    let queue: Mutex<Vec<Observation>> = Mutex::new(Vec::new());
    let barrier = Barrier::new(opts.workers + 1);

    thread::scope(|scope| {
        for w in 0..opts.workers {
            let (shared, queue, barrier) = (&shared, &queue, &barrier);
            scope.spawn(move || loop {
                barrier.wait();
                let Some(snap) = shared.read().expect("snapshot lock").clone() else {
                    break;
                };
                let mut local = Vec::new();
                for &agent in snap.jobs.iter().skip(w).step_by(opts.workers) {
                    let start = Instant::now();
                    let result = sense(&snap, agent, opts);
                    local.push(Observation {
                        agent,
                        version: snap.version,
                        result,
                        cost_ms: start.elapsed().as_secs_f64() * 1e3,
                    });
                }
                queue.lock().expect("queue lock").extend(local);
                barrier.wait();
            });
        }

        let shutdown = || {
            *shared.write().expect("snapshot lock") = None;
            barrier.wait();
        };

        let mut frames = Vec::with_capacity(config.frame_count());
        let mut benchmarks = Vec::with_capacity(config.frame_count());
        let mut report = TimingReport {
            workers: opts.workers,
            ..TimingReport::default()
        };
        let mut job_cost_sum = 0.0;
        let mut job_count = 0usize;

        for _ in 0..total_ticks {
            let start = Instant::now();
            let frame = state.snapshot();
            let jobs = frame.sensored_ids();
            let emit = state.tick % TICKS_PER_FRAME == 0;
            let snap = Arc::new(Snapshot {
                version: state.tick,
                occluders: Occluders::of(&frame),
                frame,
                jobs,
            });
            *shared.write().expect("snapshot lock") = Some(snap.clone());
            barrier.wait();
            barrier.wait();

            let mut batch = std::mem::take(&mut *queue.lock().expect("queue lock"));
            batch.sort_by_key(|o| o.agent);
            let mut visible = BTreeMap::new();
            for obs in batch {
                if obs.version != snap.version {
                    shutdown();
                    return Err(EngineError::StaleObservation {
                        expected: snap.version,
                        got: obs.version,
                    });
                }
                match obs.result {
                    Ok(set) => {
                        visible.insert(obs.agent, set);
                    }
                    Err(message) => {
                        shutdown();
                        report.per_agent_mean_ms = job_cost_sum / job_count.max(1) as f64;
                        return Err(EngineError::WorkerFailed {
                            tick: snap.version,
                            agent: obs.agent,
                            message,
                            partial: Box::new(report),
                        });
                    }
                }
                job_cost_sum += obs.cost_ms;
                job_count += 1;
            }
            debug_assert_eq!(visible.len(), snap.jobs.len());

            // batched evaluation over the whole tick
            let index = VisibilityIndex::from_observations(&snap.frame, &opts.model, visible);
            if emit {
                benchmarks.push(index.gain_table());
                frames.push(snap.frame.clone());
            }
            state = match step(&state, TICK_S) {
                Ok(s) => s,
                Err(e) => {
                    shutdown();
                    return Err(e);
                }
            };
            report.ticks.push(TickTiming {
                tick: snap.version,
                agents: snap.jobs.len(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        shutdown();
        report.per_agent_mean_ms = job_cost_sum / job_count.max(1) as f64;
        Ok(ParallelRun {
            scene: Scene {
                id: config.scene_id(),
                config: *config,
                frames,
            },
            report,
            benchmarks,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{generate_scene, AgentCounts, ObjectCounts, SceneKind};

    fn config() -> ScenarioConfig {
        ScenarioConfig::new(
            SceneKind::TJunction,
            AgentCounts {
                controlled_cav: 3,
                uncontrolled_cav: 2,
                rsu: 1,
                obstacle: 1,
            },
            ObjectCounts {
                vehicles: 4,
                pedestrians: 3,
                cyclists: 1,
            },
            4.0,
            21,
        )
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let one = run_parallel(&config(), 1).unwrap();
        let eight = run_parallel(&config(), 8).unwrap();
        assert_eq!(one.scene, eight.scene);
        assert_eq!(one.benchmarks, eight.benchmarks);
        assert_eq!(one.scene, generate_scene(&config()).unwrap());
    }

    #[test]
    fn timing_report_schema() {
        let run = run_parallel(&config(), 3).unwrap();
        assert_eq!(run.report.ticks.len(), 8 * 5);
        assert_eq!(run.benchmarks.len(), 8);
        assert!(run
            .report
            .ticks
            .iter()
            .all(|t| t.agents == 6 && t.wall_ms >= 0.0));
        assert!(run.report.per_agent_mean_ms > 0.0);
        let csv = run.report.to_csv();
        assert!(csv.starts_with("tick,agents,wall_ms\n"));
        assert_eq!(csv.lines().count(), 41);
    }

    #[test]
    fn batch_gains_match_direct_computation() {
        let run = run_parallel(&config(), 2).unwrap();
        let model = VisibilityModel::default();
        for (frame, table) in run.scene.frames.iter().zip(&run.benchmarks).step_by(3) {
            let ids = frame.sensored_ids();
            for &e in &ids {
                for &c in ids.iter().filter(|c| **c != e) {
                    let direct = crate::sensing::perception_gain(e, c, frame, &model).unwrap();
                    assert_eq!(table.get(&(e, c)).copied().unwrap_or(0), direct);
                }
            }
            assert!(table.values().all(|g| *g > 0));
        }
    }

    #[test]
    fn worker_failure_aborts_with_partial_report() {
        let mut opts = ParallelOptions::new(4);
        opts.inject_failure = Some((7, AgentId(2)));
        match run_parallel_with(&config(), &opts) {
            Err(EngineError::WorkerFailed {
                tick,
                agent,
                partial,
                ..
            }) => {
                assert_eq!(tick, 7);
                assert_eq!(agent, AgentId(2));
                assert_eq!(partial.ticks.len(), 7);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(matches!(
            run_parallel(&config(), 0),
            Err(EngineError::InvalidConfig(_))
        ));
    }
}
