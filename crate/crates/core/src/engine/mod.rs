//! Scenario generation and kinematic stepping.
//!
//! The world advances in 0.1 s ticks; every fifth tick is saved as a frame.
//! Movers follow waypaths at their lane speed, so the whole scene is a pure
//! function of its [`ScenarioConfig`].

mod filter;
mod parallel;
pub mod template;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Footprint;
use crate::world::{
    Agent, AgentId, AgentKind, BoxSize, Frame, ObjectBox, ObjectClass, ObjectId, Pose, Scene, Vec2,
    FRAME_INTERVAL_S,
};

pub use filter::{filter_scenes, SceneFilter};
pub use parallel::{
    run_parallel, run_parallel_with, ParallelOptions, ParallelRun, TickTiming, TimingReport,
};
pub use template::{SceneKind, Waypath};

use template::{route_points, sidewalk_points, to_world, BIKE_LANE_OFFSET, LANE_OFFSET};

pub const TICK_S: f64 = 0.1;
pub const TICKS_PER_FRAME: u64 = 5;
/// Spawn attempts per entity before giving up.
const SPAWN_TRIES: usize = 400;
const MAX_VEHICLE_SPEED: f64 = 12.0;
const PEDESTRIAN_SPEED: f64 = 1.4;
const CYCLIST_SPEED: f64 = 4.5;
const TRUCK_SHARE: f64 = 0.15;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("could not place {kind} #{index} without overlap after {tries} tries")]
    InfeasiblePacking {
        kind: &'static str,
        index: usize,
        tries: usize,
    },
    #[error("tick length must be {TICK_S} s, got {0}")]
    InvalidTick(f64),
    #[error("worker failed at tick {tick} on {agent}: {message}")]
    WorkerFailed {
        tick: u64,
        agent: AgentId,
        message: String,
        partial: Box<TimingReport>,
    },
    #[error("barrier violation: observation of version {got} in tick {expected}")]
    StaleObservation { expected: u64, got: u64 },
    #[error(transparent)]
    Sensing(#[from] crate::sensing::SensingError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentCounts {
    pub controlled_cav: usize,
    pub uncontrolled_cav: usize,
    pub rsu: usize,
    pub obstacle: usize,
}

impl AgentCounts {
    pub fn get(&self, kind: AgentKind) -> usize {
        match kind {
            AgentKind::ControlledCav => self.controlled_cav,
            AgentKind::UncontrolledCav => self.uncontrolled_cav,
            AgentKind::Rsu => self.rsu,
            AgentKind::Obstacle => self.obstacle,
        }
    }

    pub fn sensored(&self) -> usize {
        self.controlled_cav + self.uncontrolled_cav + self.rsu
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectCounts {
    pub vehicles: usize,
    pub pedestrians: usize,
    pub cyclists: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scene_kind: SceneKind,
    #[serde(default = "Pose::origin")]
    pub center: Pose,
    /// Width (template x) and height (template y) in meters.
    pub spawn_rect: (f64, f64),
    #[serde(default)]
    pub agents: AgentCounts,
    #[serde(default)]
    pub objects: ObjectCounts,
    pub duration: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(
        scene_kind: SceneKind,
        agents: AgentCounts,
        objects: ObjectCounts,
        duration: f64,
        seed: u64,
    ) -> Self {
        Self {
            scene_kind,
            center: Pose::origin(),
            spawn_rect: (80.0, 80.0),
            agents,
            objects,
            duration,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if !self.center.is_finite() {
            return bad("center must be finite".into());
        }
        let (w, h) = self.spawn_rect;
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return bad(format!("spawn_rect must be positive, got {w} x {h}"));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad(format!("duration must be >= 0, got {}", self.duration));
        }
        let frames = self.duration / FRAME_INTERVAL_S;
        if (frames - frames.round()).abs() > 1e-9 {
            return bad(format!(
                "duration {} is not a multiple of {FRAME_INTERVAL_S} s",
                self.duration
            ));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration / FRAME_INTERVAL_S).round() as usize
    }

    /// Stable identifier derived from the full configuration.
    pub fn scene_id(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        // FNV-1a
        let hash = json.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        format!(
            "{}-s{}-{:08x}",
            self.scene_kind.key(),
            self.seed,
            hash as u32
        )
    }

    fn arm_length(&self) -> f64 {
        let (w, h) = self.spawn_rect;
        (0.5 * w.hypot(h) + MAX_VEHICLE_SPEED * self.duration + 30.0).max(120.0)
    }

    fn in_rect(&self, local: Vec2) -> bool {
        local.x.abs() <= self.spawn_rect.0 / 2.0 && local.y.abs() <= self.spawn_rect.1 / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Static(Pose),
    Path {
        path: Arc<Waypath>,
        s: f64,
        speed: f64,
        z: f64,
    },
}

impl Motion {
    fn pose(&self, center: &Pose) -> Pose {
        match self {
            Motion::Static(p) => *p,
            Motion::Path { path, s, z, .. } => {
                let p = to_world(center, path.position(*s));
                Pose::new(p.x, p.y, *z, path.heading(*s) + center.yaw)
            }
        }
    }

    /// Speed actually driven this tick, after the segment clamp.
    fn current_speed(&self) -> f64 {
        match self {
            Motion::Static(_) => 0.0,
            Motion::Path { path, s, speed, .. } => {
                if *s >= path.length() {
                    0.0
                } else {
                    speed.min(path.speed_limit(*s))
                }
            }
        }
    }

    fn velocity(&self, center: &Pose) -> Vec2 {
        match self {
            Motion::Static(_) => Vec2::ZERO,
            Motion::Path { path, s, .. } => {
                let v = self.current_speed();
                let d = path.direction(*s).rotated(center.yaw);
                Vec2::new(d.x * v, d.y * v)
            }
        }
    }
}

/// Something physical in the world: an agent, an annotated object, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub agent: Option<(AgentId, AgentKind)>,
    pub object: Option<(ObjectId, ObjectClass)>,
    pub size: BoxSize,
    pub motion: Motion,
}

/// Mutable simulation state between ticks; `tick` doubles as the version
/// stamp observers must match.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub center: Pose,
    pub entities: Vec<Entity>,
}

impl WorldState {
    pub fn frame_index(&self) -> u32 {
        (self.tick / TICKS_PER_FRAME) as u32
    }

    /// Snapshot of the current state as a frame with agents and objects
    /// sorted by id.
    pub fn snapshot(&self) -> Frame {
        let mut agents = Vec::new();
        let mut objects = Vec::new();
        for e in &self.entities {
            let pose = e.motion.pose(&self.center);
            let velocity = e.motion.velocity(&self.center);
            if let Some((id, kind)) = e.agent {
                agents.push(Agent::new(id, kind, pose, velocity, e.size));
            }
            if let Some((id, class)) = e.object {
                objects.push(ObjectBox {
                    agent: e.agent.map(|a| a.0),
                    ..ObjectBox::new(id, class, pose, e.size, velocity)
                });
            }
        }
        agents.sort_by_key(|a| a.id);
        objects.sort_by_key(|o| o.id);
        Frame::new(self.frame_index(), agents, objects)
    }
}

/// Advances every mover by one tick along its path.
pub fn step(state: &WorldState, dt: f64) -> Result<WorldState, EngineError> {
    if (dt - TICK_S).abs() > 1e-12 {
        return Err(EngineError::InvalidTick(dt));
    }
    let mut next = state.clone();
    next.tick += 1;
    for e in &mut next.entities {
        let v = e.motion.current_speed();
        if let Motion::Path { path, s, .. } = &mut e.motion {
            *s = (*s + v * dt).min(path.length());
        }
    }
    Ok(next)
}

struct Spawner<'a> {
    config: &'a ScenarioConfig,
    rng: ChaCha8Rng,
    arm_length: f64,
    placed: Vec<Footprint>,
    entities: Vec<Entity>,
    /// Cruise speed of vehicles entering from each arm.
    arm_speeds: Vec<f64>,
}

impl<'a> Spawner<'a> {
    fn new(config: &'a ScenarioConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let arm_speeds = config
            .scene_kind
            .arms()
            .iter()
            .map(|_| rng.random_range(7.0..MAX_VEHICLE_SPEED))
            .collect();
        Self {
            config,
            rng,
            arm_length: config.arm_length(),
            placed: Vec::new(),
            entities: Vec::new(),
            arm_speeds,
        }
    }

    fn vehicle_size(&mut self) -> BoxSize {
        if self.rng.random_bool(TRUCK_SHARE) {
            BoxSize::TRUCK
        } else {
            BoxSize::CAR
        }
    }

    /// Draws a path for a mover of the given role.
    fn draw_path(&mut self, class: ObjectClass) -> (Arc<Waypath>, f64) {
        let kind = self.config.scene_kind;
        match class {
            ObjectClass::Pedestrian => {
                let arm = self.rng.random_range(0..kind.arms().len());
                let outward = self.rng.random_bool(0.5);
                let pts = sidewalk_points(kind, arm, outward, self.arm_length);
                (
                    Arc::new(Waypath::uniform(pts, PEDESTRIAN_SPEED)),
                    PEDESTRIAN_SPEED,
                )
            }
            ObjectClass::Vehicle | ObjectClass::Cyclist => {
                let routes = kind.routes();
                let (from, to) = routes[self.rng.random_range(0..routes.len())];
                let (offset, speed) = if class == ObjectClass::Vehicle {
                    (LANE_OFFSET, self.arm_speeds[from])
                } else {
                    (BIKE_LANE_OFFSET, CYCLIST_SPEED)
                };
                let pts = route_points(kind, from, to, offset, self.arm_length);
                (Arc::new(Waypath::uniform(pts, speed)), speed)
            }
        }
    }

    fn try_place(&mut self, footprint: Footprint, local: Vec2) -> bool {
        if !self.config.in_rect(local) || self.placed.iter().any(|p| p.overlaps(&footprint)) {
            return false;
        }
        self.placed.push(footprint);
        true
    }

    fn spawn_mover(
        &mut self,
        agent: Option<(AgentId, AgentKind)>,
        object: Option<(ObjectId, ObjectClass)>,
        class: ObjectClass,
        size: BoxSize,
        label: &'static str,
        index: usize,
    ) -> Result<(), EngineError> {
        let z = size.height / 2.0;
        for _ in 0..SPAWN_TRIES {
            let (path, speed) = self.draw_path(class);
            // spawn on the approach half so movers pass through the junction
            let s = self.rng.random_range(0.0..path.length() * 0.6);
            let local = path.position(s);
            let motion = Motion::Path { path, s, speed, z };
            let pose = motion.pose(&self.config.center);
            if self.try_place(Footprint::new(&pose, &size), local) {
                self.entities.push(Entity {
                    agent,
                    object,
                    size,
                    motion,
                });
                return Ok(());
            }
        }
        Err(EngineError::InfeasiblePacking {
            kind: label,
            index,
            tries: SPAWN_TRIES,
        })
    }

    fn spawn_rsu(&mut self, id: AgentId, k: usize) -> Result<(), EngineError> {
        let kind = self.config.scene_kind;
        // walk outward through the slot rings until one is free
        for ring in 0..8 {
            let slot = kind.rsu_slot(k + ring * kind.arms().len());
            let local = Vec2::new(slot.x, slot.y);
            let w = to_world(&self.config.center, local);
            let pose = Pose::new(w.x, w.y, slot.z, slot.yaw + self.config.center.yaw);
            if self.try_place(Footprint::new(&pose, &BoxSize::RSU_POLE), local) {
                self.entities.push(Entity {
                    agent: Some((id, AgentKind::Rsu)),
                    object: None,
                    size: BoxSize::RSU_POLE,
                    motion: Motion::Static(pose),
                });
                return Ok(());
            }
        }
        Err(EngineError::InfeasiblePacking {
            kind: "rsu",
            index: k,
            tries: 8,
        })
    }
}

/// Initial world state of a scenario.
pub fn spawn_world(config: &ScenarioConfig) -> Result<WorldState, EngineError> {
    config.validate()?;
    let mut sp = Spawner::new(config);
    let mut next_agent = 0u32;
    let mut next_object = 0u32;

    // RSUs first: their slots are fixed, movers fill in around them
    let rsu_first =
        next_agent + (config.agents.controlled_cav + config.agents.uncontrolled_cav) as u32;
    for k in 0..config.agents.rsu {
        sp.spawn_rsu(AgentId(rsu_first + k as u32), k)?;
    }
    for kind in [
        AgentKind::ControlledCav,
        AgentKind::UncontrolledCav,
        AgentKind::Rsu,
        AgentKind::Obstacle,
    ] {
        let n = config.agents.get(kind);
        if kind == AgentKind::Rsu {
            next_agent += n as u32;
            continue;
        }
        let label = match kind {
            AgentKind::ControlledCav => "controlled_cav",
            AgentKind::UncontrolledCav => "uncontrolled_cav",
            _ => "obstacle",
        };
        for i in 0..n {
            let size = sp.vehicle_size();
            let agent = Some((AgentId(next_agent), kind));
            let object = Some((ObjectId(next_object), ObjectClass::Vehicle));
            sp.spawn_mover(agent, object, ObjectClass::Vehicle, size, label, i)?;
            next_agent += 1;
            next_object += 1;
        }
    }
    let o = config.objects;
    for (class, n, label) in [
        (ObjectClass::Vehicle, o.vehicles, "vehicle"),
        (ObjectClass::Pedestrian, o.pedestrians, "pedestrian"),
        (ObjectClass::Cyclist, o.cyclists, "cyclist"),
    ] {
        for i in 0..n {
            let size = match class {
                ObjectClass::Vehicle => sp.vehicle_size(),
                c => c.default_size(),
            };
            sp.spawn_mover(
                None,
                Some((ObjectId(next_object), class)),
                class,
                size,
                label,
                i,
            )?;
            next_object += 1;
        }
    }
    Ok(WorldState {
        tick: 0,
        center: config.center,
        entities: sp.entities,
    })
}

/// Generates the full scene for `config`: one frame every five ticks,
/// `duration / 0.5` frames in total.
pub fn generate_scene(config: &ScenarioConfig) -> Result<Scene, EngineError> {
    let mut state = spawn_world(config)?;
    let mut frames = Vec::with_capacity(config.frame_count());
    for _ in 0..config.frame_count() {
        frames.push(state.snapshot());
        for _ in 0..TICKS_PER_FRAME {
            state = step(&state, TICK_S)?;
        }
    }
    Ok(Scene {
        id: config.scene_id(),
        config: *config,
        frames,
    })
}
