//! Domain types for agents, objects, frames and scenes, plus the ego-frame
//! projection and valid-range filtering used to build per-ego samples.
//!
//! Geometry is evaluated in the bird's-eye-view plane: `z` and box heights are
//! carried through every transform but never influence range or visibility.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ScenarioConfig;

/// Seconds between two saved frames.
pub const FRAME_INTERVAL_S: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("box size components must be positive, got {0:?}")]
    InvalidSize(BoxSize),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} has no sensor")]
    NotSensored(AgentId),
    #[error("range must be positive, got {0}")]
    InvalidRange(f64),
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let wrapped = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "object-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Position in meters and heading in radians. The constructor keeps `yaw`
/// in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(x, y, 0.0, yaw)
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn planar_distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    ControlledCav,
    UncontrolledCav,
    Rsu,
    Obstacle,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::ControlledCav,
        AgentKind::UncontrolledCav,
        AgentKind::Rsu,
        AgentKind::Obstacle,
    ];

    pub fn is_sensored(self) -> bool {
        self != AgentKind::Obstacle
    }
}

/// LiDAR parameters. Defaults: 64 channels, 256k points/s, 200 m range,
/// -40°..0° vertical FOV, 20 Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub range: f64,
    pub channels: u32,
    pub points_per_second: u32,
    pub fov_vertical: (f64, f64),
    pub rate: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            range: 200.0,
            channels: 64,
            points_per_second: 256_000,
            fov_vertical: ((-40.0f64).to_radians(), 0.0),
            rate: 20.0,
        }
    }
}

impl SensorConfig {
    /// Points produced by one full sweep.
    pub fn points_per_sweep(&self) -> u64 {
        (self.points_per_second as f64 / self.rate).round() as u64
    }
}

/// Length (along heading), width and height in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl BoxSize {
    pub const CAR: BoxSize = BoxSize::new(4.5, 1.9, 1.6);
    pub const TRUCK: BoxSize = BoxSize::new(8.0, 2.5, 3.2);
    pub const PEDESTRIAN: BoxSize = BoxSize::new(0.6, 0.6, 1.75);
    pub const CYCLIST: BoxSize = BoxSize::new(1.8, 0.8, 1.6);
    pub const RSU_POLE: BoxSize = BoxSize::new(0.5, 0.5, 5.0);

    pub const fn new(length: f64, width: f64, height: f64) -> Self {
        Self {
            length,
            width,
            height,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.length, self.width, self.height]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub kind: AgentKind,
    pub pose: Pose,
    pub velocity: Vec2,
    pub size: BoxSize,
    pub sensor: Option<SensorConfig>,
}

impl Agent {
    /// Builds an agent, attaching the default sensor to every non-obstacle kind.
    pub fn new(id: AgentId, kind: AgentKind, pose: Pose, velocity: Vec2, size: BoxSize) -> Self {
        let sensor = kind.is_sensored().then(SensorConfig::default);
        Self {
            id,
            kind,
            pose,
            velocity,
            size,
            sensor,
        }
    }

    pub fn is_sensored(&self) -> bool {
        self.sensor.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
        }
    }

    pub fn default_size(self) -> BoxSize {
        match self {
            ObjectClass::Vehicle => BoxSize::CAR,
            ObjectClass::Pedestrian => BoxSize::PEDESTRIAN,
            ObjectClass::Cyclist => BoxSize::CYCLIST,
        }
    }
}

/// An annotated 3D box. `agent` links the box to the agent whose body it
/// is, so that an ego never annotates or occludes itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub id: ObjectId,
    pub class: ObjectClass,
    pub center: Pose,
    pub size: BoxSize,
    pub velocity: Vec2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
}

impl ObjectBox {
    pub fn new(
        id: ObjectId,
        class: ObjectClass,
        center: Pose,
        size: BoxSize,
        velocity: Vec2,
    ) -> Self {
        Self {
            id,
            class,
            center,
            size,
            velocity,
            agent: None,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !self.center.is_finite() || !self.velocity.is_finite() {
            return Err(WorldError::NonFinite("object box"));
        }
        if !self.size.is_valid() {
            return Err(WorldError::InvalidSize(self.size));
        }
        Ok(())
    }

    pub fn planar_range(&self) -> f64 {
        self.center.x.hypot(self.center.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u32,
    pub sim_time: f64,
    pub agents: Vec<Agent>,
    pub objects: Vec<ObjectBox>,
}

impl Frame {
    pub fn new(index: u32, agents: Vec<Agent>, objects: Vec<ObjectBox>) -> Self {
        Self {
            index,
            sim_time: index as f64 * FRAME_INTERVAL_S,
            agents,
            objects,
        }
    }

    pub fn agent(&self, id: AgentId) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn sensored_agents(&self) -> impl Iterator<Item = &Agent> {
        self.agents.iter().filter(|a| a.is_sensored())
    }

    pub fn sensored_ids(&self) -> Vec<AgentId> {
        self.sensored_agents().map(|a| a.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub config: ScenarioConfig,
    pub frames: Vec<Frame>,
}

impl Scene {
    /// Number of sensored agents, i.e. samples per frame.
    pub fn sensored_count(&self) -> usize {
        self.frames
            .first()
            .map(|f| f.sensored_agents().count())
            .unwrap_or(0)
    }

    pub fn agent_count(&self, kind: AgentKind) -> usize {
        self.frames
            .first()
            .map(|f| f.agents.iter().filter(|a| a.kind == kind).count())
            .unwrap_or(0)
    }
}

/// Ground truth of one `(frame, ego)` pair, in the ego's coordinate frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub frame_index: u32,
    pub ego_id: AgentId,
    pub range: f64,
    pub annotations: Vec<ObjectBox>,
}

/// Expresses a world-frame box in the coordinate frame of `ego`.
pub fn transform_to_ego(obj: &ObjectBox, ego: &Pose) -> Result<ObjectBox, WorldError> {
    if !ego.is_finite() {
        return Err(WorldError::NonFinite("ego pose"));
    }
    obj.validate()?;
    let offset = Vec2::new(obj.center.x - ego.x, obj.center.y - ego.y).rotated(-ego.yaw);
    Ok(ObjectBox {
        center: Pose::new(
            offset.x,
            offset.y,
            obj.center.z - ego.z,
            obj.center.yaw - ego.yaw,
        ),
        velocity: obj.velocity.rotated(-ego.yaw),
        ..obj.clone()
    })
}

/// Inverse of [`transform_to_ego`].
pub fn transform_from_ego(obj: &ObjectBox, ego: &Pose) -> Result<ObjectBox, WorldError> {
    if !ego.is_finite() {
        return Err(WorldError::NonFinite("ego pose"));
    }
    obj.validate()?;
    let world = Vec2::new(obj.center.x, obj.center.y).rotated(ego.yaw);
    Ok(ObjectBox {
        center: Pose::new(
            world.x + ego.x,
            world.y + ego.y,
            obj.center.z + ego.z,
            obj.center.yaw + ego.yaw,
        ),
        velocity: obj.velocity.rotated(ego.yaw),
        ..obj.clone()
    })
}

/// Planar center-distance test, inclusive at the boundary.
pub fn within_range(obj: &ObjectBox, range: f64) -> bool {
    obj.planar_range() <= range
}

/// Keeps ego-frame boxes whose center lies within `range`, preserving order.
pub fn filter_valid(boxes: &[ObjectBox], range: f64) -> Vec<ObjectBox> {
    boxes
        .iter()
        .filter(|b| within_range(b, range))
        .cloned()
        .collect()
}

/// Builds the ego-frame annotation set of `ego_id` for one frame. The ego's
/// own body box is never annotated.
pub fn build_sample(frame: &Frame, ego_id: AgentId, range: f64) -> Result<Sample, WorldError> {
    if !(range.is_finite() && range > 0.0) {
        return Err(WorldError::InvalidRange(range));
    }
    let ego = frame
        .agent(ego_id)
        .ok_or(WorldError::UnknownAgent(ego_id))?;
    if !ego.is_sensored() {
        return Err(WorldError::NotSensored(ego_id));
    }
    let mut annotations = Vec::new();
    for obj in frame.objects.iter().filter(|o| o.agent != Some(ego_id)) {
        let local = transform_to_ego(obj, &ego.pose)?;
        if within_range(&local, range) {
            annotations.push(local);
        }
    }
    Ok(Sample {
        frame_index: frame.index,
        ego_id,
        range,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn car_at(id: u32, x: f64, y: f64, yaw: f64) -> ObjectBox {
        ObjectBox::new(
            ObjectId(id),
            ObjectClass::Vehicle,
            Pose::planar(x, y, yaw),
            BoxSize::CAR,
            Vec2::new(1.0, 0.5),
        )
    }

    #[test]
    fn yaw_normalization_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_eq!(normalize_angle(-PI), -PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_angle(0.0), 0.0);
        for a in [-1e-17, 1e-17, 7.0, -7.0, 100.0] {
            let n = normalize_angle(a);
            assert!((-PI..PI).contains(&n), "{a} -> {n}");
        }
    }

    #[test]
    fn identity_transform() {
        let b = car_at(1, 10.0, 0.0, 0.0);
        let t = transform_to_ego(&b, &Pose::origin()).unwrap();
        assert_eq!(t.center.x, 10.0);
        assert_eq!(t.center.y, 0.0);
        assert_eq!(t.center.yaw, 0.0);
    }

    #[test]
    fn rotated_ego_transform() {
        let b = car_at(1, 5.0, 10.0, PI / 2.0);
        let t = transform_to_ego(&b, &Pose::planar(5.0, 0.0, PI / 2.0)).unwrap();
        assert!((t.center.x - 10.0).abs() < 1e-12);
        assert!(t.center.y.abs() < 1e-12);
        assert!(t.center.yaw.abs() < 1e-12);
        assert!((t.velocity.norm() - b.velocity.norm()).abs() < 1e-12);
        assert_eq!(t.size, b.size);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let b = car_at(1, 1.0, 1.0, 0.0);
        assert!(transform_to_ego(&b, &Pose::planar(f64::NAN, 0.0, 0.0)).is_err());
        let bad = car_at(2, f64::INFINITY, 0.0, 0.0);
        assert!(transform_to_ego(&bad, &Pose::origin()).is_err());
    }

    #[test]
    fn valid_range_boundary() {
        let boxes = vec![
            car_at(1, 49.9, 0.0, 0.0),
            car_at(2, 30.0, 40.0, 0.0), // exactly 50
            car_at(3, 0.0, -50.0001, 0.0),
        ];
        let kept: Vec<u32> = filter_valid(&boxes, 50.0).iter().map(|b| b.id.0).collect();
        assert_eq!(kept, vec![1, 2]);
        let far = vec![car_at(4, 100.1, 0.0, 0.0)];
        assert!(filter_valid(&far, 100.0).is_empty());
    }

    fn frame_with(agents: Vec<Agent>, objects: Vec<ObjectBox>) -> Frame {
        Frame::new(0, agents, objects)
    }

    fn agent(id: u32, kind: AgentKind, x: f64, y: f64) -> Agent {
        Agent::new(
            AgentId(id),
            kind,
            Pose::planar(x, y, 0.0),
            Vec2::ZERO,
            BoxSize::CAR,
        )
    }

    #[test]
    fn empty_frame_sample() {
        let f = frame_with(vec![agent(0, AgentKind::ControlledCav, 0.0, 0.0)], vec![]);
        let s = build_sample(&f, AgentId(0), 50.0).unwrap();
        assert!(s.annotations.is_empty());
    }

    #[test]
    fn sample_per_sensored_agent() {
        let f = frame_with(
            vec![
                agent(0, AgentKind::ControlledCav, 0.0, 0.0),
                agent(1, AgentKind::UncontrolledCav, 10.0, 0.0),
                agent(2, AgentKind::Rsu, 0.0, 10.0),
                agent(3, AgentKind::Obstacle, -10.0, 0.0),
            ],
            vec![car_at(9, 3.0, 3.0, 0.0)],
        );
        let ok = f
            .agents
            .iter()
            .filter(|a| build_sample(&f, a.id, 50.0).is_ok())
            .count();
        assert_eq!(ok, 3);
        assert_eq!(
            build_sample(&f, AgentId(3), 50.0),
            Err(WorldError::NotSensored(AgentId(3)))
        );
        assert_eq!(
            build_sample(&f, AgentId(42), 50.0),
            Err(WorldError::UnknownAgent(AgentId(42)))
        );
    }

    #[test]
    fn sample_counts_match_brute_force() {
        let ego = Pose::planar(3.0, -2.0, 0.7);
        let objects: Vec<ObjectBox> = (0..10)
            .map(|i| {
                let r = if i < 4 {
                    10.0 + i as f64 * 9.0
                } else {
                    55.0 + i as f64 * 7.0
                };
                let a = i as f64 * 0.9;
                car_at(i, ego.x + r * a.cos(), ego.y + r * a.sin(), a)
            })
            .collect();
        let brute = objects
            .iter()
            .filter(|o| {
                ((o.center.x - ego.x).powi(2) + (o.center.y - ego.y).powi(2)).sqrt() <= 50.0
            })
            .count();
        assert_eq!(brute, 4);
        let mut ego_agent = agent(0, AgentKind::ControlledCav, 0.0, 0.0);
        ego_agent.pose = ego;
        let f = frame_with(vec![ego_agent], objects);
        let s = build_sample(&f, AgentId(0), 50.0).unwrap();
        assert_eq!(s.annotations.len(), 4);
    }

    #[test]
    fn own_body_excluded() {
        let mut body = car_at(5, 0.0, 0.0, 0.0);
        body.agent = Some(AgentId(0));
        let f = frame_with(
            vec![
                agent(0, AgentKind::ControlledCav, 0.0, 0.0),
                agent(1, AgentKind::Rsu, 5.0, 5.0),
            ],
            vec![body, car_at(6, 5.0, 0.0, 0.0)],
        );
        let s0 = build_sample(&f, AgentId(0), 50.0).unwrap();
        assert_eq!(
            s0.annotations.iter().map(|b| b.id.0).collect::<Vec<_>>(),
            vec![6]
        );
        let s1 = build_sample(&f, AgentId(1), 50.0).unwrap();
        assert_eq!(s1.annotations.len(), 2);
    }

    fn arb_box() -> impl Strategy<Value = ObjectBox> {
        (
            -300.0..300.0f64,
            -300.0..300.0f64,
            -3.0..3.0f64,
            -10.0..10.0f64,
            -5.0..5.0f64,
            -5.0..5.0f64,
        )
            .prop_map(|(x, y, z, yaw, vx, vy)| ObjectBox {
                velocity: Vec2::new(vx, vy),
                center: Pose::new(x, y, z, yaw),
                ..car_at(1, 0.0, 0.0, 0.0)
            })
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -300.0..300.0f64,
            -300.0..300.0f64,
            -3.0..3.0f64,
            -10.0..10.0f64,
        )
            .prop_map(|(x, y, z, yaw)| Pose::new(x, y, z, yaw))
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        normalize_angle(a - b).abs()
    }

    proptest! {
        #[test]
        fn transform_round_trip(b in arb_box(), ego in arb_pose()) {
            let local = transform_to_ego(&b, &ego).unwrap();
            let back = transform_from_ego(&local, &ego).unwrap();
            prop_assert!((back.center.x - b.center.x).abs() < 1e-9);
            prop_assert!((back.center.y - b.center.y).abs() < 1e-9);
            prop_assert!((back.center.z - b.center.z).abs() < 1e-9);
            prop_assert!(angle_diff(back.center.yaw, b.center.yaw) < 1e-12);
            prop_assert!((local.velocity.norm() - b.velocity.norm()).abs() < 1e-9);
            prop_assert!((-PI..PI).contains(&local.center.yaw));
        }

        #[test]
        fn filter_idempotent_and_monotone(
            pts in prop::collection::vec((-120.0..120.0f64, -120.0..120.0f64), 0..40),
            r1 in 1.0..100.0f64,
            dr in 0.0..50.0f64,
        ) {
            let boxes: Vec<ObjectBox> = pts.iter().enumerate()
                .map(|(i, (x, y))| car_at(i as u32, *x, *y, 0.0)).collect();
            let a = filter_valid(&boxes, r1);
            prop_assert_eq!(&filter_valid(&a, r1), &a);
            let b = filter_valid(&boxes, r1 + dr);
            prop_assert!(a.iter().all(|x| b.contains(x)));
        }
    }
}
