//! Geometric visibility oracle standing in for LiDAR + detector.
//!
//! An object is visible to a sensored agent when its center lies within range
//! and enough of `K` sample points on its footprint boundary have a clear
//! line of sight to the sensor origin. Any other object body or agent body
//! can block a sight line.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Footprint;
use crate::world::{Agent, AgentId, Frame, ObjectId, Vec2};

pub type ObjectSet = BTreeSet<ObjectId>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} has no sensor")]
    NotSensored(AgentId),
    #[error("invalid visibility model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilityModel {
    pub range: f64,
    pub samples_per_box: usize,
    pub require_fraction: f64,
}

impl Default for VisibilityModel {
    fn default() -> Self {
        Self {
            range: 50.0,
            samples_per_box: 8,
            require_fraction: 1.0 / 8.0,
        }
    }
}

impl VisibilityModel {
    pub fn with_range(range: f64) -> Self {
        Self {
            range,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SensingError> {
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(SensingError::InvalidModel(format!(
                "range must be > 0, got {}",
                self.range
            )));
        }
        if self.samples_per_box < 4 {
            return Err(SensingError::InvalidModel(format!(
                "samples_per_box must be >= 4, got {}",
                self.samples_per_box
            )));
        }
        if !(self.require_fraction > 0.0 && self.require_fraction <= 1.0) {
            return Err(SensingError::InvalidModel(format!(
                "require_fraction must be in (0, 1], got {}",
                self.require_fraction
            )));
        }
        Ok(())
    }

    /// Number of clear sample points needed for visibility.
    pub fn required_points(&self) -> usize {
        ((self.require_fraction * self.samples_per_box as f64).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Body {
    Object(ObjectId),
    Agent(AgentId),
}

#[derive(Debug, Clone, Copy)]
struct Occluder {
    footprint: Footprint,
    body: Body,
    /// Agent whose body this is, if any.
    owner: Option<AgentId>,
}

/// Every physical body in a frame. Agents with a linked object box appear
/// once, through that box.
fn occluders(frame: &Frame) -> Vec<Occluder> {
    let linked: BTreeSet<AgentId> = frame.objects.iter().filter_map(|o| o.agent).collect();
    let objects = frame.objects.iter().map(|o| Occluder {
        footprint: Footprint::of_object(o),
        body: Body::Object(o.id),
        owner: o.agent,
    });
    let agents = frame
        .agents
        .iter()
        .filter(|a| !linked.contains(&a.id))
        .map(|a| Occluder {
            footprint: Footprint::of_agent(a),
            body: Body::Agent(a.id),
            owner: Some(a.id),
        });
    objects.chain(agents).collect()
}

fn sensored(frame: &Frame, id: AgentId) -> Result<&Agent, SensingError> {
    let agent = frame.agent(id).ok_or(SensingError::UnknownAgent(id))?;
    if agent.sensor.is_none() {
        return Err(SensingError::NotSensored(id));
    }
    Ok(agent)
}

fn effective_range(agent: &Agent, model: &VisibilityModel) -> f64 {
    agent
        .sensor
        .map(|s| s.range.min(model.range))
        .unwrap_or(0.0)
}

fn visible_with(
    agent: &Agent,
    frame: &Frame,
    model: &VisibilityModel,
    occ: &Occluders,
) -> ObjectSet {
    let origin = agent.pose.position();
    let range = effective_range(agent, model);
    let dist = |p: Vec2| (p.x - origin.x).hypot(p.y - origin.y);
    let (all, max_radius) = (&occ.bodies, occ.max_radius);
    // bodies that can intersect any sight line of length <= range + max_radius;
    // a body enclosing the sensor origin is overlapping the agent and ignored
    let near: Vec<&Occluder> = all
        .iter()
        .filter(|o| dist(o.footprint.center) - o.footprint.bounding_radius() <= range + max_radius)
        .filter(|o| o.owner != Some(agent.id) && !o.footprint.contains(origin))
        .collect();

    let required = model.required_points();
    let mut visible = ObjectSet::new();
    for obj in frame.objects.iter().filter(|o| o.agent != Some(agent.id)) {
        let center = obj.center.position();
        let d = dist(center);
        if d > range {
            continue;
        }
        let target = Footprint::of_object(obj);
        let reach = d + target.bounding_radius();
        let blockers: Vec<&Footprint> = near
            .iter()
            .filter(|o| o.body != Body::Object(obj.id))
            .filter(|o| dist(o.footprint.center) - o.footprint.bounding_radius() <= reach)
            .map(|o| &o.footprint)
            .collect();
        let mut clear = 0;
        for p in target.boundary_samples(model.samples_per_box) {
            if !blockers.iter().any(|b| b.blocks_segment(origin, p)) {
                clear += 1;
                if clear >= required {
                    visible.insert(obj.id);
                    break;
                }
            }
        }
    }
    visible
}

/// Objects `agent_id` can see in `frame`.
pub fn visible_objects(
    agent_id: AgentId,
    frame: &Frame,
    model: &VisibilityModel,
) -> Result<ObjectSet, SensingError> {
    visible_objects_among(agent_id, frame, model, &Occluders::of(frame))
}

/// Every body of one frame, built once and shared by many visibility queries.
#[derive(Debug, Clone)]
pub struct Occluders {
    bodies: Vec<Occluder>,
    max_radius: f64,
}

impl Occluders {
    pub fn of(frame: &Frame) -> Self {
        let bodies = occluders(frame);
        let max_radius = bodies
            .iter()
            .map(|o| o.footprint.bounding_radius())
            .fold(0.0, f64::max);
        Self { bodies, max_radius }
    }
}

/// [`visible_objects`] with occluders prepared by the caller from the same
/// frame.
pub fn visible_objects_among(
    agent_id: AgentId,
    frame: &Frame,
    model: &VisibilityModel,
    occluders: &Occluders,
) -> Result<ObjectSet, SensingError> {
    model.validate()?;
    let agent = sensored(frame, agent_id)?;
    Ok(visible_with(agent, frame, model, occluders))
}

/// Objects whose center lies within `model.range` of the ego, excluding the
/// ego's own body.
fn in_range_of(ego: &Agent, frame: &Frame, model: &VisibilityModel) -> ObjectSet {
    frame
        .objects
        .iter()
        .filter(|o| o.agent != Some(ego.id))
        .filter(|o| o.center.planar_distance(&ego.pose) <= model.range)
        .map(|o| o.id)
        .collect()
}

/// Per-frame cache of every sensored agent's visible set and valid-range set.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityIndex {
    pub model: VisibilityModel,
    pub visible: BTreeMap<AgentId, ObjectSet>,
    pub in_range: BTreeMap<AgentId, ObjectSet>,
}

impl VisibilityIndex {
    pub fn build(frame: &Frame, model: &VisibilityModel) -> Result<Self, SensingError> {
        model.validate()?;
        let all = Occluders::of(frame);
        let mut visible = BTreeMap::new();
        let mut in_range = BTreeMap::new();
        for agent in frame.sensored_agents() {
            visible.insert(agent.id, visible_with(agent, frame, model, &all));
            in_range.insert(agent.id, in_range_of(agent, frame, model));
        }
        Ok(Self {
            model: *model,
            visible,
            in_range,
        })
    }

    /// Assembles an index from visible sets computed elsewhere (one per
    /// sensored agent), adding the valid-range sets.
    pub fn from_observations(
        frame: &Frame,
        model: &VisibilityModel,
        visible: BTreeMap<AgentId, ObjectSet>,
    ) -> Self {
        let in_range = frame
            .sensored_agents()
            .filter(|a| visible.contains_key(&a.id))
            .map(|a| (a.id, in_range_of(a, frame, model)))
            .collect();
        Self {
            model: *model,
            visible,
            in_range,
        }
    }

    pub fn visible(&self, id: AgentId) -> Result<&ObjectSet, SensingError> {
        self.visible.get(&id).ok_or(SensingError::UnknownAgent(id))
    }

    /// Union of what the ego and its cooperators see, restricted to the
    /// ego's valid range.
    pub fn fused_coverage(
        &self,
        ego: AgentId,
        cooperators: &[AgentId],
    ) -> Result<ObjectSet, SensingError> {
        let valid = self
            .in_range
            .get(&ego)
            .ok_or(SensingError::UnknownAgent(ego))?;
        let mut out: ObjectSet = self.visible(ego)?.intersection(valid).copied().collect();
        for c in cooperators.iter().filter(|c| **c != ego) {
            out.extend(self.visible(*c)?.intersection(valid).copied());
        }
        Ok(out)
    }

    /// Number of in-range objects `candidate` adds to the ego's own view.
    pub fn perception_gain(&self, ego: AgentId, candidate: AgentId) -> Result<u32, SensingError> {
        let valid = self
            .in_range
            .get(&ego)
            .ok_or(SensingError::UnknownAgent(ego))?;
        let own = self.visible(ego)?;
        let gained = self
            .visible(candidate)?
            .iter()
            .filter(|o| valid.contains(o) && !own.contains(o))
            .count();
        Ok(gained as u32)
    }

    /// Nonzero gains of ordered `(ego, candidate)` pairs. Pairs missing
    /// from the table gain nothing.
    pub fn gain_table(&self) -> BTreeMap<(AgentId, AgentId), u32> {
        let mut seers: BTreeMap<ObjectId, Vec<AgentId>> = BTreeMap::new();
        for (&a, set) in &self.visible {
            for &o in set {
                seers.entry(o).or_default().push(a);
            }
        }
        let mut table = BTreeMap::new();
        for (&e, valid) in &self.in_range {
            let Some(own) = self.visible.get(&e) else {
                continue;
            };
            for o in valid.iter().filter(|o| !own.contains(o)) {
                for &c in seers.get(o).into_iter().flatten().filter(|c| **c != e) {
                    *table.entry((e, c)).or_insert(0) += 1;
                }
            }
        }
        table
    }
}

pub fn fused_coverage(
    ego: AgentId,
    cooperators: &[AgentId],
    frame: &Frame,
    model: &VisibilityModel,
) -> Result<ObjectSet, SensingError> {
    model.validate()?;
    let ego_agent = sensored(frame, ego)?;
    let valid = in_range_of(ego_agent, frame, model);
    let all = Occluders::of(frame);
    let mut out: ObjectSet = visible_with(ego_agent, frame, model, &all)
        .intersection(&valid)
        .copied()
        .collect();
    for &c in cooperators.iter().filter(|c| **c != ego) {
        let coop = sensored(frame, c)?;
        out.extend(
            visible_with(coop, frame, model, &all)
                .intersection(&valid)
                .copied(),
        );
    }
    Ok(out)
}

pub fn perception_gain(
    ego: AgentId,
    candidate: AgentId,
    frame: &Frame,
    model: &VisibilityModel,
) -> Result<u32, SensingError> {
    let alone = fused_coverage(ego, &[], frame, model)?;
    let with = fused_coverage(ego, &[candidate], frame, model)?;
    Ok(with.difference(&alone).count() as u32)
}

/// Pairwise planar distances and line-of-sight occlusion between agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoopGraph {
    pub agents: Vec<AgentId>,
    pub distance: Vec<Vec<f64>>,
    pub occluded: Vec<Vec<bool>>,
}

impl CoopGraph {
    fn index_of(&self, id: AgentId) -> Option<usize> {
        self.agents.iter().position(|a| *a == id)
    }

    pub fn distance_between(&self, a: AgentId, b: AgentId) -> Option<f64> {
        Some(self.distance[self.index_of(a)?][self.index_of(b)?])
    }

    pub fn is_occluded(&self, a: AgentId, b: AgentId) -> Option<bool> {
        Some(self.occluded[self.index_of(a)?][self.index_of(b)?])
    }
}

pub fn coop_graph(frame: &Frame) -> CoopGraph {
    let mut agents: Vec<&Agent> = frame.agents.iter().collect();
    agents.sort_by_key(|a| a.id);
    let all = occluders(frame);
    let n = agents.len();
    let mut distance = vec![vec![0.0; n]; n];
    let mut occluded = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (agents[i], agents[j]);
            let d = a.pose.planar_distance(&b.pose);
            let (pa, pb) = (a.pose.position(), b.pose.position());
            let blocked = all
                .iter()
                .filter(|o| o.owner != Some(a.id) && o.owner != Some(b.id))
                .any(|o| o.footprint.blocks_segment(pa, pb));
            distance[i][j] = d;
            distance[j][i] = d;
            occluded[i][j] = blocked;
            occluded[j][i] = blocked;
        }
    }
    CoopGraph {
        agents: agents.iter().map(|a| a.id).collect(),
        distance,
        occluded,
    }
}

/// Fraction of `rays` evenly spaced azimuths from the agent's sensor that
/// hit some other body within sensor range.
pub fn ray_hit_fraction(agent: &Agent, frame: &Frame, rays: usize) -> f64 {
    let Some(sensor) = agent.sensor else {
        return 0.0;
    };
    if rays == 0 {
        return 0.0;
    }
    let origin = agent.pose.position();
    let near: Vec<Footprint> = occluders(frame)
        .into_iter()
        .filter(|o| o.owner != Some(agent.id))
        .map(|o| o.footprint)
        .filter(|f| {
            (f.center.x - origin.x).hypot(f.center.y - origin.y) - f.bounding_radius()
                <= sensor.range
        })
        .collect();
    let hits = (0..rays)
        .filter(|i| {
            let az = *i as f64 * std::f64::consts::TAU / rays as f64;
            let end = Vec2::new(
                origin.x + sensor.range * az.cos(),
                origin.y + sensor.range * az.sin(),
            );
            near.iter().any(|f| f.blocks_segment(origin, end))
        })
        .count();
    hits as f64 / rays as f64
}
