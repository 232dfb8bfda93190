//! Fixed lane skeletons for each scene kind, and piecewise-linear waypaths.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::world::{normalize_angle, Pose, Vec2};

/// Lateral offset of the driving lane from the road axis.
pub const LANE_OFFSET: f64 = 1.75;
pub const BIKE_LANE_OFFSET: f64 = 3.5;
pub const SIDEWALK_OFFSET: f64 = 6.0;
/// Distance from the junction center where lanes stop being straight.
const JUNCTION_RADIUS: f64 = 8.0;
const ROUNDABOUT_RADIUS: f64 = 14.0;
const ROUNDABOUT_ENTRY: f64 = 24.0;
/// Half-length of the heading blend around a corner.
const TURN_BLEND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Intersection,
    TJunction,
    HighwayRamp,
    Roundabout,
    FiveWay,
}

impl SceneKind {
    pub fn key(self) -> &'static str {
        match self {
            SceneKind::Intersection => "intersection",
            SceneKind::TJunction => "t_junction",
            SceneKind::HighwayRamp => "highway_ramp",
            SceneKind::Roundabout => "roundabout",
            SceneKind::FiveWay => "five_way",
        }
    }

    /// Road arm headings, pointing away from the center.
    pub fn arms(self) -> Vec<f64> {
        match self {
            SceneKind::Intersection | SceneKind::Roundabout => vec![0.0, FRAC_PI_2, PI, -FRAC_PI_2],
            SceneKind::TJunction => vec![0.0, PI, -FRAC_PI_2],
            SceneKind::HighwayRamp => vec![0.0, PI, PI + 0.35],
            SceneKind::FiveWay => (0..5).map(|k| FRAC_PI_2 + k as f64 * TAU / 5.0).collect(),
        }
    }

    /// Allowed `(from_arm, to_arm)` vehicle routes.
    pub fn routes(self) -> Vec<(usize, usize)> {
        match self {
            SceneKind::HighwayRamp => vec![(1, 0), (0, 1), (2, 0)],
            _ => {
                let n = self.arms().len();
                (0..n)
                    .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
                    .collect()
            }
        }
    }

    /// Static roadside-unit slot `k`, in template coordinates.
    pub fn rsu_slot(self, k: usize) -> Pose {
        let arms = self.arms();
        let n = arms.len();
        let a = arms[k % n];
        let b = arms[(k + 1) % n];
        let gap = normalize_angle(b - a).rem_euclid(TAU);
        let angle = a + gap / 2.0;
        let radius = 12.0 + 8.0 * (k / n) as f64;
        Pose::new(radius * angle.cos(), radius * angle.sin(), 5.0, angle + PI)
    }
}

fn unit(angle: f64) -> Vec2 {
    Vec2::new(angle.cos(), angle.sin())
}

fn add(a: Vec2, b: Vec2) -> Vec2 {
    Vec2::new(a.x + b.x, a.y + b.y)
}

fn scale(a: Vec2, k: f64) -> Vec2 {
    Vec2::new(a.x * k, a.y * k)
}

/// Right-hand offset of travel heading `heading` by `offset` meters.
fn right_of(heading: f64, offset: f64) -> Vec2 {
    scale(unit(heading - FRAC_PI_2), offset)
}

/// Waypoints of a route from arm `from` to arm `to` at lateral `offset`.
pub fn route_points(
    kind: SceneKind,
    from: usize,
    to: usize,
    offset: f64,
    arm_length: f64,
) -> Vec<Vec2> {
    let arms = kind.arms();
    let (ti, tj) = (arms[from], arms[to]);
    let in_dir = ti + PI;
    let off_in = right_of(in_dir, offset);
    let off_out = right_of(tj, offset);
    let mut pts = vec![add(scale(unit(ti), arm_length), off_in)];
    if kind == SceneKind::Roundabout {
        pts.push(add(scale(unit(ti), ROUNDABOUT_ENTRY), off_in));
        // counter-clockwise around the island
        let r = ROUNDABOUT_RADIUS + offset;
        let start = ti - 0.25;
        let mut sweep = (tj + 0.25 - start).rem_euclid(TAU);
        if sweep < 1e-6 {
            sweep = TAU;
        }
        let steps = (sweep / 0.3).ceil() as usize;
        for s in 0..=steps {
            pts.push(scale(unit(start + sweep * s as f64 / steps as f64), r));
        }
        pts.push(add(scale(unit(tj), ROUNDABOUT_ENTRY), off_out));
    } else {
        pts.push(add(scale(unit(ti), JUNCTION_RADIUS), off_in));
        pts.push(add(scale(unit(tj), JUNCTION_RADIUS), off_out));
    }
    pts.push(add(scale(unit(tj), arm_length), off_out));
    dedup_points(pts)
}

/// Straight sidewalk along arm `arm`, walked outward or inward.
pub fn sidewalk_points(kind: SceneKind, arm: usize, outward: bool, arm_length: f64) -> Vec<Vec2> {
    let t = kind.arms()[arm];
    let off = right_of(t, SIDEWALK_OFFSET);
    let near = add(scale(unit(t), JUNCTION_RADIUS + 2.0), off);
    let far = add(scale(unit(t), arm_length), off);
    if outward {
        vec![near, far]
    } else {
        vec![far, near]
    }
}

fn dedup_points(pts: Vec<Vec2>) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(pts.len());
    for p in pts {
        if out
            .last()
            .is_none_or(|q| (q.x - p.x).hypot(q.y - p.y) > 1e-6)
        {
            out.push(p);
        }
    }
    out
}

/// Ordered waypoints with a target speed per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypath {
    points: Vec<Vec2>,
    speeds: Vec<f64>,
    /// Arc length at each waypoint.
    stations: Vec<f64>,
    headings: Vec<f64>,
}

impl Waypath {
    /// Panics on fewer than two points, repeated consecutive points or a
    /// negative speed; templates never produce those.
    pub fn new(points: Vec<Vec2>, speeds: Vec<f64>) -> Self {
        assert!(points.len() >= 2, "waypath needs at least two points");
        assert_eq!(speeds.len(), points.len() - 1, "one speed per segment");
        assert!(
            speeds.iter().all(|v| *v >= 0.0),
            "speeds must be non-negative"
        );
        let mut stations = vec![0.0];
        let mut headings = Vec::with_capacity(speeds.len());
        for w in points.windows(2) {
            let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let len = dx.hypot(dy);
            assert!(len > 0.0, "consecutive waypoints must differ");
            stations.push(stations.last().unwrap() + len);
            headings.push(dy.atan2(dx));
        }
        Self {
            points,
            speeds,
            stations,
            headings,
        }
    }

    pub fn uniform(points: Vec<Vec2>, speed: f64) -> Self {
        let n = points.len().saturating_sub(1);
        Self::new(points, vec![speed; n])
    }

    pub fn length(&self) -> f64 {
        *self.stations.last().unwrap()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.headings.len();
        match self.stations[1..].iter().position(|st| s < *st) {
            Some(i) => i,
            None => n - 1,
        }
    }

    /// Target speed of the segment containing `s`.
    pub fn speed_limit(&self, s: f64) -> f64 {
        self.speeds[self.segment_at(s)]
    }

    pub fn position(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let len = self.stations[i + 1] - self.stations[i];
        let t = (s - self.stations[i]) / len;
        let (a, b) = (self.points[i], self.points[i + 1]);
        Vec2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    }

    /// Heading at `s`; blends linearly across each corner.
    pub fn heading(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg_len = |k: usize| self.stations[k + 1] - self.stations[k];
        // corner at the start of segment i
        if i > 0 {
            let blend = TURN_BLEND.min(seg_len(i - 1) / 2.0).min(seg_len(i) / 2.0);
            let u = s - self.stations[i];
            if u < blend {
                return blend_heading(
                    self.headings[i - 1],
                    self.headings[i],
                    (u + blend) / (2.0 * blend),
                );
            }
        }
        // corner at the end of segment i
        if i + 1 < self.headings.len() {
            let blend = TURN_BLEND.min(seg_len(i) / 2.0).min(seg_len(i + 1) / 2.0);
            let u = s - self.stations[i + 1];
            if u > -blend {
                return blend_heading(
                    self.headings[i],
                    self.headings[i + 1],
                    (u + blend) / (2.0 * blend),
                );
            }
        }
        self.headings[i]
    }

    pub fn direction(&self, s: f64) -> Vec2 {
        unit(self.headings[self.segment_at(s.clamp(0.0, self.length()))])
    }
}

fn blend_heading(from: f64, to: f64, t: f64) -> f64 {
    normalize_angle(from + normalize_angle(to - from) * t)
}

/// Maps template coordinates onto the world through the scene center pose.
pub fn to_world(center: &Pose, p: Vec2) -> Vec2 {
    let r = p.rotated(center.yaw);
    Vec2::new(r.x + center.x, r.y + center.y)
}
