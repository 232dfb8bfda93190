//! Oriented rectangles in the BEV plane.

use crate::world::{Agent, BoxSize, ObjectBox, Pose, Vec2};

/// Minimum parametric overlap for a segment to count as passing through a
/// footprint. Grazing contact along an edge or at a corner does not block.
const CLIP_EPS: f64 = 1e-9;

/// BEV footprint of a box: center, heading and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center: Vec2,
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Footprint {
    pub fn new(pose: &Pose, size: &BoxSize) -> Self {
        Self {
            center: pose.position(),
            yaw: pose.yaw,
            half_length: size.length / 2.0,
            half_width: size.width / 2.0,
        }
    }

    pub fn of_object(obj: &ObjectBox) -> Self {
        Self::new(&obj.center, &obj.size)
    }

    pub fn of_agent(agent: &Agent) -> Self {
        Self::new(&agent.pose, &agent.size)
    }

    /// Radius of the circumscribed circle.
    pub fn bounding_radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    fn to_local(self, p: Vec2) -> Vec2 {
        Vec2::new(p.x - self.center.x, p.y - self.center.y).rotated(-self.yaw)
    }

    fn to_world(self, p: Vec2) -> Vec2 {
        let r = p.rotated(self.yaw);
        Vec2::new(r.x + self.center.x, r.y + self.center.y)
    }

    /// Corners in counter-clockwise order, starting at front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let (l, w) = (self.half_length, self.half_width);
        [
            self.to_world(Vec2::new(l, w)),
            self.to_world(Vec2::new(-l, w)),
            self.to_world(Vec2::new(-l, -w)),
            self.to_world(Vec2::new(l, -w)),
        ]
    }

    /// `count` points spread evenly by arc length around the perimeter,
    /// starting at the front-left corner.
    pub fn boundary_samples(&self, count: usize) -> Vec<Vec2> {
        let corners = self.corners();
        let edges: Vec<(Vec2, Vec2, f64)> = (0..4)
            .map(|i| {
                let a = corners[i];
                let b = corners[(i + 1) % 4];
                (a, b, (b.x - a.x).hypot(b.y - a.y))
            })
            .collect();
        let perimeter: f64 = edges.iter().map(|e| e.2).sum();
        let step = perimeter / count as f64;
        let mut out = Vec::with_capacity(count);
        let mut edge = 0;
        let mut edge_start = 0.0;
        for i in 0..count {
            let s = i as f64 * step;
            while edge < 3 && s >= edge_start + edges[edge].2 {
                edge_start += edges[edge].2;
                edge += 1;
            }
            let (a, b, len) = edges[edge];
            let t = if len > 0.0 {
                ((s - edge_start) / len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out.push(Vec2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
        out
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.half_length && q.y.abs() <= self.half_width
    }

    /// True when the segment from `a` to `b` passes through the interior of the
    /// footprint (slab clipping in the box frame).
    pub fn blocks_segment(&self, a: Vec2, b: Vec2) -> bool {
        let p = self.to_local(a);
        let q = self.to_local(b);
        let d = Vec2::new(q.x - p.x, q.y - p.y);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (start, delta, half) in [(p.x, d.x, self.half_length), (p.y, d.y, self.half_width)] {
            if delta.abs() < 1e-15 {
                if start.abs() >= half {
                    return false;
                }
                continue;
            }
            let mut ta = (-half - start) / delta;
            let mut tb = (half - start) / delta;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t1 - t0 <= CLIP_EPS {
                return false;
            }
        }
        t1 - t0 > CLIP_EPS
    }

    /// Separating-axis overlap test between two oriented rectangles.
    pub fn overlaps(&self, other: &Footprint) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        let axes = [
            Vec2::new(1.0, 0.0).rotated(self.yaw),
            Vec2::new(0.0, 1.0).rotated(self.yaw),
            Vec2::new(1.0, 0.0).rotated(other.yaw),
            Vec2::new(0.0, 1.0).rotated(other.yaw),
        ];
        axes.iter().all(|axis| {
            let project = |pts: &[Vec2; 4]| {
                pts.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        let v = p.x * axis.x + p.y * axis.y;
                        (lo.min(v), hi.max(v))
                    })
            };
            let (alo, ahi) = project(&ca);
            let (blo, bhi) = project(&cb);
            ahi > blo && bhi > alo
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit_square() -> Footprint {
        Footprint::new(&Pose::origin(), &BoxSize::new(2.0, 2.0, 1.0))
    }

    #[test]
    fn blocks_through_segment() {
        let f = unit_square();
        assert!(f.blocks_segment(Vec2::new(-5.0, 0.0), Vec2::new(5.0, 0.0)));
        assert!(f.blocks_segment(Vec2::new(-5.0, -5.0), Vec2::new(5.0, 5.0)));
        assert!(!f.blocks_segment(Vec2::new(-5.0, 2.0), Vec2::new(5.0, 2.0)));
        // segment stopping short
        assert!(!f.blocks_segment(Vec2::new(-5.0, 0.0), Vec2::new(-1.5, 0.0)));
        // grazing along the edge does not block
        assert!(!f.blocks_segment(Vec2::new(-5.0, 1.0), Vec2::new(5.0, 1.0)));
        // ending on the boundary does not block
        assert!(!f.blocks_segment(Vec2::new(-5.0, 0.0), Vec2::new(-1.0, 0.0)));
    }

    #[test]
    fn rotated_footprint() {
        let f = Footprint::new(
            &Pose::planar(10.0, 0.0, FRAC_PI_2),
            &BoxSize::new(4.0, 1.0, 1.0),
        );
        assert!(f.contains(Vec2::new(10.0, 1.9)));
        assert!(!f.contains(Vec2::new(11.0, 0.0)));
        assert!(f.blocks_segment(Vec2::new(0.0, 1.5), Vec2::new(20.0, 1.5)));
        assert!(!f.blocks_segment(Vec2::new(0.0, 2.5), Vec2::new(20.0, 2.5)));
    }

    #[test]
    fn boundary_samples_on_perimeter() {
        let f = Footprint::new(&Pose::planar(3.0, -1.0, 0.3), &BoxSize::new(4.5, 1.9, 1.0));
        let pts = f.boundary_samples(8);
        assert_eq!(pts.len(), 8);
        let corners = f.corners();
        assert!((pts[0].x - corners[0].x).abs() < 1e-12 && (pts[0].y - corners[0].y).abs() < 1e-12);
        for p in pts {
            let q = f.to_local(p);
            let on_x = (q.x.abs() - f.half_length).abs() < 1e-9 && q.y.abs() <= f.half_width + 1e-9;
            let on_y = (q.y.abs() - f.half_width).abs() < 1e-9 && q.x.abs() <= f.half_length + 1e-9;
            assert!(on_x || on_y, "{p:?}");
        }
    }

    #[test]
    fn square_samples_hit_corners_and_midpoints() {
        let pts = unit_square().boundary_samples(8);
        let expect = [
            (1.0, 1.0),
            (0.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 0.0),
            (-1.0, -1.0),
            (0.0, -1.0),
            (1.0, -1.0),
            (1.0, 0.0),
        ];
        for (p, e) in pts.iter().zip(expect) {
            assert!(
                (p.x - e.0).abs() < 1e-12 && (p.y - e.1).abs() < 1e-12,
                "{p:?} vs {e:?}"
            );
        }
    }

    #[test]
    fn overlap_sat() {
        let a = unit_square();
        let b = Footprint::new(&Pose::planar(1.5, 0.0, 0.0), &BoxSize::new(2.0, 2.0, 1.0));
        let c = Footprint::new(&Pose::planar(2.5, 0.0, 0.0), &BoxSize::new(2.0, 2.0, 1.0));
        let d = Footprint::new(&Pose::planar(2.2, 2.2, 0.785), &BoxSize::new(2.0, 2.0, 1.0));
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
        assert!(!a.overlaps(&d));
        assert!(b.overlaps(&a));
    }
}
