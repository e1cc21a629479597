//! Box-level geometric kernel.
//!
//! Objects are upright boxes, so every check reduces to yaw-rotated
//! rectangles in the XZ plane plus an interval on y.

use serde::{Deserialize, Serialize};

use crate::scene::{RoomGeometry, Scene, SceneObject, Vec3};

pub type Point = (f64, f64);

pub const EPS_COLLISION: f64 = 0.01;
pub const EPS_OOB: f64 = 0.001;
pub const EPS_SUPPORT: f64 = 0.02;
pub const SURFACE_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec3,
    pub yaw: f64,
    pub half_extents: Vec3,
}

impl Obb {
    /// Unit vectors of the local x and z axes, expressed in world XZ.
    pub fn axes(&self) -> [Point; 2] {
        let (s, c) = self.yaw.sin_cos();
        [(c, -s), (s, c)]
    }

    /// Footprint corners, counter-clockwise in (x, z).
    pub fn corners(&self) -> [Point; 4] {
        let [u, v] = self.axes();
        let (hx, hz) = (self.half_extents.x, self.half_extents.z);
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(sx, sz)| {
            (
                self.center.x + sx * hx * u.0 + sz * hz * v.0,
                self.center.z + sx * hx * u.1 + sz * hz * v.1,
            )
        })
    }

    fn radius_along(&self, axis: Point) -> f64 {
        let [u, v] = self.axes();
        self.half_extents.x * dot(u, axis).abs() + self.half_extents.z * dot(v, axis).abs()
    }

    pub fn footprint_area(&self) -> f64 {
        4.0 * self.half_extents.x * self.half_extents.z
    }

    pub fn bottom(&self) -> f64 {
        self.center.y - self.half_extents.y
    }

    pub fn top(&self) -> f64 {
        self.center.y + self.half_extents.y
    }
}

pub fn obb_from_object(obj: &SceneObject) -> Obb {
    Obb { center: obj.position, yaw: obj.rotation.yaw(), half_extents: obj.size.scale(0.5) }
}

fn dot(a: Point, b: Point) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

/// Horizontal overlap on each footprint axis; `None` if any axis separates.
fn horizontal_overlaps(a: &Obb, b: &Obb) -> Option<[(Point, f64); 4]> {
    let d = (b.center.x - a.center.x, b.center.z - a.center.z);
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    let mut out = [((0.0, 0.0), 0.0); 4];
    for (slot, axis) in out.iter_mut().zip([a0, a1, b0, b1]) {
        let overlap = a.radius_along(axis) + b.radius_along(axis) - dot(d, axis).abs();
        if overlap <= 0.0 {
            return None;
        }
        *slot = (axis, overlap);
    }
    Some(out)
}

fn vertical_overlap(a: &Obb, b: &Obb) -> f64 {
    a.half_extents.y + b.half_extents.y - (b.center.y - a.center.y).abs()
}

/// Minimum-translation penetration depth over the five separating axes
/// (four footprint axes and y); zero when the boxes are disjoint.
pub fn pair_penetration(a: &Obb, b: &Obb) -> f64 {
    let vertical = vertical_overlap(a, b);
    if vertical <= 0.0 {
        return 0.0;
    }
    match horizontal_overlaps(a, b) {
        None => 0.0,
        Some(h) => h.iter().map(|&(_, o)| o).fold(vertical, f64::min),
    }
}

/// Horizontal minimum-translation axis pointing from `a` towards `b`, with
/// the horizontal overlap along it. `None` when the footprints are disjoint.
pub fn horizontal_mtv(a: &Obb, b: &Obb) -> Option<(Point, f64)> {
    let h = horizontal_overlaps(a, b)?;
    let (axis, overlap) = h
        .into_iter()
        .fold(None::<(Point, f64)>, |best, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        })?;
    let d = (b.center.x - a.center.x, b.center.z - a.center.z);
    let axis = if dot(d, axis) < 0.0 { (-axis.0, -axis.1) } else { axis };
    Some((axis, overlap))
}

/// Volume of the intersection of two boxes (footprint overlap × height overlap).
pub fn intersection_volume(a: &Obb, b: &Obb) -> f64 {
    let vertical = vertical_overlap(a, b);
    if vertical <= 0.0 || horizontal_overlaps(a, b).is_none() {
        return 0.0;
    }
    convex_overlap_area(&a.corners(), &b.corners()) * vertical
}

/// Shoelace signed area (positive for counter-clockwise rings in (x, z)).
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (ring[i], ring[(i + 1) % n]);
            p.0 * q.1 - q.0 * p.1
        })
        .sum();
    twice / 2.0
}

pub fn polygon_centroid(ring: &[Point]) -> Point {
    let n = ring.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let area = signed_area(ring);
    if area.abs() <= 1e-12 {
        let (sx, sz) = ring.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        return (sx / n as f64, sz / n as f64);
    }
    let (mut cx, mut cz) = (0.0, 0.0);
    for i in 0..n {
        let (p, q) = (ring[i], ring[(i + 1) % n]);
        let cross = p.0 * q.1 - q.0 * p.1;
        cx += (p.0 + q.0) * cross;
        cz += (p.1 + q.1) * cross;
    }
    (cx / (6.0 * area), cz / (6.0 * area))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection test, touching included.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True if any two non-adjacent edges of the ring meet.
pub fn is_self_intersecting(ring: &[Point]) -> bool {
    let n = ring.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point, ring: &[Point]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot((p.0 - a.0, p.1 - a.1), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = (a.0 + t * ab.0, a.1 + t * ab.1);
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

pub fn distance_to_boundary(p: Point, ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| point_segment_distance(p, ring[i], ring[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Clip `subject` (any simple polygon) against a convex `clip` polygon.
pub fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let ccw = signed_area(clip) >= 0.0;
    let inside = |a: Point, b: Point, p: Point| {
        let o = orient(a, b, p);
        if ccw {
            o >= 0.0
        } else {
            o <= 0.0
        }
    };
    let mut output = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let input = std::mem::take(&mut output);
        let k = input.len();
        for j in 0..k {
            let cur = input[j];
            let prev = input[(j + k - 1) % k];
            let (cin, pin) = (inside(a, b, cur), inside(a, b, prev));
            if cin {
                if !pin {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if pin {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let r = (q.0 - p.0, q.1 - p.1);
    let s = (b.0 - a.0, b.1 - a.1);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom == 0.0 {
        return q;
    }
    let t = ((a.0 - p.0) * s.1 - (a.1 - p.1) * s.0) / denom;
    (p.0 + t * r.0, p.1 + t * r.1)
}

/// Area of the intersection of two convex polygons.
pub fn convex_overlap_area(a: &[Point], b: &[Point]) -> f64 {
    signed_area(&clip_polygon(a, b)).abs()
}

/// `(max_excursion, oob_volume)` of an object relative to the room.
///
/// The excursion is the largest distance of any footprint corner outside
/// the floor polygon. The volume is the footprint area lying outside the
/// polygon (computed exactly by clipping the room against the footprint)
/// times the object's vertical extent clipped to `[0, ceiling]`.
pub fn oob_excess(obj: &SceneObject, room: &RoomGeometry) -> (f64, f64) {
    let ring = room.footprint();
    let obb = obb_from_object(obj);
    let corners = obb.corners();
    let excursion = corners
        .iter()
        .filter(|&&c| !point_in_polygon(c, &ring))
        .map(|&c| distance_to_boundary(c, &ring))
        .fold(0.0, f64::max);
    let inside = signed_area(&clip_polygon(&ring, &corners)).abs();
    let outside_area = (obb.footprint_area() - inside).max(0.0);
    let height = (obb.top().min(room.ceiling_height()) - obb.bottom().max(0.0)).max(0.0);
    let volume = outside_area * height;
    // Clipping noise on fully contained boxes.
    let volume = if volume < 1e-12 { 0.0 } else { volume };
    (excursion, volume)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SupportKind {
    Floor,
    Surface,
    Wall,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportStatus {
    pub kind: SupportKind,
    pub supporter_uid: Option<String>,
}

impl SupportStatus {
    fn plain(kind: SupportKind) -> Self {
        Self { kind, supporter_uid: None }
    }

    pub fn is_supported(&self) -> bool {
        self.kind != SupportKind::Unsupported
    }
}

/// Classify how `obj` is held up: floor, another object's top, or a wall.
pub fn support_status(obj: &SceneObject, scene: &Scene) -> SupportStatus {
    let bottom = obj.bottom();
    if bottom.abs() <= EPS_SUPPORT {
        return SupportStatus::plain(SupportKind::Floor);
    }
    let obb = obb_from_object(obj);
    let corners = obb.corners();
    let own_area = obb.footprint_area();
    let mut best: Option<(f64, &str)> = None;
    for other in &scene.objects {
        if other.uid == obj.uid || (bottom - other.top()).abs() > EPS_SUPPORT {
            continue;
        }
        let fraction = convex_overlap_area(&corners, &obb_from_object(other).corners()) / own_area;
        if fraction >= SURFACE_OVERLAP && best.is_none_or(|(f, uid)| fraction > f || (fraction == f && other.uid.as_str() < uid)) {
            best = Some((fraction, &other.uid));
        }
    }
    if let Some((_, uid)) = best {
        return SupportStatus { kind: SupportKind::Surface, supporter_uid: Some(uid.to_string()) };
    }
    if bottom > EPS_SUPPORT {
        let ring = scene.room.footprint();
        let n = ring.len();
        for k in 0..4 {
            let (p, q) = (corners[k], corners[(k + 1) % 4]);
            let against_wall = (0..n).any(|i| {
                let (a, b) = (ring[i], ring[(i + 1) % n]);
                point_segment_distance(p, a, b) <= EPS_SUPPORT
                    && point_segment_distance(q, a, b) <= EPS_SUPPORT
            });
            if against_wall {
                return SupportStatus::plain(SupportKind::Wall);
            }
        }
    }
    SupportStatus::plain(SupportKind::Unsupported)
}
