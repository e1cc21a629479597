//! Deterministic furniture packer used by the fixture generator and the
//! scripted builder policy.
//!
//! Floor items go back-to-wall first, then onto an interior grid; small
//! decor goes on top of a matching supporter when one is free.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::assets::AssetCatalog;
use crate::geometry::{obb_from_object, oob_excess, pair_penetration, signed_area, support_status};
use crate::scene::{RoomGeometry, Scene, SceneObject, Vec3};

const WALL_GAP: f64 = 0.02;
const STEP: f64 = 0.1;

/// Supporters a tabletop item may stand on, in preference order.
pub fn supporters_for(category: &str) -> &'static [&'static str] {
    match category {
        "lamp" | "table lamp" => &["nightstand", "side table", "desk", "dresser", "console table"],
        "desk lamp" => &["desk", "gaming desk"],
        "tv" | "gaming console" => &["tv stand", "console table", "dresser"],
        "vase" | "clock" => &["side table", "console table", "sideboard", "dresser", "coffee table"],
        "computer" | "printer" => &["desk", "gaming desk"],
        _ => &[],
    }
}

pub struct Packer<'a> {
    room: &'a RoomGeometry,
    catalog: &'a AssetCatalog,
    pub placed: Vec<SceneObject>,
    /// Uids of supporters that already carry something.
    occupied: Vec<String>,
    clearance: f64,
}

impl<'a> Packer<'a> {
    pub fn new(room: &'a RoomGeometry, catalog: &'a AssetCatalog, clearance: f64) -> Self {
        Self { room, catalog, placed: Vec::new(), occupied: Vec::new(), clearance }
    }

    /// Start from objects already in the room; hosts that carry one of them
    /// are not offered again.
    pub fn with_existing(scene: &'a Scene, catalog: &'a AssetCatalog, clearance: f64) -> Self {
        let occupied = scene
            .objects
            .iter()
            .filter_map(|o| support_status(o, scene).supporter_uid)
            .collect();
        Self { room: &scene.room, catalog, placed: scene.objects.clone(), occupied, clearance }
    }

    /// Place one object; `rng` (if any) rotates the scan order for variety.
    pub fn place(
        &mut self,
        uid: &str,
        description: &str,
        size: Vec3,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Option<SceneObject> {
        let category = self.catalog.category_of(description).to_string();
        if let Some(obj) = self.place_on_supporter(uid, description, &category, size) {
            self.placed.push(obj.clone());
            return Some(obj);
        }
        let candidates = self.floor_candidates(size);
        if candidates.is_empty() {
            return None;
        }
        let offset = rng.map_or(0, |r| r.random_range(0..candidates.len()));
        let n = candidates.len();
        let found = (0..n).map(|i| &candidates[(i + offset) % n]).find_map(|&(x, z, yaw)| {
            let obj = SceneObject::new(uid, description, Vec3::new(x, size.y / 2.0, z), yaw, size);
            self.fits(&obj).then_some(obj)
        })?;
        self.placed.push(found.clone());
        Some(found)
    }

    fn place_on_supporter(&mut self, uid: &str, description: &str, category: &str, size: Vec3) -> Option<SceneObject> {
        for want in supporters_for(category) {
            let host = self.placed.iter().find(|o| {
                self.catalog.category_of(&o.description) == *want
                    && !self.occupied.contains(&o.uid)
                    && size.x.max(size.z) <= o.size.x.min(o.size.z)
            });
            if let Some(host) = host {
                let pos = Vec3::new(host.position.x, host.top() + size.y / 2.0, host.position.z);
                let obj = SceneObject::new(uid, description, pos, host.rotation.yaw(), size);
                if obj.top() <= self.room.ceiling_height() {
                    self.occupied.push(host.uid.clone());
                    return Some(obj);
                }
            }
        }
        None
    }

    fn fits(&self, obj: &SceneObject) -> bool {
        if obj.top() > self.room.ceiling_height() {
            return false;
        }
        let (exc, vol) = oob_excess(obj, self.room);
        if exc > 0.0 || vol > 0.0 {
            return false;
        }
        let mut grown = obb_from_object(obj);
        grown.half_extents.x += self.clearance;
        grown.half_extents.z += self.clearance;
        self.placed.iter().all(|o| pair_penetration(&grown, &obb_from_object(o)) <= 0.0)
    }

    /// Wall-backed poses first, then an interior grid.
    fn floor_candidates(&self, size: Vec3) -> Vec<(f64, f64, f64)> {
        let ring = self.room.footprint();
        let n = ring.len();
        let ccw = signed_area(&ring) > 0.0;
        let mut out = Vec::new();
        for i in 0..n {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            if len < size.x {
                continue;
            }
            let u = ((b.0 - a.0) / len, (b.1 - a.1) / len);
            let normal = if ccw { (-u.1, u.0) } else { (u.1, -u.0) };
            // Front (+z local) faces into the room.
            let yaw = normal.0.atan2(normal.1);
            let depth = size.z / 2.0 + WALL_GAP;
            let mut s = size.x / 2.0 + WALL_GAP;
            while s <= len - size.x / 2.0 - WALL_GAP + 1e-9 {
                out.push((a.0 + u.0 * s + normal.0 * depth, a.1 + u.1 * s + normal.1 * depth, yaw));
                s += STEP;
            }
        }
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for &(x, z) in &ring {
            lo = (lo.0.min(x), lo.1.min(z));
            hi = (hi.0.max(x), hi.1.max(z));
        }
        let mut x = lo.0 + STEP;
        while x < hi.0 {
            let mut z = lo.1 + STEP;
            while z < hi.1 {
                out.push((x, z, 0.0));
                out.push((x, z, std::f64::consts::FRAC_PI_2));
                z += STEP;
            }
            x += STEP;
        }
        out
    }
}

/// Footprint area, used to order placements large-first.
pub fn footprint(size: Vec3) -> f64 {
    size.x * size.z
}
