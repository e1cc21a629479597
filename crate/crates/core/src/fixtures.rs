//! Seeded fixture scenes: clean furnished rooms, and chaotic or incomplete
//! variants of them for goal-oriented episodes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assets::AssetCatalog;
use crate::chain_synth::{canonicalize, reverse_add, reverse_move, reverse_rotate, splitmix64};
use crate::layout::{footprint, supporters_for, Packer};
use crate::metrics::{check_physics, PhysicsConfig};
use crate::scene::{fresh_uid, RoomGeometry, Scene, Vec3};

pub const FIXTURE_ROOMS: [&str; 4] = ["bedroom", "living room", "dining room", "study room"];
const CEILING: f64 = 2.8;

fn grid(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// One clean, furnished room, or `None` if packing failed for this draw.
fn try_furnish(room_type: &str, room_id: &str, rng: &mut ChaCha8Rng, catalog: &AssetCatalog) -> Option<Scene> {
    let width = grid(rng.random_range(4.0..=6.0));
    let depth = grid(rng.random_range(3.5..=5.5_f64.min(30.0 / width)));
    let room = RoomGeometry::rectangle(width, depth, CEILING, room_type, room_id);

    let mut wanted = catalog.mandatory_objects(room_type, "").ok()?;
    let common = catalog.common_objects(room_type);
    for _ in 0..rng.random_range(0..=3usize) {
        if !common.is_empty() {
            wanted.push(common[rng.random_range(0..common.len())].clone());
        }
    }
    let mut items: Vec<(String, Vec3)> = wanted
        .into_iter()
        .map(|c| {
            let entries: Vec<_> = catalog.entries_for(&c).collect();
            let e = entries[rng.random_range(0..entries.len())];
            let size = e.canonical_size.scale(rng.random_range(0.9..=1.1)).quantized();
            (c, size)
        })
        .collect();
    // Large floor items first, then anything that wants a supporter.
    items.sort_by(|a, b| {
        let sa = !supporters_for(&a.0).is_empty();
        let sb = !supporters_for(&b.0).is_empty();
        sa.cmp(&sb).then(footprint(b.1).total_cmp(&footprint(a.1)))
    });

    let mut packer = Packer::new(&room, catalog, 0.05);
    let mut scene = Scene::empty(room.clone());
    for (category, size) in items {
        let uid = fresh_uid(&scene, &category);
        let obj = packer.place(&uid, &category, size, Some(rng))?;
        scene.objects.push(obj);
    }
    let scene = canonicalize(&scene);
    check_physics(&scene, &PhysicsConfig::default()).is_clean().then_some(scene)
}

/// `n` clean scenes cycling through the fixture room types.
pub fn fixture_scenes(n: usize, seed: u64, catalog: &AssetCatalog) -> Vec<(String, Scene)> {
    (0..n)
        .map(|i| {
            let id = format!("scene_{i:03}");
            let room_type = FIXTURE_ROOMS[i % FIXTURE_ROOMS.len()];
            let scene = (0u64..)
                .find_map(|attempt| {
                    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(i as u64) ^ attempt << 32));
                    try_furnish(room_type, &id, &mut rng, catalog)
                })
                .expect("some draw packs");
            (id, scene)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    /// Objects scattered and spun.
    Chaotic,
    /// Objects taken out.
    Missing,
    Both,
}

/// Degrade a clean scene with reverse edits.
pub fn degrade(scene: &Scene, mode: Degradation, rng: &mut ChaCha8Rng, catalog: &AssetCatalog) -> Scene {
    let mut out = canonicalize(scene);
    let n = out.objects.len();
    if matches!(mode, Degradation::Missing | Degradation::Both) && n > 1 {
        let k = rng.random_range(1..=(n / 3).max(1));
        for _ in 0..k {
            let i = rng.random_range(0..out.objects.len());
            let uid = out.objects[i].uid.clone();
            reverse_add(&mut out, &uid, catalog);
        }
    }
    if matches!(mode, Degradation::Chaotic | Degradation::Both) {
        let uids: Vec<String> = out.objects.iter().map(|o| o.uid.clone()).collect();
        let k = rng.random_range(1..=uids.len().div_ceil(2).max(1));
        for uid in uids.iter().take(k) {
            reverse_move(&mut out, uid, rng);
            if rng.random_bool(0.5) {
                reverse_rotate(&mut out, uid, rng);
            }
        }
    }
    canonicalize(&out)
}
