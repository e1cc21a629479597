//! Synthetic asset catalog: per-category size priors, retrieval by aspect
//! ratio, size validity and the mandatory-object tables.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Vec3;

pub const FALLBACK_CATEGORY: &str = "generic";
pub const MANDATORY_MIN: usize = 5;
pub const MANDATORY_MAX: usize = 15;

/// Log-space tolerance under which a requested size counts as having the
/// same proportions as a catalog entry.
const ASPECT_TOL: f64 = 1e-4;

const BUILTIN: &str = include_str!("../data/catalog.json");

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("unknown room type `{0}`")]
    UnknownRoomType(String),
    #[error("no catalog category matches `{0}`")]
    UnknownCategoryNoFallback(String),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub asset_id: String,
    pub category: String,
    pub canonical_size: Vec3,
    pub min_size: Vec3,
    pub max_size: Vec3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    version: u32,
    entries: Vec<AssetEntry>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
    mandatory_by_room: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    essential_by_room: BTreeMap<String, String>,
    #[serde(default)]
    common_by_room: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    universal: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AssetCatalog {
    file: CatalogFile,
    category_index: BTreeMap<String, Vec<usize>>,
    /// (keyword, category), longest keyword first.
    keywords: Vec<(String, String)>,
}

/// Σ_d |ln(canonical_d / target_d)|.
pub fn alignment_error(canonical: Vec3, target: Vec3) -> f64 {
    (canonical.x / target.x).ln().abs()
        + (canonical.y / target.y).ln().abs()
        + (canonical.z / target.z).ln().abs()
}

fn normalize_text(text: &str) -> String {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    format!(" {} ", words.join(" "))
}

impl AssetCatalog {
    /// The catalog shipped with the crate.
    pub fn builtin() -> &'static AssetCatalog {
        static CATALOG: OnceLock<AssetCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| AssetCatalog::from_json(BUILTIN).expect("builtin catalog is valid"))
    }

    pub fn load(path: &Path) -> Result<Self, AssetError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, AssetError> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| AssetError::InvalidCatalog(e.to_string()))?;
        Self::from_parts(file)
    }

    /// Build a catalog from bare entries (no room tables).
    pub fn from_entries(entries: Vec<AssetEntry>) -> Result<Self, AssetError> {
        Self::from_parts(CatalogFile {
            version: 1,
            entries,
            aliases: BTreeMap::new(),
            mandatory_by_room: BTreeMap::new(),
            essential_by_room: BTreeMap::new(),
            common_by_room: BTreeMap::new(),
            universal: Vec::new(),
        })
    }

    fn from_parts(mut file: CatalogFile) -> Result<Self, AssetError> {
        let bad = |m: String| Err(AssetError::InvalidCatalog(m));
        let mut category_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in file.entries.iter_mut().enumerate() {
            e.category = e.category.to_lowercase();
            let (lo, c, hi) = (e.min_size.to_array(), e.canonical_size.to_array(), e.max_size.to_array());
            if (0..3).any(|d| !(0.0 < lo[d] && lo[d] <= c[d] && c[d] <= hi[d])) {
                return bad(format!("{}: sizes must satisfy 0 < min <= canonical <= max", e.asset_id));
            }
            category_index.entry(e.category.clone()).or_default().push(i);
        }
        let known = |c: &str| category_index.contains_key(c);
        for (alias, target) in &file.aliases {
            if !known(target) {
                return bad(format!("alias `{alias}` points at unknown category `{target}`"));
            }
        }
        for (room, list) in &file.mandatory_by_room {
            if !(MANDATORY_MIN..=MANDATORY_MAX).contains(&list.len()) {
                return bad(format!("mandatory list for `{room}` must have 5-15 items"));
            }
            if let Some(c) = list.iter().find(|c| !known(c)) {
                return bad(format!("mandatory list for `{room}` names unknown category `{c}`"));
            }
        }
        for (room, c) in &file.essential_by_room {
            if !known(c) {
                return bad(format!("essential category `{c}` for `{room}` is unknown"));
            }
        }
        let mut keywords: Vec<(String, String)> = category_index
            .keys()
            .map(|c| (c.clone(), c.clone()))
            .chain(file.aliases.iter().map(|(a, c)| (a.to_lowercase(), c.clone())))
            .collect();
        keywords.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self { file, category_index, keywords })
    }

    pub fn entries(&self) -> &[AssetEntry] {
        &self.file.entries
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.category_index.keys().map(String::as_str)
    }

    pub fn entries_for(&self, category: &str) -> impl Iterator<Item = &AssetEntry> {
        self.category_index
            .get(category)
            .into_iter()
            .flatten()
            .map(|&i| &self.file.entries[i])
    }

    pub fn room_types(&self) -> impl Iterator<Item = &str> {
        self.file.mandatory_by_room.keys().map(String::as_str)
    }

    /// Category named by a description: the longest whole-word keyword match.
    pub fn match_category(&self, description: &str) -> Option<&str> {
        let text = normalize_text(description);
        self.keywords
            .iter()
            .find(|(k, _)| text.contains(&format!(" {k} ")))
            .map(|(_, c)| c.as_str())
    }

    /// Like [`match_category`](Self::match_category) but falls back to
    /// `generic` (or the description itself when the catalog has no
    /// fallback category).
    pub fn category_of<'a>(&'a self, description: &'a str) -> &'a str {
        self.match_category(description).unwrap_or_else(|| {
            if self.category_index.contains_key(FALLBACK_CATEGORY) {
                FALLBACK_CATEGORY
            } else {
                description
            }
        })
    }

    /// Every category mentioned in free text, longest matches first and
    /// without overlapping spans, in order of appearance.
    pub fn categories_in_text(&self, text: &str) -> Vec<String> {
        let mut text = normalize_text(text);
        let mut found: Vec<(usize, String)> = Vec::new();
        for (k, c) in &self.keywords {
            let needle = format!(" {k} ");
            while let Some(at) = text.find(&needle) {
                found.push((at, c.clone()));
                // Blank the span so shorter keywords cannot match inside it.
                let blank = " ".to_string() + &"#".repeat(k.len()) + " ";
                text.replace_range(at..at + needle.len(), &blank);
            }
        }
        found.sort();
        found.into_iter().map(|(_, c)| c).collect()
    }

    pub fn retrieve_strict(&self, description: &str, target: Vec3) -> Result<&AssetEntry, AssetError> {
        let category = self
            .match_category(description)
            .ok_or_else(|| AssetError::UnknownCategoryNoFallback(description.to_string()))?;
        Ok(self.best_in(category, target).expect("indexed categories are non-empty"))
    }

    /// Entry of the description's category with minimal alignment error to
    /// `target`; ties go to the smaller asset id.
    pub fn retrieve(&self, description: &str, target: Vec3) -> &AssetEntry {
        let category = self.match_category(description).unwrap_or(FALLBACK_CATEGORY);
        self.best_in(category, target)
            .or_else(|| self.file.entries.first())
            .expect("catalog has at least one entry")
    }

    fn best_in(&self, category: &str, target: Vec3) -> Option<&AssetEntry> {
        self.entries_for(category).min_by(|a, b| {
            alignment_error(a.canonical_size, target)
                .total_cmp(&alignment_error(b.canonical_size, target))
                .then_with(|| a.asset_id.cmp(&b.asset_id))
        })
    }

    /// Size an instantiated asset actually gets for a requested target.
    ///
    /// A target already proportioned like some entry of the category is
    /// kept as is. Otherwise the retrieved entry is scaled uniformly so its
    /// volume matches the target's. Realizing a realized size is a no-op.
    pub fn realize(&self, description: &str, target: Vec3) -> Vec3 {
        let target = target.quantized();
        let category = self.match_category(description).unwrap_or(FALLBACK_CATEGORY);
        if self.entries_for(category).any(|e| same_proportions(e.canonical_size, target)) {
            return target;
        }
        let entry = self.retrieve(description, target);
        let c = entry.canonical_size;
        let mean_log = ((target.x / c.x).ln() + (target.y / c.y).ln() + (target.z / c.z).ln()) / 3.0;
        c.scale(mean_log.exp()).quantized()
    }

    /// Componentwise `[min, max]` envelope over a category's entries.
    pub fn category_bounds(&self, category: &str) -> Option<(Vec3, Vec3)> {
        let mut it = self.entries_for(category);
        let first = it.next()?;
        Some(it.fold((first.min_size, first.max_size), |(lo, hi), e| {
            (
                Vec3::new(lo.x.min(e.min_size.x), lo.y.min(e.min_size.y), lo.z.min(e.min_size.z)),
                Vec3::new(hi.x.max(e.max_size.x), hi.y.max(e.max_size.y), hi.z.max(e.max_size.z)),
            )
        }))
    }

    /// Every dimension within `[0.5·min, 2·max]`; unknown categories pass.
    pub fn size_valid(&self, category: &str, size: Vec3) -> bool {
        match self.category_bounds(category) {
            None => true,
            Some((lo, hi)) => {
                let (s, lo, hi) = (size.to_array(), lo.to_array(), hi.to_array());
                (0..3).all(|d| s[d] >= 0.5 * lo[d] && s[d] <= 2.0 * hi[d])
            }
        }
    }

    /// Canonical room-type key for free text ("Living Room" → "living room").
    pub fn resolve_room_type(&self, room_type: &str) -> Option<&str> {
        let norm = normalize_text(room_type);
        let norm = norm.trim();
        self.file
            .mandatory_by_room
            .keys()
            .find(|k| k.as_str() == norm)
            .map(String::as_str)
    }

    /// Room type named in an instruction, longest name first.
    pub fn infer_room_type(&self, instruction: &str) -> Option<&str> {
        let text = normalize_text(instruction);
        let mut rooms: Vec<&String> = self.file.mandatory_by_room.keys().collect();
        rooms.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        rooms
            .into_iter()
            .find(|r| text.contains(&format!(" {r} ")))
            .map(String::as_str)
    }

    /// Objects the room must contain: the room table plus anything the
    /// instruction names, clamped to 5–15 entries.
    pub fn mandatory_objects(&self, room_type: &str, instruction: &str) -> Result<Vec<String>, AssetError> {
        let room = self
            .resolve_room_type(room_type)
            .or_else(|| self.infer_room_type(instruction))
            .ok_or_else(|| AssetError::UnknownRoomType(room_type.to_string()))?;
        let mut list = self.file.mandatory_by_room[room].clone();
        for c in self.categories_in_text(instruction) {
            if c != FALLBACK_CATEGORY && !list.contains(&c) {
                list.push(c);
            }
        }
        list.truncate(MANDATORY_MAX);
        Ok(list)
    }

    /// The "common objects" list for a room, empty when unknown.
    pub fn common_objects(&self, room_type: &str) -> &[String] {
        self.resolve_room_type(room_type)
            .and_then(|r| self.file.common_by_room.get(r))
            .map_or(&[], Vec::as_slice)
    }

    /// The single category whose absence fails a room outright.
    pub fn essential_category(&self, room_type: &str) -> Option<&str> {
        let room = self.resolve_room_type(room_type)?;
        self.file.essential_by_room.get(room).map(String::as_str)
    }

    /// Whether a category belongs in a room given the instruction.
    pub fn is_relevant(&self, room_type: &str, category: &str, instruction: &str) -> bool {
        let room = self.resolve_room_type(room_type);
        let listed = |m: &BTreeMap<String, Vec<String>>| {
            room.and_then(|r| m.get(r)).is_some_and(|l| l.iter().any(|c| c == category))
        };
        listed(&self.file.mandatory_by_room)
            || listed(&self.file.common_by_room)
            || self.file.universal.iter().any(|c| c == category)
            || self.categories_in_text(instruction).iter().any(|c| c == category)
    }
}

fn same_proportions(canonical: Vec3, target: Vec3) -> bool {
    let d = [
        (target.x / canonical.x).ln(),
        (target.y / canonical.y).ln(),
        (target.z / canonical.z).ln(),
    ];
    let mean = (d[0] + d[1] + d[2]) / 3.0;
    d.iter().all(|x| (x - mean).abs() <= ASPECT_TOL)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn entry(id: &str, cat: &str, s: [f64; 3]) -> AssetEntry {
        let v = Vec3::from(s);
        AssetEntry { asset_id: id.into(), category: cat.into(), canonical_size: v, min_size: v.scale(0.7), max_size: v.scale(1.3) }
    }

    #[test]
    fn exact_match_has_zero_error() {
        let cat = AssetCatalog::builtin();
        let target = Vec3::new(2.1, 1.0, 1.7);
        let e = cat.retrieve("double bed", target);
        assert_eq!(e.category, "double bed");
        assert_eq!(alignment_error(e.canonical_size, target), 0.0);
    }

    #[test]
    fn closer_aspect_wins() {
        let cat = AssetCatalog::from_entries(vec![
            entry("bed_b", "bed", [1.0, 0.4, 2.0]),
            entry("bed_a", "bed", [2.0, 0.5, 1.6]),
        ])
        .unwrap();
        assert_eq!(cat.retrieve("bed", Vec3::new(2.0, 0.5, 1.6)).asset_id, "bed_a");
    }

    #[test]
    fn ties_break_by_asset_id() {
        let cat = AssetCatalog::from_entries(vec![
            entry("z", "box", [1.0, 1.0, 1.0]),
            entry("a", "box", [1.0, 1.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(cat.retrieve("box", Vec3::new(2.0, 1.0, 1.0)).asset_id, "a");
    }

    #[test]
    fn keyword_matching() {
        let cat = AssetCatalog::builtin();
        assert_eq!(cat.category_of("fluffy rug near window"), "rug");
        assert_eq!(cat.category_of("modern desk lamp"), "desk lamp");
        assert_eq!(cat.category_of("king bed with headboard"), "double bed");
        assert_eq!(cat.category_of("mysterious artifact"), "generic");
        // Whole words only: "bedroom" does not contain the keyword "bed".
        assert_eq!(cat.match_category("bedroom decor"), None);
        assert!(cat.retrieve_strict("mysterious artifact", Vec3::new(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn size_validity() {
        let cat = AssetCatalog::builtin();
        assert!(cat.size_valid("double bed", Vec3::new(1.9, 0.5, 1.5)));
        assert!(!cat.size_valid("double bed", Vec3::new(0.18, 0.5, 1.5)));
        assert!(!cat.size_valid("double bed", Vec3::new(5.0, 0.5, 1.5)));
        assert!(cat.size_valid("not a category", Vec3::new(100.0, 100.0, 100.0)));
    }

    #[test]
    fn mandatory_tables() {
        let cat = AssetCatalog::builtin();
        assert_eq!(
            cat.mandatory_objects("bedroom", "").unwrap(),
            ["double bed", "nightstand", "nightstand", "wardrobe", "lamp", "lamp"]
        );
        let dining = cat.mandatory_objects("dining room", "").unwrap();
        assert_eq!(dining.iter().filter(|c| *c == "dining chair").count(), 4);
        let study = cat.mandatory_objects("bedroom", "with a desk for studying").unwrap();
        assert!(study.contains(&"desk".to_string()));
        assert_eq!(cat.mandatory_objects("Living Room", "").unwrap()[0], "sofa");
        assert_eq!(cat.mandatory_objects("", "a cozy gym").unwrap()[0], "treadmill");
        assert!(matches!(cat.mandatory_objects("spaceship", ""), Err(AssetError::UnknownRoomType(_))));
    }

    #[test]
    fn text_scan_does_not_double_count() {
        let cat = AssetCatalog::builtin();
        assert_eq!(cat.categories_in_text("a desk lamp and a sofa"), ["desk lamp", "sofa"]);
    }

    #[test]
    fn realize_keeps_proportional_targets() {
        let cat = AssetCatalog::builtin();
        let t = Vec3::new(2.31, 1.1, 1.87);
        assert_eq!(cat.realize("double bed", t), t);
        let odd = cat.realize("double bed", Vec3::new(1.0, 1.0, 1.0));
        assert_ne!(odd, Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(cat.realize("double bed", odd), odd);
    }

    #[test]
    fn builtin_catalog_is_well_formed() {
        let cat = AssetCatalog::builtin();
        assert!(cat.categories().count() >= 60);
        for room in cat.room_types() {
            let n = cat.mandatory_objects(room, "").unwrap().len();
            assert!((5..=15).contains(&n));
            assert!(cat.essential_category(room).is_some());
        }
    }

    proptest! {
        #[test]
        fn alignment_error_is_scale_symmetric(a in prop::array::uniform3(0.05..5.0f64), b in prop::array::uniform3(0.05..5.0f64)) {
            let (a, b) = (Vec3::from(a), Vec3::from(b));
            prop_assert!((alignment_error(a, b) - alignment_error(b, a)).abs() < 1e-12);
        }

        #[test]
        fn mandatory_length_is_clamped(words in prop::collection::vec("[a-z ]{0,12}", 0..40)) {
            let cat = AssetCatalog::builtin();
            let instruction = words.join(" sofa desk tv rug plant vase clock stool bench sink toilet stove ");
            let n = cat.mandatory_objects("bedroom", &instruction).unwrap().len();
            prop_assert!((5..=15).contains(&n));
        }

        #[test]
        fn realize_is_idempotent(s in prop::array::uniform3(0.1..3.0f64)) {
            let cat = AssetCatalog::builtin();
            let once = cat.realize("armchair", Vec3::from(s));
            prop_assert_eq!(cat.realize("armchair", once), once);
        }
    }
}
