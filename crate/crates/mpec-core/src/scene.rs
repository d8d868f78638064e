//! Deterministic synthetic indoor-scene generation and scene file I/O.
//!
//! Scenes are labeled point clouds: geometric primitives (boxes, spheres,
//! cylinders) placed without overlap on a floor plane, with ground-truth
//! per-point entity masks and per-entity categories. Floor and wall points
//! carry the background label 0.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::hsv_to_rgb;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, stream_seed, Stream};

/// Entity label reserved for background (floor and wall) points.
pub const BACKGROUND: u32 = 0;

/// Scene file extension.
pub const SCENE_EXT: &str = "mpscene";

const CATEGORY_NAMES: [&str; 16] = [
    "crate", "ball", "pillar", "bench", "lamp", "bin", "shelf", "stool", "table", "vase", "panel",
    "drum", "cone-lamp", "planter", "rack", "pedestal",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Sphere,
    Cylinder,
}

/// One object instance: id, category, and its placed geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: u32,
    pub category_id: u32,
    pub centroid: [f32; 3],
    pub extents: [f32; 3],
    pub shape: ShapeKind,
}

/// A labeled synthetic point cloud; the unit of training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub seed: u64,
    pub points: Vec<[f32; 3]>,
    pub colors: Vec<[f32; 3]>,
    /// Per-point entity label: 0 for background, 1..=K for entities.
    pub entity_mask: Vec<u32>,
    pub entities: Vec<EntityRecord>,
    pub categories: Vec<String>,
}

/// Generation parameters for a scene set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSetConfig {
    pub num_scenes: usize,
    /// Room side length range in meters; width and depth sampled independently.
    pub room_size: [f64; 2],
    /// Inclusive range of entities per scene.
    pub entities_per_scene: [usize; 2],
    pub num_categories: usize,
    /// Inclusive range of surface points sampled per entity.
    pub points_per_entity: [usize; 2],
    pub floor_points: usize,
    pub wall_points: usize,
    pub master_seed: u64,
}

impl Default for SceneSetConfig {
    fn default() -> Self {
        SceneSetConfig {
            num_scenes: 250,
            room_size: [3.0, 5.0],
            entities_per_scene: [4, 10],
            num_categories: 8,
            points_per_entity: [40, 80],
            floor_points: 220,
            wall_points: 120,
            master_seed: 20250809,
        }
    }
}

impl SceneSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scenes == 0 {
            return Err(Error::Validation("scene.num_scenes must be positive".into()));
        }
        if !(self.room_size[0] > 0.0 && self.room_size[0] <= self.room_size[1]) {
            return Err(Error::Validation(format!(
                "scene.room_size range {:?} is empty or non-positive",
                self.room_size
            )));
        }
        if self.entities_per_scene[0] == 0
            || self.entities_per_scene[0] > self.entities_per_scene[1]
        {
            return Err(Error::Validation(format!(
                "scene.entities_per_scene range {:?} is empty",
                self.entities_per_scene
            )));
        }
        if self.num_categories < 2 {
            return Err(Error::Validation(
                "scene.num_categories must be at least 2".into(),
            ));
        }
        if self.points_per_entity[0] < 20 || self.points_per_entity[0] > self.points_per_entity[1]
        {
            return Err(Error::Validation(format!(
                "scene.points_per_entity range {:?} is empty or below the 20-point minimum",
                self.points_per_entity
            )));
        }
        if self.floor_points == 0 {
            return Err(Error::Validation("scene.floor_points must be positive".into()));
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.num_categories)
            .map(|c| {
                CATEGORY_NAMES
                    .get(c)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("category_{}", c))
            })
            .collect()
    }
}

impl Scene {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Ground-truth category per point; `None` for background points.
    pub fn point_category(&self, point: usize) -> Option<u32> {
        let label = self.entity_mask[point];
        if label == BACKGROUND {
            None
        } else {
            Some(self.entities[(label - 1) as usize].category_id)
        }
    }

    pub fn points_f64(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect()
    }

    pub fn colors_f64(&self) -> Vec<[f64; 3]> {
        self.colors
            .iter()
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect()
    }

    /// Enforce the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.colors.len() != n || self.entity_mask.len() != n {
            return Err(Error::Validation(format!(
                "scene {}: points/colors/mask lengths disagree ({}, {}, {})",
                self.scene_id,
                n,
                self.colors.len(),
                self.entity_mask.len()
            )));
        }
        let k = self.entities.len() as u32;
        let mut counts = vec![0usize; k as usize + 1];
        for &label in &self.entity_mask {
            if label > k {
                return Err(Error::Validation(format!(
                    "scene {}: entity label {} exceeds entity count {}",
                    self.scene_id, label, k
                )));
            }
            counts[label as usize] += 1;
        }
        for (e, record) in self.entities.iter().enumerate() {
            let id = e as u32 + 1;
            if record.id != id {
                return Err(Error::Validation(format!(
                    "scene {}: entity record {} has id {}",
                    self.scene_id, e, record.id
                )));
            }
            if counts[id as usize] < 20 {
                return Err(Error::Validation(format!(
                    "scene {}: entity {} has {} points (minimum 20)",
                    self.scene_id, id, counts[id as usize]
                )));
            }
            if record.category_id as usize >= self.categories.len() {
                return Err(Error::Validation(format!(
                    "scene {}: entity {} category {} out of range",
                    self.scene_id, id, record.category_id
                )));
            }
            if record.extents.iter().any(|&e| e <= 0.0) {
                return Err(Error::Validation(format!(
                    "scene {}: entity {} has non-positive extent",
                    self.scene_id, id
                )));
            }
        }
        for (i, c) in self.colors.iter().enumerate() {
            if c.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Validation(format!(
                    "scene {}: color out of [0,1] at point {}",
                    self.scene_id, i
                )));
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "scene {}: non-finite coordinate at point {}",
                    self.scene_id, i
                )));
            }
        }
        Ok(())
    }
}

/// Base color for a category: evenly spaced hues at fixed saturation/value.
fn category_base_color(category: u32, num_categories: usize) -> [f64; 3] {
    hsv_to_rgb(category as f64 / num_categories as f64, 0.72, 0.82)
}

/// Category size prior (half-extent scale in meters).
fn category_base_size(category: u32) -> f64 {
    0.20 + 0.03 * (category % 5) as f64
}

fn category_shape(category: u32) -> ShapeKind {
    match category % 3 {
        0 => ShapeKind::Box,
        1 => ShapeKind::Sphere,
        _ => ShapeKind::Cylinder,
    }
}

struct PlacedEntity {
    record: EntityRecord,
    color: [f64; 3],
    num_points: usize,
}

/// Axis-aligned bbox intersection with a clearance gap; placement rejects any
/// intersecting candidate, which bounds pairwise bbox overlap at zero.
fn bboxes_clash(a: &EntityRecord, b: &EntityRecord, gap: f32) -> bool {
    (0..3).all(|i| {
        (a.centroid[i] - b.centroid[i]).abs() < a.extents[i] + b.extents[i] + gap
    })
}

/// Generate one scene deterministically from `(config.master_seed, index)`.
pub fn generate_scene(config: &SceneSetConfig, scene_index: usize) -> Result<Scene> {
    config.validate()?;
    if scene_index >= config.num_scenes {
        return Err(Error::Validation(format!(
            "scene index {} out of range ({} scenes)",
            scene_index, config.num_scenes
        )));
    }
    let seed = stream_seed(config.master_seed, Stream::SceneGen, &[scene_index as u64]);
    let mut rng = stream_rng(config.master_seed, Stream::SceneGen, &[scene_index as u64]);

    let room_w = rng.random_range(config.room_size[0]..=config.room_size[1]);
    let room_d = rng.random_range(config.room_size[0]..=config.room_size[1]);
    let wall_height = 1.2;

    let n_entities =
        rng.random_range(config.entities_per_scene[0]..=config.entities_per_scene[1]);

    // Place entities without bbox overlap.
    let mut placed: Vec<PlacedEntity> = Vec::with_capacity(n_entities);
    for id in 1..=n_entities as u32 {
        let category = rng.random_range(0..config.num_categories as u32);
        let shape = category_shape(category);
        let base = category_base_size(category);
        let extents: [f32; 3] = match shape {
            ShapeKind::Box => [
                (base * rng.random_range(0.7..1.3)) as f32,
                (base * rng.random_range(0.7..1.3)) as f32,
                (base * rng.random_range(0.8..1.6)) as f32,
            ],
            ShapeKind::Sphere => {
                let r = (base * rng.random_range(0.7..1.1)) as f32;
                [r, r, r]
            }
            ShapeKind::Cylinder => {
                let r = (base * rng.random_range(0.6..1.0)) as f32;
                let h = (base * rng.random_range(1.0..1.8)) as f32;
                [r, r, h]
            }
        };
        let margin_x = extents[0] as f64 + 0.05;
        let margin_y = extents[1] as f64 + 0.05;
        if 2.0 * margin_x >= room_w || 2.0 * margin_y >= room_d {
            return Err(Error::Validation(format!(
                "scene {}: room {:.2}x{:.2} too small for entity extents",
                scene_index, room_w, room_d
            )));
        }
        let mut found = false;
        for _ in 0..100 {
            let cx = rng.random_range(margin_x..room_w - margin_x) as f32;
            let cy = rng.random_range(margin_y..room_d - margin_y) as f32;
            let record = EntityRecord {
                id,
                category_id: category,
                centroid: [cx, cy, extents[2]],
                extents,
                shape,
            };
            if placed.iter().all(|p| !bboxes_clash(&p.record, &record, 0.02)) {
                let base_color = category_base_color(category, config.num_categories);
                let color = [
                    (base_color[0] + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0),
                    (base_color[1] + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0),
                    (base_color[2] + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0),
                ];
                let num_points =
                    rng.random_range(config.points_per_entity[0]..=config.points_per_entity[1]);
                placed.push(PlacedEntity {
                    record,
                    color,
                    num_points,
                });
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Validation(format!(
                "scene {}: could not place entity {} after 100 attempts (room too small)",
                scene_index, id
            )));
        }
    }

    let mut points: Vec<[f32; 3]> = Vec::new();
    let mut colors: Vec<[f32; 3]> = Vec::new();
    let mut mask: Vec<u32> = Vec::new();

    for p in &placed {
        for _ in 0..p.num_points {
            let pt = sample_surface_point(&p.record, &mut rng);
            points.push(pt);
            colors.push([p.color[0] as f32, p.color[1] as f32, p.color[2] as f32]);
            mask.push(p.record.id);
        }
    }

    // Floor.
    let floor_tint = rng.random_range(-0.05..0.05);
    let floor_color = [
        (0.42 + floor_tint).clamp(0.0, 1.0) as f32,
        (0.40 + floor_tint).clamp(0.0, 1.0) as f32,
        (0.38 + floor_tint).clamp(0.0, 1.0) as f32,
    ];
    for _ in 0..config.floor_points {
        let x = rng.random_range(0.0..room_w) as f32;
        let y = rng.random_range(0.0..room_d) as f32;
        points.push([x, y, 0.0]);
        colors.push(floor_color);
        mask.push(BACKGROUND);
    }

    // Walls: four vertical planes, points split by wall length.
    if config.wall_points > 0 {
        let wall_tint = rng.random_range(-0.05..0.05);
        let wall_color = [
            (0.72 + wall_tint).clamp(0.0, 1.0) as f32,
            (0.72 + wall_tint).clamp(0.0, 1.0) as f32,
            (0.70 + wall_tint).clamp(0.0, 1.0) as f32,
        ];
        let perimeter = 2.0 * (room_w + room_d);
        for _ in 0..config.wall_points {
            let along = rng.random_range(0.0..perimeter);
            let z = rng.random_range(0.0..wall_height) as f32;
            let (x, y) = if along < room_w {
                (along, 0.0)
            } else if along < room_w + room_d {
                (room_w, along - room_w)
            } else if along < 2.0 * room_w + room_d {
                (along - room_w - room_d, room_d)
            } else {
                (0.0, along - 2.0 * room_w - room_d)
            };
            points.push([x as f32, y as f32, z]);
            colors.push(wall_color);
            mask.push(BACKGROUND);
        }
    }

    let scene = Scene {
        scene_id: format!("scene_{:05}", scene_index),
        seed,
        points,
        colors,
        entity_mask: mask,
        entities: placed.into_iter().map(|p| p.record).collect(),
        categories: config.category_names(),
    };
    scene.validate()?;
    Ok(scene)
}

fn sample_surface_point(record: &EntityRecord, rng: &mut impl Rng) -> [f32; 3] {
    let c = record.centroid;
    let e = record.extents;
    match record.shape {
        ShapeKind::Box => {
            let (ex, ey, ez) = (e[0] as f64, e[1] as f64, e[2] as f64);
            // Face areas: two yz faces, two xz faces, two xy faces.
            let ax = ey * ez;
            let ay = ex * ez;
            let az = ex * ey;
            let total = 2.0 * (ax + ay + az);
            let pick = rng.random_range(0.0..total);
            let u = rng.random_range(-1.0..1.0);
            let v = rng.random_range(-1.0..1.0);
            let (dx, dy, dz) = if pick < 2.0 * ax {
                let side = if pick < ax { 1.0 } else { -1.0 };
                (side, u, v)
            } else if pick < 2.0 * (ax + ay) {
                let side = if pick < 2.0 * ax + ay { 1.0 } else { -1.0 };
                (u, side, v)
            } else {
                let side = if pick < 2.0 * (ax + ay) + az { 1.0 } else { -1.0 };
                (u, v, side)
            };
            [
                c[0] + (dx * ex) as f32,
                c[1] + (dy * ey) as f32,
                c[2] + (dz * ez) as f32,
            ]
        }
        ShapeKind::Sphere => {
            let r = e[0] as f64;
            // Uniform direction via normalized Gaussian.
            let mut dir = [0.0f64; 3];
            loop {
                let mut sq = 0.0;
                for d in dir.iter_mut() {
                    *d = rng.sample::<f64, _>(rand_distr::StandardNormal);
                    sq += *d * *d;
                }
                if sq > 1e-12 {
                    let inv = 1.0 / sq.sqrt();
                    for d in dir.iter_mut() {
                        *d *= inv;
                    }
                    break;
                }
            }
            [
                c[0] + (dir[0] * r) as f32,
                c[1] + (dir[1] * r) as f32,
                c[2] + (dir[2] * r) as f32,
            ]
        }
        ShapeKind::Cylinder => {
            let r = e[0] as f64;
            let h = e[2] as f64; // half-height
            let lateral = std::f64::consts::TAU * r * 2.0 * h;
            let caps = 2.0 * std::f64::consts::PI * r * r;
            let pick = rng.random_range(0.0..lateral + caps);
            if pick < lateral {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(-1.0..1.0) * h;
                [
                    c[0] + (theta.cos() * r) as f32,
                    c[1] + (theta.sin() * r) as f32,
                    c[2] + z as f32,
                ]
            } else {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let rr = r * rng.random_range(0.0f64..1.0).sqrt();
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                [
                    c[0] + (theta.cos() * rr) as f32,
                    c[1] + (theta.sin() * rr) as f32,
                    c[2] + (side * h) as f32,
                ]
            }
        }
    }
}

// ---- file format ----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneFileHeader {
    version: u32,
    scene_id: String,
    n_points: usize,
    n_entities: usize,
    categories: Vec<String>,
    seed: u64,
    entities: Vec<EntityRecord>,
}

/// Serialize a scene to its container bytes: one JSON header line, then
/// little-endian f32 coordinates, f32 colors, and u32 entity labels.
pub fn scene_to_bytes(scene: &Scene) -> Result<Vec<u8>> {
    let header = SceneFileHeader {
        version: 1,
        scene_id: scene.scene_id.clone(),
        n_points: scene.num_points(),
        n_entities: scene.num_entities(),
        categories: scene.categories.clone(),
        seed: scene.seed,
        entities: scene.entities.clone(),
    };
    let mut bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Validation(format!("scene header serialization: {}", e)))?;
    bytes.push(b'\n');
    for p in &scene.points {
        for v in p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for c in &scene.colors {
        for v in c {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &label in &scene.entity_mask {
        bytes.extend_from_slice(&label.to_le_bytes());
    }
    Ok(bytes)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    let bytes = scene_to_bytes(scene)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parse a scene from container bytes, validating all invariants.
pub fn scene_from_bytes(bytes: &[u8], path: &Path) -> Result<Scene> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line".to_string()))?;
    let header: SceneFileHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(path, format!("header: {}", e)))?;
    if header.version != 1 {
        return Err(Error::format(
            path,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.entities.len() != header.n_entities {
        return Err(Error::format(
            path,
            format!(
                "header lists {} entities but declares {}",
                header.entities.len(),
                header.n_entities
            ),
        ));
    }
    let n = header.n_points;
    let body = &bytes[newline + 1..];
    let expected = n * 12 + n * 12 + n * 4;
    if body.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "truncated or oversized body at byte offset {}: expected {} body bytes, got {}",
                newline + 1 + body.len().min(expected),
                expected,
                body.len()
            ),
        ));
    }
    let mut offset = 0usize;
    let mut read_f32 = |body: &[u8], offset: &mut usize| -> f32 {
        let v = f32::from_le_bytes(body[*offset..*offset + 4].try_into().unwrap());
        *offset += 4;
        v
    };
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push([
            read_f32(body, &mut offset),
            read_f32(body, &mut offset),
            read_f32(body, &mut offset),
        ]);
    }
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        colors.push([
            read_f32(body, &mut offset),
            read_f32(body, &mut offset),
            read_f32(body, &mut offset),
        ]);
    }
    let mut mask = Vec::with_capacity(n);
    for _ in 0..n {
        let v = u32::from_le_bytes(body[offset..offset + 4].try_into().unwrap());
        offset += 4;
        mask.push(v);
    }
    let scene = Scene {
        scene_id: header.scene_id,
        seed: header.seed,
        points,
        colors,
        entity_mask: mask,
        entities: header.entities,
        categories: header.categories,
    };
    scene
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(scene)
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    scene_from_bytes(&bytes, path)
}

/// Deterministic disjoint train/val split over `0..scene_count`.
pub fn split_dataset(
    scene_count: usize,
    fractions: (f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (ft, fv) = fractions;
    if (ft + fv - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 {
        return Err(Error::Validation(format!(
            "split fractions ({}, {}) must be non-negative and sum to 1",
            ft, fv
        )));
    }
    let mut ids: Vec<usize> = (0..scene_count).collect();
    let mut rng = stream_rng(seed, Stream::Split, &[scene_count as u64]);
    use rand::seq::SliceRandom;
    ids.shuffle(&mut rng);
    let n_train = (ft * scene_count as f64).round() as usize;
    let mut train: Vec<usize> = ids[..n_train.min(scene_count)].to_vec();
    let mut val: Vec<usize> = ids[n_train.min(scene_count)..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation(format!(
            "empty split: {} train / {} val scenes",
            train.len(),
            val.len()
        )));
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SceneSetConfig {
        SceneSetConfig {
            num_scenes: 8,
            room_size: [3.0, 4.0],
            entities_per_scene: [3, 6],
            num_categories: 8,
            points_per_entity: [25, 40],
            floor_points: 80,
            wall_points: 40,
            master_seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        let a = generate_scene(&cfg, 3).unwrap();
        let b = generate_scene(&cfg, 3).unwrap();
        assert_eq!(scene_to_bytes(&a).unwrap(), scene_to_bytes(&b).unwrap());
        let c = generate_scene(&cfg, 4).unwrap();
        assert_ne!(scene_to_bytes(&a).unwrap(), scene_to_bytes(&c).unwrap());
    }

    #[test]
    fn single_entity_no_walls() {
        let cfg = SceneSetConfig {
            entities_per_scene: [1, 1],
            wall_points: 0,
            ..small_config()
        };
        let scene = generate_scene(&cfg, 0).unwrap();
        for i in 0..scene.num_points() {
            let label = scene.entity_mask[i];
            if scene.points[i][2] > 0.0 && label != BACKGROUND {
                assert_eq!(label, 1);
            }
        }
        assert!(scene.entity_mask.iter().any(|&l| l == 1));
        assert!(scene.entity_mask.iter().filter(|&&l| l == 1).count() >= 20);
    }

    #[test]
    fn invariants_and_category_balance_over_many_scenes() {
        let cfg = SceneSetConfig {
            num_scenes: 100,
            ..small_config()
        };
        let mut category_counts = vec![0usize; cfg.num_categories];
        let mut total_entities = 0usize;
        for i in 0..cfg.num_scenes {
            let scene = generate_scene(&cfg, i).unwrap();
            scene.validate().unwrap();
            for e in &scene.entities {
                category_counts[e.category_id as usize] += 1;
                total_entities += 1;
            }
        }
        // Uniform expectation with a 3-sigma band per category.
        let p = 1.0 / cfg.num_categories as f64;
        let mean = total_entities as f64 * p;
        let sigma = (total_entities as f64 * p * (1.0 - p)).sqrt();
        for (c, &count) in category_counts.iter().enumerate() {
            assert!(
                (count as f64 - mean).abs() <= 3.0 * sigma,
                "category {} count {} outside 3 sigma of {}",
                c,
                count,
                mean
            );
            let ratio = count as f64 / mean;
            assert!(
                (0.5..=2.0).contains(&ratio),
                "category {} frequency {}x uniform",
                c,
                ratio
            );
        }
    }

    #[test]
    fn entity_bboxes_do_not_overlap() {
        let cfg = small_config();
        for i in 0..20 {
            let scene = generate_scene(&cfg, i).unwrap();
            for (a, ea) in scene.entities.iter().enumerate() {
                for eb in scene.entities.iter().skip(a + 1) {
                    assert!(
                        !bboxes_clash(ea, eb, 0.0),
                        "scene {} entities {} and {} overlap",
                        i,
                        ea.id,
                        eb.id
                    );
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let cfg = small_config();
        let scene = generate_scene(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.mpscene");
        save_scene(&scene, &path).unwrap();
        let loaded = load_scene(&path).unwrap();
        assert_eq!(scene, loaded);
        // Byte-level idempotence.
        assert_eq!(
            scene_to_bytes(&scene).unwrap(),
            scene_to_bytes(&loaded).unwrap()
        );
    }

    #[test]
    fn truncated_file_reports_offset() {
        let cfg = small_config();
        let scene = generate_scene(&cfg, 2).unwrap();
        let mut bytes = scene_to_bytes(&scene).unwrap();
        bytes.truncate(bytes.len() - 7);
        let err = scene_from_bytes(&bytes, Path::new("t.mpscene")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("byte offset"), "message: {}", msg);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let cfg = small_config();
        let mut scene = generate_scene(&cfg, 2).unwrap();
        let k = scene.num_entities() as u32;
        scene.entity_mask[0] = k + 1;
        let bytes = scene_to_bytes(&scene).unwrap();
        let err = scene_from_bytes(&bytes, Path::new("bad.mpscene")).unwrap_err();
        assert!(err.to_string().contains("exceeds entity count"));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (train, val) = split_dataset(10, (0.8, 0.2), 5).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        let again = split_dataset(10, (0.8, 0.2), 5).unwrap();
        assert_eq!((train.clone(), val.clone()), again);
        for id in &val {
            assert!(!train.contains(id));
        }
        let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(split_dataset(10, (1.0, 0.0), 5).is_err());
        assert!(split_dataset(10, (0.5, 0.4), 5).is_err());
    }
}
