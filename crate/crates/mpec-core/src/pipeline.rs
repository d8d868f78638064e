//! Dual-view generation, mutually exclusive grid masking, and cross-view
//! point correspondence.
//!
//! Views carry per-point provenance (`origin_index`) through every step, so
//! entity labels transport exactly and correspondences can be rebuilt by
//! matching original indices. Grid masks are computed on the original
//! (pre-augmentation) coordinates and are mutually exclusive between the two
//! views of a pair.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::colorspace::{hsv_to_rgb, rgb_to_hsv};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, stream_seed, Stream};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// One random rotation step; the angle range is in multiples of pi radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationJitter {
    pub axis: Axis,
    pub angle: [f64; 2],
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorJitter {
    pub ratio: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianColorJitter {
    pub std: f64,
    pub p: f64,
}

/// The full augmentation sequence, applied in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub rotations: Vec<RotationJitter>,
    pub flip_p: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub brightness: ColorJitter,
    pub contrast: ColorJitter,
    pub saturation: ColorJitter,
    pub hue: ColorJitter,
    pub color_gaussian: GaussianColorJitter,
    /// Voxel edge for grid sampling; `None` disables the step.
    pub grid_sample_cell: Option<f64>,
    /// Fraction of points kept by the nearest-to-anchor crop.
    pub crop_ratio: f64,
    pub center_shift: bool,
    pub color_normalize: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rotations: vec![
                RotationJitter {
                    axis: Axis::X,
                    angle: [-1.0 / 64.0, 1.0 / 64.0],
                    p: 1.0,
                },
                RotationJitter {
                    axis: Axis::Y,
                    angle: [-1.0 / 64.0, 1.0 / 64.0],
                    p: 1.0,
                },
            ],
            flip_p: 0.5,
            jitter_sigma: 0.005,
            jitter_clip: 0.02,
            brightness: ColorJitter { ratio: 0.4, p: 0.8 },
            contrast: ColorJitter { ratio: 0.4, p: 0.8 },
            saturation: ColorJitter { ratio: 0.2, p: 0.8 },
            hue: ColorJitter { ratio: 0.02, p: 0.8 },
            color_gaussian: GaussianColorJitter { std: 0.05, p: 0.95 },
            grid_sample_cell: Some(0.02),
            crop_ratio: 0.6,
            center_shift: true,
            color_normalize: true,
        }
    }
}

impl AugmentationConfig {
    /// Deterministic pass-through: only center shift and color normalization.
    /// Used for inference and evaluation.
    pub fn identity() -> Self {
        AugmentationConfig {
            rotations: vec![],
            flip_p: 0.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            brightness: ColorJitter { ratio: 0.0, p: 0.0 },
            contrast: ColorJitter { ratio: 0.0, p: 0.0 },
            saturation: ColorJitter { ratio: 0.0, p: 0.0 },
            hue: ColorJitter { ratio: 0.0, p: 0.0 },
            color_gaussian: GaussianColorJitter { std: 0.0, p: 0.0 },
            grid_sample_cell: None,
            crop_ratio: 1.0,
            center_shift: true,
            color_normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.flip_p,
            self.brightness.p,
            self.contrast.p,
            self.saturation.p,
            self.hue.p,
            self.color_gaussian.p,
        ];
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!(
                    "augmentation probability {} outside [0,1]",
                    p
                )));
            }
        }
        for r in &self.rotations {
            if !(0.0..=1.0).contains(&r.p) {
                return Err(Error::Validation(format!(
                    "rotation probability {} outside [0,1]",
                    r.p
                )));
            }
            if r.angle[0] > r.angle[1] {
                return Err(Error::Validation(format!(
                    "rotation angle range {:?} is empty",
                    r.angle
                )));
            }
        }
        if let Some(cell) = self.grid_sample_cell {
            if cell <= 0.0 {
                return Err(Error::Validation(format!(
                    "grid sample cell {} must be positive",
                    cell
                )));
            }
        }
        if !(self.crop_ratio > 0.0 && self.crop_ratio <= 1.0) {
            return Err(Error::Validation(format!(
                "crop ratio {} outside (0,1]",
                self.crop_ratio
            )));
        }
        if self.jitter_sigma < 0.0 || self.jitter_clip < 0.0 {
            return Err(Error::Validation(
                "coordinate jitter sigma/clip must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Grid-mask parameters: cell edge in meters and the fraction of occupied
/// cells masked per view. Two exclusive masks cannot each exceed half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridMaskConfig {
    pub cell: f64,
    pub ratio: f64,
}

impl Default for GridMaskConfig {
    fn default() -> Self {
        GridMaskConfig { cell: 0.1, ratio: 0.4 }
    }
}

impl GridMaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell <= 0.0 {
            return Err(Error::Validation(format!(
                "mask cell {} must be positive",
                self.cell
            )));
        }
        if !(0.0..=0.5).contains(&self.ratio) {
            return Err(Error::Validation(format!(
                "mask ratio {} outside [0, 0.5]",
                self.ratio
            )));
        }
        Ok(())
    }
}

/// One augmented, optionally masked copy of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub entity_mask: Vec<u32>,
    /// Index into the pre-augmentation scene for each surviving point.
    pub origin_index: Vec<usize>,
    /// Whether the point's color is replaced by the mask token.
    pub masked: Vec<bool>,
}

impl View {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Entity ids (ascending) with at least one point in this view.
    pub fn present_entities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .entity_mask
            .iter()
            .copied()
            .filter(|&l| l != crate::scene::BACKGROUND)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Two masked views plus the partial bijection between shared points.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub u: View,
    pub v: View,
    /// Pairs (i, j) with `u.origin_index[i] == v.origin_index[j]`, sorted by
    /// original index.
    pub correspondence: Vec<(usize, usize)>,
}

struct WorkingCloud {
    points: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
    labels: Vec<u32>,
    origin: Vec<usize>,
}

impl WorkingCloud {
    fn keep(&mut self, selected: &[usize]) {
        self.points = selected.iter().map(|&i| self.points[i]).collect();
        self.colors = selected.iter().map(|&i| self.colors[i]).collect();
        self.labels = selected.iter().map(|&i| self.labels[i]).collect();
        self.origin = selected.iter().map(|&i| self.origin[i]).collect();
    }
}

fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0f64; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let inv = 1.0 / points.len() as f64;
    [c[0] * inv, c[1] * inv, c[2] * inv]
}

fn rotate_about(points: &mut [[f64; 3]], axis: Axis, angle: f64, center: [f64; 3]) {
    let (sin, cos) = angle.sin_cos();
    let (a, b) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (2, 0),
        Axis::Z => (0, 1),
    };
    for p in points.iter_mut() {
        let pa = p[a] - center[a];
        let pb = p[b] - center[b];
        p[a] = center[a] + cos * pa - sin * pb;
        p[b] = center[b] + sin * pa + cos * pb;
    }
}

fn clamp01(colors: &mut [[f64; 3]]) {
    for c in colors.iter_mut() {
        for v in c.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Apply the augmentation sequence to a scene, threading provenance through
/// every step.
pub fn augment_view(scene: &Scene, config: &AugmentationConfig, seed: u64) -> Result<View> {
    config.validate()?;
    if scene.num_points() == 0 {
        return Err(Error::Validation(format!(
            "scene {} is empty",
            scene.scene_id
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut cloud = WorkingCloud {
        points: scene.points_f64(),
        colors: scene.colors_f64(),
        labels: scene.entity_mask.clone(),
        origin: (0..scene.num_points()).collect(),
    };

    // Spatial: rotations about the cloud centroid, then flip.
    for rot in &config.rotations {
        if rot.p > 0.0 && rng.random_bool(rot.p) {
            let angle = if rot.angle[0] == rot.angle[1] {
                rot.angle[0]
            } else {
                rng.random_range(rot.angle[0]..rot.angle[1])
            } * std::f64::consts::PI;
            let center = centroid(&cloud.points);
            rotate_about(&mut cloud.points, rot.axis, angle, center);
        }
    }
    if config.flip_p > 0.0 && rng.random_bool(config.flip_p) {
        let axis = if rng.random_bool(0.5) { 0 } else { 1 };
        let center = centroid(&cloud.points);
        for p in cloud.points.iter_mut() {
            p[axis] = 2.0 * center[axis] - p[axis];
        }
    }

    // Coordinate jitter.
    if config.jitter_sigma > 0.0 {
        for p in cloud.points.iter_mut() {
            for v in p.iter_mut() {
                let d: f64 = rng.sample::<f64, _>(StandardNormal) * config.jitter_sigma;
                *v += d.clamp(-config.jitter_clip, config.jitter_clip);
            }
        }
    }

    // Photometric.
    let jitter_factor = |rng: &mut ChaCha8Rng, ratio: f64| {
        if ratio > 0.0 {
            1.0 + rng.random_range(-ratio..ratio)
        } else {
            1.0
        }
    };
    if config.brightness.p > 0.0 && rng.random_bool(config.brightness.p) {
        let f = jitter_factor(&mut rng, config.brightness.ratio);
        for c in cloud.colors.iter_mut() {
            for v in c.iter_mut() {
                *v *= f;
            }
        }
        clamp01(&mut cloud.colors);
    }
    if config.contrast.p > 0.0 && rng.random_bool(config.contrast.p) {
        let f = jitter_factor(&mut rng, config.contrast.ratio);
        let mut mean = 0.0;
        for c in &cloud.colors {
            mean += (c[0] + c[1] + c[2]) / 3.0;
        }
        mean /= cloud.colors.len() as f64;
        for c in cloud.colors.iter_mut() {
            for v in c.iter_mut() {
                *v = mean + (*v - mean) * f;
            }
        }
        clamp01(&mut cloud.colors);
    }
    if config.saturation.p > 0.0 && rng.random_bool(config.saturation.p) {
        let f = jitter_factor(&mut rng, config.saturation.ratio);
        for c in cloud.colors.iter_mut() {
            let gray = (c[0] + c[1] + c[2]) / 3.0;
            for v in c.iter_mut() {
                *v = gray + (*v - gray) * f;
            }
        }
        clamp01(&mut cloud.colors);
    }
    if config.hue.p > 0.0 && rng.random_bool(config.hue.p) {
        let delta = jitter_factor(&mut rng, config.hue.ratio) - 1.0;
        for c in cloud.colors.iter_mut() {
            let (h, s, v) = rgb_to_hsv(*c);
            *c = hsv_to_rgb(h + delta, s, v);
        }
        clamp01(&mut cloud.colors);
    }
    if config.color_gaussian.p > 0.0 && rng.random_bool(config.color_gaussian.p) {
        for c in cloud.colors.iter_mut() {
            for v in c.iter_mut() {
                *v += rng.sample::<f64, _>(StandardNormal) * config.color_gaussian.std;
            }
        }
        clamp01(&mut cloud.colors);
    }

    // Grid sample: one uniformly chosen point per occupied voxel, decided by
    // streaming reservoir choice in point order.
    if let Some(cell) = config.grid_sample_cell {
        let mut chosen: HashMap<[i64; 3], (usize, usize)> = HashMap::new();
        let mut order: Vec<[i64; 3]> = Vec::new();
        for (i, p) in cloud.points.iter().enumerate() {
            let key = [
                (p[0] / cell).floor() as i64,
                (p[1] / cell).floor() as i64,
                (p[2] / cell).floor() as i64,
            ];
            match chosen.get_mut(&key) {
                None => {
                    chosen.insert(key, (i, 1));
                    order.push(key);
                }
                Some((winner, count)) => {
                    *count += 1;
                    if rng.random_range(0..*count) == 0 {
                        *winner = i;
                    }
                }
            }
        }
        let mut selected: Vec<usize> = order.iter().map(|k| chosen[k].0).collect();
        selected.sort_unstable();
        cloud.keep(&selected);
    }

    // Random crop: keep the fraction of points nearest a random anchor point.
    if config.crop_ratio < 1.0 {
        let n = cloud.points.len();
        let keep = ((config.crop_ratio * n as f64).floor() as usize).max(1);
        let anchor = cloud.points[rng.random_range(0..n)];
        let mut by_dist: Vec<(f64, usize)> = cloud
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dx = p[0] - anchor[0];
                let dy = p[1] - anchor[1];
                let dz = p[2] - anchor[2];
                (dx * dx + dy * dy + dz * dz, i)
            })
            .collect();
        by_dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut selected: Vec<usize> = by_dist[..keep].iter().map(|&(_, i)| i).collect();
        selected.sort_unstable();
        cloud.keep(&selected);
    }
    if cloud.points.is_empty() {
        return Err(Error::Validation(format!(
            "scene {}: view empty after augmentation",
            scene.scene_id
        )));
    }

    // Center shift: subtract the xy centroid and the minimum z.
    if config.center_shift {
        let c = centroid(&cloud.points);
        let min_z = cloud
            .points
            .iter()
            .map(|p| p[2])
            .fold(f64::INFINITY, f64::min);
        for p in cloud.points.iter_mut() {
            p[0] -= c[0];
            p[1] -= c[1];
            p[2] -= min_z;
        }
    }

    // Color normalize to [-1, 1].
    if config.color_normalize {
        for c in cloud.colors.iter_mut() {
            for v in c.iter_mut() {
                *v = (*v - 0.5) / 0.5;
            }
        }
    }

    let n = cloud.points.len();
    Ok(View {
        points: cloud.points,
        colors: cloud.colors,
        entity_mask: cloud.labels,
        origin_index: cloud.origin,
        masked: vec![false; n],
    })
}

/// Per-point cell ids over occupied cells, computed on original coordinates.
#[derive(Debug, Clone)]
pub struct GridPartition {
    /// Dense occupied-cell index per original point.
    pub cell_ids: Vec<usize>,
    pub num_cells: usize,
}

/// Assign every point to the voxel containing it (floor convention) and
/// index occupied voxels densely in first-occurrence order.
pub fn partition_grids(points: &[[f64; 3]], cell: f64) -> Result<GridPartition> {
    if cell <= 0.0 {
        return Err(Error::Validation(format!(
            "grid cell {} must be positive",
            cell
        )));
    }
    let mut dense: HashMap<[i64; 3], usize> = HashMap::new();
    let mut cell_ids = Vec::with_capacity(points.len());
    for p in points {
        let key = [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ];
        let next = dense.len();
        let id = *dense.entry(key).or_insert(next);
        cell_ids.push(id);
    }
    Ok(GridPartition {
        cell_ids,
        num_cells: dense.len(),
    })
}

/// Draw two disjoint cell sets of size `floor(ratio * num_cells)` each by
/// shuffling the occupied cells and splitting the prefix.
pub fn sample_exclusive_masks(
    num_cells: usize,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<bool>, Vec<bool>)> {
    if !(0.0..=0.5).contains(&ratio) {
        return Err(Error::Validation(format!(
            "mask ratio {} outside [0, 0.5]",
            ratio
        )));
    }
    if num_cells < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 occupied cells, got {}",
            num_cells
        )));
    }
    let k = (ratio * num_cells as f64).floor() as usize;
    let mut cells: Vec<usize> = (0..num_cells).collect();
    let mut rng = rng_from_seed(seed);
    use rand::seq::SliceRandom;
    cells.shuffle(&mut rng);
    let mut in_u = vec![false; num_cells];
    let mut in_v = vec![false; num_cells];
    for &c in &cells[..k] {
        in_u[c] = true;
    }
    for &c in &cells[k..2 * k] {
        in_v[c] = true;
    }
    Ok((in_u, in_v))
}

fn build_correspondence(u: &View, v: &View) -> Vec<(usize, usize)> {
    let mut by_origin: HashMap<usize, usize> = HashMap::with_capacity(u.len());
    for (i, &o) in u.origin_index.iter().enumerate() {
        by_origin.insert(o, i);
    }
    let mut pairs = Vec::new();
    for (j, &o) in v.origin_index.iter().enumerate() {
        if let Some(&i) = by_origin.get(&o) {
            pairs.push((i, j));
        }
    }
    // v's origin indices ascend, so pairs are already sorted by original id.
    pairs
}

/// Build a dual-view pair: two independent augmentations, a shared grid
/// partition on the original coordinates, and mutually exclusive masks.
///
/// Fails when a view comes out empty or when some entity survives in neither
/// view; callers treat those as resampleable rejects.
pub fn make_view_pair(
    scene: &Scene,
    aug: &AugmentationConfig,
    mask: &GridMaskConfig,
    seed: u64,
) -> Result<ViewPair> {
    mask.validate()?;
    let mut u = augment_view(scene, aug, stream_seed(seed, Stream::ViewU, &[]))?;
    let mut v = augment_view(scene, aug, stream_seed(seed, Stream::ViewV, &[]))?;

    let partition = partition_grids(&scene.points_f64(), mask.cell)?;
    let (in_u, in_v) = if mask.ratio > 0.0 {
        sample_exclusive_masks(
            partition.num_cells,
            mask.ratio,
            stream_seed(seed, Stream::GridMask, &[]),
        )?
    } else {
        (
            vec![false; partition.num_cells],
            vec![false; partition.num_cells],
        )
    };
    for (i, &origin) in u.origin_index.iter().enumerate() {
        u.masked[i] = in_u[partition.cell_ids[origin]];
    }
    for (j, &origin) in v.origin_index.iter().enumerate() {
        v.masked[j] = in_v[partition.cell_ids[origin]];
    }

    // Every entity must survive in at least one view.
    let mut seen = vec![false; scene.num_entities() + 1];
    for &l in u.entity_mask.iter().chain(v.entity_mask.iter()) {
        seen[l as usize] = true;
    }
    for id in 1..=scene.num_entities() {
        if !seen[id] {
            return Err(Error::Validation(format!(
                "degenerate pair: entity {} absent from both views of scene {}",
                id, scene.scene_id
            )));
        }
    }

    let correspondence = build_correspondence(&u, &v);
    Ok(ViewPair {
        u,
        v,
        correspondence,
    })
}

/// Single-view variant used when cross-view augmentation is disabled: one
/// augmented view duplicated, no masking, total identity correspondence.
pub fn make_duplicated_view_pair(
    scene: &Scene,
    aug: &AugmentationConfig,
    seed: u64,
) -> Result<ViewPair> {
    let u = augment_view(scene, aug, stream_seed(seed, Stream::ViewU, &[]))?;
    let mut seen = vec![false; scene.num_entities() + 1];
    for &l in &u.entity_mask {
        seen[l as usize] = true;
    }
    for id in 1..=scene.num_entities() {
        if !seen[id] {
            return Err(Error::Validation(format!(
                "degenerate pair: entity {} absent from the shared view of scene {}",
                id, scene.scene_id
            )));
        }
    }
    let v = u.clone();
    let correspondence = (0..u.len()).map(|i| (i, i)).collect();
    Ok(ViewPair {
        u,
        v,
        correspondence,
    })
}
