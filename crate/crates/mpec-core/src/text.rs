//! Deterministic frozen "text encoder" stub.
//!
//! Categories are represented by near-orthogonal unit anchors; captions and
//! referrals are noisy mixtures around those anchors with an acceptance rule
//! guaranteeing that every emitted embedding is closest to its own category
//! anchor. The vocabulary is immutable after construction and never receives
//! gradients.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix, rng_from_seed, stream_rng, Stream};
use crate::scene::{EntityRecord, Scene};

/// Caption noise scale (expected noise norm).
pub const CAPTION_SIGMA: f64 = 0.25;
/// Referral noise scale (expected noise norm).
pub const REFERRAL_SIGMA: f64 = 0.15;
/// Anchor weight in referral mixtures.
pub const REFERRAL_ANCHOR_WEIGHT: f64 = 0.7;
/// Relation weight in referral mixtures.
pub const REFERRAL_RELATION_WEIGHT: f64 = 0.3;
/// Maximum |cosine| allowed between two category anchors.
pub const MAX_ANCHOR_COS: f64 = 0.3;

const BUILD_ATTEMPTS: usize = 10_000;
const EMBED_RETRIES: usize = 64;

/// Frozen embedding vocabulary: category anchors plus relation directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    dim: usize,
    seed: u64,
    anchors: Vec<Vec<f64>>,
    relations: Vec<Vec<f64>>,
    category_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    Caption,
    Referral,
}

/// One embedded description with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TextDescription {
    pub text_id: u32,
    pub kind: TextKind,
    /// Entity ids (1..=K) this text describes. Singleton in practice.
    pub target_entity_ids: BTreeSet<u32>,
    /// Context entity for referrals, recorded for provenance.
    pub context_entity_id: Option<u32>,
    pub relation_id: Option<u32>,
    pub embedding: Vec<f64>,
}

impl TextDescription {
    pub fn describes(&self, entity_id: u32) -> bool {
        self.target_entity_ids.contains(&entity_id)
    }
}

/// The per-scene sampled batch of text embeddings (F_T rows).
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingSet {
    pub texts: Vec<TextDescription>,
}

impl TextEmbeddingSet {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn embedding_rows(&self) -> Vec<Vec<f64>> {
        self.texts.iter().map(|t| t.embedding.clone()).collect()
    }
}

/// Which description kinds a sampler may draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextMix {
    pub captions: bool,
    pub referrals: bool,
}

impl TextMix {
    pub fn both() -> Self {
        TextMix {
            captions: true,
            referrals: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.captions && !self.referrals {
            return Err(Error::Validation(
                "at least one text type must be enabled".into(),
            ));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n < 1e-12 {
        return false;
    }
    let inv = 1.0 / n;
    for x in v.iter_mut() {
        *x *= inv;
    }
    true
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Isotropic noise with expected squared norm `sigma^2` (per-coordinate
/// standard deviation `sigma/sqrt(dim)`), so the noise magnitude is
/// dimension-independent.
fn noise_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    let scale = sigma / (dim as f64).sqrt();
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

impl Vocabulary {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_categories(&self) -> usize {
        self.anchors.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn anchor(&self, category_id: u32) -> Result<&[f64]> {
        self.anchors
            .get(category_id as usize)
            .map(|a| a.as_slice())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "category {} out of range ({} anchors)",
                    category_id,
                    self.anchors.len()
                ))
            })
    }

    /// Index of the anchor with the highest cosine to `v` (ties: lowest id).
    pub fn nearest_anchor(&self, v: &[f64]) -> u32 {
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        let vn = norm(v).max(1e-12);
        for (i, a) in self.anchors.iter().enumerate() {
            let c = dot(v, a) / vn;
            if c > best_cos {
                best_cos = c;
                best = i;
            }
        }
        best as u32
    }
}

/// Build a vocabulary: unit anchors with pairwise |cos| <= 0.3 found by
/// rejection resampling, and relation vectors orthogonalized against the
/// anchor span.
pub fn build_vocabulary(
    num_categories: usize,
    num_relations: usize,
    dim: usize,
    seed: u64,
    category_names: Vec<String>,
) -> Result<Vocabulary> {
    if num_categories == 0 {
        return Err(Error::Validation("need at least one category".into()));
    }
    if dim < num_categories + num_relations {
        return Err(Error::Validation(format!(
            "vocabulary dim {} too small for {} anchors + {} relations",
            dim, num_categories, num_relations
        )));
    }
    if category_names.len() != num_categories {
        return Err(Error::Validation(format!(
            "{} category names for {} categories",
            category_names.len(),
            num_categories
        )));
    }
    let mut rng = stream_rng(seed, Stream::VocabBuild, &[]);
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(num_categories);
    let mut attempts = 0usize;
    while anchors.len() < num_categories {
        attempts += 1;
        if attempts > BUILD_ATTEMPTS {
            return Err(Error::Validation(format!(
                "could not find {} anchors with |cos| <= {} in {} attempts",
                num_categories, MAX_ANCHOR_COS, BUILD_ATTEMPTS
            )));
        }
        let mut cand = gaussian_vec(&mut rng, dim);
        if !normalize(&mut cand) {
            continue;
        }
        if anchors.iter().all(|a| dot(a, &cand).abs() <= MAX_ANCHOR_COS) {
            anchors.push(cand);
        }
    }

    // Orthonormal basis of the anchor span for projecting relations out.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for a in &anchors {
        let mut v = a.clone();
        for q in &basis {
            let c = dot(&v, q);
            for i in 0..dim {
                v[i] -= c * q[i];
            }
        }
        if normalize(&mut v) {
            basis.push(v);
        }
    }

    let mut relations: Vec<Vec<f64>> = Vec::with_capacity(num_relations);
    while relations.len() < num_relations {
        attempts += 1;
        if attempts > 2 * BUILD_ATTEMPTS {
            return Err(Error::Validation(
                "could not build relation vectors orthogonal to the anchor span".into(),
            ));
        }
        let mut v = gaussian_vec(&mut rng, dim);
        for q in &basis {
            let c = dot(&v, q);
            for i in 0..dim {
                v[i] -= c * q[i];
            }
        }
        if normalize(&mut v) {
            relations.push(v);
        }
    }

    Ok(Vocabulary {
        dim,
        seed,
        anchors,
        relations,
        category_names,
    })
}

fn accept_embedding(
    vocab: &Vocabulary,
    category: u32,
    base: &[f64],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    for _ in 0..EMBED_RETRIES {
        let noise = noise_vec(rng, vocab.dim, sigma);
        let mut e: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + n).collect();
        if !normalize(&mut e) {
            continue;
        }
        if vocab.nearest_anchor(&e) == category {
            return Ok(e);
        }
    }
    Err(Error::Validation(format!(
        "could not draw an embedding nearest to its own anchor (category {}) in {} retries",
        category, EMBED_RETRIES
    )))
}

/// Caption embedding: the entity's category anchor plus isotropic noise,
/// resampled until the nearest anchor is the entity's own.
pub fn embed_caption(
    vocab: &Vocabulary,
    entity: &EntityRecord,
    noise_seed: u64,
) -> Result<TextDescription> {
    let anchor = vocab.anchor(entity.category_id)?.to_vec();
    let mut rng = rng_from_seed(noise_seed);
    let embedding = accept_embedding(vocab, entity.category_id, &anchor, CAPTION_SIGMA, &mut rng)?;
    Ok(TextDescription {
        text_id: 0,
        kind: TextKind::Caption,
        target_entity_ids: BTreeSet::from([entity.id]),
        context_entity_id: None,
        relation_id: None,
        embedding,
    })
}

/// Referral embedding: anchor/relation mixture plus noise, with the same
/// own-anchor acceptance rule applied to the target category.
pub fn embed_referral(
    vocab: &Vocabulary,
    target: &EntityRecord,
    context: &EntityRecord,
    relation_id: u32,
    noise_seed: u64,
) -> Result<TextDescription> {
    if relation_id as usize >= vocab.relations.len() {
        return Err(Error::Validation(format!(
            "relation {} out of range ({} relations)",
            relation_id,
            vocab.relations.len()
        )));
    }
    let anchor = vocab.anchor(target.category_id)?;
    let relation = &vocab.relations[relation_id as usize];
    let base: Vec<f64> = anchor
        .iter()
        .zip(relation)
        .map(|(a, r)| REFERRAL_ANCHOR_WEIGHT * a + REFERRAL_RELATION_WEIGHT * r)
        .collect();
    let mut rng = rng_from_seed(noise_seed);
    let embedding = accept_embedding(vocab, target.category_id, &base, REFERRAL_SIGMA, &mut rng)?;
    Ok(TextDescription {
        text_id: 0,
        kind: TextKind::Referral,
        target_entity_ids: BTreeSet::from([target.id]),
        context_entity_id: Some(context.id),
        relation_id: Some(relation_id),
        embedding,
    })
}

/// Evaluation-time query embedding: the category anchor, exactly.
pub fn embed_category(vocab: &Vocabulary, category_id: u32) -> Result<Vec<f64>> {
    Ok(vocab.anchor(category_id)?.to_vec())
}

/// Draw `n_texts` descriptions for a scene: caption/referral mixed 50/50
/// (when both kinds are enabled), entities sampled with replacement.
/// Referrals need a distinct context entity; single-entity scenes fall back
/// to captions.
pub fn sample_texts(
    scene: &Scene,
    vocab: &Vocabulary,
    n_texts: usize,
    seed: u64,
    mix_kinds: TextMix,
) -> Result<TextEmbeddingSet> {
    if n_texts < 1 {
        return Err(Error::Validation("n_texts must be at least 1".into()));
    }
    mix_kinds.validate()?;
    if scene.entities.is_empty() {
        return Err(Error::Validation(format!(
            "scene {} has no entities to describe",
            scene.scene_id
        )));
    }
    let k = scene.entities.len();
    let mut rng = stream_rng(seed, Stream::TextSample, &[]);
    let mut texts = Vec::with_capacity(n_texts);
    for t in 0..n_texts {
        let want_referral = match (mix_kinds.captions, mix_kinds.referrals) {
            (true, true) => rng.random_bool(0.5),
            (false, true) => true,
            (true, false) => false,
            (false, false) => unreachable!(),
        };
        let target_idx = rng.random_range(0..k);
        let target = &scene.entities[target_idx];
        let noise_seed = mix(seed, &[t as u64, 0x7e77]);
        let mut desc = if want_referral && k >= 2 {
            let mut context_idx = rng.random_range(0..k - 1);
            if context_idx >= target_idx {
                context_idx += 1;
            }
            let relation = rng.random_range(0..vocab.num_relations() as u32);
            embed_referral(vocab, target, &scene.entities[context_idx], relation, noise_seed)?
        } else {
            embed_caption(vocab, target, noise_seed)?
        };
        desc.text_id = t as u32;
        texts.push(desc);
    }
    Ok(TextEmbeddingSet { texts })
}

// ---- file format ------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    version: u32,
    dim: usize,
    seed: u64,
    anchors: Vec<Vec<f64>>,
    relations: Vec<Vec<f64>>,
    category_names: Vec<String>,
}

pub fn save_vocabulary(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let file = VocabularyFile {
        version: 1,
        dim: vocab.dim,
        seed: vocab.seed,
        anchors: vocab.anchors.clone(),
        relations: vocab.relations.clone(),
        category_names: vocab.category_names.clone(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Validation(format!("vocabulary serialization: {}", e)))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: VocabularyFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(path, format!("vocabulary: {}", e)))?;
    if file.version != 1 {
        return Err(Error::format(
            path,
            format!("unsupported vocabulary version {}", file.version),
        ));
    }
    let vocab = Vocabulary {
        dim: file.dim,
        seed: file.seed,
        anchors: file.anchors,
        relations: file.relations,
        category_names: file.category_names,
    };
    for (i, a) in vocab.anchors.iter().enumerate() {
        if a.len() != vocab.dim {
            return Err(Error::format(path, format!("anchor {} has wrong dim", i)));
        }
        if (norm(a) - 1.0).abs() > 1e-9 {
            return Err(Error::format(path, format!("anchor {} is not unit norm", i)));
        }
    }
    for (i, r) in vocab.relations.iter().enumerate() {
        if r.len() != vocab.dim || (norm(r) - 1.0).abs() > 1e-9 {
            return Err(Error::format(path, format!("relation {} invalid", i)));
        }
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneSetConfig};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("cat{}", i)).collect()
    }

    fn test_vocab() -> Vocabulary {
        build_vocabulary(8, 4, 32, 42, names(8)).unwrap()
    }

    fn test_entity(category: u32) -> EntityRecord {
        EntityRecord {
            id: 1,
            category_id: category,
            centroid: [1.0, 1.0, 0.3],
            extents: [0.3, 0.3, 0.3],
            shape: crate::scene::ShapeKind::Box,
        }
    }

    #[test]
    fn anchors_are_unit_and_separated() {
        let v = test_vocab();
        for a in &v.anchors {
            assert!((norm(a) - 1.0).abs() < 1e-12);
        }
        for i in 0..v.anchors.len() {
            for j in i + 1..v.anchors.len() {
                assert!(dot(&v.anchors[i], &v.anchors[j]).abs() <= MAX_ANCHOR_COS + 1e-12);
            }
        }
    }

    #[test]
    fn single_category_vocabulary() {
        let v = build_vocabulary(1, 2, 8, 3, names(1)).unwrap();
        assert_eq!(v.num_categories(), 1);
        assert!((norm(&v.anchors[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocabulary_build_is_deterministic() {
        let a = build_vocabulary(8, 4, 32, 7, names(8)).unwrap();
        let b = build_vocabulary(8, 4, 32, 7, names(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relations_orthogonal_to_anchor_span() {
        let v = test_vocab();
        for r in &v.relations {
            for a in &v.anchors {
                assert!(dot(r, a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn caption_accepts_own_anchor_and_stays_close() {
        let v = test_vocab();
        let mut cos_sum = 0.0;
        let draws = 10_000;
        for s in 0..draws {
            let ent = test_entity((s % 8) as u32);
            let d = embed_caption(&v, &ent, s as u64).unwrap();
            assert_eq!(v.nearest_anchor(&d.embedding), ent.category_id);
            assert!((norm(&d.embedding) - 1.0).abs() < 1e-12);
            cos_sum += dot(&d.embedding, v.anchor(ent.category_id).unwrap());
        }
        let mean_cos = cos_sum / draws as f64;
        assert!(mean_cos > 0.9, "mean cosine to own anchor {}", mean_cos);
    }

    #[test]
    fn zero_noise_returns_the_anchor() {
        let v = test_vocab();
        let mut rng = rng_from_seed(1);
        let anchor = v.anchor(3).unwrap().to_vec();
        let e = accept_embedding(&v, 3, &anchor, 0.0, &mut rng).unwrap();
        for (a, b) in e.iter().zip(&anchor) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn referral_mixture_orders_similarities() {
        let v = test_vocab();
        let target = test_entity(2);
        let context = EntityRecord { id: 2, ..test_entity(5) };
        let mut same_target = 0.0;
        let mut other_category = 0.0;
        let n = 2000;
        for s in 0..n {
            let e1 = embed_referral(&v, &target, &context, 0, s).unwrap();
            let e2 = embed_referral(&v, &target, &context, 1, 10_000 + s).unwrap();
            let other = embed_referral(&v, &context, &target, 2, 20_000 + s).unwrap();
            same_target += dot(&e1.embedding, &e2.embedding);
            other_category += dot(&e1.embedding, &other.embedding);
        }
        assert!(
            same_target / n as f64 > other_category / n as f64,
            "same-target referral cosine {} should exceed cross-category {}",
            same_target / n as f64,
            other_category / n as f64
        );
    }

    #[test]
    fn referral_embeddings_are_deterministic() {
        let v = test_vocab();
        let t = test_entity(1);
        let c = EntityRecord { id: 2, ..test_entity(4) };
        let a = embed_referral(&v, &t, &c, 1, 99).unwrap();
        let b = embed_referral(&v, &t, &c, 1, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn category_embedding_is_the_anchor_exactly() {
        let v = test_vocab();
        for c in 0..8u32 {
            let e = embed_category(&v, c).unwrap();
            assert_eq!(e.as_slice(), v.anchor(c).unwrap());
            assert!((norm(&e) - 1.0).abs() < 1e-12);
        }
        assert!(embed_category(&v, 8).is_err());
    }

    #[test]
    fn sampling_covers_pigeonhole_and_determinism() {
        let cfg = SceneSetConfig {
            num_scenes: 1,
            entities_per_scene: [4, 6],
            points_per_entity: [25, 30],
            ..Default::default()
        };
        let scene = generate_scene(&cfg, 0).unwrap();
        let v = test_vocab();
        let a = sample_texts(&scene, &v, 64, 5, TextMix::both()).unwrap();
        let b = sample_texts(&scene, &v, 64, 5, TextMix::both()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        // 64 texts over <= 6 entities: some entity must have at least two.
        let mut counts = std::collections::BTreeMap::new();
        for t in &a.texts {
            for id in &t.target_entity_ids {
                *counts.entry(*id).or_insert(0usize) += 1;
            }
        }
        assert!(counts.values().any(|&c| c >= 2));
        for t in &a.texts {
            assert!((norm(&t.embedding) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_entity_scene_gets_only_that_entity() {
        let cfg = SceneSetConfig {
            num_scenes: 1,
            entities_per_scene: [1, 1],
            ..Default::default()
        };
        let scene = generate_scene(&cfg, 0).unwrap();
        let v = test_vocab();
        let set = sample_texts(&scene, &v, 16, 3, TextMix::both()).unwrap();
        for t in &set.texts {
            assert_eq!(t.target_entity_ids, BTreeSet::from([1u32]));
        }
    }

    #[test]
    fn vocabulary_round_trips_through_json() {
        let v = test_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        save_vocabulary(&v, &path).unwrap();
        let loaded = load_vocabulary(&path).unwrap();
        assert_eq!(v, loaded);
    }
}
